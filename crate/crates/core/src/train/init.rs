use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::kernels::RunningStats;
use crate::network::{Network, ParamRole};

/// Weights ~ N(0, sqrt(2 / fan_in)), biases and shifts 0, scales 1.
/// The classifier starts at zero so the initial softmax is uniform.
/// Running batchnorm statistics are reset.
pub fn he_init(net: &mut Network, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (id, role) in net.param_roles() {
        let value = &mut net.params_mut().get_mut(id).value;
        match role {
            ParamRole::Weight { fan_in } => {
                let std = (2.0 / fan_in as f64).sqrt() as f32;
                let normal = Normal::new(0.0f32, std)
                    .map_err(|e| Error::arg(format!("fan-in {fan_in}: {e}")))?;
                value
                    .data_mut()
                    .iter_mut()
                    .for_each(|w| *w = normal.sample(&mut rng));
            }
            ParamRole::Classifier { .. } | ParamRole::Bias | ParamRole::BnShift => {
                value.data_mut().fill(0.0)
            }
            ParamRole::BnScale => value.data_mut().fill(1.0),
        }
        value.clear_grad();
    }
    for (name, stats) in net.running_stats() {
        net.set_running_stats(&name, RunningStats::new(stats.mean.len()))?;
    }
    Ok(())
}
