use crate::error::{Error, Result};
use crate::params::ParamStore;

use super::TrainConfig;

/// Adam moment estimates for every parameter of one store.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: u64,
}

impl OptimizerState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = || -> Vec<Vec<f32>> {
            params
                .iter()
                .map(|(_, p)| vec![0.0; p.value.len()])
                .collect()
        };
        OptimizerState {
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    /// Number of updates applied so far.
    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self, index: usize) -> &[f32] {
        &self.m[index]
    }

    pub fn second_moment(&self, index: usize) -> &[f32] {
        &self.v[index]
    }
}

/// One bias-corrected Adam update from the gradients held in `params`.
/// Parameters without a gradient are left alone. Nothing is modified when
/// any gradient is non-finite.
pub fn adam_step(
    state: &mut OptimizerState,
    params: &mut ParamStore,
    config: &TrainConfig,
) -> Result<()> {
    if state.m.len() != params.len() {
        return Err(Error::State(format!(
            "optimizer tracks {} tensors, store has {}",
            state.m.len(),
            params.len()
        )));
    }
    for (i, (_, p)) in params.iter().enumerate() {
        if state.m[i].len() != p.value.len() {
            return Err(Error::State(format!("moment shape differs for {}", p.name)));
        }
        if let Some(g) = p.value.grad() {
            if let Some(j) = g.iter().position(|x| !x.is_finite()) {
                return Err(Error::Numerical(format!(
                    "gradient of {} is {} at element {j}",
                    p.name, g[j]
                )));
            }
        }
    }

    state.t += 1;
    let (b1, b2) = (config.adam_beta1, config.adam_beta2);
    let c1 = (1.0 - (b1 as f64).powi(state.t as i32)) as f32;
    let c2 = (1.0 - (b2 as f64).powi(state.t as i32)) as f32;
    let (lr, eps) = (config.learning_rate, config.adam_eps);
    for (i, p) in params.iter_mut().enumerate() {
        let Some(g) = p.value.grad().map(<[f32]>::to_vec) else {
            continue;
        };
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (k, theta) in p.value.data_mut().iter_mut().enumerate() {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            *theta -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
