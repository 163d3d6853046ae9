//! Central finite differences against the tape's analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wcnn::kernels::{ConvGeometry, RunningStats};
use wcnn::{Graph, Mode, Result, Tensor, Var, WaveletFilterPair};

const H: f32 = 1e-2;
const REL_TOL: f32 = 1e-2;
const MIN_GRAD: f32 = 1e-4;
/// f32 rounding of the op output, divided by 2h: ~eps * |objective| / 2h.
const ABS_FLOOR: f32 = 5e-5;
const SEEDS: [u64; 3] = [1, 2, 3];

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Inputs for ReLU-like ops: bounded away from the kink by more than `H`.
fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.1f32..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

type Build<'a> = dyn Fn(&mut Graph, &[Var]) -> Result<Var> + 'a;

/// Records the op on fresh leaves and returns them with its output.
fn record(g: &mut Graph, leaves: &[Tensor], build: &Build<'_>) -> (Vec<Var>, Var) {
    let vars = leaves
        .iter()
        .map(|t| g.input(t.clone()).unwrap())
        .collect::<Vec<_>>();
    let out = build(g, &vars).unwrap();
    (vars, out)
}

/// Scalar objective: the op's output if already scalar, else its inner
/// product with fixed random weights, accumulated in f64.
fn objective(out: &Tensor, weights: &Tensor) -> f64 {
    if out.len() == 1 {
        return out.data()[0] as f64;
    }
    out.data()
        .iter()
        .zip(weights.data())
        .map(|(&o, &w)| o as f64 * w as f64)
        .sum()
}

fn check(name: &str, leaves: Vec<Tensor>, build: &Build<'_>, seed: u64) {
    let mut g = Graph::new(Mode::Training);
    let (vars, out) = record(&mut g, &leaves, build);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    let weights = random(g.value(out).shape(), &mut rng);
    let loss = if g.value(out).len() == 1 {
        out
    } else {
        let w = g.input(weights.clone()).unwrap();
        let prod = g.mul(out, w).unwrap();
        g.sum(prod).unwrap()
    };
    g.backward(loss).unwrap();
    let analytic: Vec<Vec<f32>> = vars
        .iter()
        .zip(&leaves)
        .map(|(&v, t)| g.grad(v).map_or(vec![0.0; t.len()], <[f32]>::to_vec))
        .collect();

    let eval = |leaves: &[Tensor]| -> f64 {
        let mut g = Graph::new(Mode::Training);
        let (_, out) = record(&mut g, leaves, build);
        objective(g.value(out), &weights)
    };
    let mut compared = 0;
    for (li, grads) in analytic.iter().enumerate() {
        for (k, &a) in grads.iter().enumerate() {
            if a.abs() <= MIN_GRAD {
                continue;
            }
            let mut plus = leaves.clone();
            plus[li].data_mut()[k] += H;
            let mut minus = leaves.clone();
            minus[li].data_mut()[k] -= H;
            let n = ((eval(&plus) - eval(&minus)) / (2.0 * H as f64)) as f32;
            compared += 1;
            let err = (a - n).abs();
            assert!(
                err < REL_TOL * a.abs().max(n.abs()) + ABS_FLOOR,
                "{name} seed {seed}: leaf {li}[{k}] analytic {a} numeric {n}"
            );
        }
    }
    assert!(compared > 0, "{name}: no gradient entries above threshold");
}

#[test]
fn conv2d_strided_and_padded() {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (stride, pad) in [(1, 1), (2, 1), (1, 0)] {
            let leaves = vec![
                random(&[2, 2, 5, 5], &mut rng),
                random(&[3, 2, 3, 3], &mut rng),
                random(&[3], &mut rng),
            ];
            let build = move |g: &mut Graph, v: &[Var]| {
                g.conv2d(v[0], v[1], Some(v[2]), ConvGeometry::new(stride, pad))
            };
            check("conv2d", leaves, &build, seed);
        }
    }
}

#[test]
fn linear() {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let leaves = vec![
            random(&[4, 5], &mut rng),
            random(&[3, 5], &mut rng),
            random(&[3], &mut rng),
        ];
        check("linear", leaves, &|g, v| g.linear(v[0], v[1], v[2]), seed);
    }
}

#[test]
fn relu() {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        check(
            "relu",
            vec![away_from_zero(&[2, 3, 4], &mut rng)],
            &|g, v| g.relu(v[0]),
            seed,
        );
    }
}

#[test]
fn batchnorm_spatial_and_flat() {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for shape in [vec![4, 3, 3, 3], vec![6, 3]] {
            let leaves = vec![
                random(&shape, &mut rng),
                random(&[3], &mut rng),
                random(&[3], &mut rng),
            ];
            let build = |g: &mut Graph, v: &[Var]| {
                let running = RunningStats::new(3);
                g.batchnorm(v[0], v[1], v[2], &running).map(|(y, _)| y)
            };
            check("batchnorm", leaves, &build, seed);
        }
    }
}

#[test]
fn channel_concat_and_slice() {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let leaves = vec![
            random(&[2, 2, 3, 3], &mut rng),
            random(&[2, 3, 3, 3], &mut rng),
        ];
        let build = |g: &mut Graph, v: &[Var]| {
            let c = g.concat_channels(&[v[0], v[1]])?;
            g.slice_channels(c, 1, 3)
        };
        check("concat+slice", leaves, &build, seed);
    }
}

#[test]
fn downsample_pool_and_energy() {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        check(
            "downsample",
            vec![random(&[2, 2, 6, 6], &mut rng)],
            &|g, v| g.downsample(v[0], 2),
            seed,
        );
        check(
            "avg_pool2d",
            vec![random(&[2, 2, 6, 6], &mut rng)],
            &|g, v| g.avg_pool2d(v[0], 3),
            seed,
        );
        check(
            "energy",
            vec![random(&[2, 3, 4, 4], &mut rng)],
            &|g, v| g.energy(v[0]),
            seed,
        );
    }
}

#[test]
fn wavelet_layer() {
    let haar = WaveletFilterPair::haar();
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let build = |g: &mut Graph, v: &[Var]| g.wavelet(v[0], &haar);
        check(
            "wavelet",
            vec![random(&[2, 3, 8, 8], &mut rng)],
            &build,
            seed,
        );
    }
}

#[test]
fn cross_entropy() {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<usize> = (0..5).map(|_| rng.random_range(0..4)).collect();
        let build = move |g: &mut Graph, v: &[Var]| g.cross_entropy(v[0], &labels);
        check(
            "cross_entropy",
            vec![random(&[5, 4], &mut rng)],
            &build,
            seed,
        );
    }
}
