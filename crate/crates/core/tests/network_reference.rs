//! A double-precision re-implementation of the network's training-mode
//! forward pass. Central differences through it (tiny step, no f32
//! rounding) are compared with the tape's analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wcnn::kernels::BN_EPS;
use wcnn::network::{Network, NetworkSpec, SubbandMode};
use wcnn::train::he_init;
use wcnn::{Graph, Mode, Tensor};

/// Dense f64 array in row-major order.
#[derive(Clone, Debug)]
struct Arr {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Arr {
    fn from_tensor(t: &Tensor) -> Self {
        Arr {
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|&v| v as f64).collect(),
        }
    }
}

type Params = std::collections::HashMap<String, Arr>;

fn conv3x3(x: &Arr, w: &Arr, b: &Arr, stride: usize) -> Arr {
    let (n, c, h, wd) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let o = w.shape[0];
    let (oh, ow) = ((h - 1) / stride + 1, (wd - 1) / stride + 1);
    let mut out = vec![0.0; n * o * oh * ow];
    for s in 0..n {
        for oc in 0..o {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = b.data[oc];
                    for ic in 0..c {
                        for ki in 0..3 {
                            for kj in 0..3 {
                                let (y, xx) = (
                                    (i * stride + ki) as isize - 1,
                                    (j * stride + kj) as isize - 1,
                                );
                                if y < 0 || xx < 0 || y >= h as isize || xx >= wd as isize {
                                    continue;
                                }
                                acc += w.data[((oc * c + ic) * 3 + ki) * 3 + kj]
                                    * x.data[((s * c + ic) * h + y as usize) * wd + xx as usize];
                            }
                        }
                    }
                    out[((s * o + oc) * oh + i) * ow + j] = acc;
                }
            }
        }
    }
    Arr {
        shape: vec![n, o, oh, ow],
        data: out,
    }
}

/// Training-mode batchnorm (biased batch variance) followed by ReLU, for
/// `[N, C]` or `[N, C, H, W]`.
fn bn_relu(x: &Arr, gamma: &Arr, beta: &Arr) -> Arr {
    let (n, c) = (x.shape[0], x.shape[1]);
    let spatial: usize = x.shape[2..].iter().product();
    let count = (n * spatial) as f64;
    let mut out = x.clone();
    for ch in 0..c {
        let idx = |s: usize, p: usize| (s * c + ch) * spatial + p;
        let mut mean = 0.0;
        for s in 0..n {
            for p in 0..spatial {
                mean += x.data[idx(s, p)];
            }
        }
        mean /= count;
        let mut var = 0.0;
        for s in 0..n {
            for p in 0..spatial {
                var += (x.data[idx(s, p)] - mean).powi(2);
            }
        }
        var /= count;
        let inv = 1.0 / (var + BN_EPS as f64).sqrt();
        for s in 0..n {
            for p in 0..spatial {
                let v = gamma.data[ch] * (x.data[idx(s, p)] - mean) * inv + beta.data[ch];
                out.data[idx(s, p)] = v.max(0.0);
            }
        }
    }
    out
}

fn concat(a: &Arr, b: &Arr) -> Arr {
    let (n, ca, cb) = (a.shape[0], a.shape[1], b.shape[1]);
    let plane = a.shape[2] * a.shape[3];
    let mut data = Vec::with_capacity(n * (ca + cb) * plane);
    for s in 0..n {
        data.extend_from_slice(&a.data[s * ca * plane..(s + 1) * ca * plane]);
        data.extend_from_slice(&b.data[s * cb * plane..(s + 1) * cb * plane]);
    }
    Arr {
        shape: vec![n, ca + cb, a.shape[2], a.shape[3]],
        data,
    }
}

fn energy(x: &Arr) -> Arr {
    let (n, c) = (x.shape[0], x.shape[1]);
    let plane = x.shape[2] * x.shape[3];
    let data = x
        .data
        .chunks(plane)
        .map(|p| p.iter().sum::<f64>() / plane as f64)
        .collect();
    Arr {
        shape: vec![n, c],
        data,
    }
}

fn dense(x: &Arr, w: &Arr, b: &Arr) -> Arr {
    let (n, i) = (x.shape[0], x.shape[1]);
    let o = w.shape[0];
    let mut data = vec![0.0; n * o];
    for s in 0..n {
        for r in 0..o {
            data[s * o + r] = b.data[r]
                + (0..i)
                    .map(|k| w.data[r * i + k] * x.data[s * i + k])
                    .sum::<f64>();
        }
    }
    Arr {
        shape: vec![n, o],
        data,
    }
}

fn block(p: &Params, name: &str, x: &Arr, stride: usize) -> Arr {
    let get = |suffix: &str| &p[&format!("{name}.{suffix}")];
    let y = conv3x3(x, get("weight"), get("bias"), stride);
    bn_relu(&y, get("bn.gamma"), get("bn.beta"))
}

/// Mean cross-entropy of the network described by `spec` and `p`.
fn reference_loss(
    spec: &NetworkSpec,
    p: &Params,
    x: &Arr,
    subbands: &[Arr],
    labels: &[usize],
) -> f64 {
    let mut h = x.clone();
    for s in 1..=spec.stage_channels.len() {
        h = block(p, &format!("stage{s}.conv"), &h, 1);
        h = block(p, &format!("stage{s}.reduce"), &h, 2);
        if s <= spec.levels {
            let proj = block(p, &format!("wavelet{s}.proj"), &subbands[s - 1], 1);
            h = concat(&h, &proj);
        }
    }
    let mut z = energy(&h);
    for f in 1..=3 {
        let get = |suffix: &str| &p[&format!("fc{f}.{suffix}")];
        z = dense(&z, get("weight"), get("bias"));
        if f < 3 {
            z = bn_relu(&z, get("bn.gamma"), get("bn.beta"));
        }
    }
    let k = z.shape[1];
    z.data
        .chunks(k)
        .zip(labels)
        .map(|(row, &l)| {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            lse - row[l]
        })
        .sum::<f64>()
        / labels.len() as f64
}

struct Case {
    net: Network,
    x: Tensor,
    labels: Vec<usize>,
}

fn case(levels: usize, stages: usize, mode: SubbandMode, seed: u64) -> Case {
    let spec = NetworkSpec::new([3, 8, 8], levels, 2)
        .with_base_channels(4)
        .with_stages(stages)
        .with_subband_mode(mode);
    let mut net = Network::build(&spec).unwrap();
    he_init(&mut net, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
    // The classifier starts at zero, which would leave every other gradient zero.
    let fc3 = net.params().find("fc3.weight").unwrap();
    net.params_mut()
        .get_mut(fc3)
        .value
        .data_mut()
        .iter_mut()
        .for_each(|w| *w = rng.random_range(-0.5..0.5));
    let x = Tensor::from_fn(&[4, 3, 8, 8], |_| rng.random_range(-1.0..1.0));
    Case {
        net,
        x,
        labels: vec![0, 1, 1, 0],
    }
}

fn params_of(net: &Network) -> Params {
    net.params()
        .iter()
        .map(|(_, p)| (p.name.clone(), Arr::from_tensor(&p.value)))
        .collect()
}

fn subbands_of(net: &Network, x: &Tensor) -> Vec<Arr> {
    let per_image: Vec<Vec<Tensor>> = (0..x.shape()[0])
        .map(|i| net.injected_subbands(&x.sample(i).unwrap()).unwrap())
        .collect();
    (0..net.spec().levels)
        .map(|l| {
            let level: Vec<Tensor> = per_image.iter().map(|v| v[l].clone()).collect();
            Arr::from_tensor(&Tensor::stack(&level).unwrap())
        })
        .collect()
}

fn library_loss(net: &Network, x: &Tensor, labels: &[usize]) -> f32 {
    let mut g = Graph::new(Mode::Training);
    let input = g.input(x.clone()).unwrap();
    let pass = net.forward_graph(&mut g, input).unwrap();
    let loss = g.cross_entropy(pass.logits, labels).unwrap();
    g.value(loss).item().unwrap()
}

#[test]
fn forward_matches_reference() {
    for (levels, stages) in [(1, 2), (2, 2), (2, 3)] {
        for mode in [SubbandMode::All, SubbandMode::DetailOnly] {
            let c = case(levels, stages, mode, 7);
            let spec = c.net.spec().clone();
            let reference = reference_loss(
                &spec,
                &params_of(&c.net),
                &Arr::from_tensor(&c.x),
                &subbands_of(&c.net, &c.x),
                &c.labels,
            );
            let ours = library_loss(&c.net, &c.x, &c.labels) as f64;
            assert!(
                (reference - ours).abs() < 1e-5 * reference.abs().max(1.0),
                "{levels}/{stages}/{mode}: {reference} vs {ours}"
            );
        }
    }
}

#[test]
fn analytic_gradients_match_double_precision_differences() {
    const STEP: f64 = 1e-6;
    for seed in [1, 2, 3] {
        for mode in [SubbandMode::All, SubbandMode::DetailOnly] {
            let levels = if mode == SubbandMode::All { 1 } else { 2 };
            let mut c = case(levels, 2, mode, seed);
            let spec = c.net.spec().clone();
            c.net.loss_and_grads(&c.x, &c.labels).unwrap();
            let x = Arr::from_tensor(&c.x);
            let subbands = subbands_of(&c.net, &c.x);
            let base = params_of(&c.net);
            let mut compared = 0;
            for (_, p) in c.net.params().iter() {
                let grad = p.value.grad().unwrap();
                for (k, &a) in grad.iter().enumerate() {
                    if a.abs() <= 1e-4 {
                        continue;
                    }
                    let mut probe = base.clone();
                    probe.get_mut(&p.name).unwrap().data[k] += STEP;
                    let up = reference_loss(&spec, &probe, &x, &subbands, &c.labels);
                    probe.get_mut(&p.name).unwrap().data[k] -= 2.0 * STEP;
                    let down = reference_loss(&spec, &probe, &x, &subbands, &c.labels);
                    let n = (up - down) / (2.0 * STEP);
                    let rel = (a as f64 - n).abs() / (a.abs() as f64).max(n.abs());
                    assert!(
                        rel < 1e-2,
                        "seed {seed} {mode}: {}[{k}] analytic {a} reference {n}",
                        p.name
                    );
                    compared += 1;
                }
            }
            assert!(compared > 1000, "only {compared} entries compared");
        }
    }
}
