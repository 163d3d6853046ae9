//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation in execution order together with the
//! state its adjoint needs. [`Graph::backward`] walks the tape once, from the
//! last node to the first, which is an exact reverse topological order
//! because a node can only consume values recorded before it.

use crate::error::{Error, Result};
use crate::kernels::{self, BatchNormCache, BatchStats, ConvGeometry, Mode, RunningStats};
use crate::params::ParamId;
use crate::tensor::Tensor;
use crate::wavelet::{self, WaveletFilterPair};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Input,
    Param(ParamId),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeometry,
    },
    Relu(Var),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        cache: BatchNormCache,
    },
    Concat(Vec<Var>),
    SliceChannels {
        x: Var,
        start: usize,
    },
    Downsample {
        x: Var,
        p: usize,
    },
    AvgPool {
        x: Var,
        p: usize,
    },
    Energy(Var),
    Wavelet {
        x: Var,
        pair: WaveletFilterPair,
    },
    Mul(Var, Var),
    Sum(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f32>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Status {
    Recording,
    Differentiated,
}

pub struct Graph {
    mode: Mode,
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f32>>>,
    status: Status,
}

impl Graph {
    pub fn new(mode: Mode) -> Self {
        Graph {
            mode,
            nodes: Vec::new(),
            grads: Vec::new(),
            status: Status::Recording,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` loss with respect to `v`; `None` if
    /// `v` does not influence the loss or `backward` has not run.
    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        if self.status != Status::Recording {
            return Err(Error::State(
                "graph was already differentiated; record a new forward pass".into(),
            ));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Constant leaf; gradients are still computed for it.
    pub fn input(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Input)
    }

    /// Leaf bound to a trainable parameter.
    pub fn param(&mut self, id: ParamId, value: &Tensor) -> Result<Var> {
        let mut v = value.clone();
        v.clear_grad();
        self.push(v, Op::Param(id))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeometry) -> Result<Var> {
        let y = kernels::conv2d_with(self.value(x), self.value(w), b.map(|b| self.value(b)), geom)?;
        self.push(y, Op::Conv2d { x, w, b, geom })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let y = kernels::relu(self.value(x));
        self.push(y, Op::Relu(x))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = kernels::linear(self.value(x), self.value(w), self.value(b))?;
        self.push(y, Op::Linear { x, w, b })
    }

    /// Batch normalization in the graph's mode. In training mode the batch
    /// statistics are returned for the caller's running averages.
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: &RunningStats,
    ) -> Result<(Var, Option<BatchStats>)> {
        let (y, stats, cache) = kernels::batchnorm_forward(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            running,
            self.mode,
        )?;
        let v = self.push(
            y,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                cache,
            },
        )?;
        Ok((v, stats))
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let y = kernels::concat_channels(&tensors)?;
        self.push(y, Op::Concat(parts.to_vec()))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, count: usize) -> Result<Var> {
        let y = kernels::slice_channels(self.value(x), start, count)?;
        self.push(y, Op::SliceChannels { x, start })
    }

    pub fn downsample(&mut self, x: Var, p: usize) -> Result<Var> {
        let y = kernels::downsample(self.value(x), p)?;
        self.push(y, Op::Downsample { x, p })
    }

    pub fn avg_pool2d(&mut self, x: Var, p: usize) -> Result<Var> {
        let y = kernels::avg_pool2d(self.value(x), p)?;
        self.push(y, Op::AvgPool { x, p })
    }

    /// Energy layer: spatial mean of every feature map.
    pub fn energy(&mut self, x: Var) -> Result<Var> {
        let y = kernels::global_mean(self.value(x))?;
        self.push(y, Op::Energy(x))
    }

    /// Fixed single-level wavelet transform, `[N,C,H,W] -> [N,4C,H/2,W/2]`
    /// in `[LL | LH | HL | HH]` channel order.
    pub fn wavelet(&mut self, x: Var, pair: &WaveletFilterPair) -> Result<Var> {
        let y = wavelet::dwt2d_packed(self.value(x), pair)?;
        self.push(
            y,
            Op::Wavelet {
                x,
                pair: pair.clone(),
            },
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(
                "mul",
                format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x * y)
            .collect();
        let y = Tensor::new(ta.shape(), data)?;
        self.push(y, Op::Mul(a, b))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().map(|&v| v as f64).sum::<f64>();
        self.push(Tensor::scalar(s as f32), Op::Sum(x))
    }

    /// Mean softmax cross-entropy over the batch, as a scalar.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (loss, probs) = kernels::softmax_cross_entropy(self.value(logits), labels)?;
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        )
    }

    /// Reverse pass from the scalar `loss`. May run once per recorded
    /// forward pass.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.status == Status::Differentiated {
            return Err(Error::State(
                "backward already ran on this graph; record a new forward pass".into(),
            ));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be a scalar, got {:?}", self.value(loss).shape()),
            ));
        }
        self.status = Status::Differentiated;
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(gy) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            let mut send = |v: Var, g: Vec<f32>| accumulate(&mut grads, v, g);
            match &node.op {
                Op::Input | Op::Param(_) => {}
                Op::Conv2d { x, w, b, geom } => {
                    let (dx, dw, db) = kernels::conv2d_backward(
                        &self.nodes[x.0].value,
                        &self.nodes[w.0].value,
                        *geom,
                        &gy,
                    )?;
                    send(*x, dx);
                    send(*w, dw);
                    if let Some(b) = b {
                        send(*b, db);
                    }
                }
                Op::Relu(x) => send(
                    *x,
                    kernels::relu_backward(self.nodes[x.0].value.data(), &gy),
                ),
                Op::Linear { x, w, b } => {
                    let (dx, dw, db) = kernels::linear_backward(
                        &self.nodes[x.0].value,
                        &self.nodes[w.0].value,
                        &gy,
                    );
                    send(*x, dx);
                    send(*w, dw);
                    send(*b, db);
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    cache,
                } => {
                    let (dx, dg, db) = kernels::batchnorm_backward(
                        self.nodes[x.0].value.shape(),
                        self.nodes[gamma.0].value.data(),
                        cache,
                        &gy,
                    )?;
                    send(*x, dx);
                    send(*gamma, dg);
                    send(*beta, db);
                }
                Op::Concat(parts) => {
                    let shape = node.value.shape();
                    let (n, total) = (shape[0], shape[1]);
                    let plane = node.value.len() / (n * total);
                    let mut offset = 0;
                    for &p in parts {
                        let c = self.nodes[p.0].value.shape()[1];
                        let mut g = Vec::with_capacity(n * c * plane);
                        for b in 0..n {
                            let base = (b * total + offset) * plane;
                            g.extend_from_slice(&gy[base..base + c * plane]);
                        }
                        send(p, g);
                        offset += c;
                    }
                }
                Op::SliceChannels { x, start } => {
                    let src = self.nodes[x.0].value.shape();
                    let (n, total) = (src[0], src[1]);
                    let count = node.value.shape()[1];
                    let plane = node.value.len() / (n * count);
                    let mut g = vec![0.0f32; self.nodes[x.0].value.len()];
                    for b in 0..n {
                        let dst = (b * total + start) * plane;
                        g[dst..dst + count * plane]
                            .copy_from_slice(&gy[b * count * plane..(b + 1) * count * plane]);
                    }
                    send(*x, g);
                }
                Op::Downsample { x, p } => send(
                    *x,
                    kernels::downsample_backward(self.nodes[x.0].value.shape(), *p, &gy),
                ),
                Op::AvgPool { x, p } => send(
                    *x,
                    kernels::avg_pool2d_backward(self.nodes[x.0].value.shape(), *p, &gy),
                ),
                Op::Energy(x) => send(
                    *x,
                    kernels::global_mean_backward(self.nodes[x.0].value.shape(), &gy),
                ),
                Op::Wavelet { x, pair } => send(
                    *x,
                    wavelet::dwt2d_packed_adjoint(&gy, self.nodes[x.0].value.shape(), pair)?,
                ),
                Op::Mul(a, b) => {
                    let (va, vb) = (self.nodes[a.0].value.data(), self.nodes[b.0].value.data());
                    send(*a, gy.iter().zip(vb).map(|(g, y)| g * y).collect());
                    send(*b, gy.iter().zip(va).map(|(g, x)| g * x).collect());
                }
                Op::Sum(x) => send(*x, vec![gy[0]; self.nodes[x.0].value.len()]),
                Op::CrossEntropy {
                    logits,
                    labels,
                    probs,
                } => {
                    let k = self.nodes[logits.0].value.shape()[1];
                    send(
                        *logits,
                        kernels::softmax_cross_entropy_backward(probs, labels, k, gy[0]),
                    );
                }
            }
            grads[idx] = Some(gy);
        }
        self.grads = grads;
        Ok(())
    }

    /// Gradients of every parameter leaf reached by the last backward pass.
    pub fn param_grads(&self) -> impl Iterator<Item = (ParamId, &[f32])> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(id) => self.grads.get(i)?.as_deref().map(|g| (id, g)),
                _ => None,
            })
    }
}

fn accumulate(grads: &mut [Option<Vec<f32>>], v: Var, g: Vec<f32>) {
    match &mut grads[v.0] {
        Some(existing) => existing.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        slot => *slot = Some(g),
    }
}
