//! The wavelet CNN: a strided convolutional trunk whose feature maps are
//! joined, at every matching resolution, by the subbands of a fixed
//! multiresolution analysis of the input.

mod checkpoint;
mod spec;

pub use checkpoint::{decode, encode, load, load_expecting, save, FORMAT_VERSION, MAGIC};
pub use spec::{default_schedule, NetworkSpec, SubbandMode, MAX_LEVELS};

use std::fmt;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::kernels::{BatchStats, ConvGeometry, Mode, RunningStats};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;
use crate::wavelet::{self, MraDecomposition, Subbands, WaveletFilterPair};

/// What a parameter tensor is for; drives initialization.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamRole {
    Weight {
        fan_in: usize,
    },
    /// Weights of the final layer, which produces the logits.
    Classifier {
        fan_in: usize,
    },
    Bias,
    BnScale,
    BnShift,
}

#[derive(Clone, Debug, PartialEq)]
struct BatchNorm {
    gamma: ParamId,
    beta: ParamId,
    running: RunningStats,
}

impl BatchNorm {
    fn register(store: &mut ParamStore, prefix: &str, channels: usize) -> Result<Self> {
        Ok(BatchNorm {
            gamma: store.register(format!("{prefix}.bn.gamma"), Tensor::full(&[channels], 1.0))?,
            beta: store.register(format!("{prefix}.bn.beta"), Tensor::zeros(&[channels]))?,
            running: RunningStats::new(channels),
        })
    }
}

/// 3×3 convolution (unit padding) → batchnorm → ReLU.
#[derive(Clone, Debug, PartialEq)]
struct ConvBlock {
    name: String,
    weight: ParamId,
    bias: ParamId,
    bn: BatchNorm,
    stride: usize,
    in_channels: usize,
    out_channels: usize,
}

impl ConvBlock {
    fn register(
        store: &mut ParamStore,
        name: String,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
    ) -> Result<Self> {
        Ok(ConvBlock {
            weight: store.register(
                format!("{name}.weight"),
                Tensor::zeros(&[out_channels, in_channels, 3, 3]),
            )?,
            bias: store.register(format!("{name}.bias"), Tensor::zeros(&[out_channels]))?,
            bn: BatchNorm::register(store, &name, out_channels)?,
            name,
            stride,
            in_channels,
            out_channels,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Dense {
    name: String,
    weight: ParamId,
    bias: ParamId,
    /// Hidden layers are batch-normalized and rectified; the output layer
    /// is plain affine.
    bn: Option<BatchNorm>,
    in_features: usize,
    out_features: usize,
}

impl Dense {
    fn register(
        store: &mut ParamStore,
        name: String,
        in_features: usize,
        out_features: usize,
        hidden: bool,
    ) -> Result<Self> {
        Ok(Dense {
            weight: store.register(
                format!("{name}.weight"),
                Tensor::zeros(&[out_features, in_features]),
            )?,
            bias: store.register(format!("{name}.bias"), Tensor::zeros(&[out_features]))?,
            bn: if hidden {
                Some(BatchNorm::register(store, &name, out_features)?)
            } else {
                None
            },
            name,
            in_features,
            out_features,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Stage {
    conv: ConvBlock,
    reduce: ConvBlock,
}

/// A point where level-`level` subbands join the trunk.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Junction {
    pub level: usize,
    pub height: usize,
    pub width: usize,
    pub trunk_channels: usize,
    pub subband_channels: usize,
}

/// Batch statistics gathered by one training-mode forward pass, in layer
/// order.
#[derive(Clone, Debug, Default)]
pub struct ForwardStats(Vec<BatchStats>);

pub struct ForwardPass {
    pub logits: Var,
    pub stats: ForwardStats,
}

/// One row of the parameter table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerParams {
    pub name: String,
    pub kind: &'static str,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamReport {
    pub layers: Vec<LayerParams>,
    pub total: usize,
}

impl fmt::Display for ParamReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self
            .layers
            .iter()
            .map(|l| l.name.len())
            .max()
            .unwrap_or(5)
            .max(5);
        writeln!(f, "{:<width$}  {:<10}  {:>10}", "layer", "kind", "params")?;
        for l in &self.layers {
            writeln!(f, "{:<width$}  {:<10}  {:>10}", l.name, l.kind, l.count)?;
        }
        write!(f, "{:<width$}  {:<10}  {:>10}", "total", "", self.total)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    pair: WaveletFilterPair,
    params: ParamStore,
    stages: Vec<Stage>,
    projections: Vec<ConvBlock>,
    head: Vec<Dense>,
}

impl Network {
    /// Instantiates the architecture with zero weights, unit batchnorm
    /// scales and zero shifts. Call `train::he_init` before training.
    pub fn build(spec: &NetworkSpec) -> Result<Self> {
        Self::build_with_pair(spec, WaveletFilterPair::haar())
    }

    pub fn build_with_pair(spec: &NetworkSpec, pair: WaveletFilterPair) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamStore::new();
        let mut stages = Vec::with_capacity(spec.stages());
        let mut projections = Vec::with_capacity(spec.levels);
        let mut in_channels = spec.input_shape[0];
        let (mut h, mut w) = (spec.input_shape[1], spec.input_shape[2]);

        for (s, &width) in spec.stage_channels.iter().enumerate() {
            let stage = s + 1;
            let conv = ConvBlock::register(
                &mut params,
                format!("stage{stage}.conv"),
                in_channels,
                width,
                1,
            )?;
            let reduce =
                ConvBlock::register(&mut params, format!("stage{stage}.reduce"), width, width, 2)?;
            stages.push(Stage { conv, reduce });
            h /= 2;
            w /= 2;
            in_channels = width;
            if stage <= spec.levels {
                let (sh, sw) = (spec.input_shape[1] >> stage, spec.input_shape[2] >> stage);
                if (sh, sw) != (h, w) {
                    return Err(Error::Build {
                        stage: format!("stage {stage}"),
                        detail: format!(
                            "trunk is {h}x{w} but level-{stage} subbands are {sh}x{sw}"
                        ),
                    });
                }
                projections.push(ConvBlock::register(
                    &mut params,
                    format!("wavelet{stage}.proj"),
                    spec.subband_channels(stage),
                    spec.base_channels,
                    1,
                )?);
                in_channels += spec.base_channels;
            }
        }

        let mut head = Vec::with_capacity(3);
        let widths = [
            in_channels,
            spec.fc_hidden,
            spec.fc_hidden,
            spec.num_classes,
        ];
        for i in 0..3 {
            head.push(Dense::register(
                &mut params,
                format!("fc{}", i + 1),
                widths[i],
                widths[i + 1],
                i < 2,
            )?);
        }

        Ok(Network {
            spec: spec.clone(),
            pair,
            params,
            stages,
            projections,
            head,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn wavelet(&self) -> &WaveletFilterPair {
        &self.pair
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Convolution blocks in forward execution order.
    fn conv_blocks(&self) -> impl Iterator<Item = &ConvBlock> {
        self.stages
            .iter()
            .zip(
                self.projections
                    .iter()
                    .map(Some)
                    .chain(std::iter::repeat(None)),
            )
            .flat_map(|(s, p)| [Some(&s.conv), Some(&s.reduce), p])
            .flatten()
    }

    /// Batchnorm layers in the order a forward pass records their statistics.
    fn batchnorms_mut(&mut self) -> impl Iterator<Item = &mut BatchNorm> {
        let mut projections = self.projections.iter_mut();
        let mut trunk = Vec::new();
        for s in self.stages.iter_mut() {
            trunk.push(&mut s.conv.bn);
            trunk.push(&mut s.reduce.bn);
            if let Some(p) = projections.next() {
                trunk.push(&mut p.bn);
            }
        }
        trunk
            .into_iter()
            .chain(self.head.iter_mut().filter_map(|d| d.bn.as_mut()))
    }

    fn batchnorms(&self) -> impl Iterator<Item = (&str, &BatchNorm)> {
        self.conv_blocks()
            .map(|b| (&b.name, &b.bn))
            .chain(
                self.head
                    .iter()
                    .filter_map(|d| d.bn.as_ref().map(|bn| (&d.name, bn))),
            )
            .map(|(n, bn)| (n.as_str(), bn))
    }

    /// Every trainable tensor with the role that governs its initialization.
    pub fn param_roles(&self) -> Vec<(ParamId, ParamRole)> {
        let mut roles = Vec::with_capacity(self.params.len());
        let push_bn = |roles: &mut Vec<_>, bn: &BatchNorm| {
            roles.push((bn.gamma, ParamRole::BnScale));
            roles.push((bn.beta, ParamRole::BnShift));
        };
        for b in self.conv_blocks() {
            roles.push((
                b.weight,
                ParamRole::Weight {
                    fan_in: b.in_channels * 9,
                },
            ));
            roles.push((b.bias, ParamRole::Bias));
            push_bn(&mut roles, &b.bn);
        }
        for d in &self.head {
            let role = if d.bn.is_some() {
                ParamRole::Weight {
                    fan_in: d.in_features,
                }
            } else {
                ParamRole::Classifier {
                    fan_in: d.in_features,
                }
            };
            roles.push((d.weight, role));
            roles.push((d.bias, ParamRole::Bias));
            if let Some(bn) = &d.bn {
                push_bn(&mut roles, bn);
            }
        }
        roles.sort_by_key(|(id, _)| *id);
        roles
    }

    /// Running statistics of every batchnorm layer, keyed by layer name.
    pub fn running_stats(&self) -> Vec<(String, RunningStats)> {
        self.batchnorms()
            .map(|(n, bn)| (n.to_string(), bn.running.clone()))
            .collect()
    }

    pub(crate) fn set_running_stats(&mut self, name: &str, stats: RunningStats) -> Result<()> {
        let names: Vec<String> = self.batchnorms().map(|(n, _)| n.to_string()).collect();
        let idx = names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::SpecMismatch(format!("no batchnorm layer named {name}")))?;
        let bn = self
            .batchnorms_mut()
            .nth(idx)
            .expect("index from same iterator");
        if bn.running.mean.len() != stats.mean.len() || bn.running.var.len() != stats.var.len() {
            return Err(Error::SpecMismatch(format!(
                "running statistics of {name} have the wrong width"
            )));
        }
        bn.running = stats;
        Ok(())
    }

    /// Subband junctions in level order.
    pub fn junctions(&self) -> Vec<Junction> {
        (1..=self.spec.levels)
            .map(|level| {
                let (height, width) = self.spec.spatial_after(level);
                Junction {
                    level,
                    height,
                    width,
                    trunk_channels: self.spec.stage_channels[level - 1],
                    subband_channels: self.spec.base_channels,
                }
            })
            .collect()
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let [c, h, w] = self.spec.input_shape;
        match *shape {
            [_, sc, sh, sw] if (sc, sh, sw) == (c, h, w) => Ok(()),
            _ => Err(Error::shape(
                "network input",
                format!("expected [N, {c}, {h}, {w}], got {shape:?}"),
            )),
        }
    }

    fn conv_block(
        &self,
        g: &mut Graph,
        block: &ConvBlock,
        x: Var,
        stats: &mut Vec<BatchStats>,
    ) -> Result<Var> {
        let w = g.param(block.weight, &self.params.get(block.weight).value)?;
        let b = g.param(block.bias, &self.params.get(block.bias).value)?;
        let y = g.conv2d(x, w, Some(b), ConvGeometry::new(block.stride, 1))?;
        let y = self.batchnorm(g, &block.bn, y, stats)?;
        g.relu(y)
    }

    fn batchnorm(
        &self,
        g: &mut Graph,
        bn: &BatchNorm,
        x: Var,
        stats: &mut Vec<BatchStats>,
    ) -> Result<Var> {
        let gamma = g.param(bn.gamma, &self.params.get(bn.gamma).value)?;
        let beta = g.param(bn.beta, &self.params.get(bn.beta).value)?;
        let (y, s) = g.batchnorm(x, gamma, beta, &bn.running)?;
        stats.extend(s);
        Ok(y)
    }

    /// Subband tensors fed to each junction, recorded on the graph.
    fn injected(&self, g: &mut Graph, x: Var) -> Result<Vec<Var>> {
        let c = self.spec.input_shape[0];
        let levels = self.spec.levels;
        let mut out = Vec::with_capacity(levels);
        let mut approx = x;
        for level in 1..=levels {
            let packed = g.wavelet(approx, &self.pair)?;
            if level < levels {
                approx = g.slice_channels(packed, 0, c)?;
            }
            let bands = self.spec.subband_mode.bands_at(level, levels);
            out.push(if bands == 4 {
                packed
            } else {
                g.slice_channels(packed, c, 3 * c)?
            });
        }
        Ok(out)
    }

    /// Records a forward pass of `x: [N, C, H, W]` on `g`.
    pub fn forward_graph(&self, g: &mut Graph, x: Var) -> Result<ForwardPass> {
        self.check_input(g.value(x).shape())?;
        let mut stats = Vec::new();
        let subbands = self.injected(g, x)?;
        let mut h = x;
        for (s, stage) in self.stages.iter().enumerate() {
            h = self.conv_block(g, &stage.conv, h, &mut stats)?;
            h = self.conv_block(g, &stage.reduce, h, &mut stats)?;
            if let Some(proj) = self.projections.get(s) {
                let p = self.conv_block(g, proj, subbands[s], &mut stats)?;
                h = g.concat_channels(&[h, p])?;
            }
        }
        h = g.energy(h)?;
        for layer in &self.head {
            let w = g.param(layer.weight, &self.params.get(layer.weight).value)?;
            let b = g.param(layer.bias, &self.params.get(layer.bias).value)?;
            h = g.linear(h, w, b)?;
            if let Some(bn) = &layer.bn {
                h = self.batchnorm(g, bn, h, &mut stats)?;
                h = g.relu(h)?;
            }
        }
        Ok(ForwardPass {
            logits: h,
            stats: ForwardStats(stats),
        })
    }

    /// Folds the batch statistics of a training pass into the running
    /// averages.
    pub fn commit_stats(&mut self, stats: &ForwardStats) -> Result<()> {
        let count = self.batchnorms().count();
        if stats.0.len() != count {
            return Err(Error::State(format!(
                "{} batch statistics for {count} batchnorm layers",
                stats.0.len()
            )));
        }
        for ((name, bn), s) in self.batchnorms().zip(&stats.0) {
            if bn.running.mean.len() != s.mean.len() {
                return Err(Error::State(format!(
                    "{name} has {} channels, batch statistics have {}",
                    bn.running.mean.len(),
                    s.mean.len()
                )));
            }
        }
        for (bn, s) in self.batchnorms_mut().zip(&stats.0) {
            bn.running.update(s);
        }
        Ok(())
    }

    /// Logits for a batch in inference mode.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new(Mode::Inference);
        let input = g.input(x.clone())?;
        let out = self.forward_graph(&mut g, input)?;
        Ok(g.value(out.logits).clone())
    }

    /// One training-mode pass: zeroes, then fills, every parameter gradient
    /// with that of the mean cross-entropy, and updates running statistics.
    /// Returns the loss and the logits.
    pub fn loss_and_grads(&mut self, x: &Tensor, labels: &[usize]) -> Result<(f32, Tensor)> {
        let mut g = Graph::new(Mode::Training);
        let input = g.input(x.clone())?;
        let pass = self.forward_graph(&mut g, input)?;
        let loss = g.cross_entropy(pass.logits, labels)?;
        g.backward(loss)?;
        self.params.zero_grad();
        self.params.absorb_grads(&g)?;
        self.commit_stats(&pass.stats)?;
        Ok((g.value(loss).item()?, g.value(pass.logits).clone()))
    }

    /// Per-layer trainable parameter counts; wavelet and energy layers are
    /// listed with zero.
    pub fn count_params(&self) -> ParamReport {
        let count = |id: ParamId| self.params.get(id).value.len();
        let mut layers = Vec::new();
        let conv_rows = |layers: &mut Vec<LayerParams>, b: &ConvBlock| {
            layers.push(LayerParams {
                name: b.name.clone(),
                kind: "conv3x3",
                count: count(b.weight) + count(b.bias),
            });
            layers.push(LayerParams {
                name: format!("{}.bn", b.name),
                kind: "batchnorm",
                count: count(b.bn.gamma) + count(b.bn.beta),
            });
        };
        for level in 1..=self.spec.levels {
            layers.push(LayerParams {
                name: format!("wavelet{level}"),
                kind: "wavelet",
                count: self.pair.trainable_params(),
            });
        }
        for (s, stage) in self.stages.iter().enumerate() {
            conv_rows(&mut layers, &stage.conv);
            conv_rows(&mut layers, &stage.reduce);
            if let Some(p) = self.projections.get(s) {
                conv_rows(&mut layers, p);
            }
        }
        layers.push(LayerParams {
            name: "energy".into(),
            kind: "energy",
            count: 0,
        });
        for d in &self.head {
            layers.push(LayerParams {
                name: d.name.clone(),
                kind: "linear",
                count: count(d.weight) + count(d.bias),
            });
            if let Some(bn) = &d.bn {
                layers.push(LayerParams {
                    name: format!("{}.bn", d.name),
                    kind: "batchnorm",
                    count: count(bn.gamma) + count(bn.beta),
                });
            }
        }
        let total = layers.iter().map(|l| l.count).sum();
        ParamReport { layers, total }
    }

    /// Per-layer parameter groups (weights, bias and batchnorm of one block
    /// together), used for gradient-flow diagnostics.
    pub fn layer_groups(&self) -> Vec<(String, Vec<ParamId>)> {
        let mut groups: Vec<(String, Vec<ParamId>)> = self
            .conv_blocks()
            .map(|b| {
                (
                    b.name.clone(),
                    vec![b.weight, b.bias, b.bn.gamma, b.bn.beta],
                )
            })
            .collect();
        for d in &self.head {
            let mut ids = vec![d.weight, d.bias];
            if let Some(bn) = &d.bn {
                ids.extend([bn.gamma, bn.beta]);
            }
            groups.push((d.name.clone(), ids));
        }
        groups
    }

    /// The per-level subband tensors the network concatenates into its
    /// trunk, for a single image `[C, H, W]`.
    pub fn injected_subbands(&self, image: &Tensor) -> Result<Vec<Tensor>> {
        let batched = Tensor::stack(std::slice::from_ref(image))?;
        self.check_input(batched.shape())?;
        let mut g = Graph::new(Mode::Inference);
        let x = g.input(batched)?;
        let vars = self.injected(&mut g, x)?;
        vars.into_iter().map(|v| g.value(v).sample(0)).collect()
    }
}

/// Rebuilds an image from the subbands a network injects at its junctions
/// (see [`Network::injected_subbands`]).
pub fn reconstruct_from_injected(
    spec: &NetworkSpec,
    pair: &WaveletFilterPair,
    injected: &[Tensor],
) -> Result<Tensor> {
    let c = spec.input_shape[0];
    let levels = spec.levels;
    if injected.len() != levels {
        return Err(Error::shape(
            "reconstruct_from_injected",
            format!("{} levels given, spec has {levels}", injected.len()),
        ));
    }
    let mut pyramid = Vec::with_capacity(levels);
    for (i, t) in injected.iter().enumerate() {
        let level = i + 1;
        let bands = spec.subband_mode.bands_at(level, levels);
        let &[ch, h, w] = t.shape() else {
            return Err(Error::shape(
                "reconstruct_from_injected",
                format!("level {level} tensor has shape {:?}", t.shape()),
            ));
        };
        if ch != bands * c {
            return Err(Error::shape(
                "reconstruct_from_injected",
                format!("level {level} has {ch} channels, expected {}", bands * c),
            ));
        }
        let band = |k: usize| crate::kernels::slice_channels(t, k * c, c);
        let offset = 4 - bands;
        let ll = if bands == 4 {
            band(0)?
        } else {
            Tensor::zeros(&[c, h, w])
        };
        pyramid.push(Subbands {
            ll,
            lh: band(1 - offset)?,
            hl: band(2 - offset)?,
            hh: band(3 - offset)?,
        });
    }
    let d = MraDecomposition {
        source_shape: spec.input_shape.to_vec(),
        levels: pyramid,
    };
    wavelet::reconstruct(&d, pair)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(levels: usize, mode: SubbandMode) -> NetworkSpec {
        NetworkSpec::new([3, 16, 16], levels, 3)
            .with_base_channels(4)
            .with_stages(3)
            .with_subband_mode(mode)
    }

    #[test]
    fn minimal_config_has_one_junction() {
        let net = Network::build(&NetworkSpec::new([3, 64, 64], 1, 4)).unwrap();
        assert_eq!(net.junctions().len(), 1);
        assert_eq!(net.junctions()[0].height, 32);
    }

    #[test]
    fn paper_geometry_junction_sizes() {
        let spec = NetworkSpec::new([3, 224, 224], 3, 11).with_base_channels(4);
        let net = Network::build(&spec).unwrap();
        let sizes: Vec<usize> = net.junctions().iter().map(|j| j.height).collect();
        assert_eq!(sizes, vec![112, 56, 28]);
    }

    #[test]
    fn six_levels_rejected() {
        let spec = NetworkSpec::new([3, 256, 256], 6, 4).with_stages(6);
        assert!(Network::build(&spec).is_err());
    }

    #[test]
    fn first_conv_count() {
        let net = Network::build(&NetworkSpec::new([3, 64, 64], 1, 4)).unwrap();
        let report = net.count_params();
        let row = report
            .layers
            .iter()
            .find(|l| l.name == "stage1.conv")
            .unwrap();
        assert_eq!(row.count, 3 * 3 * 3 * 32 + 32);
    }

    #[test]
    fn report_total_equals_registered_elements() {
        for levels in 1..=3 {
            for mode in [SubbandMode::All, SubbandMode::DetailOnly] {
                let net = Network::build(&tiny(levels, mode)).unwrap();
                let report = net.count_params();
                assert_eq!(report.total, net.params().element_count());
                assert!(report
                    .layers
                    .iter()
                    .filter(|l| l.kind == "wavelet")
                    .all(|l| l.count == 0));
                assert_eq!(
                    report.layers.iter().filter(|l| l.kind == "wavelet").count(),
                    levels
                );
            }
        }
    }

    #[test]
    fn converged_running_stats_reproduce_training_output() {
        let mut net = Network::build(&tiny(2, SubbandMode::All)).unwrap();
        crate::train::he_init(&mut net, 5).unwrap();
        let fc3 = net.params().find("fc3.weight").unwrap();
        for (i, w) in net
            .params_mut()
            .get_mut(fc3)
            .value
            .data_mut()
            .iter_mut()
            .enumerate()
        {
            *w = ((i * 37) % 11) as f32 / 5.0 - 1.0;
        }
        let x = Tensor::from_fn(&[64, 3, 16, 16], |i| {
            ((i * 7919) % 257) as f32 / 128.0 - 1.0
        });
        let mut g = Graph::new(Mode::Training);
        let input = g.input(x.clone()).unwrap();
        let pass = net.forward_graph(&mut g, input).unwrap();
        for _ in 0..400 {
            net.commit_stats(&pass.stats).unwrap();
        }
        let trained = g.value(pass.logits);
        let inferred = net.predict(&x).unwrap();
        let scale = trained.data().iter().fold(0.0f32, |a, v| a.max(v.abs()));
        assert!(inferred.max_abs_diff(trained).unwrap() < 0.05 * scale.max(1.0));
    }

    #[test]
    fn every_role_covers_every_param() {
        let net = Network::build(&tiny(2, SubbandMode::All)).unwrap();
        let roles = net.param_roles();
        assert_eq!(roles.len(), net.params().len());
        for (i, (id, _)) in roles.iter().enumerate() {
            assert_eq!(id.index(), i);
        }
    }

    #[test]
    fn logits_shape_and_input_check() {
        let net = Network::build(&tiny(2, SubbandMode::All)).unwrap();
        let y = net.predict(&Tensor::zeros(&[2, 3, 16, 16])).unwrap();
        assert_eq!(y.shape(), &[2, 3]);
        assert!(y.is_finite());
        assert!(matches!(
            net.predict(&Tensor::zeros(&[2, 3, 8, 8])),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn injected_subbands_reconstruct_input() {
        for mode in [SubbandMode::All, SubbandMode::DetailOnly] {
            let spec = tiny(3, mode);
            let net = Network::build(&spec).unwrap();
            let x = Tensor::from_fn(&[3, 16, 16], |i| ((i * 7919) % 101) as f32 / 101.0);
            let inj = net.injected_subbands(&x).unwrap();
            assert_eq!(inj[0].shape()[0], spec.subband_channels(1));
            let back = reconstruct_from_injected(&spec, net.wavelet(), &inj).unwrap();
            assert!(back.max_abs_diff(&x).unwrap() < 1e-5);
        }
    }

    #[test]
    fn running_stats_roundtrip_by_name() {
        let mut net = Network::build(&tiny(1, SubbandMode::All)).unwrap();
        let (name, mut stats) = net.running_stats().remove(0);
        stats.mean[0] = 3.5;
        net.set_running_stats(&name, stats.clone()).unwrap();
        assert_eq!(net.running_stats()[0].1, stats);
        assert!(net.set_running_stats("nope", stats).is_err());
    }
}
