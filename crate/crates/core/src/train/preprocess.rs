use rand::Rng;

use crate::data::netpbm::resize_nearest;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::TrainConfig;

/// Below this standard deviation an image counts as constant.
pub const GCN_MIN_STD: f64 = 1e-8;

/// Global contrast normalization to zero mean and unit (population)
/// standard deviation over all values. Returns the zero image and `true`
/// for a constant input.
pub fn gcn(image: &Tensor) -> (Tensor, bool) {
    let n = image.len().max(1) as f64;
    let mean = image.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = image
        .data()
        .iter()
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    let std = var.sqrt();
    let mut out = Tensor::zeros(image.shape());
    if std < GCN_MIN_STD {
        return (out, true);
    }
    for (o, &v) in out.data_mut().iter_mut().zip(image.data()) {
        *o = ((v as f64 - mean) / std) as f32;
    }
    (out, false)
}

fn dims(image: &Tensor, op: &'static str) -> Result<(usize, usize, usize)> {
    match *image.shape() {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::shape(
            op,
            format!("expected [C,H,W], got {:?}", image.shape()),
        )),
    }
}

/// The `size × size` window whose top-left corner is `(top, left)`.
pub fn crop(image: &Tensor, top: usize, left: usize, size: usize) -> Result<Tensor> {
    let (c, h, w) = dims(image, "crop")?;
    if top + size > h || left + size > w {
        return Err(Error::arg(format!(
            "crop {size}x{size} at ({top}, {left}) exceeds {h}x{w}"
        )));
    }
    let mut out = Vec::with_capacity(c * size * size);
    for ch in 0..c {
        for i in top..top + size {
            let row = (ch * h + i) * w;
            out.extend_from_slice(&image.data()[row + left..row + left + size]);
        }
    }
    Tensor::new(&[c, size, size], out)
}

pub fn center_crop(image: &Tensor, size: usize) -> Result<Tensor> {
    let (_, h, w) = dims(image, "center_crop")?;
    if size > h || size > w {
        return Err(Error::arg(format!("center crop {size} exceeds {h}x{w}")));
    }
    crop(image, (h - size) / 2, (w - size) / 2, size)
}

/// Mirrors every row.
pub fn flip_horizontal(image: &Tensor) -> Result<Tensor> {
    let (_, _, w) = dims(image, "flip_horizontal")?;
    let mut out = image.clone();
    out.clear_grad();
    out.data_mut().chunks_mut(w).for_each(<[f32]>::reverse);
    Ok(out)
}

/// Where a random crop lands and whether it is mirrored.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AugmentDraw {
    pub top: usize,
    pub left: usize,
    pub flip: bool,
}

impl AugmentDraw {
    pub fn sample(config: &TrainConfig, rng: &mut impl Rng) -> Result<Self> {
        let (src, dst) = (config.crop_source_size, config.crop_target_size);
        if dst > src {
            return Err(Error::arg(format!(
                "crop target {dst} exceeds source {src}"
            )));
        }
        let span = src - dst;
        let top = rng.random_range(0..=span);
        let left = rng.random_range(0..=span);
        let flip = config.flip_enabled && rng.random_bool(0.5);
        Ok(AugmentDraw { top, left, flip })
    }

    pub fn apply(&self, image: &Tensor, size: usize) -> Result<Tensor> {
        let out = crop(image, self.top, self.left, size)?;
        if self.flip {
            flip_horizontal(&out)
        } else {
            Ok(out)
        }
    }
}

/// Uniform random crop of `crop_target_size`, then a horizontal flip with
/// probability 1/2 when enabled.
pub fn augment(image: &Tensor, config: &TrainConfig, rng: &mut impl Rng) -> Result<Tensor> {
    let (_, h, w) = dims(image, "augment")?;
    let src = config.crop_source_size;
    if h != src || w != src {
        return Err(Error::arg(format!(
            "augment expects {src}x{src} images, got {h}x{w}"
        )));
    }
    AugmentDraw::sample(config, rng)?.apply(image, config.crop_target_size)
}

/// Scales to the crop source size when needed.
pub fn to_source_size(image: &Tensor, config: &TrainConfig) -> Result<Tensor> {
    let (_, h, w) = dims(image, "to_source_size")?;
    let s = config.crop_source_size;
    if (h, w) == (s, s) {
        Ok(image.clone())
    } else {
        resize_nearest(image, s, s)
    }
}

/// Test-time pipeline: scale, center crop, normalize.
pub fn prepare_eval(image: &Tensor, config: &TrainConfig) -> Result<(Tensor, bool)> {
    let scaled = to_source_size(image, config)?;
    Ok(gcn(&center_crop(&scaled, config.crop_target_size)?))
}
