use std::f32::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Dataset, Item};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A family of noisy sinusoidal gratings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GratingClass {
    /// Direction of intensity variation in degrees; 0 varies along x
    /// (vertical stripes), 90 along y (horizontal stripes).
    pub orientation_deg: f32,
    /// Cycles per pixel, in `[0, 0.5]`.
    pub frequency: f32,
    /// Half-width of the additive uniform noise.
    pub noise: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub classes: Vec<GratingClass>,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Side length of the generated images.
    pub size: usize,
    pub channels: usize,
    /// Peak deviation of the grating from mid-gray.
    pub contrast: f32,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Two orientations × two spatial frequencies. All four classes are
    /// invariant under horizontal flips.
    pub fn gratings4(size: usize, train: usize, test: usize, seed: u64) -> Self {
        let class = |orientation_deg, frequency| GratingClass {
            orientation_deg,
            frequency,
            noise: 0.3,
        };
        SyntheticSpec {
            classes: vec![
                class(0.0, 1.0 / 16.0),
                class(90.0, 1.0 / 16.0),
                class(0.0, 1.0 / 5.0),
                class(90.0, 1.0 / 5.0),
            ],
            train_per_class: train,
            test_per_class: test,
            size,
            channels: 3,
            contrast: 0.3,
            seed,
        }
    }

    /// Low-frequency gratings under strong pixel noise: the classes differ
    /// only at coarse scales.
    pub fn coarse4(size: usize, train: usize, test: usize, seed: u64) -> Self {
        let class = |orientation_deg, frequency| GratingClass {
            orientation_deg,
            frequency,
            noise: 0.6,
        };
        SyntheticSpec {
            classes: vec![
                class(0.0, 1.0 / 32.0),
                class(90.0, 1.0 / 32.0),
                class(0.0, 1.0 / 16.0),
                class(90.0, 1.0 / 16.0),
            ],
            train_per_class: train,
            test_per_class: test,
            size,
            channels: 3,
            contrast: 0.3,
            seed,
        }
    }

    /// Looks up a named preset.
    pub fn preset(name: &str, size: usize, train: usize, test: usize, seed: u64) -> Result<Self> {
        match name {
            "gratings4" => Ok(Self::gratings4(size, train, test, seed)),
            "coarse4" => Ok(Self::coarse4(size, train, test, seed)),
            other => Err(Error::arg(format!(
                "unknown synthetic preset {other:?} (expected gratings4 or coarse4)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.len() < 2 {
            return Err(Error::arg("synthetic data needs at least two classes"));
        }
        if self.size == 0 || self.channels == 0 || self.train_per_class == 0 {
            return Err(Error::arg(
                "synthetic size, channels and train count must be positive",
            ));
        }
        let mut keys: Vec<(i64, i64)> = Vec::with_capacity(self.classes.len());
        for (i, c) in self.classes.iter().enumerate() {
            if !(0.0..=0.5).contains(&c.frequency) || !c.noise.is_finite() || c.noise < 0.0 {
                return Err(Error::arg(format!(
                    "class {i}: frequency must lie in [0, 0.5] and noise be non-negative"
                )));
            }
            // A flat grating has no orientation; two opposite directions are the same family.
            let key = if c.frequency == 0.0 {
                (0, 0)
            } else {
                let theta = c.orientation_deg.rem_euclid(180.0);
                (
                    (theta * 1e4).round() as i64,
                    (c.frequency * 1e6).round() as i64,
                )
            };
            if let Some(j) = keys.iter().position(|&k| k == key) {
                return Err(Error::arg(format!(
                    "classes {j} and {i} describe the same grating family and cannot be separated"
                )));
            }
            keys.push(key);
        }
        Ok(())
    }
}

fn render(spec: &SyntheticSpec, class: &GratingClass, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let n = spec.size;
    let theta = class.orientation_deg.to_radians();
    let (kx, ky) = (theta.cos(), theta.sin());
    let omega = 2.0 * PI * class.frequency;
    let phase: f32 = rng.random_range(0.0..2.0 * PI);
    let mut plane = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            let wave = (omega * (x as f32 * kx + y as f32 * ky) + phase).sin();
            let noise = if class.noise > 0.0 {
                rng.random_range(-class.noise..class.noise)
            } else {
                0.0
            };
            plane.push((0.5 + spec.contrast * wave + noise).clamp(0.0, 1.0));
        }
    }
    let data = std::iter::repeat_n(plane.iter(), spec.channels)
        .flatten()
        .copied()
        .collect();
    Tensor::new(&[spec.channels, n, n], data)
}

/// Generates `train_per_class` images in group 0 and `test_per_class` in
/// group 1 for every class. Output is a pure function of `spec`.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut items = Vec::new();
    for (label, class) in spec.classes.iter().enumerate() {
        for (group, count) in [spec.train_per_class, spec.test_per_class]
            .into_iter()
            .enumerate()
        {
            for _ in 0..count {
                items.push(Item {
                    image: render(spec, class, &mut rng)?,
                    label,
                    group,
                    path: None,
                });
            }
        }
    }
    let classes = spec
        .classes
        .iter()
        .map(|c| format!("theta{}_f{:.4}", c.orientation_deg, c.frequency))
        .collect();
    Ok(Dataset {
        classes,
        items,
        image_size: spec.size,
    })
}
