//! Binary Netpbm codec (P5 graymaps and P6 pixmaps, 8-bit samples).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// How real-valued samples are mapped onto `0..=255` when saving.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PixelMapping {
    /// `v * 255`, clamped; inverse of the loader's scaling.
    Unit,
    /// Affine map of `[min, max]` onto `[0, 255]`. Constant images become 128.
    MinMax,
    /// `128 + 127 * v / max|v|`, so zero is mid-gray. Suited to detail bands.
    Symmetric,
}

fn codec(offset: usize, detail: impl Into<String>) -> Error {
    Error::Codec {
        offset,
        detail: detail.into(),
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(codec(start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| codec(start, format!("{what} out of range")))
    }
}

/// Decodes a P5 or P6 image into `[C, H, W]` with samples scaled to `[0, 1]`.
pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(codec(0, "bad magic (expected P5 or P6)")),
    };
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(codec(h.pos, "image has an empty axis"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(codec(
            h.pos,
            format!("maxval {maxval} unsupported (need 1..=255)"),
        ));
    }
    match bytes.get(h.pos) {
        Some(b) if b.is_ascii_whitespace() => h.pos += 1,
        _ => return Err(codec(h.pos, "missing whitespace after maxval")),
    }
    let n = width * height * channels;
    let payload = &bytes[h.pos..];
    if payload.len() < n {
        return Err(codec(
            bytes.len(),
            format!("payload truncated: {} of {n} bytes", payload.len()),
        ));
    }
    let maxval = maxval as f32;
    let plane = width * height;
    let mut data = vec![0.0f32; n];
    for (i, &b) in payload[..n].iter().enumerate() {
        let (pixel, c) = (i / channels, i % channels);
        data[c * plane + pixel] = b as f32 / maxval;
    }
    Tensor::new(&[channels, height, width], data)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads a P6 pixmap as `[3, H, W]` in `[0, 1]`.
pub fn load_ppm(path: impl AsRef<Path>) -> Result<Tensor> {
    let bytes = read(path.as_ref())?;
    if bytes.get(..2) != Some(b"P6") {
        return Err(codec(0, "bad magic (expected P6)"));
    }
    decode(&bytes)
}

/// Loads either a P5 or a P6 file.
pub fn load_netpbm(path: impl AsRef<Path>) -> Result<Tensor> {
    decode(&read(path.as_ref())?)
}

fn quantize(values: &[f32], mapping: PixelMapping) -> Vec<u8> {
    let to_byte = |v: f32| v.round().clamp(0.0, 255.0) as u8;
    match mapping {
        PixelMapping::Unit => values.iter().map(|&v| to_byte(v * 255.0)).collect(),
        PixelMapping::MinMax => {
            let lo = values.iter().copied().fold(f32::INFINITY, f32::min);
            let hi = values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            if hi - lo <= f32::EPSILON * hi.abs().max(1.0) {
                return vec![128; values.len()];
            }
            let s = 255.0 / (hi - lo);
            values.iter().map(|&v| to_byte((v - lo) * s)).collect()
        }
        PixelMapping::Symmetric => {
            let m = values.iter().fold(0.0f32, |a, v| a.max(v.abs()));
            if m == 0.0 {
                return vec![128; values.len()];
            }
            values
                .iter()
                .map(|&v| to_byte(128.0 + 127.0 * v / m))
                .collect()
        }
    }
}

/// Encodes `[1, H, W]` (or `[H, W]`) as P5, or `[3, H, W]` as P6.
pub fn encode(image: &Tensor, mapping: PixelMapping) -> Result<Vec<u8>> {
    let (c, h, w) = match *image.shape() {
        [h, w] => (1, h, w),
        [c @ (1 | 3), h, w] => (c, h, w),
        _ => {
            return Err(Error::shape(
                "netpbm encode",
                format!(
                    "expected [H,W], [1,H,W] or [3,H,W], got {:?}",
                    image.shape()
                ),
            ))
        }
    };
    let bytes = quantize(image.data(), mapping);
    let plane = h * w;
    let magic = if c == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    out.reserve(bytes.len());
    for pixel in 0..plane {
        for ch in 0..c {
            out.push(bytes[ch * plane + pixel]);
        }
    }
    Ok(out)
}

fn write(path: &Path, bytes: Vec<u8>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Saves a single-channel image as P5.
pub fn save_pgm(image: &Tensor, path: impl AsRef<Path>, mapping: PixelMapping) -> Result<()> {
    if image.ndim() == 3 && image.shape()[0] != 1 {
        return Err(Error::shape(
            "save_pgm",
            format!("graymap needs one channel, got {:?}", image.shape()),
        ));
    }
    write(path.as_ref(), encode(image, mapping)?)
}

/// Saves a three-channel image as P6.
pub fn save_ppm(image: &Tensor, path: impl AsRef<Path>, mapping: PixelMapping) -> Result<()> {
    if image.ndim() != 3 || image.shape()[0] != 3 {
        return Err(Error::shape(
            "save_ppm",
            format!("pixmap needs [3, H, W], got {:?}", image.shape()),
        ));
    }
    write(path.as_ref(), encode(image, mapping)?)
}

/// Rounds samples to the nearest multiple of 1/255, as an 8-bit file would.
pub fn quantize_unit(image: &Tensor) -> Tensor {
    let mut q = image.clone();
    q.clear_grad();
    q.data_mut()
        .iter_mut()
        .for_each(|v| *v = (*v * 255.0).round().clamp(0.0, 255.0) / 255.0);
    q
}

/// Nearest-neighbour resampling of `[C, H, W]` to `[C, height, width]`.
pub fn resize_nearest(image: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let &[c, h, w] = image.shape() else {
        return Err(Error::shape(
            "resize_nearest",
            format!("expected [C,H,W], got {:?}", image.shape()),
        ));
    };
    if height == 0 || width == 0 {
        return Err(Error::arg("resize target has an empty axis"));
    }
    let mut out = Vec::with_capacity(c * height * width);
    for ch in 0..c {
        for i in 0..height {
            let si = i * h / height;
            for j in 0..width {
                let sj = j * w / width;
                out.push(image.data()[(ch * h + si) * w + sj]);
            }
        }
    }
    Tensor::new(&[c, height, width], out)
}
