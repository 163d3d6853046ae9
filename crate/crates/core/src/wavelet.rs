//! Two-channel filter banks and the separable 2D multiresolution analysis
//! built from them.
//!
//! All transforms use periodic extension, so a signal of even length `n`
//! splits into two bands of exactly `n / 2` samples. For an orthonormal
//! filter pair the synthesis step is the transpose of analysis and therefore
//! its exact inverse.
//!
//! Subband naming for a 2D level (rows are filtered first, then columns):
//!
//! | band | along rows | along columns | responds to            |
//! |------|------------|---------------|------------------------|
//! | LL   | low        | low           | coarse approximation   |
//! | LH   | high       | low           | horizontal variation   |
//! | HL   | low        | high          | vertical variation     |
//! | HH   | high       | high          | diagonal detail        |

use std::f32::consts::FRAC_1_SQRT_2;
use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Low-pass (scaling) and high-pass (wavelet) analysis filters.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveletFilterPair {
    name: String,
    low: Vec<f32>,
    high: Vec<f32>,
}

impl WaveletFilterPair {
    pub fn new(name: impl Into<String>, low: Vec<f32>, high: Vec<f32>) -> Result<Self> {
        if low.len() != high.len() || low.is_empty() || !low.len().is_multiple_of(2) {
            return Err(Error::arg(format!(
                "filter pair needs equal even lengths, got {} and {}",
                low.len(),
                high.len()
            )));
        }
        Ok(WaveletFilterPair {
            name: name.into(),
            low,
            high,
        })
    }

    /// Orthonormal Haar pair.
    pub fn haar() -> Self {
        WaveletFilterPair {
            name: "haar".to_string(),
            low: vec![FRAC_1_SQRT_2, FRAC_1_SQRT_2],
            high: vec![FRAC_1_SQRT_2, -FRAC_1_SQRT_2],
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn low(&self) -> &[f32] {
        &self.low
    }

    pub fn high(&self) -> &[f32] {
        &self.high
    }

    pub fn len(&self) -> usize {
        self.low.len()
    }

    pub fn is_empty(&self) -> bool {
        self.low.is_empty()
    }

    /// Wavelet layers are fixed; they contribute nothing to the trainable
    /// parameter count.
    pub fn trainable_params(&self) -> usize {
        0
    }
}

/// Residuals of the quadrature-mirror and orthonormality conditions.
#[derive(Clone, Debug, PartialEq)]
pub struct QmfReport {
    /// `max_n |k_h[n] - (-1)^n k_l[L-1-n]|`
    pub mirror: f64,
    /// `|Σ k_l[n]^2 - 1|`
    pub normalization: f64,
    /// `|Σ k_l[n] k_h[n]|`
    pub orthogonality: f64,
    pub tolerance: f64,
}

impl QmfReport {
    pub fn passed(&self) -> bool {
        self.residuals().iter().all(|&(_, r)| r <= self.tolerance)
    }

    pub fn residuals(&self) -> [(&'static str, f64); 3] {
        [
            ("mirror", self.mirror),
            ("normalization", self.normalization),
            ("orthogonality", self.orthogonality),
        ]
    }
}

impl fmt::Display for QmfReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed() { "pass" } else { "FAIL" };
        write!(f, "qmf {verdict} (tol {:e}):", self.tolerance)?;
        for (name, r) in self.residuals() {
            write!(f, " {name}={r:.3e}")?;
        }
        Ok(())
    }
}

pub fn qmf_check(pair: &WaveletFilterPair, tol: f64) -> QmfReport {
    let l = pair.len();
    let low: Vec<f64> = pair.low.iter().map(|&v| v as f64).collect();
    let high: Vec<f64> = pair.high.iter().map(|&v| v as f64).collect();
    let mirror = (0..l)
        .map(|n| {
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            (high[n] - sign * low[l - 1 - n]).abs()
        })
        .fold(0.0, f64::max);
    let energy: f64 = low.iter().map(|v| v * v).sum();
    let cross: f64 = low.iter().zip(&high).map(|(a, b)| a * b).sum();
    QmfReport {
        mirror,
        normalization: (energy - 1.0).abs(),
        orthogonality: cross.abs(),
        tolerance: tol,
    }
}

fn check_signal(n: usize, pair: &WaveletFilterPair, what: &str) -> Result<()> {
    if !n.is_multiple_of(2) {
        return Err(Error::arg(format!("{what} length {n} is odd")));
    }
    if n < pair.len() {
        return Err(Error::arg(format!(
            "{what} length {n} is shorter than the {}-tap filter",
            pair.len()
        )));
    }
    Ok(())
}

/// Analysis into two bands over strided samples, writing into `low`/`high`.
fn analyze_strided(
    pair: &WaveletFilterPair,
    n: usize,
    get: impl Fn(usize) -> f32,
    mut put: impl FnMut(usize, f32, f32),
) {
    for i in 0..n / 2 {
        let mut lo = 0.0f32;
        let mut hi = 0.0f32;
        for m in 0..pair.len() {
            let v = get((2 * i + m) % n);
            lo += pair.low[m] * v;
            hi += pair.high[m] * v;
        }
        put(i, lo, hi);
    }
}

/// Transpose of [`analyze_strided`]: scatters two bands back into a signal.
fn synthesize_strided(
    pair: &WaveletFilterPair,
    n: usize,
    bands: impl Fn(usize) -> (f32, f32),
    mut add: impl FnMut(usize, f32),
) {
    for i in 0..n / 2 {
        let (lo, hi) = bands(i);
        for m in 0..pair.len() {
            add((2 * i + m) % n, pair.low[m] * lo + pair.high[m] * hi);
        }
    }
}

/// One analysis level on a 1D signal: `(low, high)`, each of half length.
pub fn dwt1d(x: &[f32], pair: &WaveletFilterPair) -> Result<(Vec<f32>, Vec<f32>)> {
    check_signal(x.len(), pair, "signal")?;
    let half = x.len() / 2;
    let mut low = vec![0.0; half];
    let mut high = vec![0.0; half];
    analyze_strided(
        pair,
        x.len(),
        |k| x[k],
        |i, lo, hi| {
            low[i] = lo;
            high[i] = hi;
        },
    );
    Ok((low, high))
}

/// Inverse of [`dwt1d`] for orthonormal pairs.
pub fn idwt1d(low: &[f32], high: &[f32], pair: &WaveletFilterPair) -> Result<Vec<f32>> {
    if low.len() != high.len() {
        return Err(Error::shape(
            "idwt1d",
            format!("band lengths {} and {} differ", low.len(), high.len()),
        ));
    }
    let n = 2 * low.len();
    check_signal(n, pair, "signal")?;
    let mut x = vec![0.0; n];
    synthesize_strided(pair, n, |i| (low[i], high[i]), |k, v| x[k] += v);
    Ok(x)
}

/// The four subbands of one 2D level, each shaped like the input with both
/// spatial extents halved.
#[derive(Clone, Debug, PartialEq)]
pub struct Subbands {
    pub ll: Tensor,
    pub lh: Tensor,
    pub hl: Tensor,
    pub hh: Tensor,
}

impl Subbands {
    pub fn bands(&self) -> [(&'static str, &Tensor); 4] {
        [
            ("LL", &self.ll),
            ("LH", &self.lh),
            ("HL", &self.hl),
            ("HH", &self.hh),
        ]
    }

    pub fn shape(&self) -> &[usize] {
        self.ll.shape()
    }

    fn is_consistent(&self) -> bool {
        let s = self.ll.shape();
        self.lh.shape() == s && self.hl.shape() == s && self.hh.shape() == s
    }
}

fn spatial_dims(op: &'static str, shape: &[usize]) -> Result<(usize, usize)> {
    if !(shape.len() == 3 || shape.len() == 4) {
        return Err(Error::shape(
            op,
            format!("expected [C,H,W] or [N,C,H,W], got {shape:?}"),
        ));
    }
    Ok((shape[shape.len() - 2], shape[shape.len() - 1]))
}

/// Analyzes one `h × w` plane into four `h/2 × w/2` planes written at the
/// given offsets of `out` (order LL, LH, HL, HH).
fn analyze_plane(
    pair: &WaveletFilterPair,
    plane: &[f32],
    h: usize,
    w: usize,
    out: [&mut [f32]; 4],
) {
    let (hh2, hw2) = (h / 2, w / 2);
    let mut row_lo = vec![0.0f32; h * hw2];
    let mut row_hi = vec![0.0f32; h * hw2];
    for r in 0..h {
        let row = &plane[r * w..(r + 1) * w];
        analyze_strided(
            pair,
            w,
            |k| row[k],
            |i, lo, hi| {
                row_lo[r * hw2 + i] = lo;
                row_hi[r * hw2 + i] = hi;
            },
        );
    }
    let [ll, lh, hl, hh] = out;
    for c in 0..hw2 {
        analyze_strided(
            pair,
            h,
            |k| row_lo[k * hw2 + c],
            |i, lo, hi| {
                ll[i * hw2 + c] = lo;
                hl[i * hw2 + c] = hi;
            },
        );
        analyze_strided(
            pair,
            h,
            |k| row_hi[k * hw2 + c],
            |i, lo, hi| {
                lh[i * hw2 + c] = lo;
                hh[i * hw2 + c] = hi;
            },
        );
    }
    debug_assert_eq!(hh2 * hw2, ll.len());
}

/// Transpose of [`analyze_plane`], accumulating into `plane`.
fn synthesize_plane(
    pair: &WaveletFilterPair,
    bands: [&[f32]; 4],
    h: usize,
    w: usize,
    plane: &mut [f32],
) {
    let hw2 = w / 2;
    let [ll, lh, hl, hh] = bands;
    let mut row_lo = vec![0.0f32; h * hw2];
    let mut row_hi = vec![0.0f32; h * hw2];
    for c in 0..hw2 {
        synthesize_strided(
            pair,
            h,
            |i| (ll[i * hw2 + c], hl[i * hw2 + c]),
            |k, v| row_lo[k * hw2 + c] += v,
        );
        synthesize_strided(
            pair,
            h,
            |i| (lh[i * hw2 + c], hh[i * hw2 + c]),
            |k, v| row_hi[k * hw2 + c] += v,
        );
    }
    for r in 0..h {
        let row = &mut plane[r * w..(r + 1) * w];
        synthesize_strided(
            pair,
            w,
            |i| (row_lo[r * hw2 + i], row_hi[r * hw2 + i]),
            |k, v| row[k] += v,
        );
    }
}

fn check_plane(pair: &WaveletFilterPair, h: usize, w: usize) -> Result<()> {
    check_signal(h, pair, "image height")?;
    check_signal(w, pair, "image width")
}

/// Separable single-level 2D transform, applied to every channel (and batch
/// sample) independently.
pub fn dwt2d(x: &Tensor, pair: &WaveletFilterPair) -> Result<Subbands> {
    let (h, w) = spatial_dims("dwt2d", x.shape())?;
    check_plane(pair, h, w)?;
    let quarter = (h / 2) * (w / 2);
    let planes = x.len() / (h * w);
    let mut bufs = [
        vec![0.0f32; planes * quarter],
        vec![0.0f32; planes * quarter],
        vec![0.0f32; planes * quarter],
        vec![0.0f32; planes * quarter],
    ];
    for (p, plane) in x.data().chunks(h * w).enumerate() {
        let [a, b, c, d] = &mut bufs;
        let r = p * quarter..(p + 1) * quarter;
        analyze_plane(
            pair,
            plane,
            h,
            w,
            [
                &mut a[r.clone()],
                &mut b[r.clone()],
                &mut c[r.clone()],
                &mut d[r],
            ],
        );
    }
    let mut shape = x.shape().to_vec();
    let k = shape.len();
    shape[k - 2] = h / 2;
    shape[k - 1] = w / 2;
    let [ll, lh, hl, hh] = bufs;
    Ok(Subbands {
        ll: Tensor::new(&shape, ll)?,
        lh: Tensor::new(&shape, lh)?,
        hl: Tensor::new(&shape, hl)?,
        hh: Tensor::new(&shape, hh)?,
    })
}

/// Inverse of [`dwt2d`] for orthonormal pairs.
pub fn idwt2d(bands: &Subbands, pair: &WaveletFilterPair) -> Result<Tensor> {
    if !bands.is_consistent() {
        return Err(Error::shape("idwt2d", "subbands have different shapes"));
    }
    let (h2, w2) = spatial_dims("idwt2d", bands.shape())?;
    let (h, w) = (2 * h2, 2 * w2);
    check_plane(pair, h, w)?;
    let quarter = h2 * w2;
    let planes = bands.ll.len() / quarter.max(1);
    let mut out = vec![0.0f32; planes * h * w];
    for (p, plane) in out.chunks_mut(h * w).enumerate() {
        let r = p * quarter..(p + 1) * quarter;
        synthesize_plane(
            pair,
            [
                &bands.ll.data()[r.clone()],
                &bands.lh.data()[r.clone()],
                &bands.hl.data()[r.clone()],
                &bands.hh.data()[r],
            ],
            h,
            w,
            plane,
        );
    }
    let mut shape = bands.shape().to_vec();
    let k = shape.len();
    shape[k - 2] = h;
    shape[k - 1] = w;
    Tensor::new(&shape, out)
}

/// Single level on `[N, C, H, W]` with the four subbands stacked on the
/// channel axis as `[LL | LH | HL | HH]`, giving `[N, 4C, H/2, W/2]`.
pub fn dwt2d_packed(x: &Tensor, pair: &WaveletFilterPair) -> Result<Tensor> {
    let &[n, c, h, w] = x.shape() else {
        return Err(Error::shape(
            "dwt2d_packed",
            format!("expected [N,C,H,W], got {:?}", x.shape()),
        ));
    };
    check_plane(pair, h, w)?;
    let quarter = (h / 2) * (w / 2);
    let mut out = vec![0.0f32; n * 4 * c * quarter];
    for b in 0..n {
        let sample = &mut out[b * 4 * c * quarter..(b + 1) * 4 * c * quarter];
        let (ll, rest) = sample.split_at_mut(c * quarter);
        let (lh, rest) = rest.split_at_mut(c * quarter);
        let (hl, hh) = rest.split_at_mut(c * quarter);
        for ch in 0..c {
            let plane = &x.data()[((b * c + ch) * h * w)..][..h * w];
            let r = ch * quarter..(ch + 1) * quarter;
            analyze_plane(
                pair,
                plane,
                h,
                w,
                [
                    &mut ll[r.clone()],
                    &mut lh[r.clone()],
                    &mut hl[r.clone()],
                    &mut hh[r],
                ],
            );
        }
    }
    Tensor::new(&[n, 4 * c, h / 2, w / 2], out)
}

/// Transpose of [`dwt2d_packed`]; the inverse when the pair is orthonormal.
pub fn dwt2d_packed_adjoint(
    packed: &[f32],
    out_shape: &[usize],
    pair: &WaveletFilterPair,
) -> Result<Vec<f32>> {
    let &[n, c, h, w] = out_shape else {
        return Err(Error::shape(
            "dwt2d_packed_adjoint",
            format!("expected [N,C,H,W], got {out_shape:?}"),
        ));
    };
    check_plane(pair, h, w)?;
    let quarter = (h / 2) * (w / 2);
    if packed.len() != n * 4 * c * quarter {
        return Err(Error::shape(
            "dwt2d_packed_adjoint",
            format!("{} packed values for output {out_shape:?}", packed.len()),
        ));
    }
    let mut x = vec![0.0f32; n * c * h * w];
    for b in 0..n {
        let sample = &packed[b * 4 * c * quarter..(b + 1) * 4 * c * quarter];
        for ch in 0..c {
            let band = |k: usize| &sample[(k * c + ch) * quarter..][..quarter];
            let plane = &mut x[((b * c + ch) * h * w)..][..h * w];
            synthesize_plane(pair, [band(0), band(1), band(2), band(3)], h, w, plane);
        }
    }
    Ok(x)
}

/// Subband pyramid: `levels[l]` holds level `l + 1`, whose bands have
/// spatial extent `source / 2^(l+1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MraDecomposition {
    pub source_shape: Vec<usize>,
    pub levels: Vec<Subbands>,
}

impl MraDecomposition {
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    /// Coarsest approximation band.
    pub fn coarsest(&self) -> Option<&Tensor> {
        self.levels.last().map(|s| &s.ll)
    }
}

/// Recursive decomposition of the low-pass band, `levels` times.
pub fn decompose(x: &Tensor, pair: &WaveletFilterPair, levels: usize) -> Result<MraDecomposition> {
    if levels == 0 {
        return Err(Error::arg("decomposition needs at least one level"));
    }
    let (h, w) = spatial_dims("decompose", x.shape())?;
    for level in 1..=levels {
        let (lh, lw) = (h >> (level - 1), w >> (level - 1));
        let divisible = h % (1 << level) == 0 && w % (1 << level) == 0;
        if !divisible || lh < pair.len() || lw < pair.len() {
            return Err(Error::arg(format!(
                "level {level} needs {h}x{w} divisible by {} with at least {} samples per side",
                1usize << level,
                pair.len()
            )));
        }
    }
    let mut out = Vec::with_capacity(levels);
    let mut current = dwt2d(x, pair)?;
    for _ in 1..levels {
        let next = dwt2d(&current.ll, pair)?;
        out.push(current);
        current = next;
    }
    out.push(current);
    Ok(MraDecomposition {
        source_shape: x.shape().to_vec(),
        levels: out,
    })
}

/// Rebuilds the source from the coarsest LL band and every level's detail
/// bands.
pub fn reconstruct(d: &MraDecomposition, pair: &WaveletFilterPair) -> Result<Tensor> {
    let structural = |detail: String| Error::shape("reconstruct", detail);
    if d.levels.is_empty() {
        return Err(structural("pyramid has no levels".into()));
    }
    let (h, w) = spatial_dims("reconstruct", &d.source_shape)?;
    let lead = &d.source_shape[..d.source_shape.len() - 2];
    for (i, s) in d.levels.iter().enumerate() {
        let level = i + 1;
        let mut expected = lead.to_vec();
        expected.push(h >> level);
        expected.push(w >> level);
        if h % (1 << level) != 0 || w % (1 << level) != 0 {
            return Err(structural(format!(
                "source {h}x{w} cannot hold level {level}"
            )));
        }
        if !s.is_consistent() || s.shape() != expected.as_slice() {
            return Err(structural(format!(
                "level {level} bands are {:?}, expected {expected:?}",
                s.shape()
            )));
        }
    }
    let mut approx = d.levels[d.levels.len() - 1].ll.clone();
    for s in d.levels.iter().rev() {
        let bands = Subbands {
            ll: approx,
            lh: s.lh.clone(),
            hl: s.hl.clone(),
            hh: s.hh.clone(),
        };
        approx = idwt2d(&bands, pair)?;
    }
    Ok(approx)
}
