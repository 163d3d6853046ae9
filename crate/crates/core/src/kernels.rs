//! Numeric kernels: forward functions on plain tensors plus the adjoint
//! routines the autodiff graph calls during the backward pass.
//!
//! Spatial ops accept either `[C, H, W]` or batched `[N, C, H, W]` inputs.
//! Convolution is cross-correlation (no kernel flip) with zero padding.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Batchnorm variance epsilon.
pub const BN_EPS: f32 = 1e-5;
/// Weight of the previous running statistic in the running-average update.
pub const BN_MOMENTUM: f32 = 0.9;

/// Zero padding on each side of the two spatial axes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    pub fn uniform(p: usize) -> Self {
        Padding {
            top: p,
            bottom: p,
            left: p,
            right: p,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub padding: Padding,
}

impl ConvGeometry {
    pub fn new(stride: usize, pad: usize) -> Self {
        ConvGeometry {
            stride,
            padding: Padding::uniform(pad),
        }
    }
}

/// Resolved extents of one convolution call.
#[derive(Clone, Copy, Debug)]
struct ConvDims {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    geom: ConvGeometry,
}

impl ConvDims {
    fn resolve(x: &[usize], w: &[usize], geom: ConvGeometry) -> Result<Self> {
        let (n, cin, h, wd) = batch_dims("conv2d", x)?;
        let &[cout, wcin, kh, kw] = w else {
            return Err(Error::shape(
                "conv2d",
                format!("weight must be [C_out, C_in, kH, kW], got {w:?}"),
            ));
        };
        if geom.stride == 0 {
            return Err(Error::arg("conv2d stride must be positive"));
        }
        if wcin != cin {
            return Err(Error::shape(
                "conv2d",
                format!("input has {cin} channels but weight expects {wcin}"),
            ));
        }
        let p = geom.padding;
        let ph = h + p.top + p.bottom;
        let pw = wd + p.left + p.right;
        if kh == 0 || kw == 0 || ph < kh || pw < kw {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {kh}x{kw} does not fit padded input {ph}x{pw}"),
            ));
        }
        Ok(ConvDims {
            n,
            cin,
            h,
            w: wd,
            cout,
            kh,
            kw,
            oh: (ph - kh) / geom.stride + 1,
            ow: (pw - kw) / geom.stride + 1,
            geom,
        })
    }

    fn patch(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.oh * self.ow
    }

    fn in_sample(&self) -> usize {
        self.cin * self.h * self.w
    }
}

/// Interprets a spatial tensor as `(batch, channels, height, width)`.
fn batch_dims(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match *shape {
        [c, h, w] => Ok((1, c, h, w)),
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(Error::shape(
            op,
            format!("expected [C,H,W] or [N,C,H,W], got {shape:?}"),
        )),
    }
}

fn with_spatial(batched: bool, n: usize, c: usize, h: usize, w: usize) -> Vec<usize> {
    if batched {
        vec![n, c, h, w]
    } else {
        vec![c, h, w]
    }
}

/// `c = a · b + beta · c` for row-major `a: [m, k]`, `b: [k, n]`; either
/// operand may be read transposed.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_t: bool,
    b: &[f32],
    b_t: bool,
    beta: f32,
    c: &mut [f32],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_t {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: the slice lengths were checked against the extents and strides above.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn im2col(d: &ConvDims, x: &[f32], cols: &mut [f32]) {
    let plane = d.out_plane();
    let (s, p) = (d.geom.stride, d.geom.padding);
    for c in 0..d.cin {
        for u in 0..d.kh {
            for v in 0..d.kw {
                let row = ((c * d.kh + u) * d.kw + v) * plane;
                for i in 0..d.oh {
                    let yi = (i * s + u) as isize - p.top as isize;
                    let dst = &mut cols[row + i * d.ow..row + (i + 1) * d.ow];
                    if yi < 0 || yi >= d.h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &x[(c * d.h + yi as usize) * d.w..][..d.w];
                    for (j, out) in dst.iter_mut().enumerate() {
                        let xj = (j * s + v) as isize - p.left as isize;
                        *out = if xj < 0 || xj >= d.w as isize {
                            0.0
                        } else {
                            src[xj as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(d: &ConvDims, cols: &[f32], dx: &mut [f32]) {
    let plane = d.out_plane();
    let (s, p) = (d.geom.stride, d.geom.padding);
    for c in 0..d.cin {
        for u in 0..d.kh {
            for v in 0..d.kw {
                let row = ((c * d.kh + u) * d.kw + v) * plane;
                for i in 0..d.oh {
                    let yi = (i * s + u) as isize - p.top as isize;
                    if yi < 0 || yi >= d.h as isize {
                        continue;
                    }
                    let base = (c * d.h + yi as usize) * d.w;
                    for j in 0..d.ow {
                        let xj = (j * s + v) as isize - p.left as isize;
                        if xj >= 0 && xj < d.w as isize {
                            dx[base + xj as usize] += cols[row + i * d.ow + j];
                        }
                    }
                }
            }
        }
    }
}

/// 2D convolution with uniform zero padding `pad` on every side.
pub fn conv2d(
    x: &Tensor,
    w: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    conv2d_with(x, w, bias, ConvGeometry::new(stride, pad))
}

pub fn conv2d_with(
    x: &Tensor,
    w: &Tensor,
    bias: Option<&Tensor>,
    geom: ConvGeometry,
) -> Result<Tensor> {
    let d = ConvDims::resolve(x.shape(), w.shape(), geom)?;
    if let Some(b) = bias {
        if b.shape() != [d.cout] {
            return Err(Error::shape(
                "conv2d",
                format!("bias must be [{}], got {:?}", d.cout, b.shape()),
            ));
        }
    }
    let plane = d.out_plane();
    let mut out = vec![0.0f32; d.n * d.cout * plane];
    out.par_chunks_mut(d.cout * plane)
        .enumerate()
        .for_each(|(ni, y)| {
            let mut cols = vec![0.0f32; d.patch() * plane];
            im2col(
                &d,
                &x.data()[ni * d.in_sample()..][..d.in_sample()],
                &mut cols,
            );
            gemm(
                d.cout,
                d.patch(),
                plane,
                w.data(),
                false,
                &cols,
                false,
                0.0,
                y,
            );
            if let Some(b) = bias {
                for (o, row) in y.chunks_mut(plane).enumerate() {
                    let bo = b.data()[o];
                    row.iter_mut().for_each(|v| *v += bo);
                }
            }
        });
    Tensor::new(&with_spatial(x.ndim() == 4, d.n, d.cout, d.oh, d.ow), out)
}

/// Gradients of a convolution with respect to input, weight and bias.
pub(crate) fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    geom: ConvGeometry,
    grad_out: &[f32],
) -> Result<(Vec<f32>, Vec<f32>, Vec<f32>)> {
    let d = ConvDims::resolve(x.shape(), w.shape(), geom)?;
    let plane = d.out_plane();
    let per_sample: Vec<(Vec<f32>, Vec<f32>)> = (0..d.n)
        .into_par_iter()
        .map(|ni| {
            let xs = &x.data()[ni * d.in_sample()..][..d.in_sample()];
            let gy = &grad_out[ni * d.cout * plane..][..d.cout * plane];
            let mut cols = vec![0.0f32; d.patch() * plane];
            im2col(&d, xs, &mut cols);
            let mut dw = vec![0.0f32; d.cout * d.patch()];
            gemm(
                d.cout,
                plane,
                d.patch(),
                gy,
                false,
                &cols,
                true,
                0.0,
                &mut dw,
            );
            gemm(
                d.patch(),
                d.cout,
                plane,
                w.data(),
                true,
                gy,
                false,
                0.0,
                &mut cols,
            );
            let mut dx = vec![0.0f32; d.in_sample()];
            col2im(&d, &cols, &mut dx);
            (dx, dw)
        })
        .collect();

    let mut dx = Vec::with_capacity(d.n * d.in_sample());
    let mut dw = vec![0.0f32; d.cout * d.patch()];
    for (dxs, dws) in per_sample {
        dx.extend_from_slice(&dxs);
        dw.iter_mut().zip(&dws).for_each(|(a, b)| *a += b);
    }
    let mut db = vec![0.0f32; d.cout];
    for gy in grad_out.chunks(d.cout * plane) {
        for (o, row) in gy.chunks(plane).enumerate() {
            db[o] += row.iter().map(|&v| v as f64).sum::<f64>() as f32;
        }
    }
    Ok((dx, dw, db))
}

/// Keeps every `p`-th element along both spatial axes, starting at index 0.
pub fn downsample(x: &Tensor, p: usize) -> Result<Tensor> {
    if p == 0 {
        return Err(Error::arg("downsample factor must be positive"));
    }
    let shape = x.shape();
    if let [n] = *shape {
        if n % p != 0 {
            return Err(Error::arg(format!(
                "downsample by {p} needs an extent divisible by {p}, got {n}"
            )));
        }
        return Tensor::new(&[n / p], x.data().iter().step_by(p).copied().collect());
    }
    if shape.len() < 2 {
        return Err(Error::shape(
            "downsample",
            format!("needs spatial axes, got {shape:?}"),
        ));
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    if h % p != 0 || w % p != 0 {
        return Err(Error::arg(format!(
            "downsample by {p} needs extents divisible by {p}, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / p, w / p);
    let mut out = Vec::with_capacity(x.len() / (p * p));
    for plane in x.data().chunks(h * w) {
        for i in 0..oh {
            for j in 0..ow {
                out.push(plane[(p * i) * w + p * j]);
            }
        }
    }
    let mut out_shape = shape.to_vec();
    let k = out_shape.len();
    out_shape[k - 2] = oh;
    out_shape[k - 1] = ow;
    Tensor::new(&out_shape, out)
}

pub(crate) fn downsample_backward(in_shape: &[usize], p: usize, grad_out: &[f32]) -> Vec<f32> {
    if let [n] = *in_shape {
        let mut dx = vec![0.0f32; n];
        dx.iter_mut()
            .step_by(p)
            .zip(grad_out)
            .for_each(|(d, &g)| *d = g);
        return dx;
    }
    let (h, w) = (in_shape[in_shape.len() - 2], in_shape[in_shape.len() - 1]);
    let (oh, ow) = (h / p, w / p);
    let mut dx = vec![0.0f32; in_shape.iter().product()];
    for (plane, g) in dx.chunks_mut(h * w).zip(grad_out.chunks(oh * ow)) {
        for i in 0..oh {
            for j in 0..ow {
                plane[(p * i) * w + p * j] = g[i * ow + j];
            }
        }
    }
    dx
}

/// Average pooling over non-overlapping `p × p` windows, evaluated directly
/// as the mean of each window.
pub fn avg_pool2d(x: &Tensor, p: usize) -> Result<Tensor> {
    if p == 0 {
        return Err(Error::arg("pooling support must be positive"));
    }
    let shape = x.shape();
    if shape.len() < 2 {
        return Err(Error::shape(
            "avg_pool2d",
            format!("needs spatial axes, got {shape:?}"),
        ));
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    if h % p != 0 || w % p != 0 {
        return Err(Error::arg(format!(
            "average pooling by {p} needs extents divisible by {p}, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / p, w / p);
    let scale = 1.0 / (p * p) as f32;
    let mut out = Vec::with_capacity(x.len() / (p * p));
    for plane in x.data().chunks(h * w) {
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = 0.0f32;
                for u in 0..p {
                    for v in 0..p {
                        acc += plane[(p * i + u) * w + p * j + v];
                    }
                }
                out.push(acc * scale);
            }
        }
    }
    let mut out_shape = shape.to_vec();
    let k = out_shape.len();
    out_shape[k - 2] = oh;
    out_shape[k - 1] = ow;
    Tensor::new(&out_shape, out)
}

pub(crate) fn avg_pool2d_backward(in_shape: &[usize], p: usize, grad_out: &[f32]) -> Vec<f32> {
    let (h, w) = (in_shape[in_shape.len() - 2], in_shape[in_shape.len() - 1]);
    let (oh, ow) = (h / p, w / p);
    let scale = 1.0 / (p * p) as f32;
    let mut dx = vec![0.0f32; in_shape.iter().product()];
    for (plane, g) in dx.chunks_mut(h * w).zip(grad_out.chunks(oh * ow)) {
        for (idx, v) in plane.iter_mut().enumerate() {
            let (i, j) = (idx / w / p, idx % w / p);
            *v = g[i * ow + j] * scale;
        }
    }
    dx
}

/// Generalized convolution-pooling `(x ∗ k) ↓ p` for a single-channel
/// kernel applied to every channel independently. The filtered signal keeps
/// the input extent (zeros beyond the trailing edge) so the downsampling
/// divisibility rule applies to the input size.
pub fn conv_pool(x: &Tensor, kernel: &Tensor, p: usize) -> Result<Tensor> {
    let &[kh, kw] = kernel.shape() else {
        return Err(Error::shape(
            "conv_pool",
            format!("kernel must be [kH, kW], got {:?}", kernel.shape()),
        ));
    };
    let (n, c, h, w) = batch_dims("conv_pool", x.shape())?;
    let planes = Tensor::new(&[n * c, 1, h, w], x.data().to_vec())?;
    let weight = Tensor::new(&[1, 1, kh, kw], kernel.data().to_vec())?;
    let geom = ConvGeometry {
        stride: 1,
        padding: Padding {
            top: 0,
            bottom: kh - 1,
            left: 0,
            right: kw - 1,
        },
    };
    let filtered = conv2d_with(&planes, &weight, None, geom)?;
    let shape = x.shape().to_vec();
    downsample(&filtered.reshape(&shape)?, p)
}

pub fn relu(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    y.clear_grad();
    y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    y
}

pub(crate) fn relu_backward(x: &[f32], grad_out: &[f32]) -> Vec<f32> {
    x.iter()
        .zip(grad_out)
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect()
}

/// Affine map `W x + b` on `[n]` or batched `[N, n]` inputs.
pub fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (batch, fin, batched) = match *x.shape() {
        [f] => (1, f, false),
        [n, f] => (n, f, true),
        _ => {
            return Err(Error::shape(
                "linear",
                format!("input must be [n] or [N, n], got {:?}", x.shape()),
            ))
        }
    };
    let &[fout, wfin] = w.shape() else {
        return Err(Error::shape(
            "linear",
            format!("weight must be [m, n], got {:?}", w.shape()),
        ));
    };
    if wfin != fin || b.shape() != [fout] {
        return Err(Error::shape(
            "linear",
            format!(
                "input {:?}, weight {:?}, bias {:?} are inconsistent",
                x.shape(),
                w.shape(),
                b.shape()
            ),
        ));
    }
    let mut out = Vec::with_capacity(batch * fout);
    for _ in 0..batch {
        out.extend_from_slice(b.data());
    }
    gemm(
        batch,
        fin,
        fout,
        x.data(),
        false,
        w.data(),
        true,
        1.0,
        &mut out,
    );
    let shape = if batched {
        vec![batch, fout]
    } else {
        vec![fout]
    };
    Tensor::new(&shape, out)
}

pub(crate) fn linear_backward(
    x: &Tensor,
    w: &Tensor,
    grad_out: &[f32],
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let fin = *x.shape().last().unwrap_or(&0);
    let batch = x.len() / fin.max(1);
    let fout = w.shape()[0];
    let mut dx = vec![0.0f32; batch * fin];
    gemm(
        batch,
        fout,
        fin,
        grad_out,
        false,
        w.data(),
        false,
        0.0,
        &mut dx,
    );
    let mut dw = vec![0.0f32; fout * fin];
    gemm(
        fout,
        batch,
        fin,
        grad_out,
        true,
        x.data(),
        false,
        0.0,
        &mut dw,
    );
    let mut db = vec![0.0f32; fout];
    for row in grad_out.chunks(fout) {
        db.iter_mut().zip(row).for_each(|(a, b)| *a += b);
    }
    (dx, dw, db)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Training,
    Inference,
}

/// Per-channel running statistics of a batchnorm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }

    /// Folds one batch's statistics in with momentum [`BN_MOMENTUM`].
    pub fn update(&mut self, batch: &BatchStats) {
        for (r, &m) in self.mean.iter_mut().zip(&batch.mean) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * m;
        }
        for (r, &v) in self.var.iter_mut().zip(&batch.unbiased_var) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * v;
        }
    }
}

/// Statistics measured on one training batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
    pub unbiased_var: Vec<f32>,
}

/// Saved state needed to differentiate a batchnorm call.
#[derive(Clone, Debug)]
pub(crate) struct BatchNormCache {
    pub xhat: Vec<f32>,
    pub inv_std: Vec<f32>,
    pub mode: Mode,
}

/// Layout helper: `(batch, channels, spatial)` for `[N, C]` or `[N, C, H, W]`.
fn bn_dims(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [n, c] => Ok((n, c, 1)),
        [n, c, h, w] => Ok((n, c, h * w)),
        _ => Err(Error::shape(
            "batchnorm",
            format!("expected [N, C] or [N, C, H, W], got {shape:?}"),
        )),
    }
}

/// Per-channel batch normalization. Training mode normalizes with batch
/// statistics (returned so the caller can update running averages);
/// inference mode uses `running`.
pub fn batchnorm(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running: &RunningStats,
    mode: Mode,
) -> Result<(Tensor, Option<BatchStats>)> {
    let (y, stats, _) = batchnorm_forward(x, gamma, beta, running, mode)?;
    Ok((y, stats))
}

pub(crate) fn batchnorm_forward(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running: &RunningStats,
    mode: Mode,
) -> Result<(Tensor, Option<BatchStats>, BatchNormCache)> {
    let (n, c, s) = bn_dims(x.shape())?;
    if gamma.shape() != [c] || beta.shape() != [c] || running.mean.len() != c {
        return Err(Error::shape(
            "batchnorm",
            format!(
                "{c} channels but gamma {:?}, beta {:?}",
                gamma.shape(),
                beta.shape()
            ),
        ));
    }
    let data = x.data();
    let (mean, var, stats) = match mode {
        Mode::Training => {
            if n < 2 {
                return Err(Error::arg(
                    "training-mode batchnorm needs a batch of at least 2 samples",
                ));
            }
            let count = (n * s) as f64;
            let mut mean = vec![0.0f32; c];
            let mut var = vec![0.0f32; c];
            let mut unbiased = vec![0.0f32; c];
            for ch in 0..c {
                let values = (0..n).flat_map(|b| data[(b * c + ch) * s..][..s].iter());
                let m = values.clone().map(|&v| v as f64).sum::<f64>() / count;
                let ss = values.map(|&v| (v as f64 - m).powi(2)).sum::<f64>();
                mean[ch] = m as f32;
                var[ch] = (ss / count) as f32;
                unbiased[ch] = (ss / (count - 1.0)) as f32;
            }
            let stats = BatchStats {
                mean: mean.clone(),
                var: var.clone(),
                unbiased_var: unbiased,
            };
            (mean, var, Some(stats))
        }
        Mode::Inference => (running.mean.clone(), running.var.clone(), None),
    };
    let inv_std: Vec<f32> = var.iter().map(|&v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut xhat = vec![0.0f32; data.len()];
    let mut y = vec![0.0f32; data.len()];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * s;
            let (g, bt) = (gamma.data()[ch], beta.data()[ch]);
            for k in off..off + s {
                let h = (data[k] - mean[ch]) * inv_std[ch];
                xhat[k] = h;
                y[k] = g * h + bt;
            }
        }
    }
    let cache = BatchNormCache {
        xhat,
        inv_std,
        mode,
    };
    Ok((Tensor::new(x.shape(), y)?, stats, cache))
}

pub(crate) fn batchnorm_backward(
    shape: &[usize],
    gamma: &[f32],
    cache: &BatchNormCache,
    grad_out: &[f32],
) -> Result<(Vec<f32>, Vec<f32>, Vec<f32>)> {
    let (n, c, s) = bn_dims(shape)?;
    let count = (n * s) as f64;
    let mut dx = vec![0.0f32; grad_out.len()];
    let mut dgamma = vec![0.0f32; c];
    let mut dbeta = vec![0.0f32; c];
    for ch in 0..c {
        let idx = || (0..n).flat_map(move |b| (b * c + ch) * s..(b * c + ch) * s + s);
        let sum_dy: f64 = idx().map(|k| grad_out[k] as f64).sum();
        let sum_dy_xhat: f64 = idx().map(|k| (grad_out[k] * cache.xhat[k]) as f64).sum();
        dgamma[ch] = sum_dy_xhat as f32;
        dbeta[ch] = sum_dy as f32;
        let scale = gamma[ch] * cache.inv_std[ch];
        match cache.mode {
            Mode::Training => {
                let mean_dy = (sum_dy / count) as f32;
                let mean_dy_xhat = (sum_dy_xhat / count) as f32;
                for k in idx() {
                    dx[k] = scale * (grad_out[k] - mean_dy - cache.xhat[k] * mean_dy_xhat);
                }
            }
            Mode::Inference => {
                for k in idx() {
                    dx[k] = scale * grad_out[k];
                }
            }
        }
    }
    Ok((dx, dgamma, dbeta))
}

/// Global average over the spatial axes: `[N, C, H, W] -> [N, C]`.
pub fn global_mean(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = batch_dims("energy", x.shape())?;
    let plane = h * w;
    let out = x
        .data()
        .chunks(plane)
        .map(|p| (p.iter().map(|&v| v as f64).sum::<f64>() / plane as f64) as f32)
        .collect();
    let shape = if x.ndim() == 4 { vec![n, c] } else { vec![c] };
    Tensor::new(&shape, out)
}

pub(crate) fn global_mean_backward(in_shape: &[usize], grad_out: &[f32]) -> Vec<f32> {
    let plane = in_shape[in_shape.len() - 2] * in_shape[in_shape.len() - 1];
    let scale = 1.0 / plane as f32;
    grad_out
        .iter()
        .flat_map(|&g| std::iter::repeat_n(g * scale, plane))
        .collect()
}

/// Concatenates `[N, C_i, H, W]` tensors along the channel axis.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::arg("cannot concatenate an empty list"))?;
    let (n, _, h, w) = batch_dims("concat", first.shape())?;
    let mut channels = 0;
    for p in parts {
        let (pn, pc, ph, pw) = batch_dims("concat", p.shape())?;
        if (pn, ph, pw) != (n, h, w) || p.ndim() != first.ndim() {
            return Err(Error::shape(
                "concat",
                format!("{:?} cannot join {:?}", p.shape(), first.shape()),
            ));
        }
        channels += pc;
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(n * channels * plane);
    for b in 0..n {
        for p in parts {
            let per = p.len() / n;
            out.extend_from_slice(&p.data()[b * per..(b + 1) * per]);
        }
    }
    Tensor::new(&with_spatial(first.ndim() == 4, n, channels, h, w), out)
}

/// Channels `[start, start + count)` of a spatial tensor.
pub fn slice_channels(x: &Tensor, start: usize, count: usize) -> Result<Tensor> {
    let (n, c, h, w) = batch_dims("slice_channels", x.shape())?;
    if start + count > c || count == 0 {
        return Err(Error::shape(
            "slice_channels",
            format!("range {start}..{} outside {c} channels", start + count),
        ));
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(n * count * plane);
    for b in 0..n {
        let base = (b * c + start) * plane;
        out.extend_from_slice(&x.data()[base..base + count * plane]);
    }
    Tensor::new(&with_spatial(x.ndim() == 4, n, count, h, w), out)
}

/// Mean softmax cross-entropy of `[N, K]` logits against integer labels.
/// Returns the loss and the class probabilities.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f32, Vec<f32>)> {
    let &[n, k] = logits.shape() else {
        return Err(Error::shape(
            "softmax_cross_entropy",
            format!("logits must be [N, K], got {:?}", logits.shape()),
        ));
    };
    if labels.len() != n {
        return Err(Error::shape(
            "softmax_cross_entropy",
            format!("{} labels for a batch of {n}", labels.len()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::arg(format!("label {bad} outside [0, {k})")));
    }
    let mut probs = Vec::with_capacity(n * k);
    let mut total = 0.0f64;
    for (row, &label) in logits.data().chunks(k).zip(labels) {
        let max = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
        let exps: Vec<f64> = row.iter().map(|&v| (v as f64 - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        total += z.ln() - (row[label] as f64 - max);
        probs.extend(exps.iter().map(|e| (e / z) as f32));
    }
    Ok(((total / n as f64) as f32, probs))
}

pub(crate) fn softmax_cross_entropy_backward(
    probs: &[f32],
    labels: &[usize],
    k: usize,
    grad_out: f32,
) -> Vec<f32> {
    let n = labels.len();
    let scale = grad_out / n as f32;
    let mut dx: Vec<f32> = probs.iter().map(|p| p * scale).collect();
    for (b, &l) in labels.iter().enumerate() {
        dx[b * k + l] -= scale;
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f32]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn identity_kernel_is_identity() {
        let x = t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let w = t(&[1, 1, 1, 1], &[1.0]);
        let b = t(&[1], &[0.0]);
        let y = conv2d(&x, &w, Some(&b), 1, 0).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn pairwise_average_with_stride_two() {
        let x = t(&[1, 1, 4], &[1.0, 3.0, 5.0, 7.0]);
        let w = t(&[1, 1, 1, 2], &[0.5, 0.5]);
        let y = conv2d(&x, &w, None, 2, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2]);
        assert_eq!(y.data(), &[2.0, 6.0]);
    }

    #[test]
    fn stride_two_with_unit_padding_halves_extent() {
        let x = Tensor::zeros(&[2, 3, 16, 16]);
        let w = Tensor::zeros(&[5, 3, 3, 3]);
        let y = conv2d(&x, &w, None, 2, 1).unwrap();
        assert_eq!(y.shape(), &[2, 5, 8, 8]);
    }

    #[test]
    fn conv_errors() {
        let x = Tensor::zeros(&[3, 4, 4]);
        let w = Tensor::zeros(&[2, 2, 3, 3]);
        assert!(matches!(
            conv2d(&x, &w, None, 1, 1),
            Err(Error::Shape { .. })
        ));
        let w = Tensor::zeros(&[2, 3, 3, 3]);
        assert!(matches!(
            conv2d(&x, &w, None, 0, 1),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn downsample_definition() {
        let x = t(&[4], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(downsample(&x, 2).unwrap().data(), &[1.0, 3.0]);
        assert_eq!(downsample(&x, 1).unwrap(), x);
        assert!(matches!(
            downsample(&t(&[3], &[1.0, 2.0, 3.0]), 2),
            Err(Error::Argument(_))
        ));
        let img = Tensor::from_fn(&[2, 3, 6, 6], |i| i as f32);
        assert_eq!(downsample(&img, 1).unwrap(), img);
        assert!(matches!(downsample(&img, 4), Err(Error::Argument(_))));
    }

    #[test]
    fn downsample_ramp_keeps_even_coordinates() {
        let x = Tensor::from_fn(&[4, 4], |i| i as f32);
        let y = downsample(&x, 2).unwrap();
        let expected: Vec<f32> = [(0, 0), (0, 2), (2, 0), (2, 2)]
            .iter()
            .map(|&(i, j)| (i * 4 + j) as f32)
            .collect();
        assert_eq!(y.data(), expected.as_slice());
    }

    #[test]
    fn relu_clamps_negatives() {
        assert_eq!(relu(&t(&[3], &[-1.0, 0.0, 2.0])).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn uniform_logits_give_ln2() {
        let (loss, probs) = softmax_cross_entropy(&t(&[1, 2], &[0.0, 0.0]), &[0]).unwrap();
        assert!((loss - std::f32::consts::LN_2).abs() < 1e-6);
        assert_eq!(probs, vec![0.5, 0.5]);
        assert!(softmax_cross_entropy(&t(&[1, 2], &[0.0, 0.0]), &[2]).is_err());
    }

    #[test]
    fn batchnorm_standardizes_batch() {
        // Channel values 3 and 7 alternate: mean 5, variance 4.
        let x = Tensor::from_fn(&[4, 1, 2, 2], |i| if i % 2 == 0 { 3.0 } else { 7.0 });
        let gamma = t(&[1], &[1.0]);
        let beta = t(&[1], &[0.0]);
        let (y, stats) =
            batchnorm(&x, &gamma, &beta, &RunningStats::new(1), Mode::Training).unwrap();
        let stats = stats.unwrap();
        assert!((stats.mean[0] - 5.0).abs() < 1e-6);
        assert!((stats.var[0] - 4.0).abs() < 1e-6);
        let n = y.len() as f64;
        let mean = y.data().iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = y
            .data()
            .iter()
            .map(|&v| (v as f64 - mean).powi(2))
            .sum::<f64>()
            / n;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-5);
    }

    #[test]
    fn batchnorm_rejects_single_sample_in_training() {
        let x = Tensor::zeros(&[1, 2, 3, 3]);
        let g = Tensor::full(&[2], 1.0);
        let b = Tensor::zeros(&[2]);
        let r = batchnorm(&x, &g, &b, &RunningStats::new(2), Mode::Training);
        assert!(matches!(r, Err(Error::Argument(_))));
        assert!(batchnorm(&x, &g, &b, &RunningStats::new(2), Mode::Inference).is_ok());
    }

    #[test]
    fn running_stats_use_momentum() {
        let mut r = RunningStats::new(1);
        r.update(&BatchStats {
            mean: vec![10.0],
            var: vec![3.0],
            unbiased_var: vec![4.0],
        });
        assert!((r.mean[0] - 1.0).abs() < 1e-6);
        assert!((r.var[0] - (0.9 + 0.4)).abs() < 1e-6);
    }

    #[test]
    fn energy_is_spatial_mean() {
        let x = t(&[1, 1, 2, 2], &[1.0, 3.0, 5.0, 7.0]);
        assert_eq!(global_mean(&x).unwrap().data(), &[4.0]);
        let fives = Tensor::full(&[2, 3, 4, 4], 5.0);
        assert!(global_mean(&fives)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 5.0));
    }

    #[test]
    fn concat_then_slice_roundtrip() {
        let a = Tensor::from_fn(&[2, 1, 2, 2], |i| i as f32);
        let b = Tensor::from_fn(&[2, 2, 2, 2], |i| 100.0 + i as f32);
        let c = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[2, 3, 2, 2]);
        assert_eq!(slice_channels(&c, 0, 1).unwrap(), a);
        assert_eq!(slice_channels(&c, 1, 2).unwrap(), b);
    }

    #[test]
    fn linear_matches_manual_product() {
        let x = t(&[2, 3], &[1.0, 2.0, 3.0, -1.0, 0.0, 1.0]);
        let w = t(&[2, 3], &[1.0, 0.0, 1.0, 0.5, 0.5, 0.5]);
        let b = t(&[2], &[0.25, -1.0]);
        let y = linear(&x, &w, &b).unwrap();
        assert_eq!(y.data(), &[4.25, 2.0, 0.25, -1.0]);
    }
}
