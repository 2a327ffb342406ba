//! Planar (`CHW`) tensor kernels with hand-written backward passes.
//!
//! Forward kernels run in the network scalar `T`; parameter gradients are
//! accumulated in `f64` so the result does not depend on weight precision.

use num_traits::Float;

/// Network scalar: `f32` for training, `f64` for gradient verification.
pub trait Scalar: Float + Default + std::fmt::Debug + Send + Sync + 'static {
    fn of(v: f64) -> Self;
    fn wide(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn wide(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn wide(self) -> f64 {
        self
    }
}

/// Convolution geometry: square kernel, symmetric zero padding of `k / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvShape {
    pub fn pad(&self) -> usize {
        self.kernel / 2
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        let p = self.pad();
        (
            (h + 2 * p - self.kernel) / self.stride + 1,
            (w + 2 * p - self.kernel) / self.stride + 1,
        )
    }

    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.kernel * self.kernel
    }
}

/// Range of output positions whose tap `k_off` lands inside `0..n`.
#[inline]
fn valid_range(out: usize, n: usize, k_off: usize, pad: usize, stride: usize) -> (usize, usize) {
    // input index = o*stride + k_off - pad must be in [0, n)
    let lo = if k_off >= pad { 0 } else { (pad - k_off).div_ceil(stride) };
    let hi = if n + pad > k_off {
        ((n + pad - k_off - 1) / stride + 1).min(out)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// Unfolds the input into rows `(ci, ky, kx)` of length `oh * ow`.
fn im2col<T: Scalar>(input: &[T], h: usize, w: usize, shape: &ConvShape, oh: usize, ow: usize) -> Vec<T> {
    let (k, s, p) = (shape.kernel, shape.stride, shape.pad());
    let mut cols = vec![T::zero(); shape.cin * k * k * oh * ow];
    let mut rows = cols.chunks_exact_mut(oh * ow);
    for ci in 0..shape.cin {
        let src = &input[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            let (y_lo, y_hi) = valid_range(oh, h, ky, p, s);
            for kx in 0..k {
                let (x_lo, x_hi) = valid_range(ow, w, kx, p, s);
                let row = rows.next().unwrap();
                for oy in y_lo..y_hi {
                    let line = &src[(oy * s + ky - p) * w..];
                    let dst = &mut row[oy * ow..(oy + 1) * ow];
                    for ox in x_lo..x_hi {
                        dst[ox] = line[ox * s + kx - p];
                    }
                }
            }
        }
    }
    cols
}

/// Inverse scatter of [`im2col`]: adds each column entry back to its pixel.
fn col2im<T: Scalar>(cols: &[T], h: usize, w: usize, shape: &ConvShape, oh: usize, ow: usize) -> Vec<T> {
    let (k, s, p) = (shape.kernel, shape.stride, shape.pad());
    let mut out = vec![T::zero(); shape.cin * h * w];
    let mut rows = cols.chunks_exact(oh * ow);
    for ci in 0..shape.cin {
        let dst = &mut out[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            let (y_lo, y_hi) = valid_range(oh, h, ky, p, s);
            for kx in 0..k {
                let (x_lo, x_hi) = valid_range(ow, w, kx, p, s);
                let row = rows.next().unwrap();
                for oy in y_lo..y_hi {
                    let base = (oy * s + ky - p) * w;
                    let src = &row[oy * ow..(oy + 1) * ow];
                    for ox in x_lo..x_hi {
                        let i = base + ox * s + kx - p;
                        dst[i] = dst[i] + src[ox];
                    }
                }
            }
        }
    }
    out
}

#[inline]
fn axpy<T: Scalar>(y: &mut [T], a: T, x: &[T]) {
    for (y, &x) in y.iter_mut().zip(x) {
        *y = *y + a * x;
    }
}

/// Dot product with a fixed eight-lane reduction order.
#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut lanes = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            lanes[i] = lanes[i] + x[i] * y[i];
        }
    }
    let mut acc = lanes.iter().fold(T::zero(), |s, &v| s + v);
    for (&x, &y) in ra.iter().zip(rb) {
        acc = acc + x * y;
    }
    acc
}

fn is_pointwise(shape: &ConvShape) -> bool {
    shape.kernel == 1 && shape.stride == 1
}

pub fn conv2d<T: Scalar>(
    input: &[T],
    h: usize,
    w: usize,
    shape: &ConvShape,
    weight: &[T],
    bias: &[T],
) -> (Vec<T>, usize, usize) {
    let (oh, ow) = shape.out_dims(h, w);
    let n = oh * ow;
    let owned;
    let cols: &[T] = if is_pointwise(shape) {
        input
    } else {
        owned = im2col(input, h, w, shape, oh, ow);
        &owned
    };
    let r = shape.cin * shape.kernel * shape.kernel;
    let mut out = vec![T::zero(); shape.cout * n];
    for (co, plane) in out.chunks_exact_mut(n).enumerate() {
        plane.iter_mut().for_each(|v| *v = bias[co]);
        for (j, col) in cols.chunks_exact(n).enumerate() {
            axpy(plane, weight[co * r + j], col);
        }
    }
    (out, oh, ow)
}

/// Backward of [`conv2d`]. Adds parameter gradients into `gw`/`gb` and
/// returns the input gradient when `need_input` is set.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Scalar>(
    input: &[T],
    h: usize,
    w: usize,
    shape: &ConvShape,
    weight: &[T],
    grad_out: &[T],
    gw: &mut [f64],
    gb: &mut [f64],
    need_input: bool,
) -> Option<Vec<T>> {
    let (oh, ow) = shape.out_dims(h, w);
    let n = oh * ow;
    let owned;
    let cols: &[T] = if is_pointwise(shape) {
        input
    } else {
        owned = im2col(input, h, w, shape, oh, ow);
        &owned
    };
    let r = shape.cin * shape.kernel * shape.kernel;
    for (co, go) in grad_out.chunks_exact(n).enumerate() {
        gb[co] += go.iter().map(|v| v.wide()).sum::<f64>();
        for (j, col) in cols.chunks_exact(n).enumerate() {
            gw[co * r + j] += dot(go, col).wide();
        }
    }
    if !need_input {
        return None;
    }
    let mut gcols = vec![T::zero(); r * n];
    for (j, gcol) in gcols.chunks_exact_mut(n).enumerate() {
        for (co, go) in grad_out.chunks_exact(n).enumerate() {
            axpy(gcol, weight[co * r + j], go);
        }
    }
    Some(if is_pointwise(shape) {
        gcols
    } else {
        col2im(&gcols, h, w, shape, oh, ow)
    })
}

/// SiLU, `x·σ(x)`: smooth, so finite-difference checks see no kinks.
pub fn silu<T: Scalar>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| v * sigmoid_scalar(v)).collect()
}

pub fn silu_backward<T: Scalar>(pre: &[T], grad: &[T]) -> Vec<T> {
    pre.iter()
        .zip(grad)
        .map(|(&x, &g)| {
            let s = sigmoid_scalar(x);
            g * s * (T::one() + x * (T::one() - s))
        })
        .collect()
}

#[inline]
pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// 1-D bilinear taps for resizing `n_in` samples to `n_out`, half-pixel
/// centres, edges clamped.
fn taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub fn resize_bilinear<T: Scalar>(input: &[T], c: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<T> {
    let ty = taps(h, oh);
    let tx = taps(w, ow);
    let mut out = vec![T::zero(); c * oh * ow];
    for ch in 0..c {
        let src = &input[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let fy = T::of(fy);
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let fx = T::of(fx);
                let top = src[y0 * w + x0] + (src[y0 * w + x1] - src[y0 * w + x0]) * fx;
                let bot = src[y1 * w + x0] + (src[y1 * w + x1] - src[y1 * w + x0]) * fx;
                dst[oy * ow + ox] = top + (bot - top) * fy;
            }
        }
    }
    out
}

pub fn resize_bilinear_backward<T: Scalar>(grad: &[T], c: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<T> {
    let ty = taps(h, oh);
    let tx = taps(w, ow);
    let mut out = vec![T::zero(); c * h * w];
    for ch in 0..c {
        let g = &grad[ch * oh * ow..(ch + 1) * oh * ow];
        let dst = &mut out[ch * h * w..(ch + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let fy = T::of(fy);
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let fx = T::of(fx);
                let v = g[oy * ow + ox];
                let top = v * (T::one() - fy);
                let bot = v * fy;
                dst[y0 * w + x0] = dst[y0 * w + x0] + top * (T::one() - fx);
                dst[y0 * w + x1] = dst[y0 * w + x1] + top * fx;
                dst[y1 * w + x0] = dst[y1 * w + x0] + bot * (T::one() - fx);
                dst[y1 * w + x1] = dst[y1 * w + x1] + bot * fx;
            }
        }
    }
    out
}

/// Mean over non-overlapping `block × block` cells; `h`, `w` must be
/// multiples of `block`.
pub fn avg_pool<T: Scalar>(input: &[T], c: usize, h: usize, w: usize, block: usize) -> Vec<T> {
    let (oh, ow) = (h / block, w / block);
    let norm = T::of(1.0 / (block * block) as f64);
    let mut out = vec![T::zero(); c * oh * ow];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let o = ch * oh * ow + (y / block) * ow + x / block;
                out[o] = out[o] + input[ch * h * w + y * w + x] * norm;
            }
        }
    }
    out
}

pub fn avg_pool_backward<T: Scalar>(grad: &[T], c: usize, h: usize, w: usize, block: usize) -> Vec<T> {
    let (oh, ow) = (h / block, w / block);
    let norm = T::of(1.0 / (block * block) as f64);
    let mut out = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                out[ch * h * w + y * w + x] = grad[ch * oh * ow + (y / block) * ow + x / block] * norm;
            }
        }
    }
    out
}
