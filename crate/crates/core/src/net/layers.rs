//! Batched layer kernels on channel-major activations `[C][n * 64]`.

use std::sync::OnceLock;

use super::params::{ConvBn, Dense};
use super::Scalar;

pub(crate) const BN_EPS: f64 = 1e-5;
pub(crate) const BN_MOMENTUM: f64 = 0.99;

/// For each square and each of the nine 3x3 kernel taps, the source square or
/// `u8::MAX` when the tap falls off the board. Tap `k = (dr + 1) * 3 + (dc + 1)`.
fn neighbours() -> &'static [[u8; 9]; 64] {
    static TABLE: OnceLock<[[u8; 9]; 64]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [[u8::MAX; 9]; 64];
        for (sq, taps) in t.iter_mut().enumerate() {
            let (r, c) = ((sq / 8) as i32, (sq % 8) as i32);
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (rr, cc) = (r + dr, c + dc);
                    if (0..8).contains(&rr) && (0..8).contains(&cc) {
                        taps[((dr + 1) * 3 + (dc + 1)) as usize] = (rr * 8 + cc) as u8;
                    }
                }
            }
        }
        t
    })
}

/// `[C][cols]` -> `[C * 9][cols]`, zero padded.
fn im2col<T: Scalar>(x: &[T], channels: usize, cols: usize) -> Vec<T> {
    let nb = neighbours();
    let samples = cols / 64;
    let mut out = vec![T::zero(); channels * 9 * cols];
    for c in 0..channels {
        let src = &x[c * cols..(c + 1) * cols];
        for k in 0..9 {
            let dst = &mut out[(c * 9 + k) * cols..(c * 9 + k + 1) * cols];
            for n in 0..samples {
                let base = n * 64;
                for sq in 0..64 {
                    let from = nb[sq][k];
                    if from != u8::MAX {
                        dst[base + sq] = src[base + from as usize];
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: scatter-adds column gradients back onto the input.
fn col2im<T: Scalar>(dcols: &[T], channels: usize, cols: usize) -> Vec<T> {
    let nb = neighbours();
    let samples = cols / 64;
    let mut dx = vec![T::zero(); channels * cols];
    for c in 0..channels {
        let dst = &mut dx[c * cols..(c + 1) * cols];
        for k in 0..9 {
            let src = &dcols[(c * 9 + k) * cols..(c * 9 + k + 1) * cols];
            for n in 0..samples {
                let base = n * 64;
                for sq in 0..64 {
                    let from = nb[sq][k];
                    if from != u8::MAX {
                        dst[base + from as usize] = dst[base + from as usize] + src[base + sq];
                    }
                }
            }
        }
    }
    dx
}

/// Everything a conv-BN layer needs to backpropagate.
pub(crate) struct ConvBnCache<T> {
    /// im2col buffer (3x3) or the raw input (1x1).
    cols: Vec<T>,
    xhat: Vec<T>,
    inv_std: Vec<T>,
    pub(crate) batch_mean: Vec<T>,
    pub(crate) batch_var: Vec<T>,
}

fn conv<T: Scalar>(layer: &ConvBn<T>, x: &[T], cols: usize) -> (Vec<T>, Vec<T>) {
    let taps = layer.kernel * layer.kernel;
    let colbuf = if layer.kernel == 3 { im2col(x, layer.in_ch, cols) } else { x.to_vec() };
    let mut y = vec![T::zero(); layer.out_ch * cols];
    T::gemm(false, false, layer.out_ch, cols, layer.in_ch * taps, T::one(), &layer.weight, &colbuf, T::zero(), &mut y);
    (y, colbuf)
}

/// Convolution then batch norm with running statistics (inference).
pub(crate) fn conv_bn_infer<T: Scalar>(layer: &ConvBn<T>, x: &[T], cols: usize) -> Vec<T> {
    let (mut y, _) = conv(layer, x, cols);
    let eps = T::lit(BN_EPS);
    for c in 0..layer.out_ch {
        let scale = layer.gamma[c] / (layer.running_var[c] + eps).sqrt();
        let shift = layer.beta[c] - layer.running_mean[c] * scale;
        for v in &mut y[c * cols..(c + 1) * cols] {
            *v = *v * scale + shift;
        }
    }
    y
}

/// Convolution then batch norm with batch statistics (training).
pub(crate) fn conv_bn_train<T: Scalar>(layer: &ConvBn<T>, x: &[T], cols: usize) -> (Vec<T>, ConvBnCache<T>) {
    let (mut y, colbuf) = conv(layer, x, cols);
    let m = T::from_usize(cols).expect("count");
    let eps = T::lit(BN_EPS);
    let mut xhat = vec![T::zero(); y.len()];
    let mut inv_std = vec![T::zero(); layer.out_ch];
    let mut batch_mean = vec![T::zero(); layer.out_ch];
    let mut batch_var = vec![T::zero(); layer.out_ch];
    for c in 0..layer.out_ch {
        let row = &mut y[c * cols..(c + 1) * cols];
        let mean = row.iter().copied().sum::<T>() / m;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / m;
        let is = T::one() / (var + eps).sqrt();
        let xh = &mut xhat[c * cols..(c + 1) * cols];
        for (h, v) in xh.iter_mut().zip(row.iter_mut()) {
            *h = (*v - mean) * is;
            *v = layer.gamma[c] * *h + layer.beta[c];
        }
        inv_std[c] = is;
        batch_mean[c] = mean;
        batch_var[c] = var;
    }
    (y, ConvBnCache { cols: colbuf, xhat, inv_std, batch_mean, batch_var })
}

/// Backward through batch norm and the convolution. Accumulates into `grad`
/// and returns the gradient with respect to the layer input.
pub(crate) fn conv_bn_backward<T: Scalar>(
    layer: &ConvBn<T>,
    cache: &ConvBnCache<T>,
    dy: &[T],
    cols: usize,
    grad: &mut ConvBn<T>,
) -> Vec<T> {
    let m = T::from_usize(cols).expect("count");
    let mut dz = vec![T::zero(); dy.len()];
    for c in 0..layer.out_ch {
        let range = c * cols..(c + 1) * cols;
        let (dyr, xh) = (&dy[range.clone()], &cache.xhat[range.clone()]);
        let sum_dy: T = dyr.iter().copied().sum();
        let sum_dy_xh: T = dyr.iter().zip(xh).map(|(&a, &b)| a * b).sum();
        grad.gamma[c] = grad.gamma[c] + sum_dy_xh;
        grad.beta[c] = grad.beta[c] + sum_dy;
        let g = layer.gamma[c];
        let k = g * cache.inv_std[c] / m;
        for ((d, &a), &h) in dz[range].iter_mut().zip(dyr).zip(xh) {
            *d = k * (m * a - sum_dy - h * sum_dy_xh);
        }
    }
    let taps = layer.kernel * layer.kernel;
    let kdim = layer.in_ch * taps;
    T::gemm(false, true, layer.out_ch, kdim, cols, T::one(), &dz, &cache.cols, T::one(), &mut grad.weight);
    let mut dcols = vec![T::zero(); kdim * cols];
    T::gemm(true, false, kdim, cols, layer.out_ch, T::one(), &layer.weight, &dz, T::zero(), &mut dcols);
    if layer.kernel == 3 {
        col2im(&dcols, layer.in_ch, cols)
    } else {
        dcols
    }
}

/// Blends batch statistics into the running averages.
pub(crate) fn update_running<T: Scalar>(layer: &mut ConvBn<T>, mean: &[T], var: &[T]) {
    let mo = T::lit(BN_MOMENTUM);
    let rest = T::one() - mo;
    for c in 0..layer.out_ch {
        layer.running_mean[c] = mo * layer.running_mean[c] + rest * mean[c];
        layer.running_var[c] = mo * layer.running_var[c] + rest * var[c];
    }
}

pub(crate) fn relu_inplace<T: Scalar>(x: &mut [T]) {
    for v in x {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zeroes `dy` wherever the forward output was clipped.
pub(crate) fn relu_backward<T: Scalar>(out: &[T], dy: &mut [T]) {
    for (d, &o) in dy.iter_mut().zip(out) {
        if o <= T::zero() {
            *d = T::zero();
        }
    }
}

/// `[C][n * 64]` -> `[n][C * 64]`, the per-sample feature vector for a dense layer.
pub(crate) fn to_sample_major<T: Scalar>(x: &[T], channels: usize, samples: usize) -> Vec<T> {
    let cols = samples * 64;
    let mut out = vec![T::zero(); x.len()];
    for c in 0..channels {
        for n in 0..samples {
            out[n * channels * 64 + c * 64..n * channels * 64 + (c + 1) * 64]
                .copy_from_slice(&x[c * cols + n * 64..c * cols + (n + 1) * 64]);
        }
    }
    out
}

pub(crate) fn to_channel_major<T: Scalar>(x: &[T], channels: usize, samples: usize) -> Vec<T> {
    let cols = samples * 64;
    let mut out = vec![T::zero(); x.len()];
    for n in 0..samples {
        for c in 0..channels {
            out[c * cols + n * 64..c * cols + (n + 1) * 64]
                .copy_from_slice(&x[n * channels * 64 + c * 64..n * channels * 64 + (c + 1) * 64]);
        }
    }
    out
}

/// `y[n][out] = x[n][in] . W^T + b`
pub(crate) fn dense_forward<T: Scalar>(layer: &Dense<T>, x: &[T], samples: usize) -> Vec<T> {
    let mut y: Vec<T> = (0..samples).flat_map(|_| layer.bias.iter().copied()).collect();
    T::gemm(false, true, samples, layer.outputs, layer.inputs, T::one(), x, &layer.weight, T::one(), &mut y);
    y
}

pub(crate) fn dense_backward<T: Scalar>(layer: &Dense<T>, x: &[T], dy: &[T], samples: usize, grad: &mut Dense<T>) -> Vec<T> {
    T::gemm(true, false, layer.outputs, layer.inputs, samples, T::one(), dy, x, T::one(), &mut grad.weight);
    for n in 0..samples {
        for o in 0..layer.outputs {
            grad.bias[o] = grad.bias[o] + dy[n * layer.outputs + o];
        }
    }
    let mut dx = vec![T::zero(); samples * layer.inputs];
    T::gemm(false, false, samples, layer.inputs, layer.outputs, T::one(), dy, &layer.weight, T::zero(), &mut dx);
    dx
}
