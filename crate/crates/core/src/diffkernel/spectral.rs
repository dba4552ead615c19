//! Real DFT kernels. Spectra are stored planar: each row holds the real parts
//! of all bins followed by the imaginary parts.

use std::f64::consts::PI;

use realfft::num_complex::Complex;
use realfft::RealFftPlanner;

use super::Real;

pub fn n_bins(len: usize) -> usize {
    len / 2 + 1
}

/// Hermitian multiplicity of bin `k` in a length-`len` real signal.
fn multiplicity(k: usize, len: usize) -> f64 {
    if k == 0 || 2 * k == len {
        1.0
    } else {
        2.0
    }
}

fn angle(k: usize, l: usize, len: usize) -> f64 {
    2.0 * PI * ((k * l) % len) as f64 / len as f64
}

/// Forward real DFT of every length-`len` row. No normalization.
pub(crate) fn rdft_rows<T: Real>(x: &[T], len: usize) -> Vec<T> {
    let bins = n_bins(len);
    let rows = x.len() / len;
    let fft = RealFftPlanner::<T>::new().plan_fft_forward(len);
    let mut input = fft.make_input_vec();
    let mut spec = fft.make_output_vec();
    let mut out = vec![T::zero(); rows * 2 * bins];
    for r in 0..rows {
        input.copy_from_slice(&x[r * len..(r + 1) * len]);
        fft.process(&mut input, &mut spec)
            .expect("buffer lengths come from the plan");
        let dst = &mut out[r * 2 * bins..(r + 1) * 2 * bins];
        for (k, c) in spec.iter().enumerate() {
            dst[k] = c.re;
            dst[bins + k] = c.im;
        }
    }
    out
}

/// `out_l = sum_k weight_k * (Re X_k cos - Im X_k sin)` over the stored bins,
/// imaginary parts of the self-conjugate bins ignored.
fn hermitian_synthesis<T: Real>(spec: &[T], len: usize, weight: impl Fn(usize) -> f64) -> Vec<T> {
    let bins = n_bins(len);
    let rows = spec.len() / (2 * bins);
    let fft = RealFftPlanner::<T>::new().plan_fft_inverse(len);
    let mut input = fft.make_input_vec();
    let mut output = fft.make_output_vec();
    let mut out = vec![T::zero(); rows * len];
    for r in 0..rows {
        let src = &spec[r * 2 * bins..(r + 1) * 2 * bins];
        for (k, c) in input.iter_mut().enumerate() {
            let w = T::of(weight(k));
            *c = Complex::new(src[k] * w, src[bins + k] * w);
        }
        input[0].im = T::zero();
        if len.is_multiple_of(2) {
            input[bins - 1].im = T::zero();
        }
        fft.process(&mut input, &mut output)
            .expect("self-conjugate bins were zeroed");
        out[r * len..(r + 1) * len].copy_from_slice(&output);
    }
    out
}

/// Inverse real DFT with `1/len` normalization.
pub(crate) fn irdft_rows<T: Real>(spec: &[T], len: usize) -> Vec<T> {
    let inv = 1.0 / len as f64;
    hermitian_synthesis(spec, len, |_| inv)
}

/// Adjoint of [`rdft_rows`].
pub(crate) fn rdft_adjoint_rows<T: Real>(grad: &[T], len: usize) -> Vec<T> {
    hermitian_synthesis(grad, len, |k| 1.0 / multiplicity(k, len))
}

/// Adjoint of [`irdft_rows`].
pub(crate) fn irdft_adjoint_rows<T: Real>(grad: &[T], len: usize) -> Vec<T> {
    let bins = n_bins(len);
    let mut spec = rdft_rows(grad, len);
    for row in spec.chunks_mut(2 * bins) {
        for k in 0..bins {
            let w = T::of(multiplicity(k, len) / len as f64);
            row[k] *= w;
            row[bins + k] *= w;
        }
        row[bins] = T::zero();
        if len.is_multiple_of(2) {
            row[2 * bins - 1] = T::zero();
        }
    }
    spec
}

/// Dense tables for the DFT restricted to the lowest `modes` bins.
///
/// `forward` is `[len, 2*modes]`, `inverse` is `[2*modes, len]`; the inverse
/// zero-fills every bin at or above `modes` and normalizes by `1/len`.
#[derive(Debug)]
pub(crate) struct Twiddles<T> {
    pub len: usize,
    pub modes: usize,
    pub forward: Vec<T>,
    pub inverse: Vec<T>,
}

impl<T: Real> Twiddles<T> {
    pub fn new(len: usize, modes: usize) -> Self {
        let w = 2 * modes;
        let mut forward = vec![T::zero(); len * w];
        let mut inverse = vec![T::zero(); w * len];
        for l in 0..len {
            for k in 0..modes {
                let (s, c) = angle(k, l, len).sin_cos();
                forward[l * w + k] = T::of(c);
                forward[l * w + modes + k] = T::of(-s);
                let m = multiplicity(k, len) / len as f64;
                inverse[k * len + l] = T::of(m * c);
                inverse[(modes + k) * len + l] = T::of(-m * s);
            }
        }
        Self {
            len,
            modes,
            forward,
            inverse,
        }
    }
}

/// Per-bin complex channel mixing `y[o, n] = sum_i w[o, i] * x[i, n]`.
///
/// `x` is `[c_in, batch, 2, modes]`, `w` is `[c_out, c_in, 2, modes]`.
pub(crate) fn mix_forward<T: Real>(x: &[T], w: &[T], c_in: usize, c_out: usize, batch: usize, modes: usize) -> Vec<T> {
    let blk = 2 * modes;
    let mut y = vec![T::zero(); c_out * batch * blk];
    for o in 0..c_out {
        for i in 0..c_in {
            let wr = &w[(o * c_in + i) * blk..(o * c_in + i) * blk + modes];
            let wi = &w[(o * c_in + i) * blk + modes..(o * c_in + i + 1) * blk];
            for n in 0..batch {
                let xs = &x[(i * batch + n) * blk..(i * batch + n + 1) * blk];
                let (xr, xi) = xs.split_at(modes);
                let ys = &mut y[(o * batch + n) * blk..(o * batch + n + 1) * blk];
                let (yr, yi) = ys.split_at_mut(modes);
                for k in 0..modes {
                    yr[k] += wr[k] * xr[k] - wi[k] * xi[k];
                    yi[k] += wr[k] * xi[k] + wi[k] * xr[k];
                }
            }
        }
    }
    y
}

/// Gradients of [`mix_forward`] with respect to `x` and `w`.
pub(crate) fn mix_backward<T: Real>(
    gy: &[T],
    x: &[T],
    w: &[T],
    c_in: usize,
    c_out: usize,
    batch: usize,
    modes: usize,
    want_x: bool,
    want_w: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let blk = 2 * modes;
    let mut gx = want_x.then(|| vec![T::zero(); x.len()]);
    let mut gw = want_w.then(|| vec![T::zero(); w.len()]);
    for o in 0..c_out {
        for i in 0..c_in {
            let wo = (o * c_in + i) * blk;
            for n in 0..batch {
                let xo = (i * batch + n) * blk;
                let go = (o * batch + n) * blk;
                let (gr, gi) = gy[go..go + blk].split_at(modes);
                if let Some(gx) = gx.as_mut() {
                    let (wr, wi) = w[wo..wo + blk].split_at(modes);
                    let (dr, di) = gx[xo..xo + blk].split_at_mut(modes);
                    for k in 0..modes {
                        dr[k] += wr[k] * gr[k] + wi[k] * gi[k];
                        di[k] += wr[k] * gi[k] - wi[k] * gr[k];
                    }
                }
                if let Some(gw) = gw.as_mut() {
                    let (xr, xi) = x[xo..xo + blk].split_at(modes);
                    let (dr, di) = gw[wo..wo + blk].split_at_mut(modes);
                    for k in 0..modes {
                        dr[k] += gr[k] * xr[k] + gi[k] * xi[k];
                        di[k] += gi[k] * xr[k] - gr[k] * xi[k];
                    }
                }
            }
        }
    }
    (gx, gw)
}
