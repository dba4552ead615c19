//! Strided matrix products and the im2col/col2im pair used by the convolutions.

use super::Real;

#[derive(Clone, Copy)]
pub(crate) struct Mat<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a, T> Mat<'a, T> {
    pub fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    fn fits(&self) -> bool {
        self.rows == 0 || self.cols == 0 || { (self.rows - 1) * self.rs + (self.cols - 1) * self.cs < self.data.len() }
    }
}

/// `c = a * b + beta * c`, with `c` dense row-major `[a.rows, b.cols]`.
pub(crate) fn gemm<T: Real>(a: Mat<'_, T>, b: Mat<'_, T>, c: &mut [T], beta: T) {
    assert_eq!(a.cols, b.rows, "gemm inner extent");
    assert!(a.fits() && b.fits(), "gemm operand out of bounds");
    assert_eq!(c.len(), a.rows * b.cols, "gemm output extent");
    if a.rows == 0 || b.cols == 0 {
        return;
    }
    if a.cols == 0 {
        for v in c.iter_mut() {
            *v *= beta;
        }
        return;
    }
    // SAFETY: extents and strides were checked against the slice lengths above.
    unsafe {
        T::gemm_raw(
            a.rows,
            a.cols,
            b.cols,
            T::one(),
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            b.cols as isize,
            1,
        );
    }
}

pub(crate) fn matmul<T: Real>(a: Mat<'_, T>, b: Mat<'_, T>) -> Vec<T> {
    let mut c = vec![T::zero(); a.rows * b.cols];
    gemm(a, b, &mut c, T::zero());
    c
}

/// Geometry of a strided, zero-padded 1-D window sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Window {
    pub channels: usize,
    pub batch: usize,
    pub len: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_len: usize,
}

/// Unfolds `x[c, n, l]` into `cols[(c, k), (n, j)] = x[c, n, j*stride + k - pad]`.
pub(crate) fn im2col<T: Real>(x: &[T], w: Window) -> Vec<T> {
    let cols_w = w.batch * w.out_len;
    let mut cols = vec![T::zero(); w.channels * w.kernel * cols_w];
    for c in 0..w.channels {
        for k in 0..w.kernel {
            let row = &mut cols[(c * w.kernel + k) * cols_w..(c * w.kernel + k + 1) * cols_w];
            for n in 0..w.batch {
                let src = &x[(c * w.batch + n) * w.len..(c * w.batch + n + 1) * w.len];
                let dst = &mut row[n * w.out_len..(n + 1) * w.out_len];
                for (j, d) in dst.iter_mut().enumerate() {
                    let pos = (j * w.stride + k) as isize - w.pad as isize;
                    if pos >= 0 && (pos as usize) < w.len {
                        *d = src[pos as usize];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters columns back and accumulates into `out`.
pub(crate) fn col2im<T: Real>(cols: &[T], w: Window, out: &mut [T]) {
    let cols_w = w.batch * w.out_len;
    for c in 0..w.channels {
        for k in 0..w.kernel {
            let row = &cols[(c * w.kernel + k) * cols_w..(c * w.kernel + k + 1) * cols_w];
            for n in 0..w.batch {
                let dst = &mut out[(c * w.batch + n) * w.len..(c * w.batch + n + 1) * w.len];
                let src = &row[n * w.out_len..(n + 1) * w.out_len];
                for (j, &s) in src.iter().enumerate() {
                    let pos = (j * w.stride + k) as isize - w.pad as isize;
                    if pos >= 0 && (pos as usize) < w.len {
                        dst[pos as usize] += s;
                    }
                }
            }
        }
    }
}
