//! Dense kernels: row-major GEMM variants and im2col/col2im.
//!
//! `f64`/`f32` GEMMs go through `matrixmultiply`; other scalars use the plain
//! loops, which also serve as the reference in tests.

use std::any::TypeId;

use crate::scalar::Scalar;

/// `c = beta * c + a * b` with arbitrary element strides, `beta` 0 or 1;
/// `false` if `S` has no fast path.
#[allow(clippy::too_many_arguments)]
fn blas<S: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[S],
    (rsa, csa): (usize, usize),
    b: &[S],
    (rsb, csb): (usize, usize),
    accumulate: bool,
    c: &mut [S],
) -> bool {
    if m == 0 || k == 0 || n == 0 {
        if !accumulate {
            c.fill(S::zero());
        }
        return true;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    let (rsa, csa, rsb, csb) = (rsa as isize, csa as isize, rsb as isize, csb as isize);
    // SAFETY: the TypeId check makes the pointer casts identity casts, and the
    // callers' length assertions bound every strided access.
    unsafe {
        if TypeId::of::<S>() == TypeId::of::<f64>() {
            matrixmultiply::dgemm(
                m, k, n, 1.0,
                a.as_ptr().cast(), rsa, csa,
                b.as_ptr().cast(), rsb, csb,
                beta, c.as_mut_ptr().cast(), n as isize, 1,
            );
            true
        } else if TypeId::of::<S>() == TypeId::of::<f32>() {
            matrixmultiply::sgemm(
                m, k, n, 1.0,
                a.as_ptr().cast(), rsa, csa,
                b.as_ptr().cast(), rsb, csb,
                beta as f32, c.as_mut_ptr().cast(), n as isize, 1,
            );
            true
        } else {
            false
        }
    }
}

/// `c[m x n] += a[m x k] * b[k x n]`
pub(crate) fn gemm_nn<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], c: &mut [S]) {
    assert!(a.len() == m * k && b.len() == k * n && c.len() == m * n);
    if !blas(m, k, n, a, (k, 1), b, (n, 1), true, c) {
        gemm_nn_ref(m, k, n, a, b, c);
    }
}

pub(crate) fn gemm_nn_ref<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], c: &mut [S]) {
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == S::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, bv) in c_row.iter_mut().zip(b_row) {
                *cv = *cv + aip * *bv;
            }
        }
    }
}

/// `c[m x n] += a[m x k] * b[n x k]^T`
pub(crate) fn gemm_nt<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], c: &mut [S]) {
    assert!(a.len() == m * k && b.len() == n * k && c.len() == m * n);
    if !blas(m, k, n, a, (k, 1), b, (1, k), true, c) {
        gemm_nt_ref(m, k, n, a, b, c);
    }
}

pub(crate) fn gemm_nt_ref<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], c: &mut [S]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            c[i * n + j] = c[i * n + j] + dot(a_row, b_row);
        }
    }
}

/// `c[m x n] += a[k x m]^T * b[k x n]`
pub(crate) fn gemm_tn<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], c: &mut [S]) {
    assert!(a.len() == k * m && b.len() == k * n && c.len() == m * n);
    if !blas(m, k, n, a, (1, m), b, (n, 1), true, c) {
        gemm_tn_ref(m, k, n, a, b, c);
    }
}

/// `c[m x n] = a[k x m]^T * b[k x n]`; `c` need not be initialized.
pub(crate) fn gemm_tn_set<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], c: &mut [S]) {
    assert!(a.len() == k * m && b.len() == k * n && c.len() == m * n);
    if !blas(m, k, n, a, (1, m), b, (n, 1), false, c) {
        c.fill(S::zero());
        gemm_tn_ref(m, k, n, a, b, c);
    }
}

pub(crate) fn gemm_tn_ref<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], c: &mut [S]) {
    for p in 0..k {
        let b_row = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let api = a[p * m + i];
            if api == S::zero() {
                continue;
            }
            let c_row = &mut c[i * n..(i + 1) * n];
            for (cv, bv) in c_row.iter_mut().zip(b_row) {
                *cv = *cv + api * *bv;
            }
        }
    }
}

/// Dot product with four independent accumulators (fixed summation order).
fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    let mut acc = [S::zero(); 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for l in 0..4 {
            acc[l] = acc[l] + a[c * 4 + l] * b[c * 4 + l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s = s + a[i] * b[i];
    }
    s
}

/// Geometry of a 2-D convolution over one image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    /// Returns `None` if the kernel does not fit the padded input.
    pub fn new(channels: usize, h: usize, w: usize, kh: usize, kw: usize, stride: (usize, usize), pad: (usize, usize)) -> Option<Self> {
        let (sh, sw) = stride;
        let (ph, pw) = pad;
        if sh == 0 || sw == 0 || h + 2 * ph < kh || w + 2 * pw < kw {
            return None;
        }
        Some(Self { channels, h, w, kh, kw, sh, sw, ph, pw, ho: (h + 2 * ph - kh) / sh + 1, wo: (w + 2 * pw - kw) / sw + 1 })
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn col_cols(&self) -> usize {
        self.ho * self.wo
    }

    /// Output columns `[lo, hi)` whose tap `kx` lands inside the input row.
    #[inline]
    fn valid_cols(&self, kx: usize) -> (usize, usize) {
        let lo = if kx >= self.pw { 0 } else { (self.pw - kx).div_ceil(self.sw) };
        let hi = (self.w + self.pw).saturating_sub(kx).div_ceil(self.sw).min(self.wo);
        (lo.min(hi), hi)
    }

    /// Input row hit by output row `oy` at tap `ky`, if inside.
    #[inline]
    fn source_row(&self, oy: usize, ky: usize) -> Option<usize> {
        let y = (oy * self.sh + ky).checked_sub(self.ph)?;
        (y < self.h).then_some(y)
    }
}

/// Unfolds `img[channels][h][w]` into `cols[channels*kh*kw][ho*wo]`, appended
/// to `cols`.
pub(crate) fn im2col<S: Scalar>(g: &ConvGeom, img: &[S], cols: &mut Vec<S>) {
    let plane = g.h * g.w;
    cols.reserve(g.col_rows() * g.col_cols());
    for c in 0..g.channels {
        let src = &img[c * plane..(c + 1) * plane];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let (lo, hi) = g.valid_cols(kx);
                for oy in 0..g.ho {
                    let Some(y) = g.source_row(oy, ky) else {
                        cols.resize(cols.len() + g.wo, S::zero());
                        continue;
                    };
                    cols.resize(cols.len() + lo, S::zero());
                    let x0 = y * g.w + lo * g.sw + kx - g.pw;
                    if g.sw == 1 {
                        cols.extend_from_slice(&src[x0..x0 + hi - lo]);
                    } else {
                        cols.extend((0..hi - lo).map(|j| src[x0 + j * g.sw]));
                    }
                    cols.resize(cols.len() + g.wo - hi, S::zero());
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters `cols` back, accumulating into `img`.
pub(crate) fn col2im<S: Scalar>(g: &ConvGeom, cols: &[S], img: &mut [S]) {
    let p = g.col_cols();
    let plane = g.h * g.w;
    for c in 0..g.channels {
        let dst = &mut img[c * plane..(c + 1) * plane];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((c * g.kh + ky) * g.kw + kx) * p;
                let (lo, hi) = g.valid_cols(kx);
                for oy in 0..g.ho {
                    let Some(y) = g.source_row(oy, ky) else { continue };
                    let src = &cols[row + oy * g.wo + lo..row + oy * g.wo + hi];
                    let x0 = y * g.w + lo * g.sw + kx - g.pw;
                    if g.sw == 1 {
                        for (d, v) in dst[x0..x0 + hi - lo].iter_mut().zip(src) {
                            *d = *d + *v;
                        }
                    } else {
                        for (j, v) in src.iter().enumerate() {
                            let d = &mut dst[x0 + j * g.sw];
                            *d = *d + *v;
                        }
                    }
                }
            }
        }
    }
}
