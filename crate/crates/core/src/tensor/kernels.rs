//! Slice-level numeric kernels shared by the tape ops and the plain helpers.
//!
//! Every reduction accumulates in ascending index order, so results are
//! bit-identical from run to run and independent of how many rows a call
//! processes at once.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// `c[m×n] = a[m×k] · b[k×n]`.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    matmul_into(&mut c, a, b, m, k, n);
    c
}

/// Accumulates `a · b` into `c`. Each `c[i,j]` receives its `k` products in
/// ascending `k` order through fused multiply-add, so any tiling and any of
/// the runtime-selected SIMD paths gives the same bits as the naive loop.
pub fn matmul_into(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if n == 0 || k == 0 {
        return;
    }
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx512f") && std::arch::is_x86_feature_detected!("fma") {
            // SAFETY: the features were detected at runtime.
            unsafe { matmul_avx512(c, a, b, m, k, n) };
            return;
        }
        if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
            // SAFETY: the features were detected at runtime.
            unsafe { matmul_avx2(c, a, b, m, k, n) };
            return;
        }
    }
    matmul_tiled::<4, 4>(c, a, b, m, k, n);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f,fma")]
unsafe fn matmul_avx512(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    use std::arch::x86_64::*;
    const MR: usize = 8;
    const NR: usize = 16;
    let full_rows = m / MR * MR;
    let full_cols = n / NR * NR;
    let (ap, bp, cp) = (a.as_ptr(), b.as_ptr(), c.as_mut_ptr());
    for i0 in (0..full_rows).step_by(MR) {
        for j0 in (0..full_cols).step_by(NR) {
            // SAFETY: i0 + MR <= m, j0 + NR <= n and kk < k keep every
            // pointer inside its slice.
            unsafe {
                let mut lo = [_mm512_setzero_pd(); MR];
                let mut hi = [_mm512_setzero_pd(); MR];
                for r in 0..MR {
                    lo[r] = _mm512_loadu_pd(cp.add((i0 + r) * n + j0));
                    hi[r] = _mm512_loadu_pd(cp.add((i0 + r) * n + j0 + 8));
                }
                for kk in 0..k {
                    let b0 = _mm512_loadu_pd(bp.add(kk * n + j0));
                    let b1 = _mm512_loadu_pd(bp.add(kk * n + j0 + 8));
                    for r in 0..MR {
                        let x = _mm512_set1_pd(*ap.add((i0 + r) * k + kk));
                        lo[r] = _mm512_fmadd_pd(x, b0, lo[r]);
                        hi[r] = _mm512_fmadd_pd(x, b1, hi[r]);
                    }
                }
                for r in 0..MR {
                    _mm512_storeu_pd(cp.add((i0 + r) * n + j0), lo[r]);
                    _mm512_storeu_pd(cp.add((i0 + r) * n + j0 + 8), hi[r]);
                }
            }
        }
        if full_cols < n {
            for r in i0..i0 + MR {
                edge_kernel(c, a, b, r, k, n, full_cols, 0, k);
            }
        }
    }
    for r in full_rows..m {
        edge_kernel(c, a, b, r, k, n, 0, 0, k);
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn matmul_avx2(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    matmul_tiled::<4, 8>(c, a, b, m, k, n)
}

#[inline(always)]
fn matmul_tiled<const MR: usize, const NR: usize>(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    const KC: usize = 256;
    let full_rows = m / MR * MR;
    let full_cols = n / NR * NR;
    for k0 in (0..k).step_by(KC) {
        let k1 = (k0 + KC).min(k);
        for i0 in (0..full_rows).step_by(MR) {
            for j0 in (0..full_cols).step_by(NR) {
                let mut acc = [[0.0f64; NR]; MR];
                for (r, row) in acc.iter_mut().enumerate() {
                    row.copy_from_slice(&c[(i0 + r) * n + j0..][..NR]);
                }
                for kk in k0..k1 {
                    let brow: &[f64; NR] = b[kk * n + j0..][..NR].try_into().unwrap();
                    for (r, row) in acc.iter_mut().enumerate() {
                        let x = a[(i0 + r) * k + kk];
                        for t in 0..NR {
                            row[t] = x.mul_add(brow[t], row[t]);
                        }
                    }
                }
                for (r, row) in acc.iter().enumerate() {
                    c[(i0 + r) * n + j0..][..NR].copy_from_slice(row);
                }
            }
            if full_cols < n {
                for r in i0..i0 + MR {
                    edge_kernel(c, a, b, r, k, n, full_cols, k0, k1);
                }
            }
        }
        for r in full_rows..m {
            edge_kernel(c, a, b, r, k, n, 0, k0, k1);
        }
    }
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn edge_kernel(c: &mut [f64], a: &[f64], b: &[f64], row: usize, k: usize, n: usize, j0: usize, k0: usize, k1: usize) {
    let crow = &mut c[row * n + j0..(row + 1) * n];
    for kk in k0..k1 {
        let x = a[row * k + kk];
        for (cj, &bj) in crow.iter_mut().zip(&b[kk * n + j0..(kk + 1) * n]) {
            *cj = x.mul_add(bj, *cj);
        }
    }
}

/// Row-major transpose of an `rows × cols` matrix.
pub fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = a[i * cols + j];
        }
    }
    t
}

/// `aᵀ · b` for `a[m×k]`, `b[m×n]`, giving `[k×n]`.
pub fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let at = transpose(a, m, k);
    matmul(&at, b, k, m, n)
}

/// `a · bᵀ` for `a[m×n]`, `b[k×n]`, giving `[m×k]`.
pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let bt = transpose(b, k, n);
    matmul(a, &bt, m, n, k)
}

/// Softmax over the middle axis of an `[outer × len × inner]` layout.
pub fn softmax_axis(x: &[f64], outer: usize, len: usize, inner: usize) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |t: usize| o * len * inner + t * inner + i;
            let mut max = f64::NEG_INFINITY;
            for t in 0..len {
                max = max.max(x[at(t)]);
            }
            let mut sum = 0.0;
            for t in 0..len {
                let e = (x[at(t)] - max).exp();
                y[at(t)] = e;
                sum += e;
            }
            for t in 0..len {
                y[at(t)] /= sum;
            }
        }
    }
    y
}

/// In-place softmax of one contiguous row.
pub fn softmax_row(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// `ln Σ exp(x)` with max subtraction.
pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for &v in row {
        sum += (v - max).exp();
    }
    max + sum.ln()
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Exact GELU, `x·Φ(x)`.
pub fn gelu(x: f64) -> f64 {
    x * normal_cdf(x)
}

/// `d/dx [x·Φ(x)] = Φ(x) + x·φ(x)`.
pub fn gelu_grad(x: f64) -> f64 {
    normal_cdf(x) + x * normal_pdf(x)
}

/// `ln(1 + eˣ)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
