//! Reproducing kernels, Gram matrices and the derivative bounds that drive
//! the Lipschitz constants of the regularized conditional expectation.
//!
//! Point sets are passed as flat slices in row-major order: a set of `m`
//! points in dimension `d` is a slice of length `m * d`.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{LsvError, Result};

/// A symmetric positive definite kernel with bounded derivatives up to
/// second order.
pub trait Kernel: Clone + Send + Sync + std::fmt::Debug {
    /// Dimension of the state space.
    fn dim(&self) -> usize;

    /// Kernel value; callers guarantee both slices have length `dim()`.
    fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64;

    /// Kernel values between `x` and each landmark, written to `out`.
    fn eval_row(&self, x: &[f64], landmarks: &[f64], out: &mut [f64]) {
        for (o, z) in out.iter_mut().zip(landmarks.chunks(self.dim())) {
            *o = self.eval_unchecked(z, x);
        }
    }

    /// `D_k^2`: the largest of the suprema of `|k|`, `|d_xi k|`, `|d_yj k|`,
    /// `|d_xi d_yj k|` and `|d_xi d_yj k^2|`.
    fn sup_bound_sq(&self) -> f64;
}

/// Gaussian kernel `k(x, y) = exp(-|x - y|^2 / (2 s^2))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    bandwidth_sq: f64,
    dim: usize,
    neg_half_inv: f64,
}

impl KernelSpec {
    pub fn new(bandwidth_sq: f64, dim: usize) -> Result<Self> {
        if !(bandwidth_sq.is_finite() && bandwidth_sq > 0.0) {
            return Err(LsvError::contract(format!(
                "kernel bandwidth_sq must be finite and > 0, got {bandwidth_sq}"
            )));
        }
        if dim == 0 {
            return Err(LsvError::contract("kernel dimension must be >= 1"));
        }
        Ok(Self {
            bandwidth_sq,
            dim,
            neg_half_inv: -0.5 / bandwidth_sq,
        })
    }

    /// One-dimensional Gaussian kernel with variance `s^2`.
    pub fn gaussian_1d(bandwidth_sq: f64) -> Result<Self> {
        Self::new(bandwidth_sq, 1)
    }

    pub fn bandwidth_sq(&self) -> f64 {
        self.bandwidth_sq
    }

    /// Fast path for scalar states.
    #[inline]
    pub fn eval_scalar(&self, x: f64, y: f64) -> f64 {
        let r = x - y;
        exp_nonpositive(self.neg_half_inv * r * r)
    }

    /// The five suprema entering `D_k^2`, in the order
    /// `|k|, |d_x k|, |d_y k|, |d_x d_y k|, |d_x d_y k^2|`.
    pub fn derivative_suprema(&self) -> [f64; 5] {
        let s2 = self.bandwidth_sq;
        let s = s2.sqrt();
        let first = (-0.5f64).exp() / s;
        [1.0, first, first, 1.0 / s2, 2.0 / s2]
    }
}

impl Kernel for KernelSpec {
    fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        let r2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        exp_nonpositive(self.neg_half_inv * r2)
    }

    fn eval_row(&self, x: &[f64], landmarks: &[f64], out: &mut [f64]) {
        if self.dim == 1 {
            gaussian_row(x[0], self.neg_half_inv, landmarks, out);
        } else {
            for (o, z) in out.iter_mut().zip(landmarks.chunks(self.dim)) {
                *o = self.eval_unchecked(z, x);
            }
        }
    }

    fn sup_bound_sq(&self) -> f64 {
        self.derivative_suprema()
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `exp(a)` for `a <= 0`, accurate to a couple of ulps and branch-free.
///
/// Range reduction `a = n ln2 + r`, `|r| <= ln2 / 2`, then a degree-12
/// Taylor polynomial; arguments below -708 flush to zero.
#[inline(always)]
pub fn exp_nonpositive(a: f64) -> f64 {
    const LN2_HI: f64 = 6.931_471_803_691_238_16e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    const SHIFT: f64 = 6_755_399_441_055_744.0; // 1.5 * 2^52
    let x = a.max(-708.0);
    let t = x * std::f64::consts::LOG2_E + SHIFT;
    let n = t - SHIFT;
    let r = (x - n * LN2_HI) - n * LN2_LO;
    let mut p = 1.0 / 479_001_600.0;
    p = p * r + 1.0 / 39_916_800.0;
    p = p * r + 1.0 / 3_628_800.0;
    p = p * r + 1.0 / 362_880.0;
    p = p * r + 1.0 / 40_320.0;
    p = p * r + 1.0 / 5_040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    // low bits of t hold n in two's complement
    let scale = f64::from_bits(t.to_bits().wrapping_add(1023) << 52);
    let v = p * scale;
    if a < -708.0 { 0.0 } else { v }
}

#[inline(always)]
fn gaussian_row_body(x: f64, c: f64, zs: &[f64], out: &mut [f64]) {
    for (o, z) in out.iter_mut().zip(zs) {
        let r = x - z;
        *o = exp_nonpositive(c * r * r);
    }
}

// Same operations (no fused multiply-add), so results are bit-identical to
// the baseline path; only the vector width changes.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn gaussian_row_avx2(x: f64, c: f64, zs: &[f64], out: &mut [f64]) {
    gaussian_row_body(x, c, zs, out)
}

/// `out[j] = exp(c (x - zs[j])^2)` for scalar points.
#[inline]
fn gaussian_row(x: f64, c: f64, zs: &[f64], out: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the required CPU feature was detected at runtime.
        unsafe { gaussian_row_avx2(x, c, zs, out) };
        return;
    }
    gaussian_row_body(x, c, zs, out)
}

fn check_points<K: Kernel>(kernel: &K, pts: &[f64], what: &str) -> Result<usize> {
    let d = kernel.dim();
    if pts.len() % d != 0 {
        return Err(LsvError::contract(format!(
            "{what}: length {} is not a multiple of dimension {d}",
            pts.len()
        )));
    }
    Ok(pts.len() / d)
}

/// Evaluate the kernel at a pair of points.
pub fn kernel_eval<K: Kernel>(kernel: &K, x: &[f64], y: &[f64]) -> Result<f64> {
    let d = kernel.dim();
    if x.len() != d || y.len() != d {
        return Err(LsvError::contract(format!(
            "kernel_eval: expected points of dimension {d}, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    Ok(kernel.eval_unchecked(x, y))
}

/// Gram matrix `(k(rows_i, cols_j))`, shape `m x n`.
pub fn gram_matrix<K: Kernel>(kernel: &K, rows: &[f64], cols: &[f64]) -> Result<DMatrix<f64>> {
    let d = kernel.dim();
    let m = check_points(kernel, rows, "gram_matrix rows")?;
    let n = check_points(kernel, cols, "gram_matrix cols")?;
    let mut data = vec![0.0; m * n];
    // row-major fill, then hand to nalgebra (column-major) via from_row_slice
    data.par_chunks_mut(n.max(1))
        .zip(rows.par_chunks(d))
        .for_each(|(out, x)| {
            for (o, y) in out.iter_mut().zip(cols.chunks(d)) {
                *o = kernel.eval_unchecked(x, y);
            }
        });
    Ok(DMatrix::from_row_slice(m, n, &data))
}

/// `D_k^2` for the kernel.
pub fn kernel_sup_bounds<K: Kernel>(kernel: &K) -> f64 {
    kernel.sup_bound_sq()
}

/// Lipschitz constants `(C1, C2)` of `(x, mu) -> m^lambda_A(x; mu)` with
/// respect to the Wasserstein-1 distance and the Euclidean norm.
pub fn lipschitz_constants(d_k: f64, dim: usize, lambda: f64, a_c1_norm: f64) -> Result<(f64, f64)> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(LsvError::contract(format!("lambda must be > 0, got {lambda}")));
    }
    if !(a_c1_norm >= 0.0 && a_c1_norm.is_finite()) {
        return Err(LsvError::contract(format!(
            "C1 norm of A must be finite and >= 0, got {a_c1_norm}"
        )));
    }
    if !(d_k.is_finite() && d_k > 0.0) {
        return Err(LsvError::contract(format!("D_k must be > 0, got {d_k}")));
    }
    let d = dim as f64;
    let dk2 = d_k * d_k;
    let c1 = (d_k / (lambda * lambda) + 1.0 / lambda) * d * dk2 * a_c1_norm;
    let c2 = d.sqrt() / lambda * dk2 * a_c1_norm;
    Ok((c1, c2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn fast_exp_matches_std() {
        let mut worst: f64 = 0.0;
        for i in 0..200_000 {
            let a = -(i as f64) * 3.5e-3 - (i % 7) as f64 * 1e-5;
            let (f, e) = (exp_nonpositive(a), a.exp());
            worst = worst.max((f - e).abs() / e);
        }
        assert!(worst < 4e-16, "{worst}");
        assert_eq!(exp_nonpositive(0.0), 1.0);
        assert_eq!(exp_nonpositive(-800.0), 0.0);
        assert_eq!(exp_nonpositive(f64::NEG_INFINITY), 0.0);

        let k = KernelSpec::gaussian_1d(0.1).unwrap();
        let zs: Vec<f64> = (0..37).map(|i| i as f64 * 0.11 - 2.0).collect();
        let mut row = vec![0.0; zs.len()];
        k.eval_row(&[0.3], &zs, &mut row);
        for (v, z) in row.iter().zip(&zs) {
            assert_eq!(*v, k.eval_scalar(0.3, *z));
        }
    }

    #[test]
    fn kernel_at_coincident_points_is_one() {
        let k = KernelSpec::gaussian_1d(0.1).unwrap();
        assert_eq!(kernel_eval(&k, &[0.0], &[0.0]).unwrap(), 1.0);
    }

    #[test]
    fn kernel_unit_distance_matches_exp_minus_five() {
        let k = KernelSpec::gaussian_1d(0.1).unwrap();
        let v = kernel_eval(&k, &[0.0], &[1.0]).unwrap();
        assert_relative_eq!(v, 6.737_946_999_085_467e-3, max_relative = 1e-14);
    }

    #[test]
    fn kernel_is_symmetric() {
        let k = KernelSpec::gaussian_1d(0.1).unwrap();
        assert_eq!(
            kernel_eval(&k, &[0.3], &[0.7]).unwrap(),
            kernel_eval(&k, &[0.7], &[0.3]).unwrap()
        );
    }

    #[test]
    fn kernel_rejects_dimension_mismatch() {
        let k = KernelSpec::new(0.1, 2).unwrap();
        assert!(matches!(
            kernel_eval(&k, &[0.0], &[0.0, 1.0]),
            Err(LsvError::Contract(_))
        ));
        assert!(gram_matrix(&k, &[0.0, 1.0, 2.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn bad_bandwidth_is_rejected() {
        assert!(KernelSpec::gaussian_1d(0.0).is_err());
        assert!(KernelSpec::gaussian_1d(-1.0).is_err());
        assert!(KernelSpec::gaussian_1d(f64::NAN).is_err());
    }

    #[test]
    fn gram_examples() {
        let k = KernelSpec::gaussian_1d(0.1).unwrap();
        let g = gram_matrix(&k, &[0.0], &[0.0]).unwrap();
        assert_eq!(g[(0, 0)], 1.0);

        let e5 = (-5.0f64).exp();
        let g = gram_matrix(&k, &[0.0, 1.0], &[0.0, 1.0]).unwrap();
        assert_relative_eq!(g[(0, 1)], e5, max_relative = 1e-14);
        assert_relative_eq!(g[(1, 0)], e5, max_relative = 1e-14);
        // 2x2 [[1, a], [a, 1]] has eigenvalues 1 +- a
        let eig = g.symmetric_eigenvalues();
        let (lo, hi) = (eig.min(), eig.max());
        assert_relative_eq!(lo, 1.0 - e5, max_relative = 1e-13);
        assert_relative_eq!(hi, 1.0 + e5, max_relative = 1e-13);

        let g = gram_matrix(&k, &[0.0], &[0.0, 1.0]).unwrap();
        assert_eq!(g.shape(), (1, 2));
        assert_relative_eq!(g[(0, 1)], e5, max_relative = 1e-14);
    }

    #[test]
    fn sup_bound_closed_forms() {
        let k = KernelSpec::gaussian_1d(0.1).unwrap();
        assert_relative_eq!(kernel_sup_bounds(&k), 20.0, max_relative = 1e-14);
        assert_relative_eq!(kernel_sup_bounds(&k).sqrt(), 4.472_135_955, max_relative = 1e-9);
        let k = KernelSpec::gaussian_1d(4.0).unwrap();
        assert_eq!(kernel_sup_bounds(&k), 1.0);
        let k = KernelSpec::gaussian_1d(2.0).unwrap();
        assert_eq!(kernel_sup_bounds(&k), 1.0);
    }

    // Dense-grid numeric maximization of each derivative over [-3, 3]^2,
    // independent of the closed forms above.
    fn grid_suprema(s2: f64) -> [f64; 5] {
        let k = |x: f64, y: f64| (-(x - y) * (x - y) / (2.0 * s2)).exp();
        let k2 = |x: f64, y: f64| k(x, y).powi(2);
        let h = 1e-4;
        let n = 600;
        let mut sup = [0.0f64; 5];
        for i in 0..=n {
            let x = -3.0 + 6.0 * i as f64 / n as f64;
            for j in 0..=n {
                let y = -3.0 + 6.0 * j as f64 / n as f64;
                let dx = (k(x + h, y) - k(x - h, y)) / (2.0 * h);
                let dy = (k(x, y + h) - k(x, y - h)) / (2.0 * h);
                let dxy = |f: &dyn Fn(f64, f64) -> f64| {
                    (f(x + h, y + h) - f(x + h, y - h) - f(x - h, y + h) + f(x - h, y - h))
                        / (4.0 * h * h)
                };
                let vals = [k(x, y).abs(), dx.abs(), dy.abs(), dxy(&k).abs(), dxy(&k2).abs()];
                for (s, v) in sup.iter_mut().zip(vals) {
                    *s = s.max(v);
                }
            }
        }
        sup
    }

    #[test]
    fn grid_oracle_confirms_closed_form_suprema() {
        for s2 in [0.1, 2.0, 4.0] {
            let grid = grid_suprema(s2);
            let closed = KernelSpec::gaussian_1d(s2).unwrap().derivative_suprema();
            for (g, c) in grid.iter().zip(closed.iter()) {
                // grid may miss the exact maximizer by a little, never exceed it
                assert!(*g <= c * (1.0 + 1e-3), "s2={s2}: grid {g} > closed {c}");
                assert!(*g >= c * (1.0 - 2e-2), "s2={s2}: grid {g} << closed {c}");
            }
        }
    }

    #[test]
    fn lipschitz_examples() {
        let (c1, c2) = lipschitz_constants(1.0, 1, 1.0, 1.0).unwrap();
        assert_eq!((c1, c2), (2.0, 1.0));

        let dk = 20f64.sqrt();
        let (c1, c2) = lipschitz_constants(dk, 1, 1e-2, 1.0).unwrap();
        assert_relative_eq!(c1, 20.0 * (dk * 1e4 + 1e2), max_relative = 1e-12);
        assert_relative_eq!(c1, 8.9643e5, max_relative = 1e-4);
        assert_relative_eq!(c2, 2000.0, max_relative = 1e-12);

        assert_eq!(lipschitz_constants(dk, 1, 0.5, 0.0).unwrap(), (0.0, 0.0));
        assert!(lipschitz_constants(dk, 1, 0.0, 1.0).is_err());
        assert!(lipschitz_constants(dk, 1, -1.0, 1.0).is_err());
    }
}
