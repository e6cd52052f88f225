//! Landmark-compressed kernel ridge regression.
//!
//! Given a sample `(x_n, g_n)`, `n = 1..N`, and landmarks `Z_1..Z_L`, the
//! estimator is `m(x) = sum_j beta_j k(Z_j, x)` where `beta` solves
//!
//! ```text
//! (K^T K + N lambda R) beta = K^T G,   K = (k(Z_j, x_n)),  R = (k(Z_j, Z_k))
//! ```
//!
//! Assembly of `K`, `K^T K` and `K^T G` is split into fixed-size row blocks
//! whose partial sums are reduced in block order, so results do not depend
//! on the number of worker threads.

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{LsvError, Result};
use crate::kernel::{gram_matrix, Kernel, KernelSpec};

/// Rows per assembly block.
const BLOCK_ROWS: usize = 2048;

/// Relative diagonal jitter applied once when the first factorization fails.
const JITTER_REL: f64 = 1e-12;

/// Paired regression data: positions `x` and targets `g = A(y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionSample {
    x: Vec<f64>,
    g: Vec<f64>,
    dim: usize,
}

impl RegressionSample {
    /// Scalar positions.
    pub fn new(x: Vec<f64>, g: Vec<f64>) -> Result<Self> {
        Self::with_dim(x, g, 1)
    }

    /// Positions of dimension `dim`, flattened row-major.
    pub fn with_dim(x: Vec<f64>, g: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || x.len() != g.len() * dim {
            return Err(LsvError::contract(format!(
                "regression sample: {} positions of dim {dim} vs {} targets",
                x.len(),
                g.len()
            )));
        }
        if g.is_empty() {
            return Err(LsvError::contract("regression sample must be nonempty"));
        }
        if x.iter().chain(&g).any(|v| !v.is_finite()) {
            return Err(LsvError::NonFinite("regression sample".into()));
        }
        Ok(Self { x, g, dim })
    }

    pub fn len(&self) -> usize {
        self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g.is_empty()
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn g(&self) -> &[f64] {
        &self.g
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// A fitted estimator `x -> sum_j beta_j k(Z_j, x)`. Immutable once built.
#[derive(Debug, Clone)]
pub struct RidgeEstimator<K: Kernel = KernelSpec> {
    kernel: K,
    landmarks: Vec<f64>,
    coeffs: Vec<f64>,
    lambda: f64,
    n_samples: usize,
}

impl<K: Kernel> RidgeEstimator<K> {
    /// Build an estimator directly from landmarks and coefficients.
    pub fn from_parts(kernel: K, landmarks: Vec<f64>, coeffs: Vec<f64>, lambda: f64, n_samples: usize) -> Result<Self> {
        let d = kernel.dim();
        if coeffs.is_empty() || landmarks.len() != coeffs.len() * d {
            return Err(LsvError::contract(format!(
                "estimator needs L >= 1 landmarks matching {} coefficients",
                coeffs.len()
            )));
        }
        if coeffs.iter().chain(&landmarks).any(|v| !v.is_finite()) {
            return Err(LsvError::NonFinite("estimator coefficients".into()));
        }
        Ok(Self {
            kernel,
            landmarks,
            coeffs,
            lambda,
            n_samples,
        })
    }

    pub fn kernel(&self) -> &K {
        &self.kernel
    }

    pub fn landmarks(&self) -> &[f64] {
        &self.landmarks
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_landmarks(&self) -> usize {
        self.coeffs.len()
    }

    /// `m(x) = sum_j beta_j k(Z_j, x)`.
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        let d = self.kernel.dim();
        debug_assert_eq!(x.len(), d);
        self.landmarks
            .chunks(d)
            .zip(&self.coeffs)
            .map(|(z, b)| b * self.kernel.eval_unchecked(z, x))
            .sum()
    }

    /// Evaluate at many points (flattened); O(len * L).
    pub fn evaluate_many(&self, xs: &[f64]) -> Vec<f64> {
        let d = self.kernel.dim();
        xs.par_chunks(d).map(|x| self.evaluate(x)).collect()
    }

    /// RKHS norm squared of the fitted function, `beta^T R beta`.
    pub fn rkhs_norm_sq(&self) -> f64 {
        let d = self.kernel.dim();
        let mut acc = 0.0;
        for (zi, bi) in self.landmarks.chunks(d).zip(&self.coeffs) {
            for (zj, bj) in self.landmarks.chunks(d).zip(&self.coeffs) {
                acc += bi * bj * self.kernel.eval_unchecked(zi, zj);
            }
        }
        acc
    }

    pub fn coeff_norm(&self) -> f64 {
        self.coeffs.iter().map(|b| b * b).sum::<f64>().sqrt()
    }
}

impl RidgeEstimator<KernelSpec> {
    /// Scalar evaluation for one-dimensional kernels.
    #[inline]
    pub fn evaluate_scalar(&self, x: f64) -> f64 {
        self.landmarks
            .iter()
            .zip(&self.coeffs)
            .map(|(z, b)| b * self.kernel.eval_scalar(*z, x))
            .sum()
    }
}

/// Nearest-rank percentile landmarks: `Z_j` is the `ceil(j N / (L + 1))`-th
/// order statistic (1-indexed), `j = 1..L`. Repeated values are collapsed,
/// so fewer than `L` landmarks may come back.
pub fn select_landmarks(x: &[f64], n_landmarks: usize) -> Result<Vec<f64>> {
    let n = x.len();
    if n == 0 {
        return Err(LsvError::contract("select_landmarks: empty sample"));
    }
    if n_landmarks == 0 || n_landmarks > n {
        return Err(LsvError::contract(format!(
            "select_landmarks: need 1 <= L <= N, got L={n_landmarks}, N={n}"
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(LsvError::NonFinite("select_landmarks sample".into()));
    }
    let mut sorted = x.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let mut out: Vec<f64> = Vec::with_capacity(n_landmarks);
    for j in 1..=n_landmarks {
        // ceil(j * n / (L + 1)) in integer arithmetic
        let rank = (j * n).div_ceil(n_landmarks + 1).clamp(1, n);
        let z = sorted[rank - 1];
        if out.last() != Some(&z) {
            out.push(z);
        }
    }
    Ok(out)
}

/// Partial normal-equation sums for one block of rows.
struct BlockSums {
    gram: Vec<f64>,
    rhs: Vec<f64>,
}

/// Result of a fit that also keeps the design matrix for in-sample
/// prediction.
#[derive(Debug, Clone)]
pub struct FitOutput<K: Kernel = KernelSpec> {
    pub estimator: RidgeEstimator<K>,
    /// `K beta`: the estimator evaluated at every sample position.
    pub fitted: Vec<f64>,
    /// Whether the jitter fallback was needed.
    pub jittered: bool,
}

fn validate_fit_inputs<K: Kernel>(sample: &RegressionSample, landmarks: &[f64], lambda: f64, kernel: &K) -> Result<usize> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(LsvError::contract(format!("ridge lambda must be > 0, got {lambda}")));
    }
    let d = kernel.dim();
    if sample.dim() != d {
        return Err(LsvError::contract(format!(
            "sample dimension {} differs from kernel dimension {d}",
            sample.dim()
        )));
    }
    if landmarks.is_empty() || landmarks.len() % d != 0 {
        return Err(LsvError::contract(format!(
            "landmarks: need a nonempty multiple of dimension {d}, got {}",
            landmarks.len()
        )));
    }
    if landmarks.iter().any(|v| !v.is_finite()) {
        return Err(LsvError::NonFinite("landmarks".into()));
    }
    Ok(landmarks.len() / d)
}

/// Assemble `K` (row-major, N x L), `K^T K` and `K^T G`.
fn assemble<K: Kernel>(sample: &RegressionSample, landmarks: &[f64], kernel: &K, n_lm: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let d = kernel.dim();
    let n = sample.len();
    let mut design = vec![0.0; n * n_lm];

    let partials: Vec<BlockSums> = design
        .par_chunks_mut(BLOCK_ROWS * n_lm)
        .zip(sample.x().par_chunks(BLOCK_ROWS * d))
        .zip(sample.g().par_chunks(BLOCK_ROWS))
        .map(|((kb, xb), gb)| {
            let rows = gb.len();
            for (row, x) in kb.chunks_mut(n_lm).zip(xb.chunks(d)) {
                kernel.eval_row(x, landmarks, row);
            }
            let mut gram = vec![0.0; n_lm * n_lm];
            // SAFETY: slice lengths match the (m, k, n) and strides passed.
            unsafe {
                matrixmultiply::dgemm(
                    n_lm,
                    rows,
                    n_lm,
                    1.0,
                    kb.as_ptr(),
                    1,
                    n_lm as isize,
                    kb.as_ptr(),
                    n_lm as isize,
                    1,
                    0.0,
                    gram.as_mut_ptr(),
                    n_lm as isize,
                    1,
                );
            }
            let mut rhs = vec![0.0; n_lm];
            for (row, g) in kb.chunks(n_lm).zip(gb) {
                for (r, k) in rhs.iter_mut().zip(row) {
                    *r += k * g;
                }
            }
            BlockSums { gram, rhs }
        })
        .collect();

    let mut gram = vec![0.0; n_lm * n_lm];
    let mut rhs = vec![0.0; n_lm];
    for part in &partials {
        for (a, b) in gram.iter_mut().zip(&part.gram) {
            *a += b;
        }
        for (a, b) in rhs.iter_mut().zip(&part.rhs) {
            *a += b;
        }
    }
    (design, gram, rhs)
}

/// Solve a symmetric positive definite system by Cholesky, retrying once
/// with diagonal jitter `1e-12 * trace / L`.
pub(crate) fn solve_spd(system: DMatrix<f64>, rhs: &[f64]) -> Result<(Vec<f64>, bool)> {
    let dim = system.nrows();
    let trace = system.trace();
    let b = DVector::from_column_slice(rhs);
    if let Some(ch) = Cholesky::new(system.clone()) {
        let sol = ch.solve(&b);
        if sol.iter().all(|v| v.is_finite()) {
            return Ok((sol.as_slice().to_vec(), false));
        }
    }
    let jitter = JITTER_REL * trace / dim as f64;
    let mut jittered = system;
    for i in 0..dim {
        jittered[(i, i)] += jitter;
    }
    match Cholesky::new(jittered) {
        Some(ch) => {
            let sol = ch.solve(&b);
            if sol.iter().all(|v| v.is_finite()) {
                Ok((sol.as_slice().to_vec(), true))
            } else {
                Err(LsvError::Factorization {
                    message: "non-finite solution after jitter".into(),
                    dim,
                    trace,
                    jitter,
                })
            }
        }
        None => Err(LsvError::Factorization {
            message: "Cholesky failed after jitter".into(),
            dim,
            trace,
            jitter,
        }),
    }
}

/// Fit and also return the in-sample predictions `K beta`.
pub fn fit_with_predictions<K: Kernel>(sample: &RegressionSample, landmarks: &[f64], lambda: f64, kernel: &K) -> Result<FitOutput<K>> {
    let n_lm = validate_fit_inputs(sample, landmarks, lambda, kernel)?;
    let n = sample.len();
    let (design, ktk, ktg) = assemble(sample, landmarks, kernel, n_lm);

    let r = gram_matrix(kernel, landmarks, landmarks)?;
    let scale = n as f64 * lambda;
    let system = DMatrix::from_row_slice(n_lm, n_lm, &ktk) + r * scale;
    let (coeffs, jittered) = solve_spd(system, &ktg)?;

    let fitted: Vec<f64> = design
        .par_chunks(n_lm)
        .map(|row| row.iter().zip(&coeffs).map(|(k, b)| k * b).sum())
        .collect();

    let estimator = RidgeEstimator::from_parts(kernel.clone(), landmarks.to_vec(), coeffs, lambda, n)?;
    Ok(FitOutput {
        estimator,
        fitted,
        jittered,
    })
}

/// Solve `(K^T K + N lambda R) beta = K^T G`.
pub fn fit<K: Kernel>(sample: &RegressionSample, landmarks: &[f64], lambda: f64, kernel: &K) -> Result<RidgeEstimator<K>> {
    fit_with_predictions(sample, landmarks, lambda, kernel).map(|out| out.estimator)
}

/// Landmarks from the percentile rule on `x`, then a ridge fit against
/// `y_transformed`: an estimate of `x -> E[A(Y) | X = x]` under the
/// empirical measure.
pub fn estimate_conditional_expectation(
    x: &[f64],
    y_transformed: &[f64],
    n_landmarks: usize,
    lambda: f64,
    kernel: &KernelSpec,
) -> Result<RidgeEstimator> {
    if kernel.dim() != 1 {
        return Err(LsvError::contract("percentile landmarks need a one-dimensional kernel"));
    }
    let landmarks = select_landmarks(x, n_landmarks)?;
    let sample = RegressionSample::new(x.to_vec(), y_transformed.to_vec())?;
    fit(&sample, &landmarks, lambda, kernel)
}

/// Low-rank factor `K ~ L L^T` of the full Gram matrix of a sample, from
/// greedy pivoted Cholesky. Solves the uncompressed (representer) problem
/// `(K + N lambda I) alpha = G` for any number of targets and `lambda`s.
#[derive(Debug, Clone)]
pub struct RepresenterBasis<K: Kernel = KernelSpec> {
    kernel: K,
    points: Vec<f64>,
    /// Column-major `n x rank`.
    factor: Vec<f64>,
    rank: usize,
    /// Eigenvalues of `L^T L`, i.e. the nonzero spectrum of `K`.
    spectrum: Vec<f64>,
    /// Largest residual diagonal when the factorization stopped.
    residual: f64,
}

/// A fitted uncompressed estimator `x -> sum_i alpha_i k(x_i, x)`.
#[derive(Debug, Clone)]
pub struct RepresenterFit {
    pub coeffs: Vec<f64>,
    /// Estimator at the sample points.
    pub fitted: Vec<f64>,
    /// `tr(S)` and `tr(S^2)` of the smoother `S = K (K + N lambda I)^-1`.
    pub dof: f64,
    pub dof_sq: f64,
}

impl<K: Kernel> RepresenterBasis<K> {
    /// Factor until every residual diagonal entry is below
    /// `rel_tol * max_i k(x_i, x_i)`.
    pub fn new(kernel: &K, points: &[f64], rel_tol: f64) -> Result<Self> {
        let d = kernel.dim();
        if points.is_empty() || points.len() % d != 0 {
            return Err(LsvError::contract("representer basis needs a nonempty point set"));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(LsvError::NonFinite("representer points".into()));
        }
        let n = points.len() / d;
        let pt = |i: usize| &points[i * d..(i + 1) * d];
        let mut diag: Vec<f64> = (0..n).map(|i| kernel.eval_unchecked(pt(i), pt(i))).collect();
        let stop = rel_tol * diag.iter().copied().fold(0.0, f64::max);
        let mut factor: Vec<f64> = Vec::new();
        let mut rank = 0;
        let mut residual = diag.iter().copied().fold(0.0, f64::max);
        while rank < n && residual > stop {
            let (j, dj) = diag
                .iter()
                .copied()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
            let root = dj.sqrt();
            let mut col: Vec<f64> = (0..n)
                .into_par_iter()
                .map(|i| {
                    let mut v = kernel.eval_unchecked(pt(i), pt(j));
                    for l in 0..rank {
                        let c = &factor[l * n..(l + 1) * n];
                        v -= c[i] * c[j];
                    }
                    v / root
                })
                .collect();
            col[j] = root;
            for (dv, c) in diag.iter_mut().zip(&col) {
                *dv = (*dv - c * c).max(0.0);
            }
            diag[j] = 0.0;
            factor.extend_from_slice(&col);
            rank += 1;
            residual = diag.iter().copied().fold(0.0, f64::max);
        }
        let gram = factor_gram(&factor, n, rank);
        let spectrum = gram.symmetric_eigenvalues().iter().map(|e| e.max(0.0)).collect();
        Ok(Self {
            kernel: kernel.clone(),
            points: points.to_vec(),
            factor,
            rank,
            spectrum,
            residual,
        })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.kernel.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn residual(&self) -> f64 {
        self.residual
    }

    /// Solve `(L L^T + c I) alpha = g` with `c = N lambda` by Woodbury.
    pub fn solve(&self, g: &[f64], lambda: f64) -> Result<RepresenterFit> {
        let n = self.len();
        if g.len() != n {
            return Err(LsvError::contract(format!("{} targets for {n} points", g.len())));
        }
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(LsvError::contract(format!("ridge lambda must be > 0, got {lambda}")));
        }
        let c = n as f64 * lambda;
        let r = self.rank;
        let col = |l: usize| &self.factor[l * n..(l + 1) * n];
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let mut system = factor_gram(&self.factor, n, r);
        for i in 0..r {
            system[(i, i)] += c;
        }
        let ltg: Vec<f64> = (0..r).map(|l| dot(col(l), g)).collect();
        let (w, _) = if r > 0 { solve_spd(system, &ltg)? } else { (Vec::new(), false) };
        let coeffs: Vec<f64> = (0..n)
            .map(|i| {
                let corr: f64 = (0..r).map(|l| col(l)[i] * w[l]).sum();
                (g[i] - corr) / c
            })
            .collect();
        let lta: Vec<f64> = (0..r).map(|l| dot(col(l), &coeffs)).collect();
        let fitted = (0..n).map(|i| (0..r).map(|l| col(l)[i] * lta[l]).sum()).collect();
        let (dof, dof_sq) = self.spectrum.iter().fold((0.0, 0.0), |(a, b), e| {
            let s = e / (e + c);
            (a + s, b + s * s)
        });
        Ok(RepresenterFit {
            coeffs,
            fitted,
            dof,
            dof_sq,
        })
    }

    /// Evaluate `sum_i alpha_i k(x_i, x)`.
    pub fn evaluate(&self, coeffs: &[f64], x: &[f64]) -> f64 {
        let d = self.kernel.dim();
        self.points
            .chunks(d)
            .zip(coeffs)
            .map(|(p, a)| a * self.kernel.eval_unchecked(p, x))
            .sum()
    }
}

/// `L^T L` for a column-major `n x r` factor.
fn factor_gram(factor: &[f64], n: usize, r: usize) -> DMatrix<f64> {
    let mut out = vec![0.0; r * r];
    if r > 0 {
        // SAFETY: factor is n x r column-major (row stride 1, col stride n).
        unsafe {
            matrixmultiply::dgemm(
                r,
                n,
                r,
                1.0,
                factor.as_ptr(),
                n as isize,
                1,
                factor.as_ptr(),
                1,
                n as isize,
                0.0,
                out.as_mut_ptr(),
                r as isize,
                1,
            );
        }
    }
    DMatrix::from_row_slice(r, r, &out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn k01() -> KernelSpec {
        KernelSpec::gaussian_1d(0.1).unwrap()
    }

    #[test]
    fn landmark_percentiles() {
        let x: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(select_landmarks(&x, 3).unwrap(), vec![25.0, 50.0, 75.0]);
        assert_eq!(select_landmarks(&x, 1).unwrap(), vec![50.0]);
        assert_eq!(select_landmarks(&[5.0; 4], 2).unwrap(), vec![5.0]);
        // L = N returns every sorted point
        assert_eq!(select_landmarks(&[3.0, 1.0, 2.0], 3).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn landmark_preconditions() {
        assert!(select_landmarks(&[], 1).is_err());
        assert!(select_landmarks(&[1.0], 0).is_err());
        assert!(select_landmarks(&[1.0, 2.0], 3).is_err());
        assert!(select_landmarks(&[1.0, f64::NAN], 1).is_err());
    }

    #[test]
    fn hand_solved_one_by_one_system() {
        let s = RegressionSample::new(vec![0.0, 0.0], vec![1.0, 3.0]).unwrap();
        let est = fit(&s, &[0.0], 1.0, &k01()).unwrap();
        assert_relative_eq!(est.coeffs()[0], 1.0, max_relative = 1e-14);
        assert_relative_eq!(est.evaluate(&[0.0]), 1.0, max_relative = 1e-14);
    }

    #[test]
    fn zero_targets_give_zero_coefficients() {
        let s = RegressionSample::new(vec![0.1, 0.5, 0.9], vec![0.0; 3]).unwrap();
        for lambda in [1e-9, 1e-3, 1.0] {
            let est = fit(&s, &[0.1, 0.5, 0.9], lambda, &k01()).unwrap();
            assert!(est.coeffs().iter().all(|b| *b == 0.0));
            assert_eq!(est.evaluate(&[0.3]), 0.0);
        }
    }

    #[test]
    fn heavy_regularization_shrinks_to_zero() {
        let x: Vec<f64> = (0..50).map(|i| i as f64 / 49.0).collect();
        let g: Vec<f64> = x.iter().map(|v| (3.0 * v).sin()).collect();
        let s = RegressionSample::new(x.clone(), g).unwrap();
        let lm = select_landmarks(&x, 5).unwrap();
        let est = fit(&s, &lm, 1e6, &k01()).unwrap();
        assert!(est.coeff_norm() < 1e-5, "norm {}", est.coeff_norm());
    }

    #[test]
    fn evaluate_examples() {
        let est = RidgeEstimator::from_parts(k01(), vec![0.0], vec![1.0], 1.0, 1).unwrap();
        assert_eq!(est.evaluate(&[0.0]), 1.0);
        assert_eq!(est.evaluate_scalar(0.0), 1.0);
        let est = RidgeEstimator::from_parts(k01(), vec![0.0, 1.0], vec![0.0, 0.0], 1.0, 1).unwrap();
        assert_eq!(est.evaluate(&[0.37]), 0.0);
    }

    #[test]
    fn fit_rejects_bad_inputs() {
        let s = RegressionSample::new(vec![0.0, 1.0], vec![1.0, 2.0]).unwrap();
        assert!(fit(&s, &[0.0], 0.0, &k01()).is_err());
        assert!(fit(&s, &[], 1.0, &k01()).is_err());
        assert!(fit(&s, &[f64::INFINITY], 1.0, &k01()).is_err());
        assert!(RegressionSample::new(vec![0.0, f64::NAN], vec![1.0, 2.0]).is_err());
        assert!(RegressionSample::new(vec![0.0], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn single_sample_is_permitted() {
        let s = RegressionSample::new(vec![0.2], vec![0.7]).unwrap();
        let est = fit(&s, &[0.2], 1e-6, &k01()).unwrap();
        assert_relative_eq!(est.evaluate(&[0.2]), 0.7, max_relative = 1e-5);
    }

    #[test]
    fn interpolation_limit_with_all_points_as_landmarks() {
        let x: Vec<f64> = (0..8).map(|i| 0.25 * i as f64).collect();
        let g: Vec<f64> = x.iter().map(|v| v * v - 0.5).collect();
        let s = RegressionSample::new(x.clone(), g.clone()).unwrap();
        let est = fit(&s, &x, 1e-12, &k01()).unwrap();
        for (xi, gi) in x.iter().zip(&g) {
            assert!((est.evaluate(&[*xi]) - gi).abs() < 1e-6);
        }
    }

    #[test]
    fn fitted_values_match_evaluate() {
        let x: Vec<f64> = (0..5000).map(|i| ((i * 7919) % 5000) as f64 / 2500.0).collect();
        let g: Vec<f64> = x.iter().map(|v| v.cos()).collect();
        let s = RegressionSample::new(x.clone(), g).unwrap();
        let lm = select_landmarks(&x, 20).unwrap();
        let out = fit_with_predictions(&s, &lm, 1e-6, &k01()).unwrap();
        for (xi, f) in x.iter().zip(&out.fitted).step_by(97) {
            assert_relative_eq!(out.estimator.evaluate(&[*xi]), *f, epsilon = 1e-10);
        }
    }

    #[test]
    fn two_dimensional_fit_runs() {
        let k = KernelSpec::new(0.5, 2).unwrap();
        let x: Vec<f64> = (0..40).flat_map(|i| [i as f64 / 40.0, (i % 7) as f64 / 7.0]).collect();
        let g: Vec<f64> = x.chunks(2).map(|p| p[0] + p[1]).collect();
        let s = RegressionSample::with_dim(x.clone(), g, 2).unwrap();
        let lm: Vec<f64> = x.chunks(2).step_by(4).flatten().copied().collect();
        let est = fit(&s, &lm, 1e-4, &k).unwrap();
        assert_eq!(est.n_landmarks(), 10);
        assert!((est.evaluate(&[0.5, 0.5]) - 1.0).abs() < 0.2);
    }
    #[test]
    fn representer_matches_dense_solve() {
        let x: Vec<f64> = (0..40).map(|i| ((i * 37) % 40) as f64 / 10.0 - 2.0).collect();
        let g: Vec<f64> = x.iter().map(|v| v.sin() + 0.1 * v).collect();
        let k = k01();
        let basis = RepresenterBasis::new(&k, &x, 1e-15).unwrap();
        let lambda = 1e-3;
        let fit = basis.solve(&g, lambda).unwrap();
        // dense (K + N lambda I) alpha = G by Gaussian elimination
        let n = x.len();
        let mut a = gram_matrix(&k, &x, &x).unwrap();
        for i in 0..n {
            a[(i, i)] += n as f64 * lambda;
        }
        let alpha = a.lu().solve(&DVector::from_column_slice(&g)).unwrap();
        for (p, q) in fit.coeffs.iter().zip(alpha.iter()) {
            assert!((p - q).abs() < 1e-9, "{p} vs {q}");
        }
        for (i, f) in fit.fitted.iter().enumerate() {
            assert!((basis.evaluate(&fit.coeffs, &x[i..i + 1]) - f).abs() < 1e-10);
        }
        assert!(fit.dof > 0.0 && fit.dof <= n as f64 && fit.dof_sq <= fit.dof);
    }

    #[test]
    fn representer_agrees_with_landmarks_at_every_point() {
        let x: Vec<f64> = (0..15).map(|i| i as f64 * 0.3).collect();
        let g: Vec<f64> = x.iter().map(|v| v.cos()).collect();
        let k = k01();
        let fit = RepresenterBasis::new(&k, &x, 1e-15).unwrap().solve(&g, 1e-2).unwrap();
        let s = RegressionSample::new(x.clone(), g).unwrap();
        let full = fit_with_predictions(&s, &x, 1e-2, &k).unwrap();
        for (a, b) in fit.fitted.iter().zip(&full.fitted) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }
}
