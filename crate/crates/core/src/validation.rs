//! Quantitative diagnostics: repricing, implied-vol error tables, options on
//! quadratic variation, Wasserstein distances, convergence fits, parameter
//! sweeps, the Lipschitz audit of the regularized conditional expectation
//! and the small-`lambda` consistency check.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{LsvError, Result};
use crate::experiment::{calibrate, run_lsv, Experiment};
use crate::kernel::{lipschitz_constants, Kernel, KernelSpec};
use crate::market::{bs_implied_vol, sig9, CosConfig, LocalVolSurface, MarketSetting};
use crate::ridge::RepresenterBasis;
use crate::simulator::SimOptions;

fn mean_and_se(values: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let nf = n as f64;
    let mean = values.clone().sum::<f64>() / nf;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (nf - 1.0);
    (mean, (var / nf).sqrt())
}

/// Monte Carlo call prices `N^-1 sum (x_n - K)^+` and their standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct RepricedCalls {
    pub strikes: Vec<f64>,
    pub prices: Vec<f64>,
    pub std_errors: Vec<f64>,
}

pub fn reprice_calls(terminal_x: &[f64], strikes: &[f64]) -> RepricedCalls {
    let n = terminal_x.len();
    let (prices, std_errors) = strikes
        .iter()
        .map(|&k| mean_and_se(terminal_x.iter().map(move |x| (x - k).max(0.0)), n))
        .unzip();
    RepricedCalls {
        strikes: strikes.to_vec(),
        prices,
        std_errors,
    }
}

/// Call prices that use the known forward `s0 = E[X_T]`: strikes below
/// `s0` are priced as `s0 - K + N^-1 sum (K - x_n)^+`, the rest directly.
/// Same target as [`reprice_calls`] for a martingale, but in-the-money
/// prices no longer carry the sampling noise of the mean.
pub fn reprice_calls_parity(terminal_x: &[f64], strikes: &[f64], s0: f64) -> RepricedCalls {
    let n = terminal_x.len();
    let (prices, std_errors) = strikes
        .iter()
        .map(|&k| {
            if k < s0 {
                let (put, se) = mean_and_se(terminal_x.iter().map(move |x| (k - x).max(0.0)), n);
                (s0 - k + put, se)
            } else {
                mean_and_se(terminal_x.iter().map(move |x| (x - k).max(0.0)), n)
            }
        })
        .unzip();
    RepricedCalls {
        strikes: strikes.to_vec(),
        prices,
        std_errors,
    }
}

/// How model call prices are estimated from terminal samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriceEstimator {
    /// `N^-1 sum (x_n - K)^+` at every strike.
    #[default]
    Plain,
    /// Out-of-the-money options plus put-call parity, see
    /// [`reprice_calls_parity`].
    Parity,
}

impl PriceEstimator {
    pub fn reprice(&self, terminal_x: &[f64], strikes: &[f64], s0: f64) -> RepricedCalls {
        match self {
            PriceEstimator::Plain => reprice_calls(terminal_x, strikes),
            PriceEstimator::Parity => reprice_calls_parity(terminal_x, strikes, s0),
        }
    }
}

/// Black-Scholes implied vols of call prices; `None` where inversion fails.
pub fn implied_vols(prices: &[f64], s0: f64, strikes: &[f64], t: f64) -> Vec<Option<f64>> {
    prices
        .iter()
        .zip(strikes)
        .map(|(&c, &k)| bs_implied_vol(c, s0, k, t).ok())
        .collect()
}

/// Exact model call prices at maturity `t`.
pub fn true_call_prices(setting: &MarketSetting, t: f64, strikes: &[f64], cos: &CosConfig) -> Result<Vec<f64>> {
    Ok(setting.call_row(t, strikes, cos)?.0)
}

pub fn true_implied_vols(setting: &MarketSetting, t: f64, strikes: &[f64], cos: &CosConfig) -> Result<Vec<f64>> {
    if let MarketSetting::BlackScholes { sigma, .. } = setting {
        return Ok(vec![*sigma; strikes.len()]);
    }
    let prices = true_call_prices(setting, t, strikes, cos)?;
    prices
        .iter()
        .zip(strikes)
        .map(|(&c, &k)| bs_implied_vol(c, setting.s0(), k, t))
        .collect()
}

/// `P(S_T < K) = 1 + dC/dK` by a central difference of the model prices.
pub fn true_probabilities(setting: &MarketSetting, t: f64, strikes: &[f64], cos: &CosConfig) -> Result<Vec<f64>> {
    let h = 1e-4;
    let up: Vec<f64> = strikes.iter().map(|k| k + h).collect();
    let down: Vec<f64> = strikes.iter().map(|k| (k - h).max(0.0)).collect();
    let cu = true_call_prices(setting, t, &up, cos)?;
    let cd = true_call_prices(setting, t, &down, cos)?;
    Ok(cu
        .iter()
        .zip(&cd)
        .zip(up.iter().zip(&down))
        .map(|((a, b), (u, d))| (1.0 + (a - b) / (u - d)).clamp(0.0, 1.0))
        .collect())
}

/// One strike of an implied-vol error table.
#[derive(Debug, Clone, PartialEq)]
pub struct IvErrorRow {
    pub strike: f64,
    pub p_below: f64,
    pub true_iv: f64,
    /// Mean model implied vol over the repetitions that inverted.
    pub model_iv: Option<f64>,
    /// Mean absolute implied-vol error over those repetitions.
    pub abs_error: Option<f64>,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IvErrorTable {
    pub maturity: f64,
    pub reps: usize,
    pub rows: Vec<IvErrorRow>,
}

impl IvErrorTable {
    /// Average of the per-strike errors over strikes that inverted.
    pub fn mean_abs_error(&self) -> Option<f64> {
        let errs: Vec<f64> = self.rows.iter().filter_map(|r| r.abs_error).collect();
        (!errs.is_empty()).then(|| errs.iter().sum::<f64>() / errs.len() as f64)
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().map(|r| r.failures).sum()
    }

    /// CSV `K,p_below,true_iv,model_iv,abs_error,failures`.
    pub fn write_csv<W: Write>(&self, mut out: W, header: &[String]) -> Result<()> {
        for line in header {
            writeln!(out, "# {line}")?;
        }
        writeln!(out, "K,p_below,true_iv,model_iv,abs_error,failures")?;
        let opt = |v: Option<f64>| v.map(sig9).unwrap_or_else(|| "nan".into());
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                sig9(r.strike),
                sig9(r.p_below),
                sig9(r.true_iv),
                opt(r.model_iv),
                opt(r.abs_error),
                r.failures
            )?;
        }
        Ok(())
    }
}

/// Implied-vol errors at maturity `t` for one or more terminal samples.
pub fn iv_error_table(
    setting: &MarketSetting,
    cos: &CosConfig,
    t: f64,
    strikes: &[f64],
    terminals: &[Vec<f64>],
    estimator: PriceEstimator,
) -> Result<IvErrorTable> {
    if terminals.is_empty() || terminals.iter().any(|x| x.is_empty()) {
        return Err(LsvError::contract("iv_error_table needs at least one nonempty terminal sample"));
    }
    let true_iv = true_implied_vols(setting, t, strikes, cos)?;
    let p_below = true_probabilities(setting, t, strikes, cos)?;
    let per_rep: Vec<Vec<Option<f64>>> = terminals
        .iter()
        .map(|x| implied_vols(&estimator.reprice(x, strikes, setting.s0()).prices, setting.s0(), strikes, t))
        .collect();
    let rows = strikes
        .iter()
        .enumerate()
        .map(|(j, &k)| {
            let ivs: Vec<f64> = per_rep.iter().filter_map(|r| r[j]).collect();
            let m = ivs.len() as f64;
            let (model_iv, abs_error) = if ivs.is_empty() {
                (None, None)
            } else {
                (
                    Some(ivs.iter().sum::<f64>() / m),
                    Some(ivs.iter().map(|v| (v - true_iv[j]).abs()).sum::<f64>() / m),
                )
            };
            IvErrorRow {
                strike: k,
                p_below: p_below[j],
                true_iv: true_iv[j],
                model_iv,
                abs_error,
                failures: terminals.len() - ivs.len(),
            }
        })
        .collect();
    Ok(IvErrorTable {
        maturity: t,
        reps: terminals.len(),
        rows,
    })
}

/// Prices of options on realized quadratic variation, `E[(QV - K)^+]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QvCurve {
    pub strikes: Vec<f64>,
    pub prices: Vec<f64>,
    pub std_errors: Vec<f64>,
}

impl QvCurve {
    /// A curve known exactly (zero standard error).
    pub fn exact(strikes: &[f64], f: impl Fn(f64) -> f64) -> Self {
        Self {
            strikes: strikes.to_vec(),
            prices: strikes.iter().map(|&k| f(k)).collect(),
            std_errors: vec![0.0; strikes.len()],
        }
    }
}

pub fn qv_option_prices(qv: &[f64], strikes: &[f64]) -> Result<QvCurve> {
    if qv.is_empty() {
        return Err(LsvError::contract("qv_option_prices needs a recorded path sample"));
    }
    let r = reprice_calls(qv, strikes);
    Ok(QvCurve {
        strikes: r.strikes,
        prices: r.prices,
        std_errors: r.std_errors,
    })
}

/// Largest gap between two QV curves, in absolute terms and in pooled
/// standard errors `|a - b| / sqrt(se_a^2 + se_b^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QvGap {
    pub gap: f64,
    pub strike: f64,
    pub z_max: f64,
    pub z_strike: f64,
}

pub fn qv_separation(a: &QvCurve, b: &QvCurve) -> Result<QvGap> {
    if a.strikes != b.strikes || a.strikes.is_empty() {
        return Err(LsvError::contract("qv_separation needs curves on the same nonempty strike grid"));
    }
    let mut out = QvGap {
        gap: 0.0,
        strike: a.strikes[0],
        z_max: 0.0,
        z_strike: a.strikes[0],
    };
    for j in 0..a.strikes.len() {
        let gap = (a.prices[j] - b.prices[j]).abs();
        let se = a.std_errors[j].hypot(b.std_errors[j]);
        let z = if gap == 0.0 {
            0.0
        } else if se == 0.0 {
            f64::INFINITY
        } else {
            gap / se
        };
        if gap > out.gap {
            out.gap = gap;
            out.strike = a.strikes[j];
        }
        if z > out.z_max {
            out.z_max = z;
            out.z_strike = a.strikes[j];
        }
    }
    Ok(out)
}

/// W1 between two equal-size samples on the line: mean absolute difference
/// of the sorted samples.
pub fn wasserstein1_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(LsvError::contract(format!(
            "wasserstein1_1d needs equal sizes, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_unstable_by(f64::total_cmp);
    sb.sort_unstable_by(f64::total_cmp);
    Ok(sa.iter().zip(&sb).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

/// Minimum-cost perfect matching on a square cost matrix (row-major),
/// Hungarian algorithm with potentials. Returns the total cost.
pub fn assignment_cost(cost: &[f64], n: usize) -> Result<f64> {
    if cost.len() != n * n {
        return Err(LsvError::contract("assignment_cost needs an n x n matrix"));
    }
    if n == 0 {
        return Ok(0.0);
    }
    // 1-indexed arrays; column 0 is a sentinel
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    Ok((1..=n).map(|j| cost[(p[j] - 1) * n + (j - 1)]).sum())
}

/// Exact W1 between two uniform empirical measures of the same size on
/// `R^d` (Euclidean ground metric), via optimal assignment.
pub fn wasserstein1_exact(a: &[f64], b: &[f64], dim: usize) -> Result<f64> {
    if dim == 0 || a.len() != b.len() || a.len() % dim != 0 {
        return Err(LsvError::contract("wasserstein1_exact needs equal-size point sets"));
    }
    let n = a.len() / dim;
    let mut cost = vec![0.0; n * n];
    for (i, p) in a.chunks(dim).enumerate() {
        for (j, q) in b.chunks(dim).enumerate() {
            cost[i * n + j] = p.iter().zip(q).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        }
    }
    Ok(assignment_cost(&cost, n)? / n.max(1) as f64)
}

/// Least-squares fit of `error = C N^slope` on log-log axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceFit {
    pub c: f64,
    pub slope: f64,
    pub r_squared: f64,
}

pub fn convergence_fit(n_values: &[f64], mean_errors: &[f64]) -> Result<ConvergenceFit> {
    if n_values.len() != mean_errors.len() || n_values.len() < 4 {
        return Err(LsvError::contract("convergence_fit needs at least 4 matching points"));
    }
    if n_values.iter().chain(mean_errors).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(LsvError::contract("convergence_fit needs positive, finite values"));
    }
    let lx: Vec<f64> = n_values.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = mean_errors.iter().map(|v| v.ln()).collect();
    let m = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / m, ly.iter().sum::<f64>() / m);
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Ok(ConvergenceFit {
        c: intercept.exp(),
        slope,
        r_squared,
    })
}

/// Parameter varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    Lambda,
    NParticles,
    NBasis,
    /// Sets both the estimate floor and the variance floor to the value.
    TruncationPair,
}

impl SweepKind {
    pub fn name(&self) -> &'static str {
        match self {
            SweepKind::Lambda => "lambda",
            SweepKind::NParticles => "n_particles",
            SweepKind::NBasis => "n_basis",
            SweepKind::TruncationPair => "truncation_pair",
        }
    }

    pub fn apply(&self, exp: &mut Experiment, value: f64) -> Result<()> {
        let count = |v: f64| {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(LsvError::Sweep(format!("{} grid values must be positive integers, got {v}", self.name())))
            }
        };
        match self {
            SweepKind::Lambda => exp.sim.lambda = value,
            SweepKind::NParticles => exp.sim.n_particles = count(value)?,
            SweepKind::NBasis => exp.sim.n_landmarks = count(value)?,
            SweepKind::TruncationPair => {
                exp.sim.eps = value;
                exp.cir.floor = value;
            }
        }
        Ok(())
    }
}

/// Per-value statistics of the absolute ATM implied-vol error.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub param: String,
    pub values: Vec<f64>,
    pub mean_err: Vec<f64>,
    pub std_err: Vec<f64>,
    pub reps: usize,
    pub seed_base: u64,
    /// Raw errors, `errors[value][rep]`; `None` marks a failed run.
    pub errors: Vec<Vec<Option<f64>>>,
}

impl SweepResult {
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.reps as u64).map(|r| self.seed_base + r).collect()
    }

    pub fn failures(&self) -> usize {
        self.errors.iter().flatten().filter(|e| e.is_none()).count()
    }

    /// CSV `param,value,mean_err,std_err,reps,seed_base`.
    pub fn write_csv<W: Write>(&self, mut out: W, header: &[String]) -> Result<()> {
        for line in header {
            writeln!(out, "# {line}")?;
        }
        writeln!(out, "param,value,mean_err,std_err,reps,seed_base")?;
        for i in 0..self.values.len() {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                self.param,
                sig9(self.values[i]),
                sig9(self.mean_err[i]),
                sig9(self.std_err[i]),
                self.reps,
                self.seed_base
            )?;
        }
        Ok(())
    }
}

/// Absolute implied-vol error of the at-the-money call at the horizon.
pub fn atm_iv_error(exp: &Experiment, lv: &LocalVolSurface, true_iv: f64) -> Result<f64> {
    let out = run_lsv(exp, lv, &SimOptions::default())?;
    let s0 = exp.setting.s0();
    let price = reprice_calls(&out.state.x, &[s0]).prices[0];
    Ok((bs_implied_vol(price, s0, s0, exp.sim.horizon)? - true_iv).abs())
}

/// Largest tolerated share of failed runs at a grid value.
pub const MAX_SWEEP_FAILURE_FRACTION: f64 = 0.1;

/// Run `reps` repetitions at every grid value. Repetition `r` uses seed
/// `seed_base + r` at every grid value, so values are compared on common
/// random numbers. The local vol depends only on the market, the horizon
/// and the step count; pass it in to reuse it.
pub fn run_sweep(
    kind: SweepKind,
    grid: &[f64],
    base: &Experiment,
    reps: usize,
    seed_base: u64,
    lv: Option<&LocalVolSurface>,
) -> Result<SweepResult> {
    if grid.is_empty() || reps == 0 {
        return Err(LsvError::Sweep("sweep needs a nonempty grid and at least one repetition".into()));
    }
    base.validate()?;
    let owned;
    let lv = match lv {
        Some(lv) => lv,
        None => {
            owned = calibrate(&base.setting, &base.sim, &base.cos)?.local_vol;
            &owned
        }
    };
    let s0 = base.setting.s0();
    let true_iv = true_implied_vols(&base.setting, base.sim.horizon, &[s0], &base.cos)?[0];

    let mut errors = Vec::with_capacity(grid.len());
    let mut mean_err = Vec::with_capacity(grid.len());
    let mut std_err = Vec::with_capacity(grid.len());
    for &value in grid {
        let mut exp = *base;
        kind.apply(&mut exp, value)?;
        exp.validate()?;
        let row: Vec<Option<f64>> = (0..reps as u64)
            .map(|r| {
                let mut e = exp;
                e.sim.seed = seed_base + r;
                atm_iv_error(&e, lv, true_iv).ok()
            })
            .collect();
        let ok: Vec<f64> = row.iter().flatten().copied().collect();
        let failed = reps - ok.len();
        if ok.is_empty() || failed as f64 > MAX_SWEEP_FAILURE_FRACTION * reps as f64 {
            return Err(LsvError::Sweep(format!(
                "{failed} of {reps} runs failed at {}={value}",
                kind.name()
            )));
        }
        let m = ok.len() as f64;
        let mean = ok.iter().sum::<f64>() / m;
        let sd = if ok.len() > 1 {
            (ok.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (m - 1.0)).sqrt()
        } else {
            0.0
        };
        mean_err.push(mean);
        std_err.push(sd);
        errors.push(row);
    }
    Ok(SweepResult {
        param: kind.name().into(),
        values: grid.to_vec(),
        mean_err,
        std_err,
        reps,
        seed_base,
        errors,
    })
}

/// Outcome of the randomized Lipschitz audit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeReport {
    pub trials: usize,
    pub violations: usize,
    /// Largest `|m(x; mu) - m(y; nu)| / (C1 W1 + C2 |x - y|)` seen.
    pub max_ratio: f64,
    pub c1: f64,
    pub c2: f64,
    /// Descriptive only: trials where the bound fails when `W1` is taken
    /// between the position marginals instead of the joint measures.
    pub marginal_violations: usize,
}

/// Tolerance added to the right-hand side of the Lipschitz check.
pub const PROBE_TOLERANCE: f64 = 1e-8;

/// Randomized check of
/// `|m(x; mu) - m(y; nu)| <= C1 W1(mu, nu) + C2 |x - y|`
/// for the uncompressed estimator with `A = id`, on measures supported in
/// `[-2, 2] x [-1, 1]` with at most 20 atoms each.
pub fn lipschitz_probe(kernel: &KernelSpec, lambda: f64, trials: usize, seed: u64) -> Result<ProbeReport> {
    if kernel.dim() != 1 {
        return Err(LsvError::contract("lipschitz_probe works with scalar positions"));
    }
    // ||A||_C1 on y in [-1, 1]: sup |y| + sup |A'|
    let a_norm = 2.0;
    let (c1, c2) = lipschitz_constants(kernel.sup_bound_sq().sqrt(), 1, lambda, a_norm)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = ProbeReport {
        trials,
        violations: 0,
        max_ratio: 0.0,
        c1,
        c2,
        marginal_violations: 0,
    };
    let fit_eval = |xs: &[f64], ys: &[f64], q: f64| -> Result<f64> {
        let basis = RepresenterBasis::new(kernel, xs, 1e-15)?;
        let fit = basis.solve(ys, lambda)?;
        Ok(basis.evaluate(&fit.coeffs, &[q]))
    };
    for trial in 0..trials {
        let n = rng.random_range(2..=20usize);
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let ys: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let qx: f64 = rng.random_range(-2.0..2.0);
        let (xs2, ys2, qy) = match trial % 4 {
            0 => {
                let x2: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
                let y2: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                (x2, y2, rng.random_range(-2.0..2.0))
            }
            1 => {
                let mut jitter = |v: f64, lo: f64, hi: f64| {
                    let z: f64 = rng.sample(StandardNormal);
                    (v + 1e-3 * z).clamp(lo, hi)
                };
                let x2: Vec<f64> = xs.iter().map(|&v| jitter(v, -2.0, 2.0)).collect();
                let y2: Vec<f64> = ys.iter().map(|&v| jitter(v, -1.0, 1.0)).collect();
                let qy = jitter(qx, -2.0, 2.0);
                (x2, y2, qy)
            }
            2 => {
                let c: f64 = rng.random_range(-0.5..0.5);
                (xs.iter().map(|v| v + c).collect(), ys.clone(), qx)
            }
            _ => {
                let z: f64 = rng.sample(StandardNormal);
                (xs.clone(), ys.clone(), qx + 0.1 * z)
            }
        };
        let lhs = (fit_eval(&xs, &ys, qx)? - fit_eval(&xs2, &ys2, qy)?).abs();
        let joint_a: Vec<f64> = xs.iter().zip(&ys).flat_map(|(x, y)| [*x, *y]).collect();
        let joint_b: Vec<f64> = xs2.iter().zip(&ys2).flat_map(|(x, y)| [*x, *y]).collect();
        let w1 = wasserstein1_exact(&joint_a, &joint_b, 2)?;
        let rhs = c1 * w1 + c2 * (qx - qy).abs();
        if lhs > rhs + PROBE_TOLERANCE {
            report.violations += 1;
        }
        if rhs > 0.0 {
            report.max_ratio = report.max_ratio.max(lhs / rhs);
        }
        let w1_marginal = wasserstein1_1d(&xs, &xs2)?;
        if lhs > c1 * w1_marginal + c2 * (qx - qy).abs() + PROBE_TOLERANCE {
            report.marginal_violations += 1;
        }
    }
    Ok(report)
}

/// One point of the small-`lambda` consistency curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyPoint {
    pub lambda: f64,
    /// Root-mean-square error against `rho x` over sample points with
    /// `P(X < x)` in `[0.05, 0.95]`.
    pub error: f64,
    /// Noise level of the fit: `sqrt((1 - rho^2) tr(S^2) / N)`.
    pub stat_floor: f64,
    pub dof: f64,
}

/// `Phi^-1(0.95)`.
const Z95: f64 = 1.644_853_626_951_472_2;

/// Fit the uncompressed estimator of `E[Y | X]` for a standard bivariate
/// normal with correlation `rho` (so `E[Y | X = x] = rho x`) on `n` draws,
/// for every `lambda` in `lambdas`.
pub fn lambda_convergence_toy(lambdas: &[f64], n: usize, rho: f64, kernel: &KernelSpec, seed: u64) -> Result<Vec<ToyPoint>> {
    if lambdas.is_empty() || n == 0 || !(rho.abs() <= 1.0) {
        return Err(LsvError::contract("lambda_convergence_toy needs lambdas, n >= 1 and |rho| <= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let perp = (1.0 - rho * rho).sqrt();
    let (x, y): (Vec<f64>, Vec<f64>) = (0..n)
        .map(|_| {
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            (z1, rho * z1 + perp * z2)
        })
        .unzip();
    let basis = RepresenterBasis::new(kernel, &x, 1e-14)?;
    let band: Vec<usize> = (0..n).filter(|&i| x[i].abs() <= Z95).collect();
    if band.is_empty() {
        return Err(LsvError::contract("no sample points inside the band"));
    }
    lambdas
        .iter()
        .map(|&lambda| {
            let fit = basis.solve(&y, lambda)?;
            let mse = band.iter().map(|&i| (fit.fitted[i] - rho * x[i]).powi(2)).sum::<f64>() / band.len() as f64;
            Ok(ToyPoint {
                lambda,
                error: mse.sqrt(),
                stat_floor: perp * (fit.dof_sq / n as f64).sqrt(),
                dof: fit.dof,
            })
        })
        .collect()
}

/// Whether the error never increases as `lambda` decreases, except once it
/// is within the statistical floor.
pub fn toy_nonincreasing_to_floor(points: &[ToyPoint]) -> bool {
    points
        .windows(2)
        .all(|w| w[1].error <= w[0].error || w[1].error <= w[1].stat_floor)
}
