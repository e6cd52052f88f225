//! The acceptance suite: one runner per criterion, each returning a
//! pass/fail outcome with the numbers behind it. Shared by `lsv check` and
//! the `acceptance` test target.

use std::fmt;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{LsvError, Result};
use crate::experiment::{calibrate, run_lsv, Experiment};
use crate::kernel::KernelSpec;
use crate::market::{bs_implied_vol, uniform_grid, CosConfig, HestonParams, LocalVolSurface, MarketSetting};
use crate::simulator::{simulate_particle_system, CirParams, NoiseSource, SimConfig, SimOptions, PRICE_FLOOR};
use crate::validation::{
    convergence_fit, iv_error_table, lambda_convergence_toy, lipschitz_probe, qv_option_prices, qv_separation,
    reprice_calls, run_sweep, PriceEstimator, toy_nonincreasing_to_floor, true_probabilities, QvCurve, RepricedCalls, SweepKind,
    SweepResult,
};

/// Reference one-year Heston implied vols (target values of the smile check) at strikes 0.6, 0.8, ..., 1.6.
pub const TABLE_STRIKES: [f64; 6] = [0.6, 0.8, 1.0, 1.2, 1.4, 1.6];
pub const TABLE_IVS: [f64; 6] = [0.3999, 0.3383, 0.2795, 0.2273, 0.1927, 0.1803];

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {:>2} {}: {} ({:.1}s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.seconds
        )
    }
}

/// Scale of every criterion. `Default` is the acceptance scale.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckPlan {
    pub seed: u64,
    /// Repetitions averaged for the headline smile checks.
    pub smile_reps: usize,
    pub smile_particles: usize,
    pub table_steps: usize,
    pub bs_steps: usize,
    pub sweep_steps: usize,
    pub rate_reps: usize,
    pub rate_grid: Vec<f64>,
    pub sweep_reps: usize,
    pub sweep_particles: usize,
    pub qv_particles: usize,
    pub qv_steps: usize,
    pub probe_trials: usize,
    pub toy_n: usize,
    pub toy_rho: f64,
    pub mc_paths: usize,
    pub mc_steps: usize,
}

impl Default for CheckPlan {
    fn default() -> Self {
        Self {
            seed: 0,
            smile_reps: 3,
            smile_particles: 100_000,
            table_steps: 500,
            bs_steps: 200,
            sweep_steps: 200,
            rate_reps: 20,
            rate_grid: (0..7).map(|k| 250.0 * f64::from(1u32 << k)).collect(),
            sweep_reps: 3,
            sweep_particles: 100_000,
            qv_particles: 20_000,
            qv_steps: 200,
            probe_trials: 10_000,
            toy_n: 10_000,
            toy_rho: 0.9,
            mc_paths: 1_000_000,
            mc_steps: 1000,
        }
    }
}

impl CheckPlan {
    /// A reduced plan for smoke runs; outcomes are not meaningful at this
    /// scale, only the plumbing is exercised.
    pub fn smoke() -> Self {
        Self {
            smile_reps: 1,
            smile_particles: 2000,
            table_steps: 20,
            bs_steps: 20,
            sweep_steps: 10,
            rate_reps: 2,
            rate_grid: vec![100.0, 200.0, 400.0, 800.0],
            sweep_reps: 1,
            sweep_particles: 1000,
            qv_particles: 1000,
            qv_steps: 20,
            probe_trials: 100,
            toy_n: 500,
            mc_paths: 2000,
            mc_steps: 20,
            ..Self::default()
        }
    }
}

pub const ALL: [u8; 10] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10];

/// Run one criterion by number. Errors inside a run count as a failure.
pub fn run(id: u8, plan: &CheckPlan) -> Outcome {
    let start = Instant::now();
    let (name, result): (&'static str, Result<(bool, String)>) = match id {
        1 => ("heston_table", table_reproduction(plan)),
        2 => ("bs_smile", bs_smile(plan)),
        3 => ("chaos_rate", chaos_rate(plan)),
        4 => ("lambda_stability", lambda_stability(plan)),
        5 => ("landmark_stabilization", landmark_stabilization(plan)),
        6 => ("qv_separation", qv_check(plan)),
        7 => ("lipschitz_audit", lipschitz_audit(plan)),
        8 => ("lambda_toy", lambda_toy(plan)),
        9 => ("small_instance_oracle", small_instance(plan)),
        10 => ("cos_vs_monte_carlo", cos_vs_mc(plan)),
        _ => ("unknown", Err(LsvError::Config(format!("no criterion {id}")))),
    };
    let (passed, detail) = result.unwrap_or_else(|e| (false, format!("error: {e}")));
    Outcome {
        id,
        name,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn fmt_list(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", items.join(", "))
}

fn lsv_terminals(exp: &Experiment, lv: &LocalVolSurface, reps: usize) -> Result<Vec<Vec<f64>>> {
    (0..reps as u64)
        .map(|r| {
            let mut e = *exp;
            e.sim.seed = exp.sim.seed + r;
            Ok(run_lsv(&e, lv, &SimOptions::default())?.state.x)
        })
        .collect()
}

fn desk_experiment(setting: MarketSetting, n: usize, steps: usize, seed: u64) -> Experiment {
    let mut exp = Experiment::new(setting);
    exp.sim.n_particles = n;
    exp.sim.n_steps = steps;
    exp.sim.seed = seed;
    exp
}

/// Mean over repetitions of `|iv - target|` per strike, skipping failed
/// inversions.
fn mean_abs_iv_error(terminals: &[Vec<f64>], strikes: &[f64], targets: &[f64], t: f64, estimator: PriceEstimator) -> Vec<f64> {
    let per_rep: Vec<Vec<f64>> = terminals
        .iter()
        .map(|x| {
            let p = estimator.reprice(x, strikes, 1.0).prices;
            p.iter()
                .zip(strikes)
                .map(|(c, k)| bs_implied_vol(*c, 1.0, *k, t).unwrap_or(f64::NAN))
                .collect()
        })
        .collect();
    (0..strikes.len())
        .map(|j| {
            let ok: Vec<f64> = per_rep.iter().map(|r| r[j]).filter(|v| v.is_finite()).collect();
            if ok.is_empty() {
                f64::INFINITY
            } else {
                ok.iter().map(|v| (v - targets[j]).abs()).sum::<f64>() / ok.len() as f64
            }
        })
        .collect()
}

fn table_reproduction(plan: &CheckPlan) -> Result<(bool, String)> {
    let exp = desk_experiment(MarketSetting::heston_default(), plan.smile_particles, plan.table_steps, plan.seed);
    let cal = calibrate(&exp.setting, &exp.sim, &exp.cos)?;
    let terminals = lsv_terminals(&exp, &cal.local_vol, plan.smile_reps)?;
    let vs_table = mean_abs_iv_error(&terminals, &TABLE_STRIKES, &TABLE_IVS, 1.0, PriceEstimator::Parity);
    let plain = mean_abs_iv_error(&terminals, &TABLE_STRIKES, &TABLE_IVS, 1.0, PriceEstimator::Plain);
    let exact = iv_error_table(&exp.setting, &exp.cos, 1.0, &TABLE_STRIKES, &terminals, PriceEstimator::Parity)?;
    let vs_exact: Vec<f64> = exact.rows.iter().map(|r| r.abs_error.unwrap_or(f64::INFINITY)).collect();
    let worst = vs_table.iter().copied().fold(0.0, f64::max);
    Ok((
        worst <= 0.015,
        format!(
            "mean |IV - reference| over {} reps = {} (max {worst:.4} <= 0.015); vs exact model IVs {}; plain estimator vs reference {}",
            plan.smile_reps,
            fmt_list(&vs_table),
            fmt_list(&vs_exact),
            fmt_list(&plain)
        ),
    ))
}

fn bs_smile(plan: &CheckPlan) -> Result<(bool, String)> {
    let exp = desk_experiment(MarketSetting::black_scholes_default(), plan.smile_particles, plan.bs_steps, plan.seed);
    let candidates = uniform_grid(0.4, 2.0, 0.05);
    let p = true_probabilities(&exp.setting, 1.0, &candidates, &exp.cos)?;
    let strikes: Vec<f64> = candidates
        .iter()
        .zip(&p)
        .filter(|(_, p)| (0.05..=0.95).contains(*p))
        .map(|(k, _)| *k)
        .collect();
    let cal = calibrate(&exp.setting, &exp.sim, &exp.cos)?;
    let terminals = lsv_terminals(&exp, &cal.local_vol, plan.smile_reps)?;
    let flat = vec![0.3; strikes.len()];
    let errs = mean_abs_iv_error(&terminals, &strikes, &flat, 1.0, PriceEstimator::Parity);
    let plain = mean_abs_iv_error(&terminals, &strikes, &flat, 1.0, PriceEstimator::Plain);
    let worst = errs.iter().copied().fold(0.0, f64::max);
    Ok((
        worst <= 0.01,
        format!(
            "band strikes {:.2}..{:.2}: max mean |IV - 0.3| over {} reps = {worst:.4} <= 0.01; per strike {}; plain estimator {}",
            strikes[0],
            strikes[strikes.len() - 1],
            plan.smile_reps,
            fmt_list(&errs),
            fmt_list(&plain)
        ),
    ))
}

fn sweep(
    setting: MarketSetting,
    kind: SweepKind,
    grid: &[f64],
    n: usize,
    steps: usize,
    reps: usize,
    seed: u64,
) -> Result<SweepResult> {
    let exp = desk_experiment(setting, n, steps, seed);
    let lv = calibrate(&exp.setting, &exp.sim, &exp.cos)?.local_vol;
    run_sweep(kind, grid, &exp, reps, seed, Some(&lv))
}

fn chaos_rate(plan: &CheckPlan) -> Result<(bool, String)> {
    let mut ok = true;
    let mut parts = Vec::new();
    for (label, setting) in [("bs", MarketSetting::black_scholes_default()), ("heston", MarketSetting::heston_default())] {
        let n0 = plan.rate_grid[0] as usize;
        let res = sweep(setting, SweepKind::NParticles, &plan.rate_grid, n0, plan.sweep_steps, plan.rate_reps, plan.seed)?;
        let fit = convergence_fit(&res.values, &res.mean_err)?;
        let pass = (-0.65..=-0.35).contains(&fit.slope);
        ok &= pass;
        parts.push(format!(
            "{label}: slope {:.3} C {:.3} R2 {:.3} errors {}",
            fit.slope,
            fit.c,
            fit.r_squared,
            fmt_list(&res.mean_err)
        ));
    }
    Ok((ok, format!("{} (window [-0.65, -0.35])", parts.join("; "))))
}

fn lambda_stability(plan: &CheckPlan) -> Result<(bool, String)> {
    let grid = [1.0, 1e-3, 1e-6, 1e-9];
    let res = sweep(
        MarketSetting::heston_default(),
        SweepKind::Lambda,
        &grid,
        plan.sweep_particles,
        plan.sweep_steps,
        plan.sweep_reps,
        plan.seed,
    )?;
    let e = &res.mean_err;
    let pass = e[3] <= e[0] && e[3] <= 1.5 * e[2];
    Ok((
        pass,
        format!(
            "mean ATM error at lambda {{1, 1e-3, 1e-6, 1e-9}} = {} (std {}), {} reps",
            fmt_list(e),
            fmt_list(&res.std_err),
            res.reps
        ),
    ))
}

fn landmark_stabilization(plan: &CheckPlan) -> Result<(bool, String)> {
    let grid = [5.0, 20.0, 50.0, 80.0, 100.0];
    let res = sweep(
        MarketSetting::heston_default(),
        SweepKind::NBasis,
        &grid,
        plan.sweep_particles,
        plan.sweep_steps,
        plan.sweep_reps,
        plan.seed,
    )?;
    let e = &res.mean_err;
    let pass = (e[3] - e[4]).abs() <= 0.25 * e[4] && e[4] <= e[0];
    Ok((
        pass,
        format!(
            "mean ATM error at L {{5, 20, 50, 80, 100}} = {} (std {}), {} reps",
            fmt_list(e),
            fmt_list(&res.std_err),
            res.reps
        ),
    ))
}

fn qv_check(plan: &CheckPlan) -> Result<(bool, String)> {
    let exp = desk_experiment(MarketSetting::black_scholes_default(), plan.qv_particles, plan.qv_steps, plan.seed);
    let lv = calibrate(&exp.setting, &exp.sim, &exp.cos)?.local_vol;
    let strikes = uniform_grid(0.0, 0.2, 0.005);
    let curve = |seed: u64| -> Result<QvCurve> {
        let mut e = exp;
        e.sim.seed = seed;
        let out = run_lsv(&e, &lv, &SimOptions::with_qv())?;
        qv_option_prices(&out.record.expect("qv recorded").qv, &strikes)
    };
    let a = curve(plan.seed)?;
    let b = curve(plan.seed + 1)?;
    let closed = QvCurve::exact(&strikes, |k| (0.09f64 - k).max(0.0));
    let sep = qv_separation(&a, &closed)?;
    let stab = qv_separation(&a, &b)?;
    Ok((
        sep.z_max > 5.0 && stab.z_max < 3.0,
        format!(
            "LSV vs (0.09-K)+: max {:.1} SE at K={:.3} (> 5); seeds {} vs {}: max {:.2} SE at K={:.3} (< 3)",
            sep.z_max,
            sep.z_strike,
            plan.seed,
            plan.seed + 1,
            stab.z_max,
            stab.z_strike
        ),
    ))
}

fn lipschitz_audit(plan: &CheckPlan) -> Result<(bool, String)> {
    let kernel = KernelSpec::gaussian_1d(0.1)?;
    let r = lipschitz_probe(&kernel, 1e-2, plan.probe_trials, plan.seed)?;
    Ok((
        r.violations == 0,
        format!(
            "{} probes, {} violations, max lhs/rhs {:.3e}, C1 {:.4e}, C2 {:.4e}; marginal-W1 variant violations {} (descriptive)",
            r.trials, r.violations, r.max_ratio, r.c1, r.c2, r.marginal_violations
        ),
    ))
}

fn lambda_toy(plan: &CheckPlan) -> Result<(bool, String)> {
    let kernel = KernelSpec::gaussian_1d(0.1)?;
    let lambdas = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5];
    let pts = lambda_convergence_toy(&lambdas, plan.toy_n, plan.toy_rho, &kernel, plan.seed)?;
    let errs: Vec<f64> = pts.iter().map(|p| p.error).collect();
    let floors: Vec<f64> = pts.iter().map(|p| p.stat_floor).collect();
    let last = errs[errs.len() - 1];
    let strict = errs.windows(2).all(|w| w[1] <= w[0]);
    let pass = toy_nonincreasing_to_floor(&pts) && last <= 0.02;
    Ok((
        pass,
        format!(
            "errors {} floors {} (strictly nonincreasing: {strict}); final {last:.4} <= 0.02",
            fmt_list(&errs),
            fmt_list(&floors)
        ),
    ))
}

/// Scalar reference for the LSV scheme with a constant local vol: every
/// step solves the full representer system `(K + N lambda I) a = y` by
/// Gaussian elimination with partial pivoting.
pub fn brute_force_lsv(cfg: &SimConfig, cir: &CirParams, sigma: f64, x0: f64) -> (Vec<f64>, Vec<f64>) {
    let n = cfg.n_particles;
    let noise = NoiseSource::new(cfg.seed);
    let delta = cfg.delta();
    let s2 = cfg.kernel_variance;
    let mut x = vec![x0; n];
    let mut y = vec![cir.y0; n];
    for step in 0..cfg.n_steps {
        let mut a = vec![vec![0.0; n + 1]; n];
        for i in 0..n {
            for j in 0..n {
                let d = x[i] - x[j];
                a[i][j] = (-d * d / (2.0 * s2)).exp() + if i == j { n as f64 * cfg.lambda } else { 0.0 };
            }
            a[i][n] = y[i];
        }
        for c in 0..n {
            let p = (c..n).max_by(|&r, &s| a[r][c].abs().total_cmp(&a[s][c].abs())).unwrap();
            a.swap(c, p);
            for r in c + 1..n {
                let f = a[r][c] / a[c][c];
                for k in c..=n {
                    a[r][k] -= f * a[c][k];
                }
            }
        }
        let mut alpha = vec![0.0; n];
        for c in (0..n).rev() {
            let s: f64 = (c + 1..n).map(|k| a[c][k] * alpha[k]).sum();
            alpha[c] = (a[c][n] - s) / a[c][c];
        }
        let z: Vec<f64> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let d = x[i] - x[j];
                        alpha[j] * (-d * d / (2.0 * s2)).exp()
                    })
                    .sum()
            })
            .collect();
        for i in 0..n {
            let (dwx, dwy) = noise.increments(i as u64, step, delta, cfg.rho_xy);
            let lev = sigma * y[i].sqrt() / z[i].max(cfg.eps).sqrt();
            let nx = x[i] + x[i] * lev * dwx;
            let ny = y[i] + cir.mean_reversion * (cir.long_run - y[i]) * delta + cir.vol_of_vol * y[i].sqrt() * dwy;
            x[i] = nx.max(PRICE_FLOOR);
            y[i] = ny.max(cir.floor);
        }
    }
    (x, y)
}

fn small_instance(plan: &CheckPlan) -> Result<(bool, String)> {
    let cfg = SimConfig {
        n_particles: 3,
        n_steps: 2,
        lambda: 1e-3,
        n_landmarks: 3,
        seed: plan.seed,
        ..SimConfig::default()
    };
    let cir = CirParams::default();
    let lv = LocalVolSurface::constant(cfg.step_times(), vec![0.5, 1.0, 1.5], 0.3)?;
    let out = simulate_particle_system(&cfg, &cir, &lv, 1.0, cir.y0, &SimOptions::default())?;
    let (bx, by) = brute_force_lsv(&cfg, &cir, 0.3, 1.0);
    let gap = out
        .state
        .x
        .iter()
        .zip(&bx)
        .chain(out.state.y.iter().zip(&by))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok((gap <= 1e-12, format!("max per-particle gap {gap:.3e} <= 1e-12")))
}

/// Full-truncation Euler Monte Carlo for Heston calls in log space.
pub fn euler_heston_calls(p: &HestonParams, t: f64, strikes: &[f64], paths: usize, steps: usize, seed: u64) -> RepricedCalls {
    const CHUNK: usize = 4096;
    let dt = t / steps as f64;
    let sdt = dt.sqrt();
    let perp = (1.0 - p.rho * p.rho).sqrt();
    let n_chunks = paths.div_ceil(CHUNK);
    let terminal: Vec<f64> = (0..n_chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let len = CHUNK.min(paths - c * CHUNK);
            (0..len)
                .map(|_| {
                    let (mut lx, mut v) = (p.s0.ln(), p.v0);
                    for _ in 0..steps {
                        let z1: f64 = rng.sample(StandardNormal);
                        let z2: f64 = rng.sample(StandardNormal);
                        let vp = v.max(0.0);
                        let sv = vp.sqrt();
                        lx += -0.5 * vp * dt + sv * sdt * z1;
                        v += p.kappa * (p.theta - vp) * dt + p.xi * sv * sdt * (p.rho * z1 + perp * z2);
                    }
                    lx.exp()
                })
                .collect::<Vec<_>>()
        })
        .collect();
    reprice_calls(&terminal, strikes)
}

fn cos_vs_mc(plan: &CheckPlan) -> Result<(bool, String)> {
    let p = HestonParams::default();
    let strikes = [0.8, 1.0, 1.2];
    let cos = CosConfig::default();
    let setting = MarketSetting::Heston(p);
    let (base, _) = setting.call_row(1.0, &strikes, &cos)?;
    let (doubled, _) = setting.call_row(1.0, &strikes, &cos.doubled())?;
    let change = base.iter().zip(&doubled).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let mc = euler_heston_calls(&p, 1.0, &strikes, plan.mc_paths, plan.mc_steps, plan.seed);
    let z: Vec<f64> = (0..3).map(|j| (base[j] - mc.prices[j]).abs() / mc.std_errors[j]).collect();
    let pass = z.iter().all(|z| *z <= 3.0) && change < 1e-8;
    Ok((
        pass,
        format!(
            "COS {} vs MC {} ({} paths, {} steps): |gap|/SE {}; doubling terms changes prices by {change:.2e}",
            fmt_list(&base),
            fmt_list(&mc.prices),
            plan.mc_paths,
            plan.mc_steps,
            fmt_list(&z)
        ),
    ))
}
