//! Interacting particle Euler scheme for the regularized McKean-Vlasov LSV
//! system, and the plain local-vol reference scheme.
//!
//! Each step synchronizes the whole cloud: landmarks are picked from the
//! current prices, the ridge estimator of `E[A2(Y) | X]` is fitted on all
//! particles, and only then are the particles moved. Randomness comes from
//! per-particle, per-step counter-based streams, so a run is reproducible
//! regardless of how many worker threads are used.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LsvError, Result};
use crate::kernel::KernelSpec;
use crate::market::{sig9, LocalVolSurface};
use crate::ridge::{fit_with_predictions, select_landmarks, RegressionSample};

/// Lower bound applied to price particles after every Euler step.
pub const PRICE_FLOOR: f64 = 1e-6;

/// RNG words reserved per (particle, step) slot.
const WORDS_PER_STEP: u128 = 256;

/// Variance dynamics `dY = lambda_mr (mu - Y) dt + eta sqrt(Y) dW`, floored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CirParams {
    pub y0: f64,
    pub mean_reversion: f64,
    pub long_run: f64,
    pub vol_of_vol: f64,
    pub floor: f64,
}

impl Default for CirParams {
    fn default() -> Self {
        Self {
            y0: 0.0144,
            mean_reversion: 1.0,
            long_run: 0.0144,
            vol_of_vol: 0.5751,
            floor: 1e-3,
        }
    }
}

impl CirParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("y0", self.y0),
            ("mean_reversion", self.mean_reversion),
            ("long_run", self.long_run),
            ("floor", self.floor),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(LsvError::Config(format!("cir.{name} must be finite and > 0, got {v}")));
            }
        }
        if !(self.vol_of_vol.is_finite() && self.vol_of_vol >= 0.0) {
            return Err(LsvError::Config(format!(
                "cir.vol_of_vol must be finite and >= 0, got {}",
                self.vol_of_vol
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn drift(&self, y: f64) -> f64 {
        self.mean_reversion * (self.long_run - y)
    }

    #[inline]
    pub fn diffusion(&self, y: f64) -> f64 {
        self.vol_of_vol * y.max(0.0).sqrt()
    }
}

/// Numerical settings of one particle simulation. The seed is not part of
/// the serialized form; configs carry it at the top level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_particles: usize,
    pub n_steps: usize,
    pub horizon: f64,
    pub lambda: f64,
    pub n_landmarks: usize,
    /// Floor on the conditional-expectation estimate in the diffusion.
    pub eps: f64,
    pub rho_xy: f64,
    #[serde(skip)]
    pub seed: u64,
    pub kernel_variance: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_particles: 100_000,
            n_steps: 500,
            horizon: 1.0,
            lambda: 1e-9,
            n_landmarks: 100,
            eps: 1e-3,
            rho_xy: -0.9,
            seed: 0,
            kernel_variance: 0.1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_particles == 0 || self.n_steps == 0 || self.n_landmarks == 0 {
            return Err(LsvError::Config("n_particles, n_steps and n_landmarks must be >= 1".into()));
        }
        if self.n_landmarks > self.n_particles {
            return Err(LsvError::Config(format!(
                "n_landmarks ({}) cannot exceed n_particles ({})",
                self.n_landmarks, self.n_particles
            )));
        }
        let positive = [
            ("horizon", self.horizon),
            ("lambda", self.lambda),
            ("eps", self.eps),
            ("kernel_variance", self.kernel_variance),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(LsvError::Config(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        if !(self.rho_xy.abs() <= 1.0) {
            return Err(LsvError::Config(format!("rho_xy must lie in [-1, 1], got {}", self.rho_xy)));
        }
        Ok(())
    }

    pub fn delta(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    pub fn kernel(&self) -> Result<KernelSpec> {
        KernelSpec::gaussian_1d(self.kernel_variance)
    }

    /// Euler grid `delta, 2 delta, ..., T` (the local-vol time grid).
    pub fn step_times(&self) -> Vec<f64> {
        let d = self.delta();
        (1..=self.n_steps).map(|i| d * i as f64).collect()
    }
}

/// Gaussian noise addressed by `(seed, stream, step)`.
///
/// Each stream is a ChaCha8 stream; step `i` starts at word `256 i`, so any
/// single draw can be reproduced without replaying the others.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    base: ChaCha8Rng,
}

impl NoiseSource {
    pub fn new(seed: u64) -> Self {
        Self {
            base: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Two independent standard normals for `(stream, step)`.
    #[inline]
    pub fn normals(&self, stream: u64, step: usize) -> (f64, f64) {
        let mut rng = self.base.clone();
        rng.set_stream(stream);
        rng.set_word_pos(step as u128 * WORDS_PER_STEP);
        (rng.sample(StandardNormal), rng.sample(StandardNormal))
    }

    /// Brownian increments `(dWx, dWy)` with correlation `rho`.
    #[inline]
    pub fn increments(&self, stream: u64, step: usize, delta: f64, rho: f64) -> (f64, f64) {
        let (z1, z2) = self.normals(stream, step);
        correlate(z1, z2, delta, rho)
    }
}

#[inline]
fn correlate(z1: f64, z2: f64, delta: f64, rho: f64) -> (f64, f64) {
    let sd = delta.sqrt();
    let perp = (1.0 - rho * rho).max(0.0).sqrt();
    (sd * z1, sd * (rho * z1 + perp * z2))
}

/// `n` correlated increment pairs from streams `0..n` at `step`.
pub fn correlated_increments(noise: &NoiseSource, step: usize, n: usize, delta: f64, rho: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(delta > 0.0) || !(rho.abs() <= 1.0) {
        return Err(LsvError::contract(format!(
            "correlated_increments needs delta > 0 and |rho| <= 1 (delta={delta}, rho={rho})"
        )));
    }
    let pairs: Vec<(f64, f64)> = (0..n as u64)
        .into_par_iter()
        .map(|s| noise.increments(s, step, delta, rho))
        .collect();
    Ok(pairs.into_iter().unzip())
}

/// One floored Euler step of the variance.
#[inline]
pub fn step_variance_scalar(y: f64, delta: f64, p: &CirParams, dwy: f64) -> f64 {
    (y + p.drift(y) * delta + p.diffusion(y) * dwy).max(p.floor)
}

pub fn step_variance(y: &[f64], delta: f64, p: &CirParams, dwy: &[f64]) -> Result<Vec<f64>> {
    if y.len() != dwy.len() {
        return Err(LsvError::contract("step_variance: length mismatch"));
    }
    Ok(y.iter().zip(dwy).map(|(&y, &w)| step_variance_scalar(y, delta, p, w)).collect())
}

/// `x sigma_dup sqrt(y) / sqrt(max(z, eps))`.
#[inline]
pub fn lsv_diffusion(x: f64, y: f64, z_hat: f64, sigma_dup: f64, eps: f64) -> f64 {
    x * sigma_dup * y.max(0.0).sqrt() / z_hat.max(eps).sqrt()
}

/// Coefficients of a McKean-Vlasov system
///
/// ```text
/// dX = H(t, X, Y, E[A1(Y)|X]) dt + F(t, X, Y, E[A2(Y)|X]) dW^X
/// dY = b(t, Y) dt + sigma(t, Y) dW^Y
/// ```
///
/// with optional projections applied after each step.
pub trait MvCoefficients: Sync {
    /// Whether `H` is nonzero; when false no regression for `A1` is run.
    fn has_drift(&self) -> bool {
        false
    }
    fn h(&self, _t: f64, _x: f64, _y: f64, _z1: f64) -> f64 {
        0.0
    }
    fn f(&self, t: f64, x: f64, y: f64, z2: f64) -> f64;
    fn a1(&self, y: f64) -> f64 {
        y
    }
    fn a2(&self, y: f64) -> f64 {
        y
    }
    fn b(&self, t: f64, y: f64) -> f64;
    fn sigma(&self, t: f64, y: f64) -> f64;
    fn project_x(&self, x: f64) -> f64 {
        x
    }
    fn project_y(&self, y: f64) -> f64 {
        y
    }
}

/// The LSV specialization: `H = 0`, `A2(y) = y`, leverage through Dupire.
#[derive(Debug, Clone, Copy)]
pub struct LsvModel<'a> {
    pub lv: &'a LocalVolSurface,
    pub cir: CirParams,
    pub eps: f64,
}

impl MvCoefficients for LsvModel<'_> {
    #[inline]
    fn f(&self, t: f64, x: f64, y: f64, z2: f64) -> f64 {
        lsv_diffusion(x, y, z2, self.lv.interp(t, x), self.eps)
    }
    #[inline]
    fn b(&self, _t: f64, y: f64) -> f64 {
        self.cir.drift(y)
    }
    #[inline]
    fn sigma(&self, _t: f64, y: f64) -> f64 {
        self.cir.diffusion(y)
    }
    #[inline]
    fn project_x(&self, x: f64) -> f64 {
        x.max(PRICE_FLOOR)
    }
    #[inline]
    fn project_y(&self, y: f64) -> f64 {
        y.max(self.cir.floor)
    }
}

/// Particle cloud at step `step`, time `step * delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleState {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub step: usize,
    pub t: f64,
}

impl ParticleState {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() || x.is_empty() {
            return Err(LsvError::contract("particle state needs equal, nonempty x and y"));
        }
        Ok(Self { x, y, step: 0, t: 0.0 })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Terminal CSV `n,x,y`.
    pub fn write_csv<W: Write>(&self, mut out: W, header: &[String]) -> Result<()> {
        for line in header {
            writeln!(out, "# {line}")?;
        }
        writeln!(out, "n,x,y")?;
        for (n, (x, y)) in self.x.iter().zip(&self.y).enumerate() {
            writeln!(out, "{n},{},{}", sig9(*x), sig9(*y))?;
        }
        Ok(())
    }
}

/// Per-step diagnostics of the interacting scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    pub step: usize,
    pub n_landmarks: usize,
    pub coeff_norm: f64,
    /// Share of particles whose estimate fell below `eps`.
    pub eps_floor_fraction: f64,
    /// Share of estimates outside `[min y, max y]`.
    pub overshoot_fraction: f64,
    /// Share of prices hitting the price floor after the step.
    pub price_floor_fraction: f64,
    pub jittered: bool,
}

/// What to record along the way.
#[derive(Debug, Clone, Default)]
pub struct SimOptions {
    /// Keep the running sum of squared log-increments per particle.
    pub record_qv: bool,
    /// Keep every price, `N x (M + 1)`, row = particle.
    pub record_paths: bool,
    /// Noise stream of each particle (defaults to its index).
    pub stream_ids: Option<Vec<u64>>,
}

impl SimOptions {
    pub fn with_qv() -> Self {
        Self {
            record_qv: true,
            ..Self::default()
        }
    }
}

/// Last header line of a binary path dump; the data starts right after it.
pub const PATH_DUMP_END: &str = "# end of header";

/// Realized quadratic variation and optional full price paths.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PathRecord {
    pub qv: Vec<f64>,
    pub n_columns: usize,
    pub paths: Option<Vec<f64>>,
}

impl PathRecord {
    fn new(n: usize, m: usize, opts: &SimOptions, x0: &[f64]) -> Option<Self> {
        if !(opts.record_qv || opts.record_paths) {
            return None;
        }
        let paths = opts.record_paths.then(|| {
            let mut p = vec![0.0; n * (m + 1)];
            for (row, x) in p.chunks_mut(m + 1).zip(x0) {
                row[0] = *x;
            }
            p
        });
        Some(Self {
            qv: vec![0.0; n],
            n_columns: m + 1,
            paths,
        })
    }

    fn push(&mut self, step: usize, before: &[f64], after: &[f64]) {
        for ((q, a), b) in self.qv.iter_mut().zip(before).zip(after) {
            let d = (b / a).ln();
            *q += d * d;
        }
        if let Some(p) = self.paths.as_mut() {
            for (row, x) in p.chunks_mut(self.n_columns).zip(after) {
                row[step] = *x;
            }
        }
    }

    /// Text header (`# ` lines closed by [`PATH_DUMP_END`]), then a
    /// little-endian `f64` dump, row = particle, column = step.
    pub fn write_binary<W: Write>(&self, mut out: W, header: &[String]) -> Result<()> {
        let paths = self
            .paths
            .as_ref()
            .ok_or_else(|| LsvError::contract("path dump requested but paths were not recorded"))?;
        for line in header {
            writeln!(out, "# {line}")?;
        }
        writeln!(out, "# rows = {}, columns = {}", paths.len() / self.n_columns.max(1), self.n_columns)?;
        writeln!(out, "{PATH_DUMP_END}")?;
        let mut buf = Vec::with_capacity(paths.len() * 8);
        for v in paths {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
        Ok(())
    }
}

/// Output of a particle simulation.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub state: ParticleState,
    pub diagnostics: Vec<StepDiagnostics>,
    pub record: Option<PathRecord>,
}

impl SimOutput {
    /// Largest per-step price-floor share.
    pub fn max_price_floor_fraction(&self) -> f64 {
        self.diagnostics.iter().map(|d| d.price_floor_fraction).fold(0.0, f64::max)
    }
}

fn stream_ids(n: usize, opts: &SimOptions) -> Result<Vec<u64>> {
    match &opts.stream_ids {
        Some(ids) if ids.len() == n => Ok(ids.clone()),
        Some(ids) => Err(LsvError::contract(format!("{} stream ids for {n} particles", ids.len()))),
        None => Ok((0..n as u64).collect()),
    }
}

fn check_finite(x: &[f64], y: &[f64], step: usize) -> Result<()> {
    if let Some(n) = x.iter().zip(y).position(|(a, b)| !a.is_finite() || !b.is_finite()) {
        return Err(LsvError::Simulation {
            step,
            message: format!("particle {n} became non-finite (x={}, y={})", x[n], y[n]),
        });
    }
    Ok(())
}

fn fraction(count: usize, n: usize) -> f64 {
    count as f64 / n as f64
}

/// Run the interacting particle system for generic coefficients.
pub fn simulate_mv_system<C: MvCoefficients>(
    cfg: &SimConfig,
    model: &C,
    x0: &[f64],
    y0: &[f64],
    opts: &SimOptions,
) -> Result<SimOutput> {
    cfg.validate()?;
    let n = cfg.n_particles;
    if x0.len() != n || y0.len() != n {
        return Err(LsvError::contract(format!(
            "initial state must have {n} particles, got {} and {}",
            x0.len(),
            y0.len()
        )));
    }
    check_finite(x0, y0, 0)?;
    let kernel = cfg.kernel()?;
    let ids = stream_ids(n, opts)?;
    let noise = NoiseSource::new(cfg.seed);
    let delta = cfg.delta();

    let mut x = x0.to_vec();
    let mut y = y0.to_vec();
    let mut record = PathRecord::new(n, cfg.n_steps, opts, x0);
    let mut diagnostics = Vec::with_capacity(cfg.n_steps);
    let mut next_x = vec![0.0; n];
    let mut next_y = vec![0.0; n];

    for step in 0..cfg.n_steps {
        let t = step as f64 * delta;
        let sim_err = |e: LsvError| LsvError::Simulation {
            step,
            message: e.to_string(),
        };

        let landmarks = select_landmarks(&x, cfg.n_landmarks).map_err(sim_err)?;
        let targets: Vec<f64> = y.iter().map(|&v| model.a2(v)).collect();
        let (tmin, tmax) = targets
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let sample = RegressionSample::new(x.clone(), targets).map_err(sim_err)?;
        let fit2 = fit_with_predictions(&sample, &landmarks, cfg.lambda, &kernel).map_err(sim_err)?;
        let z2 = fit2.fitted;

        let z1 = if model.has_drift() {
            let t1: Vec<f64> = y.iter().map(|&v| model.a1(v)).collect();
            let s1 = RegressionSample::new(x.clone(), t1).map_err(sim_err)?;
            fit_with_predictions(&s1, &landmarks, cfg.lambda, &kernel)
                .map_err(sim_err)?
                .fitted
        } else {
            Vec::new()
        };

        next_x
            .par_iter_mut()
            .zip(next_y.par_iter_mut())
            .enumerate()
            .for_each(|(i, (nx, ny))| {
                let (dwx, dwy) = noise.increments(ids[i], step, delta, cfg.rho_xy);
                let (xi, yi) = (x[i], y[i]);
                let drift = if model.has_drift() { model.h(t, xi, yi, z1[i]) } else { 0.0 };
                *nx = model.project_x(xi + drift * delta + model.f(t, xi, yi, z2[i]) * dwx);
                *ny = model.project_y(yi + model.b(t, yi) * delta + model.sigma(t, yi) * dwy);
            });
        check_finite(&next_x, &next_y, step + 1)?;

        let floored = next_x.iter().filter(|v| **v <= PRICE_FLOOR).count();
        let below_eps = z2.iter().filter(|v| **v < cfg.eps).count();
        let slack = 1e-6 * (tmax - tmin).abs().max(tmax.abs());
        let overshoot = z2.iter().filter(|v| **v < tmin - slack || **v > tmax + slack).count();
        diagnostics.push(StepDiagnostics {
            step,
            n_landmarks: landmarks.len(),
            coeff_norm: fit2.estimator.coeff_norm(),
            eps_floor_fraction: fraction(below_eps, n),
            overshoot_fraction: fraction(overshoot, n),
            price_floor_fraction: fraction(floored, n),
            jittered: fit2.jittered,
        });
        if let Some(r) = record.as_mut() {
            r.push(step + 1, &x, &next_x);
        }
        std::mem::swap(&mut x, &mut next_x);
        std::mem::swap(&mut y, &mut next_y);
    }

    let state = ParticleState {
        x,
        y,
        step: cfg.n_steps,
        t: cfg.horizon,
    };
    Ok(SimOutput {
        state,
        diagnostics,
        record,
    })
}

fn check_lv_covers(lv: &LocalVolSurface, horizon: f64) -> Result<()> {
    let last = *lv.times().last().expect("nonempty by construction");
    if last < horizon * (1.0 - 1e-12) {
        return Err(LsvError::contract(format!(
            "local vol time grid ends at {last}, before the horizon {horizon}"
        )));
    }
    Ok(())
}

/// The regularized LSV particle system started from `(x0, y0)` for every
/// particle.
pub fn simulate_particle_system(
    cfg: &SimConfig,
    cir: &CirParams,
    lv: &LocalVolSurface,
    x0: f64,
    y0: f64,
    opts: &SimOptions,
) -> Result<SimOutput> {
    cir.validate()?;
    check_lv_covers(lv, cfg.horizon)?;
    if !(x0 > 0.0 && x0.is_finite() && y0 >= cir.floor && y0.is_finite()) {
        return Err(LsvError::contract(format!(
            "need x0 > 0 and y0 >= floor (x0={x0}, y0={y0}, floor={})",
            cir.floor
        )));
    }
    let model = LsvModel {
        lv,
        cir: *cir,
        eps: cfg.eps,
    };
    let n = cfg.n_particles;
    simulate_mv_system(cfg, &model, &vec![x0; n], &vec![y0; n], opts)
}

/// Euler scheme for `dS = sigma_dup(t, S) S dW`, driven by the same
/// `dW^X` increments as the particle system with the same seed.
pub fn simulate_local_vol_reference(
    cfg: &SimConfig,
    lv: &LocalVolSurface,
    x0: f64,
    opts: &SimOptions,
) -> Result<(Vec<f64>, Option<PathRecord>)> {
    cfg.validate()?;
    check_lv_covers(lv, cfg.horizon)?;
    if !(x0 > 0.0 && x0.is_finite()) {
        return Err(LsvError::contract(format!("need x0 > 0, got {x0}")));
    }
    let n = cfg.n_particles;
    let ids = stream_ids(n, opts)?;
    let noise = NoiseSource::new(cfg.seed);
    let delta = cfg.delta();
    let init = vec![x0; n];
    let mut record = PathRecord::new(n, cfg.n_steps, opts, &init);
    let mut x = init;
    let mut next = vec![0.0; n];
    for step in 0..cfg.n_steps {
        let t = step as f64 * delta;
        next.par_iter_mut().enumerate().for_each(|(i, nx)| {
            let (dwx, _) = noise.increments(ids[i], step, delta, cfg.rho_xy);
            let xi = x[i];
            *nx = (xi + xi * lv.interp(t, xi) * dwx).max(PRICE_FLOOR);
        });
        if let Some(pos) = next.iter().position(|v| !v.is_finite()) {
            return Err(LsvError::Simulation {
                step: step + 1,
                message: format!("reference particle {pos} became non-finite"),
            });
        }
        if let Some(r) = record.as_mut() {
            r.push(step + 1, &x, &next);
        }
        std::mem::swap(&mut x, &mut next);
    }
    Ok((x, record))
}
