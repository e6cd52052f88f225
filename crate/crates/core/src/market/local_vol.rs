//! Dupire local volatility `sigma^2(t, K) = 2 dC/dt / (K^2 d^2C/dK^2)`
//! extracted from a call surface by finite differences, and its
//! interpolation.

use std::io::Write;

use rayon::prelude::*;

use super::surface::{bracket, sig9, MarketSurface};
use crate::error::{LsvError, Result};

pub const SIGMA_MIN: f64 = 1e-2;
pub const SIGMA_MAX: f64 = 5.0;

/// Strike band `P(S_T < K) in [lo, hi]` used to judge extraction quality.
pub const BAND: (f64, f64) = (0.05, 0.95);

/// Largest tolerated fraction of clamped nodes inside the band.
pub const MAX_BAND_CLAMP_FRACTION: f64 = 0.05;

/// Smallest price second difference `h^2 d^2C/dK^2` trusted for Dupire;
/// below it the density is at round-off level (deep wings, short maturities).
pub const MIN_SECOND_DIFFERENCE: f64 = 1e-10;

/// Local volatility on a time x strike grid.
#[derive(Debug, Clone)]
pub struct LocalVolSurface {
    times: Vec<f64>,
    strikes: Vec<f64>,
    /// Row-major, `sigma[i * n_strikes + j] = sigma(t_i, K_j)`.
    sigma: Vec<f64>,
    sigma_min: f64,
    sigma_max: f64,
    strike_step: Option<(f64, f64)>,
}

/// Diagnostics of a Dupire extraction.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DupireReport {
    pub nodes: usize,
    pub clamped: usize,
    /// Nodes with a nonpositive second strike derivative.
    pub nonconvex: usize,
    pub band_nodes: usize,
    pub band_clamped: usize,
    /// Untrusted nodes filled from trusted neighbours in the same row.
    pub filled: usize,
}

impl DupireReport {
    pub fn band_clamp_fraction(&self) -> f64 {
        if self.band_nodes == 0 {
            0.0
        } else {
            self.band_clamped as f64 / self.band_nodes as f64
        }
    }
}

fn uniform_step(grid: &[f64]) -> Option<(f64, f64)> {
    if grid.len() < 2 {
        return None;
    }
    let h = (grid[grid.len() - 1] - grid[0]) / (grid.len() - 1) as f64;
    let uniform = grid
        .iter()
        .enumerate()
        .all(|(i, g)| (grid[0] + h * i as f64 - g).abs() <= 1e-9 * h);
    uniform.then_some((grid[0], h))
}

impl LocalVolSurface {
    /// Grid of local vols; every entry must be finite and inside
    /// `[sigma_min, sigma_max]`.
    pub fn from_grid(times: Vec<f64>, strikes: Vec<f64>, sigma: Vec<f64>, sigma_min: f64, sigma_max: f64) -> Result<Self> {
        if times.is_empty() || strikes.is_empty() || sigma.len() != times.len() * strikes.len() {
            return Err(LsvError::contract("local vol grid shape mismatch"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) || strikes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(LsvError::contract("local vol grids must be strictly increasing"));
        }
        if !(sigma_min <= sigma_max) || sigma.iter().any(|s| !s.is_finite() || *s < sigma_min || *s > sigma_max) {
            return Err(LsvError::contract("local vol entries must be finite and within the clamp bounds"));
        }
        let strike_step = uniform_step(&strikes);
        Ok(Self {
            times,
            strikes,
            sigma,
            sigma_min,
            sigma_max,
            strike_step,
        })
    }

    /// Flat surface.
    pub fn constant(times: Vec<f64>, strikes: Vec<f64>, sigma: f64) -> Result<Self> {
        let n = times.len() * strikes.len();
        Self::from_grid(times, strikes, vec![sigma; n], sigma, sigma)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn strikes(&self) -> &[f64] {
        &self.strikes
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.sigma_min, self.sigma_max)
    }

    pub fn node(&self, i: usize, j: usize) -> f64 {
        self.sigma[i * self.strikes.len() + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.sigma
    }

    #[inline]
    fn strike_bracket(&self, x: f64) -> (usize, f64) {
        let n = self.strikes.len();
        match self.strike_step {
            Some((k0, h)) => {
                let pos = (x - k0) / h;
                if !(pos > 0.0) {
                    (0, 0.0)
                } else if pos >= (n - 1) as f64 {
                    (n - 1, 0.0)
                } else {
                    let j = pos.floor() as usize;
                    (j, pos - j as f64)
                }
            }
            None => bracket(&self.strikes, x),
        }
    }

    /// Bilinear interpolation, flat extrapolation on both axes.
    pub fn interp(&self, t: f64, x: f64) -> f64 {
        let (i, wt) = bracket(&self.times, t);
        let row = |i: usize| self.interp_row(i, x);
        if wt > 0.0 {
            let a = row(i);
            a + wt * (row(i + 1) - a)
        } else {
            row(i)
        }
    }

    /// Linear interpolation in strike along time row `i`.
    #[inline]
    pub fn interp_row(&self, i: usize, x: f64) -> f64 {
        let n = self.strikes.len();
        let base = i * n;
        let (j, w) = self.strike_bracket(x);
        let a = self.sigma[base + j];
        if w > 0.0 {
            a + w * (self.sigma[base + j + 1] - a)
        } else {
            a
        }
    }

    /// Index of the time row used at time `t`: the grid time itself when
    /// `t` is a node.
    pub fn time_row(&self, t: f64) -> Option<usize> {
        super::surface::grid_index(&self.times, t)
    }

    /// Write as CSV `t,K,sigma_dup`.
    pub fn write_csv<W: Write>(&self, mut out: W, header: &[String]) -> Result<()> {
        for line in header {
            writeln!(out, "# {line}")?;
        }
        writeln!(out, "t,K,sigma_dup")?;
        for (i, t) in self.times.iter().enumerate() {
            for (j, k) in self.strikes.iter().enumerate() {
                writeln!(out, "{},{},{}", sig9(*t), sig9(*k), sig9(self.node(i, j)))?;
            }
        }
        Ok(())
    }
}

/// Bilinear local-vol lookup with flat extrapolation.
pub fn interp_local_vol(lv: &LocalVolSurface, t: f64, x: f64) -> f64 {
    lv.interp(t, x)
}

/// Dense maturity grid for Dupire differencing: every time `t > 0` in
/// `times` together with `t -/+ eta`, where `eta = rel * (smallest spacing)`.
pub fn dupire_maturity_grid(times: &[f64], rel: f64) -> Vec<f64> {
    let positive: Vec<f64> = times.iter().copied().filter(|t| *t > 0.0).collect();
    let mut spacing = positive.first().copied().unwrap_or(1.0);
    for w in positive.windows(2) {
        spacing = spacing.min(w[1] - w[0]);
    }
    let eta = rel * spacing;
    let mut out = Vec::with_capacity(3 * positive.len());
    for t in positive {
        out.extend([t - eta, t, t + eta]);
    }
    out
}

/// Second derivative in strike at node `j` of `row`: fourth-order stencil on
/// locally uniform spacing, falling back to the three-point stencil when the
/// wider stencil is unavailable or nonpositive.
fn second_strike_derivative(row: &[f64], ks: &[f64], j: usize) -> f64 {
    let (h1, h2) = (ks[j] - ks[j - 1], ks[j + 1] - ks[j]);
    let three = 2.0 * (h1 * row[j + 1] - (h1 + h2) * row[j] + h2 * row[j - 1]) / (h1 * h2 * (h1 + h2));
    if j >= 2 && j + 2 < ks.len() {
        let h = h1;
        let uniform = [ks[j - 1] - ks[j - 2], h2, ks[j + 2] - ks[j + 1]]
            .iter()
            .all(|s| (s - h).abs() <= 1e-9 * h);
        if uniform {
            let five = (-row[j - 2] + 16.0 * row[j - 1] - 30.0 * row[j] + 16.0 * row[j + 1] - row[j + 2]) / (12.0 * h * h);
            if five > 0.0 {
                return five;
            }
        }
    }
    three
}

/// Fill missing entries: linear between trusted neighbours, flat beyond
/// the outermost trusted nodes.
fn fill_row(row: &[Option<f64>], ks: &[f64]) -> Option<Vec<f64>> {
    let known: Vec<usize> = (0..row.len()).filter(|&j| row[j].is_some()).collect();
    let (&first, &last) = (known.first()?, known.last()?);
    let mut out = vec![0.0; row.len()];
    let mut prev = first;
    for j in 0..row.len() {
        out[j] = match row[j] {
            Some(v) => {
                prev = j;
                v
            }
            None if j < first => row[first].unwrap_or_default(),
            None if j > last => row[last].unwrap_or_default(),
            None => {
                let next = known[known.partition_point(|&q| q < j)];
                let (a, b) = (row[prev].unwrap_or_default(), row[next].unwrap_or_default());
                a + (b - a) * (ks[j] - ks[prev]) / (ks[next] - ks[prev])
            }
        };
    }
    Some(out)
}

/// Dupire extraction. `t_grid` entries must be surface maturities and
/// `k_grid` entries interior surface strikes.
pub fn dupire_local_vol(surface: &MarketSurface, t_grid: &[f64], k_grid: &[f64]) -> Result<(LocalVolSurface, DupireReport)> {
    let ts = surface.maturities();
    let ks = surface.strikes();
    let t_idx: Vec<usize> = t_grid
        .iter()
        .map(|&t| {
            surface
                .maturity_index(t)
                .ok_or_else(|| LsvError::contract(format!("time {t} is not a surface maturity")))
        })
        .collect::<Result<_>>()?;
    if ts.len() < 2 {
        return Err(LsvError::contract("Dupire extraction needs at least two maturities"));
    }
    let k_idx: Vec<usize> = k_grid
        .iter()
        .map(|&k| match surface.strike_index(k) {
            Some(j) if j > 0 && j + 1 < ks.len() => Ok(j),
            _ => Err(LsvError::contract(format!("strike {k} is not an interior surface strike"))),
        })
        .collect::<Result<_>>()?;

    let (var_min, var_max) = (SIGMA_MIN * SIGMA_MIN, SIGMA_MAX * SIGMA_MAX);
    let rows: Vec<(Vec<Option<f64>>, DupireReport)> = t_idx
        .par_iter()
        .map(|&i| {
            let (lo, hi) = if i == 0 {
                (0, 1)
            } else if i + 1 == ts.len() {
                (i - 1, i)
            } else {
                (i - 1, i + 1)
            };
            let mut report = DupireReport::default();
            let row = surface.row(i);
            let sig: Vec<Option<f64>> = k_idx
                .iter()
                .map(|&j| {
                    let k = ks[j];
                    let dt = (surface.call(hi, j) - surface.call(lo, j)) / (ts[hi] - ts[lo]);
                    let dkk = second_strike_derivative(row, ks, j);
                    let h = ks[j + 1] - ks[j];
                    let p = surface.node_probability(i, j);
                    let in_band = (BAND.0..=BAND.1).contains(&p);
                    report.nodes += 1;
                    report.band_nodes += usize::from(in_band);
                    let var = 2.0 * dt / (k * k * dkk);
                    let trusted = dkk * h * h >= MIN_SECOND_DIFFERENCE && var.is_finite();
                    if !trusted {
                        report.nonconvex += usize::from(!(dkk > 0.0));
                        report.filled += 1;
                        report.band_clamped += usize::from(in_band);
                        return None;
                    }
                    if var < var_min || var > var_max {
                        report.clamped += 1;
                        report.band_clamped += usize::from(in_band);
                    }
                    Some(var.clamp(var_min, var_max).sqrt())
                })
                .collect();
            (sig, report)
        })
        .collect();

    let mut report = DupireReport::default();
    let mut sigma = Vec::with_capacity(t_grid.len() * k_grid.len());
    for ((row, r), t) in rows.into_iter().zip(t_grid) {
        sigma.extend(fill_row(&row, k_grid).ok_or_else(|| {
            LsvError::Surface(format!("no trustworthy Dupire node at t={t}"))
        })?);
        report.nodes += r.nodes;
        report.clamped += r.clamped;
        report.nonconvex += r.nonconvex;
        report.band_nodes += r.band_nodes;
        report.band_clamped += r.band_clamped;
        report.filled += r.filled;
    }
    if report.band_clamp_fraction() > MAX_BAND_CLAMP_FRACTION {
        return Err(LsvError::Surface(format!(
            "{} of {} band nodes clamped during Dupire extraction",
            report.band_clamped, report.band_nodes
        )));
    }
    let lv = LocalVolSurface::from_grid(t_grid.to_vec(), k_grid.to_vec(), sigma, SIGMA_MIN, SIGMA_MAX)?;
    Ok((lv, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::heston::CosConfig;
    use crate::market::surface::{build_market_surface, default_strike_grid, uniform_grid, MarketSetting};
    use approx::assert_abs_diff_eq;

    fn euler_times(t: f64, m: usize) -> Vec<f64> {
        (1..=m).map(|i| t * i as f64 / m as f64).collect()
    }

    fn bs_lv(strike_step: f64, m: usize) -> (MarketSurface, LocalVolSurface, DupireReport) {
        let times = euler_times(1.0, m);
        let strikes = uniform_grid(0.05, 4.0, strike_step);
        let setting = MarketSetting::black_scholes_default();
        let surf = build_market_surface(&setting, &dupire_maturity_grid(&times, 0.1), &strikes, &CosConfig::default()).unwrap();
        let interior = strikes[1..strikes.len() - 1].to_vec();
        let (lv, rep) = dupire_local_vol(&surf, &times, &interior).unwrap();
        (surf, lv, rep)
    }

    fn band_nodes(surf: &MarketSurface, lv: &LocalVolSurface) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for (i, t) in lv.times().iter().enumerate() {
            let si = surf.maturity_index(*t).unwrap();
            for (j, k) in lv.strikes().iter().enumerate() {
                let sj = surf.strike_index(*k).unwrap();
                let p = surf.node_probability(si, sj);
                if (BAND.0..=BAND.1).contains(&p) {
                    out.push((i, j, lv.node(i, j)));
                }
            }
        }
        out
    }

    #[test]
    fn black_scholes_surface_gives_flat_local_vol_in_band() {
        let (surf, lv, rep) = bs_lv(0.005, 100);
        let band = band_nodes(&surf, &lv);
        assert!(band.len() > 1000);
        for (_, _, s) in &band {
            assert_abs_diff_eq!(*s, 0.3, epsilon = 1e-3);
        }
        assert_eq!(rep.band_clamped, 0);
    }

    #[test]
    fn refining_strikes_barely_moves_band_values() {
        let (surf, coarse, _) = bs_lv(0.01, 50);
        let (_, fine, _) = bs_lv(0.005, 50);
        for (i, j, s) in band_nodes(&surf, &coarse) {
            let t = coarse.times()[i];
            let k = coarse.strikes()[j];
            assert!((fine.interp(t, k) - s).abs() < 5e-4);
        }
    }

    #[test]
    fn heston_surface_stays_in_bounds_with_few_band_clamps() {
        let times = euler_times(1.0, 100);
        let strikes = default_strike_grid();
        let surf = build_market_surface(&MarketSetting::heston_default(), &dupire_maturity_grid(&times, 0.1), &strikes, &CosConfig::default()).unwrap();
        let (lv, rep) = dupire_local_vol(&surf, &times, &strikes[1..strikes.len() - 1]).unwrap();
        assert!(lv.values().iter().all(|s| (SIGMA_MIN..=SIGMA_MAX).contains(s)));
        assert!(rep.band_clamp_fraction() < MAX_BAND_CLAMP_FRACTION, "{rep:?}");
    }

    #[test]
    fn interpolation_examples() {
        let lv = LocalVolSurface::from_grid(vec![0.0, 1.0], vec![1.0, 2.0], vec![0.1, 0.2, 0.3, 0.4], 0.0, 1.0).unwrap();
        assert_eq!(interp_local_vol(&lv, 1.0, 2.0), 0.4);
        assert_eq!(interp_local_vol(&lv, 0.0, 1.0), 0.1);
        assert_eq!(interp_local_vol(&lv, 0.0, 0.5), 0.1);
        assert_eq!(interp_local_vol(&lv, 1.0, -3.0), 0.3);
        assert_eq!(interp_local_vol(&lv, 5.0, 9.0), 0.4);
        assert_abs_diff_eq!(interp_local_vol(&lv, 0.5, 1.5), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn interpolation_on_nonuniform_grid_matches_uniform_path() {
        let strikes = vec![1.0, 1.5, 2.0, 2.5];
        let sig = vec![0.1, 0.2, 0.25, 0.4];
        let uni = LocalVolSurface::from_grid(vec![0.0], strikes.clone(), sig.clone(), 0.0, 1.0).unwrap();
        let non = LocalVolSurface::from_grid(vec![0.0], vec![1.0, 1.5, 2.0, 2.50000001], sig, 0.0, 1.0).unwrap();
        assert!(uni.strike_step.is_some() && non.strike_step.is_none());
        for x in [0.9, 1.2, 1.75, 2.3, 3.0] {
            assert_abs_diff_eq!(uni.interp(0.0, x), non.interp(0.0, x), epsilon = 1e-7);
        }
    }

    #[test]
    fn rejects_grids_outside_the_surface() {
        let strikes = uniform_grid(0.5, 1.5, 0.1);
        let surf = build_market_surface(&MarketSetting::black_scholes_default(), &[0.5, 1.0], &strikes, &CosConfig::default()).unwrap();
        assert!(dupire_local_vol(&surf, &[0.75], &[1.0]).is_err());
        assert!(dupire_local_vol(&surf, &[1.0], &[0.5]).is_err());
        assert!(dupire_local_vol(&surf, &[1.0], &[1.0]).is_ok());
    }
}
