//! Synthetic call-price surfaces `C(T, K)` with zero rates.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::black_scholes::{bs_call_price, bs_implied_vol};
use super::heston::{CosConfig, CosExpansion, HestonParams};
use crate::error::{LsvError, Result};

/// Slack used by the monotonicity and convexity checks.
pub const SURFACE_SLACK: f64 = 1e-6;

/// Strikes on which the doubled-terms COS check is run (every n-th).
const COS_CHECK_STRIDE: usize = 10;

/// Data-generating model for the market.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum MarketSetting {
    BlackScholes { s0: f64, sigma: f64 },
    Heston(HestonParams),
}

impl MarketSetting {
    /// Black-Scholes with `S0 = 1`, `sigma = 0.3`.
    pub fn black_scholes_default() -> Self {
        MarketSetting::BlackScholes { s0: 1.0, sigma: 0.3 }
    }

    pub fn heston_default() -> Self {
        MarketSetting::Heston(HestonParams::default())
    }

    pub fn s0(&self) -> f64 {
        match self {
            MarketSetting::BlackScholes { s0, .. } => *s0,
            MarketSetting::Heston(p) => p.s0,
        }
    }

    pub fn tag(&self) -> SurfaceSource {
        match self {
            MarketSetting::BlackScholes { .. } => SurfaceSource::BlackScholes,
            MarketSetting::Heston(_) => SurfaceSource::Heston,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            MarketSetting::BlackScholes { s0, sigma } => {
                if !(*s0 > 0.0 && s0.is_finite() && *sigma >= 0.0 && sigma.is_finite()) {
                    return Err(LsvError::contract(format!(
                        "black-scholes setting needs s0 > 0 and sigma >= 0 (s0={s0}, sigma={sigma})"
                    )));
                }
                Ok(())
            }
            MarketSetting::Heston(p) => p.validate(),
        }
    }

    /// Call prices for one maturity, plus the largest doubled-terms change
    /// (zero for the analytic model).
    pub fn call_row(&self, t: f64, strikes: &[f64], cos: &CosConfig) -> Result<(Vec<f64>, f64)> {
        let s0 = self.s0();
        if t == 0.0 {
            return Ok((strikes.iter().map(|k| (s0 - k).max(0.0)).collect(), 0.0));
        }
        match self {
            MarketSetting::BlackScholes { s0, sigma } => {
                let row = strikes
                    .iter()
                    .map(|&k| bs_call_price(*s0, k, t, *sigma))
                    .collect::<Result<Vec<_>>>()?;
                Ok((row, 0.0))
            }
            MarketSetting::Heston(p) => {
                let base = CosExpansion::heston(t, p, cos)?;
                let fine = CosExpansion::heston(t, p, &cos.doubled())?;
                let row: Vec<f64> = strikes.iter().map(|&k| base.call_price(p.s0, k)).collect();
                let change = strikes
                    .iter()
                    .zip(&row)
                    .step_by(COS_CHECK_STRIDE)
                    .map(|(&k, c)| (fine.call_price(p.s0, k) - c).abs())
                    .fold(0.0, f64::max);
                Ok((row, change))
            }
        }
    }

    /// Single call price.
    pub fn call_price(&self, t: f64, k: f64, cos: &CosConfig) -> Result<f64> {
        Ok(self.call_row(t, &[k], cos)?.0[0])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurfaceSource {
    BlackScholes,
    Heston,
}

/// Call prices on a maturity x strike grid.
#[derive(Debug, Clone)]
pub struct MarketSurface {
    maturities: Vec<f64>,
    strikes: Vec<f64>,
    /// Row-major, `calls[i * n_strikes + j] = C(T_i, K_j)`.
    calls: Vec<f64>,
    s0: f64,
    source: SurfaceSource,
    /// Largest change in any checked COS price when terms were doubled.
    pub cos_doubling_change: f64,
}

fn check_increasing(v: &[f64], what: &str) -> Result<()> {
    if v.is_empty() {
        return Err(LsvError::contract(format!("{what} grid must be nonempty")));
    }
    if v.iter().any(|x| !x.is_finite()) || v.windows(2).any(|w| w[1] <= w[0]) {
        return Err(LsvError::contract(format!("{what} grid must be finite and strictly increasing")));
    }
    Ok(())
}

impl MarketSurface {
    /// Wrap precomputed prices, running the no-arbitrage checks.
    pub fn from_prices(maturities: Vec<f64>, strikes: Vec<f64>, calls: Vec<f64>, s0: f64, source: SurfaceSource) -> Result<Self> {
        check_increasing(&maturities, "maturity")?;
        check_increasing(&strikes, "strike")?;
        if maturities[0] < 0.0 || strikes[0] < 0.0 {
            return Err(LsvError::contract("maturities and strikes must be >= 0"));
        }
        if calls.len() != maturities.len() * strikes.len() {
            return Err(LsvError::contract("price matrix shape does not match grids"));
        }
        let surface = Self {
            maturities,
            strikes,
            calls,
            s0,
            source,
            cos_doubling_change: 0.0,
        };
        surface.check_no_arbitrage()?;
        Ok(surface)
    }

    pub fn maturities(&self) -> &[f64] {
        &self.maturities
    }

    pub fn strikes(&self) -> &[f64] {
        &self.strikes
    }

    pub fn s0(&self) -> f64 {
        self.s0
    }

    pub fn source(&self) -> SurfaceSource {
        self.source
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.strikes.len();
        &self.calls[i * n..(i + 1) * n]
    }

    pub fn call(&self, i: usize, j: usize) -> f64 {
        self.calls[i * self.strikes.len() + j]
    }

    /// Bounds, strike monotonicity/convexity and maturity monotonicity.
    pub fn check_no_arbitrage(&self) -> Result<()> {
        let ks = &self.strikes;
        for (i, t) in self.maturities.iter().enumerate() {
            let row = self.row(i);
            for (j, (&c, &k)) in row.iter().zip(ks).enumerate() {
                if !c.is_finite() {
                    return Err(LsvError::Surface(format!("non-finite price at T={t}, K={k}")));
                }
                let lower = (self.s0 - k).max(0.0);
                if c < lower - SURFACE_SLACK || c > self.s0 + SURFACE_SLACK {
                    return Err(LsvError::Surface(format!(
                        "price {c} outside [{lower}, {}] at T={t}, K={k}",
                        self.s0
                    )));
                }
                if j > 0 && c > row[j - 1] + SURFACE_SLACK {
                    return Err(LsvError::Surface(format!("price increases in strike at T={t}, K={k}")));
                }
                if j > 0 && j + 1 < row.len() {
                    let (h1, h2) = (k - ks[j - 1], ks[j + 1] - k);
                    let chord = (h2 * row[j - 1] + h1 * row[j + 1]) / (h1 + h2);
                    if c > chord + SURFACE_SLACK {
                        return Err(LsvError::Surface(format!("price not convex in strike at T={t}, K={k}")));
                    }
                }
                if i > 0 && c < self.call(i - 1, j) - SURFACE_SLACK {
                    return Err(LsvError::Surface(format!("price decreases in maturity at T={t}, K={k}")));
                }
            }
        }
        Ok(())
    }

    /// Index of a grid maturity matching `t` (relative tolerance 1e-10).
    pub fn maturity_index(&self, t: f64) -> Option<usize> {
        grid_index(&self.maturities, t)
    }

    pub fn strike_index(&self, k: f64) -> Option<usize> {
        grid_index(&self.strikes, k)
    }

    /// `dC/dK` at strike node `j` of row `i` (central inside, one-sided at
    /// the edges).
    pub fn strike_slope(&self, i: usize, j: usize) -> f64 {
        let ks = &self.strikes;
        let n = ks.len();
        if n == 1 {
            return 0.0;
        }
        let (lo, hi) = if j == 0 {
            (0, 1)
        } else if j + 1 == n {
            (n - 2, n - 1)
        } else {
            (j - 1, j + 1)
        };
        (self.call(i, hi) - self.call(i, lo)) / (ks[hi] - ks[lo])
    }

    /// `1 + dC/dK` at a node, clamped into `[0, 1]`.
    pub fn node_probability(&self, i: usize, j: usize) -> f64 {
        (1.0 + self.strike_slope(i, j)).clamp(0.0, 1.0)
    }

    /// Write the surface as CSV: `T,K,call,iv,p_below`, one row per node.
    /// `header` lines are emitted first as `# ` comments.
    pub fn write_csv<W: Write>(&self, mut out: W, header: &[String]) -> Result<()> {
        for line in header {
            writeln!(out, "# {line}")?;
        }
        writeln!(out, "T,K,call,iv,p_below")?;
        for (i, &t) in self.maturities.iter().enumerate() {
            for (j, &k) in self.strikes.iter().enumerate() {
                let c = self.call(i, j);
                let iv = if t > 0.0 {
                    bs_implied_vol(c, self.s0, k, t).unwrap_or(f64::NAN)
                } else {
                    f64::NAN
                };
                let p = self.node_probability(i, j);
                writeln!(out, "{},{},{},{},{}", sig9(t), sig9(k), sig9(c), sig9(iv), sig9(p))?;
            }
        }
        Ok(())
    }
}

/// Format with nine significant digits.
pub fn sig9(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    format!("{v:.8e}")
}

pub(crate) fn grid_index(grid: &[f64], v: f64) -> Option<usize> {
    let tol = 1e-10 * v.abs().max(1.0);
    let pos = grid.partition_point(|g| *g < v - tol);
    (pos < grid.len() && (grid[pos] - v).abs() <= tol).then_some(pos)
}

/// Build a surface from a market model. Rows are priced in parallel.
pub fn build_market_surface(setting: &MarketSetting, maturities: &[f64], strikes: &[f64], cos: &CosConfig) -> Result<MarketSurface> {
    setting.validate()?;
    check_increasing(maturities, "maturity")?;
    check_increasing(strikes, "strike")?;
    let rows: Vec<(Vec<f64>, f64)> = maturities
        .par_iter()
        .map(|&t| setting.call_row(t, strikes, cos))
        .collect::<Result<_>>()?;
    let change = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    let calls: Vec<f64> = rows.into_iter().flat_map(|r| r.0).collect();
    let mut surface = MarketSurface::from_prices(maturities.to_vec(), strikes.to_vec(), calls, setting.s0(), setting.tag())?;
    surface.cos_doubling_change = change;
    Ok(surface)
}

/// `P(S_T < K) = 1 + dC/dK`, from central differences of the surface.
/// Between grid nodes the node estimates are interpolated linearly in both
/// maturity and strike; the result is clamped into `[0, 1]`.
pub fn strike_probability(surface: &MarketSurface, t: f64, k: f64) -> f64 {
    let (ti, tw) = bracket(surface.maturities(), t);
    let (kj, kw) = bracket(surface.strikes(), k);
    let at = |i: usize| {
        let a = surface.strike_slope(i, kj);
        if kw > 0.0 {
            let b = surface.strike_slope(i, kj + 1);
            a + kw * (b - a)
        } else {
            a
        }
    };
    let slope = if tw > 0.0 {
        at(ti) + tw * (at(ti + 1) - at(ti))
    } else {
        at(ti)
    };
    (1.0 + slope).clamp(0.0, 1.0)
}

/// Lower bracketing index and interpolation weight, flat outside the grid.
pub(crate) fn bracket(grid: &[f64], v: f64) -> (usize, f64) {
    let n = grid.len();
    if n == 1 || v <= grid[0] {
        return (0, 0.0);
    }
    if v >= grid[n - 1] {
        return (n - 1, 0.0);
    }
    let hi = grid.partition_point(|g| *g <= v);
    let lo = hi - 1;
    (lo, (v - grid[lo]) / (grid[hi] - grid[lo]))
}

/// Uniform strike grid `[lo, hi]` with spacing `step`.
pub fn uniform_grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|i| lo + step * i as f64).collect()
}

/// Default strike grid: `[0.05, 4.0]` with step `0.005`.
pub fn default_strike_grid() -> Vec<f64> {
    uniform_grid(0.05, 4.0, 0.005)
}
