//! Independent references used by the integration tests. Nothing here
//! calls into the engine's regression or pricing code.

#![allow(dead_code)]

use lsv_core::simulator::{CirParams, NoiseSource, SimConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Dense Gaussian elimination with partial pivoting on a row-major system.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

pub fn gauss_kernel(x: f64, y: f64, s2: f64) -> f64 {
    (-(x - y) * (x - y) / (2.0 * s2)).exp()
}

/// Full representer ridge fit evaluated at the sample points:
/// `(K + N lambda I) alpha = y`, fitted `K alpha`.
pub fn representer_fitted(x: &[f64], y: &[f64], lambda: f64, s2: f64) -> Vec<f64> {
    let n = x.len();
    let a: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| gauss_kernel(x[i], x[j], s2) + if i == j { n as f64 * lambda } else { 0.0 })
                .collect()
        })
        .collect();
    let alpha = gauss_solve(a, y.to_vec());
    (0..n)
        .map(|i| (0..n).map(|j| alpha[j] * gauss_kernel(x[i], x[j], s2)).sum())
        .collect()
}

/// Particle scheme with constant local vol `sigma`, written out scalar by
/// scalar. Shares only the noise addressing with the engine.
pub fn brute_force_particles(cfg: &SimConfig, cir: &CirParams, sigma: f64, x0: f64) -> (Vec<f64>, Vec<f64>) {
    let n = cfg.n_particles;
    let noise = NoiseSource::new(cfg.seed);
    let dt = cfg.delta();
    let mut x = vec![x0; n];
    let mut y = vec![cir.y0; n];
    for step in 0..cfg.n_steps {
        let z = representer_fitted(&x, &y, cfg.lambda, cfg.kernel_variance);
        for i in 0..n {
            let (dwx, dwy) = noise.increments(i as u64, step, dt, cfg.rho_xy);
            let leverage = sigma * y[i].sqrt() / z[i].max(cfg.eps).sqrt();
            let nx = x[i] * (1.0 + leverage * dwx);
            let ny = y[i] + cir.mean_reversion * (cir.long_run - y[i]) * dt + cir.vol_of_vol * y[i].sqrt() * dwy;
            x[i] = nx.max(1e-6);
            y[i] = ny.max(cir.floor);
        }
    }
    (x, y)
}

pub struct HestonMc {
    pub prices: Vec<f64>,
    pub std_errors: Vec<f64>,
}

/// Heston calls by full-truncation Euler on the log price, one RNG per
/// block of paths.
#[allow(clippy::too_many_arguments)]
pub fn heston_euler_mc(
    kappa: f64,
    theta: f64,
    xi: f64,
    rho: f64,
    v0: f64,
    t: f64,
    strikes: &[f64],
    paths: usize,
    steps: usize,
    seed: u64,
) -> HestonMc {
    let dt = t / steps as f64;
    let sq = dt.sqrt();
    let rho_perp = (1.0 - rho * rho).sqrt();
    let mut sum = vec![0.0; strikes.len()];
    let mut sum_sq = vec![0.0; strikes.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_4e57);
    for _ in 0..paths {
        let mut ln_s = 0.0f64;
        let mut v = v0;
        for _ in 0..steps {
            let g1: f64 = rng.sample(StandardNormal);
            let g2: f64 = rng.sample(StandardNormal);
            let vp = v.max(0.0);
            let vol = vp.sqrt();
            ln_s += vol * sq * g1 - 0.5 * vp * dt;
            v += kappa * (theta - vp) * dt + xi * vol * sq * (rho * g1 + rho_perp * g2);
        }
        let s = ln_s.exp();
        for (j, k) in strikes.iter().enumerate() {
            let p = (s - k).max(0.0);
            sum[j] += p;
            sum_sq[j] += p * p;
        }
    }
    let n = paths as f64;
    let prices: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std_errors = prices
        .iter()
        .zip(&sum_sq)
        .map(|(m, s2)| ((s2 / n - m * m) * n / (n - 1.0) / n).sqrt())
        .collect();
    HestonMc { prices, std_errors }
}
