//! Heston model: characteristic function of the log price and Fourier-cosine
//! (COS) pricing of European options with zero interest rate.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{LsvError, Result};

/// `dS = sqrt(v) S dW`, `dv = kappa (theta - v) dt + xi sqrt(v) dB`,
/// `d<W, B> = rho dt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HestonParams {
    pub kappa: f64,
    pub theta: f64,
    pub xi: f64,
    pub rho: f64,
    pub v0: f64,
    pub s0: f64,
}

impl Default for HestonParams {
    fn default() -> Self {
        Self {
            kappa: 2.19,
            theta: 0.17023,
            xi: 1.04,
            rho: -0.83,
            v0: 0.0045,
            s0: 1.0,
        }
    }
}

impl HestonParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("kappa", self.kappa),
            ("theta", self.theta),
            ("xi", self.xi),
            ("v0", self.v0),
            ("s0", self.s0),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(LsvError::contract(format!("heston {name} must be > 0, got {v}")));
            }
        }
        if !(self.rho.abs() <= 1.0) {
            return Err(LsvError::contract(format!("heston rho must lie in [-1, 1], got {}", self.rho)));
        }
        Ok(())
    }
}

/// Characteristic function `E[exp(i u log S_t)]` in the branch-continuous
/// form (no discontinuity in the complex logarithm for long maturities).
pub fn heston_char_fn(u: Complex64, t: f64, p: &HestonParams) -> Complex64 {
    let i = Complex64::i();
    let xi2 = p.xi * p.xi;
    let b = p.kappa - p.rho * p.xi * i * u;
    let d = (b * b + xi2 * (i * u + u * u)).sqrt();
    let bm = b - d;
    let g = bm / (b + d);
    let edt = (-d * t).exp();
    let one = Complex64::new(1.0, 0.0);
    let log_term = ((one - g * edt) / (one - g)).ln();
    let c = p.kappa * p.theta / xi2 * (bm * t - 2.0 * log_term);
    let dd = bm / xi2 * (one - edt) / (one - g * edt);
    (i * u * p.s0.ln() + c + dd * p.v0).exp()
}

/// First two cumulants of `log S_t`, from central differences of
/// `log phi` at the origin (`log phi(u) = i c1 u - c2 u^2 / 2 + ...`).
pub fn heston_cumulants(t: f64, p: &HestonParams) -> (f64, f64) {
    // fourth-order stencils; log phi(0) = 0 exactly
    let h = 1e-3;
    let lp = |u: f64| heston_char_fn(Complex64::new(u, 0.0), t, p).ln();
    let (p1, m1, p2, m2) = (lp(h), lp(-h), lp(2.0 * h), lp(-2.0 * h));
    let c1 = (8.0 * (p1 - m1) - (p2 - m2)).im / (12.0 * h);
    let c2 = -(16.0 * (p1 + m1) - (p2 + m2)).re / (12.0 * h * h);
    (c1, c2)
}

/// COS expansion settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CosConfig {
    pub n_terms: usize,
    /// Truncation half-width in units of `sqrt(|c2|)`.
    pub trunc_width: f64,
}

impl Default for CosConfig {
    fn default() -> Self {
        Self {
            n_terms: 256,
            trunc_width: 12.0,
        }
    }
}

impl CosConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_terms < 64 {
            return Err(LsvError::contract(format!("COS needs n_terms >= 64, got {}", self.n_terms)));
        }
        if !(self.trunc_width.is_finite() && self.trunc_width > 0.0) {
            return Err(LsvError::contract("COS trunc_width must be > 0"));
        }
        Ok(())
    }

    pub fn doubled(&self) -> Self {
        Self {
            n_terms: 2 * self.n_terms,
            ..*self
        }
    }
}

/// Option type for the COS payoff coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptionKind {
    Call,
    Put,
}

/// Characteristic-function terms for one maturity, reusable across strikes.
#[derive(Debug, Clone)]
pub struct CosExpansion {
    a: f64,
    b: f64,
    /// `Re[phi(w_k) exp(-i w_k a)]` per term, first term halved.
    re: Vec<f64>,
}

impl CosExpansion {
    pub fn heston(t: f64, p: &HestonParams, cfg: &CosConfig) -> Result<Self> {
        p.validate()?;
        cfg.validate()?;
        if !(t > 0.0) {
            return Err(LsvError::contract(format!("COS pricing needs t > 0, got {t}")));
        }
        let (c1, c2) = heston_cumulants(t, p);
        let half = cfg.trunc_width * c2.abs().sqrt();
        let (a, b) = (c1 - half, c1 + half);
        let width = b - a;
        let mut re = Vec::with_capacity(cfg.n_terms);
        for k in 0..cfg.n_terms {
            let w = k as f64 * std::f64::consts::PI / width;
            let phi = heston_char_fn(Complex64::new(w, 0.0), t, p);
            let z = phi * Complex64::new(0.0, -w * a).exp();
            let scale = if k == 0 { 0.5 } else { 1.0 };
            re.push(scale * z.re);
        }
        Ok(Self { a, b, re })
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    /// European option price on `[a, b]`. No bound clamping.
    pub fn price_raw(&self, kind: OptionKind, strike: f64) -> f64 {
        let (a, b) = (self.a, self.b);
        let width = b - a;
        let log_k = strike.ln();
        let (lo, hi) = match kind {
            OptionKind::Put => (a, log_k.min(b)),
            OptionKind::Call => (log_k.max(a), b),
        };
        if hi <= lo {
            return 0.0;
        }
        let (e_lo, e_hi) = (lo.exp(), hi.exp());
        let mut acc = 0.0;
        for (k, re) in self.re.iter().enumerate() {
            let w = k as f64 * std::f64::consts::PI / width;
            let (s_hi, c_hi) = (w * (hi - a)).sin_cos();
            let (s_lo, c_lo) = (w * (lo - a)).sin_cos();
            // chi = int e^y cos(w(y - a)) dy, psi = int cos(w(y - a)) dy
            let chi = (c_hi * e_hi - c_lo * e_lo + w * (s_hi * e_hi - s_lo * e_lo)) / (1.0 + w * w);
            let psi = if k == 0 { hi - lo } else { (s_hi - s_lo) / w };
            let v = match kind {
                OptionKind::Put => strike * psi - chi,
                OptionKind::Call => chi - strike * psi,
            };
            acc += re * v;
        }
        acc * 2.0 / width
    }

    /// Call price, computed from the COS put plus parity and clamped into
    /// the no-arbitrage interval `[max(s0 - k, 0), s0]`.
    pub fn call_price(&self, s0: f64, strike: f64) -> f64 {
        let put = self.price_raw(OptionKind::Put, strike).max(0.0);
        let call = put + s0 - strike;
        call.clamp((s0 - strike).max(0.0), s0)
    }
}

/// Heston call price by the COS method.
pub fn heston_call_cos(k: f64, t: f64, p: &HestonParams, n_terms: usize, trunc_width: f64) -> Result<f64> {
    if !(k > 0.0) {
        return Err(LsvError::contract(format!("COS strike must be > 0, got {k}")));
    }
    let cfg = CosConfig { n_terms, trunc_width };
    Ok(CosExpansion::heston(t, p, &cfg)?.call_price(p.s0, k))
}

/// Prices at `strikes` plus the largest change observed when the number of
/// terms is doubled.
pub fn heston_calls_with_check(strikes: &[f64], t: f64, p: &HestonParams, cfg: &CosConfig) -> Result<(Vec<f64>, f64)> {
    let base = CosExpansion::heston(t, p, cfg)?;
    let fine = CosExpansion::heston(t, p, &cfg.doubled())?;
    let mut max_change: f64 = 0.0;
    let prices = strikes
        .iter()
        .map(|&k| {
            let c = base.call_price(p.s0, k);
            max_change = max_change.max((fine.call_price(p.s0, k) - c).abs());
            c
        })
        .collect();
    Ok((prices, max_change))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::black_scholes::bs_implied_vol;
    use approx::assert_abs_diff_eq;

    #[test]
    fn char_fn_normalized_and_conjugate_symmetric() {
        let p = HestonParams::default();
        let one = heston_char_fn(Complex64::new(0.0, 0.0), 1.0, &p);
        assert_abs_diff_eq!(one.re, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(one.im, 0.0, epsilon = 1e-15);
        for u in [0.3, 1.0, 4.0, 25.0] {
            let a = heston_char_fn(Complex64::new(u, 0.0), 1.0, &p);
            let b = heston_char_fn(Complex64::new(-u, 0.0), 1.0, &p);
            assert_abs_diff_eq!(a.re, b.re, epsilon = 1e-13);
            assert_abs_diff_eq!(a.im, -b.im, epsilon = 1e-13);
            assert!(a.norm() <= 1.0 + 1e-13);
        }
    }

    #[test]
    fn cumulants_match_moment_formulas() {
        let p = HestonParams::default();
        for t in [0.0002, 0.01, 0.5, 1.0, 4.0] {
            let (c1, c2) = heston_cumulants(t, &p);
            // E[log S_t] = -1/2 int E[v]
            let mean_var = p.theta * t + (p.v0 - p.theta) * (1.0 - (-p.kappa * t).exp()) / p.kappa;
            assert_abs_diff_eq!(c1, -0.5 * mean_var, epsilon = 1e-7 * (1.0 + mean_var));
            assert!(c2 > 0.0);
        }
        // quadrature reference values
        assert_abs_diff_eq!(heston_cumulants(0.01, &p).1, 6.326_061_835e-5, epsilon = 1e-9);
        assert_abs_diff_eq!(heston_cumulants(1.0, &p).1, 0.125_588_295, epsilon = 1e-8);
    }

    // Reference implied vols from an independent 30-digit Fourier quadrature
    // of the same characteristic function (Lewis form).
    pub(crate) const QUADRATURE_IVS: [(f64, f64); 6] = [
        (0.6, 0.404_104_132),
        (0.8, 0.338_169_333),
        (1.0, 0.278_672_077),
        (1.2, 0.226_132_026),
        (1.4, 0.190_866_081),
        (1.6, 0.178_493_591),
    ];

    #[test]
    fn cos_matches_quadrature_implied_vols() {
        let p = HestonParams::default();
        for (k, iv_ref) in QUADRATURE_IVS {
            let c = heston_call_cos(k, 1.0, &p, 256, 12.0).unwrap();
            let iv = bs_implied_vol(c, 1.0, k, 1.0).unwrap();
            assert_abs_diff_eq!(iv, iv_ref, epsilon = 1e-5);
            assert!(c >= (1.0f64 - k).max(0.0));
        }
    }

    #[test]
    fn cos_is_close_to_reference_smile() {
        // the reference smile sits within 5e-3 of the exact model smile
        let p = HestonParams::default();
        for (k, iv_pub) in [(0.6, 0.3999), (0.8, 0.3383), (1.0, 0.2795), (1.2, 0.2273), (1.4, 0.1927), (1.6, 0.1803)] {
            let c = heston_call_cos(k, 1.0, &p, 256, 12.0).unwrap();
            let iv = bs_implied_vol(c, 1.0, k, 1.0).unwrap();
            assert_abs_diff_eq!(iv, iv_pub, epsilon = 5e-3);
        }
    }

    #[test]
    fn doubling_terms_is_stable() {
        let p = HestonParams::default();
        let strikes: Vec<f64> = (0..=20).map(|i| 0.5 + 0.05 * i as f64).collect();
        for t in [0.1, 1.0, 4.0] {
            let (_, change) = heston_calls_with_check(&strikes, t, &p, &CosConfig::default()).unwrap();
            assert!(change < 1e-8, "t={t}: doubling change {change}");
        }
    }

    #[test]
    fn put_call_parity_from_independent_expansions() {
        let p = HestonParams::default();
        let exp = CosExpansion::heston(1.0, &p, &CosConfig::default()).unwrap();
        for k in [0.5, 0.8, 1.0, 1.3, 2.0] {
            let call = exp.price_raw(OptionKind::Call, k);
            let put = exp.price_raw(OptionKind::Put, k);
            assert_abs_diff_eq!(call - put, p.s0 - k, epsilon = 1e-6);
        }
    }

    #[test]
    fn rejects_invalid_inputs() {
        let p = HestonParams::default();
        assert!(heston_call_cos(1.0, 0.0, &p, 256, 12.0).is_err());
        assert!(heston_call_cos(1.0, 1.0, &p, 32, 12.0).is_err());
        let bad = HestonParams { rho: -1.5, ..p };
        assert!(heston_call_cos(1.0, 1.0, &bad, 256, 12.0).is_err());
    }
}
