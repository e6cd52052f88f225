//! Zero-rate Black-Scholes pricing and implied volatility inversion.

use statrs::function::erf::erfc;

use crate::error::{LsvError, Result};

/// Bracket searched by the implied-volatility solver.
pub const IV_LOWER: f64 = 1e-6;
pub const IV_UPPER: f64 = 5.0;

#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Call price with zero interest rate.
pub fn bs_call_price(s0: f64, k: f64, t: f64, sigma: f64) -> Result<f64> {
    if k < 0.0 || k.is_nan() {
        return Err(LsvError::contract(format!("strike must be >= 0, got {k}")));
    }
    if s0 < 0.0 || t < 0.0 || sigma < 0.0 || s0.is_nan() || t.is_nan() || sigma.is_nan() {
        return Err(LsvError::contract(format!(
            "bs_call_price needs s0, t, sigma >= 0 (s0={s0}, t={t}, sigma={sigma})"
        )));
    }
    let intrinsic = (s0 - k).max(0.0);
    if k == 0.0 {
        return Ok(s0);
    }
    let sd = sigma * t.sqrt();
    if sd == 0.0 || s0 == 0.0 {
        return Ok(intrinsic);
    }
    let d1 = ((s0 / k).ln() + 0.5 * sd * sd) / sd;
    let d2 = d1 - sd;
    let price = s0 * norm_cdf(d1) - k * norm_cdf(d2);
    Ok(price.clamp(intrinsic, s0))
}

/// Brent's method on `[a, b]`; `f(a)` and `f(b)` must bracket a root.
pub(crate) fn brent<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, xtol: f64, max_iter: usize) -> Option<f64> {
    let mut fa = f(a);
    let mut fb = f(b);
    if fa == 0.0 {
        return Some(a);
    }
    if fb == 0.0 {
        return Some(b);
    }
    if fa.signum() == fb.signum() {
        return None;
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for _ in 0..max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * xtol;
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb == 0.0 {
            return Some(b);
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            // inverse quadratic or secant step
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b);
    }
    Some(b)
}

/// Implied volatility of a zero-rate call, searched on `[1e-6, 5]`.
pub fn bs_implied_vol(price: f64, s0: f64, k: f64, t: f64) -> Result<f64> {
    if !(t > 0.0) || !(s0 > 0.0) || !(k >= 0.0) {
        return Err(LsvError::contract(format!(
            "bs_implied_vol needs t > 0, s0 > 0, k >= 0 (t={t}, s0={s0}, k={k})"
        )));
    }
    let lower = (s0 - k).max(0.0);
    let upper = s0;
    let no_solution = || LsvError::NoImpliedVol { price, lower, upper };
    if !(price > lower && price < upper) {
        return Err(no_solution());
    }
    let objective = |sigma: f64| bs_call_price(s0, k, t, sigma).unwrap_or(f64::NAN) - price;
    let root = brent(objective, IV_LOWER, IV_UPPER, 1e-15, 200).ok_or_else(no_solution)?;
    Ok(root)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn call_price_examples() {
        assert_eq!(bs_call_price(1.0, 0.0, 1.0, 0.3).unwrap(), 1.0);
        assert_eq!(bs_call_price(1.0, 1.0, 0.0, 0.3).unwrap(), 0.0);
        // 2 Phi(0.15) - 1
        assert_abs_diff_eq!(bs_call_price(1.0, 1.0, 1.0, 0.3).unwrap(), 0.119_235_4, epsilon = 5e-8);
        assert!(bs_call_price(1.0, -0.1, 1.0, 0.3).is_err());
    }

    #[test]
    fn norm_cdf_reference_values() {
        // Phi(0.15), Phi(-2), Phi(3); erfc is good to ~1e-12 absolute
        assert_abs_diff_eq!(norm_cdf(0.15), 0.559_617_692_370_243, epsilon = 1e-11);
        assert_abs_diff_eq!(norm_cdf(-2.0), 0.022_750_131_948_179, epsilon = 1e-11);
        assert_abs_diff_eq!(norm_cdf(3.0), 0.998_650_101_968_370, epsilon = 1e-11);
    }

    #[test]
    fn implied_vol_round_trips() {
        for (k, t, sigma) in [(1.0, 1.0, 0.3), (0.8, 2.0, 0.45), (1.3, 0.25, 0.12), (0.6, 1.0, 0.4)] {
            let p = bs_call_price(1.0, k, t, sigma).unwrap();
            let iv = bs_implied_vol(p, 1.0, k, t).unwrap();
            assert_abs_diff_eq!(iv, sigma, epsilon = 1e-8);
            let back = bs_call_price(1.0, k, t, iv).unwrap();
            assert!((back - p).abs() <= 1e-10);
        }
    }

    #[test]
    fn implied_vol_rejects_out_of_bounds_prices() {
        assert!(matches!(
            bs_implied_vol(1.01, 1.0, 1.0, 1.0),
            Err(LsvError::NoImpliedVol { .. })
        ));
        assert!(bs_implied_vol(0.19, 1.0, 0.8, 1.0).is_err());
        assert!(bs_implied_vol(0.1, 1.0, 1.0, 0.0).is_err());
    }
}
