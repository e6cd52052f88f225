//! Python bindings: configs go in as TOML text, results come back as plain
//! lists and tuples.

use lsv_core::checks::{self, CheckPlan};
use lsv_core::config::ExperimentConfig;
use lsv_core::experiment::{calibrate, run_lsv};
use lsv_core::market::{bs_implied_vol, heston_call_cos, HestonParams};
use lsv_core::simulator::SimOptions;
use lsv_core::validation::{iv_error_table, qv_option_prices};
use lsv_core::LsvError;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: LsvError) -> PyErr {
    match e {
        LsvError::Config(_) | LsvError::Contract(_) | LsvError::NonFinite(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn load(config: &str) -> PyResult<ExperimentConfig> {
    let cfg = ExperimentConfig::from_toml_str(config).map_err(py_err)?;
    cfg.validate().map_err(py_err)?;
    Ok(cfg)
}

/// Validate a TOML config and return it with every default filled in.
#[pyfunction]
fn resolve_config(config: &str) -> PyResult<String> {
    Ok(load(config)?.to_toml())
}

/// Black-Scholes implied volatility of a zero-rate call.
#[pyfunction]
fn implied_vol(price: f64, s0: f64, strike: f64, t: f64) -> PyResult<f64> {
    bs_implied_vol(price, s0, strike, t).map_err(py_err)
}

/// Heston call by COS with the default parameters unless given.
#[pyfunction]
#[pyo3(signature = (strike, t, kappa=2.19, theta=0.17023, xi=1.04, rho=-0.83, v0=0.0045, n_terms=256, width=12.0))]
#[allow(clippy::too_many_arguments)]
fn heston_call(strike: f64, t: f64, kappa: f64, theta: f64, xi: f64, rho: f64, v0: f64, n_terms: usize, width: f64) -> PyResult<f64> {
    let p = HestonParams {
        kappa,
        theta,
        xi,
        rho,
        v0,
        s0: 1.0,
    };
    heston_call_cos(strike, t, &p, n_terms, width).map_err(py_err)
}

/// Calibrate and run the particle system. Returns `(x, y, smile)` where
/// `smile` holds `(K, true_iv, model_iv)` rows at `output.strikes`.
#[pyfunction]
fn simulate(py: Python<'_>, config: &str) -> PyResult<(Vec<f64>, Vec<f64>, Vec<(f64, f64, f64)>)> {
    let cfg = load(config)?;
    py.detach(|| {
        let exp = cfg.experiment();
        let cal = calibrate(&exp.setting, &exp.sim, &exp.cos)?;
        let out = run_lsv(&exp, &cal.local_vol, &SimOptions::default())?;
        let table = iv_error_table(
            &exp.setting,
            &exp.cos,
            exp.sim.horizon,
            &cfg.output.strikes,
            std::slice::from_ref(&out.state.x),
            cfg.output.estimator,
        )?;
        let smile = table
            .rows
            .iter()
            .map(|r| (r.strike, r.true_iv, r.model_iv.unwrap_or(f64::NAN)))
            .collect();
        Ok((out.state.x, out.state.y, smile))
    })
    .map_err(py_err)
}

/// Prices of options on realized quadratic variation at `qv.strikes`,
/// as `(K, price, std_error)` rows.
#[pyfunction]
fn qv_curve(py: Python<'_>, config: &str) -> PyResult<Vec<(f64, f64, f64)>> {
    let cfg = load(config)?;
    py.detach(|| {
        let mut exp = cfg.experiment();
        if let Some(n) = cfg.qv.n_particles {
            exp.sim.n_particles = n;
            exp.sim.n_landmarks = exp.sim.n_landmarks.min(n);
        }
        let cal = calibrate(&exp.setting, &exp.sim, &exp.cos)?;
        let rec = run_lsv(&exp, &cal.local_vol, &SimOptions::with_qv())?
            .record
            .expect("qv recorded");
        let c = qv_option_prices(&rec.qv, &cfg.qv.strikes)?;
        Ok((0..c.strikes.len()).map(|j| (c.strikes[j], c.prices[j], c.std_errors[j])).collect())
    })
    .map_err(py_err)
}

/// Run one acceptance criterion; `smoke` uses a tiny plan.
#[pyfunction]
#[pyo3(signature = (id, smoke=false))]
fn run_check(py: Python<'_>, id: u8, smoke: bool) -> (bool, String) {
    let plan = if smoke { CheckPlan::smoke() } else { CheckPlan::default() };
    let o = py.detach(|| checks::run(id, &plan));
    (o.passed, o.to_string())
}

#[pymodule]
fn lsv(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(resolve_config, m)?)?;
    m.add_function(wrap_pyfunction!(implied_vol, m)?)?;
    m.add_function(wrap_pyfunction!(heston_call, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(qv_curve, m)?)?;
    m.add_function(wrap_pyfunction!(run_check, m)?)?;
    Ok(())
}
