//! End-to-end pipeline shared by the CLI, the Python bindings and the
//! acceptance tests: market surface -> Dupire local vol -> particles.

use crate::error::Result;
use crate::market::{
    build_market_surface, default_strike_grid, dupire_local_vol, dupire_maturity_grid, CosConfig, DupireReport,
    LocalVolSurface, MarketSetting, MarketSurface,
};
use crate::simulator::{simulate_local_vol_reference, simulate_particle_system, CirParams, PathRecord, SimConfig, SimOptions, SimOutput};

/// Relative offset of the extra maturities used for time differences.
pub const DUPIRE_TIME_OFFSET: f64 = 0.1;

/// Everything needed to run one calibration experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Experiment {
    pub setting: MarketSetting,
    pub sim: SimConfig,
    pub cir: CirParams,
    pub cos: CosConfig,
}

impl Experiment {
    pub fn new(setting: MarketSetting) -> Self {
        Self {
            setting,
            sim: SimConfig::default(),
            cir: CirParams::default(),
            cos: CosConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.setting.validate()?;
        self.sim.validate()?;
        self.cir.validate()?;
        self.cos.validate()
    }
}

/// Local vol on the Euler grid plus the surface it came from.
#[derive(Debug, Clone)]
pub struct Calibration {
    pub surface: MarketSurface,
    pub local_vol: LocalVolSurface,
    pub report: DupireReport,
}

/// Price the dense surface at `t, t -/+ eta` around every Euler time and
/// extract Dupire local vol on the Euler grid and interior strikes.
pub fn calibrate(setting: &MarketSetting, sim: &SimConfig, cos: &CosConfig) -> Result<Calibration> {
    sim.validate()?;
    let times = sim.step_times();
    let strikes = default_strike_grid();
    let surface = build_market_surface(setting, &dupire_maturity_grid(&times, DUPIRE_TIME_OFFSET), &strikes, cos)?;
    let (local_vol, report) = dupire_local_vol(&surface, &times, &strikes[1..strikes.len() - 1])?;
    Ok(Calibration {
        surface,
        local_vol,
        report,
    })
}

/// Run the LSV particle system for an experiment on a prepared local vol.
pub fn run_lsv(exp: &Experiment, lv: &LocalVolSurface, opts: &SimOptions) -> Result<SimOutput> {
    exp.validate()?;
    simulate_particle_system(&exp.sim, &exp.cir, lv, exp.setting.s0(), exp.cir.y0, opts)
}

/// Run the local-vol reference for an experiment.
pub fn run_local_vol(exp: &Experiment, lv: &LocalVolSurface, opts: &SimOptions) -> Result<(Vec<f64>, Option<PathRecord>)> {
    exp.validate()?;
    simulate_local_vol_reference(&exp.sim, lv, exp.setting.s0(), opts)
}
