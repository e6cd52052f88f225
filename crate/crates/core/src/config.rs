//! Self-describing experiment configuration (TOML, strict schema).
//!
//! Every artifact written by the tools starts with the resolved config as
//! `# ` comment lines; stripping the prefix gives a config that reproduces
//! the artifact.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{LsvError, Result};
use crate::experiment::Experiment;
use crate::market::{uniform_grid, CosConfig, HestonParams, MarketSetting};
use crate::simulator::{CirParams, SimConfig};
use crate::validation::{PriceEstimator, SweepKind};

/// Which synthetic market drives the experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SettingName {
    Bs,
    Heston,
}

impl std::str::FromStr for SettingName {
    type Err = LsvError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bs" => Ok(SettingName::Bs),
            "heston" => Ok(SettingName::Heston),
            _ => Err(LsvError::Config(format!("setting must be `bs` or `heston`, got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlackScholesSection {
    pub s0: f64,
    pub sigma: f64,
}

impl Default for BlackScholesSection {
    fn default() -> Self {
        Self { s0: 1.0, sigma: 0.3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Strikes of the smile table at the horizon.
    pub strikes: Vec<f64>,
    /// Also dump every price path (`paths.bin`).
    pub record_paths: bool,
    /// Estimator of model call prices for the smile.
    pub estimator: PriceEstimator,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            strikes: uniform_grid(0.6, 1.6, 0.1),
            record_paths: false,
            estimator: PriceEstimator::Parity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub kind: SweepKind,
    /// Defaults depend on `kind`, see [`SweepSection::resolved_grid`].
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
    pub reps: usize,
    /// Defaults to the top-level seed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed_base: Option<u64>,
    /// Euler steps used by sweep runs.
    pub n_steps: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            kind: SweepKind::Lambda,
            grid: None,
            reps: 20,
            seed_base: None,
            n_steps: 200,
        }
    }
}

impl SweepSection {
    pub fn resolved_grid(&self) -> Vec<f64> {
        if let Some(g) = &self.grid {
            return g.clone();
        }
        match self.kind {
            SweepKind::Lambda => vec![1.0, 1e-3, 1e-6, 1e-9],
            SweepKind::NParticles => (0..7).map(|k| 250.0 * f64::from(1u32 << k)).collect(),
            SweepKind::NBasis => vec![5.0, 20.0, 50.0, 80.0, 100.0],
            SweepKind::TruncationPair => vec![1e-1, 1e-2, 1e-3, 1e-4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QvSection {
    pub strikes: Vec<f64>,
    /// Particle count of the QV runs; defaults to `simulation.n_particles`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_particles: Option<usize>,
}

impl Default for QvSection {
    fn default() -> Self {
        Self {
            strikes: uniform_grid(0.0, 0.2, 0.005),
            n_particles: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub setting: SettingName,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub simulation: SimConfig,
    #[serde(default)]
    pub cir: CirParams,
    #[serde(default)]
    pub black_scholes: BlackScholesSection,
    #[serde(default)]
    pub heston: HestonParams,
    #[serde(default)]
    pub cos: CosConfig,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub qv: QvSection,
}

impl ExperimentConfig {
    /// All defaults for a setting.
    pub fn new(setting: SettingName) -> Self {
        Self {
            setting,
            seed: 0,
            out: None,
            simulation: SimConfig::default(),
            cir: CirParams::default(),
            black_scholes: BlackScholesSection::default(),
            heston: HestonParams::default(),
            cos: CosConfig::default(),
            output: OutputSection::default(),
            sweep: SweepSection::default(),
            qv: QvSection::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| LsvError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LsvError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Recover the config embedded in an artifact's leading `#` lines.
    pub fn from_header(artifact: &str) -> Result<Self> {
        let body: String = artifact
            .lines()
            .take_while(|l| l.starts_with('#'))
            .map(|l| l.strip_prefix("# ").unwrap_or(&l[1..]))
            .collect::<Vec<_>>()
            .join("\n");
        Self::from_toml_str(&body)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    /// Header lines for an artifact: a tag line, then the resolved config.
    /// Writers prefix each with `# `.
    pub fn header_lines(&self, artifact: &str) -> Vec<String> {
        let mut lines = vec![format!("# lsv {} artifact: {artifact}", env!("CARGO_PKG_VERSION"))];
        lines.extend(self.to_toml().lines().map(str::to_owned));
        lines
    }

    pub fn market(&self) -> MarketSetting {
        match self.setting {
            SettingName::Bs => MarketSetting::BlackScholes {
                s0: self.black_scholes.s0,
                sigma: self.black_scholes.sigma,
            },
            SettingName::Heston => MarketSetting::Heston(self.heston),
        }
    }

    pub fn experiment(&self) -> Experiment {
        let mut sim = self.simulation;
        sim.seed = self.seed;
        Experiment {
            setting: self.market(),
            sim,
            cir: self.cir,
            cos: self.cos,
        }
    }

    /// Full schema check; every failure is reported as a config error.
    pub fn validate(&self) -> Result<()> {
        let as_config = |e: LsvError| match e {
            LsvError::Config(_) => e,
            other => LsvError::Config(other.to_string()),
        };
        self.experiment().validate().map_err(as_config)?;
        let positive = |name: &str, v: &[f64]| {
            if v.is_empty() || v.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
                return Err(LsvError::Config(format!("{name} must be a nonempty list of finite values >= 0")));
            }
            if v.windows(2).any(|w| w[1] <= w[0]) {
                return Err(LsvError::Config(format!("{name} must be strictly increasing")));
            }
            Ok(())
        };
        positive("output.strikes", &self.output.strikes)?;
        if self.output.strikes[0] <= 0.0 {
            return Err(LsvError::Config("output.strikes must be > 0".into()));
        }
        positive("qv.strikes", &self.qv.strikes)?;
        if self.sweep.reps == 0 || self.sweep.n_steps == 0 {
            return Err(LsvError::Config("sweep.reps and sweep.n_steps must be >= 1".into()));
        }
        let grid = self.sweep.resolved_grid();
        if grid.is_empty() {
            return Err(LsvError::Config("sweep.grid must be nonempty".into()));
        }
        let mut probe = self.experiment();
        for v in grid {
            self.sweep.kind.apply(&mut probe, v).map_err(as_config)?;
        }
        if self.qv.n_particles == Some(0) {
            return Err(LsvError::Config("qv.n_particles must be >= 1".into()));
        }
        Ok(())
    }
}
