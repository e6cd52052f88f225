use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use lsv_core::checks::{self, CheckPlan};
use lsv_core::config::{ExperimentConfig, SettingName};
use lsv_core::experiment::{calibrate, run_local_vol, run_lsv};
use lsv_core::market::{build_market_surface, default_strike_grid, sig9, uniform_grid};
use lsv_core::plot::{Plot, Series};
use lsv_core::simulator::{SimOptions, SimOutput};
use lsv_core::validation::{convergence_fit, iv_error_table, qv_option_prices, qv_separation, run_sweep, QvCurve, SweepKind};
use lsv_core::{LsvError, Result};

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_CHECK: u8 = 4;

/// Output directory used when neither `--out` nor the config sets one.
const OUT_DIR_ENV: &str = "LSV_OUT_DIR";

#[derive(Parser)]
#[command(name = "lsv", version, about = "Regularized McKean-Vlasov particle calibration of LSV models", allow_negative_numbers = true)]
struct Cli {
    /// Cap on worker threads (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Price the synthetic market and extract Dupire local vol.
    Surface(Common),
    /// Calibrate and run the particle system; write terminal state and smile.
    Simulate(Common),
    /// Run a parameter sweep of the at-the-money implied-vol error.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Overrides `sweep.kind`.
        #[arg(long, value_parser = parse_kind)]
        kind: Option<SweepKind>,
        /// Overrides `sweep.reps`.
        #[arg(long)]
        reps: Option<usize>,
    },
    /// Prices of options on realized quadratic variation.
    Qv(Common),
    /// Run the acceptance criteria; exits with 4 if any fails.
    Check {
        /// Comma-separated criterion numbers (default: all).
        #[arg(long, value_delimiter = ',')]
        only: Vec<u8>,
        /// Tiny plan that only exercises the plumbing.
        #[arg(long)]
        smoke: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Args, Clone)]
#[command(allow_negative_numbers = true)]
struct Common {
    /// TOML experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_setting)]
    setting: Option<SettingName>,
    #[arg(long)]
    n_particles: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    n_landmarks: Option<usize>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    eps_cir: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_setting(s: &str) -> std::result::Result<SettingName, String> {
    s.parse().map_err(|e: LsvError| e.to_string())
}

fn parse_kind(s: &str) -> std::result::Result<SweepKind, String> {
    match s {
        "lambda" => Ok(SweepKind::Lambda),
        "n_particles" => Ok(SweepKind::NParticles),
        "n_basis" => Ok(SweepKind::NBasis),
        "truncation_pair" => Ok(SweepKind::TruncationPair),
        _ => Err(format!("unknown sweep kind `{s}`")),
    }
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, self.setting) {
            (Some(path), _) => ExperimentConfig::load(path)?,
            (None, Some(s)) => ExperimentConfig::new(s),
            (None, None) => return Err(LsvError::Config("either --config or --setting is required".into())),
        };
        if let Some(s) = self.setting {
            cfg.setting = s;
        }
        if let Some(v) = self.n_particles {
            cfg.simulation.n_particles = v;
        }
        if let Some(v) = self.lambda {
            cfg.simulation.lambda = v;
        }
        if let Some(v) = self.n_landmarks {
            cfg.simulation.n_landmarks = v;
        }
        if let Some(v) = self.eps {
            cfg.simulation.eps = v;
        }
        if let Some(v) = self.eps_cir {
            cfg.cir.floor = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.out {
            cfg.out = Some(v.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn out_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = cfg
        .out
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    eprintln!("writing {}", path.display());
    Ok(BufWriter::new(File::create(path)?))
}

fn write_svg(dir: &Path, name: &str, plot: &Plot, header: &[String]) -> Result<()> {
    let mut f = create(dir, name)?;
    f.write_all(plot.to_svg(header)?.as_bytes())?;
    f.flush()?;
    Ok(())
}

fn cmd_surface(cfg: &ExperimentConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let exp = cfg.experiment();
    let header = cfg.header_lines("surface");
    let horizon = exp.sim.horizon;
    let maturities = uniform_grid(0.1, horizon, 0.1);
    let surface = build_market_surface(&exp.setting, &maturities, &default_strike_grid(), &exp.cos)?;
    let mut f = create(&dir, "surface.csv")?;
    surface.write_csv(&mut f, &header)?;
    f.flush()?;

    let cal = calibrate(&exp.setting, &exp.sim, &exp.cos)?;
    let mut f = create(&dir, "dupire.csv")?;
    cal.local_vol.write_csv(&mut f, &cfg.header_lines("dupire"))?;
    f.flush()?;
    let r = &cal.report;
    eprintln!(
        "dupire: {} nodes, {} clamped, {} filled, band clamp fraction {:.4}; COS doubling change {:.2e}",
        r.nodes,
        r.clamped,
        r.filled,
        r.band_clamp_fraction(),
        cal.surface.cos_doubling_change
    );
    Ok(())
}

fn write_diagnostics(dir: &Path, out: &SimOutput, header: &[String]) -> Result<()> {
    let mut f = create(dir, "diagnostics.csv")?;
    for line in header {
        writeln!(f, "# {line}")?;
    }
    writeln!(f, "step,n_landmarks,coeff_norm,eps_floor_fraction,overshoot_fraction,price_floor_fraction,jittered")?;
    for d in &out.diagnostics {
        writeln!(
            f,
            "{},{},{},{},{},{},{}",
            d.step,
            d.n_landmarks,
            sig9(d.coeff_norm),
            sig9(d.eps_floor_fraction),
            sig9(d.overshoot_fraction),
            sig9(d.price_floor_fraction),
            u8::from(d.jittered)
        )?;
    }
    f.flush()?;
    Ok(())
}

fn cmd_simulate(cfg: &ExperimentConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let exp = cfg.experiment();
    let started = Instant::now();
    let cal = calibrate(&exp.setting, &exp.sim, &exp.cos)?;
    eprintln!("calibrated in {:.1}s", started.elapsed().as_secs_f64());
    let opts = SimOptions {
        record_paths: cfg.output.record_paths,
        ..SimOptions::default()
    };
    let out = run_lsv(&exp, &cal.local_vol, &opts)?;
    eprintln!("simulated in {:.1}s", started.elapsed().as_secs_f64());

    let mut f = create(&dir, "terminal.csv")?;
    out.state.write_csv(&mut f, &cfg.header_lines("terminal"))?;
    f.flush()?;
    write_diagnostics(&dir, &out, &cfg.header_lines("diagnostics"))?;
    if let Some(rec) = &out.record {
        let mut f = create(&dir, "paths.bin")?;
        rec.write_binary(&mut f, &cfg.header_lines("paths"))?;
        f.flush()?;
    }

    let strikes = &cfg.output.strikes;
    let table = iv_error_table(
        &exp.setting,
        &exp.cos,
        exp.sim.horizon,
        strikes,
        std::slice::from_ref(&out.state.x),
        cfg.output.estimator,
    )?;
    let header = cfg.header_lines("smile");
    let mut f = create(&dir, "smile.csv")?;
    table.write_csv(&mut f, &header)?;
    f.flush()?;
    let model: Vec<f64> = table.rows.iter().map(|r| r.model_iv.unwrap_or(f64::NAN)).collect();
    let truth: Vec<f64> = table.rows.iter().map(|r| r.true_iv).collect();
    let plot = Plot {
        title: format!("Implied volatility at T = {}", exp.sim.horizon),
        x_label: "strike".into(),
        y_label: "implied volatility".into(),
        series: vec![Series::new("market", strikes.clone(), truth), Series::new("particle model", strikes.clone(), model)],
        ..Plot::default()
    };
    write_svg(&dir, "smile.svg", &plot, &header)?;
    if let Some(e) = table.mean_abs_error() {
        eprintln!("mean |IV error| {e:.5}, {} failed inversions", table.failures());
    }
    Ok(())
}

fn cmd_sweep(cfg: &ExperimentConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let mut exp = cfg.experiment();
    exp.sim.n_steps = cfg.sweep.n_steps;
    let kind = cfg.sweep.kind;
    let grid = cfg.sweep.resolved_grid();
    let seed_base = cfg.sweep.seed_base.unwrap_or(cfg.seed);
    let lv = calibrate(&exp.setting, &exp.sim, &exp.cos)?.local_vol;
    let res = run_sweep(kind, &grid, &exp, cfg.sweep.reps, seed_base, Some(&lv))?;
    let name = kind.name();
    let header = cfg.header_lines(&format!("sweep {name}"));
    let mut f = create(&dir, &format!("sweep_{name}.csv"))?;
    res.write_csv(&mut f, &header)?;
    f.flush()?;

    let mut series = vec![Series::new("mean |ATM IV error|", res.values.clone(), res.mean_err.clone()).with_errors(res.std_err.clone())];
    if kind == SweepKind::NParticles {
        if let Ok(fit) = convergence_fit(&res.values, &res.mean_err) {
            eprintln!("fit: error = {:.4} N^{:.4} (R^2 {:.3})", fit.c, fit.slope, fit.r_squared);
            let line = res.values.iter().map(|n| fit.c * n.powf(fit.slope)).collect();
            series.push(Series::new(format!("{:.3} N^{:.3}", fit.c, fit.slope), res.values.clone(), line));
        }
    }
    let plot = Plot {
        title: format!("ATM implied-vol error against {name}"),
        x_label: name.into(),
        y_label: "mean absolute IV error".into(),
        log_x: true,
        log_y: kind == SweepKind::NParticles,
        series,
    };
    write_svg(&dir, &format!("sweep_{name}.svg"), &plot, &header)?;
    for (v, (m, s)) in res.values.iter().zip(res.mean_err.iter().zip(&res.std_err)) {
        eprintln!("{name} = {v:e}: {m:.5} +- {s:.5}");
    }
    Ok(())
}

fn cmd_qv(cfg: &ExperimentConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let mut exp = cfg.experiment();
    if let Some(n) = cfg.qv.n_particles {
        exp.sim.n_particles = n;
        exp.sim.n_landmarks = exp.sim.n_landmarks.min(n);
    }
    let strikes = &cfg.qv.strikes;
    let lv = calibrate(&exp.setting, &exp.sim, &exp.cos)?.local_vol;
    let lsv = |seed: u64| -> Result<QvCurve> {
        let mut e = exp;
        e.sim.seed = seed;
        let rec = run_lsv(&e, &lv, &SimOptions::with_qv())?.record.expect("qv recorded");
        qv_option_prices(&rec.qv, strikes)
    };
    let a = lsv(exp.sim.seed)?;
    let b = lsv(exp.sim.seed + 1)?;
    let (_, rec) = run_local_vol(&exp, &lv, &SimOptions::with_qv())?;
    let reference = qv_option_prices(&rec.expect("qv recorded").qv, strikes)?;
    let closed = match exp.setting {
        lsv_core::market::MarketSetting::BlackScholes { sigma, .. } => {
            let qv = sigma * sigma * exp.sim.horizon;
            Some(QvCurve::exact(strikes, |k| (qv - k).max(0.0)))
        }
        _ => None,
    };

    let header = cfg.header_lines("qv");
    let mut f = create(&dir, "qv.csv")?;
    for line in &header {
        writeln!(f, "# {line}")?;
    }
    writeln!(f, "K,lsv,lsv_se,lsv_alt,lsv_alt_se,local_vol,local_vol_se,closed_form")?;
    for j in 0..strikes.len() {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{}",
            sig9(strikes[j]),
            sig9(a.prices[j]),
            sig9(a.std_errors[j]),
            sig9(b.prices[j]),
            sig9(b.std_errors[j]),
            sig9(reference.prices[j]),
            sig9(reference.std_errors[j]),
            closed.as_ref().map_or_else(|| "nan".into(), |c| sig9(c.prices[j]))
        )?;
    }
    f.flush()?;

    let mut series = vec![
        Series::new(format!("LSV seed {}", exp.sim.seed), strikes.clone(), a.prices.clone()).with_errors(a.std_errors.clone()),
        Series::new(format!("LSV seed {}", exp.sim.seed + 1), strikes.clone(), b.prices.clone()).with_errors(b.std_errors.clone()),
        Series::new("local vol", strikes.clone(), reference.prices.clone()).with_errors(reference.std_errors.clone()),
    ];
    if let Some(c) = &closed {
        series.push(Series::new("closed form", strikes.clone(), c.prices.clone()));
    }
    let plot = Plot {
        title: "Options on realized quadratic variation".into(),
        x_label: "strike".into(),
        y_label: "price".into(),
        series,
        ..Plot::default()
    };
    write_svg(&dir, "qv.svg", &plot, &header)?;

    let vs_ref = qv_separation(&a, closed.as_ref().unwrap_or(&reference))?;
    let seeds = qv_separation(&a, &b)?;
    eprintln!(
        "LSV vs {}: max gap {:.5} at K={:.3}, {:.1} pooled SE at K={:.3}",
        if closed.is_some() { "closed form" } else { "local vol" },
        vs_ref.gap,
        vs_ref.strike,
        vs_ref.z_max,
        vs_ref.z_strike
    );
    eprintln!("seed vs seed: {:.2} pooled SE at K={:.3}", seeds.z_max, seeds.z_strike);
    Ok(())
}

fn cmd_check(only: &[u8], smoke: bool, seed: Option<u64>) -> ExitCode {
    let mut plan = if smoke { CheckPlan::smoke() } else { CheckPlan::default() };
    if let Some(s) = seed {
        plan.seed = s;
    }
    let ids: Vec<u8> = if only.is_empty() { checks::ALL.to_vec() } else { only.to_vec() };
    if let Some(bad) = ids.iter().find(|id| !checks::ALL.contains(id)) {
        return exit_for(&LsvError::Config(format!("no criterion {bad}; valid ids are 1-{}", checks::ALL.len())));
    }
    let mut failed = 0;
    for id in ids {
        let o = checks::run(id, &plan);
        println!("{o}");
        failed += usize::from(!o.passed);
    }
    if failed > 0 {
        eprintln!("{failed} criteria failed");
        ExitCode::from(EXIT_CHECK)
    } else {
        ExitCode::SUCCESS
    }
}

fn exit_for(e: &LsvError) -> ExitCode {
    eprintln!("error: {e}");
    match e {
        LsvError::Config(_) => ExitCode::from(EXIT_CONFIG),
        _ => ExitCode::from(EXIT_NUMERICAL),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            return exit_for(&LsvError::Config("--threads must be >= 1".into()));
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("warning: could not size the thread pool: {e}");
        }
    }
    let run = |common: &Common, f: fn(&ExperimentConfig) -> Result<()>| match common.resolve() {
        Err(e) => exit_for(&e),
        Ok(cfg) => match f(&cfg) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => exit_for(&e),
        },
    };
    match &cli.command {
        Command::Surface(c) => run(c, cmd_surface),
        Command::Simulate(c) => run(c, cmd_simulate),
        Command::Qv(c) => run(c, cmd_qv),
        Command::Sweep { common, kind, reps } => match common.resolve() {
            Err(e) => exit_for(&e),
            Ok(mut cfg) => {
                if let Some(k) = kind {
                    cfg.sweep.kind = *k;
                }
                if let Some(r) = reps {
                    cfg.sweep.reps = *r;
                }
                if let Err(e) = cfg.validate() {
                    return exit_for(&e);
                }
                match cmd_sweep(&cfg) {
                    Ok(()) => ExitCode::SUCCESS,
                    Err(e) => exit_for(&e),
                }
            }
        },
        Command::Check { only, smoke, seed } => cmd_check(only, *smoke, *seed),
    }
}
