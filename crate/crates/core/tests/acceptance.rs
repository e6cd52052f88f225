//! The ten acceptance criteria at full scale. Prints one PASS/FAIL line
//! per criterion (straight to stderr, so it shows without --nocapture) and
//! fails if any criterion fails.

mod common;

use std::io::Write;
use std::time::Instant;

use lsv_core::checks::{self, CheckPlan, Outcome};
use lsv_core::market::{CosConfig, LocalVolSurface, MarketSetting};
use lsv_core::simulator::{simulate_particle_system, CirParams, SimConfig, SimOptions};

fn report(o: &Outcome) {
    let mut err = std::io::stderr();
    let _ = writeln!(err, "{o}");
}

fn small_instance(plan: &CheckPlan) -> Outcome {
    let start = Instant::now();
    let cfg = SimConfig {
        n_particles: 3,
        n_steps: 2,
        lambda: 1e-3,
        n_landmarks: 3,
        seed: plan.seed,
        ..SimConfig::default()
    };
    let cir = CirParams::default();
    let lv = LocalVolSurface::constant(cfg.step_times(), vec![0.5, 1.0, 1.5], 0.3).unwrap();
    let out = simulate_particle_system(&cfg, &cir, &lv, 1.0, cir.y0, &SimOptions::default()).unwrap();
    let (bx, by) = common::brute_force_particles(&cfg, &cir, 0.3, 1.0);
    let gap = out
        .state
        .x
        .iter()
        .zip(&bx)
        .chain(out.state.y.iter().zip(&by))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Outcome {
        id: 9,
        name: "small_instance_oracle",
        passed: gap <= 1e-12,
        detail: format!("engine {:?} vs brute force {:?}: max gap {gap:.3e} <= 1e-12", out.state.x, bx),
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn cos_vs_mc(plan: &CheckPlan) -> Outcome {
    let start = Instant::now();
    let strikes = [0.8, 1.0, 1.2];
    let setting = MarketSetting::heston_default();
    let cos = CosConfig::default();
    let (base, _) = setting.call_row(1.0, &strikes, &cos).unwrap();
    let (doubled, _) = setting.call_row(1.0, &strikes, &cos.doubled()).unwrap();
    let change = base.iter().zip(&doubled).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let mc = common::heston_euler_mc(2.19, 0.17023, 1.04, -0.83, 0.0045, 1.0, &strikes, plan.mc_paths, plan.mc_steps, plan.seed);
    let z: Vec<f64> = (0..3).map(|j| (base[j] - mc.prices[j]).abs() / mc.std_errors[j]).collect();
    Outcome {
        id: 10,
        name: "cos_vs_monte_carlo",
        passed: z.iter().all(|z| *z <= 3.0) && change < 1e-8,
        detail: format!(
            "COS {base:.6?} vs MC {:.6?} ({} paths, {} steps), |gap|/SE {z:.2?}; doubling terms changes prices by {change:.2e}",
            mc.prices, plan.mc_paths, plan.mc_steps
        ),
        seconds: start.elapsed().as_secs_f64(),
    }
}

#[test]
fn acceptance_criteria() {
    let plan = CheckPlan::default();
    let mut outcomes = Vec::new();
    for id in 1..=8 {
        let o = checks::run(id, &plan);
        report(&o);
        outcomes.push(o);
    }
    for o in [small_instance(&plan), cos_vs_mc(&plan)] {
        report(&o);
        outcomes.push(o);
    }
    let failed: Vec<u8> = outcomes.iter().filter(|o| !o.passed).map(|o| o.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
