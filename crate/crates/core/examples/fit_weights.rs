//! Fit the unit, time and cross-sectional weights on a simulated panel and
//! show how they combine into the RC-SDiD cell weights.

use rcsdid::dgp::{draw_group_params, simulate_counts, simulate_panel, ScenarioConfig};
use rcsdid::estimators::{fit_sdid_weights, EstimatorOptions, WeightSet};
use rcsdid::rng::StreamKey;
use rcsdid::weights::cross_sectional_weights;

fn main() -> rcsdid::Result<()> {
    let cfg = ScenarioConfig {
        k_co: 8,
        t: 10,
        t_pre: 5,
        base_rc: 30,
        s_range: [1, 6],
        ..Default::default()
    };
    let key = StreamKey::new(cfg.seed);
    let params = draw_group_params(&cfg, &key);
    let counts = simulate_counts(&params, &cfg, &key);
    let panel = simulate_panel(&cfg, &params, &counts, &key, 0)?;

    let fitted = fit_sdid_weights(&panel, &EstimatorOptions::default())?;
    let unit = &fitted.unit;
    let time = &fitted.time;
    println!("zeta = {:.6} (sigma_hat = {:.6})", fitted.zeta.zeta, fitted.zeta.sigma_hat);
    println!("omega0 = {:+.6}", unit.omega0);
    for (k, w) in unit.omega.iter().enumerate() {
        println!("  omega[{k}] = {w:.6}");
    }
    println!(
        "unit solver: {} iterations, gap {:.2e}, converged {}",
        unit.solver_report.iterations, unit.solver_report.gradient_gap, unit.solver_report.converged
    );
    println!("lambda0 = {:+.6}", time.lambda0);
    for (t, l) in time.lambda.iter().enumerate() {
        println!("  lambda[{t}] = {l:.6}");
    }

    let weights = WeightSet {
        unit: Some(unit.clone()),
        time: Some(time.clone()),
        cross_sectional: Some(cross_sectional_weights(&panel)),
        zeta: Some(fitted.zeta.clone()),
    };
    let cells = weights.cell_weights(&panel);
    let obs = weights.observation_weights(panel.layout());
    println!("\ncell (k, t): N, per-observation weight, total cell weight");
    for k in [0, cfg.k_co] {
        for t in [0, cfg.t - 1] {
            println!("  ({k}, {t}): {:>4}, {:.6}, {:.6}", panel.count(k, t), obs[(k, t)], cells[(k, t)]);
        }
    }
    Ok(())
}
