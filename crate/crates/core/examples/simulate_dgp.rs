//! Draw one scenario from the interactive fixed-effects simulator and inspect
//! its parameters, evolving cell counts and individual observations.
//!
//! Pass an output path to also write the long-format CSV and its layout sidecar
//! the way `rcsdid simulate --emit-data` does.

use rcsdid::data::{aggregate, write_long_csv, LayoutSpec};
use rcsdid::dgp::{draw_group_params, simulate_counts, simulate_dataset, ScenarioConfig};
use rcsdid::rng::StreamKey;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ScenarioConfig {
        k_co: 6,
        t: 8,
        t_pre: 4,
        r: 2,
        w: 0.5,
        rho: 0.8,
        base_rc: 25,
        s_range: [1, 5],
        seed: 2024,
        ..Default::default()
    };
    cfg.validate()?;
    let key = StreamKey::new(cfg.seed);
    let params = draw_group_params(&cfg, &key);
    let (lo_co, hi_co) = cfg.effect_bounds(false);
    let (lo_tr, hi_tr) = cfg.effect_bounds(true);
    println!("control effects on [{lo_co:.3}, {hi_co:.3}], treated on [{lo_tr:.3}, {hi_tr:.3}]");
    println!("group  alpha    S_k  counts by period");
    let counts = simulate_counts(&params, &cfg, &key);
    for k in 0..cfg.k() {
        let row: Vec<String> = (0..cfg.t).map(|t| counts.counts[(k, t)].to_string()).collect();
        let tag = if k >= cfg.k_co { " (treated)" } else { "" };
        println!("{k:>5}  {:+.3}  {:>3}  {}{tag}", params.alpha[k], params.scale[k], row.join(" "));
    }

    let data = simulate_dataset(&cfg, &params, &counts, &key, 0)?;
    let panel = aggregate(&data);
    println!("\n{} individual rows; first three:", data.len());
    for row in &data.rows()[..3] {
        println!("  group {} period {} outcome {:+.4}", row.group, row.time, row.outcome);
    }
    let k = cfg.k_co;
    let t = cfg.t - 1;
    println!(
        "treated cell ({k}, {t}): mean {:+.4}, noiseless mean {:+.4}",
        panel.mean(k, t),
        params.untreated_mean(k, t) + cfg.tau
    );

    if let Some(path) = std::env::args().nth(1) {
        let path = std::path::PathBuf::from(path);
        write_long_csv(&data, &path)?;
        let sidecar = LayoutSpec::sidecar_path(&path);
        let spec = LayoutSpec::control_count(cfg.k_co, cfg.t_pre);
        std::fs::write(&sidecar, serde_json::to_string(&spec)?)?;
        println!("wrote {} and {}", path.display(), sidecar.display());
    }
    Ok(())
}
