//! Load a long-format CSV, aggregate it to cells and run all three estimators.
//!
//! Run with `cargo run --example estimate_csv -- path/to/data.csv K_CO T_PRE`.
//! Without arguments a small simulated dataset is written to a temporary file
//! and used instead.

use rcsdid::data::{aggregate, load_long_csv, write_long_csv, CsvSchema, LayoutSpec};
use rcsdid::dgp::{simulate, ScenarioConfig};
use rcsdid::estimators::{estimate_all_panel, EstimatorOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let dir = tempfile::tempdir()?;
    let (path, spec) = match args.as_slice() {
        [path, k_co, t_pre] => {
            let k_co = k_co.parse().expect("K_CO must be an integer");
            let t_pre = t_pre.parse().expect("T_PRE must be an integer");
            (path.into(), LayoutSpec::control_count(k_co, t_pre))
        }
        _ => {
            let cfg = ScenarioConfig {
                k_co: 10,
                t: 12,
                t_pre: 6,
                base_rc: 40,
                seed: 7,
                ..Default::default()
            };
            let path = dir.path().join("simulated.csv");
            write_long_csv(&simulate(&cfg)?, &path)?;
            println!("no input given; simulated {} (true tau = {})", path.display(), cfg.tau);
            (path, LayoutSpec::control_count(cfg.k_co, cfg.t_pre))
        }
    };

    let data = load_long_csv(&path, &CsvSchema::default(), &spec)?;
    let panel = aggregate(&data);
    let layout = panel.layout();
    println!(
        "{} rows, {} control and {} treated groups, {} pre and {} post periods",
        data.len(),
        layout.k_co(),
        layout.k_tr(),
        layout.t_pre(),
        layout.t_post()
    );
    let counts = panel.counts();
    println!("cell sizes: min {}, max {}", counts.min(), counts.max());

    for est in estimate_all_panel(&panel, &EstimatorOptions::default())? {
        println!("{:>8}  tau_hat = {:+.6}", est.method.to_string(), est.tau_hat);
    }
    Ok(())
}
