//! Reproduce a reduced version of the scale table: bias, SD and RMSE of DiD,
//! SDiD and RC-SDiD as the spread of cell sizes grows.
//!
//! `cargo run --release --example monte_carlo_table -- 200` sets the number of
//! replications per row (default 50).

use rcsdid::dgp::ScenarioConfig;
use rcsdid::harness::{format_metrics_markdown, run_table, RunOptions, TableId, TableSpec};

fn main() -> rcsdid::Result<()> {
    let reps = std::env::args().nth(1).map_or(50, |s| s.parse().expect("replications must be an integer"));
    let base = ScenarioConfig {
        k_co: 20,
        t: 20,
        t_pre: 10,
        base_rc: 50,
        ..Default::default()
    };
    let mut spec = TableSpec::standard(TableId::Scale, base, reps, 1);
    spec.values.truncate(4);
    let start = std::time::Instant::now();
    let rows = run_table(&spec, &RunOptions::default())?;
    print!("{}", format_metrics_markdown(&rows));
    println!("\n{} rows x {reps} replications in {:.1?}", rows.len(), start.elapsed());
    Ok(())
}
