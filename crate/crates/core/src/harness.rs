//! Monte Carlo replication loops and scenario tables.
//!
//! A scenario draws its fixed parameters (effects, loadings, factors, scales
//! and cell counts) once from a meta seed; each replication then redraws only
//! the idiosyncratic errors and runs all three estimators. Tables share one
//! meta seed across their rows, so rows differ only in the parameter being
//! varied.

use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgp::{draw_group_params, simulate_counts_for, simulate_panel, ScenarioConfig};
use crate::estimators::{estimate_all_panel, EstimatorOptions, Method};
use crate::numeric::compensated_sum;
use crate::rng::StreamKey;
use crate::{Error, Result};

/// Mean bias, sample standard deviation and RMSE of a set of estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean_bias: f64,
    /// Sample standard deviation (n - 1 denominator); 0 for a single draw.
    pub sd: f64,
    pub rmse: f64,
    pub single_draw: bool,
}

pub fn summarize(draws: &[f64], tau_true: f64) -> Result<Summary> {
    if draws.is_empty() {
        return Err(Error::Domain("cannot summarize an empty set of draws".into()));
    }
    let n = draws.len() as f64;
    let mean = compensated_sum(draws.iter().copied()) / n;
    let mean_bias = mean - tau_true;
    let rmse = (compensated_sum(draws.iter().map(|d| (d - tau_true).powi(2))) / n).sqrt();
    if draws.len() == 1 {
        return Ok(Summary {
            mean_bias,
            sd: 0.0,
            rmse,
            single_draw: true,
        });
    }
    let sd = (compensated_sum(draws.iter().map(|d| (d - mean).powi(2))) / (n - 1.0)).sqrt();
    debug_assert!(
        (rmse * rmse - (mean_bias * mean_bias + sd * sd * (n - 1.0) / n)).abs()
            <= 1e-10 * (1.0 + rmse * rmse),
        "bias/variance decomposition violated"
    );
    Ok(Summary {
        mean_bias,
        sd,
        rmse,
        single_draw: false,
    })
}

/// Results of one scenario for all three estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scenario_label: String,
    pub did: Summary,
    pub rcsdid: Summary,
    pub sdid: Summary,
    /// Replications that entered the summaries.
    pub replications: usize,
    /// Replications dropped because an estimator hit a degenerate design.
    pub excluded: usize,
    pub meta_seed: u64,
}

impl MetricsRow {
    pub fn summary(&self, method: Method) -> &Summary {
        match method {
            Method::Did => &self.did,
            Method::RcSdid => &self.rcsdid,
            Method::Sdid => &self.sdid,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses the machine's parallelism.
    pub threads: Option<usize>,
    /// Redraw the count increments in every replication instead of once per scenario.
    pub redraw_counts: bool,
    pub estimator: EstimatorOptions,
}

fn thread_pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::Config("thread count must be positive".into()));
        }
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| Error::Config(format!("cannot start worker threads: {e}")))
}

/// Runs `reps` replications of `cfg` with fixed parameters drawn from `meta_seed`.
pub fn run_scenario(cfg: &ScenarioConfig, reps: usize, meta_seed: u64, options: &RunOptions) -> Result<MetricsRow> {
    let pool = thread_pool(options.threads)?;
    run_scenario_in(&pool, cfg, reps, meta_seed, options, &format!("custom seed={meta_seed}"))
}

fn run_scenario_in(
    pool: &rayon::ThreadPool,
    cfg: &ScenarioConfig,
    reps: usize,
    meta_seed: u64,
    options: &RunOptions,
    label: &str,
) -> Result<MetricsRow> {
    cfg.validate()?;
    if reps == 0 {
        return Err(Error::Config("need at least one replication".into()));
    }
    let key = StreamKey::new(meta_seed);
    let params = draw_group_params(cfg, &key);
    let fixed_counts = simulate_counts_for(&params, cfg, &key, 0);

    let outcomes: Vec<Result<Option<[f64; 3]>>> = pool.install(|| {
        (0..reps)
            .into_par_iter()
            .map(|rep| {
                let rep = rep as u64;
                let redrawn;
                let counts = if options.redraw_counts {
                    redrawn = simulate_counts_for(&params, cfg, &key, rep + 1);
                    &redrawn
                } else {
                    &fixed_counts
                };
                let panel = simulate_panel(cfg, &params, counts, &key, rep + 1)?;
                match estimate_all_panel(&panel, &options.estimator) {
                    Ok(est) => Ok(Some([est[0].tau_hat, est[1].tau_hat, est[2].tau_hat])),
                    Err(Error::DegenerateDesign(_)) => Ok(None),
                    Err(e) => Err(e),
                }
            })
            .collect()
    });

    let mut draws: [Vec<f64>; 3] = Default::default();
    let mut excluded = 0;
    for outcome in outcomes {
        match outcome? {
            Some(taus) => {
                for (d, tau) in draws.iter_mut().zip(taus) {
                    d.push(tau);
                }
            }
            None => excluded += 1,
        }
    }
    if excluded * 100 > reps {
        return Err(Error::Harness(format!(
            "{label}: {excluded} of {reps} replications hit a degenerate design (limit 1%)"
        )));
    }
    let [did, rcsdid, sdid] = &draws;
    Ok(MetricsRow {
        scenario_label: label.to_string(),
        did: summarize(did, cfg.tau)?,
        rcsdid: summarize(rcsdid, cfg.tau)?,
        sdid: summarize(sdid, cfg.tau)?,
        replications: did.len(),
        excluded,
        meta_seed,
    })
}

/// Which parameter a table varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableId {
    /// Range of the scale parameter `S_k`.
    Scale,
    /// Number of latent factors.
    Factors,
    /// Overlap parameter `w`.
    Assignment,
    /// Correlation between `S_k` and `alpha_k`.
    Correlation,
    /// Baseline cell size, number of controls and number of periods.
    Size,
    /// The base configuration alone.
    Custom,
}

impl std::str::FromStr for TableId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "scale" => TableId::Scale,
            "factors" => TableId::Factors,
            "assignment" => TableId::Assignment,
            "correlation" => TableId::Correlation,
            "size" => TableId::Size,
            "custom" => TableId::Custom,
            other => return Err(Error::Config(format!("unknown table {other:?}"))),
        })
    }
}

/// One row of a table: the value the table varies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ParamValue {
    ScaleRange(u32, u32),
    Factors(usize),
    Overlap(f64),
    Correlation(f64),
    /// `(base_rc, k_co, t)`; half the periods (rounded down) are pre-treatment.
    Size(u32, usize, usize),
    Base,
}

impl ParamValue {
    pub fn apply(&self, base: &ScenarioConfig) -> ScenarioConfig {
        let mut cfg = *base;
        match *self {
            ParamValue::ScaleRange(lo, hi) => cfg.s_range = [lo, hi],
            ParamValue::Factors(r) => cfg.r = r,
            ParamValue::Overlap(w) => cfg.w = w,
            ParamValue::Correlation(rho) => cfg.rho = rho,
            ParamValue::Size(base_rc, k_co, t) => {
                cfg.base_rc = base_rc;
                cfg.k_co = k_co;
                cfg.t = t;
                cfg.t_pre = t / 2;
            }
            ParamValue::Base => {}
        }
        cfg
    }

    pub fn label(&self) -> String {
        match *self {
            ParamValue::ScaleRange(lo, hi) if lo == hi => format!("S_k={lo}"),
            ParamValue::ScaleRange(lo, hi) => format!("S_k in [{lo};{hi}]"),
            ParamValue::Factors(r) => format!("r={r}"),
            ParamValue::Overlap(w) => format!("w={w}"),
            ParamValue::Correlation(rho) => format!("rho={rho}"),
            ParamValue::Size(b, k, t) => format!("Base_RC={b} K_co={k} T={t}"),
            ParamValue::Base => "base".into(),
        }
    }
}

/// A grid of scenarios sharing a base configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TableSpec {
    pub table: TableId,
    pub values: Vec<ParamValue>,
    pub base: ScenarioConfig,
    pub replications: usize,
    /// Independent redraws of the fixed parameters.
    pub meta_replications: usize,
}

impl TableSpec {
    /// The standard grid for `table`, in row order.
    pub fn standard(table: TableId, base: ScenarioConfig, replications: usize, meta_replications: usize) -> Self {
        let values = match table {
            TableId::Scale => [(1, 1), (1, 2), (1, 4), (1, 6), (1, 8), (1, 10), (1, 15), (1, 20)]
                .into_iter()
                .map(|(lo, hi)| ParamValue::ScaleRange(lo, hi))
                .collect(),
            TableId::Factors => (0..=4).map(ParamValue::Factors).collect(),
            TableId::Assignment => [1.0, 0.8, 0.6, 0.4, 0.2, 0.0].into_iter().map(ParamValue::Overlap).collect(),
            TableId::Correlation => [0.0, 0.2, 0.5, 0.8, 1.0].into_iter().map(ParamValue::Correlation).collect(),
            TableId::Size => [100, 50]
                .into_iter()
                .flat_map(|b| {
                    [(30, 30), (15, 30), (30, 15), (15, 15)]
                        .into_iter()
                        .map(move |(k, t)| ParamValue::Size(b, k, t))
                })
                .collect(),
            TableId::Custom => vec![ParamValue::Base],
        };
        Self {
            table,
            values,
            base,
            replications,
            meta_replications,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Config("table has no rows".into()));
        }
        if self.replications == 0 || self.meta_replications == 0 {
            return Err(Error::Config("replications and meta-replications must be positive".into()));
        }
        for v in &self.values {
            v.apply(&self.base).validate()?;
        }
        Ok(())
    }

    /// Meta seed of the `m`-th meta-replication, derived from the base seed.
    pub fn meta_seed(&self, m: usize) -> u64 {
        StreamKey::new(self.base.seed).child_seed(m as u64)
    }
}

/// Runs every row of `spec`: for each parameter value (in order), one row per
/// meta-replication.
pub fn run_table(spec: &TableSpec, options: &RunOptions) -> Result<Vec<MetricsRow>> {
    spec.validate()?;
    let pool = thread_pool(options.threads)?;
    let mut rows = Vec::with_capacity(spec.values.len() * spec.meta_replications);
    for value in &spec.values {
        let cfg = value.apply(&spec.base);
        for m in 0..spec.meta_replications {
            rows.push(run_scenario_in(
                &pool,
                &cfg,
                spec.replications,
                spec.meta_seed(m),
                options,
                &value.label(),
            )?);
        }
    }
    Ok(rows)
}

/// Long CSV: one line per (scenario, estimator).
pub fn write_metrics_csv<W: Write>(rows: &[MetricsRow], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["scenario_label", "estimator", "mean_bias", "sd", "rmse", "reps", "meta_seed"])?;
    for row in rows {
        for method in Method::ALL {
            let s = row.summary(method);
            wtr.write_record([
                row.scenario_label.clone(),
                method.label().to_string(),
                s.mean_bias.to_string(),
                s.sd.to_string(),
                s.rmse.to_string(),
                row.replications.to_string(),
                row.meta_seed.to_string(),
            ])?;
        }
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// Wide markdown table with bias, SD and RMSE blocks.
pub fn format_metrics_markdown(rows: &[MetricsRow]) -> String {
    let mut out = String::new();
    let methods = Method::ALL;
    out.push_str("| scenario | meta_seed |");
    for stat in ["bias", "SD", "RMSE"] {
        for m in methods {
            let _ = write!(out, " {stat} {m} |");
        }
    }
    out.push_str("\n|---|---|");
    out.push_str(&"---:|".repeat(9));
    out.push('\n');
    for row in rows {
        let _ = write!(out, "| {} | {} |", row.scenario_label, row.meta_seed);
        for stat in 0..3 {
            for m in methods {
                let s = row.summary(m);
                let v = [s.mean_bias, s.sd, s.rmse][stat];
                let _ = write!(out, " {v:.7} |");
            }
        }
        out.push('\n');
    }
    out
}
