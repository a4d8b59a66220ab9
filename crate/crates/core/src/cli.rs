//! `rcsdid` command line: `estimate`, `weights` and `simulate`.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 degenerate
//! design or solver failure. Diagnostics go to stderr. Output files are
//! written to a temporary sibling and renamed into place on success.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::data::{aggregate, load_long_csv, write_long_csv_to, CsvSchema, LayoutSpec, RCDataset};
use crate::dgp::ScenarioConfig;
use crate::estimators::{estimate, fit_sdid_weights, EstimationPath, EstimatorOptions, Method};
use crate::harness::{format_metrics_markdown, run_table, write_metrics_csv, RunOptions, TableId, TableSpec};
use crate::weights::{cross_sectional_weights, SolverOptions, SolverReport};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "rcsdid", version, about = "Synthetic difference-in-differences for repeated cross-sections")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the treatment effect with DiD, SDiD and/or RC-SDiD.
    Estimate(EstimateArgs),
    /// Print the unit, time and cross-sectional weights and the regularization level.
    Weights(WeightsArgs),
    /// Run Monte Carlo tables, or emit one simulated dataset.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Long-format CSV with one row per individual.
    #[arg(long)]
    pub input: PathBuf,
    /// Number of control groups; the first K_co groups in label order are controls.
    #[arg(long, conflicts_with = "treated_col")]
    pub kco: Option<usize>,
    /// Number of pre-treatment periods. Without it, `<input stem>.layout.json` is read.
    #[arg(long)]
    pub tpre: Option<usize>,
    /// Name of a 0/1 column marking treated groups (alternative to --kco).
    #[arg(long)]
    pub treated_col: Option<String>,
    #[arg(long, default_value = "group")]
    pub group_col: String,
    #[arg(long, default_value = "time")]
    pub time_col: String,
    #[arg(long, default_value = "outcome")]
    pub outcome_col: String,
    /// Duality-gap tolerance of the weight solver.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    /// Iteration cap of the weight solver.
    #[arg(long, default_value_t = 10_000)]
    pub max_iter: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Did,
    Sdid,
    Rcsdid,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TextFormat {
    Csv,
    Table,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_enum, default_value_t = MethodArg::All)]
    pub method: MethodArg,
    /// Run the regression on individual rows instead of cell means.
    #[arg(long)]
    pub individual: bool,
    /// Fail (exit 2) if a weight solver stops at the iteration cap.
    #[arg(long)]
    pub require_convergence: bool,
    #[arg(long, value_enum, default_value_t = TextFormat::Csv)]
    pub format: TextFormat,
    /// Output file (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct WeightsArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_enum, default_value_t = TextFormat::Csv)]
    pub format: TextFormat,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TableArg {
    Scale,
    Factors,
    Assignment,
    Correlation,
    Size,
    Custom,
}

impl From<TableArg> for TableId {
    fn from(t: TableArg) -> Self {
        match t {
            TableArg::Scale => TableId::Scale,
            TableArg::Factors => TableId::Factors,
            TableArg::Assignment => TableId::Assignment,
            TableArg::Correlation => TableId::Correlation,
            TableArg::Size => TableId::Size,
            TableArg::Custom => TableId::Custom,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricsFormat {
    Csv,
    Md,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Which grid to run; `custom` runs the base configuration alone.
    #[arg(long, value_enum, default_value_t = TableArg::Custom)]
    pub table: TableArg,
    /// Replications per scenario (only the errors are redrawn).
    #[arg(long, default_value_t = 1000)]
    pub reps: usize,
    /// Independent redraws of the fixed parameters.
    #[arg(long, default_value_t = 1)]
    pub meta_reps: usize,
    /// Master seed (overrides the config file).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Scenario config: JSON object or `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output file (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = MetricsFormat::Csv)]
    pub format: MetricsFormat,
    /// Write one simulated long-format dataset here instead of running replications.
    #[arg(long)]
    pub emit_data: Option<PathBuf>,
    /// Redraw cell-count increments in every replication.
    #[arg(long)]
    pub redraw_counts: bool,
    /// Worker threads (default: all cores).
    #[arg(long, env = "RCSDID_THREADS")]
    pub threads: Option<usize>,
    #[arg(long)]
    pub kco: Option<usize>,
    #[arg(long)]
    pub ktr: Option<usize>,
    /// Total number of periods.
    #[arg(long)]
    pub periods: Option<usize>,
    #[arg(long)]
    pub tpre: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Number of latent factors.
    #[arg(long)]
    pub factors: Option<usize>,
    /// Overlap parameter w in [0, 1].
    #[arg(long)]
    pub overlap: Option<f64>,
    /// Correlation between scale and group effect, in [0, 1].
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub base_rc: Option<u32>,
    #[arg(long)]
    pub s_lo: Option<u32>,
    #[arg(long)]
    pub s_hi: Option<u32>,
    /// Standard deviation of the individual errors.
    #[arg(long)]
    pub noise_sd: Option<f64>,
}

impl SimulateArgs {
    /// Config file values, then flag overrides.
    pub fn scenario(&self) -> Result<ScenarioConfig> {
        let mut cfg = match &self.config {
            Some(path) => ScenarioConfig::from_file(path)?,
            None => ScenarioConfig::default(),
        };
        macro_rules! set {
            ($flag:ident => $field:expr) => {
                if let Some(v) = self.$flag {
                    $field = v;
                }
            };
        }
        set!(seed => cfg.seed);
        set!(kco => cfg.k_co);
        set!(ktr => cfg.k_tr);
        set!(periods => cfg.t);
        set!(tpre => cfg.t_pre);
        set!(tau => cfg.tau);
        set!(factors => cfg.r);
        set!(overlap => cfg.w);
        set!(rho => cfg.rho);
        set!(base_rc => cfg.base_rc);
        set!(s_lo => cfg.s_range[0]);
        set!(s_hi => cfg.s_range[1]);
        set!(noise_sd => cfg.noise_sd);
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Writes through a temporary file in the destination directory, renaming on success.
fn write_output(out: Option<&Path>, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match out {
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            body(&mut lock)?;
            lock.flush().map_err(|e| Error::io("<stdout>", e))
        }
        Some(path) => {
            let dir = match path.parent() {
                Some(p) if !p.as_os_str().is_empty() => p,
                _ => Path::new("."),
            };
            let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
            {
                let mut buf = std::io::BufWriter::new(tmp.as_file_mut());
                body(&mut buf)?;
                buf.flush().map_err(|e| Error::io(path, e))?;
            }
            tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
            Ok(())
        }
    }
}

fn load_input(args: &InputArgs) -> Result<RCDataset> {
    if !args.input.exists() {
        return Err(Error::io(
            &args.input,
            std::io::Error::new(std::io::ErrorKind::NotFound, "input file not found"),
        ));
    }
    let schema = CsvSchema {
        group: args.group_col.clone(),
        time: args.time_col.clone(),
        outcome: args.outcome_col.clone(),
        treated: args.treated_col.clone(),
    };
    let spec = match args.tpre {
        Some(t_pre) => LayoutSpec {
            k_co: args.kco,
            t_pre,
        },
        None => {
            let mut spec = LayoutSpec::from_sidecar(&args.input)?;
            if args.kco.is_some() {
                spec.k_co = args.kco;
            }
            if args.treated_col.is_some() {
                spec.k_co = None;
            }
            spec
        }
    };
    if spec.k_co.is_none() && schema.treated.is_none() {
        return Err(Error::Config("pass --kco or --treated-col (or put k_co in the layout sidecar)".into()));
    }
    load_long_csv(&args.input, &schema, &spec)
}

fn estimator_options(args: &InputArgs) -> Result<EstimatorOptions> {
    if !(args.tol > 0.0) || args.max_iter == 0 {
        return Err(Error::Config("--tol must be positive and --max-iter at least 1".into()));
    }
    Ok(EstimatorOptions {
        solver: SolverOptions {
            tol: args.tol,
            max_iter: args.max_iter,
            record_trace: false,
        },
        ..EstimatorOptions::default()
    })
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_table(out: &mut dyn Write, header: &[&str], rows: &[Vec<String>], format: TextFormat) -> Result<()> {
    let io = |e| Error::io("<output>", e);
    match format {
        TextFormat::Csv => {
            let mut wtr = csv::Writer::from_writer(out);
            wtr.write_record(header)?;
            for r in rows {
                wtr.write_record(r)?;
            }
            wtr.flush().map_err(io)?;
        }
        TextFormat::Table => {
            let widths: Vec<usize> = (0..header.len())
                .map(|c| rows.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0))
                .collect();
            let line = |cells: Vec<&str>| {
                cells
                    .iter()
                    .zip(&widths)
                    .map(|(c, w)| format!("{c:>w$}"))
                    .collect::<Vec<_>>()
                    .join("  ")
            };
            writeln!(out, "{}", line(header.to_vec())).map_err(io)?;
            for r in rows {
                writeln!(out, "{}", line(r.iter().map(String::as_str).collect())).map_err(io)?;
            }
        }
    }
    Ok(())
}

fn run_estimate(args: &EstimateArgs) -> Result<()> {
    let data = load_input(&args.input)?;
    let mut options = estimator_options(&args.input)?;
    options.path = if args.individual { EstimationPath::Individual } else { EstimationPath::Cell };
    options.require_convergence = args.require_convergence;
    let methods: Vec<Method> = match args.method {
        MethodArg::All => Method::ALL.to_vec(),
        MethodArg::Did => vec![Method::Did],
        MethodArg::Sdid => vec![Method::Sdid],
        MethodArg::Rcsdid => vec![Method::RcSdid],
    };
    let mut rows = Vec::new();
    for method in methods {
        let est = estimate(&data, method, &options)?;
        let w = &est.weights_used;
        let report = |r: Option<&SolverReport>| r.map(|r| r.converged.to_string()).unwrap_or_default();
        rows.push(vec![
            method.label().to_string(),
            est.tau_hat.to_string(),
            est.mu_hat.to_string(),
            est.n_obs.to_string(),
            opt_cell(w.zeta.map(|z| z.zeta)),
            report(w.unit.as_ref().map(|u| &u.solver_report)),
            report(w.time.as_ref().map(|t| &t.solver_report)),
            format!("{:e}", est.normal_equation_residual),
        ]);
    }
    let header = [
        "method",
        "tau_hat",
        "mu_hat",
        "n_obs",
        "zeta",
        "unit_converged",
        "time_converged",
        "normal_equation_residual",
    ];
    write_output(args.out.as_deref(), |out| write_table(out, &header, &rows, args.format))
}

fn run_weights(args: &WeightsArgs) -> Result<()> {
    let data = load_input(&args.input)?;
    let options = estimator_options(&args.input)?;
    let panel = aggregate(&data);
    let w = fit_sdid_weights(&panel, &options)?;
    let nu = cross_sectional_weights(&panel);
    let glabel = data.group_labels();
    let tlabel = data.time_labels();
    let layout = panel.layout();
    let row = |family: &str, group: &str, time: &str, value: String| {
        vec![family.to_string(), group.to_string(), time.to_string(), value]
    };
    let mut rows = vec![
        row("zeta", "", "", w.zeta.zeta.to_string()),
        row("sigma_hat", "", "", w.zeta.sigma_hat.to_string()),
        row("mean_difference", "", "", w.zeta.mean_difference.to_string()),
        row("omega0", "", "", w.unit.omega0.to_string()),
    ];
    for k in 0..layout.k_co() {
        rows.push(row("omega", &glabel[k], "", w.unit.omega[k].to_string()));
    }
    rows.push(row("lambda0", "", "", w.time.lambda0.to_string()));
    for t in 0..layout.t_pre() {
        rows.push(row("lambda", "", &tlabel[t], w.time.lambda[t].to_string()));
    }
    for k in 0..layout.k() {
        for t in 0..layout.t() {
            rows.push(row("nu", &glabel[k], &tlabel[t], nu.nu[(k, t)].to_string()));
        }
    }
    for (name, r) in [("unit", &w.unit.solver_report), ("time", &w.time.solver_report)] {
        rows.push(row(&format!("{name}_iterations"), "", "", r.iterations.to_string()));
        rows.push(row(&format!("{name}_objective"), "", "", r.final_objective.to_string()));
        rows.push(row(&format!("{name}_gap"), "", "", r.gradient_gap.to_string()));
        rows.push(row(&format!("{name}_converged"), "", "", r.converged.to_string()));
    }
    write_output(args.out.as_deref(), |out| {
        write_table(out, &["family", "group", "time", "value"], &rows, args.format)
    })
}

fn run_simulate(args: &SimulateArgs) -> Result<()> {
    let cfg = args.scenario()?;
    if let Some(path) = &args.emit_data {
        let data = crate::dgp::simulate(&cfg)?;
        write_output(Some(path), |out| write_long_csv_to(&data, out))?;
        let sidecar = LayoutSpec::sidecar_path(path);
        let layout = LayoutSpec::control_count(cfg.k_co, cfg.t_pre);
        let json = serde_json::to_string_pretty(&layout).map_err(|e| Error::Config(e.to_string()))?;
        write_output(Some(&sidecar), |out| {
            out.write_all(json.as_bytes()).map_err(|e| Error::io(&sidecar, e))
        })?;
        eprintln!("wrote {} rows to {}", data.len(), path.display());
        return Ok(());
    }
    let spec = TableSpec::standard(args.table.into(), cfg, args.reps, args.meta_reps);
    let options = RunOptions {
        threads: args.threads,
        redraw_counts: args.redraw_counts,
        estimator: EstimatorOptions::default(),
    };
    let rows = run_table(&spec, &options)?;
    for row in rows.iter().filter(|r| r.excluded > 0) {
        eprintln!(
            "warning: {} (meta seed {}): {} replications excluded",
            row.scenario_label, row.meta_seed, row.excluded
        );
    }
    if rows.iter().any(|r| r.rcsdid.single_draw) {
        eprintln!("warning: single replication; SD reported as 0");
    }
    write_output(args.out.as_deref(), |out| match args.format {
        MetricsFormat::Csv => write_metrics_csv(&rows, out),
        MetricsFormat::Md => out
            .write_all(format_metrics_markdown(&rows).as_bytes())
            .map_err(|e| Error::io("<output>", e)),
    })
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Estimate(a) => run_estimate(a),
        Command::Weights(a) => run_weights(a),
        Command::Simulate(a) => run_simulate(a),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
