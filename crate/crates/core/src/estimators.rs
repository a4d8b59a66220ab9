//! DiD, SDiD and RC-SDiD as weighted two-way fixed-effects regressions.
//!
//! All three estimators regress the outcome on an intercept, group dummies,
//! period dummies and the treatment indicator. They differ only in the weight
//! carried by each individual in cell `(k, t)`:
//!
//! | method  | per-observation weight          | total cell weight          |
//! |---------|---------------------------------|----------------------------|
//! | DiD     | 1                               | `N_{k,t}`                  |
//! | SDiD    | `omega_k lambda_t`              | `omega_k lambda_t N_{k,t}` |
//! | RC-SDiD | `omega_k lambda_t / N_{k,t}`    | `omega_k lambda_t`         |
//!
//! Because every regressor is constant within a cell, the individual-level
//! regression equals a cell-level regression on the cell means with the
//! total cell weight. That cell-level form is the default path; the
//! individual-level path is kept for checking the equivalence.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::data::{aggregate, AggregatedPanel, PanelLayout, RCDataset};
use crate::weights::{
    compute_zeta, cross_sectional_weights, solve_time_weights_with, solve_unit_weights_with, NuWeights,
    SolverOptions, TimeWeights, UnitWeights, ZetaReport,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Did,
    RcSdid,
    Sdid,
}

impl Method {
    /// Reporting order: DiD, RC-SDiD, SDiD.
    pub const ALL: [Method; 3] = [Method::Did, Method::RcSdid, Method::Sdid];

    pub fn label(&self) -> &'static str {
        match self {
            Method::Did => "DID",
            Method::Sdid => "SDID",
            Method::RcSdid => "RC_SDID",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "did" => Ok(Method::Did),
            "sdid" => Ok(Method::Sdid),
            "rcsdid" => Ok(Method::RcSdid),
            _ => Err(Error::Config(format!("unknown method {s:?} (expected did, sdid or rcsdid)"))),
        }
    }
}

/// The weight families an estimate used. `None` means uniform.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightSet {
    pub unit: Option<UnitWeights>,
    pub time: Option<TimeWeights>,
    pub cross_sectional: Option<NuWeights>,
    pub zeta: Option<ZetaReport>,
}

impl WeightSet {
    /// Unit weight for every group: fitted `omega` for controls, `1/K_tr` for treated.
    pub fn group_weights(&self, layout: &PanelLayout) -> Vec<f64> {
        match &self.unit {
            None => vec![1.0; layout.k()],
            Some(u) => (0..layout.k())
                .map(|k| if k < layout.k_co() { u.omega[k] } else { 1.0 / layout.k_tr() as f64 })
                .collect(),
        }
    }

    /// Time weight for every period: fitted `lambda` for pre, `1/T_post` for post.
    pub fn period_weights(&self, layout: &PanelLayout) -> Vec<f64> {
        match &self.time {
            None => vec![1.0; layout.t()],
            Some(w) => (0..layout.t())
                .map(|t| if t < layout.t_pre() { w.lambda[t] } else { 1.0 / layout.t_post() as f64 })
                .collect(),
        }
    }

    /// `K x T` weight carried by one individual in each cell.
    pub fn observation_weights(&self, layout: &PanelLayout) -> DMatrix<f64> {
        let g = self.group_weights(layout);
        let p = self.period_weights(layout);
        DMatrix::from_fn(layout.k(), layout.t(), |k, t| {
            let base = g[k] * p[t];
            match &self.cross_sectional {
                None => base,
                Some(nu) => base * nu.nu[(k, t)],
            }
        })
    }

    /// `K x T` total weight of each cell: observation weight times `N_{k,t}`.
    pub fn cell_weights(&self, panel: &AggregatedPanel) -> DMatrix<f64> {
        let layout = panel.layout();
        let g = self.group_weights(layout);
        let p = self.period_weights(layout);
        DMatrix::from_fn(layout.k(), layout.t(), |k, t| {
            let base = g[k] * p[t];
            match &self.cross_sectional {
                None => base * panel.count(k, t) as f64,
                // nu * N is 1 analytically but not always in floating point (1/49 * 49 < 1)
                Some(_) => base,
            }
        })
    }
}

/// Coefficients of a weighted two-way fixed-effects fit.
#[derive(Debug, Clone, PartialEq)]
pub struct TwfeFit {
    pub tau: f64,
    pub mu: f64,
    /// Group effects; `None` for groups carrying zero total weight.
    pub alpha: Vec<Option<f64>>,
    /// Period effects; `None` for periods carrying zero total weight.
    pub beta: Vec<Option<f64>>,
    /// `max |X'W(y - X theta)|` relative to `max(1, max |X'Wy|)`.
    pub normal_equation_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub method: Method,
    pub tau_hat: f64,
    pub mu_hat: f64,
    pub alpha_hat: Vec<Option<f64>>,
    pub beta_hat: Vec<Option<f64>>,
    pub weights_used: WeightSet,
    pub n_obs: u64,
    pub normal_equation_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EstimationPath {
    /// Regression on cell means with total cell weights.
    #[default]
    Cell,
    /// Regression on every individual row.
    Individual,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EstimatorOptions {
    pub solver: SolverOptions,
    pub path: EstimationPath,
    /// Fail instead of using a weight vector whose solver hit `max_iter`.
    pub require_convergence: bool,
}

/// Parameter layout: intercept, non-reference active groups, non-reference
/// active periods, treatment.
struct Design {
    group_param: Vec<Option<usize>>,
    time_param: Vec<Option<usize>>,
    group_active: Vec<bool>,
    time_active: Vec<bool>,
    tau_param: usize,
    n_params: usize,
}

impl Design {
    fn new(layout: &PanelLayout, cell_weights: &DMatrix<f64>) -> Result<Self> {
        if let Some(w) = cell_weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::Domain(format!("cell weight {w} must be finite and >= 0")));
        }
        let group_active: Vec<bool> = (0..layout.k()).map(|k| cell_weights.row(k).iter().any(|w| *w > 0.0)).collect();
        let time_active: Vec<bool> = (0..layout.t()).map(|t| cell_weights.column(t).iter().any(|w| *w > 0.0)).collect();
        let treated_post = (layout.k_co()..layout.k())
            .any(|k| (layout.t_pre()..layout.t()).any(|t| cell_weights[(k, t)] > 0.0));
        if !treated_post {
            return Err(Error::DegenerateDesign(
                "treatment indicator: no treated post-treatment cell carries positive weight".into(),
            ));
        }
        let mut next = 1;
        let mut assign = |active: &[bool]| -> Vec<Option<usize>> {
            let reference = active.iter().position(|a| *a);
            active
                .iter()
                .enumerate()
                .map(|(i, a)| {
                    if *a && Some(i) != reference {
                        next += 1;
                        Some(next - 1)
                    } else {
                        None
                    }
                })
                .collect()
        };
        let group_param = assign(&group_active);
        let time_param = assign(&time_active);
        Ok(Self {
            group_param,
            time_param,
            group_active,
            time_active,
            tau_param: next,
            n_params: next + 1,
        })
    }

    #[inline]
    fn columns(&self, layout: &PanelLayout, k: usize, t: usize, out: &mut [usize; 4]) -> usize {
        out[0] = 0;
        let mut m = 1;
        if let Some(i) = self.group_param[k] {
            out[m] = i;
            m += 1;
        }
        if let Some(i) = self.time_param[t] {
            out[m] = i;
            m += 1;
        }
        if layout.treatment(k, t) {
            out[m] = self.tau_param;
            m += 1;
        }
        m
    }
}

/// Accumulates `X'WX` and `X'Wy` one weighted observation at a time.
struct NormalEquations {
    p: usize,
    xtwx: Vec<f64>,
    xtwy: Vec<f64>,
}

impl NormalEquations {
    fn new(p: usize) -> Self {
        Self {
            p,
            xtwx: vec![0.0; p * p],
            xtwy: vec![0.0; p],
        }
    }

    #[inline]
    fn add(&mut self, cols: &[usize], weight: f64, y: f64) {
        for &i in cols {
            self.xtwy[i] += weight * y;
            for &j in cols {
                self.xtwx[i * self.p + j] += weight;
            }
        }
    }
}

/// Cholesky solve after symmetric diagonal scaling. Returns `None` when a
/// scaled pivot falls below `1e-10`, i.e. the columns are collinear on the
/// weighted support.
fn solve_spd(matrix: &[f64], rhs: &[f64], p: usize, skip: Option<usize>) -> Option<Vec<f64>> {
    let idx: Vec<usize> = (0..p).filter(|i| Some(*i) != skip).collect();
    let n = idx.len();
    let scale: Vec<f64> = idx.iter().map(|&i| matrix[i * p + i].sqrt()).collect();
    if scale.iter().any(|s| !(*s > 0.0)) {
        return None;
    }
    let mut l = vec![0.0; n * n];
    for a in 0..n {
        for b in 0..=a {
            let mut sum = matrix[idx[a] * p + idx[b]] / (scale[a] * scale[b]);
            for c in 0..b {
                sum -= l[a * n + c] * l[b * n + c];
            }
            if a == b {
                if sum <= 1e-10 {
                    return None;
                }
                l[a * n + a] = sum.sqrt();
            } else {
                l[a * n + b] = sum / l[b * n + b];
            }
        }
    }
    let mut z: Vec<f64> = idx.iter().zip(&scale).map(|(&i, s)| rhs[i] / s).collect();
    for a in 0..n {
        for c in 0..a {
            z[a] -= l[a * n + c] * z[c];
        }
        z[a] /= l[a * n + a];
    }
    for a in (0..n).rev() {
        for c in a + 1..n {
            z[a] -= l[c * n + a] * z[c];
        }
        z[a] /= l[a * n + a];
    }
    let mut out = vec![0.0; p];
    for (a, &i) in idx.iter().enumerate() {
        out[i] = z[a] / scale[a];
    }
    Some(out)
}

fn finish(layout: &PanelLayout, design: &Design, eq: NormalEquations) -> Result<TwfeFit> {
    let p = design.n_params;
    let theta = match solve_spd(&eq.xtwx, &eq.xtwy, p, None) {
        Some(theta) => theta,
        None if solve_spd(&eq.xtwx, &eq.xtwy, p, Some(design.tau_param)).is_some() => {
            return Err(Error::DegenerateDesign(
                "treatment indicator is collinear with the group and period effects on the weighted support".into(),
            ))
        }
        None => {
            return Err(Error::DegenerateDesign(
                "group and period effects are rank deficient on the weighted support".into(),
            ))
        }
    };
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 1.0;
    for i in 0..p {
        let fitted: f64 = (0..p).map(|j| eq.xtwx[i * p + j] * theta[j]).sum();
        worst = worst.max((fitted - eq.xtwy[i]).abs());
        scale = scale.max(eq.xtwy[i].abs());
    }
    let effect = |param: &Option<usize>, active: bool| match (param, active) {
        (Some(i), _) => Some(theta[*i]),
        (None, true) => Some(0.0),
        (None, false) => None,
    };
    Ok(TwfeFit {
        tau: theta[design.tau_param],
        mu: theta[0],
        alpha: (0..layout.k()).map(|k| effect(&design.group_param[k], design.group_active[k])).collect(),
        beta: (0..layout.t()).map(|t| effect(&design.time_param[t], design.time_active[t])).collect(),
        normal_equation_residual: worst / scale,
    })
}

/// Weighted TWFE on cell means. `cell_weights[(k, t)]` is the total weight of
/// cell `(k, t)`.
///
/// The first group and the first period with positive weight are the
/// reference levels (effect 0). Groups or periods with zero total weight get
/// no parameter and are reported as `None`.
pub fn weighted_twfe_cells(layout: &PanelLayout, means: &DMatrix<f64>, cell_weights: &DMatrix<f64>) -> Result<TwfeFit> {
    let shape = (layout.k(), layout.t());
    if means.shape() != shape || cell_weights.shape() != shape {
        return Err(Error::Domain(format!("cell matrices must be {}x{}", shape.0, shape.1)));
    }
    let design = Design::new(layout, cell_weights)?;
    let mut eq = NormalEquations::new(design.n_params);
    let mut cols = [0usize; 4];
    for t in 0..layout.t() {
        for k in 0..layout.k() {
            let w = cell_weights[(k, t)];
            if w > 0.0 {
                let m = design.columns(layout, k, t, &mut cols);
                eq.add(&cols[..m], w, means[(k, t)]);
            }
        }
    }
    finish(layout, &design, eq)
}

/// Weighted TWFE on individual rows. `observation_weights[(k, t)]` is the
/// weight of each individual in cell `(k, t)`.
pub fn weighted_twfe_individual(data: &RCDataset, observation_weights: &DMatrix<f64>) -> Result<TwfeFit> {
    let layout = data.layout();
    if observation_weights.shape() != (layout.k(), layout.t()) {
        return Err(Error::Domain(format!("weight matrix must be {}x{}", layout.k(), layout.t())));
    }
    let counts = aggregate(data).counts().map(|n| n as f64);
    let design = Design::new(layout, &observation_weights.component_mul(&counts))?;
    let mut eq = NormalEquations::new(design.n_params);
    let mut cols = [0usize; 4];
    for row in data.rows() {
        let w = observation_weights[(row.group, row.time)];
        if w > 0.0 {
            let m = design.columns(layout, row.group, row.time, &mut cols);
            eq.add(&cols[..m], w, row.outcome);
        }
    }
    finish(layout, &design, eq)
}

/// Fitted SDiD weights shared by SDiD and RC-SDiD.
#[derive(Debug, Clone, PartialEq)]
pub struct SdidWeights {
    pub zeta: ZetaReport,
    pub unit: UnitWeights,
    pub time: TimeWeights,
}

pub fn fit_sdid_weights(panel: &AggregatedPanel, options: &EstimatorOptions) -> Result<SdidWeights> {
    let zeta = compute_zeta(panel)?;
    let unit = solve_unit_weights_with(panel, zeta.zeta, &options.solver)?;
    let time = solve_time_weights_with(panel, &options.solver)?;
    if options.require_convergence {
        for (name, report) in [("unit", &unit.solver_report), ("time", &time.solver_report)] {
            if !report.converged {
                return Err(Error::NonConvergence(format!(
                    "{name} weights: gap {:.3e} after {} iterations",
                    report.gradient_gap, report.iterations
                )));
            }
        }
    }
    Ok(SdidWeights { zeta, unit, time })
}

fn weight_set(method: Method, panel: &AggregatedPanel, sdid: Option<&SdidWeights>) -> WeightSet {
    match (method, sdid) {
        (Method::Did, _) | (_, None) => WeightSet::default(),
        (Method::Sdid, Some(w)) => WeightSet {
            unit: Some(w.unit.clone()),
            time: Some(w.time.clone()),
            cross_sectional: None,
            zeta: Some(w.zeta),
        },
        (Method::RcSdid, Some(w)) => WeightSet {
            unit: Some(w.unit.clone()),
            time: Some(w.time.clone()),
            cross_sectional: Some(cross_sectional_weights(panel)),
            zeta: Some(w.zeta),
        },
    }
}

fn into_estimate(method: Method, fit: TwfeFit, weights: WeightSet, n_obs: u64) -> Estimate {
    Estimate {
        method,
        tau_hat: fit.tau,
        mu_hat: fit.mu,
        alpha_hat: fit.alpha,
        beta_hat: fit.beta,
        weights_used: weights,
        n_obs,
        normal_equation_residual: fit.normal_equation_residual,
    }
}

/// Runs `method` on already-aggregated cells (cell-level path).
pub fn estimate_panel(panel: &AggregatedPanel, method: Method, options: &EstimatorOptions) -> Result<Estimate> {
    let sdid = match method {
        Method::Did => None,
        _ => Some(fit_sdid_weights(panel, options)?),
    };
    estimate_panel_with(panel, method, sdid.as_ref())
}

fn estimate_panel_with(panel: &AggregatedPanel, method: Method, sdid: Option<&SdidWeights>) -> Result<Estimate> {
    let weights = weight_set(method, panel, sdid);
    let fit = weighted_twfe_cells(panel.layout(), panel.means(), &weights.cell_weights(panel))?;
    Ok(into_estimate(method, fit, weights, panel.total_count()))
}

/// All three estimators on one panel, fitting the SDiD weights once.
/// Returned in [`Method::ALL`] order.
pub fn estimate_all_panel(panel: &AggregatedPanel, options: &EstimatorOptions) -> Result<[Estimate; 3]> {
    let sdid = fit_sdid_weights(panel, options)?;
    Ok([
        estimate_panel_with(panel, Method::Did, None)?,
        estimate_panel_with(panel, Method::RcSdid, Some(&sdid))?,
        estimate_panel_with(panel, Method::Sdid, Some(&sdid))?,
    ])
}

/// Runs `method` on individual data, along the path chosen in `options`.
pub fn estimate(data: &RCDataset, method: Method, options: &EstimatorOptions) -> Result<Estimate> {
    let panel = aggregate(data);
    match options.path {
        EstimationPath::Cell => estimate_panel(&panel, method, options),
        EstimationPath::Individual => {
            let sdid = match method {
                Method::Did => None,
                _ => Some(fit_sdid_weights(&panel, options)?),
            };
            let weights = weight_set(method, &panel, sdid.as_ref());
            let fit = weighted_twfe_individual(data, &weights.observation_weights(data.layout()))?;
            Ok(into_estimate(method, fit, weights, data.len() as u64))
        }
    }
}

/// RC-SDiD: per-observation weight `omega_k lambda_t / N_{k,t}`.
pub fn estimate_rcsdid(data: &RCDataset) -> Result<Estimate> {
    estimate(data, Method::RcSdid, &EstimatorOptions::default())
}

/// SDiD on individual rows without the cross-sectional correction.
pub fn estimate_sdid_baseline(data: &RCDataset) -> Result<Estimate> {
    estimate(data, Method::Sdid, &EstimatorOptions::default())
}

/// Unweighted two-way fixed effects.
pub fn estimate_did(data: &RCDataset) -> Result<Estimate> {
    estimate(data, Method::Did, &EstimatorOptions::default())
}
