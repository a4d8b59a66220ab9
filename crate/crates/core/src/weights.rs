//! Unit, time and cross-sectional weights.
//!
//! Unit and time weights solve the same problem shape: a least-squares fit
//! of a target vector by a convex combination of columns plus a free
//! intercept, optionally with a ridge penalty on the combination. Both go
//! through [`frank_wolfe_simplex`].

use nalgebra::{DMatrix, DVector};

use crate::data::AggregatedPanel;
use crate::numeric::compensated_sum;
use crate::{Error, Result};

/// Exit status of the simplex solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverReport {
    pub iterations: usize,
    /// Objective at the returned point, intercept profiled out, ridge included.
    pub final_objective: f64,
    /// Frank–Wolfe duality gap at the returned point.
    pub gradient_gap: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Duality-gap tolerance.
    pub tol: f64,
    pub max_iter: usize,
    /// Keep the objective value after every iteration.
    pub record_trace: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 10_000,
            record_trace: false,
        }
    }
}

/// `min_{c, x in simplex} ||c 1 + A x - b||^2 + ridge ||x||^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexProblem {
    pub design: DMatrix<f64>,
    pub target: DVector<f64>,
    pub ridge: f64,
}

impl SimplexProblem {
    pub fn new(design: DMatrix<f64>, target: DVector<f64>, ridge: f64) -> Result<Self> {
        if design.ncols() == 0 || design.nrows() == 0 {
            return Err(Error::Domain("design matrix must have at least one row and one column".into()));
        }
        if design.nrows() != target.len() {
            return Err(Error::Domain(format!(
                "design has {} rows but target has {} entries",
                design.nrows(),
                target.len()
            )));
        }
        if !(ridge >= 0.0 && ridge.is_finite()) {
            return Err(Error::Domain(format!("ridge coefficient {ridge} must be finite and >= 0")));
        }
        Ok(Self { design, target, ridge })
    }

    /// Optimal intercept for a given combination: the mean residual.
    pub fn intercept(&self, weights: &DVector<f64>) -> f64 {
        let fitted = &self.design * weights;
        compensated_sum(self.target.iter().zip(fitted.iter()).map(|(b, f)| b - f)) / self.target.len() as f64
    }

    /// Objective with the intercept fixed at `intercept`.
    pub fn objective(&self, intercept: f64, weights: &DVector<f64>) -> f64 {
        let fitted = &self.design * weights;
        let fit = compensated_sum(
            fitted
                .iter()
                .zip(self.target.iter())
                .map(|(f, b)| (intercept + f - b).powi(2)),
        );
        fit + self.ridge * weights.norm_squared()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexSolution {
    pub weights: DVector<f64>,
    pub intercept: f64,
    pub report: SolverReport,
    /// Objective after initialization and after each iteration, when requested.
    pub trace: Vec<f64>,
}

/// Profiled quadratic `x'Gx - 2h'x + c` on the simplex.
struct ProfiledQuadratic {
    gram: DMatrix<f64>,
    linear: DVector<f64>,
    constant: f64,
}

impl ProfiledQuadratic {
    fn new(problem: &SimplexProblem) -> Self {
        let rows = problem.design.nrows() as f64;
        let mut a = problem.design.clone();
        for mut col in a.column_iter_mut() {
            let mean = col.sum() / rows;
            col.add_scalar_mut(-mean);
        }
        let mean_b = problem.target.sum() / rows;
        let b = problem.target.add_scalar(-mean_b);
        let mut gram = a.tr_mul(&a);
        for i in 0..gram.nrows() {
            gram[(i, i)] += problem.ridge;
        }
        Self {
            linear: a.tr_mul(&b),
            constant: b.norm_squared(),
            gram,
        }
    }

    fn value(&self, x: &DVector<f64>, gx: &DVector<f64>) -> f64 {
        (x.dot(gx) - 2.0 * self.linear.dot(x) + self.constant).max(0.0)
    }
}

fn argmin_lowest(values: impl Iterator<Item = (usize, f64)>) -> usize {
    let mut best = (usize::MAX, f64::INFINITY);
    for (i, v) in values {
        if v < best.1 || best.0 == usize::MAX {
            best = (i, v);
        }
    }
    best.0
}

/// Clamps tiny negative entries to zero and renormalizes onto the simplex.
fn clean_simplex(x: &mut DVector<f64>) {
    for v in x.iter_mut() {
        if *v < 0.0 {
            debug_assert!(*v >= -1e-12, "simplex iterate left the feasible set: {v}");
            *v = 0.0;
        }
    }
    let s = compensated_sum(x.iter().copied());
    *x /= s;
}

/// Least squares over the probability simplex with a free intercept.
///
/// Starts from the uniform point and alternates Frank–Wolfe (toward-vertex)
/// and away steps, whichever has the larger directional gap, each with an
/// exact line search. The intercept is profiled out by centering, so the
/// iterates only live on the simplex. Stops when the Frank–Wolfe duality gap
/// drops to `tol`; otherwise returns the last iterate with
/// `converged == false`. Ties in the vertex oracle go to the lowest index.
pub fn frank_wolfe_simplex(problem: &SimplexProblem, options: &SolverOptions) -> Result<SimplexSolution> {
    if !(options.tol > 0.0) {
        return Err(Error::Domain(format!("tolerance {} must be positive", options.tol)));
    }
    let n = problem.design.ncols();
    let quad = ProfiledQuadratic::new(problem);
    let mut x = DVector::from_element(n, 1.0 / n as f64);
    let mut gx = &quad.gram * &x;
    let mut trace = Vec::new();
    if options.record_trace {
        trace.push(quad.value(&x, &gx));
    }

    let mut iterations = 0;
    let mut gap = 0.0;
    let mut converged = n == 1;
    while !converged {
        let grad = 2.0 * (&gx - &quad.linear);
        let gx_dot = grad.dot(&x);
        let s = argmin_lowest(grad.iter().copied().enumerate());
        gap = gx_dot - grad[s];
        if gap <= options.tol {
            converged = true;
            break;
        }
        if iterations >= options.max_iter {
            break;
        }
        iterations += 1;

        // away vertex: the active coordinate with the largest gradient
        let a = argmin_lowest(
            grad.iter()
                .enumerate()
                .filter(|(i, _)| x[*i] > 0.0)
                .map(|(i, g)| (i, -g)),
        );
        let away_gap = grad[a] - gx_dot;

        let (mut direction, max_step, away) = if gap >= away_gap || x[a] >= 1.0 {
            let mut d = -x.clone();
            d[s] += 1.0;
            (d, 1.0, false)
        } else {
            let mut d = x.clone();
            d[a] -= 1.0;
            (d, x[a] / (1.0 - x[a]), true)
        };
        let slope = grad.dot(&direction);
        let curvature = direction.dot(&(&quad.gram * &direction));
        let step = if curvature > 0.0 {
            (-slope / (2.0 * curvature)).min(max_step)
        } else {
            max_step
        };
        if !(step > 0.0) {
            // no descent possible in floating point
            break;
        }
        direction *= step;
        x += direction;
        if away && step >= max_step {
            x[a] = 0.0;
        }
        if !away && step >= 1.0 {
            x.fill(0.0);
            x[s] = 1.0;
        }
        for v in x.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        gx = &quad.gram * &x;
        if options.record_trace {
            trace.push(quad.value(&x, &gx));
        }
    }
    if n == 1 {
        gap = 0.0;
    }

    clean_simplex(&mut x);
    let intercept = problem.intercept(&x);
    let final_objective = problem.objective(intercept, &x);
    Ok(SimplexSolution {
        weights: x,
        intercept,
        report: SolverReport {
            iterations,
            final_objective,
            gradient_gap: gap,
            converged,
        },
        trace,
    })
}

/// Regularization level and the first-difference statistics behind it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZetaReport {
    pub zeta: f64,
    pub sigma_hat: f64,
    /// Mean first difference over control groups and pre-periods.
    pub mean_difference: f64,
}

/// Ridge level for the unit weights: `(K_tr * T_post)^(1/4) * sigma_hat`,
/// where `sigma_hat^2` is the (1/n) variance of first differences of the
/// control pre-period cell means.
pub fn compute_zeta(panel: &AggregatedPanel) -> Result<ZetaReport> {
    let layout = panel.layout();
    if layout.t_pre() < 2 {
        return Err(Error::Domain(format!(
            "regularization needs at least two pre-treatment periods (T_pre={})",
            layout.t_pre()
        )));
    }
    let diffs: Vec<f64> = (0..layout.k_co())
        .flat_map(|k| (0..layout.t_pre() - 1).map(move |t| panel.mean(k, t + 1) - panel.mean(k, t)))
        .collect();
    let n = diffs.len() as f64;
    let mean_difference = compensated_sum(diffs.iter().copied()) / n;
    let variance = compensated_sum(diffs.iter().map(|d| (d - mean_difference).powi(2))) / n;
    let sigma_hat = variance.sqrt();
    let zeta = ((layout.k_tr() * layout.t_post()) as f64).powf(0.25) * sigma_hat;
    Ok(ZetaReport {
        zeta,
        sigma_hat,
        mean_difference,
    })
}

/// Control-group weights matching the treated pre-period average.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitWeights {
    pub omega0: f64,
    /// One weight per control group, on the simplex. Treated groups carry `1/K_tr`.
    pub omega: DVector<f64>,
    pub zeta: f64,
    pub solver_report: SolverReport,
}

/// Pre-period weights matching the control post-period average.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeWeights {
    pub lambda0: f64,
    /// One weight per pre-period, on the simplex. Post periods carry `1/T_post`.
    pub lambda: DVector<f64>,
    pub solver_report: SolverReport,
}

/// Cross-sectional weights `1 / N_{k,t}` on the `K x T` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NuWeights {
    pub nu: DMatrix<f64>,
}

pub fn unit_weight_problem(panel: &AggregatedPanel, zeta: f64) -> Result<SimplexProblem> {
    let layout = panel.layout();
    let (k_co, t_pre) = (layout.k_co(), layout.t_pre());
    let design = DMatrix::from_fn(t_pre, k_co, |t, k| panel.mean(k, t));
    let target = DVector::from_fn(t_pre, |t, _| {
        compensated_sum((k_co..layout.k()).map(|k| panel.mean(k, t))) / layout.k_tr() as f64
    });
    if !(zeta >= 0.0) {
        return Err(Error::Domain(format!("zeta {zeta} must be >= 0")));
    }
    SimplexProblem::new(design, target, zeta * zeta * t_pre as f64)
}

pub fn time_weight_problem(panel: &AggregatedPanel) -> Result<SimplexProblem> {
    let layout = panel.layout();
    let (k_co, t_pre) = (layout.k_co(), layout.t_pre());
    let design = DMatrix::from_fn(k_co, t_pre, |k, t| panel.mean(k, t));
    let target = DVector::from_fn(k_co, |k, _| {
        compensated_sum((t_pre..layout.t()).map(|t| panel.mean(k, t))) / layout.t_post() as f64
    });
    SimplexProblem::new(design, target, 0.0)
}

pub fn solve_unit_weights(panel: &AggregatedPanel, zeta: f64) -> Result<UnitWeights> {
    solve_unit_weights_with(panel, zeta, &SolverOptions::default())
}

pub fn solve_unit_weights_with(panel: &AggregatedPanel, zeta: f64, options: &SolverOptions) -> Result<UnitWeights> {
    let problem = unit_weight_problem(panel, zeta)?;
    let sol = frank_wolfe_simplex(&problem, options)?;
    Ok(UnitWeights {
        omega0: sol.intercept,
        omega: sol.weights,
        zeta,
        solver_report: sol.report,
    })
}

pub fn solve_time_weights(panel: &AggregatedPanel) -> Result<TimeWeights> {
    solve_time_weights_with(panel, &SolverOptions::default())
}

pub fn solve_time_weights_with(panel: &AggregatedPanel, options: &SolverOptions) -> Result<TimeWeights> {
    let problem = time_weight_problem(panel)?;
    let sol = frank_wolfe_simplex(&problem, options)?;
    Ok(TimeWeights {
        lambda0: sol.intercept,
        lambda: sol.weights,
        solver_report: sol.report,
    })
}

pub fn cross_sectional_weights(panel: &AggregatedPanel) -> NuWeights {
    NuWeights {
        nu: panel.counts().map(|n| 1.0 / n as f64),
    }
}
