//! Test-side oracles shared by the integration targets.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rcsdid::data::{AggregatedPanel, PanelLayout};

/// Direct objective of `min_c ||c 1 + A x - b||^2 + ridge ||x||^2` at `x`,
/// with `c` set to its optimum.
pub fn direct_objective(a: &DMatrix<f64>, b: &DVector<f64>, ridge: f64, x: &DVector<f64>) -> f64 {
    let resid = b - a * x;
    let c = resid.mean();
    resid.iter().map(|r| (c - r).powi(2)).sum::<f64>() + ridge * x.norm_squared()
}

/// Minimum of the objective over the simplex grid with spacing `1/steps`,
/// and the minimizing point. The value is recomputed directly at that point.
pub fn grid_search(a: &DMatrix<f64>, b: &DVector<f64>, ridge: f64, steps: usize) -> (f64, DVector<f64>) {
    let d = a.ncols();
    let rows = a.nrows() as f64;
    let mut ac = a.clone();
    for mut col in ac.column_iter_mut() {
        let m = col.sum() / rows;
        col.add_scalar_mut(-m);
    }
    let bc = b.add_scalar(-b.sum() / rows);
    let mut g = ac.tr_mul(&ac);
    for i in 0..d {
        g[(i, i)] += ridge;
    }
    let h = ac.tr_mul(&bc);
    let c0 = bc.norm_squared();
    let quad = |x: &DVector<f64>| x.dot(&(&g * x)) - 2.0 * h.dot(x) + c0;

    if d == 1 {
        let x = DVector::from_element(1, 1.0);
        return (quad(&x), x);
    }
    let inv = 1.0 / steps as f64;
    let mut best = (f64::INFINITY, DVector::zeros(d));
    let mut counts = vec![0usize; d];
    // Outer coordinates 0..d-2 are enumerated; coordinate d-2 walks
    // incrementally with the remainder on coordinate d-1.
    let outer = d - 2;
    loop {
        let used: usize = counts[..outer].iter().sum();
        if used <= steps {
            let free = steps - used;
            let mut x = DVector::zeros(d);
            for i in 0..outer {
                x[i] = counts[i] as f64 * inv;
            }
            x[d - 1] = free as f64 * inv;
            let mut delta = DVector::zeros(d);
            delta[d - 2] = inv;
            delta[d - 1] = -inv;
            let step_quad = delta.dot(&(&g * &delta));
            // Along delta the slope delta'(Gx - h) grows by delta'G delta per step.
            let mut slope = delta.dot(&(&g * &x - &h));
            let mut value = quad(&x);
            for j in 0..=free {
                if value < best.0 {
                    let mut point = x.clone();
                    point[d - 2] = j as f64 * inv;
                    point[d - 1] = (free - j) as f64 * inv;
                    best = (value, point);
                }
                value += 2.0 * slope + step_quad;
                slope += step_quad;
            }
        }
        // Advance the outer odometer.
        let mut i = 0;
        loop {
            if i == outer {
                let value = quad(&best.1);
                return (value, best.1);
            }
            counts[i] += 1;
            if counts[..outer].iter().sum::<usize>() <= steps {
                break;
            }
            counts[i] = 0;
            i += 1;
        }
    }
}

/// Weighted least squares on the dense dummy design `[1, D_group, D_period, W]`,
/// solved by QR rather than through normal equations. Returns tau.
pub fn dense_gls_tau(layout: &PanelLayout, means: &DMatrix<f64>, cell_weights: &DMatrix<f64>) -> f64 {
    let (k, t) = (layout.k(), layout.t());
    let p = 1 + k + t + 1;
    let mut x = DMatrix::zeros(k * t, p);
    let mut y = DVector::zeros(k * t);
    for g in 0..k {
        for s in 0..t {
            let row = g * t + s;
            let sw = cell_weights[(g, s)].sqrt();
            x[(row, 0)] = sw;
            x[(row, 1 + g)] = sw;
            x[(row, 1 + k + s)] = sw;
            if layout.treatment(g, s) {
                x[(row, p - 1)] = sw;
            }
            y[row] = sw * means[(g, s)];
        }
    }
    // Drop empty columns and one reference level per factor, then solve the
    // full-rank least squares problem by Householder QR.
    let active = |c: usize| x.column(c).iter().any(|v| *v != 0.0);
    let ref_group = (1..1 + k).find(|&c| active(c));
    let ref_period = (1 + k..1 + k + t).find(|&c| active(c));
    let keep: Vec<usize> = (0..p)
        .filter(|&c| active(c) && Some(c) != ref_group && Some(c) != ref_period)
        .collect();
    let xr = x.select_columns(keep.iter());
    let qr = xr.qr();
    let rhs = qr.q().transpose() * &y;
    let coef = qr.r().solve_upper_triangular(&rhs).expect("full-rank design");
    coef[coef.len() - 1]
}

/// Random panel with standard-normal cell means and counts in `1..=50`.
pub fn random_panel(rng: &mut ChaCha8Rng, k_co: usize, k_tr: usize, t_pre: usize, t_post: usize) -> AggregatedPanel {
    let layout = PanelLayout::new(k_co, k_tr, t_pre, t_post).unwrap();
    let means = DMatrix::from_fn(layout.k(), layout.t(), |_, _| rng.sample(rand_distr::StandardNormal));
    let counts = DMatrix::from_fn(layout.k(), layout.t(), |_, _| rng.random_range(1..=50u64));
    AggregatedPanel::from_parts(layout, means, counts).unwrap()
}

/// Exact minimum over the simplex by enumerating supports: on each support
/// the equality-constrained KKT system is solved, and infeasible or singular
/// supports are skipped. Some optimum has a support with a nonsingular KKT
/// matrix, so the best feasible value is the global minimum.
pub fn support_enumeration(a: &DMatrix<f64>, b: &DVector<f64>, ridge: f64) -> (f64, DVector<f64>) {
    let d = a.ncols();
    assert!(d <= 16, "support enumeration is exponential in the dimension");
    let mut best = (f64::INFINITY, DVector::zeros(d));
    for mask in 1u32..(1 << d) {
        let support: Vec<usize> = (0..d).filter(|i| mask & (1 << i) != 0).collect();
        let s = support.len();
        let rows = a.nrows() as f64;
        let mut kkt = DMatrix::zeros(s + 1, s + 1);
        let mut rhs = DVector::zeros(s + 1);
        let centered = |i: usize| a.column(i).add_scalar(-a.column(i).sum() / rows);
        let bc = b.add_scalar(-b.sum() / rows);
        for (p, &i) in support.iter().enumerate() {
            let ci = centered(i);
            for (q, &j) in support.iter().enumerate() {
                kkt[(p, q)] = 2.0 * ci.dot(&centered(j)) + if i == j { 2.0 * ridge } else { 0.0 };
            }
            kkt[(p, s)] = 1.0;
            kkt[(s, p)] = 1.0;
            rhs[p] = 2.0 * ci.dot(&bc);
        }
        rhs[s] = 1.0;
        let svd = kkt.clone().svd(true, true);
        if svd.singular_values.min() <= 1e-12 * svd.singular_values.max() {
            continue;
        }
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        if (0..s).any(|p| sol[p] < -1e-12) {
            continue;
        }
        let mut x = DVector::zeros(d);
        for (p, &i) in support.iter().enumerate() {
            x[i] = sol[p].max(0.0);
        }
        let value = direct_objective(a, b, ridge, &x);
        if value < best.0 {
            best = (value, x);
        }
    }
    best
}
