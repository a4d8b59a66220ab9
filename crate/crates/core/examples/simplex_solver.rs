//! The simplex-constrained least-squares kernel on its own: find the convex
//! combination of columns closest to a target, with a free intercept and an
//! optional ridge penalty.

use nalgebra::{DMatrix, DVector};
use rcsdid::weights::{frank_wolfe_simplex, SimplexProblem, SolverOptions};

fn main() -> rcsdid::Result<()> {
    // Target is 0.3 * column 0 + 0.7 * column 2 plus an offset of 5.
    let a = DMatrix::from_row_slice(5, 3, &[
        1.0, 0.0, 2.0, //
        3.0, 1.0, -1.0, //
        0.0, 4.0, 1.0, //
        -2.0, 1.0, 3.0, //
        1.0, -1.0, 0.0,
    ]);
    let truth = DVector::from_column_slice(&[0.3, 0.0, 0.7]);
    let b = &a * &truth + DVector::from_element(5, 5.0);

    let options = SolverOptions {
        record_trace: true,
        ..Default::default()
    };
    for ridge in [0.0, 1.0, 10.0] {
        let problem = SimplexProblem::new(a.clone(), b.clone(), ridge)?;
        let sol = frank_wolfe_simplex(&problem, &options)?;
        let w: Vec<String> = sol.weights.iter().map(|x| format!("{x:.4}")).collect();
        println!(
            "ridge {ridge:>4}: weights [{}], intercept {:.4}, objective {:.3e}, {} iterations",
            w.join(", "),
            sol.intercept,
            sol.report.final_objective,
            sol.report.iterations
        );
    }
    Ok(())
}
