//! Synthetic difference-in-differences for repeated cross-sectional data.
//!
//! Individual observations are grouped into (group, period) cells. Unit and
//! time weights are fitted on the cell means, and a third cross-sectional
//! weight `1 / N_{k,t}` undoes the unequal cell sizes so that every cell
//! carries total weight `omega_k * lambda_t` in the final weighted
//! two-way fixed-effects regression.
//!
//! The crate is organised as:
//!
//! - [`data`]: long-format ingestion, validation and cell aggregation.
//! - [`weights`]: the simplex-constrained least-squares kernel and the three
//!   weight families (unit, time, cross-sectional).
//! - [`estimators`]: DiD, SDiD and RC-SDiD as weighted TWFE regressions.
//! - [`dgp`]: the interactive fixed-effects simulator with evolving cell counts.
//! - [`harness`]: Monte Carlo replication loops and the scenario tables.
//! - [`cli`]: the `rcsdid` command line front end.
//!
//! ```no_run
//! use rcsdid::{data, estimators};
//!
//! let schema = data::CsvSchema::default();
//! let layout = data::LayoutSpec::control_count(30, 15);
//! let dataset = data::load_long_csv("panel.csv", &schema, &layout)?;
//! let est = estimators::estimate_rcsdid(&dataset)?;
//! println!("tau = {}", est.tau_hat);
//! # Ok::<(), rcsdid::Error>(())
//! ```

pub mod cli;
pub mod data;
pub mod dgp;
mod error;
pub mod estimators;
pub mod harness;
pub mod numeric;
pub mod rng;
pub mod weights;

pub use error::{Error, Result};
