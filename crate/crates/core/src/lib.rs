//! Bootstrap model averaging for linear regression.
//!
//! Candidate OLS fits are combined with simplex weights chosen by minimising
//! a bootstrap estimate of in-sample squared error. Comparator criteria
//! (Mallows, jackknife, smoothed information criteria, selection), a
//! simplex-constrained QP solver, limiting-distribution confidence
//! intervals, and simulation harnesses are included.

pub mod criteria;
pub mod data;
pub mod error;
pub mod inference;
pub mod linalg;
pub mod methods;
pub mod parallel;
pub mod qp;
pub mod regression;
pub mod resampling;
pub mod scalar;
pub mod sim;

pub use criteria::{Method, MethodWeights, QuadraticCriterion};
pub use error::{Error, Result};
pub use inference::{AsymptoticInputs, ConfidenceInterval, LimitDrawSet};
pub use linalg::Matrix;
pub use methods::{estimate_methods, fit_btma, MPolicy, MethodOutcome, PointSettings};
pub use qp::{solve_simplex_qp, solve_simplex_qp_default, QpSolution, QpStatus};
pub use regression::{fit_all, fit_ols, CandidateModelSet, Dataset, FitBundle, IcKind, ModelFit};
pub use resampling::{draw_fullrank_plan, draw_plan, ResampleKind, ResamplePlan, SeedSpec};
pub use scalar::Real;

pub type Matrix64 = Matrix<f64>;
pub type Dataset64 = Dataset<f64>;
pub type ModelFit64 = ModelFit<f64>;
pub type FitBundle64 = FitBundle<f64>;
pub type QuadraticCriterion64 = QuadraticCriterion<f64>;
