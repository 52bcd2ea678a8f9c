//! Copula-based multi-marker association test for bivariate phenotypes.
//!
//! Two traits (both continuous, or one binary and one continuous) are tied
//! together through a parametric copula. Under the null of no region effect
//! the copula and marginal GLMs are fitted by maximum likelihood; a
//! variance-component score test is then computed over a grid of
//! pleiotropy kernels and the per-kernel p-values are combined by an
//! analytic min-p procedure.
//!
//! Modules follow the pipeline:
//!
//! - [`copula`]: Gaussian, Frank and Clayton copulas.
//! - [`margins`]: marginal families, their CDFs and single-trait fits.
//! - [`joint_null`]: joint log-likelihood, null MLE and AIC model selection.
//! - [`score_engine`]: score vector, corrected information, Q statistics,
//!   quadratic-form tail probabilities and the min-p combination.
//! - [`sim_harness`]: data generation and type-I-error / power experiments.

pub mod copula;
pub mod error;
pub mod jet;
pub mod joint_null;
pub mod linalg;
pub mod margins;
mod optim;
pub mod par;
pub mod score_engine;
pub mod sim_harness;
pub mod special;

pub use copula::{CopulaFamily, CopulaSpec};
pub use error::{Error, Result};
pub use joint_null::{fit_null, select_model, NullFit, SelectionReport};
pub use margins::{MarginFamily, MarginSpec};
pub use par::Exec;
pub use score_engine::{run_cbmat, KernelConfig, ModelOptions, TestResult};
pub use sim_harness::{run_experiment, AnalysisOptions, ScenarioSpec};
