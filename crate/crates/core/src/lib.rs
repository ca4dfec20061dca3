//! Bayesian optimization of expensive black-box functions over box-bounded
//! continuous domains.
//!
//! The optimizer follows the usual loop: evaluate an initial design, fit a
//! probabilistic surrogate (Gaussian process or Student-t process with a
//! normal-inverse-gamma prior), maximize an acquisition criterion to pick the
//! next point, evaluate it and update the surrogate incrementally.
//!
//! Components are selected by name and may be combined with a small
//! expression language (`kSum(kMaternISO3,kRQISO)`, `cHedge(cEI,cLCB)`), see
//! [`config`].
//!
//! ```no_run
//! use bayesopt::{default_params, Bounds, FnProblem, Optimizer};
//!
//! let mut params = default_params();
//! params.n_init_samples = 5;
//! params.n_iterations = 20;
//! let bounds = Bounds::new(vec![-2.0], vec![2.0]).unwrap();
//! let problem = FnProblem::new(bounds, |x: &[f64]| (x[0] - 0.3).powi(2));
//! let result = Optimizer::new(problem, params).unwrap().run().unwrap();
//! println!("{:?} -> {}", result.x_best, result.y_best);
//! ```

pub mod bench;
pub mod config;
pub mod criteria;
pub mod design;
pub mod inner;
pub mod kernels;
pub mod learning;
pub mod linalg;
pub mod optimizer;
pub mod surrogate;

use thiserror::Error;

pub use crate::config::{default_params, parse_params, Params};
pub use crate::inner::Bounds;
pub use crate::optimizer::{AskTell, EvalError, FnProblem, History, OptResult, Optimizer, Problem, Record};

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Linalg(#[from] linalg::LinalgError),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("{what}: expected length {expected}, found {found}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("kernel parameters must be positive and finite: {0:?}")]
    InvalidHyperParams(Vec<f64>),
    #[error("basis design matrix is rank deficient ({n} points, {p} basis functions)")]
    DegenerateBasis { n: usize, p: usize },
    #[error("invalid dataset: {0}")]
    InvalidData(String),
    #[error("invalid bounds: {0}")]
    InvalidBounds(String),
    #[error("Sobol sequence supports at most {max} dimensions, requested {requested}")]
    UnsupportedDimension { requested: usize, max: usize },
    #[error("could not find reachable initial points after {attempts} attempts")]
    InitDesignInfeasible { attempts: usize },
    #[error("target evaluation failed: {0}")]
    Evaluation(#[from] optimizer::EvalError),
    #[error("ask/tell protocol violation: {0}")]
    OutOfOrder(&'static str),
    #[error("evaluation budget exhausted")]
    BudgetExhausted,
    #[error("run {run}: {source}")]
    Run {
        run: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
