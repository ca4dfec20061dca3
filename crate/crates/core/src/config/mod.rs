//! Run configuration and the component expression language.
//!
//! Configuration files are a flat TOML subset: `key = value` lines where
//! values are strings, numbers or arrays of numbers. Absent keys take the
//! defaults listed on [`Params`]; unknown keys are rejected.

mod grammar;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;
use toml::Value;

pub use self::grammar::{lookup, parse_expression, Arity, Family, RegistryEntry, SpecTree, REGISTRY};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("unknown identifier `{0}`")]
    UnknownIdentifier(String),
    #[error("`{name}` takes {expected}, found {found}")]
    Arity {
        name: String,
        expected: Arity,
        found: usize,
    },
    #[error("syntax error at offset {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("`{name}` is not a {expected:?} component")]
    WrongFamily { name: String, expected: Family },
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("key `{key}`: expected {expected}")]
    TypeMismatch { key: String, expected: &'static str },
    #[error("key `{key}`: {msg}")]
    Range { key: String, msg: String },
    #[error("invalid configuration document: {0}")]
    Document(String),
}

/// How kernel hyperparameters are learned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LearningType {
    /// Maximum marginal likelihood point estimate.
    Ml,
    /// Maximum a posteriori point estimate.
    Map,
    /// Slice-sampled particles.
    Mcmc,
}

/// Objective used to score kernel hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreType {
    Ml,
    Map,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMethod {
    Lhs,
    Sobol,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Verbosity {
    Quiet,
    Info,
    Debug,
}

macro_rules! keyword_enum {
    ($ty:ty, $what:literal, { $($($text:literal)|+ => $variant:expr),+ $(,)? }, canonical: { $($v:pat => $c:literal),+ $(,)? }) => {
        impl FromStr for $ty {
            type Err = ();
            fn from_str(s: &str) -> Result<Self, ()> {
                match s {
                    $($($text)|+ => Ok($variant),)+
                    _ => Err(()),
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($v => $c),+ })
            }
        }

        impl $ty {
            const EXPECTED: &'static str = $what;
        }
    };
}

keyword_enum!(LearningType, "one of ML, MAP, MCMC", {
    "ML" | "L_ML" | "L_EMPIRICAL" => LearningType::Ml,
    "MAP" | "L_MAP" => LearningType::Map,
    "MCMC" | "L_MCMC" => LearningType::Mcmc,
}, canonical: {
    LearningType::Ml => "ML",
    LearningType::Map => "MAP",
    LearningType::Mcmc => "MCMC",
});

keyword_enum!(ScoreType, "one of SC_ML, SC_MAP", {
    "SC_ML" => ScoreType::Ml,
    "SC_MAP" => ScoreType::Map,
}, canonical: {
    ScoreType::Ml => "SC_ML",
    ScoreType::Map => "SC_MAP",
});

keyword_enum!(InitMethod, "one of LHS, SOBOL, UNIFORM", {
    "LHS" => InitMethod::Lhs,
    "SOBOL" => InitMethod::Sobol,
    "UNIFORM" => InitMethod::Uniform,
}, canonical: {
    InitMethod::Lhs => "LHS",
    InitMethod::Sobol => "SOBOL",
    InitMethod::Uniform => "UNIFORM",
});

keyword_enum!(Verbosity, "one of quiet, info, debug", {
    "quiet" => Verbosity::Quiet,
    "info" => Verbosity::Info,
    "debug" => Verbosity::Debug,
}, canonical: {
    Verbosity::Quiet => "quiet",
    Verbosity::Info => "info",
    Verbosity::Debug => "debug",
});

/// Default prior mean of every kernel parameter.
pub const DEFAULT_HP_MEAN: f64 = 1.0;
/// Default prior standard deviation (in log space) of every kernel parameter.
pub const DEFAULT_HP_STD: f64 = 1.0;

/// Full configuration of an optimization run.
///
/// | key | default |
/// |---|---|
/// | `surr_name` | `"sGaussianProcess"` |
/// | `crit_name` | `"cEI"` |
/// | `kernel_name` | `"kMaternISO3"` |
/// | `mean_name` | `"mZero"` |
/// | `kernel_hp_mean` | `1.0` per kernel parameter |
/// | `kernel_hp_std` | `1.0` per kernel parameter (log space) |
/// | `prior_alpha`, `prior_beta` | `1.0`, `1.0` |
/// | `mean_w0` | zeros |
/// | `mean_w_scale` | `10.0` |
/// | `noise` | `1e-6` |
/// | `l_type` | `"MAP"` |
/// | `sc_type` | `"SC_MAP"` |
/// | `learn_frequency` | `20` |
/// | `n_iterations` | `190` |
/// | `n_init_samples` | `10` |
/// | `init_method` | `"LHS"` |
/// | `n_inner_global_evals` | `1000` |
/// | `n_inner_local_evals` | `200` |
/// | `epsilon` | `0.0` |
/// | `hedge_eta` | `1.0` |
/// | `lcb_kappa` | `1.0` |
/// | `mcmc_particles` | `10` |
/// | `mcmc_burnin` | `100` |
/// | `random_seed` | `1` |
/// | `verbose` | `"quiet"` |
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub surr_name: String,
    pub crit_name: String,
    pub kernel_name: String,
    pub mean_name: String,
    pub kernel_hp_mean: Vec<f64>,
    pub kernel_hp_std: Vec<f64>,
    pub prior_alpha: f64,
    pub prior_beta: f64,
    /// Prior mean of the basis weights; empty means all zeros.
    pub mean_w0: Vec<f64>,
    pub mean_w_scale: f64,
    /// Observation noise variance relative to the signal variance.
    pub noise: f64,
    pub l_type: LearningType,
    pub sc_type: ScoreType,
    pub learn_frequency: usize,
    pub n_iterations: usize,
    pub n_init_samples: usize,
    pub init_method: InitMethod,
    pub n_inner_global_evals: usize,
    pub n_inner_local_evals: usize,
    pub epsilon: f64,
    pub hedge_eta: f64,
    pub lcb_kappa: f64,
    pub mcmc_particles: usize,
    pub mcmc_burnin: usize,
    pub random_seed: u64,
    pub verbose: Verbosity,
}

impl Default for Params {
    fn default() -> Self {
        default_params()
    }
}

pub fn default_params() -> Params {
    Params {
        surr_name: "sGaussianProcess".into(),
        crit_name: "cEI".into(),
        kernel_name: "kMaternISO3".into(),
        mean_name: "mZero".into(),
        kernel_hp_mean: vec![DEFAULT_HP_MEAN],
        kernel_hp_std: vec![DEFAULT_HP_STD],
        prior_alpha: 1.0,
        prior_beta: 1.0,
        mean_w0: Vec::new(),
        mean_w_scale: 10.0,
        noise: 1e-6,
        l_type: LearningType::Map,
        sc_type: ScoreType::Map,
        learn_frequency: 20,
        n_iterations: 190,
        n_init_samples: 10,
        init_method: InitMethod::Lhs,
        n_inner_global_evals: 1000,
        n_inner_local_evals: 200,
        epsilon: 0.0,
        hedge_eta: 1.0,
        lcb_kappa: 1.0,
        mcmc_particles: 10,
        mcmc_burnin: 100,
        random_seed: 1,
        verbose: Verbosity::Quiet,
    }
}

/// Number of kernel parameters of a parsed kernel expression.
pub fn kernel_param_count(tree: &SpecTree) -> usize {
    match tree.node.as_str() {
        "kRQISO" => 2,
        "kSum" | "kProd" => tree.children.iter().map(kernel_param_count).sum(),
        _ => 1,
    }
}

const KEYS: &[&str] = &[
    "surr_name",
    "crit_name",
    "kernel_name",
    "mean_name",
    "kernel_hp_mean",
    "kernel_hp_std",
    "prior_alpha",
    "prior_beta",
    "mean_w0",
    "mean_w_scale",
    "noise",
    "l_type",
    "sc_type",
    "learn_frequency",
    "n_iterations",
    "n_init_samples",
    "init_method",
    "n_inner_global_evals",
    "n_inner_local_evals",
    "epsilon",
    "hedge_eta",
    "lcb_kappa",
    "mcmc_particles",
    "mcmc_burnin",
    "random_seed",
    "verbose",
];

fn mismatch(key: &str, expected: &'static str) -> ConfigError {
    ConfigError::TypeMismatch {
        key: key.to_string(),
        expected,
    }
}

fn range(key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Range {
        key: key.to_string(),
        msg: msg.into(),
    }
}

fn as_string<'a>(key: &str, v: &'a Value) -> Result<&'a str, ConfigError> {
    v.as_str().ok_or_else(|| mismatch(key, "a string"))
}

fn as_real(key: &str, v: &Value) -> Result<f64, ConfigError> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(mismatch(key, "a number")),
    }
}

fn as_count(key: &str, v: &Value) -> Result<usize, ConfigError> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as usize),
        Value::Integer(_) => Err(range(key, "must be nonnegative")),
        _ => Err(mismatch(key, "an integer")),
    }
}

fn as_reals(key: &str, v: &Value) -> Result<Vec<f64>, ConfigError> {
    match v {
        Value::Array(items) => items.iter().map(|x| as_real(key, x)).collect(),
        Value::Float(_) | Value::Integer(_) => Ok(vec![as_real(key, v)?]),
        _ => Err(mismatch(key, "a number array")),
    }
}

fn as_keyword<T: FromStr>(key: &str, v: &Value, expected: &'static str) -> Result<T, ConfigError> {
    as_string(key, v)?.parse().map_err(|_| mismatch(key, expected))
}

/// Parses a flat `key = value` configuration document.
///
/// The result is independent of key order. Kernel hyperprior vectors left
/// unspecified are sized to the configured kernel.
pub fn parse_params(doc: &str) -> Result<Params, ConfigError> {
    let table: toml::Table = doc
        .parse()
        .map_err(|e: toml::de::Error| ConfigError::Document(e.message().to_string()))?;
    params_from_table(&table)
}

/// Builds parameters from an already parsed TOML table, see [`parse_params`].
pub fn params_from_table(table: &toml::Table) -> Result<Params, ConfigError> {
    let mut p = default_params();
    let mut hp_mean_set = false;
    let mut hp_std_set = false;
    for (key, v) in table {
        let k = key.as_str();
        match k {
            "surr_name" => p.surr_name = as_string(k, v)?.to_string(),
            "crit_name" => p.crit_name = as_string(k, v)?.to_string(),
            "kernel_name" => p.kernel_name = as_string(k, v)?.to_string(),
            "mean_name" => p.mean_name = as_string(k, v)?.to_string(),
            "kernel_hp_mean" => {
                p.kernel_hp_mean = as_reals(k, v)?;
                hp_mean_set = true;
            }
            "kernel_hp_std" => {
                p.kernel_hp_std = as_reals(k, v)?;
                hp_std_set = true;
            }
            "prior_alpha" => p.prior_alpha = as_real(k, v)?,
            "prior_beta" => p.prior_beta = as_real(k, v)?,
            "mean_w0" => p.mean_w0 = as_reals(k, v)?,
            "mean_w_scale" => p.mean_w_scale = as_real(k, v)?,
            "noise" => p.noise = as_real(k, v)?,
            "l_type" => p.l_type = as_keyword(k, v, LearningType::EXPECTED)?,
            "sc_type" => p.sc_type = as_keyword(k, v, ScoreType::EXPECTED)?,
            "learn_frequency" => p.learn_frequency = as_count(k, v)?,
            "n_iterations" => p.n_iterations = as_count(k, v)?,
            "n_init_samples" => p.n_init_samples = as_count(k, v)?,
            "init_method" => p.init_method = as_keyword(k, v, InitMethod::EXPECTED)?,
            "n_inner_global_evals" => p.n_inner_global_evals = as_count(k, v)?,
            "n_inner_local_evals" => p.n_inner_local_evals = as_count(k, v)?,
            "epsilon" => p.epsilon = as_real(k, v)?,
            "hedge_eta" => p.hedge_eta = as_real(k, v)?,
            "lcb_kappa" => p.lcb_kappa = as_real(k, v)?,
            "mcmc_particles" => p.mcmc_particles = as_count(k, v)?,
            "mcmc_burnin" => p.mcmc_burnin = as_count(k, v)?,
            "random_seed" => p.random_seed = as_count(k, v)? as u64,
            "verbose" => p.verbose = as_keyword(k, v, Verbosity::EXPECTED)?,
            other => {
                debug_assert!(!KEYS.contains(&other));
                return Err(ConfigError::UnknownKey(other.to_string()));
            }
        }
    }
    let kernel = parse_expression(&p.kernel_name)?;
    let n = kernel_param_count(&kernel);
    if !hp_mean_set {
        p.kernel_hp_mean = vec![DEFAULT_HP_MEAN; n];
    }
    if !hp_std_set {
        p.kernel_hp_std = vec![DEFAULT_HP_STD; n];
    }
    p.validate()?;
    Ok(p)
}

/// Parsed component trees of a validated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentSpecs {
    pub surrogate: SpecTree,
    pub criterion: SpecTree,
    pub kernel: SpecTree,
    pub mean: SpecTree,
}

impl Params {
    /// Parses all component expressions and checks their families.
    pub fn components(&self) -> Result<ComponentSpecs, ConfigError> {
        let parse = |text: &str, family| -> Result<SpecTree, ConfigError> {
            let t = parse_expression(text)?;
            t.expect_family(family)?;
            Ok(t)
        };
        let criterion = parse(&self.crit_name, Family::Criterion)?;
        if criterion.node == "cHedge" && criterion.children.iter().any(|c| !c.is_leaf()) {
            return Err(ConfigError::Range {
                key: "crit_name".into(),
                msg: "cHedge children must be simple criteria".into(),
            });
        }
        Ok(ComponentSpecs {
            surrogate: parse(&self.surr_name, Family::Surrogate)?,
            criterion,
            kernel: parse(&self.kernel_name, Family::Kernel)?,
            mean: parse(&self.mean_name, Family::Mean)?,
        })
    }

    /// Checks every range constraint and the hyperprior vector lengths.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let specs = self.components()?;
        let n = kernel_param_count(&specs.kernel);
        for (key, v) in [("kernel_hp_mean", &self.kernel_hp_mean), ("kernel_hp_std", &self.kernel_hp_std)] {
            if v.len() != n {
                return Err(range(
                    key,
                    format!("kernel `{}` has {n} parameters, got {} values", self.kernel_name, v.len()),
                ));
            }
            if v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return Err(range(key, "entries must be positive and finite"));
            }
        }
        let positive = [
            ("prior_alpha", self.prior_alpha),
            ("prior_beta", self.prior_beta),
            ("mean_w_scale", self.mean_w_scale),
            ("hedge_eta", self.hedge_eta),
            ("lcb_kappa", self.lcb_kappa),
        ];
        for (key, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(range(key, "must be positive"));
            }
        }
        if self.mean_w0.iter().any(|w| !w.is_finite()) {
            return Err(range("mean_w0", "entries must be finite"));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(range("noise", "must be nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(range("epsilon", "must lie in [0, 1]"));
        }
        let counts = [
            ("learn_frequency", self.learn_frequency),
            ("n_init_samples", self.n_init_samples),
            ("n_inner_global_evals", self.n_inner_global_evals),
            ("n_inner_local_evals", self.n_inner_local_evals),
            ("mcmc_particles", self.mcmc_particles),
        ];
        for (key, v) in counts {
            if v == 0 {
                return Err(range(key, "must be at least 1"));
            }
        }
        Ok(())
    }

    /// Renders the configuration in the format accepted by [`parse_params`].
    pub fn to_config_string(&self) -> String {
        fn list(v: &[f64]) -> String {
            let items: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
            format!("[{}]", items.join(", "))
        }
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        line("surr_name", format!("{:?}", self.surr_name));
        line("crit_name", format!("{:?}", self.crit_name));
        line("kernel_name", format!("{:?}", self.kernel_name));
        line("mean_name", format!("{:?}", self.mean_name));
        line("kernel_hp_mean", list(&self.kernel_hp_mean));
        line("kernel_hp_std", list(&self.kernel_hp_std));
        line("prior_alpha", format!("{:?}", self.prior_alpha));
        line("prior_beta", format!("{:?}", self.prior_beta));
        line("mean_w0", list(&self.mean_w0));
        line("mean_w_scale", format!("{:?}", self.mean_w_scale));
        line("noise", format!("{:?}", self.noise));
        line("l_type", format!("\"{}\"", self.l_type));
        line("sc_type", format!("\"{}\"", self.sc_type));
        line("learn_frequency", self.learn_frequency.to_string());
        line("n_iterations", self.n_iterations.to_string());
        line("n_init_samples", self.n_init_samples.to_string());
        line("init_method", format!("\"{}\"", self.init_method));
        line("n_inner_global_evals", self.n_inner_global_evals.to_string());
        line("n_inner_local_evals", self.n_inner_local_evals.to_string());
        line("epsilon", format!("{:?}", self.epsilon));
        line("hedge_eta", format!("{:?}", self.hedge_eta));
        line("lcb_kappa", format!("{:?}", self.lcb_kappa));
        line("mcmc_particles", self.mcmc_particles.to_string());
        line("mcmc_burnin", self.mcmc_burnin.to_string());
        line("random_seed", self.random_seed.to_string());
        line("verbose", format!("\"{}\"", self.verbose));
        s
    }
}
