//! Acquisition criteria, the GP-Hedge portfolio and ε-greedy exploration.
//!
//! Criteria are maximized while the target is minimized.

use rand::Rng;
use statrs::distribution::{Continuous, ContinuousCDF, Normal, StudentsT};

use crate::config::{ConfigError, Family, Params, SpecTree};
use crate::surrogate::{sample_from, PosteriorState, Predictive};

/// Above this many degrees of freedom the Student-t is treated as normal.
const GAUSSIAN_DOF: f64 = 1e7;

/// A single (non-portfolio) criterion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Criterion {
    /// Expected improvement.
    Ei,
    /// Negated lower confidence bound `-(μ - κ s)`.
    Lcb { kappa: f64 },
    /// Probability of improvement.
    Poi,
    /// Negated posterior sample.
    Thompson,
}

impl Criterion {
    pub fn name(&self) -> &'static str {
        match self {
            Criterion::Ei => "cEI",
            Criterion::Lcb { .. } => "cLCB",
            Criterion::Poi => "cPOI",
            Criterion::Thompson => "cThompsonSampling",
        }
    }

    fn from_leaf(tree: &SpecTree, params: &Params) -> Result<Self, ConfigError> {
        match tree.node.as_str() {
            "cEI" => Ok(Criterion::Ei),
            "cLCB" => Ok(Criterion::Lcb {
                kappa: params.lcb_kappa,
            }),
            "cPOI" => Ok(Criterion::Poi),
            "cThompsonSampling" => Ok(Criterion::Thompson),
            _ => Err(ConfigError::WrongFamily {
                name: tree.node.clone(),
                expected: Family::Criterion,
            }),
        }
    }

    /// Value of the criterion for one predictive distribution. Only
    /// Thompson sampling consumes randomness.
    pub fn value<R: Rng + ?Sized>(&self, pred: &Predictive, y_best: f64, rng: &mut R) -> f64 {
        match *self {
            Criterion::Ei => expected_improvement(pred, y_best),
            Criterion::Lcb { kappa } => -(pred.mean - kappa * pred.scale),
            Criterion::Poi => probability_of_improvement(pred, y_best),
            Criterion::Thompson => -sample_from(pred, rng),
        }
    }
}

/// Parsed criterion expression: one criterion or a GP-Hedge portfolio.
#[derive(Debug, Clone, PartialEq)]
pub enum CriterionSpec {
    Single(Criterion),
    Hedge(Vec<Criterion>),
}

impl CriterionSpec {
    pub fn new(tree: &SpecTree, params: &Params) -> Result<Self, ConfigError> {
        if tree.node == "cHedge" {
            let arms = tree
                .children
                .iter()
                .map(|c| {
                    if c.node == "cHedge" {
                        Err(ConfigError::Range {
                            key: "crit_name".into(),
                            msg: "cHedge cannot be nested".into(),
                        })
                    } else {
                        Criterion::from_leaf(c, params)
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            if arms.len() < 2 {
                return Err(ConfigError::Arity {
                    name: "cHedge".into(),
                    expected: crate::config::Arity::AtLeast(2),
                    found: arms.len(),
                });
            }
            Ok(CriterionSpec::Hedge(arms))
        } else {
            Ok(CriterionSpec::Single(Criterion::from_leaf(tree, params)?))
        }
    }

    pub fn name(&self) -> String {
        match self {
            CriterionSpec::Single(c) => c.name().to_string(),
            CriterionSpec::Hedge(arms) => {
                let names: Vec<&str> = arms.iter().map(Criterion::name).collect();
                format!("cHedge({})", names.join(","))
            }
        }
    }
}

fn std_cdf_pdf(z: f64, dof: f64) -> (f64, f64) {
    if dof.is_finite() && dof < GAUSSIAN_DOF {
        let t = StudentsT::new(0.0, 1.0, dof).expect("positive dof");
        (t.cdf(z), t.pdf(z))
    } else {
        let n = Normal::standard();
        (n.cdf(z), n.pdf(z))
    }
}

/// `E[max(y_best - Y, 0)]` for `Y` with the given predictive distribution.
///
/// Uses the Student-t closed form when `dof` is finite and greater than 1;
/// the expectation does not exist for `dof <= 1`, where the Gaussian form
/// is used instead.
pub fn expected_improvement(pred: &Predictive, y_best: f64) -> f64 {
    let diff = y_best - pred.mean;
    if pred.scale.is_nan() || pred.scale <= 0.0 {
        return diff.max(0.0);
    }
    let s = pred.scale;
    let z = diff / s;
    let nu = pred.dof;
    let ei = if nu.is_finite() && nu > 1.0 && nu < GAUSSIAN_DOF {
        let (cdf, pdf) = std_cdf_pdf(z, nu);
        diff * cdf + s * (nu + z * z) / (nu - 1.0) * pdf
    } else {
        let (cdf, pdf) = std_cdf_pdf(z, f64::INFINITY);
        diff * cdf + s * pdf
    };
    ei.max(0.0)
}

pub fn probability_of_improvement(pred: &Predictive, y_best: f64) -> f64 {
    if pred.scale.is_nan() || pred.scale <= 0.0 {
        return if pred.mean < y_best { 1.0 } else { 0.0 };
    }
    std_cdf_pdf((y_best - pred.mean) / pred.scale, pred.dof).0
}

/// Criterion value at `xq`, averaged over the posterior particles.
pub fn crit_eval<R: Rng + ?Sized>(
    criterion: &Criterion,
    states: &[PosteriorState],
    xq: &[f64],
    y_best: f64,
    rng: &mut R,
) -> crate::Result<f64> {
    let mut total = 0.0;
    for s in states {
        let pred = s.predict(xq)?;
        total += criterion.value(&pred, y_best, rng);
    }
    Ok(total / states.len() as f64)
}

/// Posterior mean at `xq` averaged over particles.
pub fn mean_prediction(states: &[PosteriorState], xq: &[f64]) -> crate::Result<f64> {
    let mut total = 0.0;
    for s in states {
        total += s.predict(xq)?.mean;
    }
    Ok(total / states.len() as f64)
}

/// Cumulative gains of the GP-Hedge arms.
#[derive(Debug, Clone, PartialEq)]
pub struct HedgeState {
    gains: Vec<f64>,
    eta: f64,
}

impl HedgeState {
    pub fn new(arms: usize, eta: f64) -> Self {
        assert!(arms >= 2, "a portfolio needs at least two arms");
        HedgeState {
            gains: vec![0.0; arms],
            eta,
        }
    }

    pub fn with_gains(gains: Vec<f64>, eta: f64) -> Self {
        assert!(gains.len() >= 2, "a portfolio needs at least two arms");
        HedgeState { gains, eta }
    }

    pub fn gains(&self) -> &[f64] {
        &self.gains
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Selection probabilities `softmax(η g)`, computed after subtracting the
    /// largest gain.
    pub fn probabilities(&self) -> Vec<f64> {
        let top = self.gains.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = self.gains.iter().map(|g| (self.eta * (g - top)).exp()).collect();
        let total: f64 = w.iter().sum();
        w.into_iter().map(|v| v / total).collect()
    }
}

/// Draws an arm with probability proportional to `exp(η g_k)`.
pub fn hedge_select<R: Rng + ?Sized>(state: &HedgeState, rng: &mut R) -> usize {
    let probs = state.probabilities();
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    // Round-off left `acc` just below 1.
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

/// Adds the rewards to the gains and recenters so the best gain is zero.
pub fn hedge_update(state: &mut HedgeState, rewards: &[f64]) {
    assert_eq!(rewards.len(), state.gains.len(), "one reward per arm");
    for (g, r) in state.gains.iter_mut().zip(rewards) {
        *g += r;
    }
    let top = state.gains.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for g in &mut state.gains {
        *g -= top;
    }
}

/// Whether this iteration explores uniformly at random instead of
/// maximizing the criterion.
pub fn epsilon_override<R: Rng + ?Sized>(params: &Params, rng: &mut R) -> bool {
    rng.random::<f64>() < params.epsilon
}
