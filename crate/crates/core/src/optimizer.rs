//! The optimization loop, with run-to-completion and ask/tell interfaces.
//!
//! Internally every point lives in the unit cube; the problem only ever sees
//! coordinates mapped back into its own bounds.

use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::Params;
use crate::criteria::{crit_eval, epsilon_override, hedge_select, hedge_update, mean_prediction, Criterion, CriterionSpec, HedgeState};
use crate::design;
use crate::inner::{maximize, Bounds, InnerBudget};
use crate::kernels::BasisSpec;
use crate::learning::{learn, relearn_due, ThetaPosterior};
use crate::surrogate::{Dataset, PosteriorState, SurrogateModel};
use crate::{Error, Result};

/// Failure reported by a target function.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{0}")]
pub struct EvalError(pub String);

/// Minimum normalized distance between a proposal and existing data.
pub const DUPLICATE_TOLERANCE: f64 = 1e-8;
/// Width of the cube a duplicate proposal is perturbed within.
pub const DUPLICATE_PERTURBATION: f64 = 1e-3;
/// Rejection cap when drawing random reachable points.
pub const RANDOM_POINT_ATTEMPTS: usize = 1000;

/// A box-bounded minimization target.
pub trait Problem {
    fn bounds(&self) -> &Bounds;

    fn evaluate(&mut self, x: &[f64]) -> std::result::Result<f64, EvalError>;

    /// Nonlinear feasibility constraint; points where this is false are
    /// never proposed.
    fn reachable(&self, _x: &[f64]) -> bool {
        true
    }

    fn dim(&self) -> usize {
        self.bounds().dim()
    }
}

type Constraint = Box<dyn Fn(&[f64]) -> bool + Send + Sync>;

/// A [`Problem`] built from a closure.
pub struct FnProblem<F> {
    bounds: Bounds,
    f: F,
    reachable: Option<Constraint>,
}

impl<F: FnMut(&[f64]) -> f64> FnProblem<F> {
    pub fn new(bounds: Bounds, f: F) -> Self {
        FnProblem {
            bounds,
            f,
            reachable: None,
        }
    }

    pub fn with_constraint(mut self, reachable: impl Fn(&[f64]) -> bool + Send + Sync + 'static) -> Self {
        self.reachable = Some(Box::new(reachable));
        self
    }
}

impl<F: FnMut(&[f64]) -> f64> Problem for FnProblem<F> {
    fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    fn evaluate(&mut self, x: &[f64]) -> std::result::Result<f64, EvalError> {
        Ok((self.f)(x))
    }

    fn reachable(&self, x: &[f64]) -> bool {
        self.reachable.as_ref().is_none_or(|r| r(x))
    }
}

/// One evaluation of the target.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    /// 0 for the initial design, then the 1-based iteration number.
    pub iteration: usize,
    pub x: Vec<f64>,
    pub y: f64,
    pub y_best: f64,
    /// `"init"`, `"random"` (ε-greedy) or the criterion that chose `x`.
    pub criterion: String,
    /// Kernel parameters in use when `x` was chosen (mean over particles).
    pub theta: Vec<f64>,
    /// Time since the optimizer was created.
    pub elapsed: Duration,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    records: Vec<Record>,
}

impl History {
    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// The first record with the lowest `y`.
    pub fn best(&self) -> Option<&Record> {
        self.records.iter().reduce(|a, b| if b.y < a.y { b } else { a })
    }

    /// Lowest `y` among the first `n` evaluations.
    pub fn best_after(&self, n: usize) -> Option<f64> {
        self.records.get(n.checked_sub(1)?).map(|r| r.y_best)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptResult {
    pub x_best: Vec<f64>,
    pub y_best: f64,
    pub history: History,
    pub n_evals: usize,
}

#[derive(Debug, Clone)]
struct Pending {
    unit: Vec<f64>,
    x: Vec<f64>,
    label: String,
    /// Unit-cube nominees of every hedge arm, when the portfolio chose.
    nominees: Option<Vec<Vec<f64>>>,
}

/// Bayesian optimizer for one [`Problem`].
pub struct Optimizer<P> {
    problem: P,
    params: Params,
    model: Arc<SurrogateModel>,
    criterion: CriterionSpec,
    hedge: Option<HedgeState>,
    rng: ChaCha8Rng,
    unit: Bounds,
    /// Observations in unit coordinates with raw `y`.
    data: Dataset,
    /// Subtracted from `y` before fitting.
    offset: f64,
    center_y: bool,
    theta: Option<ThetaPosterior>,
    states: Vec<PosteriorState>,
    history: History,
    init_queue: Option<Vec<Vec<f64>>>,
    initialized: bool,
    iteration: usize,
    last_relearn: Option<usize>,
    pending: Option<Pending>,
    started: Instant,
}

impl<P: Problem> Optimizer<P> {
    /// Validates the configuration. No evaluation happens until
    /// [`initialize`](Self::initialize), [`step`](Self::step), [`run`](Self::run)
    /// or [`propose`](Self::propose).
    pub fn new(problem: P, params: Params) -> Result<Self> {
        params.validate()?;
        let specs = params.components()?;
        let model = SurrogateModel::from_specs(&specs, &params)?;
        let criterion = CriterionSpec::new(&specs.criterion, &params)?;
        let d = problem.dim();
        if d == 0 {
            return Err(Error::InvalidBounds("problem has no dimensions".into()));
        }
        if params.kernel_hp_mean.len() != model.kernel.n_params() {
            return Err(Error::DimensionMismatch {
                expected: model.kernel.n_params(),
                found: params.kernel_hp_mean.len(),
            });
        }
        if !params.mean_w0.is_empty() && params.mean_w0.len() != model.basis.dim(d) {
            return Err(Error::LengthMismatch {
                what: "mean_w0",
                expected: model.basis.dim(d),
                found: params.mean_w0.len(),
            });
        }
        let hedge = match &criterion {
            CriterionSpec::Hedge(arms) => Some(HedgeState::new(arms.len(), params.hedge_eta)),
            CriterionSpec::Single(_) => None,
        };
        Ok(Optimizer {
            center_y: model.basis == BasisSpec::Zero,
            rng: ChaCha8Rng::seed_from_u64(params.random_seed),
            unit: Bounds::unit(d),
            problem,
            params,
            model: Arc::new(model),
            criterion,
            hedge,
            data: Dataset::default(),
            offset: 0.0,
            theta: None,
            states: Vec::new(),
            history: History::default(),
            init_queue: None,
            initialized: false,
            iteration: 0,
            last_relearn: None,
            pending: None,
            started: Instant::now(),
        })
    }

    /// Alias of [`new`](Self::new).
    pub fn create(problem: P, params: Params) -> Result<Self> {
        Self::new(problem, params)
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn problem(&self) -> &P {
        &self.problem
    }

    pub fn problem_mut(&mut self) -> &mut P {
        &mut self.problem
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    /// Observations so far, in unit-cube coordinates.
    pub fn data(&self) -> &Dataset {
        &self.data
    }

    /// Posterior states (one per hyperparameter particle), fitted to the
    /// unit-cube data shifted by [`y_offset`](Self::y_offset).
    pub fn states(&self) -> &[PosteriorState] {
        &self.states
    }

    pub fn y_offset(&self) -> f64 {
        self.offset
    }

    pub fn theta(&self) -> Option<&ThetaPosterior> {
        self.theta.as_ref()
    }

    pub fn hedge_state(&self) -> Option<&HedgeState> {
        self.hedge.as_ref()
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    /// Completed iterations after the initial design.
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn n_evals(&self) -> usize {
        self.data.len()
    }

    pub fn is_finished(&self) -> bool {
        self.initialized && self.iteration >= self.params.n_iterations
    }

    /// Evaluates the initial design and fits the first posterior.
    pub fn initialize(&mut self) -> Result<()> {
        while !self.initialized {
            self.evaluate_next()?;
        }
        Ok(())
    }

    /// Runs one iteration: propose, evaluate, augment.
    pub fn step(&mut self) -> Result<Record> {
        if !self.initialized {
            return Err(Error::OutOfOrder("step before initialize"));
        }
        self.evaluate_next()
    }

    /// Runs until `n_init_samples + n_iterations` evaluations are done.
    pub fn run(&mut self) -> Result<OptResult> {
        self.initialize()?;
        while !self.is_finished() {
            self.step()?;
        }
        Ok(self.result().expect("initialized optimizer has data"))
    }

    /// Best point found so far.
    pub fn result(&self) -> Option<OptResult> {
        let best = self.history.best()?;
        Some(OptResult {
            x_best: best.x.clone(),
            y_best: best.y,
            history: self.history.clone(),
            n_evals: self.data.len(),
        })
    }

    fn evaluate_next(&mut self) -> Result<Record> {
        let x = self.propose()?;
        match self.problem.evaluate(&x) {
            Ok(y) => self.tell(&x, y),
            Err(e) => {
                self.pending = None;
                Err(Error::Evaluation(e))
            }
        }
    }

    /// Next point to evaluate, in problem coordinates. Repeated calls
    /// without a [`tell`](Self::tell) return the same point.
    pub fn propose(&mut self) -> Result<Vec<f64>> {
        if let Some(p) = &self.pending {
            return Ok(p.x.clone());
        }
        let pending = if self.initialized {
            if self.iteration >= self.params.n_iterations {
                return Err(Error::BudgetExhausted);
            }
            self.propose_iteration()?
        } else {
            let unit = self.next_init_point()?;
            Pending {
                x: self.problem.bounds().from_unit(&unit),
                unit,
                label: "init".into(),
                nominees: None,
            }
        };
        let x = pending.x.clone();
        self.pending = Some(pending);
        Ok(x)
    }

    /// Reports the value at the last proposed point.
    pub fn tell(&mut self, x: &[f64], y: f64) -> Result<Record> {
        let pending = match &self.pending {
            None => return Err(Error::OutOfOrder("tell without a pending proposal")),
            Some(p) if p.x != x => return Err(Error::OutOfOrder("told point differs from the proposal")),
            Some(_) => self.pending.take().expect("checked above"),
        };
        if !y.is_finite() {
            return Err(Error::Evaluation(EvalError(format!("target returned non-finite value {y}"))));
        }
        self.data.push(pending.unit.clone(), y)?;
        let iteration = if self.initialized {
            self.absorb(&pending.unit, y)?;
            if let (Some(nominees), Some(hedge)) = (&pending.nominees, self.hedge.as_mut()) {
                let rewards = nominees
                    .iter()
                    .map(|u| mean_prediction(&self.states, u).map(|m| -(m + self.offset)))
                    .collect::<Result<Vec<_>>>()?;
                hedge_update(hedge, &rewards);
            }
            self.iteration += 1;
            self.iteration
        } else {
            if self.data.len() >= self.params.n_init_samples {
                self.relearn(0)?;
                self.initialized = true;
                self.init_queue = None;
            }
            0
        };
        let y_best = self.history.records.last().map_or(y, |r| r.y_best.min(y));
        let record = Record {
            iteration,
            x: pending.x,
            y,
            y_best,
            criterion: pending.label,
            theta: self.theta_summary(),
            elapsed: self.started.elapsed(),
        };
        log::debug!("iteration {} y {} best {}", record.iteration, record.y, record.y_best);
        self.history.records.push(record.clone());
        Ok(record)
    }

    fn theta_summary(&self) -> Vec<f64> {
        let Some(theta) = &self.theta else {
            return Vec::new();
        };
        let n = theta.len() as f64;
        let mut mean = vec![0.0; theta.particles()[0].len()];
        for p in theta.particles() {
            for (m, v) in mean.iter_mut().zip(p.as_slice()) {
                *m += v / n;
            }
        }
        mean
    }

    fn reachable_unit(&self, u: &[f64]) -> bool {
        self.problem.reachable(&self.problem.bounds().from_unit(u))
    }

    fn random_reachable(&mut self) -> Option<Vec<f64>> {
        let d = self.unit.dim();
        for _ in 0..RANDOM_POINT_ATTEMPTS {
            let u: Vec<f64> = (0..d).map(|_| self.rng.random::<f64>()).collect();
            if self.reachable_unit(&u) {
                return Some(u);
            }
        }
        None
    }

    fn next_init_point(&mut self) -> Result<Vec<f64>> {
        let n = self.params.n_init_samples;
        let d = self.unit.dim();
        if self.init_queue.is_none() {
            let mut design = design::generate(self.params.init_method, n, d, &mut self.rng)?;
            let mut attempts = 0;
            for u in design.iter_mut() {
                while !self.reachable_unit(u) {
                    attempts += 1;
                    if attempts > 100 * n {
                        return Err(Error::InitDesignInfeasible { attempts: 100 * n });
                    }
                    *u = (0..d).map(|_| self.rng.random::<f64>()).collect();
                }
            }
            design.reverse();
            self.init_queue = Some(design);
        }
        if let Some(u) = self.init_queue.as_mut().and_then(Vec::pop) {
            return Ok(u);
        }
        // A design point failed to evaluate; replace it.
        self.random_reachable()
            .ok_or(Error::InitDesignInfeasible { attempts: RANDOM_POINT_ATTEMPTS })
    }

    /// Relearns θ and refits from scratch.
    fn relearn(&mut self, iteration: usize) -> Result<()> {
        self.last_relearn = Some(iteration);
        if self.center_y {
            self.offset = self.data.y().iter().sum::<f64>() / self.data.len() as f64;
        }
        let shifted = self.data.shifted(self.offset);
        let theta = learn(&self.model, &shifted, &self.params, self.theta.as_ref(), &mut self.rng)?;
        log::info!("iteration {iteration}: learned theta {:?}", theta.particles().first().map(|h| h.as_slice()));
        self.theta = Some(theta);
        self.refit()
    }

    fn refit(&mut self) -> Result<()> {
        let shifted = self.data.shifted(self.offset);
        let theta = self.theta.as_ref().expect("learned before fitting");
        self.states = theta
            .particles()
            .iter()
            .map(|hp| self.model.fit(&shifted, hp))
            .collect::<Result<Vec<_>>>()?;
        Ok(())
    }

    /// Adds an observation to every posterior state, refitting if the
    /// incremental update fails.
    fn absorb(&mut self, u: &[f64], y: f64) -> Result<()> {
        let target = y - self.offset;
        for s in &mut self.states {
            if let Err(e) = s.update_in_place(u, target) {
                log::debug!("incremental update failed ({e}), refitting");
                return self.refit();
            }
        }
        Ok(())
    }

    fn propose_iteration(&mut self) -> Result<Pending> {
        let k = self.iteration + 1;
        if relearn_due(k, &self.params) && self.last_relearn != Some(k) {
            self.relearn(k)?;
        }
        if epsilon_override(&self.params, &mut self.rng) {
            if let Some(u) = self.random_reachable() {
                return Ok(self.pending_at(u, "random".into(), None));
            }
            log::warn!("no reachable random point found, maximizing the criterion instead");
        }
        let y_best = self.data.y().iter().copied().fold(f64::INFINITY, f64::min) - self.offset;
        let (u, label, nominees) = match self.criterion.clone() {
            CriterionSpec::Single(c) => (self.maximize_criterion(&c, y_best)?, c.name().to_string(), None),
            CriterionSpec::Hedge(arms) => {
                let nominees = arms
                    .iter()
                    .map(|c| self.maximize_criterion(c, y_best))
                    .collect::<Result<Vec<_>>>()?;
                let k = hedge_select(self.hedge.as_ref().expect("hedge state"), &mut self.rng);
                (nominees[k].clone(), arms[k].name().to_string(), Some(nominees))
            }
        };
        Ok(self.pending_at(u, label, nominees))
    }

    fn pending_at(&mut self, mut unit: Vec<f64>, label: String, nominees: Option<Vec<Vec<f64>>>) -> Pending {
        self.separate_from_data(&mut unit);
        Pending {
            x: self.problem.bounds().from_unit(&unit),
            unit,
            label,
            nominees,
        }
    }

    fn separate_from_data(&mut self, u: &mut [f64]) {
        let near = |u: &[f64], xs: &[Vec<f64>]| {
            xs.iter().any(|x| {
                x.iter()
                    .zip(u.iter())
                    .all(|(a, b)| (a - b).abs() < DUPLICATE_TOLERANCE)
            })
        };
        let mut tries = 0;
        while near(u, self.data.xs()) && tries < 100 {
            let original = u.to_vec();
            for v in u.iter_mut() {
                *v = (*v + (self.rng.random::<f64>() - 0.5) * DUPLICATE_PERTURBATION).clamp(0.0, 1.0);
            }
            if !self.reachable_unit(u) {
                u.copy_from_slice(&original);
            }
            tries += 1;
        }
    }

    fn maximize_criterion(&mut self, criterion: &Criterion, y_best: f64) -> Result<Vec<f64>> {
        let budget = InnerBudget::new(self.params.n_inner_global_evals, self.params.n_inner_local_evals);
        let (states, problem, rng) = (&self.states, &self.problem, &mut self.rng);
        let bounds = problem.bounds();
        let best = maximize(
            |u| {
                if !problem.reachable(&bounds.from_unit(u)) {
                    return f64::NEG_INFINITY;
                }
                crit_eval(criterion, states, u, y_best, rng).unwrap_or(f64::NEG_INFINITY)
            },
            &self.unit,
            budget,
        );
        if best.value.is_finite() {
            return Ok(best.x);
        }
        log::warn!("criterion is not finite anywhere it was evaluated, sampling a random point");
        self.random_reachable()
            .ok_or(Error::InitDesignInfeasible { attempts: RANDOM_POINT_ATTEMPTS })
    }
}

/// Problem stub for [`AskTell`]: evaluation happens outside.
pub struct External {
    bounds: Bounds,
    reachable: Option<Constraint>,
}

impl Problem for External {
    fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    fn evaluate(&mut self, _x: &[f64]) -> std::result::Result<f64, EvalError> {
        Err(EvalError("values are supplied through tell()".into()))
    }

    fn reachable(&self, x: &[f64]) -> bool {
        self.reachable.as_ref().is_none_or(|r| r(x))
    }
}

/// Optimizer driven by the caller: [`propose`](Self::propose) a point,
/// evaluate it, then [`tell`](Self::tell) the value. Covers the initial
/// design as well as the iterations.
pub struct AskTell {
    inner: Optimizer<External>,
}

impl AskTell {
    pub fn new(bounds: Bounds, params: Params) -> Result<Self> {
        Ok(AskTell {
            inner: Optimizer::new(External { bounds, reachable: None }, params)?,
        })
    }

    pub fn with_constraint(
        bounds: Bounds,
        params: Params,
        reachable: impl Fn(&[f64]) -> bool + Send + Sync + 'static,
    ) -> Result<Self> {
        let problem = External {
            bounds,
            reachable: Some(Box::new(reachable)),
        };
        Ok(AskTell {
            inner: Optimizer::new(problem, params)?,
        })
    }

    pub fn propose(&mut self) -> Result<Vec<f64>> {
        self.inner.propose()
    }

    pub fn tell(&mut self, x: &[f64], y: f64) -> Result<Record> {
        self.inner.tell(x, y)
    }

    pub fn is_finished(&self) -> bool {
        self.inner.is_finished()
    }

    pub fn result(&self) -> Option<OptResult> {
        self.inner.result()
    }

    pub fn optimizer(&self) -> &Optimizer<External> {
        &self.inner
    }
}
