//! Kernel hyperparameter learning: score maximization (ML/MAP) and slice
//! sampling of the hyperparameter posterior (MCMC).

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::config::{LearningType, Params, ScoreType};
use crate::inner::{maximize, Bounds, InnerBudget};
use crate::kernels::HyperParams;
use crate::surrogate::{Dataset, SurrogateModel};
use crate::{Error, Result};

/// DIRECT evaluations spent maximizing the score.
pub const LEARN_GLOBAL_EVALS: usize = 500;
/// Simplex evaluations spent refining the DIRECT optimum.
pub const LEARN_LOCAL_EVALS: usize = 100;
/// Initial slice width in log space.
pub const SLICE_WIDTH: f64 = 1.0;
/// Step-out budget per coordinate update.
pub const SLICE_MAX_STEP_OUT: usize = 10;
/// Shrinkage budget per coordinate update.
pub const SLICE_MAX_SHRINK: usize = 100;

const LOG_THETA_MIN: f64 = -9.210_340_371_976_182; // ln 1e-4
const LOG_THETA_MAX: f64 = 9.210_340_371_976_182;

/// Hyperparameter particles with uniform weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaPosterior {
    particles: Vec<HyperParams>,
}

impl ThetaPosterior {
    pub fn new(particles: Vec<HyperParams>) -> Result<Self> {
        if particles.is_empty() {
            return Err(Error::InvalidData("a hyperparameter posterior needs at least one particle".into()));
        }
        Ok(ThetaPosterior { particles })
    }

    pub fn single(hp: HyperParams) -> Self {
        ThetaPosterior { particles: vec![hp] }
    }

    pub fn particles(&self) -> &[HyperParams] {
        &self.particles
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        vec![1.0 / self.len() as f64; self.len()]
    }
}

/// Search box for `log θ`: three prior standard deviations around the prior
/// mean, clamped to `[ln 1e-4, ln 1e4]`.
pub fn learning_box(model: &SurrogateModel) -> Bounds {
    let mut lower = Vec::with_capacity(model.hp_mean.len());
    let mut upper = Vec::with_capacity(model.hp_mean.len());
    for (&m, &s) in model.hp_mean.iter().zip(&model.hp_std) {
        let c = m.ln().clamp(LOG_THETA_MIN, LOG_THETA_MAX);
        let mut lo = (c - 3.0 * s).max(LOG_THETA_MIN);
        let mut hi = (c + 3.0 * s).min(LOG_THETA_MAX);
        if hi - lo < 1e-6 {
            lo = (c - 1e-3).max(LOG_THETA_MIN);
            hi = (c + 1e-3).min(LOG_THETA_MAX);
        }
        lower.push(lo);
        upper.push(hi);
    }
    Bounds::new(lower, upper).expect("non-empty learning box")
}

/// The model with the score type implied by the learning type.
pub fn scoring_model(model: &Arc<SurrogateModel>, l_type: LearningType) -> Arc<SurrogateModel> {
    let score_type = match l_type {
        LearningType::Ml => ScoreType::Ml,
        LearningType::Map => ScoreType::Map,
        LearningType::Mcmc => model.score_type,
    };
    if score_type == model.score_type {
        Arc::clone(model)
    } else {
        let mut m = (**model).clone();
        m.score_type = score_type;
        Arc::new(m)
    }
}

fn log_score(model: &Arc<SurrogateModel>, data: &Dataset, log_theta: &[f64]) -> f64 {
    match HyperParams::from_log(log_theta) {
        Ok(hp) => {
            let v = model.score(data, &hp);
            if v.is_nan() {
                f64::NEG_INFINITY
            } else {
                v
            }
        }
        Err(_) => f64::NEG_INFINITY,
    }
}

/// Maximizes the model score over `log θ` in `bounds`. The prior mean is
/// always a candidate; it is returned as is when fewer than two
/// observations are available or nothing scores finite.
pub fn learn_point(model: &Arc<SurrogateModel>, data: &Dataset, bounds: &Bounds) -> Result<ThetaPosterior> {
    let prior = model.prior_mean();
    if prior.len() != bounds.dim() {
        return Err(Error::DimensionMismatch {
            expected: prior.len(),
            found: bounds.dim(),
        });
    }
    if data.len() < 2 {
        return Ok(ThetaPosterior::single(prior));
    }
    let prior_score = model.score(data, &prior);
    let best = maximize(
        |lt| log_score(model, data, lt),
        bounds,
        InnerBudget::new(LEARN_GLOBAL_EVALS, LEARN_LOCAL_EVALS),
    );
    log::debug!("learned log theta {:?} score {} (prior mean {})", best.x, best.value, prior_score);
    if best.value.is_finite() && prior_score <= best.value {
        Ok(ThetaPosterior::single(HyperParams::from_log(&best.x)?))
    } else {
        Ok(ThetaPosterior::single(prior))
    }
}

/// Coordinate-wise slice sampler with step-out and shrinkage.
///
/// Runs `burnin` discarded sweeps, then keeps the state after each of the
/// next `n_samples` sweeps. `log_target` must be finite at `x0`. A
/// coordinate whose shrinkage does not accept within the budget keeps its
/// current value.
pub fn slice_sample<F, R>(
    mut log_target: F,
    x0: &[f64],
    n_samples: usize,
    burnin: usize,
    width: f64,
    rng: &mut R,
) -> Vec<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    let mut x = x0.to_vec();
    let mut fx = log_target(&x);
    let mut out = Vec::with_capacity(n_samples);
    for sweep in 0..burnin + n_samples {
        for j in 0..x.len() {
            let e: f64 = Exp1.sample(rng);
            let level = fx - e;
            let x_j = x[j];
            let mut at = |v: f64, x: &mut Vec<f64>| {
                x[j] = v;
                log_target(x)
            };

            let u: f64 = rng.random();
            let mut lo = x_j - width * u;
            let mut hi = lo + width;
            let mut left_steps = (rng.random::<f64>() * SLICE_MAX_STEP_OUT as f64).floor() as usize;
            let mut right_steps = SLICE_MAX_STEP_OUT - 1 - left_steps.min(SLICE_MAX_STEP_OUT - 1);
            while left_steps > 0 && at(lo, &mut x) > level {
                lo -= width;
                left_steps -= 1;
            }
            while right_steps > 0 && at(hi, &mut x) > level {
                hi += width;
                right_steps -= 1;
            }

            let mut accepted = None;
            for _ in 0..SLICE_MAX_SHRINK {
                let cand = lo + rng.random::<f64>() * (hi - lo);
                let fc = at(cand, &mut x);
                if fc > level {
                    accepted = Some((cand, fc));
                    break;
                }
                if cand < x_j {
                    lo = cand;
                } else {
                    hi = cand;
                }
            }
            match accepted {
                Some((v, fv)) => {
                    x[j] = v;
                    fx = fv;
                }
                None => {
                    log::debug!("slice shrinkage exhausted on coordinate {j}, keeping current value");
                    x[j] = x_j;
                }
            }
        }
        if sweep >= burnin {
            out.push(x.clone());
        }
    }
    out
}

/// Samples `mcmc_particles` hyperparameter vectors from the posterior over
/// `log θ` restricted to the learning box, after `mcmc_burnin` discarded
/// sweeps. Under MAP scoring the log-normal hyperprior is included and the
/// change of variables to `log θ` is accounted for; under ML scoring the
/// prior is flat in `log θ`. The chain starts from `start` when it lies in
/// the box, otherwise from the prior mean.
pub fn learn_mcmc<R: Rng + ?Sized>(
    model: &Arc<SurrogateModel>,
    data: &Dataset,
    params: &Params,
    start: Option<&HyperParams>,
    rng: &mut R,
) -> Result<ThetaPosterior> {
    let bounds = learning_box(model);
    let jacobian = model.score_type == ScoreType::Map;
    let target = |lt: &[f64]| {
        if !bounds.contains(lt) {
            return f64::NEG_INFINITY;
        }
        let s = log_score(model, data, lt);
        if jacobian {
            s + lt.iter().sum::<f64>()
        } else {
            s
        }
    };
    let mut x0 = match start {
        Some(hp) if hp.len() == bounds.dim() => hp.log(),
        _ => model.prior_mean().log(),
    };
    bounds.clamp(&mut x0);
    if !target(&x0).is_finite() {
        x0 = model.prior_mean().log();
        bounds.clamp(&mut x0);
        if !target(&x0).is_finite() {
            log::warn!("hyperparameter posterior is not finite at the prior mean, using it as the only particle");
            return ThetaPosterior::new(vec![model.prior_mean(); params.mcmc_particles]);
        }
    }
    let samples = slice_sample(target, &x0, params.mcmc_particles, params.mcmc_burnin, SLICE_WIDTH, rng);
    let particles = samples
        .iter()
        .map(|lt| HyperParams::from_log(lt))
        .collect::<Result<Vec<_>>>()?;
    ThetaPosterior::new(particles)
}

/// Learns hyperparameters with the configured method. `previous` warm-starts
/// the MCMC chain from its last particle.
pub fn learn<R: Rng + ?Sized>(
    model: &Arc<SurrogateModel>,
    data: &Dataset,
    params: &Params,
    previous: Option<&ThetaPosterior>,
    rng: &mut R,
) -> Result<ThetaPosterior> {
    let scoring = scoring_model(model, params.l_type);
    match params.l_type {
        LearningType::Ml | LearningType::Map => learn_point(&scoring, data, &learning_box(&scoring)),
        LearningType::Mcmc => {
            let start = previous.and_then(|p| p.particles().last());
            learn_mcmc(&scoring, data, params, start, rng)
        }
    }
}

/// Whether hyperparameters are relearned at this iteration.
pub fn relearn_due(iteration: usize, params: &Params) -> bool {
    iteration.is_multiple_of(params.learn_frequency)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::default_params;
    use crate::kernels::{gram_matrix, KernelSpec};
    use crate::linalg::cholesky;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn model(params: &Params) -> Arc<SurrogateModel> {
        Arc::new(SurrogateModel::from_params(params).unwrap())
    }

    fn gp_sample(ell: f64, n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random::<f64>()]).collect();
        let spec = KernelSpec::parse("kMaternISO3").unwrap();
        let mut k = gram_matrix(&spec, &HyperParams::new(vec![ell]).unwrap(), &xs).unwrap();
        k.add_diagonal(1e-8);
        let l = cholesky(&k).unwrap().to_dense();
        let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let y = l.matvec(&z);
        Dataset::new(xs, y).unwrap()
    }

    #[test]
    fn relearn_schedule() {
        let p = default_params();
        assert!(relearn_due(0, &p));
        assert!(relearn_due(20, &p));
        assert!(!relearn_due(7, &p));
    }

    #[test]
    fn box_is_prior_informed() {
        let m = model(&default_params());
        let b = learning_box(&m);
        assert_eq!(b.lower(), &[-3.0]);
        assert_eq!(b.upper(), &[3.0]);
        let mut p = default_params();
        p.kernel_hp_std = vec![10.0];
        let b = learning_box(&model(&p));
        assert_eq!(b.lower(), &[LOG_THETA_MIN]);
        assert_eq!(b.upper(), &[LOG_THETA_MAX]);
    }

    #[test]
    fn recovers_length_scale() {
        let mut p = default_params();
        p.l_type = LearningType::Ml;
        p.kernel_hp_mean = vec![0.5];
        p.kernel_hp_std = vec![2.0];
        let m = scoring_model(&model(&p), LearningType::Ml);
        for seed in 0..3 {
            let data = gp_sample(0.3, 40, seed);
            let post = learn_point(&m, &data, &learning_box(&m)).unwrap();
            let ell = post.particles()[0].as_slice()[0];
            assert!((0.15..=0.6).contains(&ell), "seed {seed}: {ell}");
        }
    }

    #[test]
    fn flat_data_and_dominance() {
        let p = default_params();
        let m = model(&p);
        let flat = Dataset::new(vec![vec![0.1], vec![0.9]], vec![2.0, 2.0]).unwrap();
        let post = learn_point(&m, &flat, &learning_box(&m)).unwrap();
        assert_eq!(post.len(), 1);
        let data = gp_sample(0.2, 15, 9);
        let post = learn_point(&m, &data, &learning_box(&m)).unwrap();
        assert!(m.score(&data, &post.particles()[0]) >= m.score(&data, &m.prior_mean()));
    }

    #[test]
    fn map_argmax_ignores_score_offset() {
        let m = model(&default_params());
        let data = gp_sample(0.25, 12, 4);
        let b = learning_box(&m);
        let budget = InnerBudget::new(LEARN_GLOBAL_EVALS, LEARN_LOCAL_EVALS);
        let a = maximize(|lt| log_score(&m, &data, lt), &b, budget);
        let c = maximize(|lt| log_score(&m, &data, lt) + 123.0, &b, budget);
        // Only rounding in the simplex comparisons may differ.
        assert!((a.x[0] - c.x[0]).abs() < 1e-6, "{:?} {:?}", a.x, c.x);
    }

    #[test]
    fn slice_sampler_standard_normal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = slice_sample(|x| -0.5 * x[0] * x[0], &[0.0], 10_000, 100, 1.0, &mut rng);
        let n = s.len() as f64;
        let mean = s.iter().map(|v| v[0]).sum::<f64>() / n;
        let var = s.iter().map(|v| (v[0] - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() <= 0.05, "{mean}");
        assert!((0.9..=1.1).contains(&var), "{var}");
    }

    #[test]
    fn mcmc_prior_only_matches_log_normal() {
        let mut p = default_params();
        p.l_type = LearningType::Mcmc;
        p.sc_type = ScoreType::Map;
        p.kernel_hp_mean = vec![0.5];
        p.kernel_hp_std = vec![0.8];
        p.mcmc_particles = 1000;
        p.mcmc_burnin = 50;
        let m = model(&p);
        let empty = Dataset::default();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let post = learn_mcmc(&m, &empty, &p, None, &mut rng).unwrap();
        let mut logs: Vec<f64> = post.particles().iter().map(|h| h.as_slice()[0].ln()).collect();
        let mean = logs.iter().sum::<f64>() / logs.len() as f64;
        assert!((mean - 0.5f64.ln()).abs() < 0.1, "{mean}");
        logs.sort_by(f64::total_cmp);
        let prior = Normal::new(0.5f64.ln(), 0.8).unwrap();
        let n = logs.len() as f64;
        let ks = logs
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let c = prior.cdf(v);
                (c - i as f64 / n).abs().max(((i + 1) as f64 / n - c).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks <= 0.05, "KS distance {ks}");
    }

    #[test]
    fn mcmc_is_deterministic() {
        let mut p = default_params();
        p.l_type = LearningType::Mcmc;
        p.mcmc_particles = 5;
        p.mcmc_burnin = 10;
        let m = model(&p);
        let data = gp_sample(0.3, 10, 3);
        let a = learn(&m, &data, &p, None, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = learn(&m, &data, &p, None, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        assert!(a.particles().iter().all(|h| h.as_slice()[0] > 0.0));
    }

    #[test]
    fn scoring_model_follows_learning_type() {
        let mut p = default_params();
        p.sc_type = ScoreType::Ml;
        let m = model(&p);
        assert_eq!(scoring_model(&m, LearningType::Map).score_type, ScoreType::Map);
        assert_eq!(scoring_model(&m, LearningType::Ml).score_type, ScoreType::Ml);
        assert_eq!(scoring_model(&m, LearningType::Mcmc).score_type, ScoreType::Ml);
    }
}
