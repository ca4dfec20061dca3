//! Surrogate models `f(x) = φ(x)ᵀw + ε(x)` with `ε ~ GP(0, σ_s² (K(θ) + σ_n² I))`.
//!
//! Two posteriors are provided:
//!
//! * `sGaussianProcess`: vague prior on `w`, signal variance estimated from
//!   the residuals; Student-t predictive with `n - p` degrees of freedom.
//! * `sStudentTProcessNIG`: conjugate normal-inverse-gamma prior on
//!   `(w, σ_s²)`; Student-t predictive with `2 α_n` degrees of freedom.
//!
//! A fitted [`PosteriorState`] stores everything that does not depend on the
//! query point. Predictions only run one forward substitution against the
//! stored factor, and new observations are absorbed with a bordered-row
//! append instead of a refactorization.

use std::cell::Cell;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use statrs::function::gamma::ln_gamma;

use crate::config::{ComponentSpecs, ConfigError, Family, Params, ScoreType, SpecTree};
use crate::kernels::{hyperprior_logpdf, BasisSpec, HyperParams, KernelSpec};
use crate::linalg::{cholesky, cholesky_small, dot, CholFactor, LinalgError, Matrix};
use crate::{Error, Result};

/// First jitter tried after a failed factorization.
pub const JITTER_START: f64 = 1e-10;
/// Largest jitter tried before giving up.
pub const JITTER_MAX: f64 = 1e-4;

thread_local! {
    static FULL_FITS: Cell<u64> = const { Cell::new(0) };
}

/// Number of from-scratch posterior fits performed on this thread. Fits done
/// only to score hyperparameters are not counted.
pub fn full_fit_count() -> u64 {
    FULL_FITS.with(Cell::get)
}

/// Observed inputs and responses.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    xs: Vec<Vec<f64>>,
    y: Vec<f64>,
}

impl Dataset {
    pub fn new(xs: Vec<Vec<f64>>, y: Vec<f64>) -> Result<Self> {
        if xs.len() != y.len() {
            return Err(Error::InvalidData(format!("{} inputs but {} responses", xs.len(), y.len())));
        }
        let mut data = Dataset::default();
        for (x, v) in xs.into_iter().zip(y) {
            data.push(x, v)?;
        }
        Ok(data)
    }

    pub fn push(&mut self, x: Vec<f64>, y: f64) -> Result<()> {
        if let Some(first) = self.xs.first() {
            if first.len() != x.len() {
                return Err(Error::DimensionMismatch {
                    expected: first.len(),
                    found: x.len(),
                });
            }
        }
        if !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite observation".into()));
        }
        self.xs.push(x);
        self.y.push(y);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.xs.first().map(Vec::len)
    }

    pub fn xs(&self) -> &[Vec<f64>] {
        &self.xs
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Same inputs with every response shifted by `-offset`.
    pub fn shifted(&self, offset: f64) -> Dataset {
        Dataset {
            xs: self.xs.clone(),
            y: self.y.iter().map(|v| v - offset).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurrogateKind {
    GaussianProcess,
    StudentTNig,
}

impl SurrogateKind {
    pub fn new(tree: &SpecTree) -> std::result::Result<Self, ConfigError> {
        match tree.node.as_str() {
            "sGaussianProcess" => Ok(SurrogateKind::GaussianProcess),
            "sStudentTProcessNIG" => Ok(SurrogateKind::StudentTNig),
            _ => Err(ConfigError::WrongFamily {
                name: tree.node.clone(),
                expected: Family::Surrogate,
            }),
        }
    }
}

/// Everything needed to fit a posterior except the data and θ.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateModel {
    pub kind: SurrogateKind,
    pub kernel: KernelSpec,
    pub basis: BasisSpec,
    pub noise: f64,
    pub prior_alpha: f64,
    pub prior_beta: f64,
    /// Prior mean of the basis weights; empty means zeros.
    pub w0: Vec<f64>,
    pub w_scale: f64,
    pub score_type: ScoreType,
    /// Hyperprior settings used by MAP scoring.
    pub hp_mean: Vec<f64>,
    pub hp_std: Vec<f64>,
}

impl SurrogateModel {
    pub fn from_params(params: &Params) -> Result<Self> {
        let specs = params.components()?;
        Self::from_specs(&specs, params)
    }

    pub fn from_specs(specs: &ComponentSpecs, params: &Params) -> Result<Self> {
        Ok(SurrogateModel {
            kind: SurrogateKind::new(&specs.surrogate)?,
            kernel: KernelSpec::new(&specs.kernel)?,
            basis: BasisSpec::new(&specs.mean)?,
            noise: params.noise,
            prior_alpha: params.prior_alpha,
            prior_beta: params.prior_beta,
            w0: params.mean_w0.clone(),
            w_scale: params.mean_w_scale,
            score_type: params.sc_type,
            hp_mean: params.kernel_hp_mean.clone(),
            hp_std: params.kernel_hp_std.clone(),
        })
    }

    /// Default prior mean of θ.
    pub fn prior_mean(&self) -> HyperParams {
        HyperParams::new(self.hp_mean.clone()).expect("validated hyperprior mean")
    }

    fn hyperprior(&self, hp: &HyperParams) -> Result<f64> {
        let mut p = crate::config::default_params();
        p.kernel_hp_mean = self.hp_mean.clone();
        p.kernel_hp_std = self.hp_std.clone();
        hyperprior_logpdf(&p, hp)
    }

    fn w0(&self, p: usize) -> Result<Vec<f64>> {
        if self.w0.is_empty() {
            return Ok(vec![0.0; p]);
        }
        if self.w0.len() != p {
            return Err(Error::LengthMismatch {
                what: "mean_w0",
                expected: p,
                found: self.w0.len(),
            });
        }
        Ok(self.w0.clone())
    }

    /// Fits the posterior from scratch, escalating diagonal jitter if the
    /// kernel matrix is numerically indefinite.
    pub fn fit(self: &Arc<Self>, data: &Dataset, hp: &HyperParams) -> Result<PosteriorState> {
        let state = self.fit_uncounted(data, hp)?;
        FULL_FITS.with(|c| c.set(c.get() + 1));
        Ok(state)
    }

    fn fit_uncounted(self: &Arc<Self>, data: &Dataset, hp: &HyperParams) -> Result<PosteriorState> {
        if data.is_empty() {
            return Err(Error::InvalidData("cannot fit a surrogate to an empty dataset".into()));
        }
        if hp.len() != self.kernel.n_params() {
            return Err(Error::LengthMismatch {
                what: "kernel hyperparameters",
                expected: self.kernel.n_params(),
                found: hp.len(),
            });
        }
        let mut gram = crate::kernels::gram_matrix(&self.kernel, hp, data.xs())?;
        gram.add_diagonal(self.noise);
        let mut jitter = 0.0;
        let factor = loop {
            let mut r = gram.clone();
            r.add_diagonal(jitter);
            match cholesky(&r) {
                Ok(f) => break f,
                Err(e @ LinalgError::NotPositiveDefinite { .. }) => {
                    jitter = if jitter == 0.0 { JITTER_START } else { jitter * 10.0 };
                    if jitter > JITTER_MAX * 1.0001 {
                        return Err(e.into());
                    }
                    log::debug!("kernel matrix not positive definite, retrying with jitter {jitter:e}");
                }
                Err(e) => return Err(e.into()),
            }
        };
        let d = data.dim().unwrap_or(0);
        let p = self.basis.dim(d);
        let mut phi = Vec::with_capacity(data.len());
        let mut row = Vec::with_capacity(p);
        for x in data.xs() {
            self.basis.eval_into(x, &mut row);
            phi.push(row.clone());
        }
        let ly = factor.solve_lower(data.y())?;
        let mut lphi = Vec::with_capacity(p);
        for j in 0..p {
            let col: Vec<f64> = phi.iter().map(|r| r[j]).collect();
            lphi.push(factor.solve_lower(&col)?);
        }
        let mut state = PosteriorState {
            model: Arc::clone(self),
            hp: hp.clone(),
            data: data.clone(),
            jitter,
            factor,
            phi,
            ly,
            lphi,
            derived: Derived::default(),
        };
        state.derived = state.derive()?;
        Ok(state)
    }

    /// Log evidence (plus hyperprior under MAP scoring). Empty data scores
    /// the hyperprior alone. Fitting failures score `-inf`.
    pub fn score(self: &Arc<Self>, data: &Dataset, hp: &HyperParams) -> f64 {
        let prior = match self.score_type {
            ScoreType::Map => match self.hyperprior(hp) {
                Ok(v) => v,
                Err(_) => return f64::NEG_INFINITY,
            },
            ScoreType::Ml => 0.0,
        };
        if data.is_empty() {
            return prior;
        }
        match self.fit_uncounted(data, hp) {
            Ok(state) if state.log_evidence().is_finite() => state.log_evidence() + prior,
            _ => f64::NEG_INFINITY,
        }
    }
}

/// Pointwise predictive distribution of the latent function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Predictive {
    pub mean: f64,
    /// Predictive standard deviation (excludes observation noise).
    pub scale: f64,
    /// Degrees of freedom; `f64::INFINITY` for a Gaussian predictive.
    pub dof: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Derived {
    /// Posterior basis weights.
    w: Vec<f64>,
    /// `R^{-1} (y - Φ w)`.
    alpha: Vec<f64>,
    /// Factor of the inverse posterior weight covariance (unscaled).
    w_inv_factor: CholFactor,
    /// Multiplier turning unit-signal variances into predictive variances.
    sigma2: f64,
    dof: f64,
    alpha_n: f64,
    beta_n: f64,
    log_evidence: f64,
}

/// A fitted surrogate. Immutable through `&self`; all query methods are
/// reentrant.
#[derive(Debug, Clone)]
pub struct PosteriorState {
    model: Arc<SurrogateModel>,
    hp: HyperParams,
    data: Dataset,
    jitter: f64,
    factor: CholFactor,
    /// Basis design matrix rows φ(x_i).
    phi: Vec<Vec<f64>>,
    /// `L^{-1} y`.
    ly: Vec<f64>,
    /// Columns of `L^{-1} Φ`.
    lphi: Vec<Vec<f64>>,
    derived: Derived,
}

impl PosteriorState {
    fn p(&self) -> usize {
        self.lphi.len()
    }

    fn derive(&self) -> Result<Derived> {
        let m = &self.model;
        let n = self.data.len();
        let p = self.p();
        // A = Φᵀ R⁻¹ Φ, b = Φᵀ R⁻¹ y
        let a = Matrix::from_fn(p, p, |i, j| dot(&self.lphi[i], &self.lphi[j]));
        let b: Vec<f64> = self.lphi.iter().map(|c| dot(c, &self.ly)).collect();
        let log_det_r = self.factor.log_det();
        let ln2pi = (2.0 * std::f64::consts::PI).ln();

        let (w, w_inv_factor, w_inv_logdet, w0) = match m.kind {
            SurrogateKind::GaussianProcess => {
                if p > 0 && n <= p {
                    return Err(Error::DegenerateBasis { n, p });
                }
                let fa = cholesky_small(&a).map_err(|_| Error::DegenerateBasis { n, p })?;
                let w = fa.solve(&b)?;
                let ld = fa.log_det();
                (w, fa, ld, Vec::new())
            }
            SurrogateKind::StudentTNig => {
                let w0 = m.w0(p)?;
                let mut a_post = a.clone();
                a_post.add_diagonal(1.0 / m.w_scale);
                let fa = cholesky_small(&a_post).map_err(|_| Error::DegenerateBasis { n, p })?;
                let rhs: Vec<f64> = b.iter().zip(&w0).map(|(bi, w0i)| bi + w0i / m.w_scale).collect();
                let w = fa.solve(&rhs)?;
                let ld = fa.log_det();
                (w, fa, ld, w0)
            }
        };

        // L⁻¹ (y - Φ w)
        let mut lr = self.ly.clone();
        for (col, wj) in self.lphi.iter().zip(&w) {
            for (r, c) in lr.iter_mut().zip(col) {
                *r -= c * wj;
            }
        }
        let rss = dot(&lr, &lr);
        let mut alpha = lr;
        self.factor.backward_in_place(&mut alpha);

        let (sigma2, dof, alpha_n, beta_n, log_evidence) = match m.kind {
            SurrogateKind::GaussianProcess => {
                let nu = (n - p) as f64;
                let s2 = (rss / nu).max(f64::MIN_POSITIVE);
                let ev = -0.5 * nu * (ln2pi + s2.ln()) - 0.5 * log_det_r - 0.5 * w_inv_logdet - 0.5 * nu;
                (s2, nu, f64::NAN, f64::NAN, ev)
            }
            SurrogateKind::StudentTNig => {
                let dw: f64 = w.iter().zip(&w0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / m.w_scale;
                let alpha_n = m.prior_alpha + 0.5 * n as f64;
                let beta_n = m.prior_beta + 0.5 * (rss + dw);
                let log_det_w0 = p as f64 * m.w_scale.ln();
                let ev = -0.5 * n as f64 * ln2pi - 0.5 * log_det_r - 0.5 * log_det_w0 - 0.5 * w_inv_logdet
                    + m.prior_alpha * m.prior_beta.ln()
                    - alpha_n * beta_n.ln()
                    + ln_gamma(alpha_n)
                    - ln_gamma(m.prior_alpha);
                (beta_n / alpha_n, 2.0 * alpha_n, alpha_n, beta_n, ev)
            }
        };

        Ok(Derived {
            w,
            alpha,
            w_inv_factor,
            sigma2,
            dof,
            alpha_n,
            beta_n,
            log_evidence,
        })
    }

    pub fn model(&self) -> &Arc<SurrogateModel> {
        &self.model
    }

    pub fn hyper_params(&self) -> &HyperParams {
        &self.hp
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Cholesky factor of `K(θ) + (σ_n² + jitter) I`.
    pub fn factor(&self) -> &CholFactor {
        &self.factor
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Posterior basis weights.
    pub fn weights(&self) -> &[f64] {
        &self.derived.w
    }

    /// `R^{-1} (y - Φ w_n)`.
    pub fn residual_alpha(&self) -> &[f64] {
        &self.derived.alpha
    }

    /// Inverse-gamma posterior `(α_n, β_n)`; `None` for the Gaussian process.
    pub fn inverse_gamma(&self) -> Option<(f64, f64)> {
        match self.model.kind {
            SurrogateKind::StudentTNig => Some((self.derived.alpha_n, self.derived.beta_n)),
            SurrogateKind::GaussianProcess => None,
        }
    }

    /// Estimated signal variance (`σ̂_s²` or `β_n / α_n`).
    pub fn signal_variance(&self) -> f64 {
        self.derived.sigma2
    }

    pub fn dof(&self) -> f64 {
        self.derived.dof
    }

    pub fn log_evidence(&self) -> f64 {
        self.derived.log_evidence
    }

    /// Evidence plus hyperprior when the model scores by MAP.
    pub fn score(&self) -> f64 {
        match self.model.score_type {
            ScoreType::Ml => self.log_evidence(),
            ScoreType::Map => self.log_evidence() + self.model.hyperprior(&self.hp).unwrap_or(f64::NEG_INFINITY),
        }
    }

    /// Absorbs one observation in `O(n^2)`. The factor is extended with the
    /// bordered row; if that fails numerically the posterior is refitted
    /// with escalated jitter. `self` is unchanged on error.
    pub fn update_in_place(&mut self, x: &[f64], y: f64) -> Result<()> {
        let d = self.data.dim().unwrap_or(x.len());
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: x.len(),
            });
        }
        let m = Arc::clone(&self.model);
        let theta = self.hp.as_slice();
        let cross: Vec<f64> = self.data.xs().iter().map(|xi| m.kernel.eval_unchecked(theta, xi, x)).collect();
        let corner = m.kernel.eval_unchecked(theta, x, x) + m.noise + self.jitter;
        let mut data = self.data.clone();
        data.push(x.to_vec(), y)?;
        let mut factor = self.factor.clone();
        if let Err(e) = factor.append(&cross, corner) {
            log::debug!("incremental append failed ({e}); refitting");
            let hp = self.hp.clone();
            *self = m.fit(&data, &hp)?;
            return Ok(());
        }
        let n = self.data.len();
        let new_row = factor.row(n);
        let diag = new_row[n];
        let head = &new_row[..n];
        let mut ly = self.ly.clone();
        ly.push((y - dot(head, &ly)) / diag);
        let mut basis_row = Vec::new();
        m.basis.eval_into(x, &mut basis_row);
        let mut lphi = self.lphi.clone();
        for (col, phi_j) in lphi.iter_mut().zip(&basis_row) {
            let v = (phi_j - dot(head, col)) / diag;
            col.push(v);
        }
        let mut phi = self.phi.clone();
        phi.push(basis_row);
        let mut next = PosteriorState {
            model: m,
            hp: self.hp.clone(),
            data,
            jitter: self.jitter,
            factor,
            phi,
            ly,
            lphi,
            derived: Derived::default(),
        };
        next.derived = next.derive()?;
        *self = next;
        Ok(())
    }

    /// Non-mutating form of [`PosteriorState::update_in_place`].
    pub fn update(&self, x: &[f64], y: f64) -> Result<PosteriorState> {
        let mut next = self.clone();
        next.update_in_place(x, y)?;
        Ok(next)
    }

    /// Predictive distribution at `xq`. Performs no factorization.
    pub fn predict(&self, xq: &[f64]) -> Result<Predictive> {
        let d = self.data.dim().unwrap_or(xq.len());
        if xq.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: xq.len(),
            });
        }
        Ok(self.predict_unchecked(xq))
    }

    pub(crate) fn predict_unchecked(&self, xq: &[f64]) -> Predictive {
        let m = &self.model;
        let theta = self.hp.as_slice();
        let mut v: Vec<f64> = self.data.xs().iter().map(|xi| m.kernel.eval_unchecked(theta, xi, xq)).collect();
        let mut mean = dot(&v, &self.derived.alpha);
        self.factor.forward_in_place(&mut v);
        let kss = m.kernel.eval_unchecked(theta, xq, xq);
        let mut var = kss - dot(&v, &v);
        let p = self.p();
        if p > 0 {
            let mut phi = Vec::with_capacity(p);
            m.basis.eval_into(xq, &mut phi);
            mean += dot(&phi, &self.derived.w);
            let mut h: Vec<f64> = phi.iter().zip(&self.lphi).map(|(f, col)| f - dot(col, &v)).collect();
            self.derived.w_inv_factor.forward_in_place(&mut h);
            var += dot(&h, &h);
        }
        let scale = (self.derived.sigma2 * var.max(0.0)).sqrt();
        Predictive {
            mean,
            scale,
            dof: self.derived.dof,
        }
    }

    /// One draw from the predictive distribution at `xq`.
    pub fn sample_predictive<R: Rng + ?Sized>(&self, xq: &[f64], rng: &mut R) -> Result<f64> {
        let pred = self.predict(xq)?;
        Ok(sample_from(&pred, rng))
    }
}

/// `mean + scale * t` with `t` standard Student-t (standard normal for
/// infinite dof).
pub fn sample_from<R: Rng + ?Sized>(pred: &Predictive, rng: &mut R) -> f64 {
    let t: f64 = if pred.dof.is_finite() {
        StudentT::new(pred.dof).expect("positive dof").sample(rng)
    } else {
        StandardNormal.sample(rng)
    };
    if pred.scale == 0.0 {
        return pred.mean;
    }
    pred.mean + pred.scale * t
}

/// Fits the surrogate named by `surr` with the remaining settings taken from
/// `params`.
pub fn fit(surr: &SpecTree, data: &Dataset, hp: &HyperParams, params: &Params) -> Result<PosteriorState> {
    let mut specs = params.components()?;
    specs.surrogate = surr.clone();
    Arc::new(SurrogateModel::from_specs(&specs, params)?).fit(data, hp)
}

/// Log evidence of `data` under θ, plus the hyperprior when
/// `params.sc_type` is `SC_MAP`.
pub fn score(surr: &SpecTree, data: &Dataset, hp: &HyperParams, params: &Params) -> Result<f64> {
    let mut specs = params.components()?;
    specs.surrogate = surr.clone();
    Ok(Arc::new(SurrogateModel::from_specs(&specs, params)?).score(data, hp))
}
