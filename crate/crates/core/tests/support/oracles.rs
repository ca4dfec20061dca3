//! Independent reference computations shared by the core integration tests
//! and the acceptance suite. Every check returns a one-line summary on
//! success and a description of the first discrepancy on failure.

use std::sync::Arc;

use bayesopt::config::{default_params, Params};
use bayesopt::criteria::expected_improvement;
use bayesopt::design::sobol;
use bayesopt::kernels::{kernel_eval, mean_basis, BasisSpec, HyperParams, KernelSpec};
use bayesopt::linalg::{cholesky, CholFactor, Matrix};
use bayesopt::surrogate::{sample_from, Dataset, PosteriorState, SurrogateModel};
use bayesopt::{Bounds, FnProblem, Optimizer};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::ln_gamma;

pub type Check = Result<String, String>;
pub type Suite = (&'static str, fn() -> Check);

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-12)
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect()
}

fn smooth_values(xs: &[Vec<f64>], rng: &mut ChaCha8Rng) -> Vec<f64> {
    xs.iter()
        .map(|x| (3.0 * x[0]).sin() + x.iter().map(|v| v * v).sum::<f64>() + 0.1 * rng.random::<f64>())
        .collect()
}

fn model(surr: &str, mean: &str, tweak: impl FnOnce(&mut Params)) -> Arc<SurrogateModel> {
    let mut p = default_params();
    p.surr_name = surr.into();
    p.mean_name = mean.into();
    p.kernel_name = "kMaternISO3".into();
    p.kernel_hp_mean = vec![0.4];
    p.kernel_hp_std = vec![1.0];
    p.noise = 1e-3;
    tweak(&mut p);
    Arc::new(SurrogateModel::from_params(&p).expect("valid oracle parameters"))
}

fn dense_gram(spec: &KernelSpec, hp: &HyperParams, xs: &[Vec<f64>], noise: f64) -> DMatrix<f64> {
    let n = xs.len();
    DMatrix::from_fn(n, n, |i, j| {
        kernel_eval(spec, hp, &xs[i], &xs[j]).unwrap() + if i == j { noise } else { 0.0 }
    })
}

fn basis(spec: BasisSpec, xs: &[Vec<f64>]) -> DMatrix<f64> {
    let rows: Vec<Vec<f64>> = xs.iter().map(|x| mean_basis(spec, x)).collect();
    let p = rows[0].len();
    DMatrix::from_fn(xs.len(), p, |i, j| rows[i][j])
}

struct Dense {
    mean: f64,
    scale: f64,
    dof: f64,
}

/// Brute-force posterior by explicit matrix inversion.
fn dense_posterior(m: &SurrogateModel, hp: &HyperParams, xs: &[Vec<f64>], y: &[f64], probes: &[Vec<f64>]) -> (Vec<Dense>, f64) {
    let n = xs.len();
    let r = dense_gram(&m.kernel, hp, xs, m.noise);
    let ri = r.clone().try_inverse().expect("invertible");
    let yv = DVector::from_column_slice(y);
    let phi = basis(m.basis, xs);
    let p = phi.ncols();
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let log_det_r = r.determinant().ln();
    let a = phi.transpose() * &ri * &phi;
    let (w, w_cov, sigma2, dof, evidence) = if m.w0.is_empty() && m.kind == bayesopt::surrogate::SurrogateKind::GaussianProcess {
        let a_inv = a.clone().try_inverse().unwrap_or_else(|| DMatrix::zeros(0, 0));
        let w = &a_inv * phi.transpose() * &ri * &yv;
        let res = &yv - &phi * &w;
        let rss = (res.transpose() * &ri * &res)[(0, 0)];
        let nu = (n - p) as f64;
        let s2 = rss / nu;
        let log_det_a = if p > 0 { a.determinant().ln() } else { 0.0 };
        let ev = -0.5 * nu * (ln2pi + s2.ln()) - 0.5 * log_det_r - 0.5 * log_det_a - 0.5 * nu;
        (w, a_inv, s2, nu, ev)
    } else {
        let s = m.w_scale;
        let w0 = if m.w0.is_empty() {
            DVector::zeros(p)
        } else {
            DVector::from_column_slice(&m.w0)
        };
        let wn_inv = DMatrix::identity(p, p) / s + &a;
        let wn = wn_inv.clone().try_inverse().expect("invertible");
        let w = &wn * (&w0 / s + phi.transpose() * &ri * &yv);
        let alpha_n = m.prior_alpha + 0.5 * n as f64;
        let quad = (yv.transpose() * &ri * &yv)[(0, 0)] + w0.dot(&w0) / s - (w.transpose() * &wn_inv * &w)[(0, 0)];
        let beta_n = m.prior_beta + 0.5 * quad;
        let log_det_w0 = p as f64 * s.ln();
        let log_det_wn = if p > 0 { wn.determinant().ln() } else { 0.0 };
        let ev = -0.5 * n as f64 * ln2pi - 0.5 * log_det_r - 0.5 * log_det_w0 + 0.5 * log_det_wn
            + m.prior_alpha * m.prior_beta.ln()
            - alpha_n * beta_n.ln()
            + ln_gamma(alpha_n)
            - ln_gamma(m.prior_alpha);
        (w, wn, beta_n / alpha_n, 2.0 * alpha_n, ev)
    };
    let res = &yv - &phi * &w;
    let out = probes
        .iter()
        .map(|q| {
            let ks = DVector::from_iterator(n, xs.iter().map(|x| kernel_eval(&m.kernel, hp, x, q).unwrap()));
            let kss = kernel_eval(&m.kernel, hp, q, q).unwrap();
            let fq = DVector::from_vec(mean_basis(m.basis, q));
            let mean = fq.dot(&w) + (ks.transpose() * &ri * &res)[(0, 0)];
            let h = &fq - phi.transpose() * &ri * &ks;
            let var = kss - (ks.transpose() * &ri * &ks)[(0, 0)] + if p > 0 { (h.transpose() * &w_cov * &h)[(0, 0)] } else { 0.0 };
            Dense {
                mean,
                scale: (sigma2 * var).sqrt(),
                dof,
            }
        })
        .collect();
    (out, evidence)
}

/// (a) Row-by-row appended factor equals the full factorization.
pub fn incremental_cholesky() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let n = 300;
    let xs = random_points(&mut rng, n, 3);
    let spec = KernelSpec::parse("kMaternISO5").unwrap();
    let hp = HyperParams::new(vec![0.5]).unwrap();
    let k = Matrix::from_fn(n, n, |i, j| {
        kernel_eval(&spec, &hp, &xs[i], &xs[j]).unwrap() + if i == j { 1e-6 } else { 0.0 }
    });
    let mut factor = CholFactor::with_capacity(n);
    let mut worst = 0.0f64;
    for i in 0..n {
        let cross: Vec<f64> = (0..i).map(|j| k[(i, j)]).collect();
        factor.append(&cross, k[(i, i)]).map_err(|e| format!("append {i}: {e}"))?;
        if (i + 1) % 25 == 0 || i < 10 {
            let sub = Matrix::from_fn(i + 1, i + 1, |a, b| k[(a, b)]);
            let full = cholesky(&sub).map_err(|e| e.to_string())?;
            worst = worst.max(factor.to_dense().max_abs_diff(&full.to_dense()));
        }
    }
    if worst <= 1e-8 {
        Ok(format!("n <= {n}, max |L_inc - L_full| = {worst:.2e}"))
    } else {
        Err(format!("max |L_inc - L_full| = {worst:.2e} > 1e-8"))
    }
}

/// (b) Posterior mean, scale, dof and evidence equal a dense-inverse
/// computation.
pub fn dense_inverse() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst = 0.0f64;
    let mut cases = 0;
    for surr in ["sGaussianProcess", "sStudentTProcessNIG"] {
        for mean in ["mZero", "mConst", "mLinear"] {
            for n in [4, 8, 13, 20] {
                let m = model(surr, mean, |p| {
                    p.prior_alpha = 2.0;
                    p.prior_beta = 0.7;
                    p.mean_w_scale = 3.0;
                });
                let xs = random_points(&mut rng, n, 2);
                let y = smooth_values(&xs, &mut rng);
                let hp = HyperParams::new(vec![0.2 + rng.random::<f64>()]).unwrap();
                let state = m
                    .fit(&Dataset::new(xs.clone(), y.clone()).unwrap(), &hp)
                    .map_err(|e| format!("{surr}/{mean}/n={n}: {e}"))?;
                if state.jitter() != 0.0 {
                    return Err(format!("{surr}/{mean}/n={n}: unexpected jitter"));
                }
                let probes = random_points(&mut rng, 10, 2);
                let (dense, evidence) = dense_posterior(&m, &hp, &xs, &y, &probes);
                let mut errs = vec![rel_err(state.log_evidence(), evidence)];
                for (q, d) in probes.iter().zip(&dense) {
                    let p = state.predict(q).unwrap();
                    errs.extend([rel_err(p.mean, d.mean), rel_err(p.scale, d.scale), rel_err(p.dof, d.dof)]);
                }
                let e = errs.into_iter().fold(0.0, f64::max);
                if e > 1e-8 {
                    return Err(format!("{surr}/{mean}/n={n}: relative error {e:.2e} > 1e-8"));
                }
                worst = worst.max(e);
                cases += 1;
            }
        }
    }
    Ok(format!("{cases} instances, n <= 20, max relative error {worst:.2e}"))
}

/// Log density of a multivariate Student-t.
fn mvt_logpdf(y: &DVector<f64>, loc: &DVector<f64>, shape: &DMatrix<f64>, nu: f64) -> f64 {
    let n = y.len() as f64;
    let d = y - loc;
    let q = (d.transpose() * shape.clone().try_inverse().unwrap() * &d)[(0, 0)];
    ln_gamma(0.5 * (nu + n)) - ln_gamma(0.5 * nu) - 0.5 * n * (nu * std::f64::consts::PI).ln()
        - 0.5 * shape.determinant().ln()
        - 0.5 * (nu + n) * (1.0 + q / nu).ln()
}

/// (c) NIG evidence equals the marginal multivariate-t density of `y`.
pub fn nig_marginal_t() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut worst = 0.0f64;
    for (mean, w0) in [("mZero", vec![]), ("mConst", vec![0.3]), ("mLinear", vec![0.1, -0.4, 0.25])] {
        for n in 1..=6 {
            let m = model("sStudentTProcessNIG", mean, |p| {
                p.prior_alpha = 2.5;
                p.prior_beta = 1.5;
                p.mean_w_scale = 2.0;
                p.mean_w0 = w0.clone();
            });
            let xs = random_points(&mut rng, n, 2);
            let y = smooth_values(&xs, &mut rng);
            let hp = HyperParams::new(vec![0.35]).unwrap();
            let state = m.fit(&Dataset::new(xs.clone(), y.clone()).unwrap(), &hp).map_err(|e| e.to_string())?;
            let r = dense_gram(&m.kernel, &hp, &xs, m.noise);
            let phi = basis(m.basis, &xs);
            let p = phi.ncols();
            let w0v = if w0.is_empty() { DVector::zeros(p) } else { DVector::from_vec(w0.clone()) };
            let shape = (r + &phi * phi.transpose() * m.w_scale) * (m.prior_beta / m.prior_alpha);
            let expected = mvt_logpdf(&DVector::from_vec(y), &(&phi * w0v), &shape, 2.0 * m.prior_alpha);
            let e = (state.log_evidence() - expected).abs();
            if e > 1e-8 {
                return Err(format!("{mean}, n={n}: |evidence - mvt| = {e:.2e} > 1e-8"));
            }
            worst = worst.max(e);
        }
    }
    Ok(format!("n <= 6, max |evidence - log mvt| = {worst:.2e}"))
}

/// (d) Closed-form EI equals its Monte-Carlo estimate.
pub fn ei_monte_carlo() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let draws = 1_000_000;
    let mut report = Vec::new();
    for surr in ["sGaussianProcess", "sStudentTProcessNIG"] {
        let m = model(surr, "mZero", |_| {});
        let xs = random_points(&mut rng, 6, 2);
        let y = smooth_values(&xs, &mut rng);
        let state = m.fit(&Dataset::new(xs, y.clone()).unwrap(), &HyperParams::new(vec![0.4]).unwrap()).unwrap();
        let y_best = y.iter().copied().fold(f64::INFINITY, f64::min);
        for q in random_points(&mut rng, 3, 2) {
            let pred = state.predict(&q).unwrap();
            let mut preds = vec![pred];
            preds.push(bayesopt::surrogate::Predictive {
                dof: f64::INFINITY,
                ..pred
            });
            for pred in preds {
                let ei = expected_improvement(&pred, y_best);
                let (mut s, mut s2) = (0.0, 0.0);
                for _ in 0..draws {
                    let v = (y_best - sample_from(&pred, &mut rng)).max(0.0);
                    s += v;
                    s2 += v * v;
                }
                let mc = s / draws as f64;
                let se = ((s2 / draws as f64 - mc * mc) / draws as f64).sqrt();
                let z = (ei - mc).abs() / se.max(1e-300);
                if z > 3.0 {
                    return Err(format!("{surr} dof {}: EI {ei} vs MC {mc} ({z:.2} standard errors)", pred.dof));
                }
                report.push(z);
            }
        }
    }
    let worst = report.iter().copied().fold(0.0, f64::max);
    Ok(format!("{} cases at 1e6 draws, max deviation {worst:.2} standard errors", report.len()))
}

/// First 16 points of the 21-dimensional Sobol sequence (origin skipped),
/// from SciPy's unscrambled `qmc.Sobol`.
const SOBOL_REFERENCE: [[f64; 21]; 16] = [
    [0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5],
    [0.75, 0.25, 0.25, 0.25, 0.75, 0.75, 0.25, 0.75, 0.75, 0.75, 0.75, 0.75, 0.25, 0.25, 0.75, 0.25, 0.75, 0.25, 0.75, 0.25, 0.25],
    [0.25, 0.75, 0.75, 0.75, 0.25, 0.25, 0.75, 0.25, 0.25, 0.25, 0.25, 0.25, 0.75, 0.75, 0.25, 0.75, 0.25, 0.75, 0.25, 0.75, 0.75],
    [0.375, 0.375, 0.625, 0.875, 0.375, 0.125, 0.375, 0.875, 0.875, 0.625, 0.875, 0.375, 0.375, 0.625, 0.375, 0.875, 0.375, 0.875, 0.875, 0.125, 0.125],
    [0.875, 0.875, 0.125, 0.375, 0.875, 0.625, 0.875, 0.375, 0.375, 0.125, 0.375, 0.875, 0.875, 0.125, 0.875, 0.375, 0.875, 0.375, 0.375, 0.625, 0.625],
    [0.625, 0.125, 0.875, 0.625, 0.625, 0.875, 0.125, 0.125, 0.125, 0.375, 0.125, 0.625, 0.125, 0.875, 0.625, 0.625, 0.625, 0.625, 0.125, 0.375, 0.375],
    [0.125, 0.625, 0.375, 0.125, 0.125, 0.375, 0.625, 0.625, 0.625, 0.875, 0.625, 0.125, 0.625, 0.375, 0.125, 0.125, 0.125, 0.125, 0.625, 0.875, 0.875],
    [0.1875, 0.3125, 0.9375, 0.4375, 0.5625, 0.3125, 0.4375, 0.9375, 0.9375, 0.3125, 0.6875, 0.0625, 0.9375, 0.9375, 0.8125, 0.9375, 0.8125, 0.8125, 0.9375, 0.3125, 0.1875],
    [0.6875, 0.8125, 0.4375, 0.9375, 0.0625, 0.8125, 0.9375, 0.4375, 0.4375, 0.8125, 0.1875, 0.5625, 0.4375, 0.4375, 0.3125, 0.4375, 0.3125, 0.3125, 0.4375, 0.8125, 0.6875],
    [0.9375, 0.0625, 0.6875, 0.1875, 0.3125, 0.5625, 0.1875, 0.1875, 0.1875, 0.5625, 0.4375, 0.8125, 0.6875, 0.6875, 0.0625, 0.6875, 0.0625, 0.5625, 0.1875, 0.0625, 0.4375],
    [0.4375, 0.5625, 0.1875, 0.6875, 0.8125, 0.0625, 0.6875, 0.6875, 0.6875, 0.0625, 0.9375, 0.3125, 0.1875, 0.1875, 0.5625, 0.1875, 0.5625, 0.0625, 0.6875, 0.5625, 0.9375],
    [0.3125, 0.1875, 0.3125, 0.5625, 0.9375, 0.4375, 0.0625, 0.0625, 0.0625, 0.9375, 0.3125, 0.4375, 0.5625, 0.3125, 0.6875, 0.0625, 0.6875, 0.1875, 0.0625, 0.4375, 0.0625],
    [0.8125, 0.6875, 0.8125, 0.0625, 0.4375, 0.9375, 0.5625, 0.5625, 0.5625, 0.4375, 0.8125, 0.9375, 0.0625, 0.8125, 0.1875, 0.5625, 0.1875, 0.6875, 0.5625, 0.9375, 0.5625],
    [0.5625, 0.4375, 0.0625, 0.8125, 0.1875, 0.6875, 0.3125, 0.8125, 0.8125, 0.1875, 0.5625, 0.6875, 0.8125, 0.0625, 0.4375, 0.3125, 0.4375, 0.4375, 0.8125, 0.1875, 0.3125],
    [0.0625, 0.9375, 0.5625, 0.3125, 0.6875, 0.1875, 0.8125, 0.3125, 0.3125, 0.6875, 0.0625, 0.1875, 0.3125, 0.5625, 0.9375, 0.8125, 0.9375, 0.9375, 0.3125, 0.6875, 0.8125],
    [0.09375, 0.46875, 0.46875, 0.65625, 0.28125, 0.96875, 0.53125, 0.84375, 0.46875, 0.15625, 0.09375, 0.40625, 0.65625, 0.65625, 0.34375, 0.03125, 0.78125, 0.59375, 0.78125, 0.03125, 0.71875],
];

/// (e) Sobol points equal the reference implementation exactly.
pub fn sobol_reference() -> Check {
    let points = sobol(16, 21).map_err(|e| e.to_string())?;
    for (i, (got, want)) in points.iter().zip(SOBOL_REFERENCE.iter()).enumerate() {
        if got.as_slice() != want.as_slice() {
            return Err(format!("point {} differs: {got:?}", i + 1));
        }
    }
    Ok("first 16 points of d = 21 match exactly".into())
}

fn compare_states(a: &PosteriorState, b: &PosteriorState, probes: &[Vec<f64>]) -> f64 {
    probes
        .iter()
        .flat_map(|q| {
            let (pa, pb) = (a.predict(q).unwrap(), b.predict(q).unwrap());
            [
                (pa.mean - pb.mean).abs() / pb.mean.abs().max(1.0),
                (pa.scale - pb.scale).abs() / pb.scale.abs().max(1.0),
            ]
        })
        .fold(0.0, f64::max)
}

/// (f) After every step of a 50-step optimization with fixed θ, the
/// incrementally updated posterior equals a refit from scratch.
pub fn update_matches_refit() -> Check {
    let mut params = default_params();
    params.n_init_samples = 5;
    params.n_iterations = 50;
    params.learn_frequency = 1000;
    params.kernel_name = "kMaternISO5".into();
    params.n_inner_global_evals = 300;
    params.n_inner_local_evals = 50;
    let bounds = Bounds::new(vec![-5.0, 0.0], vec![10.0, 15.0]).unwrap();
    let problem = FnProblem::new(bounds, bayesopt::bench::branin);
    let mut opt = Optimizer::new(problem, params).map_err(|e| e.to_string())?;
    opt.initialize().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let probes = random_points(&mut rng, 20, 2);
    let mut worst = 0.0f64;
    for k in 1..=50 {
        opt.step().map_err(|e| e.to_string())?;
        let state = &opt.states()[0];
        let refit = state.model().fit(state.data(), state.hyper_params()).map_err(|e| e.to_string())?;
        let e = compare_states(state, &refit, &probes);
        if e > 1e-8 {
            return Err(format!("step {k}: update differs from refit by {e:.2e}"));
        }
        worst = worst.max(e);
    }
    Ok(format!("50 steps, max deviation {worst:.2e}"))
}

/// All suites in order, labelled (a) to (f).
pub fn all() -> Vec<Suite> {
    vec![
        ("(a) incremental Cholesky vs full factorization", incremental_cholesky as fn() -> Check),
        ("(b) posterior vs dense inverse", dense_inverse),
        ("(c) NIG evidence vs multivariate t", nig_marginal_t),
        ("(d) EI vs Monte Carlo", ei_monte_carlo),
        ("(e) Sobol vs reference", sobol_reference),
        ("(f) incremental update vs refit", update_matches_refit),
    ]
}
