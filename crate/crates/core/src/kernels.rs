//! Covariance functions, mean basis functions and the kernel hyperprior.
//!
//! Leaf kernels are unit-signal (`k(x, x) = 1`, except `kConst` which is
//! its own parameter); the signal variance is owned by the surrogate.

use std::f64::consts::PI;

use crate::config::{kernel_param_count, ConfigError, Family, Params, SpecTree};
use crate::linalg::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Const,
    SeIso,
    Matern1,
    Matern3,
    Matern5,
    RqIso,
    Sum(Box<Node>, Box<Node>),
    Prod(Box<Node>, Box<Node>),
}

impl Node {
    fn from_tree(tree: &SpecTree) -> std::result::Result<Node, ConfigError> {
        let binary = |t: &SpecTree| -> std::result::Result<(Box<Node>, Box<Node>), ConfigError> {
            match t.children.as_slice() {
                [a, b] => Ok((Box::new(Node::from_tree(a)?), Box::new(Node::from_tree(b)?))),
                other => Err(ConfigError::Arity {
                    name: t.node.clone(),
                    expected: crate::config::Arity::Exactly(2),
                    found: other.len(),
                }),
            }
        };
        Ok(match tree.node.as_str() {
            "kConst" => Node::Const,
            "kSEISO" => Node::SeIso,
            "kMaternISO1" => Node::Matern1,
            "kMaternISO3" => Node::Matern3,
            "kMaternISO5" => Node::Matern5,
            "kRQISO" => Node::RqIso,
            "kSum" => {
                let (a, b) = binary(tree)?;
                Node::Sum(a, b)
            }
            "kProd" => {
                let (a, b) = binary(tree)?;
                Node::Prod(a, b)
            }
            _ => {
                return Err(ConfigError::WrongFamily {
                    name: tree.node.clone(),
                    expected: Family::Kernel,
                })
            }
        })
    }

    /// Evaluates the subtree using parameters starting at `theta[0]`;
    /// returns the value and the number of parameters consumed.
    fn eval(&self, theta: &[f64], sq_dist: f64) -> (f64, usize) {
        match self {
            Node::Const => (theta[0], 1),
            Node::SeIso => {
                let l = theta[0];
                ((-0.5 * sq_dist / (l * l)).exp(), 1)
            }
            Node::Matern1 => {
                let r = sq_dist.sqrt() / theta[0];
                ((-r).exp(), 1)
            }
            Node::Matern3 => {
                let r = 3f64.sqrt() * sq_dist.sqrt() / theta[0];
                ((1.0 + r) * (-r).exp(), 1)
            }
            Node::Matern5 => {
                let r = 5f64.sqrt() * sq_dist.sqrt() / theta[0];
                ((1.0 + r + r * r / 3.0) * (-r).exp(), 1)
            }
            Node::RqIso => {
                let (l, alpha) = (theta[0], theta[1]);
                ((1.0 + sq_dist / (2.0 * alpha * l * l)).powf(-alpha), 2)
            }
            Node::Sum(a, b) => {
                let (va, na) = a.eval(theta, sq_dist);
                let (vb, nb) = b.eval(&theta[na..], sq_dist);
                (va + vb, na + nb)
            }
            Node::Prod(a, b) => {
                let (va, na) = a.eval(theta, sq_dist);
                let (vb, nb) = b.eval(&theta[na..], sq_dist);
                (va * vb, na + nb)
            }
        }
    }
}

/// A compiled kernel expression.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    tree: SpecTree,
    root: Node,
    n_params: usize,
}

impl KernelSpec {
    pub fn new(tree: &SpecTree) -> std::result::Result<Self, ConfigError> {
        Ok(KernelSpec {
            root: Node::from_tree(tree)?,
            n_params: kernel_param_count(tree),
            tree: tree.clone(),
        })
    }

    pub fn parse(text: &str) -> std::result::Result<Self, ConfigError> {
        Self::new(&crate::config::parse_expression(text)?)
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn tree(&self) -> &SpecTree {
        &self.tree
    }

    /// Kernel value without dimension checks.
    #[inline]
    pub fn eval_unchecked(&self, theta: &[f64], x1: &[f64], x2: &[f64]) -> f64 {
        let sq: f64 = x1.iter().zip(x2).map(|(a, b)| (a - b) * (a - b)).sum();
        self.root.eval(theta, sq).0
    }

    fn check(&self, hp: &HyperParams) -> Result<()> {
        if hp.len() != self.n_params {
            return Err(Error::LengthMismatch {
                what: "kernel hyperparameters",
                expected: self.n_params,
                found: hp.len(),
            });
        }
        Ok(())
    }
}

/// Strictly positive kernel parameters θ, in kernel tree order.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams(Vec<f64>);

impl HyperParams {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if theta.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(Error::InvalidHyperParams(theta));
        }
        Ok(HyperParams(theta))
    }

    pub fn from_log(log_theta: &[f64]) -> Result<Self> {
        Self::new(log_theta.iter().map(|v| v.exp()).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn log(&self) -> Vec<f64> {
        self.0.iter().map(|v| v.ln()).collect()
    }
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

pub fn kernel_eval(spec: &KernelSpec, hp: &HyperParams, x1: &[f64], x2: &[f64]) -> Result<f64> {
    spec.check(hp)?;
    check_dim(x1.len(), x2.len())?;
    Ok(spec.eval_unchecked(hp.as_slice(), x1, x2))
}

/// Kernel matrix of a point set (rows of `xs`).
pub fn gram_matrix(spec: &KernelSpec, hp: &HyperParams, xs: &[Vec<f64>]) -> Result<Matrix> {
    spec.check(hp)?;
    let d = xs.first().map_or(0, Vec::len);
    for x in xs {
        check_dim(d, x.len())?;
    }
    let n = xs.len();
    let theta = hp.as_slice();
    let mut k = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = spec.eval_unchecked(theta, &xs[i], &xs[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// Correlations `k(x_i, xq)` of a query with every point.
pub fn cross_kernel(spec: &KernelSpec, hp: &HyperParams, xs: &[Vec<f64>], xq: &[f64]) -> Result<Vec<f64>> {
    spec.check(hp)?;
    for x in xs {
        check_dim(xq.len(), x.len())?;
    }
    let theta = hp.as_slice();
    Ok(xs.iter().map(|x| spec.eval_unchecked(theta, x, xq)).collect())
}

/// Parametric mean basis φ(x).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisSpec {
    Zero,
    Const,
    Linear,
}

impl BasisSpec {
    pub fn new(tree: &SpecTree) -> std::result::Result<Self, ConfigError> {
        match tree.node.as_str() {
            "mZero" => Ok(BasisSpec::Zero),
            "mConst" => Ok(BasisSpec::Const),
            "mLinear" => Ok(BasisSpec::Linear),
            _ => Err(ConfigError::WrongFamily {
                name: tree.node.clone(),
                expected: Family::Mean,
            }),
        }
    }

    /// Output dimension `p` for inputs of dimension `d`.
    pub fn dim(&self, d: usize) -> usize {
        match self {
            BasisSpec::Zero => 0,
            BasisSpec::Const => 1,
            BasisSpec::Linear => d + 1,
        }
    }

    pub fn eval_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        match self {
            BasisSpec::Zero => {}
            BasisSpec::Const => out.push(1.0),
            BasisSpec::Linear => {
                out.push(1.0);
                out.extend_from_slice(x);
            }
        }
    }
}

pub fn mean_basis(spec: BasisSpec, x: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(spec.dim(x.len()));
    spec.eval_into(x, &mut out);
    out
}

/// Log density of independent log-normal priors on every kernel parameter,
/// `log m_j` and `s_j` being the mean and standard deviation of `log θ_j`.
pub fn hyperprior_logpdf(params: &Params, hp: &HyperParams) -> Result<f64> {
    let (means, stds) = (&params.kernel_hp_mean, &params.kernel_hp_std);
    if means.len() != hp.len() || stds.len() != hp.len() {
        return Err(Error::LengthMismatch {
            what: "kernel hyperprior",
            expected: hp.len(),
            found: means.len().min(stds.len()),
        });
    }
    let mut lp = 0.0;
    for ((&t, &m), &s) in hp.as_slice().iter().zip(means).zip(stds) {
        let z = (t.ln() - m.ln()) / s;
        lp += -0.5 * z * z - t.ln() - s.ln() - 0.5 * (2.0 * PI).ln();
    }
    Ok(lp)
}
