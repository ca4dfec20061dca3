//! Derivative-free maximization over a box: DIRECT for the global stage and
//! a bounded Nelder-Mead simplex for local refinement.
//!
//! Objectives may return `-inf` (or NaN) for infeasible points; such points
//! are never preferred over a finite value.

use std::collections::BTreeMap;

use crate::{Error, Result};

/// Axis-aligned box `lower <= x <= upper`.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::InvalidBounds(format!(
                "{} lower bounds but {} upper bounds",
                lower.len(),
                upper.len()
            )));
        }
        if lower.is_empty() {
            return Err(Error::InvalidBounds("zero-dimensional box".into()));
        }
        for (j, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l.is_finite() && u.is_finite() && l < u) {
                return Err(Error::InvalidBounds(format!("dimension {j}: [{l}, {u}]")));
            }
        }
        Ok(Bounds { lower, upper })
    }

    /// `[0, 1]^d`.
    pub fn unit(d: usize) -> Self {
        Bounds {
            lower: vec![0.0; d],
            upper: vec![1.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn width(&self, j: usize) -> f64 {
        self.upper[j] - self.lower[j]
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(&self.lower).zip(&self.upper).all(|((v, l), u)| l <= v && v <= u)
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)).collect()
    }

    /// Maps a point of the unit cube into the box.
    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(&self.lower)
            .zip(&self.upper)
            .map(|((v, l), h)| (l + v * (h - l)).clamp(*l, *h))
            .collect()
    }

    /// Maps a point of the box into the unit cube.
    pub fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.lower)
            .zip(&self.upper)
            .map(|((v, l), h)| (v - l) / (h - l))
            .collect()
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for ((v, l), u) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*l, *u);
        }
    }
}

/// Evaluation budgets of the two stages of [`maximize`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InnerBudget {
    pub global_evals: usize,
    pub local_evals: usize,
}

impl InnerBudget {
    pub fn new(global_evals: usize, local_evals: usize) -> Self {
        InnerBudget {
            global_evals: global_evals.max(1),
            local_evals: local_evals.max(1),
        }
    }
}

/// Result of a maximization.
#[derive(Debug, Clone, PartialEq)]
pub struct Maximum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
}

/// Slack of the potential-optimality test.
pub const DIRECT_EPSILON: f64 = 1e-4;
/// Rectangles are not divided past this trisection depth.
const MAX_LEVEL: u32 = 30;

/// Minimization key: infeasible values become `+inf`.
#[inline]
fn cost(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        -v
    }
}

struct Rect {
    center: Vec<f64>,
    levels: Vec<u32>,
    cost: f64,
}

impl Rect {
    fn level_sum(&self) -> u32 {
        self.levels.iter().sum()
    }

    fn min_level(&self) -> u32 {
        *self.levels.iter().min().unwrap()
    }

    /// Center-to-vertex distance in the unit cube.
    fn size(&self) -> f64 {
        0.5 * self.levels.iter().map(|&l| 3f64.powi(-2 * l as i32)).sum::<f64>().sqrt()
    }
}

struct Direct<'a, F> {
    f: F,
    bounds: &'a Bounds,
    rects: Vec<Rect>,
    evals: usize,
    best: usize,
}

impl<F: FnMut(&[f64]) -> f64> Direct<'_, F> {
    fn eval(&mut self, center: Vec<f64>, levels: Vec<u32>) -> usize {
        let x = self.bounds.from_unit(&center);
        let c = cost((self.f)(&x));
        self.evals += 1;
        self.rects.push(Rect { center, levels, cost: c });
        let idx = self.rects.len() - 1;
        if c < self.rects[self.best].cost {
            self.best = idx;
        }
        idx
    }

    /// Indices of potentially optimal rectangles.
    fn select(&self) -> Vec<usize> {
        // Per size class (keyed by level sum; larger sum = smaller rectangle),
        // the lowest cost and every rectangle attaining it.
        let mut classes: BTreeMap<u32, (f64, Vec<usize>)> = BTreeMap::new();
        for (i, r) in self.rects.iter().enumerate() {
            if r.min_level() >= MAX_LEVEL {
                continue;
            }
            let e = classes.entry(r.level_sum()).or_insert((f64::INFINITY, Vec::new()));
            if r.cost < e.0 || e.1.is_empty() {
                *e = (r.cost, vec![i]);
            } else if r.cost == e.0 {
                e.1.push(i);
            }
        }
        let finite: Vec<(f64, f64, &Vec<usize>)> = classes
            .values()
            .filter(|(c, _)| c.is_finite())
            .map(|(c, ids)| (self.rects[ids[0]].size(), *c, ids))
            .collect();
        if finite.is_empty() {
            // Nothing feasible yet: keep splitting the largest rectangles.
            return classes.values().next().map(|(_, ids)| ids.clone()).unwrap_or_default();
        }
        let g_min = finite.iter().map(|t| t.1).fold(f64::INFINITY, f64::min);
        let target = g_min - DIRECT_EPSILON * g_min.abs();
        let mut out = Vec::new();
        for (j, &(dj, gj, ids)) in finite.iter().enumerate() {
            let mut k_low = 0.0f64;
            let mut k_high = f64::INFINITY;
            for (i, &(di, gi, _)) in finite.iter().enumerate() {
                if i == j {
                    continue;
                }
                if di < dj {
                    k_low = k_low.max((gj - gi) / (dj - di));
                } else if di > dj {
                    k_high = k_high.min((gi - gj) / (di - dj));
                }
            }
            if k_low > k_high || k_high <= 0.0 {
                continue;
            }
            if k_high.is_finite() && gj - k_high * dj > target {
                continue;
            }
            out.extend_from_slice(ids);
        }
        out
    }

    fn divide(&mut self, idx: usize) {
        let min_level = self.rects[idx].min_level();
        let delta = 3f64.powi(-(min_level as i32 + 1));
        let dims: Vec<usize> = (0..self.bounds.dim()).filter(|&j| self.rects[idx].levels[j] == min_level).collect();
        let mut samples = Vec::with_capacity(dims.len());
        for &j in &dims {
            let mut plus = self.rects[idx].center.clone();
            plus[j] += delta;
            let mut minus = self.rects[idx].center.clone();
            minus[j] -= delta;
            let levels = self.rects[idx].levels.clone();
            let ip = self.eval(plus, levels.clone());
            let im = self.eval(minus, levels);
            let w = self.rects[ip].cost.min(self.rects[im].cost);
            samples.push((w, j, ip, im));
        }
        samples.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut levels = self.rects[idx].levels.clone();
        for &(_, j, ip, im) in &samples {
            levels[j] += 1;
            self.rects[ip].levels = levels.clone();
            self.rects[im].levels = levels.clone();
        }
        self.rects[idx].levels = levels;
    }
}

/// DIviding RECTangles global maximization of `f` over `bounds`.
///
/// Stops before dividing a rectangle once `max_evals` evaluations have been
/// spent, so the total never exceeds `max_evals + 2d`.
pub fn direct_maximize<F: FnMut(&[f64]) -> f64>(f: F, bounds: &Bounds, max_evals: usize) -> Maximum {
    let d = bounds.dim();
    let mut run = Direct {
        f,
        bounds,
        rects: Vec::new(),
        evals: 0,
        best: 0,
    };
    run.eval(vec![0.5; d], vec![0; d]);
    'outer: while run.evals < max_evals {
        let selected = run.select();
        if selected.is_empty() {
            break;
        }
        for idx in selected {
            if run.evals >= max_evals {
                break 'outer;
            }
            run.divide(idx);
        }
    }
    let best = &run.rects[run.best];
    Maximum {
        x: bounds.from_unit(&best.center),
        value: -best.cost,
        evals: run.evals,
    }
}

/// Bounded Nelder-Mead refinement of `f` from `x0`.
///
/// Coefficients: reflection 1, expansion 2, contraction 0.5, shrink 0.5.
/// Trial points are clamped to the box; the initial simplex has edges of 5%
/// of the box width. The returned value is never worse than `f(x0)`.
pub fn simplex_refine<F: FnMut(&[f64]) -> f64>(mut f: F, x0: &[f64], bounds: &Bounds, max_evals: usize) -> Maximum {
    if max_evals == 0 {
        return Maximum {
            x: x0.to_vec(),
            value: f64::NEG_INFINITY,
            evals: 0,
        };
    }
    let v0 = f(x0);
    simplex_from(&mut f, x0, v0, bounds, max_evals - 1, 1)
}

const SIMPLEX_XTOL: f64 = 1e-10;

fn simplex_from<F: FnMut(&[f64]) -> f64>(
    f: &mut F,
    x0: &[f64],
    v0: f64,
    bounds: &Bounds,
    budget: usize,
    already: usize,
) -> Maximum {
    let d = bounds.dim();
    let mut evals = 0usize;
    let mut x0 = x0.to_vec();
    bounds.clamp(&mut x0);
    let mut simplex: Vec<(Vec<f64>, f64)> = vec![(x0.clone(), cost(v0))];

    macro_rules! eval {
        ($x:expr) => {{
            evals += 1;
            cost(f(&$x))
        }};
    }

    for j in 0..d {
        if evals >= budget {
            break;
        }
        let h = 0.05 * bounds.width(j);
        let mut x = x0.clone();
        x[j] = if x0[j] + h <= bounds.upper()[j] { x0[j] + h } else { x0[j] - h };
        let c = eval!(x);
        simplex.push((x, c));
    }

    let finish = |simplex: &[(Vec<f64>, f64)], evals: usize| {
        let best = simplex
            .iter()
            .enumerate()
            .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(a.0.cmp(&b.0)))
            .map(|(_, v)| v)
            .unwrap();
        Maximum {
            x: best.0.clone(),
            value: -best.1,
            evals: evals + already,
        }
    };

    if simplex.len() < d + 1 {
        return finish(&simplex, evals);
    }

    let trial = |centroid: &[f64], worst: &[f64], t: f64| -> Vec<f64> {
        let mut x: Vec<f64> = centroid.iter().zip(worst).map(|(c, w)| c + t * (c - w)).collect();
        bounds.clamp(&mut x);
        x
    };

    while evals < budget {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let diameter = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).enumerate().map(|(j, (a, b))| (a - b).abs() / bounds.width(j)))
            .fold(0.0, f64::max);
        if diameter < SIMPLEX_XTOL {
            break;
        }
        let mut centroid = vec![0.0; d];
        for (x, _) in &simplex[..d] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / d as f64;
            }
        }
        let (worst, g_worst) = simplex[d].clone();
        let g_best = simplex[0].1;
        let g_second = simplex[d - 1].1;

        let xr = trial(&centroid, &worst, 1.0);
        let gr = eval!(xr);
        if gr < g_best {
            if evals < budget {
                let xe = trial(&centroid, &worst, 2.0);
                let ge = eval!(xe);
                simplex[d] = if ge < gr { (xe, ge) } else { (xr, gr) };
            } else {
                simplex[d] = (xr, gr);
            }
            continue;
        }
        if gr < g_second {
            simplex[d] = (xr, gr);
            continue;
        }
        if evals >= budget {
            if gr < g_worst {
                simplex[d] = (xr, gr);
            }
            break;
        }
        let (xc, gc) = if gr < g_worst {
            let xc = trial(&centroid, &worst, 0.5);
            let g = eval!(xc);
            (xc, g)
        } else {
            let xc = trial(&centroid, &worst, -0.5);
            let g = eval!(xc);
            (xc, g)
        };
        if gc < gr.min(g_worst) {
            simplex[d] = (xc, gc);
            continue;
        }
        if gr < g_worst {
            simplex[d] = (xr, gr);
        }
        // Shrink towards the best vertex.
        let best = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            if evals >= budget {
                break;
            }
            let x: Vec<f64> = best.iter().zip(&vertex.0).map(|(b, v)| b + 0.5 * (v - b)).collect();
            let g = eval!(x);
            *vertex = (x, g);
        }
    }
    finish(&simplex, evals)
}

/// Global DIRECT search followed by simplex refinement of its best point.
pub fn maximize<F: FnMut(&[f64]) -> f64>(mut f: F, bounds: &Bounds, budget: InnerBudget) -> Maximum {
    let global = direct_maximize(&mut f, bounds, budget.global_evals);
    let local = simplex_from(&mut f, &global.x, global.value, bounds, budget.local_evals, global.evals);
    if local.value > global.value || (global.value.is_nan() && !local.value.is_nan()) {
        local
    } else {
        Maximum {
            x: global.x,
            value: global.value,
            evals: local.evals,
        }
    }
}
