//! Benchmark functions, the optimization gap and the multi-run experiment
//! driver.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::config::{params_from_table, ConfigError, Params};
use crate::inner::Bounds;
use crate::optimizer::{FnProblem, History, Optimizer};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Benchmark {
    Branin,
    Camelback,
    Hartmann6,
}

pub const BRANIN_MIN: f64 = 0.397_887_357_729_738;
pub const CAMELBACK_MIN: f64 = -1.031_628_453_489_877;
pub const HARTMANN6_MIN: f64 = -3.322_368_011_415_515;

const HARTMANN_ALPHA: [f64; 4] = [1.0, 1.2, 3.0, 3.2];
const HARTMANN_A: [[f64; 6]; 4] = [
    [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
    [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
    [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
    [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
];
const HARTMANN_P: [[f64; 6]; 4] = [
    [0.1312, 0.1696, 0.5569, 0.0124, 0.8283, 0.5886],
    [0.2329, 0.4135, 0.8307, 0.3736, 0.1004, 0.9991],
    [0.2348, 0.1451, 0.3522, 0.2883, 0.3047, 0.6650],
    [0.4047, 0.8828, 0.8732, 0.5743, 0.1091, 0.0381],
];

pub fn branin(x: &[f64]) -> f64 {
    let (a, b, c, r, s, t) = (1.0, 5.1 / (4.0 * PI * PI), 5.0 / PI, 6.0, 10.0, 1.0 / (8.0 * PI));
    a * (x[1] - b * x[0] * x[0] + c * x[0] - r).powi(2) + s * (1.0 - t) * x[0].cos() + s
}

/// Six-hump camel function.
pub fn camelback(x: &[f64]) -> f64 {
    let (x1, x2) = (x[0], x[1]);
    (4.0 - 2.1 * x1 * x1 + x1.powi(4) / 3.0) * x1 * x1 + x1 * x2 + (-4.0 + 4.0 * x2 * x2) * x2 * x2
}

pub fn hartmann6(x: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..4 {
        let mut inner = 0.0;
        for j in 0..6 {
            inner += HARTMANN_A[i][j] * (x[j] - HARTMANN_P[i][j]).powi(2);
        }
        total -= HARTMANN_ALPHA[i] * (-inner).exp();
    }
    total
}

impl Benchmark {
    pub const ALL: [Benchmark; 3] = [Benchmark::Branin, Benchmark::Camelback, Benchmark::Hartmann6];

    pub fn name(self) -> &'static str {
        match self {
            Benchmark::Branin => "branin",
            Benchmark::Camelback => "camelback",
            Benchmark::Hartmann6 => "hartmann6",
        }
    }

    pub fn dim(self) -> usize {
        match self {
            Benchmark::Branin | Benchmark::Camelback => 2,
            Benchmark::Hartmann6 => 6,
        }
    }

    pub fn bounds(self) -> Bounds {
        let (lower, upper) = match self {
            Benchmark::Branin => (vec![-5.0, 0.0], vec![10.0, 15.0]),
            Benchmark::Camelback => (vec![-3.0, -2.0], vec![3.0, 2.0]),
            Benchmark::Hartmann6 => (vec![0.0; 6], vec![1.0; 6]),
        };
        Bounds::new(lower, upper).expect("valid benchmark bounds")
    }

    pub fn f_star(self) -> f64 {
        match self {
            Benchmark::Branin => BRANIN_MIN,
            Benchmark::Camelback => CAMELBACK_MIN,
            Benchmark::Hartmann6 => HARTMANN6_MIN,
        }
    }

    pub fn evaluate(self, x: &[f64]) -> f64 {
        match self {
            Benchmark::Branin => branin(x),
            Benchmark::Camelback => camelback(x),
            Benchmark::Hartmann6 => hartmann6(x),
        }
    }

    /// Known global minimizers.
    pub fn minimizers(self) -> Vec<Vec<f64>> {
        match self {
            Benchmark::Branin => vec![
                vec![-PI, 12.275],
                vec![PI, 2.275],
                vec![9.424_78, 2.475],
            ],
            Benchmark::Camelback => vec![vec![0.089_842, -0.712_656], vec![-0.089_842, 0.712_656]],
            Benchmark::Hartmann6 => vec![vec![0.201_69, 0.150_011, 0.476_874, 0.275_332, 0.311_652, 0.657_3]],
        }
    }
}

impl std::str::FromStr for Benchmark {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "branin" => Ok(Benchmark::Branin),
            "camelback" | "sixhumpcamel" => Ok(Benchmark::Camelback),
            "hartmann6" | "hartmann" => Ok(Benchmark::Hartmann6),
            _ => Err(format!("unknown benchmark `{s}` (expected branin, camelback or hartmann6)")),
        }
    }
}

impl std::fmt::Display for Benchmark {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// `y_best - f*`, floored at zero.
pub fn gap(y_best: f64, bench: Benchmark) -> f64 {
    (y_best - bench.f_star()).max(0.0)
}

/// Named configuration with per-benchmark initial design sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub label: String,
    pub params: Params,
    pub n_init: BTreeMap<String, usize>,
}

impl Preset {
    /// Parses a preset document: optional `label`, an optional `[n_init]`
    /// table keyed by benchmark name, and ordinary parameter keys.
    pub fn parse(doc: &str) -> std::result::Result<Self, ConfigError> {
        let mut table: toml::Table = doc
            .parse()
            .map_err(|e: toml::de::Error| ConfigError::Document(e.message().to_string()))?;
        let label = match table.remove("label") {
            Some(toml::Value::String(s)) => s,
            Some(_) => {
                return Err(ConfigError::TypeMismatch {
                    key: "label".into(),
                    expected: "a string",
                })
            }
            None => "custom".into(),
        };
        let mut n_init = BTreeMap::new();
        match table.remove("n_init") {
            Some(toml::Value::Table(t)) => {
                for (name, v) in t {
                    let bench: Benchmark = name.parse().map_err(|msg: String| ConfigError::Range {
                        key: "n_init".into(),
                        msg,
                    })?;
                    match v.as_integer() {
                        Some(n) if n > 0 => {
                            n_init.insert(bench.name().to_string(), n as usize);
                        }
                        _ => {
                            return Err(ConfigError::TypeMismatch {
                                key: format!("n_init.{name}"),
                                expected: "a positive integer",
                            })
                        }
                    }
                }
            }
            Some(_) => {
                return Err(ConfigError::TypeMismatch {
                    key: "n_init".into(),
                    expected: "a table",
                })
            }
            None => {}
        }
        let params = params_from_table(&table)?;
        Ok(Preset { label, params, n_init })
    }

    /// Parameters for one benchmark with `total_evals` evaluations.
    pub fn params_for(&self, bench: Benchmark, total_evals: usize) -> Result<Params> {
        let mut p = self.params.clone();
        if let Some(&n) = self.n_init.get(bench.name()) {
            p.n_init_samples = n;
        }
        if total_evals <= p.n_init_samples {
            return Err(Error::InvalidData(format!(
                "{total_evals} evaluations do not exceed the {} initial samples",
                p.n_init_samples
            )));
        }
        p.n_iterations = total_evals - p.n_init_samples;
        Ok(p)
    }
}

/// Aggregated results of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct GapRow {
    pub benchmark: Benchmark,
    pub label: String,
    pub checkpoints: Vec<usize>,
    pub mean_gap: Vec<f64>,
    pub std_gap: Vec<f64>,
    /// Whole-run wall time in seconds.
    pub mean_time: f64,
    pub std_time: f64,
    pub n_runs: usize,
}

/// One optimizer run of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub run_id: usize,
    pub seed: u64,
    pub history: History,
    pub wall_time: Duration,
    /// Gap after each checkpoint.
    pub gaps: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub row: GapRow,
    pub runs: Vec<RunOutcome>,
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs `n_runs` independent optimizations with seeds `base_seed + i` in
/// parallel and reports the gap at every checkpoint (number of evaluations).
pub fn run_experiment(
    params: &Params,
    label: &str,
    bench: Benchmark,
    n_runs: usize,
    base_seed: u64,
    checkpoints: &[usize],
) -> Result<Experiment> {
    let total = params.n_init_samples + params.n_iterations;
    if n_runs == 0 {
        return Err(Error::InvalidData("an experiment needs at least one run".into()));
    }
    if let Some(&c) = checkpoints.iter().find(|&&c| c == 0 || c > total) {
        return Err(Error::InvalidData(format!("checkpoint {c} is outside 1..={total}")));
    }
    let runs = (0..n_runs)
        .into_par_iter()
        .map(|run| {
            let seed = base_seed.wrapping_add(run as u64);
            let mut p = params.clone();
            p.random_seed = seed;
            let started = Instant::now();
            let problem = FnProblem::new(bench.bounds(), |x: &[f64]| bench.evaluate(x));
            let result = Optimizer::new(problem, p)
                .and_then(|mut o| o.run())
                .map_err(|e| Error::Run {
                    run,
                    source: Box::new(e),
                })?;
            let wall_time = started.elapsed();
            let gaps = checkpoints
                .iter()
                .map(|&c| gap(result.history.best_after(c).expect("checkpoint within run"), bench))
                .collect();
            log::info!("{bench} run {run} (seed {seed}): best {} in {:.1?}", result.y_best, wall_time);
            Ok(RunOutcome {
                run_id: run,
                seed,
                history: result.history,
                wall_time,
                gaps,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut mean_gap = Vec::with_capacity(checkpoints.len());
    let mut std_gap = Vec::with_capacity(checkpoints.len());
    for k in 0..checkpoints.len() {
        let g: Vec<f64> = runs.iter().map(|r| r.gaps[k]).collect();
        let (m, s) = mean_std(&g);
        mean_gap.push(m);
        std_gap.push(s);
    }
    let times: Vec<f64> = runs.iter().map(|r| r.wall_time.as_secs_f64()).collect();
    let (mean_time, std_time) = mean_std(&times);
    Ok(Experiment {
        row: GapRow {
            benchmark: bench,
            label: label.to_string(),
            checkpoints: checkpoints.to_vec(),
            mean_gap,
            std_gap,
            mean_time,
            std_time,
            n_runs,
        },
        runs,
    })
}
