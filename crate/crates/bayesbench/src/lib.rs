//! Support code for the `bayesbench` command: presets, CSV output, result
//! tables and external-command targets.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;
use std::process::{Command, Stdio};

use anyhow::{bail, Context};
use bayesopt::bench::{gap, mean_std, Benchmark, Experiment, Preset};
use bayesopt::{Bounds, EvalError, Problem};

/// Preset shipped with the tool: MAP learning every 20 iterations.
pub const BAYESOPT1: &str = include_str!("../presets/bayesopt1.toml");
/// Preset shipped with the tool: MCMC learning every iteration.
pub const BAYESOPT2: &str = include_str!("../presets/bayesopt2.toml");

/// Loads a preset file. The names `bayesopt1` and `bayesopt2` refer to the
/// bundled presets when no such file exists.
pub fn load_preset(path: &Path) -> anyhow::Result<Preset> {
    let doc = match std::fs::read_to_string(path) {
        Ok(doc) => doc,
        Err(e) => match path.to_str() {
            Some("bayesopt1") | Some("bayesopt1.toml") => BAYESOPT1.to_string(),
            Some("bayesopt2") | Some("bayesopt2.toml") => BAYESOPT2.to_string(),
            _ => return Err(e).with_context(|| format!("reading {}", path.display())),
        },
    };
    Preset::parse(&doc).with_context(|| format!("parsing {}", path.display()))
}

/// Parses `50,200` style lists.
pub fn parse_list<T: std::str::FromStr>(s: &str) -> anyhow::Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse::<T>().map_err(|e| anyhow::anyhow!("invalid list item `{t}`: {e}")))
        .collect()
}

/// Writes one row per evaluation of every run. With `timing` off the
/// `elapsed_ms` column is zero so that output depends only on the seeds.
pub fn write_runs_csv<W: Write>(out: W, exp: &Experiment, timing: bool) -> anyhow::Result<()> {
    let bench = exp.row.benchmark;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["run_id".to_string(), "iteration".into(), "eval_index".into()];
    header.extend((0..bench.dim()).map(|j| format!("x_{j}")));
    header.extend(["y", "y_best", "gap", "elapsed_ms"].map(String::from));
    w.write_record(&header)?;
    for run in &exp.runs {
        for (i, r) in run.history.records().iter().enumerate() {
            let mut row = vec![run.run_id.to_string(), r.iteration.to_string(), (i + 1).to_string()];
            row.extend(r.x.iter().map(f64::to_string));
            row.push(r.y.to_string());
            row.push(r.y_best.to_string());
            row.push(gap(r.y_best, bench).to_string());
            let ms = if timing { r.elapsed.as_secs_f64() * 1e3 } else { 0.0 };
            row.push(format!("{ms:.3}"));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Mean and standard deviation of the gap at each checkpoint and of the
/// run time, as read back from a results file.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub label: String,
    pub n_runs: usize,
    /// `(checkpoint, mean, std)`; checkpoints beyond a run's length are
    /// skipped.
    pub gaps: Vec<(usize, f64, f64)>,
    pub time_s: (f64, f64),
}

pub fn summarize_csv<R: Read>(input: R, label: &str, checkpoints: &[usize]) -> anyhow::Result<Summary> {
    let mut reader = csv::Reader::from_reader(input);
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("missing column `{name}`"))
    };
    let (run_col, idx_col, gap_col, ms_col) = (col("run_id")?, col("eval_index")?, col("gap")?, col("elapsed_ms")?);
    // run -> (gap by eval index, last elapsed)
    let mut runs: BTreeMap<usize, (BTreeMap<usize, f64>, f64)> = BTreeMap::new();
    for rec in reader.records() {
        let rec = rec?;
        let run: usize = rec[run_col].parse()?;
        let idx: usize = rec[idx_col].parse()?;
        let g: f64 = rec[gap_col].parse()?;
        let ms: f64 = rec[ms_col].parse()?;
        let entry = runs.entry(run).or_default();
        entry.0.insert(idx, g);
        entry.1 = entry.1.max(ms);
    }
    if runs.is_empty() {
        bail!("no result rows");
    }
    let mut gaps = Vec::new();
    for &c in checkpoints {
        let values: Option<Vec<f64>> = runs.values().map(|(g, _)| g.get(&c).copied()).collect();
        if let Some(values) = values {
            let (m, s) = mean_std(&values);
            gaps.push((c, m, s));
        }
    }
    let times: Vec<f64> = runs.values().map(|(_, ms)| ms / 1e3).collect();
    Ok(Summary {
        label: label.to_string(),
        n_runs: runs.len(),
        gaps,
        time_s: mean_std(&times),
    })
}

/// Renders summaries as a grid of `mean (std)` cells.
pub fn format_table(rows: &[Summary]) -> String {
    let mut checkpoints: Vec<usize> = rows.iter().flat_map(|r| r.gaps.iter().map(|g| g.0)).collect();
    checkpoints.sort_unstable();
    checkpoints.dedup();
    let width = rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(6);
    let mut out = format!("{:<width$}  {:>4}", "config", "runs");
    for c in &checkpoints {
        out += &format!("  {:>18}", format!("gap@{c}"));
    }
    out += &format!("  {:>18}\n", "time s");
    for r in rows {
        out += &format!("{:<width$}  {:>4}", r.label, r.n_runs);
        for c in &checkpoints {
            let cell = r
                .gaps
                .iter()
                .find(|g| g.0 == *c)
                .map_or("-".to_string(), |g| format!("{:.5} ({:.3})", g.1, g.2));
            out += &format!("  {cell:>18}");
        }
        out += &format!("  {:>18}\n", format!("{:.2} ({:.2})", r.time_s.0, r.time_s.1));
    }
    out
}

/// Target evaluated by a shell command: the coordinates are written to its
/// standard input separated by spaces, and the first token of its standard
/// output is the value.
pub struct CommandProblem {
    bounds: Bounds,
    command: String,
}

impl CommandProblem {
    pub fn new(bounds: Bounds, command: impl Into<String>) -> Self {
        CommandProblem {
            bounds,
            command: command.into(),
        }
    }
}

impl Problem for CommandProblem {
    fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    fn evaluate(&mut self, x: &[f64]) -> Result<f64, EvalError> {
        let fail = |msg: String| EvalError(format!("`{}`: {msg}", self.command));
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| fail(e.to_string()))?;
        let line: Vec<String> = x.iter().map(f64::to_string).collect();
        {
            let mut stdin = child.stdin.take().expect("piped stdin");
            // The command may exit without reading its input.
            let _ = writeln!(stdin, "{}", line.join(" "));
        }
        let output = child.wait_with_output().map_err(|e| fail(e.to_string()))?;
        if !output.status.success() {
            return Err(fail(format!("exited with {}", output.status)));
        }
        let text = String::from_utf8_lossy(&output.stdout);
        let token = text.split_whitespace().next().ok_or_else(|| fail("printed nothing".into()))?;
        token
            .parse::<f64>()
            .map_err(|e| fail(format!("invalid output `{token}`: {e}")))
    }
}

/// Looks up a benchmark by name.
pub fn benchmark(name: &str) -> anyhow::Result<Benchmark> {
    name.parse().map_err(anyhow::Error::msg)
}
