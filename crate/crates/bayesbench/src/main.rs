use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Context};
use bayesbench::{benchmark, format_table, load_preset, parse_list, summarize_csv, write_runs_csv, CommandProblem};
use bayesopt::bench::run_experiment;
use bayesopt::{Bounds, Optimizer};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bayesbench", version, about = "Bayesian optimization benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run seeded optimizations of a benchmark and write per-evaluation CSV.
    Run {
        /// Preset file (`bayesopt1` / `bayesopt2` select the bundled ones).
        #[arg(long)]
        config: PathBuf,
        /// branin, camelback or hartmann6.
        #[arg(long)]
        function: String,
        #[arg(long, default_value_t = 10)]
        runs: usize,
        /// Run i uses seed `seed + i`.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Evaluation counts at which the gap is reported.
        #[arg(long, default_value = "50,200")]
        checkpoints: String,
        /// Total evaluations per run; defaults to the largest checkpoint.
        #[arg(long)]
        evals: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write zeros in the elapsed_ms column (reproducible output).
        #[arg(long)]
        no_timing: bool,
    },
    /// Summarize result files as mean (std) gaps.
    Table {
        #[arg(long = "in", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "50,100,200")]
        checkpoints: String,
    },
    /// Minimize an external command.
    Optimize {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dim: usize,
        /// Lower bounds, comma separated; a single value applies to all dimensions.
        #[arg(long, allow_hyphen_values = true)]
        lower: String,
        #[arg(long, allow_hyphen_values = true)]
        upper: String,
        /// Shell command reading coordinates on stdin and printing the value.
        #[arg(long)]
        target_cmd: String,
    },
}

fn expand(values: Vec<f64>, dim: usize, what: &str) -> anyhow::Result<Vec<f64>> {
    match values.len() {
        1 => Ok(vec![values[0]; dim]),
        n if n == dim => Ok(values),
        n => bail!("{what}: expected 1 or {dim} values, got {n}"),
    }
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Cmd::Run {
            config,
            function,
            runs,
            seed,
            checkpoints,
            evals,
            out,
            no_timing,
        } => {
            let preset = load_preset(&config)?;
            let bench = benchmark(&function)?;
            let checkpoints: Vec<usize> = parse_list(&checkpoints)?;
            let total = match (evals, checkpoints.iter().max()) {
                (Some(n), _) => n,
                (None, Some(&m)) => m,
                (None, None) => bail!("no checkpoints given"),
            };
            let params = preset.params_for(bench, total)?;
            let exp = run_experiment(&params, &preset.label, bench, runs, seed, &checkpoints)?;
            if let Some(path) = out {
                let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                write_runs_csv(BufWriter::new(file), &exp, !no_timing)?;
            }
            let row = &exp.row;
            println!("{} on {} ({} runs, f* = {})", row.label, bench, row.n_runs, bench.f_star());
            for (c, (m, s)) in row.checkpoints.iter().zip(row.mean_gap.iter().zip(&row.std_gap)) {
                println!("  gap@{c}: {m:.5} ({s:.3})");
            }
            println!("  time s: {:.2} ({:.2})", row.mean_time, row.std_time);
        }
        Cmd::Table { inputs, checkpoints } => {
            let checkpoints: Vec<usize> = parse_list(&checkpoints)?;
            let mut rows = Vec::new();
            for path in inputs {
                let file = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
                let label = path.file_stem().map_or("?".into(), |s| s.to_string_lossy().into_owned());
                rows.push(summarize_csv(file, &label, &checkpoints)?);
            }
            print!("{}", format_table(&rows));
        }
        Cmd::Optimize {
            config,
            dim,
            lower,
            upper,
            target_cmd,
        } => {
            let preset = load_preset(&config)?;
            let lower = expand(parse_list(&lower)?, dim, "--lower")?;
            let upper = expand(parse_list(&upper)?, dim, "--upper")?;
            let problem = CommandProblem::new(Bounds::new(lower, upper)?, target_cmd);
            let result = Optimizer::new(problem, preset.params)?.run()?;
            let x: Vec<String> = result.x_best.iter().map(f64::to_string).collect();
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "x_best = {}", x.join(" "))?;
            writeln!(stdout, "y_best = {}", result.y_best)?;
            writeln!(stdout, "evaluations = {}", result.n_evals)?;
        }
    }
    Ok(())
}
