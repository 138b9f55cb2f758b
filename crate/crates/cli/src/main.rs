use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use entac::exact::{optimal_reg_values, DEFAULT_SOFT_VI_TOL};
use entac::harness::{load_config, run_sweep, summarize, write_train_outputs, ConfigDoc};
use entac::par::with_threads;
use entac::trainer::run_ent_ac;
use entac::verify::{run_suite, Suite};
use entac::{EntacError, Execution};

#[derive(Parser)]
#[command(name = "entac", version, about = "Tabular entropy-regularized actor-critic laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// JSON config document. `ENTAC_<KEY>` variables override top-level keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the seed (train) or base seed (sweep).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for data-parallel work.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Gradients,
    Variance,
    Contraction,
    Projection,
    Aux,
    All,
}

impl From<SuiteArg> for Suite {
    fn from(s: SuiteArg) -> Self {
        match s {
            SuiteArg::Gradients => Suite::Gradients,
            SuiteArg::Variance => Suite::Variance,
            SuiteArg::Contraction => Suite::Contraction,
            SuiteArg::Projection => Suite::Projection,
            SuiteArg::Aux => Suite::Aux,
            SuiteArg::All => Suite::All,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Solve the regularized problem exactly and print the optimum.
    Solve(Common),
    /// Run one training job.
    Train(Common),
    /// Run a grid-searched, multi-seed sweep.
    Sweep(Common),
    /// Run numerical checks, one JSON line per result.
    Check {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "all")]
        suite: SuiteArg,
    },
    /// Recompute a summary from a sweep directory.
    Summarize(Common),
}

enum Failure {
    Usage(String),
    Run(EntacError),
}

impl From<EntacError> for Failure {
    fn from(e: EntacError) -> Self {
        match e {
            EntacError::Config { .. } => Failure::Usage(e.to_string()),
            other => Failure::Run(other),
        }
    }
}

fn env_vars() -> Vec<(String, String)> {
    std::env::vars().collect()
}

fn require_config(common: &Common) -> Result<ConfigDoc, Failure> {
    let path = common.config.as_deref().ok_or_else(|| Failure::Usage("--config is required".into()))?;
    Ok(load_config(path, env_vars())?)
}

fn require_out(common: &Common, fallback: Option<&Path>) -> Result<PathBuf, Failure> {
    common
        .out
        .clone()
        .or_else(|| fallback.map(Path::to_path_buf))
        .ok_or_else(|| Failure::Usage("--out is required".into()))
}

fn print_json(v: &serde_json::Value) -> Result<(), Failure> {
    println!("{}", serde_json::to_string(v).map_err(|e| Failure::Run(e.into()))?);
    Ok(())
}

/// Returns whether every check passed.
fn run(cli: Cli) -> Result<bool, Failure> {
    match cli.command {
        Command::Solve(common) => {
            let (mdp, lambda) = match require_config(&common)? {
                ConfigDoc::Train(t) => (t.build_mdp()?, t.config.lambda),
                ConfigDoc::Sweep(s) => (s.env.build(s.gamma)?, s.lambda),
            };
            mdp.ensure_valid()?;
            let opt = optimal_reg_values(&mdp, lambda, DEFAULT_SOFT_VI_TOL)?;
            let pi: Vec<Vec<f64>> = (0..mdp.n_states()).map(|s| opt.pi_star.row(s)).collect();
            print_json(&json!({
                "J_star": opt.j_star,
                "v_star": opt.v_star.as_slice(),
                "pi_star": pi,
                "iterations": opt.iterations,
                "residual": opt.residual,
            }))?;
            Ok(true)
        }
        Command::Train(common) => {
            let ConfigDoc::Train(mut doc) = require_config(&common)? else {
                return Err(Failure::Usage("train needs a single-run config (no H_list)".into()));
            };
            if let Some(seed) = common.seed {
                doc.config.seed = seed;
            }
            let mdp = doc.build_mdp()?;
            let trace = run_ent_ac(&mdp, &doc.config)?;
            if let Some(out) = &common.out {
                write_train_outputs(&trace, out)?;
            }
            print_json(&trace.summary_json())?;
            Ok(true)
        }
        Command::Sweep(common) => {
            let ConfigDoc::Sweep(mut spec) = require_config(&common)? else {
                return Err(Failure::Usage("sweep needs a config with H_list".into()));
            };
            if let Some(seed) = common.seed {
                spec.base_seed = seed;
            }
            let out = require_out(&common, spec.out_dir.as_deref())?;
            let summary = with_threads(common.threads, || run_sweep(&spec, &out, Execution::default()))?;
            print_json(&serde_json::to_value(&summary).map_err(|e| Failure::Run(e.into()))?)?;
            Ok(summary.failures.is_empty())
        }
        Command::Check { common, suite } => {
            let seed = common.seed.unwrap_or(0);
            let results = with_threads(common.threads, || run_suite(suite.into(), seed, Execution::default()))?;
            for r in &results {
                print_json(&serde_json::to_value(r).map_err(|e| Failure::Run(e.into()))?)?;
            }
            Ok(results.iter().all(|r| r.passed))
        }
        Command::Summarize(common) => {
            let out = require_out(&common, None)?;
            print_json(&summarize(&out)?)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
