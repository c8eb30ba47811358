use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use household_tom::harness::{cli_eval, cli_generate, cli_infer, cli_verify, HarnessError, RunConfig, ScorerKind};

#[derive(Parser)]
#[command(name = "htom", version, about = "Household theory-of-mind question generator and solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a verified question dataset.
    Generate {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Answer every question of a dataset.
    Infer {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Score predictions against the answer keys.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Re-check every question with the oracle.
    Verify {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ScorerArg {
    Oracle,
    External,
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    scenarios: Option<usize>,
    #[arg(long)]
    per_type: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    horizon: Option<u32>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    max_candidates: Option<usize>,
    #[arg(long, value_enum)]
    scorer: Option<ScorerArg>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(self) -> Result<RunConfig, HarnessError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { cfg.$f = v; })* };
        }
        set!(seed, scenarios, per_type, beta, tau, horizon, margin, max_candidates, workers);
        if let Some(s) = self.scorer {
            cfg.scorer = match s {
                ScorerArg::Oracle => ScorerKind::Oracle,
                ScorerArg::External => ScorerKind::External,
            };
        }
        if self.endpoint.is_some() {
            cfg.endpoint = self.endpoint;
        }
        if let Some(o) = self.out {
            cfg.out_dir = o;
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Generate { run } => {
            let s = cli_generate(&run.resolve()?)?;
            println!("{} scenarios, {} questions -> {}", s.scenarios, s.questions, s.dataset.display());
        }
        Command::Infer { dataset, predictions, run } => {
            let cfg = run.resolve()?;
            let out = predictions.unwrap_or_else(|| cfg.predictions_path());
            let s = cli_infer(&cfg, &dataset, &out)?;
            println!(
                "{} computed, {} reused, {} degraded -> {}",
                s.computed,
                s.reused,
                s.degraded,
                s.predictions.display()
            );
        }
        Command::Eval { dataset, predictions, report } => {
            print!("{}", cli_eval(&dataset, &predictions, report.as_deref())?.table());
        }
        Command::Verify { dataset, run } => {
            let s = cli_verify(&run.resolve()?, &dataset)?;
            for id in &s.failed {
                eprintln!("failed: {id}");
            }
            println!("{} checked, {} failed", s.checked, s.failed.len());
            if !s.failed.is_empty() {
                return Err(HarnessError::VerificationFailed {
                    checked: s.checked,
                    failed: s.failed.len(),
                });
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
