use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use harness::config::RunConfig;
use harness::plot::emit_plots;
use harness::run::{run_eval, run_train, Opponent, TrainOptions};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use teamregret::regret::consistency_check;

#[derive(Parser)]
#[command(name = "teamregret", version, about = "Team regret minimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one method on one environment.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Stop after this many iterations; schedules keep the config's budget.
        #[arg(long)]
        iterations: Option<u64>,
        /// Reproducible mode: one thread, no wall-clock column.
        #[arg(long)]
        single_thread: bool,
        /// Continue from a checkpoint written by the same config.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Progress line every n iterations on stderr (0 = quiet).
        #[arg(long, default_value_t = 0)]
        log_every: u64,
    },
    /// Greedy evaluation of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        episodes: usize,
        /// `self`, `scripted`, or a checkpoint path.
        #[arg(long)]
        opponent: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Learning curves from metrics files.
    Plot {
        #[arg(long, value_enum)]
        column: Column,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        window: usize,
        #[arg(required = true)]
        csv: Vec<PathBuf>,
    },
    /// Self-checks.
    Check {
        #[command(subcommand)]
        what: Check,
    },
}

#[derive(Subcommand)]
enum Check {
    /// Compare decentralized argmaxes to joint enumeration.
    Consistency {
        #[arg(long)]
        agents: usize,
        #[arg(long)]
        actions: usize,
        #[arg(long)]
        trials: usize,
        #[arg(long)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum Column {
    MeanReturn,
    WinRate,
    EvalReturn,
    EvalWinRate,
    LossQ,
    LossV,
}

impl Column {
    fn name(self) -> &'static str {
        match self {
            Column::MeanReturn => "mean_return",
            Column::WinRate => "win_rate",
            Column::EvalReturn => "eval_return",
            Column::EvalWinRate => "eval_win_rate",
            Column::LossQ => "loss_q",
            Column::LossV => "loss_v",
        }
    }
}

enum Outcome {
    Ok,
    Violations,
}

fn run(cli: Cli) -> anyhow::Result<Outcome> {
    match cli.command {
        Command::Train {
            config,
            out,
            seed,
            iterations,
            single_thread,
            resume,
            log_every,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            cfg.seed = seed;
            let opts = TrainOptions {
                stop_at: iterations,
                single_thread,
                resume,
                log_every,
            };
            let report = run_train(&cfg, &out, &opts).with_context(|| format!("training into {}", out.display()))?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Eval {
            checkpoint,
            episodes,
            opponent,
            seed,
        } => {
            let report = run_eval(&checkpoint, episodes, &Opponent::parse(&opponent), seed)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Plot { column, out, window, csv } => {
            emit_plots(&csv, column.name(), window, &out)?;
            println!("wrote {}", out.display());
        }
        Command::Check {
            what: Check::Consistency {
                agents,
                actions,
                trials,
                seed,
            },
        } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = consistency_check(agents, actions, trials, &mut rng)?;
            println!(
                "trials {} agents {agents} actions {actions}: additive violations {}, shaped violations {}",
                r.trials, r.additive_violations, r.shaped_violations
            );
            if r.violations() > 0 {
                return Ok(Outcome::Violations);
            }
        }
    }
    Ok(Outcome::Ok)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Violations) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
