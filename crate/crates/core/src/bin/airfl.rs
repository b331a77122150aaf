use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use airfl::cli::{self, Exit, RunOptions, SweepAxis};
use airfl::verify::DEFAULT_WEIGHTS;

#[derive(Parser)]
#[command(name = "airfl", version, about = "Energy-aware analog federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores). Never changes results.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Evaluate on the test set every N rounds.
    #[arg(long)]
    eval_stride: Option<usize>,
    /// Add one pre-decision queue column per worker to metrics.csv.
    #[arg(long)]
    wide_queues: bool,
}

impl Common {
    fn options(&self) -> RunOptions {
        RunOptions {
            seed: self.seed,
            threads: self.threads,
            eval_stride: self.eval_stride,
            wide_queues: self.wide_queues,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Run one experiment per value of a single axis.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// redundancy | budget | policy
        #[arg(long)]
        axis: String,
        /// Comma-separated values, e.g. `1,2,3` or `myopic,dynamic`.
        #[arg(long)]
        values: String,
    },
    /// Check the dynamic policy's utility and energy bounds on randomized
    /// small instances against the exhaustive offline optimum.
    VerifyBounds {
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated V values.
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_WEIGHTS.to_vec())]
        weights: Vec<f64>,
        /// Where to write bound_reports.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn fail(err: airfl::Error) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(Exit::for_error(&err).code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { common } => match cli::cmd_run(&common.config, &common.out, &common.options()) {
            Ok(s) => {
                println!(
                    "final accuracy {}  mean scheduled fraction {:.4}  max total energy {:.3} J  ({:.1}s)",
                    s.final_accuracy.map_or("-".into(), |a| format!("{a:.4}")),
                    s.mean_scheduled_fraction,
                    s.max_total_energy,
                    s.wall_clock_secs
                );
                ExitCode::SUCCESS
            }
            Err(e) => fail(e),
        },
        Command::Sweep { common, axis, values } => {
            let axis = match SweepAxis::parse(&axis, &values) {
                Ok(a) => a,
                Err(msg) => {
                    eprintln!("error: {msg}");
                    return ExitCode::from(Exit::Usage.code() as u8);
                }
            };
            match cli::cmd_sweep(&common.config, &axis, &common.out, &common.options()) {
                Ok(rows) => {
                    print!("{}", cli::format_sweep_table(axis.name(), &rows));
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::VerifyBounds {
            instances,
            seed,
            weights,
            out,
        } => match cli::cmd_verify_bounds(instances, seed, &weights, out.as_deref()) {
            Ok(outcomes) => {
                for o in &outcomes {
                    println!("{}", cli::format_outcome(o));
                }
                let failed = outcomes.iter().filter(|o| !o.passed()).count();
                println!("{} reports, {} violated", outcomes.len(), failed);
                if failed > 0 {
                    let _ = cli::print_failures(&outcomes, std::io::stderr());
                    ExitCode::from(Exit::Failure.code() as u8)
                } else {
                    ExitCode::SUCCESS
                }
            }
            Err(e) => fail(e),
        },
    }
}
