use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hamdpo::harness::{
    exit_code_for, run_ablate, run_train, run_verify, EXIT_FAILURE, EXIT_OK, EXIT_USAGE,
};
use hamdpo::tabular::verify::VerifyOptions;
use hamdpo::trainer::IterationMetrics;

#[derive(Parser)]
#[command(name = "hamdpo", version, about = "Sequential multi-agent mirror descent policy optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Suppress per-iteration progress on stderr.
    #[arg(long, short, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train with the given experiment config.
    Train { config: PathBuf },
    /// Run the exact tabular identity suite.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        games: usize,
        /// Agent counts cycled across games.
        #[arg(long, value_delimiter = ',', default_value = "2,3")]
        agents: Vec<usize>,
        /// Drop one term of the decomposition sum; the report must fail.
        #[arg(long)]
        corrupt: bool,
        #[arg(long, default_value = "verification_report.json")]
        out: PathBuf,
    },
    /// Run one experiment per number of policy SGD steps.
    Ablate {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        sgd_steps: Vec<usize>,
    },
}

fn progress(quiet: bool, prefix: &str, m: &IterationMetrics) {
    if !quiet {
        eprintln!(
            "{prefix}iter {:>4}  steps {:>8}  return {:>10.4}  critic {:.4e}",
            m.iteration, m.env_steps, m.mean_return, m.critic_loss
        );
    }
}

fn fail(err: hamdpo::Error) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(exit_code_for(&err) as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK } as u8);
        }
    };
    let quiet = cli.quiet;
    match cli.command {
        Command::Train { config } => match run_train(&config, |m| progress(quiet, "", m)) {
            Ok(summary) => {
                if let Some(a) = &summary.aborted {
                    eprintln!("aborted at iteration {}: {}", a.iteration, a.error);
                } else if let Some(r) = summary.final_mean_return {
                    eprintln!("final mean return {r:.4}");
                }
                ExitCode::from(summary.exit_code() as u8)
            }
            Err(e) => fail(e),
        },
        Command::Verify {
            seed,
            games,
            agents,
            corrupt,
            out,
        } => {
            let opts = VerifyOptions {
                seed,
                games,
                agent_counts: agents,
                corrupt_decomposition: corrupt,
                ..VerifyOptions::default()
            };
            match run_verify(&opts, &out) {
                Ok(report) => {
                    for r in &report.identities {
                        println!(
                            "{:<26} max_error {:.3e}  {}",
                            r.name,
                            r.max_error,
                            if r.pass { "PASS" } else { "FAIL" }
                        );
                    }
                    ExitCode::from(if report.all_pass() { EXIT_OK } else { EXIT_FAILURE } as u8)
                }
                Err(e) => fail(e),
            }
        }
        Command::Ablate { config, sgd_steps } => {
            let result = run_ablate(&config, &sgd_steps, |g, m| {
                progress(quiet, &format!("g={g} "), m)
            });
            match result {
                Ok(runs) => {
                    let mut code = EXIT_OK;
                    for (g, s) in &runs {
                        match (&s.aborted, s.final_mean_return) {
                            (Some(a), _) => println!("g={g}: aborted at {}: {}", a.iteration, a.error),
                            (None, Some(r)) => println!("g={g}: final mean return {r:.4}"),
                            (None, None) => println!("g={g}: no iterations"),
                        }
                        code = code.max(s.exit_code());
                    }
                    ExitCode::from(code as u8)
                }
                Err(e) => fail(e),
            }
        }
    }
}
