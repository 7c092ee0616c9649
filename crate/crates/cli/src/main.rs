use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use eestab_cli::commands::{self, CommandError};
use eestab_cli::config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "eestab", version, about = "End-effector stabilization experiments on fixed-base arms")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `experiment.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `experiment.out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run every numerical oracle suite; exit 1 if any fails.
    Verify,
    /// Disturbance profile tools.
    Profile {
        #[command(subcommand)]
        action: ProfileAction,
    },
    /// One rollout, written as a CSV log.
    Simulate,
    /// Paired benchmark of the configured methods.
    Bench,
    /// PPO training of the residual policy.
    Train,
    /// Render EE acceleration of a rollout CSV to SVG.
    Plot {
        /// Rollout CSV written by `simulate`.
        input: PathBuf,
    },
}

#[derive(Subcommand)]
enum ProfileAction {
    /// Sample profiles from the seed and write them to `profiles.txt`.
    Gen,
}

fn load_config(common: &Common) -> Result<ExperimentConfig, CommandError> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p).map_err(|e| CommandError::Config(e.to_string()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out = o.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<ExitCode, CommandError> {
    let cfg = load_config(&cli.common)?;
    match cli.command {
        Command::Verify => {
            let results = commands::verify(&cfg);
            for r in &results {
                println!("{r}");
            }
            let failed = results.iter().filter(|r| !r.passed).count();
            if failed > 0 {
                eprintln!("error[check]: {failed} of {} suites failed", results.len());
                return Ok(ExitCode::from(1));
            }
        }
        Command::Profile {
            action: ProfileAction::Gen,
        } => println!("wrote {}", commands::profile_gen(&cfg)?.display()),
        Command::Simulate => {
            let (path, log) = commands::simulate(&cfg)?;
            println!("wrote {} ({} records)", path.display(), log.records.len());
        }
        Command::Bench => {
            let (paths, report) = commands::bench(&cfg)?;
            print!("{}", report.to_markdown());
            for p in paths {
                println!("wrote {}", p.display());
            }
        }
        Command::Train => {
            let mut progress = |r: &eestab_rl::train::CurveRow| {
                if r.iteration % 10 == 0 {
                    eprintln!(
                        "iteration {:>4}  reward {:8.3}  ee lin acc {:8.3}  torque guide {:8.3}",
                        r.iteration, r.mean_reward, r.mean_ee_lin_acc, r.torque_guide
                    );
                }
            };
            let (paths, _) = commands::train_policy(&cfg, Some(&mut progress))?;
            for p in paths {
                println!("wrote {}", p.display());
            }
        }
        Command::Plot { input } => println!("wrote {}", commands::plot(&cfg, &input)?.display()),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            if !e.use_stderr() {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("bad usage");
            eprintln!("error[usage]: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error[{}]: {}", e.kind(), e.to_string().replace('\n', " "));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
