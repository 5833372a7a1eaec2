use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::thread;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use log::error;
use wittenlab_core::scenario::{catalog, catalog_text, to_json, EXIT_CONFIG, EXIT_OK};
use wittenlab_core::{Error, RunOptions, Scenario, ScenarioConfig};

/// Heat flow of the Witten Laplacian on model manifolds: entropy
/// functionals and Harnack-type inequality monitors.
#[derive(Debug, Parser)]
#[command(name = "wittenlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run scenarios and write series.csv, report.json and refine/.
    Run {
        /// Scenario files; several run in parallel, each into OUT/<name>.
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Refinement levels, overriding the config.
        #[arg(long)]
        refine: Option<usize>,
        /// Seed for the two-point node sample.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// List models, flows, potentials, functionals and monitors.
    ListCatalog {
        #[arg(long)]
        json: bool,
    },
    /// Print the calibrated tolerance constants of a scenario.
    Calibrate {
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load(path: &Path) -> Result<Scenario, Error> {
    Scenario::new(ScenarioConfig::from_path(path)?)
}

fn run_one(path: &Path, out: &Path, opts: &RunOptions) -> i32 {
    let result = load(path).and_then(|s| {
        let outcome = s.run(opts)?;
        outcome.write(out)?;
        Ok(outcome)
    });
    match result {
        Ok(outcome) => {
            for m in &outcome.report.monitors {
                println!(
                    "{}: {} {} (worst {:.3e}, tolerance {:.3e})",
                    path.display(),
                    m.inequality,
                    m.verdict,
                    m.worst_margin,
                    m.tolerance
                );
            }
            for c in &outcome.report.negative_controls {
                let state = if c.detected {
                    "detected"
                } else {
                    "NOT detected"
                };
                println!("{}: negative control {} {state}", path.display(), c.monitor);
            }
            if let Some(conv) = &outcome.convergence {
                println!("{}: convergence orders {:?}", path.display(), conv.orders);
            }
            outcome.exit_code
        }
        Err(e) => {
            error!("{}: {e}", path.display());
            eprintln!("{}: {e}", path.display());
            EXIT_CONFIG
        }
    }
}

fn execute(cli: Cli) -> i32 {
    match cli.command {
        Command::ListCatalog { json } => {
            if json {
                print!("{}", to_json(&catalog()));
            } else {
                print!("{}", catalog_text());
            }
            EXIT_OK
        }
        Command::Calibrate { config, seed } => {
            match load(&config).and_then(|s| s.calibrate(seed)) {
                Ok(cal) => {
                    print!("{}", to_json(&cal));
                    EXIT_OK
                }
                Err(e) => {
                    eprintln!("{}: {e}", config.display());
                    EXIT_CONFIG
                }
            }
        }
        Command::Run {
            configs,
            out,
            refine,
            seed,
        } => {
            let opts = RunOptions { refine, seed };
            if let [single] = configs.as_slice() {
                return run_one(single, &out, &opts);
            }
            let codes: Vec<i32> = thread::scope(|scope| {
                let handles: Vec<_> = configs
                    .iter()
                    .map(|path| {
                        let stem = path
                            .file_stem()
                            .map(|s| s.to_string_lossy().into_owned())
                            .unwrap_or_default();
                        let dir = out.join(stem);
                        let opts = &opts;
                        scope.spawn(move || run_one(path, &dir, opts))
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().unwrap_or(EXIT_CONFIG))
                    .collect()
            });
            codes.into_iter().max().unwrap_or(EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_CONFIG,
            };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    ExitCode::from(execute(cli) as u8)
}
