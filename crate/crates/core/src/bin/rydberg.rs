use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rydberg_core::experiments::{self, checks, ExperimentConfig};
use rydberg_core::noise::WORKERS_ENV;
use rydberg_core::pulse::Preset;
use rydberg_core::Error;

#[derive(Parser)]
#[command(name = "rydberg", version, about = "Rydberg qubit experiment simulator")]
struct Cli {
    /// Worker threads for the shot loop (overrides the environment).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config file.
    Run {
        config: PathBuf,
        /// Write results here instead of the configured output directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// List the available presets.
    List {
        #[arg(long)]
        json: bool,
    },
    /// Print the fully resolved default config for a preset.
    Init { preset: String },
    /// Run the acceptance checks (all of them unless ids are given).
    Check { ids: Vec<usize> },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        std::env::set_var(WORKERS_ENV, n.to_string());
    }
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cmd: Command) -> Result<u8, Error> {
    match cmd {
        Command::Run { config, output } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(dir) = output {
                cfg.output = dir;
            }
            let manifest = experiments::run(&cfg)?;
            println!(
                "{}: {} points x {} shots in {:.2} s -> {}",
                manifest.config.preset,
                manifest.n_scan_points,
                manifest.n_shots,
                manifest.wall_clock_s,
                manifest.data_file.display()
            );
            for d in &manifest.derived {
                let verdict = match d.pass {
                    Some(true) => "PASS",
                    Some(false) => "FAIL",
                    None => "    ",
                };
                print!("  {verdict} {:<22} {:>12.6} {:<4} {}", d.name, d.value, d.unit, d.rule);
                if let Some(n) = &d.note {
                    print!(" [{n}]");
                }
                println!();
            }
            for w in &manifest.warnings {
                println!("  warning: {w}");
            }
            Ok(0)
        }
        Command::List { json } => {
            let all = experiments::list_presets();
            if json {
                println!("{}", serde_json::to_string_pretty(&all).map_err(|e| Error::Config(e.to_string()))?);
            } else {
                for p in all {
                    println!("{:<16} {:<10} {} atom(s)  {}", p.name, p.figure, p.n_atoms, p.description);
                    println!(
                        "{:<16} scan {} over {}..{} us, {} points; {} shots; {}",
                        "",
                        p.scan_variable,
                        p.default_scan.start,
                        p.default_scan.stop,
                        p.default_scan.points,
                        p.default_shots,
                        p.analysis
                    );
                }
            }
            Ok(0)
        }
        Command::Init { preset } => {
            let p: Preset = preset.parse()?;
            print!("{}", ExperimentConfig::for_preset(p).to_toml()?);
            Ok(0)
        }
        Command::Check { ids } => {
            let ids: Vec<usize> = if ids.is_empty() {
                checks::CHECKS.iter().map(|c| c.0).collect()
            } else {
                ids
            };
            let mut failed = 0;
            for id in ids {
                let Some(out) = checks::run_check(id) else {
                    return Err(Error::InvalidParameter(format!("no check numbered {id}")));
                };
                println!("{out}");
                failed += usize::from(!out.passed);
            }
            println!("{failed} check(s) failed");
            Ok(u8::from(failed > 0))
        }
    }
}
