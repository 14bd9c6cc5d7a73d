//! `vrvs`: run overlay daemons, simulate scenarios, inspect a live overlay.

mod commands;
mod config;
mod error;
mod reflector_daemon;
mod registry_daemon;
mod wire;

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};

use crate::commands::{SimArgs, TailArgs, TopoFormat, TopoSource};
use crate::config::Config;
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "vrvs", version, about = "Reflector overlay for multi-party video conferencing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the registry, routing controller, supervisor and metrics hub.
    RunRegistry {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Address to listen on; overrides `registry` in the config file.
        #[arg(long)]
        listen: Option<String>,
    },
    /// Run one reflector and register it with the registry.
    RunReflector {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        id: Option<u32>,
        #[arg(long)]
        registry: Option<String>,
        #[arg(long)]
        listen: Option<String>,
    },
    /// Deterministic simulation.
    Sim {
        #[command(subcommand)]
        command: SimCommand,
    },
    /// Topology inspection.
    Topo {
        #[command(subcommand)]
        command: TopoCommand,
    },
    /// Live metrics.
    Metrics {
        #[command(subcommand)]
        command: MetricsCommand,
    },
}

#[derive(Subcommand)]
enum SimCommand {
    /// Run a scenario file and print its summary.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the event trace as JSON lines.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write the final topology snapshot as JSON.
        #[arg(long)]
        snapshot: Option<PathBuf>,
        /// Print the summary as JSON.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Dot,
    Json,
}

#[derive(Subcommand)]
enum TopoCommand {
    /// Print the current topology from a registry or a snapshot file.
    Export {
        #[arg(long, value_enum, default_value = "dot")]
        format: Format,
        #[arg(long, conflicts_with = "snapshot")]
        registry: Option<String>,
        #[arg(long)]
        snapshot: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum MetricsCommand {
    /// Stream matching samples from the registry until interrupted.
    Tail {
        /// Glob over metric names.
        #[arg(long, default_value = "*")]
        filter: String,
        /// Only samples from these reflectors (repeatable).
        #[arg(long = "reflector")]
        reflectors: Vec<u32>,
        /// Stop after this many samples.
        #[arg(long)]
        count: Option<u64>,
        #[arg(long)]
        registry: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn shutdown_flag() -> Result<Arc<AtomicBool>, CliError> {
    let flag = Arc::new(AtomicBool::new(false));
    for sig in [signal_hook::consts::SIGTERM, signal_hook::consts::SIGINT] {
        signal_hook::flag::register(sig, Arc::clone(&flag))?;
    }
    Ok(flag)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::RunRegistry { config, listen } => {
            let mut cfg = Config::load(config.as_deref())?;
            if let Some(listen) = listen {
                cfg.registry = listen;
            }
            registry_daemon::run(cfg, shutdown_flag()?)
        }
        Command::RunReflector {
            config,
            id,
            registry,
            listen,
        } => {
            let mut cfg = Config::load(config.as_deref())?;
            if let Some(id) = id {
                cfg.id = id;
            }
            if let Some(registry) = registry {
                cfg.registry = registry;
            }
            if let Some(listen) = listen {
                cfg.listen = listen;
            }
            reflector_daemon::run(cfg, shutdown_flag()?)
        }
        Command::Sim {
            command:
                SimCommand::Run {
                    scenario,
                    seed,
                    trace,
                    snapshot,
                    json,
                },
        } => commands::sim_run(&SimArgs {
            scenario: &scenario,
            seed,
            trace: trace.as_deref(),
            snapshot: snapshot.as_deref(),
            json,
        }),
        Command::Topo {
            command:
                TopoCommand::Export {
                    format,
                    registry,
                    snapshot,
                    config,
                },
        } => {
            let cfg = Config::load(config.as_deref())?;
            let source = match (&snapshot, &registry) {
                (Some(path), _) => TopoSource::File(path),
                (None, Some(addr)) => TopoSource::Registry(addr),
                (None, None) => TopoSource::Registry(&cfg.registry),
            };
            let format = match format {
                Format::Dot => TopoFormat::Dot,
                Format::Json => TopoFormat::Json,
            };
            commands::topo_export(source, format, cfg.q_min)
        }
        Command::Metrics {
            command:
                MetricsCommand::Tail {
                    filter,
                    reflectors,
                    count,
                    registry,
                    config,
                },
        } => {
            let cfg = Config::load(config.as_deref())?;
            commands::metrics_tail(&TailArgs {
                registry: registry.as_deref().unwrap_or(&cfg.registry),
                filter: &filter,
                reflectors,
                count,
            })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("vrvs: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
