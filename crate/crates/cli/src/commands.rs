//! One-shot subcommands: `sim run`, `topo export`, `metrics tail`.

use std::collections::BTreeSet;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};
use vrvs_core::control::protocol::Message;
use vrvs_core::control::TopologySnapshot;
use vrvs_core::export;
use vrvs_core::monitor::{compile_pattern, MetricSample};
use vrvs_core::sim::scenario::load_scenario;
use vrvs_core::sim::{SimError, Simulator};
use vrvs_core::ReflectorId;

use crate::error::CliError;
use crate::wire::{LineConn, CONNECT_TIMEOUT};

pub struct SimArgs<'a> {
    pub scenario: &'a Path,
    pub seed: Option<u64>,
    pub trace: Option<&'a Path>,
    pub snapshot: Option<&'a Path>,
    pub json: bool,
}

pub fn sim_run(args: &SimArgs<'_>) -> Result<(), CliError> {
    let text = fs::read_to_string(args.scenario)
        .map_err(|e| CliError::Input(format!("{}: {e}", args.scenario.display())))?;
    let mut scenario = load_scenario(&text).map_err(|e| CliError::Input(format!("{}: {e}", args.scenario.display())))?;
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    let mut sim = Simulator::new(scenario).map_err(|e| match e {
        SimError::Schema(e) => CliError::Input(format!("{}: {e}", args.scenario.display())),
        other => CliError::Invariant(other.to_string()),
    })?;
    let (trace, summary) = sim.run().map_err(|e| CliError::Invariant(e.to_string()))?;

    if let Some(path) = args.trace {
        let mut out = BufWriter::new(fs::File::create(path)?);
        for rec in &trace {
            out.write_all(rec.to_line().as_bytes())?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
    }
    if let Some(path) = args.snapshot {
        fs::write(path, export::to_json(&sim.registry().snapshot()))?;
    }

    if args.json {
        println!("{}", serde_json::to_string_pretty(&summary).expect("summaries serialize"));
    } else {
        let d = &summary.delivery;
        println!("scenario {} seed {}", summary.name, summary.seed);
        println!("  simulated      {} ms", summary.final_time_ms);
        println!("  injected       {}", summary.injected);
        println!("  delivered      {} of {} expected", d.delivered, d.expected);
        println!("  missed         {}", d.missed);
        println!("  duplicates     {}", d.duplicates);
        println!("  unexpected     {}", d.unexpected);
        println!("  loops          {}", d.loops);
        println!(
            "  link hops      sent {} arrived {} lost {} down {}",
            summary.links.sent, summary.links.arrived, summary.links.dropped_loss, summary.links.dropped_down
        );
        println!("  routing        {} installs, epoch {}", summary.routing_installs, summary.routing_epoch);
        println!(
            "  supervision    {} restarts, {} failed, {} notifications",
            summary.restarts, summary.failed_restarts, summary.notifications
        );
        println!("  trace          {} lines, sha256 {}", summary.trace_lines, summary.trace_hash);
        if summary.ok() {
            println!("  result         ok");
        } else {
            for v in &summary.violations {
                println!("  VIOLATION      {v}");
            }
        }
    }
    if summary.ok() {
        Ok(())
    } else {
        Err(CliError::Invariant(format!("{} violation(s)", summary.violations.len())))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TopoFormat {
    Dot,
    Json,
}

pub enum TopoSource<'a> {
    Registry(&'a str),
    File(&'a Path),
}

pub fn fetch_snapshot(registry: &str) -> Result<TopologySnapshot, CliError> {
    let mut conn = LineConn::connect(registry, CONNECT_TIMEOUT).map_err(|e| CliError::Unreachable(format!("{registry}: {e}")))?;
    match conn
        .request(&Message::Snapshot {
            epoch: 0,
            snapshot: None,
        })
        .map_err(|e| CliError::Unreachable(format!("{registry}: {e}")))?
    {
        Message::Snapshot {
            snapshot: Some(snap), ..
        } => Ok(snap),
        other => Err(CliError::Unreachable(format!("{registry}: unexpected reply {other:?}"))),
    }
}

pub fn topo_export(source: TopoSource<'_>, format: TopoFormat, q_min: f64) -> Result<(), CliError> {
    let snap = match source {
        TopoSource::Registry(addr) => fetch_snapshot(addr)?,
        TopoSource::File(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
        }
    };
    let out = match format {
        TopoFormat::Dot => export::to_dot(&snap, q_min),
        TopoFormat::Json => export::to_json(&snap),
    };
    let mut stdout = io::stdout().lock();
    stdout.write_all(out.as_bytes())?;
    stdout.flush()?;
    Ok(())
}

pub struct TailArgs<'a> {
    pub registry: &'a str,
    pub filter: &'a str,
    pub reflectors: Vec<u32>,
    pub count: Option<u64>,
}

pub fn format_sample(s: &MetricSample) -> String {
    let at = DateTime::<Utc>::from_timestamp_millis(s.at as i64)
        .map(|t| t.to_rfc3339_opts(SecondsFormat::Millis, true))
        .unwrap_or_else(|| s.at.to_string());
    format!("{at} {} {} {}", s.reflector, s.name, s.value)
}

pub fn metrics_tail(args: &TailArgs<'_>) -> Result<(), CliError> {
    compile_pattern(args.filter).map_err(|e| CliError::Input(e.to_string()))?;
    let registry = args.registry;
    let unreachable = |e: io::Error| CliError::Unreachable(format!("{registry}: {e}"));
    let mut conn = LineConn::connect(registry, CONNECT_TIMEOUT).map_err(unreachable)?;
    let reflectors = (!args.reflectors.is_empty())
        .then(|| args.reflectors.iter().map(|&r| ReflectorId(r)).collect::<BTreeSet<_>>());
    let reply = conn
        .request(&Message::Subscribe {
            filter: args.filter.to_owned(),
            reflectors,
            min_interval_ms: 0,
            topology: false,
        })
        .map_err(unreachable)?;
    match reply {
        Message::Ack { .. } => {}
        Message::Error { code, message } if code == "bad_pattern" => return Err(CliError::Input(message)),
        other => return Err(CliError::Unreachable(format!("{registry}: unexpected reply {other:?}"))),
    }
    // samples may be far apart; only a closed connection ends the stream
    conn.set_read_timeout(None)?;
    let mut seen = 0u64;
    let mut stdout = io::stdout().lock();
    while args.count.is_none_or(|c| seen < c) {
        match conn.recv().map_err(unreachable)? {
            Some(Message::Event { sample }) => {
                writeln!(stdout, "{}", format_sample(&sample))?;
                stdout.flush()?;
                seen += 1;
            }
            Some(_) => {}
            None => break,
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_lines() {
        let s = MetricSample::new(ReflectorId(3), "vrvs.q.R3-R4", 0.5, 1_700_000_000_123);
        assert_eq!(format_sample(&s), "2023-11-14T22:13:20.123Z R3 vrvs.q.R3-R4 0.5");
    }
}
