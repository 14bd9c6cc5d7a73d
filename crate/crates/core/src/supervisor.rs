//! Watchdog agent: probes reflectors, restarts the ones that stop answering
//! and escalates to administrators once two consecutive restarts fail.
//!
//! ```text
//!   Up --miss--> Unresponsive(1) --miss..--> Unresponsive(k_miss) => Restarting(1) + restart
//!   Restarting(1) --miss--> Restarting(2) + restart
//!   Restarting(2) --miss--> Failed + one notification
//!   any state except Failed --ok--> Up
//!   Failed --clear_failed--> Unresponsive(0)
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::protocol::{decode_line, Message};
use crate::model::{Millis, ReflectorId};

pub const DEFAULT_K_MISS: u32 = 2;
pub const DEFAULT_PROBE_INTERVAL_MS: Millis = 10_000;
pub const DEFAULT_PROBE_DEADLINE_MS: Millis = 2_000;
/// Restart attempts per episode before giving up.
pub const MAX_RESTART_ATTEMPTS: u32 = 2;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SupervisorError {
    #[error("unknown reflector {0}")]
    UnknownReflector(ReflectorId),
    #[error("reflector {0} is not in the failed state")]
    NotFailed(ReflectorId),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SupervisorConfig {
    pub k_miss: u32,
    pub probe_interval_ms: Millis,
    pub probe_deadline_ms: Millis,
    pub admins: Vec<String>,
}

impl Default for SupervisorConfig {
    fn default() -> Self {
        Self {
            k_miss: DEFAULT_K_MISS,
            probe_interval_ms: DEFAULT_PROBE_INTERVAL_MS,
            probe_deadline_ms: DEFAULT_PROBE_DEADLINE_MS,
            admins: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum HealthState {
    Up,
    Unresponsive { missed: u32 },
    Restarting { attempt: u32 },
    Failed,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthRecord {
    pub reflector: ReflectorId,
    pub state: HealthState,
    pub last_probe_ok: Option<Millis>,
    pub restart_attempts: u32,
    /// Times another component reported the reflector unreachable.
    pub unreachable_reports: u32,
}

impl HealthRecord {
    pub fn new(reflector: ReflectorId) -> Self {
        Self {
            reflector,
            state: HealthState::Up,
            last_probe_ok: None,
            restart_attempts: 0,
            unreachable_reports: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeOutcome {
    Ok,
    NoAnswer,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NotificationEvent {
    pub reflector: ReflectorId,
    pub reason: String,
    pub at: Millis,
    pub recipients: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum SupervisorAction {
    Restart { reflector: ReflectorId, attempt: u32 },
    Notify(NotificationEvent),
}

/// Where "email the administrators" goes.
pub trait NotificationSink {
    fn notify(&mut self, event: &NotificationEvent) -> std::io::Result<()>;
}

#[derive(Clone, Debug, Default)]
pub struct MemorySink {
    pub events: Vec<NotificationEvent>,
}

impl NotificationSink for MemorySink {
    fn notify(&mut self, event: &NotificationEvent) -> std::io::Result<()> {
        self.events.push(event.clone());
        Ok(())
    }
}

/// Writes each notification as one JSON line.
pub struct JsonLinesSink<W: Write> {
    out: W,
}

impl<W: Write> JsonLinesSink<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write> NotificationSink for JsonLinesSink<W> {
    fn notify(&mut self, event: &NotificationEvent) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.out, event)?;
        self.out.write_all(b"\n")?;
        self.out.flush()
    }
}

/// How a reflector is brought back: respawn in simulation, re-exec in daemon mode.
pub trait RestartHook {
    fn restart(&mut self, reflector: ReflectorId, attempt: u32) -> Result<(), String>;
}

/// Transport for supervision probes. Returns the raw reply line and how long
/// it took, or `None` if nothing came back.
pub trait ProbeTransport {
    fn send_probe(&mut self, reflector: ReflectorId, nonce: u64, deadline_ms: Millis) -> Option<(String, Millis)>;
}

/// A reply only counts if it arrived in time, parses, and echoes our
/// reflector id and nonce.
pub fn judge_probe_reply(reflector: ReflectorId, nonce: u64, deadline_ms: Millis, reply: Option<(&str, Millis)>) -> ProbeOutcome {
    let Some((line, elapsed)) = reply else {
        return ProbeOutcome::NoAnswer;
    };
    if elapsed > deadline_ms {
        return ProbeOutcome::NoAnswer;
    }
    match decode_line(line) {
        Ok(Message::ProbeReply {
            reflector: r,
            nonce: n,
            ..
        }) if r == reflector && n == nonce => ProbeOutcome::Ok,
        _ => ProbeOutcome::NoAnswer,
    }
}

#[derive(Debug)]
pub struct Supervisor {
    config: SupervisorConfig,
    records: BTreeMap<ReflectorId, HealthRecord>,
    next_nonce: u64,
}

impl Supervisor {
    pub fn new(config: SupervisorConfig) -> Self {
        Self {
            config,
            records: BTreeMap::new(),
            next_nonce: 1,
        }
    }

    pub fn config(&self) -> &SupervisorConfig {
        &self.config
    }

    /// Starts supervising `reflector` (idempotent).
    pub fn watch(&mut self, reflector: ReflectorId) {
        self.records.entry(reflector).or_insert_with(|| HealthRecord::new(reflector));
    }

    pub fn unwatch(&mut self, reflector: ReflectorId) -> Option<HealthRecord> {
        self.records.remove(&reflector)
    }

    pub fn record(&self, reflector: ReflectorId) -> Option<&HealthRecord> {
        self.records.get(&reflector)
    }

    pub fn records(&self) -> impl Iterator<Item = &HealthRecord> {
        self.records.values()
    }

    /// Reflectors that must be probed this tick (everything except Failed).
    pub fn probe_targets(&self) -> Vec<ReflectorId> {
        self.records
            .values()
            .filter(|r| r.state != HealthState::Failed)
            .map(|r| r.reflector)
            .collect()
    }

    pub fn failed(&self) -> BTreeSet<ReflectorId> {
        self.records
            .values()
            .filter(|r| r.state == HealthState::Failed)
            .map(|r| r.reflector)
            .collect()
    }

    pub fn probe(
        &mut self,
        reflector: ReflectorId,
        transport: &mut dyn ProbeTransport,
    ) -> Result<ProbeOutcome, SupervisorError> {
        if !self.records.contains_key(&reflector) {
            return Err(SupervisorError::UnknownReflector(reflector));
        }
        let nonce = self.next_nonce;
        self.next_nonce += 1;
        let deadline = self.config.probe_deadline_ms;
        let reply = transport.send_probe(reflector, nonce, deadline);
        Ok(judge_probe_reply(
            reflector,
            nonce,
            deadline,
            reply.as_ref().map(|(l, t)| (l.as_str(), *t)),
        ))
    }

    /// Another component (e.g. routing distribution) could not reach `reflector`.
    pub fn note_unreachable(&mut self, reflector: ReflectorId) {
        if let Some(r) = self.records.get_mut(&reflector) {
            r.unreachable_reports += 1;
        }
    }

    /// Folds one round of probe results into the state machine, in id order.
    /// Watched reflectors missing from `probes` count as not answering;
    /// failed reflectors are left alone.
    pub fn supervise_tick(&mut self, now: Millis, probes: &BTreeMap<ReflectorId, ProbeOutcome>) -> Vec<SupervisorAction> {
        let mut actions = Vec::new();
        let k_miss = self.config.k_miss.max(1);
        for rec in self.records.values_mut() {
            if rec.state == HealthState::Failed {
                continue;
            }
            let outcome = probes.get(&rec.reflector).copied().unwrap_or(ProbeOutcome::NoAnswer);
            if outcome == ProbeOutcome::Ok {
                rec.state = HealthState::Up;
                rec.restart_attempts = 0;
                rec.last_probe_ok = Some(now);
                continue;
            }
            let restart = |rec: &mut HealthRecord, actions: &mut Vec<SupervisorAction>| {
                rec.restart_attempts += 1;
                rec.state = HealthState::Restarting {
                    attempt: rec.restart_attempts,
                };
                actions.push(SupervisorAction::Restart {
                    reflector: rec.reflector,
                    attempt: rec.restart_attempts,
                });
            };
            match rec.state {
                HealthState::Up | HealthState::Unresponsive { .. } => {
                    let missed = match rec.state {
                        HealthState::Unresponsive { missed } => missed + 1,
                        _ => 1,
                    };
                    if missed >= k_miss {
                        restart(rec, &mut actions);
                    } else {
                        rec.state = HealthState::Unresponsive { missed };
                    }
                }
                HealthState::Restarting { attempt } if attempt < MAX_RESTART_ATTEMPTS => {
                    restart(rec, &mut actions);
                }
                HealthState::Restarting { .. } => {
                    rec.state = HealthState::Failed;
                    actions.push(SupervisorAction::Notify(NotificationEvent {
                        reflector: rec.reflector,
                        reason: format!(
                            "reflector {} did not come back after {} restart attempts",
                            rec.reflector.0, rec.restart_attempts
                        ),
                        at: now,
                        recipients: self.config.admins.clone(),
                    }));
                }
                HealthState::Failed => unreachable!("skipped above"),
            }
        }
        actions
    }

    /// Probes every target through `transport`, then runs the state machine
    /// and carries out its actions.
    pub fn run_tick(
        &mut self,
        now: Millis,
        transport: &mut dyn ProbeTransport,
        hook: &mut dyn RestartHook,
        sink: &mut dyn NotificationSink,
    ) -> Vec<SupervisorAction> {
        let mut results = BTreeMap::new();
        for id in self.probe_targets() {
            if let Ok(outcome) = self.probe(id, transport) {
                results.insert(id, outcome);
            }
        }
        let actions = self.supervise_tick(now, &results);
        for action in &actions {
            match action {
                // A hook error just means the next probe fails too.
                SupervisorAction::Restart { reflector, attempt } => {
                    let _ = hook.restart(*reflector, *attempt);
                }
                SupervisorAction::Notify(ev) => {
                    let _ = sink.notify(ev);
                }
            }
        }
        actions
    }

    pub fn clear_failed(&mut self, reflector: ReflectorId) -> Result<(), SupervisorError> {
        let rec = self
            .records
            .get_mut(&reflector)
            .ok_or(SupervisorError::UnknownReflector(reflector))?;
        if rec.state != HealthState::Failed {
            return Err(SupervisorError::NotFailed(reflector));
        }
        rec.state = HealthState::Unresponsive { missed: 0 };
        rec.restart_attempts = 0;
        Ok(())
    }
}
