//! Daemon configuration: a flat TOML file, every key optional, unknown keys
//! rejected. Command-line flags override the file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vrvs_core::control::{ControllerConfig, RegistryConfig};
use vrvs_core::monitor::StoreConfig;
use vrvs_core::quality::QualityParams;
use vrvs_core::supervisor::SupervisorConfig;
use vrvs_core::{Millis, ReflectorId};

use crate::error::CliError;

pub const DEFAULT_REGISTRY: &str = "127.0.0.1:7700";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Registry control address; `run-registry` listens here.
    pub registry: String,
    /// Address `run-reflector` listens on. Port 0 picks a free port.
    pub listen: String,
    /// Reflector id; 0 means "not set" and must come from `--id`.
    pub id: u32,
    pub region: String,
    pub alpha: f64,
    pub rtt_ref_ms: f64,
    pub q_min: f64,
    pub delta: f64,
    pub k_miss: u32,
    pub probe_interval_ms: Millis,
    pub probe_deadline_ms: Millis,
    pub heartbeat_interval_ms: Millis,
    pub liveness_timeout_ms: Millis,
    pub publish_interval_ms: Millis,
    pub optimizer_interval_ms: Millis,
    pub monitor_interval_ms: Millis,
    /// Reflector pair whose max flow is reported.
    pub gateways: Option<[u32; 2]>,
    pub series_capacity: usize,
    pub budget_bytes: usize,
    /// Capacity assumed for measured peer links.
    pub link_capacity_kbps: f64,
    pub admins: Vec<String>,
    /// File receiving notification events as JSON lines; stderr if unset.
    pub notify_log: Option<PathBuf>,
    /// Shell command run to restart a reflector; `{id}` is replaced by its id.
    pub restart_command: Option<String>,
}

impl Default for Config {
    fn default() -> Self {
        let q = QualityParams::default();
        let store = StoreConfig::default();
        let sup = SupervisorConfig::default();
        let reg = RegistryConfig::default();
        Self {
            registry: DEFAULT_REGISTRY.into(),
            listen: "127.0.0.1:0".into(),
            id: 0,
            region: "default".into(),
            alpha: q.alpha,
            rtt_ref_ms: q.rtt_ref_ms,
            q_min: q.q_min,
            delta: ControllerConfig::default().delta,
            k_miss: sup.k_miss,
            probe_interval_ms: sup.probe_interval_ms,
            probe_deadline_ms: sup.probe_deadline_ms,
            heartbeat_interval_ms: reg.heartbeat_interval_ms,
            liveness_timeout_ms: reg.liveness_timeout_ms,
            publish_interval_ms: reg.publish_interval_ms,
            optimizer_interval_ms: 10_000,
            monitor_interval_ms: 10_000,
            gateways: None,
            series_capacity: store.series_capacity,
            budget_bytes: store.budget_bytes,
            link_capacity_kbps: 1_000_000.0,
            admins: sup.admins,
            notify_log: None,
            restart_command: None,
        }
    }
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let cfg: Self = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        self.quality().validate().map_err(|e| e.to_string())?;
        if !(self.delta >= 0.0 && self.delta < 1.0) {
            return Err(format!("delta must be in [0, 1), got {}", self.delta));
        }
        let intervals = [
            ("probe_interval_ms", self.probe_interval_ms),
            ("probe_deadline_ms", self.probe_deadline_ms),
            ("heartbeat_interval_ms", self.heartbeat_interval_ms),
            ("publish_interval_ms", self.publish_interval_ms),
            ("optimizer_interval_ms", self.optimizer_interval_ms),
            ("monitor_interval_ms", self.monitor_interval_ms),
        ];
        if let Some((name, _)) = intervals.iter().find(|(_, v)| *v == 0) {
            return Err(format!("{name} must be positive"));
        }
        if self.liveness_timeout_ms < self.heartbeat_interval_ms {
            return Err("liveness_timeout_ms must be at least heartbeat_interval_ms".into());
        }
        if self.k_miss == 0 {
            return Err("k_miss must be positive".into());
        }
        if self.series_capacity == 0 {
            return Err("series_capacity must be positive".into());
        }
        if !(self.link_capacity_kbps > 0.0) {
            return Err("link_capacity_kbps must be positive".into());
        }
        if let Some([a, b]) = self.gateways {
            if a == 0 || b == 0 || a == b {
                return Err("gateways must be two distinct nonzero ids".into());
            }
        }
        Ok(())
    }

    pub fn quality(&self) -> QualityParams {
        QualityParams {
            alpha: self.alpha,
            rtt_ref_ms: self.rtt_ref_ms,
            q_min: self.q_min,
        }
    }

    pub fn registry_config(&self) -> RegistryConfig {
        RegistryConfig {
            heartbeat_interval_ms: self.heartbeat_interval_ms,
            liveness_timeout_ms: self.liveness_timeout_ms,
            publish_interval_ms: self.publish_interval_ms,
        }
    }

    pub fn controller_config(&self) -> ControllerConfig {
        ControllerConfig {
            delta: self.delta,
            q_min: self.q_min,
            gateways: self.gateways.map(|[a, b]| [ReflectorId(a), ReflectorId(b)]),
        }
    }

    pub fn supervisor_config(&self) -> SupervisorConfig {
        SupervisorConfig {
            k_miss: self.k_miss,
            probe_interval_ms: self.probe_interval_ms,
            probe_deadline_ms: self.probe_deadline_ms,
            admins: self.admins.clone(),
        }
    }

    pub fn store_config(&self) -> StoreConfig {
        StoreConfig {
            series_capacity: self.series_capacity,
            budget_bytes: self.budget_bytes,
        }
    }
}
