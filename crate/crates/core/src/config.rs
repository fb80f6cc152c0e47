//! Router configuration: everything a pipeline needs besides the packets.

use std::fs;
use std::path::Path;

use ipnet::Ipv4Net;
use thiserror::Error;

use crate::filter::{parse_rules, RuleParseError, RuleSet};
use crate::nat::{parse_nat_config, NatConfig, NatConfigError};
use crate::qos::{parse_qos, QosParseError, QosPolicy};
use crate::routing::{parse_routes, RouteParseError, RoutingTable};
use crate::session::{Timeouts, DEFAULT_CAPACITY};

pub const DEFAULT_RULES: &str = "accept any any any any any\n";
pub const DEFAULT_ROUTES: &str = "0.0.0.0/0 203.0.113.1 wan\n10.0.0.0/8 10.0.0.254 lan\n";
pub const DEFAULT_NAT: &str = "public 192.0.2.1\nports 40000-49999\n";
pub const DEFAULT_QOS: &str = "\
udp any any any 5060-5061 dscp 46
tcp any any any 443 dscp 26
tcp any any any 22 dscp 16
any any any any any dscp 0
";
pub const DEFAULT_LAN: &str = "10.0.0.0/8";

#[derive(Debug, Clone)]
pub struct RouterConfig {
    /// The protected network. Packets sourced here are outbound.
    pub lan_prefix: Ipv4Net,
    pub rules: RuleSet,
    pub routes: RoutingTable,
    pub nat: NatConfig,
    pub qos: QosPolicy,
    pub timeouts: Timeouts,
    /// Maximum number of tracked sessions.
    pub capacity: usize,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Rules(#[from] RuleParseError),
    #[error(transparent)]
    Routes(#[from] RouteParseError),
    #[error(transparent)]
    Nat(#[from] NatConfigError),
    #[error(transparent)]
    Qos(#[from] QosParseError),
    #[error("{0}")]
    Invalid(String),
}

impl Default for RouterConfig {
    /// Accept everything, default route to the WAN, a 10k-port NAT pool and a
    /// small QoS policy.
    fn default() -> Self {
        RouterConfig {
            lan_prefix: DEFAULT_LAN.parse().unwrap(),
            rules: parse_rules(DEFAULT_RULES).unwrap(),
            routes: parse_routes(DEFAULT_ROUTES).unwrap(),
            nat: parse_nat_config(DEFAULT_NAT).unwrap(),
            qos: parse_qos(DEFAULT_QOS).unwrap(),
            timeouts: Timeouts::default(),
            capacity: DEFAULT_CAPACITY,
        }
    }
}

fn read(path: &Path) -> Result<String, ConfigError> {
    fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Config file locations; `None` keeps the built-in default.
#[derive(Debug, Clone, Default)]
pub struct ConfigPaths<'a> {
    pub rules: Option<&'a Path>,
    pub routes: Option<&'a Path>,
    pub nat: Option<&'a Path>,
    pub qos: Option<&'a Path>,
}

impl RouterConfig {
    pub fn load(paths: &ConfigPaths<'_>, lan_prefix: Option<&str>) -> Result<Self, ConfigError> {
        let mut cfg = RouterConfig::default();
        if let Some(p) = paths.rules {
            cfg.rules = parse_rules(&read(p)?)?;
        }
        if let Some(p) = paths.routes {
            cfg.routes = parse_routes(&read(p)?)?;
        }
        if let Some(p) = paths.nat {
            cfg.nat = parse_nat_config(&read(p)?)?;
        }
        if let Some(p) = paths.qos {
            cfg.qos = parse_qos(&read(p)?)?;
        }
        if let Some(lan) = lan_prefix {
            cfg.lan_prefix = lan
                .parse()
                .map_err(|_| ConfigError::Invalid(format!("bad LAN prefix `{lan}`")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.lan_prefix.contains(&self.nat.public_addr) {
            return Err(ConfigError::Invalid(format!(
                "public address {} lies inside the LAN {}",
                self.nat.public_addr, self.lan_prefix
            )));
        }
        if self.capacity == 0 {
            return Err(ConfigError::Invalid(
                "session capacity must be positive".into(),
            ));
        }
        let t = &self.timeouts;
        if [t.tcp_established, t.tcp_transitory, t.other, t.rst_grace]
            .iter()
            .any(|s| !(s.is_finite() && *s > 0.0))
        {
            return Err(ConfigError::Invalid("timeouts must be positive".into()));
        }
        Ok(())
    }
}
