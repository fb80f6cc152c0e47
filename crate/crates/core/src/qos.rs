//! Per-session DSCP classification.
//!
//! Policy file, one rule per line:
//!
//! ```text
//! <proto|any> <src_cidr|any> <src_ports|any> <dst_cidr|any> <dst_ports|any> dscp <0-63>
//! ```

use std::fmt;

use thiserror::Error;

use crate::matcher::{config_lines, FlowMatch};
use crate::packet::SessionId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QosRule {
    pub flow: FlowMatch,
    pub dscp: u8,
}

impl fmt::Display for QosRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} dscp {}", self.flow, self.dscp)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QosPolicy {
    rules: Vec<QosRule>,
}

impl QosPolicy {
    /// Best effort.
    pub const DEFAULT_DSCP: u8 = 0;

    /// Panics if any rule carries a DSCP above 63.
    pub fn new(rules: Vec<QosRule>) -> Self {
        assert!(rules.iter().all(|r| r.dscp <= 63), "dscp out of range");
        QosPolicy { rules }
    }

    pub fn rules(&self) -> &[QosRule] {
        &self.rules
    }

    /// DSCP of the first rule matching `sid`, or best effort.
    pub fn classify(&self, sid: &SessionId) -> u8 {
        self.rules
            .iter()
            .find(|r| r.flow.matches(sid))
            .map_or(Self::DEFAULT_DSCP, |r| r.dscp)
    }
}

impl fmt::Display for QosPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for rule in &self.rules {
            writeln!(f, "{rule}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("qos line {line}: {reason}")]
pub struct QosParseError {
    pub line: usize,
    pub reason: String,
}

pub fn parse_qos(text: &str) -> Result<QosPolicy, QosParseError> {
    let mut rules = Vec::new();
    for (line, tokens) in config_lines(text) {
        let err = |reason: String| QosParseError { line, reason };
        let n = tokens.len();
        if n != 7 || tokens[5] != "dscp" {
            return Err(err("expected `<match fields> dscp <0-63>`".to_string()));
        }
        let flow = FlowMatch::parse(&tokens[..5]).map_err(err)?;
        let dscp = tokens[6]
            .parse::<u8>()
            .ok()
            .filter(|d| *d <= 63)
            .ok_or_else(|| err(format!("dscp `{}` not in 0..=63", tokens[6])))?;
        rules.push(QosRule { flow, dscp });
    }
    Ok(QosPolicy::new(rules))
}
