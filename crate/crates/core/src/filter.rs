//! Stateless first-match packet filter, consulted once per new session.
//!
//! Rules file, one rule per line:
//!
//! ```text
//! <accept|drop> <proto|any> <src_cidr|any> <src_ports|any> <dst_cidr|any> <dst_ports|any>
//! ```

use std::fmt;

use thiserror::Error;

use crate::matcher::{config_lines, FlowMatch};
use crate::packet::SessionId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Accept,
    Drop,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Action::Accept => "accept",
            Action::Drop => "drop",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FilterRule {
    pub action: Action,
    pub flow: FlowMatch,
}

impl fmt::Display for FilterRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.action, self.flow)
    }
}

/// Result of evaluating a rule set against one session.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RuleMatch {
    pub action: Action,
    /// Index of the first matching rule, `None` when the default applied.
    pub rule: Option<usize>,
    /// Rules examined before the decision.
    pub scanned: usize,
}

/// Ordered rule list with a default-deny fallback.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RuleSet {
    rules: Vec<FilterRule>,
}

impl RuleSet {
    pub const DEFAULT_ACTION: Action = Action::Drop;

    pub fn new(rules: Vec<FilterRule>) -> Self {
        RuleSet { rules }
    }

    /// A single rule accepting everything.
    pub fn accept_all() -> Self {
        RuleSet::new(vec![FilterRule {
            action: Action::Accept,
            flow: FlowMatch::ANY,
        }])
    }

    pub fn rules(&self) -> &[FilterRule] {
        &self.rules
    }

    pub fn evaluate(&self, sid: &SessionId) -> RuleMatch {
        for (i, rule) in self.rules.iter().enumerate() {
            if rule.flow.matches(sid) {
                return RuleMatch {
                    action: rule.action,
                    rule: Some(i),
                    scanned: i + 1,
                };
            }
        }
        RuleMatch {
            action: Self::DEFAULT_ACTION,
            rule: None,
            scanned: self.rules.len(),
        }
    }
}

impl fmt::Display for RuleSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for rule in &self.rules {
            writeln!(f, "{rule}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("rules line {line}: {reason}")]
pub struct RuleParseError {
    pub line: usize,
    pub reason: String,
}

pub fn parse_rules(text: &str) -> Result<RuleSet, RuleParseError> {
    let mut rules = Vec::new();
    for (line, tokens) in config_lines(text) {
        let err = |reason: String| RuleParseError { line, reason };
        let action = match tokens[0] {
            "accept" => Action::Accept,
            "drop" => Action::Drop,
            other => return Err(err(format!("unknown action `{other}`"))),
        };
        let flow = FlowMatch::parse(&tokens[1..]).map_err(err)?;
        rules.push(FilterRule { action, flow });
    }
    Ok(RuleSet::new(rules))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::packet::{PROTO_TCP, PROTO_UDP};

    fn sid(proto: u8, dst_port: u16) -> SessionId {
        SessionId::new(
            "10.0.0.5".parse().unwrap(),
            40000,
            "198.51.100.9".parse().unwrap(),
            dst_port,
            proto,
        )
    }

    #[test]
    fn parses_examples() {
        let rs =
            parse_rules("drop tcp any any any 23\naccept any 10.0.0.0/8 any any any\n").unwrap();
        assert_eq!(rs.rules().len(), 2);
        assert_eq!(rs.rules()[0].action, Action::Drop);
        assert_eq!(rs.rules()[0].to_string(), "drop tcp any any any 23");
        assert_eq!(
            rs.rules()[1].to_string(),
            "accept any 10.0.0.0/8 any any any"
        );
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = parse_rules("# header\naccept any any any any any\npermit tcp any any any 23\n")
            .unwrap_err();
        assert_eq!(err.line, 3);
        assert!(err.reason.contains("permit"));
        assert_eq!(
            parse_rules("drop tcp 1.2.3.4/40 any any any")
                .unwrap_err()
                .line,
            1
        );
        assert_eq!(
            parse_rules("\n\ndrop tcp any 5-1 any any")
                .unwrap_err()
                .line,
            3
        );
    }

    #[test]
    fn first_match_wins() {
        let rs = parse_rules("drop tcp any any any 23\naccept any any any any any").unwrap();
        let m = rs.evaluate(&sid(PROTO_TCP, 23));
        assert_eq!((m.action, m.rule, m.scanned), (Action::Drop, Some(0), 1));
        let m = rs.evaluate(&sid(PROTO_UDP, 23));
        assert_eq!((m.action, m.rule, m.scanned), (Action::Accept, Some(1), 2));
    }

    #[test]
    fn empty_ruleset_denies() {
        let m = RuleSet::default().evaluate(&sid(PROTO_TCP, 80));
        assert_eq!((m.action, m.rule, m.scanned), (Action::Drop, None, 0));
    }

    #[test]
    fn swapping_overlapping_rules_flips_the_verdict() {
        let a = parse_rules("drop tcp any any any 20-30\naccept tcp any any any 23").unwrap();
        let b = parse_rules("accept tcp any any any 23\ndrop tcp any any any 20-30").unwrap();
        let overlap = sid(PROTO_TCP, 23);
        assert_eq!(a.evaluate(&overlap).action, Action::Drop);
        assert_eq!(b.evaluate(&overlap).action, Action::Accept);
        // Outside the overlap the order is irrelevant.
        let outside = sid(PROTO_TCP, 25);
        assert_eq!(a.evaluate(&outside).action, b.evaluate(&outside).action);
    }
}
