//! Five-tuple matchers shared by the filter rules and the QoS policy.

use std::fmt;

use ipnet::Ipv4Net;

use crate::packet::{parse_proto, proto_name, SessionId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PortMatch {
    Any,
    /// Inclusive range; a single port is `lo == hi`.
    Range(u16, u16),
}

impl PortMatch {
    pub fn matches(&self, port: u16) -> bool {
        match *self {
            PortMatch::Any => true,
            PortMatch::Range(lo, hi) => (lo..=hi).contains(&port),
        }
    }
}

impl fmt::Display for PortMatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            PortMatch::Any => f.write_str("any"),
            PortMatch::Range(lo, hi) if lo == hi => write!(f, "{lo}"),
            PortMatch::Range(lo, hi) => write!(f, "{lo}-{hi}"),
        }
    }
}

/// Matches a session on protocol, source/destination prefix and port range.
/// `None` fields match anything.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlowMatch {
    pub proto: Option<u8>,
    pub src: Option<Ipv4Net>,
    pub src_ports: PortMatch,
    pub dst: Option<Ipv4Net>,
    pub dst_ports: PortMatch,
}

impl FlowMatch {
    pub const ANY: FlowMatch = FlowMatch {
        proto: None,
        src: None,
        src_ports: PortMatch::Any,
        dst: None,
        dst_ports: PortMatch::Any,
    };

    pub fn matches(&self, sid: &SessionId) -> bool {
        self.proto.is_none_or(|p| p == sid.proto)
            && self.src.is_none_or(|n| n.contains(&sid.src_addr))
            && self.src_ports.matches(sid.src_port)
            && self.dst.is_none_or(|n| n.contains(&sid.dst_addr))
            && self.dst_ports.matches(sid.dst_port)
    }

    /// Parse the five matcher tokens `<proto> <src> <sports> <dst> <dports>`.
    pub(crate) fn parse(tokens: &[&str]) -> Result<FlowMatch, String> {
        let [proto, src, sports, dst, dports] = tokens else {
            return Err(format!("expected 5 match fields, found {}", tokens.len()));
        };
        Ok(FlowMatch {
            proto: match *proto {
                "any" => None,
                p => Some(parse_proto(p).ok_or_else(|| format!("unknown protocol `{p}`"))?),
            },
            src: parse_cidr(src)?,
            src_ports: parse_ports(sports)?,
            dst: parse_cidr(dst)?,
            dst_ports: parse_ports(dports)?,
        })
    }
}

impl fmt::Display for FlowMatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let net = |n: Option<Ipv4Net>| n.map_or("any".to_string(), |n| n.to_string());
        write!(
            f,
            "{} {} {} {} {}",
            self.proto.map_or("any".to_string(), proto_name),
            net(self.src),
            self.src_ports,
            net(self.dst),
            self.dst_ports
        )
    }
}

fn parse_cidr(s: &str) -> Result<Option<Ipv4Net>, String> {
    if s == "any" {
        return Ok(None);
    }
    // A bare address is a host route.
    let net = if s.contains('/') {
        s.parse::<Ipv4Net>().ok()
    } else {
        s.parse().ok().map(|a| Ipv4Net::new(a, 32).unwrap())
    };
    net.map(|n| Some(n.trunc()))
        .ok_or_else(|| format!("malformed CIDR `{s}`"))
}

fn parse_ports(s: &str) -> Result<PortMatch, String> {
    if s == "any" {
        return Ok(PortMatch::Any);
    }
    let port = |p: &str| p.parse::<u16>().map_err(|_| format!("bad port `{p}`"));
    match s.split_once('-') {
        Some((lo, hi)) => {
            let (lo, hi) = (port(lo)?, port(hi)?);
            if lo > hi {
                return Err(format!("empty port range `{s}`"));
            }
            Ok(PortMatch::Range(lo, hi))
        }
        None => {
            let p = port(s)?;
            Ok(PortMatch::Range(p, p))
        }
    }
}

/// Lines of a config file with comments and blank lines removed, tagged with
/// their 1-based line numbers.
pub(crate) fn config_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, line)| {
        let line = line.split('#').next().unwrap_or("").trim();
        (!line.is_empty()).then(|| (i + 1, line.split_whitespace().collect()))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sid(proto: u8, src: &str, sp: u16, dst: &str, dp: u16) -> SessionId {
        SessionId::new(src.parse().unwrap(), sp, dst.parse().unwrap(), dp, proto)
    }

    #[test]
    fn parses_and_matches() {
        let m = FlowMatch::parse(&["tcp", "10.0.0.0/8", "any", "any", "20-23"]).unwrap();
        assert!(m.matches(&sid(6, "10.1.2.3", 5000, "1.1.1.1", 23)));
        assert!(m.matches(&sid(6, "10.1.2.3", 5000, "1.1.1.1", 20)));
        assert!(!m.matches(&sid(6, "10.1.2.3", 5000, "1.1.1.1", 24)));
        assert!(!m.matches(&sid(17, "10.1.2.3", 5000, "1.1.1.1", 23)));
        assert!(!m.matches(&sid(6, "11.1.2.3", 5000, "1.1.1.1", 23)));
        assert_eq!(m.to_string(), "tcp 10.0.0.0/8 any any 20-23");
    }

    #[test]
    fn bare_address_is_host_prefix() {
        let m = FlowMatch::parse(&["any", "any", "any", "1.1.1.1", "any"]).unwrap();
        assert!(m.matches(&sid(17, "10.0.0.1", 1, "1.1.1.1", 2)));
        assert!(!m.matches(&sid(17, "10.0.0.1", 1, "1.1.1.2", 2)));
    }

    #[test]
    fn rejects_malformed_fields() {
        assert!(FlowMatch::parse(&["tcp", "10.0.0.0/33", "any", "any", "any"]).is_err());
        assert!(FlowMatch::parse(&["tcp", "any", "9-3", "any", "any"]).is_err());
        assert!(FlowMatch::parse(&["tcp", "any", "any", "any", "70000"]).is_err());
        assert!(FlowMatch::parse(&["icmpx", "any", "any", "any", "any"]).is_err());
        assert!(FlowMatch::parse(&["tcp", "any", "any", "any"]).is_err());
    }
}
