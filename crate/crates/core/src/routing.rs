//! Static longest-prefix-match routing.
//!
//! Routes are bucketed by prefix length into exact-match maps; a lookup masks
//! the destination at each populated length, longest first, and stops at the
//! first hit. At most 33 probes, usually far fewer.
//!
//! Routes file, one route per line: `<cidr> <next_hop_ip> <iface>`.

use std::collections::HashMap;
use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use arrayvec::ArrayString;
use ipnet::Ipv4Net;
use thiserror::Error;

use crate::matcher::config_lines;

/// Interface label, at most 15 bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Iface(ArrayString<15>);

impl Iface {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl FromStr for Iface {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.is_empty() || s.chars().any(char::is_whitespace) {
            return Err(format!("bad interface label `{s}`"));
        }
        ArrayString::from(s)
            .map(Iface)
            .map_err(|_| format!("interface label `{s}` longer than 15 bytes"))
    }
}

impl fmt::Display for Iface {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NextHop {
    pub addr: Ipv4Addr,
    pub iface: Iface,
}

impl fmt::Display for NextHop {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.addr, self.iface)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RouteEntry {
    pub prefix: Ipv4Net,
    pub next_hop: NextHop,
}

fn mask(len: u8) -> u32 {
    if len == 0 {
        0
    } else {
        u32::MAX << (32 - len)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RouteError {
    #[error("duplicate route for {0}")]
    Duplicate(Ipv4Net),
}

#[derive(Debug, Clone)]
pub struct RoutingTable {
    entries: Vec<RouteEntry>,
    /// One map per prefix length: masked network -> index into `entries`.
    by_len: [HashMap<u32, usize>; 33],
    /// Populated prefix lengths, longest first.
    lengths: Vec<u8>,
}

impl Default for RoutingTable {
    fn default() -> Self {
        Self::new()
    }
}

impl RoutingTable {
    pub fn new() -> Self {
        RoutingTable {
            entries: Vec::new(),
            by_len: std::array::from_fn(|_| HashMap::new()),
            lengths: Vec::new(),
        }
    }

    pub fn from_routes(routes: impl IntoIterator<Item = RouteEntry>) -> Result<Self, RouteError> {
        let mut rt = RoutingTable::new();
        for r in routes {
            rt.insert(r)?;
        }
        Ok(rt)
    }

    /// Add a route. The prefix is normalized to its network address.
    pub fn insert(&mut self, mut route: RouteEntry) -> Result<(), RouteError> {
        route.prefix = route.prefix.trunc();
        let len = route.prefix.prefix_len();
        let net = u32::from(route.prefix.network());
        let bucket = &mut self.by_len[len as usize];
        if bucket.contains_key(&net) {
            return Err(RouteError::Duplicate(route.prefix));
        }
        bucket.insert(net, self.entries.len());
        self.entries.push(route);
        if let Err(pos) = self.lengths.binary_search_by(|l| len.cmp(l)) {
            self.lengths.insert(pos, len);
        }
        Ok(())
    }

    pub fn routes(&self) -> &[RouteEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The most specific route covering `dst`.
    pub fn lookup(&self, dst: Ipv4Addr) -> Option<&RouteEntry> {
        let dst = u32::from(dst);
        self.lengths.iter().find_map(|&len| {
            self.by_len[len as usize]
                .get(&(dst & mask(len)))
                .map(|&i| &self.entries[i])
        })
    }

    pub fn next_hop(&self, dst: Ipv4Addr) -> Option<NextHop> {
        self.lookup(dst).map(|r| r.next_hop)
    }
}

impl fmt::Display for RoutingTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.entries {
            writeln!(f, "{} {}", r.prefix, r.next_hop)?;
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("routes line {line}: {reason}")]
pub struct RouteParseError {
    pub line: usize,
    pub reason: String,
}

pub fn parse_routes(text: &str) -> Result<RoutingTable, RouteParseError> {
    let mut rt = RoutingTable::new();
    for (line, tokens) in config_lines(text) {
        let err = |reason: String| RouteParseError { line, reason };
        let [prefix, via, iface] = tokens[..] else {
            return Err(err("expected `<cidr> <next_hop> <iface>`".to_string()));
        };
        let prefix: Ipv4Net = prefix
            .parse()
            .map_err(|_| err(format!("malformed CIDR `{prefix}`")))?;
        let addr = via
            .parse()
            .map_err(|_| err(format!("bad next hop `{via}`")))?;
        let iface = iface.parse().map_err(err)?;
        rt.insert(RouteEntry {
            prefix,
            next_hop: NextHop { addr, iface },
        })
        .map_err(|e| err(e.to_string()))?;
    }
    Ok(rt)
}
