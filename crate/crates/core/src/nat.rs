//! NAPT for sessions initiated from the LAN.
//!
//! Ports are handed out lowest-free-first from a single public address, and a
//! port is only "in use" relative to one external peer `(ext_addr, ext_port,
//! proto)`, so the same public port can serve different peers at once.
//!
//! Config file:
//!
//! ```text
//! public 192.0.2.1
//! ports 40000-49999
//! ```

use std::collections::HashMap;
use std::net::Ipv4Addr;

use thiserror::Error;

use crate::matcher::config_lines;
use crate::packet::{has_ports, Direction, Packet, SessionId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NatConfig {
    pub public_addr: Ipv4Addr,
    pub port_lo: u16,
    pub port_hi: u16,
}

impl NatConfig {
    pub fn new(public_addr: Ipv4Addr, port_lo: u16, port_hi: u16) -> Result<Self, NatConfigError> {
        if port_lo > port_hi {
            return Err(NatConfigError {
                line: 0,
                reason: format!("empty port pool {port_lo}-{port_hi}"),
            });
        }
        Ok(NatConfig {
            public_addr,
            port_lo,
            port_hi,
        })
    }

    pub fn pool_size(&self) -> u32 {
        u32::from(self.port_hi) - u32::from(self.port_lo) + 1
    }
}

impl Default for NatConfig {
    fn default() -> Self {
        NatConfig {
            public_addr: Ipv4Addr::new(192, 0, 2, 1),
            port_lo: 40000,
            port_hi: 49999,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("nat line {line}: {reason}")]
pub struct NatConfigError {
    pub line: usize,
    pub reason: String,
}

pub fn parse_nat_config(text: &str) -> Result<NatConfig, NatConfigError> {
    let mut public = None;
    let mut ports = None;
    for (line, tokens) in config_lines(text) {
        let err = |reason: String| NatConfigError { line, reason };
        match tokens[..] {
            ["public", ip] => {
                public = Some(ip.parse().map_err(|_| err(format!("bad address `{ip}`")))?);
            }
            ["ports", range] => {
                let parsed = range
                    .split_once('-')
                    .and_then(|(lo, hi)| Some((lo.parse::<u16>().ok()?, hi.parse::<u16>().ok()?)))
                    .filter(|(lo, hi)| lo <= hi)
                    .ok_or_else(|| err(format!("bad port range `{range}`")))?;
                ports = Some(parsed);
            }
            _ => {
                return Err(err(
                    "expected `public <ip>` or `ports <lo>-<hi>`".to_string()
                ))
            }
        }
    }
    let missing = |what: &str| NatConfigError {
        line: 0,
        reason: format!("missing `{what}` line"),
    };
    let public_addr = public.ok_or_else(|| missing("public"))?;
    let (port_lo, port_hi) = ports.ok_or_else(|| missing("ports"))?;
    NatConfig::new(public_addr, port_lo, port_hi)
}

/// Reverse-direction key: the gateway side of a session and its external
/// peer. An inbound packet's key is `(dst, dst_port, src, src_port, proto)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct InboundKey {
    pub gwy_addr: Ipv4Addr,
    pub gwy_port: u16,
    pub ext_addr: Ipv4Addr,
    pub ext_port: u16,
    pub proto: u8,
}

impl InboundKey {
    pub fn of_packet(sid: &SessionId) -> Self {
        InboundKey {
            gwy_addr: sid.dst_addr,
            gwy_port: sid.dst_port,
            ext_addr: sid.src_addr,
            ext_port: sid.src_port,
            proto: sid.proto,
        }
    }
}

/// One address/port translation between a LAN endpoint and its public face.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Mapping {
    pub lan_addr: Ipv4Addr,
    pub lan_port: u16,
    pub gwy_addr: Ipv4Addr,
    pub gwy_port: u16,
}

impl Mapping {
    /// Identity mapping used for sessions that never leave the LAN.
    pub fn bypass(lan_addr: Ipv4Addr, lan_port: u16) -> Self {
        Mapping {
            lan_addr,
            lan_port,
            gwy_addr: lan_addr,
            gwy_port: lan_port,
        }
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("no free public port for peer {ext_addr}:{ext_port}")]
pub struct NatExhausted {
    pub ext_addr: Ipv4Addr,
    pub ext_port: u16,
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum NatMismatch {
    #[error("packet source does not match the mapping's LAN endpoint")]
    Outbound,
    #[error("packet destination does not match the mapping's gateway endpoint")]
    Inbound,
}

/// Anything that can say whether a public port is already bound to a peer.
///
/// Implementations may drop stale (expired) bindings as a side effect.
pub trait PortOccupancy {
    fn is_taken(&mut self, key: &InboundKey, now: f64) -> bool;
}

/// Pick the lowest public port not bound to `(ext_addr, ext_port, proto)`.
/// Portless protocols can only use port 0.
pub fn allocate_port(
    cfg: &NatConfig,
    occupancy: &mut impl PortOccupancy,
    ext_addr: Ipv4Addr,
    ext_port: u16,
    proto: u8,
    now: f64,
) -> Result<(Ipv4Addr, u16), NatExhausted> {
    let candidates = if has_ports(proto) {
        cfg.port_lo..=cfg.port_hi
    } else {
        0..=0
    };
    for gwy_port in candidates {
        let key = InboundKey {
            gwy_addr: cfg.public_addr,
            gwy_port,
            ext_addr,
            ext_port,
            proto,
        };
        if !occupancy.is_taken(&key, now) {
            return Ok((cfg.public_addr, gwy_port));
        }
    }
    Err(NatExhausted { ext_addr, ext_port })
}

/// Rewrite the source of an outbound packet to its public endpoint.
pub fn translate_outbound(p: &Packet, m: &Mapping) -> Result<Packet, NatMismatch> {
    if p.sid.src_addr != m.lan_addr || p.sid.src_port != m.lan_port {
        return Err(NatMismatch::Outbound);
    }
    let mut out = *p;
    out.sid.src_addr = m.gwy_addr;
    out.sid.src_port = m.gwy_port;
    Ok(out)
}

/// Rewrite the destination of an inbound packet back to the LAN endpoint.
pub fn translate_inbound(p: &Packet, m: &Mapping) -> Result<Packet, NatMismatch> {
    if p.sid.dst_addr != m.gwy_addr || p.sid.dst_port != m.gwy_port {
        return Err(NatMismatch::Inbound);
    }
    let mut out = *p;
    out.sid.dst_addr = m.lan_addr;
    out.sid.dst_port = m.lan_port;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct NatRecord {
    gwy_addr: Ipv4Addr,
    gwy_port: u16,
    expiry: f64,
}

/// Standalone NAT table, as kept by a router that tracks translations apart
/// from its firewall state.
#[derive(Debug, Clone, Default)]
pub struct NatTable {
    /// LAN-side five-tuple -> public endpoint.
    forward: HashMap<SessionId, NatRecord>,
    reverse: HashMap<InboundKey, SessionId>,
    lookups: u64,
}

impl NatTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    /// Total `lookup` calls, hit or miss.
    pub fn lookups(&self) -> u64 {
        self.lookups
    }

    /// Bind a new public endpoint for the LAN-side session `lan_sid`.
    pub fn allocate_mapping(
        &mut self,
        cfg: &NatConfig,
        lan_sid: &SessionId,
        now: f64,
        expiry: f64,
    ) -> Result<Mapping, NatExhausted> {
        debug_assert!(!self.forward.contains_key(lan_sid), "flow already mapped");
        let (gwy_addr, gwy_port) = allocate_port(
            cfg,
            self,
            lan_sid.dst_addr,
            lan_sid.dst_port,
            lan_sid.proto,
            now,
        )?;
        self.forward.insert(
            *lan_sid,
            NatRecord {
                gwy_addr,
                gwy_port,
                expiry,
            },
        );
        self.reverse
            .insert(reverse_key(lan_sid, gwy_addr, gwy_port), *lan_sid);
        Ok(Mapping {
            lan_addr: lan_sid.src_addr,
            lan_port: lan_sid.src_port,
            gwy_addr,
            gwy_port,
        })
    }

    /// Find the live mapping for a packet: by its own five-tuple when
    /// outbound, by the reverse key when inbound. Expired mappings are
    /// removed and reported as a miss.
    pub fn lookup(
        &mut self,
        sid: &SessionId,
        dir: Direction,
        now: f64,
    ) -> Option<(Mapping, SessionId)> {
        self.lookups += 1;
        let lan_sid = match dir {
            Direction::Outbound => *sid,
            Direction::Inbound => *self.reverse.get(&InboundKey::of_packet(sid))?,
        };
        let rec = *self.forward.get(&lan_sid)?;
        if rec.expiry <= now {
            self.remove(&lan_sid);
            return None;
        }
        Some((
            Mapping {
                lan_addr: lan_sid.src_addr,
                lan_port: lan_sid.src_port,
                gwy_addr: rec.gwy_addr,
                gwy_port: rec.gwy_port,
            },
            lan_sid,
        ))
    }

    pub fn set_expiry(&mut self, lan_sid: &SessionId, expiry: f64) {
        if let Some(rec) = self.forward.get_mut(lan_sid) {
            rec.expiry = expiry;
        }
    }

    pub fn remove(&mut self, lan_sid: &SessionId) -> bool {
        match self.forward.remove(lan_sid) {
            Some(rec) => {
                self.reverse
                    .remove(&reverse_key(lan_sid, rec.gwy_addr, rec.gwy_port));
                true
            }
            None => false,
        }
    }

    /// Drop every mapping with `expiry <= now`.
    pub fn sweep_expired(&mut self, now: f64) -> usize {
        let dead: Vec<SessionId> = self
            .forward
            .iter()
            .filter(|(_, r)| r.expiry <= now)
            .map(|(k, _)| *k)
            .collect();
        for k in &dead {
            self.remove(k);
        }
        dead.len()
    }

    /// Forward and reverse maps are mutual inverses.
    pub fn is_consistent(&self) -> bool {
        self.forward.len() == self.reverse.len()
            && self.forward.iter().all(|(sid, rec)| {
                self.reverse
                    .get(&reverse_key(sid, rec.gwy_addr, rec.gwy_port))
                    == Some(sid)
            })
    }
}

fn reverse_key(lan_sid: &SessionId, gwy_addr: Ipv4Addr, gwy_port: u16) -> InboundKey {
    InboundKey {
        gwy_addr,
        gwy_port,
        ext_addr: lan_sid.dst_addr,
        ext_port: lan_sid.dst_port,
        proto: lan_sid.proto,
    }
}

impl PortOccupancy for NatTable {
    fn is_taken(&mut self, key: &InboundKey, now: f64) -> bool {
        let Some(lan_sid) = self.reverse.get(key).copied() else {
            return false;
        };
        if self.forward[&lan_sid].expiry > now {
            return true;
        }
        self.remove(&lan_sid);
        false
    }
}
