//! The integrated session table.
//!
//! One entry per flow carries everything a packet of that flow needs after
//! its first packet has been admitted:
//!
//! | group            | fields                                                  |
//! |------------------|---------------------------------------------------------|
//! | NAT              | `lan_addr`, `lan_port`, `gwy_addr`, `gwy_port`, `ext_addr`, `ext_port` |
//! | stateful filter  | `proto`, `state`, `expiry`                              |
//! | QoS              | `dscp`                                                  |
//! | routing          | `ext_next_hop`, `lan_next_hop`                          |
//!
//! Entries live in a slab and are reachable through two exact-match indexes:
//! the outbound key `(lan_addr, lan_port, ext_addr, ext_port, proto)` for
//! packets leaving the LAN, and the inbound key `(gwy_addr, gwy_port,
//! ext_addr, ext_port, proto)` for replies arriving at the gateway. Either
//! lookup is a single hash probe plus a slab index.
//!
//! Time is logical and supplied by the caller. An entry is dead once
//! `expiry <= now`; dead entries are dropped lazily when a lookup touches
//! them, or in bulk by [`SessionTable::sweep_expired`].

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::net::Ipv4Addr;
use std::ops::Deref;

use thiserror::Error;

use crate::nat::{InboundKey, PortOccupancy};
use crate::packet::{Direction, Packet, SessionId, TcpFlags, PROTO_TCP};
use crate::routing::{NextHop, RoutingTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SessionState {
    SynSent,
    SynReceived,
    Established,
    /// A FIN has been seen from `from`; a FIN from the other side closes.
    FinWait {
        from: Direction,
    },
    Closed,
    /// Every non-TCP session.
    Open,
}

impl SessionState {
    /// Every state a TCP session can be in.
    pub const TCP: [SessionState; 6] = [
        SessionState::SynSent,
        SessionState::SynReceived,
        SessionState::Established,
        SessionState::FinWait {
            from: Direction::Outbound,
        },
        SessionState::FinWait {
            from: Direction::Inbound,
        },
        SessionState::Closed,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SessionState::SynSent => "SynSent",
            SessionState::SynReceived => "SynReceived",
            SessionState::Established => "Established",
            SessionState::FinWait { .. } => "FinWait",
            SessionState::Closed => "Closed",
            SessionState::Open => "Open",
        }
    }
}

impl fmt::Display for SessionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("{flags} {dir:?} not allowed in state {state}")]
pub struct StateViolation {
    pub state: SessionState,
    pub flags: TcpFlags,
    pub dir: Direction,
}

/// State for the first packet of a new session. A TCP session can only be
/// opened by a bare SYN from the initiator.
pub fn initial_state(proto: u8, flags: TcpFlags) -> Result<SessionState, StateViolation> {
    if proto != PROTO_TCP {
        return Ok(SessionState::Open);
    }
    if flags == TcpFlags::SYN {
        Ok(SessionState::SynSent)
    } else {
        Err(StateViolation {
            state: SessionState::Closed,
            flags,
            dir: Direction::Outbound,
        })
    }
}

/// The session state machine. `dir` is relative to the session: `Outbound`
/// for packets from the initiator, `Inbound` for replies.
pub fn transition(
    state: SessionState,
    flags: TcpFlags,
    dir: Direction,
) -> Result<SessionState, StateViolation> {
    use Direction::*;
    use SessionState::*;

    let violation = Err(StateViolation { state, flags, dir });
    if state == Open {
        return Ok(Open);
    }
    if flags.rst {
        return Ok(Closed);
    }
    let (syn, ack, fin) = (flags.syn, flags.ack, flags.fin);
    match state {
        SynSent => match (syn, ack, fin, dir) {
            (true, true, false, Inbound) => Ok(SynReceived),
            // retransmitted SYN
            (true, false, false, Outbound) => Ok(SynSent),
            _ => violation,
        },
        SynReceived => match (syn, ack, fin, dir) {
            (false, true, false, Outbound) => Ok(Established),
            // retransmitted SYN+ACK
            (true, true, false, Inbound) => Ok(SynReceived),
            _ => violation,
        },
        Established => match (syn, ack, fin) {
            (false, _, true) => Ok(FinWait { from: dir }),
            (false, true, false) => Ok(Established),
            _ => violation,
        },
        FinWait { from } => match (syn, ack, fin) {
            (false, _, true) if dir != from => Ok(Closed),
            (false, _, true) => Ok(state),
            (false, true, false) => Ok(state),
            _ => violation,
        },
        Closed => match (syn, ack, fin) {
            // trailing ACK of the close handshake
            (false, true, false) => Ok(Closed),
            _ => violation,
        },
        Open => unreachable!(),
    }
}

/// Idle lifetimes in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timeouts {
    pub tcp_established: f64,
    /// Handshake and teardown states.
    pub tcp_transitory: f64,
    /// UDP and everything else.
    pub other: f64,
    /// Lifetime of a session after a reset.
    pub rst_grace: f64,
}

impl Default for Timeouts {
    fn default() -> Self {
        Timeouts {
            tcp_established: 300.0,
            tcp_transitory: 30.0,
            other: 60.0,
            rst_grace: 5.0,
        }
    }
}

impl Timeouts {
    pub fn lifetime(&self, state: SessionState) -> f64 {
        match state {
            SessionState::Established => self.tcp_established,
            SessionState::Open => self.other,
            _ => self.tcp_transitory,
        }
    }

    /// Expiry of a session that just accepted a packet with `flags` and moved
    /// to `state`.
    pub fn expiry(&self, now: f64, state: SessionState, flags: TcpFlags) -> f64 {
        if flags.rst {
            now + self.rst_grace
        } else {
            now + self.lifetime(state)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratedEntry {
    pub lan_addr: Ipv4Addr,
    pub lan_port: u16,
    pub gwy_addr: Ipv4Addr,
    pub gwy_port: u16,
    pub ext_addr: Ipv4Addr,
    pub ext_port: u16,
    pub proto: u8,
    pub state: SessionState,
    /// Absolute logical time at which the entry dies.
    pub expiry: f64,
    pub dscp: u8,
    /// Next hop toward `ext_addr`; `None` if no route covered it.
    pub ext_next_hop: Option<NextHop>,
    /// Next hop toward `lan_addr`; `None` if no route covered it.
    pub lan_next_hop: Option<NextHop>,
}

impl IntegratedEntry {
    pub fn outbound_key(&self) -> SessionId {
        SessionId::new(
            self.lan_addr,
            self.lan_port,
            self.ext_addr,
            self.ext_port,
            self.proto,
        )
    }

    pub fn inbound_key(&self) -> InboundKey {
        InboundKey {
            gwy_addr: self.gwy_addr,
            gwy_port: self.gwy_port,
            ext_addr: self.ext_addr,
            ext_port: self.ext_port,
            proto: self.proto,
        }
    }

    pub fn is_live(&self, now: f64) -> bool {
        self.expiry > now
    }
}

/// Run `p` through `e`'s state machine. On success the returned entry has the
/// new state and a refreshed expiry; nothing else changes.
pub fn advance_state(
    e: &IntegratedEntry,
    p: &Packet,
    dir: Direction,
    now: f64,
    timeouts: &Timeouts,
) -> Result<IntegratedEntry, StateViolation> {
    debug_assert!(match dir {
        Direction::Outbound => p.sid == e.outbound_key(),
        Direction::Inbound => InboundKey::of_packet(&p.sid) == e.inbound_key(),
    });
    let state = transition(e.state, p.flags, dir)?;
    Ok(IntegratedEntry {
        state,
        expiry: timeouts.expiry(now, state, p.flags),
        ..*e
    })
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum InsertError {
    #[error("a resident entry already uses one of the keys")]
    DuplicateKey,
    #[error("session table full")]
    TableFull,
}

/// Outcome of [`SessionTable::reresolve_next_hops`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReresolveReport {
    pub updated: usize,
    pub evicted: usize,
}

pub const DEFAULT_CAPACITY: usize = 65_536;

#[derive(Debug)]
pub struct SessionTable {
    slots: Vec<Option<IntegratedEntry>>,
    free: Vec<usize>,
    outbound: HashMap<SessionId, usize>,
    inbound: HashMap<InboundKey, usize>,
    capacity: usize,
    lookups: u64,
}

impl Default for SessionTable {
    fn default() -> Self {
        SessionTable::with_capacity(DEFAULT_CAPACITY)
    }
}

/// Mutable access to a live entry. Key fields cannot be changed through it,
/// so both indexes stay valid.
pub struct EntryMut<'a> {
    entry: &'a mut IntegratedEntry,
}

impl Deref for EntryMut<'_> {
    type Target = IntegratedEntry;

    fn deref(&self) -> &IntegratedEntry {
        self.entry
    }
}

impl EntryMut<'_> {
    /// Replace the entry's non-key fields with those of `updated`.
    ///
    /// Panics if `updated` has different keys.
    pub fn store(&mut self, updated: IntegratedEntry) {
        assert!(
            updated.outbound_key() == self.entry.outbound_key()
                && updated.inbound_key() == self.entry.inbound_key(),
            "session keys are immutable"
        );
        *self.entry = updated;
    }
}

impl SessionTable {
    pub fn with_capacity(capacity: usize) -> Self {
        SessionTable {
            slots: Vec::new(),
            free: Vec::new(),
            outbound: HashMap::new(),
            inbound: HashMap::new(),
            capacity,
            lookups: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Entries physically present, including dead ones not yet reclaimed.
    pub fn len(&self) -> usize {
        self.outbound.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outbound.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.len() >= self.capacity
    }

    /// Total outbound and inbound lookups, hit or miss.
    pub fn lookups(&self) -> u64 {
        self.lookups
    }

    pub fn lookup_outbound(&mut self, key: &SessionId, now: f64) -> Option<EntryMut<'_>> {
        self.lookups += 1;
        let slot = *self.outbound.get(key)?;
        self.live_slot(slot, now)
    }

    pub fn lookup_inbound(&mut self, key: &InboundKey, now: f64) -> Option<EntryMut<'_>> {
        self.lookups += 1;
        let slot = *self.inbound.get(key)?;
        self.live_slot(slot, now)
    }

    fn live_slot(&mut self, slot: usize, now: f64) -> Option<EntryMut<'_>> {
        if !self.slots[slot].as_ref().is_some_and(|e| e.is_live(now)) {
            self.remove_slot(slot);
            return None;
        }
        self.slots[slot].as_mut().map(|entry| EntryMut { entry })
    }

    /// Add an entry. Expired entries keep their keys until a lookup or sweep
    /// reclaims them, so they count as duplicates here.
    pub fn insert(&mut self, e: IntegratedEntry) -> Result<(), InsertError> {
        let (out_key, in_key) = (e.outbound_key(), e.inbound_key());
        if self.outbound.contains_key(&out_key) || self.inbound.contains_key(&in_key) {
            return Err(InsertError::DuplicateKey);
        }
        if self.is_full() {
            return Err(InsertError::TableFull);
        }
        let slot = match self.free.pop() {
            Some(slot) => {
                self.slots[slot] = Some(e);
                slot
            }
            None => {
                self.slots.push(Some(e));
                self.slots.len() - 1
            }
        };
        self.outbound.insert(out_key, slot);
        self.inbound.insert(in_key, slot);
        Ok(())
    }

    fn remove_slot(&mut self, slot: usize) -> Option<IntegratedEntry> {
        let e = self.slots[slot].take()?;
        self.outbound.remove(&e.outbound_key());
        self.inbound.remove(&e.inbound_key());
        self.free.push(slot);
        Some(e)
    }

    /// Remove the entry with the given outbound key, live or not.
    pub fn remove(&mut self, key: &SessionId) -> Option<IntegratedEntry> {
        let slot = *self.outbound.get(key)?;
        self.remove_slot(slot)
    }

    pub fn sweep_expired(&mut self, now: f64) -> usize {
        let dead: Vec<usize> = self
            .slots
            .iter()
            .enumerate()
            .filter_map(|(i, e)| e.as_ref().filter(|e| !e.is_live(now)).map(|_| i))
            .collect();
        for &slot in &dead {
            self.remove_slot(slot);
        }
        dead.len()
    }

    /// Recompute cached next hops against a new routing table. Entries left
    /// without a route in either direction are evicted.
    pub fn reresolve_next_hops(&mut self, rt: &RoutingTable) -> ReresolveReport {
        let mut report = ReresolveReport::default();
        for slot in 0..self.slots.len() {
            let Some(e) = self.slots[slot].as_mut() else {
                continue;
            };
            let ext = rt.next_hop(e.ext_addr);
            let lan = rt.next_hop(e.lan_addr);
            if ext.is_none() || lan.is_none() {
                self.remove_slot(slot);
                report.evicted += 1;
            } else if (ext, lan) != (e.ext_next_hop, e.lan_next_hop) {
                e.ext_next_hop = ext;
                e.lan_next_hop = lan;
                report.updated += 1;
            }
        }
        report
    }

    /// Entries in slab order, including dead ones not yet reclaimed.
    pub fn iter(&self) -> impl Iterator<Item = &IntegratedEntry> {
        self.slots.iter().flatten()
    }

    /// Both indexes reach exactly the occupied slots, each under its own key.
    pub fn is_consistent(&self) -> bool {
        let occupied = self.slots.iter().filter(|s| s.is_some()).count();
        occupied == self.outbound.len()
            && occupied == self.inbound.len()
            && self.outbound.iter().all(|(k, &slot)| {
                self.slots[slot]
                    .as_ref()
                    .is_some_and(|e| e.outbound_key() == *k)
            })
            && self.inbound.iter().all(|(k, &slot)| {
                self.slots[slot]
                    .as_ref()
                    .is_some_and(|e| e.inbound_key() == *k)
            })
    }

    /// CSV dump of every entry, sorted by outbound key.
    pub fn dump_csv(&self) -> String {
        let mut entries: Vec<&IntegratedEntry> = self.iter().collect();
        entries.sort_by_key(|e| e.outbound_key());
        let hop = |h: Option<NextHop>| h.map_or(String::new(), |h| h.addr.to_string());
        let mut out = String::from(
            "lan_addr,lan_port,gwy_addr,gwy_port,ext_addr,ext_port,ip_proto,state,dscp,ext_next_hop,lan_next_hop,expiry\n",
        );
        for e in entries {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                e.lan_addr,
                e.lan_port,
                e.gwy_addr,
                e.gwy_port,
                e.ext_addr,
                e.ext_port,
                e.proto,
                e.state,
                e.dscp,
                hop(e.ext_next_hop),
                hop(e.lan_next_hop),
                e.expiry
            );
        }
        out
    }
}

impl PortOccupancy for SessionTable {
    fn is_taken(&mut self, key: &InboundKey, now: f64) -> bool {
        let Some(&slot) = self.inbound.get(key) else {
            return false;
        };
        if self.slots[slot].as_ref().is_some_and(|e| e.is_live(now)) {
            return true;
        }
        self.remove_slot(slot);
        false
    }
}
