use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::sync::Arc;

use crate::config::RouterConfig;
use crate::filter::Action;
use crate::nat::{translate_inbound, translate_outbound, Mapping, NatTable};
use crate::packet::{classify_direction, Direction, Packet, SessionId};
use crate::session::{initial_state, transition, SessionState};

use super::{emit, DropReason, LookupAccounting, Outcome, Pipeline, SessionProbe, Verdict};

/// A plain firewall session entry: the five-tuple, state and timeout, and
/// nothing else.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CasualEntry {
    /// LAN-side five-tuple of the initiator.
    pub sid: SessionId,
    pub state: SessionState,
    pub expiry: f64,
}

#[derive(Debug)]
pub struct CasualTable {
    entries: HashMap<SessionId, CasualEntry>,
    capacity: usize,
    lookups: u64,
}

impl CasualTable {
    pub fn with_capacity(capacity: usize) -> Self {
        CasualTable {
            entries: HashMap::new(),
            capacity,
            lookups: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lookups(&self) -> u64 {
        self.lookups
    }

    pub fn lookup(&mut self, sid: &SessionId, now: f64) -> Option<&mut CasualEntry> {
        self.lookups += 1;
        match self.entries.entry(*sid) {
            Entry::Occupied(e) if e.get().expiry <= now => {
                e.remove();
                None
            }
            Entry::Occupied(e) => Some(e.into_mut()),
            Entry::Vacant(_) => None,
        }
    }

    /// Returns `false` if the table is full.
    pub fn insert(&mut self, entry: CasualEntry) -> bool {
        if self.entries.len() >= self.capacity {
            return false;
        }
        self.entries.insert(entry.sid, entry);
        true
    }

    pub fn iter(&self) -> impl Iterator<Item = &CasualEntry> {
        self.entries.values()
    }

    pub fn sweep_expired(&mut self, now: f64) -> usize {
        let before = self.entries.len();
        self.entries.retain(|_, e| e.expiry > now);
        before - self.entries.len()
    }
}

/// The conventional pipeline: NAT table, then session table, then QoS
/// classification and a routing lookup for every packet.
pub struct BaselinePipeline {
    cfg: Arc<RouterConfig>,
    nat: NatTable,
    sessions: CasualTable,
}

impl BaselinePipeline {
    pub fn new(cfg: Arc<RouterConfig>) -> Self {
        let sessions = CasualTable::with_capacity(cfg.capacity);
        BaselinePipeline {
            cfg,
            nat: NatTable::new(),
            sessions,
        }
    }

    pub fn nat_table(&self) -> &NatTable {
        &self.nat
    }

    pub fn session_table(&self) -> &CasualTable {
        &self.sessions
    }

    /// Packet of an existing session. `dir` is relative to the session.
    fn hit(
        cfg: &RouterConfig,
        nat: &mut NatTable,
        entry: &mut CasualEntry,
        p: &Packet,
        mapping: Mapping,
        dir: Direction,
        acct: &mut LookupAccounting,
    ) -> Outcome {
        let Ok(state) = transition(entry.state, p.flags, dir) else {
            return Outcome::Dropped(DropReason::StateViolation);
        };
        entry.state = state;
        entry.expiry = cfg.timeouts.expiry(p.ts, state, p.flags);
        // Keep the NAT binding alive exactly as long as the session.
        nat.set_expiry(&entry.sid, entry.expiry);

        let packet = match dir {
            Direction::Outbound => translate_outbound(p, &mapping),
            Direction::Inbound => translate_inbound(p, &mapping),
        }
        .expect("mapping belongs to this session");
        Self::finish(cfg, packet, &entry.sid, acct)
    }

    fn miss(&mut self, p: &Packet, lan_to_lan: bool, acct: &mut LookupAccounting) -> Outcome {
        let cfg = &*self.cfg;
        let now = p.ts;
        let sid = p.sid;

        let rule = cfg.rules.evaluate(&sid);
        acct.rule_evals += 1;
        acct.rules_scanned += rule.scanned as u64;
        if rule.action == Action::Drop {
            return Outcome::Dropped(DropReason::RuleDenied);
        }
        let Ok(state) = initial_state(sid.proto, p.flags) else {
            return Outcome::Dropped(DropReason::StateViolation);
        };
        let expiry = cfg.timeouts.expiry(now, state, p.flags);

        let mapping = if lan_to_lan {
            Mapping::bypass(sid.src_addr, sid.src_port)
        } else {
            // A binding can outlive its session only if it went stale unseen.
            self.nat.remove(&sid);
            match self.nat.allocate_mapping(&cfg.nat, &sid, now, expiry) {
                Ok(m) => m,
                Err(_) => return Outcome::Dropped(DropReason::NatExhausted),
            }
        };

        if self.sessions.len() >= self.sessions.capacity {
            self.sessions.sweep_expired(now);
            self.nat.sweep_expired(now);
        }
        let inserted = self.sessions.insert(CasualEntry { sid, state, expiry });
        if !inserted {
            self.nat.remove(&sid);
            return Outcome::Dropped(DropReason::TableFull);
        }

        let packet = translate_outbound(p, &mapping).expect("mapping built from this packet");
        Self::finish(cfg, packet, &sid, acct)
    }

    /// Classification and routing, repeated for every admitted packet.
    fn finish(
        cfg: &RouterConfig,
        packet: Packet,
        lan_sid: &SessionId,
        acct: &mut LookupAccounting,
    ) -> Outcome {
        let dscp = cfg.qos.classify(lan_sid);
        acct.qos_classifications += 1;
        let next_hop = cfg.routes.next_hop(packet.sid.dst_addr);
        acct.route_lookups += 1;
        emit(packet, dscp, next_hop)
    }

    fn verdict(outcome: Outcome, lookups: LookupAccounting, session: SessionProbe) -> Verdict {
        Verdict {
            outcome,
            lookups,
            session,
        }
    }
}

impl Pipeline for BaselinePipeline {
    fn name(&self) -> &'static str {
        "baseline"
    }

    fn process(&mut self, p: &Packet) -> Verdict {
        let now = p.ts;
        let mut acct = LookupAccounting::default();
        let dir = classify_direction(p, &self.cfg.lan_prefix);

        match dir {
            Direction::Inbound => {
                acct.nat_lookups += 1;
                let Some((mapping, lan_sid)) = self.nat.lookup(&p.sid, Direction::Inbound, now)
                else {
                    let drop = Outcome::Dropped(DropReason::InboundNoSession);
                    return Self::verdict(drop, acct, SessionProbe::NotProbed);
                };
                acct.session_lookups += 1;
                let Some(entry) = self.sessions.lookup(&lan_sid, now) else {
                    let drop = Outcome::Dropped(DropReason::InboundNoSession);
                    return Self::verdict(drop, acct, SessionProbe::Miss);
                };
                let outcome = Self::hit(
                    &self.cfg,
                    &mut self.nat,
                    entry,
                    p,
                    mapping,
                    Direction::Inbound,
                    &mut acct,
                );
                Self::verdict(outcome, acct, SessionProbe::Hit)
            }
            Direction::Outbound => {
                let lan_to_lan = self.cfg.lan_prefix.contains(&p.sid.dst_addr);
                let mapping = if lan_to_lan {
                    Some(Mapping::bypass(p.sid.src_addr, p.sid.src_port))
                } else {
                    acct.nat_lookups += 1;
                    self.nat
                        .lookup(&p.sid, Direction::Outbound, now)
                        .map(|(m, _)| m)
                };

                acct.session_lookups += 1;
                if let Some(mapping) = mapping {
                    if let Some(entry) = self.sessions.lookup(&p.sid, now) {
                        let outcome = Self::hit(
                            &self.cfg,
                            &mut self.nat,
                            entry,
                            p,
                            mapping,
                            Direction::Outbound,
                            &mut acct,
                        );
                        return Self::verdict(outcome, acct, SessionProbe::Hit);
                    }
                } else {
                    // No binding means no session either; the probe still
                    // happens, as it would in a router that keeps the two
                    // tables apart.
                    let _ = self.sessions.lookup(&p.sid, now);
                }

                if lan_to_lan {
                    // A reply from the responder inside the LAN.
                    let initiator = p.sid.reflect();
                    acct.session_lookups += 1;
                    if let Some(entry) = self.sessions.lookup(&initiator, now) {
                        let mapping = Mapping::bypass(initiator.src_addr, initiator.src_port);
                        let outcome = Self::hit(
                            &self.cfg,
                            &mut self.nat,
                            entry,
                            p,
                            mapping,
                            Direction::Inbound,
                            &mut acct,
                        );
                        return Self::verdict(outcome, acct, SessionProbe::Hit);
                    }
                }

                let outcome = self.miss(p, lan_to_lan, &mut acct);
                Self::verdict(outcome, acct, SessionProbe::Miss)
            }
        }
    }
}
