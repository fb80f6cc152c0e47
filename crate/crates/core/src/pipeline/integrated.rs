use std::sync::Arc;

use crate::config::RouterConfig;
use crate::filter::Action;
use crate::nat::{allocate_port, translate_inbound, translate_outbound, InboundKey, Mapping};
use crate::packet::{classify_direction, Direction, Packet};
use crate::session::{
    advance_state, initial_state, EntryMut, InsertError, IntegratedEntry, SessionTable,
};

use super::{emit, DropReason, LookupAccounting, Outcome, Pipeline, SessionProbe, Verdict};

/// Deliberate faults for checking that the differential harness notices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mutation {
    #[default]
    None,
    /// Forward hit packets without re-marking their DSCP.
    SkipHitDscp,
}

/// One lookup in the integrated session table per established-flow packet;
/// NAT, filtering, classification and routing run only when a flow's first
/// packet misses.
pub struct IntegratedPipeline {
    cfg: Arc<RouterConfig>,
    table: SessionTable,
    mutation: Mutation,
}

impl IntegratedPipeline {
    pub fn new(cfg: Arc<RouterConfig>) -> Self {
        let table = SessionTable::with_capacity(cfg.capacity);
        IntegratedPipeline {
            cfg,
            table,
            mutation: Mutation::None,
        }
    }

    #[doc(hidden)]
    pub fn with_mutation(mut self, mutation: Mutation) -> Self {
        self.mutation = mutation;
        self
    }

    pub fn table(&self) -> &SessionTable {
        &self.table
    }

    pub fn table_mut(&mut self) -> &mut SessionTable {
        &mut self.table
    }

    fn hit(
        cfg: &RouterConfig,
        mutation: Mutation,
        mut entry: EntryMut<'_>,
        p: &Packet,
        dir: Direction,
    ) -> Outcome {
        let updated = match advance_state(&entry, p, dir, p.ts, &cfg.timeouts) {
            Ok(e) => e,
            Err(_) => return Outcome::Dropped(DropReason::StateViolation),
        };
        entry.store(updated);
        let mapping = Mapping {
            lan_addr: updated.lan_addr,
            lan_port: updated.lan_port,
            gwy_addr: updated.gwy_addr,
            gwy_port: updated.gwy_port,
        };
        let (packet, next_hop) = match dir {
            Direction::Outbound => (translate_outbound(p, &mapping), updated.ext_next_hop),
            Direction::Inbound => (translate_inbound(p, &mapping), updated.lan_next_hop),
        };
        let packet = packet.expect("entry keys match the packet");
        let dscp = match mutation {
            Mutation::SkipHitDscp => packet.dscp(),
            Mutation::None => updated.dscp,
        };
        emit(packet, dscp, next_hop)
    }

    fn miss(&mut self, p: &Packet, acct: &mut LookupAccounting) -> Outcome {
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

        let mapping = if cfg.lan_prefix.contains(&sid.dst_addr) {
            Mapping::bypass(sid.src_addr, sid.src_port)
        } else {
            acct.nat_lookups += 1;
            match allocate_port(
                &cfg.nat,
                &mut self.table,
                sid.dst_addr,
                sid.dst_port,
                sid.proto,
                now,
            ) {
                Ok((gwy_addr, gwy_port)) => Mapping {
                    lan_addr: sid.src_addr,
                    lan_port: sid.src_port,
                    gwy_addr,
                    gwy_port,
                },
                Err(_) => return Outcome::Dropped(DropReason::NatExhausted),
            }
        };

        let dscp = cfg.qos.classify(&sid);
        acct.qos_classifications += 1;
        let ext_next_hop = cfg.routes.next_hop(sid.dst_addr);
        let lan_next_hop = cfg.routes.next_hop(sid.src_addr);
        acct.route_lookups += 2;

        let entry = IntegratedEntry {
            lan_addr: sid.src_addr,
            lan_port: sid.src_port,
            gwy_addr: mapping.gwy_addr,
            gwy_port: mapping.gwy_port,
            ext_addr: sid.dst_addr,
            ext_port: sid.dst_port,
            proto: sid.proto,
            state,
            expiry: cfg.timeouts.expiry(now, state, p.flags),
            dscp,
            ext_next_hop,
            lan_next_hop,
        };
        if self.table.is_full() {
            self.table.sweep_expired(now);
        }
        match self.table.insert(entry) {
            Ok(()) => {}
            Err(InsertError::TableFull) => return Outcome::Dropped(DropReason::TableFull),
            Err(InsertError::DuplicateKey) => {
                panic!("session for {sid} inserted twice")
            }
        }
        let packet = translate_outbound(p, &mapping).expect("mapping built from this packet");
        emit(packet, dscp, ext_next_hop)
    }
}

impl Pipeline for IntegratedPipeline {
    fn name(&self) -> &'static str {
        "integrated"
    }

    fn process(&mut self, p: &Packet) -> Verdict {
        let cfg = &*self.cfg;
        let now = p.ts;
        let mut acct = LookupAccounting::default();
        let dir = classify_direction(p, &cfg.lan_prefix);
        let hit = |outcome, lookups| Verdict {
            outcome,
            lookups,
            session: SessionProbe::Hit,
        };

        if dir == Direction::Outbound {
            acct.session_lookups += 1;
            if let Some(entry) = self.table.lookup_outbound(&p.sid, now) {
                let outcome = Self::hit(cfg, self.mutation, entry, p, Direction::Outbound);
                return hit(outcome, acct);
            }
        }

        // Replies: inbound packets, and LAN-to-LAN packets flowing back toward
        // the initiator.
        if dir == Direction::Inbound || cfg.lan_prefix.contains(&p.sid.dst_addr) {
            acct.session_lookups += 1;
            let key = InboundKey::of_packet(&p.sid);
            if let Some(entry) = self.table.lookup_inbound(&key, now) {
                let outcome = Self::hit(cfg, self.mutation, entry, p, Direction::Inbound);
                return hit(outcome, acct);
            }
        }

        let outcome = match dir {
            Direction::Inbound => Outcome::Dropped(DropReason::InboundNoSession),
            Direction::Outbound => self.miss(p, &mut acct),
        };
        Verdict {
            outcome,
            lookups: acct,
            session: SessionProbe::Miss,
        }
    }
}
