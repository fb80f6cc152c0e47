//! Per-packet processing pipelines.
//!
//! Both pipelines take the same packets and configuration and must produce
//! the same [`Outcome`] for every packet. They differ only in how many table
//! consultations it costs, which each [`Verdict`] records in its
//! [`LookupAccounting`].

mod baseline;
mod integrated;

use std::fmt;
use std::ops::AddAssign;

pub use baseline::{BaselinePipeline, CasualEntry, CasualTable};
pub use integrated::IntegratedPipeline;
#[doc(hidden)]
pub use integrated::Mutation;

use crate::packet::{render_trace_record, set_dscp, Packet};
use crate::routing::NextHop;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DropReason {
    RuleDenied,
    StateViolation,
    NoRoute,
    NatExhausted,
    TableFull,
    TtlExpired,
    InboundNoSession,
}

impl DropReason {
    pub const ALL: [DropReason; 7] = [
        DropReason::RuleDenied,
        DropReason::StateViolation,
        DropReason::NoRoute,
        DropReason::NatExhausted,
        DropReason::TableFull,
        DropReason::TtlExpired,
        DropReason::InboundNoSession,
    ];
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Outcome {
    Forwarded { next_hop: NextHop, packet: Packet },
    Dropped(DropReason),
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Forwarded { next_hop, packet } => {
                write!(f, "forward {next_hop} {}", render_trace_record(packet))
            }
            Outcome::Dropped(reason) => write!(f, "drop {reason}"),
        }
    }
}

/// Table consultations made for one packet.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct LookupAccounting {
    pub nat_lookups: u64,
    pub session_lookups: u64,
    pub rule_evals: u64,
    pub rules_scanned: u64,
    pub qos_classifications: u64,
    pub route_lookups: u64,
}

impl LookupAccounting {
    /// Table searches, counting a rule-set evaluation as one search.
    /// `rules_scanned` is a depth measure and not included.
    pub fn total(&self) -> u64 {
        self.nat_lookups
            + self.session_lookups
            + self.rule_evals
            + self.qos_classifications
            + self.route_lookups
    }
}

impl AddAssign for LookupAccounting {
    fn add_assign(&mut self, o: Self) {
        self.nat_lookups += o.nat_lookups;
        self.session_lookups += o.session_lookups;
        self.rule_evals += o.rule_evals;
        self.rules_scanned += o.rules_scanned;
        self.qos_classifications += o.qos_classifications;
        self.route_lookups += o.route_lookups;
    }
}

/// Whether the packet found an existing session.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionProbe {
    Hit,
    Miss,
    /// The session table was never consulted.
    NotProbed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verdict {
    pub outcome: Outcome,
    pub lookups: LookupAccounting,
    pub session: SessionProbe,
}

impl Verdict {
    /// Observable equivalence: same outcome, accounting ignored.
    pub fn same_outcome(&self, other: &Verdict) -> bool {
        self.outcome == other.outcome
    }
}

pub trait Pipeline {
    fn name(&self) -> &'static str;

    /// Process one packet at logical time `p.ts`. Packets must be fed in
    /// non-decreasing time order.
    fn process(&mut self, p: &Packet) -> Verdict;
}

/// Mark, route and age an admitted packet. Shared last stage of both
/// pipelines so they agree on drop precedence: no-route before TTL.
fn emit(packet: Packet, dscp: u8, next_hop: Option<NextHop>) -> Outcome {
    let mut packet = set_dscp(&packet, dscp).expect("dscp validated at config load");
    let Some(next_hop) = next_hop else {
        return Outcome::Dropped(DropReason::NoRoute);
    };
    if packet.ttl <= 1 {
        return Outcome::Dropped(DropReason::TtlExpired);
    }
    packet.ttl -= 1;
    Outcome::Forwarded { next_hop, packet }
}
