//! An edge-router data plane built around one session table that carries a
//! flow's NAT binding, firewall state, DSCP and both next hops, next to a
//! conventional pipeline that consults separate NAT, session, QoS and routing
//! tables for every packet. Both pipelines produce identical verdicts; the
//! crate measures how many table searches each one spends doing so.
//!
//! The guide in `book/` walks through the design; its code samples are
//! compiled and run as doc-tests of this crate.

pub mod config;
pub mod filter;
pub mod harness;
pub mod matcher;
pub mod nat;
pub mod packet;
pub mod pipeline;
pub mod qos;
pub mod routing;
pub mod session;

pub use config::RouterConfig;
pub use packet::{Direction, Packet, SessionId, TcpFlags};
pub use pipeline::{
    BaselinePipeline, DropReason, IntegratedPipeline, LookupAccounting, Outcome, Pipeline, Verdict,
};
pub use session::{IntegratedEntry, SessionState, SessionTable};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/traces.md")]
    struct Traces;
    #[doc = include_str!("../../../book/src/tables.md")]
    struct Tables;
    #[doc = include_str!("../../../book/src/nat.md")]
    struct Nat;
    #[doc = include_str!("../../../book/src/state.md")]
    struct State;
    #[doc = include_str!("../../../book/src/session-table.md")]
    struct SessionTable;
    #[doc = include_str!("../../../book/src/pipelines.md")]
    struct Pipelines;
    #[doc = include_str!("../../../book/src/harness.md")]
    struct Harness;
}
