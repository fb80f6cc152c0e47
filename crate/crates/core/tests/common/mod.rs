//! Test-only oracles and generators. Nothing here calls into the code under
//! test to compute an expected value.

#![allow(dead_code)]

use std::net::Ipv4Addr;
use std::sync::Arc;

use ipnet::Ipv4Net;
use rand::seq::SliceRandom;
use rand::Rng;

use edge_session::filter::{Action, FilterRule, RuleSet};
use edge_session::matcher::{FlowMatch, PortMatch};
use edge_session::nat::NatConfig;
use edge_session::packet::{parse_trace, Packet, SessionId, TcpFlags, PROTO_TCP, PROTO_UDP};
use edge_session::qos::{QosPolicy, QosRule};
use edge_session::routing::{NextHop, RouteEntry, RoutingTable};
use edge_session::session::Timeouts;
use edge_session::RouterConfig;

// ---------------------------------------------------------------- oracles

fn mask(len: u8) -> u32 {
    if len == 0 {
        0
    } else {
        u32::MAX << (32 - len)
    }
}

pub fn covers(net: &Ipv4Net, addr: Ipv4Addr) -> bool {
    let m = mask(net.prefix_len());
    u32::from(addr) & m == u32::from(net.network()) & m
}

fn port_ok(pm: &PortMatch, port: u16) -> bool {
    match *pm {
        PortMatch::Any => true,
        PortMatch::Range(lo, hi) => lo <= port && port <= hi,
    }
}

pub fn flow_ok(f: &FlowMatch, sid: &SessionId) -> bool {
    if let Some(p) = f.proto {
        if p != sid.proto {
            return false;
        }
    }
    if let Some(n) = &f.src {
        if !covers(n, sid.src_addr) {
            return false;
        }
    }
    if let Some(n) = &f.dst {
        if !covers(n, sid.dst_addr) {
            return false;
        }
    }
    port_ok(&f.src_ports, sid.src_port) && port_ok(&f.dst_ports, sid.dst_port)
}

/// First matching rule, default deny.
pub fn filter_oracle(rules: &[FilterRule], sid: &SessionId) -> (Action, Option<usize>) {
    for (i, r) in rules.iter().enumerate() {
        if flow_ok(&r.flow, sid) {
            return (r.action, Some(i));
        }
    }
    (Action::Drop, None)
}

pub fn qos_oracle(rules: &[QosRule], sid: &SessionId) -> u8 {
    for r in rules {
        if flow_ok(&r.flow, sid) {
            return r.dscp;
        }
    }
    0
}

/// Longest covering prefix by exhaustive scan.
pub fn lpm_oracle(routes: &[RouteEntry], addr: Ipv4Addr) -> Option<RouteEntry> {
    let mut best: Option<RouteEntry> = None;
    for r in routes {
        if covers(&r.prefix, addr)
            && best.is_none_or(|b| r.prefix.prefix_len() > b.prefix.prefix_len())
        {
            best = Some(*r);
        }
    }
    best
}

// ------------------------------------------------------------- generators

pub fn ip(s: &str) -> Ipv4Addr {
    s.parse().unwrap()
}

pub fn net(s: &str) -> Ipv4Net {
    s.parse().unwrap()
}

pub fn hop(addr: &str, iface: &str) -> NextHop {
    NextHop {
        addr: ip(addr),
        iface: iface.parse().unwrap(),
    }
}

/// Addresses drawn from a few small clusters so prefixes actually overlap.
pub fn clustered_addr(rng: &mut impl Rng) -> Ipv4Addr {
    const BASES: [u32; 4] = [0x0A01_0000, 0xC633_6400, 0xCB00_7100, 0x0808_0800];
    let base = *BASES.choose(rng).unwrap();
    Ipv4Addr::from(base | rng.gen_range(0..512u32))
}

pub fn random_prefix(rng: &mut impl Rng) -> Ipv4Net {
    let len = rng.gen_range(0..=32u8);
    Ipv4Net::new(clustered_addr(rng), len).unwrap().trunc()
}

fn random_ports(rng: &mut impl Rng) -> PortMatch {
    if rng.gen_bool(0.5) {
        PortMatch::Any
    } else {
        let a = *[53u16, 80, 443, 1024, 5060, 40000].choose(rng).unwrap();
        let b = a.saturating_add(*[0u16, 1, 100, 30000].choose(rng).unwrap());
        PortMatch::Range(a, b)
    }
}

pub fn random_flow(rng: &mut impl Rng) -> FlowMatch {
    FlowMatch {
        proto: *[None, Some(PROTO_TCP), Some(PROTO_UDP)]
            .choose(rng)
            .unwrap(),
        src: rng.gen_bool(0.5).then(|| random_prefix(rng)),
        src_ports: random_ports(rng),
        dst: rng.gen_bool(0.5).then(|| random_prefix(rng)),
        dst_ports: random_ports(rng),
    }
}

pub fn random_rules(rng: &mut impl Rng, n: usize) -> Vec<FilterRule> {
    (0..n)
        .map(|_| FilterRule {
            action: if rng.gen_bool(0.6) {
                Action::Accept
            } else {
                Action::Drop
            },
            flow: random_flow(rng),
        })
        .collect()
}

pub fn random_sid(rng: &mut impl Rng) -> SessionId {
    let port = |rng: &mut _| {
        *[53u16, 80, 443, 1024, 5060, 40000, 65535]
            .choose(rng)
            .unwrap()
    };
    SessionId::new(
        clustered_addr(rng),
        port(rng),
        clustered_addr(rng),
        port(rng),
        *[PROTO_TCP, PROTO_UDP].choose(rng).unwrap(),
    )
}

pub fn random_routes(rng: &mut impl Rng, n: usize) -> Vec<RouteEntry> {
    let mut rt = RoutingTable::new();
    for _ in 0..n {
        let _ = rt.insert(RouteEntry {
            prefix: random_prefix(rng),
            next_hop: NextHop {
                addr: clustered_addr(rng),
                iface: ["wan", "lan", "dmz"].choose(rng).unwrap().parse().unwrap(),
            },
        });
    }
    rt.routes().to_vec()
}

/// A configuration built to hit every drop path: partial route coverage,
/// deny rules, tiny NAT pools, tiny tables and short timeouts.
pub fn random_config(rng: &mut impl Rng) -> RouterConfig {
    let lan = net("10.1.0.0/24");
    let mut rules = Vec::new();
    for _ in 0..rng.gen_range(0..6) {
        rules.push(FilterRule {
            action: Action::Drop,
            flow: FlowMatch {
                proto: *[None, Some(PROTO_TCP), Some(PROTO_UDP)]
                    .choose(rng)
                    .unwrap(),
                src: rng.gen_bool(0.5).then(|| net("10.1.0.0/25")),
                src_ports: PortMatch::Any,
                dst: None,
                dst_ports: *[
                    PortMatch::Range(22, 22),
                    PortMatch::Range(53, 123),
                    PortMatch::Any,
                ]
                .choose(rng)
                .unwrap(),
            },
        });
        if rng.gen_bool(0.3) {
            rules.push(FilterRule {
                action: Action::Accept,
                flow: FlowMatch::ANY,
            });
        }
    }
    if rng.gen_bool(0.9) {
        rules.push(FilterRule {
            action: Action::Accept,
            flow: FlowMatch::ANY,
        });
    }

    let mut routes = RoutingTable::new();
    if rng.gen_bool(0.8) {
        routes
            .insert(RouteEntry {
                prefix: net("0.0.0.0/0"),
                next_hop: hop("203.0.113.1", "wan"),
            })
            .unwrap();
    } else {
        routes
            .insert(RouteEntry {
                prefix: net("198.51.100.0/24"),
                next_hop: hop("203.0.113.1", "wan"),
            })
            .unwrap();
    }
    if rng.gen_bool(0.9) {
        routes
            .insert(RouteEntry {
                prefix: lan,
                next_hop: hop("10.1.0.254", "lan"),
            })
            .unwrap();
    }
    if rng.gen_bool(0.5) {
        routes
            .insert(RouteEntry {
                prefix: net("10.1.0.128/25"),
                next_hop: hop("10.1.0.253", "lan2"),
            })
            .unwrap();
    }

    let qos = QosPolicy::new(
        (0..rng.gen_range(0..5))
            .map(|_| QosRule {
                flow: FlowMatch {
                    proto: *[None, Some(PROTO_TCP), Some(PROTO_UDP)]
                        .choose(rng)
                        .unwrap(),
                    src: None,
                    src_ports: PortMatch::Any,
                    dst: None,
                    dst_ports: random_ports(rng),
                },
                dscp: rng.gen_range(0..64),
            })
            .collect(),
    );

    let pool = *[2u16, 8, 64, 1000].choose(rng).unwrap();
    let timeouts = if rng.gen_bool(0.5) {
        Timeouts::default()
    } else {
        Timeouts {
            tcp_established: rng.gen_range(0.05..2.0),
            tcp_transitory: rng.gen_range(0.02..1.0),
            other: rng.gen_range(0.05..2.0),
            rst_grace: rng.gen_range(0.01..0.5),
        }
    };
    let cfg = RouterConfig {
        lan_prefix: lan,
        rules: RuleSet::new(rules),
        routes,
        nat: NatConfig::new(ip("192.0.2.1"), 40000, 40000 + pool - 1).unwrap(),
        qos,
        timeouts,
        capacity: *[4usize, 32, 500, 65_536].choose(rng).unwrap(),
    };
    cfg.validate().unwrap();
    cfg
}

/// Roughen a well-formed trace: flip flags, drop and duplicate packets,
/// inject strangers, starve TTLs and open time gaps. Timestamps stay
/// non-decreasing.
pub fn mutate_trace(rng: &mut impl Rng, packets: &[Packet]) -> Vec<Packet> {
    let mut out = Vec::with_capacity(packets.len() + packets.len() / 20);
    let mut shift = 0.0;
    for p in packets {
        let mut q = *p;
        let roll = rng.gen_range(0..1000);
        if roll < 20 {
            continue;
        }
        if roll < 25 {
            shift += rng.gen_range(0.1..3.0);
        }
        q.ts += shift;
        if q.sid.proto == PROTO_TCP && roll < 60 {
            q.flags = TcpFlags::from_bits(rng.gen_range(0..16));
        }
        if (60..70).contains(&roll) {
            q.ttl = rng.gen_range(1..=2);
        }
        if (70..75).contains(&roll) {
            q.tos = rng.gen();
        }
        out.push(q);
        if (75..85).contains(&roll) {
            out.push(q);
        }
        if (85..95).contains(&roll) {
            // A stranger probing the public address or the LAN.
            let mut s = q;
            s.sid = SessionId::new(
                *[ip("198.51.100.9"), ip("203.0.113.50"), ip("10.1.0.7")]
                    .choose(rng)
                    .unwrap(),
                *[80u16, 53, 443].choose(rng).unwrap(),
                *[ip("192.0.2.1"), ip("10.1.0.9")].choose(rng).unwrap(),
                rng.gen_range(39998..40010),
                q.sid.proto,
            );
            if s.sid.proto != PROTO_TCP {
                s.flags = TcpFlags::NONE;
            }
            out.push(s);
        }
    }
    out
}

// ----------------------------------------------------------- corner cases

pub struct Corner {
    pub name: &'static str,
    pub cfg: RouterConfig,
    pub trace: Vec<Packet>,
}

fn corner(name: &'static str, cfg: RouterConfig, trace: &str) -> Corner {
    Corner {
        name,
        cfg,
        trace: parse_trace(trace).unwrap_or_else(|e| panic!("{name}: {e}")),
    }
}

fn with_rules(text: &str) -> RouterConfig {
    RouterConfig {
        rules: edge_session::filter::parse_rules(text).unwrap(),
        ..RouterConfig::default()
    }
}

fn with_routes(text: &str) -> RouterConfig {
    RouterConfig {
        routes: edge_session::routing::parse_routes(text).unwrap(),
        ..RouterConfig::default()
    }
}

fn with_pool(lo: u16, hi: u16) -> RouterConfig {
    RouterConfig {
        nat: NatConfig::new(ip("192.0.2.1"), lo, hi).unwrap(),
        ..RouterConfig::default()
    }
}

fn with_capacity(n: usize) -> RouterConfig {
    RouterConfig {
        capacity: n,
        ..RouterConfig::default()
    }
}

pub fn corner_cases() -> Vec<Corner> {
    vec![
        corner(
            "rule denies first packet",
            with_rules("drop tcp any any any 23\naccept any any any any any\n"),
            "0 tcp 10.0.0.5:1000 198.51.100.9:23 S 0
             0.1 tcp 10.0.0.5:1000 198.51.100.9:23 S 0
             0.2 tcp 198.51.100.9:23 192.0.2.1:40000 SA 0
             0.3 tcp 10.0.0.5:1001 198.51.100.9:80 S 0",
        ),
        corner(
            "default deny with empty rule set",
            with_rules(""),
            "0 udp 10.0.0.5:1000 8.8.8.8:53 - 40
             1 udp 8.8.8.8:53 192.0.2.1:40000 - 80",
        ),
        corner(
            "data before handshake",
            RouterConfig::default(),
            "0 tcp 10.0.0.5:1000 198.51.100.9:80 A 100
             0.1 tcp 10.0.0.5:1000 198.51.100.9:80 SA 0
             0.2 tcp 10.0.0.5:1000 198.51.100.9:80 S 0",
        ),
        corner(
            "handshake violations",
            RouterConfig::default(),
            "0 tcp 10.0.0.5:1000 198.51.100.9:80 S 0
             0.1 tcp 10.0.0.5:1000 198.51.100.9:80 A 0
             0.2 tcp 198.51.100.9:80 192.0.2.1:40000 A 0
             0.3 tcp 198.51.100.9:80 192.0.2.1:40000 SA 0
             0.4 tcp 198.51.100.9:80 192.0.2.1:40000 SA 0
             0.5 tcp 10.0.0.5:1000 198.51.100.9:80 A 0
             0.6 tcp 10.0.0.5:1000 198.51.100.9:80 S 0
             0.7 tcp 198.51.100.9:80 192.0.2.1:40000 SA 0",
        ),
        corner(
            "ttl expiry on first and later packets",
            RouterConfig::default(),
            "0 udp 10.0.0.5:1000 8.8.8.8:53 - 40 0 1
             0.1 udp 8.8.8.8:53 192.0.2.1:40000 - 80 0 2
             0.2 udp 8.8.8.8:53 192.0.2.1:40000 - 80 0 1
             0.3 udp 10.0.0.5:1000 8.8.8.8:53 - 40 184 64",
        ),
        corner(
            "nat pool exhaustion",
            with_pool(40000, 40001),
            "0 tcp 10.0.0.5:1000 198.51.100.9:80 S 0
             0.1 tcp 10.0.0.6:1000 198.51.100.9:80 S 0
             0.2 tcp 10.0.0.7:1000 198.51.100.9:80 S 0
             0.3 tcp 10.0.0.7:1000 198.51.100.10:80 S 0
             0.4 tcp 198.51.100.9:80 192.0.2.1:40001 SA 0
             0.5 tcp 198.51.100.10:80 192.0.2.1:40000 SA 0
             31 tcp 10.0.0.7:1000 198.51.100.9:80 S 0",
        ),
        corner(
            "portless protocol shares port zero",
            RouterConfig::default(),
            "0 1 10.0.0.5:0 198.51.100.9:0 - 56
             0.1 1 10.0.0.6:0 198.51.100.9:0 - 56
             0.2 1 198.51.100.9:0 192.0.2.1:0 - 56
             0.3 1 10.0.0.6:0 198.51.100.10:0 - 56",
        ),
        corner(
            "no route outward",
            with_routes("10.0.0.0/8 10.0.0.254 lan\n"),
            "0 udp 10.0.0.5:1000 8.8.8.8:53 - 40
             0.1 udp 8.8.8.8:53 192.0.2.1:40000 - 80
             0.2 udp 10.0.0.5:1000 8.8.8.8:53 - 40",
        ),
        corner(
            "no route back to the LAN",
            with_routes("8.0.0.0/8 203.0.113.1 wan\n198.51.100.0/24 203.0.113.1 wan\n"),
            "0 udp 10.0.0.5:1000 8.8.8.8:53 - 40
             0.1 udp 8.8.8.8:53 192.0.2.1:40000 - 80
             0.2 udp 10.0.0.5:1000 198.51.100.9:53 - 40",
        ),
        corner(
            "longest prefix wins",
            with_routes(
                "0.0.0.0/0 203.0.113.1 wan\n198.51.100.0/24 203.0.113.2 wan2\n10.0.0.0/8 10.0.0.254 lan\n10.0.0.0/30 10.0.0.253 lan2\n",
            ),
            "0 udp 10.0.0.1:1000 198.51.100.9:53 - 40
             0.1 udp 10.0.0.5:1000 8.8.8.8:53 - 40
             0.2 udp 198.51.100.9:53 192.0.2.1:40000 - 80
             0.3 udp 8.8.8.8:53 192.0.2.1:40000 - 80",
        ),
        corner(
            "table full then space after expiry",
            with_capacity(2),
            "0 udp 10.0.0.5:1000 8.8.8.8:53 - 40
             1 udp 10.0.0.5:1001 8.8.8.8:53 - 40
             2 udp 10.0.0.5:1002 8.8.8.8:53 - 40
             3 udp 8.8.8.8:53 192.0.2.1:40002 - 80
             61 udp 10.0.0.5:1002 8.8.8.8:53 - 40
             61.5 udp 8.8.8.8:53 192.0.2.1:40000 - 80
             62 udp 10.0.0.5:1003 8.8.8.8:53 - 40",
        ),
        corner(
            "table full does not leak a port",
            with_capacity(1),
            "0 udp 10.0.0.5:1000 8.8.8.8:53 - 40
             0.5 udp 10.0.0.5:1001 8.8.8.8:53 - 40
             61 udp 10.0.0.5:1002 8.8.8.8:53 - 40
             61.1 udp 8.8.8.8:53 192.0.2.1:40000 - 80",
        ),
        corner(
            "idle gap re-opens session",
            RouterConfig::default(),
            "0 udp 10.0.0.5:1000 8.8.8.8:53 - 40
             0.1 udp 10.0.0.6:1000 8.8.8.8:53 - 40
             59 udp 10.0.0.6:1000 8.8.8.8:53 - 40
             60 udp 8.8.8.8:53 192.0.2.1:40000 - 80
             60.5 udp 10.0.0.7:1000 8.8.8.8:53 - 40
             61 udp 8.8.8.8:53 192.0.2.1:40000 - 80",
        ),
        corner(
            "expiry boundary is exclusive",
            RouterConfig::default(),
            "0 tcp 10.0.0.5:1000 198.51.100.9:80 S 0
             30 tcp 198.51.100.9:80 192.0.2.1:40000 SA 0
             30 tcp 10.0.0.5:1000 198.51.100.9:80 S 0
             59.999 tcp 198.51.100.9:80 192.0.2.1:40000 SA 0",
        ),
        corner(
            "reset grace period",
            RouterConfig::default(),
            "0 tcp 10.0.0.5:1000 198.51.100.9:80 S 0
             0.1 tcp 198.51.100.9:80 192.0.2.1:40000 SA 0
             0.2 tcp 10.0.0.5:1000 198.51.100.9:80 A 0
             1 tcp 198.51.100.9:80 192.0.2.1:40000 R 0
             3 tcp 10.0.0.5:1000 198.51.100.9:80 S 0
             6 tcp 10.0.0.5:1000 198.51.100.9:80 S 0
             6.1 tcp 198.51.100.9:80 192.0.2.1:40000 SAR 0
             6.2 tcp 10.0.0.5:1000 198.51.100.9:80 A 0",
        ),
        corner(
            "full close then reuse",
            RouterConfig::default(),
            "0 tcp 10.0.0.5:1000 198.51.100.9:80 S 0
             0.1 tcp 198.51.100.9:80 192.0.2.1:40000 SA 0
             0.2 tcp 10.0.0.5:1000 198.51.100.9:80 A 0
             0.3 tcp 10.0.0.5:1000 198.51.100.9:80 AF 0
             0.4 tcp 10.0.0.5:1000 198.51.100.9:80 AF 0
             0.5 tcp 198.51.100.9:80 192.0.2.1:40000 A 10
             0.6 tcp 198.51.100.9:80 192.0.2.1:40000 AF 0
             0.7 tcp 10.0.0.5:1000 198.51.100.9:80 A 0
             0.8 tcp 10.0.0.5:1000 198.51.100.9:80 S 0
             31 tcp 10.0.0.5:1000 198.51.100.9:80 S 0",
        ),
        corner(
            "lan to lan without translation",
            RouterConfig::default(),
            "0 tcp 10.0.0.5:1000 10.0.0.9:22 S 0
             0.1 tcp 10.0.0.9:22 10.0.0.5:1000 SA 0
             0.2 tcp 10.0.0.5:1000 10.0.0.9:22 A 0
             0.3 tcp 10.0.0.9:22 10.0.0.5:1000 A 200
             0.4 tcp 10.0.0.9:22 10.0.0.5:1001 A 200
             0.5 udp 10.0.0.9:5060 10.0.0.5:1000 - 20",
        ),
        corner(
            "marking keeps ecn bits",
            RouterConfig::default(),
            "0 udp 10.0.0.5:1000 198.51.100.9:5060 - 40 3 64
             0.1 udp 198.51.100.9:5060 192.0.2.1:40000 - 80 255 64
             0.2 tcp 10.0.0.5:1000 198.51.100.9:443 S 0 1 64
             0.3 tcp 198.51.100.9:443 192.0.2.1:40000 SA 0 2 64",
        ),
        corner(
            "strangers at the gateway",
            RouterConfig::default(),
            "0 udp 10.0.0.5:1000 8.8.8.8:53 - 40
             0.1 udp 8.8.8.8:54 192.0.2.1:40000 - 80
             0.2 udp 8.8.4.4:53 192.0.2.1:40000 - 80
             0.3 tcp 8.8.8.8:53 192.0.2.1:40000 SA 0
             0.4 udp 8.8.8.8:53 192.0.2.1:40001 - 80
             0.5 udp 8.8.8.8:53 192.0.2.2:40000 - 80",
        ),
        corner(
            "stale port reused by the next flow",
            with_pool(40000, 40000),
            "0 udp 10.0.0.5:1000 8.8.8.8:53 - 40
             60 udp 10.0.0.6:1000 8.8.8.8:53 - 40
             60.1 udp 8.8.8.8:53 192.0.2.1:40000 - 80
             60.2 udp 10.0.0.5:1000 8.8.8.8:53 - 40
             60.3 udp 10.0.0.5:1000 8.8.4.4:53 - 40",
        ),
    ]
}

pub fn arc(cfg: RouterConfig) -> Arc<RouterConfig> {
    Arc::new(cfg)
}
