//! Synthetic traces.
//!
//! Every session follows a fixed script. TCP: SYN out, SYN+ACK in, ACK out,
//! then data alternating out/in, and when at least seven packets are
//! requested the last three are FIN+ACK out, FIN+ACK in, ACK out. UDP:
//! datagrams alternating out/in. Sessions are interleaved round-robin, so
//! every session opens in the first round and the trace is fully determined
//! by the spec and its seed.
//!
//! Inbound packets are addressed to the public port the gateway will pick
//! for the session under lowest-free allocation and an accept-all rule set.

use std::collections::{HashMap, HashSet};
use std::net::Ipv4Addr;

use ipnet::Ipv4Net;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::nat::NatConfig;
use crate::packet::{render_trace, Packet, SessionId, TcpFlags, DEFAULT_TTL, PROTO_TCP, PROTO_UDP};

const TCP_SERVICES: [u16; 5] = [80, 443, 22, 25, 8080];
const UDP_SERVICES: [u16; 4] = [53, 123, 5060, 4500];

#[derive(Debug, Clone, PartialEq)]
pub struct TraceSpec {
    pub session_count: usize,
    pub packets_per_session: usize,
    /// Probability that a session is TCP rather than UDP.
    pub tcp_fraction: f64,
    pub lan_prefix: Ipv4Net,
    pub peer_pool: Vec<Ipv4Addr>,
    /// Gateway the replies are addressed to.
    pub nat: NatConfig,
    pub seed: u64,
}

impl Default for TraceSpec {
    fn default() -> Self {
        TraceSpec {
            session_count: 10,
            packets_per_session: 1000,
            tcp_fraction: 0.5,
            lan_prefix: "10.0.0.0/8".parse().unwrap(),
            peer_pool: vec![
                Ipv4Addr::new(198, 51, 100, 9),
                Ipv4Addr::new(198, 51, 100, 10),
                Ipv4Addr::new(203, 0, 113, 50),
                Ipv4Addr::new(8, 8, 8, 8),
            ],
            nat: NatConfig::default(),
            seed: 1,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TraceSpecError {
    #[error("peer pool is empty")]
    NoPeers,
    #[error("session count and packets per session must be positive")]
    Empty,
    #[error("tcp fraction must lie in [0, 1]")]
    BadMix,
    #[error("LAN prefix too small for {0} distinct sessions")]
    TooManySessions(usize),
}

struct Script {
    lan: (Ipv4Addr, u16),
    peer: (Ipv4Addr, u16),
    /// Where replies are addressed: the gateway, or the LAN host itself for
    /// LAN-to-LAN sessions.
    reply_to: (Ipv4Addr, u16),
    proto: u8,
}

impl Script {
    fn packet(&self, index: usize, total: usize, rng: &mut ChaCha8Rng) -> Packet {
        let (outbound, flags, payload) = if self.proto == PROTO_TCP {
            let closing = total >= 7;
            let data = |rng: &mut ChaCha8Rng| rng.gen_range(1..=1460);
            match index {
                0 => (true, TcpFlags::SYN, 0),
                1 => (false, TcpFlags::SYN_ACK, 0),
                2 => (true, TcpFlags::ACK, 0),
                i if closing && i == total - 3 => (true, TcpFlags::FIN_ACK, 0),
                i if closing && i == total - 2 => (false, TcpFlags::FIN_ACK, 0),
                i if closing && i == total - 1 => (true, TcpFlags::ACK, 0),
                i => ((i - 3).is_multiple_of(2), TcpFlags::ACK, data(rng)),
            }
        } else {
            (index.is_multiple_of(2), TcpFlags::NONE, rng.gen_range(1..=512))
        };
        let sid = if outbound {
            SessionId::new(self.lan.0, self.lan.1, self.peer.0, self.peer.1, self.proto)
        } else {
            SessionId::new(
                self.peer.0,
                self.peer.1,
                self.reply_to.0,
                self.reply_to.1,
                self.proto,
            )
        };
        Packet {
            ts: 0.0,
            sid,
            tos: 0,
            ttl: DEFAULT_TTL,
            flags,
            payload_len: payload,
        }
    }
}

fn random_host(prefix: &Ipv4Net, rng: &mut ChaCha8Rng) -> Ipv4Addr {
    let base = u32::from(prefix.network());
    let size = 1u64 << (32 - prefix.prefix_len());
    // Skip network and broadcast addresses when there is room to.
    let offset = if size >= 4 {
        rng.gen_range(1..size - 1)
    } else {
        rng.gen_range(0..size)
    };
    Ipv4Addr::from(base.wrapping_add(offset as u32))
}

pub fn generate_packets(spec: &TraceSpec) -> Result<Vec<Packet>, TraceSpecError> {
    if spec.peer_pool.is_empty() {
        return Err(TraceSpecError::NoPeers);
    }
    if spec.session_count == 0 || spec.packets_per_session == 0 {
        return Err(TraceSpecError::Empty);
    }
    if !(0.0..=1.0).contains(&spec.tcp_fraction) {
        return Err(TraceSpecError::BadMix);
    }
    // Each host offers ~64k source ports; refuse only hopeless requests.
    let hosts = 1u64 << (32 - spec.lan_prefix.prefix_len());
    if (spec.session_count as u64) > hosts * 32_000 {
        return Err(TraceSpecError::TooManySessions(spec.session_count));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut seen = HashSet::new();
    let mut per_peer: HashMap<(Ipv4Addr, u16, u8), u32> = HashMap::new();
    let mut scripts = Vec::with_capacity(spec.session_count);
    for _ in 0..spec.session_count {
        let proto = if rng.gen_bool(spec.tcp_fraction) {
            PROTO_TCP
        } else {
            PROTO_UDP
        };
        let services: &[u16] = if proto == PROTO_TCP {
            &TCP_SERVICES
        } else {
            &UDP_SERVICES
        };
        let (lan, peer) = loop {
            let lan = (
                random_host(&spec.lan_prefix, &mut rng),
                rng.gen_range(1024..=65535),
            );
            let peer = (
                *spec.peer_pool.choose(&mut rng).unwrap(),
                *services.choose(&mut rng).unwrap(),
            );
            // The reverse tuple matters too: a LAN peer must not reuse an
            // existing initiator's five-tuple backwards.
            let sid = SessionId::new(lan.0, lan.1, peer.0, peer.1, proto);
            if lan.0 != peer.0 && !seen.contains(&sid) && !seen.contains(&sid.reflect()) {
                seen.insert(sid);
                break (lan, peer);
            }
        };
        let reply_to = if spec.lan_prefix.contains(&peer.0) {
            lan
        } else {
            let k = per_peer.entry((peer.0, peer.1, proto)).or_default();
            let port = (u32::from(spec.nat.port_lo) + *k).min(u32::from(spec.nat.port_hi));
            *k += 1;
            (spec.nat.public_addr, port as u16)
        };
        scripts.push(Script {
            lan,
            peer,
            reply_to,
            proto,
        });
    }

    let mut packets = Vec::with_capacity(spec.session_count * spec.packets_per_session);
    let mut micros: u64 = 0;
    for round in 0..spec.packets_per_session {
        for script in &scripts {
            let mut p = script.packet(round, spec.packets_per_session, &mut rng);
            p.ts = micros as f64 / 1e6;
            packets.push(p);
            micros += rng.gen_range(500..=1500);
        }
    }
    Ok(packets)
}

pub fn generate_trace(spec: &TraceSpec) -> Result<String, TraceSpecError> {
    generate_packets(spec).map(|p| render_trace(&p))
}
