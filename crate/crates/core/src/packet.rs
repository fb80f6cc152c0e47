//! Packets, five-tuples and the line-oriented trace format.
//!
//! A trace record is one whitespace-separated line:
//!
//! ```text
//! ts proto src_ip:src_port dst_ip:dst_port flags payload_len [tos [ttl]]
//! ```
//!
//! `proto` is `tcp`, `udp` or a decimal protocol number. `flags` is `-` or a
//! subset of `SAFR` written in that order. `tos` defaults to 0 and `ttl` to 64.

use std::fmt;
use std::net::Ipv4Addr;

use ipnet::Ipv4Net;
use thiserror::Error;

pub const PROTO_TCP: u8 = 6;
pub const PROTO_UDP: u8 = 17;

pub const DEFAULT_TTL: u8 = 64;

/// Whether `proto` carries 16-bit ports in its header.
pub fn has_ports(proto: u8) -> bool {
    proto == PROTO_TCP || proto == PROTO_UDP
}

/// The five-tuple selector identifying a flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SessionId {
    pub src_addr: Ipv4Addr,
    pub src_port: u16,
    pub dst_addr: Ipv4Addr,
    pub dst_port: u16,
    pub proto: u8,
}

impl SessionId {
    pub fn new(
        src_addr: Ipv4Addr,
        src_port: u16,
        dst_addr: Ipv4Addr,
        dst_port: u16,
        proto: u8,
    ) -> Self {
        SessionId {
            src_addr,
            src_port,
            dst_addr,
            dst_port,
            proto,
        }
    }

    /// Swap source and destination.
    pub fn reflect(&self) -> Self {
        SessionId {
            src_addr: self.dst_addr,
            src_port: self.dst_port,
            dst_addr: self.src_addr,
            dst_port: self.src_port,
            proto: self.proto,
        }
    }
}

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}:{} -> {}:{}",
            proto_name(self.proto),
            self.src_addr,
            self.src_port,
            self.dst_addr,
            self.dst_port
        )
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct TcpFlags {
    pub syn: bool,
    pub ack: bool,
    pub fin: bool,
    pub rst: bool,
}

impl TcpFlags {
    pub const NONE: TcpFlags = TcpFlags {
        syn: false,
        ack: false,
        fin: false,
        rst: false,
    };
    pub const SYN: TcpFlags = TcpFlags {
        syn: true,
        ..TcpFlags::NONE
    };
    pub const ACK: TcpFlags = TcpFlags {
        ack: true,
        ..TcpFlags::NONE
    };
    pub const SYN_ACK: TcpFlags = TcpFlags {
        syn: true,
        ack: true,
        ..TcpFlags::NONE
    };
    pub const FIN_ACK: TcpFlags = TcpFlags {
        fin: true,
        ack: true,
        ..TcpFlags::NONE
    };
    pub const RST: TcpFlags = TcpFlags {
        rst: true,
        ..TcpFlags::NONE
    };

    /// Decode from a 4-bit mask: bit 0 = SYN, 1 = ACK, 2 = FIN, 3 = RST.
    pub fn from_bits(bits: u8) -> Self {
        TcpFlags {
            syn: bits & 1 != 0,
            ack: bits & 2 != 0,
            fin: bits & 4 != 0,
            rst: bits & 8 != 0,
        }
    }

    pub fn bits(&self) -> u8 {
        self.syn as u8 | (self.ack as u8) << 1 | (self.fin as u8) << 2 | (self.rst as u8) << 3
    }

    pub fn is_empty(&self) -> bool {
        *self == TcpFlags::NONE
    }
}

impl fmt::Display for TcpFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return f.write_str("-");
        }
        for (set, letter) in [
            (self.syn, 'S'),
            (self.ack, 'A'),
            (self.fin, 'F'),
            (self.rst, 'R'),
        ] {
            if set {
                write!(f, "{letter}")?;
            }
        }
        Ok(())
    }
}

/// One IPv4 datagram as seen by the router.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Packet {
    /// Logical arrival time in seconds.
    pub ts: f64,
    pub sid: SessionId,
    /// Type-of-Service byte: DSCP in the upper six bits, ECN in the lower two.
    pub tos: u8,
    pub ttl: u8,
    pub flags: TcpFlags,
    pub payload_len: u16,
}

impl Packet {
    pub fn dscp(&self) -> u8 {
        self.tos >> 2
    }

    pub fn ecn(&self) -> u8 {
        self.tos & 0b11
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    Outbound,
    Inbound,
}

impl Direction {
    pub fn opposite(self) -> Self {
        match self {
            Direction::Outbound => Direction::Inbound,
            Direction::Inbound => Direction::Outbound,
        }
    }
}

/// Outbound iff the source address lies inside the protected network.
pub fn classify_direction(p: &Packet, lan_prefix: &Ipv4Net) -> Direction {
    if lan_prefix.contains(&p.sid.src_addr) {
        Direction::Outbound
    } else {
        Direction::Inbound
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("dscp {0} does not fit in six bits")]
pub struct DscpOutOfRange(pub u8);

/// Write `dscp` into the upper six bits of the ToS byte, keeping ECN.
pub fn set_dscp(p: &Packet, dscp: u8) -> Result<Packet, DscpOutOfRange> {
    if dscp > 63 {
        return Err(DscpOutOfRange(dscp));
    }
    Ok(Packet {
        tos: dscp << 2 | p.ecn(),
        ..*p
    })
}

/// Columns of a trace record, used to point at the offending field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Column {
    Ts,
    Proto,
    Src,
    Dst,
    Flags,
    PayloadLen,
    Tos,
    Ttl,
}

impl fmt::Display for Column {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Column::Ts => "ts",
            Column::Proto => "proto",
            Column::Src => "src",
            Column::Dst => "dst",
            Column::Flags => "flags",
            Column::PayloadLen => "payload_len",
            Column::Tos => "tos",
            Column::Ttl => "ttl",
        })
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RecordError {
    #[error("expected 6 to 8 columns, found {0}")]
    ColumnCount(usize),
    #[error("column {column}: {reason}")]
    Field { column: Column, reason: String },
}

fn field_err(column: Column, reason: impl Into<String>) -> RecordError {
    RecordError::Field {
        column,
        reason: reason.into(),
    }
}

pub fn proto_name(proto: u8) -> String {
    match proto {
        PROTO_TCP => "tcp".to_string(),
        PROTO_UDP => "udp".to_string(),
        n => n.to_string(),
    }
}

pub fn parse_proto(s: &str) -> Option<u8> {
    match s {
        "tcp" => Some(PROTO_TCP),
        "udp" => Some(PROTO_UDP),
        _ => s.parse().ok(),
    }
}

fn parse_endpoint(s: &str, column: Column) -> Result<(Ipv4Addr, u16), RecordError> {
    let (ip, port) = s
        .rsplit_once(':')
        .ok_or_else(|| field_err(column, format!("`{s}` is not ip:port")))?;
    let ip = ip
        .parse()
        .map_err(|_| field_err(column, format!("bad address `{ip}`")))?;
    let port = port
        .parse::<u16>()
        .map_err(|_| field_err(column, format!("port `{port}` out of range")))?;
    Ok((ip, port))
}

fn parse_flags(s: &str) -> Result<TcpFlags, RecordError> {
    let mut flags = TcpFlags::NONE;
    if s == "-" {
        return Ok(flags);
    }
    // Letters must appear in S, A, F, R order, each at most once.
    let mut rank = 0;
    for c in s.chars() {
        let (slot, r) = match c {
            'S' => (&mut flags.syn, 1),
            'A' => (&mut flags.ack, 2),
            'F' => (&mut flags.fin, 3),
            'R' => (&mut flags.rst, 4),
            _ => return Err(field_err(Column::Flags, format!("unknown flag `{c}`"))),
        };
        if r <= rank {
            return Err(field_err(
                Column::Flags,
                format!("flags `{s}` not in SAFR order"),
            ));
        }
        rank = r;
        *slot = true;
    }
    if flags.is_empty() {
        return Err(field_err(Column::Flags, "empty flags, use `-`"));
    }
    Ok(flags)
}

/// Parse one trace line into a packet.
pub fn parse_trace_record(line: &str) -> Result<Packet, RecordError> {
    let cols: Vec<&str> = line.split_whitespace().collect();
    if !(6..=8).contains(&cols.len()) {
        return Err(RecordError::ColumnCount(cols.len()));
    }

    let ts: f64 = cols[0]
        .parse()
        .map_err(|_| field_err(Column::Ts, format!("bad timestamp `{}`", cols[0])))?;
    if !ts.is_finite() || ts < 0.0 {
        return Err(field_err(
            Column::Ts,
            "timestamp must be finite and non-negative",
        ));
    }
    let proto = parse_proto(cols[1])
        .ok_or_else(|| field_err(Column::Proto, format!("unknown protocol `{}`", cols[1])))?;
    let (src_addr, src_port) = parse_endpoint(cols[2], Column::Src)?;
    let (dst_addr, dst_port) = parse_endpoint(cols[3], Column::Dst)?;
    if !has_ports(proto) {
        if src_port != 0 {
            return Err(field_err(
                Column::Src,
                "port must be 0 for a portless protocol",
            ));
        }
        if dst_port != 0 {
            return Err(field_err(
                Column::Dst,
                "port must be 0 for a portless protocol",
            ));
        }
    }
    let flags = parse_flags(cols[4])?;
    if proto != PROTO_TCP && !flags.is_empty() {
        return Err(field_err(Column::Flags, "flags are only valid on tcp"));
    }
    let payload_len = cols[5]
        .parse()
        .map_err(|_| field_err(Column::PayloadLen, format!("bad length `{}`", cols[5])))?;
    let tos = match cols.get(6) {
        Some(s) => s
            .parse()
            .map_err(|_| field_err(Column::Tos, format!("bad tos `{s}`")))?,
        None => 0,
    };
    let ttl = match cols.get(7) {
        Some(s) => s
            .parse()
            .map_err(|_| field_err(Column::Ttl, format!("bad ttl `{s}`")))?,
        None => DEFAULT_TTL,
    };
    if ttl == 0 {
        return Err(field_err(Column::Ttl, "ttl 0 packets cannot arrive"));
    }

    Ok(Packet {
        ts,
        sid: SessionId::new(src_addr, src_port, dst_addr, dst_port, proto),
        tos,
        ttl,
        flags,
        payload_len,
    })
}

/// Render a packet as a trace line. Always emits all eight columns.
pub fn render_trace_record(p: &Packet) -> String {
    format!(
        "{} {} {}:{} {}:{} {} {} {} {}",
        p.ts,
        proto_name(p.sid.proto),
        p.sid.src_addr,
        p.sid.src_port,
        p.sid.dst_addr,
        p.sid.dst_port,
        p.flags,
        p.payload_len,
        p.tos,
        p.ttl
    )
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TraceError {
    #[error("line {line}: {source}")]
    Record { line: usize, source: RecordError },
    #[error("line {line}: timestamp goes backwards")]
    NonMonotonic { line: usize },
}

/// Parse a whole trace. Blank lines and lines starting with `#` are skipped.
pub fn parse_trace(text: &str) -> Result<Vec<Packet>, TraceError> {
    let mut packets = Vec::new();
    let mut last_ts = 0.0;
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let p = parse_trace_record(trimmed).map_err(|source| TraceError::Record {
            line: i + 1,
            source,
        })?;
        if p.ts < last_ts {
            return Err(TraceError::NonMonotonic { line: i + 1 });
        }
        last_ts = p.ts;
        packets.push(p);
    }
    Ok(packets)
}

pub fn render_trace(packets: &[Packet]) -> String {
    let mut out = String::with_capacity(packets.len() * 64);
    for p in packets {
        out.push_str(&render_trace_record(p));
        out.push('\n');
    }
    out
}
