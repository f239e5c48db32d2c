//! Packet-level types and the line-based packet record format shared by the
//! capture parser, the traffic generator and the evasion transform.

use std::fmt;
use std::net::IpAddr;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Transport protocol of a packet or flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Protocol {
    Tcp,
    Udp,
    Other,
}

impl Protocol {
    /// IANA-style numeric code used as the raw `protocol` feature value.
    pub fn code(self) -> f64 {
        match self {
            Protocol::Tcp => 6.0,
            Protocol::Udp => 17.0,
            Protocol::Other => 0.0,
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Protocol::Tcp => "TCP",
            Protocol::Udp => "UDP",
            Protocol::Other => "OTHER",
        };
        f.write_str(s)
    }
}

impl FromStr for Protocol {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "TCP" => Ok(Protocol::Tcp),
            "UDP" => Ok(Protocol::Udp),
            "OTHER" => Ok(Protocol::Other),
            other => Err(Error::Parse(format!("unknown protocol {other:?}"))),
        }
    }
}

/// TCP flag bits, in the on-wire low-byte order plus CWR/ECE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TcpFlags(pub u8);

impl TcpFlags {
    pub const FIN: u8 = 0x01;
    pub const SYN: u8 = 0x02;
    pub const RST: u8 = 0x04;
    pub const PSH: u8 = 0x08;
    pub const ACK: u8 = 0x10;
    pub const URG: u8 = 0x20;
    pub const ECE: u8 = 0x40;
    pub const CWE: u8 = 0x80;

    pub fn empty() -> Self {
        TcpFlags(0)
    }

    pub fn has(self, bit: u8) -> bool {
        self.0 & bit != 0
    }

    pub fn fin(self) -> bool {
        self.has(Self::FIN)
    }
    pub fn syn(self) -> bool {
        self.has(Self::SYN)
    }
    pub fn rst(self) -> bool {
        self.has(Self::RST)
    }
    pub fn ack(self) -> bool {
        self.has(Self::ACK)
    }
}

impl fmt::Display for TcpFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#04x}", self.0)
    }
}

/// One parsed packet. Timestamps are integer microseconds since the epoch;
/// all timing features are converted to seconds at extraction time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacketRecord {
    pub timestamp_us: i64,
    pub src_ip: IpAddr,
    pub dst_ip: IpAddr,
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: Protocol,
    pub tcp_flags: TcpFlags,
    pub header_len_bytes: u32,
    pub payload_len_bytes: u32,
    pub tcp_window: u32,
}

impl PacketRecord {
    /// Total on-wire length attributed to the packet (network layer up).
    pub fn total_len(&self) -> u32 {
        self.header_len_bytes + self.payload_len_bytes
    }

    pub fn key(&self) -> FlowKey {
        FlowKey {
            src_ip: self.src_ip,
            dst_ip: self.dst_ip,
            src_port: self.src_port,
            dst_port: self.dst_port,
            protocol: self.protocol,
        }
    }
}

/// Direction-defining 5-tuple. The first packet of a flow fixes the forward
/// direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FlowKey {
    pub src_ip: IpAddr,
    pub dst_ip: IpAddr,
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: Protocol,
}

impl FlowKey {
    /// The same 5-tuple seen from the opposite direction.
    pub fn reversed(&self) -> FlowKey {
        FlowKey {
            src_ip: self.dst_ip,
            dst_ip: self.src_ip,
            src_port: self.dst_port,
            dst_port: self.src_port,
            protocol: self.protocol,
        }
    }

    /// Canonical form used for table lookups, identical for both directions.
    pub fn canonical(&self) -> FlowKey {
        let fwd = (self.src_ip, self.src_port);
        let bwd = (self.dst_ip, self.dst_port);
        if fwd <= bwd {
            *self
        } else {
            self.reversed()
        }
    }
}

impl fmt::Display for FlowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}-{}:{}-{}",
            self.src_ip, self.src_port, self.dst_ip, self.dst_port, self.protocol
        )
    }
}

const PACKET_CSV_HEADER: [&str; 10] = [
    "timestamp_us",
    "src_ip",
    "dst_ip",
    "src_port",
    "dst_port",
    "protocol",
    "tcp_flags",
    "header_len_bytes",
    "payload_len_bytes",
    "tcp_window",
];

/// Writes packet records to the intermediate CSV format consumed by
/// `extract` replays and emitted by `synth` and `evade`.
pub fn write_packet_csv(path: &Path, packets: &[PacketRecord]) -> Result<(), Error> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(PACKET_CSV_HEADER)?;
    for p in packets {
        w.write_record([
            p.timestamp_us.to_string(),
            p.src_ip.to_string(),
            p.dst_ip.to_string(),
            p.src_port.to_string(),
            p.dst_port.to_string(),
            p.protocol.to_string(),
            p.tcp_flags.0.to_string(),
            p.header_len_bytes.to_string(),
            p.payload_len_bytes.to_string(),
            p.tcp_window.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_packet_csv(path: &Path) -> Result<Vec<PacketRecord>, Error> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let field = |i: usize| -> Result<&str, Error> {
            rec.get(i)
                .ok_or_else(|| Error::Parse(format!("packet csv row too short: {rec:?}")))
        };
        let parse_err = |e: &dyn fmt::Display| Error::Parse(format!("packet csv: {e}"));
        out.push(PacketRecord {
            timestamp_us: field(0)?.parse().map_err(|e| parse_err(&e))?,
            src_ip: field(1)?.parse().map_err(|e| parse_err(&e))?,
            dst_ip: field(2)?.parse().map_err(|e| parse_err(&e))?,
            src_port: field(3)?.parse().map_err(|e| parse_err(&e))?,
            dst_port: field(4)?.parse().map_err(|e| parse_err(&e))?,
            protocol: field(5)?.parse()?,
            tcp_flags: TcpFlags(field(6)?.parse().map_err(|e| parse_err(&e))?),
            header_len_bytes: field(7)?.parse().map_err(|e| parse_err(&e))?,
            payload_len_bytes: field(8)?.parse().map_err(|e| parse_err(&e))?,
            tcp_window: field(9)?.parse().map_err(|e| parse_err(&e))?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pkt() -> PacketRecord {
        PacketRecord {
            timestamp_us: 1_700_000_000_000_000,
            src_ip: "10.0.0.1".parse().unwrap(),
            dst_ip: "10.0.0.2".parse().unwrap(),
            src_port: 44321,
            dst_port: 80,
            protocol: Protocol::Tcp,
            tcp_flags: TcpFlags(TcpFlags::SYN),
            header_len_bytes: 40,
            payload_len_bytes: 0,
            tcp_window: 65535,
        }
    }

    #[test]
    fn key_canonicalization_is_direction_free() {
        let k = pkt().key();
        assert_eq!(k.canonical(), k.reversed().canonical());
        assert_ne!(k, k.reversed());
    }

    #[test]
    fn packet_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pkts.csv");
        let pkts = vec![pkt(), {
            let mut p = pkt();
            p.protocol = Protocol::Udp;
            p.tcp_flags = TcpFlags::empty();
            p.src_ip = "2001:db8::1".parse().unwrap();
            p
        }];
        write_packet_csv(&path, &pkts).unwrap();
        let back = read_packet_csv(&path).unwrap();
        assert_eq!(back, pkts);
    }
}
