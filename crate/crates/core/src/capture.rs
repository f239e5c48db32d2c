//! Capture ingestion: pcap/pcapng files are dissected into [`PacketRecord`]s.
//! Non-IP frames are skipped and counted; malformed packets increment the
//! same counter instead of aborting the run.

use std::fs::File;
use std::path::Path;

use pcap_parser::{create_reader, PcapBlockOwned, PcapError};

use crate::error::Error;
use crate::packet::{PacketRecord, Protocol, TcpFlags};

#[derive(Debug, Default, Clone, Copy)]
pub struct CaptureStats {
    pub packets: usize,
    pub skipped: usize,
}

/// Parses a pcap or pcapng capture into packet records, in file order.
pub fn parse_capture(path: &Path) -> Result<(Vec<PacketRecord>, CaptureStats), Error> {
    let file = File::open(path)?;
    let mut reader =
        create_reader(65536, file).map_err(|e| Error::Capture(format!("{path:?}: {e}")))?;
    let mut packets = Vec::new();
    let mut stats = CaptureStats::default();
    let mut if_tsresol_us: Vec<u64> = Vec::new();
    loop {
        match reader.next() {
            Ok((offset, block)) => {
                match block {
                    PcapBlockOwned::LegacyHeader(_) => {}
                    PcapBlockOwned::Legacy(b) => {
                        let ts_us = b.ts_sec as i64 * 1_000_000 + b.ts_usec as i64;
                        match dissect_ethernet(b.data, ts_us) {
                            Some(p) => {
                                packets.push(p);
                                stats.packets += 1;
                            }
                            None => stats.skipped += 1,
                        }
                    }
                    PcapBlockOwned::NG(pcap_parser::Block::InterfaceDescription(idb)) => {
                        // ticks per second, default 1e6
                        let tsresol = idb.ts_resolution().unwrap_or(1_000_000);
                        if_tsresol_us.push(tsresol);
                    }
                    PcapBlockOwned::NG(pcap_parser::Block::EnhancedPacket(epb)) => {
                        let resol = if_tsresol_us
                            .get(epb.if_id as usize)
                            .copied()
                            .unwrap_or(1_000_000);
                        let ticks = ((epb.ts_high as u64) << 32) | epb.ts_low as u64;
                        let ts_us = (ticks as i128 * 1_000_000 / resol as i128) as i64;
                        match dissect_ethernet(epb.data, ts_us) {
                            Some(p) => {
                                packets.push(p);
                                stats.packets += 1;
                            }
                            None => stats.skipped += 1,
                        }
                    }
                    PcapBlockOwned::NG(_) => {}
                }
                reader.consume(offset);
            }
            Err(PcapError::Eof) => break,
            Err(PcapError::Incomplete(_)) => {
                reader
                    .refill()
                    .map_err(|e| Error::Capture(format!("{path:?}: {e}")))?;
            }
            Err(e) => return Err(Error::Capture(format!("{path:?}: {e}"))),
        }
    }
    Ok((packets, stats))
}

fn dissect_ethernet(frame: &[u8], ts_us: i64) -> Option<PacketRecord> {
    let sliced = etherparse::SlicedPacket::from_ethernet(frame).ok()?;
    let (src_ip, dst_ip, net_header_len) = match sliced.net.as_ref()? {
        etherparse::NetSlice::Ipv4(v4) => (
            std::net::IpAddr::V4(v4.header().source_addr()),
            std::net::IpAddr::V4(v4.header().destination_addr()),
            v4.header().slice().len() as u32,
        ),
        etherparse::NetSlice::Ipv6(v6) => (
            std::net::IpAddr::V6(v6.header().source_addr()),
            std::net::IpAddr::V6(v6.header().destination_addr()),
            40,
        ),
    };
    let (src_port, dst_port, protocol, tcp_flags, transport_header_len, payload_len, window) =
        match sliced.transport.as_ref() {
            Some(etherparse::TransportSlice::Tcp(tcp)) => {
                let mut flags = 0u8;
                if tcp.fin() {
                    flags |= TcpFlags::FIN;
                }
                if tcp.syn() {
                    flags |= TcpFlags::SYN;
                }
                if tcp.rst() {
                    flags |= TcpFlags::RST;
                }
                if tcp.psh() {
                    flags |= TcpFlags::PSH;
                }
                if tcp.ack() {
                    flags |= TcpFlags::ACK;
                }
                if tcp.urg() {
                    flags |= TcpFlags::URG;
                }
                if tcp.ece() {
                    flags |= TcpFlags::ECE;
                }
                if tcp.cwr() {
                    flags |= TcpFlags::CWE;
                }
                (
                    tcp.source_port(),
                    tcp.destination_port(),
                    Protocol::Tcp,
                    TcpFlags(flags),
                    tcp.slice().len() as u32 - tcp.payload().len() as u32,
                    tcp.payload().len() as u32,
                    tcp.window_size() as u32,
                )
            }
            Some(etherparse::TransportSlice::Udp(udp)) => (
                udp.source_port(),
                udp.destination_port(),
                Protocol::Udp,
                TcpFlags::empty(),
                8,
                udp.payload().len() as u32,
                0,
            ),
            _ => (0, 0, Protocol::Other, TcpFlags::empty(), 0, 0, 0),
        };
    Some(PacketRecord {
        timestamp_us: ts_us,
        src_ip,
        dst_ip,
        src_port,
        dst_port,
        protocol,
        tcp_flags,
        header_len_bytes: net_header_len + transport_header_len,
        payload_len_bytes: payload_len,
        tcp_window: window,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    /// Builds a legacy pcap file byte by byte: global header plus one record
    /// per frame.
    fn write_pcap(path: &Path, frames: &[(u32, u32, Vec<u8>)]) {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend(0xa1b2c3d4u32.to_le_bytes()); // magic, microsecond resolution
        buf.extend(2u16.to_le_bytes());
        buf.extend(4u16.to_le_bytes());
        buf.extend(0i32.to_le_bytes());
        buf.extend(0u32.to_le_bytes());
        buf.extend(65535u32.to_le_bytes());
        buf.extend(1u32.to_le_bytes()); // LINKTYPE_ETHERNET
        for (sec, usec, frame) in frames {
            buf.extend(sec.to_le_bytes());
            buf.extend(usec.to_le_bytes());
            buf.extend((frame.len() as u32).to_le_bytes());
            buf.extend((frame.len() as u32).to_le_bytes());
            buf.extend(frame);
        }
        std::fs::File::create(path).unwrap().write_all(&buf).unwrap();
    }

    fn tcp_frame(flags: u8, payload: &[u8]) -> Vec<u8> {
        let builder = etherparse::PacketBuilder::ethernet2(
            [1, 2, 3, 4, 5, 6],
            [7, 8, 9, 10, 11, 12],
        )
        .ipv4([10, 0, 0, 1], [10, 0, 0, 2], 64);
        let mut tcp = etherparse::TcpHeader::new(40000, 80, 1000, 64_000);
        tcp.fin = flags & TcpFlags::FIN != 0;
        tcp.syn = flags & TcpFlags::SYN != 0;
        tcp.rst = flags & TcpFlags::RST != 0;
        tcp.psh = flags & TcpFlags::PSH != 0;
        tcp.ack = flags & TcpFlags::ACK != 0;
        let builder = builder.tcp_header(tcp);
        let mut out = Vec::with_capacity(builder.size(payload.len()));
        builder.write(&mut out, payload).unwrap();
        out
    }

    fn arp_frame() -> Vec<u8> {
        // Ethernet header with EtherType ARP and a minimal body.
        let mut f = vec![0xff; 6];
        f.extend([1, 2, 3, 4, 5, 6]);
        f.extend([0x08, 0x06]);
        f.extend(vec![0u8; 28]);
        f
    }

    #[test]
    fn three_tcp_packets_decode_with_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pcap");
        write_pcap(
            &path,
            &[
                (100, 0, tcp_frame(TcpFlags::SYN, b"")),
                (100, 500, tcp_frame(TcpFlags::PSH | TcpFlags::ACK, b"hello")),
                (101, 0, tcp_frame(TcpFlags::FIN | TcpFlags::ACK, b"")),
            ],
        );
        let (pkts, stats) = parse_capture(&path).unwrap();
        assert_eq!(stats.packets, 3);
        assert_eq!(stats.skipped, 0);
        assert_eq!(pkts.len(), 3);
        assert!(pkts[0].tcp_flags.syn());
        assert!(!pkts[0].tcp_flags.ack());
        assert!(pkts[1].tcp_flags.has(TcpFlags::PSH) && pkts[1].tcp_flags.ack());
        assert_eq!(pkts[1].payload_len_bytes, 5);
        // 20-byte IPv4 header + 20-byte TCP header
        assert_eq!(pkts[1].header_len_bytes, 40);
        assert!(pkts[2].tcp_flags.fin());
        assert_eq!(pkts[0].timestamp_us, 100_000_000);
        assert_eq!(pkts[1].timestamp_us, 100_000_500);
        assert_eq!(pkts[0].src_port, 40000);
        assert_eq!(pkts[0].dst_port, 80);
        assert_eq!(pkts[0].tcp_window, 64_000);
    }

    #[test]
    fn empty_capture_is_empty_stream() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.pcap");
        write_pcap(&path, &[]);
        let (pkts, stats) = parse_capture(&path).unwrap();
        assert!(pkts.is_empty());
        assert_eq!(stats.skipped, 0);
    }

    #[test]
    fn arp_frame_is_skipped_and_counted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pcap");
        write_pcap(&path, &[(1, 0, arp_frame())]);
        let (pkts, stats) = parse_capture(&path).unwrap();
        assert!(pkts.is_empty());
        assert_eq!(stats.skipped, 1);
    }

    #[test]
    fn unreadable_file_is_fatal() {
        assert!(parse_capture(Path::new("/nonexistent/x.pcap")).is_err());
    }
}
