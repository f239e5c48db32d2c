//! Flow aggregation: packets are grouped by 5-tuple into bidirectional flows.
//!
//! TCP flows terminate on a complete four-way teardown (FIN, ACK, FIN, ACK),
//! on RST from either side, or on the flow timeout. Stateless protocols
//! terminate on timeout only. Terminating on the first FIN, as some popular
//! extractors do, splits a connection that is torn down by the responder into
//! fragments with inverted direction; the state machine here keeps every
//! packet of the exchange, including the final ACK, in one flow.

use std::collections::HashMap;

use crate::packet::{FlowKey, PacketRecord};

/// Teardown progress of a TCP flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TcpPhase {
    Open,
    /// First FIN observed.
    FinWait1,
    /// First FIN acknowledged by the other side.
    FinWait2,
    /// Second FIN observed; waiting for the last ACK.
    Closing,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Why a flow left the table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EndReason {
    Teardown,
    Rst,
    Timeout,
    /// Flushed at end of input without reaching timeout.
    EndOfStream,
}

#[derive(Debug, Clone)]
pub struct FlowState {
    pub key: FlowKey,
    pub fwd_packets: Vec<PacketRecord>,
    pub bwd_packets: Vec<PacketRecord>,
    pub tcp_phase: TcpPhase,
    /// Side that sent the first FIN.
    fin_initiator: Option<Direction>,
    pub first_seen_us: i64,
    pub last_seen_us: i64,
    pub end: Option<EndReason>,
}

impl FlowState {
    fn new(pkt: PacketRecord) -> Self {
        let mut fs = FlowState {
            key: pkt.key(),
            fwd_packets: Vec::new(),
            bwd_packets: Vec::new(),
            tcp_phase: TcpPhase::Open,
            fin_initiator: None,
            first_seen_us: pkt.timestamp_us,
            last_seen_us: pkt.timestamp_us,
            end: None,
        };
        fs.absorb(pkt);
        fs
    }

    pub fn packet_count(&self) -> usize {
        self.fwd_packets.len() + self.bwd_packets.len()
    }

    pub fn is_complete(&self) -> bool {
        self.end.is_some()
    }

    /// All packets merged into arrival order.
    pub fn merged_packets(&self) -> Vec<&PacketRecord> {
        let mut out: Vec<&PacketRecord> =
            self.fwd_packets.iter().chain(self.bwd_packets.iter()).collect();
        out.sort_by_key(|p| p.timestamp_us);
        out
    }

    fn absorb(&mut self, pkt: PacketRecord) {
        let dir = if pkt.key() == self.key {
            Direction::Forward
        } else {
            Direction::Backward
        };
        self.last_seen_us = self.last_seen_us.max(pkt.timestamp_us);
        self.step_teardown(dir, &pkt);
        match dir {
            Direction::Forward => self.fwd_packets.push(pkt),
            Direction::Backward => self.bwd_packets.push(pkt),
        }
    }

    fn step_teardown(&mut self, dir: Direction, pkt: &PacketRecord) {
        if pkt.tcp_flags.rst() {
            self.tcp_phase = TcpPhase::Closed;
            self.end = Some(EndReason::Rst);
            return;
        }
        match self.tcp_phase {
            TcpPhase::Open => {
                if pkt.tcp_flags.fin() {
                    self.tcp_phase = TcpPhase::FinWait1;
                    self.fin_initiator = Some(dir);
                }
            }
            TcpPhase::FinWait1 => {
                if Some(dir) != self.fin_initiator {
                    if pkt.tcp_flags.fin() {
                        // FIN+ACK, or a simultaneous close.
                        self.tcp_phase = TcpPhase::Closing;
                    } else if pkt.tcp_flags.ack() {
                        self.tcp_phase = TcpPhase::FinWait2;
                    }
                }
            }
            TcpPhase::FinWait2 => {
                if Some(dir) != self.fin_initiator && pkt.tcp_flags.fin() {
                    self.tcp_phase = TcpPhase::Closing;
                }
            }
            TcpPhase::Closing => {
                if Some(dir) == self.fin_initiator && pkt.tcp_flags.ack() {
                    self.tcp_phase = TcpPhase::Closed;
                    self.end = Some(EndReason::Teardown);
                }
            }
            TcpPhase::Closed => {}
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FlowConfig {
    /// Idle time after which any flow is cut (default 30 s).
    pub flow_timeout_us: i64,
    /// Gap that splits active periods into an idle period (default 5 s).
    pub activity_threshold_us: i64,
    /// Gap that starts a new subflow (default 5 s).
    pub subflow_duration_us: i64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            flow_timeout_us: 30_000_000,
            activity_threshold_us: 5_000_000,
            subflow_duration_us: 5_000_000,
        }
    }
}

/// Single-owner flow table; ingestion is sequential per capture.
#[derive(Debug, Default)]
pub struct FlowTable {
    config: FlowConfig,
    active: HashMap<FlowKey, FlowState>,
}

impl FlowTable {
    pub fn new(config: FlowConfig) -> Self {
        FlowTable {
            config,
            active: HashMap::new(),
        }
    }

    pub fn config(&self) -> &FlowConfig {
        &self.config
    }

    /// Absorbs one packet, returning any flows completed by it. A packet for
    /// a timed-out 5-tuple flushes the stale flow and starts a fresh one.
    pub fn ingest(&mut self, pkt: PacketRecord) -> Vec<FlowState> {
        let ckey = pkt.key().canonical();
        let mut completed = Vec::new();
        if let Some(flow) = self.active.get_mut(&ckey) {
            if pkt.timestamp_us - flow.last_seen_us > self.config.flow_timeout_us {
                let mut stale = self.active.remove(&ckey).unwrap();
                stale.end = Some(EndReason::Timeout);
                completed.push(stale);
                self.active.insert(ckey, FlowState::new(pkt));
            } else {
                flow.absorb(pkt);
                if flow.is_complete() {
                    completed.push(self.active.remove(&ckey).unwrap());
                }
            }
        } else {
            self.active.insert(ckey, FlowState::new(pkt));
        }
        completed
    }

    /// Flushes flows idle past the timeout at stream time `now_us`.
    pub fn flush_timeouts(&mut self, now_us: i64) -> Vec<FlowState> {
        let timeout = self.config.flow_timeout_us;
        let keys: Vec<FlowKey> = self
            .active
            .iter()
            .filter(|(_, f)| now_us - f.last_seen_us > timeout)
            .map(|(k, _)| *k)
            .collect();
        let mut out = Vec::new();
        for k in keys {
            let mut f = self.active.remove(&k).unwrap();
            f.end = Some(EndReason::Timeout);
            out.push(f);
        }
        out.sort_by_key(|f| f.first_seen_us);
        out
    }

    /// Drains every remaining flow (end of capture).
    pub fn flush_all(&mut self) -> Vec<FlowState> {
        let mut out: Vec<FlowState> = self
            .active
            .drain()
            .map(|(_, mut f)| {
                f.end = Some(EndReason::EndOfStream);
                f
            })
            .collect();
        out.sort_by_key(|f| f.first_seen_us);
        out
    }

    /// Replays a packet list through a fresh table, returning completed flows
    /// in completion order.
    pub fn replay(config: FlowConfig, packets: &[PacketRecord]) -> Vec<FlowState> {
        let mut table = FlowTable::new(config);
        let mut flows = Vec::new();
        for pkt in packets {
            flows.extend(table.ingest(pkt.clone()));
        }
        flows.extend(table.flush_all());
        flows
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::packet::{Protocol, TcpFlags};
    use std::net::IpAddr;

    fn ip(s: &str) -> IpAddr {
        s.parse().unwrap()
    }

    fn tcp(ts: i64, src: &str, sport: u16, dst: &str, dport: u16, flags: u8, payload: u32) -> PacketRecord {
        PacketRecord {
            timestamp_us: ts,
            src_ip: ip(src),
            dst_ip: ip(dst),
            src_port: sport,
            dst_port: dport,
            protocol: Protocol::Tcp,
            tcp_flags: TcpFlags(flags),
            header_len_bytes: 40,
            payload_len_bytes: payload,
            tcp_window: 64_000,
        }
    }

    /// One full HTTP exchange over (a:8888 -> b:80) starting at `t0`, with
    /// the responder initiating the teardown.
    fn http_cycle(t0: i64) -> Vec<PacketRecord> {
        use TcpFlags as F;
        let a = "10.0.0.1";
        let b = "10.0.0.2";
        vec![
            tcp(t0, a, 8888, b, 80, F::SYN, 0),
            tcp(t0 + 1_000, b, 80, a, 8888, F::SYN | F::ACK, 0),
            tcp(t0 + 2_000, a, 8888, b, 80, F::ACK, 0),
            tcp(t0 + 3_000, a, 8888, b, 80, F::PSH | F::ACK, 200),
            tcp(t0 + 4_000, b, 80, a, 8888, F::PSH | F::ACK, 1200),
            // responder-initiated four-way teardown
            tcp(t0 + 5_000, b, 80, a, 8888, F::FIN | F::ACK, 0),
            tcp(t0 + 6_000, a, 8888, b, 80, F::ACK, 0),
            tcp(t0 + 7_000, a, 8888, b, 80, F::FIN | F::ACK, 0),
            tcp(t0 + 8_000, b, 80, a, 8888, F::ACK, 0),
        ]
    }

    #[test]
    fn port_reuse_yields_one_flow_per_cycle() {
        let mut packets = http_cycle(0);
        packets.extend(http_cycle(20_000));
        let flows = FlowTable::replay(FlowConfig::default(), &packets);
        assert_eq!(flows.len(), 2);
        for f in &flows {
            assert_eq!(f.end, Some(EndReason::Teardown));
            // forward direction is the attacker side that opened the cycle
            assert_eq!(f.key.src_ip, ip("10.0.0.1"));
            assert_eq!(f.key.src_port, 8888);
            assert_eq!(f.packet_count(), 9);
            // the SYN and the final ACK are both inside the flow
            assert!(f.fwd_packets[0].tcp_flags.syn());
            let merged = f.merged_packets();
            assert!(merged.last().unwrap().tcp_flags.ack());
        }
    }

    #[test]
    fn single_fin_keeps_flow_open_until_timeout() {
        use TcpFlags as F;
        let a = "10.0.0.1";
        let b = "10.0.0.2";
        let packets = vec![
            tcp(0, a, 5555, b, 80, F::SYN, 0),
            tcp(1_000, b, 80, a, 5555, F::SYN | F::ACK, 0),
            tcp(2_000, a, 5555, b, 80, F::ACK, 0),
            tcp(3_000, a, 5555, b, 80, F::FIN | F::ACK, 0),
            tcp(4_000, b, 80, a, 5555, F::ACK, 0),
            // the second FIN never arrives
        ];
        let mut table = FlowTable::new(FlowConfig::default());
        for p in &packets {
            assert!(table.ingest(p.clone()).is_empty());
        }
        assert!(table.flush_timeouts(20_000_000).is_empty());
        let flushed = table.flush_timeouts(40_000_000);
        assert_eq!(flushed.len(), 1);
        assert_eq!(flushed[0].end, Some(EndReason::Timeout));
        assert_eq!(flushed[0].tcp_phase, TcpPhase::FinWait2);
    }

    #[test]
    fn udp_flow_completes_only_by_timeout() {
        let pkt = PacketRecord {
            timestamp_us: 0,
            src_ip: ip("10.0.0.3"),
            dst_ip: ip("10.0.0.4"),
            src_port: 5353,
            dst_port: 53,
            protocol: Protocol::Udp,
            tcp_flags: TcpFlags::empty(),
            header_len_bytes: 28,
            payload_len_bytes: 64,
            tcp_window: 0,
        };
        let mut table = FlowTable::new(FlowConfig::default());
        assert!(table.ingest(pkt).is_empty());
        let flushed = table.flush_timeouts(30_000_001);
        assert_eq!(flushed.len(), 1);
        assert_eq!(flushed[0].fwd_packets.len(), 1);
        assert!(flushed[0].bwd_packets.is_empty());
    }

    #[test]
    fn rst_terminates_immediately() {
        use TcpFlags as F;
        let packets = vec![
            tcp(0, "10.0.0.1", 1234, "10.0.0.2", 80, F::SYN, 0),
            tcp(1_000, "10.0.0.2", 80, "10.0.0.1", 1234, F::RST | F::ACK, 0),
        ];
        let flows = FlowTable::replay(FlowConfig::default(), &packets);
        assert_eq!(flows.len(), 1);
        assert_eq!(flows[0].end, Some(EndReason::Rst));
    }

    #[test]
    fn packet_after_timeout_starts_new_flow() {
        use TcpFlags as F;
        let p1 = tcp(0, "10.0.0.1", 1234, "10.0.0.2", 80, F::SYN, 0);
        let p2 = tcp(31_000_000, "10.0.0.1", 1234, "10.0.0.2", 80, F::SYN, 0);
        let mut table = FlowTable::new(FlowConfig::default());
        assert!(table.ingest(p1).is_empty());
        let done = table.ingest(p2);
        assert_eq!(done.len(), 1);
        assert_eq!(done[0].end, Some(EndReason::Timeout));
        assert_eq!(table.flush_all().len(), 1);
    }
}
