//! Deterministic desk-scale traffic generator.
//!
//! Emits a labeled packet stream mixing heterogeneous benign client/server
//! exchanges with four attack behaviors: HTTP-flood DoS (near-identical
//! short request flows with constant payload sizes), slow DoS (sparse tiny
//! keep-alive segments), port scanning (1-2 packet SYN probes) and FTP
//! bruteforcing (repeated login-sized exchanges). Each attacker/victim pair
//! gets its own label rule, so ground truth is attributable per flow.
//!
//! The shifted domain preset rescales benign pacing and moves the DoS
//! payload-size constants while leaving DoS timing untouched; it stands in
//! for a second capture environment in cross-domain experiments.

use std::net::IpAddr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::LabelRule;
use crate::error::Error;
use crate::packet::{PacketRecord, Protocol, TcpFlags};
use crate::rng::substream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DomainPreset {
    Base,
    /// Benign pacing x3 slower, DoS request/response sizes moved.
    Shifted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub domain: DomainPreset,
    pub benign_clients: usize,
    pub servers: usize,
    pub benign_flows: usize,
    pub dos_http_flows: usize,
    pub dos_slowloris_flows: usize,
    pub portscan_flows: usize,
    pub ftp_bruteforce_flows: usize,
    /// Stream duration the flow starts are spread over.
    pub horizon_s: u64,
}

impl ScenarioSpec {
    /// Roughly 20k flows, 2 hours of stream time.
    pub fn desk(seed: u64) -> Self {
        ScenarioSpec {
            seed,
            domain: DomainPreset::Base,
            benign_clients: 30,
            servers: 8,
            benign_flows: 10_000,
            dos_http_flows: 4_000,
            dos_slowloris_flows: 1_000,
            portscan_flows: 3_000,
            ftp_bruteforce_flows: 2_000,
            horizon_s: 7_200,
        }
    }

    /// The same mix captured in the shifted domain.
    pub fn cross_domain(seed: u64) -> Self {
        ScenarioSpec { domain: DomainPreset::Shifted, ..ScenarioSpec::desk(seed) }
    }

    /// Scaled-down mix for repeated-training experiments.
    pub fn small(seed: u64, domain: DomainPreset) -> Self {
        ScenarioSpec {
            seed,
            domain,
            benign_clients: 12,
            servers: 6,
            benign_flows: 2_000,
            dos_http_flows: 800,
            dos_slowloris_flows: 200,
            portscan_flows: 600,
            ftp_bruteforce_flows: 400,
            horizon_s: 3_600,
        }
    }

    pub fn total_flows(&self) -> usize {
        self.benign_flows
            + self.dos_http_flows
            + self.dos_slowloris_flows
            + self.portscan_flows
            + self.ftp_bruteforce_flows
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub packets: Vec<PacketRecord>,
    pub rules: Vec<LabelRule>,
}

const CLIENT_WINDOW: u32 = 64_240;
const SERVER_WINDOW: u32 = 26_883;
const HEADER_LEN: u32 = 40;
const MSS: u32 = 1_460;

fn ipv4(a: u8, b: u8, c: u8, d: u8) -> IpAddr {
    IpAddr::from([a, b, c, d])
}

struct Gen {
    rng: rand_chacha::ChaCha12Rng,
    next_port: u16,
}

impl Gen {
    fn port(&mut self) -> u16 {
        let p = self.next_port;
        self.next_port = if p >= 60_000 { 20_000 } else { p + 1 };
        p
    }
}

struct Segment {
    forward: bool,
    payload: u32,
    gap_us: i64,
}

/// Builds one TCP connection: handshake, the given payload segments, and
/// optionally a client-initiated four-way teardown.
#[allow(clippy::too_many_arguments)]
fn tcp_flow(
    start_us: i64,
    client: IpAddr,
    server: IpAddr,
    client_port: u16,
    server_port: u16,
    handshake_gap_us: i64,
    segments: &[Segment],
    teardown: bool,
) -> Vec<PacketRecord> {
    let mut t = start_us;
    let mut out = Vec::with_capacity(segments.len() + 7);
    let push = |t: i64, fwd: bool, flags: u8, payload: u32| {
        let (src_ip, dst_ip, src_port, dst_port, window) = if fwd {
            (client, server, client_port, server_port, CLIENT_WINDOW)
        } else {
            (server, client, server_port, client_port, SERVER_WINDOW)
        };
        PacketRecord {
            timestamp_us: t,
            src_ip,
            dst_ip,
            src_port,
            dst_port,
            protocol: Protocol::Tcp,
            tcp_flags: TcpFlags(flags),
            header_len_bytes: HEADER_LEN,
            payload_len_bytes: payload,
            tcp_window: window,
        }
    };
    out.push(push(t, true, TcpFlags::SYN, 0));
    t += handshake_gap_us;
    out.push(push(t, false, TcpFlags::SYN | TcpFlags::ACK, 0));
    t += handshake_gap_us;
    out.push(push(t, true, TcpFlags::ACK, 0));
    for seg in segments {
        t += seg.gap_us;
        out.push(push(t, seg.forward, TcpFlags::PSH | TcpFlags::ACK, seg.payload));
    }
    if teardown {
        t += handshake_gap_us;
        out.push(push(t, true, TcpFlags::FIN | TcpFlags::ACK, 0));
        t += handshake_gap_us;
        out.push(push(t, false, TcpFlags::ACK, 0));
        t += handshake_gap_us;
        out.push(push(t, false, TcpFlags::FIN | TcpFlags::ACK, 0));
        t += handshake_gap_us;
        out.push(push(t, true, TcpFlags::ACK, 0));
    }
    out
}

/// Splits a response body into MSS-sized segments.
fn response_segments(total: u32, gap_us: i64) -> Vec<Segment> {
    let mut left = total;
    let mut out = Vec::new();
    while left > 0 {
        let chunk = left.min(MSS);
        out.push(Segment { forward: false, payload: chunk, gap_us });
        left -= chunk;
    }
    out
}

fn spread_starts(rng: &mut impl Rng, n: usize, horizon_us: i64) -> Vec<i64> {
    let spacing = horizon_us / n.max(1) as i64;
    (0..n).map(|i| i as i64 * spacing + rng.gen_range(0..spacing.max(1))).collect()
}

pub fn generate(spec: &ScenarioSpec) -> Result<Corpus, Error> {
    if spec.benign_clients == 0 || spec.servers == 0 {
        return Err(Error::Config("scenario needs at least one client and one server".into()));
    }
    if spec.servers < 4 {
        return Err(Error::Config("scenario needs four servers to separate attack victims".into()));
    }
    let horizon_us = spec.horizon_s as i64 * 1_000_000;
    let mut gen = Gen { rng: substream(spec.seed, "synth"), next_port: 20_000 };
    let clients: Vec<IpAddr> =
        (0..spec.benign_clients).map(|i| ipv4(192, 168, 1, 10 + i as u8)).collect();
    let servers: Vec<IpAddr> = (0..spec.servers).map(|i| ipv4(10, 1, 0, 1 + i as u8)).collect();
    let dos_attacker = ipv4(172, 16, 0, 2);
    let slow_attacker = ipv4(172, 16, 0, 3);
    let scan_attacker = ipv4(172, 16, 0, 4);
    let ftp_attacker = ipv4(172, 16, 0, 5);
    let (dos_victim, slow_victim, scan_victim, ftp_victim) =
        (servers[0], servers[1], servers[2], servers[3]);

    let mut packets: Vec<PacketRecord> = Vec::new();

    // benign: heterogeneous request/response exchanges, per-flow pacing
    let pace_range_ms = match spec.domain {
        DomainPreset::Base => (2.0f64, 300.0f64),
        DomainPreset::Shifted => (6.0, 900.0),
    };
    // Benign traffic arrives in browsing sessions: a client opens a run of
    // connections to one server in quick succession, so legitimate host
    // pairs fill flow sequences just like attack traffic does. Half the
    // flows are jittered interactive exchanges; the other half model
    // automated clients (pollers, keepalives) pacing their packets at an
    // exact per-flow interval over the same pace range, so neither zero
    // jitter nor a fast pace alone flags a flow as hostile.
    let mut benign_left = spec.benign_flows;
    while benign_left > 0 {
        let session_start = gen.rng.gen_range(0..horizon_us.max(1));
        let client = clients[gen.rng.gen_range(0..clients.len())];
        let server = servers[gen.rng.gen_range(0..servers.len())];
        let session_len = gen.rng.gen_range(5..=15).min(benign_left);
        benign_left -= session_len;
        let mut start = session_start;
        for _ in 0..session_len {
            let automated = gen.rng.gen_bool(0.5);
            let pace_ms = pace_range_ms.0
                * (pace_range_ms.1 / pace_range_ms.0).powf(gen.rng.gen::<f64>());
            let gap = |rng: &mut rand_chacha::ChaCha12Rng| {
                let jitter = if automated { 1.0 } else { rng.gen_range(0.5..1.5) };
                (pace_ms * 1_000.0 * jitter) as i64 + 1
            };
            // In the shifted domain a third of the benign flows send the
            // base flood tool's padded full-MSS request, so a model keyed on
            // that payload signature flags legitimate traffic there.
            let signature = spec.domain == DomainPreset::Shifted && gen.rng.gen_bool(1.0 / 3.0);
            let request =
                if signature { MSS } else { gen.rng.gen_range(100..=1_300) };
            let response_total = gen.rng.gen_range(100..=11_680);
            let mut segments =
                vec![Segment { forward: true, payload: request, gap_us: gap(&mut gen.rng) }];
            for mut seg in response_segments(response_total, 0) {
                seg.gap_us = gap(&mut gen.rng);
                segments.push(seg);
            }
            let hs = gap(&mut gen.rng);
            let cport = gen.port();
            packets.extend(tcp_flow(start, client, server, cport, 443, hs, &segments, true));
            start += gen.rng.gen_range(200_000..=3_000_000);
        }
    }

    // HTTP-flood DoS: request/response exchanges paced and shaped exactly
    // like the benign population in both domains, so neither timing nor flow
    // shape carries flood-specific information. The base-domain flood tool
    // always sends the same padded full-MSS request, the dataset's one clean
    // giveaway; the shifted domain's tool draws its request size from the
    // benign range instead, so a model keyed on the base payload signature
    // misses shifted floods.
    for start in spread_starts(&mut gen.rng, spec.dos_http_flows, horizon_us) {
        let automated = gen.rng.gen_bool(0.5);
        let pace_ms = pace_range_ms.0
            * (pace_range_ms.1 / pace_range_ms.0).powf(gen.rng.gen::<f64>());
        let gap = |rng: &mut rand_chacha::ChaCha12Rng| {
            let jitter = if automated { 1.0 } else { rng.gen_range(0.5..1.5) };
            (pace_ms * 1_000.0 * jitter) as i64 + 1
        };
        let dos_request = match spec.domain {
            DomainPreset::Base => MSS,
            DomainPreset::Shifted => gen.rng.gen_range(100..=1_300),
        };
        let response_total = gen.rng.gen_range(100..=11_680);
        let mut segments =
            vec![Segment { forward: true, payload: dos_request, gap_us: gap(&mut gen.rng) }];
        for mut seg in response_segments(response_total, 0) {
            seg.gap_us = gap(&mut gen.rng);
            segments.push(seg);
        }
        let hs = gap(&mut gen.rng);
        let cport = gen.port();
        packets.extend(tcp_flow(start, dos_attacker, dos_victim, cport, 80, hs, &segments, true));
    }

    // slow DoS: sparse tiny keep-alive segments, no teardown (timeout end)
    for start in spread_starts(&mut gen.rng, spec.dos_slowloris_flows, horizon_us) {
        let segments: Vec<Segment> = (0..6)
            .map(|_| Segment { forward: true, payload: 24, gap_us: 2_000_000 })
            .collect();
        let cport = gen.port();
        packets.extend(tcp_flow(start, slow_attacker, slow_victim, cport, 80, 1_000, &segments, false));
    }

    // port scan: SYN probes over a port sweep, half answered by RST
    for (i, start) in spread_starts(&mut gen.rng, spec.portscan_flows, horizon_us)
        .into_iter()
        .enumerate()
    {
        let dst_port = 1 + (i % 10_000) as u16;
        let sport = gen.port();
        packets.push(PacketRecord {
            timestamp_us: start,
            src_ip: scan_attacker,
            dst_ip: scan_victim,
            src_port: sport,
            dst_port,
            protocol: Protocol::Tcp,
            tcp_flags: TcpFlags(TcpFlags::SYN),
            header_len_bytes: HEADER_LEN,
            payload_len_bytes: 0,
            tcp_window: 1_024,
        });
        if gen.rng.gen_bool(0.5) {
            packets.push(PacketRecord {
                timestamp_us: start + 1_000,
                src_ip: scan_victim,
                dst_ip: scan_attacker,
                src_port: dst_port,
                dst_port: sport,
                protocol: Protocol::Tcp,
                tcp_flags: TcpFlags(TcpFlags::RST | TcpFlags::ACK),
                header_len_bytes: HEADER_LEN,
                payload_len_bytes: 0,
                tcp_window: 0,
            });
        }
    }

    // FTP bruteforce: repeated login-sized command/response exchanges
    for start in spread_starts(&mut gen.rng, spec.ftp_bruteforce_flows, horizon_us) {
        let mut segments = Vec::new();
        for _ in 0..4 {
            segments.push(Segment {
                forward: true,
                payload: gen.rng.gen_range(16..=40),
                gap_us: gen.rng.gen_range(100_000..=500_000),
            });
            segments.push(Segment {
                forward: false,
                payload: gen.rng.gen_range(30..=80),
                gap_us: gen.rng.gen_range(1_000..=20_000),
            });
        }
        let cport = gen.port();
        packets.extend(tcp_flow(start, ftp_attacker, ftp_victim, cport, 21, 5_000, &segments, true));
    }

    packets.sort_by_key(|p| p.timestamp_us);

    let window = (0, horizon_us + 3_600_000_000);
    let rule = |attacker: IpAddr, victim: IpAddr, name: &str| LabelRule {
        attacker_ips: vec![attacker],
        victim_ips: vec![victim],
        start_us: window.0,
        end_us: window.1,
        attack_name: name.into(),
    };
    let rules = vec![
        rule(dos_attacker, dos_victim, "dos_http"),
        rule(slow_attacker, slow_victim, "dos_slowloris"),
        rule(scan_attacker, scan_victim, "portscan"),
        rule(ftp_attacker, ftp_victim, "ftp_bruteforce"),
    ];
    Ok(Corpus { packets, rules })
}
