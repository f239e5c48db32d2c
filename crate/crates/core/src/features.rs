//! Per-flow statistical features.
//!
//! Each completed flow yields 6 identifying values, 63 statistics and a
//! label (70 CSV columns). For training, the categorical protocol code is
//! expanded to a 3-way one-hot, giving 65 numeric inputs.
//!
//! Conventions, also emitted in the feature dictionary:
//! - packet length = network-layer header + payload bytes; segment size =
//!   payload bytes only,
//! - (min, max, avg, std) quadruples are all zero over an empty sample set;
//!   std is the population standard deviation,
//! - directional IAT samples are gaps between consecutive packets of that
//!   direction; the bidirectional IAT uses all packets,
//! - rates divide by the flow duration in seconds and are zero for
//!   zero-duration flows,
//! - active/idle periods split the packet timeline at gaps larger than the
//!   activity threshold; subflow boundaries are gaps larger than the subflow
//!   duration,
//! - down/up ratio = backward bytes / forward bytes, zero when the flow has
//!   no forward bytes.

use std::net::IpAddr;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::flow::{FlowConfig, FlowState};
use crate::packet::Protocol;

pub const NUM_STATS: usize = 63;
/// Trainable width: 62 numeric statistics + 3-way protocol one-hot.
pub const NUM_TRAINABLE: usize = 65;

/// Index constants into [`FeatureVector::stats`].
pub mod idx {
    pub const FWD_IAT_MIN: usize = 0;
    pub const FWD_IAT_MAX: usize = 1;
    pub const FWD_IAT_AVG: usize = 2;
    pub const FWD_IAT_STD: usize = 3;
    pub const FWD_PKTS_PER_SEC: usize = 4;
    pub const BWD_IAT_MIN: usize = 5;
    pub const BWD_IAT_MAX: usize = 6;
    pub const BWD_IAT_AVG: usize = 7;
    pub const BWD_IAT_STD: usize = 8;
    pub const BWD_PKTS_PER_SEC: usize = 9;
    pub const DURATION: usize = 10;
    pub const BIDIR_IAT_MIN: usize = 11;
    pub const BIDIR_IAT_MAX: usize = 12;
    pub const BIDIR_IAT_AVG: usize = 13;
    pub const BIDIR_IAT_STD: usize = 14;
    pub const BIDIR_PKTS_PER_SEC: usize = 15;
    pub const BYTES_PER_SEC: usize = 16;
    pub const ACTIVE_MIN: usize = 17;
    pub const ACTIVE_MAX: usize = 18;
    pub const ACTIVE_AVG: usize = 19;
    pub const ACTIVE_STD: usize = 20;
    pub const IDLE_MIN: usize = 21;
    pub const IDLE_MAX: usize = 22;
    pub const IDLE_AVG: usize = 23;
    pub const IDLE_STD: usize = 24;
    pub const FWD_NUM_PACKETS: usize = 25;
    pub const FWD_PKT_LEN_MIN: usize = 26;
    pub const FWD_PKT_LEN_MAX: usize = 27;
    pub const FWD_PKT_LEN_AVG: usize = 28;
    pub const FWD_PKT_LEN_STD: usize = 29;
    pub const FWD_PSH_COUNT: usize = 30;
    pub const FWD_URG_COUNT: usize = 31;
    pub const FWD_HEADER_LEN: usize = 32;
    pub const FWD_INIT_WIN: usize = 33;
    pub const FWD_AVG_SEG_SIZE: usize = 34;
    pub const FWD_SUBFLOW_AVG_PACKETS: usize = 35;
    pub const FWD_SUBFLOW_AVG_BYTES: usize = 36;
    pub const BWD_NUM_PACKETS: usize = 37;
    pub const BWD_PKT_LEN_MIN: usize = 38;
    pub const BWD_PKT_LEN_MAX: usize = 39;
    pub const BWD_PKT_LEN_AVG: usize = 40;
    pub const BWD_PKT_LEN_STD: usize = 41;
    pub const BWD_PSH_COUNT: usize = 42;
    pub const BWD_URG_COUNT: usize = 43;
    pub const BWD_HEADER_LEN: usize = 44;
    pub const BWD_INIT_WIN: usize = 45;
    pub const BWD_AVG_SEG_SIZE: usize = 46;
    pub const BWD_SUBFLOW_AVG_PACKETS: usize = 47;
    pub const BWD_SUBFLOW_AVG_BYTES: usize = 48;
    pub const BIDIR_PKT_LEN_MIN: usize = 49;
    pub const BIDIR_PKT_LEN_MAX: usize = 50;
    pub const BIDIR_PKT_LEN_AVG: usize = 51;
    pub const BIDIR_PKT_LEN_STD: usize = 52;
    pub const FIN_COUNT: usize = 53;
    pub const SYN_COUNT: usize = 54;
    pub const RST_COUNT: usize = 55;
    pub const PSH_COUNT: usize = 56;
    pub const ACK_COUNT: usize = 57;
    pub const URG_COUNT: usize = 58;
    pub const CWE_COUNT: usize = 59;
    pub const ECE_COUNT: usize = 60;
    pub const DOWN_UP_RATIO: usize = 61;
    pub const PROTOCOL_CODE: usize = 62;
}

pub const STAT_NAMES: [&str; NUM_STATS] = [
    "fwd_iat_min",
    "fwd_iat_max",
    "fwd_iat_avg",
    "fwd_iat_std",
    "fwd_pkts_per_sec",
    "bwd_iat_min",
    "bwd_iat_max",
    "bwd_iat_avg",
    "bwd_iat_std",
    "bwd_pkts_per_sec",
    "duration",
    "bidir_iat_min",
    "bidir_iat_max",
    "bidir_iat_avg",
    "bidir_iat_std",
    "bidir_pkts_per_sec",
    "bytes_per_sec",
    "active_min",
    "active_max",
    "active_avg",
    "active_std",
    "idle_min",
    "idle_max",
    "idle_avg",
    "idle_std",
    "fwd_num_packets",
    "fwd_pkt_len_min",
    "fwd_pkt_len_max",
    "fwd_pkt_len_avg",
    "fwd_pkt_len_std",
    "fwd_psh_count",
    "fwd_urg_count",
    "fwd_header_len",
    "fwd_init_win",
    "fwd_avg_seg_size",
    "fwd_subflow_avg_packets",
    "fwd_subflow_avg_bytes",
    "bwd_num_packets",
    "bwd_pkt_len_min",
    "bwd_pkt_len_max",
    "bwd_pkt_len_avg",
    "bwd_pkt_len_std",
    "bwd_psh_count",
    "bwd_urg_count",
    "bwd_header_len",
    "bwd_init_win",
    "bwd_avg_seg_size",
    "bwd_subflow_avg_packets",
    "bwd_subflow_avg_bytes",
    "bidir_pkt_len_min",
    "bidir_pkt_len_max",
    "bidir_pkt_len_avg",
    "bidir_pkt_len_std",
    "fin_count",
    "syn_count",
    "rst_count",
    "psh_count",
    "ack_count",
    "urg_count",
    "cwe_count",
    "ece_count",
    "down_up_ratio",
    "protocol_code",
];

/// One flow's identifying fields, statistics and ground-truth label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub flow_id: String,
    pub src_ip: IpAddr,
    pub dst_ip: IpAddr,
    pub src_port: u16,
    pub dst_port: u16,
    pub start_timestamp_us: i64,
    pub stats: Vec<f64>,
    pub label: String,
}

impl FeatureVector {
    pub fn protocol(&self) -> Protocol {
        match self.stats[idx::PROTOCOL_CODE] as u32 {
            6 => Protocol::Tcp,
            17 => Protocol::Udp,
            _ => Protocol::Other,
        }
    }

    /// The 65 trainable inputs: stats 0..62 followed by the protocol one-hot.
    pub fn trainable(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(NUM_TRAINABLE);
        out.extend_from_slice(&self.stats[..idx::PROTOCOL_CODE]);
        let (tcp, udp, other) = match self.protocol() {
            Protocol::Tcp => (1.0, 0.0, 0.0),
            Protocol::Udp => (0.0, 1.0, 0.0),
            Protocol::Other => (0.0, 0.0, 1.0),
        };
        out.push(tcp);
        out.push(udp);
        out.push(other);
        out
    }
}

/// Names of the 65 trainable inputs, in matrix column order.
pub fn trainable_names() -> Vec<&'static str> {
    let mut names: Vec<&'static str> = STAT_NAMES[..idx::PROTOCOL_CODE].to_vec();
    names.extend(["proto_tcp", "proto_udp", "proto_other"]);
    names
}

fn quad(samples: &[f64]) -> (f64, f64, f64, f64) {
    if samples.is_empty() {
        return (0.0, 0.0, 0.0, 0.0);
    }
    let min = samples.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let avg = samples.iter().sum::<f64>() / samples.len() as f64;
    let var = samples.iter().map(|x| (x - avg) * (x - avg)).sum::<f64>() / samples.len() as f64;
    (min, max, avg, var.sqrt())
}

fn iats_sec(timestamps: &[i64]) -> Vec<f64> {
    timestamps
        .windows(2)
        .map(|w| (w[1] - w[0]) as f64 / 1e6)
        .collect()
}

/// Computes the 63 statistics of a completed flow. Pure function of the
/// flow state and configuration.
pub fn extract_features(flow: &FlowState, config: &FlowConfig) -> Result<FeatureVector, Error> {
    if !flow.is_complete() {
        return Err(Error::Precondition(format!(
            "flow {} is not complete",
            flow.key
        )));
    }
    let merged = flow.merged_packets();
    assert!(!merged.is_empty());
    let mut s = vec![0.0; NUM_STATS];

    let first_ts = merged.first().unwrap().timestamp_us;
    let last_ts = merged.last().unwrap().timestamp_us;
    let duration = (last_ts - first_ts) as f64 / 1e6;
    s[idx::DURATION] = duration;

    let fwd_ts: Vec<i64> = flow.fwd_packets.iter().map(|p| p.timestamp_us).collect();
    let bwd_ts: Vec<i64> = flow.bwd_packets.iter().map(|p| p.timestamp_us).collect();
    let all_ts: Vec<i64> = merged.iter().map(|p| p.timestamp_us).collect();

    let (mn, mx, av, sd) = quad(&iats_sec(&fwd_ts));
    s[idx::FWD_IAT_MIN] = mn;
    s[idx::FWD_IAT_MAX] = mx;
    s[idx::FWD_IAT_AVG] = av;
    s[idx::FWD_IAT_STD] = sd;
    let (mn, mx, av, sd) = quad(&iats_sec(&bwd_ts));
    s[idx::BWD_IAT_MIN] = mn;
    s[idx::BWD_IAT_MAX] = mx;
    s[idx::BWD_IAT_AVG] = av;
    s[idx::BWD_IAT_STD] = sd;
    let (mn, mx, av, sd) = quad(&iats_sec(&all_ts));
    s[idx::BIDIR_IAT_MIN] = mn;
    s[idx::BIDIR_IAT_MAX] = mx;
    s[idx::BIDIR_IAT_AVG] = av;
    s[idx::BIDIR_IAT_STD] = sd;

    let rate = |count: f64| if duration > 0.0 { count / duration } else { 0.0 };
    s[idx::FWD_PKTS_PER_SEC] = rate(flow.fwd_packets.len() as f64);
    s[idx::BWD_PKTS_PER_SEC] = rate(flow.bwd_packets.len() as f64);
    s[idx::BIDIR_PKTS_PER_SEC] = rate(merged.len() as f64);
    let total_bytes: f64 = merged.iter().map(|p| p.total_len() as f64).sum();
    s[idx::BYTES_PER_SEC] = rate(total_bytes);

    // Active/idle periods split at the activity threshold. Every active
    // period is recorded, including zero-length single-burst ones.
    let threshold = config.activity_threshold_us;
    let mut active = Vec::new();
    let mut idle = Vec::new();
    let mut active_start = first_ts;
    let mut prev = first_ts;
    for &ts in &all_ts[1..] {
        if ts - prev > threshold {
            active.push((prev - active_start) as f64 / 1e6);
            idle.push((ts - prev) as f64 / 1e6);
            active_start = ts;
        }
        prev = ts;
    }
    active.push((prev - active_start) as f64 / 1e6);
    let (mn, mx, av, sd) = quad(&active);
    s[idx::ACTIVE_MIN] = mn;
    s[idx::ACTIVE_MAX] = mx;
    s[idx::ACTIVE_AVG] = av;
    s[idx::ACTIVE_STD] = sd;
    let (mn, mx, av, sd) = quad(&idle);
    s[idx::IDLE_MIN] = mn;
    s[idx::IDLE_MAX] = mx;
    s[idx::IDLE_AVG] = av;
    s[idx::IDLE_STD] = sd;

    let subflow_count = 1 + all_ts
        .windows(2)
        .filter(|w| w[1] - w[0] > config.subflow_duration_us)
        .count();

    // Per-direction protocol statistics.
    let dir_block = |pkts: &[crate::packet::PacketRecord], base: usize, s: &mut [f64]| {
        s[base] = pkts.len() as f64; // num packets
        let lens: Vec<f64> = pkts.iter().map(|p| p.total_len() as f64).collect();
        let (mn, mx, av, sd) = quad(&lens);
        s[base + 1] = mn;
        s[base + 2] = mx;
        s[base + 3] = av;
        s[base + 4] = sd;
        s[base + 5] = pkts
            .iter()
            .filter(|p| p.tcp_flags.has(crate::packet::TcpFlags::PSH))
            .count() as f64;
        s[base + 6] = pkts
            .iter()
            .filter(|p| p.tcp_flags.has(crate::packet::TcpFlags::URG))
            .count() as f64;
        s[base + 7] = pkts.iter().map(|p| p.header_len_bytes as f64).sum();
        s[base + 8] = pkts.first().map(|p| p.tcp_window as f64).unwrap_or(0.0);
        let payload: f64 = pkts.iter().map(|p| p.payload_len_bytes as f64).sum();
        s[base + 9] = if pkts.is_empty() {
            0.0
        } else {
            payload / pkts.len() as f64
        };
        s[base + 10] = pkts.len() as f64 / subflow_count as f64;
        let bytes: f64 = pkts.iter().map(|p| p.total_len() as f64).sum();
        s[base + 11] = bytes / subflow_count as f64;
    };
    dir_block(&flow.fwd_packets, idx::FWD_NUM_PACKETS, &mut s);
    dir_block(&flow.bwd_packets, idx::BWD_NUM_PACKETS, &mut s);

    let lens: Vec<f64> = merged.iter().map(|p| p.total_len() as f64).collect();
    let (mn, mx, av, sd) = quad(&lens);
    s[idx::BIDIR_PKT_LEN_MIN] = mn;
    s[idx::BIDIR_PKT_LEN_MAX] = mx;
    s[idx::BIDIR_PKT_LEN_AVG] = av;
    s[idx::BIDIR_PKT_LEN_STD] = sd;

    use crate::packet::TcpFlags as F;
    let flag_count =
        |bit: u8| merged.iter().filter(|p| p.tcp_flags.has(bit)).count() as f64;
    s[idx::FIN_COUNT] = flag_count(F::FIN);
    s[idx::SYN_COUNT] = flag_count(F::SYN);
    s[idx::RST_COUNT] = flag_count(F::RST);
    s[idx::PSH_COUNT] = flag_count(F::PSH);
    s[idx::ACK_COUNT] = flag_count(F::ACK);
    s[idx::URG_COUNT] = flag_count(F::URG);
    s[idx::CWE_COUNT] = flag_count(F::CWE);
    s[idx::ECE_COUNT] = flag_count(F::ECE);

    let fwd_bytes: f64 = flow.fwd_packets.iter().map(|p| p.total_len() as f64).sum();
    let bwd_bytes: f64 = flow.bwd_packets.iter().map(|p| p.total_len() as f64).sum();
    s[idx::DOWN_UP_RATIO] = if fwd_bytes > 0.0 { bwd_bytes / fwd_bytes } else { 0.0 };
    s[idx::PROTOCOL_CODE] = flow.key.protocol.code();

    let flow_id = format!("{}-{}", flow.key, first_ts);
    Ok(FeatureVector {
        flow_id,
        src_ip: flow.key.src_ip,
        dst_ip: flow.key.dst_ip,
        src_port: flow.key.src_port,
        dst_port: flow.key.dst_port,
        start_timestamp_us: first_ts,
        stats: s,
        label: "benign".to_string(),
    })
}

/// Human-readable dictionary of the CSV columns in emission order.
pub fn feature_dictionary() -> String {
    let mut out = String::new();
    out.push_str("Flow CSV columns, in order. 6 identifiers, 63 statistics, 1 label.\n");
    out.push_str("Conventions:\n");
    out.push_str("  - packet length = header + payload bytes; segment size = payload bytes\n");
    out.push_str("  - (min,max,avg,std) quadruples are zero over an empty sample set\n");
    out.push_str("  - timing values in seconds; rates use flow duration, 0 if duration 0\n");
    out.push_str("  - down/up ratio = bwd bytes / fwd bytes, 0 when fwd bytes = 0\n");
    out.push_str("  - out-of-order packets are processed in capture order\n\n");
    for (i, name) in ["flow_id", "src_ip", "dst_ip", "src_port", "dst_port", "start_timestamp_us"]
        .iter()
        .enumerate()
    {
        out.push_str(&format!("{:3}  {}\n", i, name));
    }
    for (i, name) in STAT_NAMES.iter().enumerate() {
        out.push_str(&format!("{:3}  {}\n", i + 6, name));
    }
    out.push_str(&format!("{:3}  label\n", 6 + NUM_STATS));
    out
}

/// Writes the fixed 70-column flow CSV (6 ID + 63 stats + label).
pub fn write_flow_csv(path: &Path, flows: &[FeatureVector]) -> Result<(), Error> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = vec![
        "flow_id".into(),
        "src_ip".into(),
        "dst_ip".into(),
        "src_port".into(),
        "dst_port".into(),
        "start_timestamp_us".into(),
    ];
    header.extend(STAT_NAMES.iter().map(|s| s.to_string()));
    header.push("label".into());
    w.write_record(&header)?;
    for f in flows {
        let mut rec: Vec<String> = vec![
            f.flow_id.clone(),
            f.src_ip.to_string(),
            f.dst_ip.to_string(),
            f.src_port.to_string(),
            f.dst_port.to_string(),
            f.start_timestamp_us.to_string(),
        ];
        rec.extend(f.stats.iter().map(|v| v.to_string()));
        rec.push(f.label.clone());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_flow_csv(path: &Path) -> Result<Vec<FeatureVector>, Error> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != 6 + NUM_STATS + 1 {
            return Err(Error::Parse(format!(
                "flow csv row has {} columns, expected {}",
                rec.len(),
                6 + NUM_STATS + 1
            )));
        }
        let perr = |e: String| Error::Parse(format!("flow csv: {e}"));
        let mut stats = Vec::with_capacity(NUM_STATS);
        for i in 0..NUM_STATS {
            stats.push(rec[6 + i].parse::<f64>().map_err(|e| perr(e.to_string()))?);
        }
        out.push(FeatureVector {
            flow_id: rec[0].to_string(),
            src_ip: rec[1].parse().map_err(|e: std::net::AddrParseError| perr(e.to_string()))?,
            dst_ip: rec[2].parse().map_err(|e: std::net::AddrParseError| perr(e.to_string()))?,
            src_port: rec[3].parse().map_err(|e: std::num::ParseIntError| perr(e.to_string()))?,
            dst_port: rec[4].parse().map_err(|e: std::num::ParseIntError| perr(e.to_string()))?,
            start_timestamp_us: rec[5]
                .parse()
                .map_err(|e: std::num::ParseIntError| perr(e.to_string()))?,
            stats,
            label: rec[6 + NUM_STATS].to_string(),
        });
    }
    Ok(out)
}
