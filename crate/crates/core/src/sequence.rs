//! Groups completed flows into fixed-length sequences keyed by
//! (src IP, dst IP, protocol), with a sliding window of size `alpha` and a
//! periodic flush every `tau` seconds of stream time.
//!
//! The flush clock runs on stream time (the largest flow timestamp seen), so
//! offline replays are deterministic.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::net::IpAddr;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::features::{FeatureVector, NUM_TRAINABLE};
use crate::packet::Protocol;

/// Flow key with the ports dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SequenceKey {
    pub src_ip: IpAddr,
    pub dst_ip: IpAddr,
    pub protocol: Protocol,
}

impl SequenceKey {
    pub fn of(fv: &FeatureVector) -> SequenceKey {
        SequenceKey {
            src_ip: fv.src_ip,
            dst_ip: fv.dst_ip,
            protocol: fv.protocol(),
        }
    }
}

/// A fixed-length window of flows sharing one [`SequenceKey`]. Real flows
/// come first, in arrival order; the remainder is zero-padded with
/// `pad_mask = false`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSequence {
    pub key: SequenceKey,
    pub alpha: usize,
    pub flow_ids: Vec<String>,
    /// Raw (pre-normalization) trainable features, one row per timestep.
    pub matrix: Vec<Vec<f64>>,
    pub pad_mask: Vec<bool>,
    pub labels: Vec<String>,
    pub emitted_at_us: i64,
}

impl FlowSequence {
    pub fn real_len(&self) -> usize {
        self.pad_mask.iter().filter(|&&m| m).count()
    }

    fn from_flows(key: SequenceKey, flows: Vec<FeatureVector>, alpha: usize, now_us: i64) -> Self {
        assert!(!flows.is_empty() && flows.len() <= alpha);
        let mut flow_ids = Vec::with_capacity(alpha);
        let mut matrix = Vec::with_capacity(alpha);
        let mut pad_mask = Vec::with_capacity(alpha);
        let mut labels = Vec::with_capacity(alpha);
        for fv in &flows {
            flow_ids.push(fv.flow_id.clone());
            matrix.push(fv.trainable());
            pad_mask.push(true);
            labels.push(fv.label.clone());
        }
        while matrix.len() < alpha {
            flow_ids.push(String::new());
            matrix.push(vec![0.0; NUM_TRAINABLE]);
            pad_mask.push(false);
            labels.push(String::new());
        }
        FlowSequence {
            key,
            alpha,
            flow_ids,
            matrix,
            pad_mask,
            labels,
            emitted_at_us: now_us,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SequenceConfig {
    /// Window size.
    pub alpha: usize,
    /// Flush period in microseconds of stream time.
    pub tau_us: i64,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        SequenceConfig {
            alpha: 10,
            tau_us: 30_000_000,
        }
    }
}

/// The connection table. Pushes are sequential; emitted sequences are
/// immutable.
#[derive(Debug)]
pub struct SequenceGenerator {
    config: SequenceConfig,
    table: HashMap<SequenceKey, Vec<FeatureVector>>,
    stream_time_us: Option<i64>,
    next_flush_us: Option<i64>,
}

impl SequenceGenerator {
    pub fn new(config: SequenceConfig) -> Self {
        assert!(config.alpha >= 1);
        SequenceGenerator {
            config,
            table: HashMap::new(),
            stream_time_us: None,
            next_flush_us: None,
        }
    }

    /// Appends a flow to its key's FIFO list. Emits the list as a sequence
    /// when it reaches `alpha` rows; also performs any timeout flushes that
    /// became due at this flow's timestamp.
    pub fn push_flow(&mut self, fv: FeatureVector) -> Vec<FlowSequence> {
        let mut emitted = Vec::new();
        let ts = fv.start_timestamp_us;
        let stream = self.stream_time_us.map_or(ts, |t| t.max(ts));
        self.stream_time_us = Some(stream);
        let deadline = *self.next_flush_us.get_or_insert(ts + self.config.tau_us);
        if stream >= deadline {
            emitted.extend(self.flush());
            let mut next = deadline;
            while stream >= next {
                next += self.config.tau_us;
            }
            self.next_flush_us = Some(next);
        }
        let key = SequenceKey::of(&fv);
        let list = self.table.entry(key).or_default();
        list.push(fv);
        if list.len() == self.config.alpha {
            let flows = self.table.remove(&key).unwrap();
            emitted.push(FlowSequence::from_flows(key, flows, self.config.alpha, stream));
        }
        emitted
    }

    /// Empties the table, padding short lists to `alpha`.
    pub fn flush(&mut self) -> Vec<FlowSequence> {
        let now = self.stream_time_us.unwrap_or(0);
        let mut entries: Vec<(SequenceKey, Vec<FeatureVector>)> = self.table.drain().collect();
        // deterministic emission order: by first flow arrival
        entries.sort_by_key(|(_, flows)| flows[0].start_timestamp_us);
        entries
            .into_iter()
            .map(|(key, flows)| FlowSequence::from_flows(key, flows, self.config.alpha, now))
            .collect()
    }

    pub fn buffered_keys(&self) -> usize {
        self.table.len()
    }

    /// Replays a flow list through a fresh generator, final flush included.
    pub fn replay(config: SequenceConfig, flows: &[FeatureVector]) -> Vec<FlowSequence> {
        let mut g = SequenceGenerator::new(config);
        let mut out = Vec::new();
        for fv in flows {
            out.extend(g.push_flow(fv.clone()));
        }
        out.extend(g.flush());
        out
    }
}

/// Writes sequences as line-delimited JSON, one record per sequence.
pub fn write_sequences(path: &Path, sequences: &[FlowSequence]) -> Result<(), Error> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for seq in sequences {
        serde_json::to_writer(&mut f, seq)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_sequences(path: &Path) -> Result<Vec<FlowSequence>, Error> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn fv(src: &str, dst: &str, ts: i64, id: &str) -> FeatureVector {
        let mut stats = vec![0.0; crate::features::NUM_STATS];
        stats[crate::features::idx::PROTOCOL_CODE] = 6.0;
        stats[crate::features::idx::DURATION] = 0.5;
        FeatureVector {
            flow_id: id.to_string(),
            src_ip: src.parse().unwrap(),
            dst_ip: dst.parse().unwrap(),
            src_port: 40000,
            dst_port: 80,
            start_timestamp_us: ts,
            stats,
            label: "benign".to_string(),
        }
    }

    #[test]
    fn emits_at_alpha_and_pads_on_flush() {
        let mut g = SequenceGenerator::new(SequenceConfig { alpha: 10, tau_us: i64::MAX / 2 });
        let mut emitted = Vec::new();
        for i in 0..23 {
            let out = g.push_flow(fv("10.0.0.1", "10.0.0.2", 1000 + i, &format!("f{i}")));
            if i == 9 || i == 19 {
                assert_eq!(out.len(), 1, "emit at flow {}", i + 1);
            } else {
                assert!(out.is_empty());
            }
            emitted.extend(out);
        }
        let rest = g.flush();
        assert_eq!(rest.len(), 1);
        assert_eq!(rest[0].real_len(), 3);
        assert_eq!(
            rest[0].pad_mask,
            [true, true, true, false, false, false, false, false, false, false]
        );
        // padded rows are all-zero
        for (row, &mask) in rest[0].matrix.iter().zip(&rest[0].pad_mask) {
            if !mask {
                assert!(row.iter().all(|&v| v == 0.0));
            }
        }
        emitted.extend(rest);
        // conservation: every flow id appears exactly once
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for s in &emitted {
            for (id, &m) in s.flow_ids.iter().zip(&s.pad_mask) {
                if m {
                    *counts.entry(id.clone()).or_default() += 1;
                }
            }
        }
        assert_eq!(counts.len(), 23);
        assert!(counts.values().all(|&c| c == 1));
    }

    #[test]
    fn keys_are_isolated() {
        let mut g = SequenceGenerator::new(SequenceConfig::default());
        assert!(g.push_flow(fv("10.0.0.1", "10.0.0.2", 0, "a")).is_empty());
        assert!(g.push_flow(fv("10.0.0.3", "10.0.0.2", 1, "b")).is_empty());
        assert_eq!(g.buffered_keys(), 2);
    }

    #[test]
    fn interleaved_keys_stay_pure() {
        let keys = [("10.0.0.1", "10.0.0.2"), ("10.0.0.3", "10.0.0.4"), ("10.0.0.5", "10.0.0.6")];
        let mut flows = Vec::new();
        for i in 0..10 {
            for (j, (s, d)) in keys.iter().enumerate() {
                flows.push(fv(s, d, (i * 3 + j as i64) * 100, &format!("k{j}i{i}")));
            }
        }
        let seqs = SequenceGenerator::replay(
            SequenceConfig { alpha: 10, tau_us: i64::MAX / 2 },
            &flows,
        );
        assert_eq!(seqs.len(), 3);
        for s in &seqs {
            assert_eq!(s.real_len(), 10);
            let src = s.key.src_ip.to_string();
            let k = keys.iter().position(|(a, _)| *a == src).unwrap();
            for (i, id) in s.flow_ids.iter().enumerate() {
                assert_eq!(id, &format!("k{k}i{i}"), "arrival order preserved");
            }
        }
    }

    #[test]
    fn stream_time_triggers_periodic_flushes() {
        // Flows on distinct keys so length never reaches alpha; timestamps
        // span 95 s with tau = 30 s.
        let mut g = SequenceGenerator::new(SequenceConfig { alpha: 10, tau_us: 30_000_000 });
        let mut emitted = Vec::new();
        let mut n = 0;
        for sec in (0..95).step_by(5) {
            let src = format!("10.0.{}.{}", n / 200, n % 200 + 1);
            n += 1;
            emitted.extend(g.push_flow(fv(&src, "10.0.0.250", sec * 1_000_000, &format!("s{sec}"))));
        }
        emitted.extend(g.flush());
        // flushes due at stream times 30/60/90 s produce at least 3 batches
        let flush_times: std::collections::BTreeSet<i64> =
            emitted.iter().map(|s| s.emitted_at_us).collect();
        assert!(
            flush_times.is_superset(&[30_000_000, 60_000_000, 90_000_000].into()),
            "automatic flushes due at 30/60/90 s, got {flush_times:?}"
        );
        assert_eq!(
            emitted.iter().map(|s| s.real_len()).sum::<usize>(),
            19,
            "no flow lost or duplicated"
        );
    }

    #[test]
    fn empty_flush_is_empty() {
        let mut g = SequenceGenerator::new(SequenceConfig::default());
        assert!(g.flush().is_empty());
    }

    #[test]
    fn jsonl_round_trip() {
        let flows: Vec<FeatureVector> =
            (0..13).map(|i| fv("10.0.0.1", "10.0.0.2", i * 1000, &format!("f{i}"))).collect();
        let seqs = SequenceGenerator::replay(SequenceConfig::default(), &flows);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seqs.jsonl");
        write_sequences(&path, &seqs).unwrap();
        assert_eq!(read_sequences(&path).unwrap(), seqs);
    }
}
