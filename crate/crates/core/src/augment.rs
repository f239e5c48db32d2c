//! Payload-feature augmentation for single-request HTTP DoS sequences.
//!
//! A pool of 2,000 synthetic request/response exchanges (the AugBase) is
//! built once; each eligible training sequence gets the payload-related
//! cells of its real timesteps replaced by one sampled pool entry plus
//! per-cell Gaussian noise. Timing features, labels, ordering and padding
//! are never touched, and the transform runs on raw (pre-normalization)
//! values.

use std::path::Path;

use rand::distributions::{Distribution, Uniform};
use rand::Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::dataset::LabelTable;
use crate::error::Error;
use crate::features::idx;
use crate::flow::{FlowConfig, FlowTable};
use crate::packet::{PacketRecord, Protocol, TcpFlags};
use crate::sequence::FlowSequence;

/// The 18 payload-related feature indices: every statistic that is a
/// function of byte counts, disjoint from the pure-timing and pure-count
/// features.
pub const PAYLOAD_FEATURE_INDICES: [usize; 18] = [
    idx::FWD_PKT_LEN_MIN,
    idx::FWD_PKT_LEN_MAX,
    idx::FWD_PKT_LEN_AVG,
    idx::FWD_PKT_LEN_STD,
    idx::BWD_PKT_LEN_MIN,
    idx::BWD_PKT_LEN_MAX,
    idx::BWD_PKT_LEN_AVG,
    idx::BWD_PKT_LEN_STD,
    idx::BIDIR_PKT_LEN_MIN,
    idx::BIDIR_PKT_LEN_MAX,
    idx::BIDIR_PKT_LEN_AVG,
    idx::BIDIR_PKT_LEN_STD,
    idx::BYTES_PER_SEC,
    idx::FWD_AVG_SEG_SIZE,
    idx::BWD_AVG_SEG_SIZE,
    idx::FWD_SUBFLOW_AVG_BYTES,
    idx::BWD_SUBFLOW_AVG_BYTES,
    idx::DOWN_UP_RATIO,
];

pub const AUGBASE_SIZE: usize = 2_000;
pub const REQUEST_SIZE_RANGE: (u32, u32) = (100, 400);
pub const RESPONSE_SIZE_RANGE: (u32, u32) = (100, 15_000);
/// Noise standard deviation, in raw feature units.
pub const NOISE_STD: f64 = 5.0;
const MTU_PAYLOAD: u32 = 1460;

/// One simulated single-request HTTP exchange, reduced to its payload
/// feature values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugEntry {
    pub request_size: u32,
    pub response_size: u32,
    pub payload: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugBase {
    pub seed: u64,
    pub entries: Vec<AugEntry>,
}

/// Packet list of one simulated exchange: handshake, request segments,
/// response segments, victim-initiated teardown. Timing is fixed at one
/// millisecond per packet; the variability of interest is in the sizes.
fn simulate_exchange(request_size: u32, response_size: u32) -> Vec<PacketRecord> {
    use TcpFlags as F;
    let mk = |step: i64, fwd: bool, flags: u8, payload: u32| {
        let (src, dst, sport, dport) = if fwd {
            ("192.0.2.1", "192.0.2.2", 40000u16, 80u16)
        } else {
            ("192.0.2.2", "192.0.2.1", 80, 40000)
        };
        PacketRecord {
            timestamp_us: step * 1_000,
            src_ip: src.parse().unwrap(),
            dst_ip: dst.parse().unwrap(),
            src_port: sport,
            dst_port: dport,
            protocol: Protocol::Tcp,
            tcp_flags: TcpFlags(flags),
            header_len_bytes: 40,
            payload_len_bytes: payload,
            tcp_window: 64_000,
        }
    };
    let mut pkts = Vec::new();
    let mut step = 0i64;
    let mut push = |fwd: bool, flags: u8, payload: u32, step: &mut i64| {
        pkts.push(mk(*step, fwd, flags, payload));
        *step += 1;
    };
    push(true, F::SYN, 0, &mut step);
    push(false, F::SYN | F::ACK, 0, &mut step);
    push(true, F::ACK, 0, &mut step);
    let mut rest = request_size;
    while rest > 0 {
        let seg = rest.min(MTU_PAYLOAD);
        push(true, F::PSH | F::ACK, seg, &mut step);
        rest -= seg;
    }
    let mut rest = response_size;
    while rest > 0 {
        let seg = rest.min(MTU_PAYLOAD);
        push(false, F::PSH | F::ACK, seg, &mut step);
        rest -= seg;
    }
    push(false, F::FIN | F::ACK, 0, &mut step);
    push(true, F::ACK, 0, &mut step);
    push(true, F::FIN | F::ACK, 0, &mut step);
    push(false, F::ACK, 0, &mut step);
    pkts
}

/// Builds the pool by drawing request/response sizes from the two discrete
/// uniform distributions and running the regular feature extraction over the
/// simulated packets.
pub fn build_augbase(seed: u64) -> AugBase {
    let mut rng = crate::rng::substream(seed, "augbase");
    let req = Uniform::new_inclusive(REQUEST_SIZE_RANGE.0, REQUEST_SIZE_RANGE.1);
    let resp = Uniform::new_inclusive(RESPONSE_SIZE_RANGE.0, RESPONSE_SIZE_RANGE.1);
    let config = FlowConfig::default();
    let entries = (0..AUGBASE_SIZE)
        .map(|_| {
            let request_size = req.sample(&mut rng);
            let response_size = resp.sample(&mut rng);
            let packets = simulate_exchange(request_size, response_size);
            let flows = FlowTable::replay(config.clone(), &packets);
            debug_assert_eq!(flows.len(), 1);
            let fv = crate::features::extract_features(&flows[0], &config).unwrap();
            let payload = PAYLOAD_FEATURE_INDICES.iter().map(|&i| fv.stats[i]).collect();
            AugEntry { request_size, response_size, payload }
        })
        .collect();
    AugBase { seed, entries }
}

pub fn write_augbase(path: &Path, base: &AugBase) -> Result<(), Error> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["seed".to_string(), "request_size".into(), "response_size".into()];
    header.extend(
        PAYLOAD_FEATURE_INDICES
            .iter()
            .map(|&i| crate::features::STAT_NAMES[i].to_string()),
    );
    w.write_record(&header)?;
    for e in &base.entries {
        let mut rec = vec![base.seed.to_string(), e.request_size.to_string(), e.response_size.to_string()];
        rec.extend(e.payload.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_augbase(path: &Path) -> Result<AugBase, Error> {
    let mut r = csv::Reader::from_path(path)?;
    let mut entries = Vec::new();
    let mut seed = 0;
    for rec in r.records() {
        let rec = rec?;
        let perr = |e: String| Error::Parse(format!("augbase csv: {e}"));
        seed = rec[0].parse().map_err(|e: std::num::ParseIntError| perr(e.to_string()))?;
        let mut payload = Vec::with_capacity(PAYLOAD_FEATURE_INDICES.len());
        for i in 0..PAYLOAD_FEATURE_INDICES.len() {
            payload.push(rec[3 + i].parse::<f64>().map_err(|e| perr(e.to_string()))?);
        }
        entries.push(AugEntry {
            request_size: rec[1].parse().map_err(|e: std::num::ParseIntError| perr(e.to_string()))?,
            response_size: rec[2].parse().map_err(|e: std::num::ParseIntError| perr(e.to_string()))?,
            payload,
        });
    }
    Ok(AugBase { seed, entries })
}

/// True when every real flow of the sequence carries an augment-eligible
/// (single-request HTTP DoS) label.
pub fn is_eligible(seq: &FlowSequence, table: &LabelTable) -> bool {
    let mut any = false;
    for (label, &mask) in seq.labels.iter().zip(&seq.pad_mask) {
        if mask {
            any = true;
            if !table.is_augment_eligible(label) {
                return false;
            }
        }
    }
    any
}

/// Replaces the payload cells of every real timestep with one sampled pool
/// entry plus independent N(0, NOISE_STD) noise per cell per timestep.
pub fn augment_sequence<R: Rng>(
    seq: &FlowSequence,
    base: &AugBase,
    table: &LabelTable,
    rng: &mut R,
) -> Result<FlowSequence, Error> {
    if !is_eligible(seq, table) {
        return Err(Error::Precondition(
            "sequence is not single-request HTTP DoS; not eligible for augmentation".into(),
        ));
    }
    let entry = &base.entries[rng.gen_range(0..base.entries.len())];
    let noise = Normal::new(0.0, NOISE_STD).expect("valid std");
    let mut out = seq.clone();
    for (row, &mask) in out.matrix.iter_mut().zip(&seq.pad_mask) {
        if !mask {
            continue;
        }
        for (j, &feature) in PAYLOAD_FEATURE_INDICES.iter().enumerate() {
            row[feature] = entry.payload[j] + noise.sample(rng);
        }
    }
    Ok(out)
}

/// Augments every eligible sequence of a training set, passing all others
/// through unchanged. Training-split only.
pub fn augment_training_set<R: Rng>(
    sequences: &[FlowSequence],
    base: &AugBase,
    table: &LabelTable,
    rng: &mut R,
) -> Result<Vec<FlowSequence>, Error> {
    sequences
        .iter()
        .map(|seq| {
            if is_eligible(seq, table) {
                augment_sequence(seq, base, table, rng)
            } else {
                Ok(seq.clone())
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{NUM_STATS, NUM_TRAINABLE};
    use crate::sequence::SequenceKey;

    #[test]
    fn augbase_sizes_in_range_and_deterministic() {
        let base = build_augbase(11);
        assert_eq!(base.entries.len(), AUGBASE_SIZE);
        for e in &base.entries {
            assert!((100..=400).contains(&e.request_size));
            assert!((100..=15000).contains(&e.response_size));
            assert_eq!(e.payload.len(), 18);
        }
        let again = build_augbase(11);
        assert_eq!(base, again);
        assert_ne!(build_augbase(12).entries, base.entries);
    }

    #[test]
    fn response_size_mean_matches_uniform_law() {
        let base = build_augbase(3);
        let mean = base.entries.iter().map(|e| e.response_size as f64).sum::<f64>()
            / base.entries.len() as f64;
        // U(100, 15000): mean 7550, std (15000-100)/sqrt(12) ~ 4301
        let tol = 3.0 * 4301.0 / (AUGBASE_SIZE as f64).sqrt();
        assert!((mean - 7550.0).abs() < tol, "mean {mean} outside {tol} of 7550");
    }

    #[test]
    fn augbase_csv_round_trip() {
        let base = build_augbase(5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("augbase.csv");
        write_augbase(&path, &base).unwrap();
        assert_eq!(read_augbase(&path).unwrap(), base);
    }

    fn dos_sequence(label: &str, real: usize, alpha: usize) -> FlowSequence {
        let mut matrix = Vec::new();
        let mut pad_mask = Vec::new();
        let mut labels = Vec::new();
        let mut flow_ids = Vec::new();
        for i in 0..alpha {
            let is_real = i < real;
            matrix.push(if is_real { vec![1.0; NUM_TRAINABLE] } else { vec![0.0; NUM_TRAINABLE] });
            pad_mask.push(is_real);
            labels.push(if is_real { label.to_string() } else { String::new() });
            flow_ids.push(if is_real { format!("f{i}") } else { String::new() });
        }
        FlowSequence {
            key: SequenceKey {
                src_ip: "10.0.9.9".parse().unwrap(),
                dst_ip: "10.0.0.2".parse().unwrap(),
                protocol: crate::packet::Protocol::Tcp,
            },
            alpha,
            flow_ids,
            matrix,
            pad_mask,
            labels,
            emitted_at_us: 0,
        }
    }

    #[test]
    fn noise_is_bounded_and_disjoint_from_timing() {
        let base = build_augbase(1);
        let table = LabelTable::default();
        let seq = dos_sequence("dos_http", 10, 10);
        let mut rng = crate::rng::substream(1, "augment-noise");
        let out = augment_sequence(&seq, &base, &table, &mut rng).unwrap();
        // payload cells across timesteps share one pool entry: their std is
        // noise only
        let alpha_f = 10.0f64;
        for &feature in &PAYLOAD_FEATURE_INDICES {
            let vals: Vec<f64> = out.matrix.iter().map(|r| r[feature]).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
            assert!(std <= NOISE_STD * (1.0 + 3.0 / alpha_f.sqrt()), "std {std} too large");
        }
        // every non-payload cell is bit-identical
        for (a, b) in out.matrix.iter().zip(&seq.matrix) {
            for j in 0..NUM_TRAINABLE {
                if !PAYLOAD_FEATURE_INDICES.contains(&j) {
                    assert_eq!(a[j], b[j]);
                }
            }
        }
        assert_eq!(out.labels, seq.labels);
        assert_eq!(out.pad_mask, seq.pad_mask);
    }

    #[test]
    fn pad_rows_stay_zero() {
        let base = build_augbase(1);
        let table = LabelTable::default();
        let seq = dos_sequence("dos_hulk", 4, 10);
        let mut rng = crate::rng::substream(2, "augment-noise");
        let out = augment_sequence(&seq, &base, &table, &mut rng).unwrap();
        for (row, &mask) in out.matrix.iter().zip(&out.pad_mask) {
            if !mask {
                assert!(row.iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn training_set_spares_ineligible_sequences() {
        let base = build_augbase(1);
        let table = LabelTable::default();
        let seqs = vec![
            dos_sequence("dos_http", 10, 10),
            dos_sequence("dos_slowloris", 10, 10),
            dos_sequence("benign", 10, 10),
        ];
        let mut rng = crate::rng::substream(3, "augment-noise");
        let out = augment_training_set(&seqs, &base, &table, &mut rng).unwrap();
        assert_eq!(out.len(), seqs.len(), "conservation");
        assert_ne!(out[0].matrix, seqs[0].matrix);
        assert_eq!(out[1], seqs[1], "slowloris untouched");
        assert_eq!(out[2], seqs[2], "benign untouched");
    }

    #[test]
    fn ineligible_sequence_is_a_precondition_violation() {
        let base = build_augbase(1);
        let table = LabelTable::default();
        let seq = dos_sequence("benign", 10, 10);
        let mut rng = crate::rng::substream(4, "x");
        assert!(augment_sequence(&seq, &base, &table, &mut rng).is_err());
    }

    #[test]
    fn different_pool_rows_dominate_within_sequence_noise() {
        let base = build_augbase(9);
        let table = LabelTable::default();
        let mut rng = crate::rng::substream(9, "augment-noise");
        // many augmented sequences: between-sequence spread of payload means
        // far exceeds the within-sequence noise scale
        let mut means = Vec::new();
        for _ in 0..50 {
            let out =
                augment_sequence(&dos_sequence("dos_http", 10, 10), &base, &table, &mut rng).unwrap();
            let f = idx::BWD_PKT_LEN_AVG;
            means.push(out.matrix.iter().map(|r| r[f]).sum::<f64>() / 10.0);
        }
        let grand = means.iter().sum::<f64>() / means.len() as f64;
        let spread =
            (means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / means.len() as f64).sqrt();
        assert!(spread > 10.0 * NOISE_STD, "between-sequence spread {spread}");
    }

    #[test]
    fn payload_indices_are_fixed_and_disjoint() {
        let mut sorted = PAYLOAD_FEATURE_INDICES.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 18);
        assert!(sorted.iter().all(|&i| i < NUM_STATS));
        // no timing feature is payload-related
        for t in 0..=idx::IDLE_STD {
            if t == idx::BYTES_PER_SEC {
                continue;
            }
            assert!(!PAYLOAD_FEATURE_INDICES.contains(&t));
        }
    }
}
