//! Timing slow-down manipulation and the percentage-error robustness table.
//!
//! The attack model stretches the attacker's sending gaps by a fixed integer
//! multiplier while the victim's responses keep their original gap from the
//! preceding packet. Only timestamps change; counts, sizes and flag bits are
//! untouched, and benign flows pass through unchanged.

use serde::{Deserialize, Serialize};

use crate::dataset::LabelRule;
use crate::error::Error;
use crate::eval::percentage_error_f1;
use crate::flow::{FlowConfig, FlowState, FlowTable};
use crate::packet::PacketRecord;

/// Retimes one flow's packets (given in timestamp order). `attacker_fwd`
/// says whether the attacker sent the flow's first packet.
fn retime_flow(packets: &mut [PacketRecord], attacker_src_first: bool, m: u32) {
    if m == 1 || packets.len() < 2 {
        return;
    }
    let attacker_ip = if attacker_src_first { packets[0].src_ip } else { packets[0].dst_ip };
    let mut prev_orig = packets[0].timestamp_us;
    let mut prev_new = packets[0].timestamp_us;
    for pkt in &mut packets[1..] {
        let gap = pkt.timestamp_us - prev_orig;
        let new_gap = if pkt.src_ip == attacker_ip { gap * m as i64 } else { gap };
        prev_orig = pkt.timestamp_us;
        prev_new += new_gap;
        pkt.timestamp_us = prev_new;
    }
}

fn rule_for_flow<'a>(flow: &FlowState, rules: &'a [LabelRule]) -> Option<&'a LabelRule> {
    let ts = flow.first_seen_us;
    rules.iter().find(|r| {
        ts >= r.start_us
            && ts < r.end_us
            && ((r.attacker_ips.contains(&flow.key.src_ip)
                && r.victim_ips.contains(&flow.key.dst_ip))
                || (r.attacker_ips.contains(&flow.key.dst_ip)
                    && r.victim_ips.contains(&flow.key.src_ip)))
    })
}

/// Applies the slow-down to every malicious flow in the stream and returns
/// the re-merged packet stream in timestamp order. m = 1 is the identity.
pub fn slow_down(
    stream: &[PacketRecord],
    rules: &[LabelRule],
    flow_config: FlowConfig,
    m: u32,
) -> Result<Vec<PacketRecord>, Error> {
    if m == 0 {
        return Err(Error::Precondition("multiplier must be >= 1".into()));
    }
    if m == 1 {
        return Ok(stream.to_vec());
    }
    let flows = FlowTable::replay(flow_config, stream);
    let mut out = Vec::with_capacity(stream.len());
    for flow in &flows {
        let mut packets: Vec<PacketRecord> =
            flow.merged_packets().into_iter().cloned().collect();
        if let Some(rule) = rule_for_flow(flow, rules) {
            let first = &packets[0];
            let src_is_attacker = rule.attacker_ips.contains(&first.src_ip);
            let dst_is_attacker = rule.attacker_ips.contains(&first.dst_ip);
            let attacker_src_first = match (src_is_attacker, dst_is_attacker) {
                (true, false) => true,
                (false, true) => false,
                _ => {
                    return Err(Error::Precondition(format!(
                        "rule '{}' matched flow {} but the attacker role is ambiguous",
                        rule.attack_name, flow.key
                    )))
                }
            };
            retime_flow(&mut packets, attacker_src_first, m);
        }
        out.extend(packets);
    }
    out.sort_by_key(|p| p.timestamp_us);
    Ok(out)
}

/// Percentage-error table from a measured F1 matrix: cell (i, j) holds the
/// relative F1 change of training on variant i and testing on variant j,
/// against the matched pairing (i, i). Diagonal is 0 by definition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PeTable {
    pub multipliers: Vec<u32>,
    pub f1: Vec<Vec<f64>>,
    /// None marks cells whose baseline F1 was zero (invalid).
    pub pe: Vec<Vec<Option<f64>>>,
}

pub fn pe_table(multipliers: &[u32], f1: Vec<Vec<f64>>) -> Result<PeTable, Error> {
    let n = multipliers.len();
    if f1.len() != n || f1.iter().any(|row| row.len() != n) {
        return Err(Error::Shape("F1 matrix does not match multiplier count".into()));
    }
    let mut pe = vec![vec![None; n]; n];
    for i in 0..n {
        for j in 0..n {
            pe[i][j] = if i == j {
                Some(0.0)
            } else {
                percentage_error_f1(f1[i][j], f1[i][i]).ok()
            };
        }
    }
    Ok(PeTable { multipliers: multipliers.to_vec(), f1, pe })
}

impl PeTable {
    pub fn to_text(&self) -> String {
        use std::fmt::Write;
        let mut s = String::from("train\\test");
        for m in &self.multipliers {
            write!(s, " {:>9}", format!("m={m}")).unwrap();
        }
        s.push('\n');
        for (i, m) in self.multipliers.iter().enumerate() {
            write!(s, "{:<10}", format!("m={m}")).unwrap();
            for j in 0..self.multipliers.len() {
                match self.pe[i][j] {
                    Some(pe) => write!(s, " {pe:>8.2}%").unwrap(),
                    None => write!(s, " {:>9}", "invalid").unwrap(),
                }
            }
            s.push('\n');
        }
        s
    }
}
