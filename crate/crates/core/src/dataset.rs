//! Ground-truth labeling, abstract classes, min-max normalization and
//! time-consistent splits.

use std::collections::{BTreeMap, HashMap};
use std::net::IpAddr;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::features::{FeatureVector, NUM_TRAINABLE};

/// One ground-truth assignment rule: flows between the attacker and victim
/// hosts inside the (end-exclusive) time range carry `attack_name`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelRule {
    pub attacker_ips: Vec<IpAddr>,
    pub victim_ips: Vec<IpAddr>,
    pub start_us: i64,
    pub end_us: i64,
    pub attack_name: String,
}

impl LabelRule {
    pub fn matches(&self, fv: &FeatureVector) -> bool {
        if fv.start_timestamp_us < self.start_us || fv.start_timestamp_us >= self.end_us {
            return false;
        }
        let fwd = self.attacker_ips.contains(&fv.src_ip) && self.victim_ips.contains(&fv.dst_ip);
        let bwd = self.attacker_ips.contains(&fv.dst_ip) && self.victim_ips.contains(&fv.src_ip);
        fwd || bwd
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelRuleFile {
    pub rules: Vec<LabelRule>,
}

pub fn write_label_rules(path: &Path, rules: &[LabelRule]) -> Result<(), Error> {
    let file = LabelRuleFile { rules: rules.to_vec() };
    Ok(std::fs::write(path, serde_json::to_string_pretty(&file)?)?)
}

pub fn read_label_rules(path: &Path) -> Result<Vec<LabelRule>, Error> {
    let text = std::fs::read_to_string(path)?;
    let file: LabelRuleFile = serde_json::from_str(&text)?;
    Ok(file.rules)
}

/// Sets each flow's label from the matching rule, or "benign". Conflicting
/// rules for one flow are a configuration error.
pub fn assign_labels(flows: &mut [FeatureVector], rules: &[LabelRule]) -> Result<(), Error> {
    for fv in flows.iter_mut() {
        let mut label: Option<&str> = None;
        for rule in rules {
            if rule.matches(fv) {
                match label {
                    None => label = Some(&rule.attack_name),
                    Some(prev) if prev == rule.attack_name => {}
                    Some(prev) => {
                        return Err(Error::Config(format!(
                            "flow {} matches conflicting rules {prev:?} and {:?}",
                            fv.flow_id, rule.attack_name
                        )))
                    }
                }
            }
        }
        fv.label = label.unwrap_or("benign").to_string();
    }
    Ok(())
}

/// The five abstract traffic classes the classifier head predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AbstractLabel {
    Benign,
    Dos,
    PortScan,
    BruteforceFuzz,
    OtherMalicious,
}

pub const NUM_CLASSES: usize = 5;

impl AbstractLabel {
    pub fn class_index(self) -> usize {
        match self {
            AbstractLabel::Benign => 0,
            AbstractLabel::Dos => 1,
            AbstractLabel::PortScan => 2,
            AbstractLabel::BruteforceFuzz => 3,
            AbstractLabel::OtherMalicious => 4,
        }
    }

    pub fn from_index(i: usize) -> AbstractLabel {
        match i {
            0 => AbstractLabel::Benign,
            1 => AbstractLabel::Dos,
            2 => AbstractLabel::PortScan,
            3 => AbstractLabel::BruteforceFuzz,
            4 => AbstractLabel::OtherMalicious,
            _ => panic!("class index {i} out of range"),
        }
    }

    pub fn is_malicious(self) -> bool {
        self != AbstractLabel::Benign
    }
}

/// Total mapping from specific attack names to abstract classes, plus the
/// flags marking single-request HTTP DoS labels eligible for feature
/// augmentation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelTable {
    map: BTreeMap<String, AbstractLabel>,
    augment_eligible: Vec<String>,
}

impl Default for LabelTable {
    fn default() -> Self {
        let mut map = BTreeMap::new();
        let mut add = |names: &[&str], class: AbstractLabel| {
            for n in names {
                map.insert(n.to_string(), class);
            }
        };
        add(&["benign"], AbstractLabel::Benign);
        add(
            &["dos_http", "dos_hulk", "dos_goldeneye", "dos_loic", "dos_hoic", "ddos", "dos_slowloris", "dos_slowhttptest"],
            AbstractLabel::Dos,
        );
        add(&["portscan"], AbstractLabel::PortScan);
        add(
            &["ftp_bruteforce", "ssh_bruteforce", "web_bruteforce", "fuzzing", "sql_injection"],
            AbstractLabel::BruteforceFuzz,
        );
        add(&["infiltration", "botnet", "heartbleed"], AbstractLabel::OtherMalicious);
        // Slowloris-style slow DoS is deliberately absent here: its payload
        // pattern is informative and must not be replaced.
        let augment_eligible = ["dos_http", "dos_hulk", "dos_goldeneye", "dos_loic", "dos_hoic", "ddos"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        LabelTable { map, augment_eligible }
    }
}

impl LabelTable {
    /// Maps a specific label to its abstract class. Unknown labels are fatal
    /// so that every name gets an explicit mapping.
    pub fn abstractify(&self, label: &str) -> Result<AbstractLabel, Error> {
        self.map
            .get(label)
            .copied()
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    pub fn is_augment_eligible(&self, label: &str) -> bool {
        self.augment_eligible.iter().any(|l| l == label)
    }

    pub fn insert(&mut self, label: &str, class: AbstractLabel) {
        self.map.insert(label.to_string(), class);
    }
}

/// Per-feature min/max fitted on training data only; the applied transform
/// maps to [0, 1] with clamping, constant features map to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormalizationSpec {
    pub fn fit<'a, I>(rows: I) -> NormalizationSpec
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut min = vec![f64::INFINITY; NUM_TRAINABLE];
        let mut max = vec![f64::NEG_INFINITY; NUM_TRAINABLE];
        let mut any = false;
        for row in rows {
            assert_eq!(row.len(), NUM_TRAINABLE);
            any = true;
            for (i, &v) in row.iter().enumerate() {
                min[i] = min[i].min(v);
                max[i] = max[i].max(v);
            }
        }
        if !any {
            min.fill(0.0);
            max.fill(0.0);
        }
        NormalizationSpec { min, max }
    }

    pub fn apply_row(&self, row: &mut [f64]) {
        for (i, v) in row.iter_mut().enumerate() {
            let range = self.max[i] - self.min[i];
            *v = if range > 0.0 {
                ((*v - self.min[i]) / range).clamp(0.0, 1.0)
            } else {
                0.0
            };
        }
    }

    /// Inverse transform for in-range values of non-constant features.
    pub fn invert_row(&self, row: &mut [f64]) {
        for (i, v) in row.iter_mut().enumerate() {
            let range = self.max[i] - self.min[i];
            if range > 0.0 {
                *v = self.min[i] + *v * range;
            }
        }
    }
}

/// Splits items at a timestamp quantile so that every training item is
/// strictly earlier than every test item.
pub fn time_split<T, F>(mut items: Vec<T>, ratio: f64, ts: F) -> Result<(Vec<T>, Vec<T>), Error>
where
    F: Fn(&T) -> i64,
{
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio {ratio} not in (0, 1)")));
    }
    if items.len() < 2 {
        return Err(Error::Config("need at least 2 items to split".into()));
    }
    items.sort_by_key(|it| ts(it));
    let n = items.len();
    let target = (n as f64 * ratio).round() as usize;
    let target = target.clamp(1, n - 1);
    // Move the cut off any run of equal timestamps: prefer the closest clean
    // boundary in either direction.
    let clean = |k: usize| ts(&items[k - 1]) < ts(&items[k]);
    let cut = if clean(target) {
        Some(target)
    } else {
        (1..n.max(2))
            .filter_map(|d| {
                let lo = target.checked_sub(d).filter(|&k| k >= 1 && clean(k));
                let hi = Some(target + d).filter(|&k| k <= n - 1 && clean(k));
                lo.or(hi)
            })
            .next()
    };
    let cut = cut.ok_or_else(|| {
        Error::Config("all items share one timestamp; time split is ambiguous".into())
    })?;
    let test = items.split_off(cut);
    Ok((items, test))
}

/// Per-class flow counts, used by reports.
pub fn label_histogram(flows: &[FeatureVector]) -> HashMap<String, usize> {
    let mut h = HashMap::new();
    for f in flows {
        *h.entry(f.label.clone()).or_default() += 1;
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(src: &str, dst: &str, ts: i64) -> FeatureVector {
        FeatureVector {
            flow_id: format!("{src}-{ts}"),
            src_ip: src.parse().unwrap(),
            dst_ip: dst.parse().unwrap(),
            src_port: 40000,
            dst_port: 80,
            start_timestamp_us: ts,
            stats: vec![0.0; crate::features::NUM_STATS],
            label: "benign".into(),
        }
    }

    fn dos_rule() -> LabelRule {
        LabelRule {
            attacker_ips: vec!["10.0.9.9".parse().unwrap()],
            victim_ips: vec!["10.0.0.2".parse().unwrap()],
            start_us: 1000,
            end_us: 2000,
            attack_name: "dos_http".into(),
        }
    }

    #[test]
    fn rule_matching_and_default() {
        let rules = [dos_rule()];
        let mut flows = vec![
            fv("10.0.9.9", "10.0.0.2", 1500), // inside
            fv("10.0.1.1", "10.0.0.2", 1500), // wrong IPs
            fv("10.0.9.9", "10.0.0.2", 2000), // end-exclusive boundary
        ];
        assign_labels(&mut flows, &rules).unwrap();
        assert_eq!(flows[0].label, "dos_http");
        assert_eq!(flows[1].label, "benign");
        assert_eq!(flows[2].label, "benign");
    }

    #[test]
    fn conflicting_rules_are_fatal() {
        let mut other = dos_rule();
        other.attack_name = "portscan".into();
        let mut flows = vec![fv("10.0.9.9", "10.0.0.2", 1500)];
        assert!(assign_labels(&mut flows, &[dos_rule(), other]).is_err());
    }

    #[test]
    fn abstractify_known_and_unknown() {
        let t = LabelTable::default();
        assert_eq!(t.abstractify("dos_hulk").unwrap(), AbstractLabel::Dos);
        assert_eq!(t.abstractify("benign").unwrap(), AbstractLabel::Benign);
        assert_eq!(t.abstractify("ftp_bruteforce").unwrap(), AbstractLabel::BruteforceFuzz);
        assert!(matches!(t.abstractify("mystery"), Err(Error::UnknownLabel(_))));
        assert!(t.is_augment_eligible("dos_http"));
        assert!(!t.is_augment_eligible("dos_slowloris"));
    }

    #[test]
    fn normalizer_midpoint_clamp_and_constant() {
        let mut lo = vec![2.0; NUM_TRAINABLE];
        let mut hi = vec![4.0; NUM_TRAINABLE];
        lo[1] = 7.0; // feature 1 constant at 7
        hi[1] = 7.0;
        let spec = NormalizationSpec::fit([lo.as_slice(), hi.as_slice()]);
        let mut row = vec![3.0; NUM_TRAINABLE];
        row[1] = 7.0;
        spec.apply_row(&mut row);
        assert_eq!(row[0], 0.5);
        assert_eq!(row[1], 0.0, "constant feature maps to 0");
        let mut above = vec![9.0; NUM_TRAINABLE];
        spec.apply_row(&mut above);
        assert_eq!(above[0], 1.0, "clamped");
    }

    #[test]
    fn normalize_then_invert_recovers_in_range_values() {
        let rows: Vec<Vec<f64>> = (0..10)
            .map(|i| (0..NUM_TRAINABLE).map(|j| (i * j) as f64 * 0.37 + j as f64).collect())
            .collect();
        let spec = NormalizationSpec::fit(rows.iter().map(|r| r.as_slice()));
        let original = rows[4].clone();
        let mut row = original.clone();
        spec.apply_row(&mut row);
        spec.invert_row(&mut row);
        for (a, b) in row.iter().zip(&original) {
            if a != b {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn time_split_quantile_cut() {
        let flows: Vec<FeatureVector> = (1..=10).map(|t| fv("10.0.0.1", "10.0.0.2", t)).collect();
        let (train, test) = time_split(flows, 0.7, |f| f.start_timestamp_us).unwrap();
        assert_eq!(train.len(), 7);
        assert_eq!(test.len(), 3);
        let max_train = train.iter().map(|f| f.start_timestamp_us).max().unwrap();
        let min_test = test.iter().map(|f| f.start_timestamp_us).min().unwrap();
        assert!(max_train < min_test);
        assert_eq!(max_train, 7);
    }

    #[test]
    fn time_split_single_timestamp_is_fatal() {
        let flows: Vec<FeatureVector> = (0..5).map(|_| fv("10.0.0.1", "10.0.0.2", 42)).collect();
        assert!(time_split(flows, 0.7, |f| f.start_timestamp_us).is_err());
    }

    #[test]
    fn rules_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rules.json");
        write_label_rules(&path, &[dos_rule()]).unwrap();
        let back = read_label_rules(&path).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].attack_name, "dos_http");
    }
}
