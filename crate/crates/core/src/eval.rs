//! Metrics, ROC/ECDF analysis and compute-cost accounting.
//!
//! Headline precision/recall/F1 are binarized (malicious vs benign, class 0
//! being benign); per-class recalls and the row-normalized confusion matrix
//! give the 5-way view. All functions are pure counting over aligned slices.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::model::ModelConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// True when a zero denominator forced precision, recall or F1 to 0.
    pub degenerate: bool,
}

/// Binarized metrics from 5-way class indices: positive = any non-zero class.
pub fn compute_metrics(predictions: &[usize], truths: &[usize]) -> Result<BinaryMetrics, Error> {
    if predictions.len() != truths.len() {
        return Err(Error::Shape(format!(
            "prediction/truth length mismatch: {} vs {}",
            predictions.len(),
            truths.len()
        )));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &t) in predictions.iter().zip(truths) {
        match (p != 0, t != 0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let mut degenerate = false;
    let mut ratio = |num: usize, den: usize| {
        if den == 0 {
            degenerate = true;
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        degenerate = true;
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(BinaryMetrics { tp, fp, tn, fn_, precision, recall, f1, degenerate })
}

pub fn confusion_matrix(
    predictions: &[usize],
    truths: &[usize],
    num_classes: usize,
) -> Result<Vec<Vec<usize>>, Error> {
    if predictions.len() != truths.len() {
        return Err(Error::Shape("prediction/truth length mismatch".into()));
    }
    let mut m = vec![vec![0usize; num_classes]; num_classes];
    for (&p, &t) in predictions.iter().zip(truths) {
        if p >= num_classes || t >= num_classes {
            return Err(Error::Shape(format!("class index out of range: pred {p}, truth {t}")));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

/// Rows (true classes) scaled to sum to 1; empty rows stay all-zero.
pub fn row_normalize(confusion: &[Vec<usize>]) -> Vec<Vec<f64>> {
    confusion
        .iter()
        .map(|row| {
            let total: usize = row.iter().sum();
            if total == 0 {
                vec![0.0; row.len()]
            } else {
                row.iter().map(|&c| c as f64 / total as f64).collect()
            }
        })
        .collect()
}

/// Diagonal of the row-normalized confusion matrix; 0 for absent classes.
pub fn per_class_recall(confusion: &[Vec<usize>]) -> Vec<f64> {
    row_normalize(confusion).iter().enumerate().map(|(i, row)| row[i]).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// The origin point's threshold is +inf, which JSON has no literal for;
    /// it roundtrips through null.
    #[serde(serialize_with = "ser_inf", deserialize_with = "de_inf")]
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

fn ser_inf<S: serde::Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_none()
    }
}

fn de_inf<'de, D: serde::Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    let v: Option<f64> = serde::Deserialize::deserialize(d)?;
    Ok(v.unwrap_or(f64::INFINITY))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Roc {
    pub points: Vec<RocPoint>,
    /// None when truth is single-class and the curve is undefined.
    pub auc: Option<f64>,
}

/// Threshold sweep over the unique scores (decision rule: score >= t is
/// flagged), trapezoid AUC. Points run from (0,0) to (1,1) as t decreases.
pub fn roc_curve(scores: &[f64], malicious: &[bool]) -> Result<Roc, Error> {
    if scores.len() != malicious.len() {
        return Err(Error::Shape("score/label length mismatch".into()));
    }
    let pos = malicious.iter().filter(|&&m| m).count();
    let neg = malicious.len() - pos;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let mut points = vec![RocPoint { threshold: f64::INFINITY, fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        // absorb ties: all items with this score flip together
        while i < order.len() && scores[order[i]] == t {
            if malicious[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: t,
            fpr: if neg == 0 { 0.0 } else { fp as f64 / neg as f64 },
            tpr: if pos == 0 { 0.0 } else { tp as f64 / pos as f64 },
        });
    }
    let auc = if pos == 0 || neg == 0 {
        None
    } else {
        let mut area = 0.0;
        for w in points.windows(2) {
            area += (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0;
        }
        Some(area)
    };
    Ok(Roc { points, auc })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcdfReport {
    pub target_fpr: f64,
    pub threshold: f64,
    pub achieved_fpr: f64,
    /// False when score ties force the achieved FPR strictly below target
    /// by more than one benign sample's mass.
    pub exact: bool,
    /// Per traffic type: sorted (score, cumulative fraction) steps.
    pub tables: BTreeMap<String, Vec<(f64, f64)>>,
    /// Fraction of each malicious type scoring below the threshold.
    pub fnr_by_type: BTreeMap<String, f64>,
}

/// Picks the anomaly-score threshold as the benign quantile meeting the FPR
/// target (flagged iff score >= threshold), then reports each type's ECDF
/// and miss mass under that threshold.
pub fn ecdf_by_type(
    scores: &[f64],
    types: &[String],
    benign_type: &str,
    target_fpr: f64,
) -> Result<EcdfReport, Error> {
    if scores.len() != types.len() {
        return Err(Error::Shape("score/type length mismatch".into()));
    }
    let mut benign: Vec<f64> =
        scores.iter().zip(types).filter(|(_, t)| *t == benign_type).map(|(s, _)| *s).collect();
    if benign.is_empty() {
        return Err(Error::Precondition("no benign samples for FPR calibration".into()));
    }
    benign.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = benign.len();
    let fpr_at = |t: f64| benign.iter().filter(|&&s| s >= t).count() as f64 / n as f64;

    // candidate thresholds: each unique benign score, plus one just above the max
    let mut threshold = next_up(*benign.last().unwrap());
    let mut achieved = 0.0;
    for &s in benign.iter().rev() {
        let f = fpr_at(s);
        if f <= target_fpr {
            threshold = s;
            achieved = f;
        } else {
            break;
        }
    }
    if achieved == 0.0 {
        achieved = fpr_at(threshold);
    }
    let exact = target_fpr - achieved <= 1.0 / n as f64 + 1e-12;

    let mut tables: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    let mut by_type: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (s, t) in scores.iter().zip(types) {
        by_type.entry(t.clone()).or_default().push(*s);
    }
    let mut fnr_by_type = BTreeMap::new();
    for (ty, mut vals) in by_type {
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let m = vals.len() as f64;
        let table: Vec<(f64, f64)> =
            vals.iter().enumerate().map(|(i, &s)| (s, (i + 1) as f64 / m)).collect();
        if ty != benign_type {
            let misses = vals.iter().filter(|&&s| s < threshold).count();
            fnr_by_type.insert(ty.clone(), misses as f64 / m);
        }
        tables.insert(ty, table);
    }
    Ok(EcdfReport { target_fpr, threshold, achieved_fpr: achieved, exact, tables, fnr_by_type })
}

fn next_up(v: f64) -> f64 {
    f64::from_bits(v.to_bits() + 1)
}

pub const MACS_CONVENTION: &str = "1 MAC = one multiply+add; counts cover one flow timestep's forward \
pass. Dense LSTM layer: 4h(d+h). ConvLSTM layer: 4*L*k*c_in*c_out*2 (input and hidden convolution \
paths). Head: N*C. Headline MACs/parameters cover the recurrent units and the head; the fusion \
projections (N*(N1+N2) MACs, N*(N1+N2) parameters) are itemized separately. Biases and elementwise \
gate nonlinearities are uncounted in MACs.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub lstm_macs: Vec<u64>,
    pub conv_macs: Vec<u64>,
    pub fusion_macs: u64,
    pub head_macs: u64,
    /// Units + head; fusion itemized separately.
    pub total_macs: u64,
    pub lstm_params: Vec<u64>,
    pub conv_params: Vec<u64>,
    pub fusion_params: u64,
    pub head_params: u64,
    pub total_params: u64,
    pub convention: String,
}

pub fn lstm_layer_macs(d: usize, h: usize) -> u64 {
    (4 * h * (d + h)) as u64
}

pub fn convlstm_layer_macs(len: usize, k: usize, c_in: usize, c_out: usize) -> u64 {
    (4 * len * k * c_in * c_out * 2) as u64
}

pub fn count_macs(config: &ModelConfig) -> CostReport {
    let d = config.input_dim;
    let [h1, h2] = config.lstm_hidden;
    let [c1, c2] = config.conv_channels;
    let k = config.kernel;
    let n = config.fused_dim;
    let n1 = h2;
    let n2 = config.conv_fused_in();
    let c = config.num_classes;

    let lstm_macs = vec![lstm_layer_macs(d, h1), lstm_layer_macs(h1, h2)];
    let conv_macs = vec![convlstm_layer_macs(d, k, 1, c1), convlstm_layer_macs(d, k, c1, c2)];
    let fusion_macs = (n * (n1 + n2)) as u64;
    let head_macs = (n * c) as u64;

    let lstm_params = vec![(4 * h1 * (d + h1) + 4 * h1) as u64, (4 * h2 * (h1 + h2) + 4 * h2) as u64];
    let conv_params =
        vec![(4 * k * c1 * (1 + c1) + 4 * c1) as u64, (4 * k * c2 * (c1 + c2) + 4 * c2) as u64];
    let fusion_params = (n * (n1 + n2)) as u64;
    let head_params = (n * c + c) as u64;

    CostReport {
        total_macs: lstm_macs.iter().sum::<u64>() + conv_macs.iter().sum::<u64>() + head_macs,
        total_params: lstm_params.iter().sum::<u64>()
            + conv_params.iter().sum::<u64>()
            + head_params,
        lstm_macs,
        conv_macs,
        fusion_macs,
        head_macs,
        lstm_params,
        conv_params,
        fusion_params,
        head_params,
        convention: MACS_CONVENTION.to_string(),
    }
}

/// Relative F1 change (percent) of a mismatched train/test pairing against
/// the matched baseline.
pub fn percentage_error_f1(f1_cross: f64, f1_matched: f64) -> Result<f64, Error> {
    if f1_matched == 0.0 {
        return Err(Error::Numeric("percentage error undefined for zero baseline F1".into()));
    }
    Ok((f1_cross - f1_matched) / f1_matched * 100.0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub threshold: f64,
    pub binary: BinaryMetrics,
    pub per_class_recall: Vec<f64>,
    pub confusion: Vec<Vec<usize>>,
    pub confusion_normalized: Vec<Vec<f64>>,
    pub roc: Roc,
    pub ecdf: Option<EcdfReport>,
    pub cost: CostReport,
}

impl EvaluationReport {
    pub fn to_text(&self, class_names: &[&str]) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        let b = &self.binary;
        writeln!(s, "threshold            {:.4}", self.threshold).unwrap();
        writeln!(s, "precision            {:.4}", b.precision).unwrap();
        writeln!(s, "recall               {:.4}", b.recall).unwrap();
        writeln!(s, "f1                   {:.4}{}", b.f1, if b.degenerate { "  (degenerate)" } else { "" })
            .unwrap();
        match self.roc.auc {
            Some(a) => writeln!(s, "auc                  {a:.4}").unwrap(),
            None => writeln!(s, "auc                  undefined (single-class truth)").unwrap(),
        }
        writeln!(s, "\nper-class recall").unwrap();
        for (name, r) in class_names.iter().zip(&self.per_class_recall) {
            writeln!(s, "  {name:<18} {r:.4}").unwrap();
        }
        writeln!(s, "\nconfusion (rows = truth)").unwrap();
        for (name, row) in class_names.iter().zip(&self.confusion) {
            write!(s, "  {name:<18}").unwrap();
            for v in row {
                write!(s, " {v:>8}").unwrap();
            }
            writeln!(s).unwrap();
        }
        if let Some(e) = &self.ecdf {
            writeln!(
                s,
                "\necdf threshold       {:.6} (target fpr {:.4}, achieved {:.4}{})",
                e.threshold,
                e.target_fpr,
                e.achieved_fpr,
                if e.exact { "" } else { ", nearest achievable" }
            )
            .unwrap();
            for (ty, fnr) in &e.fnr_by_type {
                writeln!(s, "  fnr[{ty}] {fnr:.4}").unwrap();
            }
        }
        writeln!(
            s,
            "\nmacs total           {} (lstm {:?}, convlstm {:?}, head {}; fusion {} itemized)",
            self.cost.total_macs,
            self.cost.lstm_macs,
            self.cost.conv_macs,
            self.cost.head_macs,
            self.cost.fusion_macs
        )
        .unwrap();
        writeln!(
            s,
            "params total         {} (fusion {} itemized)",
            self.cost.total_params, self.cost.fusion_params
        )
        .unwrap();
        writeln!(s, "convention: {}", self.cost.convention).unwrap();
        s
    }

    pub fn roc_csv(&self) -> String {
        let mut s = String::from("threshold,fpr,tpr\n");
        for p in &self.roc.points {
            s.push_str(&format!("{},{},{}\n", p.threshold, p.fpr, p.tpr));
        }
        s
    }

    pub fn ecdf_csv(&self) -> String {
        let mut s = String::from("type,score,cumulative\n");
        if let Some(e) = &self.ecdf {
            for (ty, table) in &e.tables {
                for (score, cum) in table {
                    s.push_str(&format!("{ty},{score},{cum}\n"));
                }
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    use crate::rng::substream;

    #[test]
    fn direct_formula_case() {
        // TP=8, FP=2, FN=0
        let truths = [vec![1; 8], vec![0; 2]].concat();
        let preds = vec![1; 10];
        let m = compute_metrics(&preds, &truths).unwrap();
        assert_eq!(m.precision, 0.8);
        assert_eq!(m.recall, 1.0);
        assert!((m.f1 - 8.0 / 9.0).abs() < 1e-15);
        assert!(!m.degenerate);
    }

    #[test]
    fn all_benign_predictions_flag_degeneracy() {
        let truths = vec![0, 1, 2, 0, 3];
        let preds = vec![0; 5];
        let m = compute_metrics(&preds, &truths).unwrap();
        assert_eq!(m.recall, 0.0);
        assert_eq!(m.f1, 0.0);
        assert!(m.degenerate);
    }

    #[test]
    fn metrics_match_brute_force_counter() {
        let mut rng = substream(1, "shuffle");
        let preds: Vec<usize> = (0..10_000).map(|_| rng.gen_range(0..5)).collect();
        let truths: Vec<usize> = (0..10_000).map(|_| rng.gen_range(0..5)).collect();
        let m = compute_metrics(&preds, &truths).unwrap();
        let tp = preds.iter().zip(&truths).filter(|(&p, &t)| p != 0 && t != 0).count();
        let fp = preds.iter().zip(&truths).filter(|(&p, &t)| p != 0 && t == 0).count();
        let fn_ = preds.iter().zip(&truths).filter(|(&p, &t)| p == 0 && t != 0).count();
        assert_eq!(m.tp, tp);
        assert_eq!(m.precision, tp as f64 / (tp + fp) as f64);
        assert_eq!(m.recall, tp as f64 / (tp + fn_) as f64);
        let conf = confusion_matrix(&preds, &truths, 5).unwrap();
        assert_eq!(conf.iter().flatten().sum::<usize>(), 10_000);
        for row in row_normalize(&conf) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn roc_perfect_separation_has_auc_one() {
        let scores = vec![0.9, 0.8, 0.95, 0.1, 0.2, 0.05];
        let labels = vec![true, true, true, false, false, false];
        let roc = roc_curve(&scores, &labels).unwrap();
        assert_eq!(roc.auc, Some(1.0));
        for w in roc.points.windows(2) {
            assert!(w[1].fpr >= w[0].fpr);
        }
    }

    #[test]
    fn roc_random_scores_near_half() {
        let mut rng = substream(2, "shuffle");
        let n = 10_000;
        let scores: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.gen()).collect();
        let auc = roc_curve(&scores, &labels).unwrap().auc.unwrap();
        assert!((auc - 0.5).abs() < 3.0 / (n as f64).sqrt(), "auc {auc}");
    }

    #[test]
    fn roc_reversal_and_monotone_invariance() {
        let mut rng = substream(3, "shuffle");
        let scores: Vec<f64> = (0..500).map(|_| rng.gen()).collect();
        let labels: Vec<bool> = (0..500).map(|_| rng.gen_bool(0.3)).collect();
        let auc = roc_curve(&scores, &labels).unwrap().auc.unwrap();
        let reversed: Vec<f64> = scores.iter().map(|s| 1.0 - s).collect();
        let auc_rev = roc_curve(&reversed, &labels).unwrap().auc.unwrap();
        assert!((auc + auc_rev - 1.0).abs() < 1e-12);
        let cubed: Vec<f64> = scores.iter().map(|s| s.powi(3)).collect();
        let auc_cubed = roc_curve(&cubed, &labels).unwrap().auc.unwrap();
        assert!((auc - auc_cubed).abs() < 1e-12);
    }

    #[test]
    fn roc_single_class_is_flagged() {
        let roc = roc_curve(&[0.2, 0.8], &[true, true]).unwrap();
        assert_eq!(roc.auc, None);
    }

    #[test]
    fn ecdf_uniform_benign_threshold_near_quantile() {
        let n = 20_000;
        let mut scores: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        let mut types = vec!["benign".to_string(); n];
        scores.extend([1.0, 1.0, 1.0]);
        types.extend(vec!["dos_http".to_string(); 3]);
        let r = ecdf_by_type(&scores, &types, "benign", 0.015).unwrap();
        assert!((r.threshold - 0.985).abs() < 1e-3, "threshold {}", r.threshold);
        assert!(r.achieved_fpr <= 0.015);
        assert!(r.exact);
        // attack scores all 1.0 -> no misses
        assert_eq!(r.fnr_by_type["dos_http"], 0.0);
    }

    #[test]
    fn ecdf_fnr_matches_direct_count() {
        let mut rng = substream(4, "shuffle");
        let mut scores = Vec::new();
        let mut types = Vec::new();
        for _ in 0..5_000 {
            scores.push(rng.gen::<f64>() * 0.6);
            types.push("benign".to_string());
        }
        for _ in 0..800 {
            scores.push(0.3 + rng.gen::<f64>() * 0.7);
            types.push("portscan".to_string());
        }
        let r = ecdf_by_type(&scores, &types, "benign", 0.015).unwrap();
        let direct = scores
            .iter()
            .zip(&types)
            .filter(|(_, t)| *t == "portscan")
            .filter(|(s, _)| **s < r.threshold)
            .count() as f64
            / 800.0;
        assert_eq!(r.fnr_by_type["portscan"], direct);
        let benign_fpr = scores
            .iter()
            .zip(&types)
            .filter(|(_, t)| *t == "benign")
            .filter(|(s, _)| **s >= r.threshold)
            .count() as f64
            / 5_000.0;
        assert_eq!(r.achieved_fpr, benign_fpr);
        assert!(benign_fpr <= 0.015);
    }

    #[test]
    fn macs_formula_instantiations() {
        assert_eq!(lstm_layer_macs(1, 1), 8);
        // doubling h scales the layer MACs by (d+2h)/(d+h) times 2
        let base = lstm_layer_macs(65, 48) as f64;
        let doubled = lstm_layer_macs(65, 96) as f64;
        assert!((doubled / base - 2.0 * (65.0 + 96.0) / (65.0 + 48.0)).abs() < 1e-12);
    }

    #[test]
    fn paper_config_costs_fall_in_published_band() {
        let cost = count_macs(&ModelConfig::paper());
        assert_eq!(cost.lstm_macs, vec![21696, 18432]);
        assert_eq!(cost.conv_macs, vec![4680, 28080]);
        assert_eq!(cost.head_macs, 160);
        assert_eq!(cost.fusion_macs, 7680);
        assert_eq!(cost.total_macs, 73048);
        assert_eq!(cost.total_params, 41505);
        let macs_err = (cost.total_macs as f64 - 66_800.0).abs() / 66_800.0;
        let params_err = (cost.total_params as f64 - 41_400.0).abs() / 41_400.0;
        assert!(macs_err < 0.15, "macs off by {macs_err}");
        assert!(params_err < 0.15, "params off by {params_err}");
    }

    #[test]
    fn percentage_error_cases() {
        let pe = percentage_error_f1(0.9430, 0.9485).unwrap();
        assert!((pe + 0.58).abs() < 0.01, "pe {pe}");
        assert_eq!(percentage_error_f1(0.7, 0.7).unwrap(), 0.0);
        assert!((percentage_error_f1(0.55, 0.5).unwrap() - 10.0).abs() < 1e-9);
        assert!(percentage_error_f1(0.5, 0.0).is_err());
    }
}
