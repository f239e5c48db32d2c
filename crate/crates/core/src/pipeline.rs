//! End-to-end plumbing: packet stream to labeled flows, flows to sequences,
//! sequences to normalized training samples, and a train/evaluate driver.
//! Shared by the command-line tool and the integration suite.

use rand::Rng;

use crate::dataset::{assign_labels, time_split, LabelTable, NormalizationSpec};
use crate::error::Error;
use crate::eval::{
    compute_metrics, confusion_matrix, count_macs, ecdf_by_type, per_class_recall, roc_curve,
    row_normalize, EvaluationReport,
};
use crate::features::{extract_features, FeatureVector};
use crate::flow::{FlowConfig, FlowTable};
use crate::model::{BiAlstm, ModelConfig, SequenceSample, TrainConfig};
use crate::packet::PacketRecord;
use crate::sequence::{FlowSequence, SequenceConfig, SequenceGenerator};

/// Replays the stream through the flow table, extracts features and applies
/// the label rules (unmatched flows stay benign).
pub fn extract_labeled_flows(
    packets: &[PacketRecord],
    rules: &[crate::dataset::LabelRule],
    config: FlowConfig,
) -> Result<Vec<FeatureVector>, Error> {
    let flows = FlowTable::replay(config, packets);
    let mut fvs = flows
        .iter()
        .map(|f| extract_features(f, &config))
        .collect::<Result<Vec<_>, _>>()?;
    assign_labels(&mut fvs, rules)?;
    Ok(fvs)
}

/// Groups flows (processed in start-time order) into sequences.
pub fn sequences_of(mut flows: Vec<FeatureVector>, config: SequenceConfig) -> Vec<FlowSequence> {
    flows.sort_by_key(|f| f.start_timestamp_us);
    let mut gen = SequenceGenerator::new(config);
    let mut out = Vec::new();
    for fv in flows {
        out.extend(gen.push_flow(fv));
    }
    out.extend(gen.flush());
    out
}

/// Min/max bounds over the real (unpadded) rows of the training sequences.
pub fn fit_normalization(train: &[FlowSequence]) -> NormalizationSpec {
    NormalizationSpec::fit(
        train
            .iter()
            .flat_map(|s| s.matrix.iter().zip(&s.pad_mask))
            .filter(|(_, &m)| m)
            .map(|(row, _)| row.as_slice()),
    )
}

/// Normalizes and strips padding, mapping specific labels to class indices.
pub fn to_sample(
    seq: &FlowSequence,
    norm: &NormalizationSpec,
    table: &LabelTable,
) -> Result<SequenceSample, Error> {
    let mut rows = Vec::with_capacity(seq.real_len());
    let mut labels = Vec::with_capacity(seq.real_len());
    for ((row, &mask), label) in seq.matrix.iter().zip(&seq.pad_mask).zip(&seq.labels) {
        if !mask {
            continue;
        }
        let mut r = row.clone();
        norm.apply_row(&mut r);
        rows.push(r);
        labels.push(table.abstractify(label)?.class_index());
    }
    Ok(SequenceSample { rows, labels })
}

pub fn to_samples(
    seqs: &[FlowSequence],
    norm: &NormalizationSpec,
    table: &LabelTable,
) -> Result<Vec<SequenceSample>, Error> {
    seqs.iter().map(|s| to_sample(s, norm, table)).collect()
}

/// 70/30-style time split over sequence emission times.
pub fn split_sequences(
    seqs: Vec<FlowSequence>,
    ratio: f64,
) -> Result<(Vec<FlowSequence>, Vec<FlowSequence>), Error> {
    time_split(seqs, ratio, |s| s.emitted_at_us)
}

/// Fits normalization on the training split, trains a fresh model.
pub fn train_on_sequences(
    train: &[FlowSequence],
    table: &LabelTable,
    model_config: ModelConfig,
    train_config: &TrainConfig,
) -> Result<(BiAlstm, NormalizationSpec, Vec<f64>), Error> {
    let norm = fit_normalization(train);
    let samples = to_samples(train, &norm, table)?;
    let mut init_rng = crate::rng::substream(train_config.seed, "init");
    let mut model = BiAlstm::init(model_config, &mut init_rng);
    let curve = model.train(&samples, train_config)?;
    Ok((model, norm, curve))
}

/// Per-timestep model outputs over a test split, aligned with ground truth.
#[derive(Debug, Clone, Default)]
pub struct TestOutcome {
    pub argmax: Vec<usize>,
    pub truth: Vec<usize>,
    pub scores: Vec<f64>,
    pub specific: Vec<String>,
}

pub fn run_inference(
    model: &BiAlstm,
    norm: &NormalizationSpec,
    table: &LabelTable,
    test: &[FlowSequence],
) -> Result<TestOutcome, Error> {
    let mut out = TestOutcome::default();
    for seq in test {
        let sample = to_sample(seq, norm, table)?;
        let preds = model.predict(&sample.rows);
        for ((pred, score), truth) in preds.into_iter().zip(&sample.labels) {
            out.argmax.push(pred);
            out.truth.push(*truth);
            out.scores.push(score);
        }
        out.specific.extend(
            seq.labels.iter().zip(&seq.pad_mask).filter(|(_, &m)| m).map(|(l, _)| l.clone()),
        );
    }
    Ok(out)
}

/// Binarized headline metrics use the threshold rule (malicious iff anomaly
/// score >= threshold); the confusion matrix uses the 5-way argmax.
pub fn build_report(
    outcome: &TestOutcome,
    model_config: &ModelConfig,
    threshold: f64,
    fpr_target: f64,
) -> Result<EvaluationReport, Error> {
    let binary_pred: Vec<usize> =
        outcome.scores.iter().map(|&s| usize::from(s >= threshold)).collect();
    let binary_truth: Vec<usize> = outcome.truth.iter().map(|&t| usize::from(t != 0)).collect();
    let binary = compute_metrics(&binary_pred, &binary_truth)?;
    let confusion = confusion_matrix(&outcome.argmax, &outcome.truth, model_config.num_classes)?;
    let malicious: Vec<bool> = outcome.truth.iter().map(|&t| t != 0).collect();
    let roc = roc_curve(&outcome.scores, &malicious)?;
    let ecdf = ecdf_by_type(&outcome.scores, &outcome.specific, "benign", fpr_target).ok();
    Ok(EvaluationReport {
        threshold,
        binary,
        per_class_recall: per_class_recall(&confusion),
        confusion_normalized: row_normalize(&confusion),
        confusion,
        roc,
        ecdf,
        cost: count_macs(model_config),
    })
}

/// Convenience wrapper: binarized F1 of a trained model on a test split.
pub fn binarized_f1(
    model: &BiAlstm,
    norm: &NormalizationSpec,
    table: &LabelTable,
    test: &[FlowSequence],
    threshold: f64,
) -> Result<f64, Error> {
    let outcome = run_inference(model, norm, table, test)?;
    let pred: Vec<usize> = outcome.scores.iter().map(|&s| usize::from(s >= threshold)).collect();
    let truth: Vec<usize> = outcome.truth.iter().map(|&t| usize::from(t != 0)).collect();
    Ok(compute_metrics(&pred, &truth)?.f1)
}

/// Threshold calibrated on the training split: the smallest anomaly score
/// that keeps the benign false-positive rate at or below `fpr_target`.
/// Applying a train-side threshold to held-out data avoids test leakage.
pub fn calibrated_threshold(
    model: &BiAlstm,
    norm: &NormalizationSpec,
    table: &LabelTable,
    train: &[FlowSequence],
    fpr_target: f64,
) -> Result<f64, Error> {
    let outcome = run_inference(model, norm, table, train)?;
    let report = ecdf_by_type(&outcome.scores, &outcome.specific, "benign", fpr_target)?;
    Ok(report.threshold)
}

/// Optionally augments the training sequences before training.
pub fn maybe_augment<R: Rng>(
    train: Vec<FlowSequence>,
    augment: bool,
    base: &crate::augment::AugBase,
    table: &LabelTable,
    rng: &mut R,
) -> Result<Vec<FlowSequence>, Error> {
    if augment {
        crate::augment::augment_training_set(&train, base, table, rng)
    } else {
        Ok(train)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, DomainPreset, ScenarioSpec};

    fn tiny_corpus(seed: u64) -> crate::synth::Corpus {
        generate(&ScenarioSpec {
            seed,
            domain: DomainPreset::Base,
            benign_clients: 6,
            servers: 4,
            benign_flows: 60,
            dos_http_flows: 60,
            dos_slowloris_flows: 10,
            portscan_flows: 30,
            ftp_bruteforce_flows: 20,
            horizon_s: 600,
        })
        .unwrap()
    }

    #[test]
    fn flows_survive_the_full_path_into_samples() {
        let corpus = tiny_corpus(1);
        let flows =
            extract_labeled_flows(&corpus.packets, &corpus.rules, FlowConfig::default()).unwrap();
        let n_flows = flows.len();
        let seqs = sequences_of(flows, SequenceConfig::default());
        let total_rows: usize = seqs.iter().map(|s| s.real_len()).sum();
        assert_eq!(total_rows, n_flows);
        let norm = fit_normalization(&seqs);
        let table = LabelTable::default();
        let samples = to_samples(&seqs, &norm, &table).unwrap();
        for s in &samples {
            assert_eq!(s.rows.len(), s.labels.len());
            for row in &s.rows {
                assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn split_preserves_sequences_and_time_order() {
        let corpus = tiny_corpus(2);
        let flows =
            extract_labeled_flows(&corpus.packets, &corpus.rules, FlowConfig::default()).unwrap();
        let seqs = sequences_of(flows, SequenceConfig::default());
        let n = seqs.len();
        let (train, test) = split_sequences(seqs, 0.7).unwrap();
        assert_eq!(train.len() + test.len(), n);
        let max_train = train.iter().map(|s| s.emitted_at_us).max().unwrap();
        let min_test = test.iter().map(|s| s.emitted_at_us).min().unwrap();
        assert!(max_train <= min_test);
    }
}
