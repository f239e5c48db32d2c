//! Bidirectional asymmetric LSTM sequence classifier.
//!
//! A dense-gated LSTM stack reads the flow sequence forward in time while a
//! 1-D ConvLSTM stack reads it backward, treating each feature vector as a
//! single-channel signal. Per timestep the two hidden states are projected
//! into a shared subspace, L2-normalized, summed and squashed, then a small
//! dense head emits 5-way class probabilities. The anomaly score of a flow
//! is the total non-benign probability mass.
//!
//! Padded timesteps are a storage artifact: both recurrences run over the
//! real prefix only, so pad-row contents never influence outputs or loss.

use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha12Rng;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{LabelTable, NormalizationSpec};
use crate::error::Error;
use crate::nn::{
    dropout_mask, softmax, Adam, ConvLstmCell, Dense, LstmCell, NodeId, ParamRef, Params, Tape,
};
use crate::rng::substream;

pub const FUSION_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub lstm_hidden: [usize; 2],
    pub conv_channels: [usize; 2],
    pub kernel: usize,
    pub pool_k: usize,
    pub pool_stride: usize,
    pub fused_dim: usize,
    pub num_classes: usize,
    pub input_dropout: f64,
    pub head_dropout: f64,
}

impl ModelConfig {
    /// The published configuration: dropout(0.5), lstm(65,48), lstm(48,48);
    /// convlstm1d(1,3,3), convlstm1d(3,6,3), maxpool(2,2); fusion to 32;
    /// dropout(0.3), fc(32,5).
    pub fn paper() -> Self {
        ModelConfig {
            input_dim: 65,
            lstm_hidden: [48, 48],
            conv_channels: [3, 6],
            kernel: 3,
            pool_k: 2,
            pool_stride: 2,
            fused_dim: 32,
            num_classes: 5,
            input_dropout: 0.5,
            head_dropout: 0.3,
        }
    }

    /// Signal length after the per-timestep maxpool.
    pub fn pooled_len(&self) -> usize {
        (self.input_dim - self.pool_k) / self.pool_stride + 1
    }

    /// Flattened ConvLSTM hidden size entering the fusion (N2).
    pub fn conv_fused_in(&self) -> usize {
        self.conv_channels[1] * self.pooled_len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// L2 penalty weight over all parameter tensors.
    pub l2_penalty: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { l2_penalty: 0.5, learning_rate: 0.001, epochs: 10, batch_size: 32, seed: 0 }
    }
}

/// One training or inference item: the real (unpadded) normalized rows of a
/// sequence plus per-row class indices. Labels may be empty for inference.
#[derive(Debug, Clone)]
pub struct SequenceSample {
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

pub struct BiAlstm {
    pub config: ModelConfig,
    pub params: Params,
    lstm: [LstmCell; 2],
    conv: [ConvLstmCell; 2],
    pub u_conv: ParamRef,
    pub u_fc: ParamRef,
    head: Dense,
}

impl BiAlstm {
    pub fn init(config: ModelConfig, rng: &mut impl Rng) -> Self {
        let mut params = Params::new();
        let lstm = [
            LstmCell::new(&mut params, rng, "lstm0", config.input_dim, config.lstm_hidden[0]),
            LstmCell::new(&mut params, rng, "lstm1", config.lstm_hidden[0], config.lstm_hidden[1]),
        ];
        let conv = [
            ConvLstmCell::new(&mut params, rng, "conv0", 1, config.conv_channels[0], config.kernel),
            ConvLstmCell::new(
                &mut params,
                rng,
                "conv1",
                config.conv_channels[0],
                config.conv_channels[1],
                config.kernel,
            ),
        ];
        let n2 = config.conv_fused_in();
        let n1 = config.lstm_hidden[1];
        let u_conv = params.xavier(
            rng,
            "fusion.u_conv",
            vec![config.fused_dim, n2],
            n2,
            config.fused_dim,
        );
        let u_fc =
            params.xavier(rng, "fusion.u_fc", vec![config.fused_dim, n1], n1, config.fused_dim);
        let head = Dense::new(&mut params, rng, "head", config.fused_dim, config.num_classes);
        BiAlstm { config, params, lstm, conv, u_conv, u_fc, head }
    }

    /// Rebuilds the model around previously trained tensors. The store must
    /// come from a model of the same configuration.
    pub fn with_params(config: ModelConfig, params: Params) -> Result<Self, Error> {
        let mut rng = substream(0, "init");
        let template = BiAlstm::init(config, &mut rng);
        if template.params.tensors.len() != params.tensors.len() {
            return Err(Error::Shape("parameter store does not match configuration".into()));
        }
        for (a, b) in template.params.tensors.iter().zip(&params.tensors) {
            if a.name != b.name || a.shape != b.shape {
                return Err(Error::Shape(format!(
                    "parameter mismatch: expected {} {:?}, found {} {:?}",
                    a.name, a.shape, b.name, b.shape
                )));
            }
        }
        Ok(BiAlstm { params, ..template })
    }

    /// Fuses a pair of raw unit states outside of a training pass. Used to
    /// check the fusion algebra in isolation.
    pub fn fuse_states(&self, h_conv: &[f64], h_fc: &[f64]) -> Vec<f64> {
        let mut tape = Tape::new();
        let binding = self.params.bind(&mut tape);
        let hc = tape.leaf(h_conv.to_vec());
        let hf = tape.leaf(h_fc.to_vec());
        let f = self.fuse(&mut tape, &binding, hc, hf);
        tape.value(f).to_vec()
    }

    fn fuse(&self, tape: &mut Tape, binding: &[NodeId], h_conv: NodeId, h_fc: NodeId) -> NodeId {
        let n = self.config.fused_dim;
        let pc = tape.matvec(binding[self.u_conv.0], h_conv, n, self.config.conv_fused_in());
        let pcn = tape.l2_normalize(pc, FUSION_EPS);
        let pf = tape.matvec(binding[self.u_fc.0], h_fc, n, self.config.lstm_hidden[1]);
        let pfn = tape.l2_normalize(pf, FUSION_EPS);
        let s = tape.add(pcn, pfn);
        tape.tanh(s)
    }

    /// Runs the full model over one sequence's real rows, returning one
    /// logit node per timestep. Dropout masks are drawn only when `dropout`
    /// is given; otherwise the pass is deterministic (evaluation mode).
    fn forward_seq(
        &self,
        tape: &mut Tape,
        binding: &[NodeId],
        rows: &[Vec<f64>],
        mut dropout: Option<&mut ChaCha12Rng>,
    ) -> Vec<NodeId> {
        let cfg = &self.config;
        let t_len = rows.len();

        // forward dense-gated unit
        let mut h_fc = Vec::with_capacity(t_len);
        let mut h = tape.leaf(vec![0.0; cfg.lstm_hidden[0]]);
        let mut c = tape.leaf(vec![0.0; cfg.lstm_hidden[0]]);
        let mut h2 = tape.leaf(vec![0.0; cfg.lstm_hidden[1]]);
        let mut c2 = tape.leaf(vec![0.0; cfg.lstm_hidden[1]]);
        for row in rows {
            let mut x = tape.leaf(row.clone());
            if let Some(rng) = dropout.as_deref_mut() {
                let mask = dropout_mask(rng, cfg.input_dim, cfg.input_dropout);
                x = tape.mul_const(x, mask);
            }
            (h, c) = self.lstm[0].step(tape, binding, x, h, c);
            (h2, c2) = self.lstm[1].step(tape, binding, h, h2, c2);
            h_fc.push(h2);
        }

        // backward convolutional unit over reversed time, re-reversed after
        let mut h_conv = vec![None; t_len];
        let len = cfg.input_dim;
        let mut hc1 = tape.leaf(vec![0.0; cfg.conv_channels[0] * len]);
        let mut cc1 = tape.leaf(vec![0.0; cfg.conv_channels[0] * len]);
        let mut hc2 = tape.leaf(vec![0.0; cfg.conv_channels[1] * len]);
        let mut cc2 = tape.leaf(vec![0.0; cfg.conv_channels[1] * len]);
        for t in (0..t_len).rev() {
            let x = tape.leaf(rows[t].clone());
            (hc1, cc1) = self.conv[0].step(tape, binding, x, hc1, cc1);
            (hc2, cc2) = self.conv[1].step(tape, binding, hc1, hc2, cc2);
            let pooled =
                tape.maxpool1d(hc2, cfg.conv_channels[1], cfg.pool_k, cfg.pool_stride);
            h_conv[t] = Some(pooled);
        }

        (0..t_len)
            .map(|t| {
                let mut fused = self.fuse(tape, binding, h_conv[t].unwrap(), h_fc[t]);
                if let Some(rng) = dropout.as_deref_mut() {
                    let mask = dropout_mask(rng, cfg.fused_dim, cfg.head_dropout);
                    fused = tape.mul_const(fused, mask);
                }
                self.head.apply(tape, binding, fused)
            })
            .collect()
    }

    /// Batch loss: mean per-timestep NLL plus l2 * sum of squared parameters.
    /// Returns the loss node; gradients are available after `tape.backward`.
    fn batch_loss(
        &self,
        tape: &mut Tape,
        binding: &[NodeId],
        batch: &[&SequenceSample],
        l2: f64,
        mut dropout: Option<&mut ChaCha12Rng>,
    ) -> NodeId {
        let mut nll_terms = Vec::new();
        let mut count = 0usize;
        for sample in batch {
            assert_eq!(sample.rows.len(), sample.labels.len());
            let logits = self.forward_seq(tape, binding, &sample.rows, dropout.as_deref_mut());
            for (node, &label) in logits.iter().zip(&sample.labels) {
                nll_terms.push(tape.softmax_nll(*node, label));
                count += 1;
            }
        }
        let total = tape.sum_scalars(&nll_terms);
        let mut loss = tape.scale(total, 1.0 / count as f64);
        if l2 != 0.0 {
            let sq: Vec<NodeId> = binding.iter().map(|&b| tape.sum_squares(b)).collect();
            let reg = tape.sum_scalars(&sq);
            let reg = tape.scale(reg, l2);
            loss = tape.add(loss, reg);
        }
        loss
    }

    /// Deterministic (dropout-free) loss and per-tensor gradients for a
    /// batch. This is the hook for gradient verification and descent tests.
    pub fn loss_and_grads(
        &self,
        batch: &[&SequenceSample],
        l2: f64,
    ) -> Result<(f64, Vec<Vec<f64>>), Error> {
        let mut tape = Tape::new();
        let binding = self.params.bind(&mut tape);
        let loss = self.batch_loss(&mut tape, &binding, batch, l2, None);
        let value = tape.value(loss)[0];
        if !value.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss {value}")));
        }
        tape.backward(loss);
        let grads: Vec<Vec<f64>> = binding.iter().map(|&b| tape.grad(b).to_vec()).collect();
        Ok((value, grads))
    }

    /// Algorithm: shuffle per epoch, accumulate the masked NLL over each
    /// mini-batch, add the L2 penalty, update with Adam. Returns the mean
    /// batch loss per epoch.
    pub fn train(
        &mut self,
        samples: &[SequenceSample],
        cfg: &TrainConfig,
    ) -> Result<Vec<f64>, Error> {
        if samples.iter().all(|s| s.rows.is_empty()) {
            return Err(Error::Precondition("empty training set".into()));
        }
        warn_if_unnormalized(samples, "train");
        let mut shuffle_rng = substream(cfg.seed, "shuffle");
        let mut dropout_rng = substream(cfg.seed, "dropout");
        let mut opt = Adam::new(cfg.learning_rate, &self.params);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut curve = Vec::with_capacity(cfg.epochs);
        for _epoch in 0..cfg.epochs {
            order.shuffle(&mut shuffle_rng);
            let mut epoch_loss = 0.0;
            let mut batches = 0usize;
            for chunk in order.chunks(cfg.batch_size.max(1)) {
                let batch: Vec<&SequenceSample> =
                    chunk.iter().map(|&i| &samples[i]).filter(|s| !s.rows.is_empty()).collect();
                if batch.is_empty() {
                    continue;
                }
                let mut tape = Tape::new();
                let binding = self.params.bind(&mut tape);
                let loss = self.batch_loss(
                    &mut tape,
                    &binding,
                    &batch,
                    cfg.l2_penalty,
                    Some(&mut dropout_rng),
                );
                let value = tape.value(loss)[0];
                if !value.is_finite() {
                    return Err(Error::Numeric(format!("non-finite training loss {value}")));
                }
                tape.backward(loss);
                let grads: Vec<Vec<f64>> =
                    binding.iter().map(|&b| tape.grad(b).to_vec()).collect();
                if grads.iter().flatten().any(|g| !g.is_finite()) {
                    return Err(Error::Numeric("non-finite gradient".into()));
                }
                opt.step(&mut self.params, &grads);
                epoch_loss += value;
                batches += 1;
            }
            curve.push(epoch_loss / batches.max(1) as f64);
        }
        Ok(curve)
    }

    /// Per-timestep class probabilities for one sequence (evaluation mode).
    pub fn predict_probs(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        if rows.is_empty() {
            return Vec::new();
        }
        let mut tape = Tape::new();
        let binding = self.params.bind(&mut tape);
        let logits = self.forward_seq(&mut tape, &binding, rows, None);
        logits.iter().map(|&l| softmax(tape.value(l))).collect()
    }

    /// Argmax class and anomaly score (total non-benign mass, class 0 being
    /// benign) per real timestep.
    pub fn predict(&self, rows: &[Vec<f64>]) -> Vec<(usize, f64)> {
        self.predict_probs(rows)
            .into_iter()
            .map(|p| {
                let argmax = p
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(i, _)| i)
                    .unwrap();
                (argmax, 1.0 - p[0])
            })
            .collect()
    }
}

/// Inputs are expected in [0,1]; values far outside suggest a missing
/// normalization pass. Non-fatal.
fn warn_if_unnormalized(samples: &[SequenceSample], what: &str) {
    let tol = 1e-6;
    let bad = samples
        .iter()
        .flat_map(|s| s.rows.iter().flatten())
        .filter(|v| **v < -tol || **v > 1.0 + tol)
        .count();
    if bad > 0 {
        eprintln!("warning: {what}: {bad} feature values outside [0,1]; input may be unnormalized");
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub params: Params,
    pub normalization: NormalizationSpec,
    pub label_table: LabelTable,
    pub train_config: TrainConfig,
}

pub const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<(), Error> {
        let f = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(f), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint, Error> {
        let f = std::fs::File::open(path)?;
        let cp: Checkpoint = serde_json::from_reader(std::io::BufReader::new(f))?;
        if cp.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!("unsupported checkpoint version {}", cp.version)));
        }
        Ok(cp)
    }
}
