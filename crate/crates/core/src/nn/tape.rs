//! Minimal reverse-mode differentiation over flat f64 buffers.
//!
//! A forward pass records one node per operation; `backward` walks the tape
//! in reverse and accumulates exact gradients. The operator set is just what
//! the sequence model needs: dense and 1-D convolution gate pre-activations,
//! elementwise nonlinearities, max-pooling, L2 normalization, softmax
//! cross-entropy and sum-of-squares penalties.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// y = W x with W row-major (rows x cols).
    MatVec { w: NodeId, x: NodeId, rows: usize, cols: usize },
    Add { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Sigmoid { x: NodeId },
    Tanh { x: NodeId },
    /// Same-padded 1-D convolution; w is (c_out, c_in, k), x is (c_in, len).
    Conv1d { w: NodeId, x: NodeId, k: usize, c_in: usize, c_out: usize, len: usize },
    /// Adds a per-channel bias to a (channels, len) signal.
    AddChanBias { x: NodeId, b: NodeId, channels: usize, len: usize },
    MaxPool1d { x: NodeId, channels: usize, len: usize, k: usize, stride: usize },
    /// y = x / max(||x||, eps).
    L2Normalize { x: NodeId, eps: f64 },
    Scale { x: NodeId, c: f64 },
    /// Elementwise product with a constant mask (dropout).
    MulConst { x: NodeId },
    /// Scalar -log softmax(logits)[target].
    SoftmaxNll { logits: NodeId, target: usize },
    /// Scalar sum of squared entries.
    SumSquares { x: NodeId },
}

struct Node {
    value: Vec<f64>,
    grad: Vec<f64>,
    op: Op,
    /// Constant payload for MulConst.
    mask: Option<Vec<f64>>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> NodeId {
        let grad = vec![0.0; value.len()];
        self.nodes.push(Node { value, grad, op, mask: None });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Vec<f64>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].grad
    }

    pub fn len(&self, id: NodeId) -> usize {
        self.nodes[id.0].value.len()
    }

    pub fn matvec(&mut self, w: NodeId, x: NodeId, rows: usize, cols: usize) -> NodeId {
        debug_assert_eq!(self.len(w), rows * cols);
        debug_assert_eq!(self.len(x), cols);
        let mut y = vec![0.0; rows];
        {
            let wv = &self.nodes[w.0].value;
            let xv = &self.nodes[x.0].value;
            for i in 0..rows {
                let row = &wv[i * cols..(i + 1) * cols];
                y[i] = row.iter().zip(xv).map(|(a, b)| a * b).sum();
            }
        }
        self.push(y, Op::MatVec { w, x, rows, cols })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        debug_assert_eq!(self.len(a), self.len(b));
        let y: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(p, q)| p + q)
            .collect();
        self.push(y, Op::Add { a, b })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        debug_assert_eq!(self.len(a), self.len(b));
        let y: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(p, q)| p * q)
            .collect();
        self.push(y, Op::Mul { a, b })
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let y: Vec<f64> =
            self.nodes[x.0].value.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect();
        self.push(y, Op::Sigmoid { x })
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let y: Vec<f64> = self.nodes[x.0].value.iter().map(|v| v.tanh()).collect();
        self.push(y, Op::Tanh { x })
    }

    pub fn conv1d(
        &mut self,
        w: NodeId,
        x: NodeId,
        k: usize,
        c_in: usize,
        c_out: usize,
    ) -> NodeId {
        debug_assert_eq!(self.len(w), c_out * c_in * k);
        debug_assert_eq!(self.len(x) % c_in, 0);
        let len = self.len(x) / c_in;
        let pad = k / 2;
        let mut y = vec![0.0; c_out * len];
        {
            let wv = &self.nodes[w.0].value;
            let xv = &self.nodes[x.0].value;
            for co in 0..c_out {
                for ci in 0..c_in {
                    let kernel = &wv[(co * c_in + ci) * k..(co * c_in + ci + 1) * k];
                    let row = &xv[ci * len..(ci + 1) * len];
                    for l in 0..len {
                        let mut acc = 0.0;
                        for (t, &kv) in kernel.iter().enumerate() {
                            let pos = l + t;
                            if pos >= pad && pos - pad < len {
                                acc += kv * row[pos - pad];
                            }
                        }
                        y[co * len + l] += acc;
                    }
                }
            }
        }
        self.push(y, Op::Conv1d { w, x, k, c_in, c_out, len })
    }

    pub fn add_chan_bias(&mut self, x: NodeId, b: NodeId, channels: usize) -> NodeId {
        debug_assert_eq!(self.len(b), channels);
        let len = self.len(x) / channels;
        let mut y = self.nodes[x.0].value.clone();
        for c in 0..channels {
            let bias = self.nodes[b.0].value[c];
            for v in &mut y[c * len..(c + 1) * len] {
                *v += bias;
            }
        }
        self.push(y, Op::AddChanBias { x, b, channels, len })
    }

    pub fn maxpool1d(&mut self, x: NodeId, channels: usize, k: usize, stride: usize) -> NodeId {
        let len = self.len(x) / channels;
        let out_len = (len - k) / stride + 1;
        let mut y = vec![0.0; channels * out_len];
        {
            let xv = &self.nodes[x.0].value;
            for c in 0..channels {
                for o in 0..out_len {
                    let start = c * len + o * stride;
                    y[c * out_len + o] =
                        xv[start..start + k].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                }
            }
        }
        self.push(y, Op::MaxPool1d { x, channels, len, k, stride })
    }

    pub fn l2_normalize(&mut self, x: NodeId, eps: f64) -> NodeId {
        let norm = self.nodes[x.0].value.iter().map(|v| v * v).sum::<f64>().sqrt();
        let denom = norm.max(eps);
        let y: Vec<f64> = self.nodes[x.0].value.iter().map(|v| v / denom).collect();
        self.push(y, Op::L2Normalize { x, eps })
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let y: Vec<f64> = self.nodes[x.0].value.iter().map(|v| v * c).collect();
        self.push(y, Op::Scale { x, c })
    }

    pub fn mul_const(&mut self, x: NodeId, mask: Vec<f64>) -> NodeId {
        debug_assert_eq!(self.len(x), mask.len());
        let y: Vec<f64> =
            self.nodes[x.0].value.iter().zip(&mask).map(|(v, m)| v * m).collect();
        let id = self.push(y, Op::MulConst { x });
        self.nodes[id.0].mask = Some(mask);
        id
    }

    pub fn softmax_nll(&mut self, logits: NodeId, target: usize) -> NodeId {
        let p = softmax(&self.nodes[logits.0].value);
        let loss = -(p[target].max(1e-300)).ln();
        self.push(vec![loss], Op::SoftmaxNll { logits, target })
    }

    pub fn sum_squares(&mut self, x: NodeId) -> NodeId {
        let s = self.nodes[x.0].value.iter().map(|v| v * v).sum();
        self.push(vec![s], Op::SumSquares { x })
    }

    /// Sums a list of scalar nodes.
    pub fn sum_scalars(&mut self, terms: &[NodeId]) -> NodeId {
        assert!(!terms.is_empty());
        let mut acc = terms[0];
        for &t in &terms[1..] {
            acc = self.add(acc, t);
        }
        acc
    }

    /// Reverse pass from a scalar root. Gradients accumulate into every
    /// upstream node, leaves included.
    pub fn backward(&mut self, root: NodeId) {
        assert_eq!(self.len(root), 1, "backward root must be scalar");
        for n in &mut self.nodes {
            n.grad.iter_mut().for_each(|g| *g = 0.0);
        }
        self.nodes[root.0].grad[0] = 1.0;
        for i in (0..=root.0).rev() {
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {}
                Op::MatVec { w, x, rows, cols } => {
                    let gy = std::mem::take(&mut self.nodes[i].grad);
                    for r in 0..rows {
                        let g = gy[r];
                        if g == 0.0 {
                            continue;
                        }
                        for c in 0..cols {
                            let xv = self.nodes[x.0].value[c];
                            let wv = self.nodes[w.0].value[r * cols + c];
                            self.nodes[w.0].grad[r * cols + c] += g * xv;
                            self.nodes[x.0].grad[c] += g * wv;
                        }
                    }
                    self.nodes[i].grad = gy;
                }
                Op::Add { a, b } => {
                    let gy = std::mem::take(&mut self.nodes[i].grad);
                    for (j, g) in gy.iter().enumerate() {
                        self.nodes[a.0].grad[j] += g;
                        self.nodes[b.0].grad[j] += g;
                    }
                    self.nodes[i].grad = gy;
                }
                Op::Mul { a, b } => {
                    let gy = std::mem::take(&mut self.nodes[i].grad);
                    for j in 0..gy.len() {
                        let av = self.nodes[a.0].value[j];
                        let bv = self.nodes[b.0].value[j];
                        self.nodes[a.0].grad[j] += gy[j] * bv;
                        self.nodes[b.0].grad[j] += gy[j] * av;
                    }
                    self.nodes[i].grad = gy;
                }
                Op::Sigmoid { x } => {
                    let gy = std::mem::take(&mut self.nodes[i].grad);
                    for j in 0..gy.len() {
                        let y = self.nodes[i].value[j];
                        self.nodes[x.0].grad[j] += gy[j] * y * (1.0 - y);
                    }
                    self.nodes[i].grad = gy;
                }
                Op::Tanh { x } => {
                    let gy = std::mem::take(&mut self.nodes[i].grad);
                    for j in 0..gy.len() {
                        let y = self.nodes[i].value[j];
                        self.nodes[x.0].grad[j] += gy[j] * (1.0 - y * y);
                    }
                    self.nodes[i].grad = gy;
                }
                Op::Conv1d { w, x, k, c_in, c_out, len } => {
                    let gy = std::mem::take(&mut self.nodes[i].grad);
                    let pad = k / 2;
                    for co in 0..c_out {
                        for ci in 0..c_in {
                            let base = (co * c_in + ci) * k;
                            for l in 0..len {
                                let g = gy[co * len + l];
                                if g == 0.0 {
                                    continue;
                                }
                                for t in 0..k {
                                    let pos = l + t;
                                    if pos >= pad && pos - pad < len {
                                        let xi = ci * len + pos - pad;
                                        let wv = self.nodes[w.0].value[base + t];
                                        let xv = self.nodes[x.0].value[xi];
                                        self.nodes[w.0].grad[base + t] += g * xv;
                                        self.nodes[x.0].grad[xi] += g * wv;
                                    }
                                }
                            }
                        }
                    }
                    self.nodes[i].grad = gy;
                }
                Op::AddChanBias { x, b, channels, len } => {
                    let gy = std::mem::take(&mut self.nodes[i].grad);
                    for c in 0..channels {
                        for l in 0..len {
                            let g = gy[c * len + l];
                            self.nodes[x.0].grad[c * len + l] += g;
                            self.nodes[b.0].grad[c] += g;
                        }
                    }
                    self.nodes[i].grad = gy;
                }
                Op::MaxPool1d { x, channels, len, k, stride } => {
                    let gy = std::mem::take(&mut self.nodes[i].grad);
                    let out_len = (len - k) / stride + 1;
                    for c in 0..channels {
                        for o in 0..out_len {
                            let start = c * len + o * stride;
                            let mut best = start;
                            for j in start + 1..start + k {
                                if self.nodes[x.0].value[j] > self.nodes[x.0].value[best] {
                                    best = j;
                                }
                            }
                            self.nodes[x.0].grad[best] += gy[c * out_len + o];
                        }
                    }
                    self.nodes[i].grad = gy;
                }
                Op::L2Normalize { x, eps } => {
                    let gy = std::mem::take(&mut self.nodes[i].grad);
                    let norm =
                        self.nodes[x.0].value.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm > eps {
                        let dot: f64 = self.nodes[x.0]
                            .value
                            .iter()
                            .zip(&gy)
                            .map(|(v, g)| v * g)
                            .sum();
                        let n3 = norm * norm * norm;
                        for j in 0..gy.len() {
                            let xv = self.nodes[x.0].value[j];
                            self.nodes[x.0].grad[j] += gy[j] / norm - xv * dot / n3;
                        }
                    } else {
                        for j in 0..gy.len() {
                            self.nodes[x.0].grad[j] += gy[j] / eps;
                        }
                    }
                    self.nodes[i].grad = gy;
                }
                Op::Scale { x, c } => {
                    let gy = std::mem::take(&mut self.nodes[i].grad);
                    for j in 0..gy.len() {
                        self.nodes[x.0].grad[j] += gy[j] * c;
                    }
                    self.nodes[i].grad = gy;
                }
                Op::MulConst { x } => {
                    let gy = std::mem::take(&mut self.nodes[i].grad);
                    let mask = self.nodes[i].mask.take().unwrap();
                    for j in 0..gy.len() {
                        self.nodes[x.0].grad[j] += gy[j] * mask[j];
                    }
                    self.nodes[i].mask = Some(mask);
                    self.nodes[i].grad = gy;
                }
                Op::SoftmaxNll { logits, target } => {
                    let g = self.nodes[i].grad[0];
                    let p = softmax(&self.nodes[logits.0].value);
                    for (j, pj) in p.iter().enumerate() {
                        let indicator = if j == target { 1.0 } else { 0.0 };
                        self.nodes[logits.0].grad[j] += g * (pj - indicator);
                    }
                }
                Op::SumSquares { x } => {
                    let g = self.nodes[i].grad[0];
                    for j in 0..self.nodes[x.0].value.len() {
                        let xv = self.nodes[x.0].value[j];
                        self.nodes[x.0].grad[j] += g * 2.0 * xv;
                    }
                }
            }
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}
