//! Recurrent cells and the small layer helpers built on the tape.
//!
//! Gate order everywhere is input, forget, candidate, output. The ConvLSTM
//! cell is the 1-D variant: every gate pre-activation swaps the dense
//! products for same-padded convolutions, so hidden and cell state are
//! (channels, length) signals instead of vectors.

use rand::Rng;

use super::params::{ParamRef, Params};
use super::tape::{NodeId, Tape};

const GATES: [&str; 4] = ["i", "f", "g", "o"];

#[derive(Debug, Clone)]
pub struct LstmCell {
    pub input: usize,
    pub hidden: usize,
    pub w_x: [ParamRef; 4],
    pub w_h: [ParamRef; 4],
    pub b: [ParamRef; 4],
}

impl LstmCell {
    pub fn new(
        params: &mut Params,
        rng: &mut impl Rng,
        name: &str,
        input: usize,
        hidden: usize,
    ) -> Self {
        let w_x = GATES.map(|g| {
            params.xavier(rng, &format!("{name}.w_x{g}"), vec![hidden, input], input, hidden)
        });
        let w_h = GATES.map(|g| {
            params.xavier(rng, &format!("{name}.w_h{g}"), vec![hidden, hidden], hidden, hidden)
        });
        let b = GATES.map(|g| params.zeros(&format!("{name}.b_{g}"), vec![hidden]));
        LstmCell { input, hidden, w_x, w_h, b }
    }

    pub fn param_count(&self) -> usize {
        4 * self.hidden * (self.input + self.hidden) + 4 * self.hidden
    }

    /// One recurrence step; returns (h, c).
    pub fn step(
        &self,
        tape: &mut Tape,
        binding: &[NodeId],
        x: NodeId,
        h_prev: NodeId,
        c_prev: NodeId,
    ) -> (NodeId, NodeId) {
        let pre = |tape: &mut Tape, gate: usize| {
            let xa = tape.matvec(binding[self.w_x[gate].0], x, self.hidden, self.input);
            let ha = tape.matvec(binding[self.w_h[gate].0], h_prev, self.hidden, self.hidden);
            let s = tape.add(xa, ha);
            tape.add(s, binding[self.b[gate].0])
        };
        let zi = pre(tape, 0);
        let i = tape.sigmoid(zi);
        let zf = pre(tape, 1);
        let f = tape.sigmoid(zf);
        let zg = pre(tape, 2);
        let g = tape.tanh(zg);
        let zo = pre(tape, 3);
        let o = tape.sigmoid(zo);
        let fc = tape.mul(f, c_prev);
        let ig = tape.mul(i, g);
        let c = tape.add(fc, ig);
        let tc = tape.tanh(c);
        let h = tape.mul(o, tc);
        (h, c)
    }
}

#[derive(Debug, Clone)]
pub struct ConvLstmCell {
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub w_x: [ParamRef; 4],
    pub w_h: [ParamRef; 4],
    pub b: [ParamRef; 4],
}

impl ConvLstmCell {
    pub fn new(
        params: &mut Params,
        rng: &mut impl Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
    ) -> Self {
        let w_x = GATES.map(|g| {
            params.xavier(
                rng,
                &format!("{name}.w_x{g}"),
                vec![c_out, c_in, k],
                c_in * k,
                c_out * k,
            )
        });
        let w_h = GATES.map(|g| {
            params.xavier(
                rng,
                &format!("{name}.w_h{g}"),
                vec![c_out, c_out, k],
                c_out * k,
                c_out * k,
            )
        });
        let b = GATES.map(|g| params.zeros(&format!("{name}.b_{g}"), vec![c_out]));
        ConvLstmCell { c_in, c_out, k, w_x, w_h, b }
    }

    pub fn param_count(&self) -> usize {
        4 * self.k * self.c_out * (self.c_in + self.c_out) + 4 * self.c_out
    }

    /// One recurrence step over (channels, len) signals; returns (h, c).
    pub fn step(
        &self,
        tape: &mut Tape,
        binding: &[NodeId],
        x: NodeId,
        h_prev: NodeId,
        c_prev: NodeId,
    ) -> (NodeId, NodeId) {
        let pre = |tape: &mut Tape, gate: usize| {
            let xa = tape.conv1d(binding[self.w_x[gate].0], x, self.k, self.c_in, self.c_out);
            let ha =
                tape.conv1d(binding[self.w_h[gate].0], h_prev, self.k, self.c_out, self.c_out);
            let s = tape.add(xa, ha);
            tape.add_chan_bias(s, binding[self.b[gate].0], self.c_out)
        };
        let zi = pre(tape, 0);
        let i = tape.sigmoid(zi);
        let zf = pre(tape, 1);
        let f = tape.sigmoid(zf);
        let zg = pre(tape, 2);
        let g = tape.tanh(zg);
        let zo = pre(tape, 3);
        let o = tape.sigmoid(zo);
        let fc = tape.mul(f, c_prev);
        let ig = tape.mul(i, g);
        let c = tape.add(fc, ig);
        let tc = tape.tanh(c);
        let h = tape.mul(o, tc);
        (h, c)
    }
}

#[derive(Debug, Clone)]
pub struct Dense {
    pub input: usize,
    pub output: usize,
    pub w: ParamRef,
    pub b: ParamRef,
}

impl Dense {
    pub fn new(
        params: &mut Params,
        rng: &mut impl Rng,
        name: &str,
        input: usize,
        output: usize,
    ) -> Self {
        let w = params.xavier(rng, &format!("{name}.w"), vec![output, input], input, output);
        let b = params.zeros(&format!("{name}.b"), vec![output]);
        Dense { input, output, w, b }
    }

    pub fn param_count(&self) -> usize {
        self.output * (self.input + 1)
    }

    pub fn apply(&self, tape: &mut Tape, binding: &[NodeId], x: NodeId) -> NodeId {
        let y = tape.matvec(binding[self.w.0], x, self.output, self.input);
        tape.add(y, binding[self.b.0])
    }
}

/// Inverted-dropout mask: kept entries carry 1/(1-p) so evaluation needs no
/// rescaling. p = 0 yields the identity mask.
pub fn dropout_mask(rng: &mut impl Rng, len: usize, p: f64) -> Vec<f64> {
    assert!((0.0..1.0).contains(&p));
    if p == 0.0 {
        return vec![1.0; len];
    }
    let keep = 1.0 - p;
    (0..len).map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect()
}
