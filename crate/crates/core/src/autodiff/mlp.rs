//! Two-hidden-layer tanh networks with a policy head and a scalar value head.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::tape::{log_sum_exp, sigmoid, tanh, Tape, Var};
use crate::error::{Error, Result};

pub const HIDDEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Named blocks over a flat parameter array.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    blocks: Vec<Block>,
    total: usize,
}

impl Layout {
    pub fn new(shapes: &[(&str, usize, usize)]) -> Self {
        let mut offset = 0;
        let blocks = shapes
            .iter()
            .map(|&(name, rows, cols)| {
                let b = Block {
                    name: name.to_string(),
                    rows,
                    cols,
                    offset,
                };
                offset += rows * cols;
                b
            })
            .collect();
        Layout {
            blocks,
            total: offset,
        }
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn total(&self) -> usize {
        self.total
    }

    /// Block containing flat index `i`.
    pub fn block_of(&self, i: usize) -> &Block {
        self.blocks
            .iter()
            .find(|b| i >= b.offset && i < b.offset + b.len())
            .expect("index inside layout")
    }
}

/// Flat parameters (or gradients) sharing an immutable layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    layout: Arc<Layout>,
    data: Vec<f64>,
}

impl ParameterVector {
    pub fn zeros(layout: Arc<Layout>) -> Self {
        let data = vec![0.0; layout.total()];
        ParameterVector { layout, data }
    }

    pub fn from_data(layout: Arc<Layout>, data: Vec<f64>) -> Result<Self> {
        if data.len() != layout.total() {
            return Err(Error::Dimension {
                context: "parameter vector",
                expected: layout.total(),
                got: data.len(),
            });
        }
        Ok(ParameterVector { layout, data })
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn block(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .blocks
            .iter()
            .find(|b| b.name == name)
            .map(|b| &self.data[b.offset..b.offset + b.len()])
    }

    pub fn dot(&self, other: &ParameterVector) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn axpy(&mut self, alpha: f64, x: &ParameterVector) {
        for (a, b) in self.data.iter_mut().zip(&x.data) {
            *a += alpha * b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Policy head flavour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Head {
    /// Softmax over the logits (dilemma action).
    Softmax,
    /// Independent sigmoid per logit (per-neighbour assessment).
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input: usize,
    pub outputs: usize,
    pub head: Head,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkOutput {
    pub logits: Vec<f64>,
    pub value: f64,
}

impl NetworkOutput {
    /// Softmax distribution for a softmax head, per-logit sigmoid otherwise.
    pub fn probabilities(&self, head: Head) -> Vec<f64> {
        match head {
            Head::Softmax => softmax(&self.logits),
            Head::Sigmoid => self.logits.iter().map(|&z| sigmoid(z)).collect(),
        }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|&z| (z - lse).exp()).collect()
}

/// Handles into a batched forward pass recorded on a tape.
#[derive(Debug, Clone)]
pub struct TapeForward {
    pub params: Vec<Var>,
    pub input: Var,
    /// Pre-activations of the two hidden layers.
    pub pre: [Var; 2],
    pub hidden: [Var; 2],
    pub logits: Var,
    pub value: Var,
    pub rows: usize,
}

/// Per-row layer inputs and output deltas captured after a backward pass.
/// Row `r`'s gradient of a row-separable loss is recoverable from these
/// without a separate backward pass per row.
#[derive(Debug, Clone, Default)]
pub struct PerSampleFactors {
    rows: usize,
    /// For each affine layer: (input activations, output deltas, in, out).
    layers: Vec<(Vec<f64>, Vec<f64>, usize, usize)>,
}

impl PerSampleFactors {
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// `G[t][s] = ⟨g_t, h_s⟩` for the per-row gradients of two batches of the
    /// same network, via `Σ_layers (X Yᵀ + 1) ⊙ (Δ Eᵀ)`.
    pub fn gram(&self, other: &PerSampleFactors) -> Vec<Vec<f64>> {
        let (n, m) = (self.rows, other.rows);
        let mut out = vec![vec![0.0; m]; n];
        for ((xa, da, fin, fout), (xb, db, fin_b, fout_b)) in self.layers.iter().zip(&other.layers) {
            debug_assert_eq!((fin, fout), (fin_b, fout_b));
            for t in 0..n {
                let xt = &xa[t * fin..(t + 1) * fin];
                let dt = &da[t * fout..(t + 1) * fout];
                for s in 0..m {
                    let xs = &xb[s * fin..(s + 1) * fin];
                    let ds = &db[s * fout..(s + 1) * fout];
                    let dd: f64 = dt.iter().zip(ds).map(|(a, b)| a * b).sum();
                    if dd == 0.0 {
                        continue;
                    }
                    let xx: f64 = xt.iter().zip(xs).map(|(a, b)| a * b).sum();
                    out[t][s] += (xx + 1.0) * dd;
                }
            }
        }
        out
    }

    /// Explicit per-row gradient in the network's flat layout.
    pub fn row_gradient(&self, layout: &Arc<Layout>, r: usize) -> ParameterVector {
        let mut g = ParameterVector::zeros(layout.clone());
        let blocks = layout.blocks();
        for (layer, (x, d, fin, fout)) in self.layers.iter().enumerate() {
            let (wb, bb) = (&blocks[2 * layer], &blocks[2 * layer + 1]);
            let xr = &x[r * fin..(r + 1) * fin];
            let dr = &d[r * fout..(r + 1) * fout];
            for i in 0..*fin {
                for j in 0..*fout {
                    g.data[wb.offset + i * fout + j] = xr[i] * dr[j];
                }
            }
            g.data[bb.offset..bb.offset + fout].copy_from_slice(dr);
        }
        g
    }
}

/// Reusable buffers for tape-free forward passes.
#[derive(Debug, Default, Clone)]
pub struct Scratch {
    h0: Vec<f64>,
    h1: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Mlp {
    spec: MlpSpec,
    layout: Arc<Layout>,
}

impl Mlp {
    pub fn new(spec: MlpSpec) -> Self {
        let layout = Layout::new(&[
            ("hidden0.weight", spec.input, HIDDEN),
            ("hidden0.bias", 1, HIDDEN),
            ("hidden1.weight", HIDDEN, HIDDEN),
            ("hidden1.bias", 1, HIDDEN),
            ("policy.weight", HIDDEN, spec.outputs),
            ("policy.bias", 1, spec.outputs),
            ("value.weight", HIDDEN, 1),
            ("value.bias", 1, 1),
        ]);
        Mlp {
            spec,
            layout: Arc::new(layout),
        }
    }

    pub fn spec(&self) -> MlpSpec {
        self.spec
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn zeros(&self) -> ParameterVector {
        ParameterVector::zeros(self.layout.clone())
    }

    /// Orthogonal init: gain √2 on hidden layers, 0.01 on the policy head,
    /// 1 on the value head; zero biases.
    pub fn init<R: Rng>(&self, rng: &mut R) -> ParameterVector {
        let mut p = self.zeros();
        let gains = [2f64.sqrt(), 2f64.sqrt(), 0.01, 1.0];
        for (layer, gain) in gains.iter().enumerate() {
            let b = &self.layout.blocks()[2 * layer];
            let w = orthogonal(rng, b.rows, b.cols, *gain);
            p.data[b.offset..b.offset + b.len()].copy_from_slice(&w);
        }
        p
    }

    fn check_input(&self, params: &ParameterVector, cols: usize) -> Result<()> {
        if params.layout.as_ref() != self.layout.as_ref() {
            return Err(Error::Dimension {
                context: "network parameters",
                expected: self.layout.total(),
                got: params.len(),
            });
        }
        if cols != self.spec.input {
            return Err(Error::Dimension {
                context: "network input",
                expected: self.spec.input,
                got: cols,
            });
        }
        Ok(())
    }

    pub fn forward(&self, params: &ParameterVector, input: &[f64]) -> Result<NetworkOutput> {
        let mut scratch = Scratch::default();
        self.forward_with(params, input, &mut scratch)
    }

    pub fn forward_with(
        &self,
        params: &ParameterVector,
        input: &[f64],
        scratch: &mut Scratch,
    ) -> Result<NetworkOutput> {
        self.check_input(params, input.len())?;
        let mut logits = vec![0.0; self.spec.outputs];
        let value = self.forward_raw(params.as_slice(), input, scratch, &mut logits);
        Ok(NetworkOutput { logits, value })
    }

    /// Unchecked single-row forward; writes logits and returns the value.
    pub fn forward_raw(&self, p: &[f64], input: &[f64], scratch: &mut Scratch, logits: &mut [f64]) -> f64 {
        let b = self.layout.blocks();
        scratch.h0.clear();
        scratch.h0.extend_from_slice(&p[b[1].offset..b[1].offset + HIDDEN]);
        affine_acc(&p[b[0].offset..], input, &mut scratch.h0);
        scratch.h0.iter_mut().for_each(|x| *x = tanh(*x));
        scratch.h1.clear();
        scratch.h1.extend_from_slice(&p[b[3].offset..b[3].offset + HIDDEN]);
        affine_acc(&p[b[2].offset..], &scratch.h0, &mut scratch.h1);
        scratch.h1.iter_mut().for_each(|x| *x = tanh(*x));
        let k = self.spec.outputs;
        logits.copy_from_slice(&p[b[5].offset..b[5].offset + k]);
        affine_acc(&p[b[4].offset..], &scratch.h1, logits);
        let mut v = [p[b[7].offset]];
        affine_acc(&p[b[6].offset..], &scratch.h1, &mut v);
        v[0]
    }

    /// Records a batched forward pass (`rows × input`) on `tape`.
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        params: &ParameterVector,
        input: &[f64],
        rows: usize,
    ) -> Result<TapeForward> {
        if rows == 0 || input.len() != rows * self.spec.input {
            return Err(Error::Dimension {
                context: "batched network input",
                expected: rows * self.spec.input,
                got: input.len(),
            });
        }
        self.check_input(params, self.spec.input)?;
        let pv: Vec<Var> = self
            .layout
            .blocks()
            .iter()
            .map(|b| tape.leaf(b.rows, b.cols, &params.data[b.offset..b.offset + b.len()]))
            .collect();
        let x = tape.input(rows, self.spec.input, input);
        let z0m = tape.matmul(x, pv[0]);
        let z0 = tape.add_row(z0m, pv[1]);
        let h0 = tape.tanh(z0);
        let z1m = tape.matmul(h0, pv[2]);
        let z1 = tape.add_row(z1m, pv[3]);
        let h1 = tape.tanh(z1);
        let lm = tape.matmul(h1, pv[4]);
        let logits = tape.add_row(lm, pv[5]);
        let vm = tape.matmul(h1, pv[6]);
        let value = tape.add_row(vm, pv[7]);
        Ok(TapeForward {
            params: pv,
            input: x,
            pre: [z0, z1],
            hidden: [h0, h1],
            logits,
            value,
            rows,
        })
    }

    /// Gathers parameter-leaf gradients into the flat layout.
    pub fn gradient(&self, tape: &Tape, fwd: &TapeForward) -> ParameterVector {
        let mut g = self.zeros();
        for (b, &v) in self.layout.blocks().iter().zip(&fwd.params) {
            g.data[b.offset..b.offset + b.len()].copy_from_slice(tape.grad(v));
        }
        g
    }

    /// Captures per-row factors after a backward pass of a row-separable loss.
    pub fn per_sample_factors(&self, tape: &Tape, fwd: &TapeForward) -> PerSampleFactors {
        let (inp, k) = (self.spec.input, self.spec.outputs);
        let layers = vec![
            (tape.value(fwd.input).to_vec(), tape.grad(fwd.pre[0]).to_vec(), inp, HIDDEN),
            (tape.value(fwd.hidden[0]).to_vec(), tape.grad(fwd.pre[1]).to_vec(), HIDDEN, HIDDEN),
            (tape.value(fwd.hidden[1]).to_vec(), tape.grad(fwd.logits).to_vec(), HIDDEN, k),
            (tape.value(fwd.hidden[1]).to_vec(), tape.grad(fwd.value).to_vec(), HIDDEN, 1),
        ];
        PerSampleFactors {
            rows: fwd.rows,
            layers,
        }
    }
}

/// `out += xᵀ W` for a row-major `W` of shape `x.len() × out.len()`.
fn affine_acc(w: &[f64], x: &[f64], out: &mut [f64]) {
    let m = out.len();
    for (i, &xi) in x.iter().enumerate() {
        let row = &w[i * m..(i + 1) * m];
        for (o, &wij) in out.iter_mut().zip(row) {
            *o += xi * wij;
        }
    }
}

/// `rows × cols` matrix with orthonormal rows or columns, scaled by `gain`.
fn orthogonal<R: Rng>(rng: &mut R, rows: usize, cols: usize, gain: f64) -> Vec<f64> {
    // orthonormalise along the longer dimension's complement
    let (n, m, transpose) = if rows >= cols { (rows, cols, false) } else { (cols, rows, true) };
    // m orthonormal vectors of length n
    let mut vecs: Vec<Vec<f64>> = Vec::with_capacity(m);
    while vecs.len() < m {
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        for u in &vecs {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            vecs.push(v);
        }
    }
    let mut out = vec![0.0; rows * cols];
    for (j, v) in vecs.iter().enumerate() {
        for (i, &x) in v.iter().enumerate() {
            let (r, c) = if transpose { (j, i) } else { (i, j) };
            out[r * cols + c] = gain * x;
        }
    }
    out
}
