//! Matrix-valued reverse-mode tape.
//!
//! Every node owns a dense row-major block inside one shared value arena.
//! [`Tape::reset`] drops the nodes but keeps the arena capacity, so a tape
//! can be rebuilt every minibatch without touching the allocator. Handles
//! carry the generation they were created in; using a handle after a reset
//! is an error instead of a silent read of unrelated data.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    index: usize,
    generation: u64,
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    AddRow(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Min(usize, usize),
    Max(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Square(usize),
    Tanh(usize),
    Sigmoid(usize),
    Exp(usize),
    Ln(usize),
    Clamp(usize, f64, f64),
    LogSoftmax(usize),
    SliceCols(usize, usize),
    Gather(usize, usize),
    Sum(usize),
}

#[derive(Debug, Clone, Copy)]
struct Node {
    op: Op,
    rows: usize,
    cols: usize,
    offset: usize,
    /// Set on data leaves whose gradient nobody reads.
    frozen: bool,
}

impl Node {
    fn len(&self) -> usize {
        self.rows * self.cols
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    values: Vec<f64>,
    grads: Vec<f64>,
    indices: Vec<usize>,
    generation: u64,
    has_grads: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Forget all nodes; previously issued handles become invalid.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.values.clear();
        self.grads.clear();
        self.indices.clear();
        self.generation += 1;
        self.has_grads = false;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn node(&self, v: Var) -> &Node {
        assert_eq!(v.generation, self.generation, "stale tape handle");
        &self.nodes[v.index]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = self.node(v);
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        let n = *self.node(v);
        &self.values[n.offset..n.offset + n.len()]
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    /// Gradient of the last backward output with respect to `v`.
    pub fn grad(&self, v: Var) -> &[f64] {
        let n = *self.node(v);
        assert!(self.has_grads, "grad read before backward");
        &self.grads[n.offset..n.offset + n.len()]
    }

    /// Appends a node whose value is filled in by `fill`, which sees every
    /// earlier value through the shared prefix of the arena.
    fn push(&mut self, op: Op, rows: usize, cols: usize, fill: impl FnOnce(&[f64], &mut [f64])) -> Var {
        let offset = self.values.len();
        self.values.resize(offset + rows * cols, 0.0);
        let (before, out) = self.values.split_at_mut(offset);
        fill(before, out);
        self.nodes.push(Node {
            op,
            rows,
            cols,
            offset,
            frozen: false,
        });
        self.has_grads = false;
        Var {
            index: self.nodes.len() - 1,
            generation: self.generation,
        }
    }

    fn slice_of(&self, v: Var) -> (usize, usize, usize, usize) {
        let n = *self.node(v);
        (n.offset, n.rows, n.cols, v.index)
    }

    pub fn leaf(&mut self, rows: usize, cols: usize, data: &[f64]) -> Var {
        assert_eq!(data.len(), rows * cols, "leaf data does not match shape");
        self.push(Op::Leaf, rows, cols, |_, out| out.copy_from_slice(data))
    }

    /// Leaf whose gradient is never needed; backward skips work feeding it.
    pub fn input(&mut self, rows: usize, cols: usize, data: &[f64]) -> Var {
        let v = self.leaf(rows, cols, data);
        self.nodes[v.index].frozen = true;
        v
    }

    pub fn constant(&mut self, rows: usize, cols: usize, value: f64) -> Var {
        self.push(Op::Leaf, rows, cols, |_, out| out.fill(value))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ao, n, k, ai) = self.slice_of(a);
        let (bo, k2, m, bi) = self.slice_of(b);
        assert_eq!(k, k2, "matmul inner dimensions");
        self.push(Op::MatMul(ai, bi), n, m, |vals, out| {
            let av = &vals[ao..ao + n * k];
            let bv = &vals[bo..bo + k * m];
            for i in 0..n {
                let orow = &mut out[i * m..(i + 1) * m];
                for p in 0..k {
                    let x = av[i * k + p];
                    let brow = &bv[p * m..(p + 1) * m];
                    for (o, &w) in orow.iter_mut().zip(brow) {
                        *o += x * w;
                    }
                }
            }
        })
    }

    /// `a + bias` with a `1 × cols` bias broadcast over rows.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let (ao, n, m, ai) = self.slice_of(a);
        let (bo, br, bc, bi) = self.slice_of(bias);
        assert_eq!((br, bc), (1, m), "bias shape");
        self.push(Op::AddRow(ai, bi), n, m, |vals, out| {
            let b = &vals[bo..bo + m];
            for i in 0..n {
                for j in 0..m {
                    out[i * m + j] = vals[ao + i * m + j] + b[j];
                }
            }
        })
    }

    fn binary(&mut self, a: Var, b: Var, make: fn(usize, usize) -> Op, f: fn(f64, f64) -> f64) -> Var {
        let (ao, n, m, ai) = self.slice_of(a);
        let (bo, n2, m2, bi) = self.slice_of(b);
        assert_eq!((n, m), (n2, m2), "elementwise shapes");
        self.push(make(ai, bi), n, m, |vals, out| {
            for (idx, o) in out.iter_mut().enumerate() {
                *o = f(vals[ao + idx], vals[bo + idx]);
            }
        })
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let (ao, n, m, _) = self.slice_of(a);
        self.push(op, n, m, |vals, out| {
            for (idx, o) in out.iter_mut().enumerate() {
                *o = f(vals[ao + idx]);
            }
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Add, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Sub, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Mul, |x, y| x * y)
    }

    pub fn min(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Min, f64::min)
    }

    pub fn max(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Max, f64::max)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a.index, c), |x| c * x)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::AddScalar(a.index), |x| x + c)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a.index), |x| x * x)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a.index), tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a.index), sigmoid)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a.index), f64::exp)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, Op::Ln(a.index), f64::ln)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, Op::Clamp(a.index, lo, hi), move |x| x.clamp(lo, hi))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let (ao, n, m, ai) = self.slice_of(a);
        self.push(Op::LogSoftmax(ai), n, m, |vals, out| {
            for i in 0..n {
                let row = &vals[ao + i * m..ao + (i + 1) * m];
                let lse = log_sum_exp(row);
                for j in 0..m {
                    out[i * m + j] = row[j] - lse;
                }
            }
        })
    }

    /// Columns `start..end` of every row.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let (ao, n, m, ai) = self.slice_of(a);
        assert!(start < end && end <= m, "column slice out of range");
        let w = end - start;
        self.push(Op::SliceCols(ai, start), n, w, |vals, out| {
            for i in 0..n {
                out[i * w..(i + 1) * w].copy_from_slice(&vals[ao + i * m + start..ao + i * m + end]);
            }
        })
    }

    /// Picks column `cols[i]` from row `i`, giving an `n × 1` column.
    pub fn gather(&mut self, a: Var, cols: &[usize]) -> Var {
        let (ao, n, m, ai) = self.slice_of(a);
        assert_eq!(cols.len(), n, "gather index count");
        assert!(cols.iter().all(|&c| c < m), "gather index out of range");
        let start = self.indices.len();
        self.indices.extend_from_slice(cols);
        self.push(Op::Gather(ai, start), n, 1, |vals, out| {
            for (i, o) in out.iter_mut().enumerate() {
                *o = vals[ao + i * m + cols[i]];
            }
        })
    }

    /// Sum of all entries as a `1 × 1` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let (ao, n, m, ai) = self.slice_of(a);
        self.push(Op::Sum(ai), 1, 1, |vals, out| {
            out[0] = vals[ao..ao + n * m].iter().sum();
        })
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let (n, m) = self.shape(a);
        let s = self.sum(a);
        self.scale(s, 1.0 / (n * m) as f64)
    }

    /// Reverse pass from a scalar output, seeded with `seed`.
    pub fn backward(&mut self, output: Var, seed: f64) -> Result<()> {
        self.check_output(output)?;
        let n = *self.node(output);
        let seeds = vec![seed; n.len()];
        self.backward_seeded(output, &seeds)
    }

    /// Reverse pass seeding every entry of `output` with its own weight,
    /// i.e. the gradient of `Σ seeds ⊙ output`.
    pub fn backward_seeded(&mut self, output: Var, seeds: &[f64]) -> Result<()> {
        self.check_output(output)?;
        let out = *self.node(output);
        if seeds.len() != out.len() {
            return Err(Error::Dimension {
                context: "backward seed",
                expected: out.len(),
                got: seeds.len(),
            });
        }
        self.grads.clear();
        self.grads.resize(self.values.len(), 0.0);
        self.grads[out.offset..out.offset + out.len()].copy_from_slice(seeds);
        for k in (0..=output.index).rev() {
            self.backprop_node(k);
        }
        self.has_grads = true;
        Ok(())
    }

    fn check_output(&self, output: Var) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Tape("an empty tape"));
        }
        if output.generation != self.generation || output.index >= self.nodes.len() {
            return Err(Error::Tape("a handle from an incomplete or reset tape"));
        }
        Ok(())
    }

    fn backprop_node(&mut self, k: usize) {
        let node = self.nodes[k];
        let (lower, upper) = self.grads.split_at_mut(node.offset);
        let g = &upper[..node.len()];
        if g.iter().all(|&x| x == 0.0) {
            return;
        }
        let vals = &self.values;
        let nodes = &self.nodes;
        let off = |i: usize| nodes[i].offset;
        let (n, m) = (node.rows, node.cols);
        let own = &vals[node.offset..node.offset + node.len()];
        match node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let k_dim = nodes[a].cols;
                let (ao, bo) = (off(a), off(b));
                let av = &vals[ao..ao + n * k_dim];
                let bv = &vals[bo..bo + k_dim * m];
                if !nodes[a].frozen {
                    let ga = &mut lower[ao..ao + n * k_dim];
                    for i in 0..n {
                        let grow = &g[i * m..(i + 1) * m];
                        for p in 0..k_dim {
                            let brow = &bv[p * m..(p + 1) * m];
                            let mut acc = 0.0;
                            for (x, y) in grow.iter().zip(brow) {
                                acc += x * y;
                            }
                            ga[i * k_dim + p] += acc;
                        }
                    }
                }
                let gb = &mut lower[bo..bo + k_dim * m];
                for i in 0..n {
                    let grow = &g[i * m..(i + 1) * m];
                    for p in 0..k_dim {
                        let x = av[i * k_dim + p];
                        let gbrow = &mut gb[p * m..(p + 1) * m];
                        for (o, &y) in gbrow.iter_mut().zip(grow) {
                            *o += x * y;
                        }
                    }
                }
            }
            Op::AddRow(a, b) => {
                let (ao, bo) = (off(a), off(b));
                for (idx, &x) in g.iter().enumerate() {
                    lower[ao + idx] += x;
                    lower[bo + idx % m] += x;
                }
            }
            Op::Add(a, b) => {
                let (ao, bo) = (off(a), off(b));
                for (idx, &x) in g.iter().enumerate() {
                    lower[ao + idx] += x;
                    lower[bo + idx] += x;
                }
            }
            Op::Sub(a, b) => {
                let (ao, bo) = (off(a), off(b));
                for (idx, &x) in g.iter().enumerate() {
                    lower[ao + idx] += x;
                    lower[bo + idx] -= x;
                }
            }
            Op::Mul(a, b) => {
                let (ao, bo) = (off(a), off(b));
                for (idx, &x) in g.iter().enumerate() {
                    let (av, bv) = (vals[ao + idx], vals[bo + idx]);
                    lower[ao + idx] += x * bv;
                    lower[bo + idx] += x * av;
                }
            }
            Op::Min(a, b) | Op::Max(a, b) => {
                let (ao, bo) = (off(a), off(b));
                for (idx, &x) in g.iter().enumerate() {
                    // ties route to the first operand
                    if own[idx] == vals[ao + idx] {
                        lower[ao + idx] += x;
                    } else {
                        lower[bo + idx] += x;
                    }
                }
            }
            Op::Scale(a, c) => {
                let ao = off(a);
                for (idx, &x) in g.iter().enumerate() {
                    lower[ao + idx] += c * x;
                }
            }
            Op::AddScalar(a) => {
                let ao = off(a);
                for (idx, &x) in g.iter().enumerate() {
                    lower[ao + idx] += x;
                }
            }
            Op::Square(a) => {
                let ao = off(a);
                for (idx, &x) in g.iter().enumerate() {
                    lower[ao + idx] += 2.0 * vals[ao + idx] * x;
                }
            }
            Op::Tanh(a) => {
                let ao = off(a);
                for (idx, &x) in g.iter().enumerate() {
                    lower[ao + idx] += (1.0 - own[idx] * own[idx]) * x;
                }
            }
            Op::Sigmoid(a) => {
                let ao = off(a);
                for (idx, &x) in g.iter().enumerate() {
                    lower[ao + idx] += own[idx] * (1.0 - own[idx]) * x;
                }
            }
            Op::Exp(a) => {
                let ao = off(a);
                for (idx, &x) in g.iter().enumerate() {
                    lower[ao + idx] += own[idx] * x;
                }
            }
            Op::Ln(a) => {
                let ao = off(a);
                for (idx, &x) in g.iter().enumerate() {
                    lower[ao + idx] += x / vals[ao + idx];
                }
            }
            Op::Clamp(a, lo, hi) => {
                let ao = off(a);
                for (idx, &x) in g.iter().enumerate() {
                    let v = vals[ao + idx];
                    if v > lo && v < hi {
                        lower[ao + idx] += x;
                    }
                }
            }
            Op::LogSoftmax(a) => {
                let ao = off(a);
                for i in 0..n {
                    let grow = &g[i * m..(i + 1) * m];
                    let gsum: f64 = grow.iter().sum();
                    for j in 0..m {
                        let p = own[i * m + j].exp();
                        lower[ao + i * m + j] += grow[j] - p * gsum;
                    }
                }
            }
            Op::SliceCols(a, start) => {
                let ao = off(a);
                let src_cols = nodes[a].cols;
                for i in 0..n {
                    for j in 0..m {
                        lower[ao + i * src_cols + start + j] += g[i * m + j];
                    }
                }
            }
            Op::Gather(a, start) => {
                let ao = off(a);
                let src_cols = nodes[a].cols;
                for i in 0..n {
                    let c = self.indices[start + i];
                    lower[ao + i * src_cols + c] += g[i];
                }
            }
            Op::Sum(a) => {
                let ao = off(a);
                let len = nodes[a].len();
                for x in &mut lower[ao..ao + len] {
                    *x += g[0];
                }
            }
        }
    }
}

/// `tanh` through a single `exp`; absolute error stays at rounding level.
pub fn tanh(x: f64) -> f64 {
    let e = (-2.0 * x.abs()).exp();
    ((1.0 - e) / (1.0 + e)).copysign(x)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(row: &[f64]) -> f64 {
    let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    mx + row.iter().map(|&x| (x - mx).exp()).sum::<f64>().ln()
}
