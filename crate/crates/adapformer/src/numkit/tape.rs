//! Reverse-mode autodiff over whole tensors.
//!
//! A `Tape` is an append-only arena of nodes; every op records its inputs by
//! index, so reverse iteration is already a reverse topological order. Graphs
//! are cheap to build and throw away, which lets the training loop stage the
//! parameters once per batch and truncate back to that watermark after each
//! sample (see `Tape::mark` / `Tape::truncate`).

use super::rng::Xoshiro256pp;
use super::tensor::{matmul, matmul_nt, matmul_tn, Tensor};

/// Epsilon floor used by instance normalization (per-token rows).
pub const NORM_EPS: f64 = 1e-5;

/// Handle to a node on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul { a: Var, b: Var },
    /// C = A * B^T with B stored untransposed (the linear-layer form).
    MatMulNT { a: Var, b: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, c: f64 },
    /// bias[j] added to every row (column-wise bias).
    AddBias { a: Var, bias: Var },
    /// bias[i] added to every column of row i (row-wise bias).
    AddRowBias { a: Var, bias: Var },
    Relu { a: Var },
    SoftmaxRows { a: Var },
    InstanceNormRows { a: Var },
    Transpose { a: Var },
    MeanAll { a: Var },
    SumAll { a: Var },
    Dropout { a: Var, mask: Vec<f64> },
    GatherRows { a: Var, idx: Vec<usize> },
    SliceRows { a: Var, start: usize },
    ConcatRows { parts: Vec<Var> },
    Reshape { a: Var },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

pub struct Tape {
    nodes: Vec<Node>,
    train: bool,
}

/// Gradients produced by one backward pass, indexed by `Var`.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

impl Tape {
    /// `train` governs dropout; evaluation tapes leave it off.
    pub fn new(train: bool) -> Self {
        Tape { nodes: Vec::with_capacity(128), train }
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Watermark for `truncate`.
    pub fn mark(&self) -> usize {
        self.nodes.len()
    }

    /// Drop all nodes recorded after `mark`, keeping staged leaves alive.
    pub fn truncate(&mut self, mark: usize) {
        self.nodes.truncate(mark);
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        debug_assert!(value.is_finite(), "non-finite values produced by a tape op");
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Input that no gradient flows into (data, targets, precomputed matrices).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable leaf; `backward` will produce a gradient for it.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = matmul(self.value(a), self.value(b));
        let rg = self.needs_grad(a) || self.needs_grad(b);
        self.push(value, Op::MatMul { a, b }, rg)
    }

    /// a * b^T, with b given untransposed.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let value = matmul_nt(self.value(a), self.value(b));
        let rg = self.needs_grad(a) || self.needs_grad(b);
        self.push(value, Op::MatMulNT { a, b }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "add shape mismatch");
        let mut out = va.clone();
        out.add_scaled(vb, 1.0);
        let rg = self.needs_grad(a) || self.needs_grad(b);
        self.push(out, Op::Add { a, b }, rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "sub shape mismatch");
        let mut out = va.clone();
        out.add_scaled(vb, -1.0);
        let rg = self.needs_grad(a) || self.needs_grad(b);
        self.push(out, Op::Sub { a, b }, rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "mul shape mismatch");
        let data = va
            .data()
            .iter()
            .zip(vb.data().iter())
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor::from_vec(data, va.shape());
        let rg = self.needs_grad(a) || self.needs_grad(b);
        self.push(out, Op::Mul { a, b }, rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let mut out = self.value(a).clone();
        out.scale_in_place(c);
        let rg = self.needs_grad(a);
        self.push(out, Op::Scale { a, c }, rg)
    }

    /// Add a length-n bias to every row of an m x n matrix.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let (m, n) = self.value(a).dims2();
        assert_eq!(self.value(bias).len(), n, "column bias length mismatch");
        let mut out = self.value(a).clone();
        {
            let bd = self.nodes[bias.0].value.data().to_vec();
            let od = out.data_mut();
            for i in 0..m {
                for (j, b) in bd.iter().enumerate() {
                    od[i * n + j] += b;
                }
            }
        }
        let rg = self.needs_grad(a) || self.needs_grad(bias);
        self.push(out, Op::AddBias { a, bias }, rg)
    }

    /// Add bias[i] to every column of row i of an m x n matrix.
    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Var {
        let (m, n) = self.value(a).dims2();
        assert_eq!(self.value(bias).len(), m, "row bias length mismatch");
        let mut out = self.value(a).clone();
        {
            let bd = self.nodes[bias.0].value.data().to_vec();
            let od = out.data_mut();
            for (i, b) in bd.iter().enumerate() {
                for j in 0..n {
                    od[i * n + j] += b;
                }
            }
        }
        let rg = self.needs_grad(a) || self.needs_grad(bias);
        self.push(out, Op::AddRowBias { a, bias }, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let data = self.value(a).data().iter().map(|&x| x.max(0.0)).collect();
        let out = Tensor::from_vec(data, self.value(a).shape());
        let rg = self.needs_grad(a);
        self.push(out, Op::Relu { a }, rg)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (m, n) = self.value(a).dims2();
        let mut out = Tensor::zeros(&[m, n]);
        for i in 0..m {
            let row = self.value(a).row(i).to_vec();
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            let orow = &mut out.data_mut()[i * n..(i + 1) * n];
            for (o, &x) in orow.iter_mut().zip(row.iter()) {
                *o = (x - mx).exp();
                sum += *o;
            }
            for o in orow.iter_mut() {
                *o /= sum;
            }
        }
        let rg = self.needs_grad(a);
        self.push(out, Op::SoftmaxRows { a }, rg)
    }

    /// Normalize each row to mean 0 / population std 1 (std floored at NORM_EPS).
    pub fn instance_norm_rows(&mut self, a: Var) -> Var {
        let (m, n) = self.value(a).dims2();
        assert!(n >= 2, "instance norm needs at least 2 columns");
        let mut out = Tensor::zeros(&[m, n]);
        for i in 0..m {
            let row = self.value(a).row(i);
            let (mu, sd) = row_stats(row);
            let s = sd.max(NORM_EPS);
            let orow = &mut out.data_mut()[i * n..(i + 1) * n];
            for (o, &x) in orow.iter_mut().zip(row.iter()) {
                *o = (x - mu) / s;
            }
        }
        let rg = self.needs_grad(a);
        self.push(out, Op::InstanceNormRows { a }, rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose2();
        let rg = self.needs_grad(a);
        self.push(out, Op::Transpose { a }, rg)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let mean = v.data().iter().sum::<f64>() / v.len() as f64;
        let rg = self.needs_grad(a);
        self.push(Tensor::scalar(mean), Op::MeanAll { a }, rg)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let sum = self.value(a).data().iter().sum::<f64>();
        let rg = self.needs_grad(a);
        self.push(Tensor::scalar(sum), Op::SumAll { a }, rg)
    }

    /// Inverted dropout. Identity when the tape is in eval mode or rate is 0.
    pub fn dropout(&mut self, a: Var, rate: f64, rng: &mut Xoshiro256pp) -> Var {
        assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0,1)");
        if !self.train || rate == 0.0 {
            return a;
        }
        let keep = 1.0 - rate;
        let mask: Vec<f64> = (0..self.value(a).len())
            .map(|_| if rng.next_f64() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(mask.iter())
            .map(|(x, m)| x * m)
            .collect();
        let out = Tensor::from_vec(data, self.value(a).shape());
        let rg = self.needs_grad(a);
        self.push(out, Op::Dropout { a, mask }, rg)
    }

    /// Copy the given rows (repeats allowed) into a new matrix.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let (m, n) = self.value(a).dims2();
        let mut out = Tensor::zeros(&[idx.len(), n]);
        for (r, &src) in idx.iter().enumerate() {
            assert!(src < m, "gather row {src} out of range {m}");
            let row = self.value(a).row(src).to_vec();
            out.data_mut()[r * n..(r + 1) * n].copy_from_slice(&row);
        }
        let rg = self.needs_grad(a);
        self.push(out, Op::GatherRows { a, idx: idx.to_vec() }, rg)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (m, n) = self.value(a).dims2();
        assert!(start + len <= m, "row slice out of range");
        let data = self.value(a).data()[start * n..(start + len) * n].to_vec();
        let out = Tensor::from_vec(data, &[len, n]);
        let rg = self.needs_grad(a);
        self.push(out, Op::SliceRows { a, start }, rg)
    }

    /// Column slice, composed from transpose + row slice.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let t = self.transpose(a);
        let s = self.slice_rows(t, start, len);
        self.transpose(s)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows needs at least one part");
        let n = self.value(parts[0]).dims2().1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (pm, pn) = self.value(p).dims2();
            assert_eq!(pn, n, "concat_rows column mismatch");
            rows += pm;
            data.extend_from_slice(self.value(p).data());
        }
        let out = Tensor::from_vec(data, &[rows, n]);
        let rg = parts.iter().any(|&p| self.needs_grad(p));
        self.push(out, Op::ConcatRows { parts: parts.to_vec() }, rg)
    }

    /// Column concatenation, composed from transposes + row concatenation.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let ts: Vec<Var> = parts.iter().map(|&p| self.transpose(p)).collect();
        let c = self.concat_rows(&ts);
        self.transpose(c)
    }

    /// View with a different shape (same element count and order).
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let out = self.value(a).reshaped(shape);
        let rg = self.needs_grad(a);
        self.push(out, Op::Reshape { a }, rg)
    }

    /// Reverse pass from a scalar loss. Returns per-node gradients; nodes the
    /// loss does not depend on (or that need no gradient) stay `None`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(
            self.value(loss).len(),
            1,
            "backward requires a scalar loss, got shape {:?}",
            self.value(loss).shape()
        );
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..self.nodes.len()).rev() {
            if grads[i].is_none() || !self.nodes[i].requires_grad {
                continue;
            }
            let g = grads[i].take().unwrap();
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn backprop_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let send = |v: Var, delta: Tensor, grads: &mut [Option<Tensor>]| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.add_scaled(&delta, 1.0),
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                if self.needs_grad(*a) {
                    send(*a, matmul_nt(g, self.value(*b)), grads);
                }
                if self.needs_grad(*b) {
                    send(*b, matmul_tn(self.value(*a), g), grads);
                }
            }
            Op::MatMulNT { a, b } => {
                if self.needs_grad(*a) {
                    send(*a, matmul(g, self.value(*b)), grads);
                }
                if self.needs_grad(*b) {
                    send(*b, matmul_tn(g, self.value(*a)), grads);
                }
            }
            Op::Add { a, b } => {
                send(*a, g.clone(), grads);
                send(*b, g.clone(), grads);
            }
            Op::Sub { a, b } => {
                send(*a, g.clone(), grads);
                let mut neg = g.clone();
                neg.scale_in_place(-1.0);
                send(*b, neg, grads);
            }
            Op::Mul { a, b } => {
                if self.needs_grad(*a) {
                    let d = g
                        .data()
                        .iter()
                        .zip(self.value(*b).data().iter())
                        .map(|(x, y)| x * y)
                        .collect();
                    send(*a, Tensor::from_vec(d, g.shape()), grads);
                }
                if self.needs_grad(*b) {
                    let d = g
                        .data()
                        .iter()
                        .zip(self.value(*a).data().iter())
                        .map(|(x, y)| x * y)
                        .collect();
                    send(*b, Tensor::from_vec(d, g.shape()), grads);
                }
            }
            Op::Scale { a, c } => {
                let mut d = g.clone();
                d.scale_in_place(*c);
                send(*a, d, grads);
            }
            Op::AddBias { a, bias } => {
                send(*a, g.clone(), grads);
                if self.needs_grad(*bias) {
                    let (m, n) = g.dims2();
                    let mut d = Tensor::zeros(&[n]);
                    for i in 0..m {
                        for j in 0..n {
                            d.data_mut()[j] += g.data()[i * n + j];
                        }
                    }
                    send(*bias, d, grads);
                }
            }
            Op::AddRowBias { a, bias } => {
                send(*a, g.clone(), grads);
                if self.needs_grad(*bias) {
                    let (m, _) = g.dims2();
                    let mut d = Tensor::zeros(&[m]);
                    for i in 0..m {
                        d.data_mut()[i] = g.row(i).iter().sum();
                    }
                    send(*bias, d, grads);
                }
            }
            Op::Relu { a } => {
                let d = g
                    .data()
                    .iter()
                    .zip(self.value(*a).data().iter())
                    .map(|(gv, &x)| if x > 0.0 { *gv } else { 0.0 })
                    .collect();
                send(*a, Tensor::from_vec(d, g.shape()), grads);
            }
            Op::SoftmaxRows { a } => {
                let y = &node.value;
                let (m, n) = y.dims2();
                let mut d = Tensor::zeros(&[m, n]);
                for i in 0..m {
                    let yrow = y.row(i);
                    let grow = g.row(i);
                    let dot: f64 = yrow.iter().zip(grow.iter()).map(|(a, b)| a * b).sum();
                    let drow = &mut d.data_mut()[i * n..(i + 1) * n];
                    for ((dv, &yv), &gv) in drow.iter_mut().zip(yrow.iter()).zip(grow.iter()) {
                        *dv = yv * (gv - dot);
                    }
                }
                send(*a, d, grads);
            }
            Op::InstanceNormRows { a } => {
                let y = &node.value;
                let x = self.value(*a);
                let (m, n) = y.dims2();
                let mut d = Tensor::zeros(&[m, n]);
                for i in 0..m {
                    let (_, sd) = row_stats(x.row(i));
                    let s = sd.max(NORM_EPS);
                    let yrow = y.row(i);
                    let grow = g.row(i);
                    let gmean: f64 = grow.iter().sum::<f64>() / n as f64;
                    let drow = &mut d.data_mut()[i * n..(i + 1) * n];
                    if sd > NORM_EPS {
                        let gy: f64 =
                            grow.iter().zip(yrow.iter()).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                        for ((dv, &yv), &gv) in drow.iter_mut().zip(yrow.iter()).zip(grow.iter()) {
                            *dv = (gv - gmean - yv * gy) / s;
                        }
                    } else {
                        // Floored: std is a constant, only the mean shift remains.
                        for (dv, &gv) in drow.iter_mut().zip(grow.iter()) {
                            *dv = (gv - gmean) / s;
                        }
                    }
                }
                send(*a, d, grads);
            }
            Op::Transpose { a } => {
                send(*a, g.transpose2(), grads);
            }
            Op::MeanAll { a } => {
                let len = self.value(*a).len();
                let v = g.item() / len as f64;
                let mut d = Tensor::zeros(self.value(*a).shape());
                d.fill(v);
                send(*a, d, grads);
            }
            Op::SumAll { a } => {
                let mut d = Tensor::zeros(self.value(*a).shape());
                d.fill(g.item());
                send(*a, d, grads);
            }
            Op::Dropout { a, mask } => {
                let d = g
                    .data()
                    .iter()
                    .zip(mask.iter())
                    .map(|(gv, m)| gv * m)
                    .collect();
                send(*a, Tensor::from_vec(d, g.shape()), grads);
            }
            Op::GatherRows { a, idx } => {
                let (_, n) = self.value(*a).dims2();
                let mut d = Tensor::zeros(self.value(*a).shape());
                for (r, &src) in idx.iter().enumerate() {
                    let grow = g.row(r).to_vec();
                    let drow = &mut d.data_mut()[src * n..(src + 1) * n];
                    for (dv, gv) in drow.iter_mut().zip(grow.iter()) {
                        *dv += gv;
                    }
                }
                send(*a, d, grads);
            }
            Op::SliceRows { a, start } => {
                let (_, n) = self.value(*a).dims2();
                let (gm, _) = g.dims2();
                let mut d = Tensor::zeros(self.value(*a).shape());
                d.data_mut()[start * n..(start + gm) * n].copy_from_slice(g.data());
                send(*a, d, grads);
            }
            Op::ConcatRows { parts } => {
                let (_, n) = node.value.dims2();
                let mut offset = 0;
                for &p in parts {
                    let (pm, _) = self.value(p).dims2();
                    if self.needs_grad(p) {
                        let d = Tensor::from_vec(
                            g.data()[offset * n..(offset + pm) * n].to_vec(),
                            &[pm, n],
                        );
                        send(p, d, grads);
                    }
                    offset += pm;
                }
            }
            Op::Reshape { a } => {
                send(*a, g.reshaped(self.value(*a).shape()), grads);
            }
        }
    }
}

fn row_stats(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    let mu = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n;
    (mu, var.sqrt())
}
