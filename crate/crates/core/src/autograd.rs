//! Tape-based reverse-mode differentiation over small dense matrices.
//!
//! Every value on the tape is a row-major `rows × cols` matrix; feature maps
//! use one row per channel. Operations append a node holding the forward
//! value plus whatever the backward pass needs, and [`Tape::backward`]
//! walks the nodes in reverse to accumulate gradients.

use crate::spectral::dct;

pub type NodeId = usize;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "tensor data does not match {rows}x{cols}");
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// Single-row tensor.
    pub fn row(data: Vec<f64>) -> Self {
        Self { rows: 1, cols: data.len(), data }
    }

    /// Single-column tensor.
    pub fn column(data: Vec<f64>) -> Self {
        Self { rows: data.len(), cols: 1, data }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transposed(&self) -> Tensor {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// `a (m×k) · b (k×n)`.
fn matmul_plain(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.cols, b.rows, "matmul inner dimensions differ");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a.data[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(m, n, out)
}

/// Dot product with four partial sums so the loop vectorises.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `a (m×k) · bᵀ` for `b (n×k)`.
fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.cols, b.cols, "matmul inner dimensions differ");
    let (m, n) = (a.rows, b.rows);
    let mut out = Vec::with_capacity(m * n);
    for i in 0..m {
        let arow = a.row_slice(i);
        out.extend((0..n).map(|j| dot(arow, b.row_slice(j))));
    }
    Tensor::new(m, n, out)
}

/// `aᵀ · b` for `a (k×m)`, `b (k×n)`.
fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.rows, b.rows, "matmul inner dimensions differ");
    let (m, n) = (a.cols, b.cols);
    let mut out = vec![0.0; m * n];
    for p in 0..a.rows {
        let brow = b.row_slice(p);
        for (i, &av) in a.row_slice(p).iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (o, bv) in out[i * n..(i + 1) * n].iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(m, n, out)
}

#[derive(Debug, Clone, Copy)]
pub struct ConvSpec {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

impl ConvSpec {
    pub fn same(kernel: usize) -> Self {
        Self { kernel, stride: 1, pad: kernel / 2, groups: 1 }
    }

    pub fn out_len(&self, len: usize) -> usize {
        (len + 2 * self.pad - self.kernel) / self.stride + 1
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(usize),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Silu { x: NodeId, sig: Vec<f64> },
    AddColBias(NodeId, NodeId),
    ScaleShift { x: NodeId, gamma: NodeId, beta: NodeId },
    MatMul { a: NodeId, b: NodeId, ta: bool, tb: bool },
    Conv1d { x: NodeId, w: NodeId, b: NodeId, spec: ConvSpec },
    GroupNorm { x: NodeId, gamma: NodeId, beta: NodeId, groups: usize, rstd: Vec<f64>, xhat: Vec<f64> },
    SoftmaxRows(NodeId),
    DctRows { x: NodeId, in_len: usize },
    IdctRows { x: NodeId, in_len: usize },
    ConcatRows(NodeId, NodeId),
    SliceRows { x: NodeId, start: usize },
    Upsample2(NodeId),
    Downsample2(NodeId),
    MeanAbsDiff { pred: NodeId, target: NodeId },
    Sum(NodeId),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients produced by [`Tape::backward`], indexed by node. Only leaves
/// and parameters keep theirs once the sweep is done.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the root with respect to `id`; `None` when `id` does not
    /// influence the root.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id).and_then(Option::as_ref)
    }
}

/// Recording of one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

pub const GROUP_NORM_EPS: f64 = 1e-5;

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id].value.shape()
    }

    /// Constant or input leaf.
    pub fn leaf(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf)
    }

    /// Leaf tied to parameter slot `slot`.
    pub fn param(&mut self, slot: usize, t: Tensor) -> NodeId {
        self.push(t, Op::Param(slot))
    }

    /// `(node, slot)` for every parameter leaf on the tape.
    pub fn param_nodes(&self) -> impl Iterator<Item = (NodeId, usize)> + '_ {
        self.nodes.iter().enumerate().filter_map(|(i, n)| match n.op {
            Op::Param(slot) => Some((i, slot)),
            _ => None,
        })
    }

    fn map(&mut self, x: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let v = &self.nodes[x].value;
        let out = Tensor::new(v.rows, v.cols, v.data.iter().map(|&a| f(a)).collect());
        self.push(out, op)
    }

    fn zip(&mut self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64, op: Op) -> NodeId {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        assert_eq!(va.shape(), vb.shape(), "elementwise shapes differ");
        let data = va.data.iter().zip(&vb.data).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(va.rows, va.cols, data);
        self.push(out, op)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: NodeId, s: f64) -> NodeId {
        self.map(x, |a| a * s, Op::Scale(x, s))
    }

    /// Swish / SiLU: `x·σ(x)`.
    pub fn silu(&mut self, x: NodeId) -> NodeId {
        let v = &self.nodes[x].value;
        let sig: Vec<f64> = v.data.iter().map(|&a| 1.0 / (1.0 + (-a).exp())).collect();
        let data = v.data.iter().zip(&sig).map(|(a, s)| a * s).collect();
        let out = Tensor::new(v.rows, v.cols, data);
        self.push(out, Op::Silu { x, sig })
    }

    /// Adds a column vector `b` (rows × 1) to every column of `x`.
    pub fn add_col_bias(&mut self, x: NodeId, b: NodeId) -> NodeId {
        let (vx, vb) = (&self.nodes[x].value, &self.nodes[b].value);
        assert_eq!((vb.rows, vb.cols), (vx.rows, 1), "bias must be rows x 1");
        let mut out = vx.clone();
        for r in 0..out.rows {
            let bias = vb.data[r];
            out.data[r * out.cols..(r + 1) * out.cols].iter_mut().for_each(|v| *v += bias);
        }
        self.push(out, Op::AddColBias(x, b))
    }

    /// Per-row affine modulation `(1 + γ_r)·x + β_r`.
    pub fn scale_shift(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> NodeId {
        let vx = &self.nodes[x].value;
        let (vg, vb) = (&self.nodes[gamma].value, &self.nodes[beta].value);
        assert_eq!(vg.shape(), (vx.rows, 1), "gamma must be rows x 1");
        assert_eq!(vb.shape(), (vx.rows, 1), "beta must be rows x 1");
        let mut out = vx.clone();
        for r in 0..out.rows {
            let (g, b) = (1.0 + vg.data[r], vb.data[r]);
            out.data[r * out.cols..(r + 1) * out.cols].iter_mut().for_each(|v| *v = g * *v + b);
        }
        self.push(out, Op::ScaleShift { x, gamma, beta })
    }

    /// `op(a)·op(b)` where `op` optionally transposes.
    pub fn matmul(&mut self, a: NodeId, b: NodeId, ta: bool, tb: bool) -> NodeId {
        let va = &self.nodes[a].value;
        let vb = &self.nodes[b].value;
        let out = match (ta, tb) {
            (false, false) => matmul_plain(va, vb),
            (true, false) => matmul_tn(va, vb),
            (false, true) => matmul_nt(va, vb),
            (true, true) => matmul_plain(vb, va).transposed(),
        };
        self.push(out, Op::MatMul { a, b, ta, tb })
    }

    /// 1-D convolution of a `Cin × L` map with weights `Cout × (Cin/groups·k)`
    /// and bias `Cout × 1`.
    pub fn conv1d(&mut self, x: NodeId, w: NodeId, b: NodeId, spec: ConvSpec) -> NodeId {
        let vx = &self.nodes[x].value;
        let vw = &self.nodes[w].value;
        let vb = &self.nodes[b].value;
        let (cin, len) = vx.shape();
        let cout = vw.rows;
        let k = spec.kernel;
        assert!(cin % spec.groups == 0 && cout % spec.groups == 0, "channels not divisible by groups");
        let cin_g = cin / spec.groups;
        let cout_g = cout / spec.groups;
        assert_eq!(vw.cols, cin_g * k, "conv weight shape");
        assert_eq!(vb.shape(), (cout, 1), "conv bias shape");
        let lout = spec.out_len(len);
        let mut out = vec![0.0; cout * lout];
        for co in 0..cout {
            let g = co / cout_g;
            let orow = &mut out[co * lout..(co + 1) * lout];
            orow.iter_mut().for_each(|v| *v = vb.data[co]);
            for cl in 0..cin_g {
                let ci = g * cin_g + cl;
                let xrow = &vx.data[ci * len..(ci + 1) * len];
                for j in 0..k {
                    let wv = vw.data[co * cin_g * k + cl * k + j];
                    if wv == 0.0 {
                        continue;
                    }
                    conv_tap(orow, xrow, wv, j, spec.stride, spec.pad);
                }
            }
        }
        let t = Tensor::new(cout, lout, out);
        self.push(t, Op::Conv1d { x, w, b, spec })
    }

    /// Group normalisation over `(channels/groups) × L` blocks followed by a
    /// per-channel affine map.
    pub fn group_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, groups: usize) -> NodeId {
        let vx = &self.nodes[x].value;
        let (c, len) = vx.shape();
        assert!(groups > 0 && c % groups == 0, "channels {c} not divisible by {groups} groups");
        let vg = &self.nodes[gamma].value;
        let vb = &self.nodes[beta].value;
        assert_eq!(vg.shape(), (c, 1));
        assert_eq!(vb.shape(), (c, 1));
        let per = c / groups * len;
        let mut xhat = vec![0.0; c * len];
        let mut rstd = vec![0.0; groups];
        let mut out = vec![0.0; c * len];
        for g in 0..groups {
            let block = &vx.data[g * per..(g + 1) * per];
            let mean = block.iter().sum::<f64>() / per as f64;
            let var = block.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / per as f64;
            let rs = 1.0 / (var + GROUP_NORM_EPS).sqrt();
            rstd[g] = rs;
            for ch in g * c / groups..(g + 1) * c / groups {
                let (gam, bet) = (vg.data[ch], vb.data[ch]);
                let span = ch * len..(ch + 1) * len;
                for ((h, o), v) in xhat[span.clone()].iter_mut().zip(&mut out[span.clone()]).zip(&vx.data[span]) {
                    *h = (v - mean) * rs;
                    *o = *h * gam + bet;
                }
            }
        }
        let t = Tensor::new(c, len, out);
        self.push(t, Op::GroupNorm { x, gamma, beta, groups, rstd, xhat })
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&mut self, x: NodeId) -> NodeId {
        let mut out = self.nodes[x].value.clone();
        let cols = out.cols;
        for row in out.data.chunks_mut(cols) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
        self.push(out, Op::SoftmaxRows(x))
    }

    /// Orthonormal DCT-II of each row, keeping the first `keep` coefficients.
    pub fn dct_rows(&mut self, x: NodeId, keep: usize) -> NodeId {
        let vx = &self.nodes[x].value;
        let (rows, n) = vx.shape();
        assert!(keep >= 1 && keep <= n, "cannot keep {keep} of {n} coefficients");
        let plan = dct::plan(n);
        let mut out = vec![0.0; rows * keep];
        for r in 0..rows {
            plan.forward_into(vx.row_slice(r), &mut out[r * keep..(r + 1) * keep]);
        }
        let t = Tensor::new(rows, keep, out);
        self.push(t, Op::DctRows { x, in_len: n })
    }

    /// Zero-pads each row to `n` and applies the orthonormal DCT-III.
    pub fn idct_rows(&mut self, x: NodeId, n: usize) -> NodeId {
        let vx = &self.nodes[x].value;
        let (rows, k) = vx.shape();
        assert!(k <= n, "cannot pad {k} coefficients to {n}");
        let plan = dct::plan(n);
        let mut out = vec![0.0; rows * n];
        for r in 0..rows {
            plan.inverse_into(vx.row_slice(r), &mut out[r * n..(r + 1) * n]);
        }
        let t = Tensor::new(rows, n, out);
        self.push(t, Op::IdctRows { x, in_len: k })
    }

    /// Stacks `a` on top of `b` (equal column counts).
    pub fn concat_rows(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        assert_eq!(va.cols, vb.cols, "concat column mismatch");
        let mut data = va.data.clone();
        data.extend_from_slice(&vb.data);
        let t = Tensor::new(va.rows + vb.rows, va.cols, data);
        self.push(t, Op::ConcatRows(a, b))
    }

    /// Rows `start..start + count`.
    pub fn slice_rows(&mut self, x: NodeId, start: usize, count: usize) -> NodeId {
        let v = &self.nodes[x].value;
        assert!(start + count <= v.rows, "row slice out of range");
        let data = v.data[start * v.cols..(start + count) * v.cols].to_vec();
        let t = Tensor::new(count, v.cols, data);
        self.push(t, Op::SliceRows { x, start })
    }

    /// Doubles the column count by linear interpolation (half-pixel centres).
    pub fn upsample2(&mut self, x: NodeId) -> NodeId {
        let v = &self.nodes[x].value;
        let (rows, len) = v.shape();
        let mut out = vec![0.0; rows * 2 * len];
        for r in 0..rows {
            let src = v.row_slice(r);
            let dst = &mut out[r * 2 * len..(r + 1) * 2 * len];
            for (i, d) in dst.iter_mut().enumerate() {
                let (i0, i1, w) = upsample_taps(i, len);
                *d = (1.0 - w) * src[i0] + w * src[i1];
            }
        }
        let t = Tensor::new(rows, 2 * len, out);
        self.push(t, Op::Upsample2(x))
    }

    /// Halves the column count by averaging adjacent pairs (linear
    /// interpolation at half-pixel centres). Requires an even column count.
    pub fn downsample2(&mut self, x: NodeId) -> NodeId {
        let v = &self.nodes[x].value;
        let (rows, len) = v.shape();
        assert!(len % 2 == 0, "downsample2 needs an even length, got {len}");
        let data = v.data.chunks(2).map(|p| 0.5 * (p[0] + p[1])).collect();
        let t = Tensor::new(rows, len / 2, data);
        self.push(t, Op::Downsample2(x))
    }

    /// Scalar `mean |pred − target|`.
    pub fn mean_abs_diff(&mut self, pred: NodeId, target: NodeId) -> NodeId {
        let (vp, vt) = (&self.nodes[pred].value, &self.nodes[target].value);
        assert_eq!(vp.shape(), vt.shape(), "loss shapes differ");
        let n = vp.data.len() as f64;
        let s: f64 = vp.data.iter().zip(&vt.data).map(|(a, b)| (a - b).abs()).sum();
        self.push(Tensor::new(1, 1, vec![s / n]), Op::MeanAbsDiff { pred, target })
    }

    /// Scalar sum of all entries.
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.nodes[x].value.data.iter().sum();
        self.push(Tensor::new(1, 1, vec![s]), Op::Sum(x))
    }

    /// Reverse sweep from `root`, seeded with `seed` (same shape as the root).
    pub fn backward_with(&self, root: NodeId, seed: Tensor) -> Gradients {
        assert_eq!(seed.shape(), self.nodes[root].value.shape(), "seed shape");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root] = Some(seed);
        for id in (0..=root).rev() {
            if matches!(self.nodes[id].op, Op::Leaf | Op::Param(_)) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.backprop_node(id, g, &mut grads);
        }
        Gradients { grads }
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: NodeId) -> Gradients {
        let (r, c) = self.shape(root);
        assert_eq!((r, c), (1, 1), "backward() needs a scalar root; use backward_with");
        self.backward_with(root, Tensor::new(1, 1, vec![1.0]))
    }

    fn backprop_node(&self, id: NodeId, owned: Tensor, grads: &mut [Option<Tensor>]) {
        let g = &owned;
        let node = &self.nodes[id];
        let val = |n: NodeId| &self.nodes[n].value;
        let mut acc = |target: NodeId, t: Tensor| match &mut grads[target] {
            Some(existing) => existing.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, owned);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let ga = g.data.iter().zip(&vb.data).map(|(x, y)| x * y).collect();
                let gb = g.data.iter().zip(&va.data).map(|(x, y)| x * y).collect();
                acc(*a, Tensor::new(g.rows, g.cols, ga));
                acc(*b, Tensor::new(g.rows, g.cols, gb));
            }
            Op::Scale(x, s) => {
                acc(*x, Tensor::new(g.rows, g.cols, g.data.iter().map(|v| v * s).collect()));
            }
            Op::Silu { x, sig } => {
                let vx = val(*x);
                let data = g
                    .data
                    .iter()
                    .zip(&vx.data)
                    .zip(sig)
                    .map(|((gv, &a), &s)| gv * s * (1.0 + a * (1.0 - s)))
                    .collect();
                acc(*x, Tensor::new(g.rows, g.cols, data));
            }
            Op::AddColBias(x, b) => {
                let gb = g.data.chunks(g.cols).map(|r| r.iter().sum()).collect();
                acc(*b, Tensor::column(gb));
                acc(*x, owned);
            }
            Op::ScaleShift { x, gamma, beta } => {
                let (vx, vg) = (val(*x), val(*gamma));
                let cols = g.cols;
                let mut gx = vec![0.0; g.data.len()];
                let mut gg = vec![0.0; g.rows];
                let mut gbeta = vec![0.0; g.rows];
                for r in 0..g.rows {
                    let scale = 1.0 + vg.data[r];
                    for c in 0..cols {
                        let i = r * cols + c;
                        gx[i] = g.data[i] * scale;
                        gg[r] += g.data[i] * vx.data[i];
                        gbeta[r] += g.data[i];
                    }
                }
                acc(*x, Tensor::new(g.rows, cols, gx));
                acc(*gamma, Tensor::column(gg));
                acc(*beta, Tensor::column(gbeta));
            }
            Op::MatMul { a, b, ta, tb } => {
                let (va, vb) = (val(*a), val(*b));
                let (da, db) = match (ta, tb) {
                    (false, false) => (matmul_nt(g, vb), matmul_tn(va, g)),
                    (true, false) => (matmul_nt(vb, g), matmul_plain(va, g)),
                    (false, true) => (matmul_plain(g, vb), matmul_tn(g, va)),
                    (true, true) => (matmul_plain(g, vb).transposed(), matmul_plain(va, g).transposed()),
                };
                acc(*a, da);
                acc(*b, db);
            }
            Op::Conv1d { x, w, b, spec } => {
                let (vx, vw) = (val(*x), val(*w));
                let (cin, len) = vx.shape();
                let cout = vw.rows;
                let k = spec.kernel;
                let cin_g = cin / spec.groups;
                let cout_g = cout / spec.groups;
                let lout = g.cols;
                let mut gx = vec![0.0; cin * len];
                let mut gw = vec![0.0; vw.data.len()];
                let mut gb = vec![0.0; cout];
                for co in 0..cout {
                    let grp = co / cout_g;
                    let grow = &g.data[co * lout..(co + 1) * lout];
                    gb[co] = grow.iter().sum();
                    for cl in 0..cin_g {
                        let ci = grp * cin_g + cl;
                        let xrow = &vx.data[ci * len..(ci + 1) * len];
                        let gxrow = &mut gx[ci * len..(ci + 1) * len];
                        for j in 0..k {
                            let widx = co * cin_g * k + cl * k + j;
                            gw[widx] += conv_tap_dot(grow, xrow, j, spec.stride, spec.pad);
                            let wv = vw.data[widx];
                            if wv != 0.0 {
                                conv_tap_scatter(gxrow, grow, wv, j, spec.stride, spec.pad);
                            }
                        }
                    }
                }
                acc(*x, Tensor::new(cin, len, gx));
                acc(*w, Tensor::new(vw.rows, vw.cols, gw));
                acc(*b, Tensor::column(gb));
            }
            Op::GroupNorm { x, gamma, beta, groups, rstd, xhat } => {
                let vg = val(*gamma);
                let (c, len) = val(*x).shape();
                let per = c / groups * len;
                let mut gx = vec![0.0; c * len];
                let mut ggamma = vec![0.0; c];
                let mut gbeta = vec![0.0; c];
                let chans = |grp: usize| grp * c / groups..(grp + 1) * c / groups;
                for grp in 0..*groups {
                    let mut sum_d = 0.0;
                    let mut sum_dx = 0.0;
                    for ch in chans(grp) {
                        let span = ch * len..(ch + 1) * len;
                        let (mut sg, mut sgx) = (0.0, 0.0);
                        for (gv, h) in g.data[span.clone()].iter().zip(&xhat[span]) {
                            sg += gv;
                            sgx += gv * h;
                        }
                        ggamma[ch] = sgx;
                        gbeta[ch] = sg;
                        sum_d += sg * vg.data[ch];
                        sum_dx += sgx * vg.data[ch];
                    }
                    let m = per as f64;
                    let rs = rstd[grp];
                    let (mean_d, mean_dx) = (sum_d / m, sum_dx / m);
                    for ch in chans(grp) {
                        let gam = vg.data[ch];
                        let span = ch * len..(ch + 1) * len;
                        for ((o, gv), h) in gx[span.clone()].iter_mut().zip(&g.data[span.clone()]).zip(&xhat[span]) {
                            *o = rs * (gv * gam - mean_d - h * mean_dx);
                        }
                    }
                }
                acc(*x, Tensor::new(c, len, gx));
                acc(*gamma, Tensor::column(ggamma));
                acc(*beta, Tensor::column(gbeta));
            }
            Op::SoftmaxRows(x) => {
                let y = &node.value;
                let mut gx = vec![0.0; y.data.len()];
                for r in 0..y.rows {
                    let yr = y.row_slice(r);
                    let gr = g.row_slice(r);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for c in 0..y.cols {
                        gx[r * y.cols + c] = yr[c] * (gr[c] - dot);
                    }
                }
                acc(*x, Tensor::new(y.rows, y.cols, gx));
            }
            Op::DctRows { x, in_len } => {
                let plan = dct::plan(*in_len);
                let mut gx = vec![0.0; g.rows * in_len];
                for r in 0..g.rows {
                    plan.inverse_into(g.row_slice(r), &mut gx[r * in_len..(r + 1) * in_len]);
                }
                acc(*x, Tensor::new(g.rows, *in_len, gx));
            }
            Op::IdctRows { x, in_len } => {
                let plan = dct::plan(g.cols);
                let mut gx = vec![0.0; g.rows * in_len];
                for r in 0..g.rows {
                    plan.forward_into(g.row_slice(r), &mut gx[r * in_len..(r + 1) * in_len]);
                }
                acc(*x, Tensor::new(g.rows, *in_len, gx));
            }
            Op::ConcatRows(a, b) => {
                let ra = val(*a).rows;
                let split = ra * g.cols;
                acc(*a, Tensor::new(ra, g.cols, g.data[..split].to_vec()));
                acc(*b, Tensor::new(g.rows - ra, g.cols, g.data[split..].to_vec()));
            }
            Op::SliceRows { x, start } => {
                let vx = val(*x);
                let mut gx = Tensor::zeros(vx.rows, vx.cols);
                gx.data[start * vx.cols..(start + g.rows) * vx.cols].copy_from_slice(&g.data);
                acc(*x, gx);
            }
            Op::Upsample2(x) => {
                let (rows, len) = val(*x).shape();
                let mut gx = vec![0.0; rows * len];
                for r in 0..rows {
                    let gr = g.row_slice(r);
                    let dst = &mut gx[r * len..(r + 1) * len];
                    for (i, gv) in gr.iter().enumerate() {
                        let (i0, i1, w) = upsample_taps(i, len);
                        dst[i0] += (1.0 - w) * gv;
                        dst[i1] += w * gv;
                    }
                }
                acc(*x, Tensor::new(rows, len, gx));
            }
            Op::Downsample2(x) => {
                let vx = val(*x);
                let gx = g.data.iter().flat_map(|v| [0.5 * v, 0.5 * v]).collect();
                acc(*x, Tensor::new(vx.rows, vx.cols, gx));
            }
            Op::MeanAbsDiff { pred, target } => {
                let (vp, vt) = (val(*pred), val(*target));
                let scale = g.data[0] / vp.data.len() as f64;
                let gp: Vec<f64> = vp
                    .data
                    .iter()
                    .zip(&vt.data)
                    .map(|(a, b)| {
                        let d = a - b;
                        if d > 0.0 {
                            scale
                        } else if d < 0.0 {
                            -scale
                        } else {
                            0.0
                        }
                    })
                    .collect();
                let gt = gp.iter().map(|v| -v).collect();
                acc(*pred, Tensor::new(vp.rows, vp.cols, gp));
                acc(*target, Tensor::new(vp.rows, vp.cols, gt));
            }
            Op::Sum(x) => {
                let vx = val(*x);
                acc(*x, Tensor::new(vx.rows, vx.cols, vec![g.data[0]; vx.data.len()]));
            }
        }
    }
}

#[inline]
fn upsample_taps(i: usize, len: usize) -> (usize, usize, f64) {
    let src = ((i as f64 + 0.5) / 2.0 - 0.5).max(0.0);
    let i0 = (src.floor() as usize).min(len - 1);
    let i1 = (i0 + 1).min(len - 1);
    (i0, i1, src - i0 as f64)
}

/// Range of output positions `o` whose input index `o·stride + j − pad` is in bounds.
#[inline]
fn tap_range(lout: usize, len: usize, j: usize, stride: usize, pad: usize) -> (usize, usize) {
    // o·s + j ≥ pad  and  o·s + j − pad ≤ len − 1
    let lo = if j >= pad { 0 } else { (pad - j).div_ceil(stride) };
    let hi_excl = if len + pad > j { ((len + pad - j - 1) / stride + 1).min(lout) } else { 0 };
    (lo, hi_excl.max(lo))
}

#[inline]
fn conv_tap(orow: &mut [f64], xrow: &[f64], w: f64, j: usize, stride: usize, pad: usize) {
    let (lo, hi) = tap_range(orow.len(), xrow.len(), j, stride, pad);
    if lo >= hi {
        return;
    }
    let start = lo * stride + j - pad;
    if stride == 1 {
        let xs = &xrow[start..start + (hi - lo)];
        for (o, x) in orow[lo..hi].iter_mut().zip(xs) {
            *o += w * x;
        }
    } else {
        for (n, o) in orow[lo..hi].iter_mut().enumerate() {
            *o += w * xrow[start + n * stride];
        }
    }
}

#[inline]
fn conv_tap_dot(grow: &[f64], xrow: &[f64], j: usize, stride: usize, pad: usize) -> f64 {
    let (lo, hi) = tap_range(grow.len(), xrow.len(), j, stride, pad);
    if lo >= hi {
        return 0.0;
    }
    let start = lo * stride + j - pad;
    if stride == 1 {
        dot(&grow[lo..hi], &xrow[start..start + (hi - lo)])
    } else {
        grow[lo..hi].iter().enumerate().map(|(n, a)| a * xrow[start + n * stride]).sum()
    }
}

#[inline]
fn conv_tap_scatter(gxrow: &mut [f64], grow: &[f64], w: f64, j: usize, stride: usize, pad: usize) {
    let (lo, hi) = tap_range(grow.len(), gxrow.len(), j, stride, pad);
    if lo >= hi {
        return;
    }
    let start = lo * stride + j - pad;
    if stride == 1 {
        for (gx, gv) in gxrow[start..start + (hi - lo)].iter_mut().zip(&grow[lo..hi]) {
            *gx += w * gv;
        }
    } else {
        for (n, gv) in grow[lo..hi].iter().enumerate() {
            gxrow[start + n * stride] += w * gv;
        }
    }
}
