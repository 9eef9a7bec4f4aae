//! Reverse-mode differentiation over dense row-major matrices.
//!
//! Every operation appends a node holding its forward value; [`Tape::backward`]
//! walks the nodes in reverse and accumulates adjoints. The op set is the
//! minimum a transformer encoder with rotary attention needs.

use statrs::function::erf::erf;

use std::f64::consts::{FRAC_1_SQRT_2, PI};

#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length");
        Self { rows, cols, data }
    }

    pub fn scalar(v: f64) -> Self {
        Self::from_vec(1, 1, vec![v])
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Frequency base of a rotary op.
#[derive(Debug, Clone, Copy)]
pub enum RotaryBase {
    Fixed(f64),
    /// `base = exp(φ)` with `φ` a 1×1 node.
    Learned(Var),
}

/// Batch and head layout shared by the attention ops.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadLayout {
    pub batch: usize,
    pub tokens: usize,
    pub heads: usize,
    pub head_dim: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Gelu(Var),
    Mask(Var, Vec<f64>),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    ColumnAffine {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Rotary {
        x: Var,
        phi: Option<Var>,
        positions: Vec<f64>,
        freqs: Vec<f64>,
        heads: usize,
    },
    Scores {
        q: Var,
        k: Var,
        prev: Option<Var>,
        layout: HeadLayout,
        scale: f64,
    },
    Softmax(Var),
    AttnApply {
        a: Var,
        v: Var,
        layout: HeadLayout,
    },
    Gather {
        table: Var,
        idx: Vec<usize>,
    },
    Reshape(Var),
    RowAffine {
        x: Var,
        scale: Vec<f64>,
    },
    Mse {
        pred: Var,
        target: Vec<f64>,
    },
}

struct Node {
    value: Mat,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints from one backward pass; `None` for nodes the loss does not reach.
pub struct Grads {
    grads: Vec<Option<Mat>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads[v.0].as_ref()
    }
}

fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + erf(x * FRAC_1_SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + erf(x * FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    cdf + x * pdf
}

/// Rotary frequencies `base^{-2i/d}` for a head of width `d`.
pub fn rotary_freqs(base: f64, head_dim: usize) -> Vec<f64> {
    bsat::posenc::rope_frequencies(head_dim, base)
        .map(|f| f.freqs)
        .unwrap_or_else(|_| vec![1.0; head_dim / 2])
}

fn learned_freqs(phi: f64, head_dim: usize) -> Vec<f64> {
    (0..head_dim / 2)
        .map(|i| {
            if i == 0 {
                1.0
            } else {
                (-phi * 2.0 * i as f64 / head_dim as f64).exp()
            }
        })
        .collect()
}

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

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.cols, bv.rows, "matmul inner dimension");
        let (m, k, n) = (av.rows, av.cols, bv.cols);
        let mut out = vec![0.0; m * n];
        matmul_into(&av.data, &bv.data, &mut out, m, k, n);
        self.push(Mat::from_vec(m, n, out), Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!((av.rows, av.cols), (bv.rows, bv.cols), "add shapes");
        let data = av.data.iter().zip(&bv.data).map(|(x, y)| x + y).collect();
        let (r, c) = (av.rows, av.cols);
        self.push(Mat::from_vec(r, c, data), Op::Add(a, b))
    }

    /// `x + b` with `b` a `1 × cols` row broadcast over rows.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let (xv, bv) = (self.value(x), self.value(b));
        assert_eq!((bv.rows, bv.cols), (1, xv.cols), "bias shape");
        let mut data = xv.data.clone();
        for row in data.chunks_mut(xv.cols) {
            for (v, bb) in row.iter_mut().zip(&bv.data) {
                *v += bb;
            }
        }
        let (r, c) = (xv.rows, xv.cols);
        self.push(Mat::from_vec(r, c, data), Op::AddBias(x, b))
    }

    /// Exact GELU `x·Φ(x)`.
    pub fn gelu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = xv.data.iter().map(|&v| gelu(v)).collect();
        let (r, c) = (xv.rows, xv.cols);
        self.push(Mat::from_vec(r, c, data), Op::Gelu(x))
    }

    /// Elementwise product with a constant mask (dropout).
    pub fn mask(&mut self, x: Var, mask: Vec<f64>) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.len(), mask.len(), "mask length");
        let data = xv.data.iter().zip(&mask).map(|(a, m)| a * m).collect();
        let (r, c) = (xv.rows, xv.cols);
        self.push(Mat::from_vec(r, c, data), Op::Mask(x, mask))
    }

    /// Per-column batch normalization with batch statistics.
    ///
    /// Returns the output and the biased batch mean and variance per column.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> (Var, Vec<f64>, Vec<f64>) {
        let xv = self.value(x);
        let (r, c) = (xv.rows, xv.cols);
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for row in xv.data.chunks(c) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= r as f64;
        }
        for row in xv.data.chunks(c) {
            for j in 0..c {
                let d = row[j] - mean[j];
                var[j] += d * d;
            }
        }
        for v in var.iter_mut() {
            *v /= r as f64;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = xv.data.clone();
        for row in xhat.chunks_mut(c) {
            for j in 0..c {
                row[j] = (row[j] - mean[j]) * inv_std[j];
            }
        }
        let (g, b) = (&self.value(gamma).data, &self.value(beta).data);
        let mut out = xhat.clone();
        for row in out.chunks_mut(c) {
            for j in 0..c {
                row[j] = g[j] * row[j] + b[j];
            }
        }
        let node = self.push(
            Mat::from_vec(r, c, out),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        );
        (node, mean, var)
    }

    /// `γ·(x − mean)·inv_std + β` per column with fixed statistics.
    pub fn column_affine(&mut self, x: Var, gamma: Var, beta: Var, mean: Vec<f64>, inv_std: Vec<f64>) -> Var {
        let xv = self.value(x);
        let (r, c) = (xv.rows, xv.cols);
        let (g, b) = (&self.value(gamma).data, &self.value(beta).data);
        let mut out = xv.data.clone();
        for row in out.chunks_mut(c) {
            for j in 0..c {
                row[j] = g[j] * (row[j] - mean[j]) * inv_std[j] + b[j];
            }
        }
        self.push(
            Mat::from_vec(r, c, out),
            Op::ColumnAffine {
                x,
                gamma,
                beta,
                mean,
                inv_std,
            },
        )
    }

    /// Rotates interleaved pairs of every head by `position[row] · f_i`.
    pub fn rotary(&mut self, x: Var, positions: Vec<f64>, heads: usize, base: RotaryBase) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.rows, positions.len(), "one position per row");
        assert_eq!(xv.cols % heads, 0, "heads divide width");
        let dh = xv.cols / heads;
        assert_eq!(dh % 2, 0, "head width must be even");
        let (freqs, phi) = match base {
            RotaryBase::Fixed(b) => (rotary_freqs(b, dh), None),
            RotaryBase::Learned(p) => (learned_freqs(self.value(p).data[0], dh), Some(p)),
        };
        let c = xv.cols;
        let mut out = xv.data.clone();
        for (r, row) in out.chunks_mut(c).enumerate() {
            let pos = positions[r];
            for h in 0..heads {
                for (i, f) in freqs.iter().enumerate() {
                    let j = h * dh + 2 * i;
                    let (s, co) = (pos * f).sin_cos();
                    let (a, b) = (row[j], row[j + 1]);
                    row[j] = a * co - b * s;
                    row[j + 1] = a * s + b * co;
                }
            }
        }
        let rows = xv.rows;
        self.push(
            Mat::from_vec(rows, c, out),
            Op::Rotary {
                x,
                phi,
                positions,
                freqs,
                heads,
            },
        )
    }

    /// Per-head logits `scale·QKᵀ (+ prev)` stacked as `(batch·heads·tokens) × tokens`.
    pub fn attention_scores(&mut self, q: Var, k: Var, prev: Option<Var>, layout: HeadLayout, scale: f64) -> Var {
        let HeadLayout {
            batch,
            tokens: n,
            heads,
            head_dim: dh,
        } = layout;
        let (qv, kv) = (self.value(q), self.value(k));
        let d = heads * dh;
        assert_eq!((qv.rows, qv.cols), (batch * n, d), "query shape");
        assert_eq!((kv.rows, kv.cols), (batch * n, d), "key shape");
        let mut out = vec![0.0; batch * heads * n * n];
        for b in 0..batch {
            for h in 0..heads {
                for i in 0..n {
                    let qi = &qv.data[(b * n + i) * d + h * dh..(b * n + i) * d + (h + 1) * dh];
                    let orow = ((b * heads + h) * n + i) * n;
                    for kk in 0..n {
                        let kr = &kv.data[(b * n + kk) * d + h * dh..(b * n + kk) * d + (h + 1) * dh];
                        let dot: f64 = qi.iter().zip(kr).map(|(x, y)| x * y).sum();
                        out[orow + kk] = scale * dot;
                    }
                }
            }
        }
        if let Some(p) = prev {
            let pv = self.value(p);
            assert_eq!(pv.len(), out.len(), "previous scores shape");
            for (o, v) in out.iter_mut().zip(&pv.data) {
                *o += v;
            }
        }
        self.push(
            Mat::from_vec(batch * heads * n, n, out),
            Op::Scores {
                q,
                k,
                prev,
                layout,
                scale,
            },
        )
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let c = xv.cols;
        let mut out = xv.data.clone();
        for row in out.chunks_mut(c) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let r = xv.rows;
        self.push(Mat::from_vec(r, c, out), Op::Softmax(x))
    }

    /// Mixes value rows with stacked attention weights; output is `(batch·tokens) × d`.
    pub fn attention_apply(&mut self, a: Var, v: Var, layout: HeadLayout) -> Var {
        let HeadLayout {
            batch,
            tokens: n,
            heads,
            head_dim: dh,
        } = layout;
        let (av, vv) = (self.value(a), self.value(v));
        let d = heads * dh;
        assert_eq!((av.rows, av.cols), (batch * heads * n, n), "weights shape");
        assert_eq!((vv.rows, vv.cols), (batch * n, d), "value shape");
        let mut out = vec![0.0; batch * n * d];
        for b in 0..batch {
            for h in 0..heads {
                for i in 0..n {
                    let arow = &av.data[((b * heads + h) * n + i) * n..((b * heads + h) * n + i + 1) * n];
                    let o = &mut out[(b * n + i) * d + h * dh..(b * n + i) * d + (h + 1) * dh];
                    for (kk, &w) in arow.iter().enumerate() {
                        let vr = &vv.data[(b * n + kk) * d + h * dh..(b * n + kk) * d + (h + 1) * dh];
                        for (ov, x) in o.iter_mut().zip(vr) {
                            *ov += w * x;
                        }
                    }
                }
            }
        }
        self.push(Mat::from_vec(batch * n, d, out), Op::AttnApply { a, v, layout })
    }

    /// Rows of `table` selected by `idx`.
    pub fn gather_rows(&mut self, table: Var, idx: Vec<usize>) -> Var {
        let tv = self.value(table);
        let c = tv.cols;
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in &idx {
            out.extend_from_slice(tv.row(i));
        }
        let r = idx.len();
        self.push(Mat::from_vec(r, c, out), Op::Gather { table, idx })
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Var {
        let data = self.value(x).data.clone();
        self.push(Mat::from_vec(rows, cols, data), Op::Reshape(x))
    }

    /// `x[r,·]·scale[r] + shift[r]`.
    pub fn row_affine(&mut self, x: Var, scale: Vec<f64>, shift: &[f64]) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.rows, scale.len(), "row scale length");
        assert_eq!(xv.rows, shift.len(), "row shift length");
        let c = xv.cols;
        let mut out = xv.data.clone();
        for (r, row) in out.chunks_mut(c).enumerate() {
            for v in row.iter_mut() {
                *v = *v * scale[r] + shift[r];
            }
        }
        let rows = xv.rows;
        self.push(Mat::from_vec(rows, c, out), Op::RowAffine { x, scale })
    }

    /// Mean squared error against a constant target, as a 1×1 node.
    pub fn mse(&mut self, pred: Var, target: Vec<f64>) -> Var {
        let pv = self.value(pred);
        assert_eq!(pv.len(), target.len(), "target length");
        let loss = pv
            .data
            .iter()
            .zip(&target)
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / target.len() as f64;
        self.push(Mat::scalar(loss), Op::Mse { pred, target })
    }

    /// Adjoints of every node with respect to the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Grads {
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        let lv = self.value(loss);
        grads[loss.0] = Some(Mat::from_vec(lv.rows, lv.cols, vec![1.0; lv.len()]));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Grads { grads }
    }

    fn backprop_node(&self, idx: usize, g: &Mat, grads: &mut [Option<Mat>]) {
        let node = &self.nodes[idx];
        let shape_of = |v: Var| {
            let m = &self.nodes[v.0].value;
            (m.rows, m.cols)
        };
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            let (r, c) = shape_of(v);
            let slot = grads[v.0].get_or_insert_with(|| Mat::zeros(r, c));
            f(&mut slot.data);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows, av.cols, bv.cols);
                acc(*a, &mut |ga| {
                    for i in 0..m {
                        let grow = &g.data[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bv.data[p * n..(p + 1) * n];
                            ga[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
                acc(*b, &mut |gb| {
                    for i in 0..m {
                        let grow = &g.data[i * n..(i + 1) * n];
                        for p in 0..k {
                            let a_ip = av.data[i * k + p];
                            if a_ip == 0.0 {
                                continue;
                            }
                            for (o, gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o += a_ip * gv;
                            }
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    acc(v, &mut |gx| {
                        for (o, gv) in gx.iter_mut().zip(&g.data) {
                            *o += gv;
                        }
                    });
                }
            }
            Op::AddBias(x, b) => {
                acc(*x, &mut |gx| {
                    for (o, gv) in gx.iter_mut().zip(&g.data) {
                        *o += gv;
                    }
                });
                acc(*b, &mut |gb| {
                    for row in g.data.chunks(g.cols) {
                        for (o, gv) in gb.iter_mut().zip(row) {
                            *o += gv;
                        }
                    }
                });
            }
            Op::Gelu(x) => {
                let xv = self.value(*x);
                acc(*x, &mut |gx| {
                    for ((o, gv), xx) in gx.iter_mut().zip(&g.data).zip(&xv.data) {
                        *o += gv * gelu_grad(*xx);
                    }
                });
            }
            Op::Mask(x, mask) => {
                acc(*x, &mut |gx| {
                    for ((o, gv), m) in gx.iter_mut().zip(&g.data).zip(mask) {
                        *o += gv * m;
                    }
                });
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let c = g.cols;
                let r = g.rows as f64;
                let gam = &self.value(*gamma).data;
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for (grow, xrow) in g.data.chunks(c).zip(xhat.chunks(c)) {
                    for j in 0..c {
                        sum_g[j] += grow[j];
                        sum_gx[j] += grow[j] * xrow[j];
                    }
                }
                acc(*gamma, &mut |gg| {
                    for j in 0..c {
                        gg[j] += sum_gx[j];
                    }
                });
                acc(*beta, &mut |gb| {
                    for j in 0..c {
                        gb[j] += sum_g[j];
                    }
                });
                acc(*x, &mut |gx| {
                    for ((orow, grow), xrow) in gx.chunks_mut(c).zip(g.data.chunks(c)).zip(xhat.chunks(c)) {
                        for j in 0..c {
                            orow[j] += gam[j] * inv_std[j] / r
                                * (r * grow[j] - sum_g[j] - xrow[j] * sum_gx[j]);
                        }
                    }
                });
            }
            Op::ColumnAffine {
                x,
                gamma,
                beta,
                mean,
                inv_std,
            } => {
                let c = g.cols;
                let xv = self.value(*x);
                let gam = &self.value(*gamma).data;
                acc(*x, &mut |gx| {
                    for (orow, grow) in gx.chunks_mut(c).zip(g.data.chunks(c)) {
                        for j in 0..c {
                            orow[j] += grow[j] * gam[j] * inv_std[j];
                        }
                    }
                });
                acc(*gamma, &mut |gg| {
                    for (grow, xrow) in g.data.chunks(c).zip(xv.data.chunks(c)) {
                        for j in 0..c {
                            gg[j] += grow[j] * (xrow[j] - mean[j]) * inv_std[j];
                        }
                    }
                });
                acc(*beta, &mut |gb| {
                    for grow in g.data.chunks(c) {
                        for j in 0..c {
                            gb[j] += grow[j];
                        }
                    }
                });
            }
            Op::Rotary {
                x,
                phi,
                positions,
                freqs,
                heads,
            } => {
                let c = g.cols;
                let dh = c / heads;
                let out = &node.value;
                acc(*x, &mut |gx| {
                    for (r, (orow, grow)) in gx.chunks_mut(c).zip(g.data.chunks(c)).enumerate() {
                        let pos = positions[r];
                        for h in 0..*heads {
                            for (i, f) in freqs.iter().enumerate() {
                                let j = h * dh + 2 * i;
                                let (s, co) = (pos * f).sin_cos();
                                let (ge, go) = (grow[j], grow[j + 1]);
                                orow[j] += ge * co + go * s;
                                orow[j + 1] += -ge * s + go * co;
                            }
                        }
                    }
                });
                if let Some(p) = phi {
                    let mut dphi = 0.0;
                    for (r, (grow, orow)) in g.data.chunks(c).zip(out.data.chunks(c)).enumerate() {
                        let pos = positions[r];
                        for h in 0..*heads {
                            for (i, f) in freqs.iter().enumerate().skip(1) {
                                let j = h * dh + 2 * i;
                                let dtheta = grow[j] * -orow[j + 1] + grow[j + 1] * orow[j];
                                let angle = pos * f;
                                dphi += dtheta * (-2.0 * i as f64 / dh as f64) * angle;
                            }
                        }
                    }
                    acc(*p, &mut |gp| gp[0] += dphi);
                }
            }
            Op::Scores {
                q,
                k,
                prev,
                layout,
                scale,
            } => {
                let HeadLayout {
                    batch,
                    tokens: n,
                    heads,
                    head_dim: dh,
                } = *layout;
                let d = heads * dh;
                let (qv, kv) = (self.value(*q), self.value(*k));
                acc(*q, &mut |gq| {
                    for b in 0..batch {
                        for h in 0..heads {
                            for i in 0..n {
                                let grow = &g.data[((b * heads + h) * n + i) * n..][..n];
                                let o = &mut gq[(b * n + i) * d + h * dh..][..dh];
                                for (kk, &gv) in grow.iter().enumerate() {
                                    let kr = &kv.data[(b * n + kk) * d + h * dh..][..dh];
                                    for (ov, kx) in o.iter_mut().zip(kr) {
                                        *ov += scale * gv * kx;
                                    }
                                }
                            }
                        }
                    }
                });
                acc(*k, &mut |gk| {
                    for b in 0..batch {
                        for h in 0..heads {
                            for i in 0..n {
                                let grow = &g.data[((b * heads + h) * n + i) * n..][..n];
                                let qi = &qv.data[(b * n + i) * d + h * dh..][..dh];
                                for (kk, &gv) in grow.iter().enumerate() {
                                    let o = &mut gk[(b * n + kk) * d + h * dh..][..dh];
                                    for (ov, qx) in o.iter_mut().zip(qi) {
                                        *ov += scale * gv * qx;
                                    }
                                }
                            }
                        }
                    }
                });
                if let Some(p) = prev {
                    acc(*p, &mut |gp| {
                        for (o, gv) in gp.iter_mut().zip(&g.data) {
                            *o += gv;
                        }
                    });
                }
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let c = y.cols;
                acc(*x, &mut |gx| {
                    for ((orow, grow), yrow) in gx.chunks_mut(c).zip(g.data.chunks(c)).zip(y.data.chunks(c)) {
                        let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            orow[j] += yrow[j] * (grow[j] - dot);
                        }
                    }
                });
            }
            Op::AttnApply { a, v, layout } => {
                let HeadLayout {
                    batch,
                    tokens: n,
                    heads,
                    head_dim: dh,
                } = *layout;
                let d = heads * dh;
                let (av, vv) = (self.value(*a), self.value(*v));
                acc(*a, &mut |ga| {
                    for b in 0..batch {
                        for h in 0..heads {
                            for i in 0..n {
                                let go = &g.data[(b * n + i) * d + h * dh..][..dh];
                                let arow = &mut ga[((b * heads + h) * n + i) * n..][..n];
                                for (kk, o) in arow.iter_mut().enumerate() {
                                    let vr = &vv.data[(b * n + kk) * d + h * dh..][..dh];
                                    *o += go.iter().zip(vr).map(|(x, y)| x * y).sum::<f64>();
                                }
                            }
                        }
                    }
                });
                acc(*v, &mut |gv| {
                    for b in 0..batch {
                        for h in 0..heads {
                            for i in 0..n {
                                let go = &g.data[(b * n + i) * d + h * dh..][..dh];
                                let arow = &av.data[((b * heads + h) * n + i) * n..][..n];
                                for (kk, &w) in arow.iter().enumerate() {
                                    let o = &mut gv[(b * n + kk) * d + h * dh..][..dh];
                                    for (ov, x) in o.iter_mut().zip(go) {
                                        *ov += w * x;
                                    }
                                }
                            }
                        }
                    }
                });
            }
            Op::Gather { table, idx } => {
                let c = g.cols;
                acc(*table, &mut |gt| {
                    for (r, &i) in idx.iter().enumerate() {
                        for j in 0..c {
                            gt[i * c + j] += g.data[r * c + j];
                        }
                    }
                });
            }
            Op::Reshape(x) => {
                acc(*x, &mut |gx| {
                    for (o, gv) in gx.iter_mut().zip(&g.data) {
                        *o += gv;
                    }
                });
            }
            Op::RowAffine { x, scale } => {
                let c = g.cols;
                acc(*x, &mut |gx| {
                    for (r, (orow, grow)) in gx.chunks_mut(c).zip(g.data.chunks(c)).enumerate() {
                        for (o, gv) in orow.iter_mut().zip(grow) {
                            *o += gv * scale[r];
                        }
                    }
                });
            }
            Op::Mse { pred, target } => {
                let pv = self.value(*pred);
                let scale = 2.0 * g.data[0] / target.len() as f64;
                acc(*pred, &mut |gp| {
                    for ((o, p), t) in gp.iter_mut().zip(&pv.data).zip(target) {
                        *o += scale * (p - t);
                    }
                });
            }
        }
    }
}
