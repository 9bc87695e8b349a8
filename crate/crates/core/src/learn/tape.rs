//! Reverse-mode differentiation over matrix-valued nodes.
//!
//! A [`Tape`] records every operation of one forward pass; [`Tape::backward`]
//! walks it in reverse and accumulates gradients. Max-pooling routes the
//! gradient to the row that supplied each maximum, ties going to the lowest
//! row index.

use crate::bev::scatter_max_rows;
use crate::error::{Error, Result};
use crate::tensor::{dot, Matrix};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    /// `x W^T + b`, with `W` stored `out x in` and `b` a `1 x out` row.
    Affine { x: Var, w: Var, b: Var },
    Relu(Var),
    Concat(Var, Var),
    ScatterMax { x: Var, argmax: Vec<usize> },
    Gather { x: Var, index: Vec<Option<usize>> },
    WeightedRowSum { x: Var, weights: Vec<f64> },
    NormalizeRows(Var),
    StackRows(Vec<Var>),
    CrossEntropySum { logits: Var, labels: Vec<usize>, probs: Matrix },
    Contrastive { v: Var, vt: Var, tau: f64 },
    Add(Var, Var),
    Scale(Var, f64),
}

struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node of a tape.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, zeros if the output does not depend on it.
    pub fn take(&mut self, v: Var, shape: (usize, usize)) -> Matrix {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }
}

fn unit_norm_check(m: &Matrix) -> Result<()> {
    for r in 0..m.rows() {
        let n = dot(m.row(r), m.row(r)).sqrt();
        if (n - 1.0).abs() > 1e-6 {
            return Err(Error::NotNormalized { index: r, norm: n });
        }
    }
    Ok(())
}

// Sums in sorted order, so the result does not depend on the input order.
fn sorted_sum(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs.into_iter().sum()
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + sorted_sum(xs.iter().map(|x| (x - m).exp()).collect()).ln()
}

/// Per-anchor contrastive terms: for anchor `i`, the log-probability of the
/// positive pair against all same-batch similarities of both views.
/// Returns `(loss, [softmax over v-terms, softmax over vt-terms] per i)`.
fn contrastive_terms(v: &Matrix, vt: &Matrix, tau: f64) -> (f64, Vec<(Vec<f64>, Vec<f64>)>) {
    let b = v.rows();
    let mut terms = Vec::with_capacity(b);
    let mut soft = Vec::with_capacity(b);
    for i in 0..b {
        let mut logits = Vec::with_capacity(2 * b);
        logits.extend((0..b).map(|j| dot(v.row(i), v.row(j)) / tau));
        logits.extend((0..b).map(|k| dot(vt.row(i), vt.row(k)) / tau));
        let lse = log_sum_exp(&logits);
        let pos = dot(v.row(i), vt.row(i)) / tau;
        terms.push(lse - pos);
        let p: Vec<f64> = logits.iter().map(|l| (l - lse).exp()).collect();
        soft.push((p[..b].to_vec(), p[b..].to_vec()));
    }
    (sorted_sum(terms) / b as f64, soft)
}

/// Contrastive loss between a batch of unit vectors and their
/// density-transferred counterparts (row `i` of `vt` is the positive of row
/// `i` of `v`). Both denominators include the self-similarity terms.
pub fn contrastive_loss(v: &Matrix, vt: &Matrix, tau: f64) -> Result<f64> {
    check_contrastive(v, vt, tau)?;
    Ok(contrastive_terms(v, vt, tau).0)
}

fn check_contrastive(v: &Matrix, vt: &Matrix, tau: f64) -> Result<()> {
    if v.shape() != vt.shape() || v.rows() == 0 {
        return Err(Error::Shape(format!(
            "contrastive batches {:?} and {:?}",
            v.shape(),
            vt.shape()
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::Config("temperature must be > 0".into()));
    }
    unit_norm_check(v)?;
    unit_norm_check(vt)
}

/// Row-wise softmax.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let lse = log_sum_exp(row);
        row.iter_mut().for_each(|x| *x = (*x - lse).exp());
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        assert_eq!(xv.cols(), wv.cols(), "affine input width");
        assert_eq!(bv.shape(), (1, wv.rows()), "affine bias");
        let (fan_in, fan_out) = (wv.cols(), wv.rows());
        // Column-major copy of w: each input feature scales one contiguous
        // row, which keeps the inner loop over outputs.
        let mut wt = vec![0.0; fan_in * fan_out];
        for o in 0..fan_out {
            for (k, &v) in wv.row(o).iter().enumerate() {
                wt[k * fan_out + o] = v;
            }
        }
        let mut out = Matrix::zeros(xv.rows(), fan_out);
        for n in 0..xv.rows() {
            let row = out.row_mut(n);
            row.copy_from_slice(bv.row(0));
            for (&xk, wk) in xv.row(n).iter().zip(wt.chunks_exact(fan_out)) {
                for (r, &w) in row.iter_mut().zip(wk) {
                    *r += xk * w;
                }
            }
        }
        self.push(out, Op::Affine { x, w, b })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        self.push(out, Op::Relu(x))
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.rows(), bv.rows(), "concat rows");
        let mut out = Matrix::zeros(av.rows(), av.cols() + bv.cols());
        for r in 0..av.rows() {
            let row = out.row_mut(r);
            row[..av.cols()].copy_from_slice(av.row(r));
            row[av.cols()..].copy_from_slice(bv.row(r));
        }
        self.push(out, Op::Concat(a, b))
    }

    /// Coordinate-wise max of the rows sent to each target; empty targets
    /// are zero.
    pub fn scatter_max(&mut self, x: Var, targets: &[Option<usize>], n_targets: usize) -> Var {
        let pooled = scatter_max_rows(self.value(x), targets, n_targets);
        self.push(
            pooled.features,
            Op::ScatterMax {
                x,
                argmax: pooled.argmax,
            },
        )
    }

    /// Row `n` of the output is row `index[n]` of `x`, or zeros.
    pub fn gather(&mut self, x: Var, index: Vec<Option<usize>>) -> Var {
        let xv = self.value(x);
        let mut out = Matrix::zeros(index.len(), xv.cols());
        for (n, i) in index.iter().enumerate() {
            if let Some(i) = *i {
                out.row_mut(n).copy_from_slice(xv.row(i));
            }
        }
        self.push(out, Op::Gather { x, index })
    }

    /// `sum_r weights[r] * x[r]` as a single row.
    pub fn weighted_row_sum(&mut self, x: Var, weights: Vec<f64>) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.rows(), weights.len(), "weights per row");
        let mut out = Matrix::zeros(1, xv.cols());
        for (r, w) in weights.iter().enumerate() {
            for (o, v) in out.row_mut(0).iter_mut().zip(xv.row(r)) {
                *o += w * v;
            }
        }
        self.push(out, Op::WeightedRowSum { x, weights })
    }

    /// L2-normalizes each row; zero rows stay zero.
    pub fn normalize_rows(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let n = dot(row, row).sqrt();
            if n > 0.0 {
                row.iter_mut().for_each(|v| *v /= n);
            }
        }
        self.push(out, Op::NormalizeRows(x))
    }

    pub fn stack_rows(&mut self, parts: Vec<Var>) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in &parts {
            let v = self.value(p);
            assert_eq!(v.cols(), cols, "stack widths");
            data.extend_from_slice(v.data());
            rows += v.rows();
        }
        self.push(Matrix::from_vec(rows, cols, data), Op::StackRows(parts))
    }

    /// `sum_n -log softmax(logits_n)[labels_n]`, via log-sum-exp.
    pub fn cross_entropy_sum(&mut self, logits: Var, labels: Vec<usize>) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.rows(), labels.len(), "labels per row");
        let mut total = 0.0;
        for (n, &y) in labels.iter().enumerate() {
            total += log_sum_exp(lv.row(n)) - lv.get(n, y);
        }
        let probs = softmax_rows(lv);
        self.push(
            Matrix::scalar(total),
            Op::CrossEntropySum {
                logits,
                labels,
                probs,
            },
        )
    }

    pub fn contrastive(&mut self, v: Var, vt: Var, tau: f64) -> Result<Var> {
        let (vv, tv) = (self.value(v), self.value(vt));
        check_contrastive(vv, tv, tau)?;
        let loss = contrastive_terms(vv, tv, tau).0;
        Ok(self.push(Matrix::scalar(loss), Op::Contrastive { v, vt, tau }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|v| *v *= k);
        self.push(out, Op::Scale(a, k))
    }

    /// Hash of every ReLU sign and max-pool winner on the tape. Two passes
    /// with equal patterns lie in the same smooth piece of the loss, which is
    /// what finite-difference checks need.
    pub fn activation_pattern(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |v: u64| {
            h ^= v;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => {
                    for v in self.value(*x).data() {
                        mix(u64::from(*v > 0.0));
                    }
                }
                Op::ScatterMax { argmax, .. } => argmax.iter().for_each(|&a| mix(a as u64)),
                _ => {}
            }
        }
        h
    }

    /// Gradients of the scalar node `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward from a non-scalar");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(1.0));

        fn acc(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of tape node {id}")));
            }
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::Affine { x, w, b } => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let mut gx = Matrix::zeros(xv.rows(), xv.cols());
                    let mut gw = Matrix::zeros(wv.rows(), wv.cols());
                    let mut gb = Matrix::zeros(1, wv.rows());
                    for n in 0..xv.rows() {
                        let gr = g.row(n);
                        let xr = xv.row(n);
                        for (o, &go) in gr.iter().enumerate() {
                            if go == 0.0 {
                                continue;
                            }
                            let wr = wv.row(o);
                            for (gxk, wk) in gx.row_mut(n).iter_mut().zip(wr) {
                                *gxk += go * wk;
                            }
                            for (gwk, xk) in gw.row_mut(o).iter_mut().zip(xr) {
                                *gwk += go * xk;
                            }
                            gb.data_mut()[o] += go;
                        }
                    }
                    acc(&mut grads, *x, gx);
                    acc(&mut grads, *w, gw);
                    acc(&mut grads, *b, gb);
                }
                Op::Relu(x) => {
                    let mut gx = g;
                    for (gv, out) in gx.data_mut().iter_mut().zip(node.value.data()) {
                        if *out <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::Concat(a, b) => {
                    let ac = self.value(*a).cols();
                    let bc = self.value(*b).cols();
                    let mut ga = Matrix::zeros(g.rows(), ac);
                    let mut gb = Matrix::zeros(g.rows(), bc);
                    for r in 0..g.rows() {
                        ga.row_mut(r).copy_from_slice(&g.row(r)[..ac]);
                        gb.row_mut(r).copy_from_slice(&g.row(r)[ac..]);
                    }
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::ScatterMax { x, argmax } => {
                    let xv = self.value(*x);
                    let c = xv.cols();
                    let mut gx = Matrix::zeros(xv.rows(), c);
                    for (slot, &src) in argmax.iter().enumerate() {
                        if src != usize::MAX {
                            let (t, k) = (slot / c, slot % c);
                            gx.data_mut()[src * c + k] += g.get(t, k);
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::Gather { x, index } => {
                    let xv = self.value(*x);
                    let mut gx = Matrix::zeros(xv.rows(), xv.cols());
                    for (n, i) in index.iter().enumerate() {
                        if let Some(i) = *i {
                            for (a, b) in gx.row_mut(i).iter_mut().zip(g.row(n)) {
                                *a += b;
                            }
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::WeightedRowSum { x, weights } => {
                    let xv = self.value(*x);
                    let mut gx = Matrix::zeros(xv.rows(), xv.cols());
                    for (r, w) in weights.iter().enumerate() {
                        for (a, b) in gx.row_mut(r).iter_mut().zip(g.row(0)) {
                            *a = w * b;
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::NormalizeRows(x) => {
                    let xv = self.value(*x);
                    let mut gx = Matrix::zeros(xv.rows(), xv.cols());
                    for r in 0..xv.rows() {
                        let n = dot(xv.row(r), xv.row(r)).sqrt();
                        if n == 0.0 {
                            continue;
                        }
                        let y = node.value.row(r);
                        let gy = g.row(r);
                        let proj = dot(y, gy);
                        for ((o, yk), gk) in gx.row_mut(r).iter_mut().zip(y).zip(gy) {
                            *o = (gk - yk * proj) / n;
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::StackRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let (rows, cols) = self.value(p).shape();
                        let slice = g.data()[start * cols..(start + rows) * cols].to_vec();
                        acc(&mut grads, p, Matrix::from_vec(rows, cols, slice));
                        start += rows;
                    }
                }
                Op::CrossEntropySum {
                    logits,
                    labels,
                    probs,
                } => {
                    let s = g.item();
                    let mut gl = probs.clone();
                    for (n, &y) in labels.iter().enumerate() {
                        let row = gl.row_mut(n);
                        row[y] -= 1.0;
                        row.iter_mut().for_each(|v| *v *= s);
                    }
                    acc(&mut grads, *logits, gl);
                }
                Op::Contrastive { v, vt, tau } => {
                    let s = g.item();
                    let (vv, tv) = (self.value(*v), self.value(*vt));
                    let b = vv.rows();
                    let (_, soft) = contrastive_terms(vv, tv, *tau);
                    let mut gv = Matrix::zeros(b, vv.cols());
                    let mut gt = Matrix::zeros(b, vv.cols());
                    let k = s / (b as f64 * tau);
                    let axpy = |dst: &mut [f64], a: f64, x: &[f64]| {
                        dst.iter_mut().zip(x).for_each(|(d, xv)| *d += a * xv);
                    };
                    for (i, (pv, pt)) in soft.iter().enumerate() {
                        // positive pair
                        axpy(gv.row_mut(i), -k, tv.row(i));
                        axpy(gt.row_mut(i), -k, vv.row(i));
                        for j in 0..b {
                            axpy(gv.row_mut(i), k * pv[j], vv.row(j));
                            axpy(gv.row_mut(j), k * pv[j], vv.row(i));
                            axpy(gt.row_mut(i), k * pt[j], tv.row(j));
                            axpy(gt.row_mut(j), k * pt[j], tv.row(i));
                        }
                    }
                    acc(&mut grads, *v, gv);
                    acc(&mut grads, *vt, gt);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::Scale(a, k) => {
                    let mut ga = g;
                    ga.data_mut().iter_mut().for_each(|v| *v *= k);
                    acc(&mut grads, *a, ga);
                }
            }
        }
        Ok(Gradients { grads })
    }
}
