//! Reverse-mode automatic differentiation over [`Mat`] values.
//!
//! A [`Tape`] records every operation of one forward pass. Calling
//! [`Tape::backward`] walks the records in reverse and accumulates input
//! gradients. Nodes that do not depend on a gradient-requiring leaf are
//! skipped, so constants and detached values cost nothing on the way back.

use std::rc::Rc;

use super::tensor::{axpy, dot, matmul, matmul_nt_acc, matmul_tn_acc, Mat, Real};

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Row indices shared between an op and its backward pass.
pub type Index = Rc<[usize]>;

/// Clamp applied to probabilities before taking logarithms in the KL loss.
pub const PROB_EPS: f64 = 1e-8;
const LN_EPS: f64 = 1e-5;

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    LeakyRelu(Var, T),
    Elu(Var),
    Gelu(Var),
    Sigmoid(Var),
    Gather(Var, Index),
    ScatterAdd(Var, Index),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    HeadDot { x: Var, a: Var, heads: usize },
    HeadScale { x: Var, alpha: Var, heads: usize },
    HeadMean { x: Var, heads: usize },
    SegmentSoftmax(Var, Index),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Mat<T>, rstd: Vec<T> },
    Attention { q: Var, k: Var, v: Var, heads: usize, offsets: Index, probs: Vec<T> },
    SegmentMean(Var, Index),
    Kl { logits: Var, offsets: Index, probs: Vec<T>, log_target: Vec<T> },
    Mse { pred: Var, target: Vec<T> },
}

struct Node<T> {
    value: Mat<T>,
    op: Op<T>,
    grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Grads<T> {
    grads: Vec<Option<Mat<T>>>,
}

impl<T: Real> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&Mat<T>> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Mat<T>> {
        self.grads[v.0].take()
    }
}

#[derive(Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].grad
    }

    /// Hash of which side of zero every LeakyReLU input fell on. Two
    /// forward passes with equal signatures sit on the same linear piece.
    pub fn kink_signature(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for n in &self.nodes {
            if let Op::LeakyRelu(a, _) = n.op {
                for &x in &self.nodes[a.0].value.data {
                    h ^= u64::from(x > T::zero());
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }

    fn push(&mut self, value: Mat<T>, op: Op<T>, grad: bool) -> Var {
        self.nodes.push(Node { value, op, grad });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].grad)
    }

    /// Gradient-tracking leaf, typically a parameter.
    pub fn leaf(&mut self, value: Mat<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Mat<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Copy of `v` with no gradient path back to it.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = matmul(self.value(a), self.value(b));
        let g = self.any_grad(&[a, b]);
        self.push(value, Op::MatMul(a, b), g)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        let g = self.any_grad(&[a, b]);
        self.push(value, Op::Add(a, b), g)
    }

    /// `a + row` with `row` (1 x cols) broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.rows, 1);
        assert_eq!(r.cols, self.value(a).cols);
        let r = r.data.clone();
        let mut value = self.value(a).clone();
        for chunk in value.data.chunks_mut(r.len().max(1)) {
            for (x, &b) in chunk.iter_mut().zip(&r) {
                *x += b;
            }
        }
        let g = self.any_grad(&[a, row]);
        self.push(value, Op::AddRow(a, row), g)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let mut value = self.value(a).clone();
        value.data.iter_mut().for_each(|x| *x *= s);
        let g = self.any_grad(&[a]);
        self.push(value, Op::Scale(a, s), g)
    }

    fn map(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let src = self.value(a);
        let value = Mat::from_vec(src.rows, src.cols, src.data.iter().map(|&x| f(x)).collect());
        let g = self.any_grad(&[a]);
        self.push(value, op, g)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        self.map(a, |x| if x > T::zero() { x } else { slope * x }, Op::LeakyRelu(a, slope))
    }

    pub fn elu(&mut self, a: Var) -> Var {
        self.map(a, elu, Op::Elu(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.map(a, |x| gelu(x).0, Op::Gelu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    /// Row `i` of the result is row `idx[i]` of `a`.
    pub fn gather(&mut self, a: Var, idx: Index) -> Var {
        let src = self.value(a);
        let mut value = Mat::zeros(idx.len(), src.cols);
        for (i, &r) in idx.iter().enumerate() {
            value.row_mut(i).copy_from_slice(src.row(r));
        }
        let g = self.any_grad(&[a]);
        self.push(value, Op::Gather(a, idx), g)
    }

    /// Sums row `i` of `a` into row `idx[i]` of an `rows`-row result.
    pub fn scatter_add(&mut self, a: Var, idx: Index, rows: usize) -> Var {
        let src = self.value(a);
        assert_eq!(src.rows, idx.len());
        let mut value = Mat::zeros(rows, src.cols);
        for (i, &r) in idx.iter().enumerate() {
            axpy(T::one(), src.row(i), value.row_mut(r));
        }
        let g = self.any_grad(&[a]);
        self.push(value, Op::ScatterAdd(a, idx), g)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut value = Mat::zeros(rows, cols);
        for r in 0..rows {
            let mut c = 0;
            for &p in parts {
                let src = self.value(p);
                assert_eq!(src.rows, rows, "concat_cols row mismatch");
                value.data[r * cols + c..r * cols + c + src.cols].copy_from_slice(src.row(r));
                c += src.cols;
            }
        }
        let g = self.any_grad(parts);
        self.push(value, Op::ConcatCols(parts.to_vec()), g)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        for &p in parts {
            let src = self.value(p);
            assert_eq!(src.cols, cols, "concat_rows col mismatch");
            data.extend_from_slice(&src.data);
        }
        let rows = data.len() / cols.max(1);
        let g = self.any_grad(parts);
        self.push(Mat::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()), g)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let src = self.value(a);
        let cols = src.cols;
        let value = Mat::from_vec(len, cols, src.data[start * cols..(start + len) * cols].to_vec());
        let g = self.any_grad(&[a]);
        self.push(value, Op::SliceRows(a, start), g)
    }

    /// Per-head dot product of each row of `x` (rows x heads*d) with `a` (1 x heads*d).
    pub fn head_dot(&mut self, x: Var, a: Var, heads: usize) -> Var {
        let (xv, av) = (self.value(x), self.value(a));
        assert_eq!(av.shape(), (1, xv.cols));
        let d = xv.cols / heads;
        let mut value = Mat::zeros(xv.rows, heads);
        for r in 0..xv.rows {
            let row = xv.row(r);
            for h in 0..heads {
                value.data[r * heads + h] = dot(&row[h * d..(h + 1) * d], &av.data[h * d..(h + 1) * d]);
            }
        }
        let g = self.any_grad(&[x, a]);
        self.push(value, Op::HeadDot { x, a, heads }, g)
    }

    /// Scales head block `h` of each row of `x` by `alpha[row, h]`.
    pub fn head_scale(&mut self, x: Var, alpha: Var, heads: usize) -> Var {
        let (xv, al) = (self.value(x), self.value(alpha));
        assert_eq!(al.shape(), (xv.rows, heads));
        let d = xv.cols / heads;
        let mut value = xv.clone();
        for r in 0..xv.rows {
            for h in 0..heads {
                let s = al.data[r * heads + h];
                value.row_mut(r)[h * d..(h + 1) * d].iter_mut().for_each(|v| *v *= s);
            }
        }
        let g = self.any_grad(&[x, alpha]);
        self.push(value, Op::HeadScale { x, alpha, heads }, g)
    }

    /// Averages the `heads` column blocks of `x`.
    pub fn head_mean(&mut self, x: Var, heads: usize) -> Var {
        let xv = self.value(x);
        let d = xv.cols / heads;
        let inv = T::one() / T::from_f64(heads as f64);
        let mut value = Mat::zeros(xv.rows, d);
        for r in 0..xv.rows {
            let row = xv.row(r);
            for h in 0..heads {
                axpy(inv, &row[h * d..(h + 1) * d], value.row_mut(r));
            }
        }
        let g = self.any_grad(&[x]);
        self.push(value, Op::HeadMean { x, heads }, g)
    }

    /// Column-wise softmax over the rows sharing a segment id.
    pub fn segment_softmax(&mut self, scores: Var, seg: Index, segments: usize) -> Var {
        let s = self.value(scores);
        assert_eq!(s.rows, seg.len());
        let cols = s.cols;
        let mut max = vec![T::neg_infinity(); segments * cols];
        for (r, &g) in seg.iter().enumerate() {
            for c in 0..cols {
                let m = &mut max[g * cols + c];
                *m = m.max(s.data[r * cols + c]);
            }
        }
        let mut value = Mat::zeros(s.rows, cols);
        let mut sum = vec![T::zero(); segments * cols];
        for (r, &g) in seg.iter().enumerate() {
            for c in 0..cols {
                let e = (s.data[r * cols + c] - max[g * cols + c]).exp();
                value.data[r * cols + c] = e;
                sum[g * cols + c] += e;
            }
        }
        for (r, &g) in seg.iter().enumerate() {
            for c in 0..cols {
                value.data[r * cols + c] = value.data[r * cols + c] / sum[g * cols + c];
            }
        }
        let g = self.any_grad(&[scores]);
        self.push(value, Op::SegmentSoftmax(scores, seg), g)
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (gv, bv) = (self.value(gamma), self.value(beta));
        let cols = xv.cols;
        let n = T::from_f64(cols as f64);
        let eps = T::from_f64(LN_EPS);
        let mut xhat = Mat::zeros(xv.rows, cols);
        let mut rstd = Vec::with_capacity(xv.rows);
        let mut value = Mat::zeros(xv.rows, cols);
        for r in 0..xv.rows {
            let row = xv.row(r);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let rs = T::one() / (var + eps).sqrt();
            rstd.push(rs);
            for c in 0..cols {
                let h = (row[c] - mean) * rs;
                xhat.data[r * cols + c] = h;
                value.data[r * cols + c] = h * gv.data[c] + bv.data[c];
            }
        }
        let g = self.any_grad(&[x, gamma, beta]);
        self.push(value, Op::LayerNorm { x, gamma, beta, xhat, rstd }, g)
    }

    /// Multi-head scaled dot-product attention restricted to contiguous
    /// token segments `offsets[s]..offsets[s + 1]`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, offsets: Index) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let cols = qv.cols;
        let dh = cols / heads;
        let scale = T::one() / T::from_f64(dh as f64).sqrt();
        let mut value = Mat::zeros(qv.rows, cols);
        let mut probs = Vec::new();
        let mut scores = Vec::new();
        for w in offsets.windows(2) {
            let (b, e) = (w[0], w[1]);
            for h in 0..heads {
                let hs = h * dh..(h + 1) * dh;
                for i in b..e {
                    let qi = &qv.row(i)[hs.clone()];
                    scores.clear();
                    scores.extend((b..e).map(|j| dot(qi, &kv.row(j)[hs.clone()]) * scale));
                    softmax_in_place(&mut scores);
                    let out = &mut value.data[i * cols + h * dh..i * cols + (h + 1) * dh];
                    for (j, &p) in (b..e).zip(&scores) {
                        axpy(p, &vv.row(j)[hs.clone()], out);
                    }
                    probs.extend_from_slice(&scores);
                }
            }
        }
        let g = self.any_grad(&[q, k, v]);
        self.push(value, Op::Attention { q, k, v, heads, offsets, probs }, g)
    }

    /// Mean of each contiguous row segment.
    pub fn segment_mean(&mut self, x: Var, offsets: Index) -> Var {
        let xv = self.value(x);
        let mut value = Mat::zeros(offsets.len() - 1, xv.cols);
        for (s, w) in offsets.windows(2).enumerate() {
            let inv = T::one() / T::from_f64((w[1] - w[0]) as f64);
            for r in w[0]..w[1] {
                axpy(inv, xv.row(r), value.row_mut(s));
            }
        }
        let g = self.any_grad(&[x]);
        self.push(value, Op::SegmentMean(x, offsets), g)
    }

    /// Mean over segments of `KL(softmax(logits) || target)`.
    ///
    /// `logits` is a column; `target` holds one probability per row and
    /// sums to one within each segment. Both sides are clamped to
    /// [`PROB_EPS`] inside the logarithm and the clamped target is
    /// renormalized, which keeps the value non-negative.
    pub fn kl_loss(&mut self, logits: Var, offsets: Index, target: &[T]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.cols, 1);
        assert_eq!(lv.rows, target.len());
        let eps = T::from_f64(PROB_EPS);
        let mut probs = lv.data.clone();
        let mut log_target = vec![T::zero(); target.len()];
        let mut total = T::zero();
        for w in offsets.windows(2) {
            let r = w[0]..w[1];
            softmax_in_place(&mut probs[r.clone()]);
            let z: T = target[r.clone()].iter().map(|&t| t.max(eps)).sum();
            for i in r {
                log_target[i] = (target[i].max(eps) / z).ln();
                total += probs[i] * (probs[i].max(eps).ln() - log_target[i]);
            }
        }
        let segs = T::from_f64((offsets.len() - 1) as f64);
        let g = self.any_grad(&[logits]);
        self.push(Mat::scalar(total / segs), Op::Kl { logits, offsets, probs, log_target }, g)
    }

    pub fn mse_loss(&mut self, pred: Var, target: &[T]) -> Var {
        let pv = self.value(pred);
        assert_eq!(pv.len(), target.len());
        let n = T::from_f64(target.len() as f64);
        let loss = pv.data.iter().zip(target).map(|(&p, &t)| (p - t) * (p - t)).sum::<T>() / n;
        let g = self.any_grad(&[pred]);
        self.push(Mat::scalar(loss), Op::Mse { pred, target: target.to_vec() }, g)
    }

    /// Backpropagates unit gradients from each scalar root.
    pub fn backward(&self, roots: &[Var]) -> Grads<T> {
        let mut grads: Vec<Option<Mat<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        for &r in roots {
            assert_eq!(self.value(r).len(), 1, "backward root must be scalar");
            acc(&mut grads, r, 1, 1).data[0] += T::one();
        }
        for idx in (0..self.nodes.len()).rev() {
            let node = &self.nodes[idx];
            if !node.grad {
                continue;
            }
            let Some(dy) = grads[idx].take() else { continue };
            self.backward_op(node, &dy, &mut grads);
            grads[idx] = Some(dy);
        }
        Grads { grads }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].grad
    }

    fn backward_op(&self, node: &Node<T>, dy: &Mat<T>, grads: &mut [Option<Mat<T>>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                if self.wants(a) {
                    matmul_nt_acc(dy, bv, acc(grads, a, av.rows, av.cols));
                }
                if self.wants(b) {
                    matmul_tn_acc(av, dy, acc(grads, b, bv.rows, bv.cols));
                }
            }
            &Op::Add(a, b) => {
                for v in [a, b] {
                    if self.wants(v) {
                        acc(grads, v, dy.rows, dy.cols).add_assign(dy);
                    }
                }
            }
            &Op::AddRow(a, row) => {
                if self.wants(a) {
                    acc(grads, a, dy.rows, dy.cols).add_assign(dy);
                }
                if self.wants(row) {
                    let g = acc(grads, row, 1, dy.cols);
                    for r in 0..dy.rows {
                        axpy(T::one(), dy.row(r), &mut g.data);
                    }
                }
            }
            &Op::Scale(a, s) => {
                axpy(s, &dy.data, &mut acc(grads, a, dy.rows, dy.cols).data);
            }
            &Op::LeakyRelu(a, slope) => {
                let x = self.value(a);
                let g = acc(grads, a, dy.rows, dy.cols);
                for i in 0..dy.data.len() {
                    g.data[i] += if x.data[i] > T::zero() { dy.data[i] } else { slope * dy.data[i] };
                }
            }
            &Op::Elu(a) => {
                let x = self.value(a);
                let g = acc(grads, a, dy.rows, dy.cols);
                for i in 0..dy.data.len() {
                    let d = if x.data[i] > T::zero() { T::one() } else { y.data[i] + T::one() };
                    g.data[i] += d * dy.data[i];
                }
            }
            &Op::Gelu(a) => {
                let x = self.value(a);
                let g = acc(grads, a, dy.rows, dy.cols);
                for i in 0..dy.data.len() {
                    g.data[i] += gelu(x.data[i]).1 * dy.data[i];
                }
            }
            &Op::Sigmoid(a) => {
                let g = acc(grads, a, dy.rows, dy.cols);
                for i in 0..dy.data.len() {
                    let s = y.data[i];
                    g.data[i] += s * (T::one() - s) * dy.data[i];
                }
            }
            Op::Gather(a, idx) => {
                let src = self.value(*a);
                let g = acc(grads, *a, src.rows, src.cols);
                for (i, &r) in idx.iter().enumerate() {
                    axpy(T::one(), dy.row(i), g.row_mut(r));
                }
            }
            Op::ScatterAdd(a, idx) => {
                let g = acc(grads, *a, idx.len(), dy.cols);
                for (i, &r) in idx.iter().enumerate() {
                    axpy(T::one(), dy.row(r), g.row_mut(i));
                }
            }
            Op::ConcatCols(parts) => {
                let mut c = 0;
                for &p in parts {
                    let w = self.value(p).cols;
                    if self.wants(p) {
                        let g = acc(grads, p, dy.rows, w);
                        for r in 0..dy.rows {
                            axpy(T::one(), &dy.row(r)[c..c + w], g.row_mut(r));
                        }
                    }
                    c += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut r0 = 0;
                for &p in parts {
                    let n = self.value(p).rows;
                    if self.wants(p) {
                        let g = acc(grads, p, n, dy.cols);
                        axpy(T::one(), &dy.data[r0 * dy.cols..(r0 + n) * dy.cols], &mut g.data);
                    }
                    r0 += n;
                }
            }
            &Op::SliceRows(a, start) => {
                let src = self.value(a);
                let g = acc(grads, a, src.rows, src.cols);
                let c = src.cols;
                axpy(T::one(), &dy.data, &mut g.data[start * c..(start + dy.rows) * c]);
            }
            &Op::HeadDot { x, a, heads } => {
                let (xv, av) = (self.value(x), self.value(a));
                let d = xv.cols / heads;
                if self.wants(x) {
                    let g = acc(grads, x, xv.rows, xv.cols);
                    for r in 0..xv.rows {
                        for h in 0..heads {
                            let s = dy.data[r * heads + h];
                            axpy(s, &av.data[h * d..(h + 1) * d], &mut g.row_mut(r)[h * d..(h + 1) * d]);
                        }
                    }
                }
                if self.wants(a) {
                    let g = acc(grads, a, 1, xv.cols);
                    for r in 0..xv.rows {
                        for h in 0..heads {
                            let s = dy.data[r * heads + h];
                            axpy(s, &xv.row(r)[h * d..(h + 1) * d], &mut g.data[h * d..(h + 1) * d]);
                        }
                    }
                }
            }
            &Op::HeadScale { x, alpha, heads } => {
                let (xv, al) = (self.value(x), self.value(alpha));
                let d = xv.cols / heads;
                if self.wants(x) {
                    let g = acc(grads, x, xv.rows, xv.cols);
                    for r in 0..xv.rows {
                        for h in 0..heads {
                            let s = al.data[r * heads + h];
                            axpy(s, &dy.row(r)[h * d..(h + 1) * d], &mut g.row_mut(r)[h * d..(h + 1) * d]);
                        }
                    }
                }
                if self.wants(alpha) {
                    let g = acc(grads, alpha, xv.rows, heads);
                    for r in 0..xv.rows {
                        for h in 0..heads {
                            g.data[r * heads + h] += dot(&dy.row(r)[h * d..(h + 1) * d], &xv.row(r)[h * d..(h + 1) * d]);
                        }
                    }
                }
            }
            &Op::HeadMean { x, heads } => {
                let xv = self.value(x);
                let d = xv.cols / heads;
                let inv = T::one() / T::from_f64(heads as f64);
                let g = acc(grads, x, xv.rows, xv.cols);
                for r in 0..xv.rows {
                    for h in 0..heads {
                        axpy(inv, dy.row(r), &mut g.row_mut(r)[h * d..(h + 1) * d]);
                    }
                }
            }
            Op::SegmentSoftmax(s, seg) => {
                let cols = y.cols;
                let segments = seg.iter().copied().max().map_or(0, |m| m + 1);
                let mut inner = vec![T::zero(); segments * cols];
                for (r, &g) in seg.iter().enumerate() {
                    for c in 0..cols {
                        inner[g * cols + c] += y.data[r * cols + c] * dy.data[r * cols + c];
                    }
                }
                let g = acc(grads, *s, y.rows, cols);
                for (r, &sg) in seg.iter().enumerate() {
                    for c in 0..cols {
                        let i = r * cols + c;
                        g.data[i] += y.data[i] * (dy.data[i] - inner[sg * cols + c]);
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let cols = y.cols;
                let n = T::from_f64(cols as f64);
                let gv = self.value(*gamma);
                if self.wants(*gamma) {
                    let g = acc(grads, *gamma, 1, cols);
                    for r in 0..y.rows {
                        for c in 0..cols {
                            g.data[c] += dy.data[r * cols + c] * xhat.data[r * cols + c];
                        }
                    }
                }
                if self.wants(*beta) {
                    let g = acc(grads, *beta, 1, cols);
                    for r in 0..y.rows {
                        axpy(T::one(), dy.row(r), &mut g.data);
                    }
                }
                if self.wants(*x) {
                    let g = acc(grads, *x, y.rows, cols);
                    let mut dxh = vec![T::zero(); cols];
                    for r in 0..y.rows {
                        let xh = xhat.row(r);
                        for c in 0..cols {
                            dxh[c] = dy.data[r * cols + c] * gv.data[c];
                        }
                        let m1 = dxh.iter().copied().sum::<T>() / n;
                        let m2 = dot(&dxh, xh) / n;
                        let out = g.row_mut(r);
                        for c in 0..cols {
                            out[c] += rstd[r] * (dxh[c] - m1 - xh[c] * m2);
                        }
                    }
                }
            }
            Op::Attention { q, k, v, heads, offsets, probs } => {
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let cols = qv.cols;
                let dh = cols / heads;
                let scale = T::one() / T::from_f64(dh as f64).sqrt();
                let mut dq = Mat::zeros(qv.rows, cols);
                let mut dk = Mat::zeros(qv.rows, cols);
                let mut dv = Mat::zeros(qv.rows, cols);
                let mut ds = Vec::new();
                let mut pi = 0;
                for w in offsets.windows(2) {
                    let (b, e) = (w[0], w[1]);
                    let n = e - b;
                    for h in 0..*heads {
                        let hs = h * dh..(h + 1) * dh;
                        for i in b..e {
                            let p = &probs[pi..pi + n];
                            pi += n;
                            let dout = &dy.row(i)[hs.clone()];
                            ds.clear();
                            ds.extend((b..e).map(|j| dot(dout, &vv.row(j)[hs.clone()])));
                            let inner = dot(p, &ds);
                            for (jj, j) in (b..e).enumerate() {
                                axpy(p[jj], dout, &mut dv.row_mut(j)[hs.clone()]);
                                let s = p[jj] * (ds[jj] - inner) * scale;
                                axpy(s, &kv.row(j)[hs.clone()], &mut dq.row_mut(i)[hs.clone()]);
                                axpy(s, &qv.row(i)[hs.clone()], &mut dk.row_mut(j)[hs.clone()]);
                            }
                        }
                    }
                }
                for (var, g) in [(*q, dq), (*k, dk), (*v, dv)] {
                    if self.wants(var) {
                        acc(grads, var, g.rows, g.cols).add_assign(&g);
                    }
                }
            }
            Op::SegmentMean(x, offsets) => {
                let xv = self.value(*x);
                let g = acc(grads, *x, xv.rows, xv.cols);
                for (s, w) in offsets.windows(2).enumerate() {
                    let inv = T::one() / T::from_f64((w[1] - w[0]) as f64);
                    for r in w[0]..w[1] {
                        axpy(inv, dy.row(s), g.row_mut(r));
                    }
                }
            }
            Op::Kl { logits, offsets, probs, log_target } => {
                let eps = T::from_f64(PROB_EPS);
                let log_eps = eps.ln();
                let up = dy.data[0] / T::from_f64((offsets.len() - 1) as f64);
                let g = acc(grads, *logits, probs.len(), 1);
                for w in offsets.windows(2) {
                    let r = w[0]..w[1];
                    let dp: Vec<T> = r
                        .clone()
                        .map(|i| {
                            let lp = if probs[i] > eps { probs[i].ln() + T::one() } else { log_eps };
                            lp - log_target[i]
                        })
                        .collect();
                    let inner = dot(&probs[r.clone()], &dp);
                    for (k, i) in r.enumerate() {
                        g.data[i] += up * probs[i] * (dp[k] - inner);
                    }
                }
            }
            Op::Mse { pred, target } => {
                let pv = self.value(*pred);
                let two = T::from_f64(2.0) * dy.data[0] / T::from_f64(target.len() as f64);
                let g = acc(grads, *pred, pv.rows, pv.cols);
                for i in 0..target.len() {
                    g.data[i] += two * (pv.data[i] - target[i]);
                }
            }
        }
    }
}

fn acc<T: Real>(grads: &mut [Option<Mat<T>>], v: Var, rows: usize, cols: usize) -> &mut Mat<T> {
    grads[v.0].get_or_insert_with(|| Mat::zeros(rows, cols))
}

fn elu<T: Real>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        x.exp() - T::one()
    }
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Tanh-approximated GELU and its derivative.
fn gelu<T: Real>(x: T) -> (T, T) {
    let c = T::from_f64((2.0 / std::f64::consts::PI).sqrt());
    let k = T::from_f64(0.044715);
    let half = T::from_f64(0.5);
    let u = c * (x + k * x * x * x);
    let t = u.tanh();
    let y = half * x * (T::one() + t);
    let du = c * (T::one() + T::from_f64(3.0) * k * x * x);
    (y, half * (T::one() + t) + half * x * (T::one() - t * t) * du)
}

pub(crate) fn softmax_in_place<T: Real>(xs: &mut [T]) {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x = *x / sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat<f64> {
        Mat::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    /// Checks the gradient of `sum(w * f(x))` against central differences.
    fn check(inputs: Vec<Mat<f64>>, f: impl Fn(&mut Tape<f64>, &[Var]) -> Var) {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let build = |inputs: &[Mat<f64>]| {
            let mut t = Tape::new();
            let vars: Vec<Var> = inputs.iter().map(|m| t.leaf(m.clone())).collect();
            let out = f(&mut t, &vars);
            (t, vars, out)
        };
        let (t, vars, out) = build(&inputs);
        let shape = t.value(out).shape();
        let w = rand_mat(&mut rng, shape.0, shape.1);
        let loss = |inputs: &[Mat<f64>]| {
            let (t, _, out) = build(inputs);
            t.value(out).data.iter().zip(&w.data).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut grads = Grads { grads: (0..t.len()).map(|_| None).collect() };
        grads.grads[out.0] = Some(w.clone());
        for idx in (0..t.len()).rev() {
            if !t.nodes[idx].grad {
                continue;
            }
            let Some(dy) = grads.grads[idx].take() else { continue };
            t.backward_op(&t.nodes[idx], &dy, &mut grads.grads);
            grads.grads[idx] = Some(dy);
        }
        let h = 1e-6;
        for (k, v) in vars.iter().enumerate() {
            let analytic = grads.get(*v).cloned().unwrap_or_else(|| Mat::zeros(inputs[k].rows, inputs[k].cols));
            for i in 0..inputs[k].len() {
                let mut plus = inputs.clone();
                plus[k].data[i] += h;
                let mut minus = inputs.clone();
                minus[k].data[i] -= h;
                let num = (loss(&plus) - loss(&minus)) / (2.0 * h);
                assert!(
                    (num - analytic.data[i]).abs() <= 1e-6 * (1.0 + num.abs()),
                    "input {k} elem {i}: analytic {} numeric {num}",
                    analytic.data[i]
                );
            }
        }
    }

    #[test]
    fn elementwise_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_mat(&mut rng, 3, 4);
        check(vec![x.clone()], |t, v| t.elu(v[0]));
        check(vec![x.clone()], |t, v| t.gelu(v[0]));
        check(vec![x.clone()], |t, v| t.sigmoid(v[0]));
        check(vec![x.clone()], |t, v| t.leaky_relu(v[0], 0.2));
        check(vec![x], |t, v| t.scale(v[0], 1.7));
    }

    #[test]
    fn linear_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = rand_mat(&mut rng, 3, 4);
        let b = rand_mat(&mut rng, 4, 2);
        let r = rand_mat(&mut rng, 1, 2);
        check(vec![a.clone(), b.clone()], |t, v| t.matmul(v[0], v[1]));
        check(vec![a.clone(), b, r], |t, v| {
            let m = t.matmul(v[0], v[1]);
            t.add_row(m, v[2])
        });
        check(vec![a.clone(), a.clone()], |t, v| t.add(v[0], v[1]));
        check(vec![a.clone(), rand_mat(&mut rng, 2, 4)], |t, v| {
            let c = t.concat_rows(&[v[0], v[1]]);
            t.slice_rows(c, 1, 3)
        });
        check(vec![a.clone(), rand_mat(&mut rng, 3, 2)], |t, v| t.concat_cols(&[v[0], v[1]]));
    }

    #[test]
    fn indexing_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = rand_mat(&mut rng, 4, 3);
        let idx: Index = Rc::from(vec![2, 0, 2, 3, 1]);
        check(vec![a.clone()], |t, v| t.gather(v[0], idx.clone()));
        let e = rand_mat(&mut rng, 5, 3);
        check(vec![e.clone()], |t, v| t.scatter_add(v[0], idx.clone(), 4));
        let offs: Index = Rc::from(vec![0, 2, 5]);
        check(vec![e], |t, v| t.segment_mean(v[0], offs.clone()));
    }

    #[test]
    fn attention_pieces() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = rand_mat(&mut rng, 5, 6);
        let a = rand_mat(&mut rng, 1, 6);
        let al = rand_mat(&mut rng, 5, 2);
        check(vec![x.clone(), a], |t, v| t.head_dot(v[0], v[1], 2));
        check(vec![x.clone(), al], |t, v| t.head_scale(v[0], v[1], 2));
        check(vec![x.clone()], |t, v| t.head_mean(v[0], 3));
        let seg: Index = Rc::from(vec![1, 0, 1, 1, 0]);
        check(vec![rand_mat(&mut rng, 5, 2)], |t, v| t.segment_softmax(v[0], seg.clone(), 2));
        let offs: Index = Rc::from(vec![0, 3, 5]);
        check(vec![x.clone(), rand_mat(&mut rng, 5, 6), rand_mat(&mut rng, 5, 6)], |t, v| {
            t.attention(v[0], v[1], v[2], 2, offs.clone())
        });
        let g = rand_mat(&mut rng, 1, 6);
        let b = rand_mat(&mut rng, 1, 6);
        check(vec![x, g, b], |t, v| t.layer_norm(v[0], v[1], v[2]));
    }

    #[test]
    fn losses() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let logits = rand_mat(&mut rng, 5, 1);
        let offs: Index = Rc::from(vec![0, 3, 5]);
        let target = [0.5, 0.5, 0.0, 0.25, 0.75];
        check(vec![logits], |t, v| t.kl_loss(v[0], offs.clone(), &target));
        let pred = rand_mat(&mut rng, 3, 1);
        check(vec![pred], |t, v| t.mse_loss(v[0], &[0.1, 0.9, 0.5]));
    }

    #[test]
    fn kl_identity_and_closed_form() {
        let mut t = Tape::<f64>::new();
        let offs: Index = Rc::from(vec![0, 2]);
        let l = t.constant(Mat::from_f64(2, 1, &[0.0, 0.0]));
        let same = t.kl_loss(l, offs.clone(), &[0.5, 0.5]);
        assert!(t.value(same).data[0].abs() < 1e-12);
        let off = t.kl_loss(l, offs, &[1.0, 0.0]);
        // Target (1, 1e-8) renormalized; prediction uniform.
        let z: f64 = 1.0 + PROB_EPS;
        let expect = 0.5 * (0.5f64.ln() - (1.0 / z).ln()) + 0.5 * (0.5f64.ln() - (PROB_EPS / z).ln());
        assert!((t.value(off).data[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn mse_values() {
        let mut t = Tape::<f64>::new();
        let p = t.constant(Mat::from_f64(2, 1, &[0.2, 0.9]));
        let l = t.mse_loss(p, &[0.5, 0.5]);
        assert!((t.value(l).data[0] - 0.125).abs() < 1e-12);
        let z = t.constant(Mat::from_f64(3, 1, &[0.0; 3]));
        let l = t.mse_loss(z, &[1.0; 3]);
        assert_eq!(t.value(l).data[0], 1.0);
    }

    #[test]
    fn detached_values_get_no_gradient() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Mat::from_f64(1, 2, &[1.0, 2.0]));
        let d = t.detach(x);
        let s = t.sigmoid(d);
        let l = t.mse_loss(s, &[0.0, 0.0]);
        let g = t.backward(&[l]);
        assert!(g.get(x).is_none());
        assert!(!t.requires_grad(l));
    }
}
