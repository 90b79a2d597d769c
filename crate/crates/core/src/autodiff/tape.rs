//! Define-by-run tape recording array primitives for reverse-mode
//! differentiation.
//!
//! Every primitive validates shapes, computes its output eagerly, rejects
//! non-finite results and appends one node. Nodes are appended in
//! evaluation order, so the tape is topologically sorted by construction
//! and [`Tape::backward`] is a single reverse sweep.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use super::array::{gemm, Array};
use crate::error::{Result, TmmError};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// Identifier of a trainable parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    LeakyRelu(f64),
    Elu,
    Sigmoid,
}

impl Activation {
    /// Negative slope used inside graph attention logits.
    pub const GAT_LEAKY: Activation = Activation::LeakyRelu(0.2);

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu(slope) => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Activation::Sigmoid => {
                let y = if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                };
                // saturated tails would otherwise round onto 0 or 1
                y.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
            }
        }
    }

    /// Derivative expressed through input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::LeakyRelu(slope) => {
                if x > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

impl FromStr for Activation {
    type Err = TmmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "leaky-relu" | "leaky_relu" | "leaky-relu(0.2)" => Ok(Activation::GAT_LEAKY),
            "elu" => Ok(Activation::Elu),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(TmmError::Config(format!("unknown activation '{other}'"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::LeakyRelu(s) => write!(f, "leaky-relu({s})"),
            Activation::Elu => f.write_str("elu"),
            Activation::Sigmoid => f.write_str("sigmoid"),
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    BatchMatMul { a: Var, b: Var, transpose_b: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias { a: Var, bias: Var },
    ScaleRows { a: Var, s: Var },
    Affine { a: Var, scale: f64 },
    Recip(Var),
    Act { a: Var, kind: Activation },
    Clamp { a: Var, lo: f64, hi: f64 },
    Softmax { a: Var, axis: usize },
    MaskedSoftmax { a: Var },
    OuterAdd { src: Var, dst: Var },
    EdgeSoftmax { src: Var, dst: Var, pattern: Arc<Pattern>, slope: f64 },
    EdgeAggregate { alpha: Var, h: Var, pattern: Arc<Pattern> },
    Scatter { values: Var, pattern: Arc<Pattern> },
    Concat { parts: Vec<Var>, axis: usize },
    Slice { a: Var, axis: usize, start: usize },
    Reshape(Var),
    MeanAxis { a: Var, axis: usize },
    Sum(Var),
    Mean(Var),
    CrossEntropy { logits: Var, labels: Arc<[usize]>, probs: Array },
    PickLabel { probs: Var, labels: Arc<[usize]> },
    PickIndex { probs: Var, index: Vec<usize> },
}

struct Node {
    value: Array,
    op: Op,
    param: Option<ParamId>,
    requires_grad: bool,
}

/// Gradients of a scalar loss, keyed by parameter.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    map: BTreeMap<ParamId, Array>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Array> {
        self.map.get(&id)
    }

    pub fn insert(&mut self, id: ParamId, grad: Array) {
        self.map.insert(id, grad);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamId, &Array)> {
        self.map.iter()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Splits a shape around `axis` into (outer, extent, inner).
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn check_finite(a: &Array, what: &str) -> Result<()> {
    if a.all_finite() {
        Ok(())
    } else {
        Err(TmmError::Numeric(format!("non-finite value produced by {what}")))
    }
}

/// Row-compressed sparsity pattern of a square mask: the kept columns of
/// row `u` are `cols[offsets[u]..offsets[u + 1]]`, in increasing order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pattern {
    offsets: Vec<usize>,
    cols: Vec<usize>,
    rows: Vec<usize>,
}

impl Pattern {
    /// Every row must keep at least one entry.
    pub fn from_mask(mask: &[bool], order: usize) -> Result<Self> {
        if mask.len() != order * order || order == 0 {
            return Err(TmmError::Dimension(format!(
                "mask of {} entries for order {order}",
                mask.len()
            )));
        }
        let mut offsets = Vec::with_capacity(order + 1);
        let (mut cols, mut rows) = (Vec::new(), Vec::new());
        offsets.push(0);
        for u in 0..order {
            for v in 0..order {
                if mask[u * order + v] {
                    cols.push(v);
                    rows.push(u);
                }
            }
            if cols.len() == offsets[u] {
                return Err(TmmError::Numeric(format!("row {u} of the attention mask has no neighbours")));
            }
            offsets.push(cols.len());
        }
        Ok(Self { offsets, cols, rows })
    }

    pub fn order(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    /// Entry range of row `u`.
    pub fn span(&self, u: usize) -> std::ops::Range<usize> {
        self.offsets[u]..self.offsets[u + 1]
    }

    pub fn cols(&self) -> &[usize] {
        &self.cols
    }

    fn row_of(&self, e: usize) -> usize {
        self.rows[e]
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Array, op: Op, what: &str) -> Result<Var> {
        check_finite(&value, what)?;
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                self.rg(*a) || self.rg(*b)
            }
            Op::BatchMatMul { a, b, .. } => self.rg(*a) || self.rg(*b),
            Op::AddBias { a, bias } => self.rg(*a) || self.rg(*bias),
            Op::ScaleRows { a, s } => self.rg(*a) || self.rg(*s),
            Op::OuterAdd { src, dst } | Op::EdgeSoftmax { src, dst, .. } => self.rg(*src) || self.rg(*dst),
            Op::EdgeAggregate { alpha, h, .. } => self.rg(*alpha) || self.rg(*h),
            Op::Scatter { values, .. } => self.rg(*values),
            Op::Concat { parts, .. } => parts.iter().any(|p| self.rg(*p)),
            Op::Affine { a, .. }
            | Op::Recip(a)
            | Op::Act { a, .. }
            | Op::Clamp { a, .. }
            | Op::Softmax { a, .. }
            | Op::MaskedSoftmax { a }
            | Op::Slice { a, .. }
            | Op::Reshape(a)
            | Op::MeanAxis { a, .. }
            | Op::Sum(a)
            | Op::Mean(a) => self.rg(*a),
            Op::CrossEntropy { logits, .. } => self.rg(*logits),
            Op::PickLabel { probs, .. } | Op::PickIndex { probs, .. } => self.rg(*probs),
        };
        self.nodes.push(Node {
            value,
            op,
            param: None,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a value that receives no gradient.
    pub fn constant(&mut self, value: Array) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            param: None,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a trainable leaf; its gradient is reported under `id`.
    pub fn param(&mut self, id: ParamId, value: Array) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            param: Some(id),
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TmmError::Dimension(format!(
                "matmul of {sa:?} and {sb:?}"
            )));
        }
        let (p, q, r) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; p * r];
        gemm(
            p,
            q,
            r,
            self.value(a).data(),
            (q as isize, 1),
            self.value(b).data(),
            (r as isize, 1),
            &mut out,
            0.0,
        );
        self.push(Array::new(&[p, r], out)?, Op::MatMul(a, b), "matmul")
    }

    /// Batched product `a[i] · b[i]` (or `a[i] · b[i]ᵀ`) over the leading axis.
    pub fn batch_matmul(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let bad = || TmmError::Dimension(format!("batch_matmul of {sa:?} and {sb:?}"));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(bad());
        }
        let (batch, p, q) = (sa[0], sa[1], sa[2]);
        let (kb, r) = if transpose_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if kb != q {
            return Err(bad());
        }
        let b_strides = if transpose_b {
            (1, q as isize)
        } else {
            (r as isize, 1)
        };
        let mut out = vec![0.0; batch * p * r];
        {
            let (av, bv) = (self.value(a).data(), self.value(b).data());
            for i in 0..batch {
                gemm(
                    p,
                    q,
                    r,
                    &av[i * p * q..],
                    (q as isize, 1),
                    &bv[i * q * r..],
                    b_strides,
                    &mut out[i * p * r..(i + 1) * p * r],
                    0.0,
                );
            }
        }
        self.push(
            Array::new(&[batch, p, r], out)?,
            Op::BatchMatMul { a, b, transpose_b },
            "batch_matmul",
        )
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(TmmError::Dimension(format!(
                "{what} of {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, what: &str, f: fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Array::new(va.shape(), data)?;
        self.push(out, op, what)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    /// Adds `bias` (length = last extent of `a`) to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let f = self.value(a).cols();
        if self.value(bias).len() != f {
            return Err(TmmError::Dimension(format!(
                "bias {:?} for input {:?}",
                self.shape(bias),
                self.shape(a)
            )));
        }
        let bv = self.value(bias).data().to_vec();
        let mut out = self.value(a).clone();
        for row in out.data_mut().chunks_mut(f) {
            for (x, b) in row.iter_mut().zip(&bv) {
                *x += b;
            }
        }
        self.push(out, Op::AddBias { a, bias }, "add_bias")
    }

    /// Multiplies slice `i` along the leading axis of `a` by `s[i]`.
    pub fn scale_rows(&mut self, a: Var, s: Var) -> Result<Var> {
        let n = self.shape(a)[0];
        if self.value(s).len() != n {
            return Err(TmmError::Dimension(format!(
                "row scale {:?} for input {:?}",
                self.shape(s),
                self.shape(a)
            )));
        }
        let width = self.value(a).len() / n;
        let sv = self.value(s).data().to_vec();
        let mut out = self.value(a).clone();
        for (row, &k) in out.data_mut().chunks_mut(width).zip(&sv) {
            row.iter_mut().for_each(|x| *x *= k);
        }
        self.push(out, Op::ScaleRows { a, s }, "scale_rows")
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Result<Var> {
        let out = self.value(a).map(|x| scale * x + shift);
        self.push(out, Op::Affine { a, scale }, "affine")
    }

    pub fn recip(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| 1.0 / x);
        self.push(out, Op::Recip(a), "recip")
    }

    pub fn activation(&mut self, a: Var, kind: Activation) -> Result<Var> {
        let out = self.value(a).map(|x| kind.apply(x));
        self.push(out, Op::Act { a, kind }, "activation")
    }

    /// Clamps into `[lo, hi]`; gradient passes only inside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(out, Op::Clamp { a, lo, hi }, "clamp")
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(TmmError::Dimension(format!(
                "softmax axis {axis} for shape {shape:?}"
            )));
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let x = self.value(a).data();
        let mut out = vec![0.0; x.len()];
        for o in 0..outer {
            for j in 0..inner {
                let idx = |i: usize| (o * len + i) * inner + j;
                let m = (0..len).map(|i| x[idx(i)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for i in 0..len {
                    let e = (x[idx(i)] - m).exp();
                    out[idx(i)] = e;
                    z += e;
                }
                for i in 0..len {
                    out[idx(i)] /= z;
                }
            }
        }
        self.push(Array::new(&shape, out)?, Op::Softmax { a, axis }, "softmax")
    }

    /// Softmax over the last axis restricted to entries where `mask` is set.
    ///
    /// `mask` has the shape of the trailing two axes and is broadcast over
    /// any leading axes. Masked entries are exactly zero.
    pub fn masked_softmax(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let len = *shape.last().unwrap();
        if shape.len() < 2 || mask.len() != len * shape[shape.len() - 2] {
            return Err(TmmError::Dimension(format!(
                "mask of {} entries for logits {shape:?}",
                mask.len()
            )));
        }
        let x = self.value(a).data();
        let mut out = vec![0.0; x.len()];
        let mask_rows = mask.len() / len;
        for (r, (xr, yr)) in x.chunks(len).zip(out.chunks_mut(len)).enumerate() {
            let mr = &mask[(r % mask_rows) * len..(r % mask_rows + 1) * len];
            let mut m = f64::NEG_INFINITY;
            for (&v, &keep) in xr.iter().zip(mr) {
                if keep && v > m {
                    m = v;
                }
            }
            if m == f64::NEG_INFINITY {
                return Err(TmmError::Numeric(format!(
                    "row {} of the attention mask has no neighbours",
                    r % mask_rows
                )));
            }
            let mut z = 0.0;
            for ((&v, &keep), y) in xr.iter().zip(mr).zip(yr.iter_mut()) {
                if keep {
                    *y = (v - m).exp();
                    z += *y;
                }
            }
            yr.iter_mut().for_each(|y| *y /= z);
        }
        self.push(Array::new(&shape, out)?, Op::MaskedSoftmax { a }, "masked_softmax")
    }

    /// `out[b, u, v] = src[b, u] + dst[b, v]` for `src`, `dst` of shape `[B, d]`.
    pub fn outer_add(&mut self, src: Var, dst: Var) -> Result<Var> {
        let (ss, sd) = (self.shape(src), self.shape(dst));
        if ss.len() != 2 || ss != sd {
            return Err(TmmError::Dimension(format!("outer_add of {ss:?} and {sd:?}")));
        }
        let (batch, d) = (ss[0], ss[1]);
        let (s, t) = (self.value(src).data(), self.value(dst).data());
        let mut out = vec![0.0; batch * d * d];
        for b in 0..batch {
            for u in 0..d {
                let su = s[b * d + u];
                let row = &mut out[(b * d + u) * d..(b * d + u + 1) * d];
                for (o, &tv) in row.iter_mut().zip(&t[b * d..(b + 1) * d]) {
                    *o = su + tv;
                }
            }
        }
        self.push(Array::new(&[batch, d, d], out)?, Op::OuterAdd { src, dst }, "outer_add")
    }

    /// Attention over the kept entries of a pattern: for each row `u`, the
    /// softmax over `v ∈ pattern.row(u)` of `leaky_relu(src[b,u] + dst[b,v])`.
    /// `src`, `dst` are `[B, d]`; the result is `[B, nnz]` in pattern order.
    pub fn edge_softmax(&mut self, src: Var, dst: Var, pattern: &Arc<Pattern>, slope: f64) -> Result<Var> {
        let (ss, sd) = (self.shape(src), self.shape(dst));
        if ss.len() != 2 || ss != sd || ss[1] != pattern.order() {
            return Err(TmmError::Dimension(format!(
                "edge_softmax of {ss:?} and {sd:?} on a pattern of order {}",
                pattern.order()
            )));
        }
        let (batch, d, nnz) = (ss[0], ss[1], pattern.nnz());
        let (s, t) = (self.value(src).data(), self.value(dst).data());
        let mut out = vec![0.0; batch * nnz];
        for b in 0..batch {
            let tb = &t[b * d..(b + 1) * d];
            let ob = &mut out[b * nnz..(b + 1) * nnz];
            for u in 0..d {
                let su = s[b * d + u];
                let span = pattern.span(u);
                let row = &mut ob[span.clone()];
                let mut m = f64::NEG_INFINITY;
                for (o, &v) in row.iter_mut().zip(&pattern.cols[span]) {
                    let z = su + tb[v];
                    *o = if z > 0.0 { z } else { slope * z };
                    m = m.max(*o);
                }
                let mut total = 0.0;
                for o in row.iter_mut() {
                    *o = (*o - m).exp();
                    total += *o;
                }
                row.iter_mut().for_each(|o| *o /= total);
            }
        }
        let op = Op::EdgeSoftmax {
            src,
            dst,
            pattern: Arc::clone(pattern),
            slope,
        };
        self.push(Array::new(&[batch, nnz], out)?, op, "edge_softmax")
    }

    /// `out[b, u, :] = Σ_e alpha[b, e] · h[b, col(e), :]` over the entries
    /// `e` of row `u`; `alpha` is `[B, nnz]` and `h` is `[B, d, f]`.
    pub fn edge_aggregate(&mut self, alpha: Var, h: Var, pattern: &Arc<Pattern>) -> Result<Var> {
        let (sa, sh) = (self.shape(alpha), self.shape(h));
        if sa.len() != 2 || sh.len() != 3 || sa[0] != sh[0] || sa[1] != pattern.nnz() || sh[1] != pattern.order() {
            return Err(TmmError::Dimension(format!(
                "edge_aggregate of {sa:?} and {sh:?} on a pattern of order {} with {} entries",
                pattern.order(),
                pattern.nnz()
            )));
        }
        let (batch, d, f, nnz) = (sh[0], sh[1], sh[2], pattern.nnz());
        let (a, x) = (self.value(alpha).data(), self.value(h).data());
        let mut out = vec![0.0; batch * d * f];
        for b in 0..batch {
            let (ab, xb) = (&a[b * nnz..(b + 1) * nnz], &x[b * d * f..(b + 1) * d * f]);
            for u in 0..d {
                let dst = &mut out[(b * d + u) * f..(b * d + u + 1) * f];
                for e in pattern.span(u) {
                    let w = ab[e];
                    let v = pattern.cols[e];
                    dst.iter_mut().zip(&xb[v * f..(v + 1) * f]).for_each(|(o, xv)| *o += w * xv);
                }
            }
        }
        let op = Op::EdgeAggregate {
            alpha,
            h,
            pattern: Arc::clone(pattern),
        };
        self.push(Array::new(&[batch, d, f], out)?, op, "edge_aggregate")
    }

    /// Dense `[B, d, d]` form of per-entry values `[B, nnz]`; entries outside
    /// the pattern are zero.
    pub fn scatter_pattern(&mut self, values: Var, pattern: &Arc<Pattern>) -> Result<Var> {
        let sv = self.shape(values);
        if sv.len() != 2 || sv[1] != pattern.nnz() {
            return Err(TmmError::Dimension(format!(
                "scatter of {sv:?} into a pattern with {} entries",
                pattern.nnz()
            )));
        }
        let (batch, d, nnz) = (sv[0], pattern.order(), pattern.nnz());
        let x = self.value(values).data();
        let mut out = vec![0.0; batch * d * d];
        for b in 0..batch {
            for u in 0..d {
                for e in pattern.span(u) {
                    out[(b * d + u) * d + pattern.cols[e]] = x[b * nnz + e];
                }
            }
        }
        let op = Op::Scatter {
            values,
            pattern: Arc::clone(pattern),
        };
        self.push(Array::new(&[batch, d, d], out)?, op, "scatter_pattern")
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| TmmError::Dimension("concat of zero parts".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(TmmError::Dimension(format!(
                "concat axis {axis} for shape {base:?}"
            )));
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(TmmError::Dimension(format!(
                    "concat along axis {axis} of {base:?} and {s:?}"
                )));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let v = self.value(*p);
                let chunk = v.shape()[axis] * inner;
                out.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let out = Array::new(&shape, out)?;
        self.push(
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            "concat",
        )
    }

    /// `len` entries along `axis` starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(TmmError::Dimension(format!(
                "slice [{start}, {}) along axis {axis} of {shape:?}",
                start + len
            )));
        }
        let (outer, ext, inner) = axis_split(&shape, axis);
        let x = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * ext + start) * inner;
            out.extend_from_slice(&x[base..base + len * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = len;
        self.push(Array::new(&new_shape, out)?, Op::Slice { a, axis, start }, "slice")
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshaped(shape)?;
        self.push(out, Op::Reshape(a), "reshape")
    }

    /// Arithmetic mean along `axis`, which is removed from the shape.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || shape.len() < 2 {
            return Err(TmmError::Dimension(format!(
                "mean over axis {axis} of {shape:?}"
            )));
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let x = self.value(a).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..len {
                let src = &x[(o * len + i) * inner..(o * len + i + 1) * inner];
                for (acc, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *acc += v;
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= len as f64);
        let mut new_shape = shape;
        new_shape.remove(axis);
        self.push(Array::new(&new_shape, out)?, Op::MeanAxis { a, axis }, "mean_axis")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).sum();
        self.push(Array::scalar(s), Op::Sum(a), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let m = v.sum() / v.len() as f64;
        self.push(Array::scalar(m), Op::Mean(a), "mean")
    }

    /// Mean over samples of `-log softmax(logits)[label]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(TmmError::Dimension(format!(
                "cross_entropy of logits {shape:?} with {} labels",
                labels.len()
            )));
        }
        let (n, c) = (shape[0], shape[1]);
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(TmmError::Data(format!("label {bad} outside [0, {c})")));
        }
        let x = self.value(logits).data();
        let mut probs = vec![0.0; n * c];
        let mut loss = 0.0;
        for i in 0..n {
            let row = &x[i * c..(i + 1) * c];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
            let log_z = m + z.ln();
            for j in 0..c {
                probs[i * c + j] = (row[j] - log_z).exp();
            }
            loss += log_z - row[labels[i]];
        }
        let probs = Array::new(&shape, probs)?;
        self.push(
            Array::scalar(loss / n as f64),
            Op::CrossEntropy {
                logits,
                labels: labels.into(),
                probs,
            },
            "cross_entropy",
        )
    }

    /// Column `labels[i]` of each row, as an `[n, 1]` array.
    pub fn pick_label(&mut self, probs: Var, labels: &[usize]) -> Result<Var> {
        let (n, c) = self.label_shape(probs, labels)?;
        let p = self.value(probs).data();
        let out = (0..n).map(|i| p[i * c + labels[i]]).collect();
        self.push(
            Array::new(&[n, 1], out)?,
            Op::PickLabel {
                probs,
                labels: labels.into(),
            },
            "pick_label",
        )
    }

    /// Largest entry of each row among columns other than `labels[i]`.
    pub fn max_excluding_label(&mut self, probs: Var, labels: &[usize]) -> Result<Var> {
        let (n, c) = self.label_shape(probs, labels)?;
        if c < 2 {
            return Err(TmmError::Data("need at least two classes".into()));
        }
        let p = self.value(probs).data();
        let mut index = Vec::with_capacity(n);
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let mut best = usize::MAX;
            for j in (0..c).filter(|&j| j != labels[i]) {
                if best == usize::MAX || p[i * c + j] > p[i * c + best] {
                    best = j;
                }
            }
            index.push(best);
            out.push(p[i * c + best]);
        }
        self.push(
            Array::new(&[n, 1], out)?,
            Op::PickIndex { probs, index },
            "max_excluding_label",
        )
    }

    fn label_shape(&self, probs: Var, labels: &[usize]) -> Result<(usize, usize)> {
        let s = self.shape(probs);
        if s.len() != 2 || s[0] != labels.len() {
            return Err(TmmError::Dimension(format!(
                "{} labels for probabilities {s:?}",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= s[1]) {
            return Err(TmmError::Data(format!("label {bad} outside [0, {})", s[1])));
        }
        Ok((s[0], s[1]))
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Every parameter leaf on the tape gets an entry, zero when the loss
    /// does not depend on it. Leaves registered more than once under the
    /// same id are summed.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(TmmError::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Array>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Array::full(self.shape(loss), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if let Op::Leaf = node.op {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(node, &g, &mut grads)?;
        }

        let mut out = Gradients::default();
        for (i, node) in self.nodes.iter().enumerate() {
            let Some(id) = node.param else { continue };
            let g = grads
                .get_mut(i)
                .and_then(Option::take)
                .unwrap_or_else(|| Array::zeros(node.value.shape()));
            check_finite(&g, "backward")?;
            match out.map.get_mut(&id) {
                Some(acc) => acc
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .for_each(|(a, b)| *a += b),
                None => {
                    out.map.insert(id, g);
                }
            }
        }
        Ok(out)
    }

    fn buf<'g>(&self, grads: &'g mut [Option<Array>], v: Var) -> Option<&'g mut [f64]> {
        if !self.rg(v) {
            return None;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(Array::zeros(self.shape(v)));
        }
        slot.as_mut().map(Array::data_mut)
    }

    fn accumulate(&self, grads: &mut [Option<Array>], v: Var, f: impl Fn(usize) -> f64) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.data_mut().iter_mut().enumerate().for_each(|(i, x)| *x += f(i)),
            slot @ None => {
                let shape = self.shape(v);
                let n = shape.iter().product::<usize>();
                let data = (0..n).map(f).collect();
                *slot = Some(Array::new(shape, data).expect("gradient matches value shape"));
            }
        }
    }

    fn propagate(&self, node: &Node, g: &Array, grads: &mut [Option<Array>]) -> Result<()> {
        let gd = g.data();
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (p, q) = (self.shape(*a)[0], self.shape(*a)[1]);
                let r = self.shape(*b)[1];
                let bv = self.value(*b).data();
                if let Some(ga) = self.buf(grads, *a) {
                    // dA = dC · Bᵀ
                    gemm(p, r, q, gd, (r as isize, 1), bv, (1, r as isize), ga, 1.0);
                }
                let av = self.value(*a).data();
                if let Some(gb) = self.buf(grads, *b) {
                    // dB = Aᵀ · dC
                    gemm(q, p, r, av, (1, q as isize), gd, (r as isize, 1), gb, 1.0);
                }
            }
            Op::BatchMatMul { a, b, transpose_b } => {
                let sa = self.shape(*a);
                let (batch, p, q) = (sa[0], sa[1], sa[2]);
                let r = node.value.shape()[2];
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.buf(grads, *a) {
                    for i in 0..batch {
                        let gi = &gd[i * p * r..];
                        let bi = &bv[i * q * r..];
                        let dst = &mut ga[i * p * q..(i + 1) * p * q];
                        if *transpose_b {
                            // C = A Bᵀ, B: r×q  =>  dA = dC · B
                            gemm(p, r, q, gi, (r as isize, 1), bi, (q as isize, 1), dst, 1.0);
                        } else {
                            // B: q×r  =>  dA = dC · Bᵀ
                            gemm(p, r, q, gi, (r as isize, 1), bi, (1, r as isize), dst, 1.0);
                        }
                    }
                }
                if let Some(gb) = self.buf(grads, *b) {
                    for i in 0..batch {
                        let gi = &gd[i * p * r..];
                        let ai = &av[i * p * q..];
                        let dst = &mut gb[i * q * r..(i + 1) * q * r];
                        if *transpose_b {
                            // dB = dCᵀ · A  (r×p · p×q)
                            gemm(r, p, q, gi, (1, r as isize), ai, (q as isize, 1), dst, 1.0);
                        } else {
                            // dB = Aᵀ · dC  (q×p · p×r)
                            gemm(q, p, r, ai, (1, q as isize), gi, (r as isize, 1), dst, 1.0);
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |i| gd[i]);
                self.accumulate(grads, *b, |i| gd[i]);
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |i| gd[i]);
                self.accumulate(grads, *b, |i| -gd[i]);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |i| gd[i] * bv[i]);
                self.accumulate(grads, *b, |i| gd[i] * av[i]);
            }
            Op::AddBias { a, bias } => {
                self.accumulate(grads, *a, |i| gd[i]);
                if let Some(gb) = self.buf(grads, *bias) {
                    let f = gb.len();
                    for row in gd.chunks(f) {
                        gb.iter_mut().zip(row).for_each(|(x, v)| *x += v);
                    }
                }
            }
            Op::ScaleRows { a, s } => {
                let n = self.shape(*s).iter().product::<usize>();
                let width = gd.len() / n;
                let sv = self.value(*s).data();
                self.accumulate(grads, *a, |i| gd[i] * sv[i / width]);
                let av = self.value(*a).data();
                if let Some(gs) = self.buf(grads, *s) {
                    for (r, x) in gs.iter_mut().enumerate() {
                        let span = r * width..(r + 1) * width;
                        *x += gd[span.clone()]
                            .iter()
                            .zip(&av[span])
                            .map(|(g, v)| g * v)
                            .sum::<f64>();
                    }
                }
            }
            Op::Affine { a, scale } => self.accumulate(grads, *a, |i| gd[i] * scale),
            Op::Recip(a) => self.accumulate(grads, *a, |i| -gd[i] * y[i] * y[i]),
            Op::Act { a, kind } => {
                let x = self.value(*a).data();
                self.accumulate(grads, *a, |i| gd[i] * kind.derivative(x[i], y[i]));
            }
            Op::Clamp { a, lo, hi } => {
                let x = self.value(*a).data();
                self.accumulate(grads, *a, |i| {
                    if x[i] >= *lo && x[i] <= *hi {
                        gd[i]
                    } else {
                        0.0
                    }
                });
            }
            Op::Softmax { a, axis } => {
                if let Some(ga) = self.buf(grads, *a) {
                    let (outer, len, inner) = axis_split(node.value.shape(), *axis);
                    for o in 0..outer {
                        for j in 0..inner {
                            let idx = |i: usize| (o * len + i) * inner + j;
                            let dot: f64 = (0..len).map(|i| gd[idx(i)] * y[idx(i)]).sum();
                            for i in 0..len {
                                ga[idx(i)] += y[idx(i)] * (gd[idx(i)] - dot);
                            }
                        }
                    }
                }
            }
            Op::MaskedSoftmax { a } => {
                if let Some(ga) = self.buf(grads, *a) {
                    let len = node.value.cols();
                    for ((yr, gr), dst) in y.chunks(len).zip(gd.chunks(len)).zip(ga.chunks_mut(len)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for ((d, &p), &q) in dst.iter_mut().zip(yr).zip(gr) {
                            *d += p * (q - dot);
                        }
                    }
                }
            }
            Op::OuterAdd { src, dst } => {
                let s = self.shape(*src);
                let (batch, d) = (s[0], s[1]);
                if let Some(gs) = self.buf(grads, *src) {
                    for b in 0..batch {
                        for u in 0..d {
                            gs[b * d + u] += gd[(b * d + u) * d..(b * d + u + 1) * d].iter().sum::<f64>();
                        }
                    }
                }
                if let Some(gt) = self.buf(grads, *dst) {
                    for b in 0..batch {
                        for u in 0..d {
                            let row = &gd[(b * d + u) * d..(b * d + u + 1) * d];
                            gt[b * d..(b + 1) * d].iter_mut().zip(row).for_each(|(x, v)| *x += v);
                        }
                    }
                }
            }
            Op::EdgeSoftmax { src, dst, pattern, slope } => {
                let (batch, d) = (self.shape(*src)[0], self.shape(*src)[1]);
                let nnz = pattern.nnz();
                let (s, t) = (self.value(*src).data(), self.value(*dst).data());
                let mut gs = vec![0.0; batch * d];
                let mut gt = vec![0.0; batch * d];
                for b in 0..batch {
                    for u in 0..d {
                        let span = pattern.span(u);
                        let at = b * nnz;
                        let (yr, gr) = (&y[at + span.start..at + span.end], &gd[at + span.start..at + span.end]);
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        let su = s[b * d + u];
                        let mut row_sum = 0.0;
                        for ((&p, &q), &v) in yr.iter().zip(gr).zip(&pattern.cols[span]) {
                            let z = su + t[b * d + v];
                            let dz = p * (q - dot) * if z > 0.0 { 1.0 } else { *slope };
                            row_sum += dz;
                            gt[b * d + v] += dz;
                        }
                        gs[b * d + u] += row_sum;
                    }
                }
                self.accumulate(grads, *src, |i| gs[i]);
                self.accumulate(grads, *dst, |i| gt[i]);
            }
            Op::EdgeAggregate { alpha, h, pattern } => {
                let sh = self.shape(*h);
                let (batch, d, f, nnz) = (sh[0], sh[1], sh[2], pattern.nnz());
                let (a, x) = (self.value(*alpha).data(), self.value(*h).data());
                if let Some(ga) = self.buf(grads, *alpha) {
                    for b in 0..batch {
                        for u in 0..d {
                            let gu = &gd[(b * d + u) * f..(b * d + u + 1) * f];
                            for e in pattern.span(u) {
                                let v = pattern.cols[e];
                                let xv = &x[(b * d + v) * f..(b * d + v + 1) * f];
                                ga[b * nnz + e] += gu.iter().zip(xv).map(|(p, q)| p * q).sum::<f64>();
                            }
                        }
                    }
                }
                if let Some(gh) = self.buf(grads, *h) {
                    for b in 0..batch {
                        for u in 0..d {
                            let gu = &gd[(b * d + u) * f..(b * d + u + 1) * f];
                            for e in pattern.span(u) {
                                let w = a[b * nnz + e];
                                let v = pattern.cols[e];
                                gh[(b * d + v) * f..(b * d + v + 1) * f]
                                    .iter_mut()
                                    .zip(gu)
                                    .for_each(|(o, g)| *o += w * g);
                            }
                        }
                    }
                }
            }
            Op::Scatter { values, pattern } => {
                let (d, nnz) = (pattern.order(), pattern.nnz());
                self.accumulate(grads, *values, |i| {
                    let (b, e) = (i / nnz, i % nnz);
                    gd[(b * d + pattern.row_of(e)) * d + pattern.cols[e]]
                });
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = axis_split(node.value.shape(), *axis);
                let mut offset = 0;
                for p in parts {
                    let ext = self.shape(*p)[*axis];
                    if let Some(gp) = self.buf(grads, *p) {
                        let chunk = ext * inner;
                        for o in 0..outer {
                            let src = &gd[(o * total + offset) * inner..][..chunk];
                            gp[o * chunk..(o + 1) * chunk]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(x, v)| *x += v);
                        }
                    }
                    offset += ext;
                }
            }
            Op::Slice { a, axis, start } => {
                if let Some(ga) = self.buf(grads, *a) {
                    let (outer, ext, inner) = axis_split(self.shape(*a), *axis);
                    let len = node.value.shape()[*axis];
                    for o in 0..outer {
                        let dst = &mut ga[(o * ext + start) * inner..][..len * inner];
                        let src = &gd[o * len * inner..(o + 1) * len * inner];
                        dst.iter_mut().zip(src).for_each(|(x, v)| *x += v);
                    }
                }
            }
            Op::Reshape(a) => self.accumulate(grads, *a, |i| gd[i]),
            Op::MeanAxis { a, axis } => {
                let (outer, len, inner) = axis_split(self.shape(*a), *axis);
                let scale = 1.0 / len as f64;
                self.accumulate(grads, *a, |i| {
                    let o = i / (len * inner);
                    let j = i % inner;
                    gd[o * inner + j] * scale
                });
                let _ = outer;
            }
            Op::Sum(a) => self.accumulate(grads, *a, |_| gd[0]),
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                self.accumulate(grads, *a, |_| gd[0] / n);
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let c = probs.cols();
                let n = labels.len() as f64;
                let p = probs.data();
                self.accumulate(grads, *logits, |i| {
                    let target = if labels[i / c] == i % c { 1.0 } else { 0.0 };
                    gd[0] * (p[i] - target) / n
                });
            }
            Op::PickLabel { probs, labels } => {
                let c = self.shape(*probs)[1];
                if let Some(gp) = self.buf(grads, *probs) {
                    for (i, &y) in labels.iter().enumerate() {
                        gp[i * c + y] += gd[i];
                    }
                }
            }
            Op::PickIndex { probs, index } => {
                let c = self.shape(*probs)[1];
                if let Some(gp) = self.buf(grads, *probs) {
                    for (i, &j) in index.iter().enumerate() {
                        gp[i * c + j] += gd[i];
                    }
                }
            }
        }
        Ok(())
    }
}
