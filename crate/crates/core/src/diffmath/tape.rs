//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every primitive appends one node holding its forward value. [`Tape::backward`]
//! consumes the tape and replays adjoints in exact reverse recording order.
//! Shape errors are programming errors and panic; non-finite values poison the
//! tape and surface as [`Error::NonFinite`] from [`Tape::backward`] or
//! [`Tape::finish`].

use std::sync::Arc;

use super::{ParamSet, Real, Tensor};
use crate::error::{Error, Result};

/// Layer-normalization epsilon.
pub const LN_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Shared integer index array (segment ids, gather indices).
pub type Index = Arc<[usize]>;

enum Op<T: Real> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    AddScalarVar(Var, Var),
    Scale(Var, T),
    AddConst(Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    SoftmaxLast(Var),
    SumAll(Var),
    MeanAll(Var),
    SumLast(Var),
    MaxLast(Var, Vec<usize>),
    LayerNorm {
        x: Var,
        scale: Var,
        bias: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Gather(Var, Index),
    SegmentSum(Var, Index),
    SegmentSoftmax(Var, Index),
    ConcatCols(Vec<Var>),
    Reshape(Var),
    Clamp(Var, T, T),
    Maximum(Var, Var),
    Minimum(Var, Var),
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Ordered record of primitive operations.
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
    params: Vec<(String, Var)>,
    poison: Option<&'static str>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Variables registered for every entry of a [`ParamSet`].
#[derive(Clone, Debug, Default)]
pub struct ParamVars {
    vars: std::collections::BTreeMap<String, Var>,
}

impl ParamVars {
    /// Looks up a registered parameter, panicking on unknown names (a wiring bug).
    pub fn get(&self, name: &str) -> Var {
        match self.vars.get(name) {
            Some(v) => *v,
            None => panic!("parameter `{name}` not registered on tape"),
        }
    }

    pub fn try_get(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::with_capacity(256),
            params: Vec::new(),
            poison: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool, name: &'static str) -> Var {
        if self.poison.is_none() && !value.is_finite() {
            self.poison = Some(name);
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Returns the first non-finite failure recorded so far.
    pub fn check(&self) -> Result<()> {
        match self.poison {
            Some(op) => Err(Error::NonFinite { op }),
            None => Ok(()),
        }
    }

    /// Extracts a forward value after verifying that no primitive produced NaN/Inf.
    pub fn finish(&self, v: Var) -> Result<Tensor<T>> {
        self.check()?;
        Ok(self.value(v).clone())
    }

    /// Input that does not receive gradients.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false, "constant")
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true, "leaf")
    }

    /// Differentiable input bound to a parameter name.
    pub fn param(&mut self, name: &str, value: &Tensor<T>) -> Var {
        let v = self.leaf(value.clone());
        self.params.push((name.to_string(), v));
        v
    }

    /// Registers every entry of `params` as a named differentiable leaf.
    pub fn params(&mut self, params: &ParamSet<T>) -> ParamVars {
        let mut vars = std::collections::BTreeMap::new();
        for (name, t) in params.iter() {
            let v = self.param(name, t);
            vars.insert(name.to_string(), v);
        }
        ParamVars { vars }
    }

    /// Registers `params` as constants (forward-only evaluation).
    pub fn frozen_params(&mut self, params: &ParamSet<T>) -> ParamVars {
        let mut vars = std::collections::BTreeMap::new();
        for (name, t) in params.iter() {
            let v = self.constant(t.clone());
            vars.insert(name.to_string(), v);
        }
        ParamVars { vars }
    }

    /// Identity in the forward pass; contributes no gradient to anything upstream.
    pub fn stop_gradient(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.push(value, Op::Leaf, false, "stop_gradient")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert!(
            sa.len() == 2 && sb.len() == 2 && sa[1] == sb[0],
            "matmul shapes {sa:?} x {sb:?}"
        );
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            T::zero(),
            &mut out,
        );
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), rg, "matmul")
    }

    fn zip(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "{name}: shape mismatch");
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_parts(ta.shape().to_vec(), data)
    }

    fn map(&self, a: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let t = self.value(a);
        Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip(a, b, "add", |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Add(a, b), rg, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip(a, b, "sub", |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Sub(a, b), rg, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip(a, b, "mul", |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Mul(a, b), rg, "mul")
    }

    pub fn maximum(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip(a, b, "maximum", |x, y| if x >= y { x } else { y });
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Maximum(a, b), rg, "maximum")
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip(a, b, "minimum", |x, y| if x <= y { x } else { y });
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Minimum(a, b), rg, "minimum")
    }

    /// `x[.., d] + b[d]` broadcast over leading axes.
    pub fn add_row(&mut self, x: Var, b: Var) -> Var {
        let (tx, tb) = (self.value(x), self.value(b));
        let d = tx.last_dim();
        assert_eq!(tb.numel(), d, "add_row: bias {:?} vs {:?}", tb.shape(), tx.shape());
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(d) {
            for (o, &bb) in row.iter_mut().zip(tb.data()) {
                *o = *o + bb;
            }
        }
        let out = Tensor::from_parts(tx.shape().to_vec(), data);
        let rg = self.rg(x) || self.rg(b);
        self.push(out, Op::AddRow(x, b), rg, "add_row")
    }

    /// `x[.., d] * s[d]` broadcast over leading axes.
    pub fn mul_row(&mut self, x: Var, s: Var) -> Var {
        let (tx, ts) = (self.value(x), self.value(s));
        let d = tx.last_dim();
        assert_eq!(ts.numel(), d, "mul_row: scale {:?} vs {:?}", ts.shape(), tx.shape());
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(d) {
            for (o, &ss) in row.iter_mut().zip(ts.data()) {
                *o = *o * ss;
            }
        }
        let out = Tensor::from_parts(tx.shape().to_vec(), data);
        let rg = self.rg(x) || self.rg(s);
        self.push(out, Op::MulRow(x, s), rg, "mul_row")
    }

    /// Scales row `i` of `x[r, d]` by `s[i]`.
    pub fn mul_col(&mut self, x: Var, s: Var) -> Var {
        let (tx, ts) = (self.value(x), self.value(s));
        let d = tx.last_dim();
        assert_eq!(ts.numel(), tx.outer(), "mul_col: {:?} vs {:?}", ts.shape(), tx.shape());
        let mut data = tx.data().to_vec();
        for (row, &ss) in data.chunks_mut(d.max(1)).zip(ts.data()) {
            for o in row.iter_mut() {
                *o = *o * ss;
            }
        }
        let out = Tensor::from_parts(tx.shape().to_vec(), data);
        let rg = self.rg(x) || self.rg(s);
        self.push(out, Op::MulCol(x, s), rg, "mul_col")
    }

    /// Adds a single-element variable to every entry of `x`.
    pub fn add_scalar_var(&mut self, x: Var, s: Var) -> Var {
        assert!(self.value(s).is_scalar(), "add_scalar_var: non-scalar");
        let c = self.value(s).item();
        let out = self.map(x, |v| v + c);
        let rg = self.rg(x) || self.rg(s);
        self.push(out, Op::AddScalarVar(x, s), rg, "add_scalar_var")
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let c = T::from_f64(c);
        let out = self.map(x, |v| v * c);
        let rg = self.rg(x);
        self.push(out, Op::Scale(x, c), rg, "scale")
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Var {
        let c = T::from_f64(c);
        let out = self.map(x, |v| v + c);
        let rg = self.rg(x);
        self.push(out, Op::AddConst(x), rg, "add_const")
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.mul(x, x)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.map(x, |v| if v > T::zero() { v } else { T::zero() });
        let rg = self.rg(x);
        self.push(out, Op::Relu(x), rg, "relu")
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.map(x, |v| v.tanh());
        let rg = self.rg(x);
        self.push(out, Op::Tanh(x), rg, "tanh")
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.map(x, |v| v.exp());
        let rg = self.rg(x);
        self.push(out, Op::Exp(x), rg, "exp")
    }

    pub fn log(&mut self, x: Var) -> Var {
        let out = self.map(x, |v| v.ln());
        let rg = self.rg(x);
        self.push(out, Op::Log(x), rg, "log")
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let (lo, hi) = (T::from_f64(lo), T::from_f64(hi));
        let out = self.map(x, |v| v.max(lo).min(hi));
        let rg = self.rg(x);
        self.push(out, Op::Clamp(x, lo, hi), rg, "clamp")
    }

    pub fn softmax_last(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let d = t.last_dim();
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(d.max(1)) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s = s + *v;
            }
            for v in row.iter_mut() {
                *v = *v / s;
            }
        }
        let out = Tensor::from_parts(t.shape().to_vec(), data);
        let rg = self.rg(x);
        self.push(out, Op::SoftmaxLast(x), rg, "softmax")
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<T>();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::SumAll(x), rg, "sum")
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let t = self.value(x);
        assert!(t.numel() > 0, "mean of empty tensor");
        let s = t.data().iter().copied().sum::<T>() / T::from_f64(t.numel() as f64);
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::MeanAll(x), rg, "mean")
    }

    /// Reduces the last axis by summation.
    pub fn sum_last(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let d = t.last_dim();
        let data: Vec<T> = t.data().chunks(d.max(1)).map(|r| r.iter().copied().sum()).collect();
        let mut shape = t.shape().to_vec();
        shape.pop();
        let rg = self.rg(x);
        self.push(Tensor::from_parts(shape, data), Op::SumLast(x), rg, "sum_last")
    }

    /// Reduces the last axis by max; ties route the gradient to the lowest index.
    pub fn max_last(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let d = t.last_dim();
        assert!(d > 0, "max over empty axis");
        let mut arg = Vec::with_capacity(t.outer());
        let mut data = Vec::with_capacity(t.outer());
        for row in t.data().chunks(d) {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            arg.push(best);
            data.push(row[best]);
        }
        let mut shape = t.shape().to_vec();
        shape.pop();
        let rg = self.rg(x);
        self.push(Tensor::from_parts(shape, data), Op::MaxLast(x, arg), rg, "max_last")
    }

    /// Normalizes over the last axis, then applies `scale[d]` and `bias[d]`.
    pub fn layer_norm(&mut self, x: Var, scale: Var, bias: Var) -> Var {
        let t = self.value(x);
        let d = t.last_dim();
        assert_eq!(self.value(scale).numel(), d, "layer_norm scale");
        assert_eq!(self.value(bias).numel(), d, "layer_norm bias");
        let (sc, bi) = (self.value(scale).data(), self.value(bias).data());
        let eps = T::from_f64(LN_EPS);
        let dn = T::from_f64(d as f64);
        let mut xhat = Vec::with_capacity(t.numel());
        let mut inv_std = Vec::with_capacity(t.outer());
        let mut out = Vec::with_capacity(t.numel());
        for row in t.data().chunks(d) {
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let inv = T::one() / (var + eps).sqrt();
            inv_std.push(inv);
            for (j, &v) in row.iter().enumerate() {
                let xh = (v - mean) * inv;
                xhat.push(xh);
                out.push(xh * sc[j] + bi[j]);
            }
        }
        let out = Tensor::from_parts(t.shape().to_vec(), out);
        let rg = self.rg(x) || self.rg(scale) || self.rg(bias);
        self.push(
            out,
            Op::LayerNorm {
                x,
                scale,
                bias,
                xhat,
                inv_std,
            },
            rg,
            "layer_norm",
        )
    }

    /// Selects rows `idx` of `x[n, d]`.
    pub fn gather_rows(&mut self, x: Var, idx: &Index) -> Var {
        let t = self.value(x);
        assert_eq!(t.shape().len(), 2, "gather_rows expects a matrix");
        let (n, d) = (t.shape()[0], t.shape()[1]);
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx.iter() {
            assert!(i < n, "gather index {i} out of range {n}");
            data.extend_from_slice(t.row(i));
        }
        let rg = self.rg(x);
        self.push(
            Tensor::from_parts(vec![idx.len(), d], data),
            Op::Gather(x, idx.clone()),
            rg,
            "gather_rows",
        )
    }

    /// Sums rows of `x[n, d]` into `segments` buckets given by `seg[n]`.
    pub fn segment_sum(&mut self, x: Var, seg: &Index, segments: usize) -> Var {
        let t = self.value(x);
        assert_eq!(t.shape().len(), 2, "segment_sum expects a matrix");
        let (n, d) = (t.shape()[0], t.shape()[1]);
        assert_eq!(seg.len(), n, "segment_sum: ids length");
        let mut data = vec![T::zero(); segments * d];
        for (i, &s) in seg.iter().enumerate() {
            assert!(s < segments, "segment id {s} out of range {segments}");
            let dst = &mut data[s * d..(s + 1) * d];
            for (o, &v) in dst.iter_mut().zip(t.row(i)) {
                *o = *o + v;
            }
        }
        let rg = self.rg(x);
        self.push(
            Tensor::from_parts(vec![segments, d], data),
            Op::SegmentSum(x, seg.clone()),
            rg,
            "segment_sum",
        )
    }

    /// Column-wise softmax over the rows sharing a segment id.
    pub fn segment_softmax(&mut self, x: Var, seg: &Index, segments: usize) -> Var {
        let t = self.value(x);
        assert_eq!(t.shape().len(), 2, "segment_softmax expects a matrix");
        let (n, c) = (t.shape()[0], t.shape()[1]);
        assert_eq!(seg.len(), n, "segment_softmax: ids length");
        let mut maxv = vec![T::neg_infinity(); segments * c];
        for (i, &s) in seg.iter().enumerate() {
            for (j, &v) in t.row(i).iter().enumerate() {
                let m = &mut maxv[s * c + j];
                *m = m.max(v);
            }
        }
        let mut data = vec![T::zero(); n * c];
        let mut sums = vec![T::zero(); segments * c];
        for (i, &s) in seg.iter().enumerate() {
            for (j, &v) in t.row(i).iter().enumerate() {
                let e = (v - maxv[s * c + j]).exp();
                data[i * c + j] = e;
                sums[s * c + j] = sums[s * c + j] + e;
            }
        }
        for (i, &s) in seg.iter().enumerate() {
            for j in 0..c {
                data[i * c + j] = data[i * c + j] / sums[s * c + j];
            }
        }
        let rg = self.rg(x);
        self.push(
            Tensor::from_parts(vec![n, c], data),
            Op::SegmentSoftmax(x, seg.clone()),
            rg,
            "segment_softmax",
        )
    }

    /// Concatenates matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = self.shape(parts[0])[0];
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let s = self.shape(p);
                assert!(s.len() == 2 && s[0] == rows, "concat_cols shapes");
                s[1]
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(
            Tensor::from_parts(vec![rows, total], data),
            Op::ConcatCols(parts.to_vec()),
            rg,
            "concat_cols",
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let t = self.value(x);
        assert_eq!(
            shape.iter().product::<usize>(),
            t.numel(),
            "reshape {:?} -> {shape:?}",
            t.shape()
        );
        let out = Tensor::from_parts(shape.to_vec(), t.data().to_vec());
        let rg = self.rg(x);
        self.push(out, Op::Reshape(x), rg, "reshape")
    }

    /// Hash of every piecewise-linear branch taken so far (ReLU signs, max
    /// arguments, clamp regions, elementwise max/min picks). Two evaluations
    /// with equal signatures lie on the same smooth piece.
    pub fn branch_signature(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        let val = |v: &Var| self.nodes[v.0].value.data();
        for (i, node) in self.nodes.iter().enumerate() {
            match &node.op {
                Op::Relu(x) => {
                    i.hash(&mut h);
                    for &v in val(x) {
                        (v > T::zero()).hash(&mut h);
                    }
                }
                Op::MaxLast(_, arg) => {
                    i.hash(&mut h);
                    arg.hash(&mut h);
                }
                Op::Clamp(x, lo, hi) => {
                    i.hash(&mut h);
                    for &v in val(x) {
                        ((v >= *lo) as u8 + (v <= *hi) as u8 * 2).hash(&mut h);
                    }
                }
                Op::Maximum(a, b) | Op::Minimum(a, b) => {
                    i.hash(&mut h);
                    for (&x, &y) in val(a).iter().zip(val(b)) {
                        x.partial_cmp(&y).hash(&mut h);
                    }
                }
                _ => {}
            }
        }
        h.finish()
    }

    /// Replays adjoints from the scalar `loss`. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients<T>> {
        self.check()?;
        let shape = self.shape(loss).to_vec();
        if self.value(loss).numel() != 1 {
            return Err(Error::NonScalarLoss(shape));
        }
        let nodes = self.nodes;
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let node = &nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            backprop_node(&nodes, idx, &g, &mut grads);
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { op: "backward" });
            }
            grads[idx] = Some(g);
        }

        let grads = grads
            .into_iter()
            .zip(nodes.iter())
            .map(|(g, n)| match (&n.op, g) {
                (Op::Leaf, Some(g)) if n.requires_grad => {
                    Some(Tensor::from_parts(n.value.shape().to_vec(), g))
                }
                _ => None,
            })
            .collect();
        Ok(Gradients {
            grads,
            params: self.params,
        })
    }
}

fn acc<'a, T: Real>(
    grads: &'a mut [Option<Vec<T>>],
    nodes: &[Node<T>],
    v: Var,
) -> Option<&'a mut Vec<T>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let n = nodes[v.0].value.numel();
    Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); n]))
}

fn backprop_node<T: Real>(nodes: &[Node<T>], idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
    let node = &nodes[idx];
    let val = |v: Var| nodes[v.0].value.data();
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (sa, sb) = (nodes[a.0].value.shape(), nodes[b.0].value.shape());
            let (m, k, n) = (sa[0], sa[1], sb[1]);
            if let Some(ga) = acc(grads, nodes, *a) {
                T::gemm(m, n, k, g, false, val(*b), true, T::one(), ga);
            }
            if let Some(gb) = acc(grads, nodes, *b) {
                T::gemm(k, m, n, val(*a), true, g, false, T::one(), gb);
            }
        }
        Op::Add(a, b) => {
            for v in [*a, *b] {
                if let Some(gv) = acc(grads, nodes, v) {
                    gv.iter_mut().zip(g).for_each(|(o, &x)| *o = *o + x);
                }
            }
        }
        Op::Sub(a, b) => {
            if let Some(ga) = acc(grads, nodes, *a) {
                ga.iter_mut().zip(g).for_each(|(o, &x)| *o = *o + x);
            }
            if let Some(gb) = acc(grads, nodes, *b) {
                gb.iter_mut().zip(g).for_each(|(o, &x)| *o = *o - x);
            }
        }
        Op::Mul(a, b) => {
            if nodes[a.0].requires_grad {
                let other = val(*b).to_vec();
                let ga = acc(grads, nodes, *a).unwrap();
                for ((o, &x), y) in ga.iter_mut().zip(g).zip(other) {
                    *o = *o + x * y;
                }
            }
            if nodes[b.0].requires_grad {
                let other = val(*a).to_vec();
                let gb = acc(grads, nodes, *b).unwrap();
                for ((o, &x), y) in gb.iter_mut().zip(g).zip(other) {
                    *o = *o + x * y;
                }
            }
        }
        Op::Maximum(a, b) | Op::Minimum(a, b) => {
            let is_max = matches!(node.op, Op::Maximum(..));
            let pick_a: Vec<bool> = val(*a)
                .iter()
                .zip(val(*b))
                .map(|(&x, &y)| if is_max { x >= y } else { x <= y })
                .collect();
            if let Some(ga) = acc(grads, nodes, *a) {
                for ((o, &x), &p) in ga.iter_mut().zip(g).zip(&pick_a) {
                    if p {
                        *o = *o + x;
                    }
                }
            }
            if let Some(gb) = acc(grads, nodes, *b) {
                for ((o, &x), &p) in gb.iter_mut().zip(g).zip(&pick_a) {
                    if !p {
                        *o = *o + x;
                    }
                }
            }
        }
        Op::AddRow(x, b) => {
            if let Some(gx) = acc(grads, nodes, *x) {
                gx.iter_mut().zip(g).for_each(|(o, &v)| *o = *o + v);
            }
            if let Some(gb) = acc(grads, nodes, *b) {
                let d = gb.len();
                for row in g.chunks(d) {
                    gb.iter_mut().zip(row).for_each(|(o, &v)| *o = *o + v);
                }
            }
        }
        Op::MulRow(x, s) => {
            let d = nodes[s.0].value.numel();
            if nodes[x.0].requires_grad {
                let sv = val(*s).to_vec();
                let gx = acc(grads, nodes, *x).unwrap();
                for (orow, grow) in gx.chunks_mut(d).zip(g.chunks(d)) {
                    for j in 0..d {
                        orow[j] = orow[j] + grow[j] * sv[j];
                    }
                }
            }
            if nodes[s.0].requires_grad {
                let xv = val(*x).to_vec();
                let gs = acc(grads, nodes, *s).unwrap();
                for (xrow, grow) in xv.chunks(d).zip(g.chunks(d)) {
                    for j in 0..d {
                        gs[j] = gs[j] + grow[j] * xrow[j];
                    }
                }
            }
        }
        Op::MulCol(x, s) => {
            let d = nodes[x.0].value.last_dim().max(1);
            if nodes[x.0].requires_grad {
                let sv = val(*s).to_vec();
                let gx = acc(grads, nodes, *x).unwrap();
                for ((orow, grow), &ss) in gx.chunks_mut(d).zip(g.chunks(d)).zip(&sv) {
                    for j in 0..d {
                        orow[j] = orow[j] + grow[j] * ss;
                    }
                }
            }
            if nodes[s.0].requires_grad {
                let xv = val(*x).to_vec();
                let gs = acc(grads, nodes, *s).unwrap();
                for ((o, xrow), grow) in gs.iter_mut().zip(xv.chunks(d)).zip(g.chunks(d)) {
                    let dot: T = xrow.iter().zip(grow).map(|(&a, &b)| a * b).sum();
                    *o = *o + dot;
                }
            }
        }
        Op::AddScalarVar(x, s) => {
            if let Some(gx) = acc(grads, nodes, *x) {
                gx.iter_mut().zip(g).for_each(|(o, &v)| *o = *o + v);
            }
            if let Some(gs) = acc(grads, nodes, *s) {
                gs[0] = gs[0] + g.iter().copied().sum::<T>();
            }
        }
        Op::Scale(x, c) => {
            if let Some(gx) = acc(grads, nodes, *x) {
                gx.iter_mut().zip(g).for_each(|(o, &v)| *o = *o + v * *c);
            }
        }
        Op::AddConst(x) | Op::Reshape(x) => {
            if let Some(gx) = acc(grads, nodes, *x) {
                gx.iter_mut().zip(g).for_each(|(o, &v)| *o = *o + v);
            }
        }
        Op::Relu(x) => {
            if nodes[x.0].requires_grad {
                let xv = val(*x).to_vec();
                let gx = acc(grads, nodes, *x).unwrap();
                for ((o, &v), xi) in gx.iter_mut().zip(g).zip(xv) {
                    if xi > T::zero() {
                        *o = *o + v;
                    }
                }
            }
        }
        Op::Tanh(x) => {
            let y = node.value.data();
            if let Some(gx) = acc(grads, nodes, *x) {
                for ((o, &v), &yi) in gx.iter_mut().zip(g).zip(y) {
                    *o = *o + v * (T::one() - yi * yi);
                }
            }
        }
        Op::Exp(x) => {
            let y = node.value.data();
            if let Some(gx) = acc(grads, nodes, *x) {
                for ((o, &v), &yi) in gx.iter_mut().zip(g).zip(y) {
                    *o = *o + v * yi;
                }
            }
        }
        Op::Log(x) => {
            if nodes[x.0].requires_grad {
                let xv = val(*x).to_vec();
                let gx = acc(grads, nodes, *x).unwrap();
                for ((o, &v), xi) in gx.iter_mut().zip(g).zip(xv) {
                    *o = *o + v / xi;
                }
            }
        }
        Op::Clamp(x, lo, hi) => {
            if nodes[x.0].requires_grad {
                let xv = val(*x).to_vec();
                let gx = acc(grads, nodes, *x).unwrap();
                for ((o, &v), xi) in gx.iter_mut().zip(g).zip(xv) {
                    if xi >= *lo && xi <= *hi {
                        *o = *o + v;
                    }
                }
            }
        }
        Op::SoftmaxLast(x) => {
            let y = node.value.data();
            let d = node.value.last_dim().max(1);
            if let Some(gx) = acc(grads, nodes, *x) {
                for ((orow, grow), yrow) in gx.chunks_mut(d).zip(g.chunks(d)).zip(y.chunks(d)) {
                    let dot: T = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                    for j in 0..d {
                        orow[j] = orow[j] + yrow[j] * (grow[j] - dot);
                    }
                }
            }
        }
        Op::SumAll(x) => {
            if let Some(gx) = acc(grads, nodes, *x) {
                gx.iter_mut().for_each(|o| *o = *o + g[0]);
            }
        }
        Op::MeanAll(x) => {
            if let Some(gx) = acc(grads, nodes, *x) {
                let gv = g[0] / T::from_f64(gx.len() as f64);
                gx.iter_mut().for_each(|o| *o = *o + gv);
            }
        }
        Op::SumLast(x) => {
            let d = nodes[x.0].value.last_dim().max(1);
            if let Some(gx) = acc(grads, nodes, *x) {
                for (orow, &gv) in gx.chunks_mut(d).zip(g) {
                    orow.iter_mut().for_each(|o| *o = *o + gv);
                }
            }
        }
        Op::MaxLast(x, arg) => {
            let d = nodes[x.0].value.last_dim();
            if let Some(gx) = acc(grads, nodes, *x) {
                for (r, (&a, &gv)) in arg.iter().zip(g).enumerate() {
                    gx[r * d + a] = gx[r * d + a] + gv;
                }
            }
        }
        Op::LayerNorm {
            x,
            scale,
            bias,
            xhat,
            inv_std,
        } => {
            let d = nodes[scale.0].value.numel();
            let dn = T::from_f64(d as f64);
            if let Some(gb) = acc(grads, nodes, *bias) {
                for row in g.chunks(d) {
                    gb.iter_mut().zip(row).for_each(|(o, &v)| *o = *o + v);
                }
            }
            if let Some(gs) = acc(grads, nodes, *scale) {
                for (grow, xrow) in g.chunks(d).zip(xhat.chunks(d)) {
                    for j in 0..d {
                        gs[j] = gs[j] + grow[j] * xrow[j];
                    }
                }
            }
            if nodes[x.0].requires_grad {
                let sc = val(*scale).to_vec();
                let gx = acc(grads, nodes, *x).unwrap();
                let mut gxh = vec![T::zero(); d];
                for (r, ((orow, grow), xrow)) in gx
                    .chunks_mut(d)
                    .zip(g.chunks(d))
                    .zip(xhat.chunks(d))
                    .enumerate()
                {
                    let mut s1 = T::zero();
                    let mut s2 = T::zero();
                    for j in 0..d {
                        gxh[j] = grow[j] * sc[j];
                        s1 = s1 + gxh[j];
                        s2 = s2 + gxh[j] * xrow[j];
                    }
                    let k = inv_std[r] / dn;
                    for j in 0..d {
                        orow[j] = orow[j] + k * (dn * gxh[j] - s1 - xrow[j] * s2);
                    }
                }
            }
        }
        Op::Gather(x, idx) => {
            let d = nodes[x.0].value.last_dim();
            if let Some(gx) = acc(grads, nodes, *x) {
                for (r, &i) in idx.iter().enumerate() {
                    let src = &g[r * d..(r + 1) * d];
                    let dst = &mut gx[i * d..(i + 1) * d];
                    dst.iter_mut().zip(src).for_each(|(o, &v)| *o = *o + v);
                }
            }
        }
        Op::SegmentSum(x, seg) => {
            let d = nodes[x.0].value.last_dim();
            if let Some(gx) = acc(grads, nodes, *x) {
                for (i, &s) in seg.iter().enumerate() {
                    let src = &g[s * d..(s + 1) * d];
                    let dst = &mut gx[i * d..(i + 1) * d];
                    dst.iter_mut().zip(src).for_each(|(o, &v)| *o = *o + v);
                }
            }
        }
        Op::SegmentSoftmax(x, seg) => {
            let c = node.value.last_dim();
            let y = node.value.data();
            if let Some(gx) = acc(grads, nodes, *x) {
                let segments = seg.iter().copied().max().map_or(0, |m| m + 1);
                let mut dots = vec![T::zero(); segments * c];
                for (i, &s) in seg.iter().enumerate() {
                    for j in 0..c {
                        dots[s * c + j] = dots[s * c + j] + g[i * c + j] * y[i * c + j];
                    }
                }
                for (i, &s) in seg.iter().enumerate() {
                    for j in 0..c {
                        let k = i * c + j;
                        gx[k] = gx[k] + y[k] * (g[k] - dots[s * c + j]);
                    }
                }
            }
        }
        Op::ConcatCols(parts) => {
            let rows = node.value.shape()[0];
            let total = node.value.shape()[1];
            let mut off = 0;
            for &p in parts {
                let w = nodes[p.0].value.shape()[1];
                if let Some(gp) = acc(grads, nodes, p) {
                    for r in 0..rows {
                        let src = &g[r * total + off..r * total + off + w];
                        let dst = &mut gp[r * w..(r + 1) * w];
                        dst.iter_mut().zip(src).for_each(|(o, &v)| *o = *o + v);
                    }
                }
                off += w;
            }
        }
    }
}

/// Adjoints of the differentiable leaves of a consumed tape.
pub struct Gradients<T: Real = f32> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(String, Var)>,
}

impl<T: Real> Gradients<T> {
    /// Gradient with respect to a leaf; `None` when the leaf was not reached.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for each named parameter, zero-filled when unreached.
    pub fn params_like(&self, params: &ParamSet<T>) -> ParamSet<T> {
        let mut out = params.zeros_like();
        for (name, v) in &self.params {
            if let (Some(g), Some(dst)) = (self.wrt(*v), out.get_mut(name)) {
                for (o, &x) in dst.data_mut().iter_mut().zip(g.data()) {
                    *o = *o + x;
                }
            }
        }
        out
    }
}

/// Evaluates `loss_fn` on a fresh tape and returns the loss value and the
/// gradient for every entry of `params`.
pub fn grad<T: Real>(
    params: &ParamSet<T>,
    loss_fn: impl FnOnce(&mut Tape<T>, &ParamVars) -> Result<Var>,
) -> Result<(T, ParamSet<T>)> {
    let mut tape = Tape::new();
    let vars = tape.params(params);
    let loss = loss_fn(&mut tape, &vars)?;
    tape.check()?;
    if !tape.value(loss).is_scalar() {
        return Err(Error::NonScalarLoss(tape.shape(loss).to_vec()));
    }
    let value = tape.value(loss).item();
    let grads = tape.backward(loss)?;
    Ok((value, grads.params_like(params)))
}
