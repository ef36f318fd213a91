//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every primitive appends one node whose inputs were recorded earlier, so the
//! node vector is already in topological order and `backward` is a single
//! reverse sweep. Parameter leaves borrow their values from a [`ParamStore`].

use std::collections::{BTreeMap, HashMap};

use crate::error::{shape_err, Error, Result};
use crate::params::{ParamId, ParamStore, EMPTY_STORE};
use crate::tensor::{gemm, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Geometry of a batched self-attention call over rows laid out as
/// `[batch][seq]` with `embed = heads * head_dim` columns.
#[derive(Clone, Copy, Debug)]
pub struct AttentionShape {
    pub batch: usize,
    pub seq: usize,
    pub heads: usize,
    pub causal: bool,
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    AddGroup(Var, Var, usize),
    Scale(Var, f64),
    Reshape(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gelu(Var),
    Softmax(Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        shape: AttentionShape,
        probs: Vec<f64>,
    },
    WeightedPool {
        x: Var,
        seq: usize,
        weights: Vec<f64>,
    },
    GatherRows {
        src: Var,
        idx: Vec<usize>,
    },
    ConcatRows(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    Sum(Var),
    SquaredError {
        pred: Var,
        target: Vec<f64>,
        weights: Vec<f64>,
    },
    KlUniform {
        logits: Var,
        weight: f64,
        probs: Vec<f64>,
        log_probs: Vec<f64>,
    },
    StraightThrough(Var),
}

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

struct Node {
    value: Value,
    op: Op,
    needs_grad: bool,
}

/// Recorded forward computation. Build one per forward pass.
pub struct Tape<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
    grad_enabled: bool,
    consumed: bool,
}

/// Result of a backward sweep.
#[derive(Debug, Default)]
pub struct Gradients {
    params: BTreeMap<ParamId, Tensor>,
    leaves: HashMap<Var, Tensor>,
}

impl Gradients {
    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id)
    }

    pub fn wrt(&self, var: Var) -> Option<&Tensor> {
        self.leaves.get(&var)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params.iter().map(|(&k, v)| (k, v))
    }

    pub fn all_finite(&self) -> bool {
        self.params.values().all(Tensor::all_finite)
    }
}

fn erf_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Exact GELU, `x·Φ(x)`.
pub fn gelu_scalar(x: f64) -> f64 {
    x * erf_cdf(x)
}

impl<'a> Tape<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            grad_enabled: true,
            consumed: false,
        }
    }

    /// Tape for inference: nothing requires gradients.
    pub fn inference(store: &'a ParamStore) -> Self {
        let mut tape = Self::new(store);
        tape.grad_enabled = false;
        tape
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.store.get(*id),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = self.grad_enabled && inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.push_with(Value::Owned(value), op, needs_grad)
    }

    fn push_with(&mut self, value: Value, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push_with(Value::Owned(t), Op::Leaf, false)
    }

    /// Input leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn input(&mut self, t: Tensor) -> Var {
        let g = self.grad_enabled;
        self.push_with(Value::Owned(t), Op::Leaf, g)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let g = self.grad_enabled;
        let v = self.push_with(Value::Param(id), Op::Param(id), g);
        self.param_vars.insert(id, v);
        v
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(shape_err(op, format!("expected a matrix, got {s:?}")));
        }
        Ok((s[0], s[1]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(shape_err(
                "matmul",
                format!("inner dimensions differ: [{m}x{k}] x [{k2}x{n}]"),
            ));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            &mut out,
            false,
        );
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), &[a, b]))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let ta = self.value(a);
        let tb = self.value(b);
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        self.push(t, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        Ok(self.zip(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        Ok(self.zip(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        Ok(self.zip(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    /// `x[m,n] + bias[n]` broadcast over rows.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, n) = self.dims2(x, "add_row")?;
        if self.value(bias).len() != n {
            return Err(shape_err(
                "add_row",
                format!("bias {:?} against {n} columns", self.shape(bias)),
            ));
        }
        let b = self.value(bias).data().to_vec();
        let tx = self.value(x);
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(n) {
            row.iter_mut().zip(&b).for_each(|(v, bb)| *v += bb);
        }
        let t = Tensor::new(tx.shape().to_vec(), data)?;
        Ok(self.push(t, Op::AddRow(x, bias), &[x, bias]))
    }

    /// Adds row `g` of `z[groups, n]` to each of the `group_len` consecutive
    /// rows of group `g` in `x[groups*group_len, n]`.
    pub fn add_group(&mut self, x: Var, z: Var, group_len: usize) -> Result<Var> {
        let (rows, n) = self.dims2(x, "add_group")?;
        let (groups, nz) = self.dims2(z, "add_group")?;
        if nz != n || groups * group_len != rows {
            return Err(shape_err(
                "add_group",
                format!(
                    "x {:?}, z {:?}, group length {group_len}",
                    self.shape(x),
                    self.shape(z)
                ),
            ));
        }
        let zd = self.value(z).data().to_vec();
        let mut data = self.value(x).data().to_vec();
        for (r, row) in data.chunks_mut(n).enumerate() {
            let g = r / group_len;
            row.iter_mut()
                .zip(&zd[g * n..(g + 1) * n])
                .for_each(|(v, zz)| *v += zz);
        }
        let t = Tensor::new(vec![rows, n], data)?;
        Ok(self.push(t, Op::AddGroup(x, z, group_len), &[x, z]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let tx = self.value(x);
        let data = tx.data().iter().map(|v| v * c).collect();
        let t = Tensor::new(tx.shape().to_vec(), data).expect("same shape");
        self.push(t, Op::Scale(x, c), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        Ok(self.push(t, Op::Reshape(x), &[x]))
    }

    /// Row-wise layer normalization over the last axis followed by the affine
    /// `gain·x̂ + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (rows, n) = self.dims2(x, "layer_norm")?;
        if self.value(gain).len() != n || self.value(bias).len() != n {
            return Err(shape_err(
                "layer_norm",
                format!("gain/bias must have {n} entries"),
            ));
        }
        let g = self.value(gain).data().to_vec();
        let b = self.value(bias).data().to_vec();
        let xd = self.value(x).data();
        let mut xhat = vec![0.0; rows * n];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; rows * n];
        for r in 0..rows {
            let row = &xd[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[r] = inv;
            for j in 0..n {
                let h = (row[j] - mean) * inv;
                xhat[r * n + j] = h;
                out[r * n + j] = g[j] * h + b[j];
            }
        }
        let t = Tensor::new(vec![rows, n], out)?;
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            &[x, gain, bias],
        ))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let data = tx.data().iter().map(|&v| gelu_scalar(v)).collect();
        let t = Tensor::new(tx.shape().to_vec(), data).expect("same shape");
        self.push(t, Op::Gelu(x), &[x])
    }

    /// Softmax over the last axis, stabilized by subtracting the row max.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        if !tx.all_finite() {
            return Err(Error::NonFinite("softmax input"));
        }
        let n = tx.cols();
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(n) {
            softmax_in_place(row);
        }
        let t = Tensor::new(tx.shape().to_vec(), data)?;
        Ok(self.push(t, Op::Softmax(x), &[x]))
    }

    /// Multi-head scaled dot-product attention on already projected
    /// queries, keys, and values. `key_valid`, when given, has one entry per
    /// row and removes invalid keys from every query's support.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        shape: AttentionShape,
        key_valid: Option<&[bool]>,
    ) -> Result<Var> {
        let (rows, d) = self.dims2(q, "attention")?;
        self.same_shape(q, k, "attention")?;
        self.same_shape(q, v, "attention")?;
        let AttentionShape {
            batch,
            seq,
            heads,
            causal,
        } = shape;
        if batch * seq != rows || heads == 0 || d % heads != 0 {
            return Err(shape_err(
                "attention",
                format!("{rows}x{d} rows with batch {batch}, seq {seq}, heads {heads}"),
            ));
        }
        if let Some(mask) = key_valid {
            if mask.len() != rows {
                return Err(shape_err("attention", "key mask length"));
            }
        }
        let hd = d / heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let (qd, kd, vd) = (
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
        );
        let mut probs = vec![0.0; batch * heads * seq * seq];
        let mut out = vec![0.0; rows * d];
        let mut scores = vec![0.0; seq];
        for b in 0..batch {
            for h in 0..heads {
                let pbase = (b * heads + h) * seq * seq;
                for i in 0..seq {
                    let qi = &qd[(b * seq + i) * d + h * hd..][..hd];
                    let mut max = f64::NEG_INFINITY;
                    for j in 0..seq {
                        let allowed = (!causal || j <= i)
                            && key_valid.is_none_or(|m| m[b * seq + j]);
                        scores[j] = if allowed {
                            let kj = &kd[(b * seq + j) * d + h * hd..][..hd];
                            let s = qi.iter().zip(kj).map(|(x, y)| x * y).sum::<f64>() * scale;
                            max = max.max(s);
                            s
                        } else {
                            f64::NEG_INFINITY
                        };
                    }
                    let prow = &mut probs[pbase + i * seq..][..seq];
                    if max == f64::NEG_INFINITY {
                        // no admissible key: output zero for this query
                        continue;
                    }
                    let mut total = 0.0;
                    for j in 0..seq {
                        let e = if scores[j] == f64::NEG_INFINITY {
                            0.0
                        } else {
                            (scores[j] - max).exp()
                        };
                        prow[j] = e;
                        total += e;
                    }
                    let orow = &mut out[(b * seq + i) * d + h * hd..][..hd];
                    for j in 0..seq {
                        prow[j] /= total;
                        let p = prow[j];
                        if p != 0.0 {
                            let vj = &vd[(b * seq + j) * d + h * hd..][..hd];
                            orow.iter_mut().zip(vj).for_each(|(o, x)| *o += p * x);
                        }
                    }
                }
            }
        }
        let t = Tensor::new(vec![rows, d], out)?;
        Ok(self.push(
            t,
            Op::Attention {
                q,
                k,
                v,
                shape,
                probs,
            },
            &[q, k, v],
        ))
    }

    /// `out[g] = Σ_t weights[g*seq + t] · x[g*seq + t]` for groups of `seq`
    /// consecutive rows.
    pub fn weighted_pool(&mut self, x: Var, seq: usize, weights: Vec<f64>) -> Result<Var> {
        let (rows, n) = self.dims2(x, "weighted_pool")?;
        if seq == 0 || rows % seq != 0 || weights.len() != rows {
            return Err(shape_err(
                "weighted_pool",
                format!("{rows} rows, group {seq}, {} weights", weights.len()),
            ));
        }
        let groups = rows / seq;
        let xd = self.value(x).data();
        let mut out = vec![0.0; groups * n];
        for r in 0..rows {
            let w = weights[r];
            if w == 0.0 {
                continue;
            }
            let g = r / seq;
            out[g * n..(g + 1) * n]
                .iter_mut()
                .zip(&xd[r * n..(r + 1) * n])
                .for_each(|(o, v)| *o += w * v);
        }
        let t = Tensor::new(vec![groups, n], out)?;
        Ok(self.push(t, Op::WeightedPool { x, seq, weights }, &[x]))
    }

    pub fn gather_rows(&mut self, src: Var, idx: Vec<usize>) -> Result<Var> {
        let (rows, n) = self.dims2(src, "gather_rows")?;
        if idx.is_empty() || idx.iter().any(|&i| i >= rows) {
            return Err(shape_err(
                "gather_rows",
                format!("indices out of range for {rows} rows"),
            ));
        }
        let sd = self.value(src).data();
        let mut out = Vec::with_capacity(idx.len() * n);
        for &i in &idx {
            out.extend_from_slice(&sd[i * n..(i + 1) * n]);
        }
        let t = Tensor::new(vec![idx.len(), n], out)?;
        Ok(self.push(t, Op::GatherRows { src, idx }, &[src]))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let n = self.dims2(parts[0], "concat_rows")?.1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.dims2(p, "concat_rows")?;
            if c != n {
                return Err(shape_err("concat_rows", "column counts differ"));
            }
            data.extend_from_slice(self.value(p).data());
            rows += r;
        }
        let t = Tensor::new(vec![rows, n], data)?;
        Ok(self.push(t, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, n) = self.dims2(x, "slice_cols")?;
        if len == 0 || start + len > n {
            return Err(shape_err(
                "slice_cols",
                format!("columns {start}..{} of {n}", start + len),
            ));
        }
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&xd[r * n + start..r * n + start + len]);
        }
        let t = Tensor::new(vec![rows, len], out)?;
        Ok(self.push(t, Op::SliceCols { x, start }, &[x]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.dims2(parts[0], "concat_cols")?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims2(p, "concat_cols")?;
            if r != rows {
                return Err(shape_err("concat_cols", "row counts differ"));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let t = Tensor::new(vec![rows, total], out)?;
        Ok(self.push(t, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// `Σ_r weights[r] · ½‖pred_r − target_r‖²`.
    pub fn squared_error(&mut self, pred: Var, target: Vec<f64>, weights: Vec<f64>) -> Result<Var> {
        let tp = self.value(pred);
        let n = tp.cols();
        if target.len() != tp.len() || weights.len() != tp.rows() {
            return Err(shape_err(
                "squared_error",
                format!(
                    "prediction {:?}, {} targets, {} weights",
                    tp.shape(),
                    target.len(),
                    weights.len()
                ),
            ));
        }
        let mut total = 0.0;
        for (r, w) in weights.iter().enumerate() {
            if *w == 0.0 {
                continue;
            }
            let se: f64 = (0..n)
                .map(|j| {
                    let e = tp.data()[r * n + j] - target[r * n + j];
                    e * e
                })
                .sum();
            total += w * 0.5 * se;
        }
        Ok(self.push(
            Tensor::scalar(total),
            Op::SquaredError {
                pred,
                target,
                weights,
            },
            &[pred],
        ))
    }

    /// `weight · Σ_rows KL(softmax(logits_row) ‖ uniform)`.
    pub fn kl_uniform(&mut self, logits: Var, weight: f64) -> Result<Var> {
        let tl = self.value(logits);
        if !tl.all_finite() {
            return Err(Error::NonFinite("kl_uniform logits"));
        }
        let c = tl.cols();
        let ln_c = (c as f64).ln();
        let mut probs = tl.data().to_vec();
        let mut log_probs = vec![0.0; probs.len()];
        let mut total = 0.0;
        for (prow, lrow) in probs.chunks_mut(c).zip(log_probs.chunks_mut(c)) {
            let max = prow.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + prow.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            let uniform = prow.iter().all(|&v| v == prow[0]);
            for j in 0..c {
                lrow[j] = prow[j] - lse;
                prow[j] = lrow[j].exp();
                if !uniform {
                    total += prow[j] * (lrow[j] + ln_c);
                }
            }
        }
        Ok(self.push(
            Tensor::scalar(weight * total),
            Op::KlUniform {
                logits,
                weight,
                probs,
                log_probs,
            },
            &[logits],
        ))
    }

    /// Forwards `one_hot` while routing the incoming gradient to `probs`
    /// unchanged, i.e. `one_hot + probs − stop_grad(probs)`.
    pub fn straight_through(&mut self, probs: Var, one_hot: Tensor) -> Result<Var> {
        if one_hot.shape() != self.shape(probs) {
            return Err(shape_err(
                "straight_through",
                format!("{:?} vs {:?}", one_hot.shape(), self.shape(probs)),
            ));
        }
        Ok(self.push(one_hot, Op::StraightThrough(probs), &[probs]))
    }

    /// Reverse sweep from a scalar `loss`. A tape supports one sweep.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    let shape = self.value(Var(i)).shape().to_vec();
                    out.leaves.insert(Var(i), Tensor::new(shape, g)?);
                }
                Op::Param(id) => {
                    let shape = self.store.get(*id).shape().to_vec();
                    out.params.insert(*id, Tensor::new(shape, g)?);
                }
                op => self.backprop_op(op, self.value(Var(i)), &g, &mut grads),
            }
        }
        Ok(out)
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn backprop_op(&self, op: &Op, out: &Tensor, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        macro_rules! slot {
            ($v:expr) => {{
                let len = self.value($v).len();
                grads[$v.0].get_or_insert_with(|| vec![0.0; len])
            }};
        }
        match op {
            Op::Leaf | Op::Param(_) => unreachable!(),
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if self.wants(*a) {
                    let ga = slot!(*a);
                    gemm(m, n, k, g, false, self.value(*b).data(), true, ga, true);
                }
                if self.wants(*b) {
                    let gb = slot!(*b);
                    gemm(k, m, n, self.value(*a).data(), true, g, false, gb, true);
                }
            }
            Op::Add(a, b) => {
                for (v, sign) in [(*a, 1.0), (*b, 1.0)] {
                    if self.wants(v) {
                        add_scaled(slot!(v), g, sign);
                    }
                }
            }
            Op::Sub(a, b) => {
                for (v, sign) in [(*a, 1.0), (*b, -1.0)] {
                    if self.wants(v) {
                        add_scaled(slot!(v), g, sign);
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let bd = self.value(*b).data();
                    let ga = slot!(*a);
                    for ((o, gg), y) in ga.iter_mut().zip(g).zip(bd) {
                        *o += gg * y;
                    }
                }
                if self.wants(*b) {
                    let ad = self.value(*a).data();
                    let gb = slot!(*b);
                    for ((o, gg), x) in gb.iter_mut().zip(g).zip(ad) {
                        *o += gg * x;
                    }
                }
            }
            Op::AddRow(x, bias) => {
                if self.wants(*x) {
                    add_scaled(slot!(*x), g, 1.0);
                }
                if self.wants(*bias) {
                    let gb = slot!(*bias);
                    let n = gb.len();
                    for row in g.chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(o, v)| *o += v);
                    }
                }
            }
            Op::AddGroup(x, z, group_len) => {
                if self.wants(*x) {
                    add_scaled(slot!(*x), g, 1.0);
                }
                if self.wants(*z) {
                    let n = self.shape(*z)[1];
                    let gz = slot!(*z);
                    for (r, row) in g.chunks(n).enumerate() {
                        let grp = r / group_len;
                        gz[grp * n..(grp + 1) * n]
                            .iter_mut()
                            .zip(row)
                            .for_each(|(o, v)| *o += v);
                    }
                }
            }
            Op::Scale(x, c) => {
                if self.wants(*x) {
                    add_scaled(slot!(*x), g, *c);
                }
            }
            Op::Reshape(x) => {
                if self.wants(*x) {
                    add_scaled(slot!(*x), g, 1.0);
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let n = self.value(*gain).len();
                if self.wants(*gain) {
                    let gg = slot!(*gain);
                    for (row_g, row_h) in g.chunks(n).zip(xhat.chunks(n)) {
                        for j in 0..n {
                            gg[j] += row_g[j] * row_h[j];
                        }
                    }
                }
                if self.wants(*bias) {
                    let gb = slot!(*bias);
                    for row_g in g.chunks(n) {
                        gb.iter_mut().zip(row_g).for_each(|(o, v)| *o += v);
                    }
                }
                if self.wants(*x) {
                    let gamma = self.value(*gain).data();
                    let gx = slot!(*x);
                    let mut dh = vec![0.0; n];
                    for (r, inv) in inv_std.iter().enumerate() {
                        let row_g = &g[r * n..(r + 1) * n];
                        let row_h = &xhat[r * n..(r + 1) * n];
                        for j in 0..n {
                            dh[j] = row_g[j] * gamma[j];
                        }
                        let mean_dh = dh.iter().sum::<f64>() / n as f64;
                        let mean_dhh =
                            dh.iter().zip(row_h).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                        for j in 0..n {
                            gx[r * n + j] += inv * (dh[j] - mean_dh - row_h[j] * mean_dhh);
                        }
                    }
                }
            }
            Op::Gelu(x) => {
                if self.wants(*x) {
                    let xd = self.value(*x).data();
                    let gx = slot!(*x);
                    for ((o, gg), &v) in gx.iter_mut().zip(g).zip(xd) {
                        *o += gg * (erf_cdf(v) + v * normal_pdf(v));
                    }
                }
            }
            Op::Softmax(x) => {
                if self.wants(*x) {
                    let n = out.cols();
                    let y = out.data();
                    let gx = slot!(*x);
                    for ((yr, gr), or) in y.chunks(n).zip(g.chunks(n)).zip(gx.chunks_mut(n)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            or[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                shape,
                probs,
            } => self.backprop_attention(*q, *k, *v, *shape, probs, g, grads),
            Op::WeightedPool { x, seq, weights } => {
                if self.wants(*x) {
                    let n = self.shape(*x)[1];
                    let gx = slot!(*x);
                    for (r, w) in weights.iter().enumerate() {
                        if *w == 0.0 {
                            continue;
                        }
                        let grp = r / seq;
                        for j in 0..n {
                            gx[r * n + j] += w * g[grp * n + j];
                        }
                    }
                }
            }
            Op::GatherRows { src, idx } => {
                if self.wants(*src) {
                    let n = self.shape(*src)[1];
                    let gs = slot!(*src);
                    for (o, &i) in idx.iter().enumerate() {
                        gs[i * n..(i + 1) * n]
                            .iter_mut()
                            .zip(&g[o * n..(o + 1) * n])
                            .for_each(|(a, b)| *a += b);
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if self.wants(p) {
                        add_scaled(slot!(p), &g[offset..offset + len], 1.0);
                    }
                    offset += len;
                }
            }
            Op::SliceCols { x, start } => {
                if self.wants(*x) {
                    let n = self.shape(*x)[1];
                    let rows = self.shape(*x)[0];
                    let len = g.len() / rows;
                    let gx = slot!(*x);
                    for r in 0..rows {
                        for j in 0..len {
                            gx[r * n + start + j] += g[r * len + j];
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let rows = self.shape(parts[0])[0];
                let total = g.len() / rows;
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p)[1];
                    if self.wants(p) {
                        let gp = slot!(p);
                        for r in 0..rows {
                            for j in 0..w {
                                gp[r * w + j] += g[r * total + offset + j];
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::Sum(x) => {
                if self.wants(*x) {
                    let s = g[0];
                    slot!(*x).iter_mut().for_each(|o| *o += s);
                }
            }
            Op::SquaredError {
                pred,
                target,
                weights,
            } => {
                if self.wants(*pred) {
                    let pd = self.value(*pred).data();
                    let n = self.value(*pred).cols();
                    let gp = slot!(*pred);
                    for (r, w) in weights.iter().enumerate() {
                        if *w == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            let idx = r * n + j;
                            gp[idx] += g[0] * w * (pd[idx] - target[idx]);
                        }
                    }
                }
            }
            Op::KlUniform {
                logits,
                weight,
                probs,
                log_probs,
            } => {
                if self.wants(*logits) {
                    let c = self.value(*logits).cols();
                    let gl = slot!(*logits);
                    for ((pr, lr), or) in probs
                        .chunks(c)
                        .zip(log_probs.chunks(c))
                        .zip(gl.chunks_mut(c))
                    {
                        let entropy: f64 = -pr.iter().zip(lr).map(|(p, l)| p * l).sum::<f64>();
                        for j in 0..c {
                            or[j] += g[0] * weight * pr[j] * (lr[j] + entropy);
                        }
                    }
                }
            }
            Op::StraightThrough(probs) => {
                if self.wants(*probs) {
                    add_scaled(slot!(*probs), g, 1.0);
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backprop_attention(
        &self,
        q: Var,
        k: Var,
        v: Var,
        shape: AttentionShape,
        probs: &[f64],
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let AttentionShape {
            batch, seq, heads, ..
        } = shape;
        let d = self.shape(q)[1];
        let hd = d / heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let (qd, kd, vd) = (
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
        );
        let mut gq = vec![0.0; qd.len()];
        let mut gk = vec![0.0; kd.len()];
        let mut gv = vec![0.0; vd.len()];
        let mut dp = vec![0.0; seq];
        for b in 0..batch {
            for h in 0..heads {
                let pbase = (b * heads + h) * seq * seq;
                for i in 0..seq {
                    let prow = &probs[pbase + i * seq..][..seq];
                    let go = &g[(b * seq + i) * d + h * hd..][..hd];
                    let mut dot = 0.0;
                    for j in 0..seq {
                        let p = prow[j];
                        if p == 0.0 {
                            dp[j] = 0.0;
                            continue;
                        }
                        let vj = (b * seq + j) * d + h * hd;
                        let mut s = 0.0;
                        for t in 0..hd {
                            gv[vj + t] += p * go[t];
                            s += go[t] * vd[vj + t];
                        }
                        dp[j] = s;
                        dot += p * s;
                    }
                    let qi = (b * seq + i) * d + h * hd;
                    for j in 0..seq {
                        let p = prow[j];
                        if p == 0.0 {
                            continue;
                        }
                        let ds = p * (dp[j] - dot) * scale;
                        let kj = (b * seq + j) * d + h * hd;
                        for t in 0..hd {
                            gq[qi + t] += ds * kd[kj + t];
                            gk[kj + t] += ds * qd[qi + t];
                        }
                    }
                }
            }
        }
        for (var, local) in [(q, gq), (k, gk), (v, gv)] {
            if self.wants(var) {
                let slot = grads[var.0].get_or_insert_with(|| vec![0.0; local.len()]);
                add_scaled(slot, &local, 1.0);
            }
        }
    }
}

impl Default for Tape<'static> {
    fn default() -> Self {
        Tape::new(&EMPTY_STORE)
    }
}

fn add_scaled(dst: &mut [f64], src: &[f64], c: f64) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += c * s);
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}
