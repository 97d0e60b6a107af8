//! Define-by-run reverse-mode differentiation.
//!
//! Every operation appends a node holding its output and whatever it must
//! keep for the backward pass. Parameters enter as borrowed leaves, so a
//! forward pass never copies weights.

use std::borrow::Cow;

use super::kernels::{self, AttentionShape, LayerNormSaved};
use super::{Real, Tensor};
use crate::error::{QeError, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    AddBias {
        x: Var,
        bias: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        factor: T,
    },
    Gelu {
        x: Var,
    },
    Tanh {
        x: Var,
    },
    Softmax {
        x: Var,
        cols: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        saved: LayerNormSaved<T>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    GatherRows {
        x: Var,
        rows: Vec<Option<usize>>,
    },
    ScaleRows {
        x: Var,
        factors: Var,
        slots: Vec<Option<usize>>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        shape: AttentionShape,
        probs: Vec<T>,
    },
    Sum {
        x: Var,
    },
    Mse {
        pred: Var,
        target: Vec<T>,
    },
    Bce {
        logits: Var,
        labels: Vec<T>,
    },
    MaskedMse {
        x: Var,
        target: Vec<T>,
        rows: Vec<bool>,
        count: usize,
    },
}

struct Node<'a, T: Clone> {
    value: Cow<'a, [T]>,
    shape: Vec<usize>,
    requires_grad: bool,
    op: Op<T>,
}

/// Recorded computation. `'a` is the lifetime of borrowed parameter leaves.
pub struct Tape<'a, T: Real> {
    nodes: Vec<Node<'a, T>>,
}

impl<'a, T: Real> Default for Tape<'a, T> {
    fn default() -> Self {
        Self::new()
    }
}

fn cols_of(shape: &[usize]) -> usize {
    *shape.last().expect("non-empty shape")
}

impl<'a, T: Real> Tape<'a, T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, [T]>, shape: Vec<usize>, requires_grad: bool, op: Op<T>) -> Var {
        debug_assert_eq!(value.len(), shape.iter().product::<usize>());
        self.nodes.push(Node {
            value,
            shape,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Borrowed leaf; `requires_grad` decides whether backward reaches it.
    pub fn param(&mut self, tensor: &'a Tensor<T>, requires_grad: bool) -> Var {
        self.push(
            Cow::Borrowed(tensor.data()),
            tensor.shape().to_vec(),
            requires_grad,
            Op::Leaf,
        )
    }

    /// Owned leaf.
    pub fn leaf(&mut self, tensor: Tensor<T>, requires_grad: bool) -> Var {
        let shape = tensor.shape().to_vec();
        self.push(Cow::Owned(tensor.into_data()), shape, requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<T>) -> Result<Var> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(QeError::shape("constant", &shape, &[data.len()]));
        }
        Ok(self.push(Cow::Owned(data), shape, false, Op::Leaf))
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn to_tensor(&self, v: Var) -> Tensor<T> {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec()).expect("node shape")
    }

    /// Attention probabilities `[batch, heads, seq, seq]` saved by an attention node.
    pub fn attention_probs(&self, v: Var) -> Option<(&[T], &AttentionShape)> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, shape, .. } => Some((probs, shape)),
            _ => None,
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(QeError::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        kernels::matmul(self.value(a), self.value(b), m, k, n, &mut out);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Cow::Owned(out), vec![m, n], rg, Op::MatMul { a, b, m, k, n }))
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let cols = cols_of(self.shape(x));
        if self.shape(bias) != [cols] {
            return Err(QeError::shape("add_bias", self.shape(x), self.shape(bias)));
        }
        let b = self.value(bias);
        let mut out = self.value(x).to_vec();
        for row in out.chunks_exact_mut(cols) {
            for (o, &bj) in row.iter_mut().zip(b) {
                *o += bj;
            }
        }
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(Cow::Owned(out), shape, rg, Op::AddBias { x, bias }))
    }

    /// `x · w + b` for a `[n, in]` input, `[in, out]` weight and `[out]` bias.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_bias(y, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(QeError::shape("add", self.shape(a), self.shape(b)));
        }
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x + y)
            .collect::<Vec<_>>();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Cow::Owned(out), shape, rg, Op::Add { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(QeError::shape("mul", self.shape(a), self.shape(b)));
        }
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x * y)
            .collect::<Vec<_>>();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Cow::Owned(out), shape, rg, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let out = self.value(x).iter().map(|&v| v * factor).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(Cow::Owned(out), shape, rg, Op::Scale { x, factor })
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| kernels::gelu(v)).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(Cow::Owned(out), shape, rg, Op::Gelu { x })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| v.tanh()).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(Cow::Owned(out), shape, rg, Op::Tanh { x })
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        if self.value(x).iter().any(|v| v.is_nan()) {
            return Err(QeError::Numeric("softmax input contains NaN".into()));
        }
        let cols = cols_of(self.shape(x));
        let mut out = vec![T::zero(); self.value(x).len()];
        kernels::softmax_rows(self.value(x), cols, &mut out);
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(Cow::Owned(out), shape, rg, Op::Softmax { x, cols }))
    }

    /// Layer normalisation over the last axis.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let cols = cols_of(self.shape(x));
        if cols < 2 || self.shape(gamma) != [cols] || self.shape(beta) != [cols] {
            return Err(QeError::shape("layer_norm", self.shape(x), self.shape(gamma)));
        }
        let mut out = vec![T::zero(); self.value(x).len()];
        let saved = kernels::layer_norm(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            eps,
            &mut out,
        );
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            Cow::Owned(out),
            shape,
            rg,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                saved,
            },
        ))
    }

    /// Row lookup into a `[vocab, width]` table.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let ts = self.shape(table);
        if ts.len() != 2 {
            return Err(QeError::shape("embedding", ts, &[]));
        }
        let (rows, width) = (ts[0], ts[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(QeError::Usage(format!(
                "embedding index {bad} out of range for table with {rows} rows"
            )));
        }
        let t = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * width);
        for &id in ids {
            out.extend_from_slice(&t[id * width..(id + 1) * width]);
        }
        let rg = self.rg(table);
        Ok(self.push(
            Cow::Owned(out),
            vec![ids.len(), width],
            rg,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Selects rows of a matrix; `None` produces a zero row.
    pub fn gather_rows(&mut self, x: Var, rows: Vec<Option<usize>>) -> Result<Var> {
        let (n, width) = {
            let s = self.shape(x);
            if s.len() != 2 {
                return Err(QeError::shape("gather_rows", s, &[]));
            }
            (s[0], s[1])
        };
        if rows.is_empty() || rows.iter().flatten().any(|&r| r >= n) {
            return Err(QeError::Usage("gather_rows index out of range".into()));
        }
        let src = self.value(x);
        let mut out = vec![T::zero(); rows.len() * width];
        for (dst, r) in out.chunks_exact_mut(width).zip(&rows) {
            if let Some(r) = *r {
                dst.copy_from_slice(&src[r * width..(r + 1) * width]);
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            Cow::Owned(out),
            vec![rows.len(), width],
            rg,
            Op::GatherRows { x, rows },
        ))
    }

    /// Multiplies row `r` by `factors[slots[r]]`; `None` leaves the row as is.
    pub fn scale_rows(&mut self, x: Var, factors: Var, slots: Vec<Option<usize>>) -> Result<Var> {
        let (n, width) = {
            let s = self.shape(x);
            (s[0], cols_of(s))
        };
        let nf = self.value(factors).len();
        if slots.len() != n || slots.iter().flatten().any(|&s| s >= nf) {
            return Err(QeError::shape("scale_rows", self.shape(x), self.shape(factors)));
        }
        let f = self.value(factors);
        let mut out = self.value(x).to_vec();
        for (row, slot) in out.chunks_exact_mut(width).zip(&slots) {
            if let Some(s) = *slot {
                for v in row.iter_mut() {
                    *v *= f[s];
                }
            }
        }
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x) || self.rg(factors);
        Ok(self.push(
            Cow::Owned(out),
            shape,
            rg,
            Op::ScaleRows { x, factors, slots },
        ))
    }

    /// Batched multi-head attention; see [`kernels::attention`].
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        key_mask: &[bool],
        shape: AttentionShape,
    ) -> Result<Var> {
        let expect = [shape.batch * shape.seq, shape.width];
        for var in [q, k, v] {
            if self.shape(var) != expect {
                return Err(QeError::shape("attention", self.shape(var), &expect));
            }
        }
        if shape.width % shape.heads != 0 || key_mask.len() != expect[0] {
            return Err(QeError::Usage("attention geometry is inconsistent".into()));
        }
        let (out, probs) =
            kernels::attention(self.value(q), self.value(k), self.value(v), key_mask, &shape);
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        Ok(self.push(
            Cow::Owned(out),
            expect.to_vec(),
            rg,
            Op::Attention {
                q,
                k,
                v,
                shape,
                probs,
            },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().copied().sum::<T>();
        let rg = self.rg(x);
        self.push(Cow::Owned(vec![s]), vec![1], rg, Op::Sum { x })
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, pred: Var, target: &[T]) -> Result<Var> {
        let p = self.value(pred);
        if p.len() != target.len() || p.is_empty() {
            return Err(QeError::shape("mse", self.shape(pred), &[target.len()]));
        }
        let n = T::from_usize(p.len()).unwrap();
        let loss = p
            .iter()
            .zip(target)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<T>()
            / n;
        let rg = self.rg(pred);
        Ok(self.push(
            Cow::Owned(vec![loss]),
            vec![1],
            rg,
            Op::Mse {
                pred,
                target: target.to_vec(),
            },
        ))
    }

    /// Mean binary cross-entropy on logits, in log-sum-exp form.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &[T]) -> Result<Var> {
        let z = self.value(logits);
        if z.len() != labels.len() || z.is_empty() {
            return Err(QeError::shape("bce", self.shape(logits), &[labels.len()]));
        }
        let n = T::from_usize(z.len()).unwrap();
        let loss = z
            .iter()
            .zip(labels)
            .map(|(&zi, &yi)| bce_term(zi, yi))
            .sum::<T>()
            / n;
        let rg = self.rg(logits);
        Ok(self.push(
            Cow::Owned(vec![loss]),
            vec![1],
            rg,
            Op::Bce {
                logits,
                labels: labels.to_vec(),
            },
        ))
    }

    /// Squared error against `target`, averaged over the selected rows and all columns.
    pub fn masked_mse(&mut self, x: Var, target: &[T], rows: &[bool]) -> Result<Var> {
        let (n, width) = {
            let s = self.shape(x);
            (s[0], cols_of(s))
        };
        if target.len() != n * width || rows.len() != n {
            return Err(QeError::shape("masked_mse", self.shape(x), &[target.len()]));
        }
        let count = rows.iter().filter(|&&r| r).count() * width;
        if count == 0 {
            return Err(QeError::Usage("masked_mse selects no rows".into()));
        }
        let xv = self.value(x);
        let mut acc = T::zero();
        for (r, &keep) in rows.iter().enumerate() {
            if keep {
                for j in r * width..(r + 1) * width {
                    let d = xv[j] - target[j];
                    acc += d * d;
                }
            }
        }
        let loss = acc / T::from_usize(count).unwrap();
        let rg = self.rg(x);
        Ok(self.push(
            Cow::Owned(vec![loss]),
            vec![1],
            rg,
            Op::MaskedMse {
                x,
                target: target.to_vec(),
                rows: rows.to_vec(),
                count,
            },
        ))
    }

    /// Reverse sweep from a scalar. Leaves that require a gradient but were
    /// not reached by the loss come back as zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(QeError::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = (if i == loss.0 {
                grads[i].clone()
            } else {
                grads[i].take()
            }) else {
                continue;
            };
            if !node.requires_grad {
                continue;
            }
            self.backprop_node(node, &g, &mut grads);
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad && grads[i].is_none() {
                grads[i] = Some(vec![T::zero(); node.value.len()]);
            }
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node<'a, T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, m, k, n } => {
                if self.rg(*a) {
                    let ga = slot(grads, *a, m * k);
                    kernels::matmul_grad_lhs(g, self.value(*b), *m, *k, *n, ga);
                }
                if self.rg(*b) {
                    let gb = slot(grads, *b, k * n);
                    kernels::matmul_grad_rhs(self.value(*a), g, *m, *k, *n, gb);
                }
            }
            Op::AddBias { x, bias } => {
                if self.rg(*x) {
                    add_into(slot(grads, *x, g.len()), g);
                }
                if self.rg(*bias) {
                    let cols = self.value(*bias).len();
                    let gb = slot(grads, *bias, cols);
                    for row in g.chunks_exact(cols) {
                        add_into(gb, row);
                    }
                }
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    if self.rg(v) {
                        add_into(slot(grads, v, g.len()), g);
                    }
                }
            }
            Op::Mul { a, b } => {
                if self.rg(*a) {
                    let bv = self.value(*b);
                    let ga = slot(grads, *a, g.len());
                    for ((o, &gi), &bi) in ga.iter_mut().zip(g).zip(bv) {
                        *o += gi * bi;
                    }
                }
                if self.rg(*b) {
                    let av = self.value(*a);
                    let gb = slot(grads, *b, g.len());
                    for ((o, &gi), &ai) in gb.iter_mut().zip(g).zip(av) {
                        *o += gi * ai;
                    }
                }
            }
            Op::Scale { x, factor } => {
                let gx = slot(grads, *x, g.len());
                for (o, &gi) in gx.iter_mut().zip(g) {
                    *o += gi * *factor;
                }
            }
            Op::Gelu { x } => {
                let xv = self.value(*x);
                let gx = slot(grads, *x, g.len());
                for ((o, &gi), &xi) in gx.iter_mut().zip(g).zip(xv) {
                    *o += gi * kernels::gelu_grad(xi);
                }
            }
            Op::Tanh { x } => {
                let y = &node.value;
                let gx = slot(grads, *x, g.len());
                for ((o, &gi), &yi) in gx.iter_mut().zip(g).zip(y.iter()) {
                    *o += gi * (T::one() - yi * yi);
                }
            }
            Op::Softmax { x, cols } => {
                let gx = slot(grads, *x, g.len());
                kernels::softmax_rows_grad(&node.value, g, *cols, gx);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                saved,
            } => {
                let cols = self.value(*gamma).len();
                let gamma_v = self.value(*gamma);
                let mut gx = self.rg(*x).then(|| take_slot(grads, *x, g.len()));
                let mut gg = self.rg(*gamma).then(|| take_slot(grads, *gamma, cols));
                let mut gbeta = self.rg(*beta).then(|| take_slot(grads, *beta, cols));
                kernels::layer_norm_grad(
                    saved,
                    gamma_v,
                    g,
                    gx.as_deref_mut(),
                    gg.as_deref_mut(),
                    gbeta.as_deref_mut(),
                );
                for (v, buf) in [(*x, gx), (*gamma, gg), (*beta, gbeta)] {
                    if let Some(buf) = buf {
                        grads[v.0] = Some(buf);
                    }
                }
            }
            Op::Embedding { table, ids } => {
                let width = self.shape(*table)[1];
                let gt = slot(grads, *table, self.value(*table).len());
                for (row, &id) in g.chunks_exact(width).zip(ids) {
                    add_into(&mut gt[id * width..(id + 1) * width], row);
                }
            }
            Op::GatherRows { x, rows } => {
                let width = cols_of(&node.shape);
                let gx = slot(grads, *x, self.value(*x).len());
                for (grow, r) in g.chunks_exact(width).zip(rows) {
                    if let Some(r) = *r {
                        add_into(&mut gx[r * width..(r + 1) * width], grow);
                    }
                }
            }
            Op::ScaleRows { x, factors, slots } => {
                let width = cols_of(&node.shape);
                if self.rg(*x) {
                    let f = self.value(*factors);
                    let gx = slot(grads, *x, g.len());
                    for ((gxr, gr), s) in gx.chunks_exact_mut(width).zip(g.chunks_exact(width)).zip(slots) {
                        let scale = s.map_or(T::one(), |s| f[s]);
                        for (o, &gi) in gxr.iter_mut().zip(gr) {
                            *o += gi * scale;
                        }
                    }
                }
                if self.rg(*factors) {
                    let xv = self.value(*x);
                    let nf = self.value(*factors).len();
                    let gf = slot(grads, *factors, nf);
                    for ((xr, gr), s) in xv.chunks_exact(width).zip(g.chunks_exact(width)).zip(slots) {
                        if let Some(s) = *s {
                            gf[s] += kernels::dot(xr, gr);
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
            } => {
                let len = g.len();
                let mut gq = take_slot(grads, *q, len);
                let mut gk = take_slot(grads, *k, len);
                let mut gv = take_slot(grads, *v, len);
                kernels::attention_grad(
                    self.value(*q),
                    self.value(*k),
                    self.value(*v),
                    probs,
                    g,
                    shape,
                    &mut gq,
                    &mut gk,
                    &mut gv,
                );
                for (var, buf) in [(*q, gq), (*k, gk), (*v, gv)] {
                    if self.rg(var) {
                        grads[var.0] = Some(buf);
                    }
                }
            }
            Op::Sum { x } => {
                let gx = slot(grads, *x, self.value(*x).len());
                for o in gx.iter_mut() {
                    *o += g[0];
                }
            }
            Op::Mse { pred, target } => {
                let p = self.value(*pred);
                let n = T::from_usize(p.len()).unwrap();
                let gp = slot(grads, *pred, p.len());
                for ((o, &pi), &ti) in gp.iter_mut().zip(p).zip(target) {
                    *o += g[0] * T::c(2.0) * (pi - ti) / n;
                }
            }
            Op::Bce { logits, labels } => {
                let z = self.value(*logits);
                let n = T::from_usize(z.len()).unwrap();
                let gz = slot(grads, *logits, z.len());
                for ((o, &zi), &yi) in gz.iter_mut().zip(z).zip(labels) {
                    *o += g[0] * (sigmoid(zi) - yi) / n;
                }
            }
            Op::MaskedMse {
                x,
                target,
                rows,
                count,
            } => {
                let xv = self.value(*x);
                let width = cols_of(self.shape(*x));
                let scale = g[0] * T::c(2.0) / T::from_usize(*count).unwrap();
                let gx = slot(grads, *x, xv.len());
                for (r, &keep) in rows.iter().enumerate() {
                    if keep {
                        for j in r * width..(r + 1) * width {
                            gx[j] += scale * (xv[j] - target[j]);
                        }
                    }
                }
            }
        }
    }
}

fn slot<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut [T] {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

fn take_slot<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> Vec<T> {
    grads[v.0].take().unwrap_or_else(|| vec![T::zero(); len])
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[inline]
pub fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// `−[y·ln σ(z) + (1−y)·ln(1−σ(z))]` without overflow.
#[inline]
pub fn bce_term<T: Real>(z: T, y: T) -> T {
    z.max(T::zero()) - y * z + (-z.abs()).exp().ln_1p()
}

/// Gradients keyed by tape node.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}
