//! Reverse-mode tape over rank-2 tensors.
//!
//! A [`Tape`] records every operation of one forward computation. Calling
//! [`Tape::backward`] on a scalar node walks the record in reverse and
//! returns the gradient of that scalar with respect to every node that
//! transitively depends on a trainable leaf.

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRowBias(Var, Var),
    Relu(Var),
    Tanh(Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Mul(Var, Var),
    Sum(Var),
    Reparam { mean: Var, log_var: Var, noise: Tensor },
    L1 { a: Var, b: Var },
    KlRows { mp: Var, lp: Var, mq: Var, lq: Var },
    W2Rows { mp: Var, lp: Var, mq: Var, lq: Var, squared: bool },
    Hinge { x: Var, margin: f64 },
    Mean(Var),
    GatherRows { src: Var, idx: Vec<usize> },
    ConcatRows(Var, Var),
    SoftmaxXent { logits: Var, labels: Vec<usize>, probs: Tensor },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    kink_margin: f64,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

fn same_shape(context: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            context,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            kink_margin: f64::INFINITY,
        }
    }

    /// Smallest distance of any recorded non-smooth operation from its kink
    /// (ReLU at 0, L1 at a tie, hinge at the margin, clamp at a bound, W2 at
    /// coincidence). Finite-difference checks are only meaningful when this
    /// comfortably exceeds the step size.
    pub fn kink_margin(&self) -> f64 {
        self.kink_margin
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn touch_kink(&mut self, d: f64) {
        if d < self.kink_margin {
            self.kink_margin = d;
        }
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Constant input; receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Trainable input; gradients flow back to it.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.rows() {
            return Err(Error::ShapeMismatch {
                context: "matmul",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let out = gemm(ta, false, tb, false);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    /// `x[n, m] + bias[1, m]` broadcast over rows.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        if tb.rows() != 1 || tb.cols() != tx.cols() {
            return Err(Error::ShapeMismatch {
                context: "add_row_bias",
                left: tx.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let mut out = tx.clone();
        let c = tx.cols();
        let b = tb.values().to_vec();
        for row in out.values_mut().chunks_mut(c) {
            for (o, bi) in row.iter_mut().zip(&b) {
                *o += bi;
            }
        }
        let ng = self.ng(x) || self.ng(bias);
        Ok(self.push(out, Op::AddRowBias(x, bias), ng))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        let mut margin = f64::INFINITY;
        for v in out.values_mut() {
            margin = margin.min(v.abs());
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        self.touch_kink(margin);
        let ng = self.ng(x);
        self.push(out, Op::Relu(x), ng)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.values_mut().iter_mut().for_each(|v| *v = v.tanh());
        let ng = self.ng(x);
        self.push(out, Op::Tanh(x), ng)
    }

    /// Saturating clamp; the gradient is zero outside `[lo, hi]`.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let mut out = self.value(x).clone();
        let mut margin = f64::INFINITY;
        for v in out.values_mut() {
            margin = margin.min((*v - lo).abs()).min((*v - hi).abs());
            *v = v.clamp(lo, hi);
        }
        self.touch_kink(margin);
        let ng = self.ng(x);
        self.push(out, Op::Clamp { x, lo, hi }, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.value(a), self.value(b))?;
        let mut out = self.value(a).clone();
        for (o, v) in out.values_mut().iter_mut().zip(self.value(b).values()) {
            *o -= v;
        }
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let mut out = self.value(x).clone();
        out.values_mut().iter_mut().for_each(|v| *v *= c);
        let ng = self.ng(x);
        self.push(out, Op::Scale(x, c), ng)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.value(a), self.value(b))?;
        let mut out = self.value(a).clone();
        for (o, v) in out.values_mut().iter_mut().zip(self.value(b).values()) {
            *o *= v;
        }
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    /// Sum over every element; output is a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).values().iter().sum::<f64>();
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    /// `mean + exp(log_var / 2) ⊙ noise`, row-wise over a batch.
    pub fn reparam(&mut self, mean: Var, log_var: Var, noise: Tensor) -> Result<Var> {
        same_shape("reparam", self.value(mean), self.value(log_var))?;
        same_shape("reparam", self.value(mean), &noise)?;
        let mut out = self.value(mean).clone();
        for ((o, lv), n) in out
            .values_mut()
            .iter_mut()
            .zip(self.value(log_var).values())
            .zip(noise.values())
        {
            *o += (0.5 * lv).exp() * n;
        }
        let ng = self.ng(mean) || self.ng(log_var);
        Ok(self.push(out, Op::Reparam { mean, log_var, noise }, ng))
    }

    /// Sum of absolute differences over features, averaged over rows.
    pub fn l1(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("l1", ta, tb)?;
        let rows = ta.rows().max(1) as f64;
        let mut acc = 0.0;
        let mut margin = f64::INFINITY;
        for (x, y) in ta.values().iter().zip(tb.values()) {
            let d = (x - y).abs();
            acc += d;
            margin = margin.min(d);
        }
        self.touch_kink(margin);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::scalar(acc / rows), Op::L1 { a, b }, ng))
    }

    fn check_gauss4(&self, context: &'static str, vs: [Var; 4]) -> Result<()> {
        let s0 = self.value(vs[0]);
        for v in &vs[1..] {
            same_shape(context, s0, self.value(*v))?;
        }
        Ok(())
    }

    /// Row-wise KL(p_r ‖ q_r) for batches of diagonal Gaussians; output `[n, 1]`.
    pub fn kl_rows(&mut self, mp: Var, lp: Var, mq: Var, lq: Var) -> Result<Var> {
        self.check_gauss4("kl_rows", [mp, lp, mq, lq])?;
        let (n, d) = (self.value(mp).rows(), self.value(mp).cols());
        let mut out = Tensor::zeros(&[n, 1]);
        {
            let (vmp, vlp, vmq, vlq) = (
                self.value(mp).values(),
                self.value(lp).values(),
                self.value(mq).values(),
                self.value(lq).values(),
            );
            for r in 0..n {
                let mut acc = 0.0;
                for j in r * d..(r + 1) * d {
                    let diff = vmq[j] - vmp[j];
                    acc += (vlp[j] - vlq[j]).exp() + diff * diff * (-vlq[j]).exp() - 1.0
                        + vlq[j]
                        - vlp[j];
                }
                out.values_mut()[r] = 0.5 * acc;
            }
        }
        let ng = [mp, lp, mq, lq].iter().any(|v| self.ng(*v));
        Ok(self.push(out, Op::KlRows { mp, lp, mq, lq }, ng))
    }

    /// Row-wise 2-Wasserstein distance (or its square); output `[n, 1]`.
    pub fn w2_rows(&mut self, mp: Var, lp: Var, mq: Var, lq: Var, squared: bool) -> Result<Var> {
        self.check_gauss4("w2_rows", [mp, lp, mq, lq])?;
        let (n, d) = (self.value(mp).rows(), self.value(mp).cols());
        let mut out = Tensor::zeros(&[n, 1]);
        let mut margin = f64::INFINITY;
        {
            let (vmp, vlp, vmq, vlq) = (
                self.value(mp).values(),
                self.value(lp).values(),
                self.value(mq).values(),
                self.value(lq).values(),
            );
            for r in 0..n {
                let mut s = 0.0;
                for j in r * d..(r + 1) * d {
                    let dm = vmp[j] - vmq[j];
                    let ds = (0.5 * vlp[j]).exp() - (0.5 * vlq[j]).exp();
                    s += dm * dm + ds * ds;
                }
                let w = s.sqrt();
                margin = margin.min(w);
                out.values_mut()[r] = if squared { s } else { w };
            }
        }
        if !squared {
            self.touch_kink(margin);
        }
        let ng = [mp, lp, mq, lq].iter().any(|v| self.ng(*v));
        Ok(self.push(
            out,
            Op::W2Rows {
                mp,
                lp,
                mq,
                lq,
                squared,
            },
            ng,
        ))
    }

    /// Elementwise `max(0, margin + x)`.
    pub fn hinge(&mut self, x: Var, margin: f64) -> Var {
        let mut out = self.value(x).clone();
        let mut km = f64::INFINITY;
        for v in out.values_mut() {
            let h = margin + *v;
            km = km.min(h.abs());
            *v = h.max(0.0);
        }
        self.touch_kink(km);
        let ng = self.ng(x);
        self.push(out, Op::Hinge { x, margin }, ng)
    }

    /// Mean over every element; output is a scalar.
    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let m = if t.is_empty() {
            0.0
        } else {
            t.values().iter().sum::<f64>() / t.len() as f64
        };
        let ng = self.ng(x);
        self.push(Tensor::scalar(m), Op::Mean(x), ng)
    }

    pub fn gather_rows(&mut self, src: Var, idx: Vec<usize>) -> Result<Var> {
        let t = self.value(src);
        if let Some(&bad) = idx.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::InvalidArgument(format!(
                "gather index {bad} out of range for {} rows",
                t.rows()
            )));
        }
        let out = t.select_rows(&idx);
        let ng = self.ng(src);
        Ok(self.push(out, Op::GatherRows { src, idx }, ng))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.cols() {
            return Err(Error::ShapeMismatch {
                context: "concat_rows",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let mut values = ta.values().to_vec();
        values.extend_from_slice(tb.values());
        let out = Tensor::from_vec(vec![ta.rows() + tb.rows(), ta.cols()], values)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::ConcatRows(a, b), ng))
    }

    /// Mean softmax cross-entropy of `logits[n, k]` against class indices.
    pub fn softmax_xent(&mut self, logits: Var, labels: Vec<usize>) -> Result<Var> {
        let t = self.value(logits);
        let (n, k) = (t.rows(), t.cols());
        if labels.len() != n {
            return Err(Error::DimensionMismatch {
                context: "softmax_xent",
                expected: n,
                found: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {k} classes"
            )));
        }
        let mut probs = t.clone();
        let mut loss = 0.0;
        for (r, row) in probs.values_mut().chunks_mut(k).enumerate() {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
            loss -= row[labels[r]].max(f64::MIN_POSITIVE).ln();
        }
        let loss = if n == 0 { 0.0 } else { loss / n as f64 };
        let ng = self.ng(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxXent {
                logits,
                labels,
                probs,
            },
            ng,
        ))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(lt.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.backprop_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let acc = |v: Var, t: Tensor, grads: &mut [Option<Tensor>]| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(e) => e.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    acc(*a, gemm(g, false, self.value(*b), true), grads);
                }
                if self.ng(*b) {
                    acc(*b, gemm(self.value(*a), true, g, false), grads);
                }
            }
            Op::AddRowBias(x, b) => {
                if self.ng(*x) {
                    acc(*x, g.clone(), grads);
                }
                if self.ng(*b) {
                    let c = g.cols();
                    let mut db = Tensor::zeros(&[1, c]);
                    for row in g.values().chunks(c) {
                        for (d, v) in db.values_mut().iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    acc(*b, db, grads);
                }
            }
            Op::Relu(x) => {
                let mut d = g.clone();
                for (dv, xv) in d.values_mut().iter_mut().zip(self.value(*x).values()) {
                    if *xv <= 0.0 {
                        *dv = 0.0;
                    }
                }
                acc(*x, d, grads);
            }
            Op::Tanh(x) => {
                let mut d = g.clone();
                for (dv, y) in d.values_mut().iter_mut().zip(node.value.values()) {
                    *dv *= 1.0 - y * y;
                }
                acc(*x, d, grads);
            }
            Op::Clamp { x, lo, hi } => {
                let mut d = g.clone();
                for (dv, xv) in d.values_mut().iter_mut().zip(self.value(*x).values()) {
                    if *xv < *lo || *xv > *hi {
                        *dv = 0.0;
                    }
                }
                acc(*x, d, grads);
            }
            Op::Add(a, b) => {
                acc(*a, g.clone(), grads);
                acc(*b, g.clone(), grads);
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone(), grads);
                let mut d = g.clone();
                d.values_mut().iter_mut().for_each(|v| *v = -*v);
                acc(*b, d, grads);
            }
            Op::Scale(x, c) => {
                let mut d = g.clone();
                d.values_mut().iter_mut().for_each(|v| *v *= c);
                acc(*x, d, grads);
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    let mut d = g.clone();
                    for (dv, bv) in d.values_mut().iter_mut().zip(self.value(*b).values()) {
                        *dv *= bv;
                    }
                    acc(*a, d, grads);
                }
                if self.ng(*b) {
                    let mut d = g.clone();
                    for (dv, av) in d.values_mut().iter_mut().zip(self.value(*a).values()) {
                        *dv *= av;
                    }
                    acc(*b, d, grads);
                }
            }
            Op::Sum(x) => {
                let t = self.value(*x);
                acc(*x, Tensor::filled(t.shape(), g.item()), grads);
            }
            Op::Reparam {
                mean,
                log_var,
                noise,
            } => {
                acc(*mean, g.clone(), grads);
                if self.ng(*log_var) {
                    let mut d = g.clone();
                    for ((dv, lv), n) in d
                        .values_mut()
                        .iter_mut()
                        .zip(self.value(*log_var).values())
                        .zip(noise.values())
                    {
                        *dv *= 0.5 * (0.5 * lv).exp() * n;
                    }
                    acc(*log_var, d, grads);
                }
            }
            Op::L1 { a, b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let scale = g.item() / ta.rows().max(1) as f64;
                let mut d = Tensor::zeros(ta.shape());
                for ((dv, x), y) in d.values_mut().iter_mut().zip(ta.values()).zip(tb.values()) {
                    // Subgradient 0 at ties.
                    *dv = if x > y {
                        scale
                    } else if x < y {
                        -scale
                    } else {
                        0.0
                    };
                }
                if self.ng(*b) {
                    let mut nd = d.clone();
                    nd.values_mut().iter_mut().for_each(|v| *v = -*v);
                    acc(*b, nd, grads);
                }
                acc(*a, d, grads);
            }
            Op::KlRows { mp, lp, mq, lq } => {
                let d = self.value(*mp).cols();
                let shape = self.value(*mp).shape().to_vec();
                let (vmp, vlp, vmq, vlq) = (
                    self.value(*mp).values(),
                    self.value(*lp).values(),
                    self.value(*mq).values(),
                    self.value(*lq).values(),
                );
                let mut dmp = Tensor::zeros(&shape);
                let mut dlp = Tensor::zeros(&shape);
                let mut dmq = Tensor::zeros(&shape);
                let mut dlq = Tensor::zeros(&shape);
                for (r, gr) in g.values().iter().enumerate() {
                    for j in r * d..(r + 1) * d {
                        let inv_q = (-vlq[j]).exp();
                        let ratio = (vlp[j] - vlq[j]).exp();
                        let diff = vmp[j] - vmq[j];
                        dmp.values_mut()[j] = gr * diff * inv_q;
                        dmq.values_mut()[j] = -gr * diff * inv_q;
                        dlp.values_mut()[j] = gr * 0.5 * (ratio - 1.0);
                        dlq.values_mut()[j] = gr * 0.5 * (1.0 - ratio - diff * diff * inv_q);
                    }
                }
                acc(*mp, dmp, grads);
                acc(*lp, dlp, grads);
                acc(*mq, dmq, grads);
                acc(*lq, dlq, grads);
            }
            Op::W2Rows {
                mp,
                lp,
                mq,
                lq,
                squared,
            } => {
                let d = self.value(*mp).cols();
                let shape = self.value(*mp).shape().to_vec();
                let (vmp, vlp, vmq, vlq) = (
                    self.value(*mp).values(),
                    self.value(*lp).values(),
                    self.value(*mq).values(),
                    self.value(*lq).values(),
                );
                let mut dmp = Tensor::zeros(&shape);
                let mut dlp = Tensor::zeros(&shape);
                let mut dmq = Tensor::zeros(&shape);
                let mut dlq = Tensor::zeros(&shape);
                for (r, gr) in g.values().iter().enumerate() {
                    let out = node.value.values()[r];
                    // d out / d s, with s the squared distance.
                    let ds_scale = if *squared {
                        1.0
                    } else if out > 0.0 {
                        0.5 / out
                    } else {
                        0.0
                    };
                    for j in r * d..(r + 1) * d {
                        let sp = (0.5 * vlp[j]).exp();
                        let sq = (0.5 * vlq[j]).exp();
                        let dm = 2.0 * (vmp[j] - vmq[j]) * ds_scale * gr;
                        let dsig = 2.0 * (sp - sq) * ds_scale * gr;
                        dmp.values_mut()[j] = dm;
                        dmq.values_mut()[j] = -dm;
                        dlp.values_mut()[j] = dsig * 0.5 * sp;
                        dlq.values_mut()[j] = -dsig * 0.5 * sq;
                    }
                }
                acc(*mp, dmp, grads);
                acc(*lp, dlp, grads);
                acc(*mq, dmq, grads);
                acc(*lq, dlq, grads);
            }
            Op::Hinge { x, margin } => {
                let mut d = g.clone();
                for (dv, xv) in d.values_mut().iter_mut().zip(self.value(*x).values()) {
                    // Zero at the hinge point itself.
                    if margin + xv <= 0.0 {
                        *dv = 0.0;
                    }
                }
                acc(*x, d, grads);
            }
            Op::Mean(x) => {
                let t = self.value(*x);
                let v = if t.is_empty() {
                    0.0
                } else {
                    g.item() / t.len() as f64
                };
                acc(*x, Tensor::filled(t.shape(), v), grads);
            }
            Op::GatherRows { src, idx } => {
                let t = self.value(*src);
                let c = t.cols();
                let mut d = Tensor::zeros(t.shape());
                for (k, &i) in idx.iter().enumerate() {
                    let gr = &g.values()[k * c..(k + 1) * c];
                    for (dv, gv) in d.values_mut()[i * c..(i + 1) * c].iter_mut().zip(gr) {
                        *dv += gv;
                    }
                }
                acc(*src, d, grads);
            }
            Op::ConcatRows(a, b) => {
                let ta = self.value(*a);
                let split = ta.len();
                let c = ta.cols();
                let da = Tensor::from_vec(ta.shape().to_vec(), g.values()[..split].to_vec())
                    .expect("concat split");
                let rows_b = (g.len() - split) / c.max(1);
                let db = Tensor::from_vec(vec![rows_b, c], g.values()[split..].to_vec())
                    .expect("concat split");
                acc(*a, da, grads);
                acc(*b, db, grads);
            }
            Op::SoftmaxXent {
                logits,
                labels,
                probs,
            } => {
                let n = labels.len().max(1) as f64;
                let k = probs.cols();
                let mut d = probs.clone();
                for (r, &l) in labels.iter().enumerate() {
                    d.values_mut()[r * k + l] -= 1.0;
                }
                let s = g.item() / n;
                d.values_mut().iter_mut().for_each(|v| *v *= s);
                acc(*logits, d, grads);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_gradient() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::from_vec(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap());
        let sq = tape.mul(w, w).unwrap();
        let s = tape.sum(sq);
        let g = tape.backward(s).unwrap();
        assert_eq!(tape.value(s).item(), 14.0);
        assert_eq!(g.get(w).unwrap().values(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::zeros(&[2, 2]));
        assert!(matches!(tape.backward(w), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::scalar(2.0));
        let b = tape.param(Tensor::scalar(3.0));
        let s = tape.sub(a, b).unwrap();
        let g = tape.backward(s).unwrap();
        assert!(g.get(a).is_none());
        assert_eq!(g.get(b).unwrap().item(), -1.0);
    }

    #[test]
    fn gather_scatter_adds_repeated_rows() {
        let mut tape = Tape::new();
        let src = tape.param(Tensor::from_vec(vec![2, 1], vec![1.0, 2.0]).unwrap());
        let gth = tape.gather_rows(src, vec![0, 0, 1]).unwrap();
        let m = tape.mean(gth);
        let g = tape.backward(m).unwrap();
        assert_eq!(g.get(src).unwrap().values(), &[2.0 / 3.0, 1.0 / 3.0]);
        assert!(tape.gather_rows(src, vec![2]).is_err());
    }

    #[test]
    fn hinge_boundary_has_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(-1.0));
        let h = tape.hinge(x, 1.0);
        let g = tape.backward(h).unwrap();
        assert_eq!(tape.value(h).item(), 0.0);
        assert_eq!(g.get(x).unwrap().item(), 0.0);
        assert_eq!(tape.kink_margin(), 0.0);
    }
}
