//! Define-by-run reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Tape`] is built fresh for every forward pass. Nodes are appended in
//! evaluation order, so parents always precede children and the backward sweep
//! is a single reverse pass over the node list. Gradients are accumulated, so
//! a node consumed twice receives the sum of both contributions.

use rand::Rng as _;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Elu(Var),
    /// Entries are 0 or the inverted-dropout survivor scale.
    Dropout(Var, Vec<f64>),
    Rows(Var, Vec<usize>),
    Mse(Var, Var),
    L1Mean(Var, Var),
    SoftmaxCrossEntropy(Var, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

#[derive(Debug, Default)]
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn grad_flag(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A leaf whose gradient is tracked (a trainable parameter).
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// A leaf treated as a constant; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.grad_flag(&[a, b]);
        Ok(self.push(Op::MatMul(a, b), value, rg))
    }

    /// `x + 1·bias` where `bias` is a single row broadcast over the rows of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(Error::Dimension(format!(
                "bias {}x{} for input {}x{}",
                bv.rows(),
                bv.cols(),
                xv.rows(),
                xv.cols()
            )));
        }
        let mut value = xv.clone();
        let cols = value.cols();
        for (i, v) in value.data_mut().iter_mut().enumerate() {
            *v += bv.data()[i % cols];
        }
        let rg = self.grad_flag(&[x, bias]);
        Ok(self.push(Op::AddBias(x, bias), value, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.value(a).same_shape(self.value(b), "add")?;
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        let rg = self.grad_flag(&[a, b]);
        Ok(self.push(Op::Add(a, b), value, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.value(a).same_shape(self.value(b), "sub")?;
        let bv = self.value(b).data().to_vec();
        let mut value = self.value(a).clone();
        for (x, y) in value.data_mut().iter_mut().zip(bv) {
            *x -= y;
        }
        let rg = self.grad_flag(&[a, b]);
        Ok(self.push(Op::Sub(a, b), value, rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|v| v * c);
        let rg = self.grad_flag(&[a]);
        self.push(Op::Scale(a, c), value, rg)
    }

    /// Sum of a list of scalar nodes.
    pub fn sum(&mut self, terms: &[Var]) -> Result<Var> {
        let (&first, rest) = terms
            .split_first()
            .ok_or_else(|| Error::Domain("sum of no terms".into()))?;
        rest.iter().try_fold(first, |acc, &t| self.add(acc, t))
    }

    pub fn elu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(elu);
        let rg = self.grad_flag(&[x]);
        self.push(Op::Elu(x), value, rg)
    }

    /// Inverted dropout. Outside training, or with `p == 0`, returns `x` itself.
    pub fn dropout(&mut self, x: Var, p: f64, training: bool, rng: &mut Rng) -> Result<Var> {
        check_dropout(p)?;
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let n = self.value(x).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let mut value = self.value(x).clone();
        for (v, m) in value.data_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
        let rg = self.grad_flag(&[x]);
        Ok(self.push(Op::Dropout(x, mask), value, rg))
    }

    pub fn rows(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if let Some(&bad) = indices.iter().find(|&&i| i >= xv.rows()) {
            return Err(Error::Dimension(format!(
                "row {bad} out of range for {} rows",
                xv.rows()
            )));
        }
        let value = xv.select_rows(indices);
        let rg = self.grad_flag(&[x]);
        Ok(self.push(Op::Rows(x, indices.to_vec()), value, rg))
    }

    /// Mean squared difference, as a 1x1 node.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        p.same_shape(t, "mse")?;
        if p.is_empty() {
            return Err(Error::Domain("mse of empty input".into()));
        }
        let n = p.len() as f64;
        let s: f64 = p.data().iter().zip(t.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        let rg = self.grad_flag(&[pred, target]);
        Ok(self.push(Op::Mse(pred, target), Tensor::scalar(s / n), rg))
    }

    /// Mean absolute difference, as a 1x1 node. The subgradient at ties is 0.
    pub fn l1_mean(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        av.same_shape(bv, "l1")?;
        if av.is_empty() {
            return Err(Error::Domain("l1 distance of empty input".into()));
        }
        let n = av.len() as f64;
        let s: f64 = av.data().iter().zip(bv.data()).map(|(x, y)| (x - y).abs()).sum();
        let rg = self.grad_flag(&[a, b]);
        Ok(self.push(Op::L1Mean(a, b), Tensor::scalar(s / n), rg))
    }

    /// Mean softmax cross-entropy of row logits against class labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.rows() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} labels for {} logit rows",
                labels.len(),
                lv.rows()
            )));
        }
        if lv.rows() == 0 {
            return Err(Error::Domain("cross-entropy of empty input".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&c| c >= lv.cols()) {
            return Err(Error::Dimension(format!(
                "label {bad} for {} classes",
                lv.cols()
            )));
        }
        let mut total = 0.0;
        for (i, &c) in labels.iter().enumerate() {
            let row = lv.row(i);
            total += log_sum_exp(row) - row[c];
        }
        let value = Tensor::scalar(total / labels.len() as f64);
        let rg = self.grad_flag(&[logits]);
        Ok(self.push(
            Op::SoftmaxCrossEntropy(logits, labels.to_vec()),
            value,
            rg,
        ))
    }

    /// Reverse sweep from a 1x1 root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).shape() != (1, 1) {
            return Err(Error::Dimension(format!(
                "backward from a non-scalar {:?} root",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let mut send = |v: Var, contrib: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&contrib),
                slot => *slot = Some(contrib),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.nodes[a.0].requires_grad {
                    send(*a, g.matmul_t(self.value(*b))?);
                }
                if self.nodes[b.0].requires_grad {
                    send(*b, self.value(*a).t_matmul(g)?);
                }
            }
            Op::AddBias(x, b) => {
                send(*x, g.clone());
                if self.nodes[b.0].requires_grad {
                    let cols = g.cols();
                    let mut db = Tensor::zeros(1, cols);
                    for r in 0..g.rows() {
                        for (d, v) in db.data_mut().iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                    send(*b, db);
                }
            }
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::Sub(a, b) => {
                send(*a, g.clone());
                send(*b, g.map(|v| -v));
            }
            Op::Scale(a, c) => send(*a, g.map(|v| v * c)),
            Op::Elu(x) => {
                let xv = self.value(*x);
                let mut d = g.clone();
                for (dv, &xi) in d.data_mut().iter_mut().zip(xv.data()) {
                    if xi <= 0.0 {
                        *dv *= xi.exp();
                    }
                }
                send(*x, d);
            }
            Op::Dropout(x, mask) => {
                let mut d = g.clone();
                for (dv, m) in d.data_mut().iter_mut().zip(mask) {
                    *dv *= m;
                }
                send(*x, d);
            }
            Op::Rows(x, indices) => {
                let xv = self.value(*x);
                let mut d = Tensor::zeros(xv.rows(), xv.cols());
                let cols = xv.cols();
                for (k, &i) in indices.iter().enumerate() {
                    let src = g.row(k);
                    for (dst, s) in d.data_mut()[i * cols..(i + 1) * cols].iter_mut().zip(src) {
                        *dst += s;
                    }
                }
                send(*x, d);
            }
            Op::Mse(p, t) => {
                let (pv, tv) = (self.value(*p), self.value(*t));
                let scale = 2.0 * g.item() / pv.len() as f64;
                let diff: Vec<f64> = pv
                    .data()
                    .iter()
                    .zip(tv.data())
                    .map(|(a, b)| scale * (a - b))
                    .collect();
                let d = Tensor::new(pv.rows(), pv.cols(), diff)?;
                if self.nodes[t.0].requires_grad {
                    send(*t, d.map(|v| -v));
                }
                send(*p, d);
            }
            Op::L1Mean(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let scale = g.item() / av.len() as f64;
                let sign: Vec<f64> = av
                    .data()
                    .iter()
                    .zip(bv.data())
                    .map(|(x, y)| {
                        let r = x - y;
                        if r > 0.0 {
                            scale
                        } else if r < 0.0 {
                            -scale
                        } else {
                            0.0
                        }
                    })
                    .collect();
                let d = Tensor::new(av.rows(), av.cols(), sign)?;
                if self.nodes[b.0].requires_grad {
                    send(*b, d.map(|v| -v));
                }
                send(*a, d);
            }
            Op::SoftmaxCrossEntropy(logits, labels) => {
                let lv = self.value(*logits);
                let scale = g.item() / labels.len() as f64;
                let mut d = Tensor::zeros(lv.rows(), lv.cols());
                for (i, &c) in labels.iter().enumerate() {
                    let row = lv.row(i);
                    let lse = log_sum_exp(row);
                    for (j, &z) in row.iter().enumerate() {
                        let p = (z - lse).exp();
                        let target = if j == c { 1.0 } else { 0.0 };
                        d.set(i, j, scale * (p - target));
                    }
                }
                send(*logits, d);
            }
        }
        Ok(())
    }
}

/// Per-node gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of `v`, or `None` if the root does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, zero-filled to `shape` if unreached.
    pub fn wrt(&self, v: Var, shape: (usize, usize)) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(shape.0, shape.1))
    }
}

pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

pub(crate) fn check_dropout(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!("dropout probability {p} not in [0, 1)")));
    }
    Ok(())
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|z| (z - m).exp()).sum::<f64>().ln()
}
