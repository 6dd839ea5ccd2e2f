//! Reverse-mode differentiation over vector-valued nodes.
//!
//! Nodes are appended in evaluation order, so a single reverse sweep visits
//! every node after all of its consumers. Parameter gradients are accumulated
//! straight into a [`ParameterSet`]-shaped buffer.

use std::f64::consts::PI;

use super::params::{Param, ParameterSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(Param),
    /// `w[:, col0..col0+len(x)] · x + b`
    Affine { w: Param, col0: usize, b: Option<Param>, x: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    OneMinus(Var),
    MulConst(Var, Vec<f64>),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Softplus(Var),
    Sqrt(Var),
    Concat(Vec<Var>),
    DotParam { v: Param, x: Var },
    Softmax(Var),
    WeightedSum { weights: Var, items: Vec<Var> },
    GaussLogLik { mu: Var, y: Vec<f64> },
    KlDiag { mq: Var, vq: Var, mp: Var, vp: Var },
    Sum(Vec<Var>),
}

struct Node {
    value: Vec<f64>,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p ParameterSet,
    nodes: Vec<Node>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn accumulate(slot: &mut Vec<f64>, len: usize, f: impl Fn(usize) -> f64) {
    if slot.is_empty() {
        *slot = vec![0.0; len];
    }
    for (i, s) in slot.iter_mut().enumerate() {
        *s += f(i);
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParameterSet) -> Self {
        Self { params, nodes: Vec::with_capacity(512) }
    }

    pub fn params(&self) -> &'p ParameterSet {
        self.params
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, p: Param) -> Var {
        let value = self.params.get(p).data.clone();
        self.push(value, Op::Param(p))
    }

    pub fn affine(&mut self, w: Param, b: Option<Param>, x: Var) -> Var {
        self.affine_cols(w, 0, b, x)
    }

    /// Multiplies `x` by the column block of `w` starting at `col0`.
    pub fn affine_cols(&mut self, w: Param, col0: usize, b: Option<Param>, x: Var) -> Var {
        let wt = self.params.get(w);
        let cols = wt.cols();
        let xv = &self.nodes[x.0].value;
        debug_assert!(col0 + xv.len() <= cols, "{}: block out of range", w.name());
        let mut out: Vec<f64> = match b {
            Some(b) => self.params.get(b).data.clone(),
            None => vec![0.0; wt.rows()],
        };
        for (r, o) in out.iter_mut().enumerate() {
            let row = &wt.data[r * cols + col0..r * cols + col0 + xv.len()];
            *o += row.iter().zip(xv).map(|(a, b)| a * b).sum::<f64>();
        }
        self.push(out, Op::Affine { w, col0, b, x })
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let value = self.nodes[a.0].value.iter().zip(&self.nodes[b.0].value).map(|(&x, &y)| f(x, y)).collect();
        self.push(value, op)
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.nodes[a.0].value.iter().map(|&x| f(x)).collect();
        self.push(value, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.map(a, |x| x * k, Op::Scale(a, k))
    }

    pub fn add_const(&mut self, a: Var, k: f64) -> Var {
        self.map(a, |x| x + k, Op::AddConst(a))
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        self.map(a, |x| 1.0 - x, Op::OneMinus(a))
    }

    pub fn mul_const(&mut self, a: Var, k: Vec<f64>) -> Var {
        let value = self.nodes[a.0].value.iter().zip(&k).map(|(x, y)| x * y).collect();
        self.push(value, Op::MulConst(a, k))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.map(a, softplus, Op::Softplus(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.map(a, f64::sqrt, Op::Sqrt(a))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let value = parts.iter().flat_map(|p| self.nodes[p.0].value.iter().copied()).collect();
        self.push(value, Op::Concat(parts.to_vec()))
    }

    pub fn dot_param(&mut self, v: Param, x: Var) -> Var {
        let s = self.params.get(v).data.iter().zip(&self.nodes[x.0].value).map(|(a, b)| a * b).sum();
        self.push(vec![s], Op::DotParam { v, x })
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let x = &self.nodes[a.0].value;
        let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
        let z: f64 = e.iter().sum();
        self.push(e.into_iter().map(|v| v / z).collect(), Op::Softmax(a))
    }

    pub fn weighted_sum(&mut self, weights: Var, items: &[Var]) -> Var {
        let w = &self.nodes[weights.0].value;
        let mut out = vec![0.0; self.nodes[items[0].0].value.len()];
        for (wi, item) in w.iter().zip(items) {
            for (o, v) in out.iter_mut().zip(&self.nodes[item.0].value) {
                *o += wi * v;
            }
        }
        self.push(out, Op::WeightedSum { weights, items: items.to_vec() })
    }

    /// `log N(y | mu, I)` including the normalizing constant.
    pub fn gauss_loglik(&mut self, mu: Var, y: Vec<f64>) -> Var {
        let m = &self.nodes[mu.0].value;
        let sq: f64 = m.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum();
        let n = y.len() as f64;
        self.push(vec![-0.5 * sq - 0.5 * n * (2.0 * PI).ln()], Op::GaussLogLik { mu, y })
    }

    /// `KL(N(mq, vq) || N(mp, vp))` for diagonal Gaussians given by variances.
    pub fn kl_diag(&mut self, mq: Var, vq: Var, mp: Var, vp: Var) -> Var {
        let kl = super::kl_terms(self.value(mq), self.value(vq), self.value(mp), self.value(vp));
        self.push(vec![kl], Op::KlDiag { mq, vq, mp, vp })
    }

    pub fn sum(&mut self, parts: &[Var]) -> Var {
        let s = parts.iter().map(|p| self.nodes[p.0].value[0]).sum();
        self.push(vec![s], Op::Sum(parts.to_vec()))
    }

    /// Propagates `seed` (the adjoint of scalar node `out`) back through the
    /// tape, adding parameter gradients into `grads`. Returns the adjoints of
    /// leaf nodes.
    pub fn backward(&self, out: Var, seed: f64, grads: &mut ParameterSet) -> LeafAdjoints {
        let mut adj: Vec<Vec<f64>> = vec![Vec::new(); out.0 + 1];
        adj[out.0] = vec![seed; self.nodes[out.0].value.len()];
        for i in (0..=out.0).rev() {
            let g = std::mem::take(&mut adj[i]);
            if g.is_empty() {
                continue;
            }
            let node = &self.nodes[i];
            let val = &node.value;
            match &node.op {
                Op::Leaf => adj[i] = g,
                Op::Param(p) => {
                    grads.get_mut(*p).data.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                }
                Op::Affine { w, col0, b, x } => {
                    let wt = self.params.get(*w);
                    let cols = wt.cols();
                    let xv = &self.nodes[x.0].value;
                    let n = xv.len();
                    let mut gx = vec![0.0; n];
                    {
                        let gw = &mut grads.get_mut(*w).data;
                        for (r, &gr) in g.iter().enumerate() {
                            if gr == 0.0 {
                                continue;
                            }
                            let base = r * cols + col0;
                            let wrow = &wt.data[base..base + n];
                            let gwrow = &mut gw[base..base + n];
                            for j in 0..n {
                                gwrow[j] += gr * xv[j];
                                gx[j] += gr * wrow[j];
                            }
                        }
                    }
                    if let Some(b) = b {
                        grads.get_mut(*b).data.iter_mut().zip(&g).for_each(|(a, v)| *a += v);
                    }
                    accumulate(&mut adj[x.0], n, |j| gx[j]);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj[a.0], g.len(), |j| g[j]);
                    accumulate(&mut adj[b.0], g.len(), |j| g[j]);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj[a.0], g.len(), |j| g[j]);
                    accumulate(&mut adj[b.0], g.len(), |j| -g[j]);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    accumulate(&mut adj[a.0], g.len(), |j| g[j] * bv[j]);
                    accumulate(&mut adj[b.0], g.len(), |j| g[j] * av[j]);
                }
                Op::Scale(a, k) => accumulate(&mut adj[a.0], g.len(), |j| g[j] * k),
                Op::AddConst(a) => accumulate(&mut adj[a.0], g.len(), |j| g[j]),
                Op::OneMinus(a) => accumulate(&mut adj[a.0], g.len(), |j| -g[j]),
                Op::MulConst(a, k) => accumulate(&mut adj[a.0], g.len(), |j| g[j] * k[j]),
                Op::Tanh(a) => accumulate(&mut adj[a.0], g.len(), |j| g[j] * (1.0 - val[j] * val[j])),
                Op::Sigmoid(a) => accumulate(&mut adj[a.0], g.len(), |j| g[j] * val[j] * (1.0 - val[j])),
                Op::Relu(a) => {
                    let x = &self.nodes[a.0].value;
                    accumulate(&mut adj[a.0], g.len(), |j| if x[j] > 0.0 { g[j] } else { 0.0 })
                }
                Op::Softplus(a) => {
                    let x = &self.nodes[a.0].value;
                    accumulate(&mut adj[a.0], g.len(), |j| g[j] * sigmoid(x[j]))
                }
                Op::Sqrt(a) => accumulate(&mut adj[a.0], g.len(), |j| g[j] * 0.5 / val[j]),
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = self.nodes[p.0].value.len();
                        accumulate(&mut adj[p.0], n, |j| g[off + j]);
                        off += n;
                    }
                }
                Op::DotParam { v, x } => {
                    let xv = &self.nodes[x.0].value;
                    let vv = &self.params.get(*v).data;
                    grads.get_mut(*v).data.iter_mut().zip(xv).for_each(|(a, b)| *a += g[0] * b);
                    accumulate(&mut adj[x.0], xv.len(), |j| g[0] * vv[j]);
                }
                Op::Softmax(a) => {
                    let dotp: f64 = val.iter().zip(&g).map(|(s, gi)| s * gi).sum();
                    accumulate(&mut adj[a.0], g.len(), |j| val[j] * (g[j] - dotp));
                }
                Op::WeightedSum { weights, items } => {
                    let w = &self.nodes[weights.0].value;
                    let gw: Vec<f64> = items
                        .iter()
                        .map(|it| self.nodes[it.0].value.iter().zip(&g).map(|(a, b)| a * b).sum())
                        .collect();
                    accumulate(&mut adj[weights.0], w.len(), |j| gw[j]);
                    for (wi, it) in w.iter().zip(items) {
                        accumulate(&mut adj[it.0], g.len(), |j| wi * g[j]);
                    }
                }
                Op::GaussLogLik { mu, y } => {
                    let m = &self.nodes[mu.0].value;
                    accumulate(&mut adj[mu.0], m.len(), |j| g[0] * (y[j] - m[j]));
                }
                Op::KlDiag { mq, vq, mp, vp } => {
                    let (a, b) = (&self.nodes[mq.0].value, &self.nodes[vq.0].value);
                    let (c, d) = (&self.nodes[mp.0].value, &self.nodes[vp.0].value);
                    let n = a.len();
                    accumulate(&mut adj[mq.0], n, |j| g[0] * (a[j] - c[j]) / d[j]);
                    accumulate(&mut adj[mp.0], n, |j| -g[0] * (a[j] - c[j]) / d[j]);
                    accumulate(&mut adj[vq.0], n, |j| g[0] * 0.5 * (1.0 / d[j] - 1.0 / b[j]));
                    accumulate(&mut adj[vp.0], n, |j| {
                        let diff = a[j] - c[j];
                        g[0] * 0.5 * (1.0 / d[j] - (b[j] + diff * diff) / (d[j] * d[j]))
                    });
                }
                Op::Sum(parts) => {
                    for p in parts {
                        accumulate(&mut adj[p.0], 1, |_| g[0]);
                    }
                }
            }
        }
        LeafAdjoints(adj)
    }
}

/// Adjoints of the leaf nodes after a backward sweep.
pub struct LeafAdjoints(Vec<Vec<f64>>);

impl LeafAdjoints {
    /// Gradient with respect to `leaf`; `None` when the output does not depend on it.
    pub fn get(&self, leaf: Var) -> Option<&[f64]> {
        self.0.get(leaf.0).filter(|g| !g.is_empty()).map(Vec::as_slice)
    }
}
