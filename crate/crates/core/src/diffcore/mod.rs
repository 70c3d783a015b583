//! Reverse-mode differentiation over the fixed layer set the model needs.
//!
//! A [`Tape`] records one forward computation. Every op stores what its
//! backward pass needs; [`Tape::backward`] walks the record in reverse and
//! accumulates parameter gradients into a [`ParamStore`]. Parameters that
//! are not marked trainable enter the tape as constants, so frozen weights
//! cost no gradient work.

mod adam;
mod checkpoint;
mod params;

pub use adam::{adam_step, AdamConfig, AdamState, Moments, WeightDecay};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, Checkpoint};
pub use params::{ParamStore, Parameter};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::Graph;
use crate::tensor::{self, Tensor2};
use crate::{Error, Result};

pub const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<'g> {
    Constant,
    Param(String),
    Affine {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    MatMul {
        a: Var,
        b: Var,
    },
    MatMulNt {
        a: Var,
        b: Var,
    },
    Sage {
        h: Var,
        w_self: Var,
        w_neigh: Var,
        graph: &'g Graph,
        mean: Tensor2,
    },
    Relu {
        x: Var,
    },
    RowNormalize {
        x: Var,
        norms: Vec<f64>,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    Concat {
        parts: Vec<Var>,
    },
    Scale {
        x: Var,
        s: f64,
    },
}

struct Node<'g> {
    value: Tensor2,
    op: Op<'g>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape<'g> {
    nodes: Vec<Node<'g>>,
}

/// Row-wise mean of neighbor rows; zero for isolated nodes.
pub fn neighbor_mean(graph: &Graph, h: &Tensor2) -> Tensor2 {
    let mut out = Tensor2::zeros(h.rows(), h.cols());
    for i in 0..h.rows() {
        let nbrs = graph.neighbors(i);
        if nbrs.is_empty() {
            continue;
        }
        let inv = 1.0 / nbrs.len() as f64;
        let dst = out.row_mut(i);
        for &j in nbrs {
            for (d, s) in dst.iter_mut().zip(h.row(j)) {
                *d += s;
            }
        }
        dst.iter_mut().for_each(|d| *d *= inv);
    }
    out
}

/// Adjoint of [`neighbor_mean`]: row `j` collects `g_i / deg(i)` from every
/// neighbor `i`.
fn neighbor_mean_adjoint(graph: &Graph, g: &Tensor2, out: &mut Tensor2) {
    for i in 0..g.rows() {
        let nbrs = graph.neighbors(i);
        if nbrs.is_empty() {
            continue;
        }
        let inv = 1.0 / nbrs.len() as f64;
        for &j in nbrs {
            let src = g.row(i);
            for (d, s) in out.row_mut(j).iter_mut().zip(src) {
                *d += s * inv;
            }
        }
    }
}

fn check_cols(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Dimension(format!(
            "{what}: {got} columns, expected {want}"
        )));
    }
    Ok(())
}

impl<'g> Tape<'g> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor2, op: Op<'g>, requires_grad: bool) -> Var {
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

    pub fn value(&self, v: Var) -> &Tensor2 {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, value: Tensor2) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Reads `name` from the store. Trainable parameters receive gradients
    /// on [`Tape::backward`]; the rest are treated as constants.
    pub fn param(&mut self, store: &ParamStore, name: &str, trainable: bool) -> Result<Var> {
        let p = store
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))?;
        let op = if trainable {
            Op::Param(name.to_string())
        } else {
            Op::Constant
        };
        Ok(self.push(p.value.clone(), op, trainable))
    }

    /// `x * w + b`
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let mut out = tensor::matmul(self.value(x), self.value(w))?;
        if let Some(b) = b {
            let bias = self.value(b);
            if bias.rows() != 1 || bias.cols() != out.cols() {
                return Err(Error::Dimension(format!(
                    "bias is {}x{}, expected 1x{}",
                    bias.rows(),
                    bias.cols(),
                    out.cols()
                )));
            }
            for i in 0..out.rows() {
                for (o, bb) in out.row_mut(i).iter_mut().zip(bias.data()) {
                    *o += bb;
                }
            }
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(out, Op::Affine { x, w, b }, rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul(self.value(a), self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul { a, b }, rg))
    }

    /// `a * b^T`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul_nt(self.value(a), self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMulNt { a, b }, rg))
    }

    /// `h_i W_self + mean_{j in adj(i)} h_j W_neigh`, without activation.
    pub fn sage_linear(&mut self, h: Var, graph: &'g Graph, w_self: Var, w_neigh: Var) -> Result<Var> {
        let hv = self.value(h);
        if hv.rows() != graph.node_count() {
            return Err(Error::Dimension(format!(
                "{} feature rows for {} nodes",
                hv.rows(),
                graph.node_count()
            )));
        }
        let mean = neighbor_mean(graph, hv);
        let mut out = tensor::matmul(hv, self.value(w_self))?;
        tensor::matmul_acc(&mean, self.value(w_neigh), &mut out)?;
        let rg = self.rg(h) || self.rg(w_self) || self.rg(w_neigh);
        Ok(self.push(
            out,
            Op::Sage {
                h,
                w_self,
                w_neigh,
                graph,
                mean,
            },
            rg,
        ))
    }

    /// GraphSAGE mean-aggregator layer with ReLU.
    pub fn sage_layer(&mut self, h: Var, graph: &'g Graph, w_self: Var, w_neigh: Var) -> Result<Var> {
        let lin = self.sage_linear(h, graph, w_self, w_neigh)?;
        Ok(self.relu(lin))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        let rg = self.rg(x);
        self.push(out, Op::Relu { x }, rg)
    }

    /// Each row divided by `max(‖row‖, 1e-12)`.
    pub fn row_l2_normalize(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut out = xv.clone();
        let mut norms = Vec::with_capacity(xv.rows());
        for i in 0..xv.rows() {
            let n = tensor::l2_norm(xv.row(i)).max(NORM_FLOOR);
            out.row_mut(i).iter_mut().for_each(|v| *v /= n);
            norms.push(n);
        }
        let rg = self.rg(x);
        self.push(out, Op::RowNormalize { x, norms }, rg)
    }

    /// Inverted dropout. The mask depends only on `seed`; identity when not
    /// training or when `rate` is zero.
    pub fn dropout(&mut self, x: Var, rate: f64, training: bool, seed: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep = 1.0 / (1.0 - rate);
        let xv = self.value(x);
        let mask: Vec<f64> = (0..xv.data().len())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let data = xv.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let out = Tensor2::from_vec(xv.rows(), xv.cols(), data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Dropout { x, mask }, rg))
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let refs: Vec<&Tensor2> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor2::hconcat(&refs)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            out,
            Op::Concat {
                parts: parts.to_vec(),
            },
            rg,
        ))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out = self.value(x).map(|v| v * s);
        let rg = self.rg(x);
        self.push(out, Op::Scale { x, s }, rg)
    }

    /// `normalize(a) * normalize(b)^T / tau`
    pub fn cosine_logits(&mut self, a: Var, b: Var, tau: f64) -> Result<Var> {
        if tau <= 0.0 {
            return Err(Error::Config(format!("temperature must be positive, got {tau}")));
        }
        check_cols("cosine_logits", self.value(b).cols(), self.value(a).cols())?;
        let na = self.row_l2_normalize(a);
        let nb = self.row_l2_normalize(b);
        let sim = self.matmul_nt(na, nb)?;
        Ok(self.scale(sim, 1.0 / tau))
    }

    /// Propagates the given output gradients back through the tape and adds
    /// the results to the trainable parameters' accumulators.
    pub fn backward(&self, seeds: &[(Var, &Tensor2)], store: &mut ParamStore) -> Result<()> {
        let mut grads: Vec<Option<Tensor2>> = vec![None; self.nodes.len()];
        for &(v, g) in seeds {
            if g.shape() != self.value(v).shape() {
                return Err(Error::Dimension(format!(
                    "seed gradient {:?} for a {:?} value",
                    g.shape(),
                    self.value(v).shape()
                )));
            }
            accumulate(&mut grads[v.0], g);
        }
        for idx in (0..self.nodes.len()).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Constant => {}
                Op::Param(name) => {
                    let p = store
                        .get_mut(name)
                        .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))?;
                    p.grad.add_scaled(&g, 1.0);
                }
                Op::Affine { x, w, b } => {
                    if self.rg(*x) {
                        let mut dx = Tensor2::zeros(self.value(*x).rows(), self.value(*x).cols());
                        tensor::matmul_nt_acc(&g, self.value(*w), &mut dx)?;
                        accumulate_owned(&mut grads[x.0], dx);
                    }
                    if self.rg(*w) {
                        let wv = self.value(*w);
                        let mut dw = Tensor2::zeros(wv.rows(), wv.cols());
                        tensor::matmul_tn_acc(self.value(*x), &g, &mut dw)?;
                        accumulate_owned(&mut grads[w.0], dw);
                    }
                    if let Some(b) = b {
                        if self.rg(*b) {
                            let mut db = Tensor2::zeros(1, g.cols());
                            for i in 0..g.rows() {
                                for (d, s) in db.data_mut().iter_mut().zip(g.row(i)) {
                                    *d += s;
                                }
                            }
                            accumulate_owned(&mut grads[b.0], db);
                        }
                    }
                }
                Op::MatMul { a, b } => {
                    if self.rg(*a) {
                        let av = self.value(*a);
                        let mut da = Tensor2::zeros(av.rows(), av.cols());
                        tensor::matmul_nt_acc(&g, self.value(*b), &mut da)?;
                        accumulate_owned(&mut grads[a.0], da);
                    }
                    if self.rg(*b) {
                        let bv = self.value(*b);
                        let mut db = Tensor2::zeros(bv.rows(), bv.cols());
                        tensor::matmul_tn_acc(self.value(*a), &g, &mut db)?;
                        accumulate_owned(&mut grads[b.0], db);
                    }
                }
                Op::MatMulNt { a, b } => {
                    // out = a b^T: da = g b, db = g^T a
                    if self.rg(*a) {
                        let av = self.value(*a);
                        let mut da = Tensor2::zeros(av.rows(), av.cols());
                        tensor::matmul_acc(&g, self.value(*b), &mut da)?;
                        accumulate_owned(&mut grads[a.0], da);
                    }
                    if self.rg(*b) {
                        let bv = self.value(*b);
                        let mut db = Tensor2::zeros(bv.rows(), bv.cols());
                        tensor::matmul_tn_acc(&g, self.value(*a), &mut db)?;
                        accumulate_owned(&mut grads[b.0], db);
                    }
                }
                Op::Sage {
                    h,
                    w_self,
                    w_neigh,
                    graph,
                    mean,
                } => {
                    if self.rg(*w_self) {
                        let wv = self.value(*w_self);
                        let mut dw = Tensor2::zeros(wv.rows(), wv.cols());
                        tensor::matmul_tn_acc(self.value(*h), &g, &mut dw)?;
                        accumulate_owned(&mut grads[w_self.0], dw);
                    }
                    if self.rg(*w_neigh) {
                        let wv = self.value(*w_neigh);
                        let mut dw = Tensor2::zeros(wv.rows(), wv.cols());
                        tensor::matmul_tn_acc(mean, &g, &mut dw)?;
                        accumulate_owned(&mut grads[w_neigh.0], dw);
                    }
                    if self.rg(*h) {
                        let hv = self.value(*h);
                        let mut dh = Tensor2::zeros(hv.rows(), hv.cols());
                        tensor::matmul_nt_acc(&g, self.value(*w_self), &mut dh)?;
                        let mut dmean = Tensor2::zeros(hv.rows(), hv.cols());
                        tensor::matmul_nt_acc(&g, self.value(*w_neigh), &mut dmean)?;
                        neighbor_mean_adjoint(graph, &dmean, &mut dh);
                        accumulate_owned(&mut grads[h.0], dh);
                    }
                }
                Op::Relu { x } => {
                    let xv = self.value(*x);
                    let data = g
                        .data()
                        .iter()
                        .zip(xv.data())
                        .map(|(gg, xx)| if *xx > 0.0 { *gg } else { 0.0 })
                        .collect();
                    accumulate_owned(&mut grads[x.0], Tensor2::from_vec(g.rows(), g.cols(), data)?);
                }
                Op::RowNormalize { x, norms } => {
                    let y = &node.value;
                    let mut dx = Tensor2::zeros(g.rows(), g.cols());
                    for i in 0..g.rows() {
                        let n = norms[i];
                        let gi = g.row(i);
                        let yi = y.row(i);
                        // Past the floor the denominator is a constant.
                        let proj = if n > NORM_FLOOR { tensor::dot(yi, gi) } else { 0.0 };
                        for ((d, gg), yy) in dx.row_mut(i).iter_mut().zip(gi).zip(yi) {
                            *d = (gg - yy * proj) / n;
                        }
                    }
                    accumulate_owned(&mut grads[x.0], dx);
                }
                Op::Dropout { x, mask } => {
                    let data = g.data().iter().zip(mask).map(|(a, m)| a * m).collect();
                    accumulate_owned(&mut grads[x.0], Tensor2::from_vec(g.rows(), g.cols(), data)?);
                }
                Op::Concat { parts } => {
                    let mut off = 0;
                    for p in parts {
                        let w = self.value(*p).cols();
                        if self.rg(*p) {
                            accumulate_owned(&mut grads[p.0], g.col_slice(off, w));
                        }
                        off += w;
                    }
                }
                Op::Scale { x, s } => {
                    accumulate_owned(&mut grads[x.0], g.map(|v| v * s));
                }
            }
        }
        Ok(())
    }
}

fn accumulate(slot: &mut Option<Tensor2>, g: &Tensor2) {
    match slot {
        Some(acc) => acc.add_scaled(g, 1.0),
        None => *slot = Some(g.clone()),
    }
}

fn accumulate_owned(slot: &mut Option<Tensor2>, g: Tensor2) {
    match slot {
        Some(acc) => acc.add_scaled(&g, 1.0),
        None => *slot = Some(g),
    }
}
