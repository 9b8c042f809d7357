//! Define-by-run reverse-mode differentiation.
//!
//! Every operation appends a node holding its value; [`Graph::backward`]
//! walks the nodes in reverse. Parameters are pulled from a [`ParamStore`]
//! by layer path the first time a layer runs.

use crate::error::{NetError, Result};
use crate::kernels;
use crate::params::{Init, ParamStore};
use crate::tensor::Tensor4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

/// Batch normalisation settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormSettings {
    pub eps: f64,
    pub momentum: f64,
    /// `Some((r_max, d_max))` enables batch renormalisation.
    pub renorm: Option<(f64, f64)>,
}

impl Default for NormSettings {
    fn default() -> Self {
        Self { eps: 1e-3, momentum: 0.9, renorm: None }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(usize),
    Conv { x: Var, w: Var, b: Var, stride: usize },
    ConvT { x: Var, w: Var, b: Var },
    Norm { x: Var, gamma: Var, beta: Var, z: Vec<f64>, inv: Vec<f64>, r: Vec<f64>, d: Vec<f64>, batch_stats: bool },
    Elu(Var),
    Relu(Var),
    Sigmoid(Var),
    Dropout { x: Var, mask: Vec<f64> },
    Concat(Vec<Var>),
    Add(Var, Var),
    MulChannel { x: Var, m: Var },
    Attention { q: Var, k: Var, v: Var, probs: Vec<f64>, scale: f64 },
    Softmax(Var),
    CrossEntropy { p: Var, target: Tensor4 },
    WeightedSum { x: Var, weights: Tensor4 },
}

#[derive(Debug)]
struct Node {
    value: Tensor4,
    op: Op,
}

/// Gradients of a scalar with respect to leaves and parameter slots.
#[derive(Debug, Default)]
pub struct Gradients {
    leaves: BTreeMap<Var, Tensor4>,
    params: BTreeMap<usize, Vec<f64>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor4> {
        self.leaves.get(&v)
    }

    pub fn param(&self, slot: usize) -> Option<&[f64]> {
        self.params.get(&slot).map(|g| g.as_slice())
    }
}

pub struct Graph<'s> {
    store: &'s mut ParamStore,
    nodes: Vec<Node>,
    training: bool,
    rng: ChaCha8Rng,
    scope: Vec<String>,
    fault: Option<NetError>,
}

impl<'s> Graph<'s> {
    /// `seed` drives dropout masks.
    pub fn new(store: &'s mut ParamStore, training: bool, seed: u64) -> Self {
        Self { store, nodes: Vec::new(), training, rng: ChaCha8Rng::seed_from_u64(seed), scope: Vec::new(), fault: None }
    }

    pub fn training(&self) -> bool {
        self.training
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn value(&self, v: Var) -> &Tensor4 {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// First fault raised while building, if any.
    pub fn check(&mut self) -> Result<()> {
        match self.fault.take() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    pub fn path(&self, name: &str) -> String {
        let mut p = self.scope.join("/");
        if !p.is_empty() {
            p.push('/');
        }
        p.push_str(name);
        p
    }

    pub fn scoped<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> T) -> T {
        self.scope.push(name.to_string());
        let out = f(self);
        self.scope.pop();
        out
    }

    pub(crate) fn raise(&mut self, e: NetError) {
        if self.fault.is_none() {
            self.fault = Some(e);
        }
    }

    fn push(&mut self, value: Tensor4, op: Op, what: &str) -> Var {
        if self.fault.is_none() && !value.is_finite() {
            let p = self.path(what);
            self.raise(NetError::NonFinite(p));
        }
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn dims(&self, v: Var) -> [usize; 4] {
        self.nodes[v.0].value.dims
    }

    /// Fallback node when an operation cannot run; the fault is kept.
    fn failed(&mut self, e: NetError, dims: [usize; 4]) -> Var {
        self.raise(e);
        self.push(Tensor4::zeros(dims), Op::Leaf, "failed")
    }

    pub fn input(&mut self, value: Tensor4) -> Var {
        self.push(value, Op::Leaf, "input")
    }

    /// Parameter node for `scope/name`, created with `init` on first use.
    pub fn param(&mut self, name: &str, dims: [usize; 4], init: Init) -> Var {
        self.param_impl(name, dims, init, true)
    }

    fn param_impl(&mut self, name: &str, dims: [usize; 4], init: Init, trainable: bool) -> Var {
        let path = self.path(name);
        match self.store.get_or_init(&path, dims, init, trainable) {
            Ok(slot) => {
                let e = self.store.entry(slot);
                let value = Tensor4 { dims: e.dims, data: e.values.clone() };
                self.push(value, Op::Param(slot), name)
            }
            Err(e) => self.failed(e, dims),
        }
    }

    /// SAME-padded convolution layer with HWIO kernel and bias.
    pub fn conv(&mut self, name: &str, x: Var, cout: usize, kernel: usize, stride: usize) -> Var {
        let cin = self.dims(x)[3];
        self.scoped(name, |g| {
            let w = g.param("kernel", [kernel, kernel, cin, cout], Init::FanIn(kernel * kernel * cin));
            let b = g.param("bias", [1, 1, 1, cout], Init::Const(0.0));
            g.conv_with(x, w, b, stride)
        })
    }

    pub fn conv_with(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Var {
        match kernels::conv2d(self.value(x), self.value(w), Some(&self.value(b).data), stride) {
            Ok(y) => self.push(y, Op::Conv { x, w, b, stride }, "conv"),
            Err(e) => self.failed(e, self.dims(x)),
        }
    }

    /// 2×2 stride-2 transpose convolution layer.
    pub fn conv_transpose(&mut self, name: &str, x: Var, cout: usize) -> Var {
        let cin = self.dims(x)[3];
        self.scoped(name, |g| {
            let w = g.param("kernel", [2, 2, cout, cin], Init::FanIn(cin));
            let b = g.param("bias", [1, 1, 1, cout], Init::Const(0.0));
            g.conv_transpose_with(x, w, b)
        })
    }

    pub fn conv_transpose_with(&mut self, x: Var, w: Var, b: Var) -> Var {
        match kernels::conv_transpose2d(self.value(x), self.value(w), Some(&self.value(b).data)) {
            Ok(y) => self.push(y, Op::ConvT { x, w, b }, "conv_transpose"),
            Err(e) => self.failed(e, self.dims(x)),
        }
    }

    /// Batch (re)normalisation with learned scale and shift. Running
    /// statistics are updated in training mode and used otherwise.
    pub fn norm(&mut self, name: &str, x: Var, s: NormSettings) -> Var {
        let c = self.dims(x)[3];
        self.scoped(name, |g| {
            let gamma = g.param("gamma", [1, 1, 1, c], Init::Const(1.0));
            let beta = g.param("beta", [1, 1, 1, c], Init::Const(0.0));
            let mean_path = g.path("moving_mean");
            let var_path = g.path("moving_var");
            let ms = g.store.get_or_init(&mean_path, [1, 1, 1, c], Init::Const(0.0), false);
            let vs = g.store.get_or_init(&var_path, [1, 1, 1, c], Init::Const(1.0), false);
            let (ms, vs) = match (ms, vs) {
                (Ok(a), Ok(b)) => (a, b),
                (Err(e), _) | (_, Err(e)) => return g.failed(e, g.dims(x)),
            };
            let training = g.training;
            let xv = &g.nodes[x.0].value;
            let count = (xv.len() / c) as f64;
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            if training {
                for row in xv.data.chunks(c) {
                    for (m, v) in mean.iter_mut().zip(row) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= count);
                for row in xv.data.chunks(c) {
                    for ((s2, v), m) in var.iter_mut().zip(row).zip(&mean) {
                        *s2 += (v - m) * (v - m);
                    }
                }
                var.iter_mut().for_each(|v| *v /= count);
            } else {
                mean.copy_from_slice(&g.store.entry(ms).values);
                var.copy_from_slice(&g.store.entry(vs).values);
            }
            let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + s.eps).sqrt()).collect();
            // renormalisation corrections are constants for differentiation
            let (mut r, mut d) = (vec![1.0; c], vec![0.0; c]);
            if training {
                if let Some((r_max, d_max)) = s.renorm {
                    let run_mean = &g.store.entry(ms).values;
                    let run_var = &g.store.entry(vs).values;
                    for ch in 0..c {
                        let run_sd = (run_var[ch] + s.eps).sqrt();
                        r[ch] = ((1.0 / inv[ch]) / run_sd).clamp(1.0 / r_max, r_max);
                        d[ch] = ((mean[ch] - run_mean[ch]) / run_sd).clamp(-d_max, d_max);
                    }
                }
            }
            let gv = &g.nodes[gamma.0].value.data;
            let bv = &g.nodes[beta.0].value.data;
            let mut z = vec![0.0; xv.len()];
            let mut y = Tensor4::zeros(xv.dims);
            for ((xr, zr), yr) in xv.data.chunks(c).zip(z.chunks_mut(c)).zip(y.data.chunks_mut(c)) {
                for ch in 0..c {
                    zr[ch] = (xr[ch] - mean[ch]) * inv[ch];
                    yr[ch] = gv[ch] * (r[ch] * zr[ch] + d[ch]) + bv[ch];
                }
            }
            if training {
                let unbiased = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
                let mom = s.momentum;
                for (m, bm) in g.store.values_mut(ms).iter_mut().zip(&mean) {
                    *m = mom * *m + (1.0 - mom) * bm;
                }
                for (v, bv) in g.store.values_mut(vs).iter_mut().zip(&var) {
                    *v = mom * *v + (1.0 - mom) * bv * unbiased;
                }
            }
            g.push(y, Op::Norm { x, gamma, beta, z, inv, r, d, batch_stats: training }, "norm")
        })
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op, what: &str) -> Var {
        let xv = &self.nodes[x.0].value;
        let y = Tensor4 { dims: xv.dims, data: xv.data.iter().map(|&v| f(v)).collect() };
        self.push(y, op, what)
    }

    pub fn elu(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v > 0.0 { v } else { v.exp_m1() }, Op::Elu(x), "elu")
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x), "relu")
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, |v| 1.0 / (1.0 + (-v).exp()), Op::Sigmoid(x), "sigmoid")
    }

    /// Inverted dropout; the identity outside training or at rate 0.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Var {
        if !self.training || rate <= 0.0 {
            return x;
        }
        let keep = 1.0 / (1.0 - rate);
        let n = self.nodes[x.0].value.len();
        let mask: Vec<f64> = (0..n).map(|_| if self.rng.random::<f64>() < rate { 0.0 } else { keep }).collect();
        let xv = &self.nodes[x.0].value;
        let y = Tensor4 { dims: xv.dims, data: xv.data.iter().zip(&mask).map(|(a, m)| a * m).collect() };
        self.push(y, Op::Dropout { x, mask }, "dropout")
    }

    /// Channel concatenation.
    pub fn concat(&mut self, xs: &[Var]) -> Var {
        let first = self.dims(xs[0]);
        if xs.iter().any(|&v| self.dims(v)[..3] != first[..3]) {
            let e = NetError::InvalidArgument(format!("concat of mismatched shapes at {}", self.path("concat")));
            return self.failed(e, first);
        }
        let widths: Vec<usize> = xs.iter().map(|&v| self.dims(v)[3]).collect();
        let total: usize = widths.iter().sum();
        let rows = first[0] * first[1] * first[2];
        let mut y = Tensor4::zeros([first[0], first[1], first[2], total]);
        for r in 0..rows {
            let mut off = r * total;
            for (&v, &w) in xs.iter().zip(&widths) {
                y.data[off..off + w].copy_from_slice(&self.nodes[v.0].value.data[r * w..(r + 1) * w]);
                off += w;
            }
        }
        self.push(y, Op::Concat(xs.to_vec()), "concat")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        if self.dims(a) != self.dims(b) {
            let e = NetError::InvalidArgument(format!("add of mismatched shapes at {}", self.path("add")));
            return self.failed(e, self.dims(a));
        }
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let y = Tensor4 { dims: av.dims, data: av.data.iter().zip(&bv.data).map(|(x, y)| x + y).collect() };
        self.push(y, Op::Add(a, b), "add")
    }

    /// Scales every channel of `x` by the single-channel map `m`.
    pub fn mul_channel(&mut self, x: Var, m: Var) -> Var {
        let (xd, md) = (self.dims(x), self.dims(m));
        if xd[..3] != md[..3] || md[3] != 1 {
            let e = NetError::InvalidArgument(format!("gate shape {md:?} for input {xd:?}"));
            return self.failed(e, xd);
        }
        let c = xd[3];
        let (xv, mv) = (&self.nodes[x.0].value, &self.nodes[m.0].value);
        let mut y = xv.clone();
        for (row, g) in y.data.chunks_mut(c).zip(&mv.data) {
            row.iter_mut().for_each(|v| *v *= g);
        }
        self.push(y, Op::MulChannel { x, m }, "gate")
    }

    /// Row-softmax dot-product attention over flattened positions.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, scale: f64) -> Var {
        let r = kernels::attention(self.value(q), self.value(k), self.value(v), scale);
        match r {
            Ok((y, probs)) => self.push(y, Op::Attention { q, k, v, probs, scale }, "attention"),
            Err(e) => self.failed(e, self.dims(q)),
        }
    }

    /// Attention matrix rows of the most recent attention node built on `out`.
    pub fn attention_weights(&self, out: Var) -> Option<&[f64]> {
        match &self.nodes[out.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Per-pixel softmax across channels.
    pub fn softmax(&mut self, x: Var) -> Var {
        let xv = &self.nodes[x.0].value;
        let c = xv.channels();
        let mut y = xv.clone();
        for row in y.data.chunks_mut(c) {
            let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
        self.push(y, Op::Softmax(x), "softmax")
    }

    /// Mean per-pixel cross-entropy of probabilities `p` against a target
    /// distribution of the same shape.
    pub fn cross_entropy(&mut self, p: Var, target: Tensor4) -> Var {
        let pv = &self.nodes[p.0].value;
        if pv.dims != target.dims {
            let e = NetError::InvalidArgument(format!("target dims {:?} for output {:?}", target.dims, pv.dims));
            return self.failed(e, [1, 1, 1, 1]);
        }
        let pixels = (pv.len() / pv.channels()) as f64;
        let loss = -pv.data.iter().zip(&target.data).map(|(p, t)| if *t == 0.0 { 0.0 } else { t * p.max(1e-300).ln() }).sum::<f64>()
            / pixels;
        self.push(Tensor4::filled([1, 1, 1, 1], loss), Op::CrossEntropy { p, target }, "loss")
    }

    /// `Σ x·weights`, a scalar probe used by gradient checks.
    pub fn weighted_sum(&mut self, x: Var, weights: Tensor4) -> Var {
        let s = self.nodes[x.0].value.dot(&weights);
        self.push(Tensor4::filled([1, 1, 1, 1], s), Op::WeightedSum { x, weights }, "probe")
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Gradients {
        let mut grads: Vec<Option<Tensor4>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor4::filled(self.nodes[loss.0].value.dims, 1.0));
        let mut out = Gradients::default();
        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let mut acc = |v: Var, g: Tensor4| match &mut grads[v.0] {
                Some(t) => t.add_assign(&g),
                slot => *slot = Some(g),
            };
            match &node.op {
                Op::Leaf => {
                    out.leaves.insert(Var(i), dy);
                }
                Op::Param(slot) => match out.params.get_mut(slot) {
                    Some(g) => g.iter_mut().zip(&dy.data).for_each(|(a, b)| *a += b),
                    None => {
                        out.params.insert(*slot, dy.data);
                    }
                },
                Op::Conv { x, w, b, stride } => {
                    let (dx, dw, db) = kernels::conv2d_backward(self.value(*x), self.value(*w), &dy, *stride)
                        .expect("shapes checked in forward");
                    acc(*x, dx);
                    acc(*w, dw);
                    acc(*b, Tensor4 { dims: self.value(*b).dims, data: db });
                }
                Op::ConvT { x, w, b } => {
                    let (dx, dw, db) = kernels::conv_transpose2d_backward(self.value(*x), self.value(*w), &dy)
                        .expect("shapes checked in forward");
                    acc(*x, dx);
                    acc(*w, dw);
                    acc(*b, Tensor4 { dims: self.value(*b).dims, data: db });
                }
                Op::Norm { x, gamma, beta, z, inv, r, d, batch_stats } => {
                    let c = dy.channels();
                    let n = (dy.len() / c) as f64;
                    let gv = &self.value(*gamma).data;
                    let mut dg = vec![0.0; c];
                    let mut dbeta = vec![0.0; c];
                    let mut sum_g = vec![0.0; c];
                    let mut sum_gz = vec![0.0; c];
                    for (dr, zr) in dy.data.chunks(c).zip(z.chunks(c)) {
                        for ch in 0..c {
                            dg[ch] += dr[ch] * (r[ch] * zr[ch] + d[ch]);
                            dbeta[ch] += dr[ch];
                            sum_g[ch] += dr[ch] * gv[ch];
                            sum_gz[ch] += dr[ch] * gv[ch] * zr[ch];
                        }
                    }
                    let mut dx = Tensor4::zeros(dy.dims);
                    for ((o, dr), zr) in dx.data.chunks_mut(c).zip(dy.data.chunks(c)).zip(z.chunks(c)) {
                        for ch in 0..c {
                            let gz = dr[ch] * gv[ch];
                            o[ch] = if *batch_stats {
                                inv[ch] * r[ch] * (gz - sum_g[ch] / n - zr[ch] * sum_gz[ch] / n)
                            } else {
                                gz * inv[ch]
                            };
                        }
                    }
                    acc(*x, dx);
                    acc(*gamma, Tensor4 { dims: [1, 1, 1, c], data: dg });
                    acc(*beta, Tensor4 { dims: [1, 1, 1, c], data: dbeta });
                }
                Op::Elu(x) => {
                    let xv = &self.value(*x).data;
                    let data = dy.data.iter().zip(xv).zip(&node.value.data).map(|((g, x), y)| if *x > 0.0 { *g } else { g * (y + 1.0) }).collect();
                    acc(*x, Tensor4 { dims: dy.dims, data });
                }
                Op::Relu(x) => {
                    let xv = &self.value(*x).data;
                    let data = dy.data.iter().zip(xv).map(|(g, x)| if *x > 0.0 { *g } else { 0.0 }).collect();
                    acc(*x, Tensor4 { dims: dy.dims, data });
                }
                Op::Sigmoid(x) => {
                    let data = dy.data.iter().zip(&node.value.data).map(|(g, s)| g * s * (1.0 - s)).collect();
                    acc(*x, Tensor4 { dims: dy.dims, data });
                }
                Op::Dropout { x, mask } => {
                    let data = dy.data.iter().zip(mask).map(|(g, m)| g * m).collect();
                    acc(*x, Tensor4 { dims: dy.dims, data });
                }
                Op::Concat(xs) => {
                    let total = dy.channels();
                    let rows = dy.len() / total;
                    let mut off = 0;
                    for &v in xs {
                        let d = self.value(v).dims;
                        let w = d[3];
                        let mut g = Tensor4::zeros(d);
                        for r in 0..rows {
                            g.data[r * w..(r + 1) * w].copy_from_slice(&dy.data[r * total + off..r * total + off + w]);
                        }
                        off += w;
                        acc(v, g);
                    }
                }
                Op::Add(a, b) => {
                    acc(*a, dy.clone());
                    acc(*b, dy);
                }
                Op::MulChannel { x, m } => {
                    let c = dy.channels();
                    let (xv, mv) = (self.value(*x), self.value(*m));
                    let mut dx = dy.clone();
                    let mut dm = Tensor4::zeros(mv.dims);
                    for (((o, dr), xr), (gm, mm)) in dx.data.chunks_mut(c).zip(dy.data.chunks(c)).zip(xv.data.chunks(c)).zip(dm.data.iter_mut().zip(&mv.data)) {
                        for ch in 0..c {
                            o[ch] = dr[ch] * mm;
                            *gm += dr[ch] * xr[ch];
                        }
                    }
                    acc(*x, dx);
                    acc(*m, dm);
                }
                Op::Attention { q, k, v, probs, scale } => {
                    let (dq, dk, dv) = kernels::attention_backward(self.value(*q), self.value(*k), self.value(*v), probs, &dy, *scale);
                    acc(*q, dq);
                    acc(*k, dk);
                    acc(*v, dv);
                }
                Op::Softmax(x) => {
                    let c = dy.channels();
                    let mut dx = Tensor4::zeros(dy.dims);
                    for ((o, dr), yr) in dx.data.chunks_mut(c).zip(dy.data.chunks(c)).zip(node.value.data.chunks(c)) {
                        let inner: f64 = dr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for ch in 0..c {
                            o[ch] = yr[ch] * (dr[ch] - inner);
                        }
                    }
                    acc(*x, dx);
                }
                Op::CrossEntropy { p, target } => {
                    let pv = self.value(*p);
                    let pixels = (pv.len() / pv.channels()) as f64;
                    let s = dy.data[0];
                    let data = pv.data.iter().zip(&target.data).map(|(p, t)| if *t == 0.0 { 0.0 } else { -s * t / (p.max(1e-300) * pixels) }).collect();
                    acc(*p, Tensor4 { dims: pv.dims, data });
                }
                Op::WeightedSum { x, weights } => {
                    let s = dy.data[0];
                    let data = weights.data.iter().map(|w| w * s).collect();
                    acc(*x, Tensor4 { dims: weights.dims, data });
                }
            }
        }
        out
    }
}
