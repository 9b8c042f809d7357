//! Central finite-difference verification of analytic gradients.

use crate::error::Result;
use crate::graph::{Graph, NormSettings, Var};
use crate::model::{dense_block, forward_graph, nla_block, Aggregation, AttentionKind, NetConfig};
use crate::params::ParamStore;
use crate::tensor::Tensor4;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientCheckReport {
    pub layer: String,
    pub max_relative_error: f64,
    pub tolerance: f64,
    pub checked: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct CheckSettings {
    pub step: f64,
    pub tolerance: f64,
    /// Gradients below this magnitude are compared on an absolute scale.
    pub floor: f64,
    /// At most this many coordinates per tensor, evenly spaced.
    pub max_coords: usize,
    pub training: bool,
    pub seed: u64,
}

impl Default for CheckSettings {
    fn default() -> Self {
        Self { step: 1e-4, tolerance: 1e-4, floor: 1e-5, max_coords: 120, training: true, seed: 11 }
    }
}

fn coords(n: usize, max: usize) -> Vec<usize> {
    if n <= max {
        (0..n).collect()
    } else {
        (0..max).map(|i| i * n / max).collect()
    }
}

/// Compares analytic and numeric gradients of `Σ R·build(inputs)` with a
/// fixed random `R` (or of the scalar itself when the output is a scalar),
/// with respect to every input and every trainable parameter.
pub fn check_gradients<F>(layer: &str, inputs: &[Tensor4], store: &ParamStore, s: CheckSettings, build: F) -> Result<GradientCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let mut probe: Option<Tensor4> = None;
    let eval = |ins: &[Tensor4], params: &ParamStore, probe: &mut Option<Tensor4>, grads: bool| -> Result<(f64, Option<(Vec<Tensor4>, Vec<(usize, Vec<f64>)>)>)> {
        let mut st = params.clone();
        let mut g = Graph::new(&mut st, s.training, s.seed);
        let vars: Vec<Var> = ins.iter().map(|t| g.input(t.clone())).collect();
        let out = build(&mut g, &vars);
        g.check()?;
        let dims = g.value(out).dims;
        let loss = if dims == [1, 1, 1, 1] {
            out
        } else {
            let w = probe.get_or_insert_with(|| Tensor4::randn(dims, &mut ChaCha8Rng::seed_from_u64(s.seed ^ 0x5eed)));
            g.weighted_sum(out, w.clone())
        };
        let value = g.value(loss).data[0];
        if !grads {
            return Ok((value, None));
        }
        let gr = g.backward(loss);
        let din = vars.iter().zip(ins).map(|(v, t)| gr.wrt(*v).cloned().unwrap_or_else(|| Tensor4::zeros(t.dims))).collect();
        let store_ref = g.store();
        let dp = (0..store_ref.len())
            .filter(|&k| store_ref.entry(k).trainable)
            .map(|k| (k, gr.param(k).map(|p| p.to_vec()).unwrap_or_else(|| vec![0.0; store_ref.entry(k).values.len()])))
            .collect();
        Ok((value, Some((din, dp))))
    };

    // materialise lazily created parameters first
    let mut base = store.clone();
    {
        let mut g = Graph::new(&mut base, s.training, s.seed);
        let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
        build(&mut g, &vars);
        g.check()?;
    }
    // running statistics from the materialising pass are discarded
    for e in store.entries() {
        if let Some(b) = base.get_mut(&e.path) {
            b.values.clone_from(&e.values);
        }
    }

    let (_, analytic) = eval(inputs, &base, &mut probe, true)?;
    let (din, dp) = analytic.expect("gradients requested");
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut compare = |a: f64, n: f64| {
        let scale = a.abs().max(n.abs());
        let err = if scale < s.floor { (a - n).abs() / s.floor } else { (a - n).abs() / scale };
        worst = worst.max(err);
        checked += 1;
    };
    for (ti, t) in inputs.iter().enumerate() {
        for i in coords(t.len(), s.max_coords) {
            let mut plus = inputs.to_vec();
            plus[ti].data[i] += s.step;
            let mut minus = inputs.to_vec();
            minus[ti].data[i] -= s.step;
            let fp = eval(&plus, &base, &mut probe, false)?.0;
            let fm = eval(&minus, &base, &mut probe, false)?.0;
            compare(din[ti].data[i], (fp - fm) / (2.0 * s.step));
        }
    }
    for (slot, grad) in &dp {
        for i in coords(grad.len(), s.max_coords) {
            let mut plus = base.clone();
            plus.values_mut(*slot)[i] += s.step;
            let mut minus = base.clone();
            minus.values_mut(*slot)[i] -= s.step;
            let fp = eval(inputs, &plus, &mut probe, false)?.0;
            let fm = eval(inputs, &minus, &mut probe, false)?.0;
            compare(grad[i], (fp - fm) / (2.0 * s.step));
        }
    }
    Ok(GradientCheckReport {
        layer: layer.to_string(),
        max_relative_error: worst,
        tolerance: s.tolerance,
        checked,
        pass: worst < s.tolerance,
    })
}

fn rand_input(dims: [usize; 4], seed: u64) -> Tensor4 {
    Tensor4::randn(dims, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// One check per differentiable layer type at toy sizes.
pub fn layer_suite() -> Result<Vec<GradientCheckReport>> {
    let s = CheckSettings::default();
    let ns = NormSettings::default();
    let x = rand_input([2, 6, 6, 3], 1);
    let mut out = Vec::new();
    let fresh = || ParamStore::new(7);

    out.push(check_gradients("conv 1x1", &[x.clone()], &fresh(), s, |g, v| g.conv("c", v[0], 4, 1, 1))?);
    out.push(check_gradients("conv 3x3", &[x.clone()], &fresh(), s, |g, v| g.conv("c", v[0], 4, 3, 1))?);
    out.push(check_gradients("conv 2x2 stride 2", &[x.clone()], &fresh(), s, |g, v| g.conv("c", v[0], 4, 2, 2))?);
    out.push(check_gradients("transpose conv 2x2", &[rand_input([2, 3, 3, 3], 2)], &fresh(), s, |g, v| {
        g.conv_transpose("t", v[0], 4)
    })?);
    out.push(check_gradients("batch norm", &[x.clone()], &fresh(), s, |g, v| g.norm("n", v[0], ns))?);
    out.push(check_gradients("batch norm inference", &[x.clone()], &fresh(), CheckSettings { training: false, ..s }, |g, v| {
        g.norm("n", v[0], ns)
    })?);
    {
        // running statistics far from the batch saturate both corrections
        let mut st = fresh();
        st.get_or_init("n/moving_mean", [1, 1, 1, 3], crate::params::Init::Const(-1e4), false)?;
        st.get_or_init("n/moving_var", [1, 1, 1, 3], crate::params::Init::Const(1e6), false)?;
        let rn = NormSettings { renorm: Some((3.0, 5.0)), ..ns };
        out.push(check_gradients("batch renorm", &[x.clone()], &st, s, |g, v| g.norm("n", v[0], rn))?);
    }
    out.push(check_gradients("elu", &[x.clone()], &fresh(), s, |g, v| g.elu(v[0]))?);
    out.push(check_gradients("relu", &[x.clone()], &fresh(), s, |g, v| g.relu(v[0]))?);
    out.push(check_gradients("sigmoid", &[x.clone()], &fresh(), s, |g, v| g.sigmoid(v[0]))?);
    out.push(check_gradients("dense block", &[x.clone()], &fresh(), s, |g, v| dense_block(g, "d", v[0], 2, 2, false, 0.2, ns))?);
    out.push(check_gradients("dense block first", &[x.clone()], &fresh(), s, |g, v| dense_block(g, "d", v[0], 2, 2, true, 0.0, ns))?);
    let hi = rand_input([2, 4, 4, 8], 3);
    let lo = rand_input([2, 2, 2, 5], 4);
    for (name, mode) in [("fnla mul", Aggregation::Mul), ("fnla add", Aggregation::Add), ("fnla concat", Aggregation::Concat)] {
        out.push(check_gradients(name, &[hi.clone(), lo.clone()], &fresh(), s, |g, v| nla_block(g, "a", v[0], Some(v[1]), mode, false))?);
    }
    for (name, mode) in [("snla mul", Aggregation::Mul), ("snla add", Aggregation::Add), ("snla concat", Aggregation::Concat)] {
        out.push(check_gradients(name, &[hi.clone()], &fresh(), s, |g, v| nla_block(g, "a", v[0], None, mode, false))?);
    }
    out.push(check_gradients("snla scaled", &[hi.clone()], &fresh(), s, |g, v| nla_block(g, "a", v[0], None, Aggregation::Mul, true))?);
    let target = {
        let t = rand_input([2, 6, 6, 1], 5);
        let mut d = Tensor4::zeros([2, 6, 6, 2]);
        for (i, v) in t.data.iter().enumerate() {
            let p = 1.0 / (1.0 + (-v).exp());
            d.data[2 * i] = 1.0 - p;
            d.data[2 * i + 1] = p;
        }
        d
    };
    out.push(check_gradients("softmax cross-entropy", &[rand_input([2, 6, 6, 2], 6)], &fresh(), s, |g, v| {
        let p = g.softmax(v[0]);
        g.cross_entropy(p, target.clone())
    })?);
    let tiny = NetConfig {
        resolution_stages: 2,
        blocks_per_stage: vec![1, 2],
        growth_rate: 2,
        attention: AttentionKind::FnlaMul,
        ..NetConfig::default()
    };
    let tiny_target = {
        let mut d = Tensor4::zeros([2, 4, 4, 2]);
        for (i, row) in d.data.chunks_mut(2).enumerate() {
            let t = if i % 3 == 0 { 0.9 } else { 0.2 };
            row.copy_from_slice(&[1.0 - t, t]);
        }
        d
    };
    out.push(check_gradients("toy network", &[rand_input([2, 4, 4, 1], 8)], &fresh(), s, |g, v| {
        let (p, _) = forward_graph(&tiny, g, v[0]).expect("valid toy network");
        g.cross_entropy(p, tiny_target.clone())
    })?);
    Ok(out)
}
