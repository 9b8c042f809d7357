//! DenseUNet backbone with feedback (fNLA) and self (sNLA) non-local
//! attention.

use crate::error::{invalid, Result};
use crate::graph::{Graph, NormSettings, Var};
use crate::params::ParamStore;
use crate::tensor::Tensor4;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionKind {
    None,
    FnlaMul,
    FnlaAdd,
    FnlaConcat,
    /// Self-attention with multiplicative aggregation at every node.
    SnlaOnly,
}

/// How an attention block merges its output back into the input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Mul,
    Add,
    Concat,
}

impl AttentionKind {
    pub fn aggregation(self) -> Option<Aggregation> {
        match self {
            AttentionKind::None => None,
            AttentionKind::FnlaMul | AttentionKind::SnlaOnly => Some(Aggregation::Mul),
            AttentionKind::FnlaAdd => Some(Aggregation::Add),
            AttentionKind::FnlaConcat => Some(Aggregation::Concat),
        }
    }

    fn feedback(self) -> bool {
        !matches!(self, AttentionKind::None | AttentionKind::SnlaOnly)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    BatchNorm,
    BatchRenorm,
}

/// Per-node attention switches, shallowest stage first. The decoder has one
/// node per stage except the deepest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionPlacement {
    pub encoder: Vec<bool>,
    pub decoder: Vec<bool>,
}

impl AttentionPlacement {
    /// Every encoder and decoder node.
    pub fn all(stages: usize) -> Self {
        Self { encoder: vec![true; stages], decoder: vec![true; stages.saturating_sub(1)] }
    }

    /// Only the `k` deepest resolution stages.
    pub fn deepest(stages: usize, k: usize) -> Self {
        let on = |s: usize| s + k >= stages;
        Self { encoder: (0..stages).map(on).collect(), decoder: (0..stages.saturating_sub(1)).map(on).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub resolution_stages: usize,
    pub blocks_per_stage: Vec<usize>,
    pub growth_rate: usize,
    pub attention: AttentionKind,
    /// `None` means every node.
    pub placement: Option<AttentionPlacement>,
    /// Multiply attention logits by `1/sqrt(d)`.
    pub scaled_attention: bool,
    pub dropout_rate: f64,
    pub normalization: Normalization,
    pub renorm_r_max: f64,
    pub renorm_d_max: f64,
    pub norm_eps: f64,
    pub norm_momentum: f64,
    pub input_channels: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            resolution_stages: 5,
            blocks_per_stage: vec![4, 8, 12, 16, 20],
            growth_rate: 5,
            attention: AttentionKind::None,
            placement: None,
            scaled_attention: false,
            dropout_rate: 0.2,
            normalization: Normalization::BatchNorm,
            renorm_r_max: 3.0,
            renorm_d_max: 5.0,
            norm_eps: 1e-3,
            norm_momentum: 0.9,
            input_channels: 1,
        }
    }
}

/// Channel counts of every node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelTrace {
    pub encoder: Vec<usize>,
    pub decoder: Vec<usize>,
}

impl NetConfig {
    /// Five stages, blocks 4/8/12/16/20, growth rate 5.
    pub fn full_scale(attention: AttentionKind) -> Self {
        Self { attention, ..Self::default() }
    }

    /// Three stages, blocks 2/3/4, growth rate 3.
    pub fn toy(attention: AttentionKind) -> Self {
        Self { resolution_stages: 3, blocks_per_stage: vec![2, 3, 4], growth_rate: 3, attention, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution_stages == 0 || self.blocks_per_stage.len() != self.resolution_stages {
            return invalid("blocks_per_stage must list one count per resolution stage");
        }
        if self.blocks_per_stage.contains(&0) {
            return invalid("every stage needs at least one block");
        }
        if self.growth_rate == 0 || self.input_channels == 0 {
            return invalid("growth_rate and input_channels must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return invalid("dropout_rate must lie in [0, 1)");
        }
        if !(self.renorm_r_max >= 1.0 && self.renorm_d_max >= 0.0 && self.norm_eps > 0.0) {
            return invalid("normalisation limits out of range");
        }
        if let Some(p) = &self.placement {
            if p.encoder.len() != self.resolution_stages || p.decoder.len() + 1 != self.resolution_stages {
                return invalid("attention placement must cover every node");
            }
        }
        Ok(())
    }

    pub fn placement(&self) -> AttentionPlacement {
        match (&self.placement, self.attention) {
            (_, AttentionKind::None) => AttentionPlacement {
                encoder: vec![false; self.resolution_stages],
                decoder: vec![false; self.resolution_stages - 1],
            },
            (Some(p), _) => p.clone(),
            (None, _) => AttentionPlacement::all(self.resolution_stages),
        }
    }

    /// Transition width after stage `s`: blocks × GR / 2.
    pub fn alpha(&self, s: usize) -> usize {
        (self.blocks_per_stage[s] * self.growth_rate / 2).max(1)
    }

    pub fn head_width(channels: usize) -> usize {
        (channels / 8).max(1)
    }

    /// Closed-form output channels of every node.
    pub fn expected_channels(&self) -> ChannelTrace {
        let place = self.placement();
        let concat = self.attention.aggregation() == Some(Aggregation::Concat);
        let grow = |c: usize, on: bool| if on && concat { c + Self::head_width(c) } else { c };
        let s = self.resolution_stages;
        let encoder = (0..s)
            .map(|st| {
                let cin = if st == 0 { self.input_channels } else { self.alpha(st - 1) };
                grow(cin + self.blocks_per_stage[st] * self.growth_rate, place.encoder[st])
            })
            .collect();
        let decoder = (0..s - 1)
            .map(|st| {
                let cin = self.alpha(st + 1) + self.alpha(st);
                grow(cin + self.blocks_per_stage[st] * self.growth_rate, place.decoder[st])
            })
            .collect();
        ChannelTrace { encoder, decoder }
    }

    /// Spatial dims must be divisible by this.
    pub fn size_multiple(&self) -> usize {
        1 << (self.resolution_stages - 1)
    }

    fn norm_settings(&self) -> NormSettings {
        NormSettings {
            eps: self.norm_eps,
            momentum: self.norm_momentum,
            renorm: match self.normalization {
                Normalization::BatchNorm => None,
                Normalization::BatchRenorm => Some((self.renorm_r_max, self.renorm_d_max)),
            },
        }
    }
}

/// Convolution, normalisation, ELU.
pub fn conv_norm_elu(g: &mut Graph, name: &str, x: Var, cout: usize, kernel: usize, stride: usize, s: NormSettings) -> Var {
    g.scoped(name, |g| {
        let y = g.conv("conv", x, cout, kernel, stride);
        let y = g.norm("norm", y, s);
        g.elu(y)
    })
}

/// `n` growth layers, each concatenated to its input. The first block of
/// the network has no compression layer.
pub fn dense_block(g: &mut Graph, name: &str, x: Var, n: usize, gr: usize, first: bool, dropout: f64, s: NormSettings) -> Var {
    g.scoped(name, |g| {
        let mut cur = x;
        for i in 0..n {
            cur = g.scoped(&format!("layer{i}"), |g| {
                let mut h = cur;
                if !first {
                    h = conv_norm_elu(g, "compress", h, 4 * gr, 1, 1, s);
                }
                h = conv_norm_elu(g, "grow", h, gr, 3, 1, s);
                h = g.dropout(h, dropout);
                g.concat(&[cur, h])
            });
        }
        cur
    })
}

/// Non-local attention on `x`. With `y` (half resolution) keys and values
/// come from 2×2 transpose convolutions of `y` (fNLA), otherwise from 1×1
/// convolutions of `x` (sNLA).
pub fn nla_block(g: &mut Graph, name: &str, x: Var, y: Option<Var>, mode: Aggregation, scaled: bool) -> Var {
    g.scoped(name, |g| {
        let xd = g.value(x).dims;
        let c = xd[3];
        let h = NetConfig::head_width(c);
        let q = g.conv("theta", x, h, 1, 1);
        let (k, v) = match y {
            Some(y) => {
                let yd = g.value(y).dims;
                if yd[0] != xd[0] || 2 * yd[1] != xd[1] || 2 * yd[2] != xd[2] {
                    let e = crate::error::NetError::InvalidArgument(format!(
                        "{}: feedback input {yd:?} is not half of {xd:?}",
                        g.path("")
                    ));
                    g.raise(e);
                    return x;
                }
                (g.conv_transpose("phi", y, h), g.conv_transpose("g", y, h))
            }
            None => (g.conv("phi", x, h, 1, 1), g.conv("g", x, h, 1, 1)),
        };
        let scale = if scaled { 1.0 / (h as f64).sqrt() } else { 1.0 };
        let o = g.attention(q, k, v, scale);
        match mode {
            Aggregation::Mul => {
                let m = g.conv("omega", o, 1, 1, 1);
                let m = g.sigmoid(m);
                g.mul_channel(x, m)
            }
            Aggregation::Add => {
                let a = g.conv("omega", o, c, 1, 1);
                let a = g.relu(a);
                g.add(x, a)
            }
            Aggregation::Concat => {
                let e = g.elu(o);
                g.concat(&[x, e])
            }
        }
    })
}

/// Builds the network graph on `x`; returns the 2-channel softmax output and
/// the channel count of every node.
pub fn forward_graph(cfg: &NetConfig, g: &mut Graph, x: Var) -> Result<(Var, ChannelTrace)> {
    let dims = g.value(x).dims;
    let m = cfg.size_multiple();
    if dims[1] % m != 0 || dims[2] % m != 0 || dims[1] == 0 || dims[2] == 0 {
        return invalid(format!("input {}×{} is not a multiple of {m}", dims[1], dims[2]));
    }
    if dims[3] != cfg.input_channels {
        return invalid(format!("input has {} channels, network expects {}", dims[3], cfg.input_channels));
    }
    let s = cfg.resolution_stages;
    let ns = cfg.norm_settings();
    let gr = cfg.growth_rate;
    let place = cfg.placement();
    let agg = cfg.attention.aggregation();
    let drop = |st: usize| if st == 0 { 0.0 } else { cfg.dropout_rate };

    let mut dense = Vec::with_capacity(s);
    let mut cur = x;
    for st in 0..s {
        let d = g.scoped(&format!("enc{st}"), |g| {
            dense_block(g, "dense", cur, cfg.blocks_per_stage[st], gr, st == 0, drop(st), ns)
        });
        dense.push(d);
        if st + 1 < s {
            cur = g.scoped(&format!("enc{st}"), |g| conv_norm_elu(g, "down", d, cfg.alpha(st), 2, 2, ns));
        }
    }

    let mut att = dense.clone();
    if let Some(mode) = agg {
        for st in (0..s).rev() {
            if !place.encoder[st] {
                continue;
            }
            let feedback = if cfg.attention.feedback() && st + 1 < s { Some(att[st + 1]) } else { None };
            let name = if feedback.is_some() { "fnla" } else { "snla" };
            att[st] = g.scoped(&format!("enc{st}"), |g| nla_block(g, name, dense[st], feedback, mode, cfg.scaled_attention));
        }
    }
    let encoder: Vec<usize> = att.iter().map(|&v| g.value(v).dims[3]).collect();

    let skips: Vec<Var> = (0..s - 1)
        .map(|st| g.scoped(&format!("enc{st}"), |g| conv_norm_elu(g, "skip", att[st], cfg.alpha(st), 1, 1, ns)))
        .collect();

    let mut decoder = vec![0; s - 1];
    cur = att[s - 1];
    for st in (0..s - 1).rev() {
        cur = g.scoped(&format!("dec{st}"), |g| {
            let u = g.scoped("up", |g| {
                let y = g.conv_transpose("conv", cur, cfg.alpha(st + 1));
                let y = g.norm("norm", y, ns);
                g.elu(y)
            });
            let cat = g.concat(&[u, skips[st]]);
            let mut d = dense_block(g, "dense", cat, cfg.blocks_per_stage[st], gr, false, drop(st), ns);
            if let (Some(mode), true) = (agg, place.decoder[st]) {
                d = nla_block(g, "snla", d, None, mode, cfg.scaled_attention);
            }
            d
        });
        decoder[st] = g.value(cur).dims[3];
    }

    let logits = g.conv("head", cur, 2, 1, 1);
    let probs = g.softmax(logits);
    g.check()?;
    Ok((probs, ChannelTrace { encoder, decoder }))
}

/// Configuration plus parameters.
#[derive(Debug, Clone)]
pub struct Network {
    pub config: NetConfig,
    pub params: ParamStore,
}

/// Creates every parameter with a seeded initialisation and checks node
/// channel counts against the closed form.
pub fn build_denseunet(config: NetConfig, seed: u64) -> Result<Network> {
    config.validate()?;
    let mut params = ParamStore::new(seed);
    let m = config.size_multiple();
    let probe = Tensor4::zeros([1, m, m, config.input_channels]);
    let trace = {
        let mut g = Graph::new(&mut params, false, 0);
        let x = g.input(probe);
        forward_graph(&config, &mut g, x)?.1
    };
    if trace != config.expected_channels() {
        return invalid(format!("channel bookkeeping mismatch: built {trace:?}, expected {:?}", config.expected_channels()));
    }
    params.freeze();
    Ok(Network { config, params })
}

/// Number of trainable values.
pub fn count_params(net: &Network) -> usize {
    net.params.trainable_count()
}

impl Network {
    /// Inference-mode probabilities, shape `[n, h, w, 2]`.
    pub fn predict(&mut self, batch: &Tensor4) -> Result<Tensor4> {
        let mut g = Graph::new(&mut self.params, false, 0);
        let x = g.input(batch.clone());
        let (p, _) = forward_graph(&self.config, &mut g, x)?;
        Ok(g.value(p).clone())
    }
}
