//! Building blocks of the noise predictor, each recorded onto a [`Tape`].

use crate::autograd::{ConvSpec, Gradients, NodeId, Tape, Tensor};
use crate::error::{invalid, shape, Result};

use super::params::{Init, ParamLayout, PredictorParams};

/// Which side of the DCT a feature map currently lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Frequency,
    Time,
}

/// A `channels × length` activation on the tape, tagged with its domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureMap {
    pub node: NodeId,
    pub domain: Domain,
}

impl FeatureMap {
    pub fn freq(node: NodeId) -> Self {
        Self { node, domain: Domain::Frequency }
    }

    pub fn time(node: NodeId) -> Self {
        Self { node, domain: Domain::Time }
    }

    fn expect(&self, domain: Domain, op: &str) -> Result<()> {
        if self.domain != domain {
            return Err(invalid(format!("{op} expects a {domain:?}-domain map, got {:?}", self.domain)));
        }
        Ok(())
    }
}

/// Forward-pass context: the tape, the parameters it reads from, and the
/// noise-level embedding shared by every FiLM layer.
pub struct Ctx<'a> {
    pub tape: Tape,
    layout: &'a ParamLayout,
    params: &'a PredictorParams,
    embedding: NodeId,
}

impl<'a> Ctx<'a> {
    pub fn new(layout: &'a ParamLayout, params: &'a PredictorParams, embedding: Vec<f64>) -> Self {
        let mut tape = Tape::new();
        let embedding = tape.leaf(Tensor::column(embedding));
        Self { tape, layout, params, embedding }
    }

    pub fn embedding(&self) -> NodeId {
        self.embedding
    }

    pub fn param(&mut self, slot: usize) -> NodeId {
        let t = self.params.tensor(self.layout.slot(slot));
        self.tape.param(slot, t)
    }

    pub fn channels(&self, node: NodeId) -> usize {
        self.tape.shape(node).0
    }

    /// Scatters tape gradients into a flat vector in layout order. Also
    /// returns the slots that received no gradient at all.
    pub fn param_gradients(&self, grads: &Gradients) -> (Vec<f64>, Vec<usize>) {
        let mut flat = vec![0.0; self.layout.total()];
        let mut touched = vec![false; self.layout.slots().len()];
        for (node, slot) in self.tape.param_nodes() {
            if let Some(g) = grads.get(node) {
                let range = self.layout.slot(slot).range();
                for (dst, v) in flat[range].iter_mut().zip(&g.data) {
                    *dst += v;
                }
                touched[slot] = true;
            }
        }
        let untouched = touched.iter().enumerate().filter(|(_, t)| !**t).map(|(i, _)| i).collect();
        (flat, untouched)
    }
}

fn fan_in_uniform(fan_in: usize) -> Init {
    Init::Uniform(1.0 / (fan_in as f64).sqrt())
}

/// 1-D convolution with bias.
#[derive(Debug, Clone)]
pub struct Conv {
    pub weight: usize,
    pub bias: usize,
    pub spec: ConvSpec,
    pub cin: usize,
    pub cout: usize,
}

impl Conv {
    pub fn new(layout: &mut ParamLayout, name: &str, cin: usize, cout: usize, spec: ConvSpec) -> Self {
        Self::with_init(layout, name, cin, cout, spec, None)
    }

    /// Convolution whose weights start at zero.
    pub fn zeroed(layout: &mut ParamLayout, name: &str, cin: usize, cout: usize, spec: ConvSpec) -> Self {
        Self::with_init(layout, name, cin, cout, spec, Some(Init::Zeros))
    }

    fn with_init(
        layout: &mut ParamLayout,
        name: &str,
        cin: usize,
        cout: usize,
        spec: ConvSpec,
        init: Option<Init>,
    ) -> Self {
        let fan_in = cin / spec.groups * spec.kernel;
        let init = init.unwrap_or_else(|| fan_in_uniform(fan_in));
        let weight = layout.add(format!("{name}.weight"), cout, fan_in, init);
        let bias = layout.add(format!("{name}.bias"), cout, 1, Init::Zeros);
        Self { weight, bias, spec, cin, cout }
    }

    pub fn apply(&self, ctx: &mut Ctx, x: NodeId) -> Result<NodeId> {
        let c = ctx.channels(x);
        if c != self.cin {
            return Err(shape(format!("conv expects {} input channels, got {c}", self.cin)));
        }
        let w = ctx.param(self.weight);
        let b = ctx.param(self.bias);
        Ok(ctx.tape.conv1d(x, w, b, self.spec))
    }
}

/// Group normalisation with per-channel affine parameters.
#[derive(Debug, Clone)]
pub struct Norm {
    pub gamma: usize,
    pub beta: usize,
    pub groups: usize,
    pub channels: usize,
}

impl Norm {
    pub fn new(layout: &mut ParamLayout, name: &str, channels: usize, groups: usize) -> Result<Self> {
        if groups == 0 || channels % groups != 0 {
            return Err(invalid(format!("{channels} channels not divisible into {groups} groups")));
        }
        let gamma = layout.add(format!("{name}.gamma"), channels, 1, Init::Ones);
        let beta = layout.add(format!("{name}.beta"), channels, 1, Init::Zeros);
        Ok(Self { gamma, beta, groups, channels })
    }

    pub fn apply(&self, ctx: &mut Ctx, x: NodeId) -> Result<NodeId> {
        let c = ctx.channels(x);
        if c != self.channels {
            return Err(shape(format!("norm expects {} channels, got {c}", self.channels)));
        }
        let g = ctx.param(self.gamma);
        let b = ctx.param(self.beta);
        Ok(ctx.tape.group_norm(x, g, b, self.groups))
    }
}

/// Noise-level conditioning: embedding → linear → per-channel `(γ, β)`,
/// applied as `(1 + γ)⊙F + β`.
#[derive(Debug, Clone)]
pub struct Film {
    pub weight: usize,
    pub bias: usize,
    pub channels: usize,
}

impl Film {
    pub fn new(layout: &mut ParamLayout, name: &str, embed_dim: usize, channels: usize) -> Self {
        let weight = layout.add(format!("{name}.weight"), 2 * channels, embed_dim, fan_in_uniform(embed_dim));
        let bias = layout.add(format!("{name}.bias"), 2 * channels, 1, Init::Zeros);
        Self { weight, bias, channels }
    }

    /// `(γ, β)` nodes, each `channels × 1`.
    pub fn coefficients(&self, ctx: &mut Ctx) -> (NodeId, NodeId) {
        let w = ctx.param(self.weight);
        let b = ctx.param(self.bias);
        let emb = ctx.embedding();
        let lin = ctx.tape.matmul(w, emb, false, false);
        let lin = ctx.tape.add(lin, b);
        let gamma = ctx.tape.slice_rows(lin, 0, self.channels);
        let beta = ctx.tape.slice_rows(lin, self.channels, self.channels);
        (gamma, beta)
    }

    pub fn modulate(&self, ctx: &mut Ctx, x: NodeId) -> Result<NodeId> {
        let c = ctx.channels(x);
        if c != self.channels {
            return Err(shape(format!("FiLM expects {} channels, got {c}", self.channels)));
        }
        let (gamma, beta) = self.coefficients(ctx);
        Ok(ctx.tape.scale_shift(x, gamma, beta))
    }
}

/// GN → Swish → conv → FiLM → GN → Swish → conv, plus a (projected) skip.
#[derive(Debug, Clone)]
pub struct ResBlock {
    pub norm1: Norm,
    pub conv1: Conv,
    pub film: Film,
    pub norm2: Norm,
    pub conv2: Conv,
    pub skip: Option<Conv>,
}

impl ResBlock {
    pub fn new(
        layout: &mut ParamLayout,
        name: &str,
        cin: usize,
        cout: usize,
        groups: usize,
        embed_dim: usize,
        kernel: usize,
    ) -> Result<Self> {
        let norm1 = Norm::new(layout, &format!("{name}.norm1"), cin, groups)?;
        let conv1 = Conv::new(layout, &format!("{name}.conv1"), cin, cout, ConvSpec::same(kernel));
        let film = Film::new(layout, &format!("{name}.film"), embed_dim, cout);
        let norm2 = Norm::new(layout, &format!("{name}.norm2"), cout, groups)?;
        let conv2 = Conv::new(layout, &format!("{name}.conv2"), cout, cout, ConvSpec::same(kernel));
        let skip = (cin != cout).then(|| Conv::new(layout, &format!("{name}.skip"), cin, cout, ConvSpec::same(1)));
        Ok(Self { norm1, conv1, film, norm2, conv2, skip })
    }

    pub fn apply(&self, ctx: &mut Ctx, f: FeatureMap) -> Result<FeatureMap> {
        let x = f.node;
        let h = self.norm1.apply(ctx, x)?;
        let h = ctx.tape.silu(h);
        let h = self.conv1.apply(ctx, h)?;
        let h = self.film.modulate(ctx, h)?;
        let h = self.norm2.apply(ctx, h)?;
        let h = ctx.tape.silu(h);
        let h = self.conv2.apply(ctx, h)?;
        let skip = match &self.skip {
            Some(conv) => conv.apply(ctx, x)?,
            None => x,
        };
        Ok(FeatureMap { node: ctx.tape.add(h, skip), domain: f.domain })
    }
}

/// Temporal feature extraction: pad + inverse DCT, a time-domain residual
/// block, then forward DCT and truncation back to the input length.
#[derive(Debug, Clone)]
pub struct Tfe {
    pub block: ResBlock,
    pub full_len: usize,
}

impl Tfe {
    pub fn apply(&self, ctx: &mut Ctx, f: FeatureMap) -> Result<FeatureMap> {
        f.expect(Domain::Frequency, "TFE")?;
        let keep = ctx.tape.shape(f.node).1;
        if keep > self.full_len {
            return Err(shape(format!("TFE input length {keep} exceeds time length {}", self.full_len)));
        }
        let t = ctx.tape.idct_rows(f.node, self.full_len);
        let t = self.block.apply(ctx, FeatureMap::time(t))?;
        Ok(FeatureMap::freq(ctx.tape.dct_rows(t.node, keep)))
    }
}

/// Depthwise-separable projection: pointwise 1×1 followed by depthwise `k`.
#[derive(Debug, Clone)]
pub struct SeparableConv {
    pub pointwise: Conv,
    pub depthwise: Conv,
}

impl SeparableConv {
    pub fn new(layout: &mut ParamLayout, name: &str, channels: usize, kernel: usize) -> Self {
        let pointwise = Conv::new(layout, &format!("{name}.pw"), channels, channels, ConvSpec::same(1));
        let spec = ConvSpec { kernel, stride: 1, pad: kernel / 2, groups: channels };
        let depthwise = Conv::new(layout, &format!("{name}.dw"), channels, channels, spec);
        Self { pointwise, depthwise }
    }

    pub fn apply(&self, ctx: &mut Ctx, x: NodeId) -> Result<NodeId> {
        let h = self.pointwise.apply(ctx, x)?;
        self.depthwise.apply(ctx, h)
    }
}

/// Temporal feature fusion: channel-by-channel attention computed between
/// time-domain views of separable-conv projections.
#[derive(Debug, Clone)]
pub struct Tff {
    pub query: SeparableConv,
    pub key: SeparableConv,
    pub value: SeparableConv,
    pub full_len: usize,
    pub channels: usize,
}

/// Intermediate nodes of a TFF pass, exposed for inspection.
#[derive(Debug, Clone, Copy)]
pub struct TffTrace {
    pub t_query: NodeId,
    pub t_key: NodeId,
    pub t_value: NodeId,
    /// `C × C` row-stochastic attention map.
    pub attention: NodeId,
    pub output: FeatureMap,
}

impl Tff {
    pub fn new(layout: &mut ParamLayout, name: &str, channels: usize, kernel: usize, full_len: usize) -> Self {
        Self {
            query: SeparableConv::new(layout, &format!("{name}.q"), channels, kernel),
            key: SeparableConv::new(layout, &format!("{name}.k"), channels, kernel),
            value: SeparableConv::new(layout, &format!("{name}.v"), channels, kernel),
            full_len,
            channels,
        }
    }

    pub fn apply(&self, ctx: &mut Ctx, f: FeatureMap) -> Result<FeatureMap> {
        Ok(self.trace(ctx, f)?.output)
    }

    pub fn trace(&self, ctx: &mut Ctx, f: FeatureMap) -> Result<TffTrace> {
        f.expect(Domain::Frequency, "TFF")?;
        let q = self.query.apply(ctx, f.node)?;
        let k = self.key.apply(ctx, f.node)?;
        let v = self.value.apply(ctx, f.node)?;
        let t_query = ctx.tape.idct_rows(q, self.full_len);
        let t_key = ctx.tape.idct_rows(k, self.full_len);
        let t_value = ctx.tape.idct_rows(v, self.full_len);
        Ok(self.fuse(ctx, f, t_query, t_key, t_value))
    }

    /// `F + trunc(DCT(Softmax(T_Q·T_Kᵀ/√C)·T_V))`.
    pub fn fuse(&self, ctx: &mut Ctx, f: FeatureMap, t_query: NodeId, t_key: NodeId, t_value: NodeId) -> TffTrace {
        let keep = ctx.tape.shape(f.node).1;
        let logits = ctx.tape.matmul(t_query, t_key, false, true);
        let logits = ctx.tape.scale(logits, 1.0 / (self.channels as f64).sqrt());
        let attention = ctx.tape.softmax_rows(logits);
        let fused = ctx.tape.matmul(attention, t_value, false, false);
        let back = ctx.tape.dct_rows(fused, keep);
        let out = ctx.tape.add(f.node, back);
        TffTrace { t_query, t_key, t_value, attention, output: FeatureMap::freq(out) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Down,
    Up,
}

/// How the time-domain leg of a downsampling detour reduces length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DownMode {
    /// Stride-2 convolution.
    Strided,
    /// Pairwise linear interpolation, then a stride-1 convolution.
    Interpolate,
}

/// Resampling of a frequency-domain map by a round trip through time:
/// pad + inverse DCT, resample in time, forward DCT, truncate.
#[derive(Debug, Clone)]
pub struct Detour {
    pub conv: Conv,
    pub direction: Direction,
    pub mode: DownMode,
    /// Time length at the input scale.
    pub full_len: usize,
}

impl Detour {
    pub fn new(
        layout: &mut ParamLayout,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        direction: Direction,
        mode: DownMode,
        full_len: usize,
    ) -> Self {
        let spec = match (direction, mode) {
            (Direction::Down, DownMode::Strided) => ConvSpec { kernel, stride: 2, pad: kernel / 2, groups: 1 },
            _ => ConvSpec::same(kernel),
        };
        let conv = Conv::new(layout, name, cin, cout, spec);
        Self { conv, direction, mode, full_len }
    }

    pub fn apply(&self, ctx: &mut Ctx, f: FeatureMap) -> Result<FeatureMap> {
        f.expect(Domain::Frequency, "detour resample")?;
        let keep = ctx.tape.shape(f.node).1;
        let t = ctx.tape.idct_rows(f.node, self.full_len);
        let (t, keep_out) = match self.direction {
            Direction::Down => {
                if keep % 2 != 0 || self.full_len % 2 != 0 {
                    return Err(shape(format!(
                        "cannot halve {keep} coefficients / {} samples",
                        self.full_len
                    )));
                }
                let t = match self.mode {
                    DownMode::Strided => self.conv.apply(ctx, t)?,
                    DownMode::Interpolate => {
                        let d = ctx.tape.downsample2(t);
                        self.conv.apply(ctx, d)?
                    }
                };
                (t, keep / 2)
            }
            Direction::Up => {
                let u = ctx.tape.upsample2(t);
                (self.conv.apply(ctx, u)?, keep * 2)
            }
        };
        Ok(FeatureMap::freq(ctx.tape.dct_rows(t, keep_out)))
    }
}

/// Scaled dot-product self-attention over positions, with residual.
#[derive(Debug, Clone)]
pub struct SelfAttention {
    pub norm: Norm,
    pub query: Conv,
    pub key: Conv,
    pub value: Conv,
    pub out: Conv,
    pub heads: usize,
    pub channels: usize,
}

impl SelfAttention {
    pub fn new(layout: &mut ParamLayout, name: &str, channels: usize, groups: usize, heads: usize) -> Result<Self> {
        if heads == 0 || channels % heads != 0 {
            return Err(invalid(format!("{channels} channels not divisible into {heads} heads")));
        }
        let norm = Norm::new(layout, &format!("{name}.norm"), channels, groups)?;
        let proj = |layout: &mut ParamLayout, n: &str| {
            Conv::new(layout, &format!("{name}.{n}"), channels, channels, ConvSpec::same(1))
        };
        Ok(Self {
            norm,
            query: proj(layout, "q"),
            key: proj(layout, "k"),
            value: proj(layout, "v"),
            out: proj(layout, "out"),
            heads,
            channels,
        })
    }

    pub fn apply(&self, ctx: &mut Ctx, f: FeatureMap) -> Result<FeatureMap> {
        Ok(self.trace(ctx, f)?.0)
    }

    /// Output plus the per-head `L × L` attention maps.
    pub fn trace(&self, ctx: &mut Ctx, f: FeatureMap) -> Result<(FeatureMap, Vec<NodeId>)> {
        let h = self.norm.apply(ctx, f.node)?;
        let q = self.query.apply(ctx, h)?;
        let k = self.key.apply(ctx, h)?;
        let v = self.value.apply(ctx, h)?;
        let d = self.channels / self.heads;
        let scale = 1.0 / (d as f64).sqrt();
        let mut maps = Vec::with_capacity(self.heads);
        let mut merged: Option<NodeId> = None;
        for head in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (
                    ctx.tape.slice_rows(q, head * d, d),
                    ctx.tape.slice_rows(k, head * d, d),
                    ctx.tape.slice_rows(v, head * d, d),
                )
            };
            let scores = ctx.tape.matmul(qh, kh, true, false);
            let scores = ctx.tape.scale(scores, scale);
            let attn = ctx.tape.softmax_rows(scores);
            maps.push(attn);
            let oh = ctx.tape.matmul(vh, attn, false, true);
            merged = Some(match merged {
                None => oh,
                Some(prev) => ctx.tape.concat_rows(prev, oh),
            });
        }
        let o = self.out.apply(ctx, merged.expect("at least one head"))?;
        Ok((FeatureMap { node: ctx.tape.add(f.node, o), domain: f.domain }, maps))
    }
}
