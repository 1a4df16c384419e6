//! U-Net noise predictor operating on truncated DCT spectra, with
//! time-frequency enhancement (TFE/TFF) on the encoder side.

pub mod gradcheck;
pub mod layers;
pub mod params;

use rand::Rng;
use rayon::prelude::*;

use crate::autograd::{ConvSpec, NodeId, Tensor};
use crate::error::{invalid, shape, Error, Result};

pub use layers::{Ctx, Direction, Domain, DownMode, FeatureMap};
pub use params::{Init, ParamLayout, ParamSlot, PredictorParams};

use layers::{Conv, Detour, Norm, ResBlock, SelfAttention, Tfe, Tff};

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorConfig {
    pub levels: usize,
    pub base_channels: usize,
    /// One multiplier per encoder level.
    pub channel_multipliers: Vec<usize>,
    pub groups: usize,
    pub attention_heads: usize,
    /// Number of retained spectral coefficients `K`.
    pub input_length: usize,
    /// Time-domain length `N` the spectra were taken from.
    pub full_length: usize,
    pub embed_dim: usize,
    pub kernel: usize,
    /// Multiplier applied to `√ᾱ` before sinusoidal encoding.
    pub level_scale: f64,
    pub down_mode: DownMode,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            base_channels: 16,
            channel_multipliers: vec![1, 2, 2],
            groups: 4,
            attention_heads: 1,
            input_length: 1000,
            full_length: 3600,
            embed_dim: 64,
            kernel: 3,
            level_scale: 5000.0,
            down_mode: DownMode::Strided,
        }
    }
}

impl PredictorConfig {
    /// Tiny network used for exhaustive gradient checks.
    pub fn toy() -> Self {
        Self {
            levels: 2,
            base_channels: 4,
            channel_multipliers: vec![1, 1],
            groups: 2,
            attention_heads: 1,
            input_length: 8,
            full_length: 16,
            embed_dim: 8,
            kernel: 3,
            level_scale: 5000.0,
            down_mode: DownMode::Strided,
        }
    }

    /// Channel count at encoder level `l`; the bottleneck reuses the last level.
    pub fn channels(&self, l: usize) -> usize {
        self.base_channels * self.channel_multipliers[l.min(self.levels - 1)]
    }

    /// Encoder level hosting TFF, and the decoder level hosting self-attention.
    pub fn middle_level(&self) -> usize {
        self.levels / 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(invalid("predictor needs at least one level"));
        }
        if self.channel_multipliers.len() != self.levels {
            return Err(invalid(format!(
                "{} channel multipliers for {} levels",
                self.channel_multipliers.len(),
                self.levels
            )));
        }
        if self.groups == 0 || self.base_channels == 0 || self.base_channels % self.groups != 0 {
            return Err(invalid(format!(
                "base_channels {} not divisible by groups {}",
                self.base_channels, self.groups
            )));
        }
        for l in 0..self.levels {
            let c = self.channels(l);
            if c == 0 || c % self.groups != 0 || c % self.attention_heads.max(1) != 0 {
                return Err(invalid(format!("level {l} width {c} incompatible with groups/heads")));
            }
        }
        if self.attention_heads == 0 {
            return Err(invalid("attention_heads must be positive"));
        }
        let div = 1usize << self.levels;
        if self.input_length == 0 || self.input_length % div != 0 {
            return Err(invalid(format!(
                "input_length {} not divisible by 2^levels = {div}",
                self.input_length
            )));
        }
        if self.full_length % div != 0 || self.full_length < self.input_length {
            return Err(invalid(format!(
                "full_length {} must be a multiple of {div} and at least input_length {}",
                self.full_length, self.input_length
            )));
        }
        if self.embed_dim < 2 || self.embed_dim % 2 != 0 {
            return Err(invalid(format!("embed_dim {} must be even and >= 2", self.embed_dim)));
        }
        if self.kernel % 2 == 0 {
            return Err(invalid(format!("kernel {} must be odd", self.kernel)));
        }
        if !(self.level_scale > 0.0 && self.level_scale.is_finite()) {
            return Err(invalid("level_scale must be positive"));
        }
        Ok(())
    }

    /// `key=value` pairs, in a fixed order.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mults: Vec<String> = self.channel_multipliers.iter().map(|m| m.to_string()).collect();
        let down = match self.down_mode {
            DownMode::Strided => "strided",
            DownMode::Interpolate => "interpolate",
        };
        vec![
            ("levels".into(), self.levels.to_string()),
            ("base_channels".into(), self.base_channels.to_string()),
            ("channel_multipliers".into(), mults.join(",")),
            ("groups".into(), self.groups.to_string()),
            ("attention_heads".into(), self.attention_heads.to_string()),
            ("input_length".into(), self.input_length.to_string()),
            ("full_length".into(), self.full_length.to_string()),
            ("embed_dim".into(), self.embed_dim.to_string()),
            ("kernel".into(), self.kernel.to_string()),
            ("level_scale".into(), format!("{:?}", self.level_scale)),
            ("down_mode".into(), down.into()),
        ]
    }

    /// Applies one `key=value` setting. Returns `Ok(false)` for unknown keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim().parse().map_err(|_| invalid(format!("bad value for {key}: {v:?}")))
        }
        match key {
            "levels" => self.levels = num(key, value)?,
            "base_channels" => self.base_channels = num(key, value)?,
            "channel_multipliers" => {
                self.channel_multipliers =
                    value.split(',').map(|s| num(key, s)).collect::<Result<Vec<usize>>>()?
            }
            "groups" => self.groups = num(key, value)?,
            "attention_heads" => self.attention_heads = num(key, value)?,
            "input_length" => self.input_length = num(key, value)?,
            "full_length" => self.full_length = num(key, value)?,
            "embed_dim" => self.embed_dim = num(key, value)?,
            "kernel" => self.kernel = num(key, value)?,
            "level_scale" => self.level_scale = num(key, value)?,
            "down_mode" => {
                self.down_mode = match value.trim() {
                    "strided" => DownMode::Strided,
                    "interpolate" => DownMode::Interpolate,
                    other => return Err(invalid(format!("unknown down_mode {other:?}"))),
                }
            }
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Sinusoidal embedding of `level · scale`: `[sin(v·ω_i)…, cos(v·ω_i)…]`
/// with `ω_i = 10000^(−i/half)`.
pub fn noise_embedding(level: f64, dim: usize, scale: f64) -> Vec<f64> {
    let half = dim / 2;
    let v = level * scale;
    let freqs: Vec<f64> = (0..half).map(|i| (-(10000f64.ln()) * i as f64 / half as f64).exp()).collect();
    freqs.iter().map(|w| (v * w).sin()).chain(freqs.iter().map(|w| (v * w).cos())).collect()
}

#[derive(Debug, Clone)]
struct EncoderLevel {
    block: ResBlock,
    tfe: Tfe,
    tff: Option<Tff>,
    down: Detour,
}

#[derive(Debug, Clone)]
struct DecoderLevel {
    up: Detour,
    block: ResBlock,
    attn: Option<SelfAttention>,
}

/// Loss value, flat gradient and the names of parameters that received none.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub disconnected: Vec<String>,
}

/// The noise predictor `ε_θ(x_t, √ᾱ, x̃)`.
#[derive(Debug, Clone)]
pub struct Predictor {
    config: PredictorConfig,
    layout: ParamLayout,
    stem: Conv,
    encoder: Vec<EncoderLevel>,
    mid1: ResBlock,
    mid_attn: SelfAttention,
    mid2: ResBlock,
    decoder: Vec<DecoderLevel>,
    out_norm: Norm,
    out_conv: Conv,
}

impl Predictor {
    pub fn new(config: PredictorConfig) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let (g, e, k) = (c.groups, c.embed_dim, c.kernel);
        let mut layout = ParamLayout::new();
        let lay = &mut layout;
        let stem = Conv::new(lay, "stem", 2, c.channels(0), ConvSpec::same(k));
        let mut encoder = Vec::with_capacity(c.levels);
        for l in 0..c.levels {
            let ch = c.channels(l);
            let full = c.full_length >> l;
            let p = format!("enc{l}");
            encoder.push(EncoderLevel {
                block: ResBlock::new(lay, &format!("{p}.res"), ch, ch, g, e, k)?,
                tfe: Tfe { block: ResBlock::new(lay, &format!("{p}.tfe"), ch, ch, g, e, k)?, full_len: full },
                tff: (l == c.middle_level()).then(|| Tff::new(lay, &format!("{p}.tff"), ch, k, full)),
                down: Detour::new(lay, &format!("{p}.down"), ch, c.channels(l + 1), k, Direction::Down, c.down_mode, full),
            });
        }
        let bc = c.channels(c.levels);
        let mid1 = ResBlock::new(lay, "mid.res1", bc, bc, g, e, k)?;
        let mid_attn = SelfAttention::new(lay, "mid.attn", bc, g, c.attention_heads)?;
        let mid2 = ResBlock::new(lay, "mid.res2", bc, bc, g, e, k)?;
        let mut decoder = Vec::with_capacity(c.levels);
        for l in (0..c.levels).rev() {
            let below = c.channels(l + 1);
            let ch = c.channels(l);
            let p = format!("dec{l}");
            decoder.push(DecoderLevel {
                up: Detour::new(lay, &format!("{p}.up"), below, below, k, Direction::Up, c.down_mode, c.full_length >> (l + 1)),
                block: ResBlock::new(lay, &format!("{p}.res"), below + ch, ch, g, e, k)?,
                attn: if l == c.middle_level() {
                    Some(SelfAttention::new(lay, &format!("{p}.attn"), ch, g, c.attention_heads)?)
                } else {
                    None
                },
            });
        }
        let out_norm = Norm::new(lay, "out.norm", c.channels(0), g)?;
        let out_conv = Conv::zeroed(lay, "out.conv", c.channels(0), 1, ConvSpec::same(k));
        Ok(Self { config, layout, stem, encoder, mid1, mid_attn, mid2, decoder, out_norm, out_conv })
    }

    pub fn config(&self) -> &PredictorConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.layout.total()
    }

    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> PredictorParams {
        self.layout.init(rng)
    }

    pub fn embedding(&self, level: f64) -> Vec<f64> {
        noise_embedding(level, self.config.embed_dim, self.config.level_scale)
    }

    fn check_inputs(&self, params: &PredictorParams, x_t: &[f64], level: f64, cond: &[f64]) -> Result<()> {
        let k = self.config.input_length;
        if x_t.len() != k || cond.len() != k {
            return Err(shape(format!(
                "predictor expects {k} coefficients, got x_t={} cond={}",
                x_t.len(),
                cond.len()
            )));
        }
        if params.len() != self.layout.total() {
            return Err(shape(format!("{} parameters supplied, model has {}", params.len(), self.layout.total())));
        }
        if !level.is_finite() {
            return Err(invalid(format!("noise level {level} is not finite")));
        }
        Ok(())
    }

    /// Records the full forward pass onto `ctx` and returns the `1 × K` output.
    pub fn forward(&self, ctx: &mut Ctx, x_t: NodeId, cond: NodeId) -> Result<NodeId> {
        let x = ctx.tape.concat_rows(x_t, cond);
        let mut h = FeatureMap::freq(self.stem.apply(ctx, x)?);
        let mut skips = Vec::with_capacity(self.encoder.len());
        for enc in &self.encoder {
            h = enc.block.apply(ctx, h)?;
            h = enc.tfe.apply(ctx, h)?;
            if let Some(tff) = &enc.tff {
                h = tff.apply(ctx, h)?;
            }
            skips.push(h);
            h = enc.down.apply(ctx, h)?;
        }
        h = self.mid1.apply(ctx, h)?;
        h = self.mid_attn.apply(ctx, h)?;
        h = self.mid2.apply(ctx, h)?;
        for dec in &self.decoder {
            h = dec.up.apply(ctx, h)?;
            let skip = skips.pop().expect("one skip per level");
            let cat = ctx.tape.concat_rows(h.node, skip.node);
            h = dec.block.apply(ctx, FeatureMap::freq(cat))?;
            if let Some(attn) = &dec.attn {
                h = attn.apply(ctx, h)?;
            }
        }
        let o = self.out_norm.apply(ctx, h.node)?;
        let o = ctx.tape.silu(o);
        self.out_conv.apply(ctx, o)
    }

    /// Noise estimate for one noisy spectrum at continuous level `√ᾱ`.
    pub fn predict_noise(&self, params: &PredictorParams, x_t: &[f64], level: f64, cond: &[f64]) -> Result<Vec<f64>> {
        self.check_inputs(params, x_t, level, cond)?;
        let mut ctx = Ctx::new(&self.layout, params, self.embedding(level));
        let xi = ctx.tape.leaf(Tensor::row(x_t.to_vec()));
        let ci = ctx.tape.leaf(Tensor::row(cond.to_vec()));
        let out = self.forward(&mut ctx, xi, ci)?;
        let v = ctx.tape.value(out).data.clone();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical("predictor produced non-finite output".into()));
        }
        Ok(v)
    }

    /// Independent predictions for a batch, evaluated in parallel.
    pub fn predict_noise_batch(
        &self,
        params: &PredictorParams,
        x_t: &[Vec<f64>],
        levels: &[f64],
        cond: &[Vec<f64>],
    ) -> Result<Vec<Vec<f64>>> {
        if x_t.len() != levels.len() || x_t.len() != cond.len() {
            return Err(shape("batch components differ in length"));
        }
        (0..x_t.len())
            .into_par_iter()
            .map(|i| self.predict_noise(params, &x_t[i], levels[i], &cond[i]))
            .collect()
    }

    /// Mean absolute error between the prediction and `target`, with its
    /// gradient in layout order.
    pub fn loss_and_grad(
        &self,
        params: &PredictorParams,
        x_t: &[f64],
        level: f64,
        cond: &[f64],
        target: &[f64],
    ) -> Result<LossGrad> {
        self.check_inputs(params, x_t, level, cond)?;
        if target.len() != x_t.len() {
            return Err(shape("target length differs from input"));
        }
        let mut ctx = Ctx::new(&self.layout, params, self.embedding(level));
        let xi = ctx.tape.leaf(Tensor::row(x_t.to_vec()));
        let ci = ctx.tape.leaf(Tensor::row(cond.to_vec()));
        let out = self.forward(&mut ctx, xi, ci)?;
        let ti = ctx.tape.leaf(Tensor::row(target.to_vec()));
        let loss = ctx.tape.mean_abs_diff(out, ti);
        let value = ctx.tape.value(loss).data[0];
        if !value.is_finite() {
            return Err(Error::Numerical("non-finite training loss".into()));
        }
        let grads = ctx.tape.backward(loss);
        let (grad, untouched) = ctx.param_gradients(&grads);
        let disconnected = untouched.into_iter().map(|i| self.layout.slot(i).name.clone()).collect();
        Ok(LossGrad { loss: value, grad, disconnected })
    }

    /// Human-readable parameter table.
    pub fn describe(&self) -> String {
        let c = &self.config;
        let mut s = String::new();
        s.push_str(&format!(
            "levels={} base_channels={} multipliers={:?} groups={} heads={} K={} N={} embed_dim={} kernel={}\n",
            c.levels,
            c.base_channels,
            c.channel_multipliers,
            c.groups,
            c.attention_heads,
            c.input_length,
            c.full_length,
            c.embed_dim,
            c.kernel
        ));
        for l in 0..=c.levels {
            s.push_str(&format!(
                "  scale {l}: {} coefficients, {} samples, {} channels\n",
                c.input_length >> l,
                c.full_length >> l,
                c.channels(l)
            ));
        }
        let width = self.layout.slots().iter().map(|p| p.name.len()).max().unwrap_or(4).max(4);
        s.push_str(&format!("{:<width$}  {:>10}  {:>8}\n", "name", "shape", "count"));
        for p in self.layout.slots() {
            s.push_str(&format!("{:<width$}  {:>10}  {:>8}\n", p.name, format!("{}x{}", p.rows, p.cols), p.len()));
        }
        s.push_str(&format!("total parameters: {}\n", self.layout.total()));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::gradcheck::check_gradients;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_params(p: &Predictor, seed: u64, amp: f64) -> PredictorParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = p.init_params(&mut rng);
        for v in params.values_mut() {
            *v += rng.gen_range(-amp..amp);
        }
        params
    }

    fn signal(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn default_config_is_valid() {
        let p = Predictor::new(PredictorConfig::default()).unwrap();
        assert!(p.param_count() > 10_000);
        assert!(p.describe().contains("total parameters"));
    }

    #[test]
    fn config_validation() {
        let bad = |f: fn(&mut PredictorConfig)| {
            let mut c = PredictorConfig::toy();
            f(&mut c);
            c.validate().is_err()
        };
        assert!(bad(|c| c.base_channels = 5));
        assert!(bad(|c| c.input_length = 10));
        assert!(bad(|c| c.channel_multipliers = vec![1]));
        assert!(bad(|c| c.levels = 0));
        assert!(bad(|c| c.embed_dim = 7));
        assert!(bad(|c| c.full_length = 4));
        assert!(PredictorConfig::toy().validate().is_ok());
    }

    #[test]
    fn config_pairs_round_trip() {
        let mut c = PredictorConfig::toy();
        c.down_mode = DownMode::Interpolate;
        c.level_scale = 1234.5;
        let mut back = PredictorConfig::default();
        for (k, v) in c.to_pairs() {
            assert!(back.set(&k, &v).unwrap());
        }
        assert_eq!(back, c);
        assert!(!back.set("nope", "1").unwrap());
        assert!(back.set("levels", "x").is_err());
    }

    #[test]
    fn embedding_shape_and_distinctness() {
        let e = noise_embedding(0.5, 8, 5000.0);
        assert_eq!(e.len(), 8);
        assert!((e[0] - (2500f64).sin()).abs() < 1e-12);
        assert!((e[4] - (2500f64).cos()).abs() < 1e-12);
        assert_ne!(noise_embedding(0.1, 8, 5000.0), noise_embedding(0.1001, 8, 5000.0));
    }

    #[test]
    fn zero_head_gives_zero_output_of_input_shape() {
        for cfg in [PredictorConfig::toy(), PredictorConfig { levels: 3, channel_multipliers: vec![1, 2, 2], input_length: 16, full_length: 48, ..PredictorConfig::toy() }] {
            let p = Predictor::new(cfg.clone()).unwrap();
            let params = p.init_params(&mut ChaCha8Rng::seed_from_u64(0));
            let k = cfg.input_length;
            let out = p.predict_noise(&params, &vec![0.0; k], 0.5, &vec![0.0; k]).unwrap();
            assert_eq!(out, vec![0.0; k]);
            let out = p.predict_noise(&params, &signal(1, k), 0.3, &signal(2, k)).unwrap();
            assert_eq!(out.len(), k);
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        let p = Predictor::new(PredictorConfig::toy()).unwrap();
        let params = p.init_params(&mut ChaCha8Rng::seed_from_u64(0));
        assert!(p.predict_noise(&params, &[0.0; 7], 0.5, &[0.0; 8]).is_err());
        assert!(p.predict_noise(&params, &[0.0; 8], 0.5, &[0.0; 9]).is_err());
        let short = PredictorParams::from_values(&ParamLayout::new(), vec![]).unwrap();
        assert!(p.predict_noise(&short, &[0.0; 8], 0.5, &[0.0; 8]).is_err());
    }

    #[test]
    fn batch_permutation_permutes_outputs() {
        let p = Predictor::new(PredictorConfig::toy()).unwrap();
        let params = random_params(&p, 3, 0.1);
        let xs: Vec<Vec<f64>> = (0..5).map(|i| signal(10 + i, 8)).collect();
        let cs: Vec<Vec<f64>> = (0..5).map(|i| signal(20 + i, 8)).collect();
        let ls = vec![0.1, 0.3, 0.5, 0.7, 0.9];
        let out = p.predict_noise_batch(&params, &xs, &ls, &cs).unwrap();
        let perm = [4usize, 2, 0, 3, 1];
        let px: Vec<_> = perm.iter().map(|&i| xs[i].clone()).collect();
        let pc: Vec<_> = perm.iter().map(|&i| cs[i].clone()).collect();
        let pl: Vec<_> = perm.iter().map(|&i| ls[i]).collect();
        let pout = p.predict_noise_batch(&params, &px, &pl, &pc).unwrap();
        for (j, &i) in perm.iter().enumerate() {
            assert_eq!(pout[j], out[i]);
        }
    }

    #[test]
    fn toy_model_gradients_match_finite_differences() {
        let p = Predictor::new(PredictorConfig::toy()).unwrap();
        assert!(p.param_count() <= 5000, "{}", p.param_count());
        let params = random_params(&p, 4, 0.1);
        let x = Tensor::row(signal(5, 8));
        let c = Tensor::row(signal(6, 8));
        let r = check_gradients(p.layout(), &params, &[x, c], &p.embedding(0.42), 1e-5, |ctx, ins| {
            p.forward(ctx, ins[0], ins[1])
        });
        assert!(r.max_rel_error < 1e-4, "{r:?}");
        assert_eq!(r.checked, p.param_count() + 16);
    }

    #[test]
    fn loss_gradient_is_deterministic_and_connected() {
        let p = Predictor::new(PredictorConfig::toy()).unwrap();
        let params = random_params(&p, 7, 0.1);
        let (x, c, e) = (signal(8, 8), signal(9, 8), signal(10, 8));
        let a = p.loss_and_grad(&params, &x, 0.6, &c, &e).unwrap();
        let b = p.loss_and_grad(&params, &x, 0.6, &c, &e).unwrap();
        assert_eq!(a.loss.to_bits(), b.loss.to_bits());
        assert!(a.grad.iter().zip(&b.grad).all(|(u, v)| u.to_bits() == v.to_bits()));
        assert!(a.disconnected.is_empty(), "{:?}", a.disconnected);
        // Central difference on the L1 loss for a handful of coordinates.
        let h = 1e-6;
        for i in (0..params.len()).step_by(97) {
            let mut up = params.clone();
            up.values_mut()[i] += h;
            let mut dn = params.clone();
            dn.values_mut()[i] -= h;
            let fd = (p.loss_and_grad(&up, &x, 0.6, &c, &e).unwrap().loss
                - p.loss_and_grad(&dn, &x, 0.6, &c, &e).unwrap().loss)
                / (2.0 * h);
            let an = a.grad[i];
            assert!((fd - an).abs() < 1e-7 || (fd - an).abs() / fd.abs().max(an.abs()) < 1e-4, "param {i}: {fd} vs {an}");
        }
    }

    #[test]
    fn linear_layer_gradient_is_input() {
        // d(Σ w·x)/dw = x for a 1×1 convolution over one channel.
        let mut layout = ParamLayout::new();
        let conv = Conv::new(&mut layout, "lin", 1, 1, ConvSpec::same(1));
        let params = PredictorParams::from_values(&layout, vec![0.3, 0.0]).unwrap();
        let x = vec![1.5, -2.0, 0.25];
        let mut ctx = Ctx::new(&layout, &params, vec![0.0, 1.0]);
        let xi = ctx.tape.leaf(Tensor::row(x.clone()));
        let y = conv.apply(&mut ctx, xi).unwrap();
        let s = ctx.tape.sum(y);
        let g = ctx.tape.backward(s);
        let (flat, _) = ctx.param_gradients(&g);
        assert!((flat[0] - x.iter().sum::<f64>()).abs() < 1e-15);
        assert_eq!(flat[1], 3.0);
    }
}
