//! Forward corruption, L1 training objective, ancestral sampling and
//! k-run ensembling over scaled truncated spectra.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{invalid, shape, Error, Result};
use crate::predictor::{LossGrad, Predictor, PredictorParams};
use crate::schedule::NoiseSchedule;
use crate::spectral::{from_spectrum, scale, to_spectrum, unscale, ScalingBound, TimeSignal};

/// Anything that estimates the injected noise from `(x_t, √ᾱ, x̃)`.
pub trait NoisePredictor: Sync {
    fn predict(&self, x_t: &[f64], level: f64, cond: &[f64]) -> Result<Vec<f64>>;
}

/// A predictor paired with its weights.
#[derive(Debug, Clone)]
pub struct Network {
    pub predictor: Predictor,
    pub params: PredictorParams,
}

impl NoisePredictor for Network {
    fn predict(&self, x_t: &[f64], level: f64, cond: &[f64]) -> Result<Vec<f64>> {
        self.predictor.predict_noise(&self.params, x_t, level, cond)
    }
}

/// Always predicts zero noise.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroPredictor;

impl NoisePredictor for ZeroPredictor {
    fn predict(&self, x_t: &[f64], _level: f64, _cond: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![0.0; x_t.len()])
    }
}

/// Draws `n` i.i.d. standard normal values.
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// `x_t = √ᾱ·x0 + √(1−ᾱ)·ε`.
pub fn forward_diffuse(x0: &[f64], sqrt_alpha_bar: f64, eps: &[f64]) -> Result<Vec<f64>> {
    if x0.len() != eps.len() {
        return Err(shape(format!("x0 has {} values, noise has {}", x0.len(), eps.len())));
    }
    if !(0.0..=1.0).contains(&sqrt_alpha_bar) {
        return Err(invalid(format!("noise level {sqrt_alpha_bar} outside [0, 1]")));
    }
    let a = sqrt_alpha_bar;
    let s = (1.0 - a * a).max(0.0).sqrt();
    Ok(x0.iter().zip(eps).map(|(x, e)| a * x + s * e).collect())
}

fn mean_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// One draw of the training objective without gradients: samples a noise
/// level and `ε`, and returns `mean |ε − ε_θ(x_t, √ᾱ, x̃)|`.
pub fn training_loss<P, R>(pred: &P, sched: &NoiseSchedule, x0: &[f64], cond: &[f64], rng: &mut R) -> Result<f64>
where
    P: NoisePredictor + ?Sized,
    R: Rng + ?Sized,
{
    let (_, level) = sched.sample_noise_level(rng);
    let eps = standard_normal(rng, x0.len());
    let x_t = forward_diffuse(x0, level, &eps)?;
    let out = pred.predict(&x_t, level, cond)?;
    let loss = mean_abs_diff(&out, &eps);
    if !loss.is_finite() {
        return Err(Error::Numerical("non-finite training loss".into()));
    }
    Ok(loss)
}

/// Same draw as [`training_loss`] but through the differentiable predictor,
/// returning the loss and its parameter gradient.
pub fn training_step<R: Rng + ?Sized>(
    predictor: &Predictor,
    params: &PredictorParams,
    sched: &NoiseSchedule,
    x0: &[f64],
    cond: &[f64],
    rng: &mut R,
) -> Result<LossGrad> {
    if x0.len() != cond.len() {
        return Err(shape("clean and conditioning spectra differ in length"));
    }
    let (_, level) = sched.sample_noise_level(rng);
    let eps = standard_normal(rng, x0.len());
    let x_t = forward_diffuse(x0, level, &eps)?;
    predictor.loss_and_grad(params, &x_t, level, cond, &eps)
}

/// Latent at timestep `t` alongside its conditioning spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub x_t: Vec<f64>,
    pub t: usize,
    pub cond: Vec<f64>,
}

/// Posterior mean `μ_θ = (x_t − β_t/√(1−ᾱ_t)·ε_θ)/√α_t`.
pub fn posterior_mean(sched: &NoiseSchedule, t: usize, x_t: &[f64], eps: &[f64]) -> Vec<f64> {
    let beta = sched.beta(t);
    let coef = beta / (1.0 - sched.alpha_bar(t)).sqrt();
    let inv = 1.0 / sched.alpha(t).sqrt();
    x_t.iter().zip(eps).map(|(x, e)| (x - coef * e) * inv).collect()
}

/// Reverse-step variance: `(1−ᾱ_{t−1})/(1−ᾱ_t)·β_t` for `t > 1`, `β_1` at `t = 1`.
pub fn posterior_variance(sched: &NoiseSchedule, t: usize) -> f64 {
    if t == 1 {
        sched.beta(1)
    } else {
        (1.0 - sched.alpha_bar(t - 1)) / (1.0 - sched.alpha_bar(t)) * sched.beta(t)
    }
}

/// One ancestral step `x_t → x_{t−1}`. No noise is added at `t = 1`.
pub fn reverse_step<P, R>(pred: &P, sched: &NoiseSchedule, state: &LatentState, rng: &mut R) -> Result<Vec<f64>>
where
    P: NoisePredictor + ?Sized,
    R: Rng + ?Sized,
{
    let t = state.t;
    if t == 0 || t > sched.steps() {
        return Err(invalid(format!("timestep {t} outside 1..={}", sched.steps())));
    }
    if state.x_t.len() != state.cond.len() {
        return Err(shape("latent and conditioning spectra differ in length"));
    }
    let level = sched.alpha_bar(t).sqrt();
    let eps = pred.predict(&state.x_t, level, &state.cond)?;
    if eps.len() != state.x_t.len() {
        return Err(shape("predictor output length differs from latent"));
    }
    let mut mean = posterior_mean(sched, t, &state.x_t, &eps);
    if t > 1 {
        let sigma = posterior_variance(sched, t).sqrt();
        for m in mean.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *m += sigma * z;
        }
    }
    if mean.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("non-finite latent at step {t}")));
    }
    Ok(mean)
}

/// Runs the full reverse chain from `x_T ~ N(0, I)` in scaled coefficient space.
pub fn sample_spectrum<P, R>(pred: &P, sched: &NoiseSchedule, cond: &[f64], rng: &mut R) -> Result<Vec<f64>>
where
    P: NoisePredictor + ?Sized,
    R: Rng + ?Sized,
{
    let mut state = LatentState { x_t: standard_normal(rng, cond.len()), t: sched.steps(), cond: cond.to_vec() };
    while state.t >= 1 {
        state.x_t = reverse_step(pred, sched, &state, rng)?;
        state.t -= 1;
    }
    Ok(state.x_t)
}

/// Denoises a time-domain record: truncate to `k` coefficients, divide by
/// `η`, run the reverse chain, multiply by `η`, pad and invert.
pub fn sample<P, R>(
    pred: &P,
    sched: &NoiseSchedule,
    cond: &TimeSignal,
    bound: &ScalingBound,
    k: usize,
    rng: &mut R,
) -> Result<TimeSignal>
where
    P: NoisePredictor + ?Sized,
    R: Rng + ?Sized,
{
    let spec = scale(&to_spectrum(cond, k)?, bound)?;
    let x0 = sample_spectrum(pred, sched, spec.coeffs(), rng)?;
    let out = crate::spectral::Spectrum::new(x0, cond.len(), cond.fs(), true)?;
    from_spectrum(&unscale(&out, bound)?)
}

/// Result of averaging several independent sampling runs.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleResult {
    pub mean_signal: TimeSignal,
    pub k: usize,
    pub per_run_signals: Option<Vec<TimeSignal>>,
}

/// Generator for run `run` of an ensemble seeded with `seed`. Run 0 is the
/// plain `seed_from_u64(seed)` stream.
pub fn run_rng(seed: u64, run: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run as u64);
    rng
}

/// Averages `runs` independent samples in the time domain. Runs execute in
/// parallel and are summed in run order.
pub fn ensemble_denoise<P: NoisePredictor + ?Sized>(
    pred: &P,
    sched: &NoiseSchedule,
    cond: &TimeSignal,
    bound: &ScalingBound,
    k: usize,
    runs: usize,
    seed: u64,
    keep_runs: bool,
) -> Result<EnsembleResult> {
    if runs == 0 {
        return Err(invalid("ensemble needs at least one run"));
    }
    let outs: Vec<TimeSignal> = (0..runs)
        .into_par_iter()
        .map(|r| sample(pred, sched, cond, bound, k, &mut run_rng(seed, r)))
        .collect::<Result<_>>()?;
    let mut acc = vec![0.0; cond.len()];
    for o in &outs {
        for (a, v) in acc.iter_mut().zip(o.samples()) {
            *a += v;
        }
    }
    acc.iter_mut().for_each(|a| *a /= runs as f64);
    Ok(EnsembleResult {
        mean_signal: TimeSignal::new(acc, cond.fs())?,
        k: runs,
        per_run_signals: keep_runs.then_some(outs),
    })
}

/// Adam with step-wise learning-rate decay.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Multiply the rate by `decay_factor` every `decay_every` steps (0 = never).
    pub decay_every: usize,
    pub decay_factor: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub steps: usize,
}

impl Adam {
    pub fn new(len: usize, lr: f64, decay_every: usize, decay_factor: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay_every,
            decay_factor,
            m: vec![0.0; len],
            v: vec![0.0; len],
            steps: 0,
        }
    }

    /// Learning rate used by the next step.
    pub fn current_lr(&self) -> f64 {
        match self.decay_every {
            0 => self.lr,
            n => self.lr * self.decay_factor.powi((self.steps / n) as i32),
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(shape("optimizer state does not match parameter count"));
        }
        let lr = self.current_lr();
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Rescales `grad` in place so its L2 norm is at most `max_norm`. Returns
/// the norm before clipping.
pub fn clip_global_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

/// Scaled clean/noisy spectra for one record.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub x0: Vec<f64>,
    pub cond: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Steps between ×`lr_decay_factor` reductions (0 = constant rate).
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 20, batch_size: 16, lr: 1e-3, lr_decay_every: 0, lr_decay_factor: 0.1, clip_norm: 1.0, seed: 0 }
    }
}

/// Everything needed to resume training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: PredictorParams,
    pub adam: Adam,
    /// Completed epochs.
    pub epoch: usize,
}

impl TrainState {
    pub fn new(params: PredictorParams, cfg: &TrainConfig) -> Self {
        let adam = Adam::new(params.len(), cfg.lr, cfg.lr_decay_every, cfg.lr_decay_factor);
        Self { params, adam, epoch: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

/// Mixes several words into one seed (SplitMix64 finaliser per word).
pub fn derive_seed(words: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &w in words {
        let mut z = h ^ w.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

/// Runs one epoch of minibatch Adam over `data`. Per-sample gradients are
/// computed in parallel and summed in batch order.
pub fn train_epoch(
    predictor: &Predictor,
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
    state: &mut TrainState,
    data: &[TrainingPair],
) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(invalid("no training pairs"));
    }
    let bs = cfg.batch_size.max(1);
    let epoch = state.epoch as u64;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut shuffle = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, epoch, u64::MAX]));
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut shuffle);
    let mut loss_sum = 0.0;
    let mut last_norm = 0.0;
    for (step, batch) in order.chunks(bs).enumerate() {
        let results: Vec<LossGrad> = batch
            .par_iter()
            .enumerate()
            .map(|(j, &i)| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, epoch, step as u64, j as u64]));
                training_step(predictor, &state.params, sched, &data[i].x0, &data[i].cond, &mut rng)
            })
            .collect::<Result<_>>()?;
        let mut grad = vec![0.0; state.params.len()];
        for r in &results {
            loss_sum += r.loss;
            for (g, v) in grad.iter_mut().zip(&r.grad) {
                *g += v;
            }
        }
        let n = results.len() as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        last_norm = clip_global_norm(&mut grad, cfg.clip_norm);
        if !last_norm.is_finite() {
            return Err(Error::Numerical(format!("non-finite gradient in epoch {}", state.epoch + 1)));
        }
        state.adam.step(state.params.values_mut(), &grad)?;
    }
    if !state.params.all_finite() {
        return Err(Error::Numerical("parameters diverged".into()));
    }
    state.epoch += 1;
    Ok((loss_sum / data.len() as f64, last_norm))
}

/// Mean objective over `data` with noise draws fixed by `seed`, so values
/// are comparable across epochs.
pub fn validation_loss<P: NoisePredictor + ?Sized>(
    pred: &P,
    sched: &NoiseSchedule,
    data: &[TrainingPair],
    seed: u64,
) -> Result<f64> {
    if data.is_empty() {
        return Err(invalid("no validation pairs"));
    }
    let losses: Vec<f64> = data
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, i as u64]));
            training_loss(pred, sched, &p.x0, &p.cond, &mut rng)
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Trains for the configured number of epochs, calling `on_epoch` after
/// each with the stats, current parameters and whether they are the best
/// so far on validation. Returns the per-epoch history.
pub fn train<F>(
    predictor: &Predictor,
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
    state: &mut TrainState,
    train_set: &[TrainingPair],
    val: &[TrainingPair],
    mut on_epoch: F,
) -> Result<Vec<EpochStats>>
where
    F: FnMut(&EpochStats, &TrainState, bool) -> Result<()>,
{
    let mut history = Vec::new();
    let mut best = f64::INFINITY;
    let val_seed = derive_seed(&[cfg.seed, 0x7a1]);
    while state.epoch < cfg.epochs {
        let lr = state.adam.current_lr();
        let (train_loss, grad_norm) = train_epoch(predictor, sched, cfg, state, train_set)?;
        let val_loss = if val.is_empty() {
            train_loss
        } else {
            let net = Network { predictor: predictor.clone(), params: state.params.clone() };
            validation_loss(&net, sched, val, val_seed)?
        };
        if !val_loss.is_finite() {
            return Err(Error::Numerical(format!("non-finite validation loss in epoch {}", state.epoch)));
        }
        let stats = EpochStats { epoch: state.epoch, train_loss, val_loss, lr, grad_norm };
        let improved = val_loss < best;
        if improved {
            best = val_loss;
        }
        on_epoch(&stats, state, improved)?;
        history.push(stats);
    }
    Ok(history)
}
