//! Quadratic variance-preserving noise schedule, SNR scaling and
//! hierarchical sampling of continuous noise levels.

use rand::distributions::Open01;
use rand::Rng;

use crate::error::{invalid, Error, Result};

/// Per-timestep schedule arrays. Index `i` holds timestep `t = i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    /// `{1, √ᾱ_1, …, √ᾱ_T}`, strictly decreasing.
    boundaries: Vec<f64>,
    snr_scale_c: f64,
}

impl NoiseSchedule {
    /// `β_t = (√β₁ + (t−1)(√β_T − √β₁)/(T−1))²` for `t = 1..=T`.
    pub fn build_quadratic(steps: usize, beta1: f64, beta_t: f64) -> Result<Self> {
        if steps < 2 {
            return Err(invalid(format!("schedule needs at least 2 steps, got {steps}")));
        }
        if !(beta1 > 0.0 && beta1 <= beta_t && beta_t < 1.0) {
            return Err(invalid(format!(
                "require 0 < beta1 <= betaT < 1, got beta1={beta1}, betaT={beta_t}"
            )));
        }
        let (s1, st) = (beta1.sqrt(), beta_t.sqrt());
        let step = (st - s1) / (steps - 1) as f64;
        let mut beta: Vec<f64> = (0..steps).map(|i| (s1 + i as f64 * step).powi(2)).collect();
        // Pin the endpoints to the requested values.
        beta[0] = beta1;
        beta[steps - 1] = beta_t;
        Self::from_betas(beta, 1.0)
    }

    /// Rebuilds `α`, `ᾱ` and the level boundaries from a β sequence.
    pub fn from_betas(beta: Vec<f64>, snr_scale_c: f64) -> Result<Self> {
        if beta.is_empty() {
            return Err(invalid("empty beta sequence"));
        }
        if let Some((i, b)) = beta.iter().enumerate().find(|(_, b)| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::Numerical(format!("beta_{} = {b} outside (0, 1)", i + 1)));
        }
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(alpha.len());
        let mut acc = 1.0;
        for a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        let mut boundaries = Vec::with_capacity(beta.len() + 1);
        boundaries.push(1.0);
        boundaries.extend(alpha_bar.iter().map(|a| a.sqrt()));
        Ok(Self { beta, alpha, alpha_bar, boundaries, snr_scale_c })
    }

    /// Restores a schedule from stored `β` and `ᾱ` arrays, e.g. a checkpoint.
    pub fn from_parts(beta: Vec<f64>, alpha_bar: Vec<f64>, snr_scale_c: f64) -> Result<Self> {
        if beta.len() != alpha_bar.len() {
            return Err(invalid("beta and alpha_bar lengths differ"));
        }
        let mut out = Self::from_betas(beta, snr_scale_c)?;
        if alpha_bar.iter().any(|a| !(*a > 0.0 && *a < 1.0)) || alpha_bar.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Numerical("alpha_bar must be strictly decreasing inside (0, 1)".into()));
        }
        for (i, a) in alpha_bar.iter().enumerate() {
            out.boundaries[i + 1] = a.sqrt();
        }
        out.alpha_bar = alpha_bar;
        Ok(out)
    }

    /// Number of timesteps `T`.
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn snr_scale(&self) -> f64 {
        self.snr_scale_c
    }

    /// `β_t` for `t` in `1..=T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// `ᾱ_t` for `t` in `0..=T`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(invalid(format!("timestep {t} outside 1..={}", self.steps())));
        }
        Ok(())
    }

    /// `SNR(t) = ᾱ_t / (1 − ᾱ_t)`.
    pub fn snr(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        let ab = self.alpha_bar(t);
        if ab >= 1.0 {
            return Err(Error::Numerical(format!("alpha_bar_{t} = 1 gives unbounded SNR")));
        }
        Ok(ab / (1.0 - ab))
    }

    /// Multiplies every per-step SNR by `c` and solves the β sequence that
    /// realises it: `γ̄_t = c·SNR(t)/(1 + c·SNR(t))`, `β_t = 1 − γ̄_t/γ̄_{t−1}`
    /// with `γ̄_0 = 1`.
    pub fn apply_snr_scaling(&self, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(invalid(format!("SNR scale must be positive, got {c}")));
        }
        if self.snr_scale_c != 1.0 {
            return Err(invalid("schedule is already SNR-scaled"));
        }
        let mut gamma_prev = 1.0;
        let mut beta = Vec::with_capacity(self.steps());
        for t in 1..=self.steps() {
            let ab = self.alpha_bar(t);
            // c·SNR/(1 + c·SNR) rewritten to avoid forming SNR when ᾱ is near 1.
            let gamma = c * ab / (c * ab + (1.0 - ab));
            let b = 1.0 - gamma / gamma_prev;
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Numerical(format!(
                    "scaled beta_{t} = {b} outside (0, 1) for c = {c}"
                )));
            }
            beta.push(b);
            gamma_prev = gamma;
        }
        let mut out = Self::from_betas(beta, c)?;
        // Keep the target γ̄ values rather than the re-accumulated product so
        // the SNR identity holds to rounding.
        let mut gamma_prev = 1.0;
        for t in 1..=self.steps() {
            let ab = self.alpha_bar(t);
            let gamma = c * ab / (c * ab + (1.0 - ab));
            out.alpha_bar[t - 1] = gamma;
            out.boundaries[t] = gamma.sqrt();
            debug_assert!(gamma < gamma_prev);
            gamma_prev = gamma;
        }
        Ok(out)
    }

    /// Draws `t ~ U{1..T}` and `√ᾱ ~ U(S_t, S_{t−1})` strictly inside the stratum.
    pub fn sample_noise_level<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, f64) {
        let t = rng.gen_range(1..=self.steps());
        let hi = self.boundaries[t - 1];
        let lo = self.boundaries[t];
        let u: f64 = rng.sample(Open01);
        (t, lo + u * (hi - lo))
    }

    /// CSV rows `t,beta,alpha_bar,snr` for plotting.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,beta,alpha_bar,snr\n");
        for t in 1..=self.steps() {
            let snr = self.snr(t).unwrap_or(f64::INFINITY);
            s.push_str(&format!("{t},{:e},{:e},{:e}\n", self.beta(t), self.alpha_bar(t), snr));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn base() -> NoiseSchedule {
        NoiseSchedule::build_quadratic(50, 1e-4, 0.5).unwrap()
    }

    #[test]
    fn quadratic_endpoints_and_monotonicity() {
        let s = base();
        assert_eq!(s.beta(1), 1e-4);
        assert_eq!(s.beta(50), 0.5);
        assert!(s.betas().windows(2).all(|w| w[0] < w[1]));
        assert!(s.alpha_bars().windows(2).all(|w| w[0] > w[1]));
        assert!(s.boundaries().windows(2).all(|w| w[0] > w[1]));
        assert_eq!(s.boundaries()[0], 1.0);
        let mut prod = 1.0;
        for t in 1..=50 {
            prod *= s.alpha(t);
            assert!((s.alpha_bar(t) - prod).abs() <= 1e-12 * prod);
        }
    }

    #[test]
    fn rejects_bad_bounds() {
        assert!(NoiseSchedule::build_quadratic(1, 1e-4, 0.5).is_err());
        assert!(NoiseSchedule::build_quadratic(50, 0.0, 0.5).is_err());
        assert!(NoiseSchedule::build_quadratic(50, 0.6, 0.5).is_err());
        assert!(NoiseSchedule::build_quadratic(50, 1e-4, 1.0).is_err());
    }

    #[test]
    fn snr_values() {
        let s = base();
        // ᾱ_1 = 1 − 1e-4 = 0.9999 → 0.9999 / 0.0001
        assert!((s.snr(1).unwrap() - 9999.0).abs() < 1e-6);
        assert!(s.snr(0).is_err());
        assert!(s.snr(51).is_err());
        let snrs: Vec<f64> = (1..=50).map(|t| s.snr(t).unwrap()).collect();
        assert!(snrs.windows(2).all(|w| w[0] > w[1]));
        let half = NoiseSchedule::from_betas(vec![0.5, 0.5], 1.0).unwrap();
        assert_eq!(half.snr(1).unwrap(), 1.0);
    }

    #[test]
    fn unit_scaling_is_identity() {
        let s = base();
        let u = s.apply_snr_scaling(1.0).unwrap();
        for t in 1..=50 {
            assert!((u.beta(t) - s.beta(t)).abs() <= 1e-12);
            assert!((u.alpha_bar(t) - s.alpha_bar(t)).abs() <= 1e-12);
        }
    }

    #[test]
    fn scaling_by_150() {
        let s = base();
        let c = 150.0;
        let sc = s.apply_snr_scaling(c).unwrap();
        assert_eq!(sc.snr_scale(), c);
        // SNR(1) = 9999 → γ̄_1 = 1499850 / 1499851
        assert!((sc.alpha_bar(1) - 1_499_850.0 / 1_499_851.0).abs() < 1e-15);
        for t in 1..=50 {
            let want = c * s.snr(t).unwrap();
            let got = sc.snr(t).unwrap();
            assert!(((got - want) / want).abs() < 1e-9, "t={t}: {got} vs {want}");
            assert!(sc.beta(t) > 0.0 && sc.beta(t) < 1.0);
            assert!(sc.alpha_bar(t).sqrt() > s.alpha_bar(t).sqrt());
            // Re-accumulated β reproduces the stored ᾱ.
        }
        let rebuilt = NoiseSchedule::from_betas(sc.betas().to_vec(), c).unwrap();
        for t in 1..=50 {
            let want = c * s.snr(t).unwrap();
            let got = rebuilt.snr(t).unwrap();
            assert!(((got - want) / want).abs() < 1e-9, "rebuilt t={t}");
        }
        assert_eq!(sc.boundaries()[50], sc.alpha_bar(50).sqrt());
        let restored = NoiseSchedule::from_parts(sc.betas().to_vec(), sc.alpha_bars().to_vec(), c).unwrap();
        assert_eq!(restored, sc);
        assert!(NoiseSchedule::from_parts(vec![0.1, 0.2], vec![0.9], c).is_err());
        assert!(sc.apply_snr_scaling(2.0).is_err());
        assert!(s.apply_snr_scaling(0.0).is_err());
    }

    #[test]
    fn noise_level_sampling_is_stratified_and_reproducible() {
        let s = base().apply_snr_scaling(150.0).unwrap();
        let mut a = ChaCha8Rng::seed_from_u64(11);
        let mut b = ChaCha8Rng::seed_from_u64(11);
        assert_eq!(s.sample_noise_level(&mut a), s.sample_noise_level(&mut b));
        for _ in 0..10_000 {
            let (t, level) = s.sample_noise_level(&mut a);
            assert!(level < s.boundaries()[t - 1] && level > s.boundaries()[t]);
            assert!(level > 0.0 && level < 1.0);
        }
    }

    #[test]
    fn csv_dump_has_one_row_per_step() {
        let csv = base().to_csv();
        assert_eq!(csv.lines().count(), 51);
        assert!(csv.starts_with("t,beta,alpha_bar,snr"));
    }
}
