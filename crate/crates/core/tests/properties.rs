//! Property checks of the pipeline's invariants across modules.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tfcdiff::diffusion::{sample, training_loss, NoisePredictor, ZeroPredictor};
use tfcdiff::predictor::{Predictor, PredictorConfig};
use tfcdiff::schedule::NoiseSchedule;
use tfcdiff::spectral::{from_spectrum, scale, to_spectrum, ScalingBound, Spectrum, TimeSignal};
use tfcdiff::synth::filters::remove_baseline_piecewise;
use tfcdiff::synth::{check_simplex, generate_pair, CorpusConfig};
use tfcdiff::Result;

fn sig(x: &[f64]) -> TimeSignal {
    TimeSignal::new(x.to_vec(), 360.0).unwrap()
}

/// Returns the exact noise that maps `x_t` back to a known clean spectrum.
struct Oracle {
    x0: Vec<f64>,
}

impl NoisePredictor for Oracle {
    fn predict(&self, x_t: &[f64], level: f64, _cond: &[f64]) -> Result<Vec<f64>> {
        let s = (1.0 - level * level).sqrt();
        Ok(x_t.iter().zip(&self.x0).map(|(x, c)| (x - level * c) / s).collect())
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn round_trip_and_parseval(x in prop::collection::vec(-50.0f64..50.0, 1..600)) {
        let s = to_spectrum(&sig(&x), x.len()).unwrap();
        let back = from_spectrum(&s).unwrap();
        let err = back.samples().iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(err < 1e-10);
        let et: f64 = x.iter().map(|v| v * v).sum();
        let ef: f64 = s.coeffs().iter().map(|v| v * v).sum();
        if et > 0.0 {
            prop_assert!((et - ef).abs() / et < 1e-12);
        }
    }

    #[test]
    fn truncation_error_is_the_discarded_energy(x in prop::collection::vec(-5.0f64..5.0, 8..300), frac in 0.05f64..1.0) {
        let n = x.len();
        let k = ((n as f64 * frac).ceil() as usize).clamp(1, n);
        let full = to_spectrum(&sig(&x), n).unwrap();
        let tail: f64 = full.coeffs()[k..].iter().map(|v| v * v).sum();
        let rec = from_spectrum(&to_spectrum(&sig(&x), k).unwrap()).unwrap();
        let ssd: f64 = rec.samples().iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum();
        prop_assert!((ssd - tail).abs() <= 1e-9 * (1.0 + tail));
    }

    #[test]
    fn scaled_schedule_multiplies_snr(c in 1.0f64..500.0, steps in 2usize..80) {
        let base = NoiseSchedule::build_quadratic(steps, 1e-4, 0.5).unwrap();
        let sc = base.apply_snr_scaling(c).unwrap();
        let b = sc.boundaries();
        prop_assert_eq!(b[0], 1.0);
        prop_assert!(b.windows(2).all(|w| w[1] < w[0]));
        prop_assert_eq!(b[steps], sc.alpha_bar(steps).sqrt());
        for t in 1..=steps {
            let want = c * base.snr(t).unwrap();
            prop_assert!((sc.snr(t).unwrap() - want).abs() / want < 1e-9);
            prop_assert!(sc.beta(t) > 0.0 && sc.beta(t) < 1.0);
            if c > 1.0 {
                prop_assert!(sc.alpha_bar(t) > base.alpha_bar(t));
            }
        }
    }

    #[test]
    fn loss_is_zero_only_for_the_exact_noise(x0 in prop::collection::vec(-1.0f64..1.0, 4..32), seed in any::<u64>()) {
        let sched = NoiseSchedule::build_quadratic(50, 1e-4, 0.5).unwrap().apply_snr_scaling(150.0).unwrap();
        let cond = vec![0.0; x0.len()];
        let oracle = Oracle { x0: x0.clone() };
        let exact = training_loss(&oracle, &sched, &x0, &cond, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let zero = training_loss(&ZeroPredictor, &sched, &x0, &cond, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        // The oracle divides by √(1−ᾱ), which is small near t = 1.
        prop_assert!((0.0..1e-6).contains(&exact));
        prop_assert!(zero > 0.0);
    }

    #[test]
    fn oracle_output_is_independent_of_eta(x in prop::collection::vec(-2.0f64..2.0, 64), eta in 0.5f64..20.0, seed in any::<u64>()) {
        let sched = NoiseSchedule::build_quadratic(20, 1e-4, 0.5).unwrap().apply_snr_scaling(150.0).unwrap();
        let k = 16;
        let clean = sig(&x);
        let run = |eta: f64| {
            let bound = ScalingBound::fixed(eta).unwrap();
            let target = scale(&to_spectrum(&clean, k).unwrap(), &bound).unwrap().into_coeffs();
            let oracle = Oracle { x0: target };
            sample(&oracle, &sched, &clean, &bound, k, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
        };
        let (a, b) = (run(eta), run(2.0 * eta));
        prop_assert_eq!(a.len(), 64);
        let truncated = from_spectrum(&to_spectrum(&clean, k).unwrap()).unwrap();
        for ((p, q), r) in a.samples().iter().zip(b.samples()).zip(truncated.samples()) {
            prop_assert!((p - q).abs() < 1e-9 * (1.0 + eta));
            prop_assert!((p - r).abs() < 1e-9 * (1.0 + eta));
        }
    }

    #[test]
    fn generated_pairs_hold_the_intensity_identity(seed in any::<u64>(), index in 0usize..1000, sparse in 0.0f64..1.0) {
        let cfg = CorpusConfig { seed, sparse_prob: sparse, duration: 2.0, ..CorpusConfig::default() };
        let p = generate_pair(&cfg, index).unwrap();
        let diff: Vec<f64> = p.noisy.samples().iter().zip(p.clean.samples()).map(|(a, b)| a - b).collect();
        let got = sig(&diff).peak_to_peak();
        let want = p.lambda * p.clean.peak_to_peak();
        prop_assert!((got - want).abs() <= 1e-9 * want);
        prop_assert!(check_simplex(p.weights).is_ok());
        prop_assert!((0.2..=2.0).contains(&p.lambda));
        prop_assert_eq!(generate_pair(&cfg, index).unwrap(), p);
    }

    #[test]
    fn baseline_remover_is_exact_on_aligned_piecewise_drift(
        knots in prop::collection::vec((20usize..200, -0.05f64..0.05), 2..6),
        start in -3.0f64..3.0,
    ) {
        // Continuous piecewise-linear drift with breakpoints at the annotations.
        let mut ann = Vec::new();
        let mut drift = Vec::new();
        let mut level = start;
        let mut pos = 0;
        for &(len, slope) in &knots {
            ann.push(pos);
            for _ in 0..len {
                drift.push(level);
                level += slope;
            }
            pos += len;
        }
        let r = remove_baseline_piecewise(&sig(&drift), &ann, 9).unwrap();
        let worst = r.signal.samples().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!(worst < 1e-8, "residual {worst}");
    }
}

#[test]
fn predictor_output_length_matches_input_for_every_depth() {
    for levels in 1..=3 {
        let cfg = PredictorConfig {
            levels,
            base_channels: 4,
            channel_multipliers: vec![1; levels],
            groups: 2,
            input_length: 16,
            full_length: 32,
            embed_dim: 8,
            ..PredictorConfig::default()
        };
        let p = Predictor::new(cfg).unwrap();
        let params = p.init_params(&mut ChaCha8Rng::seed_from_u64(levels as u64));
        let x: Vec<f64> = (0..16).map(|i| (i as f64 * 0.3).sin()).collect();
        let out = p.predict_noise(&params, &x, 0.9, &x).unwrap();
        assert_eq!(out.len(), 16);
    }
}

#[test]
fn spectrum_records_its_origin() {
    let s = to_spectrum(&sig(&[1.0; 40]), 10).unwrap();
    assert_eq!((s.len(), s.original_length(), s.is_scaled()), (10, 40, false));
    assert!(Spectrum::new(vec![0.0; 50], 40, 360.0, false).is_err());
}
