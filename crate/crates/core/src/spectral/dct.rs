//! Orthonormal DCT-II / DCT-III kernels.
//!
//! Two implementations live here: a direct `O(N²)` reference kernel that
//! evaluates the cosine sums literally, and a fast kernel built on a single
//! length-`N` complex FFT (Makhoul's even/odd reordering). The reference
//! kernel is the oracle the fast kernel is tested against.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

#[inline]
fn norm(k: usize, n: usize) -> f64 {
    if k == 0 {
        (1.0 / n as f64).sqrt()
    } else {
        (2.0 / n as f64).sqrt()
    }
}

/// Direct evaluation of the orthonormal DCT-II.
pub fn dct2_reference(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            let s: f64 = x
                .iter()
                .enumerate()
                .map(|(i, &v)| v * (PI * ((2 * i + 1) * k) as f64 / (2 * n) as f64).cos())
                .sum();
            norm(k, n) * s
        })
        .collect()
}

/// Direct evaluation of the orthonormal DCT-III (inverse of [`dct2_reference`]).
pub fn dct3_reference(c: &[f64]) -> Vec<f64> {
    let n = c.len();
    (0..n)
        .map(|i| {
            c.iter()
                .enumerate()
                .map(|(k, &v)| norm(k, n) * v * (PI * ((2 * i + 1) * k) as f64 / (2 * n) as f64).cos())
                .sum()
        })
        .collect()
}

/// Precomputed FFT plans and twiddles for one transform length.
pub struct DctPlan {
    len: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    /// `exp(-iπk / 2N)` for `k in 0..N`.
    twiddle: Vec<Complex64>,
}

impl DctPlan {
    pub fn new(len: usize) -> Self {
        assert!(len > 0, "DCT length must be positive");
        let mut planner = FftPlanner::new();
        let twiddle = (0..len)
            .map(|k| Complex64::from_polar(1.0, -PI * k as f64 / (2 * len) as f64))
            .collect();
        Self {
            len,
            fwd: planner.plan_fft_forward(len),
            inv: planner.plan_fft_inverse(len),
            twiddle,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    /// Orthonormal DCT-II of `x` (length `N`), writing the first `out.len()`
    /// coefficients into `out`.
    pub fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.len;
        assert_eq!(x.len(), n);
        assert!(out.len() <= n);
        with_buffers(n, self.fwd.as_ref(), |buf, scratch| {
            let half = n.div_ceil(2);
            for i in 0..half {
                buf[i] = Complex64::new(x[2 * i], 0.0);
            }
            for i in 0..n / 2 {
                buf[n - 1 - i] = Complex64::new(x[2 * i + 1], 0.0);
            }
            self.fwd.process_with_scratch(buf, scratch);
            for (k, o) in out.iter_mut().enumerate() {
                *o = (self.twiddle[k] * buf[k]).re * norm(k, n);
            }
        })
    }

    /// Orthonormal DCT-III of `coeffs` zero-padded to `N`, writing all `N`
    /// samples into `out`.
    pub fn inverse_into(&self, coeffs: &[f64], out: &mut [f64]) {
        let n = self.len;
        assert!(coeffs.len() <= n);
        assert_eq!(out.len(), n);
        let z = |k: usize| -> f64 {
            if k < coeffs.len() {
                coeffs[k] / norm(k, n)
            } else {
                0.0
            }
        };
        with_buffers(n, self.inv.as_ref(), |buf, scratch| {
            for (k, b) in buf.iter_mut().enumerate() {
                let nk = if k == 0 { 0.0 } else { z(n - k) };
                *b = self.twiddle[k].conj() * Complex64::new(z(k), -nk);
            }
            self.inv.process_with_scratch(buf, scratch);
            let scale = 1.0 / n as f64;
            let half = n.div_ceil(2);
            for i in 0..half {
                out[2 * i] = buf[i].re * scale;
            }
            for i in 0..n / 2 {
                out[2 * i + 1] = buf[n - 1 - i].re * scale;
            }
        })
    }
}

thread_local! {
    /// Work buffer and FFT scratch, reused across calls on this thread.
    static BUFFERS: RefCell<(Vec<Complex64>, Vec<Complex64>)> = const { RefCell::new((Vec::new(), Vec::new())) };
}

fn with_buffers<T>(n: usize, fft: &dyn Fft<f64>, f: impl FnOnce(&mut [Complex64], &mut [Complex64]) -> T) -> T {
    BUFFERS.with(|cell| {
        let (buf, scratch) = &mut *cell.borrow_mut();
        // Callers overwrite every entry, so stale values are harmless.
        buf.resize(n, Complex64::new(0.0, 0.0));
        let need = fft.get_inplace_scratch_len();
        if scratch.len() < need {
            scratch.resize(need, Complex64::new(0.0, 0.0));
        }
        f(buf, &mut scratch[..need])
    })
}

static PLANS: OnceLock<Mutex<HashMap<usize, Arc<DctPlan>>>> = OnceLock::new();

/// Shared plan for length `len`, built on first use.
pub fn plan(len: usize) -> Arc<DctPlan> {
    let cache = PLANS.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("dct plan cache poisoned");
    guard
        .entry(len)
        .or_insert_with(|| Arc::new(DctPlan::new(len)))
        .clone()
}

/// Fast orthonormal DCT-II.
pub fn dct2(x: &[f64]) -> Vec<f64> {
    dct2_truncated(x, x.len())
}

/// Fast orthonormal DCT-III.
pub fn dct3(c: &[f64]) -> Vec<f64> {
    dct3_padded(c, c.len())
}

/// First `k` orthonormal DCT-II coefficients of `x`.
pub fn dct2_truncated(x: &[f64], k: usize) -> Vec<f64> {
    let mut out = vec![0.0; k];
    plan(x.len()).forward_into(x, &mut out);
    out
}

/// Zero-pads `c` to length `n` and applies the orthonormal DCT-III.
pub fn dct3_padded(c: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    plan(n).inverse_into(c, &mut out);
    out
}
