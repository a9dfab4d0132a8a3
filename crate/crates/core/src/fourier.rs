//! Truncated Fourier series in an angle and discrete transforms on uniform
//! grids.

use alloc::vec::Vec;

use num_complex::Complex64;

use crate::math::{cos, sin, TAU};

/// Coefficients `c_k`, `|k| ≤ K`, of `Σ c_k e^{ikθ}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Modes {
    kmax: usize,
    c: Vec<Complex64>,
}

impl Modes {
    pub fn zeros(kmax: usize) -> Self {
        Self { kmax, c: alloc::vec![Complex64::new(0.0, 0.0); 2 * kmax + 1] }
    }

    pub fn from_fn<F: FnMut(i64) -> Complex64>(kmax: usize, mut f: F) -> Self {
        let c = (-(kmax as i64)..=kmax as i64).map(&mut f).collect();
        Self { kmax, c }
    }

    pub fn kmax(&self) -> usize {
        self.kmax
    }

    pub fn get(&self, k: i64) -> Complex64 {
        if k.unsigned_abs() as usize > self.kmax {
            Complex64::new(0.0, 0.0)
        } else {
            self.c[(k + self.kmax as i64) as usize]
        }
    }

    pub fn set(&mut self, k: i64, v: Complex64) {
        let idx = (k + self.kmax as i64) as usize;
        self.c[idx] = v;
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, Complex64)> + '_ {
        self.c.iter().enumerate().map(move |(i, v)| (i as i64 - self.kmax as i64, *v))
    }

    pub fn eval(&self, theta: f64) -> Complex64 {
        self.iter().map(|(k, c)| c * Complex64::from_polar(1.0, k as f64 * theta)).sum()
    }

    /// `∂_θ` of the series.
    pub fn derivative(&self) -> Self {
        Self::from_fn(self.kmax, |k| self.get(k) * Complex64::new(0.0, k as f64))
    }

    pub fn sup_coeff(&self) -> f64 {
        self.c.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    pub fn l1(&self) -> f64 {
        self.c.iter().map(|c| c.norm()).sum()
    }

    /// Values on the uniform grid `θ_j = 2πj/n`.
    pub fn to_grid(&self, n: usize) -> Vec<Complex64> {
        (0..n).map(|j| self.eval(TAU * j as f64 / n as f64)).collect()
    }

    /// Coefficients of grid values; `n` must exceed `2·kmax`.
    pub fn from_grid(values: &[Complex64], kmax: usize) -> Self {
        let n = values.len();
        assert!(n > 2 * kmax, "grid too coarse for the requested modes");
        Self::from_fn(kmax, |k| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (j, v) in values.iter().enumerate() {
                let ph = -TAU * ((k * j as i64).rem_euclid(n as i64)) as f64 / n as f64;
                acc += v * Complex64::new(cos(ph), sin(ph));
            }
            acc / n as f64
        })
    }

    pub fn from_real_grid(values: &[f64], kmax: usize) -> Self {
        let v: Vec<Complex64> = values.iter().map(|x| Complex64::new(*x, 0.0)).collect();
        Self::from_grid(&v, kmax)
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self { kmax: self.kmax, c: self.c.iter().map(|c| c * s).collect() }
    }

    pub fn add(&self, other: &Self) -> Self {
        let kmax = self.kmax.max(other.kmax);
        Self::from_fn(kmax, |k| self.get(k) + other.get(k))
    }

    pub fn sub(&self, other: &Self) -> Self {
        let kmax = self.kmax.max(other.kmax);
        Self::from_fn(kmax, |k| self.get(k) - other.get(k))
    }
}

/// Amplitude and phase of the `k`-th harmonic of real samples on a uniform
/// grid: the samples contain `amp·cos(kθ + phase)`.
pub fn harmonic(values: &[f64], k: usize) -> (f64, f64) {
    let m = Modes::from_real_grid(values, k);
    let c = m.get(k as i64);
    let (amp, phase) = (2.0 * c.norm(), c.arg());
    (amp, phase)
}

/// Trigonometric interpolation of real periodic samples at `θ`.
pub fn trig_interpolate(values: &[f64], theta: f64) -> f64 {
    let n = values.len();
    let kmax = (n - 1) / 2;
    let m = Modes::from_real_grid(values, kmax);
    let mut v = m.eval(theta).re;
    if n % 2 == 0 {
        // Nyquist term, split symmetrically so the interpolant stays real.
        let mut c = 0.0;
        for (j, x) in values.iter().enumerate() {
            c += if j % 2 == 0 { *x } else { -*x };
        }
        v += c / n as f64 * cos(n as f64 / 2.0 * theta);
    }
    v
}
