//! Parameters, potentials, coordinate systems and vector fields.
//!
//! Physical picture: a He atom moving in the `(x, z)` plane above a
//! corrugated Morse wall,
//! `H_CM = (p_x² + p_z²)/(2m) + D e^{-αz}(e^{-αz} - 2) + D e^{-2αz} V(2πx/a)`.
//! McGehee coordinates `2q² = e^{-αz}`, `θ = 2πx/a`, `B p = p_z`,
//! `C (I₀ + J) = p_x` turn this into the rescaled Hamiltonian
//! `H = ½(ν(I₀+J)² + p²) - q²/2 + q⁴/2 + (ε/2) q⁴ V(θ)` with `H_CM = 8D H`.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
use thiserror::Error;

use crate::math::{cos, exp, log, sin, sqrt, wrap_angle, TAU};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("parameter {name} must be positive and finite, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("corrugation series must have at least one finite coefficient")]
    EmptySeries,
    #[error("non-finite corrugation coefficient at order {order}")]
    NonFiniteCoefficient { order: usize },
    #[error("nu*I0 must be positive, got {0}")]
    NonPositiveNuI0(f64),
    #[error("stored nu {stored} disagrees with (4π/(aα))² = {recomputed}")]
    InconsistentNu { stored: f64, recomputed: f64 },
    #[error("q must be non-negative for the inverse McGehee map, got {0}")]
    NegativeQ(f64),
    #[error("epsilon must be finite, got {0}")]
    NonFiniteEpsilon(f64),
}

/// Finite trigonometric series `V(θ) = Σ_{n≥1} (r_n cos nθ + s_n sin nθ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrugationSeries {
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl CorrugationSeries {
    /// Builds a series from cosine and sine coefficients of orders `1..=N`.
    /// The shorter list is padded with zeros.
    pub fn new(cos: Vec<f64>, sin: Vec<f64>) -> Result<Self, ModelError> {
        let n = cos.len().max(sin.len());
        if n == 0 {
            return Err(ModelError::EmptySeries);
        }
        let mut c = cos;
        let mut s = sin;
        c.resize(n, 0.0);
        s.resize(n, 0.0);
        for (i, (a, b)) in c.iter().zip(s.iter()).enumerate() {
            if !a.is_finite() || !b.is_finite() {
                return Err(ModelError::NonFiniteCoefficient { order: i + 1 });
            }
        }
        Ok(Self { cos: c, sin: s })
    }

    pub fn even(cos: Vec<f64>) -> Result<Self, ModelError> {
        Self::new(cos, Vec::new())
    }

    /// Experimental He–Cu values `r₁ = 0.06`, `r₂ = 0.008`.
    pub fn physical() -> Self {
        Self { cos: vec![0.06, 0.008], sin: vec![0.0, 0.0] }
    }

    pub fn zero(order: usize) -> Self {
        let n = order.max(1);
        Self { cos: vec![0.0; n], sin: vec![0.0; n] }
    }

    pub fn order(&self) -> usize {
        self.cos.len()
    }

    pub fn cos_coeffs(&self) -> &[f64] {
        &self.cos
    }

    pub fn sin_coeffs(&self) -> &[f64] {
        &self.sin
    }

    pub fn is_even(&self) -> bool {
        self.sin.iter().all(|&s| s == 0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.cos.iter().chain(self.sin.iter()).all(|&c| c == 0.0)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            cos: self.cos.iter().map(|c| c * factor).collect(),
            sin: self.sin.iter().map(|s| s * factor).collect(),
        }
    }

    pub fn value(&self, theta: f64) -> f64 {
        self.terms(theta).map(|(_, c, s, r, sn)| r * c + sn * s).sum()
    }

    pub fn derivative(&self, theta: f64) -> f64 {
        self.terms(theta).map(|(n, c, s, r, sn)| n * (sn * c - r * s)).sum()
    }

    /// Zero-mean primitive `W` with `W' = V`.
    pub fn primitive(&self, theta: f64) -> f64 {
        self.terms(theta).map(|(n, c, s, r, sn)| (r * s - sn * c) / n).sum()
    }

    fn terms(&self, theta: f64) -> impl Iterator<Item = (f64, f64, f64, f64, f64)> + '_ {
        self.cos.iter().zip(self.sin.iter()).enumerate().map(move |(i, (&r, &s))| {
            let n = (i + 1) as f64;
            (n, cos(n * theta), sin(n * theta), r, s)
        })
    }

    /// Complex Fourier coefficient `V^[k]`, so that `V(θ) = Σ_k V^[k] e^{ikθ}`.
    pub fn coeff(&self, k: i64) -> Complex64 {
        if k == 0 {
            return Complex64::new(0.0, 0.0);
        }
        let n = k.unsigned_abs() as usize;
        if n > self.order() {
            return Complex64::new(0.0, 0.0);
        }
        let r = self.cos[n - 1];
        let s = self.sin[n - 1];
        if k > 0 {
            Complex64::new(0.5 * r, -0.5 * s)
        } else {
            Complex64::new(0.5 * r, 0.5 * s)
        }
    }

    /// `Σ |r_n| + |s_n|`, a bound for `sup |V|`.
    pub fn l1_norm(&self) -> f64 {
        self.cos.iter().chain(self.sin.iter()).map(|c| c.abs()).sum()
    }
}

pub fn potential_v(theta: f64, series: &CorrugationSeries) -> f64 {
    series.value(theta)
}

pub fn fourier_coeff_v(k: i64, series: &CorrugationSeries) -> Complex64 {
    series.coeff(k)
}

/// Physical constants of the corrugated Morse potential.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalParams {
    /// Well depth in meV.
    pub d: f64,
    /// Lattice period in Å.
    pub a: f64,
    /// Morse range in Å⁻¹.
    pub alpha: f64,
    /// He mass; 4.002602 u by default.
    pub m: f64,
    pub corrugation: CorrugationSeries,
}

pub const DEFAULT_HE_MASS: f64 = 4.002602;

impl Default for PhysicalParams {
    fn default() -> Self {
        Self { d: 6.35, a: 3.6, alpha: 1.05, m: DEFAULT_HE_MASS, corrugation: CorrugationSeries::physical() }
    }
}

impl PhysicalParams {
    pub fn new(d: f64, a: f64, alpha: f64, m: f64, corrugation: CorrugationSeries) -> Result<Self, ModelError> {
        let p = Self { d, a, alpha, m, corrugation };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, value) in [("D", self.d), ("a", self.a), ("alpha", self.alpha), ("m", self.m)] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ModelError::NonPositive { name, value });
            }
        }
        Ok(())
    }

    pub fn nu(&self) -> f64 {
        nu_from_physical(self)
    }

    pub fn scales(&self) -> McGeheeScales {
        McGeheeScales::new(self)
    }
}

/// `ν = (4π/(aα))²`.
pub fn nu_from_physical(physical: &PhysicalParams) -> f64 {
    let r = 4.0 * PI / (physical.a * physical.alpha);
    r * r
}

/// Physical parameters together with the rescaled `ν`, `I₀` and the
/// corrugation multiplier `ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    physical: PhysicalParams,
    nu: f64,
    i0: f64,
    epsilon: f64,
    series: CorrugationSeries,
}

impl ModelParams {
    pub fn new(physical: PhysicalParams, i0: f64, epsilon: f64) -> Result<Self, ModelError> {
        physical.validate()?;
        let nu = nu_from_physical(&physical);
        if !(nu * i0 > 0.0 && (nu * i0).is_finite()) {
            return Err(ModelError::NonPositiveNuI0(nu * i0));
        }
        if !epsilon.is_finite() {
            return Err(ModelError::NonFiniteEpsilon(epsilon));
        }
        let series = physical.corrugation.scaled(epsilon);
        Ok(Self { physical, nu, i0, epsilon, series })
    }

    /// Parameters at a prescribed product `νI₀`.
    pub fn from_nu_i0(physical: PhysicalParams, nu_i0: f64, epsilon: f64) -> Result<Self, ModelError> {
        let nu = nu_from_physical(&physical);
        Self::new(physical, nu_i0 / nu, epsilon)
    }

    /// Physical constants, `νI₀` and `ε` defaults of the He–Cu problem.
    pub fn physical_default(nu_i0: f64, epsilon: f64) -> Self {
        Self::from_nu_i0(PhysicalParams::default(), nu_i0, epsilon).expect("default parameters are valid")
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self, ModelError> {
        Self::new(self.physical.clone(), self.i0, epsilon)
    }

    pub fn with_nu_i0(&self, nu_i0: f64) -> Result<Self, ModelError> {
        Self::from_nu_i0(self.physical.clone(), nu_i0, self.epsilon)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.physical.validate()?;
        let recomputed = nu_from_physical(&self.physical);
        if ((recomputed - self.nu) / recomputed).abs() > 1e-12 {
            return Err(ModelError::InconsistentNu { stored: self.nu, recomputed });
        }
        if !(self.nu_i0() > 0.0) {
            return Err(ModelError::NonPositiveNuI0(self.nu_i0()));
        }
        Ok(())
    }

    pub fn physical(&self) -> &PhysicalParams {
        &self.physical
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn i0(&self) -> f64 {
        self.i0
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn nu_i0(&self) -> f64 {
        self.nu * self.i0
    }

    /// The perturbing series `εV`.
    pub fn series(&self) -> &CorrugationSeries {
        &self.series
    }

    /// Energy of the parabolic orbit, `νI₀²/2`.
    pub fn level(&self) -> f64 {
        0.5 * self.nu * self.i0 * self.i0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartesianState {
    pub x: f64,
    pub z: f64,
    pub px: f64,
    pub pz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McGeheeState {
    pub q: f64,
    pub p: f64,
    /// Angle in `[0, 2π)` when built through [`McGeheeState::new`].
    pub theta: f64,
    pub j: f64,
}

impl McGeheeState {
    pub fn new(q: f64, p: f64, theta: f64, j: f64) -> Self {
        Self { q, p, theta: wrap_angle(theta), j }
    }

    /// State with `θ` kept unreduced, as produced by integration.
    pub fn from_array(y: &[f64; 4]) -> Self {
        Self { q: y[0], p: y[1], theta: y[2], j: y[3] }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.q, self.p, self.theta, self.j]
    }
}

/// Constants of the McGehee change of variables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McGeheeScales {
    /// `A` in `A q² = e^{-αz}`.
    pub a_coef: f64,
    /// `B` in `B p = p_z`.
    pub b: f64,
    /// `C` in `C I = p_x`.
    pub c: f64,
    /// `dτ/dt`: McGehee time per unit physical time.
    pub time_rate: f64,
}

impl McGeheeScales {
    pub fn new(physical: &PhysicalParams) -> Self {
        let k = 8.0 * PI / (physical.a * physical.alpha);
        let c = sqrt(2.0 * physical.m * physical.d) * k;
        let b = physical.a * physical.alpha * c / (4.0 * PI);
        Self { a_coef: 2.0, b, c, time_rate: 16.0 * PI * physical.d / (physical.a * c) }
    }
}

pub fn to_mcgehee(s: &CartesianState, params: &ModelParams) -> McGeheeState {
    let ph = &params.physical;
    let sc = ph.scales();
    let q = if s.z == f64::INFINITY { 0.0 } else { sqrt(exp(-ph.alpha * s.z) / sc.a_coef) };
    McGeheeState::new(q, s.pz / sc.b, TAU * s.x / ph.a, s.px / sc.c - params.i0)
}

pub fn from_mcgehee(s: &McGeheeState, params: &ModelParams) -> Result<CartesianState, ModelError> {
    if !(s.q >= 0.0) {
        return Err(ModelError::NegativeQ(s.q));
    }
    let ph = &params.physical;
    let sc = ph.scales();
    let z = if s.q == 0.0 { f64::INFINITY } else { -log(sc.a_coef * s.q * s.q) / ph.alpha };
    Ok(CartesianState { x: ph.a * s.theta / TAU, z, px: sc.c * (params.i0 + s.j), pz: sc.b * s.p })
}

pub fn hamiltonian_cartesian(s: &CartesianState, physical: &PhysicalParams) -> f64 {
    let kin = (s.px * s.px + s.pz * s.pz) / (2.0 * physical.m);
    if s.z == f64::INFINITY {
        return kin;
    }
    let e = exp(-physical.alpha * s.z);
    let v = physical.corrugation.value(TAU * s.x / physical.a);
    kin + physical.d * e * (e - 2.0) + physical.d * e * e * v
}

pub fn vector_field_cartesian(s: &CartesianState, physical: &PhysicalParams) -> CartesianState {
    let e = exp(-physical.alpha * s.z);
    let theta = TAU * s.x / physical.a;
    let v = physical.corrugation.value(theta);
    let dv = physical.corrugation.derivative(theta);
    CartesianState {
        x: s.px / physical.m,
        z: s.pz / physical.m,
        px: -(TAU / physical.a) * physical.d * e * e * dv,
        pz: -2.0 * physical.d * physical.alpha * e * (1.0 - e * (1.0 + v)),
    }
}

/// `H₀ = ½(ν(I₀+J)² + p²) - q²/2 + q⁴/2`.
pub fn h0_mcgehee(s: &McGeheeState, params: &ModelParams) -> f64 {
    let i = params.i0 + s.j;
    let q2 = s.q * s.q;
    0.5 * (params.nu * i * i + s.p * s.p) - 0.5 * q2 + 0.5 * q2 * q2
}

/// `H₁ = (ε/2) q⁴ V(θ)`.
pub fn h1_mcgehee(s: &McGeheeState, params: &ModelParams) -> f64 {
    let q2 = s.q * s.q;
    0.5 * q2 * q2 * params.series.value(s.theta)
}

pub fn hamiltonian_mcgehee(s: &McGeheeState, params: &ModelParams) -> f64 {
    h0_mcgehee(s, params) + h1_mcgehee(s, params)
}

/// Energy of an integrator state `[q, p, θ, J]`.
pub fn energy(y: &[f64; 4], params: &ModelParams) -> f64 {
    hamiltonian_mcgehee(&McGeheeState::from_array(y), params)
}

/// `(q̇, ṗ, θ̇, J̇)` generated by `H` with the form `dθ∧dJ - q⁻¹dq∧dp`.
pub fn vector_field_mcgehee(s: &McGeheeState, params: &ModelParams) -> [f64; 4] {
    field(&s.to_array(), params)
}

#[inline]
pub fn field(y: &[f64; 4], params: &ModelParams) -> [f64; 4] {
    let (q, p, theta, j) = (y[0], y[1], y[2], y[3]);
    let q2 = q * q;
    let q4 = q2 * q2;
    let v = params.series.value(theta);
    let dv = params.series.derivative(theta);
    [-q * p, -q2 + 2.0 * q4 + 2.0 * q4 * v, params.nu * (params.i0 + j), -0.5 * q4 * dv]
}

/// The reversor `S(q, p, θ, J) = (q, -p, -θ, J)`.
pub fn reversor(s: &McGeheeState) -> McGeheeState {
    McGeheeState::new(s.q, -s.p, -s.theta, s.j)
}

/// Result of the near-identity averaging change of variables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AveragingOutcome {
    /// `(q, p, θ, J)` image of the averaged point.
    pub state: McGeheeState,
    /// `H` evaluated at the image.
    pub hamiltonian: f64,
    /// `H₀(Q, P, K)`.
    pub h0: f64,
    /// `H̃₁ = H - H₀` measured numerically.
    pub h1_tilde: f64,
    /// Closed form of `H̃₁`.
    pub h1_tilde_closed: f64,
}

/// Applies `θ = Θ`, `J = K - A'(Θ) Q⁴`, `q = Q`, `p = P + 4 A(Θ) Q⁴` with
/// `A = εW/(2νI₀)` and `W` the zero-mean primitive of `V`.  With these signs
/// the change preserves `dθ∧dJ - q⁻¹dq∧dp` and cancels the `O(1)` part of
/// `H₁`.
pub fn averaging_change(averaged: &McGeheeState, params: &ModelParams) -> AveragingOutcome {
    let (qq, pp, th, kk) = (averaged.q, averaged.p, averaged.theta, averaged.j);
    let nu_i0 = params.nu_i0();
    let a = params.series.primitive(th) / (2.0 * nu_i0);
    let da = params.series.value(th) / (2.0 * nu_i0);
    let q4 = qq * qq * qq * qq;
    let state = McGeheeState { q: qq, p: pp + 4.0 * a * q4, theta: th, j: kk - da * q4 };
    let hamiltonian = hamiltonian_mcgehee(&state, params);
    let h0 = h0_mcgehee(averaged, params);
    AveragingOutcome {
        state,
        hamiltonian,
        h0,
        h1_tilde: hamiltonian - h0,
        h1_tilde_closed: averaged_h1_closed(averaged, params),
    }
}

/// `H̃₁ = (1/(2νI₀))(-νVKQ⁴ + 4WPQ⁴ + V²Q⁸/(4I₀) + 4W²Q⁸/(νI₀))` with `V, W`
/// scaled by `ε`.
pub fn averaged_h1_closed(averaged: &McGeheeState, params: &ModelParams) -> f64 {
    let (qq, pp, th, kk) = (averaged.q, averaged.p, averaged.theta, averaged.j);
    let v = params.series.value(th);
    let w = params.series.primitive(th);
    let q4 = qq * qq * qq * qq;
    let q8 = q4 * q4;
    let nu = params.nu;
    let i0 = params.i0;
    (-nu * v * kk * q4 + 4.0 * w * pp * q4 + v * v * q8 / (4.0 * i0) + 4.0 * w * w * q8 / (nu * i0)) / (2.0 * params.nu_i0())
}

/// `sup |H̃₁|` over `|Q|, |P|, |K| ≤ 1`, `Θ ∈ 𝕋` on an `n`-point grid per axis.
pub fn averaging_remainder_sup(params: &ModelParams, n: usize) -> f64 {
    let n = n.max(2);
    let mut sup = 0.0f64;
    for iq in 0..n {
        let qq = -1.0 + 2.0 * iq as f64 / (n - 1) as f64;
        for ip in 0..n {
            let pp = -1.0 + 2.0 * ip as f64 / (n - 1) as f64;
            for ik in 0..n {
                let kk = -1.0 + 2.0 * ik as f64 / (n - 1) as f64;
                for it in 0..2 * n {
                    let th = TAU * it as f64 / (2 * n) as f64;
                    let out = averaging_change(&McGeheeState { q: qq, p: pp, theta: th, j: kk }, params);
                    sup = sup.max(out.h1_tilde.abs());
                }
            }
        }
    }
    sup
}

/// Pullback defect `max |DΦᵀ Ω(Φ(x)) DΦ - Ω(x)|` of the averaging change at
/// `x`, with a fourth-order finite-difference Jacobian.
pub fn averaging_symplectic_defect(averaged: &McGeheeState, params: &ModelParams, h: f64) -> f64 {
    let map = |y: [f64; 4]| -> [f64; 4] {
        averaging_change(&McGeheeState { q: y[0], p: y[1], theta: y[2], j: y[3] }, params).state.to_array()
    };
    let x = averaged.to_array();
    let mut jac = [[0.0; 4]; 4];
    for c in 0..4 {
        let shifted = |s: f64| {
            let mut y = x;
            y[c] += s;
            map(y)
        };
        let (m2, m1, p1, p2) = (shifted(-2.0 * h), shifted(-h), shifted(h), shifted(2.0 * h));
        for r in 0..4 {
            jac[r][c] = (m2[r] - 8.0 * m1[r] + 8.0 * p1[r] - p2[r]) / (12.0 * h);
        }
    }
    let image = map(x);
    let omega = |q: f64| -> [[f64; 4]; 4] {
        let mut o = [[0.0; 4]; 4];
        o[0][1] = -1.0 / q;
        o[1][0] = 1.0 / q;
        o[2][3] = 1.0;
        o[3][2] = -1.0;
        o
    };
    let om_img = omega(image[0]);
    let om_x = omega(x[0]);
    let mut defect = 0.0f64;
    for i in 0..4 {
        for j in 0..4 {
            let mut acc = 0.0;
            for a in 0..4 {
                for b in 0..4 {
                    acc += jac[a][i] * om_img[a][b] * jac[b][j];
                }
            }
            defect = defect.max((acc - om_x[i][j]).abs());
        }
    }
    defect
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(nu_i0: f64, eps: f64) -> ModelParams {
        ModelParams::physical_default(nu_i0, eps)
    }

    #[test]
    fn potential_examples() {
        let s = CorrugationSeries::physical();
        assert!((potential_v(0.0, &s) - 0.068).abs() < 1e-15);
        assert!((potential_v(PI / 2.0, &s) + 0.008).abs() < 1e-15);
        assert_eq!(potential_v(1.234, &CorrugationSeries::zero(3)), 0.0);
    }

    #[test]
    fn fourier_coefficients() {
        let s = CorrugationSeries::physical();
        assert_eq!(fourier_coeff_v(1, &s), Complex64::new(0.03, 0.0));
        assert_eq!(fourier_coeff_v(0, &s), Complex64::new(0.0, 0.0));
        assert_eq!(fourier_coeff_v(-2, &s), Complex64::new(0.004, 0.0));
        assert_eq!(fourier_coeff_v(3, &s), Complex64::new(0.0, 0.0));
        // Reconstruct a series with sine terms from its coefficients.
        let g = CorrugationSeries::new(vec![0.1, 0.2], vec![0.3, -0.05]).unwrap();
        let th = 0.77;
        let mut acc = Complex64::new(0.0, 0.0);
        for k in -2..=2i64 {
            acc += g.coeff(k) * Complex64::new(0.0, k as f64 * th).exp();
        }
        assert!((acc.re - g.value(th)).abs() < 1e-15 && acc.im.abs() < 1e-15);
    }

    #[test]
    fn nu_examples() {
        let p = PhysicalParams::default();
        assert!((nu_from_physical(&p) / 11.051879175935 - 1.0).abs() < 1e-11);
        let unit = PhysicalParams { a: 4.0 * PI, alpha: 1.0, ..PhysicalParams::default() };
        assert!((nu_from_physical(&unit) - 1.0).abs() < 1e-15);
        let double = PhysicalParams { a: 7.2, ..PhysicalParams::default() };
        assert!((nu_from_physical(&double) * 4.0 / nu_from_physical(&p) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cartesian_energy_examples() {
        let mut p = PhysicalParams::default();
        let far = CartesianState { x: 0.3, z: f64::INFINITY, px: 0.0, pz: 0.0 };
        assert_eq!(hamiltonian_cartesian(&far, &p), 0.0);
        let s = CartesianState { x: 0.0, z: 0.0, px: 0.0, pz: 0.0 };
        assert!((hamiltonian_cartesian(&s, &p) - (-p.d + p.d * 0.068)).abs() < 1e-13);
        p.corrugation = CorrugationSeries::zero(2);
        assert!((hamiltonian_cartesian(&s, &p) + p.d).abs() < 1e-14);
    }

    #[test]
    fn mcgehee_examples() {
        let pr = params(5.0, 1.0);
        let s = to_mcgehee(&CartesianState { x: 0.0, z: 0.0, px: 0.0, pz: 0.0 }, &pr);
        assert!((s.q - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        let s = to_mcgehee(&CartesianState { x: 0.0, z: f64::INFINITY, px: 1.0, pz: 0.0 }, &pr);
        assert_eq!((s.q, s.p), (0.0, 0.0));
        assert!(from_mcgehee(&McGeheeState::new(-0.1, 0.0, 0.0, 0.0), &pr).is_err());
        let scales = pr.physical().scales();
        assert!((scales.b * scales.b / (8.0 * pr.physical().m * pr.physical().d) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn hamiltonian_examples() {
        let pr = params(5.0, 1.0);
        let th = 0.4;
        let at_inf = hamiltonian_mcgehee(&McGeheeState::new(0.0, 0.0, th, 0.0), &pr);
        assert!((at_inf - pr.level()).abs() < 1e-15);
        let one = hamiltonian_mcgehee(&McGeheeState::new(1.0, 0.0, th, 0.0), &pr);
        assert!((one - pr.level() - 0.5 * pr.series().value(th)).abs() < 1e-15);
        let flat = params(5.0, 0.0);
        let s = McGeheeState::new(0.7, 0.2, 1.1, 0.01);
        assert_eq!(hamiltonian_mcgehee(&s, &flat), h0_mcgehee(&s, &flat));
    }

    #[test]
    fn field_examples() {
        let pr = params(5.0, 1.0);
        let f = vector_field_mcgehee(&McGeheeState::new(0.0, 0.3, 1.0, 0.02), &pr);
        assert_eq!((f[0], f[1], f[3]), (0.0, 0.0, 0.0));
        assert!((f[2] - pr.nu() * (pr.i0() + 0.02)).abs() < 1e-15);
        // θ* = 0 is a critical point of the even series.
        let f = vector_field_mcgehee(&McGeheeState::new(1.0, 0.0, 0.0, 0.0), &pr);
        assert!((f[1] - (1.0 + 2.0 * pr.series().value(0.0))).abs() < 1e-15);
    }

    #[test]
    fn cartesian_field_examples() {
        let mut p = PhysicalParams::default();
        let high = vector_field_cartesian(&CartesianState { x: 0.2, z: 40.0, px: 1.0, pz: 1.0 }, &p);
        assert!(high.pz.abs() < 1e-15);
        p.corrugation = CorrugationSeries::zero(2);
        let flat = vector_field_cartesian(&CartesianState { x: 0.2, z: 0.5, px: 1.0, pz: 1.0 }, &p);
        assert_eq!(flat.px, 0.0);
    }

    #[test]
    fn averaging_identity_at_q_zero() {
        let pr = params(4.0, 1.0);
        let s = McGeheeState { q: 0.0, p: 0.3, theta: 1.2, j: -0.1 };
        let out = averaging_change(&s, &pr);
        assert_eq!(out.state, s);
    }

    #[test]
    fn averaging_remainder_closed_form_and_symplectic() {
        let pr = params(4.0, 1.0);
        for &(q, p, th, k) in &[(0.5, 0.2, 0.3, 0.1), (0.9, -0.7, 2.0, -0.4), (1.0, 1.0, 5.5, 1.0)] {
            let s = McGeheeState { q, p, theta: th, j: k };
            let out = averaging_change(&s, &pr);
            assert!((out.h1_tilde - out.h1_tilde_closed).abs() < 1e-14, "{out:?}");
            let defect = averaging_symplectic_defect(&s, &pr, 1e-3);
            assert!(defect < 1e-10, "defect {defect}");
        }
    }

    #[test]
    fn averaging_remainder_halves() {
        let a = averaging_remainder_sup(&params(4.0, 1.0), 9);
        let b = averaging_remainder_sup(&params(8.0, 1.0), 9);
        assert!(((a / b) / 2.0 - 1.0).abs() < 0.1, "{a} {b}");
    }

    fn pushforward(c: &CartesianState, pr: &ModelParams) -> [f64; 4] {
        let ph = pr.physical();
        let sc = ph.scales();
        let d = vector_field_cartesian(c, ph);
        let s = to_mcgehee(c, pr);
        let w = sc.time_rate;
        [
            -0.5 * ph.alpha * s.q * d.z / w,
            d.pz / sc.b / w,
            TAU * d.x / ph.a / w,
            d.px / sc.c / w,
        ]
    }

    proptest! {
        #[test]
        fn energy_matches_cartesian(x in -5.0..5.0f64, z in -0.5..6.0f64, px in -20.0..20.0f64, pz in -20.0..20.0f64) {
            let pr = params(4.0, 1.0);
            let c = CartesianState { x, z, px, pz };
            let hc = hamiltonian_cartesian(&c, pr.physical());
            let hm = hamiltonian_mcgehee(&to_mcgehee(&c, &pr), &pr);
            let scale = hc.abs().max(pr.physical().d);
            prop_assert!((8.0 * pr.physical().d * hm - hc).abs() <= 1e-12 * scale);
        }

        #[test]
        fn pushforward_matches_rescaled_field(x in -5.0..5.0f64, z in -0.5..6.0f64, px in -20.0..20.0f64, pz in -20.0..20.0f64) {
            let pr = params(4.0, 1.0);
            let c = CartesianState { x, z, px, pz };
            let mine = vector_field_mcgehee(&to_mcgehee(&c, &pr), &pr);
            let push = pushforward(&c, &pr);
            for i in 0..4 {
                prop_assert!((mine[i] - push[i]).abs() <= 1e-10 * (1.0 + mine[i].abs()), "{i}: {} vs {}", mine[i], push[i]);
            }
        }

        #[test]
        fn roundtrip(x in 0.0..3.59f64, z in -0.5..8.0f64, px in -20.0..20.0f64, pz in -20.0..20.0f64) {
            let pr = params(4.0, 1.0);
            let c = CartesianState { x, z, px, pz };
            let back = from_mcgehee(&to_mcgehee(&c, &pr), &pr).unwrap();
            prop_assert!((back.x - x).abs() <= 1e-14 * (1.0 + x.abs()));
            prop_assert!((back.z - z).abs() <= 1e-14 * (1.0 + z.abs()));
            prop_assert!((back.px - px).abs() <= 1e-14 * (1.0 + px.abs()));
            prop_assert!((back.pz - pz).abs() <= 1e-14 * (1.0 + pz.abs()));
        }

        #[test]
        fn reversibility(q in 0.0..1.2f64, p in -1.0..1.0f64, th in 0.0..6.28f64, j in -0.2..0.2f64) {
            let pr = params(5.0, 1.0);
            let s = McGeheeState { q, p, theta: th, j };
            let f = vector_field_mcgehee(&s, &pr);
            let g = vector_field_mcgehee(&McGeheeState { q, p: -p, theta: -th, j }, &pr);
            // X(S s) = -S X(s)
            prop_assert!((g[0] + f[0]).abs() <= 1e-15);
            prop_assert!((g[1] - f[1]).abs() <= 1e-15);
            prop_assert!((g[2] - f[2]).abs() <= 1e-15);
            prop_assert!((g[3] + f[3]).abs() <= 1e-15);
        }

        #[test]
        fn infinity_is_invariant(p in -1.0..1.0f64, th in 0.0..6.28f64, j in -0.2..0.2f64) {
            let pr = params(5.0, 1.0);
            let f = vector_field_mcgehee(&McGeheeState { q: 0.0, p, theta: th, j }, &pr);
            prop_assert_eq!(f[0], 0.0);
        }
    }
}
