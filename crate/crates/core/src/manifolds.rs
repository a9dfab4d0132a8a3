//! Unstable and stable manifolds of the parabolic orbit at infinity.
//!
//! Near infinity the unstable manifold is the graph of `Φ = Φ₀ + Φ₁` over
//! `(u, θ)`, with `Φ₁` the fixed point of
//! `Φ₁ = 𝒢ᵘ(-[(∂_uΦ₁)²/(2p_h²) + (ν/2)(∂_θΦ₁)² + (ε/2)q_h⁴V])`, solved
//! mode by mode with the Volterra engine.  The graph seeds orbits that are
//! carried by the full flow to the region `u > 0`, where they are compared
//! with the stable manifold obtained from the reversor.

use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
use thiserror::Error;

use crate::fit::{least_squares, LinearFit};
use crate::fourier::Modes;
use crate::integrate::{integrate, Direction, IntegrateError, IntegratorConfig};
use crate::math::{brent, fabs, log, sqrt, wrap_pi, TAU};
use crate::model::{energy, field, ModelParams};
use crate::separatrix::{p_h, phi0, q_h};
use crate::volterra::{PanelGrid, Volterra};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ManifoldError {
    #[error("Picard iteration does not contract (ratio {ratio:.3} at iteration {iteration})")]
    NonContraction { ratio: f64, iteration: usize },
    #[error("invalid domain: {0}")]
    InvalidDomain(&'static str),
    #[error("integration failed: {0}")]
    Integrate(IntegrateError),
    #[error("level u = {u} not reached from seed angle {theta}")]
    Coverage { u: f64, theta: f64 },
    #[error("splitting amplitude {amplitude:e} below 10x noise floor {noise:e}")]
    SignalBelowNoise { amplitude: f64, noise: f64 },
    #[error("expected 2 homoclinic roots per period, found {}", roots.len())]
    RootCount { roots: Vec<f64> },
    #[error("level u = {0} not present in both sheets")]
    MissingLevel(f64),
}

impl From<IntegrateError> for ManifoldError {
    fn from(e: IntegrateError) -> Self {
        ManifoldError::Integrate(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sheet {
    Unstable,
    Stable,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HjConfig {
    /// Right end of the graph domain, `≤ -0.2`.
    pub u_max: f64,
    /// Left end of the grid; the rest of `(-∞, u_min]` is an asymptotic tail.
    pub u_min: f64,
    /// Fourier modes kept, `|k| ≤ modes`.
    pub modes: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for HjConfig {
    fn default() -> Self {
        Self { u_max: -3.0, u_min: -200.0, modes: 8, tol: 1e-12, max_iter: 50 }
    }
}

/// `Φ₁` of one manifold sheet on a panel grid in `u`, stored as the modes
/// `k = 0..=K` (the negative ones are conjugates).
#[derive(Debug, Clone)]
pub struct ManifoldGraph {
    pub sheet: Sheet,
    grid: PanelGrid,
    modes: usize,
    nu_i0: f64,
    phi: Vec<Vec<Complex64>>,
    dphi_du: Vec<Vec<Complex64>>,
    pub iterations: usize,
    /// Sup over nodes of the Hamilton–Jacobi residual.
    pub residual: f64,
    /// Last successive-difference ratio of the Picard iteration.
    pub contraction: f64,
    /// Successive Picard differences.
    pub history: Vec<f64>,
    pub converged: bool,
}

struct ThetaGrid {
    n: usize,
    /// `e^{ikθ_j}` for `k = 0..=K`, row-major by `j`.
    expo: Vec<Complex64>,
    kmax: usize,
}

impl ThetaGrid {
    fn new(kmax: usize) -> Self {
        let n = 4 * (kmax + 1);
        let mut expo = Vec::with_capacity(n * (kmax + 1));
        for j in 0..n {
            for k in 0..=kmax {
                expo.push(Complex64::from_polar(1.0, TAU * (k * j % n) as f64 / n as f64));
            }
        }
        Self { n, expo, kmax }
    }

    fn theta(&self, j: usize) -> f64 {
        TAU * j as f64 / self.n as f64
    }

    /// Real function from modes `0..=K`.
    fn synth(&self, c: &[Complex64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            let row = &self.expo[j * (self.kmax + 1)..(j + 1) * (self.kmax + 1)];
            let mut s = c[0].re;
            for k in 1..=self.kmax {
                s += 2.0 * (c[k] * row[k]).re;
            }
            *o = s;
        }
    }

    fn analyse(&self, v: &[f64], out: &mut [Complex64]) {
        for (k, o) in out.iter_mut().enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            for (j, x) in v.iter().enumerate() {
                acc += self.expo[j * (self.kmax + 1) + k].conj() * *x;
            }
            *o = acc / self.n as f64;
        }
    }
}

/// Right-hand side modes `F_k(u_i)` for given `∂_uΦ₁`, `∂_θΦ₁` modes.
fn rhs(params: &ModelParams, tg: &ThetaGrid, nodes: &[f64], dphi_du: &[Vec<Complex64>], phi: &[Vec<Complex64>], vgrid: &[f64]) -> Vec<Vec<Complex64>> {
    let kmax = tg.kmax;
    let nu = params.nu();
    let mut out = alloc::vec![alloc::vec![Complex64::new(0.0, 0.0); nodes.len()]; kmax + 1];
    let mut cu = alloc::vec![Complex64::new(0.0, 0.0); kmax + 1];
    let mut ct = alloc::vec![Complex64::new(0.0, 0.0); kmax + 1];
    let mut gu = alloc::vec![0.0; tg.n];
    let mut gt = alloc::vec![0.0; tg.n];
    let mut f = alloc::vec![0.0; tg.n];
    let mut fk = alloc::vec![Complex64::new(0.0, 0.0); kmax + 1];
    for (i, &u) in nodes.iter().enumerate() {
        let q = q_h(u);
        let q4 = q * q * q * q;
        let ph = p_h(u);
        for k in 0..=kmax {
            cu[k] = dphi_du[k][i];
            ct[k] = phi[k][i] * Complex64::new(0.0, k as f64);
        }
        tg.synth(&cu, &mut gu);
        tg.synth(&ct, &mut gt);
        for j in 0..tg.n {
            f[j] = -(gu[j] * gu[j] / (2.0 * ph * ph) + 0.5 * nu * gt[j] * gt[j] + 0.5 * q4 * vgrid[j]);
        }
        tg.analyse(&f, &mut fk);
        for k in 0..=kmax {
            out[k][i] = fk[k];
        }
    }
    out
}

/// Solves the Hamilton–Jacobi fixed point for the unstable sheet on
/// `[u_min, u_max]`.
pub fn solve_hj_unstable(params: &ModelParams, cfg: &HjConfig) -> Result<ManifoldGraph, ManifoldError> {
    if cfg.u_max > -0.2 {
        return Err(ManifoldError::InvalidDomain("u_max must be at most -0.2"));
    }
    if cfg.u_min >= cfg.u_max || cfg.modes == 0 {
        return Err(ManifoldError::InvalidDomain("empty grid or no modes"));
    }
    let nu_i0 = params.nu_i0();
    let kmax = cfg.modes;
    let omega_max = kmax as f64 * nu_i0;
    let grid = PanelGrid::build(cfg.u_min, cfg.u_max, |x: f64| {
        let dist = fabs(x).min(sqrt(1.0 + x * x));
        (0.25 * dist).min(24.0 / omega_max).min(4.0)
    });
    let nodes = grid.nodes();
    let n = nodes.len();
    let mut volterra = Volterra::new(grid);
    let tg = ThetaGrid::new(kmax);
    let vgrid: Vec<f64> = (0..tg.n).map(|j| params.series().value(tg.theta(j))).collect();
    let zero = alloc::vec![alloc::vec![Complex64::new(0.0, 0.0); n]; kmax + 1];
    let mut phi = zero.clone();
    let mut dphi = zero;
    let mut history = Vec::new();
    let mut contraction = 0.0;
    let mut iterations = 0;
    let mut converged = false;
    for it in 0..cfg.max_iter {
        iterations = it + 1;
        let f = rhs(params, &tg, &nodes, &dphi, &phi, &vgrid);
        let mut diff: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for k in 0..=kmax {
            let w = k as f64 * nu_i0;
            let y = volterra.convolve(&f[k], w);
            for i in 0..n {
                let d = f[k][i] - Complex64::new(0.0, w) * y[i];
                diff = diff.max((y[i] - phi[k][i]).norm()).max((d - dphi[k][i]).norm());
                scale = scale.max(y[i].norm()).max(d.norm());
                phi[k][i] = y[i];
                dphi[k][i] = d;
            }
        }
        if let Some(&prev) = history.last() {
            let prev: f64 = prev;
            if prev > 0.0 {
                contraction = diff / prev;
            }
        }
        history.push(diff);
        if diff <= 1e-3 * cfg.tol || diff <= 8.0 * f64::EPSILON * scale {
            converged = true;
            break;
        }
        if it >= 2 && contraction >= 0.9 {
            return Err(ManifoldError::NonContraction { ratio: contraction, iteration: iterations });
        }
    }
    let mut graph = ManifoldGraph {
        sheet: Sheet::Unstable,
        grid: volterra.grid().clone(),
        modes: kmax,
        nu_i0,
        phi,
        dphi_du: dphi,
        iterations,
        residual: 0.0,
        contraction,
        history,
        converged,
    };
    graph.residual = graph.hj_residual(params);
    Ok(graph)
}

impl ManifoldGraph {
    pub fn u_range(&self) -> (f64, f64) {
        (self.grid.left(), self.grid.right())
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn nu_i0(&self) -> f64 {
        self.nu_i0
    }

    pub fn nodes(&self) -> Vec<f64> {
        self.grid.nodes()
    }

    /// `Φ₁^[k](u)` for `k ≥ 0` by panel interpolation.
    pub fn mode(&self, k: usize, u: f64) -> Complex64 {
        self.grid.interpolate(&self.phi[k], u)
    }

    /// `(Φ₁, ∂_uΦ₁, ∂_θΦ₁)` at `(u, θ)`.
    pub fn eval(&self, u: f64, theta: f64) -> (f64, f64, f64) {
        let (mut f, mut fu, mut ft) = (0.0, 0.0, 0.0);
        for k in 0..=self.modes {
            let c = self.grid.interpolate(&self.phi[k], u);
            let cu = self.grid.interpolate(&self.dphi_du[k], u);
            let e = Complex64::from_polar(1.0, k as f64 * theta);
            let m = if k == 0 { 1.0 } else { 2.0 };
            f += m * (c * e).re;
            fu += m * (cu * e).re;
            ft += m * (c * e * Complex64::new(0.0, k as f64)).re;
        }
        (f, fu, ft)
    }

    /// `sup |Φ₁|` over grid nodes (bounded through the mode sum).
    pub fn sup_norm(&self) -> f64 {
        let n = self.phi[0].len();
        (0..n).map(|i| self.phi.iter().enumerate().map(|(k, m)| if k == 0 { m[i].norm() } else { 2.0 * m[i].norm() }).sum::<f64>()).fold(0.0, f64::max)
    }

    /// Sup over nodes of the Hamilton–Jacobi residual, with `∂_uΦ₁` taken by
    /// spectral differentiation of the stored `Φ₁`.
    pub fn hj_residual(&self, params: &ModelParams) -> f64 {
        let nodes = self.grid.nodes();
        let tg = ThetaGrid::new(self.modes);
        let vgrid: Vec<f64> = (0..tg.n).map(|j| params.series().value(tg.theta(j))).collect();
        let du: Vec<Vec<Complex64>> = self.phi.iter().map(|m| self.grid.differentiate(m)).collect();
        let f = rhs(params, &tg, &nodes, &du, &self.phi, &vgrid);
        let mut worst: f64 = 0.0;
        for i in 0..nodes.len() {
            let mut r = 0.0;
            for k in 0..=self.modes {
                let w = k as f64 * self.nu_i0;
                let v = du[k][i] + Complex64::new(0.0, w) * self.phi[k][i] - f[k][i];
                r += if k == 0 { v.norm() } else { 2.0 * v.norm() };
            }
            worst = worst.max(r);
        }
        worst
    }
}

/// State on the unstable manifold at `(u₀, θ)` together with `Φ = Φ₀ + Φ₁`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManifoldPoint {
    pub u: f64,
    pub state: [f64; 4],
    pub phi: f64,
}

/// `Γ⁺(u₀, θ) = (q_h, (p_h² + ∂_uΦ₁)/p_h, θ, ∂_θΦ₁)` at each sample angle.
pub fn unstable_initial_conditions(graph: &ManifoldGraph, u0: f64, thetas: &[f64]) -> Result<Vec<ManifoldPoint>, ManifoldError> {
    let (lo, hi) = graph.u_range();
    if !(u0 >= lo && u0 <= hi) {
        return Err(ManifoldError::InvalidDomain("seed u outside the graph"));
    }
    let ph = p_h(u0);
    Ok(thetas
        .iter()
        .map(|&th| {
            let (f, fu, ft) = graph.eval(u0, th);
            ManifoldPoint { u: u0, state: [q_h(u0), (ph * ph + fu) / ph, th, ft], phi: phi0(u0) + f }
        })
        .collect())
}

/// The McGehee field augmented with `Φ̇ = p² + νJ(I₀+J)`.
pub fn augmented_field(params: &ModelParams) -> impl Fn(f64, &[f64; 5]) -> [f64; 5] + '_ {
    move |_, y| {
        let f = field(&[y[0], y[1], y[2], y[3]], params);
        [f[0], f[1], f[2], f[3], y[1] * y[1] + params.nu() * y[3] * (params.i0() + y[3])]
    }
}

/// Sheet samples on a regular `(u, θ)` grid, `θ_m = 2πm/N`.
#[derive(Debug, Clone, PartialEq)]
pub struct SheetSamples {
    pub sheet: Sheet,
    pub nu_i0: f64,
    pub u_levels: Vec<f64>,
    pub n_theta: usize,
    /// McGehee `p` per level and angle.
    pub p: Vec<Vec<f64>>,
    pub j: Vec<Vec<f64>>,
    pub phi: Vec<Vec<f64>>,
    /// Largest `|H - νI₀²/2|` over the samples.
    pub energy_error: f64,
}

impl SheetSamples {
    pub fn theta(&self, m: usize) -> f64 {
        TAU * m as f64 / self.n_theta as f64
    }

    pub fn level_index(&self, u: f64) -> Option<usize> {
        self.u_levels.iter().position(|&x| fabs(x - u) < 1e-12)
    }

    /// `P = ∂_uΦ = p·p_h(u)`.
    pub fn big_p(&self, level: usize, m: usize) -> f64 {
        self.p[level][m] * p_h(self.u_levels[level])
    }

    /// The opposite sheet through the reversor:
    /// `J⁻(u, θ) = J⁺(-u, -θ)`, `p⁻(u, θ) = -p⁺(-u, -θ)`, `Φ⁻(u, θ) = -Φ⁺(-u, -θ)`.
    pub fn reversed(&self) -> SheetSamples {
        let n = self.n_theta;
        let flip = |rows: &Vec<Vec<f64>>, sign: f64| -> Vec<Vec<f64>> { rows.iter().map(|r| (0..n).map(|m| sign * r[(n - m) % n]).collect()).collect() };
        SheetSamples {
            sheet: match self.sheet {
                Sheet::Unstable => Sheet::Stable,
                Sheet::Stable => Sheet::Unstable,
            },
            nu_i0: self.nu_i0,
            u_levels: self.u_levels.iter().map(|u| -u).collect(),
            n_theta: n,
            p: flip(&self.p, -1.0),
            j: flip(&self.j, 1.0),
            phi: flip(&self.phi, -1.0),
            energy_error: self.energy_error,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalizeConfig {
    /// Seed abscissa on the graph, `≤ -2`.
    pub u_seed: f64,
    pub n_theta: usize,
    pub tol: f64,
}

impl Default for GlobalizeConfig {
    fn default() -> Self {
        Self { u_seed: -3.0, n_theta: 32, tol: 1e-13 }
    }
}

fn trig_modes(values: &[f64]) -> Modes {
    let n = values.len();
    Modes::from_real_grid(values, (n - 1) / 2)
}

/// Carries seeds from the graph to each level `q = q_h(u)` (the `p < 0`
/// branch for `u < 0`, `p > 0` for `u > 0`) and resamples the arrivals on the
/// regular angle grid.
pub fn globalize(graph: &ManifoldGraph, params: &ModelParams, u_levels: &[f64], cfg: &GlobalizeConfig) -> Result<SheetSamples, ManifoldError> {
    if cfg.u_seed > -2.0 {
        return Err(ManifoldError::InvalidDomain("seeds must be taken at u <= -2"));
    }
    if u_levels.iter().any(|&u| u == 0.0 || u <= cfg.u_seed) {
        return Err(ManifoldError::InvalidDomain("levels must be nonzero and beyond the seed"));
    }
    let n = cfg.n_theta;
    let seeds_theta: Vec<f64> = (0..n).map(|m| TAU * m as f64 / n as f64).collect();
    let seeds = unstable_initial_conditions(graph, cfg.u_seed, &seeds_theta)?;
    let icfg = IntegratorConfig::with_tol(cfg.tol)?;
    let u_end = u_levels.iter().cloned().fold(f64::MIN, f64::max);
    let t_end = u_end - cfg.u_seed + 2.0;
    let level = params.level();
    let nl = u_levels.len();
    // arrivals[level][seed] = (θ - θ_seed, p, J, Φ)
    let mut arrivals = alloc::vec![alloc::vec![[0.0; 4]; n]; nl];
    let mut energy_error: f64 = 0.0;
    for (s, seed) in seeds.iter().enumerate() {
        let y0 = [seed.state[0], seed.state[1], seed.state[2], seed.state[3], seed.phi];
        let traj = integrate(augmented_field(params), y0, 0.0, t_end, &icfg)?;
        for (l, &u) in u_levels.iter().enumerate() {
            let target = q_h(u);
            let dir = if u < 0.0 { Direction::Increasing } else { Direction::Decreasing };
            let ev = traj
                .crossings(|_, y| y[0] - target, dir)
                .into_iter()
                .find(|e| if u < 0.0 { e.state[1] < 0.0 } else { e.state[1] > 0.0 })
                .ok_or(ManifoldError::Coverage { u, theta: seed.state[2] })?;
            let y = ev.state;
            energy_error = energy_error.max(fabs(energy(&[y[0], y[1], y[2], y[3]], params) - level));
            arrivals[l][s] = [y[2] - seeds_theta[s], y[1], y[3], y[4]];
        }
    }
    let mut p = Vec::with_capacity(nl);
    let mut j = Vec::with_capacity(nl);
    let mut phi = Vec::with_capacity(nl);
    for row in &arrivals {
        let d: Vec<f64> = row.iter().map(|a| a[0]).collect();
        let dm = trig_modes(&d);
        let ddm = dm.derivative();
        let pm = trig_modes(&row.iter().map(|a| a[1]).collect::<Vec<_>>());
        let jm = trig_modes(&row.iter().map(|a| a[2]).collect::<Vec<_>>());
        let fm = trig_modes(&row.iter().map(|a| a[3]).collect::<Vec<_>>());
        let (mut pr, mut jr, mut fr) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for m in 0..n {
            let target = TAU * m as f64 / n as f64;
            // Seed angle whose orbit arrives at `target` (mod 2π).
            let mut s = target - dm.eval(target).re;
            let k = libm::round((s + dm.eval(s).re - target) / TAU);
            let goal = target + k * TAU;
            for _ in 0..50 {
                let g = s + dm.eval(s).re - goal;
                let dg = 1.0 + ddm.eval(s).re;
                let step = g / dg;
                s -= step;
                if fabs(step) < 1e-15 {
                    break;
                }
            }
            pr.push(pm.eval(s).re);
            jr.push(jm.eval(s).re);
            fr.push(fm.eval(s).re);
        }
        p.push(pr);
        j.push(jr);
        phi.push(fr);
    }
    Ok(SheetSamples { sheet: Sheet::Unstable, nu_i0: params.nu_i0(), u_levels: u_levels.to_vec(), n_theta: n, p, j, phi, energy_error })
}

/// Measured splitting at one level and harmonic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplittingSample {
    pub nu_i0: f64,
    pub epsilon: f64,
    pub u: f64,
    pub k: usize,
    /// Amplitude and phase of `ΔJ` in `cos(kθ' + phase)`, `θ' = θ - νI₀u`.
    pub amp_j: f64,
    pub phase_j: f64,
    pub amp_p: f64,
    pub phase_p: f64,
    /// Angle average of `ΔΦ`.
    pub mean_delta_phi: f64,
    pub noise_floor: f64,
}

fn harmonic_in_shifted_angle(values: &[f64], k: usize, shift: f64) -> (f64, f64) {
    let n = values.len();
    let mut c = Complex64::new(0.0, 0.0);
    for (m, v) in values.iter().enumerate() {
        let th = TAU * m as f64 / n as f64 - shift;
        c += Complex64::from_polar(*v, -(k as f64) * th);
    }
    c /= n as f64;
    (2.0 * c.norm(), c.arg())
}

/// Differences `J⁺ - J⁻`, `P⁺ - P⁻`, `Φ⁺ - Φ⁻` on the angle grid at level `u`.
pub fn differences(unstable: &SheetSamples, stable: &SheetSamples, u: f64) -> Result<[Vec<f64>; 3], ManifoldError> {
    let a = unstable.level_index(u).ok_or(ManifoldError::MissingLevel(u))?;
    let b = stable.level_index(u).ok_or(ManifoldError::MissingLevel(u))?;
    let n = unstable.n_theta;
    let dj = (0..n).map(|m| unstable.j[a][m] - stable.j[b][m]).collect();
    let dp = (0..n).map(|m| unstable.big_p(a, m) - stable.big_p(b, m)).collect();
    let df = (0..n).map(|m| unstable.phi[a][m] - stable.phi[b][m]).collect();
    Ok([dj, dp, df])
}

pub fn measure_splitting(unstable: &SheetSamples, stable: &SheetSamples, u: f64, k: usize, epsilon: f64) -> Result<SplittingSample, ManifoldError> {
    let [dj, dp, df] = differences(unstable, stable, u)?;
    let shift = unstable.nu_i0 * u;
    let (amp_j, phase_j) = harmonic_in_shifted_angle(&dj, k, shift);
    let (amp_p, phase_p) = harmonic_in_shifted_angle(&dp, k, shift);
    let mean_delta_phi = df.iter().sum::<f64>() / df.len() as f64;
    let noise_floor = (unstable.energy_error.max(stable.energy_error) / unstable.nu_i0).max(1e-15);
    let sample = SplittingSample { nu_i0: unstable.nu_i0, epsilon, u, k, amp_j, phase_j, amp_p, phase_p, mean_delta_phi, noise_floor };
    if amp_j <= 10.0 * noise_floor {
        return Err(ManifoldError::SignalBelowNoise { amplitude: amp_j, noise: noise_floor });
    }
    Ok(sample)
}

/// A zero of `ΔP(u, ·)` with the slope there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomoclinicRoot {
    pub theta: f64,
    pub slope: f64,
}

/// Zeros of `ΔP(u, ·)` on `[0, 2π)` by trigonometric interpolation.
pub fn find_homoclinics(unstable: &SheetSamples, stable: &SheetSamples, u: f64) -> Result<Vec<HomoclinicRoot>, ManifoldError> {
    let [_, dp, _] = differences(unstable, stable, u)?;
    let m = trig_modes(&dp);
    let dm = m.derivative();
    let f = |t: f64| m.eval(t).re;
    let fine = 16 * dp.len();
    let mut roots = Vec::new();
    let mut ta = 0.0;
    let mut fa = f(ta);
    for i in 1..=fine {
        let tb = TAU * i as f64 / fine as f64;
        let fb = f(tb);
        if (fa < 0.0 && fb >= 0.0) || (fa > 0.0 && fb <= 0.0) {
            let (t, _) = brent(f, ta, tb, fa, fb, 1e-15, 200);
            if t < TAU - 1e-12 {
                roots.push(HomoclinicRoot { theta: t, slope: dm.eval(t).re });
            }
        }
        ta = tb;
        fa = fb;
    }
    if roots.len() != 2 {
        return Err(ManifoldError::RootCount { roots: roots.iter().map(|r| r.theta).collect() });
    }
    Ok(roots)
}

/// Distance of a root from the nearest line `θ - νI₀u = kπ`.
pub fn homoclinic_phase_offset(root: f64, nu_i0: f64, u: f64) -> f64 {
    let x = wrap_pi(root - nu_i0 * u);
    let d0 = fabs(x);
    let d1 = fabs(PI - fabs(x));
    d0.min(d1)
}

/// Fit of `log(amplitude) = c - ρ·νI₀ + σ·log(νI₀)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingFit {
    pub rho: f64,
    pub sigma: f64,
    pub c: f64,
    pub rho_err: f64,
    pub sigma_err: f64,
    pub fit: LinearFit,
    pub range: (f64, f64),
}

pub fn fit_scaling(samples: &[SplittingSample]) -> Option<ScalingFit> {
    if samples.len() < 4 {
        return None;
    }
    let rows: Vec<Vec<f64>> = samples.iter().map(|s| alloc::vec![1.0, -s.nu_i0, log(s.nu_i0)]).collect();
    let y: Vec<f64> = samples.iter().map(|s| log(s.amp_j)).collect();
    let fit = least_squares(&rows, &y)?;
    let lo = samples.iter().map(|s| s.nu_i0).fold(f64::MAX, f64::min);
    let hi = samples.iter().map(|s| s.nu_i0).fold(f64::MIN, f64::max);
    Some(ScalingFit { c: fit.coeffs[0], rho: fit.coeffs[1], sigma: fit.coeffs[2], rho_err: fit.std_err(1), sigma_err: fit.std_err(2), fit, range: (lo, hi) })
}

/// Both sheets at `±u` levels for a set of `u > 0` values.
#[derive(Debug, Clone)]
pub struct SplittingRun {
    pub graph: ManifoldGraph,
    pub unstable: SheetSamples,
    pub stable: SheetSamples,
}

/// Solves the graph, globalizes to `±u` and mirrors the stable sheet.
pub fn splitting_run(params: &ModelParams, u_values: &[f64], hj: &HjConfig, glob: &GlobalizeConfig) -> Result<SplittingRun, ManifoldError> {
    let graph = solve_hj_unstable(params, &HjConfig { u_max: glob.u_seed, ..*hj })?;
    let mut levels: Vec<f64> = u_values.iter().flat_map(|&u| [-u, u]).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let unstable = globalize(&graph, params, &levels, glob)?;
    let stable = unstable.reversed();
    Ok(SplittingRun { graph, unstable, stable })
}

/// Melnikov prediction of the first-harmonic amplitude of `ΔJ`, `2|L^[1]|`.
pub fn melnikov_amplitude(params: &ModelParams, k: i64) -> f64 {
    let l = crate::separatrix::melnikov_coeff_closed(k, params.nu_i0(), params.series()).value;
    2.0 * k.unsigned_abs() as f64 * l.norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::separatrix::{gamma0, l_out_plus_modes};

    #[test]
    fn flat_surface_gives_separatrix() {
        let pr = ModelParams::physical_default(5.0, 0.0);
        let g = solve_hj_unstable(&pr, &HjConfig::default()).unwrap();
        assert_eq!(g.iterations, 1);
        assert_eq!(g.sup_norm(), 0.0);
        let pts = unstable_initial_conditions(&g, -3.0, &[0.0, 1.0]).unwrap();
        for p in pts {
            assert_eq!(p.state, gamma0(-3.0, p.state[2]));
        }
    }

    #[test]
    fn first_iterate_is_l_out_and_residual_small() {
        let pr = ModelParams::physical_default(6.0, 1e-4);
        let g = solve_hj_unstable(&pr, &HjConfig::default()).unwrap();
        assert!(g.converged);
        assert!(g.residual <= 1e-12, "{}", g.residual);
        let mut worst: f64 = 0.0;
        let mut size: f64 = 0.0;
        for u in [-50.0, -10.0, -4.0, -3.0] {
            let l = l_out_plus_modes(u, 6.0, pr.series());
            for k in 0..=2usize {
                worst = worst.max((g.mode(k, u) - l.get(k as i64)).norm());
                size = size.max(l.get(k as i64).norm());
            }
        }
        assert!(worst <= 1e-6 * size, "{worst} {size}");
    }

    #[test]
    fn manifold_lies_on_energy_level() {
        let pr = ModelParams::physical_default(4.0, 1.0);
        let g = solve_hj_unstable(&pr, &HjConfig::default()).unwrap();
        let thetas: Vec<f64> = (0..16).map(|j| TAU * j as f64 / 16.0).collect();
        for p in unstable_initial_conditions(&g, -3.0, &thetas).unwrap() {
            let e = energy(&p.state, &pr) - pr.level();
            assert!(e.abs() < 1e-11, "{e}");
        }
    }

    #[test]
    fn deviation_from_separatrix_decays_with_nu_i0() {
        let dev = |nu_i0: f64| {
            let pr = ModelParams::physical_default(nu_i0, 1.0);
            let g = solve_hj_unstable(&pr, &HjConfig::default()).unwrap();
            let thetas: Vec<f64> = (0..32).map(|j| TAU * j as f64 / 32.0).collect();
            unstable_initial_conditions(&g, -3.0, &thetas)
                .unwrap()
                .iter()
                .map(|p| {
                    let s = gamma0(-3.0, p.state[2]);
                    (0..4).map(|i| (p.state[i] - s[i]).abs()).fold(0.0, f64::max)
                })
                .fold(0.0, f64::max)
        };
        let (a, b) = (dev(8.0), dev(16.0));
        assert!(a <= 2.0 * b * 2.0 && a > b, "{a} {b}");
    }

    #[test]
    fn globalized_flat_sheet() {
        let pr = ModelParams::physical_default(4.0, 0.0);
        let run = splitting_run(&pr, &[1.0], &HjConfig::default(), &GlobalizeConfig { n_theta: 8, ..Default::default() }).unwrap();
        let l = run.unstable.level_index(1.0).unwrap();
        for m in 0..8 {
            assert!((run.unstable.big_p(l, m) - p_h(1.0).powi(2)).abs() < 1e-10);
            assert!(run.unstable.j[l][m].abs() < 1e-10);
        }
        let r = measure_splitting(&run.unstable, &run.stable, 1.0, 1, 0.0);
        assert!(matches!(r, Err(ManifoldError::SignalBelowNoise { .. })), "{r:?}");
    }

    #[test]
    fn first_order_splitting() {
        let pr = ModelParams::physical_default(4.0, 1e-4);
        let run = splitting_run(&pr, &[1.0], &HjConfig::default(), &GlobalizeConfig::default()).unwrap();
        assert!(run.unstable.energy_error < 1e-9);
        let s = measure_splitting(&run.unstable, &run.stable, 1.0, 1, 1e-4).unwrap();
        let expected = melnikov_amplitude(&pr, 1);
        assert!((s.amp_j / expected - 1.0).abs() < 0.03, "{} {}", s.amp_j, expected);
        let roots = find_homoclinics(&run.unstable, &run.stable, 1.0).unwrap();
        assert!(roots[0].slope * roots[1].slope < 0.0);
        for r in roots {
            assert!(homoclinic_phase_offset(r.theta, 4.0, 1.0) <= 2.0 / 4.0);
        }
    }

    #[test]
    fn splitting_components_are_consistent() {
        // ΔP = ∂_uΔΦ by construction and ΔJ ≈ −ΔP/νI₀ on the energy level.
        let nu_i0 = 4.0;
        let h = 0.05;
        let us = [1.0 - 2.0 * h, 1.0 - h, 1.0, 1.0 + h, 1.0 + 2.0 * h];
        let pr = ModelParams::physical_default(nu_i0, 1e-4);
        let run = splitting_run(&pr, &us, &HjConfig::default(), &GlobalizeConfig::default()).unwrap();
        let d: Vec<[Vec<f64>; 3]> = us.iter().map(|&u| differences(&run.unstable, &run.stable, u).unwrap()).collect();
        let n = d[0][0].len();
        let dphi_du: Vec<f64> = (0..n).map(|m| (d[0][2][m] - 8.0 * d[1][2][m] + 8.0 * d[3][2][m] - d[4][2][m]) / (12.0 * h)).collect();
        let shift = nu_i0 * 1.0;
        let (a_fd, ph_fd) = harmonic_in_shifted_angle(&dphi_du, 1, shift);
        let (a_p, ph_p) = harmonic_in_shifted_angle(&d[2][1], 1, shift);
        let (a_j, _) = harmonic_in_shifted_angle(&d[2][0], 1, shift);
        assert!((a_fd / a_p - 1.0).abs() < 0.05, "{a_fd} {a_p}");
        assert!(wrap_pi(ph_fd - ph_p).abs() < 0.05, "{ph_fd} {ph_p}");
        assert!((a_j * nu_i0 / a_p - 1.0).abs() < 0.05, "{a_j} {a_p}");
    }
}
