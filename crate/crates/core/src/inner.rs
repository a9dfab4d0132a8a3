//! The inner equation near the separatrix singularity.
//!
//! `T(v, θ)` solves
//! `∂_θT + (ν/2)(∂_θT)² + 2v²(∂_vT)² − 1/(8v²) − V(θ)/(8v²) = 0`
//! and is split as `T = T₀ + L⁺_in + T₂` with `T₀ = −1/(4v)`.  The unstable
//! solution is computed on horizontal lines `Im v = −y`, where the right
//! inverse of `∂_v + ∂_θ` is a mode-wise oscillatory convolution from
//! `Re v = −∞`.  The stable solution follows from the reversibility
//! `T⁻(v, θ) = −conj T⁺(−v̄, −θ)`, so on a line both sheets live on one grid.
//!
//! The difference `Δ = T⁺ − T⁻` has modes `Δ^[k](v) ≈ f_k e^{−ikv}`; the
//! constants `f_k` are read off at several depths and extrapolated in
//! `1/|v|`.

use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
use thiserror::Error;

use crate::fit::least_squares;
use crate::manifolds::Sheet;
use crate::math::{exp, fabs, hypot, log, sqrt};
use crate::model::{CorrugationSeries, ModelParams};
use crate::quad::{integrate_complex, QuadError};
use crate::volterra::{PanelGrid, Volterra};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InnerError {
    #[error("pole of the inner solution at v = 0")]
    Pole,
    #[error(transparent)]
    Quadrature(#[from] QuadError),
    #[error("inner Picard iteration is not contracting (ratio {ratio:.3} at depth {depth})")]
    NonContraction { ratio: f64, depth: f64 },
    #[error("inner Picard iteration did not converge in {iterations} steps (last change {change:e})")]
    NoConvergence { iterations: usize, change: f64 },
    #[error("invalid inner setup: {0}")]
    InvalidSetup(&'static str),
    #[error("extrapolation of f_{k} diverges (estimate {estimate:e}, error {error:e})")]
    Extrapolation { k: i64, estimate: f64, error: f64 },
}

/// `T₀(v) = −1/(4v)`.
pub fn t0(v: Complex64) -> Result<Complex64, InnerError> {
    if v.norm() == 0.0 {
        return Err(InnerError::Pole);
    }
    Ok(-0.25 / v)
}

/// Left-hand side of the inner equation given `T_θ`, `T_v` and `V(θ)` at `v`.
pub fn equation_residual(v: Complex64, t_theta: Complex64, t_v: Complex64, potential: f64, nu: f64) -> Complex64 {
    let v2 = v * v;
    t_theta + 0.5 * nu * t_theta * t_theta + 2.0 * v2 * t_v * t_v - (1.0 + potential) / (8.0 * v2)
}

/// `I_k(v) = ∫_{−∞}^{v} s⁻² e^{ik(s−v)} ds` along `Im s = Im v`, with the
/// estimated quadrature error.
///
/// The path is deformed onto a steepest-descent ray: up-left at `3π/4` for
/// `k > 0`, down-left at `5π/4` for `k < 0`, after a horizontal piece that
/// keeps the pole outside the swept wedge.
pub fn inner_kernel(v: Complex64, k: i64) -> Result<(Complex64, f64), InnerError> {
    if v.norm() == 0.0 || (v.im == 0.0 && v.re >= 0.0) {
        return Err(InnerError::Pole);
    }
    if k == 0 {
        return Ok((-1.0 / v, 0.0));
    }
    let kf = k as f64;
    let g = move |s: Complex64| (Complex64::new(0.0, kf) * (s - v)).exp() / (s * s);
    let scale = 1.0 / v.norm_sqr();
    let abs_tol = 1e-20 * scale;
    let rel_tol = 1e-13;
    let mut total = Complex64::new(0.0, 0.0);
    let mut err = 0.0;
    let x1 = v.re.min(0.0);
    if x1 < v.re {
        let (val, e) = integrate_complex(|x| g(Complex64::new(x, v.im)), x1, v.re, abs_tol, rel_tol, 20_000)?;
        total += val;
        err += e;
    }
    let v1 = Complex64::new(x1, v.im);
    let phi = if k > 0 { 0.75 * PI } else { 1.25 * PI };
    let dir = Complex64::from_polar(1.0, phi);
    // |e^{ikr·dir}| = e^{−|k|r/√2}; stop well below rounding.
    let r_max = 64.0 / fabs(kf);
    let cuts = [0.0, 0.05 * r_max, 0.2 * r_max, r_max];
    for w in cuts.windows(2) {
        let (val, e) = integrate_complex(|r| -g(v1 + dir * r) * dir, w[0], w[1], abs_tol, rel_tol, 20_000)?;
        total += val;
        err += e;
    }
    Ok((total, err))
}

/// Mode `k` of the inner Melnikov potential, `V^[k]/8 · I_k(v)`.
pub fn l_in_plus_mode(v: Complex64, k: i64, series: &CorrugationSeries) -> Result<Complex64, InnerError> {
    let c = series.coeff(k);
    if c.norm() == 0.0 {
        return Ok(Complex64::new(0.0, 0.0));
    }
    Ok(c / 8.0 * inner_kernel(v, k)?.0)
}

/// `L⁺_in(v, θ)`.
pub fn l_in_plus(v: Complex64, theta: f64, series: &CorrugationSeries) -> Result<Complex64, InnerError> {
    let n = series.order() as i64;
    let mut acc = Complex64::new(0.0, 0.0);
    for k in -n..=n {
        if k != 0 {
            acc += l_in_plus_mode(v, k, series)? * Complex64::from_polar(1.0, k as f64 * theta);
        }
    }
    Ok(acc)
}

/// `L⁻_in(v, θ) = −conj L⁺_in(−v̄, −θ)`.
pub fn l_in_minus(v: Complex64, theta: f64, series: &CorrugationSeries) -> Result<Complex64, InnerError> {
    Ok(-l_in_plus(-v.conj(), -theta, series)?.conj())
}

/// `∮_{|s|=1} s⁻² e^{iks} ds` by the trapezoidal rule; the exact value is
/// `−2πk`.
fn pole_loop(k: i64) -> Complex64 {
    const N: usize = 128;
    let kf = k as f64;
    let mut acc = Complex64::new(0.0, 0.0);
    for j in 0..N {
        let s = Complex64::from_polar(1.0, 2.0 * PI * j as f64 / N as f64);
        acc += (Complex64::new(0.0, kf) * s).exp() / s * Complex64::new(0.0, 1.0);
    }
    acc * (2.0 * PI / N as f64)
}

/// Mode `k` of `L⁺_in − L⁻_in` for `Im v < 0` and even `V`.
///
/// On the line through `v` the two potentials add up to the integral over
/// the whole line; for `k > 0` it collapses onto a loop around the pole and
/// for `k ≤ 0` it vanishes.  Taking the difference this way avoids
/// subtracting two `O(|v|⁻²)` numbers whose difference is `O(e^{−k|Im v|})`.
pub fn l_in_difference_mode(v: Complex64, k: i64, series: &CorrugationSeries) -> Result<Complex64, InnerError> {
    if v.im >= 0.0 {
        return Err(InnerError::InvalidSetup("the inner difference needs Im v < 0"));
    }
    if !series.is_even() {
        return Err(InnerError::InvalidSetup("the inner reversibility needs an even potential"));
    }
    if k <= 0 {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let c = series.coeff(k);
    Ok(c / 8.0 * (Complex64::new(0.0, -(k as f64)) * v).exp() * pole_loop(k))
}

/// `(L⁺_in − L⁻_in)(v, θ)`.
pub fn l_in_difference(v: Complex64, theta: f64, series: &CorrugationSeries) -> Result<Complex64, InnerError> {
    let mut acc = Complex64::new(0.0, 0.0);
    for k in 1..=series.order() as i64 {
        acc += l_in_difference_mode(v, k, series)? * Complex64::from_polar(1.0, k as f64 * theta);
    }
    Ok(acc)
}

/// The data of an inner problem: `ν` and the (already scaled) potential.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerProblem {
    pub nu: f64,
    pub series: CorrugationSeries,
}

impl InnerProblem {
    pub fn new(nu: f64, series: CorrugationSeries) -> Self {
        Self { nu, series }
    }

    pub fn from_params(params: &ModelParams) -> Self {
        Self { nu: params.nu(), series: params.series().clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerConfig {
    /// Fourier modes kept, `|k| ≤ modes`.
    pub modes: usize,
    /// Picard stopping tolerance, relative to the size of `T₂`.
    pub tol: f64,
    pub max_iter: usize,
    /// Left end of each line; the rest of the line is an asymptotic tail.
    pub x_left: f64,
    /// Right end of each line; the stable sheet is available on `|Re v| ≤ x_right`.
    pub x_right: f64,
    /// Depths `y` of the lines `Im v = −y` used for extrapolation.
    pub depths: Vec<f64>,
    /// Off-axis abscissa used for the `Im f₁` diagnostic.
    pub x_off: f64,
}

impl Default for InnerConfig {
    fn default() -> Self {
        Self {
            modes: 8,
            tol: 1e-13,
            max_iter: 60,
            x_left: -500.0,
            x_right: 4.0,
            depths: (0..=10).map(|i| 10.0 + i as f64).collect(),
            x_off: 1.0,
        }
    }
}

/// The unstable inner solution on one line `Im v = −depth`.
#[derive(Debug, Clone)]
pub struct InnerSolution {
    depth: f64,
    nu: f64,
    modes: usize,
    series: CorrugationSeries,
    grid: PanelGrid,
    /// `L⁺_in` modes, indexed `[k + K][node]`.
    l: Vec<Vec<Complex64>>,
    t2: Vec<Vec<Complex64>>,
    pub iterations: usize,
    /// Ratio of the last two Picard corrections.
    pub contraction: f64,
    /// Sup of the inner-equation residual relative to `sup |V|/(8y²)`.
    pub residual: f64,
    pub theta_v: f64,
    /// `⌊T₂⌋₃ = ‖T₂‖₃ + ‖∂_vT₂‖₄ + ‖∂_θT₂‖₄` on the line.
    pub t2_norm: f64,
    /// `⌊T₂⌋₃ / Θ_V²` (zero when `V ≡ 0`).
    pub k1: f64,
    pub history: Vec<f64>,
}

struct ThetaTable {
    n: usize,
    kmax: i64,
    /// `e^{ikθ_j}`, indexed `[k + K][j]`.
    e: Vec<Vec<Complex64>>,
}

impl ThetaTable {
    fn new(kmax: usize) -> Self {
        let n = 4 * (kmax + 1);
        let km = kmax as i64;
        let e = (-km..=km)
            .map(|k| (0..n).map(|j| Complex64::from_polar(1.0, 2.0 * PI * (k * j as i64).rem_euclid(n as i64) as f64 / n as f64)).collect())
            .collect();
        Self { n, kmax: km, e }
    }

    fn theta(&self, j: usize) -> f64 {
        2.0 * PI * j as f64 / self.n as f64
    }

    fn synth(&self, c: &[Complex64], out: &mut [Complex64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = c.iter().zip(&self.e).map(|(c, e)| c * e[j]).sum();
        }
    }

    fn analyse(&self, g: &[Complex64], out: &mut [Complex64]) {
        let inv = 1.0 / self.n as f64;
        for (o, e) in out.iter_mut().zip(&self.e) {
            *o = g.iter().zip(e).map(|(g, e)| g * e.conj()).sum::<Complex64>() * inv;
        }
    }

    fn ks(&self) -> impl Iterator<Item = i64> {
        -self.kmax..=self.kmax
    }
}

fn line_point(x: f64, depth: f64) -> Complex64 {
    Complex64::new(x, -depth)
}

/// Solves for `T₂⁺` on the line `Im v = −depth`.
pub fn solve_inner(problem: &InnerProblem, depth: f64, cfg: &InnerConfig) -> Result<InnerSolution, InnerError> {
    if !(depth > 0.0) {
        return Err(InnerError::InvalidSetup("depth must be positive"));
    }
    if !(cfg.x_left < -cfg.x_right && cfg.x_right >= 0.0) {
        return Err(InnerError::InvalidSetup("need x_left < -x_right ≤ 0"));
    }
    if cfg.modes == 0 || !(cfg.tol > 0.0) {
        return Err(InnerError::InvalidSetup("modes and tol must be positive"));
    }
    if !problem.series.is_even() {
        return Err(InnerError::InvalidSetup("the inner reversibility needs an even potential"));
    }
    let kmax = cfg.modes;
    let nm = 2 * kmax + 1;
    let cap = (24.0 / kmax as f64).min(4.0);
    let grid = PanelGrid::build(cfg.x_left, cfg.x_right, |x: f64| (0.25 * hypot(x, depth)).min(cap));
    let xs = grid.nodes();
    let nn = xs.len();
    let vs: Vec<Complex64> = xs.iter().map(|&x| line_point(x, depth)).collect();
    let mut volterra = Volterra::new(grid.clone());
    let table = ThetaTable::new(kmax);
    let zero = Complex64::new(0.0, 0.0);
    let vk: Vec<Complex64> = table.ks().map(|k| problem.series.coeff(k)).collect();

    // L⁺_in by convolution of its forcing; the left value comes from the ray
    // quadrature so that no tail approximation enters.
    let mut l = alloc::vec![alloc::vec![zero; nn]; nm];
    let mut dl = alloc::vec![alloc::vec![zero; nn]; nm];
    for (idx, k) in table.ks().enumerate() {
        let c = vk[idx];
        if c.norm() == 0.0 {
            continue;
        }
        let f: Vec<Complex64> = vs.iter().map(|v| c / (8.0 * v * v)).collect();
        let left = c / 8.0 * inner_kernel(vs[0], k)?.0;
        l[idx] = volterra.convolve_from(&f, k as f64, left);
        let ik = Complex64::new(0.0, k as f64);
        dl[idx] = f.iter().zip(&l[idx]).map(|(f, l)| f - ik * l).collect();
    }

    let nu = problem.nu;
    let forcing = |t2: &[Vec<Complex64>], dt2: &[Vec<Complex64>]| -> Vec<Vec<Complex64>> {
        let mut out = alloc::vec![alloc::vec![zero; nn]; nm];
        let mut ca = alloc::vec![zero; nm];
        let mut cb = alloc::vec![zero; nm];
        let mut ga = alloc::vec![zero; table.n];
        let mut gb = alloc::vec![zero; table.n];
        let mut fk = alloc::vec![zero; nm];
        for i in 0..nn {
            for (idx, k) in table.ks().enumerate() {
                ca[idx] = Complex64::new(0.0, k as f64) * (l[idx][i] + t2[idx][i]);
                cb[idx] = dl[idx][i] + dt2[idx][i];
            }
            table.synth(&ca, &mut ga);
            table.synth(&cb, &mut gb);
            let v2 = vs[i] * vs[i];
            for j in 0..table.n {
                ga[j] = -(0.5 * nu * ga[j] * ga[j] + 2.0 * v2 * gb[j] * gb[j]);
            }
            table.analyse(&ga, &mut fk);
            for idx in 0..nm {
                out[idx][i] = fk[idx];
            }
        }
        out
    };

    let mut t2 = alloc::vec![alloc::vec![zero; nn]; nm];
    let mut dt2 = alloc::vec![alloc::vec![zero; nn]; nm];
    let mut history = Vec::new();
    let mut contraction = 0.0;
    let mut iterations = 0;
    let mut converged = false;
    for it in 1..=cfg.max_iter {
        iterations = it;
        let f = forcing(&t2, &dt2);
        let mut new = Vec::with_capacity(nm);
        let mut dnew = Vec::with_capacity(nm);
        for (idx, k) in table.ks().enumerate() {
            let y = if f[idx].iter().all(|c| c.norm() == 0.0) { alloc::vec![zero; nn] } else { volterra.convolve(&f[idx], k as f64) };
            let ik = Complex64::new(0.0, k as f64);
            dnew.push(f[idx].iter().zip(&y).map(|(f, y)| f - ik * y).collect::<Vec<_>>());
            new.push(y);
        }
        let mut diff: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for idx in 0..nm {
            for i in 0..nn {
                // The k = 0 mode enters the equation only through derivatives.
                let d = if idx == kmax { dnew[idx][i] - dt2[idx][i] } else { new[idx][i] - t2[idx][i] };
                let s = if idx == kmax { dnew[idx][i] } else { new[idx][i] };
                let w = if idx == kmax { vs[i].norm() } else { 1.0 };
                diff = diff.max(d.norm() * w);
                scale = scale.max(s.norm() * w);
            }
        }
        t2 = new;
        dt2 = dnew;
        if let Some(&prev) = history.last() {
            if prev > 0.0 {
                contraction = diff / prev;
            }
        }
        history.push(diff);
        if diff <= cfg.tol * scale || diff <= 8.0 * f64::EPSILON * scale || diff == 0.0 {
            converged = true;
            break;
        }
        if it >= 3 && contraction >= 0.9 {
            return Err(InnerError::NonContraction { ratio: contraction, depth });
        }
    }
    if !converged {
        return Err(InnerError::NoConvergence { iterations, change: history.last().copied().unwrap_or(0.0) });
    }

    let mut sol = InnerSolution {
        depth,
        nu,
        modes: kmax,
        series: problem.series.clone(),
        grid,
        l,
        t2,
        iterations,
        contraction,
        residual: 0.0,
        theta_v: 0.0,
        t2_norm: 0.0,
        k1: 0.0,
        history,
    };
    sol.diagnostics(&table, &dl, &dt2);
    Ok(sol)
}

impl InnerSolution {
    fn diagnostics(&mut self, table: &ThetaTable, dl: &[Vec<Complex64>], dt2: &[Vec<Complex64>]) {
        let nm = 2 * self.modes + 1;
        let nn = self.grid.len();
        let zero = Complex64::new(0.0, 0.0);
        // Independent derivative for the residual: spectral differentiation
        // of the nodal values rather than the transport relation.
        let total: Vec<Vec<Complex64>> = (0..nm).map(|idx| self.l[idx].iter().zip(&self.t2[idx]).map(|(a, b)| a + b).collect()).collect();
        let dtot: Vec<Vec<Complex64>> = total.iter().map(|t| self.grid.differentiate(t)).collect();
        let vgrid: Vec<f64> = (0..table.n).map(|j| self.series.value(table.theta(j))).collect();
        let vmax = vgrid.iter().fold(0.0f64, |m, v| m.max(fabs(*v)));
        let xs = self.grid.nodes();
        let (mut res, mut nl, mut nlt, mut nlv, mut n3, mut n4v, mut n4t) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
        let mut c = alloc::vec![zero; nm];
        let mut g = [alloc::vec![zero; table.n], alloc::vec![zero; table.n], alloc::vec![zero; table.n]];
        for i in 0..nn {
            let v = line_point(xs[i], self.depth);
            let r = v.norm();
            let t0v = 0.25 / (v * v);
            for (idx, k) in table.ks().enumerate() {
                c[idx] = Complex64::new(0.0, k as f64) * total[idx][i];
            }
            table.synth(&c, &mut g[0]);
            for idx in 0..nm {
                c[idx] = dtot[idx][i];
            }
            table.synth(&c, &mut g[1]);
            for j in 0..table.n {
                let e = equation_residual(v, g[0][j], t0v + g[1][j], vgrid[j], self.nu);
                res = res.max(e.norm());
            }
            for idx in 0..nm {
                c[idx] = self.l[idx][i];
            }
            table.synth(&c, &mut g[2]);
            for (idx, k) in table.ks().enumerate() {
                c[idx] = Complex64::new(0.0, k as f64) * self.l[idx][i];
            }
            table.synth(&c, &mut g[0]);
            for idx in 0..nm {
                c[idx] = dl[idx][i];
            }
            table.synth(&c, &mut g[1]);
            for j in 0..table.n {
                nl = nl.max(g[2][j].norm() * r * r);
                nlt = nlt.max(g[0][j].norm() * r * r);
                nlv = nlv.max(g[1][j].norm() * r * r * r);
            }
            for idx in 0..nm {
                c[idx] = self.t2[idx][i];
            }
            table.synth(&c, &mut g[2]);
            for (idx, k) in table.ks().enumerate() {
                c[idx] = Complex64::new(0.0, k as f64) * self.t2[idx][i];
            }
            table.synth(&c, &mut g[0]);
            for idx in 0..nm {
                c[idx] = dt2[idx][i];
            }
            table.synth(&c, &mut g[1]);
            for j in 0..table.n {
                n3 = n3.max(g[2][j].norm() * r * r * r);
                n4t = n4t.max(g[0][j].norm() * r * r * r * r);
                n4v = n4v.max(g[1][j].norm() * r * r * r * r);
            }
        }
        let forcing_scale = vmax / (8.0 * self.depth * self.depth);
        self.residual = if forcing_scale > 0.0 { res / forcing_scale } else { res };
        self.theta_v = sqrt(nl * nl + nlt * nlt + nlv * nlv);
        self.t2_norm = n3 + n4v + n4t;
        self.k1 = if self.theta_v > 0.0 { self.t2_norm / (self.theta_v * self.theta_v) } else { 0.0 };
    }

    pub fn depth(&self) -> f64 {
        self.depth
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn grid(&self) -> &PanelGrid {
        &self.grid
    }

    /// `v` for abscissa `x` on this line.
    pub fn point(&self, x: f64) -> Complex64 {
        line_point(x, self.depth)
    }

    fn idx(&self, k: i64) -> Option<usize> {
        (k.unsigned_abs() as usize <= self.modes).then(|| (k + self.modes as i64) as usize)
    }

    pub fn l_mode(&self, k: i64, x: f64) -> Complex64 {
        self.idx(k).map_or(Complex64::new(0.0, 0.0), |i| self.grid.interpolate(&self.l[i], x))
    }

    pub fn t2_mode(&self, k: i64, x: f64) -> Complex64 {
        self.idx(k).map_or(Complex64::new(0.0, 0.0), |i| self.grid.interpolate(&self.t2[i], x))
    }

    /// Mode `k` of `T⁺` at `x − i·depth`.
    fn plus_mode(&self, k: i64, x: f64) -> Complex64 {
        let base = self.l_mode(k, x) + self.t2_mode(k, x);
        if k == 0 {
            base - 0.25 / self.point(x)
        } else {
            base
        }
    }

    /// Mode `k` of `T^±` at `x − i·depth`; the stable sheet needs `|x| ≤ x_right`.
    pub fn mode(&self, sheet: Sheet, k: i64, x: f64) -> Complex64 {
        match sheet {
            Sheet::Unstable => self.plus_mode(k, x),
            Sheet::Stable => -self.plus_mode(k, -x).conj(),
        }
    }

    /// `T^±(x − i·depth, θ)`.
    pub fn eval(&self, sheet: Sheet, x: f64, theta: f64) -> Complex64 {
        let km = self.modes as i64;
        (-km..=km).map(|k| self.mode(sheet, k, x) * Complex64::from_polar(1.0, k as f64 * theta)).sum()
    }

    /// Modes `−K..K` of `Δ = T⁺ − T⁻` at `x − i·depth`.
    pub fn difference_modes(&self, x: f64) -> Result<Vec<Complex64>, InnerError> {
        let km = self.modes as i64;
        let v = self.point(x);
        (-km..=km)
            .map(|k| {
                let nl = self.t2_mode(k, x) + self.t2_mode(k, -x).conj();
                Ok(l_in_difference_mode(v, k, &self.series)? + nl)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FkEstimate {
    pub k: i64,
    pub value: Complex64,
    pub err: f64,
    /// First-order value `−πkV^[k]/4`.
    pub melnikov: Complex64,
    /// False when the depth samples do not settle.  For `k ≥ 2` the mode
    /// `Δ^[k]` also carries `f_j e^{−ijv}`, `j < k`, mixed in by the change
    /// of variables that straightens `∂_v + ∂_θ`, which is exponentially
    /// larger than `f_k e^{−ikv}` unless `V` is tiny.
    pub converged: bool,
    /// `(depth, Δ^[k] e^{ikv})` on the axis `Re v = 0`.
    pub samples: Vec<(f64, Complex64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerDifference {
    pub depths: Vec<f64>,
    /// Modes `−K..K` of `Δ` on the axis at each depth.
    pub delta: Vec<Vec<Complex64>>,
    pub modes: usize,
    pub estimates: Vec<FkEstimate>,
    /// Extrapolated `Im f₁` from the off-axis column.
    pub im_f1: f64,
    pub theta_v: f64,
    pub k1: f64,
    /// Largest residual over the solutions used.
    pub residual: f64,
    /// `|f₁ + πV^[1]/4|·κ₀³/(Θ_V² e^{κ₀})` with `κ₀` the shallowest depth.
    pub bound_constant: f64,
}

impl InnerDifference {
    pub fn f(&self, k: i64) -> Option<&FkEstimate> {
        self.estimates.iter().find(|e| e.k == k)
    }

    /// `|Δ^[k]|` along the depths, for `|k| ≤ K`.
    pub fn decay(&self, k: i64) -> Vec<f64> {
        let idx = (k + self.modes as i64) as usize;
        self.delta.iter().map(|d| d[idx].norm()).collect()
    }
}

/// Fits `g(r) = a + b/r (+ c/r²)` and returns `a` with an error estimate
/// (difference between the two orders plus the standard error).
fn extrapolate(rs: &[f64], gs: &[f64]) -> (f64, f64) {
    let n = rs.len();
    if n == 1 {
        return (gs[0], fabs(gs[0]) * f64::EPSILON);
    }
    let fit = |order: usize| {
        let rows: Vec<Vec<f64>> = rs.iter().map(|r| (0..=order).map(|p| crate::math::powi(1.0 / r, p as i32)).collect()).collect();
        least_squares(&rows, gs)
    };
    let lo = fit(1);
    if n < 4 {
        return match lo {
            Some(f) => (f.coeffs[0], fabs(f.coeffs[1] / rs[n - 1]) + f.std_err(0)),
            None => (gs[n - 1], fabs(gs[n - 1] - gs[0])),
        };
    }
    match (fit(2), lo) {
        (Some(hi), Some(lo)) => (hi.coeffs[0], fabs(hi.coeffs[0] - lo.coeffs[0]) + hi.std_err(0)),
        _ => (gs[n - 1], fabs(gs[n - 1] - gs[0])),
    }
}

/// Depths usable for mode `k`: reading `f_k` multiplies rounding in `T₂` by
/// `e^{k y}`.
fn usable(k: i64, y: f64) -> bool {
    (k as f64) * y <= 26.0
}

/// Extracts `f_k`, `1 ≤ k ≤ kmax`, from unstable solutions at several
/// depths; the stable sheet is implied by reversibility.
pub fn extract_fk(solutions: &[InnerSolution], kmax: i64, x_off: f64) -> Result<InnerDifference, InnerError> {
    if solutions.is_empty() {
        return Err(InnerError::InvalidSetup("no inner solutions"));
    }
    let modes = solutions[0].modes;
    if solutions.iter().any(|s| s.modes != modes) {
        return Err(InnerError::InvalidSetup("solutions with different mode counts"));
    }
    let mut sols: Vec<&InnerSolution> = solutions.iter().collect();
    sols.sort_by(|a, b| a.depth.total_cmp(&b.depth));
    let depths: Vec<f64> = sols.iter().map(|s| s.depth).collect();
    let delta: Vec<Vec<Complex64>> = sols.iter().map(|s| s.difference_modes(0.0)).collect::<Result<_, _>>()?;
    let series = &sols[0].series;
    let mut estimates = Vec::new();
    for k in 1..=kmax.min(modes as i64) {
        let idx = (k + modes as i64) as usize;
        let samples: Vec<(f64, Complex64)> = depths.iter().zip(&delta).map(|(&y, d)| (y, d[idx] * exp(k as f64 * y))).collect();
        let mut pts: Vec<(f64, Complex64)> = samples.iter().copied().filter(|(y, _)| usable(k, *y)).collect();
        if pts.is_empty() {
            pts.push(samples[0]);
        }
        let rs: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let (re, ere) = extrapolate(&rs, &pts.iter().map(|p| p.1.re).collect::<Vec<_>>());
        let (im, eim) = extrapolate(&rs, &pts.iter().map(|p| p.1.im).collect::<Vec<_>>());
        let value = Complex64::new(re, im);
        let err = hypot(ere, eim);
        let converged = value.re.is_finite() && value.im.is_finite() && err <= 0.5 * value.norm();
        if k == 1 && !converged && value.norm() > 0.0 {
            return Err(InnerError::Extrapolation { k, estimate: value.norm(), error: err });
        }
        let melnikov = -series.coeff(k) * (PI * k as f64 / 4.0);
        estimates.push(FkEstimate { k, value, err, melnikov, converged, samples });
    }
    // Off the axis the change of variables leaves an O(1/|v|) imaginary part
    // that the extrapolation should remove.
    let mut rs = Vec::new();
    let mut ims = Vec::new();
    for s in &sols {
        if !usable(1, s.depth) || 1 > modes {
            continue;
        }
        let d = s.difference_modes(x_off)?;
        let v = s.point(x_off);
        let f1 = d[modes + 1] * (Complex64::new(0.0, 1.0) * v).exp();
        rs.push(v.norm());
        ims.push(f1.im);
    }
    let im_f1 = if rs.is_empty() { 0.0 } else { extrapolate(&rs, &ims).0 };
    let shallow = sols[0];
    let theta_v = shallow.theta_v;
    let bound_constant = match estimates.first() {
        Some(e) if theta_v > 0.0 => (e.value - e.melnikov).norm() * (shallow.depth * shallow.depth * shallow.depth) / (theta_v * theta_v * exp(shallow.depth)),
        _ => 0.0,
    };
    Ok(InnerDifference {
        depths,
        delta,
        modes,
        estimates,
        im_f1,
        theta_v,
        k1: shallow.k1,
        residual: sols.iter().map(|s| s.residual).fold(0.0, f64::max),
        bound_constant,
    })
}

/// Solves all configured depths and extracts `f_k` up to `kmax`.
pub fn inner_constants(problem: &InnerProblem, cfg: &InnerConfig, kmax: i64) -> Result<InnerDifference, InnerError> {
    let sols: Vec<InnerSolution> = cfg.depths.iter().map(|&y| solve_inner(problem, y, cfg)).collect::<Result<_, _>>()?;
    extract_fk(&sols, kmax, cfg.x_off)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanRow {
    pub epsilon: f64,
    pub f1: Complex64,
    pub err: f64,
    pub theta_v: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonScan {
    pub rows: Vec<ScanRow>,
    /// `a` in the fit `Re f₁ ≈ aε + bε²`.
    pub slope: f64,
    pub slope_err: f64,
    pub quadratic: f64,
    /// RMS of the fit relative to `max |f₁|`.
    pub quadratic_residual: f64,
    /// `(f₁(ε) − ε·slope)/ε²` per row.
    pub ratios: Vec<f64>,
}

/// `f₁` for the potentials `ε·base`.
pub fn f1_epsilon_scan(nu: f64, base: &CorrugationSeries, epsilons: &[f64], cfg: &InnerConfig) -> Result<EpsilonScan, InnerError> {
    if epsilons.is_empty() || epsilons.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
        return Err(InnerError::InvalidSetup("ε values must lie in (0, 1]"));
    }
    let mut rows = Vec::new();
    for &eps in epsilons {
        let d = inner_constants(&InnerProblem::new(nu, base.scaled(eps)), cfg, 1)?;
        let e = &d.estimates[0];
        rows.push(ScanRow { epsilon: eps, f1: e.value, err: e.err, theta_v: d.theta_v, residual: d.residual });
    }
    let fitrows: Vec<Vec<f64>> = rows.iter().map(|r| alloc::vec![r.epsilon, r.epsilon * r.epsilon]).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.f1.re).collect();
    let (slope, slope_err, quadratic, quadratic_residual) = if rows.len() >= 2 {
        let f = least_squares(&fitrows, &ys).ok_or(InnerError::InvalidSetup("degenerate ε set"))?;
        let scale = ys.iter().fold(0.0f64, |m, y| m.max(fabs(*y))).max(f64::MIN_POSITIVE);
        (f.coeffs[0], f.std_err(0), f.coeffs[1], f.rms() / scale)
    } else {
        (ys[0] / rows[0].epsilon, rows[0].err / rows[0].epsilon, 0.0, 0.0)
    };
    let ratios = rows.iter().map(|r| (r.f1.re - r.epsilon * slope) / (r.epsilon * r.epsilon)).collect();
    Ok(EpsilonScan { rows, slope, slope_err, quadratic, quadratic_residual, ratios })
}

/// Least-squares slope of `log|L⁺_in|` against `log|v|` on a line.
pub fn decay_exponent(series: &CorrugationSeries, depth: f64, xs: &[f64], theta: f64) -> Result<f64, InnerError> {
    let mut lx = Vec::new();
    let mut ly = Vec::new();
    for &x in xs {
        let v = line_point(x, depth);
        lx.push(log(v.norm()));
        ly.push(log(l_in_plus(v, theta, series)?.norm()));
    }
    let f = crate::fit::line(&lx, &ly).ok_or(InnerError::InvalidSetup("degenerate abscissae"))?;
    Ok(f.coeffs[1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelParams;
    use proptest::prelude::*;

    fn unit_first(eps: f64) -> CorrugationSeries {
        CorrugationSeries::even(alloc::vec![eps]).unwrap()
    }

    fn nu() -> f64 {
        ModelParams::physical_default(5.0, 1.0).nu()
    }

    fn quick() -> InnerConfig {
        InnerConfig { depths: alloc::vec![10.0, 12.0, 14.0, 16.0, 18.0, 20.0], ..InnerConfig::default() }
    }

    #[test]
    fn t0_values_and_pole() {
        let i = Complex64::new(0.0, 1.0);
        assert!((t0(-i).unwrap() - i * (-0.25)).norm() < 1e-16);
        assert!((t0(Complex64::new(2.0, 0.0)).unwrap() - Complex64::new(-0.125, 0.0)).norm() < 1e-16);
        assert_eq!(t0(Complex64::new(0.0, 0.0)), Err(InnerError::Pole));
        // T₀ solves the equation exactly when V ≡ 0.
        for v in [Complex64::new(0.3, -2.0), Complex64::new(-5.0, -0.1)] {
            let e = equation_residual(v, Complex64::new(0.0, 0.0), 0.25 / (v * v), 0.0, nu());
            assert!(e.norm() < 1e-16 / v.norm_sqr(), "{e}");
        }
    }

    #[test]
    fn zero_series_gives_zero_potential_and_t2() {
        let z = CorrugationSeries::zero(2);
        assert_eq!(l_in_plus(Complex64::new(-1.0, -3.0), 0.4, &z).unwrap(), Complex64::new(0.0, 0.0));
        let s = solve_inner(&InnerProblem::new(nu(), z), 10.0, &quick()).unwrap();
        assert_eq!(s.t2_norm, 0.0);
        assert_eq!(s.iterations, 1);
    }

    #[test]
    fn kernel_ray_quadrature_matches_transport_equation() {
        // I' + ikI = v⁻² by central differences along the line.
        for k in [-3i64, -1, 1, 2] {
            for v in [Complex64::new(-7.0, -10.0), Complex64::new(3.0, -4.0), Complex64::new(25.0, -10.0)] {
                let h = 1e-2;
                let at = |d: f64| inner_kernel(v + d, k).unwrap().0;
                let dv = (at(-2.0 * h) - at(2.0 * h) + 8.0 * (at(h) - at(-h))) / (12.0 * h);
                let r = dv + Complex64::new(0.0, k as f64) * at(0.0) - 1.0 / (v * v);
                assert!(r.norm() < 1e-8 * (1.0 / v.norm_sqr()), "k={k} v={v} r={r}");
            }
        }
    }

    #[test]
    fn potential_decays_like_inverse_square() {
        let s = CorrugationSeries::physical();
        let xs: Vec<f64> = (0..12).map(|i| -20.0 * pow10(i as f64 / 5.5)).collect();
        let slope = decay_exponent(&s, 10.0, &xs, 0.3).unwrap();
        assert!((slope + 2.0).abs() < 0.05, "{slope}");
    }

    fn pow10(x: f64) -> f64 {
        exp(x * core::f64::consts::LN_10)
    }

    #[test]
    fn potential_difference_is_the_residue() {
        let s = CorrugationSeries::physical();
        for k in [1i64, 2] {
            for x in [0.0, -3.0, 2.5] {
                let v = Complex64::new(x, -30.0);
                let got = l_in_difference_mode(v, k, &s).unwrap();
                let want = -s.coeff(k) * (PI * k as f64 / 4.0) * (Complex64::new(0.0, -(k as f64)) * v).exp();
                assert!((got - want).norm() <= 1e-6 * want.norm(), "{got} {want}");
            }
        }
        // At moderate depth the direct subtraction of the two quadratures is
        // still well conditioned and must agree.
        let v = Complex64::new(0.5, -4.0);
        for theta in [0.0, 1.1] {
            let direct = l_in_plus(v, theta, &s).unwrap() - l_in_minus(v, theta, &s).unwrap();
            let loop_ = l_in_difference(v, theta, &s).unwrap();
            assert!((direct - loop_).norm() < 1e-9 * loop_.norm(), "{direct} {loop_}");
        }
    }

    #[test]
    fn solver_potential_matches_pointwise_quadrature() {
        let s = solve_inner(&InnerProblem::new(nu(), CorrugationSeries::physical()), 10.0, &quick()).unwrap();
        for x in [-300.0, -41.3, -2.0, 0.0, 3.7] {
            for k in [1i64, -2] {
                let direct = l_in_plus_mode(s.point(x), k, &CorrugationSeries::physical()).unwrap();
                assert!((s.l_mode(k, x) - direct).norm() < 1e-10 * direct.norm(), "x={x} k={k}");
            }
        }
        assert!(s.residual < 1e-8, "{}", s.residual);
        assert!(s.contraction < 0.5);
    }

    #[test]
    fn sheets_are_related_by_the_reversor() {
        let s = solve_inner(&InnerProblem::new(nu(), CorrugationSeries::physical()), 12.0, &quick()).unwrap();
        for (x, th) in [(0.0, 0.3), (1.5, 2.0), (-3.0, 4.4)] {
            let minus = s.eval(Sheet::Stable, x, th);
            let plus = s.eval(Sheet::Unstable, -x, -th);
            assert_eq!(minus, -plus.conj());
            // Applying the conjugation twice is the identity.
            assert_eq!(-(-s.eval(Sheet::Unstable, x, th).conj()).conj(), s.eval(Sheet::Unstable, x, th));
        }
    }

    #[test]
    fn small_epsilon_constant() {
        let eps = 1e-3;
        let d = inner_constants(&InnerProblem::new(nu(), unit_first(eps)), &quick(), 1).unwrap();
        let f1 = d.f(1).unwrap().value;
        let want = -PI / 8.0;
        assert!((f1.re / eps - want).abs() <= 0.05 * want.abs(), "{}", f1.re / eps);
        assert!(f1.im.abs() <= 1e-3 * f1.norm());
        assert!(d.im_f1.abs() <= 1e-3 * f1.norm(), "{}", d.im_f1);
    }

    #[test]
    fn nonpositive_modes_fade_with_depth() {
        let d = inner_constants(&InnerProblem::new(nu(), CorrugationSeries::physical()), &quick(), 1).unwrap();
        for k in [0i64, -1, -2] {
            let dec = d.decay(k);
            assert!(dec.last().unwrap() < &(1e-3 * dec[0].max(1e-300)) || dec.iter().all(|x| *x < 1e-15), "k={k} {dec:?}");
        }
    }

    #[test]
    fn k1_is_epsilon_independent() {
        let cfg = quick();
        let a = solve_inner(&InnerProblem::new(nu(), unit_first(1e-3)), 10.0, &cfg).unwrap();
        let b = solve_inner(&InnerProblem::new(nu(), unit_first(1e-2)), 10.0, &cfg).unwrap();
        assert!(a.k1 > 0.0 && (a.k1 / b.k1 - 1.0).abs() < 0.1, "{} {}", a.k1, b.k1);
    }

    #[test]
    fn mode_doubling_leaves_f1_unchanged() {
        let p = InnerProblem::new(nu(), CorrugationSeries::physical());
        let a = inner_constants(&p, &quick(), 1).unwrap();
        let b = inner_constants(&p, &InnerConfig { modes: 16, ..quick() }, 1).unwrap();
        let (fa, fb) = (a.f(1).unwrap().value, b.f(1).unwrap().value);
        assert!((fa - fb).norm() < 1e-8 * fa.norm(), "{fa} {fb}");
    }

    #[test]
    fn epsilon_scan_is_linear_at_the_origin() {
        let scan = f1_epsilon_scan(nu(), &unit_first(1.0), &[1e-3, 2e-3, 4e-3], &quick()).unwrap();
        assert!(scan.slope != 0.0 && scan.slope.is_finite());
        assert!((scan.slope + PI / 8.0).abs() < 0.01);
        // |f₁ − ε·slope|/ε² stays bounded and small; with a single harmonic
        // the quadratic products cannot feed mode 1, so the remainder is
        // in fact cubic and the ratio grows at most linearly.
        let r = &scan.ratios;
        assert!(r.iter().all(|x| x.abs() < 1e-2), "{r:?}");
        assert!(r[2].abs() <= 4.0 * r[0].abs() + 1e-6, "{r:?}");
        assert!(scan.quadratic_residual < 1e-6);
    }

    #[test]
    fn physical_constant_is_nonzero() {
        let d = inner_constants(&InnerProblem::new(nu(), CorrugationSeries::physical()), &quick(), 2).unwrap();
        let e = d.f(1).unwrap();
        assert!(e.converged && e.value.norm() > 10.0 * e.err, "{:?}", e);
        assert!(d.residual < 1e-8);
    }

    #[test]
    fn large_potential_close_to_the_pole_is_rejected() {
        let p = InnerProblem::new(nu(), unit_first(400.0));
        let cfg = InnerConfig { x_left: -200.0, ..quick() };
        match solve_inner(&p, 1.0, &cfg) {
            Err(InnerError::NonContraction { .. }) | Err(InnerError::NoConvergence { .. }) => {}
            other => panic!("{:?}", other.map(|s| s.contraction)),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn minus_potential_is_reflected_plus(x in -20.0f64..20.0, y in 2.0f64..30.0, th in 0.0f64..6.28) {
            let s = CorrugationSeries::physical();
            let v = Complex64::new(x, -y);
            let m = l_in_minus(v, th, &s).unwrap();
            let p = l_in_plus(-v.conj(), -th, &s).unwrap();
            prop_assert_eq!(m, -p.conj());
        }
    }
}
