//! Return map near the parabolic orbit at infinity and a numerical check of
//! the Moser conditions.
//!
//! Everything runs in the reduced system at the level `H = νI₀²/2`, with
//! `θ` as time and the rescaled variables `Q = q/νI₀`, `P = p/νI₀`.  In the
//! linear chart `u = (Q-P)/2`, `v = (Q+P)/2` the truncated flow is
//! `u̇ = u(u+v)`, `v̇ = -v(u+v)`.  Sections are `Σ⁰ = {u = a}` (outbound) and
//! `Σ¹ = {v = a}` (inbound).  On `Σ⁰` a point is `(v, t)`; near a transversal
//! homoclinic point it is also described by `ξ = v - wᵘ(t)` (distance to the
//! unstable manifold) and `τ = σ(t - γˢ(v))` (phase offset from the stable
//! one).

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use thiserror::Error;

use crate::fit::least_squares;
use crate::integrate::{section_crossings_until, Direction, IntegrateError, IntegratorConfig, Termination};
use crate::math::{brent, ceil, cos, fabs, log, sin, sqrt, wrap_angle, wrap_pi, TAU};
use crate::model::{from_mcgehee, hamiltonian_mcgehee, CartesianState, CorrugationSeries, McGeheeState, ModelError, ModelParams};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HorseshoeError {
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("no root of H = level in J: the state is too far from the level set (H̃ = {h_tilde}, level = {level})")]
    Bracket { h_tilde: f64, level: f64 },
    #[error("invalid chart: {0}")]
    Chart(&'static str),
    #[error("start outside the section window: {0}")]
    InvalidStart(&'static str),
    #[error("orbit left the chart at (u, v, t) = ({u}, {v}, {t})")]
    LeftDomain { u: f64, v: f64, t: f64 },
    #[error("orbit escaped before reaching the next section (t = {t})")]
    Escape { t: f64 },
    #[error("manifold trace failed: {0}")]
    Trace(&'static str),
    #[error("no transversal homoclinic point on Σ⁰")]
    NoHomoclinic,
    #[error("adapted coordinates failed to converge at (ξ, τ) = ({xi}, {tau})")]
    Coordinates { xi: f64, tau: f64 },
    #[error("strips {first} and {second} overlap")]
    Overlap { first: u32, second: u32 },
    #[error("strip construction failed: {0}")]
    Strips(&'static str),
    #[error("no operating point: best splitting/noise ratio was {best_ratio}")]
    OperatingPoint { best_ratio: f64 },
    #[error("symbol {symbol} outside the strip window 1..={window}")]
    Symbol { symbol: u32, window: u32 },
    #[error("nested bisection exhausted after prefix {prefix:?}")]
    DepthExhausted { prefix: Vec<u32> },
}

// ---------------------------------------------------------------------------
// Poincaré–Cartan reduction

/// Which vector field drives the reduced maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    /// The reduced flow of the full Hamiltonian.
    Full,
    /// `Q̇ = -QP`, `Ṗ = -Q²`: the quadratic part only.
    Truncated,
}

/// The reduced 1½ degree of freedom system at `H = νI₀²/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedSystem {
    nu: f64,
    i0: f64,
    nu_i0: f64,
    series: CorrugationSeries,
    kind: FieldKind,
}

impl ReducedSystem {
    pub fn new(params: &ModelParams) -> Self {
        Self { nu: params.nu(), i0: params.i0(), nu_i0: params.nu_i0(), series: params.series().clone(), kind: FieldKind::Full }
    }

    pub fn truncated(params: &ModelParams) -> Self {
        Self { kind: FieldKind::Truncated, ..Self::new(params) }
    }

    pub fn kind(&self) -> FieldKind {
        self.kind
    }

    pub fn nu_i0(&self) -> f64 {
        self.nu_i0
    }

    pub fn series(&self) -> &CorrugationSeries {
        &self.series
    }

    /// `H̃ = p²/2 - q²/2 + q⁴/2 + q⁴V(θ)/2`.
    pub fn h_tilde(&self, q: f64, p: f64, theta: f64) -> f64 {
        let q2 = q * q;
        0.5 * p * p - 0.5 * q2 + 0.5 * q2 * q2 * (1.0 + self.series.value(theta))
    }

    /// `dθ/dτ = ν(I₀+J)` on the level set, `None` where the level set has no
    /// point with positive rate.
    pub fn theta_rate(&self, q: f64, p: f64, theta: f64) -> Option<f64> {
        let r = self.nu_i0 * self.nu_i0 - 2.0 * self.nu * self.h_tilde(q, p, theta);
        (r > 0.0).then(|| sqrt(r))
    }

    /// Closed form of `K = -J` on the level set.
    pub fn k_closed(&self, q: f64, p: f64, theta: f64) -> Option<f64> {
        self.theta_rate(q, p, theta).map(|w| self.i0 - w / self.nu)
    }

    /// Reduced field in the rescaled variables `[Q, P]`.
    pub fn field(&self, theta: f64, y: &[f64; 2]) -> [f64; 2] {
        let (qq, pp) = (y[0], y[1]);
        if self.kind == FieldKind::Truncated {
            return [-qq * pp, -qq * qq];
        }
        let s = self.nu_i0;
        let (q, p) = (s * qq, s * pp);
        let w = self.theta_rate(q, p, theta).unwrap_or(f64::NAN);
        let q2 = q * q;
        let dh_dq = -q + 2.0 * q * q2 * (1.0 + self.series.value(theta));
        [-q * p / (w * s), q * dh_dq / (w * s)]
    }

    /// Reduced field augmented with McGehee time `s`, `ds/dθ = 1/ν(I₀+J)`.
    pub fn field_timed(&self, theta: f64, y: &[f64; 3]) -> [f64; 3] {
        let [dq, dp] = self.field(theta, &[y[0], y[1]]);
        let s = self.nu_i0;
        let rate = match self.kind {
            FieldKind::Full => self.theta_rate(s * y[0], s * y[1], theta).unwrap_or(f64::NAN),
            FieldKind::Truncated => s,
        };
        [dq, dp, 1.0 / rate]
    }
}

/// A point of the reduced system with its field, as produced by the
/// root-solve reduction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReducedState {
    pub q: f64,
    pub p: f64,
    pub theta: f64,
    /// `K` with `H(q, p, θ, -K) = νI₀²/2`.
    pub k: f64,
    /// `∂H/∂J = ν(I₀ - K) = dθ/dτ`.
    pub theta_rate: f64,
    pub dq_dtheta: f64,
    pub dp_dtheta: f64,
}

/// Solves `H(q, p, θ, -K) = νI₀²/2` for `K` by bracketed root finding and
/// evaluates the reduced field `dq/dθ = -q ∂H/∂p / ∂H/∂J`,
/// `dp/dθ = q ∂H/∂q / ∂H/∂J`.  The `J` of `state` is ignored.
pub fn reduce_poincare_cartan(state: &McGeheeState, params: &ModelParams) -> Result<ReducedState, HorseshoeError> {
    let (q, p, theta) = (state.q, state.p, state.theta);
    let level = params.level();
    let i0 = params.i0();
    let mut f = |j: f64| hamiltonian_mcgehee(&McGeheeState { q, p, theta, j }, params) - level;
    let lo = -i0;
    let f_lo = f(lo);
    if !(f_lo < 0.0) {
        let h_tilde = f_lo + level;
        return Err(HorseshoeError::Bracket { h_tilde, level });
    }
    let mut hi = i0.max(1e-300);
    let mut f_hi = f(hi);
    let mut grow = 0;
    while f_hi <= 0.0 {
        hi *= 2.0;
        f_hi = f(hi);
        grow += 1;
        if grow > 200 || !f_hi.is_finite() {
            return Err(HorseshoeError::Bracket { h_tilde: f_lo + level, level });
        }
    }
    let (j, _) = brent(&mut f, lo, hi, f_lo, f_hi, 1e-13 * i0.max(1.0), 300);
    let nu = params.nu();
    let rate = nu * (i0 + j);
    let q2 = q * q;
    let series = params.series();
    let dh_dq = -q + 2.0 * q * q2 * (1.0 + series.value(theta));
    Ok(ReducedState { q, p, theta, k: -j, theta_rate: rate, dq_dtheta: -q * p / rate, dp_dtheta: q * dh_dq / rate })
}

// ---------------------------------------------------------------------------
// Chart and the two section maps

/// Linear straightening chart around `Q = P = 0` with sections at distance
/// `a` and a window of width `δ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalChart {
    pub a: f64,
    pub delta: f64,
    /// Radius of the declared neighbourhood `|u|, |v| ≤ ρ`.
    pub rho: f64,
}

impl LocalChart {
    pub fn new(a: f64, delta: f64, rho: f64) -> Result<Self, HorseshoeError> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(HorseshoeError::Chart("section radius a must be positive"));
        }
        if !(delta > 0.0 && delta < 0.5 * a) {
            return Err(HorseshoeError::Chart("need 0 < δ < a/2"));
        }
        if !(rho > a) {
            return Err(HorseshoeError::Chart("need ρ > a"));
        }
        Ok(Self { a, delta, rho })
    }

    pub fn with_delta(&self, delta: f64) -> Result<Self, HorseshoeError> {
        Self::new(self.a, delta, self.rho)
    }

    pub fn uv(y: &[f64; 2]) -> (f64, f64) {
        (0.5 * (y[0] - y[1]), 0.5 * (y[0] + y[1]))
    }

    pub fn qp(u: f64, v: f64) -> [f64; 2] {
        [u + v, v - u]
    }

    /// Determinant of `∂(u, v)/∂(Q, P)`.
    pub fn jacobian_det() -> f64 {
        0.5
    }
}

/// A section point reached by one of the maps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SectionPoint {
    pub u: f64,
    pub v: f64,
    /// Unreduced `θ`.
    pub t: f64,
}

/// Arrival of a section map together with the elapsed `θ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transit {
    pub point: SectionPoint,
    pub elapsed: f64,
    /// Smallest `Q` along the transit.
    pub q_min: f64,
}

/// Integration settings for the reduced maps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapConfig {
    pub integrator: IntegratorConfig,
    /// Cap on the elapsed `θ` of the global excursion.
    pub global_time: f64,
    /// Cap on the elapsed `θ` of a local passage inside the return map.
    pub local_time: f64,
}

impl Default for MapConfig {
    fn default() -> Self {
        let integrator = IntegratorConfig::new(1e-12, 1e-15).expect("valid tolerances").with_max_step(0.5);
        Self { integrator, global_time: 400.0, local_time: 2e5 }
    }
}

/// Passage from `Σ¹` to `Σ⁰` without the window check on `u₀`.
fn passage(sys: &ReducedSystem, chart: &LocalChart, u0: f64, t0: f64, budget: f64, cfg: &MapConfig) -> Result<Transit, HorseshoeError> {
    let a = chart.a;
    let rho = chart.rho;
    let y0 = LocalChart::qp(u0, a);
    let t_max = t0 + budget;
    let mut q_min = y0[0];
    let mut exit = None;
    let out = section_crossings_until(
        |t, y| sys.field(t, y),
        y0,
        t0,
        t_max,
        |_, y| LocalChart::uv(y).0 - a,
        Direction::Increasing,
        1,
        &cfg.integrator,
        |t, y| {
            q_min = q_min.min(y[0]);
            let (u, v) = LocalChart::uv(y);
            let left = u.abs() > rho || v.abs() > rho || u < -a;
            if left {
                exit = Some(SectionPoint { u, v, t });
            }
            left
        },
    );
    match out.termination {
        Termination::Complete => {
            let e = out.events[0];
            let (u, v) = LocalChart::uv(&e.state);
            Ok(Transit { point: SectionPoint { u, v, t: e.t }, elapsed: e.t - t0, q_min: q_min.min(e.state[0]) })
        }
        Termination::Failed(err) => Err(err.into()),
        Termination::Stopped => {
            let p = exit.unwrap_or(SectionPoint { u: f64::NAN, v: f64::NAN, t: f64::NAN });
            Err(HorseshoeError::LeftDomain { u: p.u, v: p.v, t: p.t })
        }
        Termination::TimeLimit => Err(HorseshoeError::LeftDomain { u: f64::NAN, v: f64::NAN, t: t_max }),
    }
}

/// The local map `Ψ_loc: Σ¹ → Σ⁰` from `(u₀, a, t₀)` with `0 < u₀ < δ`.
pub fn local_map(sys: &ReducedSystem, chart: &LocalChart, u0: f64, t0: f64, cfg: &MapConfig) -> Result<Transit, HorseshoeError> {
    if !(u0 > 0.0 && u0 < chart.delta) {
        return Err(HorseshoeError::InvalidStart("local map needs 0 < u < δ"));
    }
    passage(sys, chart, u0, t0, transit_budget(u0, chart.a), cfg)
}

/// Generous bound on the passage time from distance `u` to `Wˢ`.
fn transit_budget(u: f64, a: f64) -> f64 {
    4.0 * PI / sqrt(u.abs().max(1e-16) * a) + 400.0
}

/// The global map `Ψ_glob: Σ⁰ → Σ¹` from `(a, v₀, t₀)` along the excursion.
pub fn global_map(sys: &ReducedSystem, chart: &LocalChart, v0: f64, t0: f64, cfg: &MapConfig) -> Result<Transit, HorseshoeError> {
    let a = chart.a;
    let y0 = LocalChart::qp(a, v0);
    let bound = 4.0 / sys.nu_i0 + 4.0 * a;
    let mut escaped = false;
    let out = section_crossings_until(
        |t, y| sys.field(t, y),
        y0,
        t0,
        t0 + cfg.global_time,
        |_, y| LocalChart::uv(y).1 - a,
        Direction::Decreasing,
        1,
        &cfg.integrator,
        |_, y| {
            escaped = y[0] <= 0.0 || y[0] > bound || y[1].abs() > bound;
            escaped
        },
    );
    match out.termination {
        Termination::Complete => {
            let e = out.events[0];
            let (u, v) = LocalChart::uv(&e.state);
            Ok(Transit { point: SectionPoint { u, v, t: e.t }, elapsed: e.t - t0, q_min: y0[0].min(e.state[0]) })
        }
        Termination::Failed(err) => Err(err.into()),
        _ => Err(HorseshoeError::Escape { t: t0 + cfg.global_time }),
    }
}

// ---------------------------------------------------------------------------
// Manifold traces on Σ⁰

fn fourier_eval(c: &[f64], s: f64) -> f64 {
    let mut acc = c[0];
    for k in 1..=(c.len() - 1) / 2 {
        let ks = k as f64 * s;
        acc += c[2 * k - 1] * cos(ks) + c[2 * k] * sin(ks);
    }
    acc
}

fn fourier_deriv(c: &[f64], s: f64) -> f64 {
    let mut acc = 0.0;
    for k in 1..=(c.len() - 1) / 2 {
        let kf = k as f64;
        let ks = kf * s;
        acc += kf * (c[2 * k] * cos(ks) - c[2 * k - 1] * sin(ks));
    }
    acc
}

fn fourier_fit(s: &[f64], y: &[f64], harmonics: usize) -> Result<(Vec<f64>, f64), HorseshoeError> {
    let rows: Vec<Vec<f64>> = s
        .iter()
        .map(|&x| {
            let mut row = vec![1.0];
            for k in 1..=harmonics {
                row.push(cos(k as f64 * x));
                row.push(sin(k as f64 * x));
            }
            row
        })
        .collect();
    let fit = least_squares(&rows, y).ok_or(HorseshoeError::Trace("singular Fourier fit"))?;
    let rms = fit.rms();
    Ok((fit.coeffs, rms))
}

/// A closed curve on `Σ⁰` parametrised by the launch phase `s` of its orbit
/// on the local manifold: `t(s) = s + Δ(s)` (unreduced) and `v(s)`, both
/// fitted by Fourier series.  The stable trace folds over `t` away from
/// the homoclinic points, so it is not a graph over `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SectionTrace {
    pub shift: Vec<f64>,
    pub v: Vec<f64>,
    /// `(s, t, v)` samples the fits were built from.
    pub samples: Vec<(f64, f64, f64)>,
    /// Larger of the two fit residuals.
    pub fit_rms: f64,
}

impl SectionTrace {
    fn fit(samples: Vec<(f64, f64, f64)>, harmonics: usize) -> Result<Self, HorseshoeError> {
        let s: Vec<f64> = samples.iter().map(|x| x.0).collect();
        let raw: Vec<f64> = samples.iter().map(|x| x.1 - x.0).collect();
        let turns = libm::round(raw.iter().sum::<f64>() / raw.len() as f64 / TAU) * TAU;
        let shift: Vec<f64> = raw.iter().map(|d| d - turns).collect();
        let v: Vec<f64> = samples.iter().map(|x| x.2).collect();
        let (shift, r1) = fourier_fit(&s, &shift, harmonics)?;
        let (v, r2) = fourier_fit(&s, &v, harmonics)?;
        Ok(Self { shift, v, samples, fit_rms: r1.max(r2) })
    }

    /// `(t(s), v(s))`; `t` is continuous in `s` but shifted by whole turns.
    pub fn point(&self, s: f64) -> (f64, f64) {
        (s + fourier_eval(&self.shift, s), fourier_eval(&self.v, s))
    }

    /// `(t'(s), v'(s))`.
    pub fn tangent(&self, s: f64) -> (f64, f64) {
        (1.0 + fourier_deriv(&self.shift, s), fourier_deriv(&self.v, s))
    }

    /// Parameter `s` with `t(s) ≡ t (mod 2π)`, by Newton from the mean
    /// shift.  Only meaningful where `t(s)` is monotone.
    pub fn param_at(&self, t: f64) -> Option<f64> {
        let t = wrap_angle(t);
        let mut s = wrap_angle(t - self.shift[0]);
        let mut r = f64::INFINITY;
        for _ in 0..60 {
            let (ts, _) = self.point(s);
            r = wrap_pi(ts - t);
            let (dt, _) = self.tangent(s);
            if !(dt > 0.0) {
                return None;
            }
            let step = r / dt;
            s -= step;
            if fabs(step) < 1e-14 {
                return Some(s);
            }
        }
        (fabs(r) < 1e-11).then_some(s)
    }

    /// The curve as a graph `v = w(t)` and its slope `w'(t)`.
    pub fn graph(&self, t: f64) -> Option<(f64, f64)> {
        let s = self.param_at(t)?;
        let (dt, dv) = self.tangent(s);
        Some((self.point(s).1, dv / dt))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceConfig {
    pub samples: usize,
    pub harmonics: usize,
    /// `Q` at which orbits are started on the local manifold.
    pub q_start: f64,
}

impl Default for TraceConfig {
    fn default() -> Self {
        Self { samples: 128, harmonics: 24, q_start: 1e-3 }
    }
}

/// Point on the frozen-`θ` zero level `H̃ = 0` near the origin: the local
/// unstable (`sign = -1`) or stable (`sign = +1`) manifold to leading order.
fn manifold_seed(sys: &ReducedSystem, q: f64, theta: f64, sign: f64) -> [f64; 2] {
    let qq = sys.nu_i0 * q;
    let r = match sys.kind {
        FieldKind::Full => 1.0 - qq * qq * (1.0 + sys.series.value(theta)),
        FieldKind::Truncated => 1.0,
    };
    [q, sign * q * sqrt(r)]
}

fn trace(sys: &ReducedSystem, chart: &LocalChart, cfg: &MapConfig, tc: &TraceConfig, stable: bool) -> Result<SectionTrace, HorseshoeError> {
    let a = chart.a;
    let span = 20.0 / tc.q_start + cfg.global_time;
    let (sign, dir, what) = if stable {
        (1.0, Direction::Decreasing, "stable manifold never reached Σ⁰")
    } else {
        (-1.0, Direction::Increasing, "unstable manifold never reached Σ⁰")
    };
    let mut samples = Vec::with_capacity(tc.samples);
    for j in 0..tc.samples {
        let s = TAU * j as f64 / tc.samples as f64;
        let y0 = manifold_seed(sys, tc.q_start, s, sign);
        let t1 = if stable { s - span } else { s + span };
        let out = section_crossings_until(|t, y| sys.field(t, y), y0, s, t1, |_, y| LocalChart::uv(y).0 - a, dir, 1, &cfg.integrator, |_, y| y[0] <= 0.0);
        let e = out.events.first().ok_or(HorseshoeError::Trace(what))?;
        samples.push((s, e.t, LocalChart::uv(&e.state).1));
    }
    SectionTrace::fit(samples, tc.harmonics)
}

/// `Wᵘ ∩ Σ⁰`, integrated forward from the local unstable manifold.
pub fn unstable_trace(sys: &ReducedSystem, chart: &LocalChart, cfg: &MapConfig, tc: &TraceConfig) -> Result<SectionTrace, HorseshoeError> {
    trace(sys, chart, cfg, tc, false)
}

/// `Wˢ ∩ Σ⁰`, integrated backward from the local stable manifold through
/// the whole excursion.
pub fn stable_trace(sys: &ReducedSystem, chart: &LocalChart, cfg: &MapConfig, tc: &TraceConfig) -> Result<SectionTrace, HorseshoeError> {
    trace(sys, chart, cfg, tc, true)
}

/// A transversal intersection of the two traces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomoclinicPoint {
    /// Parameter on the stable trace.
    pub s: f64,
    /// `t` in `[0, 2π)`.
    pub t: f64,
    pub v: f64,
    /// Angle between the traces in the `(t, v)` plane.
    pub angle: f64,
    /// `d/ds [vˢ(s) - wᵘ(tˢ(s))]`.
    pub slope: f64,
}

/// Both traces and the splitting `D(s) = vˢ(s) - wᵘ(tˢ(s))` measured along
/// the stable trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Splitting {
    pub unstable: SectionTrace,
    pub stable: SectionTrace,
    /// `max |D|` on a fine grid.
    pub amplitude: f64,
    /// Integration noise proxy: the largest trace fit residual.
    pub noise: f64,
    pub homoclinics: Vec<HomoclinicPoint>,
}

impl Splitting {
    pub fn compute(sys: &ReducedSystem, chart: &LocalChart, cfg: &MapConfig, tc: &TraceConfig) -> Result<Self, HorseshoeError> {
        let unstable = unstable_trace(sys, chart, cfg, tc)?;
        let stable = stable_trace(sys, chart, cfg, tc)?;
        let d = |s: f64| -> f64 {
            let (t, v) = stable.point(s);
            unstable.graph(t).map_or(f64::NAN, |g| v - g.0)
        };
        let n = 2048;
        let mut amplitude: f64 = 0.0;
        let mut homoclinics = Vec::new();
        let mut sa = 0.0;
        let mut fa = d(0.0);
        for i in 1..=n {
            let sb = TAU * i as f64 / n as f64;
            let fb = d(sb);
            if !fb.is_finite() {
                return Err(HorseshoeError::Trace("unstable trace is not a graph over t"));
            }
            amplitude = amplitude.max(fabs(fb));
            if (fa < 0.0 && fb >= 0.0) || (fa > 0.0 && fb <= 0.0) {
                let (s, _) = brent(d, sa, sb, fa, fb, 1e-15, 200);
                let (t, v) = stable.point(s);
                let (dts, dvs) = stable.tangent(s);
                let (_, wu) = unstable.graph(t).unwrap_or((0.0, 0.0));
                let slope = dvs - wu * dts;
                let angle = fabs(libm::atan2(dvs, dts) - libm::atan(wu));
                homoclinics.push(HomoclinicPoint { s, t: wrap_angle(t), v, angle: angle.min(PI - angle), slope });
            }
            sa = sb;
            fa = fb;
        }
        let noise = unstable.fit_rms.max(stable.fit_rms);
        Ok(Self { unstable, stable, amplitude, noise, homoclinics })
    }

    pub fn signal_to_noise(&self) -> f64 {
        self.amplitude / self.noise.max(1e-300)
    }
}

// ---------------------------------------------------------------------------
// Return map in homoclinic-adapted coordinates

/// One application of `Ψ = Ψ_loc ∘ Ψ_glob` on `Σ⁰`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReturnPoint {
    pub xi: f64,
    /// Principal value, `στ ∈ (-π, π]`.
    pub tau: f64,
    /// `Φ = t₁ - γˢ(v₁)` with `t₁` unreduced and `γˢ` on the branch of the
    /// start; `στ₁ ≡ Φ (mod 2π)`.
    pub phase: f64,
    /// Completed `θ`-periods: the integer `m` with `2π(m - ½) < Φ ≤ 2π(m + ½)`.
    pub count: i64,
    /// Arrival on `Σ⁰` with `t` reduced to the branch of the homoclinic point.
    pub v: f64,
    pub t: f64,
    /// `u` on `Σ¹` between the two maps.
    pub u_mid: f64,
    pub elapsed: f64,
    pub q_min: f64,
}

/// Count convention for a continuous phase.
pub fn period_count(phase: f64) -> i64 {
    ceil(phase / TAU - 0.5) as i64
}

/// The return map near a chosen transversal homoclinic point.
#[derive(Debug, Clone, PartialEq)]
pub struct Horseshoe {
    pub sys: ReducedSystem,
    pub chart: LocalChart,
    pub cfg: MapConfig,
    pub splitting: Splitting,
    pub homoclinic: HomoclinicPoint,
    /// Orientation making `τ > 0` the side whose orbits come back.
    pub sigma: f64,
}

impl Horseshoe {
    /// Traces the manifolds, picks the most transversal homoclinic point and
    /// orients `τ`.
    pub fn new(sys: ReducedSystem, chart: LocalChart, cfg: MapConfig, tc: &TraceConfig) -> Result<Self, HorseshoeError> {
        let splitting = Splitting::compute(&sys, &chart, &cfg, tc)?;
        Self::from_splitting(sys, chart, cfg, splitting)
    }

    pub fn from_splitting(sys: ReducedSystem, chart: LocalChart, cfg: MapConfig, splitting: Splitting) -> Result<Self, HorseshoeError> {
        let homoclinic = *splitting.homoclinics.iter().max_by(|a, b| a.angle.total_cmp(&b.angle)).ok_or(HorseshoeError::NoHomoclinic)?;
        let mut hs = Self { sys, chart, cfg, splitting, homoclinic, sigma: 1.0 };
        let d = 0.5 * chart.delta;
        let (v, t) = hs.from_adapted(d, d)?;
        let g = global_map(&hs.sys, &hs.chart, v, t, &hs.cfg)?;
        if g.point.u < 0.0 {
            hs.sigma = -1.0;
        }
        Ok(hs)
    }

    pub fn delta(&self) -> f64 {
        self.chart.delta
    }

    /// Same traces and homoclinic point with a different window width.
    pub fn with_delta(&self, delta: f64) -> Result<Self, HorseshoeError> {
        Ok(Self { chart: self.chart.with_delta(delta)?, ..self.clone() })
    }

    /// `wᵘ(t)` and its slope.
    pub fn w_unstable(&self, t: f64) -> Result<(f64, f64), HorseshoeError> {
        self.splitting.unstable.graph(t).ok_or(HorseshoeError::Trace("unstable trace is not a graph over t"))
    }

    /// Stable-trace parameter with `vˢ(s) = v`, near the homoclinic point.
    fn stable_param(&self, v: f64) -> Result<f64, HorseshoeError> {
        let st = &self.splitting.stable;
        let mut s = self.homoclinic.s;
        for _ in 0..80 {
            let r = st.point(s).1 - v;
            let dv = st.tangent(s).1;
            let step = r / dv;
            s -= step;
            if fabs(step) < 1e-15 {
                return Ok(s);
            }
        }
        Err(HorseshoeError::Coordinates { xi: f64::NAN, tau: f64::NAN })
    }

    /// `γˢ(v)` on the branch of the homoclinic point.
    pub fn gamma_s(&self, v: f64) -> Result<f64, HorseshoeError> {
        let s = self.stable_param(v)?;
        let th = self.homoclinic.t;
        Ok(th + wrap_pi(self.splitting.stable.point(s).0 - th))
    }

    /// `(v, t) ↦ (ξ, τ)`.
    pub fn to_adapted(&self, v: f64, t: f64) -> Result<(f64, f64), HorseshoeError> {
        let xi = v - self.w_unstable(t)?.0;
        let tau = self.sigma * wrap_pi(t - self.gamma_s(v)?);
        Ok((xi, tau))
    }

    /// `(ξ, τ) ↦ (v, t)` with `t` on the branch of the homoclinic point.
    pub fn from_adapted(&self, xi: f64, tau: f64) -> Result<(f64, f64), HorseshoeError> {
        let st = &self.splitting.stable;
        let shift = self.sigma * tau;
        let mut s = self.homoclinic.s;
        for _ in 0..80 {
            let (ts, vs) = st.point(s);
            let (dts, dvs) = st.tangent(s);
            let (wu, dwu) = self.w_unstable(ts + shift)?;
            let g = vs - xi - wu;
            let dg = dvs - dwu * dts;
            let step = g / dg;
            s -= step;
            if fabs(step) < 1e-15 {
                let (ts, vs) = st.point(s);
                let th = self.homoclinic.t;
                return Ok((vs, th + wrap_pi(ts + shift - th)));
            }
        }
        Err(HorseshoeError::Coordinates { xi, tau })
    }

    /// `Ψ` from a point `(v₀, t₀)` of `Σ⁰`, `t₀` on the homoclinic branch.
    pub fn return_from(&self, v0: f64, t0: f64) -> Result<ReturnPoint, HorseshoeError> {
        let g = global_map(&self.sys, &self.chart, v0, t0, &self.cfg)?;
        if !(g.point.u > 0.0) {
            return Err(HorseshoeError::LeftDomain { u: g.point.u, v: g.point.v, t: g.point.t });
        }
        let l = passage(&self.sys, &self.chart, g.point.u, g.point.t, self.cfg.local_time, &self.cfg)?;
        let v1 = l.point.v;
        let t1 = l.point.t;
        let gamma = self.gamma_s(v1)?;
        let phase = t1 - gamma;
        let count = period_count(phase);
        let t_red = t1 - TAU * count as f64;
        let xi = v1 - self.w_unstable(t_red)?.0;
        let tau = self.sigma * (phase - TAU * count as f64);
        Ok(ReturnPoint { xi, tau, phase, count, v: v1, t: t_red, u_mid: g.point.u, elapsed: g.elapsed + l.elapsed, q_min: g.q_min.min(l.q_min) })
    }

    /// `Ψ` in adapted coordinates.
    pub fn psi(&self, xi: f64, tau: f64) -> Result<ReturnPoint, HorseshoeError> {
        let (v, t) = self.from_adapted(xi, tau)?;
        self.return_from(v, t)
    }
}

// ---------------------------------------------------------------------------
// Parabolic lambda lemma

/// `Wˢ ∩ Σ¹` as a graph `u = wˢ₁(t)`: the local stable manifold carried
/// backward from its seed to `v = a`.  Stored in a [`SectionTrace`] whose
/// `v` series holds `u`.
pub fn local_stable_trace(sys: &ReducedSystem, chart: &LocalChart, cfg: &MapConfig, tc: &TraceConfig) -> Result<SectionTrace, HorseshoeError> {
    let a = chart.a;
    let span = 20.0 / tc.q_start + 400.0;
    let mut samples = Vec::with_capacity(tc.samples);
    for j in 0..tc.samples {
        let s = TAU * j as f64 / tc.samples as f64;
        let y0 = manifold_seed(sys, tc.q_start, s, 1.0);
        let out = section_crossings_until(|t, y| sys.field(t, y), y0, s, s - span, |_, y| LocalChart::uv(y).1 - a, Direction::Increasing, 1, &cfg.integrator, |_, y| y[0] <= 0.0);
        let e = out.events.first().ok_or(HorseshoeError::Trace("stable manifold never reached Σ¹"))?;
        samples.push((s, e.t, LocalChart::uv(&e.state).0));
    }
    SectionTrace::fit(samples, tc.harmonics)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaRow {
    /// Distance to `Wˢ` on `Σ¹`.
    pub u0: f64,
    /// Distance to `Wᵘ` on `Σ⁰` at arrival.
    pub v1: f64,
    pub transit: f64,
    /// `s` with `v₁ = u₀^{1+s}`.
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaLemmaReport {
    pub a: f64,
    pub rows: Vec<LambdaRow>,
    /// Smallest `Ca` with `u₀^{1+Ca} ≤ v₁ ≤ u₀^{1-Ca}` on every row.
    pub ca: f64,
    /// Least-squares slope of `log v₁` against `log u₀`.
    pub v_exponent: f64,
    /// Least-squares slope of `log(t₁ - t₀)` against `log u₀`.
    pub transit_exponent: f64,
    pub transit_exponent_err: f64,
}

fn slope(x: &[f64], y: &[f64]) -> (f64, f64) {
    match crate::fit::line(x, y) {
        Some(f) => (f.coeffs[1], f.std_err(1)),
        None => (f64::NAN, f64::NAN),
    }
}

/// Passage times and arrival distances of the local map for each `u₀`,
/// with `u₀` and `v₁` measured from the traced manifolds.  The sections are
/// straightened only where they meet the manifolds; the chart itself stays
/// linear.
pub fn lambda_lemma(sys: &ReducedSystem, chart: &LocalChart, u0s: &[f64], t0: f64, cfg: &MapConfig, tc: &TraceConfig) -> Result<LambdaLemmaReport, HorseshoeError> {
    let ws = local_stable_trace(sys, chart, cfg, tc)?;
    let wu = unstable_trace(sys, chart, cfg, tc)?;
    let base = ws.graph(t0).ok_or(HorseshoeError::Trace("stable trace on Σ¹ is not a graph"))?.0;
    let mut rows = Vec::with_capacity(u0s.len());
    for &u0 in u0s {
        let tr = passage(sys, chart, base + u0, t0, transit_budget(u0, chart.a), cfg)?;
        let w = wu.graph(tr.point.t).ok_or(HorseshoeError::Trace("unstable trace is not a graph"))?.0;
        let v1 = tr.point.v - w;
        rows.push(LambdaRow { u0, v1, transit: tr.elapsed, excess: log(v1) / log(u0) - 1.0 });
    }
    Ok(LambdaLemmaReport::from_rows(chart.a, rows))
}

impl LambdaLemmaReport {
    fn from_rows(a: f64, rows: Vec<LambdaRow>) -> Self {
        let lx: Vec<f64> = rows.iter().map(|r| log(r.u0)).collect();
        let lv: Vec<f64> = rows.iter().map(|r| log(r.v1)).collect();
        let lt: Vec<f64> = rows.iter().map(|r| log(r.transit)).collect();
        let ca = rows.iter().map(|r| fabs(r.excess)).fold(0.0, f64::max);
        let (v_exponent, _) = slope(&lx, &lv);
        let (transit_exponent, transit_exponent_err) = slope(&lx, &lt);
        Self { a, rows, ca, v_exponent, transit_exponent, transit_exponent_err }
    }
}

/// Largest `|v₁ - u₀|` of the local map of the truncated system, where
/// `uv` is a first integral and the map is `(u₀, a) ↦ (a, u₀)`.
pub fn truncated_oracle_error(params: &ModelParams, chart: &LocalChart, u0s: &[f64], cfg: &MapConfig) -> Result<f64, HorseshoeError> {
    let sys = ReducedSystem::truncated(params);
    let mut worst: f64 = 0.0;
    for &u0 in u0s {
        let tr = passage(&sys, chart, u0, 0.0, transit_budget(u0, chart.a), cfg)?;
        worst = worst.max(fabs(tr.point.v - u0)).max(fabs(tr.point.u - chart.a));
    }
    Ok(worst)
}

/// Relative deviation `|v₁/u₀ - 1|` of the full local map from the
/// truncated one as the section radius shrinks, with `u₀ = ratio·a`, and
/// the fitted power of `a`.
pub fn truncation_deviation(sys: &ReducedSystem, radii: &[f64], ratio: f64, cfg: &MapConfig, tc: &TraceConfig) -> Result<(Vec<(f64, f64)>, f64), HorseshoeError> {
    let mut rows = Vec::with_capacity(radii.len());
    for &a in radii {
        let chart = LocalChart::new(a, 0.25 * a, 2.0 * a)?;
        let mut worst: f64 = 0.0;
        for j in 0..4 {
            let rep = lambda_lemma(sys, &chart, &[ratio * a], 0.5 * PI * j as f64, cfg, tc)?;
            let r = rep.rows[0];
            worst = worst.max(fabs(r.v1 / r.u0 - 1.0));
        }
        rows.push((a, worst));
    }
    let lx: Vec<f64> = rows.iter().map(|r| log(r.0)).collect();
    let ly: Vec<f64> = rows.iter().map(|r| log(r.1)).collect();
    Ok((rows, slope(&lx, &ly).0))
}

// ---------------------------------------------------------------------------
// Strips

/// Root of a monotone `f` on the segment from `near` (where `f - target`
/// has the sign of `f(near) - target`) toward `far`, probing at
/// `near + (1 - 2⁻ᵏ)(far - near)` because `f` may blow up at `far`.
fn monotone_root<F: FnMut(f64) -> Result<f64, HorseshoeError>>(mut f: F, target: f64, near: f64, far: f64) -> Result<Option<f64>, HorseshoeError> {
    let f_near = f(near)? - target;
    if f_near == 0.0 {
        return Ok(Some(near));
    }
    let mut a = near;
    let mut fa = f_near;
    for k in 1..=60 {
        let b = near + (1.0 - libm::ldexp(1.0, -k)) * (far - near);
        let fb = f(b)? - target;
        if (fa < 0.0) != (fb < 0.0) {
            let mut err = None;
            let (x, _) = brent(
                |x| match f(x) {
                    Ok(y) => y - target,
                    Err(e) => {
                        err.get_or_insert(e);
                        f64::NAN
                    }
                },
                a,
                b,
                fa,
                fb,
                0.0,
                200,
            );
            return match err {
                Some(e) => Err(e),
                None => Ok(Some(x)),
            };
        }
        a = b;
        fa = fb;
    }
    Ok(None)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StripConfig {
    /// Number of strips, labelled `1..=window`.
    pub window: usize,
    /// `ξ` samples for the vertical boundaries, including `0` and `δ`.
    pub xi_samples: usize,
    /// Points along each image of a horizontal boundary.
    pub tau_samples: usize,
}

impl Default for StripConfig {
    fn default() -> Self {
        Self { window: 4, xi_samples: 9, tau_samples: 17 }
    }
}

/// One vertical strip `Vₙ` and its image `Hₙ = Ψ(Vₙ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Strip {
    pub symbol: u32,
    /// Completed `θ`-periods of the returns from this strip.
    pub count: i64,
    /// `(ξ, τ where τ₁ = 0, τ where τ₁ = δ)`.
    pub vertical: Vec<(f64, f64, f64)>,
    /// Images `(τ₁, ξ₁)` of the sides `ξ = 0` and `ξ = δ`.
    pub image_low: Vec<(f64, f64)>,
    pub image_high: Vec<(f64, f64)>,
    pub mu_v: f64,
    pub mu_h: f64,
    /// Hausdorff distance from `Hₙ` to `{ξ = 0}`.
    pub hausdorff: f64,
}

impl Strip {
    /// `τ`-interval of `Vₙ` at `ξ`, interpolated between samples.
    pub fn tau_range(&self, xi: f64) -> (f64, f64) {
        let v = &self.vertical;
        let i = v.iter().position(|s| s.0 >= xi).unwrap_or(v.len() - 1).max(1);
        let (x0, a0, b0) = v[i - 1];
        let (x1, a1, b1) = v[i];
        let w = (xi - x0) / (x1 - x0);
        (a0 + w * (a1 - a0), b0 + w * (b1 - b0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StripFamily {
    pub delta: f64,
    /// Count of symbol 1.
    pub base_count: i64,
    pub strips: Vec<Strip>,
    pub mu_h: f64,
    pub mu_v: f64,
    pub disjoint: bool,
    /// Hausdorff distances strictly decrease with the symbol.
    pub monotone: bool,
}

impl StripFamily {
    pub fn count_of(&self, symbol: u32) -> i64 {
        self.base_count + symbol as i64 - 1
    }

    pub fn symbol_of(&self, count: i64) -> i64 {
        count - self.base_count + 1
    }

    pub fn window(&self) -> u32 {
        self.strips.len() as u32
    }

    pub fn strip(&self, symbol: u32) -> Result<&Strip, HorseshoeError> {
        if symbol == 0 || symbol as usize > self.strips.len() {
            return Err(HorseshoeError::Symbol { symbol, window: self.window() });
        }
        Ok(&self.strips[symbol as usize - 1])
    }
}

fn interp(curve: &[(f64, f64)], x: f64) -> f64 {
    let mut c: Vec<(f64, f64)> = curve.to_vec();
    c.sort_by(|a, b| a.0.total_cmp(&b.0));
    let i = c.iter().position(|p| p.0 >= x).unwrap_or(c.len() - 1).max(1);
    let (x0, y0) = c[i - 1];
    let (x1, y1) = c[i];
    if x1 == x0 {
        return y0;
    }
    y0 + (x - x0) / (x1 - x0) * (y1 - y0)
}

impl Horseshoe {
    /// Phase `Φ` of the return from `(ξ, τ)`.
    pub fn phase(&self, xi: f64, tau: f64) -> Result<f64, HorseshoeError> {
        Ok(self.psi(xi, tau)?.phase)
    }

    /// Targets `Φ` for `τ₁ = 0` and `τ₁ = δ` at count `m`.
    fn phase_targets(&self, m: i64) -> (f64, f64) {
        let base = TAU * m as f64;
        (base, base + self.sigma * self.delta())
    }

    /// `τ`-interval at fixed `ξ` whose returns have count `m` and land with
    /// `τ₁ ∈ [0, δ]`, as `(τ at τ₁ = 0, τ at τ₁ = δ)`.
    pub fn vertical_boundary(&self, xi: f64, m: i64) -> Result<(f64, f64), HorseshoeError> {
        let d = self.delta();
        let (p0, p1) = self.phase_targets(m);
        let f = |tau: f64| self.phase(xi, tau);
        let lo = monotone_root(f, p0, d, 0.0)?.ok_or(HorseshoeError::Strips("vertical boundary not bracketed"))?;
        let hi = monotone_root(|tau: f64| self.phase(xi, tau), p1, d, 0.0)?.ok_or(HorseshoeError::Strips("vertical boundary not bracketed"))?;
        Ok((lo, hi))
    }

    /// Vertical strips for the first `window` counts whose strips lie inside
    /// `Q_δ`, their images, and the checks of the strip hypothesis.
    pub fn build_strips(&self, sc: &StripConfig) -> Result<StripFamily, HorseshoeError> {
        let d = self.delta();
        let xs: Vec<f64> = (0..sc.xi_samples).map(|j| d * j as f64 / (sc.xi_samples - 1) as f64).collect();
        // Largest phase reached from the edge τ = δ fixes the first complete strip.
        let mut edge: f64 = f64::NEG_INFINITY;
        for &x in &xs {
            edge = edge.max(self.phase(x, d)?);
        }
        let mut m = period_count(edge);
        loop {
            let (p0, p1) = self.phase_targets(m);
            if p0.min(p1) > edge {
                break;
            }
            m += 1;
        }
        let mut strips = Vec::with_capacity(sc.window);
        let mut base_count = m;
        while strips.len() < sc.window {
            let mut vertical = Vec::with_capacity(xs.len());
            for &x in &xs {
                let (lo, hi) = self.vertical_boundary(x, m)?;
                vertical.push((x, lo, hi));
            }
            let mut images = [Vec::new(), Vec::new()];
            let mut inside = true;
            for (side, &x) in [0.0, d].iter().enumerate() {
                let (lo, hi) = if side == 0 { (vertical[0].1, vertical[0].2) } else { (vertical[xs.len() - 1].1, vertical[xs.len() - 1].2) };
                for k in 0..sc.tau_samples {
                    let tau = lo + (hi - lo) * k as f64 / (sc.tau_samples - 1) as f64;
                    let r = self.psi(x, tau)?;
                    let tau1 = self.sigma * (r.phase - TAU * m as f64);
                    inside &= r.xi > 0.0 && r.xi < d;
                    images[side].push((tau1, r.xi));
                }
            }
            if !inside {
                if strips.is_empty() {
                    // Images of this strip leave Q_δ: start the window one count later.
                    m += 1;
                    base_count = m;
                    continue;
                }
                return Err(HorseshoeError::Strips("strip image leaves Q_δ"));
            }
            let mu_v = vertical.windows(2).map(|w| fabs((w[1].1 - w[0].1) / (w[1].0 - w[0].0)).max(fabs((w[1].2 - w[0].2) / (w[1].0 - w[0].0)))).fold(0.0, f64::max);
            let [image_low, image_high] = images;
            let mu_h = [&image_low, &image_high].iter().flat_map(|c| c.windows(2).map(|w| fabs((w[1].1 - w[0].1) / (w[1].0 - w[0].0)))).fold(0.0, f64::max);
            let hausdorff = image_low.iter().chain(&image_high).map(|p| p.1).fold(0.0, f64::max);
            strips.push(Strip { symbol: strips.len() as u32 + 1, count: m, vertical, image_low, image_high, mu_v, mu_h, hausdorff });
            m += 1;
        }
        let mu_h = strips.iter().map(|s| s.mu_h).fold(0.0, f64::max);
        let mu_v = strips.iter().map(|s| s.mu_v).fold(0.0, f64::max);
        let monotone = strips.windows(2).all(|w| w[1].hausdorff < w[0].hausdorff);
        let family = StripFamily { delta: d, base_count, strips, mu_h, mu_v, disjoint: true, monotone };
        check_disjoint(&family)?;
        Ok(family)
    }
}

/// Pairwise disjointness of the `Vₙ` (at each `ξ` sample) and of the `Hₙ`
/// (on a common `τ₁` grid).
fn check_disjoint(f: &StripFamily) -> Result<(), HorseshoeError> {
    let n = f.strips.len();
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (&f.strips[i], &f.strips[j]);
            let overlap = HorseshoeError::Overlap { first: a.symbol, second: b.symbol };
            for (va, vb) in a.vertical.iter().zip(&b.vertical) {
                let (a0, a1) = (va.1.min(va.2), va.1.max(va.2));
                let (b0, b1) = (vb.1.min(vb.2), vb.1.max(vb.2));
                if a0 <= b1 && b0 <= a1 {
                    return Err(overlap);
                }
            }
            for k in 0..=64 {
                let t = f.delta * k as f64 / 64.0;
                let ya = [interp(&a.image_low, t), interp(&a.image_high, t)];
                let yb = [interp(&b.image_low, t), interp(&b.image_high, t)];
                let (a0, a1) = (ya[0].min(ya[1]), ya[0].max(ya[1]));
                let (b0, b1) = (yb[0].min(yb[1]), yb[0].max(yb[1]));
                if a0 <= b1 && b0 <= a1 {
                    return Err(overlap);
                }
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Cone conditions

#[derive(Debug, Clone, PartialEq)]
pub struct ConeConfig {
    /// Samples per strip along `ξ` and across the strip.
    pub xi_points: usize,
    pub tau_points: usize,
    /// Finite-difference step relative to `δ`; the check repeats at a
    /// quarter of it.
    pub step: f64,
    /// Candidate apertures `η = η_u = η_s`.
    pub eta_grid: Vec<f64>,
    /// Largest accepted relative disagreement between the two steps.
    pub richardson_tol: f64,
}

impl Default for ConeConfig {
    fn default() -> Self {
        Self { xi_points: 15, tau_points: 14, step: 1e-4, eta_grid: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9], richardson_tol: 0.05 }
    }
}

/// `DΨ` at one point, rows `(ξ₁, τ₁)`, columns `(ξ, τ)`.
pub type Jacobian = [[f64; 2]; 2];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConeSample {
    pub symbol: u32,
    pub xi: f64,
    pub tau: f64,
    pub jacobian: Jacobian,
    /// `‖J_h - J_{h/4}‖ / ‖J_{h/4}‖`.
    pub richardson: f64,
    /// Smallest stretch over both cones.
    pub expansion: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConeReport {
    pub eta_u: f64,
    pub eta_s: f64,
    /// Largest per-sample `κ` among passing samples.
    pub kappa: f64,
    pub samples: Vec<ConeSample>,
    pub pass_rate: f64,
    pub richardson_max: f64,
    /// Smallest cone stretch over the passing samples.
    pub expansion_min: f64,
    /// Pass rate per candidate `η`.
    pub eta_scan: Vec<(f64, f64)>,
}

impl ConeReport {
    /// `0 < κ < 1 - η_uη_s` and at least `rate` of the samples pass.
    pub fn passes(&self, rate: f64) -> bool {
        self.pass_rate >= rate && self.kappa > 0.0 && self.kappa < 1.0 - self.eta_u * self.eta_s
    }
}

fn frob(m: &Jacobian) -> f64 {
    sqrt(m[0][0] * m[0][0] + m[0][1] * m[0][1] + m[1][0] * m[1][0] + m[1][1] * m[1][1])
}

/// Cone invariance and the smallest stretch for apertures `η`, or `None`
/// when a cone is not mapped into itself.
pub fn cone_check(j: &Jacobian, eta: f64) -> Option<f64> {
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    let inv = [[j[1][1] / det, -j[0][1] / det], [-j[1][0] / det, j[0][0] / det]];
    let mut stretch = f64::INFINITY;
    let n = 20;
    let mut sign_u = 0.0;
    let mut sign_s = 0.0;
    for k in 0..=n {
        let s = -1.0 + 2.0 * k as f64 / n as f64;
        // Unstable cone |dξ| ≤ η|dτ| under DΨ.
        let x = [eta * s, 1.0];
        let y = [j[0][0] * x[0] + j[0][1] * x[1], j[1][0] * x[0] + j[1][1] * x[1]];
        if fabs(y[0]) > eta * fabs(y[1]) || (sign_u != 0.0 && y[1] * sign_u <= 0.0) {
            return None;
        }
        sign_u = y[1];
        stretch = stretch.min(libm::hypot(y[0], y[1]) / libm::hypot(x[0], x[1]));
        // Stable cone |dτ| ≤ η|dξ| under DΨ⁻¹.
        let x = [1.0, eta * s];
        let y = [inv[0][0] * x[0] + inv[0][1] * x[1], inv[1][0] * x[0] + inv[1][1] * x[1]];
        if fabs(y[1]) > eta * fabs(y[0]) || (sign_s != 0.0 && y[0] * sign_s <= 0.0) {
            return None;
        }
        sign_s = y[0];
        stretch = stretch.min(libm::hypot(y[0], y[1]) / libm::hypot(x[0], x[1]));
    }
    Some(stretch)
}

impl Horseshoe {
    /// `(ξ₁, τ₁)` with `τ₁` continuous in the start point.
    fn image(&self, xi: f64, tau: f64, count: i64) -> Result<[f64; 2], HorseshoeError> {
        let r = self.psi(xi, tau)?;
        Ok([r.xi, self.sigma * (r.phase - TAU * count as f64)])
    }

    /// Central-difference Jacobian of `Ψ` in adapted coordinates.
    pub fn jacobian(&self, xi: f64, tau: f64, h: f64, count: i64) -> Result<Jacobian, HorseshoeError> {
        let px = self.image(xi + h, tau, count)?;
        let mx = self.image(xi - h, tau, count)?;
        let pt = self.image(xi, tau + h, count)?;
        let mt = self.image(xi, tau - h, count)?;
        let s = 0.5 / h;
        Ok([[(px[0] - mx[0]) * s, (pt[0] - mt[0]) * s], [(px[1] - mx[1]) * s, (pt[1] - mt[1]) * s]])
    }

    fn cone_sample(&self, symbol: u32, count: i64, xi: f64, tau: f64, cc: &ConeConfig) -> Result<(ConeSample, Jacobian), HorseshoeError> {
        let h = cc.step * self.delta();
        let j1 = self.jacobian(xi, tau, h, count)?;
        let j4 = self.jacobian(xi, tau, 0.25 * h, count)?;
        let diff = [[j1[0][0] - j4[0][0], j1[0][1] - j4[0][1]], [j1[1][0] - j4[1][0], j1[1][1] - j4[1][1]]];
        let richardson = frob(&diff) / frob(&j4);
        let sample = ConeSample { symbol, xi, tau, jacobian: j4, richardson, expansion: f64::NAN, pass: false };
        Ok((sample, j4))
    }

    /// Jacobians at `xi_points × tau_points` interior points of every strip,
    /// scored for each candidate `η`; the best `η` is reported.
    pub fn verify_cones(&self, family: &StripFamily, cc: &ConeConfig) -> Result<ConeReport, HorseshoeError> {
        let d = self.delta();
        let mut raw = Vec::new();
        for strip in &family.strips {
            for i in 0..cc.xi_points {
                let xi = d * (i as f64 + 0.5) / cc.xi_points as f64;
                let (lo, hi) = self.vertical_boundary(xi, strip.count)?;
                for k in 0..cc.tau_points {
                    let tau = lo + (hi - lo) * (k as f64 + 0.5) / cc.tau_points as f64;
                    raw.push(self.cone_sample(strip.symbol, strip.count, xi, tau, cc)?);
                }
            }
        }
        let score = |eta: f64| -> (f64, f64, Vec<ConeSample>) {
            let mut kappa: f64 = 0.0;
            let mut passed = 0usize;
            let samples: Vec<ConeSample> = raw
                .iter()
                .map(|(s, j)| {
                    let stretch = cone_check(j, eta);
                    let k = stretch.map_or(f64::INFINITY, |x| 1.0 / x);
                    let pass = s.richardson <= cc.richardson_tol && k < 1.0 - eta * eta;
                    if pass {
                        passed += 1;
                        kappa = kappa.max(k);
                    }
                    ConeSample { expansion: stretch.unwrap_or(f64::NAN), pass, ..*s }
                })
                .collect();
            (passed as f64 / raw.len().max(1) as f64, kappa, samples)
        };
        let mut best: Option<(f64, f64, f64, Vec<ConeSample>)> = None;
        let mut eta_scan = Vec::with_capacity(cc.eta_grid.len());
        for &eta in &cc.eta_grid {
            let (rate, kappa, samples) = score(eta);
            eta_scan.push((eta, rate));
            if best.as_ref().map_or(true, |b| rate > b.1) {
                best = Some((eta, rate, kappa, samples));
            }
        }
        let (eta, pass_rate, kappa, samples) = best.ok_or(HorseshoeError::Strips("empty η grid"))?;
        let richardson_max = samples.iter().map(|s| s.richardson).fold(0.0, f64::max);
        let expansion_min = samples.iter().filter(|s| s.pass).map(|s| s.expansion).fold(f64::INFINITY, f64::min);
        Ok(ConeReport { eta_u: eta, eta_s: eta, kappa, samples, pass_rate, richardson_max, expansion_min, eta_scan })
    }
}

/// Smallest expansion of the return map over the first strips at each
/// `δ`, and the fitted power `e` in `λ ∝ δ^{-e}`.
pub fn expansion_scaling(hs: &Horseshoe, deltas: &[f64], window: usize, points: usize) -> Result<(Vec<(f64, f64)>, f64), HorseshoeError> {
    let mut rows = Vec::with_capacity(deltas.len());
    for &d in deltas {
        let h = hs.with_delta(d)?;
        let fam = h.build_strips(&StripConfig { window, xi_samples: 3, tau_samples: 3 })?;
        let cc = ConeConfig { xi_points: points, tau_points: points, ..ConeConfig::default() };
        let rep = h.verify_cones(&fam, &cc)?;
        rows.push((d, rep.expansion_min));
    }
    let lx: Vec<f64> = rows.iter().map(|r| log(r.0)).collect();
    let ly: Vec<f64> = rows.iter().map(|r| log(r.1)).collect();
    Ok((rows, -slope(&lx, &ly).0))
}

// ---------------------------------------------------------------------------
// Symbolic orbits

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShadowConfig {
    /// Pick the last `τ₀` so that `τ_k = τ₀` and feed `ξ_k` back into `ξ₀`
    /// this many times.
    pub close: usize,
    /// Starting `ξ₀` as a fraction of `δ`.
    pub xi_fraction: f64,
}

impl Default for ShadowConfig {
    fn default() -> Self {
        Self { close: 0, xi_fraction: 0.5 }
    }
}

/// A finite orbit of `Ψ` realising a symbol sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolItinerary {
    pub requested: Vec<u32>,
    /// Symbols recounted on the re-integrated orbit.
    pub achieved: Vec<u32>,
    pub counts: Vec<i64>,
    pub xi0: f64,
    pub tau0: f64,
    pub v0: f64,
    pub t0: f64,
    /// `Ψⁱ(z₀)` for `i = 1..=k`.
    pub orbit: Vec<ReturnPoint>,
    /// Distance of each `Ψⁱ(z₀)` from `Q_δ`.
    pub residuals: Vec<f64>,
    /// Width of the final nested interval in `τ₀`.
    pub width: f64,
    /// `|Ψᵏ(z₀) - z₀|` in adapted coordinates when the orbit was closed.
    pub displacement: Option<f64>,
    /// The same distance measured on the re-integrated orbit, which carries
    /// the round-off of the chart amplified by `λᵏ`.
    pub recount_displacement: Option<f64>,
}

impl SymbolItinerary {
    pub fn exact(&self) -> bool {
        self.achieved == self.requested
    }
}

fn outside(x: f64, d: f64) -> f64 {
    if x < 0.0 {
        -x
    } else if x > d {
        x - d
    } else {
        0.0
    }
}

impl Horseshoe {
    /// Iterates `Ψ` from `(ξ, τ)` with prescribed counts, keeping every
    /// `τᵢ` continuous; returns the last phase and point.
    pub fn chain(&self, xi: f64, tau: f64, counts: &[i64]) -> Result<(f64, f64, f64), HorseshoeError> {
        let (mut x, mut t) = (xi, tau);
        let mut phase = 0.0;
        for &m in counts {
            let r = self.psi(x, t)?;
            phase = r.phase;
            x = r.xi;
            t = self.sigma * (r.phase - TAU * m as f64);
        }
        Ok((phase, x, t))
    }

    /// Nested intervals in `τ₀` at fixed `ξ₀`.  Each interval is kept as
    /// `(end where τᵢ = δ, end where τᵢ = 0)`.
    pub fn nest(&self, xi0: f64, counts: &[i64], close: bool) -> Result<(f64, f64), HorseshoeError> {
        let d = self.delta();
        let mut ends = (d, 0.0);
        for i in 0..counts.len() {
            let (p0, p1) = self.phase_targets(counts[i]);
            let prefix = &counts[..=i];
            let f = |tau: f64| self.chain(xi0, tau, prefix).map(|r| r.0);
            let exhausted = || HorseshoeError::DepthExhausted { prefix: Vec::new() };
            let z = monotone_root(f, p0, ends.0, ends.1)?.ok_or_else(exhausted)?;
            let e = monotone_root(|tau: f64| self.chain(xi0, tau, prefix).map(|r| r.0), p1, ends.0, ends.1)?.ok_or_else(exhausted)?;
            ends = (e, z);
        }
        if close {
            let g = |tau: f64| self.chain(xi0, tau, counts).map(|r| r.2 - tau);
            let tau = monotone_root(g, 0.0, ends.0, ends.1)?.ok_or(HorseshoeError::DepthExhausted { prefix: Vec::new() })?;
            return Ok((tau, fabs(ends.0 - ends.1)));
        }
        Ok((0.5 * (ends.0 + ends.1), fabs(ends.0 - ends.1)))
    }

    /// A point of `Q_δ` whose successive returns have the requested symbols,
    /// found by nested bisection and checked by re-integration.
    pub fn shadow_orbit(&self, family: &StripFamily, symbols: &[u32], sc: &ShadowConfig) -> Result<SymbolItinerary, HorseshoeError> {
        if symbols.is_empty() {
            return Err(HorseshoeError::Symbol { symbol: 0, window: family.window() });
        }
        for &s in symbols {
            family.strip(s)?;
        }
        let counts: Vec<i64> = symbols.iter().map(|&s| family.count_of(s)).collect();
        let d = self.delta();
        let mut xi0 = sc.xi_fraction * d;
        let rounds = sc.close.max(1);
        let mut found = None;
        for round in 0..rounds {
            let (tau0, width) = match self.nest(xi0, &counts, sc.close > 0) {
                Ok(r) => r,
                Err(HorseshoeError::DepthExhausted { .. }) | Err(HorseshoeError::LeftDomain { .. }) => {
                    let prefix = self.deepest_prefix(xi0, &counts, symbols);
                    return Err(HorseshoeError::DepthExhausted { prefix });
                }
                Err(e) => return Err(e),
            };
            found = Some((xi0, tau0, width));
            if sc.close > 0 && round + 1 < rounds {
                let (_, xk, _) = self.chain(xi0, tau0, &counts)?;
                xi0 = xk;
            }
        }
        let (xi0, tau0, width) = found.expect("at least one round");
        self.recount(family, symbols, counts, xi0, tau0, width, sc.close > 0)
    }

    fn deepest_prefix(&self, xi0: f64, counts: &[i64], symbols: &[u32]) -> Vec<u32> {
        let mut n = 0;
        for i in 1..=counts.len() {
            if self.nest(xi0, &counts[..i], false).is_err() {
                break;
            }
            n = i;
        }
        symbols[..n].to_vec()
    }

    #[allow(clippy::too_many_arguments)]
    fn recount(&self, family: &StripFamily, symbols: &[u32], counts: Vec<i64>, xi0: f64, tau0: f64, width: f64, closed: bool) -> Result<SymbolItinerary, HorseshoeError> {
        let d = self.delta();
        let (v0, t0) = self.from_adapted(xi0, tau0)?;
        let mut orbit = Vec::with_capacity(symbols.len());
        let mut achieved = Vec::with_capacity(symbols.len());
        let mut residuals = Vec::with_capacity(symbols.len());
        let (mut v, mut t) = (v0, t0);
        for _ in symbols {
            let r = self.return_from(v, t)?;
            let s = family.symbol_of(r.count);
            achieved.push(if s >= 1 { s as u32 } else { 0 });
            residuals.push(outside(r.xi, d).max(outside(r.tau, d)));
            v = r.v;
            t = r.t;
            orbit.push(r);
        }
        let recount_displacement = closed.then(|| {
            let last = orbit.last().expect("nonempty orbit");
            libm::hypot(last.xi - xi0, last.tau - tau0)
        });
        let displacement = if closed {
            let (_, xk, tk) = self.chain(xi0, tau0, &counts)?;
            Some(libm::hypot(xk - xi0, tk - tau0))
        } else {
            None
        };
        Ok(SymbolItinerary { requested: symbols.to_vec(), achieved, counts, xi0, tau0, v0, t0, orbit, residuals, width, displacement, recount_displacement })
    }
}

// ---------------------------------------------------------------------------
// Global map structure

/// `DΨ_glob` at a point of `Σ⁰`, from `(ξ, τ)` to `(u₁ - wˢ₁(t₁), t₁)`
/// on `Σ¹`.  Near the homoclinic point it has the shape
/// `[[0, ν₀], [ν₁, *]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalDifferential {
    pub jacobian: Jacobian,
    pub nu0: f64,
    pub nu1: f64,
    /// `|ν₀ν₁| / |J₀₀J₁₁|`.
    pub margin: f64,
    /// Distance of the image of `(ξ, τ)` from `Wˢ ∩ Σ¹`.
    pub boundary_error: f64,
}

impl Horseshoe {
    fn global_adapted(&self, local_stable: &SectionTrace, xi: f64, tau: f64) -> Result<[f64; 2], HorseshoeError> {
        let (v, t) = self.from_adapted(xi, tau)?;
        let g = global_map(&self.sys, &self.chart, v, t, &self.cfg)?;
        let ws = local_stable.graph(g.point.t).ok_or(HorseshoeError::Trace("stable trace on Σ¹ is not a graph over t"))?.0;
        Ok([g.point.u - ws, g.point.t])
    }

    /// Finite-difference `DΨ_glob` at `(ξ, τ)` with step `h` (and `h/4` for
    /// the Richardson check, reported through `margin`'s inputs).
    pub fn global_differential(&self, local_stable: &SectionTrace, xi: f64, tau: f64, h: f64) -> Result<GlobalDifferential, HorseshoeError> {
        let c = self.global_adapted(local_stable, xi, tau)?;
        let px = self.global_adapted(local_stable, xi + h, tau)?;
        let mx = self.global_adapted(local_stable, xi - h, tau)?;
        let pt = self.global_adapted(local_stable, xi, tau + h)?;
        let mt = self.global_adapted(local_stable, xi, tau - h)?;
        let s = 0.5 / h;
        let j = [[(px[0] - mx[0]) * s, (pt[0] - mt[0]) * s], [(px[1] - mx[1]) * s, (pt[1] - mt[1]) * s]];
        let nu0 = j[0][1];
        let nu1 = j[1][0];
        let diag = fabs(j[0][0] * j[1][1]);
        let margin = if diag == 0.0 { f64::INFINITY } else { fabs(nu0 * nu1) / diag };
        Ok(GlobalDifferential { jacobian: j, nu0, nu1, margin, boundary_error: if tau == 0.0 { fabs(c[0]) } else { f64::NAN } })
    }
}

// ---------------------------------------------------------------------------
// Operating point

#[derive(Debug, Clone, PartialEq)]
pub struct HorseshoeConfig {
    /// Candidate `νI₀`, tried largest first.
    pub candidates: Vec<f64>,
    pub a: f64,
    pub delta: f64,
    pub rho: f64,
    /// Required splitting over noise.
    pub min_ratio: f64,
    /// Largest `|∂Φ/∂τ|` at the edge `τ = δ`; three returns amplify
    /// round-off by its cube.
    pub max_edge_expansion: f64,
    /// Largest `δ / A`: the window must sit inside the splitting lobe.
    pub max_delta_ratio: f64,
    pub map: MapConfig,
    pub trace: TraceConfig,
}

impl Default for HorseshoeConfig {
    fn default() -> Self {
        Self {
            candidates: vec![3.0, 2.5, 2.0, 1.75, 1.5],
            a: 0.1,
            delta: 0.04,
            rho: 0.2,
            min_ratio: 1e3,
            max_edge_expansion: 2e3,
            max_delta_ratio: 0.6,
            map: MapConfig::default(),
            trace: TraceConfig::default(),
        }
    }
}

/// Why a candidate was passed over.
#[derive(Debug, Clone, PartialEq)]
pub enum Rejection {
    Failed(HorseshoeError),
    Noise { ratio: f64 },
    Window { delta_ratio: f64 },
    Expansion { lambda: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatingPoint {
    pub nu_i0: f64,
    pub amplitude: f64,
    pub noise: f64,
    pub ratio: f64,
    pub delta_ratio: f64,
    pub edge_expansion: f64,
    pub rejected: Vec<(f64, Rejection)>,
}

fn edge_expansion(hs: &Horseshoe) -> Result<f64, HorseshoeError> {
    let d = hs.delta();
    let h = 1e-4 * d;
    Ok(fabs(hs.phase(0.5 * d, d + h)? - hs.phase(0.5 * d, d - h)?) / (2.0 * h))
}

/// First candidate `νI₀` whose splitting clears the noise by `min_ratio`
/// and whose return map is resolvable at the configured window.
pub fn select_operating_point(params: &ModelParams, hc: &HorseshoeConfig) -> Result<(OperatingPoint, Horseshoe), HorseshoeError> {
    let chart = LocalChart::new(hc.a, hc.delta, hc.rho)?;
    let mut rejected = Vec::new();
    let mut best_ratio: f64 = 0.0;
    for &nu_i0 in &hc.candidates {
        let p = params.with_nu_i0(nu_i0)?;
        let sys = ReducedSystem::new(&p);
        let splitting = match Splitting::compute(&sys, &chart, &hc.map, &hc.trace) {
            Ok(s) => s,
            Err(e) => {
                rejected.push((nu_i0, Rejection::Failed(e)));
                continue;
            }
        };
        let ratio = splitting.signal_to_noise();
        best_ratio = best_ratio.max(ratio);
        if !(ratio >= hc.min_ratio) {
            rejected.push((nu_i0, Rejection::Noise { ratio }));
            continue;
        }
        let delta_ratio = hc.delta / splitting.amplitude;
        if delta_ratio > hc.max_delta_ratio {
            rejected.push((nu_i0, Rejection::Window { delta_ratio }));
            continue;
        }
        let (amplitude, noise) = (splitting.amplitude, splitting.noise);
        let built = Horseshoe::from_splitting(sys, chart, hc.map, splitting).and_then(|hs| edge_expansion(&hs).map(|l| (hs, l)));
        let (hs, lambda) = match built {
            Ok(x) => x,
            Err(e) => {
                rejected.push((nu_i0, Rejection::Failed(e)));
                continue;
            }
        };
        if lambda > hc.max_edge_expansion {
            rejected.push((nu_i0, Rejection::Expansion { lambda }));
            continue;
        }
        let op = OperatingPoint { nu_i0, amplitude, noise, ratio, delta_ratio, edge_expansion: lambda, rejected };
        return Ok((op, hs));
    }
    Err(HorseshoeError::OperatingPoint { best_ratio })
}

// ---------------------------------------------------------------------------
// Oscillatory orbits

#[derive(Debug, Clone, PartialEq)]
pub struct OscillationReport {
    pub itinerary: SymbolItinerary,
    /// `(t, state)` in physical time and Cartesian coordinates.
    pub samples: Vec<(f64, CartesianState)>,
    /// `(t, z)` at the far points of the local passages.
    pub maxima: Vec<(f64, f64)>,
    /// `(t, z)` at the closest approaches to the surface.
    pub minima: Vec<(f64, f64)>,
    pub z_return: f64,
    pub increasing: bool,
    /// Every maximum is followed by a minimum below `z_return`.
    pub returns: bool,
}

impl OscillationReport {
    pub fn passes(&self, k: usize) -> bool {
        self.maxima.len() >= k && self.increasing && self.returns
    }
}

/// Reduced `(Q, P, θ, s)` to a physical state and time.
fn to_cartesian(sys: &ReducedSystem, params: &ModelParams, theta: f64, y: &[f64; 3]) -> Result<(f64, CartesianState), HorseshoeError> {
    let s = sys.nu_i0;
    let (q, p) = (s * y[0], s * y[1]);
    let w = sys.theta_rate(q, p, theta).ok_or(HorseshoeError::InvalidStart("state off the energy level"))?;
    let m = McGeheeState { q, p, theta, j: w / sys.nu - sys.i0 };
    let c = from_mcgehee(&m, params)?;
    Ok((y[2] / params.physical().scales().time_rate, c))
}

impl Horseshoe {
    /// Shadows the strictly increasing symbols `1, 2, …, k`, follows the
    /// orbit one excursion past its last return and reads off the heights.
    pub fn oscillatory_demo(&self, params: &ModelParams, family: &StripFamily, k: usize, z_return: f64, samples_per_radian: f64) -> Result<OscillationReport, HorseshoeError> {
        let symbols: Vec<u32> = (1..=k as u32).collect();
        let it = self.shadow_orbit(family, &symbols, &ShadowConfig::default())?;
        let last = it.orbit.last().ok_or(HorseshoeError::Symbol { symbol: 0, window: family.window() })?;
        let tail = global_map(&self.sys, &self.chart, last.v, last.t, &self.cfg)?;
        let span: f64 = it.orbit.iter().map(|r| r.elapsed).sum::<f64>() + tail.elapsed;
        let y0 = LocalChart::qp(self.chart.a, it.v0);
        let traj = crate::integrate::integrate(|t, y| self.sys.field_timed(t, y), [y0[0], y0[1], 0.0], it.t0, it.t0 + span, &self.cfg.integrator)?;
        let n = ceil(span * samples_per_radian).max(2.0) as usize;
        let mut out = Vec::with_capacity(n + 1);
        for i in 0..=n {
            let th = it.t0 + span * i as f64 / n as f64;
            let y = traj.eval(th).ok_or(HorseshoeError::Trace("dense output unavailable"))?;
            out.push(to_cartesian(&self.sys, params, th, &y)?);
        }
        // z is largest where Q is smallest, i.e. where P = QP/Q changes from + to -.
        let mut maxima = Vec::new();
        for e in traj.crossings(|_, y| y[1], Direction::Decreasing) {
            let (t, c) = to_cartesian(&self.sys, params, e.t, &e.state)?;
            maxima.push((t, c.z));
        }
        let mut minima = Vec::new();
        for e in traj.crossings(|_, y| y[1], Direction::Increasing) {
            let (t, c) = to_cartesian(&self.sys, params, e.t, &e.state)?;
            minima.push((t, c.z));
        }
        let increasing = maxima.windows(2).all(|w| w[1].1 > w[0].1);
        let returns = maxima.iter().all(|&(t, _)| minima.iter().any(|&(tm, zm)| tm > t && zm <= z_return));
        Ok(OscillationReport { itinerary: it, samples: out, maxima, minima, z_return, increasing, returns })
    }
}

// ---------------------------------------------------------------------------
// Reduction consistency

/// Section states `(Q, P, θ)` of the reduced flow and of the full McGehee
/// flow started from the same point of `Σ⁰`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReductionCheck {
    pub reduced: Vec<[f64; 3]>,
    pub full: Vec<[f64; 3]>,
    pub max_error: f64,
}

/// Runs the reduced and the full flow from `(v₀, t₀)` on `Σ⁰` through the
/// excursion to `Σ¹` and back to `Σ⁰`.
pub fn reduction_consistency(params: &ModelParams, chart: &LocalChart, v0: f64, t0: f64, cfg: &MapConfig) -> Result<ReductionCheck, HorseshoeError> {
    let sys = ReducedSystem::new(params);
    let s = sys.nu_i0;
    let a = chart.a;
    let g = global_map(&sys, chart, v0, t0, cfg)?;
    let l = passage(&sys, chart, g.point.u, g.point.t, cfg.local_time, cfg)?;
    let at = |p: &Transit| {
        let y = LocalChart::qp(p.point.u, p.point.v);
        [y[0], y[1], p.point.t]
    };
    let reduced = vec![at(&g), at(&l)];
    let y0 = LocalChart::qp(a, v0);
    let start = reduce_poincare_cartan(&McGeheeState { q: s * y0[0], p: s * y0[1], theta: t0, j: 0.0 }, params)?;
    let f = crate::integrate::mcgehee_field(params);
    let z0 = [s * y0[0], s * y0[1], t0, -start.k];
    let horizon = (g.elapsed + l.elapsed) * 4.0 / sys.nu_i0 + 100.0;
    let mut full = Vec::with_capacity(2);
    let mut state = z0;
    let mut time = 0.0;
    for (k, dir) in [(1usize, Direction::Decreasing), (0, Direction::Increasing)] {
        let out = section_crossings_until(
            &f,
            state,
            time,
            time + horizon,
            |_, y| {
                let (u, v) = LocalChart::uv(&[y[0] / s, y[1] / s]);
                if k == 1 {
                    v - a
                } else {
                    u - a
                }
            },
            dir,
            1,
            &cfg.integrator,
            |_, _| false,
        );
        let e = out.events.first().ok_or(HorseshoeError::Escape { t: time + horizon })?;
        full.push([e.state[0] / s, e.state[1] / s, e.state[2]]);
        state = e.state;
        time = e.t;
    }
    let max_error = reduced.iter().zip(&full).flat_map(|(r, f)| (0..3).map(move |i| fabs(r[i] - f[i]))).fold(0.0, f64::max);
    Ok(ReductionCheck { reduced, full, max_error })
}

#[cfg(test)]
mod tests {
    extern crate std;

    use super::*;
    use crate::integrate::integrate;
    use proptest::prelude::*;
    use std::sync::OnceLock;

    fn fixture() -> &'static (ModelParams, Horseshoe, StripFamily) {
        static CELL: OnceLock<(ModelParams, Horseshoe, StripFamily)> = OnceLock::new();
        CELL.get_or_init(|| {
            let params = ModelParams::physical_default(1.75, 1.0);
            let chart = LocalChart::new(0.1, 0.04, 0.2).unwrap();
            let hs = Horseshoe::new(ReducedSystem::new(&params), chart, MapConfig::default(), &TraceConfig::default()).unwrap();
            let family = hs.build_strips(&StripConfig::default()).unwrap();
            (params, hs, family)
        })
    }

    #[test]
    fn parabolic_orbit_has_zero_k() {
        let params = ModelParams::physical_default(4.0, 1.0);
        let r = reduce_poincare_cartan(&McGeheeState::new(0.0, 0.0, 1.3, 0.7), &params).unwrap();
        assert!(r.k.abs() <= 1e-13 * params.i0().max(1.0), "{}", r.k);
        assert_eq!(r.dq_dtheta, 0.0);
        assert_eq!(r.dp_dtheta, 0.0);
    }

    #[test]
    fn root_solve_matches_closed_form() {
        let params = ModelParams::physical_default(3.0, 1.0);
        let sys = ReducedSystem::new(&params);
        for &(q, p, th) in &[(0.3, 0.1, 0.0), (0.5, -0.2, 2.0), (0.1, 0.05, 4.0)] {
            let r = reduce_poincare_cartan(&McGeheeState::new(q, p, th, 0.0), &params).unwrap();
            let k = sys.k_closed(q, p, th).unwrap();
            assert!((r.k - k).abs() <= 1e-12, "{} {}", r.k, k);
            let s = sys.nu_i0();
            let f = sys.field(th, &[q / s, p / s]);
            assert!((f[0] * s - r.dq_dtheta).abs() <= 1e-10 * r.dq_dtheta.abs().max(1e-3));
            assert!((f[1] * s - r.dp_dtheta).abs() <= 1e-10 * r.dp_dtheta.abs().max(1e-3));
        }
    }

    #[test]
    fn flat_surface_preserves_k() {
        let params = ModelParams::physical_default(3.0, 0.0);
        let sys = ReducedSystem::new(&params);
        let y0 = LocalChart::qp(0.1, 0.02);
        let cfg = IntegratorConfig::new(1e-12, 1e-15).unwrap();
        let traj = integrate(|t, y| sys.field(t, y), y0, 0.3, 40.0, &cfg).unwrap();
        let s = sys.nu_i0();
        let k0 = sys.k_closed(s * y0[0], s * y0[1], 0.3).unwrap();
        for (t, y) in traj.times().iter().zip(traj.states()) {
            let k = sys.k_closed(s * y[0], s * y[1], *t).unwrap();
            assert!((k - k0).abs() <= 1e-10 * params.i0(), "{} {}", k, k0);
        }
    }

    #[test]
    fn truncated_local_map_swaps_u_and_v() {
        let params = ModelParams::physical_default(1.75, 1.0);
        let chart = LocalChart::new(0.1, 0.04, 0.2).unwrap();
        let err = truncated_oracle_error(&params, &chart, &[1e-2, 1e-3, 1e-4, 1e-5, 1e-6], &MapConfig::default()).unwrap();
        assert!(err <= 1e-12, "{err:e}");
    }

    #[test]
    fn local_map_rejects_points_outside_window() {
        let params = ModelParams::physical_default(1.75, 1.0);
        let chart = LocalChart::new(0.1, 0.04, 0.2).unwrap();
        let sys = ReducedSystem::new(&params);
        assert!(matches!(local_map(&sys, &chart, 0.05, 0.0, &MapConfig::default()), Err(HorseshoeError::InvalidStart(_))));
        assert!(matches!(local_map(&sys, &chart, -1e-3, 0.0, &MapConfig::default()), Err(HorseshoeError::InvalidStart(_))));
        assert!(LocalChart::new(0.1, 0.06, 0.2).is_err());
    }

    #[test]
    fn period_count_is_open_below_closed_above() {
        assert_eq!(period_count(TAU * 3.5), 3);
        assert_eq!(period_count(TAU * 2.5 + 1e-12), 3);
        assert_eq!(period_count(TAU * 3.0), 3);
        assert_eq!(period_count(-0.1), 0);
    }

    #[test]
    fn cone_check_on_model_matrices() {
        let hyperbolic = [[0.1, 0.0], [0.0, 10.0]];
        let k = cone_check(&hyperbolic, 0.5).unwrap();
        assert!(k > 8.0, "{k}");
        let rotation = [[0.0, 1.0], [-1.0, 0.0]];
        assert!(cone_check(&rotation, 0.5).is_none());
    }

    #[test]
    fn fourier_fit_recovers_trigonometric_polynomial() {
        let s: Vec<f64> = (0..32).map(|j| TAU * j as f64 / 32.0).collect();
        let y: Vec<f64> = s.iter().map(|&x| 0.5 + 0.25 * cos(x) - 0.125 * sin(3.0 * x)).collect();
        let (c, rms) = fourier_fit(&s, &y, 4).unwrap();
        assert!(rms <= 1e-14);
        for &x in &[0.1, 1.7, 5.0] {
            assert!((fourier_eval(&c, x) - (0.5 + 0.25 * cos(x) - 0.125 * sin(3.0 * x))).abs() <= 1e-14);
            assert!((fourier_deriv(&c, x) - (-0.25 * sin(x) - 0.375 * cos(3.0 * x))).abs() <= 1e-13);
        }
    }

    #[test]
    fn homoclinic_point_maps_onto_stable_manifold() {
        let (_, hs, _) = fixture();
        let ls = local_stable_trace(&hs.sys, &hs.chart, &hs.cfg, &TraceConfig::default()).unwrap();
        let gd = hs.global_differential(&ls, 0.0, 0.0, 1e-5).unwrap();
        assert!(gd.boundary_error <= 1e-8, "{:e}", gd.boundary_error);
        assert!(gd.nu0.abs() > 1e-3 && gd.nu1.abs() > 1e-3);
        assert!(gd.margin > 1e3, "{}", gd.margin);
    }

    #[test]
    fn homoclinic_is_origin_of_adapted_coordinates() {
        let (_, hs, _) = fixture();
        let h = hs.homoclinic;
        let (xi, tau) = hs.to_adapted(h.v, h.t).unwrap();
        assert!(xi.abs() <= 1e-10 && tau.abs() <= 1e-10, "{xi:e} {tau:e}");
        assert!(hs.splitting.signal_to_noise() >= 1e3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn adapted_coordinates_round_trip(x in 0.0f64..1.0, y in 0.0f64..1.0) {
            let (_, hs, _) = fixture();
            let d = hs.delta();
            let (v, t) = hs.from_adapted(x * d, y * d).unwrap();
            let (xi, tau) = hs.to_adapted(v, t).unwrap();
            prop_assert!((xi - x * d).abs() <= 1e-11);
            prop_assert!((tau - y * d).abs() <= 1e-11);
        }
    }

    #[test]
    fn strips_are_disjoint_and_shrink_onto_the_manifold() {
        let (_, _, f) = fixture();
        assert_eq!(f.strips.len(), 4);
        assert!(f.disjoint && f.monotone);
        assert!(f.mu_h * f.mu_v < 1.0, "{} {}", f.mu_h, f.mu_v);
        for w in f.strips.windows(2) {
            assert_eq!(w[1].count, w[0].count + 1);
        }
    }

    #[test]
    fn cones_hold_on_a_coarse_grid() {
        let (_, hs, f) = fixture();
        let cc = ConeConfig { xi_points: 4, tau_points: 3, ..ConeConfig::default() };
        let r = hs.verify_cones(f, &cc).unwrap();
        assert_eq!(r.samples.len(), 48);
        assert!(r.passes(0.95), "{} {} {}", r.pass_rate, r.kappa, r.eta_u);
        assert!(r.richardson_max <= 0.05);
    }

    #[test]
    fn expansion_grows_as_window_shrinks() {
        let (_, hs, _) = fixture();
        let (rows, e) = expansion_scaling(hs, &[0.04, 0.02, 0.01], 2, 2).unwrap();
        assert!(rows.windows(2).all(|w| w[1].1 > w[0].1));
        assert!(e >= 0.8, "{e}");
    }

    #[test]
    fn shadow_orbit_recounts_its_symbols() {
        let (_, hs, f) = fixture();
        let it = hs.shadow_orbit(f, &[2, 3, 2], &ShadowConfig::default()).unwrap();
        assert!(it.exact(), "{:?}", it.achieved);
        assert!(it.residuals.iter().all(|&r| r <= 1e-9));
        let single = hs.shadow_orbit(f, &[4], &ShadowConfig::default()).unwrap();
        assert_eq!(single.achieved, vec![4]);
        assert!(matches!(hs.shadow_orbit(f, &[5], &ShadowConfig::default()), Err(HorseshoeError::Symbol { symbol: 5, .. })));
    }

    #[test]
    fn closed_orbit_returns_near_its_start() {
        // At νI₀ = 2 the cube of the expansion keeps round-off below 1e-4.
        let params = ModelParams::physical_default(2.0, 1.0);
        let chart = LocalChart::new(0.1, 0.04, 0.2).unwrap();
        let hs = Horseshoe::new(ReducedSystem::new(&params), chart, MapConfig::default(), &TraceConfig::default()).unwrap();
        let f = hs.build_strips(&StripConfig { window: 5, xi_samples: 5, tau_samples: 9 }).unwrap();
        let it = hs.shadow_orbit(&f, &[5, 5, 5], &ShadowConfig { close: 3, ..ShadowConfig::default() }).unwrap();
        assert!(it.exact());
        assert!(it.displacement.unwrap() < 1e-4, "{:?}", it.displacement);
    }

    #[test]
    fn oscillatory_orbit_climbs() {
        let (params, hs, f) = fixture();
        let r = hs.oscillatory_demo(params, f, 3, 8.0, 4.0).unwrap();
        assert!(r.passes(3), "{:?} {:?}", r.maxima, r.minima);
        assert_eq!(r.maxima.len(), 3);
        assert!(r.samples.windows(2).all(|w| w[1].0 > w[0].0));
    }

    #[test]
    fn reduced_and_full_flow_agree_on_sections() {
        let (params, hs, _) = fixture();
        let d = hs.delta();
        let (v, t) = hs.from_adapted(0.5 * d, 0.5 * d).unwrap();
        let r = reduction_consistency(params, &hs.chart, v, t, &hs.cfg).unwrap();
        assert!(r.max_error <= 1e-8, "{:e}", r.max_error);
    }

    #[test]
    fn lambda_lemma_exponents() {
        let (_, hs, _) = fixture();
        let u0s = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6];
        let r = lambda_lemma(&hs.sys, &hs.chart, &u0s, 0.0, &hs.cfg, &TraceConfig::default()).unwrap();
        assert!(r.ca <= 0.2, "{}", r.ca);
        assert!((r.v_exponent - 1.0).abs() <= r.ca.max(1e-3));
        assert!((r.transit_exponent + 0.5).abs() <= 0.05, "{}", r.transit_exponent);
    }

    #[test]
    fn truncated_system_ignores_corrugation() {
        let params = ModelParams::physical_default(2.0, 1.0);
        let sys = ReducedSystem::truncated(&params);
        assert_eq!(sys.kind(), FieldKind::Truncated);
        let f = sys.field(0.7, &[0.2, 0.1]);
        assert!((f[0] + 0.02).abs() <= 1e-16 && (f[1] + 0.04).abs() <= 1e-16);
    }
}
