//! The unperturbed separatrix, its generating function and the Melnikov
//! potential, in closed form and by independent quadrature.

use core::f64::consts::PI;

use num_complex::Complex64;

use crate::fourier::Modes;
use crate::math::{atan, cos, exp, fabs, pow, sin, sqrt, TAU};
use crate::model::CorrugationSeries;
use crate::quad::QuadError;

pub fn q_h(u: f64) -> f64 {
    1.0 / sqrt(1.0 + u * u)
}

pub fn p_h(u: f64) -> f64 {
    u / (1.0 + u * u)
}

/// Point `(q, p, θ, J)` of the unperturbed separatrix.
pub fn gamma0(u: f64, theta: f64) -> [f64; 4] {
    [q_h(u), p_h(u), theta, 0.0]
}

/// Generating function of the separatrix, `∂_uΦ₀ = p_h²`.
pub fn phi0(u: f64) -> f64 {
    -u / (2.0 * (u * u + 1.0)) + 0.5 * atan(u)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeparatrixPoint {
    pub u: f64,
    pub q_h: f64,
    pub p_h: f64,
    pub phi0: f64,
}

impl SeparatrixPoint {
    pub fn at(u: f64) -> Self {
        Self { u, q_h: q_h(u), p_h: p_h(u), phi0: phi0(u) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    ClosedForm,
    Quadrature,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MelnikovCoefficient {
    pub k: i64,
    pub value: Complex64,
    pub method: Method,
    /// Error estimate; zero for the closed form.
    pub error: f64,
}

/// `∫ q_h⁴(t) e^{iωt} dt = (π/2) e^{-|ω|}(1 + |ω|)`.
pub fn kernel_closed(omega: f64) -> f64 {
    let w = fabs(omega);
    0.5 * PI * exp(-w) * (1.0 + w)
}

pub fn melnikov_coeff_closed(k: i64, nu_i0: f64, series: &CorrugationSeries) -> MelnikovCoefficient {
    let vk = series.coeff(k);
    let value = if k == 0 {
        Complex64::new(0.0, 0.0)
    } else {
        let kk = k.unsigned_abs() as f64;
        vk * (-0.25 * PI * nu_i0 * exp(-kk * nu_i0) * (kk + 1.0 / nu_i0))
    };
    MelnikovCoefficient { k, value, method: Method::ClosedForm, error: 0.0 }
}

const GK_X: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];
const GK_W: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const G_W: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15_real<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * GK_W[7];
    let mut gauss = fc * G_W[3];
    for j in 0..7 {
        let s = f(c - h * GK_X[j]) + f(c + h * GK_X[j]);
        kron += s * GK_W[j];
        if j % 2 == 1 {
            gauss += s * G_W[j / 2];
        }
    }
    (kron * h, fabs((kron - gauss) * h))
}

/// `∫_{-∞}^{∞} q_h⁴(t) cos(ωt) dt` by per-period Gauss–Kronrod panels on
/// `[0, T]`.  For `ω > 0` the tail beyond `T` is taken from two integrations
/// by parts, `-f(T) sin(ωT)/ω - f'(T) cos(ωT)/ω²`, with the rest bounded by
/// `|f'(T)|/ω²`; `T` is chosen so that this bound stays below `0.01·tol·|I|`.
/// The error estimate compares two panel sizes and adds the tail bound.
pub fn kernel_quadrature(omega: f64, tol: f64) -> Result<(f64, f64), QuadError> {
    let w = fabs(omega);
    let f = |t: f64| {
        let r = 1.0 / (1.0 + t * t);
        r * r * cos(w * t)
    };
    let run = |t_end: f64, scale: f64| -> f64 {
        let mut sum = 0.0;
        let mut comp = 0.0;
        let mut a = 0.0;
        let period = if w > 0.0 { TAU / w } else { f64::INFINITY };
        while a < t_end {
            // Resolve the bump near the origin, at most half a period per
            // panel in the oscillatory region.
            let len = scale * (0.5 * period).min(1.0).min(0.25_f64.max(0.25 * a));
            let b = (a + len).min(t_end);
            let (v, _) = gk15_real(&f, a, b);
            // Kahan summation keeps roundoff below the tiny tail values.
            let y = v - comp;
            let s = sum + y;
            comp = (s - sum) - y;
            sum = s;
            a = b;
        }
        sum
    };
    let coarse = 2.0 * run(50.0, 1.0);
    let target = 0.01 * tol * fabs(coarse).max(1e-300);
    let (t_end, tail, bound) = if w > 0.0 {
        // |f'(T)| ≤ 4/T⁵.
        let t_end = pow(4.0 / (w * w * target), 0.2).clamp(50.0, 2e5);
        let r = 1.0 / (1.0 + t_end * t_end);
        let f0 = r * r;
        let f1 = -4.0 * t_end * r * r * r;
        let tail = -f0 * sin(w * t_end) / w - f1 * cos(w * t_end) / (w * w);
        (t_end, tail, fabs(f1) / (w * w))
    } else {
        let t_end = pow(1.0 / (3.0 * target), 1.0 / 3.0).clamp(50.0, 2e5);
        let b = 1.0 / (3.0 * t_end * t_end * t_end);
        (t_end, 0.0, b)
    };
    let value = 2.0 * (run(t_end, 0.5) + tail);
    let check = 2.0 * (run(t_end, 1.0) + tail);
    let total_err = fabs(value - check) + 2.0 * bound;
    if total_err > tol * fabs(value) {
        return Err(QuadError { estimate: value, error: total_err, intervals: 0 });
    }
    Ok((value, total_err))
}

/// `L^[k]` from `-(V^[k]/2) ∫ q_h⁴ e^{ikνI₀t} dt` by quadrature.
pub fn melnikov_coeff_quadrature(k: i64, nu_i0: f64, series: &CorrugationSeries, tol: f64) -> Result<MelnikovCoefficient, QuadError> {
    let vk = series.coeff(k);
    if k == 0 || vk == Complex64::new(0.0, 0.0) {
        return Ok(MelnikovCoefficient { k, value: Complex64::new(0.0, 0.0), method: Method::Quadrature, error: 0.0 });
    }
    let (i, e) = kernel_quadrature(k as f64 * nu_i0, tol)?;
    Ok(MelnikovCoefficient { k, value: vk * (-0.5 * i), method: Method::Quadrature, error: 0.5 * vk.norm() * e })
}

/// `L(u, θ) = Σ_k L^[k] e^{ik(θ - νI₀u)}`.
pub fn melnikov_potential(u: f64, theta: f64, nu_i0: f64, series: &CorrugationSeries) -> f64 {
    let mut s = 0.0;
    for k in 1..=series.order() as i64 {
        let l = melnikov_coeff_closed(k, nu_i0, series).value;
        s += 2.0 * (l * Complex64::from_polar(1.0, k as f64 * (theta - nu_i0 * u))).re;
    }
    s
}

/// `∂_θ L(u, θ)`.
pub fn melnikov_potential_dtheta(u: f64, theta: f64, nu_i0: f64, series: &CorrugationSeries) -> f64 {
    let mut s = 0.0;
    for k in 1..=series.order() as i64 {
        let l = melnikov_coeff_closed(k, nu_i0, series).value;
        s += 2.0 * (l * Complex64::new(0.0, k as f64) * Complex64::from_polar(1.0, k as f64 * (theta - nu_i0 * u))).re;
    }
    s
}

fn kernel_derivs(s: f64) -> [f64; 4] {
    let r = 1.0 / (1.0 + s * s);
    let r2 = r * r;
    let r3 = r2 * r;
    let r4 = r3 * r;
    let r5 = r4 * r;
    [r2, -4.0 * s * r3, -4.0 * r3 + 24.0 * s * s * r4, 72.0 * s * r4 - 192.0 * s * s * s * r5]
}

/// `∫_{-∞}^{u} q_h⁴(s) e^{iω(s-u)} ds` by Gauss–Kronrod on
/// `[A, u]` plus the integration-by-parts tail expansion at `A`; exact
/// antiderivative for `ω = 0`.
pub fn semi_infinite_kernel(u: f64, omega: f64) -> Complex64 {
    if omega == 0.0 {
        return Complex64::new(u / (2.0 * (1.0 + u * u)) + 0.5 * atan(u) + 0.25 * PI, 0.0);
    }
    let a = u.min(0.0) - (60.0f64).max(40.0 / fabs(omega).max(1e-3));
    let f = |s: f64| -> Complex64 {
        let r = 1.0 / (1.0 + s * s);
        Complex64::from_polar(r * r, omega * (s - u))
    };
    let mut sum = Complex64::new(0.0, 0.0);
    let mut x = a;
    let period = TAU / fabs(omega).max(1e-12);
    while x < u {
        let len = period.min(0.25f64.max(0.25 * fabs(x))).min(0.5);
        let b = (x + len).min(u);
        let c = 0.5 * (x + b);
        let h = 0.5 * (b - x);
        let mut v = f(c) * GK_W[7];
        for j in 0..7 {
            v += (f(c - h * GK_X[j]) + f(c + h * GK_X[j])) * GK_W[j];
        }
        sum += v * h;
        x = b;
    }

    // ∫_{-∞}^{A} g e^{iω(s-u)} ds = e^{iω(A-u)} Σ_j (-1)^j g^{(j)}(A)/(iω)^{j+1}.
    let d = kernel_derivs(a);
    let iw = Complex64::new(0.0, omega);
    let mut tail = Complex64::new(0.0, 0.0);
    let mut pw = iw;
    for (j, dj) in d.iter().enumerate() {
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        tail += sign * dj / pw;
        pw *= iw;
    }
    sum + tail * Complex64::from_polar(1.0, omega * (a - u))
}

/// Fourier modes in θ of `L⁺_out(u, ·)`.
pub fn l_out_plus_modes(u: f64, nu_i0: f64, series: &CorrugationSeries) -> Modes {
    let n = series.order();
    Modes::from_fn(n, |k| {
        if k == 0 {
            return Complex64::new(0.0, 0.0);
        }
        let vk = series.coeff(k);
        if vk == Complex64::new(0.0, 0.0) {
            return vk;
        }
        vk * semi_infinite_kernel(u, k as f64 * nu_i0) * -0.5
    })
}

/// `L⁺_out(u, θ) = -∫_{-∞}^u ½ q_h⁴(s) V(θ + νI₀(s-u)) ds`.
pub fn l_out_plus(u: f64, theta: f64, nu_i0: f64, series: &CorrugationSeries) -> f64 {
    l_out_plus_modes(u, nu_i0, series).eval(theta).re
}

/// `L⁻_out(u, θ) = -L⁺_out(-u, -θ)`.
pub fn l_out_minus(u: f64, theta: f64, nu_i0: f64, series: &CorrugationSeries) -> f64 {
    -l_out_plus(-u, -theta, nu_i0, series)
}

/// Residual `p²/2 - q²/2 + q⁴/2` of the unperturbed Hamilton–Jacobi
/// equation at `q = q_h(u)`, `p = ∂_uΦ₀/p_h`, with `∂_uΦ₀` taken by finite
/// differences of the closed form.
pub fn hj_unperturbed_residual(u: f64) -> f64 {
    let q = q_h(u);
    let ph = p_h(u);
    if ph == 0.0 {
        return 0.0;
    }
    // Central difference of Φ₀ with a step balancing truncation and roundoff.
    let h = 1e-4 * (1.0 + fabs(u));
    let d = (phi0(u - 2.0 * h) - 8.0 * phi0(u - h) + 8.0 * phi0(u + h) - phi0(u + 2.0 * h)) / (12.0 * h);
    let p = d / ph;
    0.5 * p * p - 0.5 * q * q + 0.5 * q * q * q * q
}

/// Closed-form identity behind the Melnikov coefficients, exposed for the
/// residue check: `∫ e^{iωt}/(1+t²)² dt`.
pub fn residue_identity(omega: f64) -> f64 {
    kernel_closed(omega)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrate::{integrate, mcgehee_field, IntegratorConfig};
    use crate::model::ModelParams;
    use proptest::prelude::*;

    fn phys() -> CorrugationSeries {
        CorrugationSeries::physical()
    }

    #[test]
    fn separatrix_examples() {
        assert_eq!(gamma0(0.0, 0.3), [1.0, 0.0, 0.3, 0.0]);
        assert!((q_h(1.0) - 0.5f64.sqrt()).abs() < 1e-15 && (p_h(1.0) - 0.5).abs() < 1e-16);
        assert_eq!(phi0(0.0), 0.0);
        assert!((phi0(1e9) - PI / 4.0).abs() < 1e-9);
        assert!((phi0(1.0) - (-0.25 + PI / 8.0)).abs() < 1e-15);
        assert!((phi0(1.0) - 0.14269908).abs() < 1e-8);
    }

    #[test]
    fn flow_equivariance() {
        let pr = ModelParams::physical_default(5.0, 0.0);
        let cfg = IntegratorConfig::with_tol(1e-13).unwrap();
        for (u, th, t) in [(-2.0, 0.4, 3.0), (0.5, 2.0, 1.7), (1.0, 5.0, -4.0)] {
            let traj = integrate(mcgehee_field(&pr), gamma0(u, th), 0.0, t, &cfg).unwrap();
            let want = gamma0(u + t, th + pr.nu_i0() * t);
            let got = traj.last();
            for i in 0..4 {
                assert!((got[i] - want[i]).abs() < 1e-10, "{i} {got:?} {want:?}");
            }
        }
    }

    #[test]
    fn closed_form_examples() {
        let s = phys();
        assert_eq!(melnikov_coeff_closed(0, 5.0, &s).value, Complex64::new(0.0, 0.0));
        let l1 = melnikov_coeff_closed(1, 5.0, &s).value;
        // Independent evaluation: -(V/2)(π/2)e^{-5}(1+5).
        let oracle = -0.015 * 0.5 * PI * (-5.0f64).exp() * 6.0;
        assert!((l1.re - oracle).abs() < 1e-18 && l1.im == 0.0);
        // The commonly quoted rounding -9.52529e-4 agrees to 3e-5 relative.
        assert!((l1.re + 9.52555e-4).abs() < 1e-9);
        assert!((l1.re / -9.52529e-4 - 1.0).abs() < 3e-5);
        assert_eq!(melnikov_coeff_closed(-2, 3.0, &s).value, melnikov_coeff_closed(2, 3.0, &s).value);
    }

    #[test]
    fn quadrature_oracle() {
        let (v, _) = kernel_quadrature(0.0, 1e-10).unwrap();
        assert!((v - PI / 2.0).abs() < 1e-10);
        // Far out the kernel is e^{-16}-small and summation round-off of the
        // O(1) bump sets a floor near 1e-10 relative.
        let (v, e) = kernel_quadrature(16.0, 1e-9).unwrap();
        let exact = 0.5 * PI * (-16.0f64).exp() * 17.0;
        assert!(((v - exact) / exact).abs() < 1e-9 && e < 1e-9 * exact, "{v} {exact} {e}");
        assert!(kernel_quadrature(16.0, 1e-13).is_err());
        let s = phys();
        for (k, nu) in [(1, 5.0), (2, 3.0)] {
            let c = melnikov_coeff_closed(k, nu, &s).value.re;
            let q = melnikov_coeff_quadrature(k, nu, &s, 1e-9).unwrap().value.re;
            assert!(((q - c) / c).abs() < 1e-8, "{k} {nu} {q} {c}");
        }
    }

    #[test]
    fn residue_identity_by_quadrature() {
        for w in 1..=10 {
            let (q, _) = kernel_quadrature(w as f64, 1e-10).unwrap();
            let c = residue_identity(w as f64);
            assert!(((q - c) / c).abs() < 1e-9, "{w} {q} {c}");
        }
    }

    #[test]
    fn outer_potentials() {
        let s = phys();
        assert!(l_out_plus(-1e4, 0.7, 4.0, &s).abs() < 1e-12);
        let (u, th) = (0.3, 1.0);
        let diff = l_out_plus(u, th, 4.0, &s) - l_out_minus(u, th, 4.0, &s);
        let l = melnikov_potential(u, th, 4.0, &s);
        assert!((diff - l).abs() < 1e-8 * l.abs().max(1e-12), "{diff} {l}");
        let n = 64;
        let mean: f64 = (0..n).map(|j| l_out_plus(0.5, TAU * j as f64 / n as f64, 4.0, &s)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 1e-10);
    }

    #[test]
    fn out_plus_matches_quadrature_of_definition() {
        let s = phys();
        let (u, th, nu) = (-0.7, 2.2, 3.0);
        let (direct, _) = crate::quad::integrate_real(
            |x| {
                let r = 1.0 / (1.0 + x * x);
                -0.5 * r * r * s.value(th + nu * (x - u))
            },
            -400.0,
            u,
            1e-15,
            1e-14,
            20000,
        )
        .unwrap();
        let tail = 0.5 * 0.068 / (3.0 * 400.0f64.powi(3));
        let l = l_out_plus(u, th, nu, &s);
        assert!((l - direct).abs() < 1e-11 + tail, "{l} {direct}");
    }

    #[test]
    fn melnikov_zeros() {
        let s = phys();
        let nu = 5.0;
        let u = 0.4;
        let bound = (melnikov_coeff_closed(2, nu, &s).value / melnikov_coeff_closed(1, nu, &s).value).norm();
        for m in [0.0, PI] {
            let th = nu * u + m;
            let d = melnikov_potential_dtheta(u, th, nu, &s);
            let scale = 2.0 * melnikov_coeff_closed(1, nu, &s).value.norm();
            assert!(d.abs() <= bound * scale + 1e-18);
        }
    }

    proptest! {
        #[test]
        fn phi0_solves_unperturbed_hj(u in -20.0f64..20.0) {
            prop_assume!(u.abs() > 1e-3);
            prop_assert!(hj_unperturbed_residual(u).abs() <= 1e-12 * (1.0 + 1.0 / (u * u)));
        }

        #[test]
        fn separatrix_invariants(u in -1e3f64..1e3) {
            prop_assert!((q_h(u).powi(2) * (1.0 + u * u) - 1.0).abs() < 1e-14);
            let h = 1e-5 * (1.0 + u.abs());
            let dq = (q_h(u + h) - q_h(u - h)) / (2.0 * h);
            prop_assert!((-dq / q_h(u) - p_h(u)).abs() < 1e-8);
        }
    }
}
