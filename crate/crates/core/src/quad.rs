//! Gaussian rules and adaptive Gauss–Kronrod quadrature.

use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
use thiserror::Error;

use crate::math::{cos, fabs};

#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("quadrature did not converge: estimate {estimate}, error {error:e} after {intervals} intervals")]
pub struct QuadError {
    pub estimate: f64,
    pub error: f64,
    pub intervals: usize,
}

/// Legendre polynomial `P_n(x)` and its derivative.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, nodes ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = alloc::vec![0.0; n];
    let mut w = alloc::vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = cos(PI * (i as f64 + 0.75) / (n as f64 + 0.5));
        for _ in 0..100 {
            let (p, dp) = legendre(n, z);
            let dz = p / dp;
            z -= dz;
            if fabs(dz) < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre(n, z);
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

/// Gauss–Lobatto nodes and weights on `[-1, 1]` (endpoints included).
pub fn gauss_lobatto(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 2);
    let m = n - 1;
    let mut x = alloc::vec![0.0; n];
    let mut w = alloc::vec![0.0; n];
    x[0] = -1.0;
    x[m] = 1.0;
    let wend = 2.0 / (m as f64 * n as f64);
    w[0] = wend;
    w[m] = wend;
    // Interior nodes are the zeros of P'_m.
    for i in 1..m {
        let mut z = -cos(PI * i as f64 / m as f64);
        for _ in 0..100 {
            let (p, dp) = legendre(m, z);
            // P''_m from the Legendre equation.
            let d2p = (2.0 * z * dp - (m * (m + 1)) as f64 * p) / (1.0 - z * z);
            let dz = dp / d2p;
            z -= dz;
            if fabs(dz) < 1e-16 {
                break;
            }
        }
        let (p, _) = legendre(m, z);
        x[i] = z;
        w[i] = 2.0 / ((m * n) as f64 * p * p);
    }
    (x, w)
}

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15<F: FnMut(f64) -> Complex64>(f: &mut F, a: f64, b: f64) -> (Complex64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kron += s * WGK[j];
        if j % 2 == 1 {
            gauss += s * WG[j / 2];
        }
    }
    let kron = kron * h;
    let gauss = gauss * h;
    (kron, (kron - gauss).norm())
}

/// Adaptive Gauss–Kronrod 7/15 for complex integrands on a finite interval.
/// Stops when the summed error estimate is below `max(abs_tol, rel_tol·|I|)`.
pub fn integrate_complex<F: FnMut(f64) -> Complex64>(mut f: F, a: f64, b: f64, abs_tol: f64, rel_tol: f64, max_intervals: usize) -> Result<(Complex64, f64), QuadError> {
    let (v, e) = gk15(&mut f, a, b);
    let mut parts: Vec<(f64, f64, Complex64, f64)> = alloc::vec![(a, b, v, e)];
    loop {
        let total: Complex64 = parts.iter().map(|p| p.2).sum();
        let err: f64 = parts.iter().map(|p| p.3).sum();
        if err <= abs_tol.max(rel_tol * total.norm()) {
            return Ok((total, err));
        }
        if parts.len() >= max_intervals {
            return Err(QuadError { estimate: total.re, error: err, intervals: parts.len() });
        }
        let (idx, _) = parts.iter().enumerate().fold((0, -1.0), |acc, (i, p)| if p.3 > acc.1 { (i, p.3) } else { acc });
        let (pa, pb, _, _) = parts.swap_remove(idx);
        let mid = 0.5 * (pa + pb);
        let (v1, e1) = gk15(&mut f, pa, mid);
        let (v2, e2) = gk15(&mut f, mid, pb);
        parts.push((pa, mid, v1, e1));
        parts.push((mid, pb, v2, e2));
    }
}

/// Real-valued wrapper around [`integrate_complex`].
pub fn integrate_real<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, abs_tol: f64, rel_tol: f64, max_intervals: usize) -> Result<(f64, f64), QuadError> {
    integrate_complex(|x| Complex64::new(f(x), 0.0), a, b, abs_tol, rel_tol, max_intervals).map(|(v, e)| (v.re, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{exp, sin};

    #[test]
    fn legendre_rule_is_exact_for_polynomials() {
        let (x, w) = gauss_legendre(12);
        let s: f64 = w.iter().sum();
        assert!((s - 2.0).abs() < 1e-14);
        let i: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(22)).sum();
        assert!((i - 2.0 / 23.0).abs() < 1e-14);
        assert!(x.windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn lobatto_rule_is_exact_for_polynomials() {
        let (x, w) = gauss_lobatto(16);
        assert_eq!((x[0], x[15]), (-1.0, 1.0));
        let i: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(28)).sum();
        assert!((i - 2.0 / 29.0).abs() < 1e-13, "{i}");
        assert!(x.windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn adaptive_integrals() {
        let (v, _) = integrate_real(|x| exp(-x * x), -8.0, 8.0, 1e-14, 1e-14, 1000).unwrap();
        assert!((v - PI.sqrt()).abs() < 1e-13);
        let (v, _) = integrate_real(|x| sin(50.0 * x), 0.0, PI, 1e-14, 1e-14, 1000).unwrap();
        assert!(v.abs() < 1e-13);
        let r = integrate_real(|x| 1.0 / x.abs().sqrt().max(1e-300), -1.0, 1.0, 1e-15, 1e-15, 4);
        assert!(r.is_err());
    }
}
