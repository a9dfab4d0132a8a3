//! Float helpers that `core` does not provide.

use core::f64::consts::PI;

pub use libm::{atan, atan2, ceil, cos, exp, fabs, floor, hypot, log, pow, round, sin, sqrt, tanh};

pub const TAU: f64 = 2.0 * PI;

/// Reduces an angle to `[0, 2π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let r = libm::fmod(theta, TAU);
    let r = if r < 0.0 { r + TAU } else { r };
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Reduces an angle to `(-π, π]`.
pub fn wrap_pi(theta: f64) -> f64 {
    let r = wrap_angle(theta);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

pub fn powi(x: f64, n: i32) -> f64 {
    let mut base = if n < 0 { 1.0 / x } else { x };
    let mut e = n.unsigned_abs();
    let mut acc = 1.0;
    while e > 0 {
        if e & 1 == 1 {
            acc *= base;
        }
        base *= base;
        e >>= 1;
    }
    acc
}

/// Brent's method on a bracketing interval.  Returns the root and the
/// function value there.
pub fn brent<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, fa: f64, fb: f64, xtol: f64, max_iter: usize) -> (f64, f64) {
    let (mut a, mut b, mut fa, mut fb) = (a, b, fa, fb);
    if fa == 0.0 {
        return (a, fa);
    }
    if fb == 0.0 {
        return (b, fb);
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for _ in 0..max_iter {
        if (fb > 0.0) == (fc > 0.0) {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fabs(fc) < fabs(fb) {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * fabs(b) + 0.5 * xtol;
        let m = 0.5 * (c - b);
        if fabs(m) <= tol || fb == 0.0 {
            return (b, fb);
        }
        if fabs(e) >= tol && fabs(fa) > fabs(fb) {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - fabs(tol * q)).min(fabs(e * q)) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = d;
            }
        } else {
            d = m;
            e = d;
        }
        a = b;
        fa = fb;
        b += if fabs(d) > tol { d } else if m > 0.0 { tol } else { -tol };
        fb = f(b);
    }
    (b, fb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_ranges() {
        assert!((wrap_angle(-0.5) - (TAU - 0.5)).abs() < 1e-15);
        assert_eq!(wrap_angle(TAU), 0.0);
        assert!((wrap_pi(3.5 * PI) + 0.5 * PI).abs() < 1e-14);
    }

    #[test]
    fn brent_finds_cube_root() {
        let (x, fx) = brent(|x| x * x * x - 2.0, 0.0, 2.0, -2.0, 6.0, 1e-15, 200);
        assert!((x - libm::cbrt(2.0)).abs() < 1e-14, "{x} {fx}");
    }

    #[test]
    fn powi_matches_pow() {
        for n in -5..9 {
            assert!((powi(1.3, n) - pow(1.3, n as f64)).abs() < 1e-13);
        }
    }
}
