//! Semi-infinite oscillatory convolutions
//! `Y(x) = ∫_{-∞}^{x} F(s) e^{iω(s-x)} ds` on Gauss–Lobatto panels.
//!
//! `F` is known at the panel nodes.  Inside a panel the product with the
//! Lagrange basis is integrated against the exact kernel by a fine
//! Gauss–Legendre rule; panels are chained through the carry factor
//! `e^{iω(a-x)}`, and the part left of the grid is an asymptotic tail.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::math::{fabs, floor, log, pow};
use crate::quad::{gauss_legendre, gauss_lobatto};

pub const NODES: usize = 16;
const FINE: usize = 48;

/// A partition of `[left, right]` into Lobatto panels, built leftward from
/// `right`.  Panel lengths are powers of two so that kernel weights can be
/// shared between panels.
#[derive(Debug, Clone)]
pub struct PanelGrid {
    /// Panel endpoints `(a, b)` in increasing order.
    panels: Vec<(f64, f64)>,
    xi: Vec<f64>,
    bary: Vec<f64>,
    lobatto_w: Vec<f64>,
}

fn pow2_floor(x: f64) -> f64 {
    pow(2.0, floor(log(x) / core::f64::consts::LN_2))
}

impl PanelGrid {
    /// `max_len(x)` bounds the length of the panel whose right end is `x`.
    pub fn build<M: Fn(f64) -> f64>(left: f64, right: f64, max_len: M) -> Self {
        assert!(left < right);
        let mut panels = Vec::new();
        let mut x = right;
        while x > left {
            let len = pow2_floor(max_len(x).max(1e-6));
            panels.push((x - len, x));
            x -= len;
        }
        panels.reverse();
        let (xi, lobatto_w) = gauss_lobatto(NODES);
        let bary = (0..NODES)
            .map(|j| {
                let mut p = 1.0;
                for m in 0..NODES {
                    if m != j {
                        p *= xi[j] - xi[m];
                    }
                }
                1.0 / p
            })
            .collect();
        Self { panels, xi, bary, lobatto_w }
    }

    pub fn panels(&self) -> &[(f64, f64)] {
        &self.panels
    }

    pub fn n_panels(&self) -> usize {
        self.panels.len()
    }

    pub fn len(&self) -> usize {
        self.panels.len() * NODES
    }

    pub fn is_empty(&self) -> bool {
        self.panels.is_empty()
    }

    pub fn left(&self) -> f64 {
        self.panels[0].0
    }

    pub fn right(&self) -> f64 {
        self.panels[self.panels.len() - 1].1
    }

    /// Node `i` of panel `p`.
    pub fn node(&self, p: usize, i: usize) -> f64 {
        let (a, b) = self.panels[p];
        a + 0.5 * (b - a) * (self.xi[i] + 1.0)
    }

    /// All nodes, panel by panel (shared endpoints repeated).
    pub fn nodes(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for p in 0..self.panels.len() {
            for i in 0..NODES {
                out.push(self.node(p, i));
            }
        }
        out
    }

    fn panel_of(&self, x: f64) -> usize {
        let idx = self.panels.partition_point(|&(_, b)| b < x);
        idx.min(self.panels.len() - 1)
    }

    /// Lagrange basis values at reference coordinate `t ∈ [-1, 1]`.
    fn basis(&self, t: f64, out: &mut [f64; NODES]) {
        for j in 0..NODES {
            if t == self.xi[j] {
                *out = [0.0; NODES];
                out[j] = 1.0;
                return;
            }
        }
        let mut den = 0.0;
        for j in 0..NODES {
            let c = self.bary[j] / (t - self.xi[j]);
            out[j] = c;
            den += c;
        }
        for v in out.iter_mut() {
            *v /= den;
        }
    }

    /// Polynomial interpolation of nodal values at `x` (clamped to the grid).
    pub fn interpolate(&self, values: &[Complex64], x: f64) -> Complex64 {
        let p = self.panel_of(x);
        let (a, b) = self.panels[p];
        let t = (2.0 * (x - a) / (b - a) - 1.0).clamp(-1.0, 1.0);
        let mut l = [0.0; NODES];
        self.basis(t, &mut l);
        let base = p * NODES;
        (0..NODES).map(|j| values[base + j] * l[j]).sum()
    }

    /// Nodal derivative of the panel interpolants.
    pub fn differentiate(&self, values: &[Complex64]) -> Vec<Complex64> {
        let d = self.diff_matrix();
        let mut out = alloc::vec![Complex64::new(0.0, 0.0); values.len()];
        for (p, &(a, b)) in self.panels.iter().enumerate() {
            let s = 2.0 / (b - a);
            let base = p * NODES;
            for i in 0..NODES {
                let mut acc = Complex64::new(0.0, 0.0);
                for j in 0..NODES {
                    acc += values[base + j] * d[i * NODES + j];
                }
                out[base + i] = acc * s;
            }
        }
        out
    }

    fn diff_matrix(&self) -> Vec<f64> {
        let mut d = alloc::vec![0.0; NODES * NODES];
        for i in 0..NODES {
            let mut diag = 0.0;
            for j in 0..NODES {
                if i != j {
                    let v = (self.bary[j] / self.bary[i]) / (self.xi[i] - self.xi[j]);
                    d[i * NODES + j] = v;
                    diag -= v;
                }
            }
            d[i * NODES + i] = diag;
        }
        d
    }

    /// `∫ f` over the grid by the Lobatto rule.
    pub fn integrate(&self, values: &[Complex64]) -> Complex64 {
        let mut s = Complex64::new(0.0, 0.0);
        for (p, &(a, b)) in self.panels.iter().enumerate() {
            let h = 0.5 * (b - a);
            for i in 0..NODES {
                s += values[p * NODES + i] * (self.lobatto_w[i] * h);
            }
        }
        s
    }
}

/// Cached kernel weights for one grid.
#[derive(Debug, Clone)]
pub struct Volterra {
    grid: PanelGrid,
    cache: BTreeMap<(u64, u64), Vec<Complex64>>,
    fine: (Vec<f64>, Vec<f64>),
}

impl Volterra {
    pub fn new(grid: PanelGrid) -> Self {
        Self { grid, cache: BTreeMap::new(), fine: gauss_legendre(FINE) }
    }

    pub fn grid(&self) -> &PanelGrid {
        &self.grid
    }

    /// `W_ij = ∫_a^{x_i} ℓ_j(s) e^{iω(s-x_i)} ds` for a panel of length `len`.
    fn weights(&mut self, len: f64, omega: f64) -> &Vec<Complex64> {
        let key = (len.to_bits(), omega.to_bits());
        if !self.cache.contains_key(&key) {
            let mut w = alloc::vec![Complex64::new(0.0, 0.0); NODES * NODES];
            let mut l = [0.0; NODES];
            for i in 1..NODES {
                // Sub-interval [-1, ξ_i] in reference coordinates.
                let hi = self.grid.xi[i];
                let half = 0.5 * (hi + 1.0);
                for (g, gw) in self.fine.0.iter().zip(&self.fine.1) {
                    let t = -1.0 + half * (g + 1.0);
                    self.grid.basis(t, &mut l);
                    let ds = 0.5 * len * (t - hi);
                    let k = Complex64::from_polar(gw * half * 0.5 * len, omega * ds);
                    for j in 0..NODES {
                        w[i * NODES + j] += k * l[j];
                    }
                }
            }
            self.cache.insert(key, w);
        }
        &self.cache[&key]
    }

    /// Values of `Y` at all grid nodes given nodal values of `F`.
    pub fn convolve(&mut self, f: &[Complex64], omega: f64) -> Vec<Complex64> {
        let carry = self.tail(f, omega);
        self.convolve_from(f, omega, carry)
    }

    /// As [`Volterra::convolve`] with the value of `Y` at the left end of the
    /// grid supplied by the caller.
    pub fn convolve_from(&mut self, f: &[Complex64], omega: f64, left_value: Complex64) -> Vec<Complex64> {
        let n = self.grid.len();
        assert_eq!(f.len(), n);
        let mut y = alloc::vec![Complex64::new(0.0, 0.0); n];
        let mut carry = left_value;
        for p in 0..self.grid.n_panels() {
            let (a, b) = self.grid.panels[p];
            let len = b - a;
            let base = p * NODES;
            let xs: Vec<f64> = (0..NODES).map(|i| self.grid.node(p, i)).collect();
            let w = self.weights(len, omega).clone();
            for i in 0..NODES {
                let mut acc = carry * Complex64::from_polar(1.0, omega * (a - xs[i]));
                for j in 0..NODES {
                    acc += w[i * NODES + j] * f[base + j];
                }
                y[base + i] = acc;
            }
            carry = y[base + NODES - 1];
        }
        y
    }

    /// `∫_{-∞}^{a} F e^{iω(s-a)} ds` at the left end of the grid: the
    /// three-term integration-by-parts expansion for `ω ≠ 0`, a power-law
    /// fit for `ω = 0`.
    fn tail(&self, f: &[Complex64], omega: f64) -> Complex64 {
        let first = &f[..NODES];
        let d1 = self.grid.differentiate_panel(0, first);
        let a = self.grid.left();
        let f0 = first[0];
        if omega != 0.0 {
            let d2 = self.grid.differentiate_panel(0, &d1);
            let iw = Complex64::new(0.0, omega);
            return f0 / iw - d1[0] / (iw * iw) + d2[0] / (iw * iw * iw);
        }
        if f0.norm() == 0.0 {
            return f0;
        }
        let mut m = (d1[0] / f0).re * fabs(a);
        if !(m > 1.5) || !m.is_finite() {
            m = 4.0;
        }
        f0 * (fabs(a) / (m - 1.0))
    }
}

impl PanelGrid {
    fn differentiate_panel(&self, p: usize, values: &[Complex64]) -> Vec<Complex64> {
        let d = self.diff_matrix();
        let (a, b) = self.panels[p];
        let s = 2.0 / (b - a);
        (0..NODES)
            .map(|i| {
                let mut acc = Complex64::new(0.0, 0.0);
                for j in 0..NODES {
                    acc += values[j] * d[i * NODES + j];
                }
                acc * s
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::separatrix::semi_infinite_kernel;

    fn grid() -> PanelGrid {
        PanelGrid::build(-200.0, -0.5, |x: f64| (0.25 * fabs(x).min((1.0 + x * x).sqrt())).min(24.0 / 10.0))
    }

    #[test]
    fn interpolation_and_derivative() {
        let g = grid();
        let xs = g.nodes();
        let v: Vec<Complex64> = xs.iter().map(|x| Complex64::new(1.0 / (1.0 + x * x), 0.0)).collect();
        let d = g.differentiate(&v);
        for (x, dv) in xs.iter().zip(&d) {
            let exact = -2.0 * x / (1.0 + x * x).powi(2);
            assert!((dv.re - exact).abs() < 1e-11, "{x}");
        }
        for x in [-150.3, -3.7, -0.61] {
            let y = g.interpolate(&v, x).re;
            assert!((y - 1.0 / (1.0 + x * x)).abs() < 1e-14);
        }
    }

    #[test]
    fn convolution_matches_direct_quadrature() {
        let mut v = Volterra::new(grid());
        let xs = v.grid().nodes();
        let f: Vec<Complex64> = xs.iter().map(|x| Complex64::new(1.0 / (1.0 + x * x).powi(2), 0.0)).collect();
        for omega in [0.0, 3.0, -6.5] {
            let y = v.convolve(&f, omega);
            for idx in [5, xs.len() / 2, xs.len() - 1] {
                let exact = semi_infinite_kernel(xs[idx], omega);
                assert!((y[idx] - exact).norm() < 1e-11, "ω={omega} x={} {} {}", xs[idx], y[idx], exact);
            }
        }
    }

    #[test]
    fn solves_the_transport_ode() {
        // Y' + iωY = F.
        let mut v = Volterra::new(grid());
        let xs = v.grid().nodes();
        let f: Vec<Complex64> = xs.iter().map(|x| Complex64::new(x.sin() / (1.0 + x * x).powi(2), 0.0)).collect();
        let y = v.convolve(&f, 2.0);
        let dy = v.grid().differentiate(&y);
        for i in 0..xs.len() {
            let r = dy[i] + Complex64::new(0.0, 2.0) * y[i] - f[i];
            assert!(r.norm() < 1e-10, "{} {}", xs[i], r);
        }
    }
}
