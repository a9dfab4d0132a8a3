//! Small dense linear least squares.

use alloc::vec::Vec;

use crate::math::sqrt;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit {
    pub coeffs: Vec<f64>,
    /// Parameter covariance `s²(AᵀA)⁻¹` with `s²` the residual variance.
    pub covariance: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
}

impl LinearFit {
    pub fn std_err(&self, i: usize) -> f64 {
        sqrt(self.covariance[i][i].max(0.0))
    }

    pub fn rms(&self) -> f64 {
        let n = self.residuals.len().max(1) as f64;
        sqrt(self.residuals.iter().map(|r| r * r).sum::<f64>() / n)
    }
}

/// Inverts a symmetric positive definite matrix by Gauss–Jordan with
/// partial pivoting; `None` when singular.
fn invert(mut a: Vec<Vec<f64>>) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut inv: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[piv][c].abs() < 1e-300 {
            return None;
        }
        a.swap(c, piv);
        inv.swap(c, piv);
        let d = a[c][c];
        for j in 0..n {
            a[c][j] /= d;
            inv[c][j] /= d;
        }
        for r in 0..n {
            if r != c {
                let f = a[r][c];
                if f != 0.0 {
                    for j in 0..n {
                        a[r][j] -= f * a[c][j];
                        inv[r][j] -= f * inv[c][j];
                    }
                }
            }
        }
    }
    Some(inv)
}

/// Least-squares solution of `rows · x ≈ y`.  Columns are normalised before
/// forming the normal equations.
pub fn least_squares(rows: &[Vec<f64>], y: &[f64]) -> Option<LinearFit> {
    let m = rows.len();
    let n = rows.first()?.len();
    if m < n {
        return None;
    }
    let scale: Vec<f64> = (0..n).map(|j| sqrt(rows.iter().map(|r| r[j] * r[j]).sum::<f64>()).max(1e-300)).collect();
    let mut ata = alloc::vec![alloc::vec![0.0; n]; n];
    let mut aty = alloc::vec![0.0; n];
    for (r, yi) in rows.iter().zip(y) {
        for i in 0..n {
            let ri = r[i] / scale[i];
            aty[i] += ri * yi;
            for j in 0..n {
                ata[i][j] += ri * r[j] / scale[j];
            }
        }
    }
    let inv = invert(ata)?;
    let coeffs: Vec<f64> = (0..n).map(|i| (0..n).map(|j| inv[i][j] * aty[j]).sum::<f64>() / scale[i]).collect();
    let residuals: Vec<f64> = rows.iter().zip(y).map(|(r, yi)| yi - r.iter().zip(&coeffs).map(|(a, c)| a * c).sum::<f64>()).collect();
    let dof = (m - n).max(1) as f64;
    let s2 = residuals.iter().map(|r| r * r).sum::<f64>() / dof;
    let covariance = (0..n).map(|i| (0..n).map(|j| s2 * inv[i][j] / (scale[i] * scale[j])).collect()).collect();
    Some(LinearFit { coeffs, covariance, residuals })
}

/// Fits `y = a + b·x`; returns the fit with coefficients `[a, b]`.
pub fn line(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    let rows: Vec<Vec<f64>> = x.iter().map(|x| alloc::vec![1.0, *x]).collect();
    least_squares(&rows, y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exact_model() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        let rows: Vec<Vec<f64>> = xs.iter().map(|x: &f64| alloc::vec![1.0, *x, x.ln()]).collect();
        let y: Vec<f64> = xs.iter().map(|x: &f64| 0.5 - 1.3 * x + 0.7 * x.ln()).collect();
        let f = least_squares(&rows, &y).unwrap();
        for (c, e) in f.coeffs.iter().zip([0.5, -1.3, 0.7]) {
            assert!((c - e).abs() < 1e-10);
        }
        assert!(f.rms() < 1e-12);
        let l = line(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.1]).unwrap();
        assert!((l.coeffs[1] - 2.05).abs() < 1e-12 && l.std_err(1) > 0.0);
    }
}
