//! Log densities and their derivatives for the handful of distributions the
//! models use. Normalising constants are kept so values are true log densities.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;
const LN_2_OVER_PI: f64 = -0.451_582_705_289_454_9;

#[inline]
pub fn normal_lpdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * LN_2PI - sd.ln() - 0.5 * z * z
}

/// Half-normal on `x > 0` with the given scale.
#[inline]
pub fn half_normal_lpdf(x: f64, sd: f64) -> f64 {
    std::f64::consts::LN_2 + normal_lpdf(x, 0.0, sd)
}

/// Cauchy(0, scale) restricted to the positive half-line.
#[inline]
pub fn half_cauchy_lpdf(x: f64, scale: f64) -> f64 {
    let z = x / scale;
    LN_2_OVER_PI - scale.ln() - (z * z).ln_1p()
}

#[inline]
pub fn half_cauchy_dlpdf(x: f64, scale: f64) -> f64 {
    -2.0 * x / (scale * scale + x * x)
}

/// Beta(2, 2) = 6 x (1 - x).
#[inline]
pub fn beta22_lpdf(x: f64) -> f64 {
    6f64.ln() + x.ln() + (-x).ln_1p()
}

#[inline]
pub fn beta22_dlpdf(x: f64) -> f64 {
    1.0 / x - 1.0 / (1.0 - x)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MatrixError {
    #[error("expected a {expected}x{expected} matrix, got {found} entries")]
    Shape { expected: usize, found: usize },
    #[error("matrix is not symmetric at ({row}, {col})")]
    NotSymmetric { row: usize, col: usize },
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("matrix contains a non-finite entry")]
    NonFinite,
}

/// Lower Cholesky factor of a symmetric positive-definite matrix given in
/// row-major order.
pub fn cholesky(n: usize, row_major: &[f64]) -> Result<DMatrix<f64>, MatrixError> {
    if row_major.len() != n * n {
        return Err(MatrixError::Shape {
            expected: n,
            found: row_major.len(),
        });
    }
    if row_major.iter().any(|v| !v.is_finite()) {
        return Err(MatrixError::NonFinite);
    }
    for r in 0..n {
        for c in 0..r {
            let a = row_major[r * n + c];
            let b = row_major[c * n + r];
            if (a - b).abs() > 1e-12 * (a.abs() + b.abs()).max(1e-300) {
                return Err(MatrixError::NotSymmetric { row: r, col: c });
            }
        }
    }
    DMatrix::from_row_slice(n, n, row_major)
        .cholesky()
        .map(|c| c.l())
        .ok_or(MatrixError::NotPositiveDefinite)
}

/// Nearest positive-definite matrix by clamping eigenvalues from below at
/// `floor`. Returns the matrix (row-major) and whether any clamp happened.
pub fn nearest_positive_definite(n: usize, row_major: &[f64], floor: f64) -> (Vec<f64>, bool) {
    let m = DMatrix::from_row_slice(n, n, row_major);
    let sym = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut clamped = false;
    let vals = eig.eigenvalues.map(|v| {
        if v < floor {
            clamped = true;
            floor
        } else {
            v
        }
    });
    let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    let mut out = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            out[r * n + c] = 0.5 * (rebuilt[(r, c)] + rebuilt[(c, r)]);
        }
    }
    (out, clamped)
}

/// Multivariate normal with a precomputed Cholesky factor and precision.
#[derive(Debug, Clone)]
pub struct MvNormal {
    mean: DVector<f64>,
    chol: DMatrix<f64>,
    precision: DMatrix<f64>,
    log_norm: f64,
}

impl MvNormal {
    pub fn new(mean: &[f64], cov_row_major: &[f64]) -> Result<Self, MatrixError> {
        let n = mean.len();
        let chol = cholesky(n, cov_row_major)?;
        let log_det: f64 = 2.0 * (0..n).map(|i| chol[(i, i)].ln()).sum::<f64>();
        let precision = DMatrix::from_row_slice(n, n, cov_row_major)
            .cholesky()
            .ok_or(MatrixError::NotPositiveDefinite)?
            .inverse();
        Ok(Self {
            mean: DVector::from_column_slice(mean),
            chol,
            precision,
            log_norm: -0.5 * (n as f64 * LN_2PI + log_det),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn lpdf(&self, x: &[f64]) -> f64 {
        let d = DVector::from_column_slice(x) - &self.mean;
        // Solve L y = d so the quadratic form is |y|^2.
        let y = self
            .chol
            .solve_lower_triangular(&d)
            .expect("Cholesky factor has a positive diagonal");
        self.log_norm - 0.5 * y.norm_squared()
    }

    /// Gradient `-Sigma^{-1} (x - mean)`, written into `grad`.
    pub fn grad(&self, x: &[f64], grad: &mut [f64]) {
        let d = DVector::from_column_slice(x) - &self.mean;
        let g = -(&self.precision * d);
        grad.copy_from_slice(g.as_slice());
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z = DVector::from_iterator(
            self.dim(),
            (0..self.dim()).map(|_| rng.sample::<f64, _>(StandardNormal)),
        );
        (&self.mean + &self.chol * z).as_slice().to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_cauchy_integrates_to_one() {
        // Substitute x = 2.5 tan(u) on (0, pi/2); trapezoid on a fine grid.
        let n = 200_000;
        let h = std::f64::consts::FRAC_PI_2 / n as f64;
        let mut total = 0.0;
        for i in 1..n {
            let u = i as f64 * h;
            let x = 2.5 * u.tan();
            let dx = 2.5 / u.cos().powi(2);
            total += half_cauchy_lpdf(x, 2.5).exp() * dx * h;
        }
        assert!((total - 1.0).abs() < 1e-4, "{total}");
    }

    #[test]
    fn mvn_matches_independent_normals() {
        let mvn = MvNormal::new(&[1.0, -2.0], &[4.0, 0.0, 0.0, 0.25]).unwrap();
        let x = [0.3, -1.7];
        let direct = normal_lpdf(0.3, 1.0, 2.0) + normal_lpdf(-1.7, -2.0, 0.5);
        assert!((mvn.lpdf(&x) - direct).abs() < 1e-12);
        let mut g = [0.0; 2];
        mvn.grad(&x, &mut g);
        assert!((g[0] - (1.0 - 0.3) / 4.0).abs() < 1e-12);
        assert!((g[1] - (-2.0 + 1.7) / 0.25).abs() < 1e-12);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        assert_eq!(
            cholesky(2, &[1.0, 2.0, 2.0, 1.0]).unwrap_err(),
            MatrixError::NotPositiveDefinite
        );
        assert!(matches!(
            cholesky(2, &[1.0, 0.5, 0.4, 1.0]),
            Err(MatrixError::NotSymmetric { .. })
        ));
    }

    #[test]
    fn projection_fixes_indefinite_matrix() {
        let (fixed, clamped) = nearest_positive_definite(2, &[1.0, 2.0, 2.0, 1.0], 1e-10);
        assert!(clamped);
        assert!(cholesky(2, &fixed).is_ok());
        let (same, clamped) = nearest_positive_definite(2, &[2.0, 0.5, 0.5, 1.0], 1e-10);
        assert!(!clamped);
        assert!((same[1] - 0.5).abs() < 1e-12);
    }
}
