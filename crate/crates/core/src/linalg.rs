//! Small dense and banded linear-algebra helpers.
//!
//! Banded symmetric matrices are stored by lower diagonals: `band[d][i]` holds
//! the entry at row `i + d`, column `i`, so `band[0]` is the main diagonal.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Cholesky factor of a symmetric positive definite band matrix.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bandwidth: usize,
    // l[d][i] = L[i + d, i]
    l: Vec<Vec<f64>>,
}

impl BandedCholesky {
    pub fn factor(band: &[Vec<f64>]) -> Result<Self> {
        let bandwidth = band.len().saturating_sub(1);
        let n = band.first().map_or(0, Vec::len);
        let mut l: Vec<Vec<f64>> = (0..=bandwidth).map(|d| vec![0.0; n.saturating_sub(d)]).collect();
        for j in 0..n {
            let mut diag = band[0][j];
            for k in j.saturating_sub(bandwidth)..j {
                let v = l[j - k][k];
                diag -= v * v;
            }
            if !(diag > 0.0) || !diag.is_finite() {
                return Err(Error::numeric(format!("band matrix not positive definite at pivot {j} ({diag:e})")));
            }
            let ljj = diag.sqrt();
            l[0][j] = ljj;
            for d in 1..=bandwidth.min(n - 1 - j) {
                let i = j + d;
                let mut s = band[d][j];
                for k in i.saturating_sub(bandwidth)..j {
                    s -= l[i - k][k] * l[j - k][k];
                }
                l[d][j] = s / ljj;
            }
        }
        Ok(BandedCholesky { n, bandwidth, l })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Solve `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        let p = self.bandwidth;
        for i in 0..n {
            let mut s = b[i];
            for k in i.saturating_sub(p)..i {
                s -= self.l[i - k][k] * b[k];
            }
            b[i] = s / self.l[0][i];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in (i + 1)..(i + p + 1).min(n) {
                s -= self.l[k - i][i] * b[k];
            }
            b[i] = s / self.l[0][i];
        }
    }
}

/// Cholesky factorization with one diagonal-jitter retry.
///
/// On failure the matrix is retried once with `1e-10 * trace / n` added to
/// the diagonal.
pub fn cholesky_with_jitter(m: DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    let n = m.nrows();
    match Cholesky::new(m.clone()) {
        Some(c) => Ok(c),
        None => {
            let jitter = 1e-10 * m.trace().abs().max(f64::MIN_POSITIVE) / n.max(1) as f64;
            log::warn!("{what}: Cholesky failed, retrying with diagonal jitter {jitter:e}");
            let mut m = m;
            for i in 0..n {
                m[(i, i)] += jitter;
            }
            Cholesky::new(m).ok_or_else(|| Error::numeric(format!("{what} is not positive definite")))
        }
    }
}

/// Cholesky factorization without retry; fails with a numeric-domain error.
pub fn cholesky(m: DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m).ok_or_else(|| Error::numeric(format!("{what} is not positive definite")))
}

/// `log |A|` from a Cholesky factor.
pub fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// Symmetrize in place by averaging with the transpose.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn dvec(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}
