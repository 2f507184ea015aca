//! Independent reference implementations used only by tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

/// `Q R⁻¹ Qᵀ` from the textbook band matrices, assembled densely.
pub fn dense_roughness(t: &[f64]) -> DMatrix<f64> {
    let n = t.len();
    let h: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
    let mut q = DMatrix::zeros(n, n - 2);
    let mut r = DMatrix::zeros(n - 2, n - 2);
    for j in 0..n - 2 {
        q[(j, j)] = 1.0 / h[j];
        q[(j + 1, j)] = -1.0 / h[j] - 1.0 / h[j + 1];
        q[(j + 2, j)] = 1.0 / h[j + 1];
        r[(j, j)] = (h[j] + h[j + 1]) / 3.0;
        if j + 1 < n - 2 {
            r[(j, j + 1)] = h[j + 1] / 6.0;
            r[(j + 1, j)] = h[j + 1] / 6.0;
        }
    }
    let rinv = r.try_inverse().expect("R is positive definite");
    &q * rinv * q.transpose()
}

/// Natural cubic interpolant through `(t, g)`, written from the textbook
/// piecewise form with a dense solve for the interior second derivatives.
pub struct Interpolant {
    t: Vec<f64>,
    g: Vec<f64>,
    m: Vec<f64>,
}

impl Interpolant {
    pub fn new(t: &[f64], g: &[f64]) -> Self {
        let n = t.len();
        let h: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
        let mut a = DMatrix::zeros(n - 2, n - 2);
        let mut b = DVector::zeros(n - 2);
        for i in 1..n - 1 {
            let r = i - 1;
            a[(r, r)] = (h[i - 1] + h[i]) / 3.0;
            if r > 0 {
                a[(r, r - 1)] = h[i - 1] / 6.0;
            }
            if r + 1 < n - 2 {
                a[(r, r + 1)] = h[i] / 6.0;
            }
            b[r] = (g[i + 1] - g[i]) / h[i] - (g[i] - g[i - 1]) / h[i - 1];
        }
        let inner = a.lu().solve(&b).expect("nonsingular");
        let mut m = vec![0.0; n];
        m[1..n - 1].copy_from_slice(inner.as_slice());
        Interpolant { t: t.to_vec(), g: g.to_vec(), m }
    }

    fn segment(&self, s: f64) -> usize {
        let n = self.t.len();
        (0..n - 1).find(|&i| s <= self.t[i + 1]).unwrap_or(n - 2)
    }

    pub fn second(&self, s: f64) -> f64 {
        let i = self.segment(s);
        let h = self.t[i + 1] - self.t[i];
        (self.m[i] * (self.t[i + 1] - s) + self.m[i + 1] * (s - self.t[i])) / h
    }

    pub fn first(&self, s: f64) -> f64 {
        let i = self.segment(s);
        let (a, b) = (self.t[i], self.t[i + 1]);
        let h = b - a;
        let (mi, mj) = (self.m[i], self.m[i + 1]);
        -mi * (b - s).powi(2) / (2.0 * h) + mj * (s - a).powi(2) / (2.0 * h) + (self.g[i + 1] - self.g[i]) / h
            - h * (mj - mi) / 6.0
    }
}

#[allow(clippy::too_many_arguments)]
fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
        return left + right + (left + right - whole) / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
        + simpson(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// Adaptive Simpson quadrature.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson(f, a, b, fa, fm, fb, whole, tol, 40)
}

/// `∫ g''(s)² ds` of the natural interpolant, by quadrature per knot interval.
pub fn quadrature_roughness(t: &[f64], g: &[f64]) -> f64 {
    let spline = Interpolant::new(t, g);
    t.windows(2)
        .map(|w| {
            let f = |s: f64| spline.second(s).powi(2);
            let scale = f(w[0]).max(f(w[1])).max(1e-300) * (w[1] - w[0]);
            integrate(&f, w[0], w[1], 1e-12 * scale)
        })
        .sum()
}

/// Projector onto span{1, t}.
pub fn linear_projector(t: &[f64]) -> DMatrix<f64> {
    let x = DMatrix::from_fn(t.len(), 2, |i, c| if c == 0 { 1.0 } else { t[i] });
    let xtx = (x.transpose() * &x).try_inverse().unwrap();
    &x * xtx * x.transpose()
}

/// Inverse-Wishart `IW(ν, w·I)` as the inverse of a sum of `ν` outer products
/// of `N(0, I/w)` vectors (integer `ν` only).
pub fn inverse_wishart_outer<R: Rng>(nu: usize, w: f64, p: usize, rng: &mut R) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(p, p);
    for _ in 0..nu {
        let z = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal) / w.sqrt());
        s += &z * z.transpose();
    }
    s.try_inverse().expect("full rank with nu >= p")
}

/// Draw from `N(0, P⁻¹)` for a positive definite precision `P`.
pub fn gaussian_from_precision<R: Rng>(p: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
    let cov = p.clone().try_inverse().unwrap();
    let l = cov.cholesky().expect("positive definite").unpack();
    let z = DVector::from_fn(p.nrows(), |_, _| rng.sample::<f64, _>(StandardNormal));
    l * z
}

/// Kolmogorov distance between a sample and a continuous CDF.
pub fn kolmogorov(sample: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    sample.sort_by(f64::total_cmp);
    let n = sample.len() as f64;
    sample
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Squared standard error of the mean of a correlated trace, from batch means.
pub fn batch_se2(x: &[f64], batches: usize) -> f64 {
    let size = x.len() / batches;
    let means: Vec<f64> = x.chunks_exact(size).map(mean).collect();
    variance(&means) / means.len() as f64
}
