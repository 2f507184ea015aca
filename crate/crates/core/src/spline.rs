//! Natural cubic spline machinery: roughness matrix, smoothing operator,
//! derivative evaluation and interpolation.
//!
//! The construction follows the banded value/second-derivative representation
//! of a natural cubic spline. With knot spacings `h_i = t_{i+1} - t_i`, let
//! `Q` be the `n x (n-2)` tridiagonal matrix of divided-difference weights and
//! `R` the `(n-2) x (n-2)` symmetric tridiagonal matrix
//!
//! ```text
//! R[j, j]   = (h_{j-1} + h_j) / 3
//! R[j, j+1] = h_j / 6
//! ```
//!
//! The interior second derivatives of the interpolant of `g` solve
//! `R γ = Qᵀ g`, and `∫ g''(t)² dt = γᵀ R γ = gᵀ Q R⁻¹ Qᵀ g`, so the roughness
//! matrix is `K = Q R⁻¹ Qᵀ`. Smoothing uses the Reinsch form
//! `(R + λ QᵀQ) γ = Qᵀ μ`, `S_λ μ = μ - λ Q γ`, which is the same linear map as
//! `(I + λK)⁻¹` but only needs a pentadiagonal factorization.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::linalg::BandedCholesky;

/// Strictly increasing, finite knot locations (at least three).
#[derive(Debug, Clone, PartialEq)]
pub struct KnotGrid {
    knots: Vec<f64>,
}

impl KnotGrid {
    pub fn new(knots: Vec<f64>) -> Result<Self> {
        if knots.len() < 3 {
            return Err(Error::invalid(format!("a natural cubic spline needs at least 3 knots, got {}", knots.len())));
        }
        if let Some(bad) = knots.iter().find(|k| !k.is_finite()) {
            return Err(Error::invalid(format!("non-finite knot {bad}")));
        }
        if let Some(w) = knots.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::invalid(format!("knots must be strictly increasing ({} then {})", w[0], w[1])));
        }
        Ok(KnotGrid { knots })
    }

    pub fn len(&self) -> usize {
        self.knots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.knots.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.knots
    }

    pub fn first(&self) -> f64 {
        self.knots[0]
    }

    pub fn last(&self) -> f64 {
        self.knots[self.knots.len() - 1]
    }

    pub fn span(&self) -> f64 {
        self.last() - self.first()
    }

    pub fn contains(&self, s: f64) -> bool {
        s >= self.first() && s <= self.last()
    }

    fn spacings(&self) -> Vec<f64> {
        self.knots.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Index `i` of the interval `[t_i, t_{i+1}]` containing `s`.
    fn interval(&self, s: f64) -> usize {
        let n = self.knots.len();
        self.knots.partition_point(|&k| k <= s).saturating_sub(1).min(n - 2)
    }

    fn check_inside(&self, s: f64) -> Result<()> {
        if self.contains(s) {
            Ok(())
        } else {
            Err(Error::invalid(format!("evaluation point {s} outside knot span [{}, {}]", self.first(), self.last())))
        }
    }
}

/// The banded `Q`, `R` pair for a knot grid.
#[derive(Debug, Clone)]
pub(crate) struct BandedPenalty {
    h: Vec<f64>,
    r_band: Vec<Vec<f64>>,
    r_chol: BandedCholesky,
}

impl BandedPenalty {
    pub(crate) fn new(knots: &KnotGrid) -> Result<Self> {
        let h = knots.spacings();
        let m = knots.len() - 2;
        let diag: Vec<f64> = (0..m).map(|j| (h[j] + h[j + 1]) / 3.0).collect();
        let off: Vec<f64> = (0..m.saturating_sub(1)).map(|j| h[j + 1] / 6.0).collect();
        let r_band = vec![diag, off];
        let r_chol = BandedCholesky::factor(&r_band)?;
        Ok(BandedPenalty { h, r_band, r_chol })
    }

    fn n(&self) -> usize {
        self.h.len() + 1
    }

    /// `Qᵀ g`, length `n - 2`.
    fn qt_mul(&self, g: &[f64]) -> Vec<f64> {
        let h = &self.h;
        (0..self.n() - 2).map(|j| (g[j] - g[j + 1]) / h[j] + (g[j + 2] - g[j + 1]) / h[j + 1]).collect()
    }

    /// `Q γ`, length `n`.
    fn q_mul(&self, gamma: &[f64]) -> Vec<f64> {
        let n = self.n();
        let h = &self.h;
        let mut out = vec![0.0; n];
        for (j, &gj) in gamma.iter().enumerate() {
            out[j] += gj / h[j];
            out[j + 1] -= gj * (1.0 / h[j] + 1.0 / h[j + 1]);
            out[j + 2] += gj / h[j + 1];
        }
        out
    }

    /// Interior second derivatives `γ = R⁻¹ Qᵀ g`.
    fn interior_second_derivatives(&self, g: &[f64]) -> Vec<f64> {
        let mut gamma = self.qt_mul(g);
        self.r_chol.solve_in_place(&mut gamma);
        gamma
    }

    /// Second derivatives at every knot (zero at both ends).
    pub(crate) fn second_derivatives(&self, g: &[f64]) -> Vec<f64> {
        let gamma = self.interior_second_derivatives(g);
        let mut full = Vec::with_capacity(self.n());
        full.push(0.0);
        full.extend(gamma);
        full.push(0.0);
        full
    }

    /// `gᵀ K g = (Qᵀg)ᵀ R⁻¹ (Qᵀg)`; nonnegative by construction.
    pub(crate) fn roughness(&self, g: &[f64]) -> f64 {
        let qtg = self.qt_mul(g);
        let mut gamma = qtg.clone();
        self.r_chol.solve_in_place(&mut gamma);
        qtg.iter().zip(&gamma).map(|(a, b)| a * b).sum::<f64>().max(0.0)
    }

    /// Lower band of `R + λ QᵀQ` (bandwidth 2).
    fn reinsch_band(&self, lambda: f64) -> Vec<Vec<f64>> {
        let m = self.n() - 2;
        let h = &self.h;
        // column j of Q has entries at rows j, j+1, j+2
        let q = |j: usize| [1.0 / h[j], -(1.0 / h[j] + 1.0 / h[j + 1]), 1.0 / h[j + 1]];
        let mut band = vec![vec![0.0; m], vec![0.0; m.saturating_sub(1)], vec![0.0; m.saturating_sub(2)]];
        for j in 0..m {
            let qj = q(j);
            band[0][j] = self.r_band[0][j] + lambda * qj.iter().map(|v| v * v).sum::<f64>();
            if j + 1 < m {
                let qk = q(j + 1);
                band[1][j] = self.r_band[1][j] + lambda * (qj[1] * qk[0] + qj[2] * qk[1]);
            }
            if j + 2 < m {
                let qk = q(j + 2);
                band[2][j] = lambda * qj[2] * qk[0];
            }
        }
        band
    }
}

/// Symmetric PSD matrix `K` with `μᵀKμ = ∫ μ''(t)² dt` for the natural cubic
/// interpolant of `μ`.
#[derive(Debug, Clone)]
pub struct RoughnessMatrix {
    knots: KnotGrid,
    k: DMatrix<f64>,
    penalty: BandedPenalty,
}

impl RoughnessMatrix {
    pub fn knots(&self) -> &KnotGrid {
        &self.knots
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn dim(&self) -> usize {
        self.knots.len()
    }

    /// Eigenvalues of `K` in ascending order. The first two are zero up to
    /// rounding.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.k.clone()).eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| a.total_cmp(b));
        ev
    }
}

pub fn build_roughness_matrix(knots: &KnotGrid) -> Result<RoughnessMatrix> {
    let penalty = BandedPenalty::new(knots)?;
    let n = knots.len();
    // K = Q (R⁻¹ Qᵀ); build R⁻¹Qᵀ column by column from unit vectors.
    let mut rinv_qt = DMatrix::<f64>::zeros(n - 2, n);
    let mut e = vec![0.0; n];
    for c in 0..n {
        e[c] = 1.0;
        let col = penalty.interior_second_derivatives(&e);
        e[c] = 0.0;
        rinv_qt.set_column(c, &nalgebra::DVector::from_vec(col));
    }
    let mut k = DMatrix::<f64>::zeros(n, n);
    for c in 0..n {
        let col: Vec<f64> = rinv_qt.column(c).iter().copied().collect();
        let qcol = penalty.q_mul(&col);
        k.set_column(c, &nalgebra::DVector::from_vec(qcol));
    }
    crate::linalg::symmetrize(&mut k);
    Ok(RoughnessMatrix { knots: knots.clone(), k, penalty })
}

/// `R(μ) = μᵀKμ`.
pub fn roughness(mu: &[f64], k: &RoughnessMatrix) -> Result<f64> {
    if mu.len() != k.dim() {
        return Err(Error::invalid(format!(
            "vector of length {} does not match roughness matrix of dimension {}",
            mu.len(),
            k.dim()
        )));
    }
    Ok(k.penalty.roughness(mu))
}

/// Factorized smoothing operator `S_λ = (I + λK)⁻¹` for one `λ`.
#[derive(Debug, Clone)]
pub struct Smoother {
    lambda: f64,
    penalty: BandedPenalty,
    chol: Option<BandedCholesky>,
}

impl Smoother {
    pub fn new(k: &RoughnessMatrix, lambda: f64) -> Result<Self> {
        Self::with_penalty(k.penalty.clone(), lambda)
    }

    /// Build directly from knots, skipping the dense `K`.
    pub fn from_knots(knots: &KnotGrid, lambda: f64) -> Result<Self> {
        Self::with_penalty(BandedPenalty::new(knots)?, lambda)
    }

    pub(crate) fn with_penalty(penalty: BandedPenalty, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::invalid(format!("smoothing level must be finite and >= 0, got {lambda}")));
        }
        let chol = if lambda == 0.0 { None } else { Some(BandedCholesky::factor(&penalty.reinsch_band(lambda))?) };
        Ok(Smoother { lambda, penalty, chol })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn dim(&self) -> usize {
        self.penalty.n()
    }

    pub fn apply(&self, mu: &[f64]) -> Result<Vec<f64>> {
        if mu.len() != self.dim() {
            return Err(Error::invalid(format!(
                "vector of length {} does not match smoother dimension {}",
                mu.len(),
                self.dim()
            )));
        }
        let Some(chol) = &self.chol else {
            return Ok(mu.to_vec());
        };
        let mut gamma = self.penalty.qt_mul(mu);
        chol.solve_in_place(&mut gamma);
        let qg = self.penalty.q_mul(&gamma);
        Ok(mu.iter().zip(qg).map(|(m, q)| m - self.lambda * q).collect())
    }
}

/// Minimizer of `‖v − μ‖² + λ vᵀKv`.
pub fn smooth(mu: &[f64], lambda: f64, k: &RoughnessMatrix) -> Result<Vec<f64>> {
    Smoother::new(k, lambda)?.apply(mu)
}

/// Natural cubic interpolant through `(knots, values)`.
#[derive(Debug, Clone)]
pub struct NaturalSpline {
    knots: KnotGrid,
    values: Vec<f64>,
    second: Vec<f64>,
}

impl NaturalSpline {
    pub fn new(knots: &KnotGrid, values: &[f64]) -> Result<Self> {
        if values.len() != knots.len() {
            return Err(Error::invalid(format!("{} values for {} knots", values.len(), knots.len())));
        }
        let penalty = BandedPenalty::new(knots)?;
        Ok(Self::from_parts(knots.clone(), values.to_vec(), penalty.second_derivatives(values)))
    }

    fn from_parts(knots: KnotGrid, values: Vec<f64>, second: Vec<f64>) -> Self {
        NaturalSpline { knots, values, second }
    }

    pub fn knots(&self) -> &KnotGrid {
        &self.knots
    }

    /// Second derivatives at the knots.
    pub fn second_derivatives(&self) -> &[f64] {
        &self.second
    }

    fn locate(&self, s: f64) -> (usize, f64, f64, f64) {
        let i = self.knots.interval(s);
        let t = self.knots.as_slice();
        let h = t[i + 1] - t[i];
        let a = (t[i + 1] - s) / h;
        let b = (s - t[i]) / h;
        (i, h, a, b)
    }

    pub fn value(&self, s: f64) -> Result<f64> {
        self.knots.check_inside(s)?;
        let (i, h, a, b) = self.locate(s);
        let (g, c) = (&self.values, &self.second);
        Ok(a * g[i] + b * g[i + 1] + ((a * a * a - a) * c[i] + (b * b * b - b) * c[i + 1]) * h * h / 6.0)
    }

    pub fn derivative(&self, s: f64) -> Result<f64> {
        self.knots.check_inside(s)?;
        let (i, h, a, b) = self.locate(s);
        let (g, c) = (&self.values, &self.second);
        Ok((g[i + 1] - g[i]) / h - (3.0 * a * a - 1.0) * h / 6.0 * c[i] + (3.0 * b * b - 1.0) * h / 6.0 * c[i + 1])
    }

    pub fn second_derivative(&self, s: f64) -> Result<f64> {
        self.knots.check_inside(s)?;
        let (i, _, a, b) = self.locate(s);
        Ok(a * self.second[i] + b * self.second[i + 1])
    }
}

/// Value of the natural cubic interpolant of `mu` at `s`.
pub fn interpolate(knots: &KnotGrid, mu: &[f64], s: f64) -> Result<f64> {
    NaturalSpline::new(knots, mu)?.value(s)
}

/// Precomputed interval lookups for evaluating many splines on one knot grid
/// at a fixed set of points.
#[derive(Debug, Clone)]
pub struct EvaluationPlan {
    penalty: BandedPenalty,
    n: usize,
    // (interval, h, a, b) per evaluation point
    cells: Vec<(usize, f64, f64, f64)>,
}

impl EvaluationPlan {
    /// Points outside the knot span are clamped to the nearest end; the
    /// number of clamped points is returned alongside the plan.
    pub fn clamped(knots: &KnotGrid, points: &[f64]) -> Result<(Self, usize)> {
        let penalty = BandedPenalty::new(knots)?;
        Ok(Self::with_penalty(knots, penalty, points))
    }

    pub(crate) fn with_penalty(knots: &KnotGrid, penalty: BandedPenalty, points: &[f64]) -> (Self, usize) {
        let t = knots.as_slice();
        let mut clamped = 0;
        let cells = points
            .iter()
            .map(|&s0| {
                let s = s0.clamp(knots.first(), knots.last());
                if s != s0 {
                    clamped += 1;
                }
                let i = knots.interval(s);
                let h = t[i + 1] - t[i];
                (i, h, (t[i + 1] - s) / h, (s - t[i]) / h)
            })
            .collect();
        (EvaluationPlan { penalty, n: knots.len(), cells }, clamped)
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// First derivative of the interpolant of `g` at every point.
    pub fn derivatives(&self, g: &[f64]) -> Vec<f64> {
        debug_assert_eq!(g.len(), self.n);
        let c = self.penalty.second_derivatives(g);
        self.cells
            .iter()
            .map(|&(i, h, a, b)| {
                (g[i + 1] - g[i]) / h - (3.0 * a * a - 1.0) * h / 6.0 * c[i] + (3.0 * b * b - 1.0) * h / 6.0 * c[i + 1]
            })
            .collect()
    }

    /// Value of the interpolant of `g` at every point.
    pub fn values(&self, g: &[f64]) -> Vec<f64> {
        debug_assert_eq!(g.len(), self.n);
        let c = self.penalty.second_derivatives(g);
        self.cells
            .iter()
            .map(|&(i, h, a, b)| {
                a * g[i] + b * g[i + 1] + ((a * a * a - a) * c[i] + (b * b * b - b) * c[i + 1]) * h * h / 6.0
            })
            .collect()
    }
}

/// `r x n` matrix mapping knot values to first derivatives of the natural
/// interpolant at the points of `s_grid`.
#[derive(Debug, Clone)]
pub struct DerivativeMatrix {
    d: DMatrix<f64>,
    s_grid: Vec<f64>,
}

impl DerivativeMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.d
    }

    pub fn s_grid(&self) -> &[f64] {
        &self.s_grid
    }

    pub fn apply(&self, mu: &[f64]) -> Result<Vec<f64>> {
        if mu.len() != self.d.ncols() {
            return Err(Error::invalid(format!(
                "vector of length {} does not match derivative matrix with {} columns",
                mu.len(),
                self.d.ncols()
            )));
        }
        Ok((&self.d * crate::linalg::dvec(mu)).iter().copied().collect())
    }
}

pub fn build_derivative_matrix(knots: &KnotGrid, s_grid: &[f64]) -> Result<DerivativeMatrix> {
    if let Some(w) = s_grid.windows(2).find(|w| w[1] <= w[0]) {
        return Err(Error::invalid(format!("evaluation grid must be strictly increasing ({} then {})", w[0], w[1])));
    }
    for &s in s_grid {
        knots.check_inside(s)?;
    }
    let n = knots.len();
    let penalty = BandedPenalty::new(knots)?;
    // Γ: n x n map from values to knot second derivatives
    let mut gamma = DMatrix::<f64>::zeros(n, n);
    let mut e = vec![0.0; n];
    for c in 0..n {
        e[c] = 1.0;
        let col = penalty.second_derivatives(&e);
        e[c] = 0.0;
        gamma.set_column(c, &nalgebra::DVector::from_vec(col));
    }
    let t = knots.as_slice();
    let mut d = DMatrix::<f64>::zeros(s_grid.len(), n);
    for (row, &s) in s_grid.iter().enumerate() {
        let i = knots.interval(s);
        let h = t[i + 1] - t[i];
        let a = (t[i + 1] - s) / h;
        let b = (s - t[i]) / h;
        let wa = -(3.0 * a * a - 1.0) * h / 6.0;
        let wb = (3.0 * b * b - 1.0) * h / 6.0;
        for c in 0..n {
            d[(row, c)] = wa * gamma[(i, c)] + wb * gamma[(i + 1, c)];
        }
        d[(row, i)] -= 1.0 / h;
        d[(row, i + 1)] += 1.0 / h;
    }
    Ok(DerivativeMatrix { d, s_grid: s_grid.to_vec() })
}
