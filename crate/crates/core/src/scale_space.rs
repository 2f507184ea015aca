//! Multi-scale derivative samples, simultaneous sign credibility and
//! per-record slope contributions.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chronology::JointChronology;
use crate::error::{Error, Result};
use crate::mcmc::{Chain, ChainSample};
use crate::model::{ErrorModel, TauLayout};
use crate::spline::{EvaluationPlan, RoughnessMatrix, Smoother};

pub const DEFAULT_SCALE_LEVELS: usize = 200;
pub const DEFAULT_TIME_POINTS: usize = 2000;
/// Effective degrees of freedom at the coarsest default level.
pub const DEFAULT_MIN_EDF: f64 = 2.5;

/// Smoothing levels, strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleGrid {
    lambdas: Vec<f64>,
}

impl ScaleGrid {
    pub fn new(lambdas: Vec<f64>) -> Result<Self> {
        if lambdas.is_empty() || lambdas.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
            return Err(Error::invalid("smoothing levels must be positive and finite"));
        }
        if lambdas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("smoothing levels must be strictly increasing"));
        }
        Ok(ScaleGrid { lambdas })
    }

    pub fn log_spaced(min: f64, max: f64, count: usize) -> Result<Self> {
        if count == 0 || !(min > 0.0) || !(max >= min) {
            return Err(Error::invalid(format!("bad scale grid: [{min}, {max}] with {count} levels")));
        }
        if count == 1 {
            return Self::new(vec![min]);
        }
        let (a, b) = (min.ln(), max.ln());
        Self::new((0..count).map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp()).collect())
    }

    /// Levels spanning effective degrees of freedom from `n − 1` down to
    /// `min_edf`.
    pub fn from_edf(k: &RoughnessMatrix, count: usize, min_edf: f64) -> Result<Self> {
        let eig = k.eigenvalues();
        let n = eig.len() as f64;
        let lo = lambda_for_edf(&eig, n - 1.0)?;
        let hi = lambda_for_edf(&eig, min_edf)?;
        Self::log_spaced(lo, hi, count)
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }
}

/// `tr S_λ = Σ 1 / (1 + λ e_i)` from the eigenvalues of `K`.
pub fn effective_dof(eigenvalues: &[f64], lambda: f64) -> f64 {
    eigenvalues.iter().map(|e| 1.0 / (1.0 + lambda * e.max(0.0))).sum()
}

/// `λ` whose effective degrees of freedom equal `target` (bisection in log λ).
pub fn lambda_for_edf(eigenvalues: &[f64], target: f64) -> Result<f64> {
    let n = eigenvalues.len() as f64;
    if !(target > 2.0 && target < n) {
        return Err(Error::invalid(format!("effective degrees of freedom must lie in (2, {n}), got {target}")));
    }
    let (mut lo, mut hi) = (-60.0f64, 60.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if effective_dof(eigenvalues, mid.exp()) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

/// Uniform evaluation points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    points: Vec<f64>,
}

impl TimeGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() || points.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("time grid must be nonempty and finite"));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("time grid must be strictly increasing"));
        }
        Ok(TimeGrid { points })
    }

    pub fn uniform(start: f64, end: f64, count: usize) -> Result<Self> {
        if count < 2 || !(end > start) {
            return Err(Error::invalid(format!("bad time grid: [{start}, {end}] with {count} points")));
        }
        let step = (end - start) / (count - 1) as f64;
        let mut points: Vec<f64> = (0..count).map(|i| start + step * i as f64).collect();
        points[count - 1] = end;
        Self::new(points)
    }

    /// Uniform over the span of the joint chronology.
    pub fn spanning(joint: &JointChronology, count: usize) -> Result<Self> {
        let t = joint.dates();
        Self::uniform(t[0], t[t.len() - 1], count)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// `D S_λ` (and the smoothed interpolant) for one set of knots.
#[derive(Debug, Clone)]
pub struct SmoothDerivative {
    smoother: Smoother,
    plan: EvaluationPlan,
    layout: TauLayout,
    clamped: usize,
}

impl SmoothDerivative {
    /// Operators on the knots `tau` (joint order) evaluated at `points`;
    /// points outside the knot span are clamped.
    pub fn new(tau: &[f64], lambda: f64, points: &[f64]) -> Result<Self> {
        let layout = TauLayout::new(tau)?;
        let smoother = Smoother::from_knots(layout.knots(), lambda)?;
        let (plan, clamped) = EvaluationPlan::clamped(layout.knots(), points)?;
        Ok(SmoothDerivative { smoother, plan, layout, clamped })
    }

    pub fn clamped(&self) -> usize {
        self.clamped
    }

    fn smoothed(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.smoother.dim() {
            return Err(Error::invalid("vector length differs from the number of knots"));
        }
        self.smoother.apply(&self.layout.to_sorted(v))
    }

    /// `D S_λ v`.
    pub fn derivative(&self, v: &[f64]) -> Result<Vec<f64>> {
        Ok(self.plan.derivatives(&self.smoothed(v)?))
    }

    /// Interpolant of `S_λ v` at the points.
    pub fn values(&self, v: &[f64]) -> Result<Vec<f64>> {
        Ok(self.plan.values(&self.smoothed(v)?))
    }
}

/// Visits every sample with the operator for its knots.
fn visit_samples<F>(chain: &Chain, lambda: f64, grid: &TimeGrid, mut f: F) -> Result<usize>
where
    F: FnMut(&ChainSample, &SmoothDerivative) -> Result<()>,
{
    if chain.is_empty() {
        return Err(Error::invalid("chain has no samples"));
    }
    let shared = if chain.random_dates() {
        None
    } else {
        Some(SmoothDerivative::new(chain.joint().dates(), lambda, grid.points())?)
    };
    let mut clamped = 0;
    for s in chain.samples() {
        let owned;
        let op = match &shared {
            Some(op) => op,
            None => {
                owned = SmoothDerivative::new(&s.tau, lambda, grid.points())?;
                clamped += owned.clamped();
                &owned
            }
        };
        f(s, op)?;
    }
    if let Some(op) = &shared {
        clamped = op.clamped() * chain.len();
    }
    Ok(clamped)
}

/// Rows `D S_λ μ` for every sample (samples x points).
pub fn derivative_samples(chain: &Chain, lambda: f64, grid: &TimeGrid) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(chain.len(), grid.len());
    let mut row = 0;
    let clamped = visit_samples(chain, lambda, grid, |s, op| {
        let d = op.derivative(&s.mu)?;
        out.row_mut(row).copy_from_slice(&d);
        row += 1;
        Ok(())
    })?;
    if clamped > 0 {
        log::warn!("{clamped} evaluation points clamped to sample date spans");
    }
    Ok(out)
}

/// Mean over samples of the smoothed interpolant.
pub fn posterior_mean_smooth(chain: &Chain, lambda: f64, grid: &TimeGrid) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; grid.len()];
    visit_samples(chain, lambda, grid, |s, op| {
        for (a, v) in acc.iter_mut().zip(op.values(&s.mu)?) {
            *a += v;
        }
        Ok(())
    })?;
    let n = chain.len() as f64;
    Ok(acc.into_iter().map(|a| a / n).collect())
}

/// Trend sign of one map cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Flag {
    Decreasing,
    None,
    Increasing,
}

impl Flag {
    pub fn code(self) -> i8 {
        match self {
            Flag::Decreasing => -1,
            Flag::None => 0,
            Flag::Increasing => 1,
        }
    }

    pub fn from_code(c: i8) -> Result<Self> {
        match c {
            -1 => Ok(Flag::Decreasing),
            0 => Ok(Flag::None),
            1 => Ok(Flag::Increasing),
            _ => Err(Error::invalid(format!("flag code must be -1, 0 or 1, got {c}"))),
        }
    }
}

/// Derivative signs stored point-major: `signs[j * samples + s]`.
struct SignTable {
    samples: usize,
    points: usize,
    signs: Vec<i8>,
}

impl SignTable {
    fn new(samples: usize, points: usize) -> Self {
        SignTable { samples, points, signs: vec![0; samples * points] }
    }

    fn set_row(&mut self, s: usize, d: &[f64]) {
        for (j, v) in d.iter().enumerate() {
            self.signs[j * self.samples + s] = if *v > 0.0 {
                1
            } else if *v < 0.0 {
                -1
            } else {
                0
            };
        }
    }

    fn point(&self, j: usize) -> &[i8] {
        &self.signs[j * self.samples..(j + 1) * self.samples]
    }
}

fn flag_signs(table: &SignTable, alpha: f64) -> Result<Vec<Flag>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let n = table.samples;
    if n == 0 {
        return Err(Error::invalid("no derivative samples"));
    }
    let need = alpha * n as f64;
    // (count, sign, point)
    let mut candidates: Vec<(usize, i8, usize)> = (0..table.points)
        .filter_map(|j| {
            let col = table.point(j);
            let pos = col.iter().filter(|&&v| v > 0).count();
            let neg = col.iter().filter(|&&v| v < 0).count();
            let (count, sign) = if pos >= neg { (pos, 1) } else { (neg, -1) };
            (count as f64 >= need).then_some((count, sign, j))
        })
        .collect();
    candidates.sort_by(|a, b| b.0.cmp(&a.0).then(b.1.cmp(&a.1)).then(a.2.cmp(&b.2)));

    let mut flags = vec![Flag::None; table.points];
    let mut alive = vec![true; n];
    let mut alive_count = n;
    for (_, sign, j) in candidates {
        let col = table.point(j);
        let remaining = alive.iter().zip(col).filter(|(&a, &v)| a && v == sign).count();
        if (remaining as f64) < need {
            break;
        }
        if remaining < alive_count {
            for (a, &v) in alive.iter_mut().zip(col) {
                *a = *a && v == sign;
            }
            alive_count = remaining;
        }
        flags[j] = if sign > 0 { Flag::Increasing } else { Flag::Decreasing };
    }
    Ok(flags)
}

/// Jointly credible trend signs from a samples x points derivative matrix.
///
/// Candidates (each point with its more probable sign) are taken in order of
/// decreasing marginal probability; a candidate is added while the fraction
/// of samples agreeing with every flagged sign stays at least `alpha`.
pub fn flag_joint_credible(samples: &DMatrix<f64>, alpha: f64) -> Result<Vec<Flag>> {
    if samples.nrows() == 0 || samples.ncols() == 0 {
        return Err(Error::invalid("empty derivative sample matrix"));
    }
    let mut table = SignTable::new(samples.nrows(), samples.ncols());
    let mut row = vec![0.0; samples.ncols()];
    for s in 0..samples.nrows() {
        for (j, r) in row.iter_mut().enumerate() {
            *r = samples[(s, j)];
        }
        table.set_row(s, &row);
    }
    flag_signs(&table, alpha)
}

/// Flags for every (λ, s) cell plus per-level mean curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CredibilityMap {
    pub scales: ScaleGrid,
    pub times: TimeGrid,
    pub alpha: f64,
    /// `flags[level][point]`
    pub flags: Vec<Vec<Flag>>,
    pub mean_smooth: Vec<Vec<f64>>,
    pub mean_derivative: Vec<Vec<f64>>,
    pub clamped_points: usize,
}

impl CredibilityMap {
    pub fn levels(&self) -> usize {
        self.flags.len()
    }

    pub fn points(&self) -> usize {
        self.times.len()
    }

    pub fn flag(&self, level: usize, point: usize) -> Flag {
        self.flags[level][point]
    }
}

struct Level {
    flags: Vec<Flag>,
    mean_smooth: Vec<f64>,
    mean_derivative: Vec<f64>,
    clamped: usize,
}

fn build_level(chain: &Chain, lambda: f64, times: &TimeGrid, alpha: f64) -> Result<Level> {
    let r = times.len();
    let mut table = SignTable::new(chain.len(), r);
    let mut mean_smooth = vec![0.0; r];
    let mut mean_derivative = vec![0.0; r];
    let mut s = 0;
    let clamped = visit_samples(chain, lambda, times, |sample, op| {
        let d = op.derivative(&sample.mu)?;
        table.set_row(s, &d);
        for (a, v) in mean_derivative.iter_mut().zip(&d) {
            *a += v;
        }
        for (a, v) in mean_smooth.iter_mut().zip(op.values(&sample.mu)?) {
            *a += v;
        }
        s += 1;
        Ok(())
    })?;
    let n = chain.len() as f64;
    mean_smooth.iter_mut().for_each(|v| *v /= n);
    mean_derivative.iter_mut().for_each(|v| *v /= n);
    Ok(Level { flags: flag_signs(&table, alpha)?, mean_smooth, mean_derivative, clamped })
}

/// Flag every level of `scales` in parallel.
pub fn build_credibility_map(
    chain: &Chain,
    scales: &ScaleGrid,
    times: &TimeGrid,
    alpha: f64,
) -> Result<CredibilityMap> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let levels: Vec<Level> =
        scales.lambdas().par_iter().map(|&l| build_level(chain, l, times, alpha)).collect::<Result<_>>()?;
    let clamped_points = levels.iter().map(|l| l.clamped).sum();
    if clamped_points > 0 {
        log::warn!("{clamped_points} evaluation points clamped to sample date spans");
    }
    let mut map = CredibilityMap {
        scales: scales.clone(),
        times: times.clone(),
        alpha,
        flags: Vec::with_capacity(levels.len()),
        mean_smooth: Vec::with_capacity(levels.len()),
        mean_derivative: Vec::with_capacity(levels.len()),
        clamped_points,
    };
    for l in levels {
        map.flags.push(l.flags);
        map.mean_smooth.push(l.mean_smooth);
        map.mean_derivative.push(l.mean_derivative);
    }
    Ok(map)
}

/// Mean contribution of one record to the slope of the smooth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionCurve {
    pub record: usize,
    pub lambda: f64,
    pub slope: Vec<f64>,
}

fn stored_contributions(chain: &Chain, sample: &ChainSample) -> Result<Vec<Vec<f64>>> {
    if chain.error_model() == ErrorModel::Pooled {
        return Err(Error::UnsupportedMode(
            "record contributions are defined for per-record error covariances only".into(),
        ));
    }
    sample
        .contributions
        .clone()
        .ok_or_else(|| Error::Config("chain was sampled without stored record contributions".into()))
}

/// Per-record `D S_λ Σ0 Σ_k⁻¹ ỹ_k` for one sample.
pub fn sample_contribution_slopes(chain: &Chain, index: usize, lambda: f64, grid: &TimeGrid) -> Result<Vec<Vec<f64>>> {
    let sample = chain.samples().get(index).ok_or_else(|| Error::invalid("sample index out of range"))?;
    let parts = stored_contributions(chain, sample)?;
    let op = SmoothDerivative::new(&sample.tau, lambda, grid.points())?;
    parts.iter().map(|c| op.derivative(c)).collect()
}

/// `D S_λ μ0` for one sample.
pub fn conditional_mean_slope(chain: &Chain, index: usize, lambda: f64, grid: &TimeGrid) -> Result<Vec<f64>> {
    let sample = chain.samples().get(index).ok_or_else(|| Error::invalid("sample index out of range"))?;
    SmoothDerivative::new(&sample.tau, lambda, grid.points())?.derivative(&sample.mu_mean)
}

/// Posterior mean of record `k`'s slope contribution at level `lambda`.
pub fn record_contributions(chain: &Chain, k: usize, lambda: f64, grid: &TimeGrid) -> Result<ContributionCurve> {
    if k >= chain.joint().num_records() {
        return Err(Error::invalid(format!("record index {k} out of range")));
    }
    let mut acc = vec![0.0; grid.len()];
    visit_samples(chain, lambda, grid, |s, op| {
        let parts = stored_contributions(chain, s)?;
        for (a, v) in acc.iter_mut().zip(op.derivative(&parts[k])?) {
            *a += v;
        }
        Ok(())
    })?;
    let n = chain.len() as f64;
    Ok(ContributionCurve { record: k, lambda, slope: acc.into_iter().map(|a| a / n).collect() })
}
