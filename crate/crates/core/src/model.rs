//! Hierarchical model: configuration, component log-densities, prior
//! elicitation and the pooled-error expansion matrix.
//!
//! All log-densities are returned up to additive constants that do not
//! depend on any sampled parameter.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::chronology::{AnomalySeries, JointChronology};
use crate::error::{Error, Result};
use crate::linalg::{self, dvec};
use crate::spline::{self, KnotGrid, RoughnessMatrix};
use crate::stats;

pub const DEFAULT_ETA: f64 = 20.0;
pub const DEFAULT_BETA: f64 = 0.5;
/// Prior scale for the "large" error setting; `σ̄_k` comes from the data.
pub const LARGE_ERROR_W: f64 = 0.5;
/// Prior scale and error bound for the "small" error setting.
pub const SMALL_ERROR_W: f64 = 50.0;
pub const SMALL_ERROR_SIGMA_BAR: f64 = 0.2;
/// Significance level of the error-bound test.
pub const ERROR_BOUND_LEVEL: f64 = 0.05;

/// How reconstruction errors are modelled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorModel {
    /// Independent covariance `Σ_k` per record.
    PerRecord,
    /// One covariance over all stacked observations, linked through `G`.
    Pooled,
}

/// Inverse-Wishart prior for one record: `W_k = w·I`, degrees of freedom `ν`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordPrior {
    pub w: f64,
    pub nu: f64,
    pub sigma_bar: Option<f64>,
}

impl RecordPrior {
    /// Prior whose mean covariance is `σ̄²·I` for a record of length `j`.
    pub fn from_bound(sigma_bar: f64, w: f64, j: usize) -> Result<Self> {
        Ok(RecordPrior { w, nu: wishart_dof_from_bound(sigma_bar, w, j)?, sigma_bar: Some(sigma_bar) })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub records: Vec<RecordPrior>,
    /// Gamma shape for `λ0`.
    pub eta: f64,
    /// Gamma rate for `λ0`.
    pub beta: f64,
    pub error_model: ErrorModel,
    /// Degrees of freedom of the pooled prior; defaults to `j + 1` plus the
    /// average per-record excess `ν_k − j_k − 1`.
    pub pooled_nu: Option<f64>,
    pub random_dates: bool,
    /// Precision of an optional Gaussian prior on the linear (null-space)
    /// component of `μ`. Zero gives the improper smoothing prior.
    #[serde(default)]
    pub null_space_precision: f64,
}

impl ModelConfig {
    pub fn new(records: Vec<RecordPrior>) -> Self {
        ModelConfig {
            records,
            eta: DEFAULT_ETA,
            beta: DEFAULT_BETA,
            error_model: ErrorModel::PerRecord,
            pooled_nu: None,
            random_dates: false,
            null_space_precision: 0.0,
        }
    }

    pub fn validate(&self, joint: &JointChronology) -> Result<()> {
        if self.records.len() != joint.num_records() {
            return Err(Error::Config(format!(
                "{} record priors for {} records",
                self.records.len(),
                joint.num_records()
            )));
        }
        if !(self.eta > 0.0 && self.beta > 0.0) {
            return Err(Error::Config(format!("λ0 prior needs eta, beta > 0 (got {}, {})", self.eta, self.beta)));
        }
        for (k, p) in self.records.iter().enumerate() {
            let j = joint.incidence(k).len() as f64;
            if !(p.w > 0.0) {
                return Err(Error::Config(format!("record {k}: prior scale w must be positive")));
            }
            if !(p.nu > j + 1.0) {
                return Err(Error::Config(format!(
                    "record {k}: degrees of freedom {} must exceed j_k + 1 = {}",
                    p.nu,
                    j + 1.0
                )));
            }
        }
        if self.error_model == ErrorModel::Pooled && self.pooled_dof(joint) <= joint.total_observations() as f64 + 1.0 {
            return Err(Error::Config("pooled degrees of freedom must exceed j + 1".into()));
        }
        if !(self.null_space_precision >= 0.0) {
            return Err(Error::Config("null-space precision must be >= 0".into()));
        }
        if self.random_dates && joint.psi().is_none() {
            return Err(Error::Config("random dates need dating standard deviations (age_sd)".into()));
        }
        if joint.len() < 3 {
            return Err(Error::Config(format!(
                "the joint chronology has {} dates; at least 3 are needed",
                joint.len()
            )));
        }
        Ok(())
    }

    pub fn pooled_dof(&self, joint: &JointChronology) -> f64 {
        self.pooled_nu.unwrap_or_else(|| {
            let excess: f64 =
                self.records.iter().enumerate().map(|(k, p)| p.nu - joint.incidence(k).len() as f64 - 1.0).sum::<f64>()
                    / self.records.len() as f64;
            joint.total_observations() as f64 + 1.0 + excess
        })
    }

    /// Diagonal of the pooled prior scale `W`: each `w_k` repeated `j_k` times.
    pub fn pooled_scale_diagonal(&self, joint: &JointChronology) -> Vec<f64> {
        self.records.iter().enumerate().flat_map(|(k, p)| std::iter::repeat_n(p.w, joint.incidence(k).len())).collect()
    }

    /// Prior mean of record `k`'s covariance, `W_k / (ν_k − j_k − 1)`.
    pub fn prior_mean_sigma(&self, k: usize, j: usize) -> DMatrix<f64> {
        let p = &self.records[k];
        DMatrix::identity(j, j) * (p.w / (p.nu - j as f64 - 1.0))
    }
}

/// Centered observations aligned with a joint chronology.
#[derive(Debug, Clone)]
pub struct Observations {
    joint: JointChronology,
    y: Vec<DVector<f64>>,
    stacked: DVector<f64>,
}

impl Observations {
    pub fn new(anomalies: &[AnomalySeries], joint: JointChronology) -> Result<Self> {
        if anomalies.len() != joint.num_records() {
            return Err(Error::invalid("record count differs from the joint chronology"));
        }
        for (k, a) in anomalies.iter().enumerate() {
            let inc = joint.incidence(k);
            if inc.len() != a.len() || inc.iter().zip(a.dates()).any(|(&i, &d)| joint.dates()[i] != d) {
                return Err(Error::invalid(format!("record '{}' does not match its incidence map", a.id())));
            }
        }
        let y: Vec<DVector<f64>> = anomalies.iter().map(|a| dvec(a.values())).collect();
        let stacked = DVector::from_iterator(y.iter().map(|v| v.len()).sum(), y.iter().flat_map(|v| v.iter().copied()));
        Ok(Observations { joint, y, stacked })
    }

    /// Build from raw per-record vectors (used by simulation-based checks).
    pub fn from_vectors(joint: JointChronology, y: Vec<DVector<f64>>) -> Result<Self> {
        if y.len() != joint.num_records() || y.iter().enumerate().any(|(k, v)| v.len() != joint.incidence(k).len()) {
            return Err(Error::invalid("observation vectors do not match the joint chronology"));
        }
        let stacked = DVector::from_iterator(y.iter().map(|v| v.len()).sum(), y.iter().flat_map(|v| v.iter().copied()));
        Ok(Observations { joint, y, stacked })
    }

    pub fn joint(&self) -> &JointChronology {
        &self.joint
    }

    pub fn record(&self, k: usize) -> &DVector<f64> {
        &self.y[k]
    }

    pub fn records(&self) -> &[DVector<f64>] {
        &self.y
    }

    pub fn stacked(&self) -> &DVector<f64> {
        &self.stacked
    }
}

/// Reconstruction-error covariance(s) of a state.
#[derive(Debug, Clone, PartialEq)]
pub enum ErrorCovariance {
    PerRecord(Vec<DMatrix<f64>>),
    Pooled(DMatrix<f64>),
}

impl ErrorCovariance {
    /// Diagonals, one vector per record (pooled: split by record blocks).
    pub fn diagonals(&self, joint: &JointChronology) -> Vec<Vec<f64>> {
        match self {
            ErrorCovariance::PerRecord(s) => s.iter().map(|m| m.diagonal().iter().copied().collect()).collect(),
            ErrorCovariance::Pooled(s) => {
                let d: Vec<f64> = s.diagonal().iter().copied().collect();
                let mut offset = 0;
                joint
                    .incidences()
                    .iter()
                    .map(|inc| {
                        let block = d[offset..offset + inc.len()].to_vec();
                        offset += inc.len();
                        block
                    })
                    .collect()
            }
        }
    }
}

/// One point in parameter space.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusState {
    /// Consensus values, indexed like the joint chronology.
    pub mu: DVector<f64>,
    pub sigmas: ErrorCovariance,
    pub lambda0: f64,
    /// True dates, indexed like the joint chronology.
    pub tau: Vec<f64>,
}

/// Knot grid of a set of true dates together with the sorting permutation.
#[derive(Debug, Clone)]
pub struct TauLayout {
    // order[p] = joint index at sorted position p
    order: Vec<usize>,
    knots: KnotGrid,
}

impl TauLayout {
    pub fn new(tau: &[f64]) -> Result<Self> {
        let mut order: Vec<usize> = (0..tau.len()).collect();
        order.sort_by(|&a, &b| tau[a].total_cmp(&tau[b]));
        let knots = KnotGrid::new(order.iter().map(|&i| tau[i]).collect())?;
        Ok(TauLayout { order, knots })
    }

    pub fn knots(&self) -> &KnotGrid {
        &self.knots
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn is_identity(&self) -> bool {
        self.order.iter().enumerate().all(|(p, &i)| p == i)
    }

    /// Reorder a joint-indexed vector into knot order.
    pub fn to_sorted(&self, v: &[f64]) -> Vec<f64> {
        self.order.iter().map(|&i| v[i]).collect()
    }

    /// Reorder a knot-ordered vector back into joint order.
    pub fn to_joint(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for (p, &i) in self.order.iter().enumerate() {
            out[i] = v[p];
        }
        out
    }

    /// `μᵀK(τ)μ` for a joint-indexed `μ`.
    pub fn roughness(&self, mu: &[f64]) -> Result<f64> {
        let penalty = crate::spline::BandedPenalty::new(&self.knots)?;
        Ok(penalty.roughness(&self.to_sorted(mu)))
    }

    /// Roughness matrix in joint-index order.
    pub fn roughness_matrix(&self) -> Result<DMatrix<f64>> {
        let k = spline::build_roughness_matrix(&self.knots)?;
        if self.is_identity() {
            return Ok(k.matrix().clone());
        }
        let n = self.order.len();
        let ks = k.matrix();
        let mut out = DMatrix::zeros(n, n);
        for (p, &i) in self.order.iter().enumerate() {
            for (q, &j) in self.order.iter().enumerate() {
                out[(i, j)] = ks[(p, q)];
            }
        }
        Ok(out)
    }
}

/// Orthogonal projector onto the span of constants and `τ` (the null space of
/// `K(τ)`), in joint order.
pub fn null_space_projector(tau: &[f64]) -> DMatrix<f64> {
    let n = tau.len();
    let centre = stats::mean(tau);
    let scale = tau.iter().map(|t| (t - centre).abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let b = DMatrix::from_fn(n, 2, |i, c| if c == 0 { 1.0 } else { (tau[i] - centre) / scale });
    let btb = b.transpose() * &b;
    let inv = btb.try_inverse().expect("distinct dates give a full-rank null basis");
    &b * inv * b.transpose()
}

/// `(−½ log|Σ|, −½ rᵀΣ⁻¹r)`.
pub(crate) fn gaussian_terms(r: &DVector<f64>, sigma: &DMatrix<f64>, what: &str) -> Result<(f64, f64)> {
    let chol = linalg::cholesky(sigma.clone(), what)?;
    let z = chol.l_dirty().solve_lower_triangular(r).expect("nonsingular factor");
    Ok((-0.5 * linalg::log_det(&chol), -0.5 * z.norm_squared()))
}

pub fn log_likelihood(obs: &Observations, state: &ConsensusState) -> Result<f64> {
    let joint = obs.joint();
    if state.mu.len() != joint.len() {
        return Err(Error::invalid("state dimension differs from the joint chronology"));
    }
    match &state.sigmas {
        ErrorCovariance::PerRecord(sigmas) => {
            if sigmas.len() != joint.num_records() {
                return Err(Error::invalid("one covariance per record required"));
            }
            let mut total = 0.0;
            for (k, sigma) in sigmas.iter().enumerate() {
                let r = residual(obs, state, k);
                let (ld, q) = gaussian_terms(&r, sigma, "record error covariance")?;
                total += ld + q;
            }
            Ok(total)
        }
        ErrorCovariance::Pooled(sigma) => {
            let g = build_expansion_matrix(joint);
            let r = obs.stacked() - g.matrix() * &state.mu;
            let (ld, q) = gaussian_terms(&r, sigma, "pooled error covariance")?;
            Ok(ld + q)
        }
    }
}

pub(crate) fn residual(obs: &Observations, state: &ConsensusState, k: usize) -> DVector<f64> {
    let inc = obs.joint().incidence(k);
    DVector::from_iterator(inc.len(), obs.record(k).iter().zip(inc).map(|(y, &i)| y - state.mu[i]))
}

/// Smoothing prior `((n−2)/2)·log λ0 − (λ0/2)·μᵀKμ`.
pub fn log_prior_mu(mu: &[f64], lambda0: f64, k: &RoughnessMatrix) -> Result<f64> {
    if !(lambda0 > 0.0) {
        return Err(Error::invalid(format!("λ0 must be positive, got {lambda0}")));
    }
    let n = k.dim() as f64;
    Ok(0.5 * (n - 2.0) * lambda0.ln() - 0.5 * lambda0 * spline::roughness(mu, k)?)
}

/// Inverse-Wishart kernel `−((ν+p+1)/2) log|Σ| − ½ tr(W Σ⁻¹)`.
pub fn log_inv_wishart(sigma: &DMatrix<f64>, w: &DMatrix<f64>, nu: f64) -> Result<f64> {
    let p = sigma.nrows();
    if sigma.ncols() != p || w.shape() != sigma.shape() {
        return Err(Error::invalid("inverse-Wishart arguments must be square and of equal size"));
    }
    if !(nu > p as f64 - 1.0) {
        return Err(Error::invalid(format!("degrees of freedom {nu} must exceed dimension − 1")));
    }
    linalg::cholesky(w.clone(), "inverse-Wishart scale")?;
    let chol = linalg::cholesky(sigma.clone(), "covariance")?;
    let trace = chol.solve(w).trace();
    Ok(-0.5 * (nu + p as f64 + 1.0) * linalg::log_det(&chol) - 0.5 * trace)
}

/// Gaussian dating-error log-likelihood `Σ −log ψ_i − (t_i − τ_i)²/(2ψ_i²)`.
pub fn date_log_likelihood(t: &[f64], tau: &[f64], psi: &[f64]) -> Result<f64> {
    if t.len() != tau.len() || t.len() != psi.len() {
        return Err(Error::invalid("dates, true dates and dating errors differ in length"));
    }
    if psi.iter().any(|p| !(*p > 0.0)) {
        return Err(Error::invalid("dating standard deviations must be positive"));
    }
    Ok(t.iter().zip(tau).zip(psi).map(|((t, tau), p)| -p.ln() - (t - tau).powi(2) / (2.0 * p * p)).sum())
}

/// True iff every record's true dates are strictly increasing.
pub fn tau_order_ok(tau: &[f64], joint: &JointChronology) -> bool {
    tau.len() == joint.len() && joint.incidences().iter().all(|inc| inc.windows(2).all(|w| tau[w[0]] < tau[w[1]]))
}

/// Upper bound for a record's error standard deviation:
/// `sqrt(‖y‖² / χ²_{j−1, 0.05})`.
pub fn elicit_error_bound(y: &[f64]) -> Result<f64> {
    if y.len() < 2 {
        return Err(Error::invalid(format!("error bound needs at least 2 values, got {}", y.len())));
    }
    let v: f64 = y.iter().map(|v| v * v).sum();
    let q = stats::chi_square_quantile((y.len() - 1) as u32, ERROR_BOUND_LEVEL)?;
    Ok((v / q).sqrt())
}

/// Degrees of freedom giving prior mean covariance `σ̄²·I`:
/// `ν = j + 1 + w / σ̄²`.
pub fn wishart_dof_from_bound(sigma_bar: f64, w: f64, j: usize) -> Result<f64> {
    if !(sigma_bar > 0.0) || !sigma_bar.is_finite() {
        return Err(Error::invalid(format!("error bound must be positive, got {sigma_bar}")));
    }
    if !(w > 0.0) {
        return Err(Error::invalid(format!("prior scale must be positive, got {w}")));
    }
    Ok(j as f64 + 1.0 + w / (sigma_bar * sigma_bar))
}

/// `j x n` 0/1 matrix stacking the per-record parts of `μ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionMatrix {
    g: DMatrix<f64>,
}

impl ExpansionMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.g
    }
}

pub fn build_expansion_matrix(joint: &JointChronology) -> ExpansionMatrix {
    let mut g = DMatrix::zeros(joint.total_observations(), joint.len());
    let mut row = 0;
    for inc in joint.incidences() {
        for &i in inc {
            g[(row, i)] = 1.0;
            row += 1;
        }
    }
    ExpansionMatrix { g }
}

/// `(shape − 1)·log x − rate·x`.
pub fn log_gamma_kernel(x: f64, shape: f64, rate: f64) -> f64 {
    (shape - 1.0) * x.ln() - rate * x
}

/// Sum of all prior and likelihood terms; `−∞` when the true dates violate a
/// record's order.
pub fn log_posterior(state: &ConsensusState, obs: &Observations, config: &ModelConfig) -> Result<f64> {
    let joint = obs.joint();
    if !(state.lambda0 > 0.0) {
        return Err(Error::invalid("λ0 must be positive"));
    }
    let mut total = log_gamma_kernel(state.lambda0, config.eta, config.beta);

    match &state.sigmas {
        ErrorCovariance::PerRecord(sigmas) => {
            for (k, sigma) in sigmas.iter().enumerate() {
                let p = &config.records[k];
                let w = DMatrix::identity(sigma.nrows(), sigma.nrows()) * p.w;
                total += log_inv_wishart(sigma, &w, p.nu)?;
            }
        }
        ErrorCovariance::Pooled(sigma) => {
            let w = DMatrix::from_diagonal(&dvec(&config.pooled_scale_diagonal(joint)));
            total += log_inv_wishart(sigma, &w, config.pooled_dof(joint))?;
        }
    }

    let tau: &[f64] = if config.random_dates { &state.tau } else { joint.dates() };
    if config.random_dates && !tau_order_ok(tau, joint) {
        return Ok(f64::NEG_INFINITY);
    }
    let layout = TauLayout::new(tau)?;
    let mu: Vec<f64> = state.mu.iter().copied().collect();
    let n = joint.len() as f64;
    total += 0.5 * (n - 2.0) * state.lambda0.ln() - 0.5 * state.lambda0 * layout.roughness(&mu)?;
    if config.null_space_precision > 0.0 {
        let p = null_space_projector(tau);
        total -= 0.5 * config.null_space_precision * state.mu.dot(&(p * &state.mu));
    }

    total += log_likelihood(obs, state)?;
    if config.random_dates {
        let psi = joint.psi().ok_or_else(|| Error::Config("random dates need ψ".into()))?;
        total += date_log_likelihood(joint.dates(), tau, psi)?;
    }
    Ok(total)
}
