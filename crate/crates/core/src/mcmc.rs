//! Gibbs / Metropolis-Hastings sampler for the consensus posterior.
//!
//! One iteration updates `μ`, then every error covariance, then `λ0`, then
//! (with random dates) sweeps the true dates in ascending joint order.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::chronology::{AnomalySeries, JointChronology};
use crate::error::{Error, Result};
use crate::linalg::{self, dvec};
use crate::model::{
    build_expansion_matrix, null_space_projector, ConsensusState, ErrorCovariance, ErrorModel, ModelConfig,
    Observations, TauLayout,
};
use crate::stats;

/// Proposal standard deviation for `τ_i` as a fraction of `ψ_i`.
pub const TAU_PROPOSAL_SCALE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Keep full covariance matrices with each stored sample.
    #[serde(default)]
    pub keep_covariances: bool,
    /// Keep per-record conditional-mean contributions with each sample.
    #[serde(default)]
    pub keep_contributions: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            iterations: 4000,
            burn_in: 2000,
            thin: 1,
            seed: 1,
            keep_covariances: false,
            keep_contributions: false,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 {
            return Err(Error::Config("thinning must be at least 1".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::Config(format!(
                "burn-in ({}) must be smaller than the number of iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        Ok(())
    }

    pub fn stored_samples(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }
}

/// Gaussian full conditional of `μ`, held as mean and precision factor.
#[derive(Debug, Clone)]
pub struct MuConditional {
    mean: DVector<f64>,
    precision: Cholesky<f64, Dyn>,
}

impl MuConditional {
    /// Conditional mean `μ0`.
    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// Conditional covariance `Σ0` (dense inverse of the precision).
    pub fn covariance(&self) -> DMatrix<f64> {
        self.precision.inverse()
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let n = self.mean.len();
        let z = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let x = self.precision.l_dirty().tr_solve_lower_triangular(&z).expect("nonsingular factor");
        &self.mean + x
    }

    /// `Σ0 v`.
    pub fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        self.precision.solve(v)
    }
}

/// Build the full conditional of `μ`.
///
/// `k` is the roughness matrix in joint order; `extra_precision` is added to
/// the prior precision (used for the proper null-space prior).
pub fn mu_conditional(
    obs: &Observations,
    sigmas: &ErrorCovariance,
    lambda0: f64,
    k: &DMatrix<f64>,
    extra_precision: Option<&DMatrix<f64>>,
) -> Result<MuConditional> {
    let n = obs.joint().len();
    let (mut p, b) = data_precision(obs, sigmas)?;
    p += k * lambda0;
    if let Some(e) = extra_precision {
        p += e;
    }
    linalg::symmetrize(&mut p);
    let precision = linalg::cholesky_with_jitter(p, "μ conditional precision")?;
    let mean = precision.solve(&b);
    debug_assert_eq!(mean.len(), n);
    Ok(MuConditional { mean, precision })
}

/// `Σ_k Σ_k⁻¹` and `Σ_k Σ_k⁻¹ y_k` scattered to the joint chronology.
fn data_precision(obs: &Observations, sigmas: &ErrorCovariance) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let joint = obs.joint();
    let n = joint.len();
    let mut p = DMatrix::zeros(n, n);
    let mut b = DVector::zeros(n);
    match sigmas {
        ErrorCovariance::PerRecord(s) => {
            for (k, sigma) in s.iter().enumerate() {
                let inc = joint.incidence(k);
                let chol = linalg::cholesky_with_jitter(sigma.clone(), "record error covariance")?;
                let inv = chol.inverse();
                let iy = &inv * obs.record(k);
                for (a, &ia) in inc.iter().enumerate() {
                    b[ia] += iy[a];
                    for (c, &ic) in inc.iter().enumerate() {
                        p[(ia, ic)] += inv[(a, c)];
                    }
                }
            }
        }
        ErrorCovariance::Pooled(sigma) => {
            let g = build_expansion_matrix(joint);
            let chol = linalg::cholesky_with_jitter(sigma.clone(), "pooled error covariance")?;
            let sg = chol.solve(g.matrix());
            p = g.matrix().transpose() * sg;
            b = g.matrix().transpose() * chol.solve(obs.stacked());
        }
    }
    Ok((p, b))
}

/// Draw `μ` from its full conditional.
pub fn sample_mu_conditional<R: Rng + ?Sized>(
    state: &ConsensusState,
    obs: &Observations,
    k: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    Ok(mu_conditional(obs, &state.sigmas, state.lambda0, k, None)?.draw(rng))
}

/// Per-record terms `Σ0 Σ_k⁻¹ ỹ_k` of the conditional mean; they sum to `μ0`.
pub fn mean_contributions(
    obs: &Observations,
    sigmas: &ErrorCovariance,
    cond: &MuConditional,
) -> Result<Vec<DVector<f64>>> {
    let ErrorCovariance::PerRecord(s) = sigmas else {
        return Err(Error::UnsupportedMode(
            "record contributions are defined for per-record error covariances only".into(),
        ));
    };
    let joint = obs.joint();
    s.iter()
        .enumerate()
        .map(|(k, sigma)| {
            let chol = linalg::cholesky_with_jitter(sigma.clone(), "record error covariance")?;
            let iy = chol.solve(obs.record(k));
            let mut padded = DVector::zeros(joint.len());
            for (a, &i) in joint.incidence(k).iter().enumerate() {
                padded[i] = iy[a];
            }
            Ok(cond.solve(&padded))
        })
        .collect()
}

/// Draw from the inverse-Wishart with `nu` degrees of freedom and scale `psi`
/// (Bartlett decomposition of the corresponding Wishart).
pub fn sample_inverse_wishart<R: Rng + ?Sized>(nu: f64, psi: &DMatrix<f64>, rng: &mut R) -> Result<DMatrix<f64>> {
    let p = psi.nrows();
    if !(nu > p as f64 - 1.0) {
        return Err(Error::invalid(format!("inverse-Wishart needs nu > p - 1 (nu = {nu}, p = {p})")));
    }
    let c = linalg::cholesky_with_jitter(psi.clone(), "inverse-Wishart scale")?.unpack();
    let mut a = DMatrix::zeros(p, p);
    for i in 0..p {
        let chi = ChiSquared::new(nu - i as f64).map_err(|e| Error::numeric(e.to_string()))?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    // Σ = B Bᵀ with A Bᵀ = Cᵀ
    let bt = a.solve_lower_triangular(&c.transpose()).ok_or_else(|| Error::numeric("singular Bartlett factor"))?;
    let mut sigma = bt.transpose() * bt;
    linalg::symmetrize(&mut sigma);
    Ok(sigma)
}

/// Draw `Σ_k` from `IW(ν_k + 1, W_k + r rᵀ)` with `r = y_k − μ_k`.
pub fn sample_sigma_conditional<R: Rng + ?Sized>(
    y: &DVector<f64>,
    mu: &DVector<f64>,
    w: &DMatrix<f64>,
    nu: f64,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    if y.len() != mu.len() || w.nrows() != y.len() {
        return Err(Error::invalid("dimension mismatch in the covariance update"));
    }
    if !(nu + 1.0 > y.len() as f64 - 1.0) {
        return Err(Error::invalid(format!("degrees of freedom {nu} too small for dimension {}", y.len())));
    }
    let r = y - mu;
    let psi = w + &r * r.transpose();
    let sigma = sample_inverse_wishart(nu + 1.0, &psi, rng)?;
    linalg::cholesky(sigma.clone(), "sampled covariance")?;
    Ok(sigma)
}

/// Draw `λ0` from `Gamma((n−2)/2 + η, μᵀKμ/2 + β)` given the roughness `μᵀKμ`.
pub fn sample_lambda0_given_roughness<R: Rng + ?Sized>(
    roughness: f64,
    n: usize,
    eta: f64,
    beta: f64,
    rng: &mut R,
) -> Result<f64> {
    if !(eta > 0.0 && beta > 0.0) {
        return Err(Error::invalid("λ0 prior needs eta, beta > 0"));
    }
    let shape = 0.5 * (n as f64 - 2.0) + eta;
    let rate = 0.5 * roughness.max(0.0) + beta;
    let g = Gamma::new(shape, 1.0 / rate).map_err(|e| Error::numeric(e.to_string()))?;
    Ok(g.sample(rng))
}

pub fn sample_lambda0_conditional<R: Rng + ?Sized>(
    mu: &[f64],
    k: &crate::spline::RoughnessMatrix,
    eta: f64,
    beta: f64,
    rng: &mut R,
) -> Result<f64> {
    let r = crate::spline::roughness(mu, k)?;
    sample_lambda0_given_roughness(r, k.dim(), eta, beta, rng)
}

/// For each joint index, the (record, position) pairs that observe it.
fn memberships(joint: &JointChronology) -> Vec<Vec<(usize, usize)>> {
    let mut out = vec![Vec::new(); joint.len()];
    for (k, inc) in joint.incidences().iter().enumerate() {
        for (p, &i) in inc.iter().enumerate() {
            out[i].push((k, p));
        }
    }
    out
}

/// One random-walk Metropolis sweep over the true dates.
///
/// Returns one acceptance flag per joint date.
pub fn update_tau_mh<R: Rng + ?Sized>(
    state: &mut ConsensusState,
    joint: &JointChronology,
    psi: &[f64],
    rng: &mut R,
) -> Result<Vec<bool>> {
    let members = memberships(joint);
    tau_sweep(state, joint, &members, psi, rng)
}

fn tau_sweep<R: Rng + ?Sized>(
    state: &mut ConsensusState,
    joint: &JointChronology,
    members: &[Vec<(usize, usize)>],
    psi: &[f64],
    rng: &mut R,
) -> Result<Vec<bool>> {
    let n = joint.len();
    if psi.len() != n || state.tau.len() != n {
        return Err(Error::invalid("true dates and dating errors must match the joint chronology"));
    }
    let t = joint.dates();
    let mu: Vec<f64> = state.mu.iter().copied().collect();
    let mut current_r = TauLayout::new(&state.tau)?.roughness(&mu)?;
    let mut accepted = vec![false; n];
    for i in 0..n {
        let step: f64 =
            Normal::new(0.0, TAU_PROPOSAL_SCALE * psi[i]).map_err(|e| Error::invalid(e.to_string()))?.sample(rng);
        let old = state.tau[i];
        let proposal = old + step;
        let ordered = members[i].iter().all(|&(k, p)| {
            let inc = joint.incidence(k);
            (p == 0 || state.tau[inc[p - 1]] < proposal) && (p + 1 == inc.len() || proposal < state.tau[inc[p + 1]])
        });
        if !ordered || !proposal.is_finite() || state.tau.contains(&proposal) {
            // consume the uniform anyway so the stream does not depend on the branch
            let _: f64 = rng.random();
            continue;
        }
        state.tau[i] = proposal;
        let new_r = TauLayout::new(&state.tau)?.roughness(&mu)?;
        let two_psi2 = 2.0 * psi[i] * psi[i];
        let log_ratio =
            -((t[i] - proposal).powi(2) - (t[i] - old).powi(2)) / two_psi2 - 0.5 * state.lambda0 * (new_r - current_r);
        let u: f64 = rng.random();
        if u.ln() < log_ratio {
            accepted[i] = true;
            current_r = new_r;
        } else {
            state.tau[i] = old;
        }
    }
    Ok(accepted)
}

/// Trace summary of one scalar parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub parameter: String,
    pub mean: f64,
    pub sd: f64,
    pub geweke_z: f64,
}

/// One stored posterior sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSample {
    pub iteration: usize,
    pub mu: Vec<f64>,
    /// Conditional mean `μ0` given the stored covariances, `λ0` and `τ`.
    pub mu_mean: Vec<f64>,
    pub lambda0: f64,
    pub tau: Vec<f64>,
    pub sigma_diag: Vec<Vec<f64>>,
    pub sigmas: Option<ErrorCovariance>,
    /// `Σ0 Σ_k⁻¹ ỹ_k` per record, joint order.
    pub contributions: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone)]
pub struct Chain {
    joint: JointChronology,
    samples: Vec<ChainSample>,
    error_model: ErrorModel,
    random_dates: bool,
    tau_acceptance: Option<Vec<f64>>,
    summaries: Vec<TraceSummary>,
}

impl Chain {
    /// Assemble a chain from externally produced samples.
    pub fn from_samples(
        joint: JointChronology,
        samples: Vec<ChainSample>,
        error_model: ErrorModel,
        random_dates: bool,
    ) -> Result<Self> {
        let n = joint.len();
        if samples.iter().any(|s| s.mu.len() != n || s.tau.len() != n || s.mu_mean.len() != n) {
            return Err(Error::invalid("sample dimensions differ from the joint chronology"));
        }
        let summaries = summarize(&samples);
        Ok(Chain { joint, samples, error_model, random_dates, tau_acceptance: None, summaries })
    }

    pub fn joint(&self) -> &JointChronology {
        &self.joint
    }

    pub fn samples(&self) -> &[ChainSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn error_model(&self) -> ErrorModel {
        self.error_model
    }

    pub fn random_dates(&self) -> bool {
        self.random_dates
    }

    pub fn tau_acceptance(&self) -> Option<&[f64]> {
        self.tau_acceptance.as_deref()
    }

    pub fn summaries(&self) -> &[TraceSummary] {
        &self.summaries
    }
}

fn summary(name: String, trace: &[f64]) -> TraceSummary {
    TraceSummary {
        parameter: name,
        mean: stats::mean(trace),
        sd: stats::sample_sd(trace),
        geweke_z: stats::geweke_z(trace),
    }
}

fn summarize(samples: &[ChainSample]) -> Vec<TraceSummary> {
    if samples.is_empty() {
        return Vec::new();
    }
    let mut out = vec![summary("lambda0".into(), &samples.iter().map(|s| s.lambda0).collect::<Vec<_>>())];
    let n = samples[0].mu.len();
    for i in 0..n {
        out.push(summary(format!("mu[{i}]"), &samples.iter().map(|s| s.mu[i]).collect::<Vec<_>>()));
    }
    out
}

/// Sampler state that persists across iterations.
#[derive(Debug, Clone)]
pub struct Sampler {
    obs: Observations,
    model: ModelConfig,
    members: Vec<Vec<(usize, usize)>>,
    k: DMatrix<f64>,
    layout: TauLayout,
    null_precision: Option<DMatrix<f64>>,
    record_scales: Vec<DMatrix<f64>>,
    pooled_scale: Option<DMatrix<f64>>,
    pooled_nu: f64,
}

impl Sampler {
    pub fn new(obs: Observations, model: ModelConfig) -> Result<Self> {
        let joint = obs.joint();
        model.validate(joint)?;
        let t = joint.dates();
        let layout = TauLayout::new(t)?;
        let k = layout.roughness_matrix()?;
        let null_precision =
            (model.null_space_precision > 0.0).then(|| null_space_projector(t) * model.null_space_precision);
        let record_scales = model
            .records
            .iter()
            .enumerate()
            .map(|(k, p)| DMatrix::identity(joint.incidence(k).len(), joint.incidence(k).len()) * p.w)
            .collect();
        let (pooled_scale, pooled_nu) = match model.error_model {
            ErrorModel::Pooled => {
                (Some(DMatrix::from_diagonal(&dvec(&model.pooled_scale_diagonal(joint)))), model.pooled_dof(joint))
            }
            ErrorModel::PerRecord => (None, 0.0),
        };
        Ok(Sampler {
            members: memberships(joint),
            obs,
            model,
            k,
            layout,
            null_precision,
            record_scales,
            pooled_scale,
            pooled_nu,
        })
    }

    pub fn observations(&self) -> &Observations {
        &self.obs
    }

    pub fn model(&self) -> &ModelConfig {
        &self.model
    }

    /// Replace the data vectors (same chronology).
    pub fn set_records(&mut self, y: Vec<DVector<f64>>) -> Result<()> {
        self.obs = Observations::from_vectors(self.obs.joint().clone(), y)?;
        Ok(())
    }

    /// Roughness matrix for the current true dates, joint order.
    pub fn roughness_matrix(&self) -> &DMatrix<f64> {
        &self.k
    }

    /// `λ0` from its prior, covariances at their prior means, `τ = t`, and
    /// one conditional draw of `μ`.
    pub fn initial_state<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<ConsensusState> {
        let joint = self.obs.joint();
        let lambda0 =
            Gamma::new(self.model.eta, 1.0 / self.model.beta).map_err(|e| Error::Config(e.to_string()))?.sample(rng);
        let sigmas = match self.model.error_model {
            ErrorModel::PerRecord => ErrorCovariance::PerRecord(
                (0..joint.num_records()).map(|k| self.model.prior_mean_sigma(k, joint.incidence(k).len())).collect(),
            ),
            ErrorModel::Pooled => {
                let j = joint.total_observations() as f64;
                let w = self.pooled_scale.as_ref().expect("pooled scale");
                ErrorCovariance::Pooled(w / (self.pooled_nu - j - 1.0))
            }
        };
        let tau = joint.dates().to_vec();
        let n = joint.len();
        self.reset_dates(&tau)?;
        let mut state = ConsensusState { mu: DVector::zeros(n), sigmas, lambda0, tau };
        state.mu = self.mu_conditional(&state)?.draw(rng);
        Ok(state)
    }

    fn reset_dates(&mut self, tau: &[f64]) -> Result<()> {
        self.layout = TauLayout::new(tau)?;
        self.k = self.layout.roughness_matrix()?;
        if self.model.null_space_precision > 0.0 {
            self.null_precision = Some(null_space_projector(tau) * self.model.null_space_precision);
        }
        Ok(())
    }

    pub fn mu_conditional(&self, state: &ConsensusState) -> Result<MuConditional> {
        mu_conditional(&self.obs, &state.sigmas, state.lambda0, &self.k, self.null_precision.as_ref())
    }

    /// One full sweep; returns τ acceptance flags when dates are random.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        state: &mut ConsensusState,
        iteration: usize,
        rng: &mut R,
    ) -> Result<Option<Vec<bool>>> {
        state.mu = self.mu_conditional(state).map_err(|e| e.at(iteration, "mu"))?.draw(rng);

        let joint = self.obs.joint();
        match &mut state.sigmas {
            ErrorCovariance::PerRecord(sigmas) => {
                for (k, sigma) in sigmas.iter_mut().enumerate() {
                    let inc = joint.incidence(k);
                    let mu_k = DVector::from_iterator(inc.len(), inc.iter().map(|&i| state.mu[i]));
                    *sigma = sample_sigma_conditional(
                        self.obs.record(k),
                        &mu_k,
                        &self.record_scales[k],
                        self.model.records[k].nu,
                        rng,
                    )
                    .map_err(|e| e.at(iteration, &format!("sigma[{k}]")))?;
                }
            }
            ErrorCovariance::Pooled(sigma) => {
                let g = build_expansion_matrix(joint);
                let gmu = g.matrix() * &state.mu;
                let w = self.pooled_scale.as_ref().expect("pooled scale");
                *sigma = sample_sigma_conditional(self.obs.stacked(), &gmu, w, self.pooled_nu, rng)
                    .map_err(|e| e.at(iteration, "sigma"))?;
            }
        }

        let mu: Vec<f64> = state.mu.iter().copied().collect();
        let r = self.layout.roughness(&mu)?;
        state.lambda0 = sample_lambda0_given_roughness(r, joint.len(), self.model.eta, self.model.beta, rng)
            .map_err(|e| e.at(iteration, "lambda0"))?;

        if !self.model.random_dates {
            return Ok(None);
        }
        let psi = joint.psi().ok_or_else(|| Error::Config("random dates need ψ".into()))?.to_vec();
        let joint = joint.clone();
        let flags = tau_sweep(state, &joint, &self.members, &psi, rng).map_err(|e| e.at(iteration, "tau"))?;
        if flags.iter().any(|&a| a) {
            self.reset_dates(&state.tau).map_err(|e| e.at(iteration, "tau"))?;
        }
        Ok(Some(flags))
    }

    fn store(&self, state: &ConsensusState, iteration: usize, sampler: &SamplerConfig) -> Result<ChainSample> {
        let cond = self.mu_conditional(state).map_err(|e| e.at(iteration, "mu"))?;
        let contributions = if sampler.keep_contributions && self.model.error_model == ErrorModel::PerRecord {
            Some(
                mean_contributions(&self.obs, &state.sigmas, &cond)?
                    .into_iter()
                    .map(|c| c.iter().copied().collect())
                    .collect(),
            )
        } else {
            None
        };
        Ok(ChainSample {
            iteration,
            mu: state.mu.iter().copied().collect(),
            mu_mean: cond.mean().iter().copied().collect(),
            lambda0: state.lambda0,
            tau: state.tau.clone(),
            sigma_diag: state.sigmas.diagonals(self.obs.joint()),
            sigmas: sampler.keep_covariances.then(|| state.sigmas.clone()),
            contributions,
        })
    }
}

/// Run one chain on centered records.
pub fn run_chain(
    data: &[AnomalySeries],
    joint: &JointChronology,
    model: &ModelConfig,
    sampler: &SamplerConfig,
) -> Result<Chain> {
    let obs = Observations::new(data, joint.clone())?;
    run_chain_on(obs, model, sampler)
}

pub fn run_chain_on(obs: Observations, model: &ModelConfig, config: &SamplerConfig) -> Result<Chain> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut sampler = Sampler::new(obs, model.clone())?;
    let mut state = sampler.initial_state(&mut rng)?;
    let n = sampler.obs.joint().len();
    let mut accepted = vec![0usize; n];
    let mut samples = Vec::with_capacity(config.stored_samples());
    for it in 0..config.iterations {
        if let Some(flags) = sampler.step(&mut state, it, &mut rng)? {
            for (a, f) in accepted.iter_mut().zip(flags) {
                *a += f as usize;
            }
        }
        if it >= config.burn_in && (it + 1 - config.burn_in).is_multiple_of(config.thin) {
            samples.push(sampler.store(&state, it, config)?);
        }
        if (it + 1) % 1000 == 0 {
            log::info!("iteration {}/{}", it + 1, config.iterations);
        }
    }
    let tau_acceptance =
        model.random_dates.then(|| accepted.iter().map(|&a| a as f64 / config.iterations as f64).collect());
    let summaries = summarize(&samples);
    for s in summaries.iter().filter(|s| s.geweke_z.abs() > 3.0) {
        log::warn!("{}: Geweke z = {:.2}", s.parameter, s.geweke_z);
    }
    Ok(Chain {
        joint: sampler.obs.joint().clone(),
        samples,
        error_model: model.error_model,
        random_dates: model.random_dates,
        tau_acceptance,
        summaries,
    })
}
