//! End-to-end runs: ingestion, prior setup, sampling, maps and output files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::chronology::{self, AnomalySeries, JointChronology, ProxySeries};
use crate::error::{Error, Result};
use crate::io;
use crate::mcmc::{self, Chain, SamplerConfig};
use crate::model::{self, ErrorModel, ModelConfig, RecordPrior};
use crate::render;
use crate::scale_space::{self, CredibilityMap, ScaleGrid, TimeGrid};
use crate::spline::{build_roughness_matrix, KnotGrid};
use crate::synthetic::{self, SyntheticSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorMode {
    /// `w = 0.5`, bounds elicited from each record.
    Large,
    /// `w = 50`, bound 0.2 for every record.
    Small,
    /// Scale and bounds given explicitly.
    Custom,
}

impl std::str::FromStr for ErrorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "large" => Ok(ErrorMode::Large),
            "small" => Ok(ErrorMode::Small),
            "custom" => Ok(ErrorMode::Custom),
            _ => Err(Error::Config(format!("unknown error mode '{s}' (large, small or custom)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub inputs: Vec<PathBuf>,
    pub out: PathBuf,
    pub bin_width: f64,
    pub error_mode: ErrorMode,
    /// Prior scale `w` for every record; mode default when absent.
    pub prior_scale: Option<f64>,
    /// Bound for records without an explicit override.
    pub default_sigma_bar: Option<f64>,
    /// Per-record bounds, keyed by record id.
    pub sigma_bar: BTreeMap<String, f64>,
    pub eta: f64,
    pub beta: f64,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub random_dates: bool,
    pub extended: bool,
    pub alpha: f64,
    pub scale_levels: usize,
    pub lambda_min: Option<f64>,
    pub lambda_max: Option<f64>,
    pub time_points: usize,
    /// Marker levels as fractions of the scale grid (0 = finest).
    pub markers: Vec<f64>,
    pub psi_bandwidth: Option<f64>,
    pub psi_floor: f64,
    pub write_chain: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let s = SamplerConfig::default();
        RunConfig {
            inputs: Vec::new(),
            out: PathBuf::from("out"),
            bin_width: chronology::DEFAULT_BIN_WIDTH,
            error_mode: ErrorMode::Large,
            prior_scale: None,
            default_sigma_bar: None,
            sigma_bar: BTreeMap::new(),
            eta: model::DEFAULT_ETA,
            beta: model::DEFAULT_BETA,
            iterations: s.iterations,
            burn_in: s.burn_in,
            thin: s.thin,
            seed: s.seed,
            random_dates: false,
            extended: false,
            alpha: 0.8,
            scale_levels: scale_space::DEFAULT_SCALE_LEVELS,
            lambda_min: None,
            lambda_max: None,
            time_points: scale_space::DEFAULT_TIME_POINTS,
            markers: vec![0.25, 0.5, 0.75],
            psi_bandwidth: None,
            psi_floor: chronology::DEFAULT_PSI_FLOOR,
            write_chain: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.inputs.is_empty() {
            return Err(Error::Config("no input files given".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.scale_levels == 0 || self.time_points < 2 {
            return Err(Error::Config("need at least 1 scale level and 2 time points".into()));
        }
        if self.markers.iter().any(|m| !(0.0..=1.0).contains(m)) {
            return Err(Error::Config("marker fractions must lie in [0, 1]".into()));
        }
        if self.extended && self.random_dates {
            log::info!("random dates with pooled errors: the pooled covariance is updated with fixed stacking");
        }
        self.sampler().validate()
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            iterations: self.iterations,
            burn_in: self.burn_in,
            thin: self.thin,
            seed: self.seed,
            keep_covariances: false,
            keep_contributions: !self.extended,
        }
    }

    pub fn marker_levels(&self, levels: usize) -> Vec<usize> {
        let mut out: Vec<usize> =
            self.markers.iter().map(|f| (f * (levels.saturating_sub(1)) as f64).round() as usize).collect();
        out.dedup();
        out
    }
}

/// Ingested data ready for sampling.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub records: Vec<ProxySeries>,
    pub anomalies: Vec<AnomalySeries>,
    pub joint: JointChronology,
    pub model: ModelConfig,
}

pub fn load_inputs(paths: &[PathBuf]) -> Result<Vec<ProxySeries>> {
    let mut all: Vec<ProxySeries> = Vec::new();
    for p in paths {
        for r in io::read_records(p)? {
            if all.iter().any(|x| x.id() == r.id()) {
                return Err(Error::Config(format!("record id '{}' appears in more than one input", r.id())));
            }
            all.push(r);
        }
    }
    Ok(all)
}

/// Error bounds and priors per record for the configured error mode.
pub fn record_priors(config: &RunConfig, anomalies: &[AnomalySeries]) -> Result<Vec<RecordPrior>> {
    for id in config.sigma_bar.keys() {
        if !anomalies.iter().any(|a| a.id() == id) {
            return Err(Error::Config(format!("--sigma-bar names unknown record '{id}'")));
        }
    }
    let w = match (config.error_mode, config.prior_scale) {
        (_, Some(w)) => w,
        (ErrorMode::Large, None) => model::LARGE_ERROR_W,
        (ErrorMode::Small, None) => model::SMALL_ERROR_W,
        (ErrorMode::Custom, None) => {
            return Err(Error::Config("custom error mode needs an explicit prior scale (--prior-scale)".into()))
        }
    };
    anomalies
        .iter()
        .map(|a| {
            let bound = match (config.sigma_bar.get(a.id()), config.error_mode) {
                (Some(&b), _) => b,
                (None, ErrorMode::Large) => model::elicit_error_bound(a.values())?,
                (None, ErrorMode::Small) => config.default_sigma_bar.unwrap_or(model::SMALL_ERROR_SIGMA_BAR),
                (None, ErrorMode::Custom) => config
                    .default_sigma_bar
                    .ok_or_else(|| Error::Config(format!("custom error mode needs a bound for record '{}'", a.id())))?,
            };
            RecordPrior::from_bound(bound, w, a.len()).map_err(|e| match e {
                Error::InvalidInput(m) => Error::Config(format!("record '{}': {m}", a.id())),
                other => other,
            })
        })
        .collect()
}

pub fn prepare(config: &RunConfig) -> Result<Prepared> {
    config.validate()?;
    let raw = load_inputs(&config.inputs)?;
    prepare_records(config, raw)
}

pub fn prepare_records(config: &RunConfig, raw: Vec<ProxySeries>) -> Result<Prepared> {
    if config.random_dates {
        if let Some(r) = raw.iter().find(|r| r.date_sd().is_none()) {
            return Err(Error::Config(format!("random dates need the 'age_sd' column; record '{}' has none", r.id())));
        }
    }
    let records = if config.bin_width > 0.0 { chronology::bin_dates(&raw, config.bin_width)? } else { raw };
    let anomalies: Vec<AnomalySeries> = records.iter().map(chronology::center).collect::<Result<_>>()?;
    let mut joint = chronology::merge_chronologies(&anomalies)?;
    if config.random_dates {
        joint = joint.with_smoothed_psi(config.psi_bandwidth, config.psi_floor)?;
    }
    let mut model = ModelConfig::new(record_priors(config, &anomalies)?);
    model.eta = config.eta;
    model.beta = config.beta;
    model.random_dates = config.random_dates;
    model.error_model = if config.extended { ErrorModel::Pooled } else { ErrorModel::PerRecord };
    model.validate(&joint)?;
    Ok(Prepared { records, anomalies, joint, model })
}

/// Scale grid from explicit bounds, or from effective degrees of freedom
/// `n − 1` down to 2.5 on the observed dates.
pub fn scale_grid(config: &RunConfig, joint: &JointChronology) -> Result<ScaleGrid> {
    let (lo, hi) = match (config.lambda_min, config.lambda_max) {
        (Some(a), Some(b)) => (a, b),
        (a, b) => {
            let k = build_roughness_matrix(&KnotGrid::new(joint.dates().to_vec())?)?;
            let eig = k.eigenvalues();
            let n = eig.len() as f64;
            (
                a.map_or_else(|| scale_space::lambda_for_edf(&eig, n - 1.0), Ok)?,
                b.map_or_else(|| scale_space::lambda_for_edf(&eig, scale_space::DEFAULT_MIN_EDF), Ok)?,
            )
        }
    };
    ScaleGrid::log_spaced(lo, hi, config.scale_levels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordSummary {
    pub id: String,
    pub samples: usize,
    pub mean: f64,
    pub sigma_bar: Option<f64>,
    pub w: f64,
    pub nu: f64,
}

/// Everything needed to rerun, plus resolved values for reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config: RunConfig,
    pub joint_dates: usize,
    pub records: Vec<RecordSummary>,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub marker_lambdas: Vec<f64>,
}

pub fn load_manifest(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read manifest '{}': {e}", path.display())))?;
    let m: Manifest = serde_json::from_str(&text)?;
    Ok(m.config)
}

#[derive(Debug, Clone)]
pub struct AnalysisReport {
    pub chain: Chain,
    pub map: CredibilityMap,
    pub manifest: Manifest,
    pub files: Vec<PathBuf>,
}

pub fn analyze(config: &RunConfig) -> Result<AnalysisReport> {
    let prepared = prepare(config)?;
    analyze_prepared(config, prepared)
}

pub fn analyze_prepared(config: &RunConfig, prepared: Prepared) -> Result<AnalysisReport> {
    let Prepared { anomalies, joint, model, .. } = prepared;
    log::info!("{} records, {} joint dates", anomalies.len(), joint.len());
    let chain = mcmc::run_chain(&anomalies, &joint, &model, &config.sampler())?;
    if let Some(acc) = chain.tau_acceptance() {
        log::info!("mean date acceptance rate {:.3}", acc.iter().sum::<f64>() / acc.len() as f64);
    }

    let scales = scale_grid(config, &joint)?;
    let times = TimeGrid::spanning(&joint, config.time_points)?;
    let map = scale_space::build_credibility_map(&chain, &scales, &times, config.alpha)?;
    let markers = config.marker_levels(scales.len());

    std::fs::create_dir_all(&config.out)?;
    let mut files = Vec::new();
    let mut out = |name: &str| {
        let p = config.out.join(name);
        files.push(p.clone());
        p
    };
    io::write_to_path(&out("consensus.csv"), |w| io::write_consensus(w, &chain))?;
    io::write_to_path(&out("map.csv"), |w| io::write_map(w, &map))?;
    render::render_map_svg(&map, &markers, &out("map.svg"))?;
    io::write_to_path(&out("smooths.csv"), |w| io::write_smooths(w, &map, &markers))?;
    if model.error_model == ErrorModel::PerRecord {
        let mut curves = Vec::new();
        for &l in &markers {
            for k in 0..joint.num_records() {
                curves.push(scale_space::record_contributions(&chain, k, scales.lambdas()[l], &times)?);
            }
        }
        io::write_to_path(&out("contributions.csv"), |w| {
            io::write_contributions(w, joint.record_ids(), &curves, &times)
        })?;
    } else {
        log::warn!("record contributions are not defined for pooled errors; contributions.csv not written");
    }
    if config.write_chain {
        io::write_to_path(&out("chain.csv"), |w| io::write_chain(w, &chain))?;
    }

    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        joint_dates: joint.len(),
        records: anomalies
            .iter()
            .zip(&model.records)
            .map(|(a, p)| RecordSummary {
                id: a.id().to_string(),
                samples: a.len(),
                mean: a.original_mean(),
                sigma_bar: p.sigma_bar,
                w: p.w,
                nu: p.nu,
            })
            .collect(),
        lambda_min: scales.lambdas()[0],
        lambda_max: scales.lambdas()[scales.len() - 1],
        marker_lambdas: markers.iter().map(|&l| scales.lambdas()[l]).collect(),
    };
    let manifest_path = out("manifest.json");
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(AnalysisReport { chain, map, manifest, files })
}

/// Per-record error bounds `(id, samples, σ̄)` computed on centered values.
pub fn error_bounds(records: &[ProxySeries]) -> Result<Vec<(String, usize, f64)>> {
    records
        .iter()
        .map(|r| {
            let a = chronology::center(r)?;
            Ok((r.id().to_string(), r.len(), model::elicit_error_bound(a.values())?))
        })
        .collect()
}

/// Write `input.csv`, `truth.csv` and `spec.json` into `out`.
pub fn simulate_to(spec: &SyntheticSpec, out: &Path) -> Result<PathBuf> {
    let data = synthetic::simulate(spec)?;
    std::fs::create_dir_all(out)?;
    let input = out.join("input.csv");
    io::write_to_path(&input, |w| io::write_records(w, &data.records))?;
    io::write_to_path(&out.join("truth.csv"), |w| {
        use std::io::Write;
        writeln!(w, "age_bp,value")?;
        for (a, v) in synthetic::truth_curve(spec, 1001) {
            writeln!(w, "{a},{v}")?;
        }
        Ok(())
    })?;
    std::fs::write(out.join("spec.json"), serde_json::to_string_pretty(spec)? + "\n")?;
    Ok(input)
}
