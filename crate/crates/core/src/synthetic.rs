//! Synthetic records drawn from a known signal, for validation runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::chronology::ProxySeries;
use crate::error::{Error, Result};

/// Ground-truth signal as a function of age in years BP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Signal {
    Line { intercept: f64, slope: f64 },
    Sine { amplitude: f64, period: f64, phase: f64 },
    SumOfSines { components: Vec<SineComponent> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SineComponent {
    pub amplitude: f64,
    pub period: f64,
    pub phase: f64,
}

impl Signal {
    pub fn value(&self, age_bp: f64) -> f64 {
        let wave = |a: f64, p: f64, ph: f64| a * (std::f64::consts::TAU * age_bp / p + ph).sin();
        match self {
            Signal::Line { intercept, slope } => intercept + slope * age_bp,
            Signal::Sine { amplitude, period, phase } => wave(*amplitude, *period, *phase),
            Signal::SumOfSines { components } => components.iter().map(|c| wave(c.amplitude, c.period, c.phase)).sum(),
        }
    }

    /// Two sines of periods 6000 and 2000 years.
    pub fn two_sines() -> Self {
        Signal::SumOfSines {
            components: vec![
                SineComponent { amplitude: 1.0, period: 6000.0, phase: 0.3 },
                SineComponent { amplitude: 0.5, period: 2000.0, phase: 1.1 },
            ],
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            Signal::Line { intercept, slope } => intercept.is_finite() && slope.is_finite(),
            Signal::Sine { amplitude, period, phase } => amplitude.is_finite() && *period > 0.0 && phase.is_finite(),
            Signal::SumOfSines { components } => {
                !components.is_empty()
                    && components.iter().all(|c| c.amplitude.is_finite() && c.period > 0.0 && c.phase.is_finite())
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config("signal parameters must be finite with positive periods".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub signal: Signal,
    pub records: usize,
    /// Observation noise standard deviation, shared by all records.
    pub noise_sd: f64,
    pub samples_per_record: usize,
    /// Records are split round-robin over this many cores; records of one
    /// core share their chronology.
    pub cores: usize,
    pub age_min: f64,
    pub age_max: f64,
    /// Dating standard deviation at `age_min` and `age_max` (linear in between).
    pub dating_sd_young: f64,
    pub dating_sd_old: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            signal: Signal::two_sines(),
            records: 3,
            noise_sd: 0.2,
            samples_per_record: 60,
            cores: 1,
            age_min: 0.0,
            age_max: 10_000.0,
            dating_sd_young: 0.0,
            dating_sd_old: 0.0,
            seed: 1,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        self.signal.validate()?;
        if self.records == 0 || self.cores == 0 || self.cores > self.records {
            return Err(Error::Config("need 1 <= cores <= records".into()));
        }
        if self.samples_per_record < 3 {
            return Err(Error::Config("need at least 3 samples per record".into()));
        }
        if !(self.noise_sd >= 0.0 && self.dating_sd_young >= 0.0 && self.dating_sd_old >= 0.0) {
            return Err(Error::Config("standard deviations must be >= 0".into()));
        }
        if !(self.age_max > self.age_min) || !self.age_min.is_finite() || !self.age_max.is_finite() {
            return Err(Error::Config("age range must be finite and increasing".into()));
        }
        Ok(())
    }

    pub fn dating_sd(&self, age_bp: f64) -> f64 {
        let f = (age_bp - self.age_min) / (self.age_max - self.age_min);
        self.dating_sd_young + f * (self.dating_sd_old - self.dating_sd_young)
    }
}

/// Generated records plus the true ages of each sample.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub records: Vec<ProxySeries>,
    /// True ages (BP) of each record's samples, in the records' row order.
    pub true_ages: Vec<Vec<f64>>,
}

/// Minimum spacing of observed ages within a core, so that default binning
/// never merges two samples of one record.
pub const MIN_AGE_GAP: f64 = 2.0 * crate::chronology::DEFAULT_BIN_WIDTH;
const MAX_REDRAWS: usize = 100;

/// Jittered regular ages: one uniform draw per cell of an even partition.
fn core_ages<R: Rng>(spec: &SyntheticSpec, rng: &mut R) -> Vec<f64> {
    let j = spec.samples_per_record;
    let cell = (spec.age_max - spec.age_min) / j as f64;
    (0..j).map(|i| spec.age_min + cell * (i as f64 + 0.1 + 0.8 * rng.random::<f64>())).collect()
}

pub fn simulate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let std = Normal::new(0.0, 1.0).expect("unit normal");

    // per core: (observed age, true age, dating sd)
    let mut cores = Vec::with_capacity(spec.cores);
    for _ in 0..spec.cores {
        let truth = core_ages(spec, &mut rng);
        let mut observed: Vec<(f64, f64, f64)> = Vec::with_capacity(truth.len());
        for &a in &truth {
            let sd = spec.dating_sd(a);
            if sd == 0.0 {
                observed.push((a, a, sd));
                continue;
            }
            let floor = observed.last().map_or(f64::NEG_INFINITY, |o| o.0 + MIN_AGE_GAP);
            // redraw errors that would break the core's age order
            let mut age = a + sd * std.sample(&mut rng);
            for _ in 0..MAX_REDRAWS {
                if age >= floor {
                    break;
                }
                age = a + sd * std.sample(&mut rng);
            }
            observed.push((age.max(floor), a, sd));
        }
        cores.push(observed);
    }

    let mut records = Vec::with_capacity(spec.records);
    let mut true_ages = Vec::with_capacity(spec.records);
    for k in 0..spec.records {
        let core = &cores[k % spec.cores];
        let values: Vec<f64> =
            core.iter().map(|&(_, a, _)| spec.signal.value(a) + spec.noise_sd * std.sample(&mut rng)).collect();
        let sd = (spec.dating_sd_old > 0.0 || spec.dating_sd_young > 0.0).then(|| core.iter().map(|c| c.2).collect());
        records.push(ProxySeries::from_ages_bp(
            format!("rec{}", k + 1),
            core.iter().map(|c| c.0).collect(),
            values,
            sd,
        )?);
        true_ages.push(core.iter().map(|c| c.1).collect());
    }
    Ok(SyntheticData { records, true_ages })
}

/// `(age_bp, value)` of the signal on a uniform grid.
pub fn truth_curve(spec: &SyntheticSpec, points: usize) -> Vec<(f64, f64)> {
    let step = (spec.age_max - spec.age_min) / (points.max(2) - 1) as f64;
    (0..points.max(2))
        .map(|i| {
            let a = spec.age_min + step * i as f64;
            (a, spec.signal.value(a))
        })
        .collect()
}
