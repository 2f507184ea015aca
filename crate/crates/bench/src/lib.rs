//! Shared fixtures for the benchmarks.

use consensus_core::chronology::{AnomalySeries, JointChronology};
use consensus_core::pipeline::{self, ErrorMode, RunConfig};
use consensus_core::synthetic::{self, SyntheticSpec};
use consensus_core::ModelConfig;

/// Centered records, their joint chronology and a small-error model for
/// `records` synthetic records split over `cores` cores.
pub fn fixture(
    records: usize,
    cores: usize,
    samples: usize,
    random_dates: bool,
) -> (Vec<AnomalySeries>, JointChronology, ModelConfig) {
    let spec = SyntheticSpec {
        records,
        cores,
        samples_per_record: samples,
        dating_sd_young: 30.0,
        dating_sd_old: 150.0,
        seed: 21,
        ..Default::default()
    };
    let data = synthetic::simulate(&spec).expect("valid spec");
    let config = RunConfig { random_dates, error_mode: ErrorMode::Small, ..Default::default() };
    let p = pipeline::prepare_records(&config, data.records).expect("prepared");
    debug_assert_eq!(p.anomalies.len(), records);
    (p.anomalies, p.joint, p.model)
}
