//! Bayesian consensus of noisy, irregularly dated proxy records with
//! multi-scale trend credibility maps.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod chronology;
pub mod error;
pub mod io;
pub mod linalg;
pub mod mcmc;
pub mod model;
pub mod pipeline;
pub mod render;
pub mod scale_space;
pub mod spline;
pub mod stats;
pub mod synthetic;

pub use chronology::{AnomalySeries, JointChronology, ProxySeries};
pub use error::{Error, Result};
pub use mcmc::{Chain, ChainSample, SamplerConfig};
pub use model::{ConsensusState, ErrorCovariance, ErrorModel, ModelConfig, RecordPrior};
pub use pipeline::{ErrorMode, RunConfig};
pub use scale_space::{CredibilityMap, Flag, ScaleGrid, TimeGrid};
pub use spline::{KnotGrid, RoughnessMatrix};
pub use synthetic::{Signal, SyntheticSpec};
