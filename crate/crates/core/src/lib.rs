//! Active beam alignment driven by a noisy twenty-questions search over angle bins.
//!
//! A uniform linear array probes angular regions with unit-norm beamformers.
//! Each probe answers "is the path inside this region?" through a 1-bit
//! energy detector or the full complex response, and a Bayesian questioner
//! picks the next region from its posterior. Regions become beams through the
//! linear weighted sum, trained networks, or a hybrid of the two.

pub mod baselines;
pub mod beamformer;
pub mod channel;
pub mod error;
pub mod experiment;
pub mod fading;
pub mod geometry;
pub mod mlp;
pub mod questioner;

pub use beamformer::{Beamformer, Hybrid, Lws, MlpMapper, QueryMapper};
pub use channel::{ChannelParams, QueryDependentChannel, ResponseModel};
pub use error::{Error, Result};
pub use experiment::{
    Algorithm, ExperimentConfig, FadingMode, OutputFormat, ResultRow, ResultTable,
};
pub use fading::FadingPrior;
pub use geometry::{AngleGrid, GridSpec, SteeringVector};
pub use mlp::{MlpModel, TrainConfig};
pub use questioner::{
    Alignment, FadingEstimator, FlipModel, Measurement, MeasurementRule, Posterior, Query,
    QueryStrategy, SortPm, TrialResult,
};
