//! Partitioning classification on cubic partitions, from observable data and under local
//! differential privacy, with exact excess-risk oracles and rate-of-convergence experiments.
//!
//! The binary rule predicts `sign(sum of Y_i over the cell)`; the multi-class rule predicts the
//! class with the largest count in the cell. The privatized variants replace the raw cell
//! contributions by Laplace-perturbed reports released by each data holder.

pub mod classifier;
pub mod conditions;
pub mod distributions;
pub mod error;
pub mod experiments;
pub mod partition;
pub mod privatizer;
pub mod quad;
pub mod risk;
pub mod seeds;
pub mod stats;

pub use classifier::{fit, predict, predict_batch, PartitionClassifier};
pub use conditions::{fit_exponent, ConditionProbe, ExponentEstimate};
pub use distributions::{
    example1, example2, example3, Dataset, Density, Label, LabelSet, LabeledSample, MixtureDistribution, Posterior,
    Regression,
};
pub use error::{Error, Result};
pub use experiments::{fit_rate, run_sweep, BandwidthRule, EvalMode, RateTable, SweepConfig, SweepMode};
pub use partition::{cell_key, enumerate_cells, CellKey, CellUniverse, PartitionSpec};
pub use privatizer::{fit_private, ldp_log_ratio, NoiseMode, PrivacyParams, PrivatizedRecord};
pub use risk::{excess_risk_exact, excess_risk_mc, RiskEvaluator, RiskMethod, RiskReport};
pub use stats::Estimate;
