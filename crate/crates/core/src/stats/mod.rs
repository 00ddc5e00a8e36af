//! Statistical tests and models used by the asymmetry analysis.

mod fdr;
mod hotelling;
mod mann_whitney;
mod ols;
mod pca;
mod pointwise;
mod shapiro;
mod volume;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fdr::{bh_threshold, fdr_bh};
pub use hotelling::{hotelling_t2, pooled_t};
pub use mann_whitney::{mann_whitney_u, mann_whitney_normal_p, ExactUDistribution, EXACT_PAIR_LIMIT};
pub use ols::{ols_fit, OlsDesign, OlsFit};
pub use pca::{horn_parallel_analysis, pca, percentile, HornCriterion, HornResult, Pca};
pub use pointwise::{covariate_design, pointwise_linear_models, PointStat, PointwiseStats};
pub use shapiro::shapiro_wilk;
pub use volume::{volume_analysis, volumetric_asymmetry, AsymmetryMeasureTests, GroupSummary, VolumeAnalysis, VolumeRow};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("design matrix is rank deficient: column {column} ({name}) is a linear combination of earlier columns")]
    RankDeficient { column: usize, name: String },
    #[error("need more than {needed} observations, got {got}")]
    TooFewObservations { needed: usize, got: usize },
    #[error("sample has zero variance")]
    ZeroVariance,
    #[error("pooled covariance of {k} score dimensions is singular; reduce the number of components")]
    SingularCovariance { k: usize },
    #[error("{0}")]
    InvalidInput(String),
}

pub type StatsResult<T> = std::result::Result<T, StatsError>;

/// Outcome of a scalar hypothesis test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupTestResult {
    pub method: String,
    pub statistic: f64,
    pub p_value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub df: Option<(f64, f64)>,
    pub n_a: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_b: Option<usize>,
}

/// Per-subject covariates. Indicators are 0 or 1; diagnosis 1 means disease.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovariateRow {
    pub age: f64,
    pub sex: u8,
    pub etiv: f64,
    pub diagnosis: u8,
    pub handedness: Option<u8>,
}

impl CovariateRow {
    pub fn validate(&self) -> StatsResult<()> {
        if !(self.etiv > 0.0) || !self.etiv.is_finite() {
            return Err(StatsError::InvalidInput(format!("etiv must be positive, got {}", self.etiv)));
        }
        if !self.age.is_finite() {
            return Err(StatsError::InvalidInput("age is not finite".into()));
        }
        for (name, v) in [("sex", Some(self.sex)), ("diagnosis", Some(self.diagnosis)), ("handedness", self.handedness)] {
            if let Some(v) = v {
                if v > 1 {
                    return Err(StatsError::InvalidInput(format!("{name} must be 0 or 1, got {v}")));
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample standard deviation (divisor n − 1).
pub(crate) fn sd(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}
