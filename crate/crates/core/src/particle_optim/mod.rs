//! Entropy-based particle correspondence optimization.
//!
//! Minimizes `Q = α·H(Z) − Σᵢ H(Xᵢ)` over particle positions constrained to
//! each subject's surface, where `H(Xᵢ)` is a Parzen estimate of the sampling
//! entropy on surface `i` and `H(Z)` is the Gaussian entropy of the cohort's
//! shape matrix.

pub mod entropy;
pub(crate) mod model;
mod optimizer;

use serde::{Deserialize, Serialize};

pub use entropy::{
    adaptive_sigma, correspondence_entropy, correspondence_entropy_gradient,
    nearest_neighbor_distances, sampling_entropy, sampling_entropy_and_gradient, shape_matrix,
    shape_regularizer,
};
pub use model::{ParticleSet, SampleLabel, ShapeModel, Side};
pub use optimizer::{
    initialize_particles, optimize_correspondences, sampling_entropy_gradient, Optimized,
    OptimizerReport, RoundReport,
};

use crate::error::{Error, Result};
use crate::surface::MirrorPlane;

/// How `alpha` enters the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaScaling {
    /// `alpha` is the weight of H(Z) as given.
    Absolute,
    /// The weight of H(Z) is `alpha` times the number of surfaces.
    PerSurface,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Weight of the shape-space entropy relative to the sampling entropy.
    pub alpha: f64,
    pub alpha_scaling: AlphaScaling,
    pub m_target: usize,
    /// Number of doublings; derived from `m_target` when absent.
    pub split_rounds: Option<u32>,
    pub iterations_per_round: usize,
    /// Parzen bandwidth as a fraction of the k-th nearest-neighbour distance.
    pub initial_sigma_fraction: f64,
    pub neighbor_k: usize,
    /// Maximum particle displacement (mm) of an accepted step that counts as converged.
    pub convergence_tol: f64,
    /// Shape-space regularizer relative to the mean covariance diagonal.
    pub covariance_regularization: f64,
    /// Lower bound on the regularizer as a length, in units of the cohort's
    /// mean bounding-box diagonal; the floor is the square of that length.
    pub regularization_floor: f64,
    /// Fraction of each round over which α ramps up from zero.
    pub anneal_fraction: f64,
    pub seed: u64,
    pub step_size: f64,
    pub max_step_size: f64,
    /// Per-particle step cap as a fraction of that particle's bandwidth.
    pub max_step_fraction: f64,
    pub max_backtracks: usize,
    /// Norm cap on each particle's sampling-entropy gradient.
    pub max_gradient: f64,
    /// Reflect every random direction about this plane. Optimizing a mirrored
    /// cohort with the matching plane reproduces the mirrored result.
    pub init_mirror: Option<MirrorPlane>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            alpha: 0.5,
            alpha_scaling: AlphaScaling::PerSurface,
            m_target: 512,
            split_rounds: None,
            iterations_per_round: 60,
            initial_sigma_fraction: 0.25,
            neighbor_k: 6,
            convergence_tol: 1e-4,
            covariance_regularization: 1e-3,
            regularization_floor: 0.05,
            anneal_fraction: 0.5,
            seed: 0,
            step_size: 0.25,
            max_step_size: 1.0,
            max_step_fraction: 0.5,
            max_backtracks: 12,
            max_gradient: 1e12,
            init_mirror: None,
        }
    }
}

impl OptimizerConfig {
    /// Weight of H(Z) in Q for a cohort of `surfaces` surfaces.
    pub fn effective_alpha(&self, surfaces: usize) -> f64 {
        match self.alpha_scaling {
            AlphaScaling::Absolute => self.alpha,
            AlphaScaling::PerSurface => self.alpha * surfaces as f64,
        }
    }

    /// Check the configuration and return the number of split rounds.
    pub fn validate(&self) -> Result<u32> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if self.m_target == 0 || !self.m_target.is_power_of_two() {
            return bad(format!(
                "m_target = {} is not reachable by doubling a single particle",
                self.m_target
            ));
        }
        let rounds = self.m_target.trailing_zeros();
        if let Some(r) = self.split_rounds {
            if r != rounds {
                return bad(format!(
                    "split_rounds = {r} gives {} particles, but m_target = {}",
                    1usize << r.min(63),
                    self.m_target
                ));
            }
        }
        if self.iterations_per_round == 0 {
            return bad("iterations_per_round must be at least 1".into());
        }
        for (name, v) in [
            ("initial_sigma_fraction", self.initial_sigma_fraction),
            ("covariance_regularization", self.covariance_regularization),
            ("convergence_tol", self.convergence_tol),
            ("step_size", self.step_size),
            ("max_step_size", self.max_step_size),
            ("max_step_fraction", self.max_step_fraction),
            ("max_gradient", self.max_gradient),
        ] {
            if !(v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.regularization_floor >= 0.0) || !self.regularization_floor.is_finite() {
            return bad(format!("regularization_floor must be nonnegative, got {}", self.regularization_floor));
        }
        if !(0.0..=1.0).contains(&self.anneal_fraction) {
            return bad(format!("anneal_fraction must lie in [0, 1], got {}", self.anneal_fraction));
        }
        if self.neighbor_k == 0 {
            return bad("neighbor_k must be at least 1".into());
        }
        Ok(rounds)
    }
}
