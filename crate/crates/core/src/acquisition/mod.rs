//! The BLJES acquisition family: coupled, decoupled and constrained lower
//! bounds on the bilevel information gain, estimated over a Monte-Carlo
//! bundle of sampled optima.

mod bundle;
mod moments;
mod score;

pub use bundle::{build_bundle, BundleOptions, Domain, McBundle, McSample, SampleTables};
pub use moments::{
    constrained_level_log_ratio, constrained_truncation_prob_upper, level_log_ratio, log_normal,
    log_truncation_prob, predictive_log_density, triad_moments, truncated_log_density, truncated_log_density_f,
    truncated_log_density_g, ConstraintStats, ConstraintTruncation, TriadStats, TruncatedMoments, PROB_FLOOR,
    S_FLOOR,
};
pub use score::{
    bljes_constrained, bljes_coupled, bljes_decoupled_f, bljes_decoupled_g, maximize_continuous, select_continuous,
    select_pool, truncated_moments_f, truncated_moments_g, AcqMode, Choice, Level, PointScorer, PoolContext,
    PoolPosterior, PoolScorer, PoolScores,
};

use crate::gp::GpModel;

/// GPs fitted on `D_t`: the two objectives and any constraints.
#[derive(Debug, Clone)]
pub struct Models {
    pub f: GpModel,
    pub g: GpModel,
    pub cu: Vec<GpModel>,
    pub cl: Vec<GpModel>,
}
