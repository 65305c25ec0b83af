//! Built-in models supplying efficient unconstrained estimates, information
//! estimates and canonical constraints.

pub mod common_mean;
pub mod copula;
mod data;
pub mod location_scale;

pub use common_mean::{fit_common_mean, fit_mvn_mean};
pub use copula::{
    copula_influence, copula_information, exchangeable_average, exchangeable_correlation,
    fit_exchangeable_copula, normal_scores, pair_index, pair_influence, pairwise_correlations,
    vdw_rank_correlation,
};
pub use data::{DataMatrix, HeaderMode};
pub use location_scale::{
    cv_constraint, cv_linear_estimate, cv_one_step_normal, cv_ratio_estimates, fit_location_scale_normal,
    LocationScaleInfo,
};
