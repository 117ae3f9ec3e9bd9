//! Treatment-effect estimation that merges a randomized trial into the
//! propensity strata of an observational database.
//!
//! ```
//! use spikein::{estimate, EstimateOptions, Method, Observation, Source, StratificationPlan};
//!
//! let ob = |source, treated, outcome, propensity| Observation {
//!     source, treated, outcome, propensity, prognostic: None, potential: None,
//! };
//! let obs = vec![
//!     ob(Source::Odb, true, 2.0, 0.3),
//!     ob(Source::Odb, false, 1.0, 0.2),
//!     ob(Source::Rct, true, 3.0, 0.25),
//!     ob(Source::Rct, false, 1.0, 0.35),
//! ];
//! let plan = StratificationPlan::equal_width(&obs, 2)?;
//! let report = estimate(&plan, &obs, &[Method::Spiked], &EstimateOptions::default())?;
//! assert_eq!(report.tau(Method::Spiked), Some(1.5));
//! # Ok::<(), spikein::Error>(())
//! ```

pub mod data;
pub mod error;
pub mod estimators;
pub mod glm;
pub mod moments;
pub mod sim;
mod stats;
pub mod stratify;

pub use data::{read_dataset, write_dataset, Dataset, Format, Observation, RctDesign, Source, Subject};
pub use error::{Error, Result};
pub use estimators::{
    aggregate, aggregate_with, estimate, optimal_weight, tau_dynamic, tau_odb, tau_oracle, tau_rct, tau_spiked,
    tau_weighted, EstimateOptions, EstimateReport, Fallback, Method, StratumEstimate, StratumView, UndefinedStrata,
};
pub use moments::{
    delta_ratio_moments, delta_tau_moments, estimate_moments, population_moments, rct_variance_estimate,
    spiked_bias_decomposition, DeltaMoments, MomentEstimate, StratumMoments,
};
pub use stratify::{
    balance_report, make_equal_width_strata, merge_sparse_strata, sub_stratify_prognostic, ArmBasis, BalanceReport,
    StratificationPlan,
};
