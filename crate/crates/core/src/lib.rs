//! Discovery of effect-modification subgroups in matched pairs with binary
//! outcomes, followed by a confirmatory sensitivity analysis.
//!
//! The workflow has two halves that never share information about the sign
//! of a pair difference:
//!
//! 1. [`tree`] fits a regression tree to the *unsigned* discordance `|Y_i|`
//!    using only pair covariates. Its leaves become the groups.
//! 2. [`sensitivity`] bounds one-sided McNemar P-values under a bias of at
//!    most `Γ`, [`multiplicity`] combines them with the truncated product and
//!    runs closed testing over every intersection hypothesis.
//!
//! [`pairs`] handles ingestion, exact re-pairing and the discordant-pair
//! counts everything downstream consumes. [`pipeline`] ties the pieces into
//! reports and [`simulate`] generates data from the same assignment model for
//! power and error-rate studies.

pub mod binomial;
pub mod error;
pub mod multiplicity;
pub mod pairs;
pub mod pipeline;
pub mod sensitivity;
pub mod simulate;
pub mod tree;

pub use error::{Error, Result};
pub use multiplicity::{
    closed_test, max_gamma_rejection, truncated_product_pvalue, truncated_product_stat,
    ClosedTestingReport, TruncatedProductParams,
};
pub use pairs::{
    crosstab, load_patients, read_patients, repair_exact, summarize, AxisSpec, DiscordantSummary, PairRecord, PairSet,
    PairedCrossTab, PatientRecord, PatientSchema, SummaryTable,
};
pub use pipeline::{run_analyze, AnalysisConfig, GroupSource, ReportBundle};
pub use sensitivity::{
    amplify, gamma_grid_bounds, mcnemar_odds_ratio, mcnemar_upper_pvalue, Direction, GammaValue,
    PValueBound, SensitivityGrid, TailMethod,
};
pub use tree::{assign_groups, build_tree, describe_tree, CovariateSpec, Partition, Tree, TreeConfig};
