//! Synthetic study worlds and the two-phase recommendation policy.

pub mod cohort;
pub mod correlation;
pub mod explanation;
pub mod phases;
pub mod policy;
pub mod report;

pub use cohort::{generate_cohort, Behavior, CohortConfig, SyntheticCohort};
pub use correlation::{calibrate_correlation, zscore_correlation, zscore_correlation_ratings};
pub use explanation::{select_explanation, tie_strength, Explanation};
pub use phases::{simulate_phase1, simulate_phase2, ConsumptionRecord, LikelihoodRecord};
pub use policy::{two_phase_recommend, ScoredItem, Slate, TwoPhaseConfig};
pub use report::{strategy_report, StrategyRow};
