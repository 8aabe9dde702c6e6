//! Quantitative criteria for explanations.

mod core;
mod ext;

pub use self::core::{
    avg_sensitivity, complexity, complexity_partial, faithfulness, faithfulness_of,
    fractional_contribution, max_sensitivity, pearson, CriterionConfig, ExplanationMetric,
    Faithfulness, FaithfulnessConfig, FractionalContribution, Sensitivity, SensitivityEvaluator,
};
pub use self::ext::{
    addition_for_subset, addition_score, class_log_odds, compatibility_at, compatibility_score,
    conditional_conviction_score, conviction_score, deletion_for_subset, deletion_score,
    identity_at, identity_score, kar_score, log_odds, remove_and_retrain, replace_features,
    roar_score, separability_score, top_k_features, DensityEstimator, RetrainConfig, RetrainMode,
    RetrainReport, SeedResult, DENSITY_FLOOR, L0_TOLERANCE, MAX_SEPARABILITY_PAIRS,
    PROBABILITY_CLAMP,
};
