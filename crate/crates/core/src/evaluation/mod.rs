//! Metrics, nested cross-validation, hyperparameter search, ablations and
//! uncertainty accumulation.

mod ablation;
mod cv;
mod metrics;
mod pipeline;
mod search;
mod uncertainty;

pub use ablation::{run_ablation, standard_ablation_specs, AblationRow};
pub use cv::{run_nested_cv, CvPlan, CvSummary, CvTemplates, FoldOutcome};
pub use metrics::{aggregate_reports, compute_metrics, roc_auc, MetricAggregate, MetricReport};
pub use pipeline::{fit_classifier, fit_encoder, training_patches, StageOne, StageTwo};
pub use search::{hyperparameter_search, SearchLedger, SearchRun, SearchSpace};
pub use uncertainty::{accumulate_uncertainty, PatientUncertainty, UncertaintyLedger, UNCERTAIN_BAND};
