//! Two-stage multiple-instance classification over encoder latents,
//! morphometric node features and clinical covariates.

mod features;
mod io;
mod model;
mod synth;
mod train;

pub use features::{assert_no_leakage, compute_bag_features, compute_features, fit_feature_scaler, BagFeatures, CLINICAL_LEN};
pub use io::{load_mil_model, save_mil_model, MilHeader};
pub use model::{
    aggregate, bce_with_grad, decide, AblationSpec, Aggregation, MilConfig, MilForward, MilModel,
    PredictionTrace, INPUT_LAYOUT_VERSION,
};
pub use synth::make_synthetic_patients;
pub use train::{predict_traces, train_classifier, MilEpochMetrics, TrainedMil};
