//! Residual binary tumor classifier, early-stopped training and the
//! four-condition augmentation experiment grid.

mod grid;
mod metrics;
mod network;
mod train;

pub use grid::{
    run_experiment_grid, ConditionName, ExperimentCondition, GridData, GridReport, GridRow,
};
pub use metrics::EvalMetrics;
pub use network::{Architecture, Classifier};
pub use train::{
    evaluate, predict, preprocess, run_early_stopping, train_classifier, ClassifierConfig,
    EarlyStopOutcome, EpochLog, EpochModel, TrainedClassifier,
};
