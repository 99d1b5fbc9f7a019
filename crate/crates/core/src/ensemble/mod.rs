//! Conditional outcome ensembles and the nominal propensity model.

mod dataset;
mod mlp;
mod model;
mod train;

pub use dataset::{read_dataset, write_dataset, Dataset};
pub use mlp::{Head, Layer, MlpParams, OutputTransform, Prediction, MIN_SCALE};
pub use model::{load_model, propensity_path, save_model, EnsembleModel, SCHEMA_VERSION};
pub use train::{
    bootstrap_indices, fit_propensity, predict_propensity, train_ensemble, train_member,
    train_member_with_report, TrainConfig, TrainReport,
};
