//! Bayesian U-Net: configuration, assembly, training and Monte Carlo sampling.

mod labels;
mod model;
mod train;

pub use labels::{crop_labels, mask_from_labels, LabelType, TrainingMask};
pub use model::{
    load_model, save_model, BayesUNet, DropoutPlacement, McRunResult, UNetConfig, Upsample,
};
pub use train::{stack_tensor, train_epoch, TrainSample};
