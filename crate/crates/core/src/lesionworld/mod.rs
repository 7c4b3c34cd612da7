//! Parametric ground-truth world of small grayscale lesion images.

mod dataset;
mod fixture;
mod stats;
mod world;

pub use dataset::{
    build_dataset, read_dataset, to_training_set, write_dataset, IMAGE_BLOCK_MAGIC,
    IMAGE_BLOCK_VERSION,
};
pub use fixture::GaussianMixtureFixture;
pub use stats::{
    cell_statistics, expected_features, image_features, CellKey, CellStatistics, ImageFeatures,
};
pub use world::{clamped_normal_mean, render_ground_truth, LabeledSample, World, WorldParams};
