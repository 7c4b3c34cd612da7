//! Conditional rectified-flow generator.
//!
//! Samples are flat `f64` vectors. Conditions are one-hot attribute blocks
//! plus a null flag; training drops the condition at random so one network
//! learns both the conditional and the unconditional field, which the Euler
//! sampler blends with classifier-free guidance.

mod checkpoint;
mod embed;
mod model;
mod sampler;
mod train;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint_header, CheckpointHeader,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use embed::{embed_condition, ConditionEmbedding, ConditionEncoder};
pub use model::{cfg_velocity, flow_loss, noising, VelocityField, VelocityModel};
pub use sampler::{initial_noise, integrate, sample, sample_batch, SamplerConfig};
pub use train::{train, ConditionedSample, TrainConfig, TrainOutcome};
