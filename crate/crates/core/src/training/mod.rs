//! Masked-item training: masking, Adam and the epoch loop.

pub mod adam;
pub mod masking;
pub mod train;

pub use adam::{Adam, AdamConfig};
pub use masking::{mask_outfit, MaskedExample};
pub use train::{train, train_any, MetricRecord, TrainConfig, TrainOutput, TrainedModel};

#[cfg(test)]
mod tests;
