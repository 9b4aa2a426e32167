//! Phantoms, augmentation, dataset assembly and image metrics.

pub mod augment;
pub mod dataset;
pub mod metrics;
pub mod phantom;
