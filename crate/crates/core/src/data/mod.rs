//! Image and dataset I/O, augmentation, synthetic data and checkpoints.

pub mod checkpoint;
pub mod dataset;
pub mod image;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use dataset::{augment, resize, scan_dataset, synth_dataset, Augment, Sample};
pub use image::{load_image, load_map, load_mask, save_map};
