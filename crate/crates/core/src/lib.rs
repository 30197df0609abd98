//! Unpaired defect-free/defective image translation for electroluminescence
//! solar-cell images, with the segmentation and augmentation pipelines built
//! on it and their evaluation metrics.
//!
//! The pieces, in the order data flows through them:
//!
//! * [`data`] loads and preprocesses images and serves unpaired batches.
//! * [`models`] holds the UNet generators, patch discriminators and checkpoints.
//! * [`losses`] and [`trainer`] fit the four networks.
//! * [`segmentation`] subtracts a generated defect-free image and thresholds.
//! * [`augmentation`] turns defect-free images into synthetic defective ones.
//! * [`evaluation`] scores generated images with the Frechet distance.

pub mod augmentation;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod losses;
pub mod models;
pub mod segmentation;
pub mod trainer;

pub use error::{Result, SiganError};
