//! Patch-based 3D U-Net segmentation pipeline for volumetric CT data.
//!
//! The crate covers the full path from raw volumes to cross-validated
//! metrics: NIfTI ingestion, intensity preprocessing, probabilistic
//! augmentation, patchwise training of a 3D U-Net with a combined
//! Tversky and cross-entropy loss, overlap-averaged inference, and
//! confusion-based evaluation.

pub mod augment;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod interp;
pub mod mvf;
pub mod nn;
pub mod optim;
pub mod overlay;
pub mod preprocess;
pub mod nifti;
pub mod patch;
pub mod phantom;
pub mod rng;
pub mod train;
pub mod unet;
pub mod volume;
