//! Malaria blood-smear screening pipeline.
//!
//! The stages, in pipeline order:
//!
//! 1. [`imagecore`]: 8/16-bit grayscale rasters, Gaussian blur, fixed-size tiling.
//! 2. [`celldetect`]: Sobel gradients, circular Hough transform, selection of
//!    tiles that hold one complete cell, detection scoring.
//! 3. [`dataset`]: labelled tiles, dihedral augmentation, mean normalisation,
//!    stratified folds and a synthetic smear generator.
//! 4. [`nn`]: a small CNN engine with exact backpropagation, two architecture
//!    presets (`alexnet-s`, `vgg-s`), a momentum-SGD trainer and checkpoints.
//! 5. [`eval`]: confusion matrices, sensitivity/specificity/F-score/FNR,
//!    cross-validation, training curves and feature-map dumps.
//! 6. [`cli`]: the `smearnet` command-line driver.

pub mod celldetect;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod imagecore;
pub mod nn;
pub mod par;

pub use error::{Error, Result};
