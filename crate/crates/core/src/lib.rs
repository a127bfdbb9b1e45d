//! Road segmentation for speckled SAR rasters.
//!
//! The crate covers the whole desk-scale pipeline: raster I/O and
//! normalization ([`raster`]), tolerance-banded ground truth from typed road
//! vectors ([`groundtruth`]), synthetic speckled scenes ([`synthscene`]),
//! tiling and augmentation ([`dataset`]), miniature fully-convolutional
//! networks trained with a class-weighted MSE ([`autonet`]), thresholded
//! evaluation ([`eval`]) and an experiment runner tying them together
//! ([`pipeline`]).
//!
//! Heavy inner loops run on rayon when the default `parallel` feature is on.
//! Every parallel section is scheduled so that results are bit-identical to
//! the sequential build.

pub mod autonet;
pub mod d4;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod groundtruth;
pub mod par;
pub mod pipeline;
pub mod raster;
pub mod rng;
pub mod synthscene;

pub use error::{Error, Result};
