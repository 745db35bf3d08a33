#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Joint reconstruction of initial pressure and speed of sound for
//! ring-array photoacoustic computed tomography.

pub mod aberration;
pub mod beamform;
pub mod config;
pub mod deconv;
pub mod error;
pub mod evaluate;
pub mod fft;
pub mod geometry;
pub mod nfield;
pub mod optimize;
pub mod patch;
pub mod phantom;
pub mod raster;
pub mod signals;

pub use error::{Error, Result};
