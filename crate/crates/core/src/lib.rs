//! Numerical core of the WeatherCycle restoration framework.
//!
//! Everything in this crate is pure computation over in-memory buffers: color
//! space conversion, 2-D Fourier transforms, a small reverse-mode autodiff tape,
//! the two cycle generators, the luminance degradation guidance module, the
//! difficulty-aware contrastive loss, metrics and the training step itself.
//! File formats, image decoding and the command line live in the `weathercycle`
//! crate.
//!
//! The crate is `no_std` and only needs `alloc`.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod augment;
pub mod checkpoint;
pub mod colorspace;
pub mod config;
pub mod dacr;
mod error;
pub mod fft;
pub mod generators;
pub mod image;
pub mod ldgm;
pub mod losses;
pub(crate) mod math;
pub mod metrics;
pub mod motivation;
pub mod nn;
pub mod optim;
pub mod params;
pub mod rng;
pub mod spectral;
pub mod tape;
pub mod trainer;

pub use error::{Error, Result};
pub use image::{ChromaPlanes, LumaPlane, RgbImage};
