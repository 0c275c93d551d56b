//! Hyperspectral classification under composite degradations via a learned
//! low-dimensional manifold embedding refined by a latent diffusion head.
//!
//! The pipeline has three frozen-in-turn stages:
//!
//! 1. [`embed`]: a spectral-bottleneck transformer maps degraded patches to
//!    manifold coordinates, trained on reconstruction plus classification.
//! 2. [`diffuse`]: a time-conditioned MLP learns to denoise those coordinates
//!    under a cosine schedule, and refines features in a single step.
//! 3. [`classify`]: a shallow classifier on frozen features, with OA/AA/kappa.
//!
//! [`degrade`] simulates the nine sensor/atmosphere corruptions, [`hsidata`]
//! handles cubes and splits, and [`diagnostics`] estimates intrinsic
//! dimensionality of each representation stage.

pub mod classify;
pub mod config;
pub mod degrade;
pub mod diagnostics;
pub mod diffuse;
pub mod embed;
mod error;
pub mod hsidata;
pub mod numkit;
pub mod pipeline;
pub(crate) mod seeds;

pub use error::{Error, Result};
