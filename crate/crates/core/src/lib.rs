//! Sparse negative-binomial mixture clustering of RNA-seq count samples.
//!
//! The crate is `no_std` (with `alloc`) when built without the default `std`
//! feature. Everything here is pure computation: count containers and
//! normalisation, the negative-binomial kernel, the penalised EM fits
//! (lasso and fused-MCP), the Gaussian baselines, model selection, evaluation
//! metrics and the simulation generators. File formats and the command line
//! live in the companion `snbclust` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod baselines;
pub mod counts;
pub mod error;
pub mod fused;
pub mod kmeans;
pub mod linalg;
pub mod math;
pub mod matrix;
pub mod metrics;
pub mod mixture;
pub mod nb;
pub mod normalize;
pub mod selection;
pub mod simulate;

pub use counts::CountMatrix;
pub use mixture::{FitConfig, Init, MixtureFit};
pub use error::{Error, Result};
pub use matrix::Matrix;

pub use normalize::NormalizationProfile;

/// Seeded RNG used everywhere a stream must be reproducible.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Derive an independent sub-seed (SplitMix64 finaliser).
pub fn sub_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
