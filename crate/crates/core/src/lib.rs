//! Music source separation with a dual-path TFC-TDF UNet.
//!
//! The guide in `book/` walks through each module; its examples are compiled
//! as doc-tests of this crate.

pub mod blocks;
pub mod data;
pub mod error;
pub mod float;
pub mod gradcheck;
pub mod idpm;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod params;
pub mod seed;
pub mod spectral;
pub mod training;

pub use error::{Error, Result};
pub use float::Float;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/overview.md")]
    struct Overview;
    #[doc = include_str!("../../../book/src/spectral.md")]
    struct Spectral;
    #[doc = include_str!("../../../book/src/network.md")]
    struct Network;
    #[doc = include_str!("../../../book/src/inference.md")]
    struct Inference;
    #[doc = include_str!("../../../book/src/metrics.md")]
    struct Metrics;
    #[doc = include_str!("../../../book/src/patterns.md")]
    struct Patterns;
    #[doc = include_str!("../../../book/src/training.md")]
    struct Training;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
    #[doc = include_str!("../../../book/src/acceptance.md")]
    struct Acceptance;
}
