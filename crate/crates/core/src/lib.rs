//! Buffer-free online task-free continual learning over frozen feature streams.
//!
//! The engine keeps only per-class first and second moments of the incoming
//! features. Old classes are rehearsed by transplanting the deviation of each
//! incoming feature onto a randomly chosen old class (analogical pseudo-features),
//! and predictions are corrected by a significance-weighted distance term that
//! replaces the classifier bias.
//!
//! Interchangeable pieces (pseudo-feature generators, distance kernels) sit
//! behind traits and are resolved by name through [`registry::Registry`].

pub mod classifier;
pub mod dataio;
pub mod error;
pub mod ican;
pub mod isay;
pub mod metrics;
pub mod protocol;
pub mod registry;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};

/// Class identifier as stored in feature dumps.
pub type Label = u32;
