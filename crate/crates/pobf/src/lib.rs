//! Batch data engine that paints outside annotated boxes, scores the
//! generated candidates with a teacher grounder, keeps the best one per real
//! sample and assembles a mixed real + synthetic training set.
//!
//! The algorithms live in [`pobf_core`]; this crate carries manifests and
//! other file formats, image codecs, backend transport and the `pobf` CLI.

pub mod backends;
pub mod cli;
pub mod coco;
pub mod config;
pub mod error;
pub mod evalkit;
pub mod filter;
pub mod genpipe;
pub mod imageio;
pub mod manifest;
pub mod mixer;
pub mod run;

pub use error::{Error, Result};
pub use pobf_core;
