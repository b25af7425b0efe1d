//! Red-team toolkit for perceptual-hashing-based client-side scanning.
//!
//! The crate implements five perceptual hash pipelines ([`hashkit`]), a
//! black-box detection-avoidance attack driven by NES gradient estimation
//! ([`nesattack`]), two white-box attacks against the DCT feature step
//! ([`wbattack`] on top of [`dctlab`]), and a detection-system simulator
//! that quantifies false-positive/false-negative rates and user-flagging
//! probabilities ([`scanner`]).
//!
//! Start with the runnable examples (`cargo run --release --example ...`):
//! each major capability has one. The `hashbreak` binary exposes the same
//! functionality as batch subcommands.

pub mod cli;
pub mod dctlab;
pub mod hashkit;
pub mod imagecore;
pub mod nesattack;
mod resample;
pub mod scanner;
pub mod synth;
pub mod wbattack;

pub use imagecore::{Hash, HashAlgorithm, Image, Perturbation};
