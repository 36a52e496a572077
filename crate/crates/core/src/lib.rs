//! Sample-specific invisible backdoor attack toolkit.
//!
//! Implements the full attack/evaluation pipeline for backdoor attacks whose
//! triggers are invisible, sample-specific additive perturbations produced by
//! a steganographic encoder-decoder pair:
//!
//! * [`data`] — dataset ingestion and the content-addressed artifact store
//! * [`codec`] — the trigger-generating encoder/decoder ("stego codec")
//! * [`poison`] — poisoned training set construction and trigger audits
//! * [`victim`] — classifier training with named-layer introspection
//! * [`metrics`] — ASR, benign accuracy, PSNR, l-infinity, entropy, anomaly index
//! * [`defense`] — six published backdoor defenses run against any victim model
//! * [`experiment`] — end-to-end orchestration, caching, sweeps and reports
//!
//! The numerical substrate is a small reverse-mode autodiff over `ndarray`
//! tensors (see [`tensor`] and [`nn`]); everything trains deterministically on
//! CPU from an explicit seed.

pub mod codec;
pub mod data;
mod error;
pub mod metrics;
pub mod nn;
pub mod poison;
pub mod victim;
pub mod tensor;

pub use error::{Error, Result};
