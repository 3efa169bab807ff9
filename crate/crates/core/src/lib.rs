//! Margin-weighted adversarial training and non-uniform attack evaluation
//! for small feed-forward classifiers.
//!
//! The crate provides:
//!
//! - [`nn`] — a minimal dense network with exact parameter and input
//!   gradients, validated against finite differences;
//! - [`weighting`] — confidence margins and the exponential importance
//!   kernel `exp(-alpha * margin)`;
//! - [`attack`] — l-infinity PGD in plain, margin-weighted, and margin-loss
//!   flavors;
//! - [`training`] — natural, adversarial, combined, TRADES-style, and
//!   margin-weighted training regimes;
//! - [`eval`] — clean/robust accuracy plus weighted accuracies under
//!   non-uniform attack sampling;
//! - [`dro`] — worst-case loss reweighting over a chi-squared budget;
//! - [`data`] — IDX ubyte ingestion, synthetic Gaussian datasets, and seeded
//!   mini-batch schedules;
//! - [`check`] — independent oracles (finite differences, closed-form DRO
//!   enumeration) for self-verification.
//!
//! Everything is seeded and deterministic: identical inputs produce identical
//! bytes, with or without the default `parallel` (rayon) feature.

pub mod attack;
pub mod check;
pub mod data;
pub mod dro;
pub mod error;
pub mod eval;
pub mod nn;
pub mod parallel;
pub mod rng;
pub mod training;
pub mod weighting;

pub use error::{Error, Result};
