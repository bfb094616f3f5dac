//! Synthetic reward-modeling workbench.
//!
//! Simulates prompts, responses and noisy pairwise annotators; fits
//! Bradley-Terry arena scores and embedding-based reward models (pairwise
//! BT-MLP, pointwise classification MLP, gradient-boosted trees); evaluates
//! them by order consistency and Best-of-N selection; and checks the
//! closed-form annotation-quality results by quadrature and Monte Carlo.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytics;
pub mod annotate;
pub mod btarena;
pub mod error;
pub mod experiment;
pub mod math;
pub mod metrics;
pub mod rm;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
