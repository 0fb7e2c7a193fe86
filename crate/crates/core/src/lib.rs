//! Directed-chain SDE generative models for time series.
//!
//! A directed-chain SDE couples each sample path to a "neighborhood" path
//! constrained to share its law.  Parameterizing the drift and diffusion by
//! feed-forward networks and minimizing the truncated signature-Wasserstein
//! distance against data yields a generative model whose marginals can be
//! genuinely multimodal; iterating the generator along the chain
//! (decorrelating walk) produces fake data asymptotically uncorrelated with
//! the data it was seeded from.
//!
//! The crate is organised as:
//!
//! - [`signature`]: truncated tensor algebra, path signatures, expected
//!   signatures and the Sig-W1 distance;
//! - [`autodiff`]: a reverse-mode tape over the handful of array primitives
//!   the training loss needs;
//! - [`nn`]: feed-forward networks and Adam with a step-decayed rate;
//! - [`noise`]: counter-based Gaussian streams (reproducible regardless of
//!   evaluation order);
//! - [`sde`]: Brownian paths, Euler–Maruyama, and the directed-chain Euler
//!   step;
//! - [`datasets`]: the stochastic opinion-dynamics and FitzHugh–Nagumo
//!   particle systems used as synthetic corpora;
//! - [`dcgan`]: the generator object, SigWGAN training loop, and the
//!   decorrelate/branch samplers;
//! - [`metrics`]: evaluation scores (signature MMD, independence,
//!   discriminative, predictive, KDE mode counts);
//! - [`io`]: CSV/manifest serialization for paths, generators and reports.

pub mod autodiff;
pub mod datasets;
pub mod dcgan;
pub mod error;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod noise;
pub mod path;
pub mod sde;
pub mod signature;

pub use error::{Error, Result};
pub use path::{PathBatch, PathSample, TimeGrid};
