//! Modality-adaptive flow-matching action policy.
//!
//! The policy draws its flow source from a per-dimension blend of Gaussian
//! noise and the recent action history, with the blend weight predicted by a
//! small scheduling network. The crate bundles everything needed to train and
//! evaluate it on a multimodal 2D navigation task:
//!
//! - [`autodiff`]: tape-based reverse-mode differentiation, MLPs, Adam
//! - [`policy`]: source construction, velocity field, Euler integration,
//!   adaptive step scheduling
//! - [`losses`]: flow-matching, gated reconstruction and dispersion losses
//! - [`dispersion`]: ball-tree neighbour index and target spreads
//! - [`env`]: navigation map, scripted expert, datasets, rollouts
//! - [`metrics`]: success rate, modal balance, step statistics
//! - [`config`], [`train`], [`experiment`]: the experiment pipeline behind the CLI

pub mod autodiff;
mod codec;
pub mod config;
pub mod dispersion;
pub mod env;
pub mod error;
pub mod experiment;
pub mod losses;
pub mod metrics;
pub mod plot;
pub mod policy;
pub mod train;

pub use error::{Error, Result};
