//! Rejection and regression-adjusted approximate Bayesian computation with
//! misspecification-robust summary adjustments.
//!
//! The crate is organised bottom-up: [`rng`] supplies counter-based streams,
//! [`models`] the simulators, [`summaries`] the summary maps, [`engine`] the
//! rejection sampler, [`robust`] the adjustment parameters, [`postprocess`]
//! the local-linear regression correction, [`diagnostics`] the
//! incompatibility checks and [`harness`] the experiment drivers.

pub mod diagnostics;
pub mod engine;
pub mod error;
pub mod harness;
pub mod models;
pub mod optim;
pub mod postprocess;
pub mod rng;
pub mod robust;
pub mod summaries;

pub use error::{AbcError, Result};
pub use rng::RngStream;
pub use summaries::SummaryVector;
