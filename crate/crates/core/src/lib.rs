//! Tiny-policy laboratory for KL-regularized RL fine-tuning.
//!
//! A single framework covers task-reward RL, tilted sampling, distribution
//! sharpening and tempered sampling. Every quantity that can be enumerated
//! exactly on small vocabularies has an oracle in [`oracle`].

pub mod error;
pub mod model;

pub use error::{Error, Result};
pub mod decode;
pub mod objective;
pub mod oracle;
pub mod tasks;
pub mod trainflow;
