//! Prepended domain transformer (PDT) for heterogeneous face recognition.
//!
//! A tiny trainable image-to-image block is placed in front of a frozen
//! embedding backbone; training it with contrastive or MMD supervision
//! closes the gap between two imaging domains. The crate ships the numeric
//! core (tensors with reverse-mode gradients), the PDT block, a desk-scale
//! frozen backbone, the Siamese trainer, biometric verification metrics,
//! a deterministic synthetic two-domain dataset, and a batch CLI.
//!
//! See the `examples/` directory for one runnable program per capability.

pub mod backbone;
pub mod block;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
