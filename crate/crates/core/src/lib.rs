//! Content-style factorization on a toy next-scale autoregressive image model.
//!
//! The workspace trains a miniature multi-scale residual VQ autoencoder and a
//! next-scale prediction transformer on a procedural shape/texture corpus,
//! then factorizes single images into reusable content and style prompt
//! embeddings via scale-grouped alternating optimization, subspace
//! rectification of the style embedding, and learned key-value prefix
//! memories. Oracle scorers over the known generative factors stand in for
//! learned metrics.

pub mod error;
pub mod optim;
pub mod rng;
pub mod synth;
pub mod msvq;
pub mod tensor;
pub mod var;

pub use error::{Error, Result};
pub use tensor::{Gradients, SvdFactorization, Tape, Tensor, Var};
