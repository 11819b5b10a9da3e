//! Two-stage compression of dense weight matrices.
//!
//! Stage one splits each weight matrix into a low-rank part and a sparse part
//! with robust PCA ([`rpca`]). Stage two treats every singular triplet of the
//! low-rank part and every nonzero of the sparse part as a prunable candidate
//! ([`pool`]), learns Bernoulli retention probabilities for them under one
//! global parameter budget with a score-function gradient ([`allocator`]),
//! and keeps the top-scoring candidates that fit ([`pipeline`]).

pub mod allocator;
pub mod cli;
pub mod error;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod oracle;
pub mod pipeline;
pub mod pool;
pub mod rng;
pub mod rpca;
pub mod synthetic;

pub use error::{CapError, Result};
pub use linalg::{DenseMatrix, SvdFactorization};
pub use rng::CapRng;
