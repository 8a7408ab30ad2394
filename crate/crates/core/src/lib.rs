//! Latent-space retrieval over k-NN similarity graphs.
//!
//! Feature vectors are linked into a k-nearest-neighbor graph, embedded by
//! an attention-based adversarially regularized variational graph
//! autoencoder, and ranked against a stored embedding database by Euclidean
//! distance. Retrieval quality is scored with mAP(k) and majority-vote
//! accuracy mMV(k).

mod codec;
pub mod dataset;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod retrieval;
pub mod rng;

pub use codec::write_atomic;
pub use error::{Error, ErrorKind, Result};
