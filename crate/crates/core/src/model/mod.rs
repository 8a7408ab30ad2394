//! The graph autoencoder family: a graph-attention front end, GCN heads
//! for the latent mean and log-variance, an inner-product decoder and an
//! MLP discriminator matching latent codes to a standard normal prior.

mod artifacts;
mod checkpoint;
pub mod config;
mod forward;
mod losses;
mod params;
mod train;

pub use self::artifacts::GraphArtifacts;
pub use self::checkpoint::Checkpoint;
pub use self::config::{parse_kv, LossWeights, ModelConfig, ReconMode, Variant};
pub use self::forward::{
    reparameterize, reparameterize_on, LatentState, ObjectiveGradients, ObjectiveValues,
    TermGradients,
};
pub use self::losses::{decode, loss_adversarial, loss_kl, loss_reconstruction, AdversarialRole};
pub use self::params::{parameter_shapes, Model, ParamGroup};
pub use self::train::{train, train_with, EpochLosses};
