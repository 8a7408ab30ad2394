use super::artifacts::GraphArtifacts;
use super::checkpoint::Checkpoint;
use super::config::ModelConfig;
use super::forward::{standard_normal, ReconSetup};
use super::params::Model;
use crate::error::{Error, Result};
use crate::nn::{AdamState, Mode};
use crate::rng::{streams, RngStream};

/// Losses recorded for one epoch. `recon`, `kl` and `gen` are unweighted;
/// `total` is the weighted generator objective that was minimized and
/// `disc` is the discriminator loss after its last update of the epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLosses {
    pub epoch: usize,
    pub recon: f64,
    pub kl: f64,
    pub gen: f64,
    pub disc: f64,
    pub total: f64,
}

pub fn train(graph: &GraphArtifacts, config: &ModelConfig) -> Result<Checkpoint> {
    train_with(graph, config, |_| {})
}

/// Trains from a fresh initialization, calling `on_epoch` after every epoch.
pub fn train_with(
    graph: &GraphArtifacts,
    config: &ModelConfig,
    mut on_epoch: impl FnMut(&EpochLosses),
) -> Result<Checkpoint> {
    let mut model = Model::init(config)?;
    model.check_input_dim(graph.d())?;
    let recon = ReconSetup::new(graph, config.recon_mode, config.dense_budget)?;
    let mut rng = RngStream::new(config.seed, streams::TRAIN);
    let mut enc_adam = AdamState::new(config.lr);
    let mut disc_adam = AdamState::new(config.lr);
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let fail = |e: Error| match e {
            Error::NonFinite(_) | Error::Gradient(_) | Error::Degenerate(_) => Error::Training {
                epoch,
                msg: e.to_string(),
            },
            other => other,
        };
        let mut disc = 0.0;
        if config.adversarial {
            let fake = model.encode(graph, Mode::Train, &mut rng).map_err(fail)?.z;
            for _ in 0..config.disc_iters {
                let real = standard_normal(&mut rng, fake.rows(), fake.cols());
                let (loss, grads, bn) = model.disc_pass(&real, &fake, &mut rng).map_err(fail)?;
                disc_adam.step(&mut model.discriminator, &grads).map_err(fail)?;
                if let Some(bn) = bn {
                    model.update_bn("disc.bn", &bn);
                }
                disc = loss;
            }
        }
        let pass = model
            .generator_pass(graph, &recon, &mut rng, false)
            .map_err(fail)?;
        let grads = pass
            .encoder_grads(&model, Some(pass.terms.total))
            .map_err(fail)?;
        enc_adam.step(&mut model.encoder, &grads).map_err(fail)?;
        if let Some(bn) = &pass.bn {
            model.update_bn("gat.bn", bn);
        }
        let v = pass.values();
        let losses = EpochLosses {
            epoch,
            recon: v.recon,
            kl: v.kl,
            gen: v.gen,
            disc,
            total: v.total,
        };
        if !(v.total.is_finite() && disc.is_finite()) {
            return Err(Error::Training {
                epoch,
                msg: "non-finite loss".into(),
            });
        }
        on_epoch(&losses);
        history.push(losses);
    }
    Ok(Checkpoint {
        model,
        epoch: config.epochs,
        history,
        rng_state: rng.state(),
    })
}
