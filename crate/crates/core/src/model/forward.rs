use std::sync::Arc;

use super::artifacts::GraphArtifacts;
use super::config::ReconMode;
use super::params::Model;
use crate::error::{Error, Result};
use crate::nn::{
    dropout, gat_layer, gcn_layer, linear, BatchStats, GatHead, Mode, ParamStore, ReconLoss, Tape,
    Tensor2, Var,
};
use crate::rng::RngStream;

/// Encoder output for every node.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub mu: Tensor2,
    /// Absent for non-variational models.
    pub logvar: Option<Tensor2>,
    pub z: Tensor2,
}

/// `mu + exp(logvar / 2) * eps` on the tape; gradients reach `mu` and
/// `logvar` but not `eps`.
pub fn reparameterize_on(tape: &mut Tape, mu: Var, logvar: Var, eps: &Tensor2) -> Result<Var> {
    let half = tape.scale(logvar, 0.5)?;
    let std = tape.exp(half)?;
    let noise = tape.mul_const(std, eps.clone())?;
    tape.add(mu, noise)
}

/// Draws `eps ~ N(0, I)` row by row and returns `mu + exp(logvar / 2) * eps`.
pub fn reparameterize(mu: &Tensor2, logvar: &Tensor2, rng: &mut RngStream) -> Result<Tensor2> {
    mu.check_same_shape(logvar, "reparameterize")?;
    let eps = standard_normal(rng, mu.rows(), mu.cols());
    let mut tape = Tape::new();
    let (m, l) = (tape.constant(mu.clone()), tape.constant(logvar.clone()));
    let z = reparameterize_on(&mut tape, m, l, &eps)?;
    Ok(tape.value(z).clone())
}

pub(crate) fn standard_normal(rng: &mut RngStream, rows: usize, cols: usize) -> Tensor2 {
    Tensor2::from_fn(rows, cols, |_, _| rng.normal())
}

/// Handles of one encoder evaluation.
pub(crate) struct EncoderPass {
    pub mu: Var,
    pub logvar: Option<Var>,
    pub z: Var,
    pub bn: Option<BatchStats>,
}

/// Reconstruction target prepared once per graph.
pub(crate) enum ReconSetup {
    Dense {
        target: Arc<crate::nn::CsrMatrix>,
        loss: ReconLoss,
    },
    /// Positive entries plus an equal number of sampled non-edges per step.
    Sampled {
        positives: Arc<Vec<(usize, usize, f64)>>,
        loss: ReconLoss,
    },
}

impl ReconSetup {
    pub fn new(graph: &GraphArtifacts, mode: ReconMode, dense_budget: usize) -> Result<Self> {
        let target = graph.support().clone();
        let n = graph.n() as f64;
        let nnz = target.nnz() as f64;
        let n2 = n * n;
        if nnz == 0.0 {
            return Err(Error::Degenerate("reconstruction target has no edges".into()));
        }
        if graph.n() > dense_budget {
            let positives = (0..graph.n())
                .flat_map(|i| target.row(i).0.iter().map(move |&j| (i, j, 1.0)))
                .collect();
            let loss = match mode {
                ReconMode::Bce => ReconLoss::Bce {
                    pos_weight: 1.0,
                    norm: 1.0,
                },
                ReconMode::Mse => ReconLoss::Mse,
            };
            return Ok(ReconSetup::Sampled {
                positives: Arc::new(positives),
                loss,
            });
        }
        let loss = match mode {
            ReconMode::Bce => {
                if nnz >= n2 {
                    return Err(Error::Degenerate(
                        "reconstruction target is fully connected".into(),
                    ));
                }
                ReconLoss::Bce {
                    pos_weight: (n2 - nnz) / nnz,
                    norm: n2 / (2.0 * (n2 - nnz)),
                }
            }
            ReconMode::Mse => ReconLoss::Mse,
        };
        Ok(ReconSetup::Dense { target, loss })
    }

    fn record(&self, tape: &mut Tape, z: Var, graph: &GraphArtifacts, rng: &mut RngStream) -> Result<Var> {
        match self {
            ReconSetup::Dense { target, loss } => tape.inner_product_recon(z, target.clone(), *loss),
            ReconSetup::Sampled { positives, loss } => {
                let n = graph.n();
                let mut pairs = positives.as_ref().clone();
                let want = positives.len();
                let mut tries = 0;
                while pairs.len() < 2 * want && tries < 20 * want {
                    tries += 1;
                    let (i, j) = (rng.below(n), rng.below(n));
                    if i != j && !graph.graph().has_edge(i, j) {
                        pairs.push((i, j, 0.0));
                    }
                }
                tape.inner_product_pairs(z, Arc::new(pairs), *loss)
            }
        }
    }
}

/// Objective term handles on one tape. Each optional term is present only
/// when the model has the matching component.
pub(crate) struct ObjectiveTerms {
    pub recon: Var,
    pub kl: Option<Var>,
    pub gen: Option<Var>,
    pub total: Var,
}

/// Scalar values of one generator evaluation (unweighted terms, weighted total).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveValues {
    pub recon: f64,
    pub kl: f64,
    pub gen: f64,
    pub total: f64,
}

pub(crate) struct GeneratorPass {
    pub tape: Tape,
    pub enc_vars: Vec<Var>,
    pub disc_vars: Vec<Var>,
    pub terms: ObjectiveTerms,
    pub bn: Option<BatchStats>,
}

impl GeneratorPass {
    pub fn values(&self) -> ObjectiveValues {
        let v = |x: Option<Var>| x.map_or(0.0, |x| self.tape.value(x).item());
        ObjectiveValues {
            recon: v(Some(self.terms.recon)),
            kl: v(self.terms.kl),
            gen: v(self.terms.gen),
            total: v(Some(self.terms.total)),
        }
    }

    /// Gradients of `root` for every encoder parameter, in storage order.
    pub fn encoder_grads(&self, model: &Model, root: Option<Var>) -> Result<Vec<Tensor2>> {
        grads_for(&self.tape, root, &self.enc_vars, &model.encoder)
    }

    pub fn disc_grads(&self, model: &Model, root: Option<Var>) -> Result<Vec<Tensor2>> {
        grads_for(&self.tape, root, &self.disc_vars, &model.discriminator)
    }
}

fn grads_for(tape: &Tape, root: Option<Var>, vars: &[Var], store: &ParamStore) -> Result<Vec<Tensor2>> {
    let shapes = store.tensors().iter().map(Tensor2::shape);
    match root {
        Some(root) => {
            let g = tape.backward(root)?;
            Ok(vars.iter().zip(shapes).map(|(&v, s)| g.get_or_zeros(v, s)).collect())
        }
        None => Ok(shapes.map(|(r, c)| Tensor2::zeros(r, c)).collect()),
    }
}

fn leaves(tape: &mut Tape, store: &ParamStore, trainable: bool) -> Vec<Var> {
    store
        .tensors()
        .iter()
        .map(|t| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        })
        .collect()
}

impl Model {
    fn enc_var(&self, vars: &[Var], name: &str) -> Var {
        vars[self.encoder.index_of(name).expect("encoder parameter")]
    }

    fn disc_var(&self, vars: &[Var], name: &str) -> Var {
        vars[self.discriminator.index_of(name).expect("discriminator parameter")]
    }

    fn check_graph(&self, graph: &GraphArtifacts) -> Result<()> {
        self.check_input_dim(graph.d())
    }

    /// Records the encoder on `tape`. Random draws (dropout mask, then
    /// latent noise) happen only in train mode.
    pub(crate) fn encoder_forward(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        graph: &GraphArtifacts,
        mode: Mode,
        rng: &mut RngStream,
    ) -> Result<EncoderPass> {
        self.check_graph(graph)?;
        let c = &self.config;
        let x = tape.constant(graph.features().clone());
        let (hidden, bn) = if c.use_attention {
            let heads: Vec<GatHead> = (0..c.heads)
                .map(|k| GatHead {
                    weight: self.enc_var(vars, &format!("gat.head{k}.weight")),
                    att_src: self.enc_var(vars, &format!("gat.head{k}.att_src")),
                    att_dst: self.enc_var(vars, &format!("gat.head{k}.att_dst")),
                })
                .collect();
            let h = gat_layer(tape, x, graph.support(), &heads, c.attention_slope)?;
            let stats = self.bn_stats("gat.bn");
            let (h, bn) = tape.batch_norm(
                h,
                self.enc_var(vars, "gat.bn.gamma"),
                self.enc_var(vars, "gat.bn.beta"),
                &stats.mean,
                &stats.var,
                mode,
                c.bn_eps,
            )?;
            let h = tape.leaky_relu(h, c.leaky_slope)?;
            (dropout(tape, h, c.dropout_p, rng, mode)?, bn)
        } else {
            let w = self.enc_var(vars, "gcn_hidden.weight");
            let h = gcn_layer(tape, x, graph.norm_adj(), w)?;
            (tape.relu(h)?, None)
        };
        let mu = gcn_layer(tape, hidden, graph.norm_adj(), self.enc_var(vars, "gcn_mu.weight"))?;
        if !c.variational {
            return Ok(EncoderPass {
                mu,
                logvar: None,
                z: mu,
                bn,
            });
        }
        let w_lv = self.enc_var(vars, "gcn_logvar.weight");
        let logvar = gcn_layer(tape, hidden, graph.norm_adj(), w_lv)?;
        let z = match mode {
            Mode::Train => {
                let eps = standard_normal(rng, graph.n(), c.d_latent);
                reparameterize_on(tape, mu, logvar, &eps)?
            }
            Mode::Eval => mu,
        };
        Ok(EncoderPass {
            mu,
            logvar: Some(logvar),
            z,
            bn,
        })
    }

    /// Records the discriminator on `tape`, returning per-row logits.
    pub(crate) fn disc_forward(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        x: Var,
        mode: Mode,
        rng: &mut RngStream,
    ) -> Result<(Var, Option<BatchStats>)> {
        let c = &self.config;
        if !c.adversarial {
            return Err(Error::Parameter("model has no discriminator".into()));
        }
        let width = tape.value(x).cols();
        if width != c.d_latent {
            return Err(Error::Shape {
                tensor: "disc.fc1.weight".into(),
                expected: (c.d_latent, c.disc_hidden),
                found: (width, c.disc_hidden),
            });
        }
        let h = linear(
            tape,
            x,
            self.disc_var(vars, "disc.fc1.weight"),
            Some(self.disc_var(vars, "disc.fc1.bias")),
        )?;
        let stats = self.bn_stats("disc.bn");
        let (h, bn) = tape.batch_norm(
            h,
            self.disc_var(vars, "disc.bn.gamma"),
            self.disc_var(vars, "disc.bn.beta"),
            &stats.mean,
            &stats.var,
            mode,
            c.bn_eps,
        )?;
        let h = tape.leaky_relu(h, c.leaky_slope)?;
        let h = dropout(tape, h, c.dropout_p, rng, mode)?;
        let logits = linear(
            tape,
            h,
            self.disc_var(vars, "disc.fc2.weight"),
            Some(self.disc_var(vars, "disc.fc2.bias")),
        )?;
        Ok((logits, bn))
    }

    /// Encodes every node. Running statistics are never modified, so eval
    /// mode is a pure function of the parameters and the graph.
    pub fn encode(&self, graph: &GraphArtifacts, mode: Mode, rng: &mut RngStream) -> Result<LatentState> {
        let mut tape = Tape::new();
        let vars = leaves(&mut tape, &self.encoder, false);
        let pass = self.encoder_forward(&mut tape, &vars, graph, mode, rng)?;
        Ok(LatentState {
            mu: tape.value(pass.mu).clone(),
            logvar: pass.logvar.map(|v| tape.value(v).clone()),
            z: tape.value(pass.z).clone(),
        })
    }

    /// Discriminator logits (`rows x 1`) for latent samples.
    pub fn discriminate(&self, samples: &Tensor2, mode: Mode, rng: &mut RngStream) -> Result<Tensor2> {
        let mut tape = Tape::new();
        let vars = leaves(&mut tape, &self.discriminator, false);
        let x = tape.constant(samples.clone());
        let (logits, _) = self.disc_forward(&mut tape, &vars, x, mode, rng)?;
        Ok(tape.value(logits).clone())
    }

    /// Dense decoder probabilities for this model's configured budget.
    pub fn decode(&self, z: &Tensor2) -> Result<Tensor2> {
        super::losses::decode(z, self.config.dense_budget)
    }

    /// Train-mode generator objective
    /// `w_recon * recon + w_kl * kl + w_adv * gen` on a fresh tape.
    pub(crate) fn generator_pass(
        &self,
        graph: &GraphArtifacts,
        recon: &ReconSetup,
        rng: &mut RngStream,
        disc_trainable: bool,
    ) -> Result<GeneratorPass> {
        let c = &self.config;
        let n = graph.n();
        let mut tape = Tape::new();
        let enc_vars = leaves(&mut tape, &self.encoder, true);
        let disc_vars = leaves(&mut tape, &self.discriminator, disc_trainable);
        let enc = self.encoder_forward(&mut tape, &enc_vars, graph, Mode::Train, rng)?;
        let w = c.loss_weights;
        let recon_v = recon.record(&mut tape, enc.z, graph, rng)?;
        let mut total = tape.scale(recon_v, w.recon)?;
        let kl = match enc.logvar {
            Some(logvar) => {
                let kl = tape.kl_normal(enc.mu, logvar)?;
                let scaled = tape.scale(kl, w.kl.unwrap_or(1.0 / n as f64))?;
                total = tape.add(total, scaled)?;
                Some(kl)
            }
            None => None,
        };
        let gen = if c.adversarial {
            let (logits, _) = self.disc_forward(&mut tape, &disc_vars, enc.z, Mode::Eval, rng)?;
            let rows = tape.value(logits).rows();
            let gen = tape.bce_logits(logits, vec![1.0; rows], vec![1.0 / rows as f64; rows])?;
            let scaled = tape.scale(gen, w.adv)?;
            total = tape.add(total, scaled)?;
            Some(gen)
        } else {
            None
        };
        Ok(GeneratorPass {
            tape,
            enc_vars,
            disc_vars,
            terms: ObjectiveTerms {
                recon: recon_v,
                kl,
                gen,
                total,
            },
            bn: enc.bn,
        })
    }

    /// Train-mode discriminator loss `BCE(real -> 1) + BCE(fake -> 0)`,
    /// each averaged over its rows, with gradients for the discriminator
    /// parameters and the batch statistics of its batch norm.
    pub(crate) fn disc_pass(
        &self,
        real: &Tensor2,
        fake: &Tensor2,
        rng: &mut RngStream,
    ) -> Result<(f64, Vec<Tensor2>, Option<BatchStats>)> {
        let mut tape = Tape::new();
        let vars = leaves(&mut tape, &self.discriminator, true);
        let x = tape.constant(Tensor2::concat_rows(&[real, fake])?);
        let (logits, bn) = self.disc_forward(&mut tape, &vars, x, Mode::Train, rng)?;
        let (nr, nf) = (real.rows(), fake.rows());
        let targets = [vec![1.0; nr], vec![0.0; nf]].concat();
        let weights = [vec![1.0 / nr as f64; nr], vec![1.0 / nf as f64; nf]].concat();
        let loss = tape.bce_logits(logits, targets, weights)?;
        let grads = grads_for(&tape, Some(loss), &vars, &self.discriminator)?;
        Ok((tape.value(loss).item(), grads, bn))
    }
}

/// Gradients of the generator objective.
#[derive(Debug, Clone)]
pub struct ObjectiveGradients {
    pub values: ObjectiveValues,
    /// With respect to the encoder parameters.
    pub encoder: ParamStore,
    /// With respect to the discriminator parameters (the discriminator is
    /// evaluated in eval mode inside the generator objective).
    pub discriminator: ParamStore,
}

/// Weighted contribution of each objective term to the encoder gradient.
#[derive(Debug, Clone)]
pub struct TermGradients {
    pub recon: ParamStore,
    pub kl: ParamStore,
    pub adversarial: ParamStore,
    pub total: ParamStore,
}

fn named(store: &ParamStore, grads: Vec<Tensor2>) -> ParamStore {
    let mut out = ParamStore::new();
    for (name, g) in store.names().iter().zip(grads) {
        out.insert(name.clone(), g);
    }
    out
}

impl Model {
    /// Value of the train-mode generator objective; random draws come from `rng`.
    pub fn objective(&self, graph: &GraphArtifacts, rng: &mut RngStream) -> Result<ObjectiveValues> {
        let recon = ReconSetup::new(graph, self.config.recon_mode, self.config.dense_budget)?;
        Ok(self.generator_pass(graph, &recon, rng, false)?.values())
    }

    pub fn objective_gradients(
        &self,
        graph: &GraphArtifacts,
        rng: &mut RngStream,
    ) -> Result<ObjectiveGradients> {
        let recon = ReconSetup::new(graph, self.config.recon_mode, self.config.dense_budget)?;
        let pass = self.generator_pass(graph, &recon, rng, true)?;
        let total = Some(pass.terms.total);
        Ok(ObjectiveGradients {
            values: pass.values(),
            encoder: named(&self.encoder, pass.encoder_grads(self, total)?),
            discriminator: named(&self.discriminator, pass.disc_grads(self, total)?),
        })
    }

    /// Per-term encoder gradients from one generator evaluation. Terms a
    /// variant lacks contribute all-zero gradients.
    pub fn term_gradients(&self, graph: &GraphArtifacts, rng: &mut RngStream) -> Result<TermGradients> {
        let recon = ReconSetup::new(graph, self.config.recon_mode, self.config.dense_budget)?;
        let mut pass = self.generator_pass(graph, &recon, rng, false)?;
        let w = self.config.loss_weights;
        let n = graph.n() as f64;
        let weighted = |pass: &mut GeneratorPass, v: Option<Var>, s: f64| -> Result<Option<Var>> {
            v.map(|v| pass.tape.scale(v, s)).transpose()
        };
        let (recon_t, kl_t, gen_t) = (pass.terms.recon, pass.terms.kl, pass.terms.gen);
        let recon_w = weighted(&mut pass, Some(recon_t), w.recon)?;
        let kl_w = weighted(&mut pass, kl_t, w.kl.unwrap_or(1.0 / n))?;
        let gen_w = weighted(&mut pass, gen_t, w.adv)?;
        Ok(TermGradients {
            recon: named(&self.encoder, pass.encoder_grads(self, recon_w)?),
            kl: named(&self.encoder, pass.encoder_grads(self, kl_w)?),
            adversarial: named(&self.encoder, pass.encoder_grads(self, gen_w)?),
            total: named(&self.encoder, pass.encoder_grads(self, Some(pass.terms.total))?),
        })
    }

    /// Train-mode discriminator loss on `real` and `fake` latent samples.
    pub fn discriminator_loss(&self, real: &Tensor2, fake: &Tensor2, rng: &mut RngStream) -> Result<f64> {
        Ok(self.disc_pass(real, fake, rng)?.0)
    }

    pub fn discriminator_gradients(
        &self,
        real: &Tensor2,
        fake: &Tensor2,
        rng: &mut RngStream,
    ) -> Result<(f64, ParamStore)> {
        let (loss, grads, _) = self.disc_pass(real, fake, rng)?;
        Ok((loss, named(&self.discriminator, grads)))
    }
}
