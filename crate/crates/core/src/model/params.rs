use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{glorot_uniform, BatchNormStats, BatchStats, ParamStore, Tensor2};
use crate::rng::{streams, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Encoder,
    Discriminator,
    /// Batch-norm running statistics; not trained by gradient.
    Buffer,
}

/// Name, shape and group of every tensor a model with `config` owns, in
/// storage order.
pub fn parameter_shapes(config: &ModelConfig) -> Vec<(String, (usize, usize), ParamGroup)> {
    use ParamGroup::*;
    let c = config;
    let h = c.hidden_width();
    let mut out = Vec::new();
    let mut push = |name: String, shape, group| out.push((name, shape, group));
    if c.use_attention {
        for k in 0..c.heads {
            push(format!("gat.head{k}.weight"), (c.d_in, c.d_hidden), Encoder);
            push(format!("gat.head{k}.att_src"), (c.d_hidden, 1), Encoder);
            push(format!("gat.head{k}.att_dst"), (c.d_hidden, 1), Encoder);
        }
        push("gat.bn.gamma".into(), (1, h), Encoder);
        push("gat.bn.beta".into(), (1, h), Encoder);
    } else {
        push("gcn_hidden.weight".into(), (c.d_in, h), Encoder);
    }
    push("gcn_mu.weight".into(), (h, c.d_latent), Encoder);
    if c.variational {
        push("gcn_logvar.weight".into(), (h, c.d_latent), Encoder);
    }
    if c.adversarial {
        push("disc.fc1.weight".into(), (c.d_latent, c.disc_hidden), Discriminator);
        push("disc.fc1.bias".into(), (1, c.disc_hidden), Discriminator);
        push("disc.bn.gamma".into(), (1, c.disc_hidden), Discriminator);
        push("disc.bn.beta".into(), (1, c.disc_hidden), Discriminator);
        push("disc.fc2.weight".into(), (c.disc_hidden, 1), Discriminator);
        push("disc.fc2.bias".into(), (1, 1), Discriminator);
    }
    if c.use_attention {
        push("gat.bn.running_mean".into(), (1, h), Buffer);
        push("gat.bn.running_var".into(), (1, h), Buffer);
    }
    if c.adversarial {
        push("disc.bn.running_mean".into(), (1, c.disc_hidden), Buffer);
        push("disc.bn.running_var".into(), (1, c.disc_hidden), Buffer);
    }
    out
}

/// Trainable tensors and batch-norm buffers of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub(crate) config: ModelConfig,
    pub(crate) encoder: ParamStore,
    pub(crate) discriminator: ParamStore,
    pub(crate) buffers: ParamStore,
}

impl Model {
    /// Glorot-uniform weights, zero biases, unit batch-norm scale.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = RngStream::new(config.seed, streams::INIT);
        let mut model = Model {
            config: config.clone(),
            encoder: ParamStore::new(),
            discriminator: ParamStore::new(),
            buffers: ParamStore::new(),
        };
        for (name, (r, c), group) in parameter_shapes(config) {
            let t = if name.ends_with(".weight") || name.contains(".att_") {
                glorot_uniform(&mut rng, r, c)
            } else if name.ends_with(".gamma") || name.ends_with(".running_var") {
                Tensor2::full(r, c, 1.0)
            } else {
                Tensor2::zeros(r, c)
            };
            model.store_mut(group).insert(name, t);
        }
        Ok(model)
    }

    /// Assembles a model from stored tensors, checking names and shapes
    /// against `config`.
    pub(crate) fn from_tensors(
        config: &ModelConfig,
        tensors: Vec<(String, Tensor2)>,
    ) -> Result<Self> {
        config.validate()?;
        let expected = parameter_shapes(config);
        let mut model = Model {
            config: config.clone(),
            encoder: ParamStore::new(),
            discriminator: ParamStore::new(),
            buffers: ParamStore::new(),
        };
        let mut given: std::collections::HashMap<String, Tensor2> = tensors.into_iter().collect();
        for (name, shape, group) in &expected {
            let t = given
                .remove(name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor `{name}`")))?;
            if t.shape() != *shape {
                return Err(Error::Shape {
                    tensor: name.clone(),
                    expected: *shape,
                    found: t.shape(),
                });
            }
            model.store_mut(*group).insert(name.clone(), t);
        }
        if let Some(extra) = given.keys().min() {
            return Err(Error::Format(format!("unexpected tensor `{extra}` in checkpoint")));
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn encoder(&self) -> &ParamStore {
        &self.encoder
    }

    pub fn discriminator(&self) -> &ParamStore {
        &self.discriminator
    }

    pub fn buffers(&self) -> &ParamStore {
        &self.buffers
    }

    fn store_mut(&mut self, group: ParamGroup) -> &mut ParamStore {
        match group {
            ParamGroup::Encoder => &mut self.encoder,
            ParamGroup::Discriminator => &mut self.discriminator,
            ParamGroup::Buffer => &mut self.buffers,
        }
    }

    /// Every stored tensor by name, in storage order.
    pub fn tensors(&self) -> impl Iterator<Item = (&str, &Tensor2)> {
        self.encoder
            .iter()
            .chain(self.discriminator.iter())
            .chain(self.buffers.iter())
    }

    /// Names and shapes of the trainable parameters.
    pub fn inventory(&self) -> Vec<(String, (usize, usize))> {
        self.encoder
            .iter()
            .chain(self.discriminator.iter())
            .map(|(n, t)| (n.to_string(), t.shape()))
            .collect()
    }

    pub fn param(&self, name: &str) -> Option<&Tensor2> {
        self.tensors().find(|(n, _)| *n == name).map(|(_, t)| t)
    }

    /// Overwrites one stored tensor; the shape must not change.
    pub fn set_param(&mut self, name: &str, value: Tensor2) -> Result<()> {
        for store in [&mut self.encoder, &mut self.discriminator, &mut self.buffers] {
            if let Some(t) = store.get_mut(name) {
                if t.shape() != value.shape() {
                    return Err(Error::Shape {
                        tensor: name.to_string(),
                        expected: t.shape(),
                        found: value.shape(),
                    });
                }
                *t = value;
                return Ok(());
            }
        }
        Err(Error::Parameter(format!("no tensor named `{name}`")))
    }

    /// Errors with the first input-facing weight when `d` is not the
    /// configured feature width.
    pub fn check_input_dim(&self, d: usize) -> Result<()> {
        if d == self.config.d_in {
            return Ok(());
        }
        let (name, t) = self.encoder.iter().next().expect("encoder has parameters");
        Err(Error::Shape {
            tensor: name.to_string(),
            expected: t.shape(),
            found: (d, t.cols()),
        })
    }

    pub(crate) fn bn_stats(&self, prefix: &str) -> BatchNormStats {
        let mean = self.buffers.get(&format!("{prefix}.running_mean"));
        let var = self.buffers.get(&format!("{prefix}.running_var"));
        BatchNormStats {
            mean: mean.map(|t| t.data().to_vec()).unwrap_or_default(),
            var: var.map(|t| t.data().to_vec()).unwrap_or_default(),
        }
    }

    pub(crate) fn update_bn(&mut self, prefix: &str, batch: &BatchStats) {
        let mut stats = self.bn_stats(prefix);
        stats.update(batch, self.config.bn_momentum);
        let w = stats.mean.len();
        self.buffers.insert(
            format!("{prefix}.running_mean"),
            Tensor2::from_vec(1, w, stats.mean).expect("width"),
        );
        self.buffers.insert(
            format!("{prefix}.running_var"),
            Tensor2::from_vec(1, w, stats.var).expect("width"),
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;

    #[test]
    fn init_is_seeded() {
        let c = ModelConfig::new(6);
        assert_eq!(Model::init(&c).unwrap(), Model::init(&c).unwrap());
        let mut c2 = c.clone();
        c2.seed = 1;
        assert_ne!(Model::init(&c).unwrap(), Model::init(&c2).unwrap());
    }

    #[test]
    fn gae_has_no_logvar_or_discriminator() {
        let m = Model::init(&ModelConfig::new(6).with_variant(Variant::Gae)).unwrap();
        let names: Vec<_> = m.inventory().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, ["gcn_hidden.weight", "gcn_mu.weight"]);
        assert!(m.buffers().is_empty());
    }

    #[test]
    fn initial_values() {
        let m = Model::init(&ModelConfig::new(6)).unwrap();
        assert!(m.param("gat.bn.gamma").unwrap().data().iter().all(|&v| v == 1.0));
        assert!(m.param("disc.fc1.bias").unwrap().data().iter().all(|&v| v == 0.0));
        assert!(m.param("disc.bn.running_var").unwrap().data().iter().all(|&v| v == 1.0));
        let w = m.param("gat.head0.weight").unwrap();
        let a = (6.0f64 / (6 + 64) as f64).sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= a));
    }

    #[test]
    fn set_param_checks_shape() {
        let mut m = Model::init(&ModelConfig::new(6)).unwrap();
        let err = m.set_param("gcn_mu.weight", Tensor2::zeros(2, 2)).unwrap_err();
        assert!(err.to_string().contains("gcn_mu.weight"));
        assert!(m.set_param("nope", Tensor2::zeros(1, 1)).is_err());
        m.set_param("disc.fc2.bias", Tensor2::scalar(3.0)).unwrap();
        assert_eq!(m.param("disc.fc2.bias").unwrap().item(), 3.0);
    }

    #[test]
    fn input_dim_error_names_tensor() {
        let m = Model::init(&ModelConfig::new(6)).unwrap();
        assert!(m.check_input_dim(6).is_ok());
        let err = m.check_input_dim(5).unwrap_err();
        assert!(matches!(err, Error::Shape { ref tensor, .. } if tensor == "gat.head0.weight"));
    }
}
