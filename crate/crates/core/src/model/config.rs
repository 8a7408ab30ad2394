use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// The four points of the ablation ladder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Deterministic graph autoencoder.
    Gae,
    /// Variational graph autoencoder.
    Vgae,
    /// Variational, adversarially regularized.
    Arvga,
    /// Attention front-end, variational, adversarially regularized.
    AArvgae,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Gae, Variant::Vgae, Variant::Arvga, Variant::AArvgae];

    /// `(use_attention, variational, adversarial)`.
    pub fn flags(self) -> (bool, bool, bool) {
        match self {
            Variant::Gae => (false, false, false),
            Variant::Vgae => (false, true, false),
            Variant::Arvga => (false, true, true),
            Variant::AArvgae => (true, true, true),
        }
    }

    pub fn from_flags(flags: (bool, bool, bool)) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| v.flags() == flags)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Gae => "gae",
            Variant::Vgae => "vgae",
            Variant::Arvga => "arvga",
            Variant::AArvgae => "a-arvgae",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| {
                Error::Parameter(format!(
                    "unknown variant `{s}` (expected gae, vgae, arvga or a-arvgae)"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReconMode {
    /// Positive-weighted binary cross-entropy over adjacency entries.
    Bce,
    /// Mean squared error between decoded probabilities and the adjacency.
    Mse,
}

impl FromStr for ReconMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bce" => Ok(ReconMode::Bce),
            "mse" => Ok(ReconMode::Mse),
            other => Err(Error::Parameter(format!("unknown reconstruction loss `{other}`"))),
        }
    }
}

impl fmt::Display for ReconMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReconMode::Bce => "bce",
            ReconMode::Mse => "mse",
        })
    }
}

/// Weights of the three objective terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub recon: f64,
    /// `None` means `1 / n` for an `n`-node graph.
    pub kl: Option<f64>,
    pub adv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            recon: 1.0,
            kl: None,
            adv: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub d_in: usize,
    /// Output width of each attention head.
    pub d_hidden: usize,
    pub heads: usize,
    pub d_latent: usize,
    pub dropout_p: f64,
    pub use_attention: bool,
    pub variational: bool,
    pub adversarial: bool,
    pub disc_hidden: usize,
    pub lr: f64,
    pub epochs: usize,
    pub disc_iters: usize,
    pub seed: u64,
    pub loss_weights: LossWeights,
    pub recon_mode: ReconMode,
    /// Negative slope of the leaky ReLU on attention scores.
    pub attention_slope: f64,
    /// Negative slope of the leaky ReLU activations.
    pub leaky_slope: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    /// Largest node count for the dense `n x n` decoder; above it the
    /// reconstruction loss samples edges.
    pub dense_budget: usize,
}

impl ModelConfig {
    /// A-ARVGAE defaults for `d_in`-dimensional features.
    pub fn new(d_in: usize) -> Self {
        Self {
            d_in,
            d_hidden: 64,
            heads: 2,
            d_latent: 32,
            dropout_p: 0.2,
            use_attention: true,
            variational: true,
            adversarial: true,
            disc_hidden: 64,
            lr: 1e-4,
            epochs: 250,
            disc_iters: 5,
            seed: 0,
            loss_weights: LossWeights::default(),
            recon_mode: ReconMode::Bce,
            attention_slope: 0.2,
            leaky_slope: 0.01,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
            dense_budget: 20_000,
        }
    }

    pub fn with_variant(mut self, v: Variant) -> Self {
        (self.use_attention, self.variational, self.adversarial) = v.flags();
        self
    }

    pub fn variant(&self) -> Option<Variant> {
        Variant::from_flags((self.use_attention, self.variational, self.adversarial))
    }

    /// Width of the representation fed to the latent heads.
    pub fn hidden_width(&self) -> usize {
        self.heads * self.d_hidden
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("d_in", self.d_in),
            ("d_hidden", self.d_hidden),
            ("heads", self.heads),
            ("d_latent", self.d_latent),
            ("disc_hidden", self.disc_hidden),
        ] {
            if v == 0 {
                return Err(Error::Parameter(format!("{name} must be at least 1")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Parameter(format!(
                "dropout_p {} outside [0, 1)",
                self.dropout_p
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Parameter(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) || !(self.bn_eps >= 0.0) {
            return Err(Error::Parameter("invalid batch-norm momentum or eps".into()));
        }
        Ok(())
    }

    /// Flat `key=value` lines.
    pub fn to_kv(&self) -> String {
        let w = &self.loss_weights;
        let kl = w.kl.map_or_else(|| "auto".to_string(), |v| v.to_string());
        [
            format!("d_in={}", self.d_in),
            format!("d_hidden={}", self.d_hidden),
            format!("heads={}", self.heads),
            format!("d_latent={}", self.d_latent),
            format!("dropout_p={}", self.dropout_p),
            format!("use_attention={}", self.use_attention),
            format!("variational={}", self.variational),
            format!("adversarial={}", self.adversarial),
            format!("disc_hidden={}", self.disc_hidden),
            format!("lr={}", self.lr),
            format!("epochs={}", self.epochs),
            format!("disc_iters={}", self.disc_iters),
            format!("seed={}", self.seed),
            format!("w_recon={}", w.recon),
            format!("w_kl={kl}"),
            format!("w_adv={}", w.adv),
            format!("recon_loss={}", self.recon_mode),
            format!("attention_slope={}", self.attention_slope),
            format!("leaky_slope={}", self.leaky_slope),
            format!("bn_momentum={}", self.bn_momentum),
            format!("bn_eps={}", self.bn_eps),
            format!("dense_budget={}", self.dense_budget),
        ]
        .join("\n")
            + "\n"
    }

    /// Applies one `key=value` setting. Returns false for unknown keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        fn p<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::Parameter(format!("invalid value `{v}` for `{key}`")))
        }
        match key {
            "d_in" => self.d_in = p(key, value)?,
            "d_hidden" => self.d_hidden = p(key, value)?,
            "heads" => self.heads = p(key, value)?,
            "d_latent" => self.d_latent = p(key, value)?,
            "dropout_p" | "dropout" => self.dropout_p = p(key, value)?,
            "use_attention" => self.use_attention = p(key, value)?,
            "variational" => self.variational = p(key, value)?,
            "adversarial" => self.adversarial = p(key, value)?,
            "disc_hidden" => self.disc_hidden = p(key, value)?,
            "lr" => self.lr = p(key, value)?,
            "epochs" => self.epochs = p(key, value)?,
            "disc_iters" => self.disc_iters = p(key, value)?,
            "seed" => self.seed = p(key, value)?,
            "w_recon" => self.loss_weights.recon = p(key, value)?,
            "w_kl" => {
                self.loss_weights.kl = match value.trim() {
                    "auto" => None,
                    v => Some(p(key, v)?),
                }
            }
            "w_adv" => self.loss_weights.adv = p(key, value)?,
            "recon_loss" => self.recon_mode = p(key, value)?,
            "attention_slope" => self.attention_slope = p(key, value)?,
            "leaky_slope" => self.leaky_slope = p(key, value)?,
            "bn_momentum" => self.bn_momentum = p(key, value)?,
            "bn_eps" => self.bn_eps = p(key, value)?,
            "dense_budget" => self.dense_budget = p(key, value)?,
            "variant" => *self = self.clone().with_variant(p(key, value)?),
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::new(1);
        for (key, value) in parse_kv(text)? {
            if !cfg.set(&key, &value)? {
                return Err(Error::Format(format!("unknown model config key `{key}`")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses flat `key=value` text; blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            row: lineno + 1,
            msg: format!("expected key=value, found `{line}`"),
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}
