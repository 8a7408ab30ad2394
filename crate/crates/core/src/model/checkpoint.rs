use std::path::Path;

use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use super::params::Model;
use super::train::EpochLosses;
use crate::codec::{read_file, write_atomic, Reader, Writer};
use crate::error::{Error, Result};
use crate::nn::Tensor2;
use crate::rng::{streams, RngState, RngStream};

const MAGIC: &[u8; 4] = b"GRFM";
const VERSION: u32 = 1;

/// A trained (or freshly initialized) model with its training record.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub epoch: usize,
    pub history: Vec<EpochLosses>,
    /// Training stream position after the last completed epoch.
    pub rng_state: RngState,
}

impl Checkpoint {
    /// Epoch-0 checkpoint: the initialization and an untouched training stream.
    pub fn initial(config: &ModelConfig) -> Result<Self> {
        Ok(Self {
            model: Model::init(config)?,
            epoch: 0,
            history: Vec::new(),
            rng_state: RngStream::new(config.seed, streams::TRAIN).state(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.model.config
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.string(&self.model.config.to_kv());
        w.u64(self.epoch as u64);
        w.u64(self.history.len() as u64);
        for h in &self.history {
            w.u64(h.epoch as u64);
            for v in [h.recon, h.kl, h.gen, h.disc, h.total] {
                w.f64(v);
            }
        }
        w.bytes(&self.rng_state.key);
        w.u64(self.rng_state.stream);
        w.u128(self.rng_state.word_pos);
        let tensors: Vec<_> = self.model.tensors().collect();
        w.u64(tensors.len() as u64);
        for (name, t) in tensors {
            w.string(name);
            w.u64(t.rows() as u64);
            w.u64(t.cols() as u64);
            for &v in t.data() {
                w.f64(v);
            }
        }
        w.into_bytes()
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        Self::decode(buf, None)
    }

    /// Decodes and checks every tensor against `expected` instead of the
    /// stored configuration; a mismatch names the offending tensor.
    pub fn from_bytes_expecting(buf: &[u8], expected: &ModelConfig) -> Result<Self> {
        Self::decode(buf, Some(expected))
    }

    fn decode(buf: &[u8], expected: Option<&ModelConfig>) -> Result<Self> {
        let mut r = Reader::new(buf, "checkpoint");
        r.magic(MAGIC)?;
        r.version(VERSION)?;
        let stored = ModelConfig::from_kv(&r.string()?)?;
        let epoch = r.u64()? as usize;
        let n_hist = r.count(8 + 5 * 8)?;
        let mut history = Vec::with_capacity(n_hist);
        for _ in 0..n_hist {
            let epoch = r.u64()? as usize;
            let mut v = [0.0; 5];
            for x in &mut v {
                *x = r.f64()?;
            }
            history.push(EpochLosses {
                epoch,
                recon: v[0],
                kl: v[1],
                gen: v[2],
                disc: v[3],
                total: v[4],
            });
        }
        let key: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let rng_state = RngState {
            key,
            stream: r.u64()?,
            word_pos: r.u128()?,
        };
        let n_tensors = r.count(4 + 16)?;
        let mut tensors = Vec::with_capacity(n_tensors);
        for _ in 0..n_tensors {
            let name = r.string()?;
            let (rows, cols) = (r.u64()?, r.u64()?);
            let len = rows.checked_mul(cols).ok_or_else(|| {
                Error::Format(format!("tensor `{name}` declares {rows}x{cols} entries"))
            })?;
            r.check_room(len, 8)?;
            let data = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            tensors.push((name, Tensor2::from_vec(rows as usize, cols as usize, data)?));
        }
        r.finish()?;
        let config = match expected {
            Some(c) => {
                if c.variant() != stored.variant() {
                    return Err(Error::Format(format!(
                        "checkpoint holds variant {:?}, expected {:?}",
                        stored.variant(),
                        c.variant()
                    )));
                }
                let mut c = c.clone();
                c.seed = stored.seed;
                c
            }
            None => stored.clone(),
        };
        let mut model = Model::from_tensors(&config, tensors)?;
        model.config = stored;
        Ok(Self {
            model,
            epoch,
            history,
            rng_state,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }

    pub fn load_expecting(path: &Path, expected: &ModelConfig) -> Result<Self> {
        Self::from_bytes_expecting(&read_file(path)?, expected)
    }

    /// Lower-case hex SHA-256 of the serialized checkpoint.
    pub fn digest(&self) -> String {
        hex_digest(&self.to_bytes())
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
