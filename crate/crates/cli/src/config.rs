use std::path::Path;

use grf_core::dataset::SplitFilter;
use grf_core::graph::KnnMethod;
use grf_core::metrics::RelevanceScope;
use grf_core::model::{parse_kv, ModelConfig};
use grf_core::{Error, Result};

/// Settings shared by all subcommands: defaults, then the `--config`
/// file, then command-line flags.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub k_graph: usize,
    pub k_retrieval: usize,
    /// Neighbors linked to each query node; `None` uses the graph's
    /// minimum degree.
    pub k_attach: Option<usize>,
    pub ann: KnnMethod,
    pub subset: SplitFilter,
    pub relevance: RelevanceScope,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::new(1),
            k_graph: 15,
            k_retrieval: 5,
            k_attach: None,
            ann: KnnMethod::Auto,
            subset: SplitFilter::Train,
            relevance: RelevanceScope::TopK,
            seed: 0,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Parameter(format!("invalid value `{v}` for `{key}`")))
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.to_path_buf(),
                source: e,
            })?;
            for (k, v) in parse_kv(&text)? {
                cfg.set(&k, &v)?;
            }
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "preset" => {
                self.k_graph = match value.to_ascii_lowercase().as_str() {
                    "breakhis" => 25,
                    "bach" => 15,
                    other => {
                        return Err(Error::Parameter(format!(
                            "unknown preset `{other}` (expected breakhis or bach)"
                        )))
                    }
                }
            }
            "k_graph" => self.k_graph = parse(key, value)?,
            "k_retrieval" => {
                self.k_retrieval = parse(key, value)?;
                if self.k_retrieval == 0 {
                    return Err(Error::Parameter("k_retrieval must be at least 1".into()));
                }
            }
            "k_attach" => self.k_attach = Some(parse(key, value)?),
            "ann" => self.ann = value.parse()?,
            "subset" => self.subset = value.parse()?,
            "relevance" => {
                self.relevance = match value {
                    "top-k" | "topk" => RelevanceScope::TopK,
                    "corpus" => RelevanceScope::Corpus,
                    other => {
                        return Err(Error::Parameter(format!(
                            "unknown relevance scope `{other}` (expected top-k or corpus)"
                        )))
                    }
                }
            }
            "seed" => {
                self.seed = parse(key, value)?;
                self.model.seed = self.seed;
            }
            _ => {
                if !self.model.set(key, value)? {
                    return Err(Error::Parameter(format!("unknown config key `{key}`")));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_and_overrides() {
        let mut c = RunConfig::default();
        assert_eq!(c.k_graph, 15);
        c.set("preset", "BreakHis").unwrap();
        assert_eq!(c.k_graph, 25);
        c.set("variant", "gae").unwrap();
        assert!(!c.model.use_attention && !c.model.variational);
        c.set("seed", "7").unwrap();
        assert_eq!(c.model.seed, 7);
        assert!(c.set("k_retrieval", "0").is_err());
        assert!(c.set("bogus", "1").is_err());
    }
}
