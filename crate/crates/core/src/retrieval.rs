//! Embedding database and top-K Euclidean retrieval.

use std::path::Path;

use rayon::prelude::*;

use crate::codec::{read_file, write_atomic, Reader, Writer};
use crate::dataset::{FeatureDataset, SplitFilter};
use crate::error::{Error, Result};
use crate::model::{Checkpoint, GraphArtifacts};
use crate::nn::Mode;
use crate::rng::RngStream;

const MAGIC: &[u8; 4] = b"GRFI";
const VERSION: u32 = 1;

/// Latent means of a subset of nodes, stored as binary32.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalIndex {
    d_latent: usize,
    embeddings: Vec<f32>,
    ids: Vec<String>,
    labels: Vec<u32>,
    class_names: Vec<String>,
    subset: SplitFilter,
    checkpoint_hash: String,
}

impl RetrievalIndex {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn d_latent(&self) -> usize {
        self.d_latent
    }

    pub fn embeddings(&self) -> &[f32] {
        &self.embeddings
    }

    pub fn embedding(&self, i: usize) -> &[f32] {
        &self.embeddings[i * self.d_latent..(i + 1) * self.d_latent]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn subset(&self) -> SplitFilter {
        self.subset
    }

    /// Hex SHA-256 of the checkpoint the embeddings came from.
    pub fn checkpoint_hash(&self) -> &str {
        &self.checkpoint_hash
    }

    /// Number of entries labeled `label`.
    pub fn count_label(&self, label: u32) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.u64(self.len() as u64);
        w.u64(self.d_latent as u64);
        w.u8(self.subset.code());
        w.string(&self.checkpoint_hash);
        for &v in &self.embeddings {
            w.f32(v);
        }
        for &l in &self.labels {
            w.u32(l);
        }
        for id in &self.ids {
            w.string(id);
        }
        w.u64(self.class_names.len() as u64);
        for c in &self.class_names {
            w.string(c);
        }
        w.into_bytes()
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf, "index");
        r.magic(MAGIC)?;
        r.version(VERSION)?;
        let n = r.u64()?;
        let d = r.u64()?;
        let subset = SplitFilter::from_code(r.u8()?)
            .ok_or_else(|| Error::Format("unknown subset code in index".into()))?;
        let checkpoint_hash = r.string()?;
        let len = n
            .checked_mul(d)
            .ok_or_else(|| Error::Format(format!("index declares {n}x{d} embeddings")))?;
        r.check_room(len, 4)?;
        let embeddings = (0..len).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
        r.check_room(n, 4)?;
        let labels = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let ids = (0..n).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
        let n_classes = r.count(4)?;
        let class_names = (0..n_classes).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
        r.finish()?;
        let index = Self {
            d_latent: d as usize,
            embeddings,
            ids,
            labels,
            class_names,
            subset,
            checkpoint_hash,
        };
        index.validate()?;
        Ok(index)
    }

    fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = self.ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::Format(format!("duplicate id `{dup}` in index")));
        }
        if self.d_latent == 0 && !self.ids.is_empty() {
            return Err(Error::Format("index has zero latent width".into()));
        }
        if self.embeddings.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite embedding in index".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

/// Eval-mode encoding of every node; the latent means of the nodes in
/// `subset` become the index.
pub fn build_index(
    checkpoint: &Checkpoint,
    ds: &FeatureDataset,
    graph: &GraphArtifacts,
    subset: SplitFilter,
) -> Result<RetrievalIndex> {
    checkpoint.model.check_input_dim(ds.d())?;
    if graph.n() != ds.n() || graph.d() != ds.d() {
        return Err(Error::Dimension(format!(
            "graph artifacts cover {}x{} features, dataset is {}x{}",
            graph.n(),
            graph.d(),
            ds.n(),
            ds.d()
        )));
    }
    let selected = ds.indices_in(subset);
    if selected.is_empty() {
        return Err(Error::InvalidDataset(format!("subset `{subset}` selects no items")));
    }
    // Eval mode draws nothing; the stream only satisfies the signature.
    let state = checkpoint
        .model
        .encode(graph, Mode::Eval, &mut RngStream::new(0, 0))?;
    let d = state.mu.cols();
    let mut embeddings = Vec::with_capacity(selected.len() * d);
    for &i in &selected {
        embeddings.extend(state.mu.row(i).iter().map(|&v| v as f32));
    }
    let index = RetrievalIndex {
        d_latent: d,
        embeddings,
        ids: selected.iter().map(|&i| ds.ids()[i].clone()).collect(),
        labels: selected.iter().map(|&i| ds.labels()[i]).collect(),
        class_names: ds.class_names().to_vec(),
        subset,
        checkpoint_hash: checkpoint.digest(),
    };
    index.validate()?;
    Ok(index)
}

/// One ranked result.
#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub id: String,
    pub label: u32,
    pub distance: f64,
}

/// Answers feature-vector queries against an index: each query is linked
/// into the graph by its `k_attach` nearest nodes, encoded in eval mode,
/// and ranked against every index entry by exact Euclidean distance.
pub struct Retriever<'a> {
    pub index: &'a RetrievalIndex,
    pub checkpoint: &'a Checkpoint,
    pub graph: &'a GraphArtifacts,
    pub k_attach: usize,
}

impl Retriever<'_> {
    /// Latent mean of a query vector.
    pub fn embed_query(&self, q: &[f64]) -> Result<Vec<f64>> {
        self.checkpoint.model.check_input_dim(q.len())?;
        let (aug, row) = self.graph.with_query(q, self.k_attach)?;
        let state = self
            .checkpoint
            .model
            .encode(&aug, Mode::Eval, &mut RngStream::new(0, 0))?;
        Ok(state.mu.row(row).to_vec())
    }

    /// Top-`k` hits by ascending distance, ties broken by id.
    pub fn query(&self, q: &[f64], k: usize) -> Result<Vec<Hit>> {
        if k == 0 || k > self.index.len() {
            return Err(Error::Parameter(format!(
                "K must satisfy 1 <= K <= {}, got {k}",
                self.index.len()
            )));
        }
        let d_in = self.graph.d();
        if q.len() != d_in {
            return Err(Error::Dimension(format!(
                "query has {} features, dataset has {d_in}",
                q.len()
            )));
        }
        let mu = self.embed_query(q)?;
        if mu.len() != self.index.d_latent() {
            return Err(Error::Dimension(format!(
                "query embedding has {} dims, index has {}",
                mu.len(),
                self.index.d_latent()
            )));
        }
        Ok(rank(self.index, &mu, k))
    }

    /// Independent [`Retriever::query`] calls; a failing query does not
    /// affect the others.
    pub fn query_batch(&self, queries: &[Vec<f64>], k: usize) -> Vec<Result<Vec<Hit>>> {
        queries.par_iter().map(|q| self.query(q, k)).collect()
    }
}

/// Exhaustive ranking of `index` against a latent vector.
pub fn rank(index: &RetrievalIndex, mu: &[f64], k: usize) -> Vec<Hit> {
    let mut scored: Vec<(f64, usize)> = (0..index.len())
        .map(|i| {
            let d2: f64 = index
                .embedding(i)
                .iter()
                .zip(mu)
                .map(|(&e, &m)| (e as f64 - m) * (e as f64 - m))
                .sum();
            (d2.sqrt(), i)
        })
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| index.ids[a.1].cmp(&index.ids[b.1])));
    scored
        .into_iter()
        .take(k)
        .map(|(distance, i)| Hit {
            id: index.ids[i].clone(),
            label: index.labels[i],
            distance,
        })
        .collect()
}

/// CSV rows `query_id,rank,id,label,distance` (rank is 1-based).
pub fn hits_to_csv(results: &[(String, Vec<Hit>)], class_names: &[String]) -> String {
    let mut out = String::from("query_id,rank,id,label,distance\n");
    for (qid, hits) in results {
        for (r, h) in hits.iter().enumerate() {
            let label = class_names
                .get(h.label as usize)
                .cloned()
                .unwrap_or_else(|| h.label.to_string());
            out.push_str(&format!("{qid},{},{},{label},{}\n", r + 1, h.id, h.distance));
        }
    }
    out
}
