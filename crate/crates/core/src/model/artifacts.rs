use std::sync::Arc;

use crate::dataset::FeatureDataset;
use crate::error::{Error, Result};
use crate::graph::{attach_query, normalize, SparseGraph};
use crate::nn::{attention_support, CsrMatrix, Tensor2};

/// Everything the encoder needs about one graph: node features, the
/// symmetric k-NN graph, its self-looped support (attention neighborhoods
/// and reconstruction target) and the normalized adjacency used by the
/// GCN layers.
#[derive(Debug, Clone)]
pub struct GraphArtifacts {
    features: Tensor2,
    graph: SparseGraph,
    support: Arc<CsrMatrix>,
    norm_adj: Arc<CsrMatrix>,
}

impl GraphArtifacts {
    pub fn new(features: Tensor2, graph: SparseGraph) -> Result<Self> {
        if features.rows() != graph.n() {
            return Err(Error::Dimension(format!(
                "{} feature rows for a graph with {} nodes",
                features.rows(),
                graph.n()
            )));
        }
        if !graph.is_symmetric() {
            return Err(Error::Contract("encoder graph must be symmetric".into()));
        }
        let support = attention_support(&graph);
        let norm_adj = Arc::new(normalize(&graph)?.into_csr());
        Ok(Self {
            features,
            graph,
            support,
            norm_adj,
        })
    }

    pub fn from_dataset(ds: &FeatureDataset, graph: SparseGraph) -> Result<Self> {
        let features = Tensor2::from_f32(ds.n(), ds.d(), ds.features())?;
        Self::new(features, graph)
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    pub fn d(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Tensor2 {
        &self.features
    }

    pub fn graph(&self) -> &SparseGraph {
        &self.graph
    }

    /// Graph plus self-loops.
    pub fn support(&self) -> &Arc<CsrMatrix> {
        &self.support
    }

    pub fn norm_adj(&self) -> &Arc<CsrMatrix> {
        &self.norm_adj
    }

    /// Artifacts of the graph augmented with one query node linked to its
    /// `k` nearest existing nodes. Returns the query's node index.
    pub fn with_query(&self, q: &[f64], k: usize) -> Result<(GraphArtifacts, usize)> {
        let (g, idx) = attach_query(&self.graph, &self.features, q, k)?;
        let row = Tensor2::from_vec(1, q.len(), q.to_vec())?;
        let features = Tensor2::concat_rows(&[&self.features, &row])?;
        Ok((GraphArtifacts::new(features, g)?, idx))
    }
}
