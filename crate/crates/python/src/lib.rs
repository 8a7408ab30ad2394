//! Python bindings: datasets, k-NN graphs, training, retrieval indices,
//! querying and evaluation.

use std::path::PathBuf;

use grf_core::dataset::{
    assign_splits, load_binary, load_csv, save_binary, synth_clusters, FeatureDataset, SplitFilter,
    SplitRatios, SynthParams,
};
use grf_core::graph::{knn_graph, load_graph, save_graph, KnnMethod, SparseGraph};
use grf_core::metrics::{self, RelevanceScope};
use grf_core::model::{train_with, Checkpoint, GraphArtifacts, ModelConfig};
use grf_core::nn::Mode;
use grf_core::retrieval::{build_index, RetrievalIndex, Retriever};
use grf_core::rng::RngStream;
use grf_core::ErrorKind;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(grf, GrfError, PyException, "Malformed data or a numeric failure.");

fn py_err(e: grf_core::Error) -> PyErr {
    match e.kind() {
        ErrorKind::Usage => PyValueError::new_err(e.to_string()),
        ErrorKind::Io => PyOSError::new_err(e.to_string()),
        ErrorKind::Data | ErrorKind::Numeric => GrfError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for grf_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

#[pyclass(name = "Dataset", module = "grf", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: FeatureDataset,
}

#[pymethods]
impl PyDataset {
    /// Reads a `.csv` feature table or a binary dataset file.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let is_csv = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
        let inner = if is_csv { load_csv(&path) } else { load_binary(&path) }.py()?;
        Ok(Self { inner })
    }

    /// Gaussian clusters, split 70/10/20 unless `split` is false.
    #[staticmethod]
    #[pyo3(signature = (classes=2, per_class=100, dim=64, sep=10.0, sigma=1.0, seed=0, split=true))]
    fn synth(
        classes: usize,
        per_class: usize,
        dim: usize,
        sep: f64,
        sigma: f64,
        seed: u64,
        split: bool,
    ) -> PyResult<Self> {
        let mut ds = synth_clusters(&SynthParams {
            n_per_class: per_class,
            classes,
            d: dim,
            separation: sep,
            noise_sigma: sigma,
            seed,
        })
        .py()?;
        if split {
            ds = assign_splits(&ds, SplitRatios::default(), seed).py()?;
        }
        Ok(Self { inner: ds })
    }

    #[pyo3(signature = (train=0.7, val=0.1, test=0.2, seed=0))]
    fn with_splits(&self, train: f64, val: f64, test: f64, seed: u64) -> PyResult<Self> {
        let ratios = SplitRatios::new(train, val, test).py()?;
        Ok(Self {
            inner: assign_splits(&self.inner, ratios, seed).py()?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_binary(&self.inner, &path).py()
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d()
    }

    #[getter]
    fn ids(&self) -> Vec<String> {
        self.inner.ids().to_vec()
    }

    #[getter]
    fn labels(&self) -> Vec<u32> {
        self.inner.labels().to_vec()
    }

    #[getter]
    fn class_names(&self) -> Vec<String> {
        self.inner.class_names().to_vec()
    }

    /// Split tag per item: "train", "val", "test" or None.
    #[getter]
    fn splits(&self) -> Vec<Option<&'static str>> {
        self.inner
            .splits()
            .iter()
            .map(|s| s.map(|s| s.as_str()))
            .collect()
    }

    fn row(&self, i: usize) -> PyResult<Vec<f32>> {
        if i >= self.inner.n() {
            return Err(PyValueError::new_err(format!("row {i} out of range")));
        }
        Ok(self.inner.row(i).to_vec())
    }

    fn __len__(&self) -> usize {
        self.inner.n()
    }

    fn __repr__(&self) -> String {
        format!("Dataset({})", self.inner.summary())
    }
}

#[pyclass(name = "Graph", module = "grf", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyGraph {
    inner: SparseGraph,
}

#[pymethods]
impl PyGraph {
    /// Symmetrized k-nearest-neighbor graph. `method` is `auto`, `exact`
    /// or `kdtree[:trees=T,leaf=L,checks=C]`.
    #[staticmethod]
    #[pyo3(signature = (dataset, k=15, method="auto", seed=0))]
    fn knn(py: Python<'_>, dataset: &PyDataset, k: usize, method: &str, seed: u64) -> PyResult<Self> {
        let method: KnnMethod = method.parse().py()?;
        let ds = &dataset.inner;
        let g = py.detach(|| knn_graph(ds, k, method, seed)).py()?;
        Ok(Self {
            inner: g.symmetrize(),
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: load_graph(&path).py()?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_graph(&self.inner, &path).py()
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    /// Number of undirected edges.
    #[getter]
    fn edges(&self) -> usize {
        self.inner.nnz() / 2
    }

    fn neighbors(&self, i: usize) -> PyResult<Vec<usize>> {
        if i >= self.inner.n() {
            return Err(PyValueError::new_err(format!("node {i} out of range")));
        }
        Ok(self.inner.neighbors(i).to_vec())
    }

    /// `(min, max, mean)` node degree.
    fn degree_stats(&self) -> (usize, usize, f64) {
        self.inner.degree_stats()
    }

    fn __repr__(&self) -> String {
        format!("Graph(n={}, edges={})", self.inner.n(), self.inner.nnz() / 2)
    }
}

fn artifacts(ds: &PyDataset, g: &PyGraph) -> PyResult<GraphArtifacts> {
    if ds.inner.n() != g.inner.n() {
        return Err(PyValueError::new_err(format!(
            "graph has {} nodes, dataset has {} items",
            g.inner.n(),
            ds.inner.n()
        )));
    }
    GraphArtifacts::from_dataset(&ds.inner, g.inner.clone()).py()
}

#[pyclass(name = "Checkpoint", module = "grf", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyCheckpoint {
    inner: Checkpoint,
}

#[pymethods]
impl PyCheckpoint {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: Checkpoint::load(&path).py()?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).py()
    }

    /// SHA-256 of the serialized checkpoint.
    fn digest(&self) -> String {
        self.inner.digest()
    }

    #[getter]
    fn epoch(&self) -> usize {
        self.inner.epoch
    }

    #[getter]
    fn variant(&self) -> Option<String> {
        self.inner.config().variant().map(|v| v.to_string())
    }

    /// Settings as `key=value` lines.
    fn config(&self) -> String {
        self.inner.config().to_kv()
    }

    /// Per-epoch losses as dicts with keys epoch, recon, kl, gen, disc, total.
    fn history<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.inner
            .history
            .iter()
            .map(|h| {
                let d = PyDict::new(py);
                d.set_item("epoch", h.epoch)?;
                d.set_item("recon", h.recon)?;
                d.set_item("kl", h.kl)?;
                d.set_item("gen", h.gen)?;
                d.set_item("disc", h.disc)?;
                d.set_item("total", h.total)?;
                Ok(d)
            })
            .collect()
    }

    /// Eval-mode latent means, one row per node.
    fn encode(&self, py: Python<'_>, dataset: &PyDataset, graph: &PyGraph) -> PyResult<Vec<Vec<f64>>> {
        let g = artifacts(dataset, graph)?;
        let model = &self.inner.model;
        let state = py
            .detach(|| model.encode(&g, Mode::Eval, &mut RngStream::new(0, 0)))
            .py()?;
        Ok((0..state.mu.rows()).map(|r| state.mu.row(r).to_vec()).collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Checkpoint(variant={}, epoch={})",
            self.variant().unwrap_or_else(|| "custom".into()),
            self.inner.epoch
        )
    }
}

/// Trains a model. Extra keyword arguments are config settings such as
/// `lr`, `d_hidden`, `heads`, `d_latent`, `dropout`, `w_kl`.
#[pyfunction]
#[pyo3(signature = (dataset, graph, variant="a-arvgae", epochs=250, seed=0, **options))]
fn train(
    py: Python<'_>,
    dataset: &PyDataset,
    graph: &PyGraph,
    variant: &str,
    epochs: usize,
    seed: u64,
    options: Option<&Bound<'_, PyDict>>,
) -> PyResult<PyCheckpoint> {
    let mut config = ModelConfig::new(dataset.inner.d());
    config.set("variant", variant).py()?;
    config.epochs = epochs;
    config.seed = seed;
    if let Some(options) = options {
        for (k, v) in options.iter() {
            let key: String = k.extract()?;
            let value = v.str()?.to_string();
            if !config.set(&key, &value).py()? {
                return Err(PyValueError::new_err(format!("unknown setting `{key}`")));
            }
        }
    }
    let g = artifacts(dataset, graph)?;
    let ck = py.detach(|| train_with(&g, &config, |_| {})).py()?;
    Ok(PyCheckpoint { inner: ck })
}

#[pyclass(name = "Index", module = "grf", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyIndex {
    inner: RetrievalIndex,
}

#[pymethods]
impl PyIndex {
    /// Latent means of the items in `subset` (train, train+val, test, all).
    #[staticmethod]
    #[pyo3(signature = (checkpoint, dataset, graph, subset="train"))]
    fn build(
        checkpoint: &PyCheckpoint,
        dataset: &PyDataset,
        graph: &PyGraph,
        subset: &str,
    ) -> PyResult<Self> {
        let subset: SplitFilter = subset.parse().py()?;
        let g = artifacts(dataset, graph)?;
        Ok(Self {
            inner: build_index(&checkpoint.inner, &dataset.inner, &g, subset).py()?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: RetrievalIndex::load(&path).py()?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).py()
    }

    #[getter]
    fn ids(&self) -> Vec<String> {
        self.inner.ids().to_vec()
    }

    #[getter]
    fn labels(&self) -> Vec<u32> {
        self.inner.labels().to_vec()
    }

    #[getter]
    fn d_latent(&self) -> usize {
        self.inner.d_latent()
    }

    #[getter]
    fn checkpoint_hash(&self) -> String {
        self.inner.checkpoint_hash().to_string()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Index(entries={}, d_latent={}, subset={})",
            self.inner.len(),
            self.inner.d_latent(),
            self.inner.subset()
        )
    }
}

/// Everything needed to answer queries against one index.
#[pyclass(name = "Retriever", module = "grf", frozen, skip_from_py_object)]
struct PyRetriever {
    index: RetrievalIndex,
    checkpoint: Checkpoint,
    graph: GraphArtifacts,
    k_attach: usize,
}

impl PyRetriever {
    fn view(&self) -> Retriever<'_> {
        Retriever {
            index: &self.index,
            checkpoint: &self.checkpoint,
            graph: &self.graph,
            k_attach: self.k_attach,
        }
    }
}

#[pymethods]
impl PyRetriever {
    /// `k_attach` defaults to the graph's minimum degree.
    #[new]
    #[pyo3(signature = (index, checkpoint, dataset, graph, k_attach=None))]
    fn new(
        index: &PyIndex,
        checkpoint: &PyCheckpoint,
        dataset: &PyDataset,
        graph: &PyGraph,
        k_attach: Option<usize>,
    ) -> PyResult<Self> {
        if index.inner.checkpoint_hash() != checkpoint.inner.digest() {
            return Err(GrfError::new_err("index was built from a different checkpoint"));
        }
        let g = artifacts(dataset, graph)?;
        let k_attach = k_attach.unwrap_or_else(|| graph.inner.degree_stats().0.max(1));
        Ok(Self {
            index: index.inner.clone(),
            checkpoint: checkpoint.inner.clone(),
            graph: g,
            k_attach,
        })
    }

    /// Top `k` as `(id, label, distance)` tuples, nearest first.
    #[pyo3(signature = (vector, k=5))]
    fn query(&self, py: Python<'_>, vector: Vec<f64>, k: usize) -> PyResult<Vec<(String, u32, f64)>> {
        let hits = py.detach(|| self.view().query(&vector, k)).py()?;
        Ok(hits.into_iter().map(|h| (h.id, h.label, h.distance)).collect())
    }

    /// Scores every test-split item of `dataset`; returns a dict with
    /// map, mmv, k, queries_evaluated and queries_skipped.
    #[pyo3(signature = (dataset, k=5, relevance="top-k"))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        dataset: &PyDataset,
        k: usize,
        relevance: &str,
    ) -> PyResult<Bound<'py, PyDict>> {
        let scope = match relevance {
            "top-k" | "topk" => RelevanceScope::TopK,
            "corpus" => RelevanceScope::Corpus,
            other => {
                return Err(PyValueError::new_err(format!(
                    "unknown relevance scope `{other}` (expected top-k or corpus)"
                )))
            }
        };
        let ds = &dataset.inner;
        let rep = py
            .detach(|| metrics::evaluate(&self.view(), ds, k, scope))
            .py()?;
        let d = PyDict::new(py);
        d.set_item("k", rep.k)?;
        d.set_item("map", rep.map_k)?;
        d.set_item("mmv", rep.mmv_k)?;
        d.set_item("queries_evaluated", rep.queries_evaluated)?;
        d.set_item("queries_skipped", rep.queries_skipped)?;
        Ok(d)
    }
}

/// Average precision of the first `k` retrieved labels against `query`.
#[pyfunction]
fn average_precision_at_k(retrieved: Vec<i64>, query: i64, k: usize) -> PyResult<f64> {
    metrics::average_precision_at_k(&retrieved, &query, k).py()
}

/// Whether `query` is a most frequent label among the first `k`.
#[pyfunction]
fn majority_vote_hit(retrieved: Vec<i64>, query: i64, k: usize) -> PyResult<bool> {
    metrics::majority_vote_hit(&retrieved, &query, k).py()
}

#[pymodule]
fn grf(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("GrfError", m.py().get_type::<GrfError>())?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyGraph>()?;
    m.add_class::<PyCheckpoint>()?;
    m.add_class::<PyIndex>()?;
    m.add_class::<PyRetriever>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(average_precision_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(majority_vote_hit, m)?)?;
    Ok(())
}
