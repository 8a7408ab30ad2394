use std::str::FromStr;

use rayon::prelude::*;

use super::{KdForest, KdTreeParams, SparseGraph};
use crate::dataset::FeatureDataset;
use crate::error::{Error, Result};
use crate::nn::Tensor2;

/// Largest n for which [`KnnMethod::Auto`] picks the exact search.
pub const AUTO_EXACT_LIMIT: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum KnnMethod {
    #[default]
    Auto,
    Exact,
    KdTree(KdTreeParams),
}

impl FromStr for KnnMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, opts) = s.split_once(':').unwrap_or((s, ""));
        match name {
            "auto" if opts.is_empty() => Ok(KnnMethod::Auto),
            "exact" if opts.is_empty() => Ok(KnnMethod::Exact),
            "kdtree" => {
                let mut p = KdTreeParams::default();
                for opt in opts.split(',').filter(|o| !o.is_empty()) {
                    let (k, v) = opt.split_once('=').unwrap_or((opt, ""));
                    let v: usize = v.parse().map_err(|_| {
                        Error::Parameter(format!("invalid kdtree option `{opt}`"))
                    })?;
                    match k {
                        "trees" => p.trees = v,
                        "leaf" => p.leaf_size = v,
                        "checks" => p.checks = v,
                        _ => return Err(Error::Parameter(format!("unknown kdtree option `{k}`"))),
                    }
                }
                Ok(KnnMethod::KdTree(p))
            }
            _ => Err(Error::Parameter(format!(
                "unknown ann method `{s}` (expected auto, exact or kdtree[:trees=T,leaf=L,checks=C])"
            ))),
        }
    }
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub(crate) fn by_dist_then_index(a: &(usize, f64), b: &(usize, f64)) -> std::cmp::Ordering {
    a.1.total_cmp(&b.1).then(a.0.cmp(&b.0))
}

/// The `k` rows of `points` closest to `q` by Euclidean distance, as
/// `(index, squared distance)` sorted ascending; ties go to the lower index.
pub fn nearest_exact(
    points: &Tensor2,
    q: &[f64],
    k: usize,
    exclude: Option<usize>,
) -> Vec<(usize, f64)> {
    let mut cand: Vec<(usize, f64)> = (0..points.rows())
        .filter(|&j| Some(j) != exclude)
        .map(|j| (j, sq_dist(q, points.row(j))))
        .collect();
    let k = k.min(cand.len());
    if k == 0 {
        return Vec::new();
    }
    if k < cand.len() {
        cand.select_nth_unstable_by(k - 1, by_dist_then_index);
        cand.truncate(k);
    }
    cand.sort_by(by_dist_then_index);
    cand
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::Size(format!("k-NN graph needs at least 2 nodes, got {n}")));
    }
    if k == 0 || k >= n {
        return Err(Error::Parameter(format!(
            "k must satisfy 1 <= k < n, got k={k} with n={n}"
        )));
    }
    Ok(())
}

/// Directed k-NN graph: row `i` holds the `k` nearest other nodes with
/// weight 1.
pub fn knn_graph(ds: &FeatureDataset, k: usize, method: KnnMethod, seed: u64) -> Result<SparseGraph> {
    let points = Tensor2::from_f32(ds.n(), ds.d(), ds.features())?;
    knn_graph_points(&points, k, method, seed)
}

pub(crate) fn knn_graph_points(
    points: &Tensor2,
    k: usize,
    method: KnnMethod,
    seed: u64,
) -> Result<SparseGraph> {
    let n = points.rows();
    check_k(n, k)?;
    let method = match method {
        KnnMethod::Auto if n <= AUTO_EXACT_LIMIT => KnnMethod::Exact,
        KnnMethod::Auto => KnnMethod::KdTree(KdTreeParams::default()),
        m => m,
    };
    let lists: Vec<Vec<(usize, f64)>> = match method {
        KnnMethod::Exact | KnnMethod::Auto => (0..n)
            .into_par_iter()
            .map(|i| nearest_exact(points, points.row(i), k, Some(i)))
            .collect(),
        KnnMethod::KdTree(params) => {
            let forest = KdForest::build(points, params, seed)?;
            forest.search_all(k)
        }
    };
    let rows = lists
        .into_iter()
        .map(|l| l.into_iter().map(|(j, _)| (j, 1.0f32)).collect())
        .collect();
    SparseGraph::from_rows(rows)
}

/// Appends node `n` for query vector `q`, linked in both directions to its
/// `k` nearest existing nodes. Existing edges are untouched.
pub fn attach_query(
    g: &SparseGraph,
    points: &Tensor2,
    q: &[f64],
    k: usize,
) -> Result<(SparseGraph, usize)> {
    let n = g.n();
    if points.rows() != n {
        return Err(Error::Dimension(format!(
            "graph has {n} nodes but {} feature rows were given",
            points.rows()
        )));
    }
    if q.len() != points.cols() {
        return Err(Error::Dimension(format!(
            "query has {} features, dataset has {}",
            q.len(),
            points.cols()
        )));
    }
    if k == 0 || k > n {
        return Err(Error::Parameter(format!(
            "attach k must satisfy 1 <= k <= n, got k={k} with n={n}"
        )));
    }
    let linked: Vec<usize> = nearest_exact(points, q, k, None)
        .into_iter()
        .map(|(j, _)| j)
        .collect();
    let mut is_linked = vec![false; n];
    for &j in &linked {
        is_linked[j] = true;
    }
    let mut row_offsets = Vec::with_capacity(n + 2);
    row_offsets.push(0);
    let mut col_indices = Vec::with_capacity(g.nnz() + 2 * k);
    let mut values = Vec::with_capacity(g.nnz() + 2 * k);
    for i in 0..n {
        col_indices.extend_from_slice(g.neighbors(i));
        values.extend_from_slice(g.weights(i));
        if is_linked[i] {
            col_indices.push(n);
            values.push(1.0);
        }
        row_offsets.push(col_indices.len());
    }
    let mut sorted = linked;
    sorted.sort_unstable();
    for j in sorted {
        col_indices.push(j);
        values.push(1.0);
    }
    row_offsets.push(col_indices.len());
    Ok((SparseGraph::new(n + 1, row_offsets, col_indices, values)?, n))
}
