//! k-nearest-neighbor similarity graphs in compressed-row form.

mod binary;
mod kdtree;
mod knn;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::codec::write_atomic;
use crate::error::{Error, Result};
use crate::nn::CsrMatrix;

pub use self::binary::{load_graph, save_graph};
pub use self::kdtree::{KdForest, KdTreeParams};
pub use self::knn::{attach_query, knn_graph, nearest_exact, KnnMethod};

/// Sparse adjacency with f32 edge weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGraph {
    n: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f32>,
}

impl SparseGraph {
    pub fn new(
        n: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f32>,
    ) -> Result<Self> {
        let g = Self {
            n,
            row_offsets,
            col_indices,
            values,
        };
        g.validate()?;
        Ok(g)
    }

    /// Builds from per-row adjacency lists; rows are sorted by column.
    pub fn from_rows(rows: Vec<Vec<(usize, f32)>>) -> Result<Self> {
        let n = rows.len();
        let mut row_offsets = Vec::with_capacity(n + 1);
        row_offsets.push(0);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        for mut row in rows {
            row.sort_by_key(|&(j, _)| j);
            for (j, w) in row {
                col_indices.push(j);
                values.push(w);
            }
            row_offsets.push(col_indices.len());
        }
        Self::new(n, row_offsets, col_indices, values)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Format(format!("invalid graph: {msg}")));
        if self.row_offsets.len() != self.n + 1 || self.row_offsets[0] != 0 {
            return bad(format!("row_offsets must have length n+1={} and start at 0", self.n + 1));
        }
        if self.row_offsets.windows(2).any(|w| w[0] > w[1]) {
            return bad("row_offsets decrease".into());
        }
        let nnz = self.row_offsets[self.n];
        if nnz != self.col_indices.len() || nnz != self.values.len() {
            return bad(format!(
                "row_offsets end at {nnz} but there are {} columns and {} values",
                self.col_indices.len(),
                self.values.len()
            ));
        }
        for i in 0..self.n {
            let cols = self.neighbors(i);
            if cols.iter().any(|&j| j >= self.n) {
                return bad(format!("row {i} has a column outside [0, {})", self.n));
            }
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return bad(format!("row {i} is unsorted or has duplicate columns"));
            }
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return bad("non-finite edge weight".into());
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.col_indices[self.row_offsets[i]..self.row_offsets[i + 1]]
    }

    pub fn weights(&self, i: usize) -> &[f32] {
        &self.values[self.row_offsets[i]..self.row_offsets[i + 1]]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.row_offsets[i + 1] - self.row_offsets[i]
    }

    pub fn weight(&self, i: usize, j: usize) -> Option<f32> {
        let cols = self.neighbors(i);
        cols.binary_search(&j).ok().map(|p| self.weights(i)[p])
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors(i).binary_search(&j).is_ok()
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| {
            self.neighbors(i)
                .iter()
                .zip(self.weights(i))
                .all(|(&j, &w)| self.weight(j, i) == Some(w))
        })
    }

    pub fn has_self_loops(&self) -> bool {
        (0..self.n).any(|i| self.has_edge(i, i))
    }

    /// Union with the reversed edge set; coinciding edges keep the larger
    /// weight.
    pub fn symmetrize(&self) -> SparseGraph {
        let mut rows: Vec<BTreeMap<usize, f32>> = vec![BTreeMap::new(); self.n];
        for i in 0..self.n {
            for (&j, &w) in self.neighbors(i).iter().zip(self.weights(i)) {
                for (a, b) in [(i, j), (j, i)] {
                    let slot = rows[a].entry(b).or_insert(w);
                    *slot = slot.max(w);
                }
            }
        }
        Self::from_maps(rows)
    }

    /// Copy with a unit-weight self-loop on every node that lacks one.
    pub fn with_self_loops(&self) -> SparseGraph {
        let rows = (0..self.n)
            .map(|i| {
                let mut row: BTreeMap<usize, f32> = self
                    .neighbors(i)
                    .iter()
                    .copied()
                    .zip(self.weights(i).iter().copied())
                    .collect();
                row.entry(i).or_insert(1.0);
                row
            })
            .collect();
        Self::from_maps(rows)
    }

    fn from_maps(rows: Vec<BTreeMap<usize, f32>>) -> SparseGraph {
        let n = rows.len();
        let mut row_offsets = Vec::with_capacity(n + 1);
        row_offsets.push(0);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        for row in rows {
            for (j, w) in row {
                col_indices.push(j);
                values.push(w);
            }
            row_offsets.push(col_indices.len());
        }
        SparseGraph {
            n,
            row_offsets,
            col_indices,
            values,
        }
    }

    pub fn to_csr(&self) -> CsrMatrix {
        CsrMatrix {
            n_rows: self.n,
            n_cols: self.n,
            row_offsets: self.row_offsets.clone(),
            col_indices: self.col_indices.clone(),
            values: self.values.iter().map(|&v| v as f64).collect(),
        }
    }

    /// Min, max and mean row degree.
    pub fn degree_stats(&self) -> (usize, usize, f64) {
        let degs = (0..self.n).map(|i| self.degree(i));
        let min = degs.clone().min().unwrap_or(0);
        let max = degs.max().unwrap_or(0);
        let mean = if self.n == 0 {
            0.0
        } else {
            self.nnz() as f64 / self.n as f64
        };
        (min, max, mean)
    }

    /// `src<TAB>dst<TAB>weight` lines, one per stored edge.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.n {
            for (&j, &w) in self.neighbors(i).iter().zip(self.weights(i)) {
                let _ = writeln!(out, "{i}\t{j}\t{w}");
            }
        }
        out
    }

    pub fn save_tsv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_tsv().as_bytes())
    }
}

/// `D^-1/2 (A + I) D^-1/2` where `D` holds the row sums of `A + I`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    csr: CsrMatrix,
}

impl NormalizedAdjacency {
    pub fn csr(&self) -> &CsrMatrix {
        &self.csr
    }

    pub fn into_csr(self) -> CsrMatrix {
        self.csr
    }

    pub fn n(&self) -> usize {
        self.csr.n_rows()
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let (cols, vals) = self.csr.row(i);
        cols.binary_search(&j).ok().map(|p| vals[p])
    }
}

/// Adds self-loops and applies symmetric degree normalization.
pub fn normalize(g: &SparseGraph) -> Result<NormalizedAdjacency> {
    if !g.is_symmetric() {
        return Err(Error::Contract("normalize requires a symmetric graph".into()));
    }
    if g.values().iter().any(|&w| w <= 0.0) {
        return Err(Error::Contract("normalize requires positive edge weights".into()));
    }
    let n = g.n();
    let mut rows: Vec<BTreeMap<usize, f64>> = (0..n)
        .map(|i| {
            g.neighbors(i)
                .iter()
                .zip(g.weights(i))
                .map(|(&j, &w)| (j, w as f64))
                .collect()
        })
        .collect();
    for (i, row) in rows.iter_mut().enumerate() {
        *row.entry(i).or_insert(0.0) += 1.0;
    }
    let inv_sqrt_deg: Vec<f64> = rows
        .iter()
        .map(|row| 1.0 / row.values().sum::<f64>().sqrt())
        .collect();
    let mut row_offsets = Vec::with_capacity(n + 1);
    row_offsets.push(0);
    let mut col_indices = Vec::new();
    let mut values = Vec::new();
    for (i, row) in rows.into_iter().enumerate() {
        for (j, a) in row {
            col_indices.push(j);
            // One product of the two factors keeps v_ij and v_ji bit-equal.
            values.push(a * (inv_sqrt_deg[i] * inv_sqrt_deg[j]));
        }
        row_offsets.push(col_indices.len());
    }
    Ok(NormalizedAdjacency {
        csr: CsrMatrix::new(n, n, row_offsets, col_indices, values)?,
    })
}
