//! Retrieval scoring: mAP(k) and majority-vote accuracy mMV(k).

use std::collections::HashMap;
use std::hash::Hash;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::write_atomic;
use crate::dataset::{FeatureDataset, SplitFilter};
use crate::error::{Error, Result};
use crate::retrieval::Retriever;

/// What `R` counts in the average-precision normalizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelevanceScope {
    /// Relevant items within the top `k`; a fully relevant top `k` scores 1.
    #[default]
    TopK,
    /// All relevant items in the database.
    Corpus,
}

/// `AP = (1/R) * sum_{r<=k} Precision(r) * rel(r)`, with `R` the number of
/// relevant items in the top `k` and `AP = 0` when `R = 0`.
pub fn average_precision_at_k<L: PartialEq>(retrieved: &[L], query: &L, k: usize) -> Result<f64> {
    let (sum, hits) = precision_sum(retrieved, query, k)?;
    Ok(if hits == 0 { 0.0 } else { sum / hits as f64 })
}

/// Average precision normalized by `total_relevant`, the corpus-wide count
/// of items sharing the query label.
pub fn average_precision_at_k_corpus<L: PartialEq>(
    retrieved: &[L],
    query: &L,
    k: usize,
    total_relevant: usize,
) -> Result<f64> {
    let (sum, hits) = precision_sum(retrieved, query, k)?;
    if hits > total_relevant {
        return Err(Error::Parameter(format!(
            "{hits} relevant items retrieved but only {total_relevant} exist"
        )));
    }
    Ok(if total_relevant == 0 { 0.0 } else { sum / total_relevant as f64 })
}

fn precision_sum<L: PartialEq>(retrieved: &[L], query: &L, k: usize) -> Result<(f64, usize)> {
    if retrieved.is_empty() {
        return Err(Error::Parameter("empty retrieval list".into()));
    }
    if k == 0 || k > retrieved.len() {
        return Err(Error::Parameter(format!(
            "k must satisfy 1 <= k <= {}, got {k}",
            retrieved.len()
        )));
    }
    let mut hits = 0;
    let mut sum = 0.0;
    for (r, l) in retrieved[..k].iter().enumerate() {
        if l == query {
            hits += 1;
            sum += hits as f64 / (r + 1) as f64;
        }
    }
    Ok((sum, hits))
}

/// True iff `query` is one of the most frequent labels among the first
/// `k` retrieved (ties between modes count as a hit).
pub fn majority_vote_hit<L: Eq + Hash>(retrieved: &[L], query: &L, k: usize) -> Result<bool> {
    if k == 0 {
        return Err(Error::Parameter("k must be at least 1".into()));
    }
    let mut counts: HashMap<&L, usize> = HashMap::new();
    for l in retrieved.iter().take(k) {
        *counts.entry(l).or_default() += 1;
    }
    let best = counts.values().copied().max().unwrap_or(0);
    Ok(best > 0 && counts.get(query) == Some(&best))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub query_id: String,
    pub label: u32,
    pub ap: f64,
    pub mv_hit: bool,
    pub retrieved_ids: Vec<String>,
    pub retrieved_labels: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedQuery {
    pub query_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub k: usize,
    pub scope: RelevanceScope,
    pub map_k: f64,
    pub mmv_k: f64,
    pub queries_evaluated: usize,
    pub queries_skipped: usize,
    pub per_query: Vec<QueryOutcome>,
    pub skipped: Vec<SkippedQuery>,
}

impl EvalReport {
    /// Aggregates per-query outcomes; the means cover evaluated queries only.
    pub fn from_outcomes(
        k: usize,
        scope: RelevanceScope,
        per_query: Vec<QueryOutcome>,
        skipped: Vec<SkippedQuery>,
    ) -> Self {
        let n = per_query.len();
        let mean = |f: &dyn Fn(&QueryOutcome) -> f64| {
            if n == 0 {
                0.0
            } else {
                per_query.iter().map(f).sum::<f64>() / n as f64
            }
        };
        Self {
            k,
            scope,
            map_k: mean(&|q| q.ap),
            mmv_k: mean(&|q| if q.mv_hit { 1.0 } else { 0.0 }),
            queries_evaluated: n,
            queries_skipped: skipped.len(),
            per_query,
            skipped,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("report json: {e}")))
    }

    /// `metric,k,value` summary, a blank line, then one row per query.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,k,value\n");
        out.push_str(&format!("map,{},{}\n", self.k, self.map_k));
        out.push_str(&format!("mmv,{},{}\n", self.k, self.mmv_k));
        out.push_str(&format!("queries_evaluated,{},{}\n", self.k, self.queries_evaluated));
        out.push_str(&format!("queries_skipped,{},{}\n", self.k, self.queries_skipped));
        out.push_str("\nquery_id,label,ap,mv_hit,retrieved_ids,retrieved_labels\n");
        for q in &self.per_query {
            let labels: Vec<String> = q.retrieved_labels.iter().map(u32::to_string).collect();
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                q.query_id,
                q.label,
                q.ap,
                u8::from(q.mv_hit),
                q.retrieved_ids.join(";"),
                labels.join(";")
            ));
        }
        out
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json().as_bytes())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }
}

/// Queries every test-split item of `ds` against the retriever's index and
/// scores the top `k`. Failing queries are reported as skipped.
pub fn evaluate(
    retriever: &Retriever<'_>,
    ds: &FeatureDataset,
    k: usize,
    scope: RelevanceScope,
) -> Result<EvalReport> {
    let test = ds.indices_in(SplitFilter::Test);
    if test.is_empty() {
        return Err(Error::InvalidDataset("test split is empty".into()));
    }
    if k == 0 || k > retriever.index.len() {
        return Err(Error::Parameter(format!(
            "k must satisfy 1 <= k <= {} (index size), got {k}",
            retriever.index.len()
        )));
    }
    let queries: Vec<Vec<f64>> = test
        .iter()
        .map(|&i| ds.row(i).iter().map(|&v| v as f64).collect())
        .collect();
    let results = retriever.query_batch(&queries, k);
    let mut per_query = Vec::new();
    let mut skipped = Vec::new();
    for (&i, result) in test.iter().zip(results) {
        let query_id = ds.ids()[i].clone();
        let label = ds.labels()[i];
        match result {
            Ok(hits) => {
                let labels: Vec<u32> = hits.iter().map(|h| h.label).collect();
                let ap = match scope {
                    RelevanceScope::TopK => average_precision_at_k(&labels, &label, k)?,
                    RelevanceScope::Corpus => average_precision_at_k_corpus(
                        &labels,
                        &label,
                        k,
                        retriever.index.count_label(label),
                    )?,
                };
                per_query.push(QueryOutcome {
                    query_id,
                    label,
                    ap,
                    mv_hit: majority_vote_hit(&labels, &label, k)?,
                    retrieved_ids: hits.into_iter().map(|h| h.id).collect(),
                    retrieved_labels: labels,
                });
            }
            Err(e) => skipped.push(SkippedQuery {
                query_id,
                reason: e.to_string(),
            }),
        }
    }
    Ok(EvalReport::from_outcomes(k, scope, per_query, skipped))
}
