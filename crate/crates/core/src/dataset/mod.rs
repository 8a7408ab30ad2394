//! Feature datasets: ingestion, validation, splitting, persistence and
//! synthetic generation.

mod binary;
mod csv;
mod split;
mod synth;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use self::binary::{load_binary, save_binary};
pub use self::csv::{load_csv, save_csv};
pub use self::split::{assign_splits, SplitRatios};
pub use self::synth::{synth_clusters, SynthParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn code(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Option<Split>> {
        match code {
            0 => Some(Some(Split::Train)),
            1 => Some(Some(Split::Val)),
            2 => Some(Some(Split::Test)),
            UNASSIGNED_CODE => Some(None),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

pub(crate) const UNASSIGNED_CODE: u8 = 255;

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Parameter(format!("unknown split `{other}`"))),
        }
    }
}

/// Which items of a dataset an operation should cover.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitFilter {
    Train,
    TrainVal,
    Test,
    All,
}

impl SplitFilter {
    pub fn accepts(self, split: Option<Split>) -> bool {
        match self {
            SplitFilter::Train => split == Some(Split::Train),
            SplitFilter::TrainVal => matches!(split, Some(Split::Train | Split::Val)),
            SplitFilter::Test => split == Some(Split::Test),
            SplitFilter::All => true,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            SplitFilter::Train => 0,
            SplitFilter::TrainVal => 1,
            SplitFilter::Test => 2,
            SplitFilter::All => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => SplitFilter::Train,
            1 => SplitFilter::TrainVal,
            2 => SplitFilter::Test,
            3 => SplitFilter::All,
            _ => return None,
        })
    }
}

impl fmt::Display for SplitFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitFilter::Train => "train",
            SplitFilter::TrainVal => "train+val",
            SplitFilter::Test => "test",
            SplitFilter::All => "all",
        })
    }
}

impl FromStr for SplitFilter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitFilter::Train),
            "train+val" | "trainval" => Ok(SplitFilter::TrainVal),
            "test" => Ok(SplitFilter::Test),
            "all" => Ok(SplitFilter::All),
            other => Err(Error::Parameter(format!(
                "unknown subset `{other}` (expected train, train+val, test or all)"
            ))),
        }
    }
}

/// N labelled feature vectors of dimension `d`, stored row-major as f32.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    ids: Vec<String>,
    labels: Vec<u32>,
    splits: Vec<Option<Split>>,
    features: Vec<f32>,
    d: usize,
    class_names: Vec<String>,
}

impl FeatureDataset {
    /// Builds and validates a dataset. `class_names` may be empty, in which
    /// case names `class_0..class_{C-1}` are generated.
    pub fn new(
        ids: Vec<String>,
        labels: Vec<u32>,
        splits: Vec<Option<Split>>,
        features: Vec<f32>,
        d: usize,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let n = ids.len();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        if d == 0 {
            return Err(Error::Dimension("feature dimension must be at least 1".into()));
        }
        if labels.len() != n || splits.len() != n {
            return Err(Error::InvalidDataset(format!(
                "{} ids but {} labels and {} split tags",
                n,
                labels.len(),
                splits.len()
            )));
        }
        if features.len() != n * d {
            return Err(Error::Dimension(format!(
                "expected {} feature values for n={} d={}, got {}",
                n * d,
                n,
                d,
                features.len()
            )));
        }
        let n_classes = labels.iter().max().map_or(0, |&m| m as usize + 1);
        let class_names = if class_names.is_empty() {
            (0..n_classes).map(|c| format!("class_{c}")).collect()
        } else {
            class_names
        };
        let ds = Self {
            ids,
            labels,
            splits,
            features,
            d,
            class_names,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.n());
        for id in &self.ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::InvalidDataset(format!("duplicate id `{id}`")));
            }
        }
        let c = self.class_names.len();
        let mut present = vec![false; c];
        for &l in &self.labels {
            let slot = present.get_mut(l as usize).ok_or_else(|| {
                Error::InvalidDataset(format!("label {l} outside class table of size {c}"))
            })?;
            *slot = true;
        }
        if let Some(missing) = present.iter().position(|p| !p) {
            return Err(Error::InvalidDataset(format!(
                "labels are not contiguous: class {missing} has no items"
            )));
        }
        if let Some(pos) = self.features.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset(format!(
                "non-finite feature value at row {} column {}",
                pos / self.d,
                pos % self.d
            )));
        }
        if self.n() >= 10 && self.splits.iter().all(Option::is_some) {
            for s in Split::ALL {
                if !self.splits.contains(&Some(s)) {
                    return Err(Error::InvalidDataset(format!("split `{s}` is empty")));
                }
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn splits(&self) -> &[Option<Split>] {
        &self.splits
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    /// Row-major `n x d` feature block.
    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn indices_in(&self, filter: SplitFilter) -> Vec<usize> {
        (0..self.n())
            .filter(|&i| filter.accepts(self.splits[i]))
            .collect()
    }

    /// Item counts for train, val, test and unassigned.
    pub fn split_counts(&self) -> [usize; 4] {
        let mut counts = [0; 4];
        for s in &self.splits {
            let slot = match s {
                Some(s) => s.code() as usize,
                None => 3,
            };
            counts[slot] += 1;
        }
        counts
    }

    pub fn summary(&self) -> String {
        let [tr, va, te, un] = self.split_counts();
        format!(
            "n={} d={} C={} train={} val={} test={} unassigned={}",
            self.n(),
            self.d,
            self.n_classes(),
            tr,
            va,
            te,
            un
        )
    }

    pub(crate) fn with_splits(&self, splits: Vec<Option<Split>>) -> Result<Self> {
        let mut out = self.clone();
        out.splits = splits;
        out.validate()?;
        Ok(out)
    }
}
