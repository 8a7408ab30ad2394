use std::str::FromStr;

use super::{FeatureDataset, Split};
use crate::error::{Error, Result};
use crate::rng::{streams, RngStream};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.70,
            val: 0.10,
            test: 0.20,
        }
    }
}

impl SplitRatios {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let r = Self { train, val, test };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
            return Err(Error::Parameter(format!(
                "split ratios must each lie in (0,1), got {parts:?}"
            )));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Parameter(format!("split ratios sum to {sum}, not 1")));
        }
        Ok(())
    }

    fn as_array(&self) -> [f64; 3] {
        [self.train, self.val, self.test]
    }
}

impl FromStr for SplitRatios {
    type Err = Error;

    /// Parses `train,val,test`, e.g. `0.7,0.1,0.2`.
    fn from_str(s: &str) -> Result<Self> {
        let parts = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::Parameter(format!("cannot parse split ratios `{s}`")))?;
        match parts[..] {
            [a, b, c] => SplitRatios::new(a, b, c),
            _ => Err(Error::Parameter(format!(
                "split ratios need three values, got `{s}`"
            ))),
        }
    }
}

/// Per-class integer counts that sum to `total` and deviate from
/// `ratio * total` by less than one item (largest-remainder rounding).
fn allocate(total: usize, ratios: [f64; 3]) -> [usize; 3] {
    let exact = ratios.map(|r| r * total as f64);
    let mut counts = exact.map(|x| x.floor() as usize);
    let mut left = total - counts.iter().sum::<usize>();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &s in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[s] += 1;
        left -= 1;
    }
    counts
}

/// Stratified random split: each class is shuffled independently and cut
/// according to `ratios`. Deterministic for a fixed seed.
pub fn assign_splits(
    ds: &FeatureDataset,
    ratios: SplitRatios,
    seed: u64,
) -> Result<FeatureDataset> {
    ratios.validate()?;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.n_classes()];
    for (i, &l) in ds.labels().iter().enumerate() {
        by_class[l as usize].push(i);
    }
    if let Some((class, members)) = by_class.iter().enumerate().find(|(_, m)| m.len() < 3) {
        return Err(Error::Stratification {
            class: class as u32,
            count: members.len(),
        });
    }

    let mut rng = RngStream::new(seed, streams::SPLIT);
    let mut splits = vec![None; ds.n()];
    for members in &mut by_class {
        rng.shuffle(members);
        let [n_train, n_val, _] = allocate(members.len(), ratios.as_array());
        for (pos, &i) in members.iter().enumerate() {
            splits[i] = Some(if pos < n_train {
                Split::Train
            } else if pos < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            });
        }
    }
    ds.with_splits(splits)
}
