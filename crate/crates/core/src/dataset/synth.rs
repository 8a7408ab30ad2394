use super::FeatureDataset;
use crate::error::{Error, Result};
use crate::rng::{streams, RngStream};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub n_per_class: usize,
    pub classes: usize,
    pub d: usize,
    pub separation: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

/// Isotropic Gaussian clusters. Class `c` is centered at
/// `separation * e_c`, so centers are mutually orthogonal and
/// `separation * sqrt(2)` apart. Splits are left unassigned.
pub fn synth_clusters(p: &SynthParams) -> Result<FeatureDataset> {
    if p.n_per_class == 0 || p.classes == 0 || p.d == 0 {
        return Err(Error::Parameter(
            "n_per_class, classes and d must all be at least 1".into(),
        ));
    }
    if !(p.separation > 0.0) || !(p.noise_sigma >= 0.0) {
        return Err(Error::Parameter(format!(
            "need separation > 0 and noise_sigma >= 0, got {} and {}",
            p.separation, p.noise_sigma
        )));
    }
    if p.d < p.classes {
        return Err(Error::Dimension(format!(
            "orthogonal centers need d >= classes, got d={} classes={}",
            p.d, p.classes
        )));
    }

    let n = p.n_per_class * p.classes;
    let width = n.to_string().len();
    let mut rng = RngStream::new(p.seed, streams::SYNTH);
    let mut ids = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut features = Vec::with_capacity(n * p.d);
    for c in 0..p.classes {
        for _ in 0..p.n_per_class {
            ids.push(format!("item{:0width$}", ids.len()));
            labels.push(c as u32);
            for j in 0..p.d {
                let center = if j == c { p.separation } else { 0.0 };
                let v = center + p.noise_sigma * rng.normal();
                features.push(v as f32);
            }
        }
    }
    FeatureDataset::new(ids, labels, vec![None; n], features, p.d, Vec::new())
}
