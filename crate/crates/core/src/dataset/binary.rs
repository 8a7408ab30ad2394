use std::path::Path;

use super::{FeatureDataset, Split, UNASSIGNED_CODE};
use crate::codec::{read_file, write_atomic, Reader, Writer};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"GRFD";
const VERSION: u32 = 1;

pub(crate) fn encode(ds: &FeatureDataset) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.u64(ds.n() as u64);
    w.u64(ds.d() as u64);
    w.u64(ds.n_classes() as u64);
    for &v in ds.features() {
        w.f32(v);
    }
    for &l in ds.labels() {
        w.u32(l);
    }
    for s in ds.splits() {
        w.u8(s.map_or(UNASSIGNED_CODE, Split::code));
    }
    for id in ds.ids() {
        w.string(id);
    }
    for name in ds.class_names() {
        w.string(name);
    }
    w.into_bytes()
}

pub(crate) fn decode(bytes: &[u8]) -> Result<FeatureDataset> {
    let mut r = Reader::new(bytes, "dataset");
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let n = r.u64()?;
    let d = r.u64()?;
    let c = r.u64()?;
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if d == 0 {
        return Err(Error::Dimension("feature dimension is 0".into()));
    }
    let cells = n
        .checked_mul(d)
        .ok_or_else(|| Error::Format("n*d overflows".into()))?;
    r.check_room(cells, 4)?;
    let (n, d, c) = (n as usize, d as usize, c as usize);
    let features = (0..cells).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
    r.check_room(n as u64, 4)?;
    let labels = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    r.check_room(n as u64, 1)?;
    let splits = (0..n)
        .map(|i| {
            let code = r.u8()?;
            Split::from_code(code)
                .ok_or_else(|| Error::Format(format!("item {i}: unknown split code {code}")))
        })
        .collect::<Result<Vec<_>>>()?;
    r.check_room(n as u64, 4)?;
    let ids = (0..n).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
    r.check_room(c as u64, 4)?;
    let names = (0..c).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    if c == 0 {
        return Err(Error::InvalidDataset("class table is empty".into()));
    }
    FeatureDataset::new(ids, labels, splits, features, d, names)
}

pub fn save_binary(ds: &FeatureDataset, path: &Path) -> Result<()> {
    write_atomic(path, &encode(ds))
}

pub fn load_binary(path: &Path) -> Result<FeatureDataset> {
    decode(&read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_clusters, SynthParams};

    fn sample() -> FeatureDataset {
        synth_clusters(&SynthParams {
            n_per_class: 4,
            classes: 3,
            d: 5,
            separation: 3.0,
            noise_sigma: 0.7,
            seed: 11,
        })
        .unwrap()
    }

    #[test]
    fn round_trip() {
        let ds = sample();
        let back = decode(&encode(&ds)).unwrap();
        assert_eq!(back, ds);
        assert_eq!(encode(&back), encode(&ds));
    }

    #[test]
    fn wrong_magic() {
        let mut bytes = encode(&sample());
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes).unwrap_err(), Error::Format(_)));
    }

    #[test]
    fn wrong_version() {
        let mut bytes = encode(&sample());
        bytes[4] = 9;
        assert!(matches!(
            decode(&bytes).unwrap_err(),
            Error::Version { found: 9, .. }
        ));
    }

    #[test]
    fn zero_items() {
        let mut w = Writer::new();
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.u64(0);
        w.u64(4);
        w.u64(1);
        assert!(matches!(decode(&w.into_bytes()).unwrap_err(), Error::EmptyDataset));
    }

    #[test]
    fn truncated() {
        let bytes = encode(&sample());
        for cut in [10, 40, bytes.len() - 1] {
            let err = decode(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, Error::Truncated(_)), "cut {cut}: {err}");
        }
    }
}
