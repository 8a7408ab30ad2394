use std::path::Path;

use super::{FeatureDataset, Split};
use crate::codec::write_atomic;
use crate::error::{Error, Result};

/// Reads `id,label,split,f0,...,f{d-1}`. Empty split cells stay unassigned.
pub fn load_csv(path: &Path) -> Result<FeatureDataset> {
    let mut reader = ::csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;

    let mut records = reader.records();
    let header = match records.next() {
        Some(h) => h.map_err(|e| csv_error(path, e))?,
        None => return Err(Error::Format(format!("{}: missing header row", path.display()))),
    };
    let d = check_header(&header)?;

    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut splits = Vec::new();
    let mut features = Vec::new();
    for (idx, rec) in records.enumerate() {
        // Line numbers are 1-based and include the header.
        let row = idx + 2;
        let rec = rec.map_err(|e| csv_error(path, e))?;
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        if rec.len() != d + 3 {
            return Err(Error::Dimension(format!(
                "row {row} has {} feature columns, header declares {d}",
                rec.len().saturating_sub(3)
            )));
        }
        ids.push(rec[0].to_string());
        let label = rec[1].trim().parse::<u32>().map_err(|_| Error::Parse {
            row,
            msg: format!("label `{}` is not a non-negative integer", &rec[1]),
        })?;
        labels.push(label);
        let split = match rec[2].trim() {
            "" => None,
            s => Some(s.parse::<Split>().map_err(|_| Error::Parse {
                row,
                msg: format!("split `{s}` is not one of train/val/test"),
            })?),
        };
        splits.push(split);
        for (j, cell) in rec.iter().skip(3).enumerate() {
            let v = cell.trim().parse::<f32>().map_err(|_| Error::Parse {
                row,
                msg: format!("feature f{j} value `{cell}` is not a number"),
            })?;
            features.push(v);
        }
    }
    FeatureDataset::new(ids, labels, splits, features, d, Vec::new())
}

fn check_header(header: &::csv::StringRecord) -> Result<usize> {
    let bad = |why: &str| Error::Format(format!("malformed header: {why}"));
    if header.len() < 4 {
        return Err(bad("expected id,label,split,f0,..."));
    }
    let fixed: Vec<&str> = header.iter().take(3).map(str::trim).collect();
    if fixed != ["id", "label", "split"] {
        return Err(bad("first three columns must be id,label,split"));
    }
    for (j, name) in header.iter().skip(3).enumerate() {
        if name.trim() != format!("f{j}") {
            return Err(bad(&format!("column {} should be f{j}, found `{name}`", j + 3)));
        }
    }
    Ok(header.len() - 3)
}

fn csv_error(path: &Path, e: ::csv::Error) -> Error {
    match e.into_kind() {
        ::csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {:?}", path.display(), other)),
    }
}

/// Writes the dataset as CSV. Floats use the shortest representation that
/// parses back to the same f32 bits.
pub fn save_csv(ds: &FeatureDataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str("id,label,split");
    for j in 0..ds.d() {
        out.push_str(&format!(",f{j}"));
    }
    out.push('\n');
    for i in 0..ds.n() {
        out.push_str(&ds.ids()[i]);
        out.push(',');
        out.push_str(&ds.labels()[i].to_string());
        out.push(',');
        if let Some(s) = ds.splits()[i] {
            out.push_str(s.as_str());
        }
        for v in ds.row(i) {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}
