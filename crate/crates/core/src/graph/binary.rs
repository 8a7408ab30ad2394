use std::path::Path;

use super::SparseGraph;
use crate::codec::{read_file, write_atomic, Reader, Writer};
use crate::error::Result;

const MAGIC: &[u8; 4] = b"GRFG";
const VERSION: u32 = 1;

pub(crate) fn encode(g: &SparseGraph) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.u64(g.n() as u64);
    w.u64(g.nnz() as u64);
    for &o in g.row_offsets() {
        w.u64(o as u64);
    }
    for &c in g.col_indices() {
        w.u64(c as u64);
    }
    for &v in g.values() {
        w.f32(v);
    }
    w.into_bytes()
}

pub(crate) fn decode(bytes: &[u8]) -> Result<SparseGraph> {
    let mut r = Reader::new(bytes, "graph");
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let n = r.u64()?;
    let nnz = r.u64()?;
    r.check_room(n.saturating_add(1), 8)?;
    let row_offsets = (0..=n)
        .map(|_| r.u64().map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    r.check_room(nnz, 12)?;
    let col_indices = (0..nnz)
        .map(|_| r.u64().map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let values = (0..nnz).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    SparseGraph::new(n as usize, row_offsets, col_indices, values)
}

pub fn save_graph(g: &SparseGraph, path: &Path) -> Result<()> {
    write_atomic(path, &encode(g))
}

pub fn load_graph(path: &Path) -> Result<SparseGraph> {
    decode(&read_file(path)?)
}
