//! Index file layout (little-endian throughout):
//!
//! ```text
//! "MVGI" | version u32 | column count u32 | column ids u32[] | maxDegree u32
//! | numRows u32 | entryPoint u32 | level count u32
//! | per level, per node: degree u16 | neighbors u32[degree]
//! ```
//!
//! Vectors are not stored; loading reattaches them from the dataset.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use super::{GraphIndex, GraphParams};
use crate::error::{Error, Result};
use crate::model::{ColumnSet, Dataset, IndexDescriptor};

pub const INDEX_MAGIC: &[u8; 4] = b"MVGI";
pub const INDEX_VERSION: u32 = 1;

pub fn write_index(index: &GraphIndex, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    encode(index, &mut buf);
    crate::cli::files::write_atomic(path, &buf)
}

fn encode(index: &GraphIndex, out: &mut Vec<u8>) {
    let put = |out: &mut Vec<u8>, v: u32| out.extend_from_slice(&v.to_le_bytes());
    out.extend_from_slice(INDEX_MAGIC);
    put(out, INDEX_VERSION);
    let ids: Vec<u32> = index.descriptor.vid.ids().collect();
    put(out, ids.len() as u32);
    for id in ids {
        put(out, id);
    }
    put(out, index.params.max_degree as u32);
    put(out, index.num_rows as u32);
    put(out, index.entry_point);
    put(out, index.layers.len() as u32);
    for layer in &index.layers {
        for adj in layer {
            out.extend_from_slice(&(adj.len() as u16).to_le_bytes());
            for &nb in adj {
                put(out, nb);
            }
        }
    }
}

/// Reads an index written by [`write_index`] and attaches `ds`'s vectors.
/// Search-time parameters other than the degree come from `params`.
pub fn read_index(path: &Path, ds: &Dataset, params: GraphParams) -> Result<GraphIndex> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let bad = |reason: &str| Error::format(path, reason);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != INDEX_MAGIC {
        return Err(bad("bad magic bytes"));
    }
    let u32_at = |r: &mut BufReader<File>| -> Result<u32> {
        let mut b = [0u8; 4];
        r.read_exact(&mut b).map_err(|e| Error::io(path, e))?;
        Ok(u32::from_le_bytes(b))
    };
    let version = u32_at(&mut r)?;
    if version != INDEX_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let count = u32_at(&mut r)? as usize;
    let mut ids = Vec::with_capacity(count);
    for _ in 0..count {
        ids.push(u32_at(&mut r)?);
    }
    let vid = ColumnSet::from_ids(ids).map_err(|e| bad(&e.to_string()))?;
    let max_degree = u32_at(&mut r)? as usize;
    let num_rows = u32_at(&mut r)? as usize;
    if num_rows != ds.num_rows() {
        return Err(bad(&format!(
            "index has {num_rows} rows but dataset has {}",
            ds.num_rows()
        )));
    }
    let entry_point = u32_at(&mut r)?;
    if entry_point as usize >= num_rows {
        return Err(bad("entry point out of range"));
    }
    let levels = u32_at(&mut r)? as usize;
    if levels == 0 {
        return Err(bad("index has no levels"));
    }
    let mut layers = Vec::with_capacity(levels);
    for _ in 0..levels {
        let mut layer = Vec::with_capacity(num_rows);
        for _ in 0..num_rows {
            let mut d = [0u8; 2];
            r.read_exact(&mut d).map_err(|e| Error::io(path, e))?;
            let degree = u16::from_le_bytes(d) as usize;
            if degree > max_degree {
                return Err(bad("node degree exceeds max degree"));
            }
            let mut adj = Vec::with_capacity(degree);
            for _ in 0..degree {
                let nb = u32_at(&mut r)?;
                if nb as usize >= num_rows {
                    return Err(bad("neighbor id out of range"));
                }
                adj.push(nb);
            }
            layer.push(adj);
        }
        layers.push(layer);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(|e| Error::io(path, e))? != 0 {
        return Err(bad("trailing bytes"));
    }
    let params = GraphParams { max_degree, ..params };
    GraphIndex::from_parts(ds, IndexDescriptor::new(vid), params, layers, entry_point)
}
