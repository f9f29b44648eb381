//! On-disk formats: fbin vector files, dataset manifests and workload files.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::StorageUnit;
use crate::model::{ColumnSet, ColumnSpec, Dataset, Query, Workload};
use crate::synth::query_from_seed;

/// Writes `bytes` to a temporary file beside `path`, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Pretty JSON with a trailing newline, written atomically.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

/// Row-major f32 matrix: `u32 rows | u32 dim | rows·dim f32`, little-endian.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorFile {
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl VectorFile {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.data.len());
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::format(path, "shorter than the 8-byte header"));
        }
        let rows = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let expected = 8 + 4 * rows as u64 * dim as u64;
        if bytes.len() as u64 != expected {
            return Err(Error::format(
                path,
                format!("{rows}x{dim} needs {expected} bytes, found {}", bytes.len()),
            ));
        }
        let data = bytes[8..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(VectorFile { rows, dim, data })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestColumn {
    pub id: u32,
    pub dim: usize,
    pub name: String,
    /// Relative to the dataset directory.
    pub file: String,
}

/// `dataset.json` in a dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub rows: usize,
    pub columns: Vec<ManifestColumn>,
}

pub const MANIFEST: &str = "dataset.json";

pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut columns = Vec::new();
    for c in ds.columns() {
        let file = format!("col_{}.fbin", c.id);
        VectorFile {
            rows: ds.num_rows(),
            dim: c.dim,
            data: ds.column_data(c.id).expect("column exists").to_vec(),
        }
        .write(&dir.join(&file))?;
        columns.push(ManifestColumn {
            id: c.id,
            dim: c.dim,
            name: c.name.clone(),
            file,
        });
    }
    write_json(
        &dir.join(MANIFEST),
        &DatasetManifest {
            rows: ds.num_rows(),
            columns,
        },
    )
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join(MANIFEST);
    let manifest: DatasetManifest = read_json(&manifest_path)?;
    let mut specs = Vec::new();
    let mut data = Vec::new();
    for c in &manifest.columns {
        let path = dir.join(&c.file);
        let vf = VectorFile::read(&path)?;
        if vf.rows != manifest.rows || vf.dim != c.dim {
            return Err(Error::format(
                &path,
                format!(
                    "shape {}x{} does not match manifest {}x{}",
                    vf.rows, vf.dim, manifest.rows, c.dim
                ),
            ));
        }
        specs.push(ColumnSpec {
            id: c.id,
            dim: c.dim,
            name: c.name.clone(),
        });
        data.push(vf.data);
    }
    Dataset::new(specs, data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadColumn {
    pub id: u32,
    pub dim: usize,
    pub name: String,
}

/// One query entry: vectors come either from a one-row fbin file holding the
/// concatenation over `vid` (ascending ids), or from a seed that regenerates a
/// perturbed dataset row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadQuery {
    pub vid: ColumnSet,
    pub k: usize,
    pub probability: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vectors_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

pub const QUERY_NOISE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadFile {
    pub columns: Vec<WorkloadColumn>,
    pub queries: Vec<WorkloadQuery>,
    pub recall_threshold: f64,
    pub storage_budget: f64,
    pub storage_unit: StorageUnit,
}

impl WorkloadFile {
    pub fn read(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    /// Materializes the queries against `ds`; `base` resolves `vectors_ref` paths.
    pub fn resolve(&self, ds: &Dataset, base: &Path) -> Result<Workload> {
        for c in &self.columns {
            match ds.schema().column(c.id) {
                Some(s) if s.dim == c.dim => {}
                _ => {
                    return Err(Error::InvalidInput(format!(
                        "workload column {} ({}-dim) does not match the dataset",
                        c.id, c.dim
                    )))
                }
            }
        }
        let queries = self
            .queries
            .iter()
            .enumerate()
            .map(|(i, wq)| self.resolve_query(i, wq, ds, base))
            .collect::<Result<Vec<_>>>()?;
        let w = Workload::new(queries, self.recall_threshold, self.storage_budget)?;
        w.check_against(ds)?;
        Ok(w)
    }

    fn resolve_query(&self, i: usize, wq: &WorkloadQuery, ds: &Dataset, base: &Path) -> Result<Query> {
        match (&wq.vectors_ref, wq.seed) {
            (Some(r), None) => {
                let path: PathBuf = base.join(r);
                let vf = VectorFile::read(&path)?;
                let dim = ds.schema().dim_of(wq.vid)?;
                if vf.rows != 1 || vf.dim != dim {
                    return Err(Error::format(&path, format!("expected 1x{dim}, found {}x{}", vf.rows, vf.dim)));
                }
                let mut vectors = std::collections::BTreeMap::new();
                let mut at = 0;
                for id in wq.vid.ids() {
                    let d = ds.schema().column(id).expect("checked by dim_of").dim;
                    vectors.insert(id, vf.data[at..at + d].to_vec());
                    at += d;
                }
                Query::new(vectors, wq.k, wq.probability)
            }
            (None, Some(seed)) => query_from_seed(ds, wq.vid, wq.k, wq.probability, seed, QUERY_NOISE),
            _ => Err(Error::InvalidInput(format!(
                "query {i} needs exactly one of vectors_ref and seed"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{clustered_dataset, DataSpec};

    #[test]
    fn vector_file_roundtrip_and_size_check() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.fbin");
        let vf = VectorFile {
            rows: 3,
            dim: 2,
            data: vec![0.5, -1.0, 2.0, 0.0, 1e-7, 3.25],
        };
        vf.write(&p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(bytes.len(), 8 + 4 * 6);
        let back = VectorFile::read(&p).unwrap();
        assert_eq!(back, vf);
        let p2 = dir.path().join("b.fbin");
        back.write(&p2).unwrap();
        assert_eq!(std::fs::read(&p2).unwrap(), bytes);
        std::fs::write(&p, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(VectorFile::read(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn dataset_dir_roundtrip() {
        let ds = clustered_dataset(&DataSpec::new(120, vec![3, 5], 1)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.fingerprint(), ds.fingerprint());
    }

    fn sample_file() -> WorkloadFile {
        WorkloadFile {
            columns: vec![
                WorkloadColumn {
                    id: 1,
                    dim: 3,
                    name: "c1".into(),
                },
                WorkloadColumn {
                    id: 2,
                    dim: 5,
                    name: "c2".into(),
                },
            ],
            queries: vec![
                WorkloadQuery {
                    vid: ColumnSet::from_ids([1, 2]).unwrap(),
                    k: 10,
                    probability: 0.3,
                    vectors_ref: None,
                    seed: Some(17),
                },
                WorkloadQuery {
                    vid: ColumnSet::from_ids([2]).unwrap(),
                    k: 10,
                    probability: 0.7,
                    vectors_ref: Some("q1.fbin".into()),
                    seed: None,
                },
            ],
            recall_threshold: 0.9,
            storage_budget: 2.0,
            storage_unit: StorageUnit::IndexCount,
        }
    }

    #[test]
    fn workload_file_roundtrip_and_resolution() {
        let ds = clustered_dataset(&DataSpec::new(120, vec![3, 5], 2)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        VectorFile {
            rows: 1,
            dim: 5,
            data: ds.vector(2, 7).to_vec(),
        }
        .write(&dir.path().join("q1.fbin"))
        .unwrap();
        let wf = sample_file();
        let p = dir.path().join("w.json");
        wf.write(&p).unwrap();
        let first = std::fs::read(&p).unwrap();
        let back = WorkloadFile::read(&p).unwrap();
        assert_eq!(back, wf);
        back.write(&p).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), first);
        let w = back.resolve(&ds, dir.path()).unwrap();
        assert_eq!(w.queries.len(), 2);
        assert_eq!(w.queries[1].vector(2).unwrap(), ds.vector(2, 7));
    }

    #[test]
    fn workload_file_rejects_unknown_fields_and_bad_refs() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.json");
        let mut v = serde_json::to_value(sample_file()).unwrap();
        v["extra"] = serde_json::json!(1);
        std::fs::write(&p, v.to_string()).unwrap();
        assert!(matches!(WorkloadFile::read(&p), Err(Error::Format { .. })));
        let ds = clustered_dataset(&DataSpec::new(120, vec![3, 5], 3)).unwrap();
        let mut wf = sample_file();
        wf.queries[0].vectors_ref = Some("x".into());
        assert!(matches!(wf.resolve(&ds, dir.path()), Err(Error::InvalidInput(_))));
    }
}
