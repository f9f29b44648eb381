//! Exact brute-force computations: ground truth, per-index ranks of
//! ground-truth items, and the recall of a set of retrieved id lists.
//!
//! Ties are broken everywhere by (score descending, row id ascending).

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{score_all, Dataset, IndexDescriptor, Query};

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Best first; `min(k, num_rows)` entries.
    pub ids: Vec<u32>,
    pub scores: Vec<f32>,
}

impl GroundTruth {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

fn by_score_then_id(a: &(f32, u32), b: &(f32, u32)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// Exact top-k by full score over every row.
pub fn ground_truth(q: &Query, ds: &Dataset) -> Result<GroundTruth> {
    ds.check_query(q)?;
    let scores = score_all(q, q.vid(), ds);
    Ok(top_k(&scores, q.k))
}

pub(crate) fn top_k(scores: &[f32], k: usize) -> GroundTruth {
    let mut pairs: Vec<(f32, u32)> = scores.iter().enumerate().map(|(i, &s)| (s, i as u32)).collect();
    let k = k.min(pairs.len());
    if k < pairs.len() {
        pairs.select_nth_unstable_by(k, by_score_then_id);
        pairs.truncate(k);
    }
    pairs.sort_by(by_score_then_id);
    GroundTruth {
        ids: pairs.iter().map(|p| p.1).collect(),
        scores: pairs.iter().map(|p| p.0).collect(),
    }
}

/// For each candidate index, the 1-based rank of every ground-truth item
/// under the index's partial score (same tie-breaking as the ground truth).
#[derive(Debug, Clone, PartialEq)]
pub struct RankTable {
    pub ranks: BTreeMap<IndexDescriptor, Vec<usize>>,
}

pub fn rank_table(
    q: &Query,
    gt: &GroundTruth,
    candidates: &[IndexDescriptor],
    ds: &Dataset,
) -> Result<RankTable> {
    ds.check_query(q)?;
    let mut ranks = BTreeMap::new();
    for x in candidates {
        ranks.insert(*x, item_ranks(q, x, &gt.ids, ds)?);
    }
    Ok(RankTable { ranks })
}

/// Exact ranks of `items` under `x`'s partial score over all rows.
pub fn item_ranks(q: &Query, x: &IndexDescriptor, items: &[u32], ds: &Dataset) -> Result<Vec<usize>> {
    if !x.usable_for(q) {
        return Err(Error::UnusableIndex {
            index: x.vid.to_string(),
            query: q.vid().to_string(),
        });
    }
    let scores = score_all(q, x.vid, ds);
    let mut sorted = scores.clone();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    items
        .iter()
        .map(|&item| {
            let s = *scores
                .get(item as usize)
                .ok_or_else(|| Error::InvalidInput(format!("row {item} out of range")))?;
            let greater = sorted.partition_point(|v| v.total_cmp(&s) == Ordering::Greater);
            let equal = sorted.partition_point(|v| v.total_cmp(&s) != Ordering::Less) - greater;
            let ties_before = if equal > 1 {
                scores[..item as usize].iter().filter(|v| v.total_cmp(&s) == Ordering::Equal).count()
            } else {
                0
            };
            Ok(1 + greater + ties_before)
        })
        .collect()
}

/// Rank estimates from a uniform row sample: an item's rank is one plus the
/// number of sampled rows that beat it, scaled by `scale`.
pub fn sampled_item_ranks(
    q: &Query,
    x: &IndexDescriptor,
    items: &[u32],
    ds: &Dataset,
    sample_rows: &[usize],
    scale: f64,
) -> Result<Vec<usize>> {
    if !x.usable_for(q) {
        return Err(Error::UnusableIndex {
            index: x.vid.to_string(),
            query: q.vid().to_string(),
        });
    }
    let mut row_buf = Vec::new();
    let qv = q.concat(x.vid)?;
    let score_row = |row: usize, buf: &mut Vec<f32>| {
        buf.clear();
        ds.concat_row(x.vid, row, buf);
        crate::model::dot(&qv, buf)
    };
    let sample_scores: Vec<(f32, u32)> = sample_rows
        .iter()
        .map(|&r| (score_row(r, &mut row_buf), r as u32))
        .collect();
    items
        .iter()
        .map(|&item| {
            let s = score_row(item as usize, &mut row_buf);
            let beaten = sample_scores
                .iter()
                .filter(|&&(v, r)| r != item && by_score_then_id(&(v, r), &(s, item)) == Ordering::Less)
                .count();
            Ok(1 + (beaten as f64 * scale).round() as usize)
        })
        .collect()
}

/// |gt ∩ ⋃ retrieved| / |gt|; 0 for an empty ground truth.
pub fn exact_recall(gt: &[u32], retrieved: &[Vec<u32>]) -> f64 {
    if gt.is_empty() {
        return 0.0;
    }
    let union: HashSet<u32> = retrieved.iter().flatten().copied().collect();
    let hit = gt.iter().filter(|id| union.contains(id)).count();
    hit as f64 / gt.len() as f64
}

/// On-disk cache of ground truths: one file per (query, dataset) content hash
/// holding `n` u32 ids followed by `n` f32 scores, little-endian.
#[derive(Debug, Clone)]
pub struct GroundTruthCache {
    dir: PathBuf,
}

impl GroundTruthCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(GroundTruthCache { dir })
    }

    pub fn key(q: &Query, dataset_fingerprint: &str) -> String {
        let mut h = Sha256::new();
        h.update(dataset_fingerprint.as_bytes());
        h.update(q.fingerprint().as_bytes());
        hex::encode(h.finalize())
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.gt"))
    }

    pub fn load(&self, key: &str, expected_len: usize) -> Result<Option<GroundTruth>> {
        let path = self.path(key);
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Error::io(&path, e)),
        };
        decode_gt(&bytes, expected_len, &path).map(Some)
    }

    pub fn store(&self, key: &str, gt: &GroundTruth) -> Result<()> {
        let mut out = Vec::with_capacity(gt.len() * 8);
        for id in &gt.ids {
            out.extend_from_slice(&id.to_le_bytes());
        }
        for s in &gt.scores {
            out.extend_from_slice(&s.to_le_bytes());
        }
        crate::cli::files::write_atomic(&self.path(key), &out)
    }

    /// Loads from the cache or computes and stores.
    pub fn ground_truth(&self, q: &Query, ds: &Dataset, dataset_fingerprint: &str) -> Result<GroundTruth> {
        let key = Self::key(q, dataset_fingerprint);
        let n = q.k.min(ds.num_rows());
        if let Some(gt) = self.load(&key, n)? {
            return Ok(gt);
        }
        let gt = ground_truth(q, ds)?;
        self.store(&key, &gt)?;
        Ok(gt)
    }
}

fn decode_gt(bytes: &[u8], n: usize, path: &Path) -> Result<GroundTruth> {
    if bytes.len() != n * 8 {
        return Err(Error::format(
            path,
            format!("expected {} bytes, found {}", n * 8, bytes.len()),
        ));
    }
    let (ids, scores) = bytes.split_at(n * 4);
    Ok(GroundTruth {
        ids: ids
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        scores: scores
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    })
}
