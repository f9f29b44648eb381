//! Domain types shared by every other module: column sets, datasets, queries,
//! workloads, index descriptors, configurations and query plans, plus the
//! exact score arithmetic.
//!
//! Stored vectors are L2-normalized at ingestion, so a dot product is a cosine
//! similarity and a dot product over a concatenation of columns is exactly the
//! sum of the per-column cosines.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Largest column id a [`ColumnSet`] can hold.
pub const MAX_COLUMN_ID: u32 = 63;

/// A set of column ids (1..=63) stored as a bitmask.
///
/// Ordering is lexicographic over the ascending id lists, so `{1} < {1,2} < {2}`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct ColumnSet(u64);

impl ColumnSet {
    pub const EMPTY: ColumnSet = ColumnSet(0);

    pub fn from_ids<I: IntoIterator<Item = u32>>(ids: I) -> Result<Self> {
        let mut bits = 0u64;
        for id in ids {
            if id == 0 || id > MAX_COLUMN_ID {
                return Err(Error::InvalidInput(format!(
                    "column id {id} outside 1..={MAX_COLUMN_ID}"
                )));
            }
            bits |= 1 << id;
        }
        Ok(ColumnSet(bits))
    }

    pub fn single(id: u32) -> Self {
        assert!((1..=MAX_COLUMN_ID).contains(&id), "column id {id} out of range");
        ColumnSet(1 << id)
    }

    pub fn bits(self) -> u64 {
        self.0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn contains(self, id: u32) -> bool {
        id <= MAX_COLUMN_ID && self.0 & (1 << id) != 0
    }

    pub fn is_subset(self, other: ColumnSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn union(self, other: ColumnSet) -> ColumnSet {
        ColumnSet(self.0 | other.0)
    }

    pub fn intersection(self, other: ColumnSet) -> ColumnSet {
        ColumnSet(self.0 & other.0)
    }

    pub fn difference(self, other: ColumnSet) -> ColumnSet {
        ColumnSet(self.0 & !other.0)
    }

    /// Ascending column ids.
    pub fn ids(self) -> impl Iterator<Item = u32> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                return None;
            }
            let id = bits.trailing_zeros();
            bits &= bits - 1;
            Some(id)
        })
    }

    /// All non-empty subsets, in no particular order.
    pub fn subsets(self) -> impl Iterator<Item = ColumnSet> {
        let full = self.0;
        let mut sub = full;
        let mut done = full == 0;
        std::iter::from_fn(move || {
            if done {
                return None;
            }
            let out = sub;
            sub = (sub.wrapping_sub(1)) & full;
            if sub == 0 {
                done = true;
            }
            Some(ColumnSet(out))
        })
    }
}

impl Ord for ColumnSet {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.ids().cmp(other.ids())
    }
}

impl PartialOrd for ColumnSet {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for ColumnSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for ColumnSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, id) in self.ids().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{id}")?;
        }
        f.write_str("}")
    }
}

impl Serialize for ColumnSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_seq(self.ids())
    }
}

impl<'de> Deserialize<'de> for ColumnSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let ids = Vec::<u32>::deserialize(deserializer)?;
        ColumnSet::from_ids(ids).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSpec {
    pub id: u32,
    pub dim: usize,
    pub name: String,
}

/// Column specs validated to be non-empty, contiguous from 1, with positive dims.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    columns: Vec<ColumnSpec>,
}

impl Schema {
    pub fn new(columns: Vec<ColumnSpec>) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::InvalidInput("dataset has no columns".into()));
        }
        for (pos, col) in columns.iter().enumerate() {
            if col.id as usize != pos + 1 {
                return Err(Error::InvalidInput(format!(
                    "column ids must be contiguous from 1; found id {} at position {}",
                    col.id,
                    pos + 1
                )));
            }
            if col.id > MAX_COLUMN_ID {
                return Err(Error::InvalidInput(format!(
                    "at most {MAX_COLUMN_ID} columns are supported"
                )));
            }
            if col.dim == 0 {
                return Err(Error::InvalidInput(format!("column {} has dim 0", col.id)));
            }
        }
        Ok(Schema { columns })
    }

    pub fn columns(&self) -> &[ColumnSpec] {
        &self.columns
    }

    pub fn column(&self, id: u32) -> Option<&ColumnSpec> {
        if id == 0 {
            return None;
        }
        self.columns.get(id as usize - 1)
    }

    pub fn all(&self) -> ColumnSet {
        ColumnSet::from_ids(self.columns.iter().map(|c| c.id)).expect("validated ids")
    }

    /// Σ dim over the set; errors on unknown columns.
    pub fn dim_of(&self, set: ColumnSet) -> Result<usize> {
        set.ids()
            .map(|id| {
                self.column(id)
                    .map(|c| c.dim)
                    .ok_or_else(|| Error::InvalidQuery(format!("unknown column id {id}")))
            })
            .sum()
    }
}

/// Per-column row-major f32 matrices sharing one row count.
#[derive(Debug, Clone)]
pub struct Dataset {
    schema: Schema,
    data: Vec<Vec<f32>>,
    num_rows: usize,
}

impl Dataset {
    /// Builds a dataset and L2-normalizes every stored vector. Zero vectors are
    /// replaced by the first basis vector.
    pub fn new(columns: Vec<ColumnSpec>, mut data: Vec<Vec<f32>>) -> Result<Self> {
        let schema = Schema::new(columns)?;
        if data.len() != schema.columns.len() {
            return Err(Error::InvalidInput(format!(
                "{} columns declared but {} matrices supplied",
                schema.columns.len(),
                data.len()
            )));
        }
        let first = &schema.columns[0];
        if !data[0].len().is_multiple_of(first.dim) {
            return Err(Error::InvalidInput(format!(
                "column {} data length is not a multiple of dim {}",
                first.id, first.dim
            )));
        }
        let num_rows = data[0].len() / first.dim;
        if num_rows == 0 {
            return Err(Error::InvalidInput("dataset has no rows".into()));
        }
        for (col, matrix) in schema.columns.iter().zip(data.iter_mut()) {
            if matrix.len() != num_rows * col.dim {
                return Err(Error::InvalidInput(format!(
                    "column {} has {} values, expected {} rows x {} dims",
                    col.id,
                    matrix.len(),
                    num_rows,
                    col.dim
                )));
            }
            let zeros = normalize_rows(matrix, col.dim);
            if zeros > 0 {
                log::warn!(
                    "column {} ({}): replaced {zeros} zero vectors with e_1",
                    col.id,
                    col.name
                );
            }
        }
        Ok(Dataset {
            schema,
            data,
            num_rows,
        })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn columns(&self) -> &[ColumnSpec] {
        self.schema.columns()
    }

    pub fn num_rows(&self) -> usize {
        self.num_rows
    }

    /// Flat row-major matrix of one column.
    pub fn column_data(&self, id: u32) -> Option<&[f32]> {
        if id == 0 {
            return None;
        }
        self.data.get(id as usize - 1).map(Vec::as_slice)
    }

    /// The stored (normalized) vector of `row` in column `id`. Panics on bad input.
    pub fn vector(&self, id: u32, row: usize) -> &[f32] {
        let dim = self.schema.columns[id as usize - 1].dim;
        &self.data[id as usize - 1][row * dim..(row + 1) * dim]
    }

    /// Concatenation of the stored vectors of `row` over `set`, ascending column order.
    pub fn concat_row(&self, set: ColumnSet, row: usize, out: &mut Vec<f32>) {
        for id in set.ids() {
            out.extend_from_slice(self.vector(id, row));
        }
    }

    /// Restricts every column to `rows`, in the given order.
    pub fn subset_rows(&self, rows: &[usize]) -> Result<Dataset> {
        let mut data = Vec::with_capacity(self.data.len());
        for col in self.columns() {
            let mut m = Vec::with_capacity(rows.len() * col.dim);
            for &r in rows {
                if r >= self.num_rows {
                    return Err(Error::InvalidInput(format!("row {r} out of range")));
                }
                m.extend_from_slice(self.vector(col.id, r));
            }
            data.push(m);
        }
        Dataset::new(self.columns().to_vec(), data)
    }

    /// Content hash over the schema and every stored value.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.num_rows as u64).to_le_bytes());
        for (col, m) in self.schema.columns.iter().zip(&self.data) {
            h.update(col.id.to_le_bytes());
            h.update((col.dim as u64).to_le_bytes());
            for v in m {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Checks that the query only touches known columns with matching dims.
    pub fn check_query(&self, q: &Query) -> Result<()> {
        for (&id, v) in &q.vectors {
            let col = self
                .schema
                .column(id)
                .ok_or_else(|| Error::InvalidQuery(format!("unknown column id {id}")))?;
            if v.len() != col.dim {
                return Err(Error::InvalidQuery(format!(
                    "query vector for column {id} has {} dims, column has {}",
                    v.len(),
                    col.dim
                )));
            }
        }
        Ok(())
    }
}

fn normalize_rows(matrix: &mut [f32], dim: usize) -> usize {
    let mut zeros = 0;
    for row in matrix.chunks_exact_mut(dim) {
        if !normalize(row) {
            zeros += 1;
        }
    }
    zeros
}

/// L2-normalizes in place; a zero (or non-finite) vector becomes e_1 and `false` is returned.
pub fn normalize(v: &mut [f32]) -> bool {
    let norm = v.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        v.iter_mut().for_each(|x| *x = 0.0);
        if let Some(first) = v.first_mut() {
            *first = 1.0;
        }
        return false;
    }
    // Already-unit rows are left untouched so that a save/load cycle is lossless.
    if (norm - 1.0).abs() > 1e-6 {
        let inv = (1.0 / norm) as f32;
        v.iter_mut().for_each(|x| *x *= inv);
    }
    true
}

#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0f32; 8];
    let chunks_a = a.chunks_exact(8);
    let chunks_b = b.chunks_exact(8);
    let tail_a = chunks_a.remainder();
    let tail_b = chunks_b.remainder();
    for (ca, cb) in chunks_a.zip(chunks_b) {
        for i in 0..8 {
            acc[i] += ca[i] * cb[i];
        }
    }
    let mut sum = (acc[0] + acc[4]) + (acc[1] + acc[5]) + (acc[2] + acc[6]) + (acc[3] + acc[7]);
    for (x, y) in tail_a.iter().zip(tail_b) {
        sum += x * y;
    }
    sum
}

/// A top-k multi-vector query.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    vid: ColumnSet,
    vectors: BTreeMap<u32, Vec<f32>>,
    pub k: usize,
    pub probability: f64,
}

impl Query {
    pub fn new(vectors: BTreeMap<u32, Vec<f32>>, k: usize, probability: f64) -> Result<Self> {
        if vectors.is_empty() {
            return Err(Error::InvalidQuery("query has no columns".into()));
        }
        if k == 0 {
            return Err(Error::InvalidQuery("k must be positive".into()));
        }
        if !(probability > 0.0 && probability.is_finite()) {
            return Err(Error::InvalidQuery(format!(
                "probability {probability} must be positive"
            )));
        }
        if vectors.values().any(Vec::is_empty) {
            return Err(Error::InvalidQuery("empty query vector".into()));
        }
        let vid = ColumnSet::from_ids(vectors.keys().copied())?;
        Ok(Query {
            vid,
            vectors,
            k,
            probability,
        })
    }

    pub fn vid(&self) -> ColumnSet {
        self.vid
    }

    /// Σ of the query's vector dims.
    pub fn dim(&self) -> usize {
        self.vectors.values().map(Vec::len).sum()
    }

    pub fn vector(&self, id: u32) -> Option<&[f32]> {
        self.vectors.get(&id).map(Vec::as_slice)
    }

    pub fn vectors(&self) -> &BTreeMap<u32, Vec<f32>> {
        &self.vectors
    }

    /// Concatenated query vectors over `set` (ascending ids). `set` must be ⊆ vid.
    pub fn concat(&self, set: ColumnSet) -> Result<Vec<f32>> {
        if !set.is_subset(self.vid) {
            return Err(Error::UnusableIndex {
                index: set.to_string(),
                query: self.vid.to_string(),
            });
        }
        let mut out = Vec::new();
        for id in set.ids() {
            out.extend_from_slice(&self.vectors[&id]);
        }
        Ok(out)
    }

    /// Stable content hash of (vid, k, vectors).
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.vid.bits().to_le_bytes());
        h.update((self.k as u64).to_le_bytes());
        for (id, v) in &self.vectors {
            h.update(id.to_le_bytes());
            for x in v {
                h.update(x.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// A weighted set of queries plus the recall and storage thresholds.
#[derive(Debug, Clone)]
pub struct Workload {
    pub queries: Vec<Query>,
    pub recall_threshold: f64,
    pub storage_budget: f64,
}

impl Workload {
    /// Validates thresholds and probabilities. Probability sums within [0.9, 1.1]
    /// are renormalized with a warning; anything further from 1 is rejected.
    pub fn new(mut queries: Vec<Query>, recall_threshold: f64, storage_budget: f64) -> Result<Self> {
        if queries.is_empty() {
            return Err(Error::InvalidInput("workload has no queries".into()));
        }
        if !(recall_threshold > 0.0 && recall_threshold <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "recall threshold {recall_threshold} outside (0, 1]"
            )));
        }
        if !(storage_budget > 0.0 && storage_budget.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "storage budget {storage_budget} must be positive"
            )));
        }
        let total: f64 = queries.iter().map(|q| q.probability).sum();
        if (total - 1.0).abs() > 1e-6 {
            if (0.9..=1.1).contains(&total) {
                log::warn!("query probabilities sum to {total}; renormalizing");
                queries.iter_mut().for_each(|q| q.probability /= total);
            } else {
                return Err(Error::InvalidInput(format!(
                    "query probabilities sum to {total}, expected 1"
                )));
            }
        }
        Ok(Workload {
            queries,
            recall_threshold,
            storage_budget,
        })
    }

    pub fn check_against(&self, ds: &Dataset) -> Result<()> {
        self.queries.iter().try_for_each(|q| ds.check_query(q))
    }
}

/// A (hypothetical or built) graph index over the concatenation of `vid`'s columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct IndexDescriptor {
    pub vid: ColumnSet,
}

impl IndexDescriptor {
    pub fn new(vid: ColumnSet) -> Self {
        IndexDescriptor { vid }
    }

    pub fn dim(&self, schema: &Schema) -> Result<usize> {
        schema.dim_of(self.vid)
    }

    /// Usable for a query when its columns are a subset of the query's.
    pub fn usable_for(&self, q: &Query) -> bool {
        !self.vid.is_empty() && self.vid.is_subset(q.vid())
    }
}

impl fmt::Display for IndexDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x{}", self.vid)
    }
}

/// A set of index descriptors, distinct by column set.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Configuration {
    indexes: BTreeSet<IndexDescriptor>,
}

impl Configuration {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.indexes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indexes.is_empty()
    }

    pub fn insert(&mut self, x: IndexDescriptor) -> bool {
        self.indexes.insert(x)
    }

    pub fn remove(&mut self, x: &IndexDescriptor) -> bool {
        self.indexes.remove(x)
    }

    pub fn contains(&self, x: &IndexDescriptor) -> bool {
        self.indexes.contains(x)
    }

    pub fn iter(&self) -> impl Iterator<Item = &IndexDescriptor> {
        self.indexes.iter()
    }

    pub fn with(&self, x: IndexDescriptor) -> Configuration {
        let mut c = self.clone();
        c.insert(x);
        c
    }
}

impl FromIterator<IndexDescriptor> for Configuration {
    fn from_iter<T: IntoIterator<Item = IndexDescriptor>>(iter: T) -> Self {
        Configuration {
            indexes: iter.into_iter().collect(),
        }
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, x) in self.indexes.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{x}")?;
        }
        f.write_str("]")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlanAlgorithm {
    /// Relevant-ek grid search.
    Search,
    /// Dynamic programming over sampled ground-truth covers.
    Dp,
    /// Exhaustive scan of every row; used when no index is usable.
    Scan,
}

/// Index → ek assignments with the estimated cost and recall.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryPlan {
    pub assignments: BTreeMap<IndexDescriptor, usize>,
    pub estimated_cost: f64,
    pub estimated_recall: f64,
    pub algorithm: PlanAlgorithm,
}

impl QueryPlan {
    pub fn total_ek(&self) -> usize {
        self.assignments.values().sum()
    }

    pub fn indexes(&self) -> impl Iterator<Item = &IndexDescriptor> {
        self.assignments.keys()
    }
}

fn score_columns(q: &Query, set: ColumnSet, row: usize, ds: &Dataset) -> Result<f32> {
    if row >= ds.num_rows() {
        return Err(Error::InvalidInput(format!(
            "row {row} out of range ({} rows)",
            ds.num_rows()
        )));
    }
    let mut sum = 0f32;
    for id in set.ids() {
        let qv = q
            .vector(id)
            .ok_or_else(|| Error::InvalidQuery(format!("query has no vector for column {id}")))?;
        let col = ds
            .schema()
            .column(id)
            .ok_or_else(|| Error::InvalidQuery(format!("unknown column id {id}")))?;
        if qv.len() != col.dim {
            return Err(Error::DimensionMismatch {
                expected: col.dim,
                actual: qv.len(),
            });
        }
        sum += dot(qv, ds.vector(id, row));
    }
    Ok(sum)
}

/// Σ over the query's columns of dot(query vector, stored row vector).
pub fn full_score(q: &Query, row: usize, ds: &Dataset) -> Result<f32> {
    score_columns(q, q.vid(), row, ds)
}

/// The score restricted to the columns of index `x`; `x` must be usable for `q`.
pub fn partial_score(q: &Query, x: &IndexDescriptor, row: usize, ds: &Dataset) -> Result<f32> {
    if !x.usable_for(q) {
        return Err(Error::UnusableIndex {
            index: x.vid.to_string(),
            query: q.vid().to_string(),
        });
    }
    score_columns(q, x.vid, row, ds)
}

/// Scores every row over `set` (ascending column order per row, same arithmetic
/// as [`full_score`]). Caller guarantees validity.
pub(crate) fn score_all(q: &Query, set: ColumnSet, ds: &Dataset) -> Vec<f32> {
    let mut scores = vec![0f32; ds.num_rows()];
    for id in set.ids() {
        let qv = q.vector(id).expect("validated query");
        let dim = qv.len();
        let m = ds.column_data(id).expect("validated column");
        for (s, row) in scores.iter_mut().zip(m.chunks_exact(dim)) {
            *s += dot(qv, row);
        }
    }
    scores
}

/// Plan cost: Σ cost_idx(x, ek) + q.dim · Σ ek over the assignments.
pub fn plan_cost<'a, I, F>(query_dim: usize, assignments: I, mut cost_idx: F) -> f64
where
    I: IntoIterator<Item = (&'a IndexDescriptor, &'a usize)>,
    F: FnMut(&IndexDescriptor, usize) -> f64,
{
    let mut scan = 0.0;
    let mut total_ek = 0usize;
    for (x, &ek) in assignments {
        if ek == 0 {
            continue;
        }
        scan += cost_idx(x, ek);
        total_ek += ek;
    }
    scan + query_dim as f64 * total_ek as f64
}
