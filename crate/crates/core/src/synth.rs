//! Synthetic clustered datasets and binomial workloads.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{normalize, ColumnSet, ColumnSpec, Dataset, Query};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSpec {
    pub rows: usize,
    pub dims: Vec<usize>,
    /// Cluster centers per column.
    pub clusters: usize,
    /// Standard deviation of the per-component noise around a center.
    pub spread: f32,
    pub seed: u64,
}

impl DataSpec {
    pub fn new(rows: usize, dims: Vec<usize>, seed: u64) -> Self {
        DataSpec {
            rows,
            dims,
            clusters: 16,
            spread: 0.8,
            seed,
        }
    }
}

/// Each column draws `clusters` Gaussian centers; every row picks a center
/// independently per column and adds Gaussian noise. Rows are unit-normalized
/// on ingestion.
pub fn clustered_dataset(spec: &DataSpec) -> Result<Dataset> {
    if spec.dims.is_empty() || spec.clusters == 0 {
        return Err(Error::InvalidInput("need at least one column and one cluster".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let unit = Normal::new(0.0f32, 1.0).expect("valid normal");
    let mut columns = Vec::with_capacity(spec.dims.len());
    let mut data = Vec::with_capacity(spec.dims.len());
    for (i, &dim) in spec.dims.iter().enumerate() {
        let centers: Vec<Vec<f32>> = (0..spec.clusters)
            .map(|_| (0..dim).map(|_| unit.sample(&mut rng)).collect())
            .collect();
        let mut m = Vec::with_capacity(spec.rows * dim);
        for _ in 0..spec.rows {
            let c = &centers[rng.random_range(0..spec.clusters)];
            m.extend(c.iter().map(|v| v + spec.spread * unit.sample(&mut rng)));
        }
        columns.push(ColumnSpec {
            id: i as u32 + 1,
            dim,
            name: format!("c{}", i + 1),
        });
        data.push(m);
    }
    Dataset::new(columns, data)
}

/// `n` column sets where each of `num_columns` columns joins with
/// probability `p`; empty draws are rejected and redrawn.
pub fn binomial_vids(num_columns: u32, p: f64, n: usize, rng: &mut impl Rng) -> Result<Vec<ColumnSet>> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidInput(format!("column probability {p} outside (0, 1]")));
    }
    (0..n)
        .map(|_| loop {
            let ids: Vec<u32> = (1..=num_columns).filter(|_| rng.random_bool(p)).collect();
            if !ids.is_empty() {
                break ColumnSet::from_ids(ids);
            }
        })
        .collect()
}

/// Uniform draws normalized to sum to 1.
pub fn query_probabilities(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// A query built from a random dataset row perturbed by N(0, noise²) per
/// component and renormalized; fully determined by `seed`.
pub fn query_from_seed(ds: &Dataset, vid: ColumnSet, k: usize, probability: f64, seed: u64, noise: f64) -> Result<Query> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if ds.num_rows() == 0 {
        return Err(Error::InvalidInput("dataset is empty".into()));
    }
    let row = rng.random_range(0..ds.num_rows());
    let normal = Normal::new(0.0f32, noise as f32).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut vectors = BTreeMap::new();
    for id in vid.ids() {
        if ds.schema().column(id).is_none() {
            return Err(Error::InvalidQuery(format!("unknown column id {id}")));
        }
        let mut v: Vec<f32> = ds.vector(id, row).iter().map(|x| x + normal.sample(&mut rng)).collect();
        normalize(&mut v);
        vectors.insert(id, v);
    }
    Query::new(vectors, k, probability)
}
