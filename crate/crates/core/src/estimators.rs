//! Sample-based what-if models.
//!
//! Per column: a linear index-scan model `numDist ≈ a·ek + b` and a
//! logarithmic recall model `recall ≈ c·ln(ek) + d`, both fitted on a graph
//! index built over a uniform row sample. Multi-column indexes average the
//! coefficients of their columns.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ann::{GraphIndex, GraphParams, SearchOptions};
use crate::error::{Error, Result};
use crate::model::{dot, normalize, ColumnSet, Configuration, Dataset, IndexDescriptor, Schema};

pub const DEFAULT_EK_GRID: [usize; 6] = [100, 200, 400, 800, 1600, 3200];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleParams {
    /// Fraction of rows to sample.
    pub fraction: f64,
    /// Lower bound on the sample size (capped at the row count).
    pub min_rows: usize,
    pub train_queries: usize,
    pub noise_std: f64,
    pub ek_grid: Vec<usize>,
    /// Grid points above `max_ek_fraction · sample size` are dropped.
    pub max_ek_fraction: f64,
    /// Recall is measured as recall@`recall_k` of the ek retrieved rows.
    pub recall_k: usize,
    pub seed: u64,
}

impl Default for SampleParams {
    fn default() -> Self {
        SampleParams {
            fraction: 0.01,
            min_rows: 1000,
            train_queries: 50,
            noise_std: 0.1,
            ek_grid: DEFAULT_EK_GRID.to_vec(),
            max_ek_fraction: 0.5,
            recall_k: 100,
            seed: 0,
        }
    }
}

/// Rows and perturbed training queries drawn from a dataset.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    /// Distinct, ascending.
    pub sample_rows: Vec<usize>,
    /// Per training query, one unit vector per column.
    pub train_queries: Vec<BTreeMap<u32, Vec<f32>>>,
    pub scale_factor: f64,
}

impl TrainingSample {
    pub fn draw(ds: &Dataset, params: &SampleParams) -> Result<Self> {
        let n = ds.num_rows();
        if n == 0 {
            return Err(Error::Training("dataset is empty".into()));
        }
        if !(params.fraction > 0.0 && params.fraction <= 1.0) {
            return Err(Error::Training(format!(
                "sample fraction {} outside (0, 1]",
                params.fraction
            )));
        }
        let size = ((params.fraction * n as f64).ceil() as usize).clamp(params.min_rows.min(n), n);
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut sample_rows = sample_indices(&mut rng, n, size).into_vec();
        sample_rows.sort_unstable();
        let noise = Normal::new(0.0f32, params.noise_std as f32)
            .map_err(|e| Error::Training(format!("noise: {e}")))?;
        let train_queries = (0..params.train_queries)
            .map(|_| {
                let row = sample_rows[rng.random_range(0..sample_rows.len())];
                ds.columns()
                    .iter()
                    .map(|c| {
                        let mut v: Vec<f32> = ds
                            .vector(c.id, row)
                            .iter()
                            .map(|x| x + noise.sample(&mut rng))
                            .collect();
                        normalize(&mut v);
                        (c.id, v)
                    })
                    .collect()
            })
            .collect();
        Ok(TrainingSample {
            scale_factor: n as f64 / size as f64,
            sample_rows,
            train_queries,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StorageUnit {
    IndexCount,
    Bytes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StorageModel {
    pub unit: StorageUnit,
    pub max_degree: usize,
    pub bytes_per_edge: usize,
    pub bytes_per_float: usize,
}

impl Default for StorageModel {
    fn default() -> Self {
        StorageModel {
            unit: StorageUnit::IndexCount,
            max_degree: GraphParams::default().max_degree,
            bytes_per_edge: 4,
            bytes_per_float: 4,
        }
    }
}

impl StorageModel {
    pub fn with_unit(unit: StorageUnit) -> Self {
        StorageModel {
            unit,
            ..Default::default()
        }
    }

    pub fn index_bytes(&self, x: &IndexDescriptor, schema: &Schema, num_rows: usize) -> Result<f64> {
        let dim = x.dim(schema)?;
        Ok(num_rows as f64 * (self.max_degree * self.bytes_per_edge + dim * self.bytes_per_float) as f64)
    }

    pub fn estimate(&self, conf: &Configuration, schema: &Schema, num_rows: usize) -> Result<f64> {
        match self.unit {
            StorageUnit::IndexCount => Ok(conf.len() as f64),
            StorageUnit::Bytes => conf
                .iter()
                .map(|x| self.index_bytes(x, schema, num_rows))
                .sum(),
        }
    }
}

/// Fitted coefficients for one column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnFit {
    pub id: u32,
    pub dim: usize,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub r2_cost: f64,
    pub r2_recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingInfo {
    pub seed: u64,
    pub sample_size: usize,
    pub scale_factor: f64,
    pub grid: Vec<usize>,
    pub train_queries: usize,
    pub recall_k: usize,
}

/// Cost, recall and storage models; serialized as the model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Models {
    pub num_rows: usize,
    pub columns: Vec<ColumnFit>,
    pub fit_range: [usize; 2],
    pub sampling: SamplingInfo,
    pub storage: StorageModel,
}

impl Models {
    /// Models with hand-set coefficients, for what-if experiments.
    pub fn from_columns(num_rows: usize, columns: Vec<ColumnFit>, storage: StorageModel) -> Self {
        Models {
            num_rows,
            columns,
            fit_range: [1, num_rows],
            sampling: SamplingInfo {
                seed: 0,
                sample_size: num_rows,
                scale_factor: 1.0,
                grid: Vec::new(),
                train_queries: 0,
                recall_k: 0,
            },
            storage,
        }
    }

    pub fn column(&self, id: u32) -> Option<&ColumnFit> {
        self.columns.iter().find(|c| c.id == id)
    }

    fn averaged(&self, vid: ColumnSet) -> Result<(usize, [f64; 4])> {
        if vid.is_empty() {
            return Err(Error::InvalidInput("index has no columns".into()));
        }
        let mut dim = 0;
        let mut sums = [0.0; 4];
        for id in vid.ids() {
            let c = self
                .column(id)
                .ok_or_else(|| Error::InvalidInput(format!("no model for column {id}")))?;
            dim += c.dim;
            for (s, v) in sums.iter_mut().zip([c.a, c.b, c.c, c.d]) {
                *s += v;
            }
        }
        let n = vid.len() as f64;
        Ok((dim, sums.map(|s| s / n)))
    }

    /// Predicted numDist, clamped to [1, numRows].
    pub fn est_num_dist(&self, x: &IndexDescriptor, ek: usize) -> Result<f64> {
        let (_, [a, b, _, _]) = self.averaged(x.vid)?;
        Ok((a * ek as f64 + b).clamp(1.0, self.num_rows.max(1) as f64))
    }

    /// x.dim · predicted numDist.
    pub fn est_cost_idx(&self, x: &IndexDescriptor, ek: usize) -> Result<f64> {
        let (dim, _) = self.averaged(x.vid)?;
        Ok(dim as f64 * self.est_num_dist(x, ek)?)
    }

    pub fn est_recall(&self, x: &IndexDescriptor, ek: usize) -> Result<f64> {
        let (_, [_, _, c, d]) = self.averaged(x.vid)?;
        Ok((c * (ek.max(1) as f64).ln() + d).clamp(0.0, 1.0))
    }

    /// ek needed from an approximate index to expect `ek` true hits.
    pub fn inflate(&self, x: &IndexDescriptor, ek: usize) -> Result<usize> {
        if ek == 0 {
            return Ok(0);
        }
        let r = self.est_recall(x, ek)?.max(0.1);
        Ok((ek as f64 / r).ceil() as usize)
    }

    pub fn est_storage(&self, conf: &Configuration, ds: &Dataset) -> Result<f64> {
        self.storage.estimate(conf, ds.schema(), ds.num_rows())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        crate::cli::files::write_atomic(path, text.as_bytes())
    }
}

/// One (query, ek) measurement on a sample index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub ek: usize,
    pub num_dist: usize,
    pub recall: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Diagnostics {
    pub observations: BTreeMap<u32, Vec<Observation>>,
}

/// Builds one sample-scale index per column, measures numDist and recall for
/// every training query over the grid, and least-squares fits both models.
pub fn fit(
    ds: &Dataset,
    sample: &TrainingSample,
    params: &SampleParams,
    graph: GraphParams,
    storage: StorageModel,
) -> Result<(Models, Diagnostics)> {
    let sub = ds.subset_rows(&sample.sample_rows)?;
    let cap = (params.max_ek_fraction * sub.num_rows() as f64).floor() as usize;
    if params.recall_k == 0 || params.recall_k > sub.num_rows() {
        return Err(Error::Training(format!("recall_k {} out of range", params.recall_k)));
    }
    let grid: Vec<usize> = params
        .ek_grid
        .iter()
        .copied()
        .filter(|&ek| ek >= 1 && ek <= cap)
        .collect();
    if grid.len() < 3 {
        return Err(Error::Training(format!(
            "only {} grid points fit a {}-row sample; need at least 3",
            grid.len(),
            sub.num_rows()
        )));
    }
    if sample.train_queries.is_empty() {
        return Err(Error::Training("no training queries".into()));
    }
    let fitted: Vec<(ColumnFit, Vec<Observation>)> = ds
        .columns()
        .par_iter()
        .map(|c| fit_column(&sub, c.id, c.dim, sample, &grid, params.recall_k, graph))
        .collect::<Result<_>>()?;
    let mut diagnostics = Diagnostics::default();
    let mut columns = Vec::new();
    for (fit, obs) in fitted {
        diagnostics.observations.insert(fit.id, obs);
        columns.push(fit);
    }
    let models = Models {
        num_rows: ds.num_rows(),
        columns,
        fit_range: [grid[0], *grid.last().unwrap()],
        sampling: SamplingInfo {
            seed: params.seed,
            sample_size: sample.sample_rows.len(),
            scale_factor: sample.scale_factor,
            grid,
            train_queries: sample.train_queries.len(),
            recall_k: params.recall_k,
        },
        storage,
    };
    Ok((models, diagnostics))
}

fn fit_column(
    sub: &Dataset,
    id: u32,
    dim: usize,
    sample: &TrainingSample,
    grid: &[usize],
    recall_k: usize,
    graph: GraphParams,
) -> Result<(ColumnFit, Vec<Observation>)> {
    let x = IndexDescriptor::new(ColumnSet::single(id));
    let index = GraphIndex::build(sub, x, graph)?;
    let data = sub.column_data(id).expect("column exists");
    let opts = SearchOptions {
        exhaustive_fallback: false,
    };
    let mut obs = Vec::with_capacity(grid.len() * sample.train_queries.len());
    for tq in &sample.train_queries {
        let qv = &tq[&id];
        let mut exact: Vec<f32> = data.chunks_exact(dim).map(|r| dot(qv, r)).collect();
        exact.sort_unstable_by(|a, b| b.total_cmp(a));
        for &ek in grid {
            let res = index.search_with(qv, ek, opts)?;
            obs.push(Observation {
                ek,
                num_dist: res.num_dist,
                recall: threshold_recall(&res.scores, exact[recall_k - 1], recall_k),
            });
        }
    }
    let xs: Vec<f64> = obs.iter().map(|o| o.ek as f64).collect();
    let nd: Vec<f64> = obs.iter().map(|o| o.num_dist as f64).collect();
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let rc: Vec<f64> = obs.iter().map(|o| o.recall).collect();
    let (a, b, r2_cost) = nonneg_line(&xs, &nd);
    let (c, d, r2_recall) = nonneg_line(&lx, &rc);
    Ok((
        ColumnFit {
            id,
            dim,
            a,
            b,
            c,
            d,
            r2_cost,
            r2_recall,
        },
        obs,
    ))
}

/// Fraction of the exact top-k covered by `scores`, counting any retrieved
/// score at or above the exact k-th score (ties are interchangeable).
fn threshold_recall(scores: &[f32], kth: f32, k: usize) -> f64 {
    let eps = 1e-6 * kth.abs().max(1.0);
    let hits = scores.iter().filter(|&&s| s >= kth - eps).count().min(k);
    hits as f64 / k as f64
}

/// Least-squares line `y ≈ slope·x + intercept` with the slope forced ≥ 0
/// (a negative fit falls back to the mean). Returns (slope, intercept, R²).
pub fn nonneg_line(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let mut slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    if slope < 0.0 {
        slope = 0.0;
    }
    let intercept = my - slope * mx;
    (slope, intercept, r_squared(x, y, slope, intercept))
}

/// Coefficient of determination; 1 when `y` is constant and fitted exactly.
pub fn r_squared(x: &[f64], y: &[f64], slope: f64, intercept: f64) -> f64 {
    let my = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a - intercept).powi(2)).sum();
    if ss_tot == 0.0 {
        if ss_res == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - ss_res / ss_tot
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ann::tests::clustered;
    use crate::model::ColumnSpec;

    fn fit_of(id: u32, dim: usize, a: f64, b: f64, c: f64, d: f64) -> ColumnFit {
        ColumnFit {
            id,
            dim,
            a,
            b,
            c,
            d,
            r2_cost: 1.0,
            r2_recall: 1.0,
        }
    }

    fn hand_models() -> Models {
        Models::from_columns(
            1_000_000,
            vec![fit_of(1, 100, 2.0, 50.0, 0.1, 0.5), fit_of(2, 28, 4.0, 150.0, 0.2, 0.3)],
            StorageModel::default(),
        )
    }

    fn x(ids: &[u32]) -> IndexDescriptor {
        IndexDescriptor::new(ColumnSet::from_ids(ids.iter().copied()).unwrap())
    }

    #[test]
    fn cost_arithmetic() {
        let m = hand_models();
        assert_eq!(m.est_cost_idx(&x(&[1]), 100).unwrap(), 25000.0);
        assert_eq!(m.est_cost_idx(&x(&[1, 2]), 100).unwrap(), 51200.0);
        assert!(m.est_cost_idx(&x(&[3]), 100).is_err());
    }

    #[test]
    fn cost_is_clamped() {
        let m = Models::from_columns(500, vec![fit_of(1, 10, 2.0, -400.0, 0.0, 1.0)], StorageModel::default());
        assert_eq!(m.est_cost_idx(&x(&[1]), 1).unwrap(), 10.0);
        assert_eq!(m.est_cost_idx(&x(&[1]), 10_000).unwrap(), 5000.0);
    }

    #[test]
    fn recall_shape() {
        let m = hand_models();
        assert_eq!(m.est_recall(&x(&[1]), 1).unwrap(), 0.5);
        let lo = m.est_recall(&x(&[1, 2]), 100).unwrap();
        let hi = m.est_recall(&x(&[1, 2]), 1000).unwrap();
        assert!(hi >= lo);
        assert_eq!(m.est_recall(&x(&[2]), 1 << 30).unwrap(), 1.0);
    }

    #[test]
    fn identical_coefficients_scale_only_by_dim() {
        let m = Models::from_columns(
            10_000,
            vec![fit_of(1, 8, 1.5, 20.0, 0.1, 0.4), fit_of(2, 24, 1.5, 20.0, 0.1, 0.4)],
            StorageModel::default(),
        );
        let single = m.est_cost_idx(&x(&[1]), 300).unwrap() / 8.0;
        let pair = m.est_cost_idx(&x(&[1, 2]), 300).unwrap() / 32.0;
        assert_eq!(single, pair);
    }

    #[test]
    fn inflation() {
        let m = Models::from_columns(10_000, vec![fit_of(1, 4, 1.0, 0.0, 0.0, 0.5)], StorageModel::default());
        assert_eq!(m.inflate(&x(&[1]), 0).unwrap(), 0);
        assert_eq!(m.inflate(&x(&[1]), 101).unwrap(), 202);
        let low = Models::from_columns(10_000, vec![fit_of(1, 4, 1.0, 0.0, 0.0, 0.0)], StorageModel::default());
        assert_eq!(low.inflate(&x(&[1]), 7).unwrap(), 70);
    }

    #[test]
    fn storage_formulas() {
        let cols = vec![
            ColumnSpec {
                id: 1,
                dim: 100,
                name: "a".into(),
            },
            ColumnSpec {
                id: 2,
                dim: 3,
                name: "b".into(),
            },
            ColumnSpec {
                id: 3,
                dim: 3,
                name: "c".into(),
            },
        ];
        let data = vec![vec![1.0; 1000 * 100], vec![1.0; 3000], vec![1.0; 3000]];
        let ds = Dataset::new(cols, data).unwrap();
        let count = StorageModel::default();
        assert_eq!(count.estimate(&Configuration::new(), ds.schema(), 1000).unwrap(), 0.0);
        let three: Configuration = [x(&[1]), x(&[2]), x(&[1, 3])].into_iter().collect();
        assert_eq!(count.estimate(&three, ds.schema(), 1000).unwrap(), 3.0);
        let bytes = StorageModel::with_unit(StorageUnit::Bytes);
        let one: Configuration = [x(&[1])].into_iter().collect();
        assert_eq!(bytes.estimate(&one, ds.schema(), 1000).unwrap(), 464000.0);
    }

    #[test]
    fn line_fit_recovers_exact_line_and_clamps_slope() {
        let xs = [100.0, 200.0, 400.0, 800.0];
        let ys: Vec<f64> = xs.iter().map(|v| 3.0 * v + 7.0).collect();
        let (a, b, r2) = nonneg_line(&xs, &ys);
        assert!((a - 3.0).abs() < 1e-9 && (b - 7.0).abs() < 1e-6 && (r2 - 1.0).abs() < 1e-12);
        let down = [5.0, 4.0, 3.0, 2.0];
        let (a, b, _) = nonneg_line(&xs, &down);
        assert_eq!((a, b), (0.0, 3.5));
        assert_eq!(nonneg_line(&xs, &[1.0; 4]), (0.0, 1.0, 1.0));
    }

    #[test]
    fn sample_sizes_and_scale() {
        let ds = clustered(3000, &[4, 4], 1);
        let s = TrainingSample::draw(&ds, &SampleParams::default()).unwrap();
        assert_eq!(s.sample_rows.len(), 1000);
        assert!(s.sample_rows.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(s.scale_factor, 3.0);
        assert_eq!(s.train_queries.len(), 50);
        let full = SampleParams {
            fraction: 1.0,
            ..Default::default()
        };
        assert_eq!(TrainingSample::draw(&ds, &full).unwrap().scale_factor, 1.0);
    }

    #[test]
    fn too_small_sample_is_a_training_error() {
        let ds = clustered(300, &[4], 2);
        let s = TrainingSample::draw(&ds, &SampleParams::default()).unwrap();
        let err = fit(&ds, &s, &SampleParams::default(), GraphParams::default(), StorageModel::default());
        assert!(matches!(err, Err(Error::Training(_))));
    }

    fn trained(rows: usize, seed: u64) -> (Dataset, Models, Diagnostics) {
        let ds = clustered(rows, &[16, 8], seed);
        let params = SampleParams {
            fraction: 1.0,
            train_queries: 20,
            seed,
            ..Default::default()
        };
        let s = TrainingSample::draw(&ds, &params).unwrap();
        let (m, d) = fit(&ds, &s, &params, GraphParams::default(), StorageModel::default()).unwrap();
        (ds, m, d)
    }

    #[test]
    fn fit_quality_on_clustered_data() {
        let (_, m, diag) = trained(2000, 3);
        assert_eq!(m.sampling.grid, vec![100, 200, 400, 800]);
        for c in &m.columns {
            assert!(c.r2_cost >= 0.9, "column {} r2 {}", c.id, c.r2_cost);
            assert!(c.a >= 0.0 && c.c >= 0.0);
            let obs = &diag.observations[&c.id];
            let top: Vec<&Observation> = obs.iter().filter(|o| o.ek == 800).collect();
            let mean = top.iter().map(|o| o.num_dist as f64).sum::<f64>() / top.len() as f64;
            let pred = c.a * 800.0 + c.b;
            assert!((pred - mean).abs() <= 0.25 * mean, "pred {pred} mean {mean}");
            let mut by_ek: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
            for o in obs {
                by_ek.entry(o.ek).or_default().push(o.recall);
            }
            let means: Vec<f64> = by_ek.values().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect();
            assert!(means.windows(2).all(|w| w[1] >= w[0] - 1e-9), "{means:?}");
        }
    }

    #[test]
    fn fit_is_deterministic() {
        let (_, a, _) = trained(1200, 4);
        let (_, b, _) = trained(1200, 4);
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn identical_vectors_give_unit_recall() {
        let cols = vec![ColumnSpec {
            id: 1,
            dim: 4,
            name: "a".into(),
        }];
        let ds = Dataset::new(cols, vec![[0.5f32, 0.5, 0.5, 0.5].repeat(1200)]).unwrap();
        let params = SampleParams {
            fraction: 1.0,
            train_queries: 5,
            ..Default::default()
        };
        let s = TrainingSample::draw(&ds, &params).unwrap();
        let (m, d) = fit(&ds, &s, &params, GraphParams::default(), StorageModel::default()).unwrap();
        assert!(d.observations[&1].iter().all(|o| o.recall == 1.0));
        assert_eq!(m.est_recall(&x(&[1]), 150).unwrap(), 1.0);
    }

    #[test]
    fn model_file_roundtrip() {
        let m = hand_models();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        m.write(&p).unwrap();
        assert_eq!(Models::read(&p).unwrap(), m);
        std::fs::write(&p, r#"{"num_rows": 1, "bogus": 2}"#).unwrap();
        assert!(matches!(Models::read(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn held_out_fidelity() {
        let ds = clustered(6000, &[24], 5);
        let params = SampleParams {
            fraction: 0.25,
            train_queries: 30,
            seed: 5,
            ..Default::default()
        };
        let s = TrainingSample::draw(&ds, &params).unwrap();
        let (m, _) = fit(&ds, &s, &params, GraphParams::default(), StorageModel::default()).unwrap();
        let x1 = x(&[1]);
        let index = GraphIndex::build(&ds, x1, GraphParams::default()).unwrap();
        let probe_params = SampleParams {
            fraction: 1.0,
            train_queries: 40,
            seed: 99,
            ..Default::default()
        };
        let probes = TrainingSample::draw(&ds, &probe_params).unwrap();
        let mut within = 0;
        let mut total = 0;
        let mut abs_err = 0.0;
        for q in &probes.train_queries {
            let qv = &q[&1];
            let mut exact: Vec<f32> = ds.column_data(1).unwrap().chunks_exact(24).map(|r| dot(qv, r)).collect();
            exact.sort_unstable_by(|a, b| b.total_cmp(a));
            for ek in [100, 200, 400, 800] {
                let res = index.search(qv, ek).unwrap();
                let measured = 24.0 * res.num_dist as f64;
                let est = m.est_cost_idx(&x1, ek).unwrap();
                if est <= 2.0 * measured && measured <= 2.0 * est {
                    within += 1;
                }
                total += 1;
                abs_err += (m.est_recall(&x1, ek).unwrap() - threshold_recall(&res.scores, exact[99], 100)).abs();
            }
        }
        assert!(within * 5 >= total * 4, "{within}/{total} cost probes within x2");
        assert!(abs_err / total as f64 <= 0.15);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn cost_weakly_increasing(a in 0.0f64..10.0, b in -100.0f64..500.0, e1 in 1usize..5000, e2 in 1usize..5000) {
                let m = Models::from_columns(100_000, vec![fit_of(1, 16, a, b, 0.1, 0.2)], StorageModel::default());
                let (lo, hi) = (e1.min(e2), e1.max(e2));
                prop_assert!(m.est_cost_idx(&x(&[1]), lo).unwrap() <= m.est_cost_idx(&x(&[1]), hi).unwrap());
            }

            #[test]
            fn recall_in_unit_interval(c in 0.0f64..1.0, d in -2.0f64..2.0, ek in 1usize..100_000) {
                let m = Models::from_columns(100_000, vec![fit_of(1, 16, 1.0, 0.0, c, d)], StorageModel::default());
                let r = m.est_recall(&x(&[1]), ek).unwrap();
                prop_assert!((0.0..=1.0).contains(&r));
            }
        }
    }
}
