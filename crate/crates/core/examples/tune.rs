//! Tunes a small workload under an index-count budget and compares with the baselines.

use mvtune::ann::GraphParams;
use mvtune::estimators::{fit, SampleParams, StorageModel, TrainingSample};
use mvtune::model::{ColumnSet, Workload};
use mvtune::planner::{Planner, PlannerParams};
use mvtune::searcher::{baseline_per_column, baseline_per_query, SearchParams, Tuner};
use mvtune::synth::{clustered_dataset, query_from_seed, DataSpec};

fn main() -> mvtune::Result<()> {
    let ds = clustered_dataset(&DataSpec::new(20_000, vec![16, 24, 32, 16], 4))?;
    let params = SampleParams::default();
    let sample = TrainingSample::draw(&ds, &params)?;
    let (models, _) = fit(&ds, &sample, &params, GraphParams::default(), StorageModel::default())?;
    let vids: [&[u32]; 5] = [&[1, 2, 3], &[1, 2], &[2, 4], &[3, 4], &[1, 2, 3, 4]];
    let queries = vids
        .iter()
        .enumerate()
        .map(|(i, v)| query_from_seed(&ds, ColumnSet::from_ids(v.iter().copied())?, 100, 0.2, i as u64, 0.1))
        .collect::<mvtune::Result<_>>()?;
    let w = Workload::new(queries, 0.9, 3.0)?;
    let planner = Planner::new(&ds, &models, w.recall_threshold, PlannerParams::default())?;
    let tuned = Tuner::new(&planner, &w, SearchParams::default())?.tune()?;
    let per_column = baseline_per_column(&planner, &w)?;
    let per_query = baseline_per_query(&planner, &w)?;
    println!("tuned      {:>9.0}  {}", tuned.workload_cost, tuned.configuration);
    println!("per-column {:>9.0}  {}", per_column.workload_cost, per_column.configuration);
    println!("per-query  {:>9.0}  {} (storage {})", per_query.workload_cost, per_query.configuration, per_query.storage);
    println!("best cost per round: {:?}", tuned.trace.iter().map(|c| c.round()).collect::<Vec<_>>());
    Ok(())
}
