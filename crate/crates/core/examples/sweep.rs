//! Tunes at increasing budgets and prints a CSV of cost against budget.

use mvtune::ann::GraphParams;
use mvtune::estimators::{fit, SampleParams, StorageModel, TrainingSample};
use mvtune::model::Workload;
use mvtune::planner::{Planner, PlannerParams};
use mvtune::searcher::{sweep, SearchParams};
use mvtune::synth::{binomial_vids, clustered_dataset, query_from_seed, DataSpec};
use rand::SeedableRng;

fn main() -> mvtune::Result<()> {
    let ds = clustered_dataset(&DataSpec::new(10_000, vec![16; 6], 7))?;
    let params = SampleParams::default();
    let sample = TrainingSample::draw(&ds, &params)?;
    let (models, _) = fit(&ds, &sample, &params, GraphParams::default(), StorageModel::default())?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let vids = binomial_vids(6, 0.4, 8, &mut rng)?;
    let queries = vids
        .iter()
        .enumerate()
        .map(|(i, v)| query_from_seed(&ds, *v, 50, 1.0 / 8.0, i as u64, 0.1))
        .collect::<mvtune::Result<_>>()?;
    let w = Workload::new(queries, 0.9, 1.0)?;
    let planner = Planner::new(&ds, &models, w.recall_threshold, PlannerParams::default())?;
    println!("budget,cost,indexes");
    for (budget, r) in sweep(&planner, &w, &SearchParams::default(), &[1.0, 2.0, 4.0, 6.0, 8.0])? {
        println!("{budget},{:.1},{}", r.workload_cost, r.configuration.len());
    }
    Ok(())
}
