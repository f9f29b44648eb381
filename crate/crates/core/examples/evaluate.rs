//! Tunes, builds the chosen indexes and executes every plan, comparing
//! estimated with measured cost and recall.

use mvtune::ann::GraphParams;
use mvtune::cli::eval::evaluate;
use mvtune::cli::tune_report;
use mvtune::estimators::{fit, SampleParams, StorageModel, TrainingSample};
use mvtune::model::{ColumnSet, Workload};
use mvtune::planner::PlannerParams;
use mvtune::searcher::SearchParams;
use mvtune::synth::{clustered_dataset, query_from_seed, DataSpec};

fn main() -> mvtune::Result<()> {
    let ds = clustered_dataset(&DataSpec::new(20_000, vec![32, 48, 64], 6))?;
    let params = SampleParams { fraction: 0.1, ..Default::default() };
    let sample = TrainingSample::draw(&ds, &params)?;
    let graph = GraphParams::default();
    let (models, _) = fit(&ds, &sample, &params, graph, StorageModel::default())?;
    let vids: [&[u32]; 4] = [&[1, 2, 3], &[1, 2], &[2, 3], &[1, 3]];
    let queries = vids
        .iter()
        .enumerate()
        .map(|(i, v)| query_from_seed(&ds, ColumnSet::from_ids(v.iter().copied())?, 100, 0.25, 40 + i as u64, 0.1))
        .collect::<mvtune::Result<_>>()?;
    let w = Workload::new(queries, 0.9, 3.0)?;
    let report = tune_report(&ds, &w, &models, PlannerParams::default(), &SearchParams::default(), 0)?;
    let (ev, timings) = evaluate(&ds, &w, &report, graph)?;
    println!("query  est cost  measured  est recall  measured");
    for r in &ev.tuned {
        println!(
            "{:>5} {:>9.0} {:>9.0} {:>11.2} {:>9.2}",
            r.query_id, r.est_cost, r.measured_cost, r.est_recall, r.measured_recall
        );
    }
    println!(
        "measured speedup over per-column indexes: {:.2}x (index builds took {:.1}s)",
        ev.measured_speedup, timings.build_secs
    );
    Ok(())
}
