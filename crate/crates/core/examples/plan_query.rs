//! What-if planning: the cheapest plan for one query against hypothetical configurations.

use mvtune::ann::GraphParams;
use mvtune::cli::parse_config;
use mvtune::estimators::{fit, SampleParams, StorageModel, TrainingSample};
use mvtune::model::ColumnSet;
use mvtune::planner::{Planner, PlannerParams};
use mvtune::synth::{clustered_dataset, query_from_seed, DataSpec};

fn main() -> mvtune::Result<()> {
    let ds = clustered_dataset(&DataSpec::new(20_000, vec![16, 24, 32], 2))?;
    let params = SampleParams::default();
    let sample = TrainingSample::draw(&ds, &params)?;
    let (models, _) = fit(&ds, &sample, &params, GraphParams::default(), StorageModel::default())?;
    let q = query_from_seed(&ds, ColumnSet::from_ids([1, 2, 3])?, 100, 1.0, 9, 0.1)?;
    let planner = Planner::new(&ds, &models, 0.9, PlannerParams::default())?;
    for text in ["1;2;3", "1,2;3", "1,2;1,3;2,3", "1,2,3"] {
        let plan = planner.plan(0, &q, &parse_config(text)?)?;
        let eks: Vec<String> = plan.assignments.iter().map(|(x, ek)| format!("{x}:{ek}")).collect();
        println!("[{text:<12}] cost {:>9.0}  plan {}", plan.estimated_cost, eks.join(" "));
    }
    Ok(())
}
