//! Writes a clustered dataset and a seeded workload, the same files `mvtune gen` produces.

use mvtune::cli::files::{load_dataset, save_dataset, WorkloadColumn, WorkloadFile, WorkloadQuery};
use mvtune::estimators::StorageUnit;
use mvtune::model::ColumnSet;
use mvtune::synth::{clustered_dataset, DataSpec};

fn main() -> mvtune::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "target/example-data".into());
    let dir = std::path::Path::new(&dir);
    let ds = clustered_dataset(&DataSpec::new(5_000, vec![16, 24, 32], 3))?;
    save_dataset(&ds, dir)?;
    let vids: [&[u32]; 3] = [&[1, 2, 3], &[1, 2], &[3]];
    let workload = WorkloadFile {
        columns: ds
            .columns()
            .iter()
            .map(|c| WorkloadColumn { id: c.id, dim: c.dim, name: c.name.clone() })
            .collect(),
        queries: vids
            .iter()
            .enumerate()
            .map(|(i, v)| {
                Ok(WorkloadQuery {
                    vid: ColumnSet::from_ids(v.iter().copied())?,
                    k: 50,
                    probability: 1.0 / 3.0,
                    vectors_ref: None,
                    seed: Some(100 + i as u64),
                })
            })
            .collect::<mvtune::Result<_>>()?,
        recall_threshold: 0.9,
        storage_budget: 2.0,
        storage_unit: StorageUnit::IndexCount,
    };
    workload.write(&dir.join("workload.json"))?;
    let back = load_dataset(dir)?;
    let resolved = workload.resolve(&back, dir)?;
    println!("{} rows, {} queries in {}", back.num_rows(), resolved.queries.len(), dir.display());
    Ok(())
}
