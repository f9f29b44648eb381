//! Fits the per-column cost and recall models on a row sample.

use mvtune::ann::GraphParams;
use mvtune::estimators::{fit, SampleParams, StorageModel, TrainingSample};
use mvtune::model::{ColumnSet, IndexDescriptor};
use mvtune::synth::{clustered_dataset, DataSpec};

fn main() -> mvtune::Result<()> {
    let ds = clustered_dataset(&DataSpec::new(20_000, vec![32, 64], 5))?;
    let params = SampleParams { fraction: 0.1, ..Default::default() };
    let sample = TrainingSample::draw(&ds, &params)?;
    let (models, _) = fit(&ds, &sample, &params, GraphParams::default(), StorageModel::default())?;
    for c in &models.columns {
        println!(
            "column {}: numDist ≈ {:.2}·ek + {:.0} (R² {:.3}), recall ≈ {:.4}·ln(ek) + {:.3}",
            c.id, c.a, c.b, c.r2_cost, c.c, c.d
        );
    }
    let both = IndexDescriptor::new(ColumnSet::from_ids([1, 2])?);
    for ek in [100, 1000] {
        println!(
            "{both} at ek {ek}: cost {:.0}, recall {:.3}, inflated ek {}",
            models.est_cost_idx(&both, ek)?,
            models.est_recall(&both, ek)?,
            models.inflate(&both, ek)?
        );
    }
    Ok(())
}
