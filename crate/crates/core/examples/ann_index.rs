//! Builds a graph index over one column and a two-column concatenation, then
//! compares approximate results with brute force.

use mvtune::ann::{GraphIndex, GraphParams};
use mvtune::model::{ColumnSet, IndexDescriptor};
use mvtune::oracle::{exact_recall, ground_truth};
use mvtune::synth::{clustered_dataset, query_from_seed, DataSpec};

fn main() -> mvtune::Result<()> {
    let ds = clustered_dataset(&DataSpec::new(10_000, vec![32, 48], 1))?;
    for ids in [vec![1], vec![1, 2]] {
        let vid = ColumnSet::from_ids(ids)?;
        let x = IndexDescriptor::new(vid);
        let index = GraphIndex::build(&ds, x, GraphParams::default())?;
        let q = query_from_seed(&ds, vid, 50, 1.0, 7, 0.1)?;
        let gt = ground_truth(&q, &ds)?;
        let v = q.concat(vid)?;
        for ek in [50, 100, 400] {
            let res = index.search(&v, ek)?;
            println!(
                "{x}: ek {ek:>3} -> {:>5} distance computations, top-50 recall {:.2}",
                res.num_dist,
                exact_recall(&gt.ids, &[res.ids])
            );
        }
    }
    Ok(())
}
