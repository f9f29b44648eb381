//! Executes tuned and per-column plans on real indexes and compares them with
//! the estimates.

use std::collections::HashMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::ann::{execute_plan, GraphIndex, GraphParams};
use crate::error::Result;
use crate::model::{Configuration, Dataset, IndexDescriptor, PlanAlgorithm, Query, QueryPlan, Workload};
use crate::oracle::{exact_recall, ground_truth};
use crate::planner::PlanRecord;
use crate::searcher::TuneReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryEval {
    pub query_id: usize,
    pub est_cost: f64,
    pub measured_cost: f64,
    pub est_recall: f64,
    pub measured_recall: f64,
    pub retrieved: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub est_cost: f64,
    /// Σ probability · measured cost.
    pub measured_cost: f64,
    pub mean_recall: f64,
    pub min_recall: f64,
    /// Fraction of queries with measured recall ≥ threshold − 0.05.
    pub recall_ok: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub recall_threshold: f64,
    pub tuned: Vec<QueryEval>,
    pub per_column: Vec<QueryEval>,
    pub tuned_summary: Summary,
    pub per_column_summary: Summary,
    /// Per-column measured cost over tuned measured cost.
    pub measured_speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub build_secs: f64,
    pub tuned_exec_secs: f64,
    pub per_column_exec_secs: f64,
}

/// What one executed plan returned.
#[derive(Debug, Clone, PartialEq)]
pub struct Executed {
    pub ids: Vec<u32>,
    pub retrieved: Vec<Vec<u32>>,
    pub measured_cost: f64,
    pub candidates: usize,
}

/// Runs `plan` on the built indexes; full-scan plans use the exact top-k.
pub fn run_plan(
    q: &Query,
    plan: &QueryPlan,
    indexes: &HashMap<IndexDescriptor, GraphIndex>,
    ds: &Dataset,
    gt_ids: &[u32],
) -> Result<Executed> {
    if plan.algorithm == PlanAlgorithm::Scan {
        let gt = ground_truth(q, ds)?;
        return Ok(Executed {
            ids: gt.ids.clone(),
            retrieved: vec![gt.ids],
            measured_cost: ds.num_rows() as f64 * q.dim() as f64,
            candidates: ds.num_rows(),
        });
    }
    let exec = execute_plan(q, plan, indexes, ds)?;
    debug_assert_eq!(
        exact_recall(gt_ids, std::slice::from_ref(&exec.ids)),
        exact_recall(gt_ids, &exec.retrieved)
    );
    Ok(Executed {
        ids: exec.ids,
        retrieved: exec.retrieved,
        measured_cost: exec.measured_cost,
        candidates: exec.candidates,
    })
}

fn eval_plans(
    w: &Workload,
    records: &[PlanRecord],
    indexes: &HashMap<IndexDescriptor, GraphIndex>,
    ds: &Dataset,
    gts: &[Vec<u32>],
) -> Result<Vec<QueryEval>> {
    records
        .iter()
        .map(|r| {
            let q = &w.queries[r.query_id];
            let plan = r.to_plan();
            let run = run_plan(q, &plan, indexes, ds, &gts[r.query_id])?;
            Ok(QueryEval {
                query_id: r.query_id,
                est_cost: r.est_cost,
                measured_cost: run.measured_cost,
                est_recall: r.est_recall,
                measured_recall: exact_recall(&gts[r.query_id], &run.retrieved),
                retrieved: run.candidates,
            })
        })
        .collect()
}

fn summarize(w: &Workload, rows: &[QueryEval]) -> Summary {
    let weighted = |f: &dyn Fn(&QueryEval) -> f64| rows.iter().fold(0.0, |acc, r| acc + w.queries[r.query_id].probability * f(r));
    let n = rows.len().max(1) as f64;
    Summary {
        est_cost: weighted(&|r| r.est_cost),
        measured_cost: weighted(&|r| r.measured_cost),
        mean_recall: rows.iter().map(|r| r.measured_recall).sum::<f64>() / n,
        min_recall: rows.iter().map(|r| r.measured_recall).fold(f64::INFINITY, f64::min),
        recall_ok: rows
            .iter()
            .filter(|r| r.measured_recall >= w.recall_threshold - 0.05 - 1e-12)
            .count() as f64
            / n,
    }
}

/// Builds every index either configuration needs, executes both plan sets and
/// measures recall against the exact ground truth.
pub fn evaluate(ds: &Dataset, w: &Workload, report: &TuneReport, graph: GraphParams) -> Result<(EvalReport, Timings)> {
    let mut needed: Configuration = report.configuration();
    for v in &report.baselines.per_column.config {
        needed.insert(IndexDescriptor::new(*v));
    }
    for r in report.plans.iter().chain(&report.baselines.per_column.plans) {
        for a in &r.assignments {
            needed.insert(IndexDescriptor::new(a.vid));
        }
    }
    let started = Instant::now();
    let mut indexes = HashMap::new();
    for x in needed.iter() {
        indexes.insert(*x, GraphIndex::build(ds, *x, graph)?);
    }
    let build_secs = started.elapsed().as_secs_f64();
    let gts = w
        .queries
        .iter()
        .map(|q| Ok(ground_truth(q, ds)?.ids))
        .collect::<Result<Vec<_>>>()?;
    let t = Instant::now();
    let tuned = eval_plans(w, &report.plans, &indexes, ds, &gts)?;
    let tuned_exec_secs = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let per_column = eval_plans(w, &report.baselines.per_column.plans, &indexes, ds, &gts)?;
    let per_column_exec_secs = t.elapsed().as_secs_f64();
    let tuned_summary = summarize(w, &tuned);
    let per_column_summary = summarize(w, &per_column);
    Ok((
        EvalReport {
            recall_threshold: w.recall_threshold,
            measured_speedup: per_column_summary.measured_cost / tuned_summary.measured_cost,
            tuned,
            per_column,
            tuned_summary,
            per_column_summary,
        },
        Timings {
            build_secs,
            tuned_exec_secs,
            per_column_exec_secs,
        },
    ))
}
