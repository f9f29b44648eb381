//! Beam search over index configurations.
//!
//! Seeds are small subsets of each query's candidate indexes. Every round
//! adds one pool index to each configuration in the beam, plans all queries,
//! drops indexes no plan uses and keeps the cheapest feasible results.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::RwLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ColumnSet, Configuration, IndexDescriptor, PlanAlgorithm, Query, QueryPlan, Workload};
use crate::planner::{candidate_indexes, within_distance, PlanRecord, Planner};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchParams {
    /// Largest column-count gap between a query and a usable index.
    pub di: usize,
    /// Largest seed configuration drawn from one query's candidates.
    pub se: usize,
    pub beam: usize,
    /// Stop once a round improves the best cost by at most this fraction.
    pub im: f64,
    pub max_iterations: usize,
    /// Abort when the candidate pool exceeds this many indexes.
    pub pool_limit: usize,
    /// Give queries without a usable index a full-scan plan instead of
    /// rejecting the configuration.
    pub scan_fallback: bool,
    /// Seed with every within-budget configuration when there are at most
    /// this many of them.
    pub exhaustive_limit: usize,
}

impl Default for SearchParams {
    fn default() -> Self {
        SearchParams {
            di: 2,
            se: 2,
            beam: 4,
            im: 0.05,
            max_iterations: 20,
            pool_limit: 5000,
            scan_fallback: true,
            exhaustive_limit: 0,
        }
    }
}

impl SearchParams {
    pub fn validate(&self) -> Result<()> {
        if self.se == 0 || self.beam == 0 {
            return Err(Error::Configuration("se and beam width must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.im) {
            return Err(Error::Configuration(format!("im = {} outside [0, 1)", self.im)));
        }
        Ok(())
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k.min(n));
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Union over queries of every column subset within distance `di`.
pub fn candidate_pool(w: &Workload, di: usize, limit: usize) -> Result<Vec<IndexDescriptor>> {
    let mut pool = BTreeSet::new();
    for q in &w.queries {
        let n = q.vid().len();
        let count: u128 = (n.saturating_sub(di).max(1)..=n).map(|s| binomial(n, s)).sum();
        if count > limit as u128 {
            return Err(Error::Configuration(format!(
                "a {n}-column query has {count} candidate indexes (limit {limit}); use a smaller di"
            )));
        }
        pool.extend(
            q.vid()
                .subsets()
                .filter(|s| within_distance(q.vid(), *s, di))
                .map(IndexDescriptor::new),
        );
        if pool.len() > limit {
            return Err(Error::Configuration(format!(
                "candidate pool exceeds {limit} indexes; use a smaller di"
            )));
        }
    }
    Ok(pool.into_iter().collect())
}

fn subsets_up_to(items: &[IndexDescriptor], max: usize, out: &mut BTreeSet<Configuration>) {
    fn rec(items: &[IndexDescriptor], start: usize, max: usize, cur: &mut Vec<IndexDescriptor>, out: &mut BTreeSet<Configuration>) {
        if !cur.is_empty() {
            out.insert(cur.iter().copied().collect());
        }
        if cur.len() == max {
            return;
        }
        for i in start..items.len() {
            cur.push(items[i]);
            rec(items, i + 1, max, cur, out);
            cur.pop();
        }
    }
    rec(items, 0, max, &mut Vec::new(), out);
}

/// Union over queries of the non-empty subsets of Cand(q) with at most `se` indexes.
pub fn seed_configs(w: &Workload, pool: &[IndexDescriptor], di: usize, se: usize) -> Vec<Configuration> {
    let all: Configuration = pool.iter().copied().collect();
    let mut out = BTreeSet::new();
    for q in &w.queries {
        subsets_up_to(&candidate_indexes(q, &all, di), se, &mut out);
    }
    out.into_iter().collect()
}

/// Why a configuration was rejected.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Storage { needed: f64, budget: f64 },
    NoPlan { query: usize },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::Storage { needed, budget } => {
                write!(f, "storage constraint: needs {needed}, budget {budget}")
            }
            Violation::NoPlan { query } => {
                write!(f, "recall constraint: query {query} has no plan meeting the threshold")
            }
        }
    }
}

#[derive(Debug, Clone)]
struct Evaluated {
    config: Configuration,
    plans: Vec<QueryPlan>,
    cost: f64,
    storage: f64,
    violation: Option<Violation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TunerResult {
    pub configuration: Configuration,
    /// Aligned with the workload's queries.
    pub plans: Vec<QueryPlan>,
    /// Σ probability · estimated plan cost.
    pub workload_cost: f64,
    pub storage: f64,
    /// Best cost seen after seeding and after each round.
    pub trace: Vec<f64>,
    /// Configurations evaluated.
    pub evaluations: usize,
}

type CacheKey = (usize, Vec<ColumnSet>);

/// Runs the configuration search for one workload against one planner.
pub struct Tuner<'p, 'a> {
    planner: &'p Planner<'a>,
    workload: &'p Workload,
    params: SearchParams,
    use_cache: bool,
    cache: RwLock<HashMap<CacheKey, Option<QueryPlan>>>,
}

impl<'p, 'a> Tuner<'p, 'a> {
    pub fn new(planner: &'p Planner<'a>, workload: &'p Workload, params: SearchParams) -> Result<Self> {
        params.validate()?;
        workload.check_against(planner.dataset())?;
        Ok(Tuner {
            planner,
            workload,
            params,
            use_cache: true,
            cache: RwLock::new(HashMap::new()),
        })
    }

    /// Disables the (query, usable indexes) plan cache.
    pub fn without_cache(mut self) -> Self {
        self.use_cache = false;
        self
    }

    pub fn params(&self) -> &SearchParams {
        &self.params
    }

    fn plan_query(&self, qid: usize, q: &Query, conf: &Configuration) -> Result<Option<QueryPlan>> {
        let usable = candidate_indexes(q, conf, self.params.di);
        if usable.is_empty() {
            return Ok(None);
        }
        let key = (qid, usable.iter().map(|x| x.vid).collect::<Vec<_>>());
        if self.use_cache {
            if let Some(hit) = self.cache.read().expect("lock").get(&key) {
                return Ok(hit.clone());
            }
        }
        let plan = match self.planner.plan_usable(qid, q, &usable) {
            Ok(p) => Some(p),
            Err(Error::InfeasiblePlan(_)) => None,
            Err(e) => return Err(e),
        };
        if self.use_cache {
            self.cache.write().expect("lock").insert(key, plan.clone());
        }
        Ok(plan)
    }

    /// Plans every query on `conf`, keeping a parent's plan when it is cheaper,
    /// then drops unused indexes and checks the constraints.
    fn evaluate(&self, conf: &Configuration, parent: Option<&[QueryPlan]>) -> Result<Evaluated> {
        let mut plans = Vec::with_capacity(self.workload.queries.len());
        let mut violation = None;
        for (qid, q) in self.workload.queries.iter().enumerate() {
            let fresh = self.plan_query(qid, q, conf)?;
            let incumbent = parent.map(|p| &p[qid]);
            let plan = match (fresh, incumbent) {
                (Some(f), Some(i)) if i.estimated_cost < f.estimated_cost => i.clone(),
                (Some(f), _) => f,
                (None, Some(i)) => i.clone(),
                (None, None) if self.params.scan_fallback => self.planner.scan_plan(q),
                (None, None) => {
                    violation.get_or_insert(Violation::NoPlan { query: qid });
                    self.planner.scan_plan(q)
                }
            };
            plans.push(plan);
        }
        let used: Configuration = plans.iter().flat_map(|p| p.indexes().copied()).collect();
        let ds = self.planner.dataset();
        let storage = self.planner.models().est_storage(&used, ds)?;
        if storage > self.workload.storage_budget && violation.is_none() {
            violation = Some(Violation::Storage {
                needed: storage,
                budget: self.workload.storage_budget,
            });
        }
        let cost = self
            .workload
            .queries
            .iter()
            .zip(&plans)
            .fold(0.0, |acc, (q, p)| acc + q.probability * p.estimated_cost);
        Ok(Evaluated {
            config: used,
            plans,
            cost,
            storage,
            violation,
        })
    }

    fn evaluate_all(&self, jobs: &[(Configuration, Option<&[QueryPlan]>)]) -> Result<Vec<Evaluated>> {
        jobs.par_iter()
            .map(|(c, parent)| self.evaluate(c, *parent))
            .collect()
    }

    fn enumerate_within_budget(&self, pool: &[IndexDescriptor]) -> Result<Option<Vec<Configuration>>> {
        if self.params.exhaustive_limit == 0 {
            return Ok(None);
        }
        let ds = self.planner.dataset();
        let models = self.planner.models();
        let mut max_size = 0;
        let mut sorted: Vec<f64> = pool
            .iter()
            .map(|x| models.est_storage(&std::iter::once(*x).collect(), ds))
            .collect::<Result<_>>()?;
        sorted.sort_by(f64::total_cmp);
        let mut acc = 0.0;
        for s in sorted {
            acc += s;
            if acc > self.workload.storage_budget {
                break;
            }
            max_size += 1;
        }
        let count: u128 = (1..=max_size).map(|s| binomial(pool.len(), s)).sum();
        if count > self.params.exhaustive_limit as u128 {
            return Ok(None);
        }
        let mut out = BTreeSet::new();
        subsets_up_to(pool, max_size, &mut out);
        Ok(Some(out.into_iter().collect()))
    }

    pub fn tune(&self) -> Result<TunerResult> {
        self.tune_with_seeds(&[])
    }

    /// Like [`Tuner::tune`] with extra seed configurations (used by budget sweeps).
    pub fn tune_with_seeds(&self, extra: &[Configuration]) -> Result<TunerResult> {
        let pool = candidate_pool(self.workload, self.params.di, self.params.pool_limit)?;
        let mut seeds = match self.enumerate_within_budget(&pool)? {
            Some(all) => all,
            None => seed_configs(self.workload, &pool, self.params.di, self.params.se),
        };
        seeds.extend(extra.iter().cloned());
        seeds.sort();
        seeds.dedup();
        log::info!("pool {} indexes, {} seeds", pool.len(), seeds.len());
        let jobs: Vec<_> = seeds.iter().map(|c| (c.clone(), None)).collect();
        let evaluated = self.evaluate_all(&jobs)?;
        let mut evaluations = evaluated.len();
        let mut beam = self.select(evaluated.clone());
        if beam.is_empty() {
            return Err(Error::InfeasibleWorkload(tightest(&evaluated)));
        }
        let mut best = beam[0].clone();
        let mut trace = vec![best.cost];
        for round in 1..=self.params.max_iterations {
            let prev = best.cost;
            let mut jobs = Vec::new();
            for b in &beam {
                for x in &pool {
                    if !b.config.contains(x) {
                        jobs.push((b.config.with(*x), Some(b.plans.as_slice())));
                    }
                }
            }
            if jobs.is_empty() {
                break;
            }
            let expanded = self.evaluate_all(&jobs)?;
            evaluations += expanded.len();
            beam = self.select(expanded);
            if beam.is_empty() {
                break;
            }
            if beam[0].cost < best.cost {
                best = beam[0].clone();
            }
            trace.push(best.cost);
            let gain = if prev > 0.0 { (prev - best.cost) / prev } else { 0.0 };
            log::debug!("round {round}: best {} (gain {gain:.4})", best.cost);
            if round > 1 && gain <= self.params.im {
                break;
            }
        }
        Ok(TunerResult {
            configuration: best.config,
            plans: best.plans,
            workload_cost: best.cost,
            storage: best.storage,
            trace,
            evaluations,
        })
    }

    /// The `beam` cheapest feasible configurations, distinct after reduction.
    fn select(&self, evaluated: Vec<Evaluated>) -> Vec<Evaluated> {
        let mut by_config: BTreeMap<Configuration, Evaluated> = BTreeMap::new();
        for e in evaluated.into_iter().filter(|e| e.violation.is_none()) {
            match by_config.get(&e.config) {
                Some(old) if old.cost <= e.cost => {}
                _ => {
                    by_config.insert(e.config.clone(), e);
                }
            }
        }
        let mut all: Vec<Evaluated> = by_config.into_values().collect();
        all.sort_by(|a, b| a.cost.total_cmp(&b.cost).then_with(|| a.config.cmp(&b.config)));
        all.truncate(self.params.beam);
        all
    }

    /// Estimated cost of an explicit configuration (no unused-index removal).
    pub fn evaluate_config(&self, conf: &Configuration) -> Result<(f64, Vec<QueryPlan>, Option<Violation>)> {
        let e = self.evaluate(conf, None)?;
        Ok((e.cost, e.plans, e.violation))
    }
}

fn tightest(evaluated: &[Evaluated]) -> String {
    let storage = evaluated
        .iter()
        .filter_map(|e| match &e.violation {
            Some(Violation::Storage { needed, budget }) => Some((needed - budget, e.violation.clone().unwrap())),
            _ => None,
        })
        .min_by(|a, b| a.0.total_cmp(&b.0));
    match storage {
        Some((_, v)) => v.to_string(),
        None => evaluated
            .iter()
            .find_map(|e| e.violation.as_ref().map(ToString::to_string))
            .unwrap_or_else(|| "no seed configuration".into()),
    }
}

fn baseline(planner: &Planner<'_>, w: &Workload, conf: Configuration, usable: impl Fn(&Query) -> Vec<IndexDescriptor>) -> Result<TunerResult> {
    let plans = w
        .queries
        .iter()
        .enumerate()
        .map(|(qid, q)| {
            let xs = usable(q);
            if xs.is_empty() {
                Ok(planner.scan_plan(q))
            } else {
                planner.plan_usable(qid, q, &xs)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let workload_cost = w
        .queries
        .iter()
        .zip(&plans)
        .fold(0.0, |acc, (q, p)| acc + q.probability * p.estimated_cost);
    let storage = planner.models().est_storage(&conf, planner.dataset())?;
    Ok(TunerResult {
        configuration: conf,
        plans,
        workload_cost,
        storage,
        trace: vec![workload_cost],
        evaluations: 1,
    })
}

/// One single-column index per column used by any query; every query may
/// combine all of its columns' indexes.
pub fn baseline_per_column(planner: &Planner<'_>, w: &Workload) -> Result<TunerResult> {
    let cols = w.queries.iter().fold(ColumnSet::default(), |acc, q| acc.union(q.vid()));
    let conf: Configuration = cols.ids().map(|id| IndexDescriptor::new(ColumnSet::single(id))).collect();
    baseline(planner, w, conf.clone(), |q| {
        conf.iter().filter(|x| x.vid.is_subset(q.vid())).copied().collect()
    })
}

/// One exact-match index per distinct query column set; each query uses only
/// its own index. Storage is not enforced.
pub fn baseline_per_query(planner: &Planner<'_>, w: &Workload) -> Result<TunerResult> {
    let conf: Configuration = w.queries.iter().map(|q| IndexDescriptor::new(q.vid())).collect();
    baseline(planner, w, conf, |q| vec![IndexDescriptor::new(q.vid())])
}

/// Tunes at each budget in ascending order, seeding each run with the
/// previous run's configuration so costs never rise with the budget.
pub fn sweep(planner: &Planner<'_>, w: &Workload, params: &SearchParams, budgets: &[f64]) -> Result<Vec<(f64, TunerResult)>> {
    let mut sorted = budgets.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut out: Vec<(f64, TunerResult)> = Vec::new();
    for b in sorted {
        let wb = Workload {
            storage_budget: b,
            ..w.clone()
        };
        let tuner = Tuner::new(planner, &wb, params.clone())?;
        let extra: Vec<Configuration> = out.last().map(|(_, r)| r.configuration.clone()).into_iter().collect();
        out.push((b, tuner.tune_with_seeds(&extra)?));
    }
    Ok(out)
}

/// Serialized tuning report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneReport {
    pub config: Vec<ColumnSet>,
    pub plans: Vec<PlanRecord>,
    pub workload_cost: f64,
    pub storage: f64,
    pub storage_budget: f64,
    pub recall_threshold: f64,
    pub baseline_costs: BaselineCosts,
    /// Per-column baseline cost over tuned cost.
    pub speedup: f64,
    pub trace: Vec<f64>,
    pub evaluations: usize,
    pub params: ReportParams,
    pub seeds: ReportSeeds,
    pub baselines: Baselines,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineCosts {
    pub per_column: f64,
    pub per_query: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Baselines {
    pub per_column: BaselineReport,
    pub per_query: BaselineReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineReport {
    pub config: Vec<ColumnSet>,
    pub plans: Vec<PlanRecord>,
    pub storage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportParams {
    pub search: SearchParams,
    pub planner: crate::planner::PlannerParams,
    pub inflation: String,
    pub storage_unit: crate::estimators::StorageUnit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSeeds {
    pub seed: u64,
    pub model_seed: u64,
}

pub(crate) fn records(plans: &[QueryPlan]) -> Vec<PlanRecord> {
    plans.iter().enumerate().map(|(i, p)| PlanRecord::new(i, p)).collect()
}

impl TuneReport {
    pub fn new(
        w: &Workload,
        planner: &Planner<'_>,
        params: &SearchParams,
        tuned: &TunerResult,
        per_column: &TunerResult,
        per_query: &TunerResult,
        seed: u64,
    ) -> Self {
        let config_vids = |c: &Configuration| c.iter().map(|x| x.vid).collect::<Vec<_>>();
        TuneReport {
            config: config_vids(&tuned.configuration),
            plans: records(&tuned.plans),
            workload_cost: tuned.workload_cost,
            storage: tuned.storage,
            storage_budget: w.storage_budget,
            recall_threshold: w.recall_threshold,
            baseline_costs: BaselineCosts {
                per_column: per_column.workload_cost,
                per_query: per_query.workload_cost,
            },
            speedup: per_column.workload_cost / tuned.workload_cost,
            trace: tuned.trace.clone(),
            evaluations: tuned.evaluations,
            params: ReportParams {
                search: params.clone(),
                planner: planner.params().clone(),
                inflation: if planner.params().inflate {
                    "ek / max(est_recall(ek), 0.1), rounded up".into()
                } else {
                    "none".into()
                },
                storage_unit: planner.models().storage.unit,
            },
            seeds: ReportSeeds {
                seed,
                model_seed: planner.models().sampling.seed,
            },
            baselines: Baselines {
                per_column: BaselineReport {
                    config: config_vids(&per_column.configuration),
                    plans: records(&per_column.plans),
                    storage: per_column.storage,
                },
                per_query: BaselineReport {
                    config: config_vids(&per_query.configuration),
                    plans: records(&per_query.plans),
                    storage: per_query.storage,
                },
            },
        }
    }

    pub fn configuration(&self) -> Configuration {
        self.config.iter().map(|v| IndexDescriptor::new(*v)).collect()
    }
}

/// True when any plan had to fall back to a full scan.
pub fn uses_scan(plans: &[QueryPlan]) -> bool {
    plans.iter().any(|p| p.algorithm == PlanAlgorithm::Scan)
}
