//! Per-query what-if planning over relevant ek values.
//!
//! Only the ranks of ground-truth items in each index matter: any other ek
//! covers no more items than the largest relevant ek below it. Small index
//! sets are solved by exhaustive grid search (the last index's position is
//! found with a two-pointer sweep); larger ones by a dynamic program over the
//! power set of a few sampled ground-truth items.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, RwLock};

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::Models;
use crate::model::{ColumnSet, Configuration, Dataset, IndexDescriptor, PlanAlgorithm, Query, QueryPlan};
use crate::oracle::{ground_truth, item_ranks, sampled_item_ranks, GroundTruth};

/// Indexes in `conf` usable for `q` within column distance `di`, ascending.
pub fn candidate_indexes(q: &Query, conf: &Configuration, di: usize) -> Vec<IndexDescriptor> {
    conf.iter()
        .filter(|x| within_distance(q.vid(), x.vid, di))
        .copied()
        .collect()
}

pub(crate) fn within_distance(query: ColumnSet, index: ColumnSet, di: usize) -> bool {
    !index.is_empty() && index.is_subset(query) && index.len() + di >= query.len()
}

/// Per index, ground-truth items sorted by their rank in that index, behind a
/// `(0, None)` sentinel meaning "skip this index".
#[derive(Debug, Clone, PartialEq)]
pub struct RelevantEk {
    k: usize,
    lists: Vec<(IndexDescriptor, Vec<Entry>)>,
}

/// `(rank, ground-truth item)`; the sentinel is `(0, None)`.
type Entry = (usize, Option<usize>);

impl RelevantEk {
    /// `ranks[x][j]` is the 1-based rank of ground-truth item `j` in `x`.
    pub fn from_ranks<I>(k: usize, ranks: I) -> Result<Self>
    where
        I: IntoIterator<Item = (IndexDescriptor, Vec<usize>)>,
    {
        let mut lists = Vec::new();
        for (x, r) in ranks {
            if r.len() != k {
                return Err(Error::InvalidInput(format!(
                    "{x}: {} ranks for {k} ground-truth items",
                    r.len()
                )));
            }
            if r.contains(&0) {
                return Err(Error::InvalidInput(format!("{x}: ranks are 1-based")));
            }
            let mut list: Vec<(usize, Option<usize>)> = r.into_iter().enumerate().map(|(j, v)| (v, Some(j))).collect();
            list.sort_unstable();
            list.insert(0, (0, None));
            lists.push((x, list));
        }
        lists.sort_by_key(|a| a.0);
        if lists.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidInput("duplicate index in relevant ek".into()));
        }
        Ok(RelevantEk { k, lists })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }

    pub fn indexes(&self) -> impl Iterator<Item = &IndexDescriptor> {
        self.lists.iter().map(|l| &l.0)
    }

    /// The k + 1 `(rank, item)` entries of the `i`-th index.
    pub fn entries(&self, i: usize) -> &[(usize, Option<usize>)] {
        &self.lists[i].1
    }

    /// Number of ground-truth items with rank ≤ the rank at each chosen position.
    pub fn coverage(&self, positions: &[usize]) -> usize {
        let mut covered = vec![false; self.k];
        for (i, &p) in positions.iter().enumerate() {
            let limit = self.lists[i].1[p].0;
            for &(rank, item) in &self.lists[i].1[1..] {
                if rank <= limit && limit > 0 {
                    covered[item.expect("non-sentinel")] = true;
                }
            }
        }
        covered.iter().filter(|&&c| c).count()
    }
}

/// Per index and position: the ek actually requested and its plan cost
/// contribution `cost_idx(x, ek) + q.dim · ek` (0 at the sentinel).
#[derive(Debug, Clone, PartialEq)]
pub struct CostTable {
    pub eff_ek: Vec<Vec<usize>>,
    pub cost: Vec<Vec<f64>>,
}

impl CostTable {
    /// `eff` maps a relevant rank to the ek requested from the index (for
    /// example inflated for approximate search); it is made non-decreasing
    /// along each list. `cost_idx` prices one index scan.
    pub fn new<E, C>(rel: &RelevantEk, query_dim: usize, mut eff: E, mut cost_idx: C) -> Result<Self>
    where
        E: FnMut(&IndexDescriptor, usize) -> Result<usize>,
        C: FnMut(&IndexDescriptor, usize) -> Result<f64>,
    {
        let mut eff_ek = Vec::with_capacity(rel.len());
        let mut cost = Vec::with_capacity(rel.len());
        for (x, list) in &rel.lists {
            let mut e = vec![0usize; list.len()];
            let mut c = vec![0f64; list.len()];
            for p in 1..list.len() {
                e[p] = eff(x, list[p].0)?.max(e[p - 1]).max(1);
                c[p] = cost_idx(x, e[p])? + query_dim as f64 * e[p] as f64;
            }
            eff_ek.push(e);
            cost.push(c);
        }
        Ok(CostTable { eff_ek, cost })
    }

    /// Σ cost over the chosen positions, in index order.
    pub fn total(&self, positions: &[usize]) -> f64 {
        positions
            .iter()
            .enumerate()
            .fold(0.0, |acc, (i, &p)| acc + self.cost[i][p])
    }
}

/// Extends a plan until it covers `theta · k` items of the full ground truth.
/// Each step advances the index position with the lowest added cost per newly
/// covered item (ties: lower index, then lower position). Plans that already
/// cover enough are returned with their full-coverage count.
pub fn repair_coverage(rel: &RelevantEk, table: &CostTable, theta: f64, plan: &GridPlan) -> Result<GridPlan> {
    let k = rel.k();
    let need = required(theta, k)?;
    let mut positions = plan.positions.clone();
    let mut covered = vec![false; k];
    for (i, &p) in positions.iter().enumerate() {
        for &(_, item) in &rel.entries(i)[1..=p] {
            covered[item.expect("non-sentinel")] = true;
        }
    }
    let mut count = covered.iter().filter(|&&c| c).count();
    while count < need {
        let mut best: Option<(f64, usize, usize)> = None;
        for (i, &from) in positions.iter().enumerate() {
            let entries = rel.entries(i);
            let mut gain = 0usize;
            for (p, &(_, item)) in entries.iter().enumerate().skip(from + 1) {
                if !covered[item.expect("non-sentinel")] {
                    gain += 1;
                }
                if gain == 0 {
                    continue;
                }
                let per_item = (table.cost[i][p] - table.cost[i][from]).max(0.0) / gain as f64;
                if best.is_none_or(|(c, _, _)| per_item < c) {
                    best = Some((per_item, i, p));
                }
            }
        }
        let Some((_, i, p)) = best else {
            return Err(Error::InfeasiblePlan(format!("cannot cover {need} of {k} items")));
        };
        for &(_, item) in &rel.entries(i)[positions[i] + 1..=p] {
            let c = &mut covered[item.expect("non-sentinel")];
            if !*c {
                *c = true;
                count += 1;
            }
        }
        positions[i] = p;
    }
    Ok(GridPlan {
        cost: table.total(&positions),
        covered: rel.coverage(&positions),
        of: k,
        positions,
        algorithm: plan.algorithm,
    })
}

/// A plan as positions into the relevant lists.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPlan {
    pub positions: Vec<usize>,
    pub cost: f64,
    /// Covered items (of `k`, or of `k'` for DP plans).
    pub covered: usize,
    pub of: usize,
    pub algorithm: PlanAlgorithm,
}

/// Cost, then fewer indexes, then lexicographically smaller ek vector.
fn better(table: &CostTable, a_pos: &[usize], a_cost: f64, b: Option<&GridPlan>) -> bool {
    let Some(b) = b else { return true };
    match a_cost.total_cmp(&b.cost) {
        Ordering::Less => true,
        Ordering::Greater => false,
        Ordering::Equal => {
            let nnz = |p: &[usize]| p.iter().filter(|&&v| v > 0).count();
            match nnz(a_pos).cmp(&nnz(&b.positions)) {
                Ordering::Less => true,
                Ordering::Greater => false,
                Ordering::Equal => {
                    let ek = |p: &[usize]| -> Vec<usize> { p.iter().enumerate().map(|(i, &v)| table.eff_ek[i][v]).collect() };
                    ek(a_pos) < ek(&b.positions)
                }
            }
        }
    }
}

fn required(theta: f64, n: usize) -> Result<usize> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::InvalidInput(format!("recall threshold {theta} outside (0, 1]")));
    }
    Ok(((theta * n as f64) - 1e-9).ceil().max(1.0) as usize)
}

/// Minimum-cost positions over the full relevant grid covering at least
/// `theta · k` items.
pub fn plan_search(rel: &RelevantEk, table: &CostTable, theta: f64) -> Result<GridPlan> {
    if rel.is_empty() {
        return Err(Error::InfeasiblePlan("no usable index".into()));
    }
    let k = rel.k();
    let need = required(theta, k)?;
    if need > k {
        return Err(Error::InfeasiblePlan(format!("cannot cover {need} of {k} items")));
    }
    let n = rel.len();
    // Cheapest position at or after p for the last index (ties: smallest p).
    let last = &table.cost[n - 1];
    let mut suffix = vec![(f64::INFINITY, 0usize); k + 2];
    for p in (0..=k).rev() {
        suffix[p] = if last[p] <= suffix[p + 1].0 { (last[p], p) } else { suffix[p + 1] };
    }
    let mut s = SearchState {
        rel,
        table,
        need,
        suffix,
        counts: vec![0; k],
        covered: 0,
        positions: vec![0; n],
        best: None,
    };
    if n == 1 {
        s.sweep_last(0.0);
    } else {
        s.outer(0, 0.0);
    }
    s.best
        .ok_or_else(|| Error::InfeasiblePlan(format!("no grid point covers {need} of {k} items")))
}

struct SearchState<'a> {
    rel: &'a RelevantEk,
    table: &'a CostTable,
    need: usize,
    suffix: Vec<(f64, usize)>,
    counts: Vec<u32>,
    covered: usize,
    positions: Vec<usize>,
    best: Option<GridPlan>,
}

impl SearchState<'_> {
    fn add(&mut self, i: usize, p: usize) {
        let item = self.rel.lists[i].1[p].1.expect("non-sentinel");
        self.counts[item] += 1;
        if self.counts[item] == 1 {
            self.covered += 1;
        }
    }

    fn remove(&mut self, i: usize, p: usize) {
        let item = self.rel.lists[i].1[p].1.expect("non-sentinel");
        self.counts[item] -= 1;
        if self.counts[item] == 0 {
            self.covered -= 1;
        }
    }

    /// Enumerates positions of indexes before the last two.
    fn outer(&mut self, i: usize, prefix: f64) {
        let n = self.rel.len();
        if i == n - 2 {
            self.two_pointer(prefix);
            return;
        }
        let k = self.rel.k();
        for p in 0..=k {
            if p > 0 {
                self.add(i, p);
            }
            self.positions[i] = p;
            self.outer(i + 1, prefix + self.table.cost[i][p]);
        }
        for p in 1..=k {
            self.remove(i, p);
        }
        self.positions[i] = 0;
    }

    /// Sweeps the second-to-last index upward while the last index's minimum
    /// feasible position only moves down.
    fn two_pointer(&mut self, prefix: f64) {
        let n = self.rel.len();
        let (a, z) = (n - 2, n - 1);
        let k = self.rel.k();
        for p in 1..=k {
            self.add(z, p);
        }
        let mut pl = k;
        for p in 0..=k {
            if p > 0 {
                self.add(a, p);
            }
            while pl > 0 {
                self.remove(z, pl);
                if self.covered >= self.need {
                    pl -= 1;
                } else {
                    self.add(z, pl);
                    break;
                }
            }
            if self.covered >= self.need {
                self.positions[a] = p;
                self.consider_last(prefix + self.table.cost[a][p], pl);
            }
        }
        for p in 1..=k {
            self.remove(a, p);
        }
        for p in 1..=pl {
            self.remove(z, p);
        }
        self.positions[a] = 0;
    }

    /// Single-index case: the minimal feasible position is `need`.
    fn sweep_last(&mut self, prefix: f64) {
        self.consider_last(prefix, self.need);
    }

    fn consider_last(&mut self, prefix: f64, min_pos: usize) {
        let z = self.rel.len() - 1;
        let (c, p) = self.suffix[min_pos];
        self.positions[z] = p;
        let cost = prefix + c;
        if better(self.table, &self.positions, cost, self.best.as_ref()) {
            let covered = self.rel.coverage(&self.positions);
            self.best = Some(GridPlan {
                positions: self.positions.clone(),
                cost,
                covered,
                of: self.rel.k(),
                algorithm: PlanAlgorithm::Search,
            });
        }
        self.positions[z] = 0;
    }
}

/// Power-set dynamic program over `samples` random `k_prime`-subsets of the
/// ground truth; returns the cheapest plan across samples. With
/// `k_prime ≥ k` the single sample is the whole ground truth.
pub fn plan_dp(
    rel: &RelevantEk,
    table: &CostTable,
    theta: f64,
    k_prime: usize,
    samples: usize,
    seed: u64,
) -> Result<GridPlan> {
    if rel.is_empty() {
        return Err(Error::InfeasiblePlan("no usable index".into()));
    }
    let k = rel.k();
    if k_prime == 0 || samples == 0 {
        return Err(Error::Configuration("k' and the sample count must be positive".into()));
    }
    let kp = k_prime.min(k);
    if kp > 20 {
        return Err(Error::Configuration(format!("k' = {kp} is too large for the power-set table")));
    }
    let need = required(theta, kp)?;
    let draws: Vec<Vec<usize>> = if kp == k {
        vec![(0..k).collect()]
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..samples)
            .map(|_| {
                let mut s = sample_indices(&mut rng, k, kp).into_vec();
                s.sort_unstable();
                s
            })
            .collect()
    };
    // position[i][item] in each relevant list.
    let mut position = vec![vec![0usize; k]; rel.len()];
    for (i, (_, list)) in rel.lists.iter().enumerate() {
        for (p, &(_, item)) in list.iter().enumerate().skip(1) {
            position[i][item.expect("non-sentinel")] = p;
        }
    }
    let mut best: Option<GridPlan> = None;
    for draw in &draws {
        let plan = dp_one(rel, table, &position, draw, need)?;
        if better(table, &plan.positions, plan.cost, best.as_ref()) {
            best = Some(plan);
        }
    }
    best.ok_or_else(|| Error::InfeasiblePlan("no feasible cover".into()))
}

fn dp_one(rel: &RelevantEk, table: &CostTable, position: &[Vec<usize>], draw: &[usize], need: usize) -> Result<GridPlan> {
    let n = rel.len();
    let full = 1usize << draw.len();
    // Per index and subset: the position covering it (max over members).
    let cover_pos: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let mut v = vec![0usize; full];
            for mask in 1..full {
                let low = mask.trailing_zeros() as usize;
                v[mask] = v[mask & (mask - 1)].max(position[i][draw[low]]);
            }
            v
        })
        .collect();
    let mut dp: Vec<f64> = (0..full).map(|m| table.cost[0][cover_pos[0][m]]).collect();
    let mut choice: Vec<Vec<usize>> = vec![(0..full).collect()];
    for (i, positions) in cover_pos.iter().enumerate().skip(1) {
        let mut next = vec![f64::INFINITY; full];
        let mut pick = vec![0usize; full];
        for mask in 0..full {
            let mut sub = mask;
            loop {
                let c = dp[mask ^ sub] + table.cost[i][positions[sub]];
                if c < next[mask] {
                    next[mask] = c;
                    pick[mask] = sub;
                }
                if sub == 0 {
                    break;
                }
                sub = (sub - 1) & mask;
            }
        }
        dp = next;
        choice.push(pick);
    }
    let best_mask = (0..full)
        .filter(|m| m.count_ones() as usize >= need)
        .min_by(|&a, &b| dp[a].total_cmp(&dp[b]).then(a.count_ones().cmp(&b.count_ones())).then(a.cmp(&b)))
        .ok_or_else(|| Error::InfeasiblePlan(format!("cannot cover {need} of {} sampled items", draw.len())))?;
    let mut positions = vec![0usize; n];
    let mut mask = best_mask;
    for i in (0..n).rev() {
        let sub = choice[i][mask];
        positions[i] = cover_pos[i][sub];
        mask ^= sub;
    }
    let covered = draw
        .iter()
        .filter(|&&item| (0..n).any(|i| positions[i] > 0 && position[i][item] <= positions[i]))
        .count();
    Ok(GridPlan {
        cost: table.total(&positions),
        positions,
        covered,
        of: draw.len(),
        algorithm: PlanAlgorithm::Dp,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankSource {
    /// Ranks over every row of the dataset.
    Exact,
    /// Ranks extrapolated from a uniform row sample.
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerParams {
    pub di: usize,
    pub k_prime: usize,
    pub dp_samples: usize,
    /// Largest usable-index count solved by grid search.
    pub search_limit: usize,
    /// Inflate ek by the estimated recall of the approximate index.
    pub inflate: bool,
    pub rank_source: RankSource,
    pub seed: u64,
}

impl Default for PlannerParams {
    fn default() -> Self {
        PlannerParams {
            di: 2,
            k_prime: 5,
            dp_samples: 3,
            search_limit: 3,
            inflate: true,
            rank_source: RankSource::Exact,
            seed: 0,
        }
    }
}

type RankKey = (usize, ColumnSet);

/// Plans queries against hypothetical configurations, caching ground truths
/// and per-index ranks. Query ids are caller-assigned and must be stable.
pub struct Planner<'a> {
    ds: &'a Dataset,
    models: &'a Models,
    params: PlannerParams,
    theta: f64,
    rank_sample: Option<(Vec<usize>, f64)>,
    gt: RwLock<HashMap<usize, Arc<GroundTruth>>>,
    ranks: RwLock<HashMap<RankKey, Arc<Vec<usize>>>>,
}

impl<'a> Planner<'a> {
    pub fn new(ds: &'a Dataset, models: &'a Models, theta: f64, params: PlannerParams) -> Result<Self> {
        required(theta, 1)?;
        let rank_sample = match params.rank_source {
            RankSource::Exact => None,
            RankSource::Sampled => {
                let size = models.sampling.sample_size.clamp(1, ds.num_rows());
                let mut rng = ChaCha8Rng::seed_from_u64(models.sampling.seed);
                let mut rows = sample_indices(&mut rng, ds.num_rows(), size).into_vec();
                rows.sort_unstable();
                Some((rows, ds.num_rows() as f64 / size as f64))
            }
        };
        Ok(Planner {
            ds,
            models,
            params,
            theta,
            rank_sample,
            gt: RwLock::new(HashMap::new()),
            ranks: RwLock::new(HashMap::new()),
        })
    }

    pub fn params(&self) -> &PlannerParams {
        &self.params
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn dataset(&self) -> &Dataset {
        self.ds
    }

    pub fn models(&self) -> &Models {
        self.models
    }

    pub fn ground_truth(&self, qid: usize, q: &Query) -> Result<Arc<GroundTruth>> {
        if let Some(gt) = self.gt.read().expect("lock").get(&qid) {
            return Ok(gt.clone());
        }
        let gt = Arc::new(ground_truth(q, self.ds)?);
        self.gt.write().expect("lock").insert(qid, gt.clone());
        Ok(gt)
    }

    fn ranks(&self, qid: usize, q: &Query, x: &IndexDescriptor) -> Result<Arc<Vec<usize>>> {
        let key = (qid, x.vid);
        if let Some(r) = self.ranks.read().expect("lock").get(&key) {
            return Ok(r.clone());
        }
        let gt = self.ground_truth(qid, q)?;
        let r = Arc::new(match &self.rank_sample {
            None => item_ranks(q, x, &gt.ids, self.ds)?,
            Some((rows, scale)) => sampled_item_ranks(q, x, &gt.ids, self.ds, rows, *scale)?,
        });
        self.ranks.write().expect("lock").insert(key, r.clone());
        Ok(r)
    }

    pub fn relevant_ek(&self, qid: usize, q: &Query, usable: &[IndexDescriptor]) -> Result<RelevantEk> {
        let gt = self.ground_truth(qid, q)?;
        let ranks = usable
            .iter()
            .map(|x| Ok((*x, self.ranks(qid, q, x)?.as_ref().clone())))
            .collect::<Result<Vec<_>>>()?;
        RelevantEk::from_ranks(gt.len(), ranks)
    }

    /// ek requested from `x` to expect the true top-`rank` of `x`.
    pub fn effective_ek(&self, x: &IndexDescriptor, rank: usize) -> Result<usize> {
        let ek = if self.params.inflate {
            self.models.inflate(x, rank)?
        } else {
            rank
        };
        Ok(ek.min(self.ds.num_rows()))
    }

    pub fn cost_table(&self, q: &Query, rel: &RelevantEk) -> Result<CostTable> {
        CostTable::new(
            rel,
            q.dim(),
            |x, r| self.effective_ek(x, r),
            |x, ek| self.models.est_cost_idx(x, ek),
        )
    }

    /// Best plan for `q` using the indexes of `conf` that pass the distance filter.
    pub fn plan(&self, qid: usize, q: &Query, conf: &Configuration) -> Result<QueryPlan> {
        self.plan_usable(qid, q, &candidate_indexes(q, conf, self.params.di))
    }

    /// Best plan over an already filtered, ascending list of usable indexes.
    pub fn plan_usable(&self, qid: usize, q: &Query, usable: &[IndexDescriptor]) -> Result<QueryPlan> {
        if usable.is_empty() {
            return Err(Error::InfeasiblePlan(format!("no usable index for query {qid}")));
        }
        let rel = self.relevant_ek(qid, q, usable)?;
        let table = self.cost_table(q, &rel)?;
        let grid = if rel.len() <= self.params.search_limit {
            plan_search(&rel, &table, self.theta)?
        } else {
            plan_dp(
                &rel,
                &table,
                self.theta,
                self.params.k_prime,
                self.params.dp_samples,
                self.params.seed ^ (qid as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
            )
            .and_then(|dp| repair_coverage(&rel, &table, self.theta, &dp))?
        };
        Ok(to_query_plan(&rel, &table, &grid))
    }

    /// A full scan of every row; exact by construction.
    pub fn scan_plan(&self, q: &Query) -> QueryPlan {
        QueryPlan {
            assignments: BTreeMap::new(),
            estimated_cost: self.ds.num_rows() as f64 * q.dim() as f64,
            estimated_recall: 1.0,
            algorithm: PlanAlgorithm::Scan,
        }
    }
}

pub fn to_query_plan(rel: &RelevantEk, table: &CostTable, grid: &GridPlan) -> QueryPlan {
    let assignments = rel
        .indexes()
        .zip(&grid.positions)
        .enumerate()
        .filter(|(_, (_, &p))| p > 0)
        .map(|(i, (x, &p))| (*x, table.eff_ek[i][p]))
        .collect();
    QueryPlan {
        assignments,
        estimated_cost: grid.cost,
        estimated_recall: grid.covered as f64 / grid.of.max(1) as f64,
        algorithm: grid.algorithm,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssignmentRecord {
    pub vid: ColumnSet,
    pub ek: usize,
}

/// Serialized form of a [`QueryPlan`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanRecord {
    pub query_id: usize,
    pub assignments: Vec<AssignmentRecord>,
    pub est_cost: f64,
    pub est_recall: f64,
    pub algorithm: PlanAlgorithm,
}

impl PlanRecord {
    pub fn new(query_id: usize, plan: &QueryPlan) -> Self {
        PlanRecord {
            query_id,
            assignments: plan
                .assignments
                .iter()
                .map(|(x, &ek)| AssignmentRecord { vid: x.vid, ek })
                .collect(),
            est_cost: plan.estimated_cost,
            est_recall: plan.estimated_recall,
            algorithm: plan.algorithm,
        }
    }

    pub fn to_plan(&self) -> QueryPlan {
        QueryPlan {
            assignments: self
                .assignments
                .iter()
                .map(|a| (IndexDescriptor::new(a.vid), a.ek))
                .collect(),
            estimated_cost: self.est_cost,
            estimated_recall: self.est_recall,
            algorithm: self.algorithm,
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::ann::tests::clustered;
    use crate::estimators::{ColumnFit, StorageModel};
    use rand::Rng;

    pub(crate) fn xd(ids: &[u32]) -> IndexDescriptor {
        IndexDescriptor::new(ColumnSet::from_ids(ids.iter().copied()).unwrap())
    }

    fn linear_table(rel: &RelevantEk, weights: &[f64], query_dim: usize) -> CostTable {
        let w: HashMap<IndexDescriptor, f64> = rel.indexes().copied().zip(weights.iter().copied()).collect();
        CostTable::new(rel, query_dim, |_, r| Ok(r), |x, ek| Ok(w[x] * ek as f64)).unwrap()
    }

    /// Every point of the (k+1)^|X| grid.
    pub(crate) fn exhaustive(rel: &RelevantEk, table: &CostTable, theta: f64) -> Option<(f64, usize)> {
        let k = rel.k();
        let need = ((theta * k as f64) - 1e-9).ceil().max(1.0) as usize;
        let n = rel.len();
        let mut pos = vec![0usize; n];
        let mut best: Option<(f64, usize)> = None;
        loop {
            let covered = rel.coverage(&pos);
            if covered >= need {
                let c = table.total(&pos);
                if best.is_none_or(|b| c < b.0) {
                    best = Some((c, covered));
                }
            }
            let mut i = 0;
            while i < n && pos[i] == k {
                pos[i] = 0;
                i += 1;
            }
            if i == n {
                return best;
            }
            pos[i] += 1;
        }
    }

    fn fig3() -> RelevantEk {
        // Items r1, r2, r3.
        RelevantEk::from_ranks(3, [(xd(&[1]), vec![31, 6, 183]), (xd(&[3]), vec![116, 230, 8])]).unwrap()
    }

    #[test]
    fn fig3_grid() {
        let rel = fig3();
        let ranks = |i: usize| rel.entries(i).iter().map(|e| e.0).collect::<Vec<_>>();
        assert_eq!(ranks(0), vec![0, 6, 31, 183]);
        assert_eq!(ranks(1), vec![0, 8, 116, 230]);
        assert_eq!(rel.coverage(&[2, 1]), 3);
        let table = linear_table(&rel, &[1.0, 1.0], 0);
        let plan = plan_search(&rel, &table, 1.0).unwrap();
        assert_eq!(plan.positions, vec![2, 1]);
        assert_eq!(plan.covered, 3);
        let qp = to_query_plan(&rel, &table, &plan);
        assert_eq!(qp.assignments, [(xd(&[1]), 31), (xd(&[3]), 8)].into());
        assert_eq!(qp.estimated_cost, 39.0);
    }

    #[test]
    fn identity_index_single_plan() {
        let k = 6;
        let rel = RelevantEk::from_ranks(k, [(xd(&[1, 2]), (1..=k).collect())]).unwrap();
        let entries: Vec<_> = rel.entries(0).to_vec();
        assert_eq!(entries[0], (0, None));
        assert!(entries[1..].iter().enumerate().all(|(j, e)| *e == (j + 1, Some(j))));
        let table = linear_table(&rel, &[2.0], 4);
        let plan = plan_search(&rel, &table, 1.0).unwrap();
        assert_eq!(plan.positions, vec![k]);
        let half = plan_search(&rel, &table, 0.5).unwrap();
        assert_eq!(half.positions, vec![3]);
    }

    fn random_instance(rng: &mut ChaCha8Rng, n: usize, k: usize) -> RelevantEk {
        let ranks = (0..n).map(|i| {
            let mut pool: Vec<usize> = (1..=60).collect();
            for s in (1..pool.len()).rev() {
                pool.swap(s, rng.random_range(0..=s));
            }
            (xd(&[i as u32 + 1]), pool[..k].to_vec())
        });
        RelevantEk::from_ranks(k, ranks).unwrap()
    }

    #[test]
    fn search_matches_exhaustive_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for t in 0..20 {
            let n = 2 + t % 2;
            let k = rng.random_range(1..=8);
            let rel = random_instance(&mut rng, n, k);
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..20.0)).collect();
            let table = linear_table(&rel, &w, rng.random_range(0..5));
            for theta in [0.7, 0.9, 1.0] {
                let plan = plan_search(&rel, &table, theta).unwrap();
                let (cost, _) = exhaustive(&rel, &table, theta).unwrap();
                assert_eq!(plan.cost, cost, "instance {t}, theta {theta}");
                assert_eq!(plan.cost, table.total(&plan.positions));
            }
        }
    }

    #[test]
    fn search_handles_non_monotone_costs() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let rel = random_instance(&mut rng, 3, 5);
            let mut table = linear_table(&rel, &[1.0, 1.0, 1.0], 0);
            for row in &mut table.cost {
                for c in row.iter_mut().skip(1) {
                    *c = rng.random_range(1.0..100.0);
                }
            }
            let plan = plan_search(&rel, &table, 0.8).unwrap();
            assert_eq!(plan.cost, exhaustive(&rel, &table, 0.8).unwrap().0);
        }
    }

    #[test]
    fn dp_with_full_sample_matches_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for t in 0..20 {
            let n = 1 + t % 3;
            let k = rng.random_range(1..=8);
            let rel = random_instance(&mut rng, n, k);
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..20.0)).collect();
            let table = linear_table(&rel, &w, 2);
            for theta in [0.7, 0.9, 1.0] {
                let s = plan_search(&rel, &table, theta).unwrap();
                let d = plan_dp(&rel, &table, theta, k, 3, 0).unwrap();
                assert_eq!(s.cost, d.cost, "instance {t}, theta {theta}");
                assert_eq!(d.algorithm, PlanAlgorithm::Dp);
            }
        }
    }

    #[test]
    fn dp_single_index_chain() {
        let rel = RelevantEk::from_ranks(5, [(xd(&[1]), vec![3, 9, 4, 7, 11])]).unwrap();
        let table = linear_table(&rel, &[1.0], 0);
        let plan = plan_dp(&rel, &table, 1.0, 5, 3, 0).unwrap();
        assert_eq!(to_query_plan(&rel, &table, &plan).assignments, [(xd(&[1]), 11)].into());
        let any = plan_dp(&rel, &table, 0.1, 5, 3, 0).unwrap();
        assert!(any.positions.iter().any(|&p| p > 0), "empty plan returned");
    }

    #[test]
    fn dp_sample_coverage_is_sound() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..10 {
            let rel = random_instance(&mut rng, 5, 20);
            let table = linear_table(&rel, &[1.0, 2.0, 3.0, 1.5, 0.5], 1);
            let plan = plan_dp(&rel, &table, 0.8, 5, 3, 1).unwrap();
            assert_eq!(plan.of, 5);
            assert!(plan.covered >= 4);
        }
    }

    #[test]
    fn repair_extends_an_undercovering_plan() {
        // x1 holds items 0..3 at ranks 1..4, x2 holds them in reverse order.
        let rel = RelevantEk::from_ranks(4, [(xd(&[1]), vec![1, 2, 3, 4]), (xd(&[2]), vec![4, 3, 2, 1])]).unwrap();
        let table = linear_table(&rel, &[1.0, 1.0], 0);
        let start = GridPlan {
            positions: vec![1, 0],
            cost: table.total(&[1, 0]),
            covered: 1,
            of: 1,
            algorithm: PlanAlgorithm::Dp,
        };
        let fixed = repair_coverage(&rel, &table, 1.0, &start).unwrap();
        assert_eq!(fixed.covered, 4);
        assert_eq!(fixed.of, 4);
        assert_eq!(fixed.cost, table.total(&fixed.positions));
        let untouched = repair_coverage(&rel, &table, 0.25, &start).unwrap();
        assert_eq!(untouched.positions, vec![1, 0]);
        assert_eq!(untouched.covered, 1);
    }

    #[test]
    fn candidate_filter() {
        let conf: Configuration = [xd(&[1]), xd(&[1, 2]), xd(&[1, 2, 3]), xd(&[2, 4]), xd(&[1, 2, 3, 4, 5]), xd(&[6])]
            .into_iter()
            .collect();
        let q = query_on(&[1, 2, 3, 4, 5]);
        assert_eq!(candidate_indexes(&q, &conf, 2), vec![xd(&[1, 2, 3]), xd(&[1, 2, 3, 4, 5])]);
        assert_eq!(candidate_indexes(&q, &conf, 0), vec![xd(&[1, 2, 3, 4, 5])]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let conf: Configuration = (0..10)
                .map(|_| loop {
                    let bits: Vec<u32> = (1..=6).filter(|_| rng.random_bool(0.4)).collect();
                    if !bits.is_empty() {
                        break xd(&bits);
                    }
                })
                .collect();
            let di = rng.random_range(0..4);
            let expect: Vec<IndexDescriptor> = conf
                .iter()
                .filter(|x| x.vid.ids().all(|id| q.vid().contains(id)) && q.vid().len() - x.vid.len() <= di)
                .copied()
                .collect();
            assert_eq!(candidate_indexes(&q, &conf, di), expect);
        }
    }

    fn query_on(ids: &[u32]) -> Query {
        Query::new(ids.iter().map(|&i| (i, vec![1.0])).collect(), 1, 1.0).unwrap()
    }

    pub(crate) fn flat_models(ds: &Dataset) -> Models {
        let columns = ds
            .columns()
            .iter()
            .map(|c| ColumnFit {
                id: c.id,
                dim: c.dim,
                a: 2.0,
                b: 100.0,
                c: 0.0,
                d: 1.0,
                r2_cost: 1.0,
                r2_recall: 1.0,
            })
            .collect();
        Models::from_columns(ds.num_rows(), columns, StorageModel::default())
    }

    fn random_query(ds: &Dataset, ids: &[u32], k: usize, seed: u64) -> Query {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let row = rng.random_range(0..ds.num_rows());
        let vectors = ids.iter().map(|&id| (id, ds.vector(id, row).to_vec())).collect();
        Query::new(vectors, k, 1.0).unwrap()
    }

    #[test]
    fn planner_relevant_ek_matches_counting() {
        let ds = clustered(300, &[4, 3, 5], 12);
        let models = flat_models(&ds);
        let planner = Planner::new(&ds, &models, 0.9, PlannerParams::default()).unwrap();
        let q = random_query(&ds, &[1, 2, 3], 8, 13);
        let usable = [xd(&[1]), xd(&[2, 3]), xd(&[1, 2, 3])];
        let rel = planner.relevant_ek(0, &q, &usable).unwrap();
        let gt = ground_truth(&q, &ds).unwrap();
        for (i, x) in rel.indexes().enumerate() {
            for &(rank, item) in &rel.entries(i)[1..] {
                let row = gt.ids[item.unwrap()] as usize;
                let s = crate::model::partial_score(&q, x, row, &ds).unwrap();
                let count = 1 + (0..ds.num_rows())
                    .filter(|&r| {
                        let v = crate::model::partial_score(&q, x, r, &ds).unwrap();
                        v > s || (v == s && r < row)
                    })
                    .count();
                assert_eq!(rank, count);
            }
        }
        let at = rel.indexes().position(|x| *x == xd(&[1, 2, 3])).unwrap();
        let exact = rel.entries(at);
        assert!(exact[1..].iter().enumerate().all(|(j, e)| e.0 == j + 1));
    }

    #[test]
    fn planner_dispatch_and_errors() {
        let ds = clustered(400, &[4, 4, 4, 4], 14);
        let models = flat_models(&ds);
        let planner = Planner::new(&ds, &models, 1.0, PlannerParams::default()).unwrap();
        let q = random_query(&ds, &[1, 2, 3, 4], 10, 15);
        let exact: Configuration = [xd(&[1, 2, 3, 4])].into_iter().collect();
        let plan = planner.plan(0, &q, &exact).unwrap();
        assert_eq!(plan.assignments, [(xd(&[1, 2, 3, 4]), 10)].into());
        assert_eq!(plan.estimated_recall, 1.0);
        let far: Configuration = [xd(&[1])].into_iter().collect();
        assert!(matches!(planner.plan(0, &q, &far), Err(Error::InfeasiblePlan(_))));
        let four: Configuration = [xd(&[1, 2]), xd(&[3, 4]), xd(&[1, 3]), xd(&[2, 4])].into_iter().collect();
        assert_eq!(planner.plan(0, &q, &four).unwrap().algorithm, PlanAlgorithm::Dp);
        let three: Configuration = [xd(&[1, 2]), xd(&[3, 4]), xd(&[1, 3])].into_iter().collect();
        assert_eq!(planner.plan(0, &q, &three).unwrap().algorithm, PlanAlgorithm::Search);
    }

    #[test]
    fn planner_cost_matches_plan_cost_formula() {
        let ds = clustered(500, &[6, 4, 5], 16);
        let mut models = flat_models(&ds);
        for c in &mut models.columns {
            c.c = 0.1;
            c.d = 0.4;
        }
        let planner = Planner::new(&ds, &models, 0.9, PlannerParams::default()).unwrap();
        let q = random_query(&ds, &[1, 2, 3], 20, 17);
        let conf: Configuration = [xd(&[1]), xd(&[2]), xd(&[3]), xd(&[1, 2])].into_iter().collect();
        let plan = planner.plan(0, &q, &conf).unwrap();
        let formula = crate::model::plan_cost(q.dim(), &plan.assignments, |x, ek| models.est_cost_idx(x, ek).unwrap());
        assert!((plan.estimated_cost - formula).abs() <= 1e-9 * formula);
        assert!(plan.estimated_recall >= 0.9);
    }

    #[test]
    fn adding_an_index_never_raises_search_cost() {
        let ds = clustered(400, &[4, 4, 4], 18);
        let models = flat_models(&ds);
        let planner = Planner::new(&ds, &models, 0.9, PlannerParams::default()).unwrap();
        let q = random_query(&ds, &[1, 2, 3], 10, 19);
        let mut conf = Configuration::new();
        let mut prev = f64::INFINITY;
        for x in [xd(&[1]), xd(&[2, 3]), xd(&[1, 2, 3])] {
            conf.insert(x);
            let c = planner.plan(0, &q, &conf).unwrap().estimated_cost;
            assert!(c <= prev);
            prev = c;
        }
    }

    #[test]
    fn plan_record_roundtrip() {
        let plan = QueryPlan {
            assignments: [(xd(&[1, 3]), 120), (xd(&[2]), 40)].into(),
            estimated_cost: 1234.5,
            estimated_recall: 0.93,
            algorithm: PlanAlgorithm::Search,
        };
        let rec = PlanRecord::new(4, &plan);
        let json = serde_json::to_string(&rec).unwrap();
        assert_eq!(
            json,
            r#"{"query_id":4,"assignments":[{"vid":[1,3],"ek":120},{"vid":[2],"ek":40}],"est_cost":1234.5,"est_recall":0.93,"algorithm":"search"}"#
        );
        let back: PlanRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back.to_plan(), plan);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn instance() -> impl Strategy<Value = (RelevantEk, Vec<f64>, f64)> {
            (1usize..=3, 1usize..=8).prop_flat_map(|(n, k)| {
                (
                    proptest::collection::vec(proptest::sample::subsequence((1..=40usize).collect::<Vec<_>>(), k).prop_shuffle(), n),
                    proptest::collection::vec(0.5f64..10.0, n),
                    prop_oneof![Just(0.5), Just(0.7), Just(0.9), Just(1.0)],
                )
                    .prop_map(move |(ranks, w, theta)| {
                        let rel = RelevantEk::from_ranks(k, ranks.into_iter().enumerate().map(|(i, r)| (xd(&[i as u32 + 1]), r))).unwrap();
                        (rel, w, theta)
                    })
            })
        }

        proptest! {
            #[test]
            fn returned_plans_cover_enough((rel, w, theta) in instance()) {
                let table = linear_table(&rel, &w, 1);
                let plan = plan_search(&rel, &table, theta).unwrap();
                let need = ((theta * rel.k() as f64) - 1e-9).ceil() as usize;
                prop_assert!(rel.coverage(&plan.positions) >= need);
                prop_assert_eq!(plan.covered, rel.coverage(&plan.positions));
            }

            #[test]
            fn repaired_dp_plans_cover_the_full_ground_truth((rel, w, theta) in instance(), seed in 0u64..100) {
                let table = linear_table(&rel, &w, 1);
                let dp = plan_dp(&rel, &table, theta, 2.min(rel.k()), 2, seed).unwrap();
                let fixed = repair_coverage(&rel, &table, theta, &dp).unwrap();
                let need = ((theta * rel.k() as f64) - 1e-9).ceil() as usize;
                prop_assert!(fixed.covered >= need);
                prop_assert_eq!(fixed.of, rel.k());
                prop_assert!(fixed.positions.iter().zip(&dp.positions).all(|(a, b)| a >= b));
                let (opt, _) = exhaustive(&rel, &table, theta).unwrap();
                prop_assert!(fixed.cost >= opt - 1e-9);
            }
        }
    }
}
