//! Hierarchical navigable-small-world graph index over one or more
//! concatenated columns.
//!
//! Every score evaluated during a search goes through a [`ScoreCounter`], so
//! [`SearchResult::num_dist`] is an exact count rather than an estimate.

mod persist;

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{dot, full_score, Dataset, IndexDescriptor, Query, QueryPlan};

pub use persist::{read_index, write_index, INDEX_MAGIC, INDEX_VERSION};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphParams {
    pub max_degree: usize,
    pub ef_construction: usize,
    /// Floor on the search beam; the beam is `max(ek, min_ef)`.
    pub min_ef: usize,
    pub seed: u64,
}

impl Default for GraphParams {
    fn default() -> Self {
        GraphParams {
            max_degree: 16,
            ef_construction: 200,
            min_ef: 64,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchOptions {
    /// Scan every row when `ek >= num_rows`.
    pub exhaustive_fallback: bool,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            exhaustive_fallback: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    /// Best first.
    pub ids: Vec<u32>,
    pub scores: Vec<f32>,
    /// Exact number of score evaluations made by the search.
    pub num_dist: usize,
}

/// Counts every score evaluation made through it.
pub struct ScoreCounter<'a> {
    query: &'a [f32],
    vectors: &'a [f32],
    dim: usize,
    count: usize,
}

impl<'a> ScoreCounter<'a> {
    fn new(query: &'a [f32], vectors: &'a [f32], dim: usize) -> Self {
        ScoreCounter {
            query,
            vectors,
            dim,
            count: 0,
        }
    }

    #[inline]
    fn score(&mut self, node: u32) -> f32 {
        self.count += 1;
        let start = node as usize * self.dim;
        dot(self.query, &self.vectors[start..start + self.dim])
    }

    pub fn count(&self) -> usize {
        self.count
    }
}

/// Orders by score, then prefers the smaller id.
#[derive(Debug, Clone, Copy)]
struct Scored {
    score: f32,
    id: u32,
}

impl PartialEq for Scored {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Scored {}

impl Ord for Scored {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.id.cmp(&self.id))
    }
}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Epoch-stamped visited set, reusable across layers of one search.
struct Visited {
    marks: Vec<u32>,
    epoch: u32,
}

impl Visited {
    fn new(n: usize) -> Self {
        Visited {
            marks: vec![0; n],
            epoch: 1,
        }
    }

    fn reset(&mut self) {
        self.epoch += 1;
    }

    /// Returns true the first time `id` is seen in the current epoch.
    #[inline]
    fn insert(&mut self, id: u32) -> bool {
        let m = &mut self.marks[id as usize];
        if *m == self.epoch {
            false
        } else {
            *m = self.epoch;
            true
        }
    }
}

#[derive(Debug, Clone)]
pub struct GraphIndex {
    descriptor: IndexDescriptor,
    params: GraphParams,
    /// `layers[level][node]` adjacency; nodes absent from a level have no edges.
    layers: Vec<Vec<Vec<u32>>>,
    entry_point: u32,
    vectors: Vec<f32>,
    dim: usize,
    num_rows: usize,
}

impl GraphIndex {
    /// Builds over the concatenation of `desc`'s columns. Deterministic for a
    /// given `params.seed`.
    pub fn build(ds: &Dataset, desc: IndexDescriptor, params: GraphParams) -> Result<GraphIndex> {
        let dim = desc.dim(ds.schema())?;
        if desc.vid.is_empty() {
            return Err(Error::Build("index has no columns".into()));
        }
        if params.max_degree < 2 || params.ef_construction == 0 {
            return Err(Error::Build(
                "max_degree must be >= 2 and ef_construction >= 1".into(),
            ));
        }
        let vectors = concat_columns(ds, &desc);
        let mut index = GraphIndex {
            descriptor: desc,
            params,
            layers: vec![vec![Vec::new(); ds.num_rows()]],
            entry_point: 0,
            vectors,
            dim,
            num_rows: ds.num_rows(),
        };
        index.insert_all();
        index.ensure_reachable()?;
        Ok(index)
    }

    pub(crate) fn from_parts(
        ds: &Dataset,
        descriptor: IndexDescriptor,
        params: GraphParams,
        layers: Vec<Vec<Vec<u32>>>,
        entry_point: u32,
    ) -> Result<GraphIndex> {
        let dim = descriptor.dim(ds.schema())?;
        Ok(GraphIndex {
            descriptor,
            params,
            layers,
            entry_point,
            vectors: concat_columns(ds, &descriptor),
            dim,
            num_rows: ds.num_rows(),
        })
    }

    pub fn descriptor(&self) -> &IndexDescriptor {
        &self.descriptor
    }

    pub fn params(&self) -> &GraphParams {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_rows(&self) -> usize {
        self.num_rows
    }

    pub fn entry_point(&self) -> u32 {
        self.entry_point
    }

    pub fn layers(&self) -> &[Vec<Vec<u32>>] {
        &self.layers
    }

    fn vector(&self, node: u32) -> &[f32] {
        let s = node as usize * self.dim;
        &self.vectors[s..s + self.dim]
    }

    fn insert_all(&mut self) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.params.seed);
        let level_mult = 1.0 / (self.params.max_degree as f64).ln();
        let mut visited = Visited::new(self.num_rows);
        let mut top_level = 0usize;
        for node in 0..self.num_rows as u32 {
            let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
            let level = (-u.ln() * level_mult).floor() as usize;
            while self.layers.len() <= level {
                self.layers.push(vec![Vec::new(); self.num_rows]);
            }
            if node == 0 {
                self.entry_point = 0;
                top_level = level;
                continue;
            }
            let query = self.vector(node).to_vec();
            let ep = self.entry_point;
            let cur = {
                let mut counter = ScoreCounter::new(&query, &self.vectors, self.dim);
                let mut cur = Scored {
                    score: counter.score(ep),
                    id: ep,
                };
                for l in (level + 1..=top_level).rev() {
                    cur = self.greedy(&mut counter, cur, l);
                }
                cur
            };
            let mut entries = vec![cur];
            for l in (0..=level.min(top_level)).rev() {
                visited.reset();
                let mut counter = ScoreCounter::new(&query, &self.vectors, self.dim);
                let found = self.search_layer(
                    &mut counter,
                    &entries,
                    self.params.ef_construction,
                    l,
                    &mut visited,
                );
                let neighbors = self.select_neighbors(&found, self.params.max_degree);
                self.layers[l][node as usize] = neighbors.clone();
                for &nb in &neighbors {
                    self.link(nb, node, l);
                }
                entries = found;
            }
            if level > top_level {
                top_level = level;
                self.entry_point = node;
            }
        }
        self.layers.truncate(top_level + 1);
    }

    /// Adds `new` to `node`'s list at `level`, pruning with the neighbor heuristic on overflow.
    fn link(&mut self, node: u32, new: u32, level: usize) {
        let max = self.params.max_degree;
        let list = &self.layers[level][node as usize];
        if list.contains(&new) {
            return;
        }
        if list.len() < max {
            self.layers[level][node as usize].push(new);
            return;
        }
        let base = self.vector(node);
        let mut cands: Vec<Scored> = list
            .iter()
            .chain(std::iter::once(&new))
            .map(|&id| Scored {
                score: dot(base, self.vector(id)),
                id,
            })
            .collect();
        cands.sort_by(|a, b| b.cmp(a));
        let kept = self.select_neighbors(&cands, max);
        self.layers[level][node as usize] = kept;
    }

    /// Diversity heuristic: keep a candidate only if it is closer to the base
    /// than to every neighbor already kept (ties count as closer). `cands` is
    /// sorted best first.
    fn select_neighbors(&self, cands: &[Scored], max: usize) -> Vec<u32> {
        let mut kept: Vec<u32> = Vec::with_capacity(max);
        for c in cands {
            if kept.len() >= max {
                break;
            }
            let cv = self.vector(c.id);
            let dominated = kept.iter().any(|&k| dot(cv, self.vector(k)) >= c.score);
            if !dominated {
                kept.push(c.id);
            }
        }
        kept
    }

    fn greedy(&self, counter: &mut ScoreCounter<'_>, start: Scored, level: usize) -> Scored {
        let mut cur = start;
        loop {
            let mut improved = false;
            for &nb in &self.layers[level][cur.id as usize] {
                let cand = Scored {
                    score: counter.score(nb),
                    id: nb,
                };
                if cand > cur {
                    cur = cand;
                    improved = true;
                }
            }
            if !improved {
                return cur;
            }
        }
    }

    /// Beam search within one layer; returns up to `ef` nodes sorted best first.
    fn search_layer(
        &self,
        counter: &mut ScoreCounter<'_>,
        entries: &[Scored],
        ef: usize,
        level: usize,
        visited: &mut Visited,
    ) -> Vec<Scored> {
        let mut candidates: BinaryHeap<Scored> = BinaryHeap::new();
        let mut results: BinaryHeap<std::cmp::Reverse<Scored>> = BinaryHeap::new();
        for &e in entries {
            if visited.insert(e.id) {
                candidates.push(e);
                results.push(std::cmp::Reverse(e));
            }
        }
        while results.len() > ef {
            results.pop();
        }
        while let Some(c) = candidates.pop() {
            let worst = results.peek().expect("non-empty").0;
            if results.len() >= ef && c < worst {
                break;
            }
            for &nb in &self.layers[level][c.id as usize] {
                if !visited.insert(nb) {
                    continue;
                }
                let s = Scored {
                    score: counter.score(nb),
                    id: nb,
                };
                let worst = results.peek().expect("non-empty").0;
                if results.len() < ef || s > worst {
                    candidates.push(s);
                    results.push(std::cmp::Reverse(s));
                    if results.len() > ef {
                        results.pop();
                    }
                }
            }
        }
        let mut out: Vec<Scored> = results.into_iter().map(|r| r.0).collect();
        out.sort_by(|a, b| b.cmp(a));
        out
    }

    /// Makes every node reachable from the entry point on the base layer by
    /// linking stragglers from their most similar reachable node with spare degree.
    fn ensure_reachable(&mut self) -> Result<()> {
        let n = self.num_rows;
        let mut reached = vec![false; n];
        let mut queue = VecDeque::new();
        let mark = |start: u32, reached: &mut Vec<bool>, queue: &mut VecDeque<u32>, layers: &Vec<Vec<Vec<u32>>>| {
            if reached[start as usize] {
                return;
            }
            reached[start as usize] = true;
            queue.push_back(start);
            while let Some(u) = queue.pop_front() {
                for &v in &layers[0][u as usize] {
                    if !reached[v as usize] {
                        reached[v as usize] = true;
                        queue.push_back(v);
                    }
                }
            }
        };
        mark(self.entry_point, &mut reached, &mut queue, &self.layers);
        let mut repaired = 0usize;
        for node in 0..n as u32 {
            if reached[node as usize] {
                continue;
            }
            let nv = self.vector(node);
            let best = (0..n as u32)
                .filter(|&v| reached[v as usize] && self.layers[0][v as usize].len() < self.params.max_degree)
                .map(|v| Scored {
                    score: dot(nv, self.vector(v)),
                    id: v,
                })
                .max()
                .ok_or_else(|| {
                    Error::Build("cannot repair reachability: every reachable node is at max degree".into())
                })?;
            self.layers[0][best.id as usize].push(node);
            if self.layers[0][node as usize].len() < self.params.max_degree
                && !self.layers[0][node as usize].contains(&best.id)
            {
                self.layers[0][node as usize].push(best.id);
            }
            mark(node, &mut reached, &mut queue, &self.layers);
            repaired += 1;
        }
        if repaired > 0 {
            log::debug!("{}: linked {repaired} unreachable nodes", self.descriptor);
        }
        Ok(())
    }

    /// Number of base-layer nodes reachable from the entry point.
    pub fn reachable_count(&self) -> usize {
        let mut seen = vec![false; self.num_rows];
        let mut queue = VecDeque::from([self.entry_point]);
        seen[self.entry_point as usize] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &self.layers[0][u as usize] {
                if !seen[v as usize] {
                    seen[v as usize] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count
    }

    pub fn search(&self, query: &[f32], ek: usize) -> Result<SearchResult> {
        self.search_with(query, ek, SearchOptions::default())
    }

    /// Top-`ek` rows by dot product with `query` (the partial score).
    pub fn search_with(&self, query: &[f32], ek: usize, opts: SearchOptions) -> Result<SearchResult> {
        if query.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: query.len(),
            });
        }
        if ek == 0 {
            return Err(Error::InvalidInput("ek must be positive".into()));
        }
        let mut counter = ScoreCounter::new(query, &self.vectors, self.dim);
        let mut found = if opts.exhaustive_fallback && ek >= self.num_rows {
            let mut all: Vec<Scored> = (0..self.num_rows as u32)
                .map(|id| Scored {
                    score: counter.score(id),
                    id,
                })
                .collect();
            all.sort_by(|a, b| b.cmp(a));
            all
        } else {
            let ef = ek.max(self.params.min_ef);
            let ep = self.entry_point;
            let mut cur = Scored {
                score: counter.score(ep),
                id: ep,
            };
            for l in (1..self.layers.len()).rev() {
                cur = self.greedy(&mut counter, cur, l);
            }
            let mut visited = Visited::new(self.num_rows);
            self.search_layer(&mut counter, &[cur], ef, 0, &mut visited)
        };
        found.truncate(ek);
        Ok(SearchResult {
            ids: found.iter().map(|s| s.id).collect(),
            scores: found.iter().map(|s| s.score).collect(),
            num_dist: counter.count(),
        })
    }
}

fn concat_columns(ds: &Dataset, desc: &IndexDescriptor) -> Vec<f32> {
    let dim: usize = desc.vid.ids().map(|id| ds.vector(id, 0).len()).sum();
    let mut out = Vec::with_capacity(ds.num_rows() * dim);
    for row in 0..ds.num_rows() {
        ds.concat_row(desc.vid, row, &mut out);
    }
    out
}

/// Outcome of running a plan against built indexes.
#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    /// Final top-k after reranking, best first.
    pub ids: Vec<u32>,
    pub scores: Vec<f32>,
    /// Ids retrieved from each index scan, in assignment order.
    pub retrieved: Vec<Vec<u32>>,
    pub num_dist: Vec<usize>,
    /// Size of the candidate multiset before deduplication.
    pub candidates: usize,
    /// Σ dim_i · numDist_i + q.dim · Σ retrieved_i.
    pub measured_cost: f64,
}

/// Scans each assigned index for its ek, reranks the deduplicated union by
/// full score and keeps the top k (score descending, id ascending).
pub fn execute_plan(
    q: &Query,
    plan: &QueryPlan,
    indexes: &HashMap<IndexDescriptor, GraphIndex>,
    ds: &Dataset,
) -> Result<Execution> {
    let mut retrieved = Vec::with_capacity(plan.assignments.len());
    let mut num_dist = Vec::with_capacity(plan.assignments.len());
    let mut scan_cost = 0.0;
    let mut candidates = 0usize;
    for (x, &ek) in &plan.assignments {
        if !x.usable_for(q) {
            return Err(Error::UnusableIndex {
                index: x.vid.to_string(),
                query: q.vid().to_string(),
            });
        }
        let index = indexes
            .get(x)
            .ok_or_else(|| Error::MissingIndex(x.vid.to_string()))?;
        let res = index.search(&q.concat(x.vid)?, ek)?;
        scan_cost += index.dim() as f64 * res.num_dist as f64;
        candidates += res.ids.len();
        num_dist.push(res.num_dist);
        retrieved.push(res.ids);
    }
    let mut union: Vec<u32> = retrieved.iter().flatten().copied().collect();
    union.sort_unstable();
    union.dedup();
    let mut reranked = union
        .into_iter()
        .map(|id| Ok((full_score(q, id as usize, ds)?, id)))
        .collect::<Result<Vec<_>>>()?;
    reranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    reranked.truncate(q.k);
    Ok(Execution {
        ids: reranked.iter().map(|r| r.1).collect(),
        scores: reranked.iter().map(|r| r.0).collect(),
        retrieved,
        num_dist,
        candidates,
        measured_cost: scan_cost + q.dim() as f64 * candidates as f64,
    })
}
