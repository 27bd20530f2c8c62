//! (r,c)-ANN and c²-k-ANN query drivers over a [`DetIndex`].

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::dataset::{distance_unchecked, select_top_k, Dataset, Neighbor, PointId};
use crate::detree::{DeTree, LeafHit, LeafRef};
use crate::encoding::Breakpoints;
use crate::error::{Error, Result};
use crate::index::DetIndex;
use crate::params::QueryParams;
use crate::projection::ProjectedPoint;

/// The three steps a query may spread across workers: leaf gathering,
/// candidate distance materialization and reranking. Implementations must be
/// observably identical to [`Sequential`].
pub(crate) trait Executor {
    fn leaves(
        &self,
        tree: &DeTree,
        query: &[f32],
        radius: f64,
        breakpoints: &Breakpoints,
    ) -> Vec<LeafHit>;
    fn distances(&self, query: &[f32], dataset: &Dataset, ids: &[PointId]) -> Vec<f64>;
    fn top_k(&self, candidates: &[Neighbor], k: usize) -> Vec<Neighbor>;
}

pub(crate) struct Sequential;

impl Executor for Sequential {
    fn leaves(
        &self,
        tree: &DeTree,
        query: &[f32],
        radius: f64,
        breakpoints: &Breakpoints,
    ) -> Vec<LeafHit> {
        tree.range_query_relaxed(query, radius, breakpoints)
    }

    fn distances(&self, query: &[f32], dataset: &Dataset, ids: &[PointId]) -> Vec<f64> {
        ids.iter()
            .map(|&id| distance_unchecked(query, dataset.point(id)))
            .collect()
    }

    fn top_k(&self, candidates: &[Neighbor], k: usize) -> Vec<Neighbor> {
        select_top_k(candidates.to_vec(), k)
    }
}

/// Deduplicated candidates with their exact distances, in insertion order.
#[derive(Debug, Clone, Default)]
pub struct CandidateSet {
    seen: HashSet<PointId>,
    entries: Vec<Neighbor>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, id: PointId) -> bool {
        self.seen.contains(&id)
    }

    pub fn neighbors(&self) -> &[Neighbor] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = PointId> + '_ {
        self.entries.iter().map(|n| n.id)
    }

    /// Counts candidates within `radius` of the query in the original space.
    pub fn count_within(&self, radius: f64) -> usize {
        self.entries.iter().filter(|n| n.distance <= radius).count()
    }

    fn closest(&self) -> Option<Neighbor> {
        self.entries.iter().copied().min_by(Neighbor::cmp_rank)
    }
}

/// How each space's tree is searched.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RangeMode {
    /// Only points whose projected distance is within the radius.
    Exact,
    /// Every entry of each leaf whose lower bound is within the radius,
    /// nearer leaves first.
    Relaxed,
}

/// Per-query state carried across radius rounds.
#[derive(Debug, Clone)]
pub struct SearchState {
    query: Vec<f32>,
    projected: ProjectedPoint,
    candidates: CandidateSet,
    /// Leaves already consumed, per space.
    visited: Vec<HashSet<LeafRef>>,
}

impl SearchState {
    pub fn new(index: &DetIndex, query: &[f32]) -> Result<Self> {
        index.dataset.check_dim(query)?;
        Ok(Self {
            query: query.to_vec(),
            projected: index.family.project(query)?,
            candidates: CandidateSet::default(),
            visited: vec![HashSet::new(); index.trees.len()],
        })
    }

    /// Seeds the candidate set, e.g. to resume from earlier rounds.
    pub fn with_candidates(mut self, index: &DetIndex, ids: &[PointId]) -> Self {
        let fresh: Vec<PointId> = ids
            .iter()
            .copied()
            .filter(|&id| self.candidates.seen.insert(id))
            .collect();
        let dists = Sequential.distances(&self.query, &index.dataset, &fresh);
        self.candidates.entries.extend(
            fresh
                .into_iter()
                .zip(dists)
                .map(|(id, d)| Neighbor::new(id, d)),
        );
        self
    }

    pub fn candidates(&self) -> &CandidateSet {
        &self.candidates
    }

    pub fn projected(&self) -> &ProjectedPoint {
        &self.projected
    }
}

/// Runs the per-space range queries at radius `ε·r` in space order, adding
/// new candidates to `state`. Returns `true` as soon as the candidate count
/// reaches `βn + k` after a space completes.
pub fn collect_candidates(
    index: &DetIndex,
    state: &mut SearchState,
    radius: f64,
    params: &QueryParams,
    k: usize,
    mode: RangeMode,
) -> bool {
    collect_with(&Sequential, index, state, radius, params, k, mode)
}

pub(crate) fn collect_with<E: Executor>(
    exec: &E,
    index: &DetIndex,
    state: &mut SearchState,
    radius: f64,
    params: &QueryParams,
    k: usize,
    mode: RangeMode,
) -> bool {
    let budget = params.candidate_budget(index.len(), k);
    let projected_radius = params.epsilon * radius;
    for (space, tree) in index.trees.iter().enumerate() {
        let q = state.projected.space(space);
        let mut fresh = Vec::new();
        match mode {
            RangeMode::Exact => {
                for id in
                    tree.range_query(q, projected_radius, &index.breakpoints, &index.projections)
                {
                    if state.candidates.seen.insert(id) {
                        fresh.push(id);
                    }
                }
            }
            RangeMode::Relaxed => {
                for hit in exec.leaves(tree, q, projected_radius, &index.breakpoints) {
                    if !state.visited[space].insert(hit.leaf) {
                        continue;
                    }
                    for &id in tree.leaf_ids(hit.leaf) {
                        if state.candidates.seen.insert(id) {
                            fresh.push(id);
                        }
                    }
                }
            }
        }
        let dists = exec.distances(&state.query, &index.dataset, &fresh);
        state.candidates.entries.extend(
            fresh
                .into_iter()
                .zip(dists)
                .map(|(id, d)| Neighbor::new(id, d)),
        );
        if state.candidates.len() as f64 >= budget {
            return true;
        }
    }
    false
}

/// Outcome of a c²-k-ANN query.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    /// Ascending distance, ties by id.
    pub neighbors: Vec<Neighbor>,
    /// Unique candidates examined.
    pub candidates: usize,
    /// Radius rounds executed (1 when the first radius sufficed).
    pub rounds: usize,
}

/// (r,c)-ANN: one pass of exact range queries at radius `ε·r`.
///
/// Returns the closest candidate once `βn + 1` candidates are found, or after
/// all spaces if some candidate lies within `c·r`; otherwise `None`.
pub fn rc_ann(
    index: &DetIndex,
    query: &[f32],
    r: f64,
    params: &QueryParams,
) -> Result<Option<Neighbor>> {
    if !(r > 0.0) {
        return Err(Error::param(format!("radius must be positive, got {r}")));
    }
    let mut state = SearchState::new(index, query)?;
    let early = collect_candidates(index, &mut state, r, params, 1, RangeMode::Exact);
    if early || state.candidates.count_within(params.c * r) >= 1 {
        return Ok(state.candidates.closest());
    }
    Ok(None)
}

/// c²-k-ANN: relaxed range queries with the radius growing by `c` from `r_min`.
pub fn c2k_ann(
    index: &DetIndex,
    query: &[f32],
    k: usize,
    params: &QueryParams,
) -> Result<QueryResult> {
    c2k_ann_with(&Sequential, index, query, k, params)
}

pub(crate) fn c2k_ann_with<E: Executor>(
    exec: &E,
    index: &DetIndex,
    query: &[f32],
    k: usize,
    params: &QueryParams,
) -> Result<QueryResult> {
    let n = index.len();
    if k == 0 || k > n {
        return Err(Error::param(format!("k must lie in 1..={n}, got {k}")));
    }
    let mut state = SearchState::new(index, query)?;
    let mut radius = params.r_min;
    let mut rounds = 0;
    loop {
        rounds += 1;
        let early = collect_with(
            exec,
            index,
            &mut state,
            radius,
            params,
            k,
            RangeMode::Relaxed,
        );
        // once every point is a candidate further rounds cannot change the answer
        if early
            || state.candidates.count_within(params.c * radius) >= k
            || state.candidates.len() == n
        {
            break;
        }
        radius *= params.c;
    }
    Ok(QueryResult {
        neighbors: exec.top_k(state.candidates.neighbors(), k),
        candidates: state.candidates.len(),
        rounds,
    })
}

const R_MIN_GRID_CAP: i32 = 60;
const R_MIN_ANCHOR_PAIRS: usize = 100;

/// Average distance between random dataset pairs divided by `c³`.
pub fn r_min_grid_anchor(index: &DetIndex, c: f64) -> f64 {
    let n = index.len();
    if n < 2 {
        return 1.0;
    }
    let mut rng = ChaCha20Rng::seed_from_u64(index.config.seed ^ 0xa4c4_02d1_9f3e_0001);
    let mut total = 0.0;
    for _ in 0..R_MIN_ANCHOR_PAIRS {
        let a = rng.gen_range(0..n) as PointId;
        let mut b = rng.gen_range(0..n - 1) as PointId;
        if b >= a {
            b += 1;
        }
        total += distance_unchecked(index.dataset.point(a), index.dataset.point(b));
    }
    let avg = total / R_MIN_ANCHOR_PAIRS as f64;
    if avg > 0.0 {
        avg / (c * c * c)
    } else {
        1.0
    }
}

/// Number of unique ids gathered by relaxed queries over all spaces at `ε·r`.
pub(crate) fn relaxed_count(
    index: &DetIndex,
    projected: &ProjectedPoint,
    projected_radius: f64,
    marks: &mut [u32],
    stamp: u32,
) -> usize {
    let mut count = 0;
    for (space, tree) in index.trees.iter().enumerate() {
        for hit in
            tree.range_query_relaxed(projected.space(space), projected_radius, &index.breakpoints)
        {
            for &id in tree.leaf_ids(hit.leaf) {
                let m = &mut marks[id as usize];
                if *m != stamp {
                    *m = stamp;
                    count += 1;
                }
            }
        }
    }
    count
}

/// Picks the initial radius: for each sample query, the smallest grid radius
/// `r₀·c^m` whose relaxed pass at `ε·r` reaches `βn + k` candidates while
/// `r/c` does not; the lower median over the sample queries is returned.
pub fn estimate_r_min<Q: AsRef<[f32]>>(
    index: &DetIndex,
    sample_queries: &[Q],
    params: &QueryParams,
    k: usize,
) -> Result<f64> {
    if sample_queries.is_empty() {
        return Err(Error::param(
            "r_min estimation needs at least one sample query",
        ));
    }
    let n = index.len();
    if k == 0 || k > n {
        return Err(Error::param(format!("k must lie in 1..={n}, got {k}")));
    }
    let anchor = r_min_grid_anchor(index, params.c);
    let budget = params.candidate_budget(n, k);
    let mut marks = vec![0u32; n];
    let mut stamp = 0u32;
    let mut radii = Vec::with_capacity(sample_queries.len());
    for q in sample_queries {
        let q = q.as_ref();
        index.dataset.check_dim(q)?;
        let projected = index.family.project(q)?;
        let mut reaches = |m: i32| {
            stamp += 1;
            let r = anchor * params.c.powi(m);
            relaxed_count(index, &projected, params.epsilon * r, &mut marks, stamp) as f64 >= budget
        };
        let mut m = 0;
        if reaches(0) {
            while reaches(m - 1) {
                m -= 1;
                if m <= -R_MIN_GRID_CAP {
                    return Err(Error::Estimation {
                        cap: R_MIN_GRID_CAP as usize,
                    });
                }
            }
        } else {
            loop {
                m += 1;
                if m > R_MIN_GRID_CAP {
                    return Err(Error::Estimation {
                        cap: R_MIN_GRID_CAP as usize,
                    });
                }
                if reaches(m) {
                    break;
                }
            }
        }
        radii.push(anchor * params.c.powi(m));
    }
    radii.sort_by(f64::total_cmp);
    Ok(radii[(radii.len() - 1) / 2])
}
