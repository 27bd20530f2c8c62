//! Multi-worker encoding, index construction and querying.
//!
//! Every entry point here produces output identical to its sequential
//! counterpart: encoding works on disjoint `(space, dimension)` columns,
//! construction stages points per first-layer node and then builds each
//! subtree from id-sorted input, and queries merge per-worker leaf queues
//! into the sequential `(lower bound, leaf)` order.

use std::collections::BTreeMap;
use std::ops::Range;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Barrier, Mutex, OnceLock};
use std::thread;

use crate::dataset::{distance_unchecked, select_top_k, Dataset, Neighbor, PointId};
use crate::detree::{first_layer_key, DeTree, LeafHit, Subtree};
use crate::encoding::{assemble, encode_column, sample_for_breakpoints, Breakpoints, Encoded};
use crate::error::{Error, Result};
use crate::index::{DetIndex, IndexConfig};
use crate::params::QueryParams;
use crate::projection::{HashFamily, Projections};
use crate::query::{c2k_ann_with, Executor, QueryResult};

const STAGING_STRIPES: usize = 64;
// below this many items a step runs inline; results are identical either way
const INLINE_THRESHOLD: usize = 512;

/// Worker and queue counts plus the scope partitioning rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WorkerPlan {
    pub workers: usize,
    pub queues: usize,
}

impl WorkerPlan {
    /// `workers == 0` means all available hardware threads; `queues`
    /// defaults to `max(1, workers / 2)`.
    pub fn new(workers: usize, queues: Option<usize>) -> Result<Self> {
        let workers = if workers == 0 {
            thread::available_parallelism().map_or(1, |n| n.get())
        } else {
            workers
        };
        let queues = queues.unwrap_or((workers / 2).max(1));
        if queues == 0 {
            return Err(Error::param("queue count must be at least 1"));
        }
        Ok(Self { workers, queues })
    }

    pub fn sequential() -> Self {
        Self {
            workers: 1,
            queues: 1,
        }
    }

    /// `(space, dimension)` columns owned by each worker.
    ///
    /// With `N_w <= K` worker `w` owns dimensions `[w·⌊K/N_w⌋, (w+1)·⌊K/N_w⌋)`
    /// in every space and the last worker takes the remainder. With more
    /// workers than dimensions the `K·L` columns are dealt out individually
    /// and surplus workers stay idle.
    pub fn dimension_scopes(&self, proj_dim: usize, spaces: usize) -> Vec<Vec<(usize, usize)>> {
        let w = self.workers;
        if w <= proj_dim {
            let per = proj_dim / w;
            (0..w)
                .map(|wid| {
                    let end = if wid + 1 == w {
                        proj_dim
                    } else {
                        (wid + 1) * per
                    };
                    (wid * per..end)
                        .flat_map(|j| (0..spaces).map(move |s| (s, j)))
                        .collect()
                })
                .collect()
        } else {
            let units: Vec<(usize, usize)> = (0..proj_dim)
                .flat_map(|j| (0..spaces).map(move |s| (s, j)))
                .collect();
            let per = (units.len() / w).max(1);
            (0..w)
                .map(|wid| {
                    let start = (wid * per).min(units.len());
                    let end = if wid + 1 == w {
                        units.len()
                    } else {
                        ((wid + 1) * per).min(units.len())
                    };
                    units[start..end.max(start)].to_vec()
                })
                .collect()
        }
    }

    /// Contiguous point-id ranges, remainder to the last worker.
    pub fn point_scopes(&self, n: usize) -> Vec<Range<usize>> {
        let w = self.workers;
        let per = n / w;
        (0..w)
            .map(|wid| wid * per..if wid + 1 == w { n } else { (wid + 1) * per })
            .collect()
    }
}

/// Projects the dataset with each worker owning a range of points.
pub fn parallel_project(
    family: &HashFamily,
    dataset: &Dataset,
    plan: &WorkerPlan,
) -> Result<Projections> {
    if dataset.dim() != family.dim() {
        return Err(Error::Dimension {
            expected: family.dim(),
            found: dataset.dim(),
        });
    }
    let (n, k, l) = (dataset.len(), family.proj_dim(), family.spaces());
    let mut projections = Projections::from_raw(n, k, l, vec![0.0; n * k * l])?;
    let scopes = plan.point_scopes(n);
    let mut work: Vec<Vec<(usize, usize, &mut [f32])>> =
        (0..scopes.len()).map(|_| Vec::new()).collect();
    for (space, mut block) in projections.space_mut().enumerate() {
        for (wid, range) in scopes.iter().enumerate() {
            let (head, tail) = block.split_at_mut(range.len() * k);
            work[wid].push((space, range.start, head));
            block = tail;
        }
    }
    thread::scope(|scope| {
        for jobs in work {
            scope.spawn(move || {
                for (space, start, out) in jobs {
                    for (offset, chunk) in out.chunks_exact_mut(k).enumerate() {
                        family.project_into(
                            space,
                            dataset.point((start + offset) as PointId),
                            chunk,
                        );
                    }
                }
            });
        }
    });
    Ok(projections)
}

/// Breakpoint selection and encoding with workers owning disjoint columns.
pub fn parallel_encode(
    projections: &Projections,
    regions: usize,
    sample_ids: &[PointId],
    plan: &WorkerPlan,
) -> Result<(Breakpoints, Encoded)> {
    let scopes = plan.dimension_scopes(projections.proj_dim(), projections.spaces());
    let columns = thread::scope(|scope| {
        let handles: Vec<_> = scopes
            .iter()
            .map(|cols| {
                scope.spawn(move || {
                    cols.iter()
                        .map(|&(space, j)| {
                            encode_column(projections, space, j, sample_ids, regions)
                                .map(|(b, s)| ((space, j), b, s))
                        })
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("encoding worker panicked"))
            .collect::<Result<Vec<_>>>()
    })?;
    assemble(
        projections,
        regions,
        columns.into_iter().flatten().collect(),
    )
}

/// Which first-layer nodes (by position in the sorted key list) each worker built, per space.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BuildLog {
    pub claims: Vec<Vec<Vec<usize>>>,
    pub occupied: Vec<usize>,
}

/// Two-phase tree construction per space.
///
/// Phase 1: workers append their point-id range into striped staging buffers
/// keyed by first-layer node. After a barrier the leader publishes the sorted
/// key list; phase 2: workers claim keys through an atomic counter, sort the
/// staged ids and build that subtree alone.
pub fn parallel_build(
    encoded: &Encoded,
    symbol_bits: u8,
    max_size: usize,
    plan: &WorkerPlan,
) -> (Vec<DeTree>, BuildLog) {
    let k = encoded.proj_dim();
    let scopes = plan.point_scopes(encoded.len());
    let mut log = BuildLog::default();
    let mut trees = Vec::with_capacity(encoded.spaces());
    for space in 0..encoded.spaces() {
        let staging: Vec<Mutex<BTreeMap<u64, Vec<PointId>>>> = (0..STAGING_STRIPES)
            .map(|_| Mutex::new(BTreeMap::new()))
            .collect();
        let barrier = Barrier::new(plan.workers);
        let keys: OnceLock<Vec<u64>> = OnceLock::new();
        let next = AtomicUsize::new(0);

        let results: Vec<Vec<(usize, Subtree)>> = thread::scope(|scope| {
            let handles: Vec<_> = scopes
                .iter()
                .cloned()
                .map(|range| {
                    let (staging, barrier, keys, next) = (&staging, &barrier, &keys, &next);
                    scope.spawn(move || {
                        for id in range {
                            let id = id as PointId;
                            let key = first_layer_key(encoded.symbols(space, id), symbol_bits);
                            let stripe = (key % STAGING_STRIPES as u64) as usize;
                            staging[stripe]
                                .lock()
                                .unwrap()
                                .entry(key)
                                .or_default()
                                .push(id);
                        }
                        if barrier.wait().is_leader() {
                            let mut all: Vec<u64> = staging
                                .iter()
                                .flat_map(|s| s.lock().unwrap().keys().copied().collect::<Vec<_>>())
                                .collect();
                            all.sort_unstable();
                            keys.set(all).expect("key list published once");
                        }
                        barrier.wait();
                        let keys = keys.get().expect("key list published before phase 2");
                        let mut built = Vec::new();
                        loop {
                            let idx = next.fetch_add(1, Ordering::Relaxed);
                            let Some(&key) = keys.get(idx) else { break };
                            let stripe = (key % STAGING_STRIPES as u64) as usize;
                            let mut ids = staging[stripe]
                                .lock()
                                .unwrap()
                                .remove(&key)
                                .unwrap_or_default();
                            ids.sort_unstable();
                            let sub = Subtree::build(
                                key,
                                ids.iter().map(|&id| (id, encoded.symbols(space, id))),
                                k,
                                symbol_bits,
                                max_size,
                            );
                            built.push((idx, sub));
                        }
                        built
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("build worker panicked"))
                .collect()
        });

        let occupied = keys.get().map_or(0, Vec::len);
        let mut slots: Vec<Option<Subtree>> = (0..occupied).map(|_| None).collect();
        let mut claims = Vec::with_capacity(results.len());
        for worker in results {
            claims.push(worker.iter().map(|(idx, _)| *idx).collect());
            for (idx, sub) in worker {
                slots[idx] = Some(sub);
            }
        }
        let subtrees = slots
            .into_iter()
            .map(|s| s.expect("every first-layer node claimed"))
            .collect();
        log.claims.push(claims);
        log.occupied.push(occupied);
        trees.push(DeTree::from_subtrees(
            space,
            k,
            symbol_bits,
            max_size,
            subtrees,
        ));
    }
    (trees, log)
}

/// Relaxed range query with workers claiming first-layer subtrees and pushing
/// qualifying leaves to queue `worker % N_q`; the merged queues are sorted by
/// `(lower bound, leaf)`.
pub fn parallel_range_query(
    tree: &DeTree,
    query: &[f32],
    radius: f64,
    breakpoints: &Breakpoints,
    plan: &WorkerPlan,
) -> Vec<LeafHit> {
    let queues: Vec<Mutex<Vec<LeafHit>>> =
        (0..plan.queues).map(|_| Mutex::new(Vec::new())).collect();
    let next = AtomicUsize::new(0);
    let count = tree.subtrees().len();
    thread::scope(|scope| {
        for wid in 0..plan.workers {
            let (queues, next) = (&queues, &next);
            scope.spawn(move || {
                let mut local = Vec::new();
                loop {
                    let idx = next.fetch_add(1, Ordering::Relaxed);
                    if idx >= count {
                        break;
                    }
                    tree.collect_leaves(idx, query, radius, breakpoints, &mut local);
                    if !local.is_empty() {
                        queues[wid % queues.len()]
                            .lock()
                            .unwrap()
                            .append(&mut local);
                    }
                }
            });
        }
    });
    let mut merged: Vec<LeafHit> = queues
        .into_iter()
        .flat_map(|q| q.into_inner().unwrap())
        .collect();
    merged.sort_by(LeafHit::cmp_order);
    merged
}

pub(crate) struct Parallel<'a> {
    plan: &'a WorkerPlan,
}

impl Executor for Parallel<'_> {
    fn leaves(
        &self,
        tree: &DeTree,
        query: &[f32],
        radius: f64,
        breakpoints: &Breakpoints,
    ) -> Vec<LeafHit> {
        parallel_range_query(tree, query, radius, breakpoints, self.plan)
    }

    fn distances(&self, query: &[f32], dataset: &Dataset, ids: &[PointId]) -> Vec<f64> {
        let chunk = ids.len().div_ceil(self.plan.workers).max(1);
        if self.plan.workers == 1 || ids.len() < INLINE_THRESHOLD {
            return ids
                .iter()
                .map(|&id| distance_unchecked(query, dataset.point(id)))
                .collect();
        }
        thread::scope(|scope| {
            let handles: Vec<_> = ids
                .chunks(chunk)
                .map(|part| {
                    scope.spawn(move || {
                        part.iter()
                            .map(|&id| distance_unchecked(query, dataset.point(id)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("distance worker panicked"))
                .collect()
        })
    }

    fn top_k(&self, candidates: &[Neighbor], k: usize) -> Vec<Neighbor> {
        if self.plan.workers == 1 || candidates.len() < INLINE_THRESHOLD {
            return select_top_k(candidates.to_vec(), k);
        }
        let chunk = candidates.len().div_ceil(self.plan.workers);
        let partial: Vec<Neighbor> = thread::scope(|scope| {
            let handles: Vec<_> = candidates
                .chunks(chunk)
                .map(|part| scope.spawn(move || select_top_k(part.to_vec(), k)))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("rerank worker panicked"))
                .collect()
        });
        select_top_k(partial, k)
    }
}

/// c²-k-ANN with parallel leaf gathering, distance computation and reranking.
/// Termination tests run at the same points as the sequential query, so the
/// result is identical.
pub fn parallel_c2k_ann(
    index: &DetIndex,
    query: &[f32],
    k: usize,
    params: &QueryParams,
    plan: &WorkerPlan,
) -> Result<QueryResult> {
    c2k_ann_with(&Parallel { plan }, index, query, k, params)
}

impl DetIndex {
    /// Builds the index with `plan.workers` workers; the result equals [`DetIndex::build`].
    pub fn build_parallel(
        dataset: Dataset,
        config: IndexConfig,
        plan: &WorkerPlan,
    ) -> Result<Self> {
        Ok(Self::build_parallel_logged(dataset, config, plan)?.0)
    }

    pub fn build_parallel_logged(
        dataset: Dataset,
        config: IndexConfig,
        plan: &WorkerPlan,
    ) -> Result<(Self, BuildLog)> {
        config.validate(&dataset)?;
        let family =
            HashFamily::generate(dataset.dim(), config.proj_dim, config.spaces, config.seed)?;
        let projections = parallel_project(&family, &dataset, plan)?;
        let sample = sample_for_breakpoints(
            dataset.len(),
            config.sample_size_for(dataset.len()),
            config.seed,
        )?;
        let (breakpoints, encoded) = parallel_encode(&projections, config.regions, &sample, plan)?;
        let (trees, log) =
            parallel_build(&encoded, breakpoints.symbol_bits(), config.max_leaf, plan);
        Ok((
            Self {
                config,
                family,
                breakpoints,
                trees,
                projections,
                dataset,
            },
            log,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::encode_dataset;
    use crate::query::c2k_ann;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn cloud(n: usize, d: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        Dataset::new(d, (0..n * d).map(|_| rng.gen::<f32>()).collect()).unwrap()
    }

    #[test]
    fn plan_defaults() {
        let p = WorkerPlan::new(8, None).unwrap();
        assert_eq!((p.workers, p.queues), (8, 4));
        assert_eq!(WorkerPlan::new(1, None).unwrap().queues, 1);
        assert!(WorkerPlan::new(0, None).unwrap().workers >= 1);
        assert!(WorkerPlan::new(2, Some(0)).is_err());
    }

    #[test]
    fn dimension_scopes_split_evenly() {
        let p = WorkerPlan::new(8, None).unwrap();
        let scopes = p.dimension_scopes(16, 4);
        assert_eq!(scopes.len(), 8);
        for (wid, s) in scopes.iter().enumerate() {
            assert_eq!(s.len(), 8);
            let mut dims: Vec<usize> = s.iter().map(|&(_, j)| j).collect();
            dims.dedup();
            assert_eq!(dims, vec![2 * wid, 2 * wid + 1]);
        }
        let p = WorkerPlan::new(3, None).unwrap();
        let lens: Vec<usize> = p.dimension_scopes(16, 1).iter().map(Vec::len).collect();
        assert_eq!(lens, vec![5, 5, 6]);
    }

    #[test]
    fn surplus_workers_idle() {
        let p = WorkerPlan::new(10, None).unwrap();
        let scopes = p.dimension_scopes(2, 3);
        assert_eq!(scopes.iter().map(Vec::len).sum::<usize>(), 6);
        assert!(scopes[6..].iter().all(Vec::is_empty));
    }

    #[test]
    fn point_scopes_cover_range() {
        let p = WorkerPlan::new(4, None).unwrap();
        assert_eq!(p.point_scopes(10), vec![0..2, 2..4, 4..6, 6..10]);
        assert_eq!(p.point_scopes(2), vec![0..0, 0..0, 0..0, 0..2]);
    }

    #[test]
    fn encode_matches_sequential() {
        let data = cloud(3000, 12, 1);
        let family = HashFamily::generate(12, 6, 3, 1).unwrap();
        let proj = family.project_dataset(&data).unwrap();
        assert_eq!(
            parallel_project(&family, &data, &WorkerPlan::new(3, None).unwrap()).unwrap(),
            proj
        );
        let ids = sample_for_breakpoints(3000, 300, 1).unwrap();
        let seq = encode_dataset(&proj, 256, &ids).unwrap();
        for w in [1, 2, 4, 8, 20] {
            let plan = WorkerPlan::new(w, None).unwrap();
            assert_eq!(
                parallel_encode(&proj, 256, &ids, &plan).unwrap(),
                seq,
                "workers {w}"
            );
        }
    }

    #[test]
    fn build_matches_sequential_and_claims_once() {
        let config = IndexConfig {
            proj_dim: 6,
            spaces: 2,
            max_leaf: 16,
            seed: 2,
            ..IndexConfig::default()
        };
        let seq = DetIndex::build(cloud(4000, 10, 2), config).unwrap();
        for w in [1, 2, 4, 8] {
            let plan = WorkerPlan::new(w, None).unwrap();
            let (par, log) =
                DetIndex::build_parallel_logged(cloud(4000, 10, 2), config, &plan).unwrap();
            assert_eq!(par.trees, seq.trees, "workers {w}");
            assert_eq!(par.breakpoints, seq.breakpoints);
            for (space, claims) in log.claims.iter().enumerate() {
                let mut all: Vec<usize> = claims.iter().flatten().copied().collect();
                all.sort_unstable();
                assert_eq!(all, (0..log.occupied[space]).collect::<Vec<_>>());
                assert_eq!(log.occupied[space], seq.trees[space].subtrees().len());
            }
        }
    }

    #[test]
    fn range_query_matches_sequential() {
        let config = IndexConfig {
            proj_dim: 8,
            spaces: 1,
            max_leaf: 16,
            seed: 3,
            ..IndexConfig::default()
        };
        let index = DetIndex::build(cloud(1000, 12, 3), config).unwrap();
        let tree = &index.trees[0];
        let mut rng = ChaCha20Rng::seed_from_u64(30);
        for _ in 0..50 {
            let q = index
                .family
                .project(cloud(1, 12, rng.gen()).point(0))
                .unwrap();
            let r = rng.gen_range(0.0..2.0);
            let seq = tree.range_query_relaxed(q.space(0), r, &index.breakpoints);
            for (w, nq) in [(4, 2), (4, 1), (3, 3)] {
                let plan = WorkerPlan::new(w, Some(nq)).unwrap();
                assert_eq!(
                    parallel_range_query(tree, q.space(0), r, &index.breakpoints, &plan),
                    seq
                );
            }
        }
        let far = vec![1e6f32; 8];
        let plan = WorkerPlan::new(4, None).unwrap();
        assert!(parallel_range_query(tree, &far, 1.0, &index.breakpoints, &plan).is_empty());
    }

    #[test]
    fn c2k_matches_sequential() {
        let config = IndexConfig {
            proj_dim: 8,
            spaces: 3,
            max_leaf: 32,
            seed: 4,
            ..IndexConfig::default()
        };
        let index = DetIndex::build(cloud(3000, 16, 4), config).unwrap();
        let params = QueryParams::derive(8, 1.5, 3, 0.2, Some(0.1)).unwrap();
        let queries = cloud(20, 16, 40);
        for q in queries.rows() {
            let seq = c2k_ann(&index, q, 25, &params).unwrap();
            for w in [1, 2, 4, 8] {
                let plan = WorkerPlan::new(w, None).unwrap();
                assert_eq!(
                    parallel_c2k_ann(&index, q, 25, &params, &plan).unwrap(),
                    seq
                );
            }
        }
    }
}
