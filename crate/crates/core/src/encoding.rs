//! Data-driven breakpoints and iSAX symbol encoding.
//!
//! Each projected dimension is cut into `N_r` regions holding roughly equal
//! numbers of points. Breakpoint `z` (1-based, `2 <= z <= N_r`) is the
//! `⌊m/N_r⌋·(z-1)`-th smallest sampled coordinate; the outer breakpoints are
//! the extremes. Interior breakpoints are found with `log2(N_r)` rounds of
//! quickselect, each round splitting the subranges left by the previous one.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::dataset::PointId;
use crate::error::{Error, Result};
use crate::projection::Projections;

pub const DEFAULT_REGIONS: usize = 256;

/// Finds the `q`-th smallest (1-based) element of `values[start..=end]`.
///
/// On return that element sits at `start + q - 1`, everything before it in the
/// range is `<=` and everything after is `>=`.
pub fn quickselect<T: Copy + PartialOrd>(
    values: &mut [T],
    start: usize,
    q: usize,
    end: usize,
) -> Result<T> {
    if end >= values.len() || start > end {
        return Err(Error::param(format!(
            "quickselect range [{start}, {end}] invalid for {} values",
            values.len()
        )));
    }
    if q == 0 || q > end - start + 1 {
        return Err(Error::param(format!(
            "quickselect rank {q} outside 1..={}",
            end - start + 1
        )));
    }
    Ok(select_in_place(values, start, start + q - 1, end))
}

fn select_in_place<T: Copy + PartialOrd>(
    values: &mut [T],
    mut lo: usize,
    target: usize,
    mut hi: usize,
) -> T {
    while lo < hi {
        let pivot = median_of_three(values[lo], values[lo + (hi - lo) / 2], values[hi]);
        let below = partition(&mut values[lo..=hi], |v| v < pivot);
        if target < lo + below {
            // the pivot itself is not below, so this side shrank
            hi = lo + below - 1;
            continue;
        }
        lo += below;
        if below == 0 {
            // pivot is the range minimum: peel off its copies to guarantee progress
            let equal = partition(&mut values[lo..=hi], |v| !(pivot < v));
            if target < lo + equal {
                return pivot;
            }
            lo += equal;
        }
    }
    values[target]
}

/// Branchless Lomuto partition: moves elements satisfying `pred` to the front
/// and returns their count.
// hand-written swap: `slice::swap` plus a separate read measured ~40% slower here
#[inline]
#[allow(clippy::manual_swap)]
fn partition<T: Copy>(values: &mut [T], pred: impl Fn(T) -> bool) -> usize {
    let mut k = 0;
    for i in 0..values.len() {
        let v = values[i];
        values[i] = values[k];
        values[k] = v;
        k += pred(v) as usize;
    }
    k
}

fn median_of_three<T: Copy + PartialOrd>(a: T, b: T, c: T) -> T {
    if a < b {
        if b < c {
            b
        } else if a < c {
            c
        } else {
            a
        }
    } else if a < c {
        a
    } else if b < c {
        c
    } else {
        b
    }
}

/// 1-based ranks of the interior breakpoints `z = 2..=N_r` for `m` values.
///
/// With `m < N_r` the stride `⌊m/N_r⌋` is zero; ranks then fall back to
/// `max(1, ⌊m·(z-1)/N_r⌋)`, which repeats breakpoints instead of collapsing
/// them all onto the minimum.
pub fn breakpoint_ranks(m: usize, regions: usize) -> Vec<usize> {
    let stride = m / regions;
    (2..=regions)
        .map(|z| {
            if stride > 0 {
                stride * (z - 1)
            } else {
                (m * (z - 1) / regions).max(1)
            }
        })
        .collect()
}

fn check_regions(regions: usize) -> Result<()> {
    if !(2..=256).contains(&regions) || !regions.is_power_of_two() {
        return Err(Error::param(format!(
            "N_r must be a power of two in 2..=256, got {regions}"
        )));
    }
    Ok(())
}

/// Selects the `N_r + 1` breakpoints of `coords`, permuting it in place.
pub fn select_breakpoints<T>(coords: &mut [T], regions: usize) -> Result<Vec<f64>>
where
    T: Copy + PartialOrd + Into<f64>,
{
    check_regions(regions)?;
    let m = coords.len();
    if m == 0 {
        return Err(Error::param(
            "cannot select breakpoints from an empty sample",
        ));
    }
    let mut min = coords[0];
    let mut max = coords[0];
    for &v in coords.iter() {
        if v < min {
            min = v;
        }
        if v > max {
            max = v;
        }
    }

    let ranks = breakpoint_ranks(m, regions);
    let mut unique = ranks.clone();
    unique.dedup();
    let mut picked = vec![0.0f64; unique.len()];

    // Each task is a contiguous position range holding exactly the order
    // statistics it owns, plus the slice of wanted ranks inside it. Round z
    // resolves the median wanted rank of each of its 2^{z-1} tasks.
    let mut round = vec![(0usize, m - 1, 0usize, unique.len())];
    while !round.is_empty() {
        let mut next = Vec::with_capacity(round.len() * 2);
        for (lo, hi, first, last) in round {
            let mid = first + (last - first) / 2;
            let pos = unique[mid] - 1;
            picked[mid] = select_in_place(coords, lo, pos, hi).into();
            if first < mid {
                next.push((lo, pos - 1, first, mid));
            }
            if mid + 1 < last {
                next.push((pos + 1, hi, mid + 1, last));
            }
        }
        round = next;
    }

    let mut out = Vec::with_capacity(regions + 1);
    out.push(min.into());
    let mut u = 0;
    for &r in &ranks {
        while unique[u] != r {
            u += 1;
        }
        out.push(picked[u]);
    }
    out.push(max.into());
    Ok(out)
}

/// Symbol of `value` under one dimension's breakpoints.
///
/// A value equal to an interior breakpoint goes to the lower region; values
/// outside the outer breakpoints clamp to the first or last region.
#[inline]
pub fn encode_value(value: f32, breakpoints: &[f64]) -> u8 {
    let interior = &breakpoints[1..breakpoints.len() - 1];
    let v = value as f64;
    interior.partition_point(|&b| b < v) as u8
}

/// Breakpoints for every `(space, dimension)` pair, laid out `[space][dim][z]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Breakpoints {
    spaces: usize,
    proj_dim: usize,
    regions: usize,
    values: Vec<f64>,
}

impl Breakpoints {
    pub fn from_raw(
        spaces: usize,
        proj_dim: usize,
        regions: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        check_regions(regions)?;
        if values.len() != spaces * proj_dim * (regions + 1) {
            return Err(Error::param("breakpoint buffer does not match shape"));
        }
        Ok(Self {
            spaces,
            proj_dim,
            regions,
            values,
        })
    }

    pub fn spaces(&self) -> usize {
        self.spaces
    }

    pub fn proj_dim(&self) -> usize {
        self.proj_dim
    }

    pub fn regions(&self) -> usize {
        self.regions
    }

    /// Bits per symbol, `log2(N_r)`.
    pub fn symbol_bits(&self) -> u8 {
        self.regions.trailing_zeros() as u8
    }

    pub fn get(&self, space: usize, j: usize) -> &[f64] {
        let w = self.regions + 1;
        let start = (space * self.proj_dim + j) * w;
        &self.values[start..start + w]
    }

    pub fn raw(&self) -> &[f64] {
        &self.values
    }
}

/// iSAX symbols of every point in every space, laid out `[space][point][K]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    n: usize,
    proj_dim: usize,
    spaces: usize,
    symbols: Vec<u8>,
}

impl Encoded {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn proj_dim(&self) -> usize {
        self.proj_dim
    }

    pub fn spaces(&self) -> usize {
        self.spaces
    }

    pub fn symbols(&self, space: usize, id: PointId) -> &[u8] {
        let start = (space * self.n + id as usize) * self.proj_dim;
        &self.symbols[start..start + self.proj_dim]
    }

    pub fn raw(&self) -> &[u8] {
        &self.symbols
    }
}

/// Default breakpoint sample size: `⌈0.1n⌉`, at least 1, and all of `n` for
/// datasets no larger than `10·N_r`.
pub fn default_sample_size(n: usize, regions: usize) -> usize {
    if n <= 10 * regions {
        n
    } else {
        n.div_ceil(10).max(1)
    }
}

/// Uniform sample of `sample_size` distinct ids out of `0..n`, sorted ascending.
pub fn sample_for_breakpoints(n: usize, sample_size: usize, seed: u64) -> Result<Vec<PointId>> {
    if sample_size == 0 || sample_size > n {
        return Err(Error::param(format!(
            "sample size must lie in 1..={n}, got {sample_size}"
        )));
    }
    if sample_size == n {
        return Ok((0..n as PointId).collect());
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x5eed_b4ea_4b01_7500);
    let mut ids: Vec<PointId> = sample(&mut rng, n, sample_size)
        .into_iter()
        .map(|i| i as PointId)
        .collect();
    ids.sort_unstable();
    Ok(ids)
}

/// Breakpoints and symbols of one `(space, dimension)` column.
///
/// Breakpoints come from the sampled ids; the outer two are then widened to
/// the full column's extremes so every data point lies inside its region.
pub(crate) fn encode_column(
    projections: &Projections,
    space: usize,
    j: usize,
    sample_ids: &[PointId],
    regions: usize,
) -> Result<(Vec<f64>, Vec<u8>)> {
    let mut sampled = projections.column(space, j, sample_ids);
    let mut bps = select_breakpoints(&mut sampled, regions)?;
    let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
    for v in projections.full_column(space, j) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    bps[0] = bps[0].min(lo as f64);
    let last = bps.len() - 1;
    bps[last] = bps[last].max(hi as f64);
    let symbols = projections
        .full_column(space, j)
        .map(|v| encode_value(v, &bps))
        .collect();
    Ok((bps, symbols))
}

/// Assembles per-column results into [`Breakpoints`] and [`Encoded`].
/// `((space, dim), breakpoints, symbols)` for one column.
pub(crate) type Column = ((usize, usize), Vec<f64>, Vec<u8>);

pub(crate) fn assemble(
    projections: &Projections,
    regions: usize,
    columns: Vec<Column>,
) -> Result<(Breakpoints, Encoded)> {
    let (n, k, l) = (
        projections.len(),
        projections.proj_dim(),
        projections.spaces(),
    );
    let mut values = vec![0.0; l * k * (regions + 1)];
    let mut symbols = vec![0u8; l * n * k];
    for ((space, j), bps, col) in columns {
        let w = regions + 1;
        let start = (space * k + j) * w;
        values[start..start + w].copy_from_slice(&bps);
        for (id, s) in col.into_iter().enumerate() {
            symbols[(space * n + id) * k + j] = s;
        }
    }
    Ok((
        Breakpoints::from_raw(l, k, regions, values)?,
        Encoded {
            n,
            proj_dim: k,
            spaces: l,
            symbols,
        },
    ))
}

/// Selects breakpoints for every column and encodes the whole dataset.
pub fn encode_dataset(
    projections: &Projections,
    regions: usize,
    sample_ids: &[PointId],
) -> Result<(Breakpoints, Encoded)> {
    check_regions(regions)?;
    let mut columns = Vec::with_capacity(projections.spaces() * projections.proj_dim());
    for space in 0..projections.spaces() {
        for j in 0..projections.proj_dim() {
            let (bps, col) = encode_column(projections, space, j, sample_ids, regions)?;
            columns.push(((space, j), bps, col));
        }
    }
    assemble(projections, regions, columns)
}

/// Encodes projected points under existing breakpoints.
pub fn encode_all(projections: &Projections, breakpoints: &Breakpoints) -> Result<Encoded> {
    if projections.spaces() != breakpoints.spaces()
        || projections.proj_dim() != breakpoints.proj_dim()
    {
        return Err(Error::param(
            "projections and breakpoints disagree on (L, K)",
        ));
    }
    let (n, k, l) = (
        projections.len(),
        projections.proj_dim(),
        projections.spaces(),
    );
    let mut symbols = Vec::with_capacity(l * n * k);
    for space in 0..l {
        for p in projections.space(space).chunks_exact(k) {
            symbols.extend(
                p.iter()
                    .enumerate()
                    .map(|(j, &v)| encode_value(v, breakpoints.get(space, j))),
            );
        }
    }
    Ok(Encoded {
        n,
        proj_dim: k,
        spaces: l,
        symbols,
    })
}
