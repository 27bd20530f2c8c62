//! Dataset storage and exact-distance primitives.

use std::cmp::Ordering;
use std::collections::HashSet;

use crate::error::{Error, Result};

/// Stable position of a point inside its [`Dataset`].
pub type PointId = u32;

/// `n` points of dimension `d`, stored row-major as 32-bit reals.
///
/// Point ids are the row positions `0..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    data: Vec<f32>,
}

impl Dataset {
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::param("dataset dimension must be positive"));
        }
        if data.is_empty() {
            return Err(Error::EmptyResult("dataset has no points"));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::Dimension {
                expected: dim,
                found: data.len() % dim,
            });
        }
        if data.len() / dim > PointId::MAX as usize {
            return Err(Error::param("dataset exceeds 2^32 - 1 points"));
        }
        Ok(Self { dim, data })
    }

    /// Builds a dataset from individual rows, checking that every row has the same length.
    pub fn from_rows<I, R>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = R>,
        R: AsRef<[f32]>,
    {
        let mut dim = None;
        let mut data = Vec::new();
        for row in rows {
            let row = row.as_ref();
            match dim {
                None => dim = Some(row.len()),
                Some(d) if d != row.len() => {
                    return Err(Error::Dimension {
                        expected: d,
                        found: row.len(),
                    })
                }
                _ => {}
            }
            data.extend_from_slice(row);
        }
        let dim = dim.ok_or(Error::EmptyResult("dataset has no points"))?;
        Self::new(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn point(&self, id: PointId) -> &[f32] {
        let start = id as usize * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn check_dim(&self, coords: &[f32]) -> Result<()> {
        if coords.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                found: coords.len(),
            });
        }
        Ok(())
    }
}

/// Euclidean distance accumulated in 64-bit precision.
pub fn euclidean_distance(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            found: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::param(
            "cannot measure distance between empty vectors",
        ));
    }
    Ok(distance_unchecked(a, b))
}

#[inline]
pub(crate) fn distance_unchecked(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let diff = x as f64 - y as f64;
            diff * diff
        })
        .sum::<f64>()
        .sqrt()
}

/// A result entry: point id with its exact original-space distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub id: PointId,
    pub distance: f64,
}

impl Neighbor {
    pub fn new(id: PointId, distance: f64) -> Self {
        Self { id, distance }
    }

    /// Ascending distance, ties broken by ascending id.
    pub fn cmp_rank(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then(self.id.cmp(&other.id))
    }
}

/// Keeps the `k` best neighbors of an already deduplicated stream.
pub(crate) fn select_top_k(mut all: Vec<Neighbor>, k: usize) -> Vec<Neighbor> {
    if all.len() > k {
        all.select_nth_unstable_by(k - 1, Neighbor::cmp_rank);
        all.truncate(k);
    }
    all.sort_unstable_by(Neighbor::cmp_rank);
    all
}

/// Ranks deduplicated candidates by exact distance to `query` and returns the best `k`.
pub fn top_k_by_distance(
    query: &[f32],
    candidates: &[PointId],
    dataset: &Dataset,
    k: usize,
) -> Result<Vec<Neighbor>> {
    if k == 0 {
        return Err(Error::param("k must be at least 1"));
    }
    dataset.check_dim(query)?;
    let mut seen = HashSet::with_capacity(candidates.len());
    let mut scored = Vec::with_capacity(candidates.len());
    for &id in candidates {
        if id as usize >= dataset.len() {
            return Err(Error::param(format!("candidate id {id} out of range")));
        }
        if seen.insert(id) {
            scored.push(Neighbor::new(
                id,
                distance_unchecked(query, dataset.point(id)),
            ));
        }
    }
    if scored.is_empty() {
        return Err(Error::EmptyResult("candidate set is empty"));
    }
    Ok(select_top_k(scored, k))
}
