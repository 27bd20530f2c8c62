//! Gaussian (2-stable) projections into `L` spaces of `K` dimensions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::dataset::{Dataset, PointId};
use crate::error::{Error, Result};

/// `L x K` Gaussian projection vectors, each of length `d`.
///
/// Entries are drawn from N(0, 1) with a Box-Muller transform over a ChaCha20
/// stream keyed by `seed`, so `(seed, d, K, L)` fully determines the family.
#[derive(Debug, Clone, PartialEq)]
pub struct HashFamily {
    dim: usize,
    proj_dim: usize,
    spaces: usize,
    seed: u64,
    // [space][proj dim][input dim]
    vectors: Vec<f64>,
}

impl HashFamily {
    pub fn generate(dim: usize, proj_dim: usize, spaces: usize, seed: u64) -> Result<Self> {
        if dim == 0 || proj_dim == 0 || spaces == 0 {
            return Err(Error::param(format!(
                "hash family needs positive d, K, L (got d={dim}, K={proj_dim}, L={spaces})"
            )));
        }
        let len = dim
            .checked_mul(proj_dim)
            .and_then(|x| x.checked_mul(spaces))
            .ok_or_else(|| Error::param("hash family too large"))?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut vectors = Vec::with_capacity(len + 1);
        while vectors.len() < len {
            let (a, b) = box_muller(&mut rng);
            vectors.push(a);
            vectors.push(b);
        }
        vectors.truncate(len);
        Ok(Self {
            dim,
            proj_dim,
            spaces,
            seed,
            vectors,
        })
    }

    pub(crate) fn from_raw(
        dim: usize,
        proj_dim: usize,
        spaces: usize,
        seed: u64,
        vectors: Vec<f64>,
    ) -> Result<Self> {
        if vectors.len() != dim * proj_dim * spaces {
            return Err(Error::param(
                "hash family vector count does not match shape",
            ));
        }
        Ok(Self {
            dim,
            proj_dim,
            spaces,
            seed,
            vectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn proj_dim(&self) -> usize {
        self.proj_dim
    }

    pub fn spaces(&self) -> usize {
        self.spaces
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn raw(&self) -> &[f64] {
        &self.vectors
    }

    /// The projection vector for dimension `j` of space `i`.
    pub fn vector(&self, space: usize, j: usize) -> &[f64] {
        let start = (space * self.proj_dim + j) * self.dim;
        &self.vectors[start..start + self.dim]
    }

    /// Projects `coords` into every space.
    pub fn project(&self, coords: &[f32]) -> Result<ProjectedPoint> {
        if coords.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                found: coords.len(),
            });
        }
        let mut out = vec![0.0; self.spaces * self.proj_dim];
        for (space, chunk) in out.chunks_exact_mut(self.proj_dim).enumerate() {
            self.project_into(space, coords, chunk);
        }
        Ok(ProjectedPoint {
            proj_dim: self.proj_dim,
            coords: out,
        })
    }

    /// Writes the `K` projected coordinates of `coords` in `space` into `out`.
    ///
    /// Dot products accumulate in f64 and are stored as f32; queries and data
    /// go through this same path so a point and its own query project identically.
    #[inline]
    pub(crate) fn project_into(&self, space: usize, coords: &[f32], out: &mut [f32]) {
        for (j, slot) in out.iter_mut().enumerate() {
            let v = self.vector(space, j);
            let dot: f64 = v.iter().zip(coords).map(|(&a, &x)| a * x as f64).sum();
            *slot = dot as f32;
        }
    }

    pub fn project_dataset(&self, dataset: &Dataset) -> Result<Projections> {
        if dataset.dim() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                found: dataset.dim(),
            });
        }
        let n = dataset.len();
        let mut data = vec![0.0f32; self.spaces * n * self.proj_dim];
        for (space, block) in data.chunks_exact_mut(n * self.proj_dim).enumerate() {
            for (row, out) in dataset.rows().zip(block.chunks_exact_mut(self.proj_dim)) {
                self.project_into(space, row, out);
            }
        }
        Ok(Projections {
            n,
            proj_dim: self.proj_dim,
            spaces: self.spaces,
            data,
        })
    }
}

fn box_muller<R: Rng>(rng: &mut R) -> (f64, f64) {
    // u1 in (0, 1] keeps ln finite
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen::<f64>();
    let radius = (-2.0 * u1.ln()).sqrt();
    let theta = std::f64::consts::TAU * u2;
    (radius * theta.cos(), radius * theta.sin())
}

/// A point's coordinates in all `L` projected spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedPoint {
    proj_dim: usize,
    coords: Vec<f32>,
}

impl ProjectedPoint {
    pub fn spaces(&self) -> usize {
        self.coords.len() / self.proj_dim
    }

    pub fn space(&self, i: usize) -> &[f32] {
        &self.coords[i * self.proj_dim..(i + 1) * self.proj_dim]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.coords
    }
}

/// Projected coordinates of a whole dataset, laid out `[space][point][K]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projections {
    n: usize,
    proj_dim: usize,
    spaces: usize,
    data: Vec<f32>,
}

impl Projections {
    pub fn from_raw(n: usize, proj_dim: usize, spaces: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != n * proj_dim * spaces || n == 0 || proj_dim == 0 || spaces == 0 {
            return Err(Error::param("projection buffer does not match shape"));
        }
        Ok(Self {
            n,
            proj_dim,
            spaces,
            data,
        })
    }

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

    pub fn space(&self, i: usize) -> &[f32] {
        let stride = self.n * self.proj_dim;
        &self.data[i * stride..(i + 1) * stride]
    }

    pub(crate) fn space_mut(&mut self) -> std::slice::ChunksExactMut<'_, f32> {
        let stride = self.n * self.proj_dim;
        self.data.chunks_exact_mut(stride)
    }

    pub fn point(&self, space: usize, id: PointId) -> &[f32] {
        let start = (space * self.n + id as usize) * self.proj_dim;
        &self.data[start..start + self.proj_dim]
    }

    /// Coordinate `j` of every point in `space`, gathered for the given ids.
    pub fn column(&self, space: usize, j: usize, ids: &[PointId]) -> Vec<f32> {
        ids.iter().map(|&id| self.point(space, id)[j]).collect()
    }

    pub fn full_column(&self, space: usize, j: usize) -> impl Iterator<Item = f32> + '_ {
        self.space(space)
            .chunks_exact(self.proj_dim)
            .map(move |p| p[j])
    }
}

/// Euclidean distance between two projected coordinate vectors.
#[inline]
pub fn projected_distance(a: &[f32], b: &[f32]) -> f64 {
    crate::dataset::distance_unchecked(a, b)
}
