//! DET-LSH: locality-sensitive hashing with dynamic encoding trees.
//!
//! Points are projected into `L` Gaussian spaces of `K` dimensions, each
//! coordinate is encoded against data-driven breakpoints, and every space is
//! indexed by a DE-Tree whose node boxes give lower/upper distance bounds for
//! pruned range queries. c²-k-ANN queries grow a radius geometrically until
//! enough candidates are found, then rerank them exactly. The [`parallel`]
//! module builds and queries the same structures with multiple workers and
//! returns identical results.

pub mod chi2;
pub mod dataset;
pub mod detree;
pub mod encoding;
mod error;
pub mod index;
pub mod io;
pub mod parallel;
pub mod params;
pub mod projection;
pub mod query;

pub use chi2::{chi2_survival, chi2_upper_quantile};
pub use dataset::{euclidean_distance, top_k_by_distance, Dataset, Neighbor, PointId};
pub use detree::{DeTree, LeafHit, LeafRef, NodeCode};
pub use encoding::{Breakpoints, Encoded};
pub use error::{Error, IndexFileError, Result};
pub use index::{DetIndex, IndexConfig};
pub use params::{Preset, QueryParams};
pub use projection::{HashFamily, ProjectedPoint, Projections};
pub use query::{
    c2k_ann, estimate_r_min, rc_ann, CandidateSet, QueryResult, RangeMode, SearchState,
};
