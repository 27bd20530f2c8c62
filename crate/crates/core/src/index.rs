use crate::dataset::Dataset;
use crate::detree::{DeTree, DEFAULT_MAX_LEAF};
use crate::encoding::{
    default_sample_size, encode_dataset, sample_for_breakpoints, Breakpoints, DEFAULT_REGIONS,
};
use crate::error::{Error, Result};
use crate::projection::{HashFamily, Projections};

/// Construction settings for a [`DetIndex`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexConfig {
    /// Projected dimension `K`.
    pub proj_dim: usize,
    /// Number of projected spaces and trees `L`.
    pub spaces: usize,
    /// Regions per dimension `N_r`; a power of two up to 256.
    pub regions: usize,
    pub max_leaf: usize,
    pub seed: u64,
    /// Breakpoint sample size; `None` picks the default for `n`.
    pub sample_size: Option<usize>,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self {
            proj_dim: 16,
            spaces: 4,
            regions: DEFAULT_REGIONS,
            max_leaf: DEFAULT_MAX_LEAF,
            seed: 0,
            sample_size: None,
        }
    }
}

impl IndexConfig {
    pub(crate) fn validate(&self, dataset: &Dataset) -> Result<()> {
        if self.proj_dim == 0 || self.proj_dim > 64 {
            return Err(Error::param(format!(
                "K must lie in 1..=64, got {}",
                self.proj_dim
            )));
        }
        if self.spaces == 0 {
            return Err(Error::param("L must be at least 1"));
        }
        if self.max_leaf == 0 {
            return Err(Error::param("max leaf size must be at least 1"));
        }
        if self.regions < 2 || self.regions > 256 || !self.regions.is_power_of_two() {
            return Err(Error::param(format!(
                "N_r must be a power of two in 2..=256, got {}",
                self.regions
            )));
        }
        if let Some(s) = self.sample_size {
            if s == 0 || s > dataset.len() {
                return Err(Error::param(format!(
                    "sample size {s} outside 1..={}",
                    dataset.len()
                )));
            }
        }
        Ok(())
    }

    pub(crate) fn sample_size_for(&self, n: usize) -> usize {
        self.sample_size
            .unwrap_or_else(|| default_sample_size(n, self.regions))
    }
}

/// A DET-LSH index: hash family, breakpoints, one DE-Tree per projected space,
/// the projected dataset, and the original dataset for exact reranking.
#[derive(Debug, Clone)]
pub struct DetIndex {
    pub(crate) config: IndexConfig,
    pub(crate) family: HashFamily,
    pub(crate) breakpoints: Breakpoints,
    pub(crate) trees: Vec<DeTree>,
    pub(crate) projections: Projections,
    pub(crate) dataset: Dataset,
}

impl DetIndex {
    /// Builds the index on a single thread.
    pub fn build(dataset: Dataset, config: IndexConfig) -> Result<Self> {
        config.validate(&dataset)?;
        let family =
            HashFamily::generate(dataset.dim(), config.proj_dim, config.spaces, config.seed)?;
        let projections = family.project_dataset(&dataset)?;
        let sample = sample_for_breakpoints(
            dataset.len(),
            config.sample_size_for(dataset.len()),
            config.seed,
        )?;
        let (breakpoints, encoded) = encode_dataset(&projections, config.regions, &sample)?;
        let bits = breakpoints.symbol_bits();
        let trees = (0..config.spaces)
            .map(|space| DeTree::build(&encoded, space, bits, config.max_leaf))
            .collect();
        Ok(Self {
            config,
            family,
            breakpoints,
            trees,
            projections,
            dataset,
        })
    }

    pub(crate) fn from_parts(
        config: IndexConfig,
        family: HashFamily,
        breakpoints: Breakpoints,
        trees: Vec<DeTree>,
        dataset: Dataset,
    ) -> Result<Self> {
        let projections = family.project_dataset(&dataset)?;
        Ok(Self {
            config,
            family,
            breakpoints,
            trees,
            projections,
            dataset,
        })
    }

    pub fn config(&self) -> &IndexConfig {
        &self.config
    }

    pub fn family(&self) -> &HashFamily {
        &self.family
    }

    pub fn breakpoints(&self) -> &Breakpoints {
        &self.breakpoints
    }

    pub fn trees(&self) -> &[DeTree] {
        &self.trees
    }

    pub fn projections(&self) -> &Projections {
        &self.projections
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn len(&self) -> usize {
        self.dataset.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dataset.is_empty()
    }
}
