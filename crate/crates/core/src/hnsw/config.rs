use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::DistanceMetric;

pub const DEFAULT_M: usize = 16;
pub const DEFAULT_EF_CONSTRUCTION: usize = 200;
pub const DEFAULT_SEED: u64 = 42;

/// Construction parameters of an HNSW graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HnswConfig {
    /// Neighbor cap on layers above 0.
    pub m: usize,
    /// Neighbor cap on layer 0.
    pub m_max0: usize,
    /// Candidate list size while inserting.
    pub ef_construction: usize,
    /// Level multiplier: `level = floor(-ln(u) * ml)`.
    pub ml: f64,
    pub metric: DistanceMetric,
    /// Seed of the level-assignment RNG.
    pub seed: u64,
}

impl HnswConfig {
    /// Defaults: `M = 16`, `Mmax0 = 2M`, `efConstruction = 200`,
    /// `mL = 1/ln(M)`, seed 42.
    pub fn new(metric: DistanceMetric) -> Self {
        HnswParams::default()
            .resolve(metric)
            .expect("default parameters are valid")
    }

    /// Sets `M` and re-derives `Mmax0` and `mL` from it.
    pub fn with_m(mut self, m: usize) -> Self {
        self.m = m;
        self.m_max0 = m.saturating_mul(2);
        self.ml = default_ml(m);
        self
    }

    pub fn with_m_max0(mut self, m_max0: usize) -> Self {
        self.m_max0 = m_max0;
        self
    }

    pub fn with_ef_construction(mut self, ef: usize) -> Self {
        self.ef_construction = ef;
        self
    }

    pub fn with_ml(mut self, ml: f64) -> Self {
        self.ml = ml;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::InvalidConfig(format!("M must be at least 2, got {}", self.m)));
        }
        if self.ef_construction < self.m {
            return Err(Error::InvalidConfig(format!(
                "efConstruction ({}) must be at least M ({})",
                self.ef_construction, self.m
            )));
        }
        if self.m_max0 < self.m {
            return Err(Error::InvalidConfig(format!(
                "Mmax0 ({}) must be at least M ({})",
                self.m_max0, self.m
            )));
        }
        if !(self.ml.is_finite() && self.ml > 0.0) {
            return Err(Error::InvalidConfig(format!("mL must be positive and finite, got {}", self.ml)));
        }
        Ok(())
    }

    /// Neighbor cap for `layer`.
    pub fn max_links(&self, layer: usize) -> usize {
        if layer == 0 {
            self.m_max0
        } else {
            self.m
        }
    }
}

/// User-facing parameter set where everything except the metric may be
/// omitted; [`HnswParams::resolve`] fills in the derived defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HnswParams {
    pub m: Option<usize>,
    pub m_max0: Option<usize>,
    pub ef_construction: Option<usize>,
    pub ml: Option<f64>,
    pub seed: Option<u64>,
}

impl HnswParams {
    pub fn resolve(&self, metric: DistanceMetric) -> Result<HnswConfig> {
        let m = self.m.unwrap_or(DEFAULT_M);
        let config = HnswConfig {
            m,
            m_max0: self.m_max0.unwrap_or(m.saturating_mul(2)),
            ef_construction: self.ef_construction.unwrap_or(DEFAULT_EF_CONSTRUCTION),
            ml: self.ml.unwrap_or_else(|| default_ml(m)),
            metric,
            seed: self.seed.unwrap_or(DEFAULT_SEED),
        };
        config.validate()?;
        Ok(config)
    }
}

fn default_ml(m: usize) -> f64 {
    1.0 / (m as f64).ln()
}
