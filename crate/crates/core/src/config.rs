//! Engine configuration shared by the single-scale engine and the pyramid.

use serde::Serialize;

use crate::error::{FlowError, Result};
use crate::features::FeatureConfig;
use crate::tensor::SeedSet;

/// How seed candidates are scored each iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PropagationMode {
    /// Shift the flow per seed, then warp the target per seed.
    Propagate,
    /// Warp pre-shifted target stacks, then shift the warped stack back.
    /// Scores equal [`PropagationMode::Propagate`] on interior pixels.
    InverseExact,
    /// Warp pre-shifted target stacks and correlate directly, skipping the
    /// final shift.
    InverseApprox,
}

impl PropagationMode {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "propagate" => Ok(Self::Propagate),
            "inverse-exact" => Ok(Self::InverseExact),
            "inverse-approx" => Ok(Self::InverseApprox),
            other => Err(FlowError::param(format!("unknown propagation mode '{other}'"))),
        }
    }

    pub fn is_inverse(self) -> bool {
        !matches!(self, Self::Propagate)
    }
}

/// Dimensionality of local and random search.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchMode {
    /// Square `(2r+1)^2` window.
    Flow2d,
    /// Horizontal `2r+1` window; vertical flow stays at its initial value.
    Stereo1d,
}

impl SearchMode {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "flow2d" => Ok(Self::Flow2d),
            "stereo1d" => Ok(Self::Stereo1d),
            other => Err(FlowError::param(format!("unknown search mode '{other}'"))),
        }
    }
}

/// Classic exponentially shrinking random search, off by default.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RandomSearchConfig {
    pub initial_radius: f32,
    pub decay: f32,
    pub steps: usize,
}

impl Default for RandomSearchConfig {
    fn default() -> Self {
        Self {
            initial_radius: 8.0,
            decay: 0.5,
            steps: 4,
        }
    }
}

/// One pyramid level: features are pooled by `factor`, then the engine runs
/// `iterations` rounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Level {
    pub factor: usize,
    pub iterations: usize,
}

/// Coarse-to-fine list of levels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PyramidSchedule {
    levels: Vec<Level>,
}

impl PyramidSchedule {
    /// Factors must be strictly decreasing, each must divide the one before
    /// it, and the last must be `>= 1`.
    pub fn new(levels: Vec<Level>) -> Result<Self> {
        if levels.is_empty() {
            return Err(FlowError::param("pyramid schedule needs at least one level"));
        }
        for (i, l) in levels.iter().enumerate() {
            if l.factor == 0 {
                return Err(FlowError::param("pyramid factors must be >= 1"));
            }
            if l.iterations == 0 {
                return Err(FlowError::param("every level needs at least one iteration"));
            }
            if i > 0 {
                let prev = levels[i - 1].factor;
                if l.factor >= prev || !prev.is_multiple_of(l.factor) {
                    return Err(FlowError::param(format!(
                        "factor {} cannot follow {prev}: factors must strictly decrease and divide",
                        l.factor
                    )));
                }
            }
        }
        Ok(Self { levels })
    }

    /// Same iteration count on every level.
    pub fn from_factors(factors: &[usize], iterations: usize) -> Result<Self> {
        Self::new(factors.iter().map(|&factor| Level { factor, iterations }).collect())
    }

    /// Parses `"4,1"` style factor lists.
    pub fn parse(spec: &str, iterations: usize) -> Result<Self> {
        let factors = spec
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| FlowError::param(format!("bad pyramid factor '{s}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_factors(&factors, iterations)
    }

    /// Factors (16, 4), the resolutions a learned quarter-resolution encoder
    /// would operate at.
    pub fn quarter_resolution(iterations: usize) -> Self {
        Self::from_factors(&[16, 4], iterations).expect("static schedule")
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn coarsest_factor(&self) -> usize {
        self.levels[0].factor
    }

    pub fn finest_factor(&self) -> usize {
        self.levels[self.levels.len() - 1].factor
    }

    pub fn factors(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.factor).collect()
    }
}

impl Default for PyramidSchedule {
    /// Factors (4, 1) with 6 iterations per level.
    fn default() -> Self {
        Self::from_factors(&[4, 1], 6).expect("static schedule")
    }
}

/// Everything the engine needs for one run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EngineConfig {
    pub seeds: SeedSet,
    /// Local search radius in pixels of the current level.
    pub radius: usize,
    /// Iterations for single-scale runs; pyramid levels carry their own.
    pub iterations: usize,
    pub propagation: PropagationMode,
    pub search: SearchMode,
    /// 3x3 median filter on the flow after every iteration.
    pub median_filter: bool,
    pub random_search: Option<RandomSearchConfig>,
    /// Random initialization range in pixels of the coarsest level.
    pub init_range: f32,
    pub rng_seed: u64,
    pub schedule: PyramidSchedule,
    pub features: FeatureConfig,
    /// L2-normalize descriptors before correlation.
    pub normalize: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            seeds: SeedSet::diag4(),
            radius: 2,
            iterations: 6,
            propagation: PropagationMode::InverseApprox,
            search: SearchMode::Flow2d,
            median_filter: false,
            random_search: None,
            init_range: 8.0,
            rng_seed: 0,
            schedule: PyramidSchedule::default(),
            features: FeatureConfig::default(),
            normalize: true,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.radius < 1 {
            return Err(FlowError::param("search radius must be >= 1"));
        }
        if self.iterations < 1 {
            return Err(FlowError::param("iterations must be >= 1"));
        }
        if !(self.init_range > 0.0 && self.init_range.is_finite()) {
            return Err(FlowError::param("initialization range must be positive"));
        }
        if self.propagation.is_inverse() && !self.seeds.is_symmetric() {
            return Err(FlowError::param(
                "inverse propagation needs a seed set closed under negation",
            ));
        }
        if let Some(rs) = &self.random_search {
            if rs.initial_radius < 1.0 || !(rs.decay > 0.0 && rs.decay < 1.0) || rs.steps < 1 {
                return Err(FlowError::param("invalid random search parameters"));
            }
        }
        Ok(())
    }

    /// Copy with a different iteration count.
    pub fn with_iterations(&self, iterations: usize) -> Self {
        Self {
            iterations,
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_validation() {
        assert!(PyramidSchedule::from_factors(&[4, 1], 6).is_ok());
        assert!(PyramidSchedule::from_factors(&[16, 4], 6).is_ok());
        assert!(PyramidSchedule::from_factors(&[1, 4], 6).is_err());
        assert!(PyramidSchedule::from_factors(&[4, 4], 6).is_err());
        assert!(PyramidSchedule::from_factors(&[6, 4], 6).is_err());
        assert!(PyramidSchedule::from_factors(&[4, 0], 6).is_err());
        assert!(PyramidSchedule::from_factors(&[], 6).is_err());
        assert!(PyramidSchedule::from_factors(&[2], 0).is_err());
        assert_eq!(PyramidSchedule::parse("8, 2,1", 3).unwrap().factors(), vec![8, 2, 1]);
        assert!(PyramidSchedule::parse("8,x", 3).is_err());
    }

    #[test]
    fn default_config_is_valid() {
        let cfg = EngineConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.iterations, 6);
        assert_eq!(cfg.radius, 2);
        assert_eq!(cfg.schedule.factors(), vec![4, 1]);
        assert!(cfg.random_search.is_none());
    }

    #[test]
    fn inverse_requires_symmetric_seeds() {
        let cfg = EngineConfig {
            seeds: SeedSet::new(vec![crate::tensor::Offset::new(1, 1)]).unwrap(),
            ..EngineConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = EngineConfig {
            propagation: PropagationMode::Propagate,
            ..cfg
        };
        assert!(cfg.validate().is_ok());
    }
}
