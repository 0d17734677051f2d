//! Resolved settings of one run, shared by every command.

use serde::{Deserialize, Serialize};

use crate::descriptor::DEFAULT_COARSE_FACTOR;
use crate::error::{Error, Result};
use crate::eval::{SensitivityConfig, ThresholdSweep};
use crate::matcher::{RetrievalConfig, ScoreMode};
use crate::radon::DEFAULT_N_THETA;
use crate::warp::GridSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Cartesian grid side in pixels (odd).
    pub side_pixels: usize,
    pub meters_per_pixel: f64,
    pub n_theta: usize,
    pub coarse_factor: usize,
    pub coarse_top_k: usize,
    pub neighbor_window: usize,
    pub exclusion_window: usize,
    pub keyframe_stride: usize,
    /// Two frames closer than this are the same place.
    pub boundary_m: f64,
    pub thresholds: ThresholdSweep,
    pub score_mode: ScoreMode,
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let grid = GridSpec::default();
        let retrieval = RetrievalConfig::default();
        Self {
            side_pixels: grid.side_pixels,
            meters_per_pixel: grid.meters_per_pixel,
            n_theta: DEFAULT_N_THETA,
            coarse_factor: DEFAULT_COARSE_FACTOR,
            coarse_top_k: retrieval.coarse_top_k,
            neighbor_window: retrieval.neighbor_window,
            exclusion_window: retrieval.exclusion_window,
            keyframe_stride: retrieval.keyframe_stride,
            boundary_m: 20.0,
            thresholds: ThresholdSweep::default(),
            score_mode: ScoreMode::Raw,
            seed: 0,
            workers: 0,
        }
    }
}

impl RunConfig {
    pub fn grid(&self) -> GridSpec {
        GridSpec {
            side_pixels: self.side_pixels,
            meters_per_pixel: self.meters_per_pixel,
        }
    }

    pub fn retrieval(&self, causal: bool) -> RetrievalConfig {
        RetrievalConfig {
            coarse_factor: self.coarse_factor,
            coarse_top_k: self.coarse_top_k,
            neighbor_window: self.neighbor_window,
            exclusion_window: self.exclusion_window,
            keyframe_stride: self.keyframe_stride,
            causal,
            score_mode: self.score_mode,
        }
    }

    pub fn sensitivity(&self) -> SensitivityConfig {
        SensitivityConfig {
            crop_side: self.side_pixels,
            meters_per_pixel: self.meters_per_pixel,
            n_theta: self.n_theta,
            score_mode: self.score_mode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid().validate()?;
        self.retrieval(false).validate()?;
        if self.n_theta == 0 {
            return Err(Error::Parameter("n_theta must be positive".into()));
        }
        if !(self.boundary_m.is_finite() && self.boundary_m > 0.0) {
            return Err(Error::Parameter("boundary_m must be positive".into()));
        }
        self.thresholds.thresholds(1.0).map(|_| ())
    }

    /// Runs `f` on a pool of `workers` threads.
    pub fn install<T: Send>(&self, f: impl FnOnce() -> T + Send) -> Result<T> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::Parameter(format!("cannot start {} workers: {e}", self.workers)))?;
        Ok(pool.install(f))
    }
}
