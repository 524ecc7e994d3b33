//! The shared run configuration file: one TOML document covering scene
//! generation, training, segmentation and the baseline. Unknown keys are
//! rejected and values are range-checked at load time.

use std::path::Path;

use serde::{Deserialize, Serialize};

use regionformer::infer::SegmentParams;
use regionformer::sim::SceneSpec;
use regionformer::train::TrainConfig;

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub scene: SceneSpec,
    pub simulate: SimulateConfig,
    pub train: TrainConfig,
    pub segment: SegmentParams,
    pub baseline: BaselineConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    /// Number of scenes to generate.
    pub scenes: usize,
    /// Growth examples recorded per scene.
    pub examples_per_scene: usize,
    /// Base seed; scene i uses seed + i, example streams follow.
    pub seed: u64,
    /// Mistake probability used for recorded examples.
    pub theta: f64,
    /// Growth rounds per example are drawn from `0..=max_growth_steps`.
    pub max_growth_steps: usize,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            scenes: 2,
            examples_per_scene: 10,
            seed: 0,
            theta: 0.2,
            max_growth_steps: 20,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub angle_thresh_deg: f64,
    pub curv_thresh: f64,
    pub r_grow: f64,
    pub min_segment: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            angle_thresh_deg: 30.0,
            curv_thresh: 0.05,
            r_grow: regionformer::sim::DEFAULT_R_GROW,
            min_segment: 8,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, String> {
        let config = match path {
            None => Self::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| format!("cannot read config {}: {e}", p.display()))?;
                toml::from_str(&text).map_err(|e| format!("bad config {}: {e}", p.display()))?
            }
        };
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), String> {
        self.train.validate().map_err(|e| e.to_string())?;
        if self.simulate.scenes == 0 {
            return Err("simulate.scenes must be positive".into());
        }
        if !(0.0..=0.5).contains(&self.simulate.theta) {
            return Err("simulate.theta must be in [0, 0.5]".into());
        }
        if self.segment.r_grow <= 0.0 || self.segment.max_iters == 0 {
            return Err("segment.r_grow and segment.max_iters must be positive".into());
        }
        if !(0.0..180.0).contains(&self.baseline.angle_thresh_deg)
            || self.baseline.angle_thresh_deg <= 0.0
        {
            return Err("baseline.angle_thresh_deg must be in (0, 180)".into());
        }
        if self.baseline.r_grow <= 0.0 || self.baseline.curv_thresh < 0.0 {
            return Err("baseline thresholds must be nonnegative, r_grow positive".into());
        }
        Ok(())
    }
}
