//! End-to-end desk-scale harness: synthetic counting tasks, a toy policy,
//! the weighted GRPO train step, the uniform-vs-weighted experiment and
//! the static report artifacts.

mod experiment;
mod fixture;
mod heatmap;
pub mod policy;
mod step;
pub mod task;

pub use experiment::{run_arms, run_experiment, ArmSeries, ArmSpec, ExperimentReport, ExperimentTimings};
pub use fixture::{planted_saliency_fixture, PlantedFixture};
pub use heatmap::render_heatmap;
pub use policy::{Rollout, ToyPolicy, VisualContext};
pub use step::{
    kawhi_train_step, kawhi_train_step_with, weigh_response, ParagraphRow, RegionOverview, ResponseReport,
    ResponseWeights, StageTimings, StepReport, TaskReport,
};
pub use task::{generate_task, generate_task_variant, SyntheticTask, TaskVariant};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::alignment::HeadConfig;
use crate::credit::WeightConfig;
use crate::error::{KawhiError, Result};
use crate::geometry::DEFAULT_PATCH_SIZE;
use crate::grpo::ClipConfig;
use crate::sguf::SgufConfig;

/// How token advantages are modulated in a train step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// Plain GRPO: every token carries `A_g`.
    Uniform,
    /// Saliency-derived paragraph weights.
    Kawhi,
    /// Every paragraph forced to the same weight.
    Constant(f64),
}

/// Run configuration, read from TOML. Top-level keys:
///
/// ```toml
/// group_size = 5
/// learning_rate = 1e-6
/// batch_size = 1
/// max_prompt_length = 1024
/// max_response_length = 2048
/// seed = 0
/// patch_size = 14
/// grid_patches = 8
/// embed_dim = 16
/// eval_tasks = 16
///
/// [sguf]     # structural_saliency_threshold, luminance_threshold, energy_threshold, ...
/// [weights]  # temperature, smoothing, w_min, w_max
/// [heads]    # num_query_heads, num_key_heads, head_dim, critical_heads
/// [clip]     # clip_epsilon, std_epsilon
/// ```
///
/// Missing keys and sections take their defaults; a `[heads]` section must
/// be given in full.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub group_size: usize,
    pub learning_rate: f64,
    /// Prompts per optimizer step.
    pub batch_size: usize,
    pub max_prompt_length: usize,
    pub max_response_length: usize,
    pub seed: u64,
    pub patch_size: usize,
    /// Synthetic images are `grid_patches x grid_patches` patches.
    pub grid_patches: usize,
    pub embed_dim: usize,
    pub eval_tasks: usize,
    pub sguf: SgufConfig,
    pub weights: WeightConfig,
    pub heads: HeadConfig,
    pub clip: ClipConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            group_size: 5,
            learning_rate: 1e-6,
            batch_size: 1,
            max_prompt_length: 1024,
            max_response_length: 2048,
            seed: 0,
            patch_size: DEFAULT_PATCH_SIZE,
            grid_patches: 8,
            embed_dim: 16,
            eval_tasks: 16,
            sguf: SgufConfig::default(),
            weights: WeightConfig::default(),
            heads: HeadConfig::qwen25_vl_7b(),
            clip: ClipConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(KawhiError::invalid(format!(
                "group_size must be at least 2, got {}",
                self.group_size
            )));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(KawhiError::invalid(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.embed_dim == 0 || self.grid_patches == 0 {
            return Err(KawhiError::invalid(
                "batch_size, embed_dim and grid_patches must be positive",
            ));
        }
        let visual = self.grid_patches * self.grid_patches;
        if visual > self.max_prompt_length {
            return Err(KawhiError::invalid(format!(
                "{visual} visual tokens exceed max_prompt_length {}",
                self.max_prompt_length
            )));
        }
        if policy::TEMPLATE.len() > self.max_response_length {
            return Err(KawhiError::invalid(format!(
                "response template needs {} tokens, max_response_length is {}",
                policy::TEMPLATE.len(),
                self.max_response_length
            )));
        }
        self.sguf.validate()?;
        self.weights.validate()?;
        self.heads.validate()?;
        self.clip.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| KawhiError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| KawhiError::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| KawhiError::io(path, e))?;
        Self::from_toml(&text)
    }
}
