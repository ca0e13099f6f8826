//! The run configuration shared by every command, and seed derivation.

use serde::{Deserialize, Serialize};

use crate::data::SynthConfig;
use crate::error::Result;
use crate::eval::EvalConfig;
use crate::model::{ModelConfig, OptimConfig, TrainConfig};
use crate::par::ExecMode;
use crate::pipeline::InferenceConfig;
use crate::refine::RefineConfig;
use crate::sampling::SamplerConfig;
use crate::supervision::LossConfig;

/// Every tunable of a run. Missing keys take their defaults; unknown keys are
/// rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Run batch loops on the thread pool.
    pub parallel: bool,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub sampler: SamplerConfig,
    pub refine: RefineConfig,
    pub optim: OptimConfig,
    pub inference: InferenceConfig,
    pub eval: EvalConfig,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            parallel: true,
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            sampler: SamplerConfig::default(),
            refine: RefineConfig::default(),
            optim: OptimConfig::default(),
            inference: InferenceConfig::default(),
            eval: EvalConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn mode(&self) -> ExecMode {
        if self.parallel {
            ExecMode::Parallel
        } else {
            ExecMode::Sequential
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            model: self.model.clone(),
            loss: self.loss.clone(),
            sampler: self.sampler.clone(),
            refine: self.refine.clone(),
            optim: self.optim.clone(),
            mode: self.mode(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        self.inference.validate()?;
        self.synth.validate()
    }
}

/// Mixes `seed` with a path of indices (SplitMix64 finalizer per step), so
/// every epoch, video and stream gets an independent reproducible seed.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    let mut x = seed;
    for &p in path {
        x = x.wrapping_add(0x9E37_79B9_7F4A_7C15) ^ p.wrapping_mul(0xD1B5_4A32_D192_ED03);
        let mut z = x;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        x = z ^ (z >> 31);
    }
    x
}
