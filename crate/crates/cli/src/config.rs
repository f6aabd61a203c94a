//! Run configuration: one TOML document with a section per stage. Every key
//! has a default, so an empty file (or no file) is a valid configuration.

use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use gabor_core::benchmark::{default_lambdas, MATCHED_LEVELS};
use gabor_core::corpus::DeadLeaves;
use gabor_core::fitstats::DEFAULT_BINS;
use gabor_core::gabor::DEFAULT_SCALE;
use gabor_core::{InferenceConfig, LearningConfig, NonparamConfig, PipelineConfig, Variant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Base seed; `--seed` overrides it.
    pub seed: u64,
    pub pipeline: PipelineConfig,
    pub corpus: CorpusConfig,
    pub preprocess: PreprocessConfig,
    pub inference: InferenceConfig,
    pub learning: LearningConfig,
    pub baseline: NonparamConfig,
    pub bench: BenchConfig,
    pub generate: GenerateConfig,
    pub fit: FitConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            pipeline: PipelineConfig::default(),
            corpus: CorpusConfig::default(),
            preprocess: PreprocessConfig::default(),
            inference: InferenceConfig::default(),
            learning: LearningConfig::default(),
            baseline: NonparamConfig::default(),
            bench: BenchConfig::default(),
            generate: GenerateConfig::default(),
            fit: FitConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub count: usize,
    pub leaves: DeadLeaves,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            count: 10,
            leaves: DeadLeaves::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Rows of the training cache.
    pub train_patches: usize,
    /// Rows of the held-out cache used by `bench`.
    pub test_patches: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            train_patches: 20_000,
            test_patches: 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub lambdas: Vec<f64>,
    pub levels: Vec<f64>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            lambdas: default_lambdas(),
            levels: MATCHED_LEVELS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub variant: Variant,
    /// Global amplitude of generated and initial bases.
    pub scale: f64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            variant: Variant::Model3,
            scale: DEFAULT_SCALE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub bins: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig { bins: DEFAULT_BINS }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        self.inference.validate()?;
        self.learning.validate()?;
        self.baseline.validate()?;
        anyhow::ensure!(
            self.preprocess.train_patches > 0,
            "preprocess.train_patches must be positive"
        );
        anyhow::ensure!(
            self.preprocess.test_patches > 0,
            "preprocess.test_patches must be positive"
        );
        anyhow::ensure!(
            !self.bench.lambdas.is_empty(),
            "bench.lambdas must not be empty"
        );
        anyhow::ensure!(
            self.bench
                .lambdas
                .iter()
                .all(|l| *l >= 0.0 && l.is_finite()),
            "bench.lambdas must be finite and non-negative"
        );
        anyhow::ensure!(self.fit.bins > 0, "fit.bins must be positive");
        anyhow::ensure!(
            self.generate.scale.is_finite() && self.generate.scale != 0.0,
            "generate.scale must be finite and non-zero"
        );
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}
