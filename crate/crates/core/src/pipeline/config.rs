use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{GenerationKnobs, TypeWeights};
use crate::ddpo::{DdpoConfig, ScoreModeName};
use crate::error::{Error, Result};
use crate::lm::{ModelConfig, TrainOptions};

/// Complete description of a reproducible run, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    pub seeds: SeedConfig,
    pub corpus: CorpusConfig,
    pub model: ModelDims,
    pub pretrain: PretrainConfig,
    pub ddpo: DdpoSection,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("runs/default"),
            seeds: SeedConfig::default(),
            corpus: CorpusConfig::default(),
            model: ModelDims::default(),
            pretrain: PretrainConfig::default(),
            ddpo: DdpoSection::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// Every stochastic stage draws from its own named seed. Unset names are
/// derived from `master`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedConfig {
    pub master: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pretrain: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ddpo: Option<u64>,
}

/// Resolved per-stage seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub corpus: u64,
    pub eval: u64,
    pub pretrain: u64,
    pub ddpo: u64,
}

impl SeedConfig {
    pub fn resolve(&self) -> Seeds {
        let derive = |name: &str, explicit: Option<u64>| {
            explicit.unwrap_or_else(|| {
                let digest = Sha256::new()
                    .chain_update(self.master.to_le_bytes())
                    .chain_update(name.as_bytes())
                    .finalize();
                u64::from_le_bytes(digest[..8].try_into().unwrap())
            })
        };
        Seeds {
            corpus: derive("corpus", self.corpus),
            eval: derive("eval", self.eval),
            pretrain: derive("pretrain", self.pretrain),
            ddpo: derive("ddpo", self.ddpo),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub n_train: usize,
    pub n_eval: usize,
    pub hallucination_rate: f64,
    pub style_bias_rate: f64,
    pub noise_rate: f64,
    pub layout_rate: f64,
    pub type_weights: TypeWeights,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        let k = GenerationKnobs::default();
        Self {
            n_train: 1200,
            n_eval: 300,
            hallucination_rate: k.hallucination_rate,
            style_bias_rate: k.style_bias_rate,
            noise_rate: k.noise_rate,
            layout_rate: k.layout_rate,
            type_weights: k.type_weights,
        }
    }
}

impl CorpusConfig {
    pub fn knobs(&self, seed: u64) -> GenerationKnobs {
        GenerationKnobs {
            hallucination_rate: self.hallucination_rate,
            style_bias_rate: self.style_bias_rate,
            noise_rate: self.noise_rate,
            layout_rate: self.layout_rate,
            type_weights: self.type_weights,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelDims {
    pub context_window: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        let c = ModelConfig::new(1);
        Self {
            context_window: c.context_window,
            embed_dim: c.embed_dim,
            hidden_dim: c.hidden_dim,
        }
    }
}

impl ModelDims {
    pub fn with_vocab(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            context_window: self.context_window,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
        }
    }
}

/// Which response of each training record the reference model imitates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PretrainTarget {
    /// The uncorrected responses, so the reference reproduces the behavior
    /// that the corrections address.
    #[default]
    Flawed,
    Corrected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub target: PretrainTarget,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub warmup_fraction: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        let t = TrainOptions::default();
        Self {
            target: PretrainTarget::default(),
            epochs: 20,
            learning_rate: 1e-2,
            batch_size: t.batch_size,
            warmup_fraction: t.warmup_fraction,
        }
    }
}

impl PretrainConfig {
    pub fn options(&self, seed: u64) -> TrainOptions {
        TrainOptions {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            warmup_fraction: self.warmup_fraction,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DdpoSection {
    pub beta: f64,
    pub gamma: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub warmup_fraction: f64,
    pub score_mode: ScoreModeName,
}

impl Default for DdpoSection {
    fn default() -> Self {
        let d = DdpoConfig::default();
        Self {
            beta: d.beta,
            gamma: d.gamma,
            epochs: d.epochs,
            learning_rate: d.learning_rate,
            batch_size: d.batch_size,
            warmup_fraction: d.warmup_fraction,
            score_mode: d.score_mode,
        }
    }
}

impl DdpoSection {
    pub fn config(&self, seed: u64) -> DdpoConfig {
        DdpoConfig {
            beta: self.beta,
            gamma: self.gamma,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            warmup_fraction: self.warmup_fraction,
            score_mode: self.score_mode,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Objects per scene in the scene analysis.
    pub top_k: usize,
    /// Decoding budget in tokens, end-of-sequence included.
    pub max_response_len: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            top_k: 10,
            max_response_len: 40,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes to TOML")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.seeds;
        for seed in [Some(s.master), s.corpus, s.eval, s.pretrain, s.ddpo].into_iter().flatten() {
            if seed > i64::MAX as u64 {
                return Err(Error::Config(format!("seed {seed} exceeds {}", i64::MAX)));
            }
        }
        if self.corpus.n_train == 0 || self.corpus.n_eval == 0 {
            return Err(Error::Config("corpus sizes must be positive".into()));
        }
        self.corpus.knobs(0).validate()?;
        self.model.with_vocab(1).validate()?;
        self.pretrain.options(0).validate()?;
        self.ddpo.config(0).validate()?;
        if self.eval.top_k == 0 || self.eval.max_response_len == 0 {
            return Err(Error::Config("top_k and max_response_len must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical TOML serialization, hex encoded. The output
    /// directory is not part of the experiment and is left out.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.out_dir = PathBuf::new();
        hex::encode(Sha256::digest(canonical.to_toml().as_bytes()))
    }
}
