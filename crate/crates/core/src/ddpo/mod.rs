//! Dense direct preference optimization.
//!
//! A response is scored as a weighted mean of its token log-probabilities,
//! where tokens of corrected segments weigh `γ` and unchanged tokens weigh 1:
//!
//! ```text
//! s(y|x) = ( Σ_{i∈y_u} log p_i + γ Σ_{i∈y_c} log p_i ) / ( |y_u| + γ|y_c| )
//! ```
//!
//! The pairwise loss is the usual sigmoid preference loss on the score
//! differences against a frozen reference:
//!
//! ```text
//! L = -log σ( β [ (s*(y_w) - s_ref(y_w)) - (s*(y_l) - s_ref(y_l)) ] )
//! ```
//!
//! With `γ = 1` the score is the mean token log-probability. The plain sum
//! (`ScoreMode::Sum`) gives the classic sequence-likelihood objective.

mod train;

use serde::{Deserialize, Serialize};

use crate::corpus::{HallucinationType, SampleRecord, TokenSequence};
use crate::error::{Error, Result};
use crate::lm::{sequence_log_prob, token_log_probs, ModelParameters};
use crate::segdiff::{diff_segments, SegmentAnnotation, SegmentLabel};

pub use train::{mean_preference_loss, mean_reward_margin, train_ddpo, DdpoOutcome, EpochStats};

/// How a response's token log-probabilities are aggregated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScoreMode {
    Sum,
    Mean,
    Weighted { gamma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreModeName {
    Sum,
    Mean,
    #[default]
    Weighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DdpoConfig {
    pub beta: f64,
    pub gamma: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Fraction of optimizer steps with linear learning-rate warm-up.
    pub warmup_fraction: f64,
    pub score_mode: ScoreModeName,
    pub seed: u64,
}

impl Default for DdpoConfig {
    fn default() -> Self {
        Self {
            beta: 0.5,
            gamma: 5.0,
            epochs: 7,
            learning_rate: 1e-3,
            batch_size: 32,
            warmup_fraction: 0.1,
            score_mode: ScoreModeName::Weighted,
            seed: 0,
        }
    }
}

impl DdpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::Config(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.gamma.is_finite() && self.gamma >= 1.0) {
            return Err(Error::Config(format!("gamma must be at least 1, got {}", self.gamma)));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config(format!(
                "warmup fraction {} outside [0, 1]",
                self.warmup_fraction
            )));
        }
        Ok(())
    }

    pub fn mode(&self) -> ScoreMode {
        match self.score_mode {
            ScoreModeName::Sum => ScoreMode::Sum,
            ScoreModeName::Mean => ScoreMode::Mean,
            ScoreModeName::Weighted => ScoreMode::Weighted { gamma: self.gamma },
        }
    }
}

/// A prompt with its corrected (chosen) and flawed (rejected) responses.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferencePair {
    pub prompt: TokenSequence,
    pub chosen: SegmentAnnotation,
    pub rejected: SegmentAnnotation,
    pub types: Vec<HallucinationType>,
}

impl PreferencePair {
    /// Labels both responses of a correction with the token diff.
    pub fn from_record(record: &SampleRecord) -> Self {
        let (rejected, chosen) = diff_segments(&record.flawed_response, &record.corrected_response);
        Self {
            prompt: record.prompt.clone(),
            chosen,
            rejected,
            types: record.hallucination_types.clone(),
        }
    }
}

/// Per-token coefficients of a score. The gradient of the score with
/// respect to `log p_i` is `weights[i] / normalizer`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreWeights {
    pub weights: Vec<f64>,
    pub normalizer: f64,
}

impl ScoreWeights {
    pub fn new(labels: &[SegmentLabel], mode: ScoreMode) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Domain("cannot score an empty response".into()));
        }
        let (weights, normalizer) = match mode {
            ScoreMode::Sum => (vec![1.0; labels.len()], 1.0),
            ScoreMode::Mean => (vec![1.0; labels.len()], labels.len() as f64),
            ScoreMode::Weighted { gamma } => {
                if !(gamma >= 1.0 && gamma.is_finite()) {
                    return Err(Error::Domain(format!("gamma must be at least 1, got {gamma}")));
                }
                let w: Vec<f64> = labels
                    .iter()
                    .map(|l| match l {
                        SegmentLabel::Unchanged => 1.0,
                        SegmentLabel::Corrected => gamma,
                    })
                    .collect();
                let n_c = labels.iter().filter(|&&l| l == SegmentLabel::Corrected).count();
                let n_u = labels.len() - n_c;
                (w, n_u as f64 + gamma * n_c as f64)
            }
        };
        Ok(Self { weights, normalizer })
    }

    pub fn coefficient(&self, i: usize) -> f64 {
        self.weights[i] / self.normalizer
    }

    pub fn apply(&self, log_probs: &[f64]) -> f64 {
        debug_assert_eq!(log_probs.len(), self.weights.len());
        self.weights
            .iter()
            .zip(log_probs)
            .map(|(w, lp)| w * lp)
            .sum::<f64>()
            / self.normalizer
    }
}

/// Weighted segment aggregation of given per-token log-probabilities.
pub fn weighted_aggregate(log_probs: &[f64], labels: &[SegmentLabel], gamma: f64) -> Result<f64> {
    if log_probs.len() != labels.len() {
        return Err(Error::Domain(format!(
            "{} log-probs for {} labels",
            log_probs.len(),
            labels.len()
        )));
    }
    Ok(ScoreWeights::new(labels, ScoreMode::Weighted { gamma })?.apply(log_probs))
}

/// Score of an annotated response under `mode`.
pub fn response_score(
    params: &ModelParameters,
    prompt: &[crate::corpus::TokenId],
    y: &SegmentAnnotation,
    mode: ScoreMode,
) -> Result<f64> {
    let weights = ScoreWeights::new(y.labels(), mode)?;
    let lp = token_log_probs(params, prompt, y.tokens())?;
    Ok(weights.apply(lp.as_slice()))
}

pub fn weighted_score(
    params: &ModelParameters,
    prompt: &[crate::corpus::TokenId],
    y: &SegmentAnnotation,
    gamma: f64,
) -> Result<f64> {
    response_score(params, prompt, y, ScoreMode::Weighted { gamma })
}

/// `log(1 + e^{-z})` without overflow.
pub fn softplus_neg(z: f64) -> f64 {
    if z >= 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

/// `σ(-z)`, the magnitude of `d softplus_neg / dz`.
pub fn sigmoid_neg(z: f64) -> f64 {
    if z >= 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

/// Loss from the four scores of a pair.
pub fn loss_from_scores(beta: f64, policy: (f64, f64), reference: (f64, f64)) -> (f64, f64) {
    let z = beta * ((policy.0 - reference.0) - (policy.1 - reference.1));
    (softplus_neg(z), z)
}

/// Preference loss of one pair with responses scored by `mode`.
pub fn preference_loss(
    policy: &ModelParameters,
    reference: &ModelParameters,
    pair: &PreferencePair,
    beta: f64,
    mode: ScoreMode,
) -> Result<f64> {
    if policy.config() != reference.config() {
        return Err(Error::Domain("policy and reference configurations differ".into()));
    }
    let score = |m: &ModelParameters, y: &SegmentAnnotation| response_score(m, &pair.prompt, y, mode);
    let p = (score(policy, &pair.chosen)?, score(policy, &pair.rejected)?);
    let r = (score(reference, &pair.chosen)?, score(reference, &pair.rejected)?);
    let (loss, _) = loss_from_scores(beta, p, r);
    if !loss.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite preference loss for pair with prompt {:?} (scores {p:?} vs {r:?})",
            pair.prompt
        )));
    }
    Ok(loss)
}

pub fn ddpo_loss(
    policy: &ModelParameters,
    reference: &ModelParameters,
    pair: &PreferencePair,
    cfg: &DdpoConfig,
) -> Result<f64> {
    preference_loss(policy, reference, pair, cfg.beta, ScoreMode::Weighted { gamma: cfg.gamma })
}

/// `β (log π*(y|x) - log π_ref(y|x))`, the reward up to the prompt-only
/// partition term.
pub fn implicit_reward(
    policy: &ModelParameters,
    reference: &ModelParameters,
    prompt: &[crate::corpus::TokenId],
    response: &[crate::corpus::TokenId],
    beta: f64,
) -> Result<f64> {
    Ok(beta * (sequence_log_prob(policy, prompt, response)? - sequence_log_prob(reference, prompt, response)?))
}

/// Like [`implicit_reward`] but with weighted segment scores.
pub fn implicit_reward_dense(
    policy: &ModelParameters,
    reference: &ModelParameters,
    prompt: &[crate::corpus::TokenId],
    y: &SegmentAnnotation,
    beta: f64,
    gamma: f64,
) -> Result<f64> {
    Ok(beta * (weighted_score(policy, prompt, y, gamma)? - weighted_score(reference, prompt, y, gamma)?))
}

/// Ratio of the score's sensitivity to a corrected token's log-probability
/// over its sensitivity to an unchanged token's. Both coefficients share the
/// normalizer, so the ratio is the weight ratio.
pub fn segment_gradient_ratio(
    policy: &ModelParameters,
    prompt: &[crate::corpus::TokenId],
    y: &SegmentAnnotation,
    gamma: f64,
) -> Result<f64> {
    policy.check_tokens(prompt)?;
    policy.check_tokens(y.tokens())?;
    let w = ScoreWeights::new(y.labels(), ScoreMode::Weighted { gamma })?;
    let find = |label| y.labels().iter().position(|&l| l == label);
    match (find(SegmentLabel::Corrected), find(SegmentLabel::Unchanged)) {
        (Some(c), Some(u)) => Ok(w.weights[c] / w.weights[u]),
        _ => Err(Error::Domain(
            "gradient ratio needs at least one corrected and one unchanged token".into(),
        )),
    }
}
