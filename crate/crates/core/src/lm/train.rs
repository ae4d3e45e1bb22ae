use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grad::accumulate_cross_entropy;
use super::optim::{Adam, WarmupSchedule};
use super::{ModelConfig, ModelParameters};
use crate::corpus::{SampleRecord, TokenId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainOptions {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub warmup_fraction: f64,
    /// Seeds both the initialization and the batch order.
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 10,
            learning_rate: 1e-3,
            batch_size: 32,
            warmup_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
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
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub params: ModelParameters,
    /// Mean token cross-entropy of each epoch, measured on each batch before
    /// its update.
    pub trace: Vec<f64>,
}

/// Maximum-likelihood training on the corrected responses of `records`.
pub fn pretrain(records: &[SampleRecord], config: ModelConfig, opts: &TrainOptions) -> Result<PretrainOutcome> {
    let sequences: Vec<(&[TokenId], &[TokenId])> = records
        .iter()
        .map(|r| (r.prompt.as_slice(), r.corrected_response.as_slice()))
        .collect();
    pretrain_sequences(&sequences, config, opts)
}

/// Mini-batch Adam on mean token cross-entropy of `(prompt, response)` pairs.
pub fn pretrain_sequences(
    sequences: &[(&[TokenId], &[TokenId])],
    config: ModelConfig,
    opts: &TrainOptions,
) -> Result<PretrainOutcome> {
    opts.validate()?;
    if sequences.is_empty() {
        return Err(Error::Domain("pretraining corpus is empty".into()));
    }
    let mut params = ModelParameters::init(config, opts.seed)?;
    for (prompt, response) in sequences {
        params.check_tokens(prompt)?;
        params.check_tokens(response)?;
    }
    let steps_per_epoch = sequences.len().div_ceil(opts.batch_size);
    let schedule = WarmupSchedule::new(
        opts.learning_rate,
        steps_per_epoch * opts.epochs,
        opts.warmup_fraction,
    );
    let mut adam = Adam::new(params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..sequences.len()).collect();
    let mut trace = Vec::with_capacity(opts.epochs);
    let mut step = 0;

    for _ in 0..opts.epochs {
        order.shuffle(&mut rng);
        let (mut epoch_nll, mut epoch_tokens) = (0.0, 0usize);
        for batch in order.chunks(opts.batch_size) {
            step += 1;
            let tokens: usize = batch.iter().map(|&i| sequences[i].1.len()).sum();
            if tokens == 0 {
                continue;
            }
            let scale = 1.0 / tokens as f64;
            let parts: Vec<(f64, ModelParameters)> = batch
                .par_iter()
                .map(|&i| {
                    let mut g = params.zeros_like();
                    let (prompt, response) = sequences[i];
                    accumulate_cross_entropy(&params, prompt, response, scale, &mut g).map(|nll| (nll, g))
                })
                .collect::<Result<_>>()?;
            // fixed-order reduction
            let mut grad = params.zeros_like();
            let mut nll = 0.0;
            for (l, g) in &parts {
                nll += l;
                grad.add_scaled(g, 1.0);
            }
            let loss = nll / tokens as f64;
            if !loss.is_finite() || !grad.is_finite() {
                return Err(Error::Divergence { step, loss });
            }
            adam.step(&mut params, &grad, schedule.lr(step));
            epoch_nll += nll;
            epoch_tokens += tokens;
        }
        trace.push(epoch_nll / epoch_tokens.max(1) as f64);
    }
    Ok(PretrainOutcome { params, trace })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> ModelConfig {
        ModelConfig {
            vocab_size: 12,
            context_window: 3,
            embed_dim: 8,
            hidden_dim: 16,
        }
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let prompt = [1u32, 3];
        let resp = [4u32, 5, 2];
        let seqs = [(&prompt[..], &resp[..])];
        let opts = TrainOptions {
            epochs: 0,
            seed: 9,
            ..Default::default()
        };
        let out = pretrain_sequences(&seqs, config(), &opts).unwrap();
        assert_eq!(out.params, ModelParameters::init(config(), 9).unwrap());
        assert!(out.trace.is_empty());
    }

    #[test]
    fn memorizes_a_repeated_sequence() {
        let prompt = [1u32, 3];
        let resp = [4u32, 7, 5, 9, 6, 2];
        let seqs: Vec<(&[TokenId], &[TokenId])> = (0..32).map(|_| (&prompt[..], &resp[..])).collect();
        let opts = TrainOptions {
            epochs: 40,
            learning_rate: 1e-2,
            batch_size: 8,
            ..Default::default()
        };
        let out = pretrain_sequences(&seqs, config(), &opts).unwrap();
        let last = *out.trace.last().unwrap();
        assert!(out.trace.iter().all(|x| x.is_finite()));
        let final_ce = -crate::lm::token_log_probs(&out.params, &prompt, &resp).unwrap().sum() / resp.len() as f64;
        assert!(final_ce < 0.1, "final cross-entropy {final_ce}, last epoch {last}");
    }

    #[test]
    fn deterministic_given_seed() {
        let prompt = [1u32];
        let a = [4u32, 5, 2];
        let b = [6u32, 7, 2];
        let seqs = [(&prompt[..], &a[..]), (&prompt[..], &b[..]), (&prompt[..], &a[..])];
        let opts = TrainOptions {
            epochs: 3,
            batch_size: 2,
            ..Default::default()
        };
        let x = pretrain_sequences(&seqs, config(), &opts).unwrap();
        let y = pretrain_sequences(&seqs, config(), &opts).unwrap();
        assert_eq!(x.params, y.params);
        assert_eq!(x.trace, y.trace);
    }

    #[test]
    fn empty_corpus_and_bad_tokens() {
        assert!(matches!(
            pretrain_sequences(&[], config(), &TrainOptions::default()),
            Err(Error::Domain(_))
        ));
        let p = [1u32];
        let r = [40u32];
        assert!(pretrain_sequences(&[(&p[..], &r[..])], config(), &TrainOptions::default()).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let p = [1u32];
        let r = [4u32, 2];
        let opts = TrainOptions {
            learning_rate: f64::MAX,
            epochs: 5,
            warmup_fraction: 0.0,
            ..Default::default()
        };
        match pretrain_sequences(&[(&p[..], &r[..])], config(), &opts) {
            Err(Error::Divergence { step, .. }) => assert!(step >= 2),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
