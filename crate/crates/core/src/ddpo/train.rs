use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{implicit_reward, preference_loss, response_score, DdpoConfig, PreferencePair};
use crate::error::{Error, Result};
use crate::lm::grad::preference_grad;
use crate::lm::optim::{Adam, WarmupSchedule};
use crate::lm::ModelParameters;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean pair loss over the epoch, each batch measured before its update.
    pub mean_loss: f64,
    /// Mean implicit-reward margin (chosen minus rejected) after the epoch.
    pub mean_margin: f64,
}

#[derive(Debug, Clone)]
pub struct DdpoOutcome {
    pub policy: ModelParameters,
    pub trace: Vec<EpochStats>,
}

/// Mean preference loss of `policy` over `pairs` under the configured score.
pub fn mean_preference_loss(
    policy: &ModelParameters,
    reference: &ModelParameters,
    pairs: &[PreferencePair],
    cfg: &DdpoConfig,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Domain("no preference pairs".into()));
    }
    let losses: Vec<f64> = pairs
        .par_iter()
        .map(|p| preference_loss(policy, reference, p, cfg.beta, cfg.mode()))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / pairs.len() as f64)
}

/// Mean of `r(x, y_w) - r(x, y_l)` with the sequence-likelihood reward.
pub fn mean_reward_margin(
    policy: &ModelParameters,
    reference: &ModelParameters,
    pairs: &[PreferencePair],
    beta: f64,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Domain("no preference pairs".into()));
    }
    let margins: Vec<f64> = pairs
        .par_iter()
        .map(|p| {
            let w = implicit_reward(policy, reference, &p.prompt, p.chosen.tokens(), beta)?;
            let l = implicit_reward(policy, reference, &p.prompt, p.rejected.tokens(), beta)?;
            Ok(w - l)
        })
        .collect::<Result<_>>()?;
    Ok(margins.iter().sum::<f64>() / pairs.len() as f64)
}

/// Trains a policy initialized from `reference`; the reference is never
/// modified.
pub fn train_ddpo(
    reference: &ModelParameters,
    pairs: &[PreferencePair],
    cfg: &DdpoConfig,
) -> Result<DdpoOutcome> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::Domain("no preference pairs".into()));
    }
    let no_op = pairs
        .iter()
        .filter(|p| p.rejected.counts().corrected_tokens == 0)
        .count();
    if no_op > 0 {
        warn!("{no_op} pair(s) have no corrected tokens in the rejected response");
    }
    let mode = cfg.mode();
    let reference_scores: Vec<(f64, f64)> = pairs
        .par_iter()
        .map(|p| {
            Ok((
                response_score(reference, &p.prompt, &p.chosen, mode)?,
                response_score(reference, &p.prompt, &p.rejected, mode)?,
            ))
        })
        .collect::<Result<_>>()?;

    let mut policy = reference.clone();
    let steps_per_epoch = pairs.len().div_ceil(cfg.batch_size);
    let schedule = WarmupSchedule::new(
        cfg.learning_rate,
        steps_per_epoch * cfg.epochs,
        cfg.warmup_fraction,
    );
    let mut adam = Adam::new(policy.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut step = 0;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            step += 1;
            let parts: Vec<(f64, ModelParameters)> = batch
                .par_iter()
                .map(|&i| {
                    let mut g = policy.zeros_like();
                    preference_grad(&policy, &pairs[i], reference_scores[i], cfg.beta, mode, &mut g)
                        .map(|l| (l, g))
                        .map_err(|e| match e {
                            Error::Numeric(msg) => Error::Numeric(format!("pair {i}: {msg}")),
                            other => other,
                        })
                })
                .collect::<Result<_>>()?;
            let mut grad = policy.zeros_like();
            let mut batch_loss = 0.0;
            for (l, g) in &parts {
                batch_loss += l;
                grad.add_scaled(g, 1.0);
            }
            let n = batch.len() as f64;
            grad.scale(1.0 / n);
            if !batch_loss.is_finite() || !grad.is_finite() {
                return Err(Error::Divergence {
                    step,
                    loss: batch_loss / n,
                });
            }
            adam.step(&mut policy, &grad, schedule.lr(step));
            loss_sum += batch_loss;
        }
        let mean_loss = loss_sum / pairs.len() as f64;
        let mean_margin = mean_reward_margin(&policy, reference, pairs, cfg.beta)?;
        if !mean_margin.is_finite() {
            return Err(Error::Divergence {
                step,
                loss: mean_loss,
            });
        }
        trace.push(EpochStats {
            epoch,
            mean_loss,
            mean_margin,
        });
    }
    Ok(DdpoOutcome { policy, trace })
}
