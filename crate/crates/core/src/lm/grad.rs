//! Analytic gradients of the scalar losses used in this crate.
//!
//! Every loss here is a smooth function of response token log-probabilities,
//! so its gradient is obtained by backpropagating per-token coefficients
//! `∂L/∂ log p_i` through the network.

use super::{backward, response_positions, Gradient, ModelParameters, Position};
use crate::corpus::TokenId;
use crate::ddpo::{loss_from_scores, response_score, sigmoid_neg, PreferencePair, ScoreMode, ScoreWeights};
use crate::error::{Error, Result};

/// A scalar function of the model parameters with its data bound.
#[derive(Debug, Clone, Copy)]
pub enum ScalarFn<'a> {
    /// Constant zero.
    Zero,
    /// Mean token cross-entropy over `(prompt, response)` pairs.
    CrossEntropy {
        sequences: &'a [(&'a [TokenId], &'a [TokenId])],
    },
    /// Preference loss against a frozen reference; `Weighted` mode is the
    /// dense variant, `Sum`/`Mean` the classic one.
    Preference {
        reference: &'a ModelParameters,
        pair: &'a PreferencePair,
        beta: f64,
        mode: ScoreMode,
    },
}

/// Value of `f` at `params`.
pub fn loss_value(params: &ModelParameters, f: &ScalarFn<'_>) -> Result<f64> {
    match *f {
        ScalarFn::Zero => Ok(0.0),
        ScalarFn::CrossEntropy { sequences } => {
            let mut total = 0.0;
            let mut count = 0usize;
            for (prompt, response) in sequences {
                total -= super::token_log_probs(params, prompt, response)?.sum();
                count += response.len();
            }
            if count == 0 {
                return Err(Error::Domain("cross-entropy over zero tokens".into()));
            }
            Ok(total / count as f64)
        }
        ScalarFn::Preference {
            reference,
            pair,
            beta,
            mode,
        } => crate::ddpo::preference_loss(params, reference, pair, beta, mode),
    }
}

/// Value and analytic gradient of `f` at `params`.
pub fn grad_scalar(params: &ModelParameters, f: &ScalarFn<'_>) -> Result<(f64, Gradient)> {
    let mut grad = params.zeros_like();
    let value = match *f {
        ScalarFn::Zero => 0.0,
        ScalarFn::CrossEntropy { sequences } => cross_entropy_grad(params, sequences, &mut grad)?,
        ScalarFn::Preference {
            reference,
            pair,
            beta,
            mode,
        } => {
            if reference.config() != params.config() {
                return Err(Error::Domain("policy and reference configurations differ".into()));
            }
            let score = |y| response_score(reference, &pair.prompt, y, mode);
            let ref_scores = (score(&pair.chosen)?, score(&pair.rejected)?);
            preference_grad(params, pair, ref_scores, beta, mode, &mut grad)?
        }
    };
    Ok((value, grad))
}

/// Backpropagates `Σ_i coeffs[i] · log p(target_i)` over precomputed positions.
fn backprop_positions(
    params: &ModelParameters,
    positions: &[Position],
    targets: &[TokenId],
    coeffs: impl Iterator<Item = f64>,
    grad: &mut Gradient,
) {
    let mut dlogits = vec![0.0; params.config().vocab_size];
    for ((pos, &t), c) in positions.iter().zip(targets).zip(coeffs) {
        if c == 0.0 {
            continue;
        }
        for (dl, lp) in dlogits.iter_mut().zip(&pos.log_probs) {
            *dl = -c * lp.exp();
        }
        dlogits[t as usize] += c;
        backward(params, pos, &dlogits, grad);
    }
}

/// Adds the gradient of the summed (not averaged) cross-entropy scaled by
/// `scale` and returns the summed cross-entropy.
pub(crate) fn accumulate_cross_entropy(
    params: &ModelParameters,
    prompt: &[TokenId],
    response: &[TokenId],
    scale: f64,
    grad: &mut Gradient,
) -> Result<f64> {
    let positions = response_positions(params, prompt, response)?;
    let nll: f64 = -positions
        .iter()
        .zip(response)
        .map(|(p, &t)| p.log_probs[t as usize])
        .sum::<f64>();
    backprop_positions(params, &positions, response, std::iter::repeat(-scale), grad);
    Ok(nll)
}

fn cross_entropy_grad(
    params: &ModelParameters,
    sequences: &[(&[TokenId], &[TokenId])],
    grad: &mut Gradient,
) -> Result<f64> {
    let count: usize = sequences.iter().map(|(_, r)| r.len()).sum();
    if count == 0 {
        return Err(Error::Domain("cross-entropy over zero tokens".into()));
    }
    let scale = 1.0 / count as f64;
    let mut total = 0.0;
    for (prompt, response) in sequences {
        total += accumulate_cross_entropy(params, prompt, response, scale, grad)?;
    }
    Ok(total / count as f64)
}

/// Preference loss of one pair and its gradient, given the frozen
/// reference scores `(chosen, rejected)`.
pub(crate) fn preference_grad(
    policy: &ModelParameters,
    pair: &PreferencePair,
    reference_scores: (f64, f64),
    beta: f64,
    mode: ScoreMode,
    grad: &mut Gradient,
) -> Result<f64> {
    let chosen_w = ScoreWeights::new(pair.chosen.labels(), mode)?;
    let rejected_w = ScoreWeights::new(pair.rejected.labels(), mode)?;
    let chosen_pos = response_positions(policy, &pair.prompt, pair.chosen.tokens())?;
    let rejected_pos = response_positions(policy, &pair.prompt, pair.rejected.tokens())?;
    let picked = |positions: &[Position], tokens: &[TokenId]| -> Vec<f64> {
        positions
            .iter()
            .zip(tokens)
            .map(|(p, &t)| p.log_probs[t as usize])
            .collect()
    };
    let s_w = chosen_w.apply(&picked(&chosen_pos, pair.chosen.tokens()));
    let s_l = rejected_w.apply(&picked(&rejected_pos, pair.rejected.tokens()));
    let (loss, z) = loss_from_scores(beta, (s_w, s_l), reference_scores);
    if !loss.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite preference loss for pair with prompt {:?}",
            pair.prompt
        )));
    }
    // dL/ds_w = -β σ(-z), dL/ds_l = +β σ(-z)
    let g = beta * sigmoid_neg(z);
    backprop_positions(
        policy,
        &chosen_pos,
        pair.chosen.tokens(),
        (0..chosen_pos.len()).map(|i| -g * chosen_w.coefficient(i)),
        grad,
    );
    backprop_positions(
        policy,
        &rejected_pos,
        pair.rejected.tokens(),
        (0..rejected_pos.len()).map(|i| g * rejected_w.coefficient(i)),
        grad,
    );
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::ModelConfig;

    #[test]
    fn zero_function_has_zero_gradient() {
        let p = ModelParameters::init(ModelConfig::new(10), 0).unwrap();
        let (v, g) = grad_scalar(&p, &ScalarFn::Zero).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.as_slice().iter().all(|&x| x == 0.0));
        assert_eq!(g.len(), p.len());
    }

    #[test]
    fn value_matches_loss_value() {
        let p = ModelParameters::init(ModelConfig::new(10), 0).unwrap();
        let prompt = [1u32, 3];
        let resp = [4u32, 5, 2];
        let seqs = [(&prompt[..], &resp[..])];
        let f = ScalarFn::CrossEntropy { sequences: &seqs };
        let (v, _) = grad_scalar(&p, &f).unwrap();
        assert!((v - loss_value(&p, &f).unwrap()).abs() < 1e-14);
    }
}
