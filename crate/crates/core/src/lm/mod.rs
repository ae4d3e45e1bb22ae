//! Windowed feed-forward neural language model.
//!
//! The next-token distribution is computed from the last `k` tokens of
//! `prompt ‖ response-prefix` (left-padded with `<pad>`):
//!
//! ```text
//! x      = [E[t_1]; …; E[t_k]]          (k·d)
//! a      = tanh(x · W_h + b_h)           (h)
//! logits = a · W_o + b_o                 (V)
//! ```
//!
//! All parameters live in one contiguous `f64` buffer so that optimizers,
//! finite-difference checks and checkpoints can treat them uniformly.

mod checkpoint;
pub mod grad;
pub mod optim;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{TokenId, Vocabulary};
use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use grad::{grad_scalar, loss_value, ScalarFn};
pub use train::{pretrain, pretrain_sequences, PretrainOutcome, TrainOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub context_window: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
}

impl ModelConfig {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            context_window: 3,
            embed_dim: 16,
            hidden_dim: 32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0
            || self.context_window == 0
            || self.embed_dim == 0
            || self.hidden_dim == 0
        {
            return Err(Error::Config(format!("model dimensions must be positive: {self:?}")));
        }
        Ok(())
    }

    fn input_dim(&self) -> usize {
        self.context_window * self.embed_dim
    }

    /// Offsets of embeddings, hidden weights, hidden bias, output weights,
    /// output bias, and the total length.
    fn offsets(&self) -> [usize; 6] {
        let v = self.vocab_size;
        let h = self.hidden_dim;
        let e = v * self.embed_dim;
        let w1 = e + self.input_dim() * h;
        let b1 = w1 + h;
        let w2 = b1 + h * v;
        let b2 = w2 + v;
        [0, e, w1, b1, w2, b2]
    }

    pub fn parameter_count(&self) -> usize {
        self.offsets()[5]
    }
}

/// Model weights. Tensor order in the flat buffer: token embeddings (V×d),
/// hidden weights ((k·d)×h), hidden bias (h), output weights (h×V), output
/// bias (V); matrices row-major.
///
/// Gradients use the same type and layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParameters {
    config: ModelConfig,
    data: Vec<f64>,
}

pub type Gradient = ModelParameters;

impl ModelParameters {
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            data: vec![0.0; config.parameter_count()],
        })
    }

    /// Weights uniform in [-0.1, 0.1], biases zero.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut params = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [_, e, w1, b1, w2, _] = config.offsets();
        for range in [0..e, e..w1, b1..w2] {
            for x in &mut params.data[range] {
                *x = rng.gen_range(-0.1..=0.1);
            }
        }
        Ok(params)
    }

    pub fn from_parts(config: ModelConfig, data: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if data.len() != config.parameter_count() {
            return Err(Error::Config(format!(
                "expected {} parameters, got {}",
                config.parameter_count(),
                data.len()
            )));
        }
        Ok(Self { config, data })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config,
            data: vec![0.0; self.data.len()],
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn embeddings(&self) -> &[f64] {
        let o = self.config.offsets();
        &self.data[o[0]..o[1]]
    }

    pub fn hidden_weights(&self) -> &[f64] {
        let o = self.config.offsets();
        &self.data[o[1]..o[2]]
    }

    pub fn hidden_bias(&self) -> &[f64] {
        let o = self.config.offsets();
        &self.data[o[2]..o[3]]
    }

    pub fn output_weights(&self) -> &[f64] {
        let o = self.config.offsets();
        &self.data[o[3]..o[4]]
    }

    pub fn output_bias(&self) -> &[f64] {
        let o = self.config.offsets();
        &self.data[o[4]..o[5]]
    }

    fn split_mut(&mut self) -> ParamsMut<'_> {
        let o = self.config.offsets();
        let (emb, rest) = self.data.split_at_mut(o[1]);
        let (w1, rest) = rest.split_at_mut(o[2] - o[1]);
        let (b1, rest) = rest.split_at_mut(o[3] - o[2]);
        let (w2, b2) = rest.split_at_mut(o[4] - o[3]);
        ParamsMut { emb, w1, b1, w2, b2 }
    }

    /// `self += scale · other`.
    pub fn add_scaled(&mut self, other: &Self, scale: f64) {
        debug_assert_eq!(self.config, other.config);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|x| *x *= factor);
    }

    pub(crate) fn check_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        match tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            Some(t) => Err(Error::Domain(format!(
                "token id {t} outside vocabulary of size {}",
                self.config.vocab_size
            ))),
            None => Ok(()),
        }
    }
}

struct ParamsMut<'a> {
    emb: &'a mut [f64],
    w1: &'a mut [f64],
    b1: &'a mut [f64],
    w2: &'a mut [f64],
    b2: &'a mut [f64],
}

/// Activations of one position, kept for backpropagation.
pub(crate) struct Position {
    pub context: Vec<TokenId>,
    pub hidden: Vec<f64>,
    pub log_probs: Vec<f64>,
}

/// Last `k` tokens of `history`, left-padded.
pub(crate) fn context_of(history: &[TokenId], k: usize) -> Vec<TokenId> {
    let start = history.len().saturating_sub(k);
    let mut ctx = vec![Vocabulary::PAD; k - (history.len() - start)];
    ctx.extend_from_slice(&history[start..]);
    ctx
}

pub(crate) fn forward(params: &ModelParameters, context: &[TokenId]) -> Position {
    let cfg = &params.config;
    let (d, h, v) = (cfg.embed_dim, cfg.hidden_dim, cfg.vocab_size);
    let emb = params.embeddings();
    let w1 = params.hidden_weights();
    let w2 = params.output_weights();

    let mut hidden = params.hidden_bias().to_vec();
    for (slot, &tok) in context.iter().enumerate() {
        let e = &emb[tok as usize * d..(tok as usize + 1) * d];
        for (j, &x) in e.iter().enumerate() {
            let row = &w1[(slot * d + j) * h..(slot * d + j + 1) * h];
            hidden.iter_mut().zip(row).for_each(|(a, w)| *a += x * w);
        }
    }
    hidden.iter_mut().for_each(|a| *a = a.tanh());

    let mut logits = params.output_bias().to_vec();
    for (j, &a) in hidden.iter().enumerate() {
        let row = &w2[j * v..(j + 1) * v];
        logits.iter_mut().zip(row).for_each(|(l, w)| *l += a * w);
    }
    log_softmax_in_place(&mut logits);
    Position {
        context: context.to_vec(),
        hidden,
        log_probs: logits,
    }
}

/// Max-subtracted log-softmax.
pub fn log_softmax_in_place(x: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    x.iter_mut().for_each(|v| *v -= lse);
}

/// Accumulates into `grad` the gradient of `Σ_v dlogits[v] · logits[v]`
/// at one position.
pub(crate) fn backward(params: &ModelParameters, pos: &Position, dlogits: &[f64], grad: &mut Gradient) {
    let cfg = params.config;
    let (d, h, v) = (cfg.embed_dim, cfg.hidden_dim, cfg.vocab_size);
    let w1 = params.hidden_weights();
    let w2 = params.output_weights();
    let emb = params.embeddings();
    let g = grad.split_mut();

    g.b2.iter_mut().zip(dlogits).for_each(|(b, dl)| *b += dl);
    let mut dpre = vec![0.0; h];
    for j in 0..h {
        let row = &w2[j * v..(j + 1) * v];
        let grow = &mut g.w2[j * v..(j + 1) * v];
        let a = pos.hidden[j];
        let mut da = 0.0;
        for ((gw, w), dl) in grow.iter_mut().zip(row).zip(dlogits) {
            *gw += a * dl;
            da += w * dl;
        }
        dpre[j] = da * (1.0 - a * a);
    }
    g.b1.iter_mut().zip(&dpre).for_each(|(b, dp)| *b += dp);
    for (slot, &tok) in pos.context.iter().enumerate() {
        let t = tok as usize;
        for j in 0..d {
            let i = slot * d + j;
            let x = emb[t * d + j];
            let row = &w1[i * h..(i + 1) * h];
            let grow = &mut g.w1[i * h..(i + 1) * h];
            let mut dx = 0.0;
            for ((gw, w), dp) in grow.iter_mut().zip(row).zip(&dpre) {
                *gw += x * dp;
                dx += w * dp;
            }
            g.emb[t * d + j] += dx;
        }
    }
}

/// Log-probability of each response token given its context.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenLogProbs(pub Vec<f64>);

impl TokenLogProbs {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Runs the forward pass over every response position.
pub(crate) fn response_positions(
    params: &ModelParameters,
    prompt: &[TokenId],
    response: &[TokenId],
) -> Result<Vec<Position>> {
    params.check_tokens(prompt)?;
    params.check_tokens(response)?;
    let k = params.config.context_window;
    let mut history = prompt.to_vec();
    let mut out = Vec::with_capacity(response.len());
    for &tok in response {
        out.push(forward(params, &context_of(&history, k)));
        history.push(tok);
    }
    Ok(out)
}

pub fn token_log_probs(
    params: &ModelParameters,
    prompt: &[TokenId],
    response: &[TokenId],
) -> Result<TokenLogProbs> {
    let positions = response_positions(params, prompt, response)?;
    Ok(TokenLogProbs(
        positions
            .iter()
            .zip(response)
            .map(|(p, &t)| p.log_probs[t as usize])
            .collect(),
    ))
}

/// Full next-token log-distribution after `history`.
pub fn next_token_log_probs(params: &ModelParameters, history: &[TokenId]) -> Result<Vec<f64>> {
    params.check_tokens(history)?;
    Ok(forward(params, &context_of(history, params.config.context_window)).log_probs)
}

/// `log π(y|x)`: the sum of response token log-probabilities.
pub fn sequence_log_prob(params: &ModelParameters, prompt: &[TokenId], response: &[TokenId]) -> Result<f64> {
    if response.is_empty() {
        return Err(Error::Domain("sequence_log_prob of an empty response".into()));
    }
    Ok(token_log_probs(params, prompt, response)?.sum())
}

/// Greedy decoding; stops after `<eos>` (included) or `max_len` tokens.
/// Ties resolve to the lowest id.
pub fn greedy_decode(params: &ModelParameters, prompt: &[TokenId], max_len: usize) -> Result<Vec<TokenId>> {
    params.check_tokens(prompt)?;
    let k = params.config.context_window;
    let mut history = prompt.to_vec();
    let mut out = Vec::new();
    while out.len() < max_len {
        let pos = forward(params, &context_of(&history, k));
        let (best, _) = pos
            .log_probs
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
        let tok = best as TokenId;
        out.push(tok);
        history.push(tok);
        if tok == Vocabulary::EOS {
            break;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small() -> ModelConfig {
        ModelConfig {
            vocab_size: 12,
            context_window: 3,
            embed_dim: 4,
            hidden_dim: 8,
        }
    }

    #[test]
    fn layout_and_counts() {
        let c = small();
        assert_eq!(c.parameter_count(), 12 * 4 + 12 * 8 + 8 + 8 * 12 + 12);
        let p = ModelParameters::init(c, 1).unwrap();
        assert!(p.hidden_bias().iter().all(|&b| b == 0.0));
        assert!(p.output_bias().iter().all(|&b| b == 0.0));
        assert!(p.embeddings().iter().all(|w| w.abs() <= 0.1));
        assert!(p.embeddings().iter().any(|&w| w != 0.0));
        assert_eq!(p.output_weights().len(), 8 * 12);
    }

    #[test]
    fn zero_dimension_rejected() {
        let mut c = small();
        c.hidden_dim = 0;
        assert!(ModelParameters::zeros(c).is_err());
    }

    #[test]
    fn context_is_left_padded() {
        assert_eq!(context_of(&[5], 3), vec![0, 0, 5]);
        assert_eq!(context_of(&[1, 2, 3, 4], 3), vec![2, 3, 4]);
        assert_eq!(context_of(&[], 2), vec![0, 0]);
    }

    #[test]
    fn zero_output_layer_is_uniform() {
        let mut p = ModelParameters::init(small(), 3).unwrap();
        let o = p.config.offsets();
        p.data[o[3]..o[5]].iter_mut().for_each(|x| *x = 0.0);
        let lp = token_log_probs(&p, &[1, 4], &[5, 6, 7]).unwrap();
        for &x in lp.as_slice() {
            assert!((x - (1.0f64 / 12.0).ln()).abs() < 1e-15);
        }
        let s = sequence_log_prob(&p, &[1], &[5, 6, 7, 8]).unwrap();
        assert!((s - 4.0 * (1.0f64 / 12.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn single_token_vocabulary() {
        let c = ModelConfig {
            vocab_size: 1,
            ..small()
        };
        let p = ModelParameters::init(c, 0).unwrap();
        assert_eq!(token_log_probs(&p, &[0], &[0, 0]).unwrap().as_slice(), &[0.0, 0.0]);
        assert_eq!(sequence_log_prob(&p, &[], &[0, 0, 0]).unwrap(), 0.0);
    }

    #[test]
    fn two_token_hand_softmax() {
        // Only the output bias is non-zero: logits (1, 0) everywhere.
        let c = ModelConfig {
            vocab_size: 2,
            context_window: 1,
            embed_dim: 1,
            hidden_dim: 1,
        };
        let mut p = ModelParameters::zeros(c).unwrap();
        let o = c.offsets();
        p.data[o[4]] = 1.0;
        let lp = token_log_probs(&p, &[], &[0, 1]).unwrap();
        let lse = (1.0f64.exp() + 1.0).ln();
        assert!((lp.0[0] - (1.0 - lse)).abs() < 1e-15);
        assert!((lp.0[1] - (0.0 - lse)).abs() < 1e-15);
        assert!((lp.0[0] + 0.3133).abs() < 5e-5);
        assert!((lp.0[1] + 1.3133).abs() < 5e-5);
    }

    #[test]
    fn hand_set_bigram_model() {
        // k=1, d=1, h=1: hidden = tanh(E[t]); logits = hidden·W_o.
        let c = ModelConfig {
            vocab_size: 3,
            context_window: 1,
            embed_dim: 1,
            hidden_dim: 1,
        };
        let emb = [0.0, 0.5, -1.0];
        let w_o = [1.0, -1.0, 2.0];
        let mut data = emb.to_vec();
        data.extend([1.0, 0.0]); // W_h, b_h
        data.extend(w_o);
        data.extend([0.0; 3]);
        let p = ModelParameters::from_parts(c, data).unwrap();
        let hand = |prev: usize, next: usize| {
            let a = emb[prev].tanh();
            let logits: Vec<f64> = w_o.iter().map(|w| a * w).collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            logits[next] - z.ln()
        };
        // prompt [1], response [2, 0, 1]: contexts 1, 2, 0
        let expected = hand(1, 2) + hand(2, 0) + hand(0, 1);
        let got = sequence_log_prob(&p, &[1], &[2, 0, 1]).unwrap();
        assert!((got - expected).abs() < 1e-14);
    }

    #[test]
    fn out_of_vocabulary_and_empty() {
        let p = ModelParameters::init(small(), 0).unwrap();
        assert!(matches!(token_log_probs(&p, &[12], &[1]), Err(Error::Domain(_))));
        assert!(matches!(token_log_probs(&p, &[1], &[99]), Err(Error::Domain(_))));
        assert!(matches!(sequence_log_prob(&p, &[1], &[]), Err(Error::Domain(_))));
    }

    #[test]
    fn greedy_stops_at_eos() {
        let c = small();
        let mut p = ModelParameters::zeros(c).unwrap();
        let o = c.offsets();
        p.data[o[4] + Vocabulary::EOS as usize] = 5.0;
        assert_eq!(greedy_decode(&p, &[1], 10).unwrap(), vec![Vocabulary::EOS]);
        p.data[o[4] + 7] = 6.0;
        assert_eq!(greedy_decode(&p, &[1], 4).unwrap(), vec![7; 4]);
    }

    #[test]
    fn deep_copy_is_independent() {
        let a = ModelParameters::init(small(), 0).unwrap();
        let mut b = a.clone();
        b.as_mut_slice()[0] += 1.0;
        assert_ne!(a, b);
    }

    proptest! {
        #[test]
        fn distributions_normalize(seed in 0u64..1000, hist in prop::collection::vec(0u32..12, 0..6)) {
            let p = ModelParameters::init(small(), seed).unwrap();
            let lp = next_token_log_probs(&p, &hist).unwrap();
            let total: f64 = lp.iter().map(|x| x.exp()).sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            prop_assert!(lp.iter().all(|&x| x <= 0.0));
        }

        #[test]
        fn deterministic_scoring(seed in 0u64..1000, resp in prop::collection::vec(0u32..12, 1..8)) {
            let p = ModelParameters::init(small(), seed).unwrap();
            let a = token_log_probs(&p, &[1, 2], &resp).unwrap();
            let b = token_log_probs(&p, &[1, 2], &resp).unwrap();
            prop_assert_eq!(
                a.0.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                b.0.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
            );
            prop_assert!((sequence_log_prob(&p, &[1, 2], &resp).unwrap() - a.sum()).abs() == 0.0);
        }
    }
}
