//! The scoring oracle: given an assembled prompt, a probability
//! distribution over candidate answers at the mask position.
//!
//! Two implementations ship with the crate. [`ToyScorer`] is a closed-form,
//! differentiable stand-in whose optimum ordering is planted, and
//! [`HttpOracle`] talks to a remote masked-LM service.

pub mod http;
pub mod kendall;
pub mod toy;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::{Dataset, Prompt};
use crate::error::{Error, Result};

pub use http::{HttpOracle, HttpOracleConfig, RetryPolicy};
pub use kendall::kendall_tau;
pub use toy::{ToyParams, ToyScorer};

const SUM_TOLERANCE: f64 = 1e-6;

/// What the mask position is scored against.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Candidates {
    /// Label surface texts, in label-ordinal order.
    Labels(Arc<Vec<String>>),
    /// The oracle's full vocabulary.
    Vocab,
}

impl Candidates {
    pub fn labels(surfaces: Vec<String>) -> Self {
        Candidates::Labels(Arc::new(surfaces))
    }

    /// Label texts for classification, the full vocabulary otherwise.
    pub fn for_dataset(dataset: &Dataset) -> Self {
        match dataset.labels() {
            Some(l) => Self::labels(l.surfaces()),
            None => Candidates::Vocab,
        }
    }
}

/// Normalized probabilities over an ordered candidate list.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreDistribution {
    candidates: Arc<Vec<String>>,
    probs: Vec<f64>,
}

impl ScoreDistribution {
    pub fn new(candidates: Arc<Vec<String>>, probs: Vec<f64>) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::Contract("empty candidate set".into()));
        }
        if candidates.len() != probs.len() {
            return Err(Error::Contract(format!(
                "{} candidates but {} probabilities",
                candidates.len(),
                probs.len()
            )));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Contract("probability outside [0, 1]".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::Contract(format!("probabilities sum to {sum}")));
        }
        Ok(Self { candidates, probs })
    }

    /// Softmax over logits.
    pub fn from_logits(candidates: Arc<Vec<String>>, logits: &[f64]) -> Result<Self> {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        Self::new(candidates, exps.into_iter().map(|e| e / total).collect())
    }

    pub fn candidates(&self) -> &[String] {
        &self.candidates
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob_of(&self, candidate: &str) -> Option<f64> {
        self.candidates
            .iter()
            .position(|c| c == candidate)
            .map(|i| self.probs[i])
    }
}

/// `-ln p(gold)` in nats.
pub fn cross_entropy(dist: &ScoreDistribution, gold: &str) -> Result<f64> {
    let p = dist
        .prob_of(gold)
        .ok_or_else(|| Error::Contract(format!("gold {gold:?} not among candidates")))?;
    Ok(-p.max(f64::MIN_POSITIVE).ln())
}

/// Argmax candidate; ties go to the lowest ordinal.
pub fn predict_top1(dist: &ScoreDistribution) -> &str {
    let mut best = 0;
    for (i, &p) in dist.probs.iter().enumerate() {
        if p > dist.probs[best] {
            best = i;
        }
    }
    &dist.candidates[best]
}

/// Real vector standing in for the separator token's input embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparatorEmbedding {
    values: Vec<f64>,
}

impl SeparatorEmbedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("separator embedding has non-finite entries".into()));
        }
        Ok(Self { values })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            values: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

/// How separator slots are filled at scoring time.
#[derive(Debug, Clone, Copy)]
pub enum Separator<'a> {
    Literal(&'a str),
    Learned(&'a SeparatorEmbedding),
}

/// A prompt paired with its gold answer, for gradient computation.
#[derive(Debug, Clone)]
pub struct LabeledPrompt {
    pub prompt: Prompt,
    pub gold: String,
    pub candidates: Candidates,
}

/// Capabilities reported by an oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleInfo {
    pub dim: usize,
    pub supports_grad: bool,
    pub vocab_size: usize,
}

/// A masked-LM scoring oracle.
///
/// Implementations must be pure with respect to their inputs so that
/// concurrent calls from several workers are safe.
pub trait Oracle: Send + Sync {
    fn info(&self) -> Result<OracleInfo>;

    fn score(
        &self,
        prompt: &Prompt,
        candidates: &Candidates,
        sep: Separator<'_>,
    ) -> Result<ScoreDistribution>;

    /// Scores many prompts; results are in input order.
    fn score_batch(
        &self,
        prompts: &[Prompt],
        candidates: &Candidates,
        sep: Separator<'_>,
    ) -> Result<Vec<ScoreDistribution>> {
        prompts
            .iter()
            .map(|p| self.score(p, candidates, sep))
            .collect()
    }

    /// Mean cross-entropy over `batch` and its gradient with respect to the
    /// separator embedding.
    fn loss_and_grad_sep(
        &self,
        _batch: &[LabeledPrompt],
        _sep: &SeparatorEmbedding,
    ) -> Result<(f64, Vec<f64>)> {
        Err(Error::Unsupported("separator gradient"))
    }

    /// Input embedding of `token`, if the oracle can provide one.
    fn token_embedding(&self, _token: &str) -> Result<Option<SeparatorEmbedding>> {
        Ok(None)
    }
}

impl<T: Oracle + ?Sized> Oracle for &T {
    fn info(&self) -> Result<OracleInfo> {
        (**self).info()
    }

    fn score(
        &self,
        prompt: &Prompt,
        candidates: &Candidates,
        sep: Separator<'_>,
    ) -> Result<ScoreDistribution> {
        (**self).score(prompt, candidates, sep)
    }

    fn score_batch(
        &self,
        prompts: &[Prompt],
        candidates: &Candidates,
        sep: Separator<'_>,
    ) -> Result<Vec<ScoreDistribution>> {
        (**self).score_batch(prompts, candidates, sep)
    }

    fn loss_and_grad_sep(
        &self,
        batch: &[LabeledPrompt],
        sep: &SeparatorEmbedding,
    ) -> Result<(f64, Vec<f64>)> {
        (**self).loss_and_grad_sep(batch, sep)
    }

    fn token_embedding(&self, token: &str) -> Result<Option<SeparatorEmbedding>> {
        (**self).token_embedding(token)
    }
}

impl<T: Oracle + ?Sized> Oracle for Box<T> {
    fn info(&self) -> Result<OracleInfo> {
        (**self).info()
    }

    fn score(
        &self,
        prompt: &Prompt,
        candidates: &Candidates,
        sep: Separator<'_>,
    ) -> Result<ScoreDistribution> {
        (**self).score(prompt, candidates, sep)
    }

    fn score_batch(
        &self,
        prompts: &[Prompt],
        candidates: &Candidates,
        sep: Separator<'_>,
    ) -> Result<Vec<ScoreDistribution>> {
        (**self).score_batch(prompts, candidates, sep)
    }

    fn loss_and_grad_sep(
        &self,
        batch: &[LabeledPrompt],
        sep: &SeparatorEmbedding,
    ) -> Result<(f64, Vec<f64>)> {
        (**self).loss_and_grad_sep(batch, sep)
    }

    fn token_embedding(&self, token: &str) -> Result<Option<SeparatorEmbedding>> {
        (**self).token_embedding(token)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary(p_true: f64) -> ScoreDistribution {
        ScoreDistribution::new(
            Arc::new(vec!["true".into(), "false".into()]),
            vec![p_true, 1.0 - p_true],
        )
        .unwrap()
    }

    #[test]
    fn two_way_softmax_is_logistic() {
        let z: f64 = 1.3;
        let d = ScoreDistribution::from_logits(Arc::new(vec!["a".into(), "b".into()]), &[z, 0.0])
            .unwrap();
        assert!((d.probs()[0] - 1.0 / (1.0 + (-z).exp())).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_values() {
        assert_eq!(cross_entropy(&binary(1.0), "true").unwrap(), 0.0);
        assert!((cross_entropy(&binary(0.5), "true").unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        // -ln(0.8808)
        assert!((cross_entropy(&binary(0.8808), "true").unwrap() - 0.126_924_693_573_666_8).abs() < 1e-12);
        assert!(matches!(
            cross_entropy(&binary(0.5), "maybe"),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn top1_and_ties() {
        assert_eq!(predict_top1(&binary(0.7)), "true");
        assert_eq!(predict_top1(&binary(0.3)), "false");
        assert_eq!(predict_top1(&binary(0.5)), "true");
        let vocab = Arc::new(vec!["Paris".into(), "Berlin".into(), "Rome".into()]);
        let d = ScoreDistribution::new(vocab, vec![0.1, 0.85, 0.05]).unwrap();
        assert_eq!(predict_top1(&d), "Berlin");
    }

    #[test]
    fn distribution_contract() {
        let c = Arc::new(vec!["a".into(), "b".into()]);
        assert!(ScoreDistribution::new(c.clone(), vec![0.5, 0.6]).is_err());
        assert!(ScoreDistribution::new(Arc::new(vec![]), vec![]).is_err());
        assert!(ScoreDistribution::new(c, vec![1.0]).is_err());
    }

    #[test]
    fn embedding_must_be_finite() {
        assert!(SeparatorEmbedding::new(vec![0.0, f64::NAN]).is_err());
        assert_eq!(SeparatorEmbedding::zeros(8).dim(), 8);
    }
}
