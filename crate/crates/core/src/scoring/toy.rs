//! Closed-form scoring oracle with a planted optimal ordering.
//!
//! For a query `x` with gold answer `y`, the gold logit is
//!
//! ```text
//! z = alpha * tau(c, sigma_star) + gamma * alt(c) + w . s + b(x)
//! ```
//!
//! and every other candidate has logit 0. `tau` is Kendall tau-a of the
//! prompt's context ordering against `sigma_star` restricted to the context
//! members; `alt` is the fraction of adjacent context positions holding
//! different examples (0 by default, `gamma = 0`); `s` is the separator
//! embedding and the `w . s` term only applies when a learned separator is
//! scored.

use std::collections::HashMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kendall::kendall_tau;
use super::{
    Candidates, LabeledPrompt, Oracle, OracleInfo, ScoreDistribution, Separator,
    SeparatorEmbedding,
};
use crate::domain::{validate_permutation, Dataset, ExampleRef, Prompt, Split};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyParams {
    /// Target ordering over all training indices.
    pub sigma_star: Vec<usize>,
    pub alpha: f64,
    /// Hidden separator direction.
    pub w: Vec<f64>,
    /// Weight of the adjacent-alternation reward.
    #[serde(default)]
    pub alternation: f64,
}

impl ToyParams {
    /// Random planted ordering and a unit-norm separator direction.
    pub fn random<R: Rng>(n_train: usize, dim: usize, alpha: f64, rng: &mut R) -> Self {
        let mut sigma_star: Vec<usize> = (0..n_train).collect();
        sigma_star.shuffle(rng);
        let mut w: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            w.iter_mut().for_each(|x| *x /= norm);
        }
        Self {
            sigma_star,
            alpha,
            w,
            alternation: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
struct ToyQuery {
    gold: String,
    bias: f64,
}

#[derive(Debug, Clone)]
pub struct ToyScorer {
    params: ToyParams,
    ranks: Vec<usize>,
    queries: HashMap<ExampleRef, ToyQuery>,
    vocab: Arc<Vec<String>>,
}

impl ToyScorer {
    /// Builds a scorer for every example of `dataset`, with per-query bias
    /// `bias(x)`.
    pub fn new(
        params: ToyParams,
        dataset: &Dataset,
        bias: impl Fn(ExampleRef) -> f64,
    ) -> Result<Self> {
        let n_train = dataset.train.len();
        if params.sigma_star.len() != n_train {
            return Err(Error::Config(format!(
                "sigma_star has length {}, expected {n_train}",
                params.sigma_star.len()
            )));
        }
        validate_permutation(&params.sigma_star, n_train)
            .map_err(|v| Error::Config(format!("sigma_star: {v}")))?;
        if !(params.alpha.is_finite() && params.alpha >= 0.0) {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", params.alpha)));
        }
        if params.w.iter().any(|x| !x.is_finite()) || !params.alternation.is_finite() {
            return Err(Error::Config("toy parameters must be finite".into()));
        }

        let mut ranks = vec![0; n_train];
        for (pos, &i) in params.sigma_star.iter().enumerate() {
            ranks[i] = pos;
        }

        let mut queries = HashMap::new();
        let mut vocab: Vec<String> = dataset
            .labels()
            .map(|l| l.surfaces())
            .unwrap_or_default();
        for split in [Split::Train, Split::Validation, Split::Test] {
            for e in dataset.split(split) {
                let r = ExampleRef::new(split, e.index);
                let gold = dataset.gold_text(e)?.to_string();
                if !vocab.contains(&gold) {
                    vocab.push(gold.clone());
                }
                queries.insert(r, ToyQuery { gold, bias: bias(r) });
            }
        }

        Ok(Self {
            params,
            ranks,
            queries,
            vocab: Arc::new(vocab),
        })
    }

    pub fn params(&self) -> &ToyParams {
        &self.params
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    /// Kendall tau of `context` against the planted ordering.
    pub fn tau(&self, context: &[usize]) -> Result<f64> {
        let ranks = context
            .iter()
            .map(|&i| {
                self.ranks.get(i).copied().ok_or_else(|| {
                    Error::Contract(format!("context index {i} outside the planted ordering"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(kendall_tau(&ranks))
    }

    fn alternation(context: &[usize]) -> f64 {
        if context.len() < 2 {
            return 0.0;
        }
        let changes = context.windows(2).filter(|w| w[0] != w[1]).count();
        changes as f64 / (context.len() - 1) as f64
    }

    /// The gold-answer logit for `prompt`.
    pub fn gold_logit(&self, prompt: &Prompt, sep: Separator<'_>) -> Result<f64> {
        let query = self.queries.get(&prompt.query()).ok_or_else(|| {
            Error::Contract(format!("toy scorer does not know query {:?}", prompt.query()))
        })?;
        let sep_term = match sep {
            Separator::Literal(_) => 0.0,
            Separator::Learned(s) => {
                if s.dim() != self.params.w.len() {
                    return Err(Error::Contract(format!(
                        "separator dimension {} does not match oracle dimension {}",
                        s.dim(),
                        self.params.w.len()
                    )));
                }
                dot(&self.params.w, s.values())
            }
        };
        let context = prompt.context();
        Ok(self.params.alpha * self.tau(context)?
            + self.params.alternation * Self::alternation(context)
            + sep_term
            + query.bias)
    }

    fn gold_of(&self, prompt: &Prompt) -> Result<&str> {
        self.queries
            .get(&prompt.query())
            .map(|q| q.gold.as_str())
            .ok_or_else(|| Error::Contract(format!("unknown query {:?}", prompt.query())))
    }

    fn candidate_list(&self, candidates: &Candidates) -> Arc<Vec<String>> {
        match candidates {
            Candidates::Labels(l) => l.clone(),
            Candidates::Vocab => self.vocab.clone(),
        }
    }

    fn distribution(
        &self,
        prompt: &Prompt,
        gold: &str,
        candidates: &Candidates,
        sep: Separator<'_>,
    ) -> Result<ScoreDistribution> {
        if prompt.mask_count() != 1 {
            return Err(Error::Contract(format!(
                "prompt has {} mask slots",
                prompt.mask_count()
            )));
        }
        let list = self.candidate_list(candidates);
        let gold_pos = list
            .iter()
            .position(|c| c == gold)
            .ok_or_else(|| Error::Contract(format!("gold {gold:?} not among candidates")))?;
        let mut logits = vec![0.0; list.len()];
        logits[gold_pos] = self.gold_logit(prompt, sep)?;
        ScoreDistribution::from_logits(list, &logits)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Oracle for ToyScorer {
    fn info(&self) -> Result<OracleInfo> {
        Ok(OracleInfo {
            dim: self.params.w.len(),
            supports_grad: true,
            vocab_size: self.vocab.len(),
        })
    }

    fn score(
        &self,
        prompt: &Prompt,
        candidates: &Candidates,
        sep: Separator<'_>,
    ) -> Result<ScoreDistribution> {
        let gold = self.gold_of(prompt)?;
        self.distribution(prompt, gold, candidates, sep)
    }

    fn score_batch(
        &self,
        prompts: &[Prompt],
        candidates: &Candidates,
        sep: Separator<'_>,
    ) -> Result<Vec<ScoreDistribution>> {
        prompts
            .par_iter()
            .map(|p| self.score(p, candidates, sep))
            .collect()
    }

    /// Per prompt, `d CE / d s = (p_gold - 1) w`.
    fn loss_and_grad_sep(
        &self,
        batch: &[LabeledPrompt],
        sep: &SeparatorEmbedding,
    ) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::Contract("empty gradient batch".into()));
        }
        let mut loss = 0.0;
        let mut coeff = 0.0;
        for lp in batch {
            let dist = self.distribution(
                &lp.prompt,
                &lp.gold,
                &lp.candidates,
                Separator::Learned(sep),
            )?;
            let p = dist.prob_of(&lp.gold).unwrap_or(0.0);
            loss += super::cross_entropy(&dist, &lp.gold)?;
            coeff += p - 1.0;
        }
        let n = batch.len() as f64;
        let grad = self.params.w.iter().map(|w| w * coeff / n).collect();
        Ok((loss / n, grad))
    }

    fn token_embedding(&self, _token: &str) -> Result<Option<SeparatorEmbedding>> {
        Ok(Some(SeparatorEmbedding::zeros(self.params.w.len())))
    }
}
