//! Learned separator embedding.
//!
//! After each GA epoch the current population is turned into a training set
//! (every individual as context, every training example as the masked final
//! answer, the query dropped from its own context) and the separator
//! embedding is updated by AdamW on the oracle's cross-entropy gradient.

use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{assemble_prompt, Dataset, ExampleRef, Permutation, PromptTemplate};
use crate::error::{Error, Result};
use crate::scoring::{Candidates, LabeledPrompt, Oracle, SeparatorEmbedding};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SepTrainConfig {
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Token whose embedding initializes the separator.
    pub init_token: String,
}

impl SepTrainConfig {
    pub fn classification() -> Self {
        Self {
            max_epochs: 10,
            learning_rate: 1e-4,
            batch_size: 16,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            init_token: "</s>".into(),
        }
    }

    pub fn fact_retrieval() -> Self {
        Self {
            max_epochs: 5,
            init_token: "\n".into(),
            ..Self::classification()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_epochs < 1 {
            return Err(Error::Config("separator max_epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("separator batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("separator learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("moment decay rates must lie in [0, 1)".into()));
        }
        if self.weight_decay < 0.0 || self.epsilon <= 0.0 {
            return Err(Error::Config("weight decay must be >= 0 and epsilon > 0".into()));
        }
        Ok(())
    }
}

/// AdamW with decoupled weight decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub step: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
}

impl AdamW {
    pub fn new(dim: usize, config: &SepTrainConfig) -> Self {
        Self {
            learning_rate: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            epsilon: config.epsilon,
            weight_decay: config.weight_decay,
            step: 0,
            first_moment: vec![0.0; dim],
            second_moment: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.first_moment.len()
    }

    /// One update of `params` given `grad`.
    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.dim() || grad.len() != self.dim() {
            return Err(Error::Contract(format!(
                "optimizer dimension {} vs params {} / grad {}",
                self.dim(),
                params.len(),
                grad.len()
            )));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Contract("non-finite gradient".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grad[i];
            self.first_moment[i] = self.beta1 * self.first_moment[i] + (1.0 - self.beta1) * g;
            self.second_moment[i] = self.beta2 * self.second_moment[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.first_moment[i] / bias1;
            let v_hat = self.second_moment[i] / bias2;
            params[i] *= 1.0 - self.learning_rate * self.weight_decay;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

/// One prompt per (individual, training example), with the example as the
/// masked final answer and dropped from its own context.
pub fn build_sep_training_set(
    population: &[Permutation],
    dataset: &Dataset,
    template: &PromptTemplate,
) -> Result<Vec<LabeledPrompt>> {
    let candidates = Candidates::for_dataset(dataset);
    let mut batch = Vec::with_capacity(population.len() * dataset.train.len());
    for c in population {
        for example in &dataset.train {
            let query = ExampleRef::train(example.index);
            batch.push(LabeledPrompt {
                prompt: assemble_prompt(c, query, template, dataset, true)?,
                gold: dataset.gold_text(example)?.to_string(),
                candidates: candidates.clone(),
            });
        }
    }
    Ok(batch)
}

/// Per-epoch and per-step mean losses from [`train_separator`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub epochs: Vec<f64>,
    pub steps: Vec<f64>,
}

/// Minibatch AdamW on the separator embedding. Stops early once the epoch
/// mean loss has increased on two consecutive epochs.
pub fn train_separator<O: Oracle + ?Sized, R: Rng>(
    sep: &mut SeparatorEmbedding,
    batch: &[LabeledPrompt],
    oracle: &O,
    optimizer: &mut AdamW,
    config: &SepTrainConfig,
    rng: &mut R,
) -> Result<LossTrace> {
    config.validate()?;
    if optimizer.dim() != sep.dim() {
        return Err(Error::Config(format!(
            "optimizer state has dimension {}, separator {}",
            optimizer.dim(),
            sep.dim()
        )));
    }
    let mut trace = LossTrace::default();
    if batch.is_empty() {
        return Ok(trace);
    }
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mut rises = 0;
    for _ in 0..config.max_epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let mini: Vec<LabeledPrompt> = chunk.iter().map(|&i| batch[i].clone()).collect();
            let (loss, grad) = oracle.loss_and_grad_sep(&mini, sep)?;
            optimizer.update(sep.values_mut(), &grad)?;
            trace.steps.push(loss);
            total += loss * chunk.len() as f64;
        }
        let mean = total / batch.len() as f64;
        if let Some(&prev) = trace.epochs.last() {
            rises = if mean > prev { rises + 1 } else { 0 };
        }
        trace.epochs.push(mean);
        if rises >= 2 {
            break;
        }
    }
    Ok(trace)
}

/// Initial separator: the oracle's embedding of `init_token`, or zeros of
/// the oracle dimension when the oracle cannot provide one.
pub fn init_separator<O: Oracle + ?Sized>(oracle: &O, init_token: &str) -> Result<SeparatorEmbedding> {
    let dim = oracle.info()?.dim;
    match oracle.token_embedding(init_token)? {
        Some(e) if e.dim() == dim => Ok(e),
        Some(e) => Err(Error::Config(format!(
            "embedding of {init_token:?} has dimension {}, oracle reports {dim}",
            e.dim()
        ))),
        None => {
            warn!("no embedding for {init_token:?}; starting the separator from zeros");
            Ok(SeparatorEmbedding::zeros(dim))
        }
    }
}

/// Separator state carried through a search.
#[derive(Debug, Clone)]
pub struct SeparatorLearner {
    pub embedding: SeparatorEmbedding,
    pub optimizer: AdamW,
    pub config: SepTrainConfig,
    /// Incremented after every training phase; keys the fitness cache.
    pub version: u64,
    pub history: Vec<LossTrace>,
}

impl SeparatorLearner {
    pub fn new<O: Oracle + ?Sized>(oracle: &O, config: SepTrainConfig) -> Result<Self> {
        config.validate()?;
        let embedding = init_separator(oracle, &config.init_token)?;
        let optimizer = AdamW::new(embedding.dim(), &config);
        Ok(Self {
            embedding,
            optimizer,
            config,
            version: 0,
            history: Vec::new(),
        })
    }

    /// Runs one training phase on the given population.
    pub fn train_on<O: Oracle + ?Sized, R: Rng>(
        &mut self,
        population: &[Permutation],
        dataset: &Dataset,
        template: &PromptTemplate,
        oracle: &O,
        rng: &mut R,
    ) -> Result<&LossTrace> {
        let batch = build_sep_training_set(population, dataset, template)?;
        let trace = train_separator(
            &mut self.embedding,
            &batch,
            oracle,
            &mut self.optimizer,
            &self.config,
            rng,
        )?;
        self.version += 1;
        self.history.push(trace);
        Ok(self.history.last().unwrap())
    }

    pub fn stored(&self) -> StoredSeparator {
        StoredSeparator {
            dim: self.embedding.dim(),
            values: self.embedding.values().to_vec(),
            init_token: self.config.init_token.clone(),
            optimizer_state: self.optimizer.clone(),
        }
    }
}

/// On-disk form of a learned separator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredSeparator {
    pub dim: usize,
    pub values: Vec<f64>,
    pub init_token: String,
    pub optimizer_state: AdamW,
}

impl StoredSeparator {
    pub fn save(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_string_pretty(self)?;
        std::fs::write(path, body).map_err(|e| Error::io(path, e))
    }

    /// Loads a stored separator and checks it against the oracle dimension.
    pub fn load(path: &Path, oracle_dim: usize) -> Result<Self> {
        let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let stored: Self = serde_json::from_str(&body)?;
        if stored.dim != stored.values.len() || stored.dim != oracle_dim {
            return Err(Error::Config(format!(
                "stored separator has dimension {} ({} values), oracle expects {oracle_dim}",
                stored.dim,
                stored.values.len()
            )));
        }
        Ok(stored)
    }

    pub fn embedding(&self) -> Result<SeparatorEmbedding> {
        SeparatorEmbedding::new(self.values.clone())
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::domain::{DatasetFormat, Example};
    use crate::scoring::{ToyParams, ToyScorer};

    fn toy(n: usize, w: Vec<f64>, alpha: f64) -> (Dataset, PromptTemplate, ToyScorer) {
        let t = PromptTemplate::builtin("sentiment").unwrap();
        let train = (0..n)
            .map(|i| {
                Example::single(i, format!("t{i}"), ["positive", "negative"][i % 2]).unwrap()
            })
            .collect();
        let d = Dataset::new(&DatasetFormat::for_template(&t), train, vec![], vec![]).unwrap();
        let s = ToyScorer::new(
            ToyParams {
                sigma_star: (0..n).collect(),
                alpha,
                w,
                alternation: 0.0,
            },
            &d,
            |_| 0.0,
        )
        .unwrap();
        (d, t, s)
    }

    fn cfg(lr: f64, decay: f64, epochs: usize) -> SepTrainConfig {
        SepTrainConfig {
            max_epochs: epochs,
            learning_rate: lr,
            weight_decay: decay,
            ..SepTrainConfig::classification()
        }
    }

    #[test]
    fn training_set_size_is_product() {
        let (d, t, _) = toy(3, vec![0.0], 0.0);
        let pop = vec![
            Permutation::new(vec![0, 1], 3).unwrap(),
            Permutation::new(vec![2, 1], 3).unwrap(),
        ];
        let batch = build_sep_training_set(&pop, &d, &t).unwrap();
        assert_eq!(batch.len(), 6);
        // query 1 is in both contexts and is dropped from them
        let q1: Vec<_> = batch.iter().filter(|b| b.prompt.query().index == 1).collect();
        assert!(q1.iter().all(|b| b.prompt.context().len() == 1));
        assert_eq!(batch[0].gold, "true");
    }

    #[test]
    fn single_example_context_dropped_entirely() {
        let (d, t, _) = toy(2, vec![0.0], 0.0);
        let pop = vec![Permutation::new(vec![1], 2).unwrap()];
        let batch = build_sep_training_set(&pop, &d, &t).unwrap();
        let own = &batch[1];
        assert_eq!(own.prompt.query().index, 1);
        assert!(own.prompt.context().is_empty());
        assert_eq!(own.prompt.sep_count(), 0);
    }

    #[test]
    fn first_step_by_hand() {
        // m = 0.1 g, v = 0.001 g^2, m_hat = g, v_hat = g^2
        let mut opt = AdamW::new(3, &cfg(1e-4, 0.0, 1));
        let mut s = vec![0.0; 3];
        let g = -0.119_202_922_022_117_6;
        opt.update(&mut s, &[g, 0.0, 0.0]).unwrap();
        let expected = 1e-4 * (-g) / ((-g) + 1e-8);
        assert!((s[0] - expected).abs() < 1e-18);
        assert!(s[0] > 0.0);
        assert_eq!(&s[1..], &[0.0, 0.0]);
    }

    #[test]
    fn reference_trace_ten_steps() {
        // Frozen from an independent numpy evaluation of the same update
        // (lr 0.01, betas 0.9/0.999, eps 1e-8, weight decay 0.01).
        let grads = [
            [0.5, -1.0],
            [0.4, -0.5],
            [0.3, 0.2],
            [-0.2, 0.1],
            [0.1, 0.0],
            [0.0, -0.3],
            [0.6, 0.6],
            [-0.4, 0.2],
            [0.2, -0.1],
            [0.05, 0.05],
        ];
        let mut opt = AdamW::new(2, &cfg(0.01, 0.01, 1));
        let mut s = vec![1.0, -2.0];
        for g in &grads {
            opt.update(&mut s, g).unwrap();
        }
        let expected = [0.935_203_097_873_351, -1.958_033_262_616_066];
        assert!((s[0] - expected[0]).abs() < 1e-12, "{}", s[0]);
        assert!((s[1] - expected[1]).abs() < 1e-12, "{}", s[1]);
        assert_eq!(opt.step, 10);
    }

    #[test]
    fn zero_gradient_no_decay_is_identity() {
        let (d, t, s) = toy(4, vec![0.0; 4], 1.0);
        let pop = vec![Permutation::new(vec![0, 1, 2], 4).unwrap()];
        let batch = build_sep_training_set(&pop, &d, &t).unwrap();
        let mut sep = SeparatorEmbedding::new(vec![0.3, -0.2, 0.1, 0.5]).unwrap();
        let before = sep.clone();
        let c = cfg(1e-2, 0.0, 3);
        let mut opt = AdamW::new(4, &c);
        let trace = train_separator(&mut sep, &batch, &s, &mut opt, &c, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        assert_eq!(sep, before);
        assert!(trace.epochs.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-12));
    }

    #[test]
    fn zero_gradient_only_decays() {
        let (d, t, s) = toy(3, vec![0.0; 2], 1.0);
        let pop = vec![Permutation::new(vec![0, 1], 3).unwrap()];
        let batch = build_sep_training_set(&pop, &d, &t).unwrap();
        let mut sep = SeparatorEmbedding::new(vec![1.0, -1.0]).unwrap();
        let c = SepTrainConfig {
            batch_size: 64,
            ..cfg(0.1, 0.5, 2)
        };
        let mut opt = AdamW::new(2, &c);
        train_separator(&mut sep, &batch, &s, &mut opt, &c, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        // two steps, each multiplying by 1 - 0.1 * 0.5
        assert!((sep.values()[0] - 0.95f64.powi(2)).abs() < 1e-12);
        assert!((sep.values()[1] + 0.95f64.powi(2)).abs() < 1e-12);
    }

    #[test]
    fn one_dimensional_descent_decreases_loss() {
        let (d, t, s) = toy(4, vec![1.0, 0.0, 0.0], 0.0);
        let pop = vec![Permutation::new(vec![0, 1, 2, 3], 4).unwrap()];
        let batch = build_sep_training_set(&pop, &d, &t).unwrap();
        let mut sep = SeparatorEmbedding::zeros(3);
        let c = cfg(1e-2, 0.0, 8);
        let mut opt = AdamW::new(3, &c);
        let trace = train_separator(&mut sep, &batch, &s, &mut opt, &c, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        assert_eq!(trace.epochs.len(), 8);
        assert!(trace.epochs.windows(2).all(|w| w[1] < w[0]), "{:?}", trace.epochs);
        assert!((trace.epochs[0] - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(sep.values()[0] > 0.0);
    }

    #[test]
    fn init_and_dimension_checks() {
        let (_, _, s) = toy(2, vec![0.0; 8], 0.0);
        let emb = init_separator(&s, "\n").unwrap();
        assert_eq!(emb, SeparatorEmbedding::zeros(8));

        let learner = SeparatorLearner::new(&s, SepTrainConfig::classification()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sep.json");
        learner.stored().save(&path).unwrap();
        assert!(StoredSeparator::load(&path, 8).is_ok());
        assert!(matches!(
            StoredSeparator::load(&path, 1024),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn early_stop_after_two_rises() {
        struct Rising(std::sync::Mutex<f64>);
        impl Oracle for Rising {
            fn info(&self) -> Result<crate::scoring::OracleInfo> {
                Ok(crate::scoring::OracleInfo {
                    dim: 1,
                    supports_grad: true,
                    vocab_size: 0,
                })
            }
            fn score(
                &self,
                _: &crate::domain::Prompt,
                _: &Candidates,
                _: crate::scoring::Separator<'_>,
            ) -> Result<crate::scoring::ScoreDistribution> {
                unreachable!()
            }
            fn loss_and_grad_sep(
                &self,
                _: &[LabeledPrompt],
                _: &SeparatorEmbedding,
            ) -> Result<(f64, Vec<f64>)> {
                let mut l = self.0.lock().unwrap();
                *l += 1.0;
                Ok((*l - 1.0, vec![0.0]))
            }
        }
        let (d, t, _) = toy(2, vec![0.0], 0.0);
        let batch =
            build_sep_training_set(&[Permutation::new(vec![0], 2).unwrap()], &d, &t).unwrap();
        let c = cfg(1e-3, 0.0, 10);
        let mut opt = AdamW::new(1, &c);
        let mut sep = SeparatorEmbedding::zeros(1);
        let trace = train_separator(&mut sep, &batch, &Rising(std::sync::Mutex::new(0.0)), &mut opt, &c, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        assert_eq!(trace.epochs, vec![0.0, 1.0, 2.0]);
    }
}
