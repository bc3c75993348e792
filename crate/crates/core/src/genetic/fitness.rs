use std::collections::HashMap;

use super::FitnessMode;
use crate::domain::{assemble_prompt, Dataset, ExampleRef, Permutation, Prompt, PromptTemplate};
use crate::error::Result;
use crate::scoring::{cross_entropy, Candidates, Oracle, Separator};

fn train_prompts(c: &Permutation, dataset: &Dataset, template: &PromptTemplate) -> Result<Vec<Prompt>> {
    dataset
        .train
        .iter()
        .map(|e| assemble_prompt(c, ExampleRef::train(e.index), template, dataset, false))
        .collect()
}

fn aggregate(ces: &[f64], mode: FitnessMode) -> f64 {
    match mode {
        FitnessMode::Minimum => ces.iter().copied().fold(0.0, f64::max),
        _ => ces.iter().sum::<f64>() / ces.len() as f64,
    }
}

/// Mean cross-entropy (nats) of every training example as a query against
/// context `c`. Queries may also appear inside the context.
pub fn fitness<O: Oracle + ?Sized>(
    c: &Permutation,
    dataset: &Dataset,
    template: &PromptTemplate,
    oracle: &O,
    sep: Separator<'_>,
) -> Result<f64> {
    FitnessEvaluator::new(FitnessMode::Average).evaluate(std::slice::from_ref(c), dataset, template, oracle, sep, 0).map(|v| v[0])
}

/// Population fitness with a cache keyed by (permutation, separator version).
#[derive(Debug, Default)]
pub struct FitnessEvaluator {
    mode: FitnessMode,
    cache: HashMap<(Vec<usize>, u64), f64>,
    evaluations: usize,
}

impl FitnessEvaluator {
    pub fn new(mode: FitnessMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    /// Distinct (permutation, separator version) pairs scored so far.
    pub fn evaluations(&self) -> usize {
        self.evaluations
    }

    /// Drops entries for separator versions other than `keep`.
    pub fn retain_version(&mut self, keep: u64) {
        self.cache.retain(|(_, v), _| *v == keep);
    }

    /// Fitness of every individual, in population order. All uncached
    /// prompts go to the oracle as one batch.
    pub fn evaluate<O: Oracle + ?Sized>(
        &mut self,
        population: &[Permutation],
        dataset: &Dataset,
        template: &PromptTemplate,
        oracle: &O,
        sep: Separator<'_>,
        sep_version: u64,
    ) -> Result<Vec<f64>> {
        let candidates = Candidates::for_dataset(dataset);
        let n = dataset.train.len();
        let mut pending: Vec<&Permutation> = Vec::new();
        for c in population {
            let key = (c.as_slice().to_vec(), sep_version);
            if !self.cache.contains_key(&key) && !pending.contains(&c) {
                pending.push(c);
            }
        }
        if !pending.is_empty() {
            let mut prompts = Vec::with_capacity(pending.len() * n);
            for c in &pending {
                prompts.extend(train_prompts(c, dataset, template)?);
            }
            let dists = oracle.score_batch(&prompts, &candidates, sep)?;
            let golds = dataset
                .train
                .iter()
                .map(|e| dataset.gold_text(e))
                .collect::<Result<Vec<_>>>()?;
            for (c, chunk) in pending.iter().zip(dists.chunks(n)) {
                let ces = chunk
                    .iter()
                    .zip(&golds)
                    .map(|(d, g)| cross_entropy(d, g))
                    .collect::<Result<Vec<_>>>()?;
                self.cache
                    .insert((c.as_slice().to_vec(), sep_version), aggregate(&ces, self.mode));
                self.evaluations += 1;
            }
        }
        Ok(population
            .iter()
            .map(|c| self.cache[&(c.as_slice().to_vec(), sep_version)])
            .collect())
    }
}
