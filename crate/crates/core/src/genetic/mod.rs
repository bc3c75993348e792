//! Genetic search over orderings of training examples.

mod fitness;
mod operators;
mod search;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use fitness::{fitness, FitnessEvaluator};
pub use operators::{crossover, mutate, random_permutation, rank_by_fitness, select_and_breed};
pub use search::{run_search, rng_digest, EpochRecord, FitnessRecord, SearchAborted, SearchOutcome};

/// How per-query cross-entropies become one fitness value, and which
/// direction counts as fitter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitnessMode {
    /// Mean CE; lower is fitter.
    #[default]
    Average,
    /// Worst-case (largest) CE over queries; lower is fitter.
    Minimum,
    /// Mean CE; higher is fitter. Searches for the worst ordering.
    Inverted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaConfig {
    pub population: usize,
    pub mutation_prob: f64,
    pub elite_ratio: f64,
    pub selection_size: usize,
    pub epochs: usize,
    pub prompt_size: usize,
    pub fitness_mode: FitnessMode,
    pub seed: u64,
    /// Times an epoch is re-attempted after a transport failure.
    pub epoch_retries: usize,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population: 100,
            mutation_prob: 0.1,
            elite_ratio: 0.1,
            selection_size: 25,
            epochs: 100,
            prompt_size: 10,
            fitness_mode: FitnessMode::Average,
            seed: 0,
            epoch_retries: 2,
        }
    }
}

impl GaConfig {
    /// Defaults for fact retrieval, which runs fewer epochs.
    pub fn fact_retrieval() -> Self {
        Self {
            epochs: 30,
            ..Self::default()
        }
    }

    pub fn elite_count(&self) -> usize {
        (self.elite_ratio * self.population as f64).floor() as usize
    }

    pub fn validate(&self, n_train: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.population == 0 {
            return bad("population must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.mutation_prob) {
            return bad(format!("mutation probability {} outside [0, 1]", self.mutation_prob));
        }
        if !(0.0..=1.0).contains(&self.elite_ratio) {
            return bad(format!("elite ratio {} outside [0, 1]", self.elite_ratio));
        }
        if self.selection_size == 0 || self.selection_size > self.population {
            return bad(format!(
                "selection size {} must be in [1, {}]",
                self.selection_size, self.population
            ));
        }
        if self.prompt_size == 0 {
            return bad("prompt size must be positive".into());
        }
        if self.prompt_size > n_train {
            return bad(format!(
                "prompt size {} exceeds {} training examples",
                self.prompt_size, n_train
            ));
        }
        Ok(())
    }
}
