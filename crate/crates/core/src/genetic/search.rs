use std::fmt;

use log::{debug, info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{random_permutation, rank_by_fitness, select_and_breed, FitnessEvaluator, FitnessMode, GaConfig};
use crate::domain::{Dataset, Permutation, PromptTemplate, Split};
use crate::error::{Error, Result};
use crate::metrics::{score_split, SplitScore};
use crate::scoring::{Candidates, Oracle, Separator};
use crate::separator::{SeparatorLearner, StoredSeparator};

/// A permutation with its training fitness and validation accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessRecord {
    pub permutation: Vec<usize>,
    pub train_fitness: f64,
    pub val_accuracy: f64,
}

/// One line of the run history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub best_train_fitness: f64,
    pub best_val_accuracy: f64,
    pub best_val_ce: f64,
    pub permutation: Vec<usize>,
    pub rng_digest: String,
    pub sep_version: u64,
    /// Mean loss of the last separator epoch trained after this generation.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sep_loss: Option<f64>,
    pub evaluations: usize,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub best: FitnessRecord,
    pub best_epoch: usize,
    pub validation: SplitScore,
    /// The separator in force when the best permutation was chosen.
    pub separator: Option<StoredSeparator>,
    pub history: Vec<EpochRecord>,
    /// Distinct fitness evaluations spent.
    pub evaluations: usize,
}

/// A search that stopped on an error, with the epochs finished before it.
#[derive(Debug)]
pub struct SearchAborted {
    pub error: Error,
    pub history: Vec<EpochRecord>,
}

impl fmt::Display for SearchAborted {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "search aborted after {} epochs: {}", self.history.len(), self.error)
    }
}

impl std::error::Error for SearchAborted {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<Error> for SearchAborted {
    fn from(error: Error) -> Self {
        Self {
            error,
            history: Vec::new(),
        }
    }
}

/// Hex SHA-256 of the generator's seed, stream and word position.
pub fn rng_digest(rng: &ChaCha8Rng) -> String {
    let mut h = Sha256::new();
    h.update(rng.get_seed());
    h.update(rng.get_stream().to_le_bytes());
    h.update(rng.get_word_pos().to_le_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn with_retries<T>(retries: usize, what: &str, mut f: impl FnMut() -> Result<T>) -> Result<T> {
    let mut attempt = 0;
    loop {
        match f() {
            Err(e) if e.is_transport() && attempt < retries => {
                attempt += 1;
                warn!("{what} failed ({e}); retry {attempt}/{retries}");
            }
            r => return r,
        }
    }
}

/// Whether (`acc`, `ce`) beats the current choice. Accuracy decides, lower
/// validation CE breaks ties, and a full tie keeps the earlier epoch.
/// Inverted mode looks for the worst instead.
fn improves(mode: FitnessMode, acc: f64, ce: f64, best: Option<(f64, f64)>) -> bool {
    let Some((b_acc, b_ce)) = best else {
        return true;
    };
    match mode {
        FitnessMode::Inverted => acc < b_acc || (acc == b_acc && ce > b_ce),
        _ => acc > b_acc || (acc == b_acc && ce < b_ce),
    }
}

/// Runs the genetic search for `config.epochs` generations after the
/// initial one. With a `learner`, one separator training phase follows each
/// breeding step and its result applies from the next generation on.
///
/// `on_epoch` sees every history record as soon as it is produced.
pub fn run_search<O: Oracle + ?Sized>(
    dataset: &Dataset,
    template: &PromptTemplate,
    oracle: &O,
    config: &GaConfig,
    mut learner: Option<&mut SeparatorLearner>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<SearchOutcome, SearchAborted> {
    let n_train = dataset.train.len();
    config.validate(n_train)?;
    if dataset.validation.is_empty() {
        return Err(Error::Config("search needs a validation split".into()).into());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut sep_rng = ChaCha8Rng::seed_from_u64(config.seed);
    sep_rng.set_stream(1);

    let candidates = Candidates::for_dataset(dataset);
    let mut evaluator = FitnessEvaluator::new(config.fitness_mode);
    let mut population: Vec<Permutation> = (0..config.population)
        .map(|_| random_permutation(n_train, config.prompt_size, &mut rng))
        .collect();

    let mut history: Vec<EpochRecord> = Vec::with_capacity(config.epochs + 1);
    let mut chosen: Option<(FitnessRecord, usize, SplitScore, Option<StoredSeparator>)> = None;

    for epoch in 0..=config.epochs {
        let step = (|| -> Result<()> {
            let version = learner.as_ref().map_or(0, |l| l.version);
            let sep = match &learner {
                Some(l) => Separator::Learned(&l.embedding),
                None => Separator::Literal(template.separator()),
            };
            let fit = with_retries(config.epoch_retries, "fitness evaluation", || {
                evaluator.evaluate(&population, dataset, template, oracle, sep, version)
            })?;
            let top = rank_by_fitness(&fit, config.fitness_mode)[0];
            let best = &population[top];
            let val = with_retries(config.epoch_retries, "validation", || {
                score_split(best.as_slice(), Split::Validation, dataset, template, oracle, sep, &candidates)
            })?;
            debug!(
                "epoch {epoch}: fitness {:.5} val acc {:.4} ce {:.5}",
                fit[top], val.accuracy, val.mean_ce
            );
            let best_so_far = chosen.as_ref().map(|c| (c.2.accuracy, c.2.mean_ce));
            if improves(config.fitness_mode, val.accuracy, val.mean_ce, best_so_far) {
                let record = FitnessRecord {
                    permutation: best.as_slice().to_vec(),
                    train_fitness: fit[top],
                    val_accuracy: val.accuracy,
                };
                let sep_snapshot = learner.as_ref().map(|l| l.stored());
                chosen = Some((record, epoch, val, sep_snapshot));
            }
            let mut record = EpochRecord {
                epoch,
                best_train_fitness: fit[top],
                best_val_accuracy: val.accuracy,
                best_val_ce: val.mean_ce,
                permutation: best.as_slice().to_vec(),
                rng_digest: rng_digest(&rng),
                sep_version: version,
                sep_loss: None,
                evaluations: evaluator.evaluations(),
            };

            if epoch < config.epochs {
                population = select_and_breed(&population, &fit, config, n_train, &mut rng)?;
                if let Some(l) = learner.as_deref_mut() {
                    let trace = with_retries(config.epoch_retries, "separator training", || {
                        let mut attempt = l.clone();
                        let mut attempt_rng = sep_rng.clone();
                        attempt.train_on(&population, dataset, template, oracle, &mut attempt_rng)?;
                        Ok((attempt, attempt_rng))
                    })?;
                    (*l, sep_rng) = trace;
                    record.sep_loss = l.history.last().and_then(|t| t.epochs.last().copied());
                    evaluator.retain_version(l.version);
                }
            }
            on_epoch(&record);
            history.push(record);
            Ok(())
        })();
        if let Err(error) = step {
            warn!("stopping at epoch {epoch}: {error}");
            return Err(SearchAborted { error, history });
        }
    }

    let (best, best_epoch, validation, separator) = chosen.expect("at least one epoch ran");
    info!(
        "best permutation from epoch {best_epoch}: val acc {:.4}, fitness {:.5}",
        validation.accuracy, best.train_fitness
    );
    Ok(SearchOutcome {
        best,
        best_epoch,
        validation,
        separator,
        history,
        evaluations: evaluator.evaluations(),
    })
}
