//! Greedy growth of a prompt from one example per label, and fixed label
//! patterns built from the same pool.

use log::debug;
use serde::{Deserialize, Serialize};

use crate::domain::{assemble_sequence, Dataset, ExampleRef, Prompt, PromptTemplate};
use crate::error::{Error, Result};
use crate::scoring::{cross_entropy, Candidates, Oracle, Separator};

/// One training example per label, indexed by label ordinal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pool {
    by_label: Vec<usize>,
}

impl Pool {
    /// Builds a pool from training indices, which must cover every label
    /// exactly once. Order of `train_indices` does not matter.
    pub fn new(dataset: &Dataset, train_indices: &[usize]) -> Result<Self> {
        let labels = dataset
            .labels()
            .ok_or_else(|| Error::Config("one-shot search needs a labelled task".into()))?;
        let mut by_label = vec![None; labels.len()];
        for &i in train_indices {
            let e = dataset.example(ExampleRef::train(i))?;
            let o = dataset
                .label_ordinal(e)
                .ok_or_else(|| Error::Validation(format!("example {i} has no known label")))?;
            if by_label[o].replace(i).is_some() {
                return Err(Error::Config(format!(
                    "pool has two examples labelled {:?}",
                    e.label
                )));
            }
        }
        let by_label = by_label
            .into_iter()
            .enumerate()
            .map(|(o, i)| {
                i.ok_or_else(|| {
                    Error::Config(format!("pool has no example labelled {:?}", labels.id_at(o).unwrap_or("?")))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { by_label })
    }

    pub fn n_labels(&self) -> usize {
        self.by_label.len()
    }

    /// Training index holding label `ordinal`.
    pub fn example(&self, ordinal: usize) -> Option<usize> {
        self.by_label.get(ordinal).copied()
    }

    pub fn members(&self) -> &[usize] {
        &self.by_label
    }
}

/// A context of pool members, repeats allowed, stored as label ordinals.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrowableSequence {
    labels: Vec<usize>,
    l_max: usize,
}

impl GrowableSequence {
    pub fn new(l_max: usize) -> Self {
        Self {
            labels: Vec::new(),
            l_max,
        }
    }

    pub fn from_labels(labels: Vec<usize>, l_max: usize) -> Result<Self> {
        if labels.len() > l_max {
            return Err(Error::Contract(format!(
                "sequence of length {} exceeds cap {l_max}",
                labels.len()
            )));
        }
        Ok(Self { labels, l_max })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Training indices in prompt order.
    pub fn indices(&self, pool: &Pool) -> Result<Vec<usize>> {
        self.labels
            .iter()
            .map(|&o| {
                pool.example(o)
                    .ok_or_else(|| Error::Contract(format!("label ordinal {o} not in pool")))
            })
            .collect()
    }

    fn inserted(&self, position: usize, label: usize) -> Self {
        let mut labels = self.labels.clone();
        labels.insert(position, label);
        Self {
            labels,
            l_max: self.l_max,
        }
    }
}

/// Which candidates `expand` keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BalanceRule {
    /// Label counts differ by at most one.
    #[default]
    Balanced,
    /// Balanced and no two neighbouring positions share a label.
    Alternating,
    None,
}

impl BalanceRule {
    pub fn admits(self, labels: &[usize], n_labels: usize) -> bool {
        let balanced = || {
            let mut counts = vec![0usize; n_labels];
            for &l in labels {
                counts[l] += 1;
            }
            let max = counts.iter().max().copied().unwrap_or(0);
            let min = counts.iter().min().copied().unwrap_or(0);
            max - min <= 1
        };
        match self {
            BalanceRule::None => true,
            BalanceRule::Balanced => balanced(),
            BalanceRule::Alternating => balanced() && labels.windows(2).all(|w| w[0] != w[1]),
        }
    }
}

/// A candidate extension: `label`'s example inserted before `position`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub position: usize,
    pub label: usize,
    pub sequence: GrowableSequence,
}

/// Every single-example insertion, position-major then label ordinal,
/// without filtering. There are `(len + 1) * n_labels` of them.
pub fn expand_all(seq: &GrowableSequence, n_labels: usize) -> Result<Vec<Candidate>> {
    if seq.len() >= seq.l_max {
        return Err(Error::Contract(format!(
            "sequence already at its cap of {}",
            seq.l_max
        )));
    }
    let mut out = Vec::with_capacity((seq.len() + 1) * n_labels);
    for position in 0..=seq.len() {
        for label in 0..n_labels {
            out.push(Candidate {
                position,
                label,
                sequence: seq.inserted(position, label),
            });
        }
    }
    Ok(out)
}

/// The admissible subset of [`expand_all`], in the same order.
pub fn expand(seq: &GrowableSequence, n_labels: usize, rule: BalanceRule) -> Result<Vec<Candidate>> {
    let mut all = expand_all(seq, n_labels)?;
    all.retain(|c| rule.admits(c.sequence.labels(), n_labels));
    Ok(all)
}

fn pool_prompts(
    context: &[usize],
    pool: &Pool,
    dataset: &Dataset,
    template: &PromptTemplate,
) -> Result<Vec<Prompt>> {
    pool.members()
        .iter()
        .map(|&q| assemble_sequence(context, ExampleRef::train(q), template, dataset, false))
        .collect()
}

/// Worst-case cross-entropy over the pool's examples as queries.
pub fn min_ce_fitness<O: Oracle + ?Sized>(
    seq: &GrowableSequence,
    pool: &Pool,
    dataset: &Dataset,
    template: &PromptTemplate,
    oracle: &O,
    sep: Separator<'_>,
) -> Result<f64> {
    Ok(batch_fitness(&[seq], pool, dataset, template, oracle, sep)?[0])
}

fn batch_fitness<O: Oracle + ?Sized>(
    seqs: &[&GrowableSequence],
    pool: &Pool,
    dataset: &Dataset,
    template: &PromptTemplate,
    oracle: &O,
    sep: Separator<'_>,
) -> Result<Vec<f64>> {
    if seqs.iter().any(|s| s.is_empty()) {
        return Err(Error::Contract("fitness of an empty sequence".into()));
    }
    let mut prompts = Vec::with_capacity(seqs.len() * pool.n_labels());
    for s in seqs {
        prompts.extend(pool_prompts(&s.indices(pool)?, pool, dataset, template)?);
    }
    let candidates = Candidates::for_dataset(dataset);
    let dists = oracle.score_batch(&prompts, &candidates, sep)?;
    let golds = pool
        .members()
        .iter()
        .map(|&q| dataset.gold_text(dataset.example(ExampleRef::train(q))?))
        .collect::<Result<Vec<_>>>()?;
    dists
        .chunks(pool.n_labels())
        .map(|chunk| {
            chunk
                .iter()
                .zip(&golds)
                .map(|(d, g)| cross_entropy(d, g))
                .try_fold(0.0f64, |acc, ce| ce.map(|ce| acc.max(ce)))
        })
        .collect()
}

/// One committed greedy step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyStep {
    pub length: usize,
    pub position: usize,
    pub label: usize,
    pub fitness: f64,
    pub admissible: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyOutcome {
    pub sequence: GrowableSequence,
    /// Training indices in prompt order.
    pub indices: Vec<usize>,
    pub trace: Vec<GreedyStep>,
}

/// Grows a sequence from empty to `l_max`, each step keeping the admissible
/// insertion with the lowest worst-case cross-entropy. Ties go to the
/// earliest position, then the lowest label ordinal.
#[allow(clippy::too_many_arguments)]
pub fn grow_greedy<O: Oracle + ?Sized>(
    pool: &Pool,
    dataset: &Dataset,
    template: &PromptTemplate,
    oracle: &O,
    sep: Separator<'_>,
    l_max: usize,
    rule: BalanceRule,
) -> Result<GreedyOutcome> {
    if l_max == 0 {
        return Err(Error::Config("l_max must be positive".into()));
    }
    let mut seq = GrowableSequence::new(l_max);
    let mut trace: Vec<GreedyStep> = Vec::with_capacity(l_max);
    while seq.len() < l_max {
        let candidates = expand(&seq, pool.n_labels(), rule)?;
        if candidates.is_empty() {
            return Err(Error::Contract(format!(
                "no admissible extension at length {}",
                seq.len()
            )));
        }
        let refs: Vec<&GrowableSequence> = candidates.iter().map(|c| &c.sequence).collect();
        let fit = batch_fitness(&refs, pool, dataset, template, oracle, sep)?;
        let mut best = 0;
        for (i, &f) in fit.iter().enumerate() {
            if f < fit[best] {
                best = i;
            }
        }
        let chosen = &candidates[best];
        if let Some(prev) = trace.last() {
            if fit[best] > prev.fitness {
                debug!(
                    "greedy fitness rose from {:.5} to {:.5} at length {}",
                    prev.fitness,
                    fit[best],
                    seq.len() + 1
                );
            }
        }
        trace.push(GreedyStep {
            length: seq.len() + 1,
            position: chosen.position,
            label: chosen.label,
            fitness: fit[best],
            admissible: candidates.len(),
        });
        seq = chosen.sequence.clone();
    }
    let indices = seq.indices(pool)?;
    Ok(GreedyOutcome {
        sequence: seq,
        indices,
        trace,
    })
}

/// Parses a label pattern such as `"----++++--"`. The `i`-th character of
/// `symbols` stands for label ordinal `i`.
pub fn parse_label_pattern(pattern: &str, symbols: &str) -> Result<Vec<usize>> {
    let symbols: Vec<char> = symbols.chars().collect();
    let out = pattern
        .chars()
        .filter(|c| !c.is_whitespace())
        .map(|c| {
            symbols
                .iter()
                .position(|&s| s == c)
                .ok_or_else(|| Error::Config(format!("pattern symbol {c:?} is not one of {symbols:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if out.is_empty() {
        return Err(Error::Config("empty label pattern".into()));
    }
    Ok(out)
}

/// Position `i` holds the pool's example for `pattern[i]`.
pub fn repeat_label_pattern(pattern: &[usize], pool: &Pool) -> Result<Vec<usize>> {
    GrowableSequence::from_labels(pattern.to_vec(), pattern.len())?.indices(pool)
}
