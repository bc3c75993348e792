use serde::{Deserialize, Serialize};

use crate::domain::{assemble_sequence, Dataset, ExampleRef, PromptTemplate, Split};
use crate::error::{Error, Result};
use crate::scoring::{cross_entropy, predict_top1, Candidates, Oracle, Separator};

/// Top-1 accuracy and mean cross-entropy of one prompt context over a split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitScore {
    pub accuracy: f64,
    pub mean_ce: f64,
    pub n: usize,
}

/// Scores every example of `split` as a query against `context`.
///
/// Accuracy is the fraction of queries whose top-1 candidate equals the gold
/// answer; with [`Candidates::Vocab`] this is precision at 1.
pub fn score_split<O: Oracle + ?Sized>(
    context: &[usize],
    split: Split,
    dataset: &Dataset,
    template: &PromptTemplate,
    oracle: &O,
    sep: Separator<'_>,
    candidates: &Candidates,
) -> Result<SplitScore> {
    let examples = dataset.split(split);
    if examples.is_empty() {
        return Err(Error::Contract(format!("{split:?} split is empty")));
    }
    let prompts = examples
        .iter()
        .map(|e| assemble_sequence(context, ExampleRef::new(split, e.index), template, dataset, false))
        .collect::<Result<Vec<_>>>()?;
    let dists = oracle.score_batch(&prompts, candidates, sep)?;
    let mut correct = 0usize;
    let mut ce = 0.0;
    for (e, d) in examples.iter().zip(&dists) {
        let gold = dataset.gold_text(e)?;
        if predict_top1(d) == gold {
            correct += 1;
        }
        ce += cross_entropy(d, gold)?;
    }
    let n = examples.len();
    Ok(SplitScore {
        accuracy: correct as f64 / n as f64,
        mean_ce: ce / n as f64,
        n,
    })
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
