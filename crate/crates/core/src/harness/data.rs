use std::collections::HashMap;

use crate::domain::{load_examples, Dataset, DatasetFormat, Example, ExampleText, PromptTemplate, TaskKind};
use crate::error::{Error, Result};

use super::config::{DataConfig, SplitConfig};

/// All examples a run can draw splits from.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub format: DatasetFormat,
    pub train: Vec<Example>,
    pub validation: Vec<Example>,
    pub test: Vec<Example>,
}

impl Corpus {
    pub fn load(data: &DataConfig, template: &PromptTemplate, splits: &SplitConfig) -> Result<Self> {
        let format = DatasetFormat::for_template(template);
        let kind = template.kind();
        let (train, validation, test) = match data {
            DataConfig::Files { train, validation, test } => (
                load_examples(train, kind)?,
                load_examples(validation, kind)?,
                match test {
                    Some(p) => load_examples(p, kind)?,
                    None => Vec::new(),
                },
            ),
            DataConfig::Synthetic { n_validation, n_test } => (
                synthetic(kind, &format, "train", splits.count * splits.size),
                synthetic(kind, &format, "validation", *n_validation),
                synthetic(kind, &format, "test", *n_test),
            ),
        };
        Ok(Self { format, train, validation, test })
    }

    /// Split `index`: the `index`-th run of `size` training examples, a
    /// label-balanced validation set of the same size from the head of the
    /// validation examples, and every test example.
    pub fn split(&self, index: usize, splits: &SplitConfig) -> Result<Dataset> {
        let start = index * splits.size;
        let end = start + splits.size;
        if end > self.train.len() {
            return Err(Error::Validation(format!(
                "split {index} needs training examples {start}..{end}, only {} available",
                self.train.len()
            )));
        }
        let train = self.train[start..end].to_vec();
        let validation = balanced_head(&self.validation, splits.size, &self.format)?;
        let dataset = Dataset::new(&self.format, train, validation, self.test.clone())?;
        check_balance(&dataset.validation, &dataset)?;
        Ok(dataset)
    }
}

/// First-come greedy selection of `size` examples whose label counts differ
/// by at most one. Without a label set this is the first `size` examples.
pub fn balanced_head(examples: &[Example], size: usize, format: &DatasetFormat) -> Result<Vec<Example>> {
    let Some(labels) = &format.labels else {
        if examples.len() < size {
            return Err(Error::Validation(format!(
                "need {size} validation examples, found {}",
                examples.len()
            )));
        }
        return Ok(examples[..size].to_vec());
    };
    let n = labels.len();
    let base = size / n;
    let mut extra = size % n;
    let mut counts: HashMap<String, usize> = HashMap::new();
    let mut out = Vec::with_capacity(size);
    for e in examples {
        if out.len() == size {
            break;
        }
        let c = counts.entry(e.label.clone()).or_default();
        if *c < base {
            *c += 1;
            out.push(e.clone());
        } else if *c == base && extra > 0 {
            *c += 1;
            extra -= 1;
            out.push(e.clone());
        }
    }
    if out.len() < size {
        return Err(Error::Validation(format!(
            "could only select {} label-balanced validation examples of {size}",
            out.len()
        )));
    }
    Ok(out)
}

/// Rejects a labelled split whose label counts differ by more than one.
pub fn check_balance(examples: &[Example], dataset: &Dataset) -> Result<()> {
    let Some(labels) = dataset.labels() else {
        return Ok(());
    };
    let mut counts = vec![0usize; labels.len()];
    for e in examples {
        if let Some(o) = dataset.label_ordinal(e) {
            counts[o] += 1;
        }
    }
    let max = counts.iter().max().copied().unwrap_or(0);
    let min = counts.iter().min().copied().unwrap_or(0);
    if max - min > 1 {
        return Err(Error::Validation(format!(
            "validation labels are unbalanced: counts {counts:?}"
        )));
    }
    Ok(())
}

/// Placeholder examples with labels cycling through the label set.
pub fn synthetic(kind: TaskKind, format: &DatasetFormat, prefix: &str, n: usize) -> Vec<Example> {
    let label_ids: Vec<String> = format
        .labels
        .as_ref()
        .map(|l| l.ids().map(str::to_string).collect())
        .unwrap_or_default();
    (0..n)
        .map(|i| {
            let (text, label) = match kind {
                TaskKind::Sentiment => (
                    ExampleText::Single(format!("{prefix} sentence {i}")),
                    label_ids[i % label_ids.len()].clone(),
                ),
                TaskKind::Nli => (
                    ExampleText::Pair {
                        premise: format!("{prefix} premise {i}"),
                        hypothesis: format!("{prefix} hypothesis {i}"),
                    },
                    label_ids[i % label_ids.len()].clone(),
                ),
                TaskKind::FactRetrieval => (
                    ExampleText::Single(format!("{prefix}-subject-{i}")),
                    format!("object{}", i % 7),
                ),
            };
            Example::new(i, text, label).expect("synthetic examples are well formed")
        })
        .collect()
}
