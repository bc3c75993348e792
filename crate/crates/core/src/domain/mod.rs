//! Domain types shared by every stage of the search: examples, label sets,
//! permutations, templates and assembled prompts.
//!
//! Everything here is immutable once constructed and can be shared freely
//! across scoring workers.

mod dataset;
mod prompt;
mod template;

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use dataset::{load_dataset, load_examples, write_examples, Dataset, DatasetFormat};
pub use prompt::{assemble_prompt, assemble_sequence, Prompt, Segment};
pub use template::{PromptTemplate, TemplateSet, TemplateSpec};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Sentiment,
    Nli,
    FactRetrieval,
}

impl TaskKind {
    pub fn is_classification(self) -> bool {
        !matches!(self, TaskKind::FactRetrieval)
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Sentiment => "sentiment",
            TaskKind::Nli => "nli",
            TaskKind::FactRetrieval => "fact-retrieval",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// Identifies one example by split and in-split index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ExampleRef {
    pub split: Split,
    pub index: usize,
}

impl ExampleRef {
    pub fn new(split: Split, index: usize) -> Self {
        Self { split, index }
    }

    pub fn train(index: usize) -> Self {
        Self::new(Split::Train, index)
    }
}

/// Task input of one example.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExampleText {
    Single(String),
    Pair { premise: String, hypothesis: String },
}

impl ExampleText {
    fn is_blank(&self) -> bool {
        match self {
            ExampleText::Single(t) => t.trim().is_empty(),
            ExampleText::Pair {
                premise,
                hypothesis,
            } => premise.trim().is_empty() || hypothesis.trim().is_empty(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub index: usize,
    pub text: ExampleText,
    /// Label id for classification tasks, object token for fact retrieval.
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation: Option<String>,
}

impl Example {
    pub fn new(index: usize, text: ExampleText, label: impl Into<String>) -> Result<Self> {
        if text.is_blank() {
            return Err(Error::Validation(format!("example {index} has empty text")));
        }
        Ok(Self {
            index,
            text,
            label: label.into(),
            relation: None,
        })
    }

    pub fn single(index: usize, text: impl Into<String>, label: impl Into<String>) -> Result<Self> {
        Self::new(index, ExampleText::Single(text.into()), label)
    }
}

/// Ordered `(label id, surface text)` pairs. The ordinal of an entry is its
/// position in this list and is used for deterministic tie-breaking.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    entries: Vec<(String, String)>,
}

impl LabelSet {
    pub fn new(entries: Vec<(String, String)>) -> Result<Self> {
        if entries.len() < 2 {
            return Err(Error::Validation(format!(
                "classification needs at least 2 labels, got {}",
                entries.len()
            )));
        }
        let mut ids = HashSet::new();
        let mut surfaces = HashSet::new();
        for (id, surface) in &entries {
            if id.is_empty() || surface.is_empty() {
                return Err(Error::Validation("empty label id or surface text".into()));
            }
            if !ids.insert(id.as_str()) {
                return Err(Error::Validation(format!("duplicate label id {id:?}")));
            }
            if !surfaces.insert(surface.as_str()) {
                return Err(Error::Validation(format!("duplicate label text {surface:?}")));
            }
        }
        Ok(Self { entries })
    }

    /// Label set whose surface texts equal the ids.
    pub fn identity<I, S>(ids: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(
            ids.into_iter()
                .map(|s| {
                    let s = s.into();
                    (s.clone(), s)
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ordinal(&self, id: &str) -> Option<usize> {
        self.entries.iter().position(|(i, _)| i == id)
    }

    pub fn surface(&self, id: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(i, _)| i == id)
            .map(|(_, s)| s.as_str())
    }

    pub fn id_at(&self, ordinal: usize) -> Option<&str> {
        self.entries.get(ordinal).map(|(i, _)| i.as_str())
    }

    pub fn surfaces(&self) -> Vec<String> {
        self.entries.iter().map(|(_, s)| s.clone()).collect()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(i, _)| i.as_str())
    }
}

/// Why a candidate index vector is not a valid permutation.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Violation {
    #[error("duplicate index {0}")]
    Duplicate(usize),
    #[error("index {index} out of range for {n_train} training examples")]
    OutOfRange { index: usize, n_train: usize },
    #[error("expected length {expected}, got {got}")]
    WrongLength { expected: usize, got: usize },
}

/// Checks that `indices` are distinct and all lie in `[0, n_train)`.
pub fn validate_permutation(indices: &[usize], n_train: usize) -> Result<(), Violation> {
    let mut seen = vec![false; n_train];
    for &i in indices {
        if i >= n_train {
            return Err(Violation::OutOfRange { index: i, n_train });
        }
        if seen[i] {
            return Err(Violation::Duplicate(i));
        }
        seen[i] = true;
    }
    Ok(())
}

/// An ordered list of `k` distinct training-example indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn new(indices: Vec<usize>, n_train: usize) -> Result<Self, Violation> {
        validate_permutation(&indices, n_train)?;
        Ok(Self(indices))
    }

    /// Wraps indices the caller already knows to be valid.
    pub(crate) fn from_trusted(indices: Vec<usize>) -> Self {
        debug_assert!({
            let n = indices.iter().max().map_or(0, |m| m + 1);
            validate_permutation(&indices, n).is_ok()
        });
        Self(indices)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.0
    }

    pub fn contains(&self, index: usize) -> bool {
        self.0.contains(&index)
    }

    /// Validates against a training set of `n_train` examples and a fixed length.
    pub fn check(&self, n_train: usize, k: usize) -> Result<(), Violation> {
        if self.0.len() != k {
            return Err(Violation::WrongLength {
                expected: k,
                got: self.0.len(),
            });
        }
        validate_permutation(&self.0, n_train)
    }
}

impl fmt::Display for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (n, i) in self.0.iter().enumerate() {
            if n > 0 {
                f.write_str(",")?;
            }
            write!(f, "{i}")?;
        }
        f.write_str(")")
    }
}

impl AsRef<[usize]> for Permutation {
    fn as_ref(&self) -> &[usize] {
        &self.0
    }
}
