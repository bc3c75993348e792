use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Example, ExampleRef, ExampleText, LabelSet, PromptTemplate, Split, TaskKind};
use crate::error::{Error, Result};

/// How to interpret a dataset file.
#[derive(Debug, Clone)]
pub struct DatasetFormat {
    pub kind: TaskKind,
    /// Fixed label set; inferred in first-appearance order when absent.
    pub labels: Option<LabelSet>,
}

impl DatasetFormat {
    pub fn for_template(template: &PromptTemplate) -> Self {
        Self {
            kind: template.kind(),
            labels: template.labels().cloned(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub kind: TaskKind,
    labels: Option<LabelSet>,
    pub train: Vec<Example>,
    pub validation: Vec<Example>,
    pub test: Vec<Example>,
}

impl Dataset {
    /// Builds a dataset, re-indexing each split in order and checking labels.
    pub fn new(
        format: &DatasetFormat,
        train: Vec<Example>,
        validation: Vec<Example>,
        test: Vec<Example>,
    ) -> Result<Self> {
        let reindex = |split: Vec<Example>| -> Vec<Example> {
            split
                .into_iter()
                .enumerate()
                .map(|(i, mut e)| {
                    e.index = i;
                    e
                })
                .collect()
        };
        let (train, validation, test) = (reindex(train), reindex(validation), reindex(test));
        let all = || train.iter().chain(&validation).chain(&test);

        let labels = if format.kind.is_classification() {
            let labels = match &format.labels {
                Some(l) => l.clone(),
                None => {
                    let mut seen: Vec<String> = Vec::new();
                    for e in all() {
                        if !seen.contains(&e.label) {
                            seen.push(e.label.clone());
                        }
                    }
                    LabelSet::identity(seen)?
                }
            };
            for e in all() {
                if labels.ordinal(&e.label).is_none() {
                    return Err(Error::Validation(format!(
                        "unknown label {:?} on example {}",
                        e.label, e.index
                    )));
                }
            }
            Some(labels)
        } else {
            for e in all() {
                if e.label.split_whitespace().count() != 1 {
                    return Err(Error::Validation(format!(
                        "object {:?} of example {} is not a single token",
                        e.label, e.index
                    )));
                }
            }
            None
        };

        Ok(Self {
            kind: format.kind,
            labels,
            train,
            validation,
            test,
        })
    }

    pub fn labels(&self) -> Option<&LabelSet> {
        self.labels.as_ref()
    }

    pub fn split(&self, split: Split) -> &[Example] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    pub fn example(&self, r: ExampleRef) -> Result<&Example> {
        self.split(r.split).get(r.index).ok_or_else(|| {
            Error::Contract(format!("no example {} in {:?} split", r.index, r.split))
        })
    }

    /// Text that fills the answer slot: the label surface, or the object token.
    pub fn gold_text<'a>(&'a self, example: &'a Example) -> Result<&'a str> {
        match &self.labels {
            Some(labels) => labels.surface(&example.label).ok_or_else(|| {
                Error::Contract(format!("label {:?} not in label set", example.label))
            }),
            None => Ok(example.label.as_str()),
        }
    }

    pub fn label_ordinal(&self, example: &Example) -> Option<usize> {
        self.labels.as_ref()?.ordinal(&example.label)
    }

    /// Replaces the train and validation splits, keeping labels and test.
    pub fn with_splits(&self, train: Vec<Example>, validation: Vec<Example>) -> Result<Self> {
        let format = DatasetFormat {
            kind: self.kind,
            labels: self.labels.clone(),
        };
        Self::new(&format, train, validation, self.test.clone())
    }
}

#[derive(Debug, Default, Deserialize, Serialize)]
struct Record {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    premise: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hypothesis: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    subject: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    object: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    relation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<serde_json::Value>,
}

fn label_string(v: serde_json::Value) -> std::result::Result<String, String> {
    match v {
        serde_json::Value::String(s) if !s.is_empty() => Ok(s),
        serde_json::Value::Number(n) => Ok(n.to_string()),
        serde_json::Value::Bool(b) => Ok(b.to_string()),
        other => Err(format!("unsupported label value {other}")),
    }
}

fn record_to_example(
    index: usize,
    kind: TaskKind,
    r: Record,
) -> std::result::Result<Example, String> {
    let missing = |f: &str| format!("missing field `{f}`");
    let (text, label, relation) = match kind {
        TaskKind::Sentiment => (
            ExampleText::Single(r.text.ok_or_else(|| missing("text"))?),
            label_string(r.label.ok_or_else(|| missing("label"))?)?,
            None,
        ),
        TaskKind::Nli => (
            ExampleText::Pair {
                premise: r.premise.ok_or_else(|| missing("premise"))?,
                hypothesis: r.hypothesis.ok_or_else(|| missing("hypothesis"))?,
            },
            label_string(r.label.ok_or_else(|| missing("label"))?)?,
            None,
        ),
        TaskKind::FactRetrieval => (
            ExampleText::Single(r.subject.ok_or_else(|| missing("subject"))?),
            r.object.ok_or_else(|| missing("object"))?,
            r.relation,
        ),
    };
    let mut example = Example::new(index, text, label).map_err(|e| e.to_string())?;
    example.relation = relation;
    Ok(example)
}

/// Reads line-delimited JSON records. Blank lines are skipped; examples are
/// indexed in file order.
pub fn load_examples(path: &Path, kind: TaskKind) -> Result<Vec<Example>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut examples = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            message,
        };
        let record: Record = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        examples.push(record_to_example(examples.len(), kind, record).map_err(parse_err)?);
    }
    if examples.is_empty() {
        return Err(Error::Validation(format!(
            "no examples in {}",
            path.display()
        )));
    }
    Ok(examples)
}

/// Loads a single file as the training split of a dataset.
pub fn load_dataset(path: &Path, format: &DatasetFormat) -> Result<Dataset> {
    let train = load_examples(path, format.kind)?;
    Dataset::new(format, train, Vec::new(), Vec::new())
}

/// Writes examples back in the same line-delimited format.
pub fn write_examples<W: Write>(mut out: W, examples: &[Example], kind: TaskKind) -> Result<()> {
    for e in examples {
        let mut r = Record::default();
        match (&e.text, kind) {
            (ExampleText::Single(t), TaskKind::FactRetrieval) => {
                r.subject = Some(t.clone());
                r.object = Some(e.label.clone());
                r.relation = e.relation.clone();
            }
            (ExampleText::Single(t), _) => {
                r.text = Some(t.clone());
                r.label = Some(e.label.clone().into());
            }
            (ExampleText::Pair { premise, hypothesis }, _) => {
                r.premise = Some(premise.clone());
                r.hypothesis = Some(hypothesis.clone());
                r.label = Some(e.label.clone().into());
            }
        }
        serde_json::to_writer(&mut out, &r)?;
        out.write_all(b"\n").map_err(|e| Error::io("<output>", e))?;
    }
    Ok(())
}
