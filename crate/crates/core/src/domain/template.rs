use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::prompt::Segment;
use super::{Example, ExampleText, LabelSet, TaskKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Literal(String),
    Text,
    Premise,
    Hypothesis,
    Label,
}

/// The answer slot of a rendered example.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Answer<'a> {
    Text(&'a str),
    Mask,
}

/// Serialized form of a template, as found in a template config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TemplateSpec {
    pub kind: TaskKind,
    pub pattern: String,
    #[serde(default)]
    pub mask: Option<String>,
    #[serde(default)]
    pub separator: Option<String>,
    /// `[id, surface]` pairs; empty for fact retrieval.
    #[serde(default)]
    pub labels: Vec<[String; 2]>,
}

/// Per-task formatting of one example plus the mask and default separator.
#[derive(Debug, Clone)]
pub struct PromptTemplate {
    name: String,
    kind: TaskKind,
    pattern: String,
    pieces: Vec<Piece>,
    mask: String,
    separator: String,
    labels: Option<LabelSet>,
}

const ROBERTA_MASK: &str = "<mask>";
const ROBERTA_SEP: &str = "</s>";
const BERT_MASK: &str = "[MASK]";

fn parse_pattern(pattern: &str) -> Result<Vec<Piece>> {
    let mut pieces = Vec::new();
    let mut rest = pattern;
    while let Some(open) = rest.find('{') {
        if open > 0 {
            pieces.push(Piece::Literal(rest[..open].to_string()));
        }
        let close = rest[open..]
            .find('}')
            .ok_or_else(|| Error::Config(format!("unclosed placeholder in {pattern:?}")))?
            + open;
        let piece = match &rest[open + 1..close] {
            "text" | "subject" => Piece::Text,
            "premise" => Piece::Premise,
            "hypothesis" => Piece::Hypothesis,
            "label" | "object" => Piece::Label,
            other => {
                return Err(Error::Config(format!(
                    "unknown placeholder {{{other}}} in {pattern:?}"
                )))
            }
        };
        pieces.push(piece);
        rest = &rest[close + 1..];
    }
    if !rest.is_empty() {
        pieces.push(Piece::Literal(rest.to_string()));
    }
    Ok(pieces)
}

impl PromptTemplate {
    pub fn new(name: impl Into<String>, spec: TemplateSpec) -> Result<Self> {
        let name = name.into();
        let pieces = parse_pattern(&spec.pattern)?;
        let count = |p: &Piece| pieces.iter().filter(|q| *q == p).count();
        if count(&Piece::Label) != 1 {
            return Err(Error::Config(format!(
                "template {name:?}: label slot must occur exactly once"
            )));
        }
        let inputs_ok = match spec.kind {
            TaskKind::Nli => {
                count(&Piece::Premise) == 1 && count(&Piece::Hypothesis) == 1 && count(&Piece::Text) == 0
            }
            _ => count(&Piece::Text) == 1 && count(&Piece::Premise) == 0 && count(&Piece::Hypothesis) == 0,
        };
        if !inputs_ok {
            return Err(Error::Config(format!(
                "template {name:?}: input placeholders do not match task kind {}",
                spec.kind
            )));
        }
        let labels = if spec.kind.is_classification() {
            if spec.labels.is_empty() {
                None
            } else {
                Some(LabelSet::new(
                    spec.labels.into_iter().map(|[a, b]| (a, b)).collect(),
                )?)
            }
        } else {
            None
        };
        let bert_style = spec.kind == TaskKind::FactRetrieval;
        let mask = spec.mask.unwrap_or_else(|| {
            if bert_style { BERT_MASK } else { ROBERTA_MASK }.to_string()
        });
        let separator = spec.separator.unwrap_or_else(|| {
            if bert_style { "\n" } else { ROBERTA_SEP }.to_string()
        });
        if mask.is_empty() {
            return Err(Error::Config(format!("template {name:?}: empty mask symbol")));
        }
        Ok(Self {
            name,
            kind: spec.kind,
            pattern: spec.pattern,
            pieces,
            mask,
            separator,
            labels,
        })
    }

    /// Built-in templates for the supported tasks. Fact-retrieval templates
    /// are keyed by relation id.
    pub fn builtin(name: &str) -> Option<Self> {
        let spec = |kind, pattern: &str, labels: &[(&str, &str)]| TemplateSpec {
            kind,
            pattern: pattern.to_string(),
            mask: None,
            separator: None,
            labels: labels
                .iter()
                .map(|(a, b)| [a.to_string(), b.to_string()])
                .collect(),
        };
        let spec = match name {
            "sentiment" | "sst2" => spec(
                TaskKind::Sentiment,
                "{text} Answer: {label}",
                &[("positive", "true"), ("negative", "false")],
            ),
            "nli" | "sick" => spec(
                TaskKind::Nli,
                "\"{premise}\" implies \"{hypothesis}\" Answer: {label}",
                &[("entailment", "true"), ("contradiction", "false")],
            ),
            "P131" => spec(TaskKind::FactRetrieval, "{subject} is located in {object}", &[]),
            "P279" => spec(TaskKind::FactRetrieval, "{subject} is a subclass of {object}", &[]),
            _ => return None,
        };
        Self::new(name, spec).ok()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> TaskKind {
        self.kind
    }

    pub fn pattern(&self) -> &str {
        &self.pattern
    }

    pub fn mask(&self) -> &str {
        &self.mask
    }

    /// The literal default separator.
    pub fn separator(&self) -> &str {
        &self.separator
    }

    pub fn labels(&self) -> Option<&LabelSet> {
        self.labels.as_ref()
    }

    pub fn with_separator(mut self, separator: impl Into<String>) -> Self {
        self.separator = separator.into();
        self
    }

    /// Renders one example into `out`, merging adjacent literals.
    pub(crate) fn render_into(
        &self,
        example: &Example,
        answer: Answer<'_>,
        out: &mut Vec<Segment>,
    ) -> Result<()> {
        for piece in &self.pieces {
            let text = match (piece, &example.text) {
                (Piece::Literal(s), _) => s.as_str(),
                (Piece::Text, ExampleText::Single(t)) => t.as_str(),
                (Piece::Premise, ExampleText::Pair { premise, .. }) => premise.as_str(),
                (Piece::Hypothesis, ExampleText::Pair { hypothesis, .. }) => hypothesis.as_str(),
                (Piece::Label, _) => match answer {
                    Answer::Text(t) => t,
                    Answer::Mask => {
                        out.push(Segment::Mask);
                        continue;
                    }
                },
                _ => {
                    return Err(Error::Contract(format!(
                        "example {} does not fit template {:?}",
                        example.index, self.name
                    )))
                }
            };
            Segment::push_text(out, text);
        }
        Ok(())
    }
}

/// Templates keyed by task name, loadable from a TOML file whose top-level
/// tables are [`TemplateSpec`]s.
#[derive(Debug, Clone, Default)]
pub struct TemplateSet {
    templates: BTreeMap<String, PromptTemplate>,
}

impl TemplateSet {
    pub fn from_toml(source: &str) -> Result<Self> {
        let specs: BTreeMap<String, TemplateSpec> =
            toml::from_str(source).map_err(|e| Error::Config(format!("template file: {e}")))?;
        let templates = specs
            .into_iter()
            .map(|(name, spec)| Ok((name.clone(), PromptTemplate::new(name, spec)?)))
            .collect::<Result<_>>()?;
        Ok(Self { templates })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let source = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&source)
    }

    /// Looks up a template by name, falling back to the built-ins.
    pub fn get(&self, name: &str) -> Option<PromptTemplate> {
        self.templates
            .get(name)
            .cloned()
            .or_else(|| PromptTemplate::builtin(name))
    }
}
