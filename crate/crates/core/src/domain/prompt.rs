use serde::{Deserialize, Serialize};

use super::template::Answer;
use super::{validate_permutation, Dataset, ExampleRef, Permutation, PromptTemplate, Split};
use crate::error::{Error, Result};

/// One piece of an assembled prompt. Separators stay symbolic so the same
/// prompt can be scored with a literal separator or a learned embedding.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Segment {
    Text(String),
    Sep,
    Mask,
}

impl Segment {
    pub(crate) fn push_text(out: &mut Vec<Segment>, text: &str) {
        if text.is_empty() {
            return;
        }
        if let Some(Segment::Text(last)) = out.last_mut() {
            last.push_str(text);
        } else {
            out.push(Segment::Text(text.to_string()));
        }
    }
}

/// An assembled prompt plus the provenance of what went into it.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Prompt {
    segments: Vec<Segment>,
    context: Vec<usize>,
    query: ExampleRef,
}

impl Prompt {
    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Training indices rendered as in-context examples, in prompt order.
    pub fn context(&self) -> &[usize] {
        &self.context
    }

    pub fn query(&self) -> ExampleRef {
        self.query
    }

    pub fn mask_count(&self) -> usize {
        self.segments.iter().filter(|s| **s == Segment::Mask).count()
    }

    pub fn sep_count(&self) -> usize {
        self.segments.iter().filter(|s| **s == Segment::Sep).count()
    }

    /// Flat text with literal separator and mask symbols substituted.
    pub fn flatten(&self, separator: &str, mask: &str) -> String {
        self.segments
            .iter()
            .map(|s| match s {
                Segment::Text(t) => t.as_str(),
                Segment::Sep => separator,
                Segment::Mask => mask,
            })
            .collect()
    }
}

/// Assembles `Format(x_c1, y_c1) <Sep> ... <Sep> Format(x_query, mask)` for an
/// arbitrary context sequence; repeated indices are allowed.
///
/// With `drop_query` set and a training-split query, every occurrence of the
/// query in the context is omitted.
pub fn assemble_sequence(
    context: &[usize],
    query: ExampleRef,
    template: &PromptTemplate,
    dataset: &Dataset,
    drop_query: bool,
) -> Result<Prompt> {
    let n_train = dataset.train.len();
    let query_example = dataset.example(query)?;
    let mut segments = Vec::new();
    let mut kept = Vec::with_capacity(context.len());
    for &i in context {
        if i >= n_train {
            return Err(Error::Contract(format!(
                "context index {i} out of range for {n_train} training examples"
            )));
        }
        if drop_query && query.split == Split::Train && query.index == i {
            continue;
        }
        let example = &dataset.train[i];
        template.render_into(example, Answer::Text(dataset.gold_text(example)?), &mut segments)?;
        segments.push(Segment::Sep);
        kept.push(i);
    }
    template.render_into(query_example, Answer::Mask, &mut segments)?;
    Ok(Prompt {
        segments,
        context: kept,
        query,
    })
}

/// Assembles the prompt for a permutation of distinct training examples.
pub fn assemble_prompt(
    c: &Permutation,
    query: ExampleRef,
    template: &PromptTemplate,
    dataset: &Dataset,
    drop_query: bool,
) -> Result<Prompt> {
    validate_permutation(c.as_slice(), dataset.train.len())
        .map_err(|v| Error::Contract(format!("permutation {c}: {v}")))?;
    assemble_sequence(c.as_slice(), query, template, dataset, drop_query)
}
