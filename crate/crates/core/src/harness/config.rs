use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::domain::{PromptTemplate, TaskKind, TemplateSet};
use crate::error::{Error, Result};
use crate::genetic::GaConfig;
use crate::oneshot::BalanceRule;
use crate::scoring::HttpOracleConfig;
use crate::separator::SepTrainConfig;

/// What a run does.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Genetic search with separator learning.
    #[default]
    Pero,
    /// Genetic search with the template's literal separator.
    PeroNoSep,
    /// Genetic search for the worst ordering.
    Inverse,
    /// Test accuracy of uniformly random orderings.
    RandomBaseline,
    /// Greedy growth from one example per label.
    Oneshot,
    /// A fixed label pattern filled from one example per label.
    LabelPattern,
    /// Scores a given context without searching.
    Evaluate,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Pero => "pero",
            Mode::PeroNoSep => "pero-no-sep",
            Mode::Inverse => "inverse",
            Mode::RandomBaseline => "random-baseline",
            Mode::Oneshot => "oneshot",
            Mode::LabelPattern => "label-pattern",
            Mode::Evaluate => "evaluate",
        }
    }
}

/// Where examples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum DataConfig {
    Files {
        train: PathBuf,
        validation: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test: Option<PathBuf>,
    },
    /// Generated examples with alternating labels; for the toy oracle.
    Synthetic {
        n_validation: usize,
        n_test: usize,
    },
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig::Synthetic {
            n_validation: 10,
            n_test: 100,
        }
    }
}

/// Successive training splits taken from the head of the training file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub count: usize,
    pub size: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { count: 5, size: 10 }
    }
}

impl SplitConfig {
    /// 100 splits of 10 from the first 1000 training examples.
    pub fn large() -> Self {
        Self {
            count: 100,
            size: 10,
        }
    }
}

/// Closed-form oracle with a planted optimum drawn from the run seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub alpha: f64,
    pub dim: usize,
    /// Query biases are uniform in `[-bias_spread, bias_spread]`.
    pub bias_spread: f64,
    pub alternation: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            alpha: 4.0,
            dim: 8,
            bias_spread: 2.0,
            alternation: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OracleConfig {
    Toy(ToyConfig),
    Http(HttpOracleConfig),
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig::Toy(ToyConfig::default())
    }
}

/// Everything needed to replay a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    /// Template name: a built-in or an entry of `templates`.
    pub template: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub templates: Option<PathBuf>,
    pub data: DataConfig,
    pub splits: SplitConfig,
    /// Split used by single-split commands.
    pub split: usize,
    pub oracle: OracleConfig,
    pub ga: GaConfig,
    pub separator: SepTrainConfig,
    pub seed: u64,
    pub l_max: usize,
    pub balance: BalanceRule,
    /// Training indices, one per label, for one-shot and pattern modes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<String>,
    /// The `i`-th symbol stands for label ordinal `i` in `pattern`.
    pub pattern_symbols: String,
    pub baseline_samples: usize,
    /// Context for evaluate mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<Vec<usize>>,
    /// Stored separator for evaluate mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub separator_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    /// Defaults for `template`'s task kind.
    pub fn for_kind(template: impl Into<String>, kind: TaskKind) -> Self {
        let fact = kind == TaskKind::FactRetrieval;
        Self {
            mode: Mode::default(),
            template: template.into(),
            templates: None,
            data: DataConfig::default(),
            splits: SplitConfig::default(),
            split: 0,
            oracle: OracleConfig::default(),
            ga: if fact { GaConfig::fact_retrieval() } else { GaConfig::default() },
            separator: if fact {
                SepTrainConfig::fact_retrieval()
            } else {
                SepTrainConfig::classification()
            },
            seed: 0,
            l_max: 10,
            balance: BalanceRule::default(),
            pair: None,
            pattern: None,
            pattern_symbols: "+-".into(),
            baseline_samples: 100,
            context: None,
            separator_file: None,
            out_dir: None,
        }
    }

    /// Defaults for a built-in template, or for a template in `templates`.
    pub fn new(template: &str, templates: Option<&Path>) -> Result<Self> {
        let t = resolve_template(template, templates)?;
        let mut c = Self::for_kind(template, t.kind());
        c.templates = templates.map(Path::to_path_buf);
        Ok(c)
    }

    /// Reads a TOML or JSON config. Missing fields take the defaults of the
    /// named template's task kind.
    pub fn load(path: &Path) -> Result<Self> {
        let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let partial: Value = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&body)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
            _ => {
                let t: toml::Value = toml::from_str(&body)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                serde_json::to_value(t)?
            }
        };
        Self::from_partial(partial)
    }

    pub fn from_partial(partial: Value) -> Result<Self> {
        let template = partial
            .get("template")
            .and_then(Value::as_str)
            .unwrap_or("sentiment")
            .to_string();
        let templates = partial.get("templates").and_then(Value::as_str).map(PathBuf::from);
        let base = Self::new(&template, templates.as_deref())?;
        let mut merged = serde_json::to_value(&base)?;
        merge(&mut merged, partial);
        serde_json::from_value(merged).map_err(|e| Error::Config(format!("run config: {e}")))
    }

    pub fn template(&self) -> Result<PromptTemplate> {
        resolve_template(&self.template, self.templates.as_deref())
    }

    /// Checks mode-specific requirements before any oracle call.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.splits.count == 0 || self.splits.size == 0 {
            return bad("split count and size must be positive");
        }
        if self.split >= self.splits.count {
            return Err(Error::Config(format!(
                "split {} out of range for {} splits",
                self.split, self.splits.count
            )));
        }
        match self.mode {
            Mode::Oneshot | Mode::LabelPattern if self.pair.is_none() => {
                return bad("one-shot and label-pattern modes need a pair");
            }
            Mode::LabelPattern if self.pattern.is_none() => return bad("label-pattern mode needs a pattern"),
            Mode::Evaluate if self.context.is_none() => return bad("evaluate mode needs a context"),
            Mode::RandomBaseline if self.baseline_samples == 0 => {
                return bad("random baseline needs at least one sample")
            }
            Mode::Oneshot if self.l_max == 0 => return bad("l_max must be positive"),
            _ => {}
        }
        if self.pattern_symbols.chars().count() < 2 {
            return bad("pattern symbols must name at least two labels");
        }
        if let OracleConfig::Http(h) = &self.oracle {
            if h.endpoint.trim().is_empty() {
                return bad("http oracle needs an endpoint");
            }
        }
        if matches!(self.mode, Mode::Pero) {
            self.separator.validate()?;
        }
        if matches!(self.mode, Mode::Pero | Mode::PeroNoSep | Mode::Inverse | Mode::RandomBaseline) {
            self.ga.validate(self.splits.size)?;
        }
        Ok(())
    }
}

fn resolve_template(name: &str, templates: Option<&Path>) -> Result<PromptTemplate> {
    let found = match templates {
        Some(p) => TemplateSet::load(p)?.get(name),
        None => PromptTemplate::builtin(name),
    };
    found.ok_or_else(|| Error::Config(format!("unknown template {name:?}")))
}

/// Recursive object merge; `patch` wins on conflicts.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    // a tagged enum switches variant: take the patch whole
                    Some(slot) if slot.is_object() && v.is_object() && !switches_variant(slot, &v) => {
                        merge(slot, v)
                    }
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

fn switches_variant(base: &Value, patch: &Value) -> bool {
    ["kind", "source"].iter().any(|tag| match (base.get(tag), patch.get(tag)) {
        (Some(a), Some(b)) => a != b,
        _ => false,
    })
}
