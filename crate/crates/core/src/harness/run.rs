use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Mode, OracleConfig, RunConfig};
use super::data::Corpus;
use crate::domain::{Dataset, ExampleRef, PromptTemplate, Split};
use crate::error::{Error, Result};
use crate::genetic::{random_permutation, run_search, EpochRecord, FitnessEvaluator, FitnessMode, GaConfig};
use crate::metrics::{mean_std, score_split, SplitScore};
use crate::oneshot::{grow_greedy, parse_label_pattern, repeat_label_pattern, GreedyStep, Pool};
use crate::scoring::{Candidates, HttpOracle, Oracle, Separator, SeparatorEmbedding, ToyParams, ToyScorer};
use crate::separator::{SeparatorLearner, StoredSeparator};

/// Mean and population standard deviation of a set of scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let (mean, std) = mean_std(values);
        Self {
            mean,
            std,
            n: values.len(),
        }
    }
}

/// Outcome of one run on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub mode: Mode,
    pub split: usize,
    pub seed: u64,
    /// Training indices of the final context, in prompt order.
    pub sequence: Vec<usize>,
    /// File holding the learned separator, relative to the run directory.
    pub separator: Option<String>,
    pub train_fitness: Option<f64>,
    pub validation_accuracy: Option<f64>,
    pub validation_ce: Option<f64>,
    /// `accuracy` for labelled tasks, `p_at_1` for fact retrieval.
    pub metric: String,
    pub test: Option<f64>,
    pub best_epoch: Option<usize>,
    pub evaluations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<Summary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub greedy_trace: Option<Vec<GreedyStep>>,
    pub history: Vec<EpochRecord>,
    #[serde(skip)]
    pub wall_time: Duration,
    #[serde(skip)]
    pub learned_separator: Option<StoredSeparator>,
}

/// Runs over every split (and, for one-shot without a pair, every pool).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub mode: Mode,
    pub metric: String,
    pub test: Option<Summary>,
    pub validation: Option<Summary>,
    pub runs: Vec<RunResult>,
}

fn metric_name(dataset: &Dataset) -> &'static str {
    if dataset.kind.is_classification() {
        "accuracy"
    } else {
        "p_at_1"
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// The oracle for one split. The toy oracle's planted ordering and query
/// biases derive from the run seed and the split index.
pub fn build_oracle(config: &RunConfig, dataset: &Dataset, split: usize) -> Result<Box<dyn Oracle>> {
    match &config.oracle {
        OracleConfig::Toy(toy) => {
            let mut rng = stream_rng(config.seed, 100 + split as u64);
            let mut params = ToyParams::random(dataset.train.len(), toy.dim, toy.alpha, &mut rng);
            params.alternation = toy.alternation;
            let mut biases = HashMap::new();
            for s in [Split::Train, Split::Validation, Split::Test] {
                for e in dataset.split(s) {
                    let b = if toy.bias_spread > 0.0 {
                        rng.gen_range(-toy.bias_spread..=toy.bias_spread)
                    } else {
                        0.0
                    };
                    biases.insert(ExampleRef::new(s, e.index), b);
                }
            }
            let scorer = ToyScorer::new(params, dataset, |r| biases.get(&r).copied().unwrap_or(0.0))?;
            Ok(Box::new(scorer))
        }
        OracleConfig::Http(h) => Ok(Box::new(HttpOracle::new(h.clone())?)),
    }
}

/// Accuracy (or P@1) and mean CE of `context` on `split`.
pub fn evaluate<O: Oracle + ?Sized>(
    context: &[usize],
    sep: Separator<'_>,
    split: Split,
    dataset: &Dataset,
    template: &PromptTemplate,
    oracle: &O,
) -> Result<SplitScore> {
    score_split(context, split, dataset, template, oracle, sep, &Candidates::for_dataset(dataset))
}

fn test_score<O: Oracle + ?Sized>(
    context: &[usize],
    sep: Separator<'_>,
    dataset: &Dataset,
    template: &PromptTemplate,
    oracle: &O,
) -> Result<Option<f64>> {
    if dataset.test.is_empty() {
        return Ok(None);
    }
    Ok(Some(evaluate(context, sep, Split::Test, dataset, template, oracle)?.accuracy))
}

/// Test metric of `n_samples` uniformly random `k`-orderings.
pub fn random_permutation_baseline<O: Oracle + ?Sized>(
    dataset: &Dataset,
    template: &PromptTemplate,
    oracle: &O,
    k: usize,
    n_samples: usize,
    seed: u64,
) -> Result<Summary> {
    if dataset.test.is_empty() {
        return Err(Error::Config("random baseline needs a test split".into()));
    }
    let mut rng = stream_rng(seed, 3);
    let sep = Separator::Literal(template.separator());
    let mut scores = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let c = random_permutation(dataset.train.len(), k, &mut rng);
        scores.push(evaluate(c.as_slice(), sep, Split::Test, dataset, template, oracle)?.accuracy);
    }
    Ok(Summary::of(&scores))
}

/// Best of `budget` distinct uniformly random `k`-orderings by training
/// fitness. Gives pure random search the same number of fitness
/// evaluations as a genetic run.
pub fn random_search<O: Oracle + ?Sized>(
    dataset: &Dataset,
    template: &PromptTemplate,
    oracle: &O,
    k: usize,
    budget: usize,
    seed: u64,
) -> Result<(Vec<usize>, f64)> {
    let mut rng = stream_rng(seed, 4);
    let mut evaluator = FitnessEvaluator::new(FitnessMode::Average);
    let sep = Separator::Literal(template.separator());
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut draws = 0usize;
    while evaluator.evaluations() < budget && draws < budget.saturating_mul(20).max(1) {
        draws += 1;
        let c = random_permutation(dataset.train.len(), k, &mut rng);
        let f = evaluator.evaluate(std::slice::from_ref(&c), dataset, template, oracle, sep, 0)?[0];
        if best.as_ref().is_none_or(|b| f < b.1) {
            best = Some((c.into_vec(), f));
        }
    }
    best.ok_or_else(|| Error::Config("random search needs a positive budget".into()))
}

struct HistoryFile(Option<BufWriter<File>>);

impl HistoryFile {
    fn create(dir: Option<&Path>) -> Result<Self> {
        let Some(dir) = dir else { return Ok(Self(None)) };
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("history.jsonl");
        let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self(Some(BufWriter::new(f))))
    }

    fn append(&mut self, record: &EpochRecord) {
        if let Some(w) = &mut self.0 {
            let line = serde_json::to_string(record).expect("history records serialize");
            // a failed write here only loses the live copy; the result keeps the full history
            if writeln!(w, "{line}").and_then(|_| w.flush()).is_err() {
                log::warn!("could not append to history.jsonl");
                self.0 = None;
            }
        }
    }
}

/// Runs `config` on one prepared split, persisting into `out` if given.
pub fn run_split(
    config: &RunConfig,
    template: &PromptTemplate,
    dataset: &Dataset,
    split: usize,
    out: Option<&Path>,
) -> Result<RunResult> {
    let started = Instant::now();
    let oracle = build_oracle(config, dataset, split)?;
    let oracle = oracle.as_ref();
    let literal = Separator::Literal(template.separator());
    let seed = config.seed.wrapping_add(split as u64);
    let mut result = RunResult {
        mode: config.mode,
        split,
        seed: config.seed,
        sequence: Vec::new(),
        separator: None,
        train_fitness: None,
        validation_accuracy: None,
        validation_ce: None,
        metric: metric_name(dataset).into(),
        test: None,
        best_epoch: None,
        evaluations: None,
        baseline: None,
        greedy_trace: None,
        history: Vec::new(),
        wall_time: Duration::ZERO,
        learned_separator: None,
    };

    match config.mode {
        Mode::Pero | Mode::PeroNoSep | Mode::Inverse => {
            let ga = GaConfig {
                seed,
                fitness_mode: if config.mode == Mode::Inverse {
                    FitnessMode::Inverted
                } else {
                    config.ga.fitness_mode
                },
                ..config.ga.clone()
            };
            let mut learner = match config.mode {
                Mode::Pero => Some(SeparatorLearner::new(oracle, config.separator.clone())?),
                _ => None,
            };
            let mut history = HistoryFile::create(out)?;
            let outcome = run_search(dataset, template, oracle, &ga, learner.as_mut(), |r| history.append(r))
                .map_err(|aborted| aborted.error)?;
            let emb = outcome.separator.as_ref().map(StoredSeparator::embedding).transpose()?;
            let sep = emb.as_ref().map_or(literal, Separator::Learned);
            result.test = test_score(&outcome.best.permutation, sep, dataset, template, oracle)?;
            result.sequence = outcome.best.permutation.clone();
            result.train_fitness = Some(outcome.best.train_fitness);
            result.validation_accuracy = Some(outcome.validation.accuracy);
            result.validation_ce = Some(outcome.validation.mean_ce);
            result.best_epoch = Some(outcome.best_epoch);
            result.evaluations = Some(outcome.evaluations);
            result.history = outcome.history;
            if outcome.separator.is_some() {
                result.separator = Some("separator.json".into());
            }
            result.learned_separator = outcome.separator;
        }
        Mode::RandomBaseline => {
            result.baseline = Some(random_permutation_baseline(
                dataset,
                template,
                oracle,
                config.ga.prompt_size,
                config.baseline_samples,
                seed,
            )?);
            result.test = result.baseline.as_ref().map(|b| b.mean);
        }
        Mode::Oneshot => {
            let pool = Pool::new(dataset, config.pair.as_deref().unwrap_or_default())?;
            let out = grow_greedy(&pool, dataset, template, oracle, literal, config.l_max, config.balance)?;
            result.train_fitness = out.trace.last().map(|s| s.fitness);
            result.test = test_score(&out.indices, literal, dataset, template, oracle)?;
            result.sequence = out.indices;
            result.greedy_trace = Some(out.trace);
        }
        Mode::LabelPattern => {
            let pool = Pool::new(dataset, config.pair.as_deref().unwrap_or_default())?;
            let pattern = parse_label_pattern(config.pattern.as_deref().unwrap_or_default(), &config.pattern_symbols)?;
            let sequence = repeat_label_pattern(&pattern, &pool)?;
            result.test = test_score(&sequence, literal, dataset, template, oracle)?;
            result.sequence = sequence;
        }
        Mode::Evaluate => {
            let context = config.context.clone().unwrap_or_default();
            if let Some(&bad) = context.iter().find(|&&i| i >= dataset.train.len()) {
                return Err(Error::Config(format!(
                    "context index {bad} outside {} training examples",
                    dataset.train.len()
                )));
            }
            let stored = match &config.separator_file {
                Some(p) => Some(StoredSeparator::load(p, oracle.info()?.dim)?),
                None => None,
            };
            let emb: Option<SeparatorEmbedding> = stored.as_ref().map(StoredSeparator::embedding).transpose()?;
            let sep = emb.as_ref().map_or(literal, Separator::Learned);
            if !dataset.validation.is_empty() {
                let v = evaluate(&context, sep, Split::Validation, dataset, template, oracle)?;
                result.validation_accuracy = Some(v.accuracy);
                result.validation_ce = Some(v.mean_ce);
            }
            result.test = test_score(&context, sep, dataset, template, oracle)?;
            result.sequence = context;
        }
    }
    result.wall_time = started.elapsed();
    if let Some(dir) = out {
        persist(dir, config, &result)?;
    }
    info!(
        "{} split {split}: {} {}",
        config.mode.name(),
        result.metric,
        result.test.map_or("n/a".to_string(), |t| format!("{t:.4}"))
    );
    Ok(result)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut body = serde_json::to_string_pretty(value)?;
    body.push('\n');
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Writes `result.json`, `config.json`, `timing.json`, the history and any
/// learned separator into `dir`.
pub fn persist(dir: &Path, config: &RunConfig, result: &RunResult) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(&dir.join("result.json"), result)?;
    write_json(&dir.join("config.json"), config)?;
    write_json(
        &dir.join("timing.json"),
        &serde_json::json!({ "wall_secs": result.wall_time.as_secs_f64() }),
    )?;
    let history = dir.join("history.jsonl");
    let mut lines = String::new();
    for r in &result.history {
        lines.push_str(&serde_json::to_string(r)?);
        lines.push('\n');
    }
    if !result.history.is_empty() || history.exists() {
        fs::write(&history, lines).map_err(|e| Error::io(&history, e))?;
    }
    if let Some(s) = &result.learned_separator {
        s.save(&dir.join("separator.json"))?;
    }
    Ok(())
}

/// Runs `config` on its configured split.
pub fn run(config: &RunConfig) -> Result<RunResult> {
    config.validate()?;
    let template = config.template()?;
    let corpus = Corpus::load(&config.data, &template, &config.splits)?;
    let dataset = corpus.split(config.split, &config.splits)?;
    run_split(config, &template, &dataset, config.split, config.out_dir.as_deref())
}

/// Every one-example-per-label pool of a split's training examples, in
/// lexicographic order of label ordinal.
pub fn all_pools(dataset: &Dataset) -> Result<Vec<Vec<usize>>> {
    let labels = dataset
        .labels()
        .ok_or_else(|| Error::Config("pools need a labelled task".into()))?;
    let mut by_label: Vec<Vec<usize>> = vec![Vec::new(); labels.len()];
    for e in &dataset.train {
        if let Some(o) = dataset.label_ordinal(e) {
            by_label[o].push(e.index);
        }
    }
    let mut pools: Vec<Vec<usize>> = vec![Vec::new()];
    for members in &by_label {
        pools = pools
            .into_iter()
            .flat_map(|p| {
                members.iter().map(move |&m| {
                    let mut q = p.clone();
                    q.push(m);
                    q
                })
            })
            .collect();
    }
    Ok(pools)
}

/// Runs `config` on every split and aggregates the test metric. In one-shot
/// mode without a pair, every pool of every split is run.
pub fn sweep(config: &RunConfig) -> Result<SweepResult> {
    let template = config.template()?;
    let corpus = Corpus::load(&config.data, &template, &config.splits)?;
    let mut runs = Vec::new();
    for split in 0..config.splits.count {
        let mut c = config.clone();
        c.split = split;
        let dataset = corpus.split(split, &config.splits)?;
        let split_dir = config.out_dir.as_ref().map(|d| d.join(format!("split-{split}")));
        if c.mode == Mode::Oneshot && c.pair.is_none() {
            for pool in all_pools(&dataset)? {
                c.pair = Some(pool.clone());
                c.validate()?;
                let name: Vec<String> = pool.iter().map(usize::to_string).collect();
                let dir: Option<PathBuf> = split_dir.as_ref().map(|d| d.join(format!("pair-{}", name.join("-"))));
                runs.push(run_split(&c, &template, &dataset, split, dir.as_deref())?);
            }
        } else {
            c.validate()?;
            runs.push(run_split(&c, &template, &dataset, split, split_dir.as_deref())?);
        }
    }
    let collect = |f: fn(&RunResult) -> Option<f64>| -> Option<Summary> {
        let v: Vec<f64> = runs.iter().filter_map(f).collect();
        (!v.is_empty()).then(|| Summary::of(&v))
    };
    let result = SweepResult {
        mode: config.mode,
        metric: runs.first().map_or_else(String::new, |r| r.metric.clone()),
        test: collect(|r| r.test),
        validation: collect(|r| r.validation_accuracy),
        runs,
    };
    if let Some(dir) = &config.out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_json(&dir.join("summary.json"), &result)?;
        write_json(&dir.join("config.json"), config)?;
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{DatasetFormat, Example};
    use crate::harness::config::{SplitConfig, ToyConfig};

    fn quick(mode: Mode) -> RunConfig {
        let mut c = RunConfig::new("sentiment", None).unwrap();
        c.mode = mode;
        c.ga.population = 16;
        c.ga.selection_size = 8;
        c.ga.epochs = 4;
        c.ga.prompt_size = 6;
        c.separator.max_epochs = 1;
        c.splits = SplitConfig { count: 2, size: 10 };
        c.baseline_samples = 5;
        c
    }

    #[test]
    fn every_mode_runs_and_reports_bounded_metrics() {
        for mode in [Mode::Pero, Mode::PeroNoSep, Mode::Inverse, Mode::RandomBaseline] {
            let r = run(&quick(mode)).unwrap();
            let t = r.test.unwrap();
            assert!((0.0..=1.0).contains(&t), "{mode:?} {t}");
            if let Some(v) = r.validation_accuracy {
                assert!((0.0..=1.0).contains(&v));
            }
        }
        let mut c = quick(Mode::Oneshot);
        c.pair = Some(vec![0, 1]);
        c.l_max = 4;
        let r = run(&c).unwrap();
        assert_eq!(r.sequence.len(), 4);
        assert_eq!(r.greedy_trace.as_ref().unwrap().len(), 4);
        c.mode = Mode::LabelPattern;
        c.pattern = Some("--++".into());
        assert_eq!(run(&c).unwrap().sequence, vec![1, 1, 0, 0]);
        c.mode = Mode::Evaluate;
        c.context = Some(vec![3, 1, 4]);
        assert_eq!(run(&c).unwrap().sequence, vec![3, 1, 4]);
        c.context = Some(vec![30]);
        assert!(matches!(run(&c), Err(Error::Config(_))));
    }

    #[test]
    fn no_sep_mode_learns_nothing() {
        let r = run(&quick(Mode::PeroNoSep)).unwrap();
        assert!(r.separator.is_none() && r.learned_separator.is_none());
        assert!(r.history.iter().all(|h| h.sep_loss.is_none()));
        let r = run(&quick(Mode::Pero)).unwrap();
        assert_eq!(r.separator.as_deref(), Some("separator.json"));
    }

    #[test]
    fn sweep_aggregates_splits() {
        let s = sweep(&quick(Mode::PeroNoSep)).unwrap();
        assert_eq!(s.runs.len(), 2);
        let t = s.test.unwrap();
        assert_eq!(t.n, 2);
        assert!(t.std >= 0.0);
        let (m, _) = mean_std(&[s.runs[0].test.unwrap(), s.runs[1].test.unwrap()]);
        assert_eq!(t.mean, m);
    }

    #[test]
    fn one_shot_sweep_covers_every_pool() {
        let mut c = quick(Mode::Oneshot);
        c.splits = SplitConfig { count: 1, size: 10 };
        c.l_max = 2;
        let s = sweep(&c).unwrap();
        // five of each label in a synthetic split of ten
        assert_eq!(s.runs.len(), 25);
    }

    #[test]
    fn pools_are_cartesian() {
        let t = PromptTemplate::builtin("sentiment").unwrap();
        let train = ["positive", "negative", "positive", "negative", "negative"]
            .iter()
            .enumerate()
            .map(|(i, l)| Example::single(i, format!("x{i}"), *l).unwrap())
            .collect();
        let d = Dataset::new(&DatasetFormat::for_template(&t), train, vec![], vec![]).unwrap();
        let p = all_pools(&d).unwrap();
        assert_eq!(p, vec![vec![0, 1], vec![0, 3], vec![0, 4], vec![2, 1], vec![2, 3], vec![2, 4]]);
    }

    #[test]
    fn persisted_run_replays_byte_identically() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let mut c = quick(Mode::Pero);
        c.out_dir = Some(a.path().to_path_buf());
        run(&c).unwrap();
        let mut replay = RunConfig::load(&a.path().join("config.json")).unwrap();
        replay.out_dir = Some(b.path().to_path_buf());
        run(&replay).unwrap();
        for f in ["result.json", "history.jsonl", "separator.json"] {
            assert_eq!(
                fs::read(a.path().join(f)).unwrap(),
                fs::read(b.path().join(f)).unwrap(),
                "{f}"
            );
        }
    }

    #[test]
    fn toy_oracle_depends_on_split() {
        let c = RunConfig {
            oracle: OracleConfig::Toy(ToyConfig::default()),
            ..quick(Mode::PeroNoSep)
        };
        let t = c.template().unwrap();
        let corpus = Corpus::load(&c.data, &t, &c.splits).unwrap();
        let d = corpus.split(0, &c.splits).unwrap();
        let a = build_oracle(&c, &d, 0).unwrap().score_batch(
            &[crate::domain::assemble_sequence(&[0, 1], ExampleRef::train(2), &t, &d, false).unwrap()],
            &Candidates::for_dataset(&d),
            Separator::Literal("</s>"),
        );
        let b = build_oracle(&c, &d, 1).unwrap().score_batch(
            &[crate::domain::assemble_sequence(&[0, 1], ExampleRef::train(2), &t, &d, false).unwrap()],
            &Candidates::for_dataset(&d),
            Separator::Literal("</s>"),
        );
        assert_ne!(a.unwrap(), b.unwrap());
    }
}
