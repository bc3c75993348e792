use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::error;

use permprompt::genetic::FitnessMode;
use permprompt::harness::{self, DataConfig, Mode, OracleConfig, RunConfig, SplitConfig, ToyConfig};
use permprompt::oneshot::BalanceRule;
use permprompt::scoring::HttpOracleConfig;
use permprompt::{Error, Result};

#[derive(Parser)]
#[command(name = "permprompt", version, about = "Search over few-shot prompt orderings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Genetic search over orderings of one training split.
    Search {
        #[arg(long, value_enum, default_value_t = SearchMode::Pero)]
        mode: SearchMode,
        #[command(flatten)]
        common: Common,
    },
    /// Greedy one-shot growth, or a fixed label pattern, from one example per label.
    Oneshot {
        /// Training indices, one per label, e.g. `3,4`.
        #[arg(long, value_delimiter = ',')]
        pair: Vec<usize>,
        /// Label pattern such as `----++++--`; switches to pattern mode.
        #[arg(long, allow_hyphen_values = true)]
        pattern: Option<String>,
        /// The i-th symbol stands for the i-th label of the template.
        #[arg(long)]
        symbols: Option<String>,
        #[arg(long)]
        strict_alternation: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Test accuracy of uniformly random orderings.
    BaselineRandom {
        #[arg(long)]
        samples: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Scores a given context on the validation and test examples.
    Evaluate {
        /// Training indices in prompt order; repeats allowed.
        #[arg(long, value_delimiter = ',', required = true)]
        context: Vec<usize>,
        /// Learned separator from a previous search.
        #[arg(long)]
        separator: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Runs one mode over every split and reports mean and standard deviation.
    Sweep {
        #[arg(long, value_enum, default_value_t = SweepMode::Pero)]
        mode: SweepMode,
        /// Pool for one-shot and pattern modes; one-shot without it runs every pool.
        #[arg(long, value_delimiter = ',')]
        pair: Vec<usize>,
        #[arg(long, allow_hyphen_values = true)]
        pattern: Option<String>,
        #[arg(long)]
        samples: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SearchMode {
    Pero,
    PeroNoSep,
    Inverse,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepMode {
    Pero,
    PeroNoSep,
    Inverse,
    RandomBaseline,
    Oneshot,
    LabelPattern,
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleKind {
    Toy,
    Http,
}

#[derive(Args)]
struct Common {
    /// TOML or JSON run config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Template name (built-in: sentiment, nli, P131, P279).
    #[arg(long)]
    template: Option<String>,
    /// TOML file of extra templates.
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long, requires = "validation")]
    train: Option<PathBuf>,
    #[arg(long, requires = "train")]
    validation: Option<PathBuf>,
    #[arg(long, requires = "train")]
    test: Option<PathBuf>,
    /// Which training split to use.
    #[arg(long)]
    split: Option<usize>,
    /// Number of successive training splits.
    #[arg(long)]
    splits: Option<usize>,
    /// 100 splits of 10 from the first 1000 training examples.
    #[arg(long)]
    large_splits: bool,
    #[arg(long, value_enum)]
    oracle: Option<OracleKind>,
    /// Scoring service base URL.
    #[arg(long, env = "PERMPROMPT_ENDPOINT")]
    endpoint: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Population size [default: 100]
    #[arg(long)]
    population: Option<usize>,
    /// Mutation probability per position [default: 0.1]
    #[arg(long)]
    pm: Option<f64>,
    /// Fraction of the population kept unchanged [default: 0.1]
    #[arg(long)]
    elite: Option<f64>,
    /// Breeding pool size [default: 25]
    #[arg(long)]
    selection: Option<usize>,
    /// Generations after the initial one [default: 100, 30 for fact retrieval]
    #[arg(long)]
    epochs: Option<usize>,
    /// Examples per prompt [default: 10]
    #[arg(long)]
    prompt_size: Option<usize>,
    /// Length of greedily grown one-shot prompts [default: 10]
    #[arg(long)]
    lmax: Option<usize>,
    /// Per-query fitness aggregation [default: average]
    #[arg(long, value_enum)]
    fitness: Option<FitnessArg>,
    /// Separator training epochs per generation [default: 10, 5 for fact retrieval]
    #[arg(long)]
    sep_epochs: Option<usize>,
    /// Separator learning rate [default: 1e-4]
    #[arg(long)]
    lr: Option<f64>,
    /// Toy oracle weight on ordering agreement [default: 4]
    #[arg(long)]
    toy_alpha: Option<f64>,
    /// Toy oracle separator dimension [default: 8]
    #[arg(long)]
    toy_dim: Option<usize>,
    /// Output directory for result.json, history.jsonl and separator.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FitnessArg {
    Average,
    Minimum,
}

impl Common {
    fn config(&self, mode: Mode) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::new(self.template.as_deref().unwrap_or("sentiment"), self.templates.as_deref())?,
        };
        if self.config.is_some() && (self.template.is_some() || self.templates.is_some()) {
            let name = self.template.clone().unwrap_or_else(|| c.template.clone());
            let mut fresh = RunConfig::new(&name, self.templates.as_deref().or(c.templates.as_deref()))?;
            fresh.mode = c.mode;
            c.template = fresh.template;
            c.templates = fresh.templates;
        }
        c.mode = mode;
        if let Some(train) = &self.train {
            c.data = DataConfig::Files {
                train: train.clone(),
                validation: self.validation.clone().expect("clap requires the validation path"),
                test: self.test.clone(),
            };
        }
        if self.large_splits {
            c.splits = SplitConfig::large();
        }
        set(&mut c.splits.count, self.splits);
        set(&mut c.split, self.split);
        match self.oracle {
            Some(OracleKind::Toy) if !matches!(c.oracle, OracleConfig::Toy(_)) => {
                c.oracle = OracleConfig::Toy(ToyConfig::default())
            }
            Some(OracleKind::Http) if !matches!(c.oracle, OracleConfig::Http(_)) => {
                c.oracle = OracleConfig::Http(HttpOracleConfig::default())
            }
            _ => {}
        }
        match &mut c.oracle {
            OracleConfig::Http(h) => set(&mut h.endpoint, self.endpoint.clone()),
            OracleConfig::Toy(t) => {
                set(&mut t.alpha, self.toy_alpha);
                set(&mut t.dim, self.toy_dim);
            }
        }
        set(&mut c.seed, self.seed);
        set(&mut c.ga.population, self.population);
        set(&mut c.ga.mutation_prob, self.pm);
        set(&mut c.ga.elite_ratio, self.elite);
        set(&mut c.ga.selection_size, self.selection);
        set(&mut c.ga.epochs, self.epochs);
        set(&mut c.ga.prompt_size, self.prompt_size);
        set(&mut c.l_max, self.lmax);
        if let Some(f) = self.fitness {
            c.ga.fitness_mode = match f {
                FitnessArg::Average => FitnessMode::Average,
                FitnessArg::Minimum => FitnessMode::Minimum,
            };
        }
        set(&mut c.separator.max_epochs, self.sep_epochs);
        set(&mut c.separator.learning_rate, self.lr);
        if self.out.is_some() {
            c.out_dir = self.out.clone();
        }
        Ok(c)
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn pair_option(pair: Vec<usize>) -> Option<Vec<usize>> {
    (!pair.is_empty()).then_some(pair)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Search { mode, common } => {
            let mode = match mode {
                SearchMode::Pero => Mode::Pero,
                SearchMode::PeroNoSep => Mode::PeroNoSep,
                SearchMode::Inverse => Mode::Inverse,
            };
            print_json(&harness::run(&common.config(mode)?)?)
        }
        Command::Oneshot { pair, pattern, symbols, strict_alternation, common } => {
            let mode = if pattern.is_some() { Mode::LabelPattern } else { Mode::Oneshot };
            let mut c = common.config(mode)?;
            c.pair = pair_option(pair).or(c.pair);
            c.pattern = pattern.or(c.pattern);
            set(&mut c.pattern_symbols, symbols);
            if strict_alternation {
                c.balance = BalanceRule::Alternating;
            }
            let r = harness::run(&c)?;
            print_json(&serde_json::json!({
                "sequence": r.sequence,
                "fitness_trace": r.greedy_trace.as_ref().map(|t| t.iter().map(|s| s.fitness).collect::<Vec<_>>()),
                "metric": r.metric,
                "test": r.test,
            }))
        }
        Command::BaselineRandom { samples, common } => {
            let mut c = common.config(Mode::RandomBaseline)?;
            set(&mut c.baseline_samples, samples);
            print_json(&harness::run(&c)?)
        }
        Command::Evaluate { context, separator, common } => {
            let mut c = common.config(Mode::Evaluate)?;
            c.context = Some(context);
            c.separator_file = separator.or(c.separator_file);
            print_json(&harness::run(&c)?)
        }
        Command::Sweep { mode, pair, pattern, samples, common } => {
            let mode = match mode {
                SweepMode::Pero => Mode::Pero,
                SweepMode::PeroNoSep => Mode::PeroNoSep,
                SweepMode::Inverse => Mode::Inverse,
                SweepMode::RandomBaseline => Mode::RandomBaseline,
                SweepMode::Oneshot => Mode::Oneshot,
                SweepMode::LabelPattern => Mode::LabelPattern,
            };
            let mut c = common.config(mode)?;
            c.pair = pair_option(pair).or(c.pair);
            c.pattern = pattern.or(c.pattern);
            set(&mut c.baseline_samples, samples);
            let s = harness::sweep(&c)?;
            print_json(&serde_json::json!({
                "mode": s.mode,
                "metric": s.metric,
                "test": s.test,
                "validation": s.validation,
                "runs": s.runs.len(),
            }))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    e.exit_code().clamp(0, 255) as u8
}
