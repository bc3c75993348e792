//! Run configuration, split handling, baselines and persistence.

mod config;
mod data;
mod run;

pub use config::{DataConfig, Mode, OracleConfig, RunConfig, SplitConfig, ToyConfig};
pub use data::{balanced_head, check_balance, synthetic, Corpus};
pub use run::{
    all_pools, build_oracle, evaluate, persist, random_permutation_baseline, random_search, run, run_split, sweep,
    RunResult, Summary, SweepResult,
};
