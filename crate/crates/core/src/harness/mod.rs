//! Synthetic data, splits, and the repeated-run experiment driver.

mod experiment;
mod split;
mod subsample;
mod synth;

pub use experiment::{
    run_experiment, run_on, run_repetition, sweep_csv, sweep_lambda, DataSource, ExperimentConfig, Method,
    RepetitionResult, ResultTable, Stat, Summary, SweepRow, CONFIG_SCHEMA, SWEEP_HEADER,
};
pub use split::{stratified_split, SplitFractions};
pub use subsample::{subsample_keep, subsample_to_ratio};
pub use synth::{generate_synth, SynthSpec};
