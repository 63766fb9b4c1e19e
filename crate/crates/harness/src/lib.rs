//! Experiment harness for the cascade-control library: synthetic parameter
//! sweeps, labeled-dataset generation, the fit-and-replay pipeline, and
//! deterministic output writers. The `dropcast` binary exposes all of it on
//! the command line.

pub mod config;
pub mod dataset;
pub mod output;
pub mod sweep;

pub use config::{
    load_block, load_config, load_partition, ControlSpec, DatasetGenConfig, NamedPolicy,
    RangeSpec, SyntheticConfig,
};
pub use dataset::{
    generate_dataset, read_labeled_jsonl, run_dataset_pipeline, write_labeled_jsonl,
    PipelineReport, PolicyMetrics,
};
pub use sweep::{
    derive_seed, run_sweep, synthetic_matrices, uniform_seeds, Collation, SweepCell, SweepResult,
};
