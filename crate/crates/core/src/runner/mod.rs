//! Seeded experiments: configuration, presets, training loops and CSV output.

mod check;
mod config;
mod output;
mod presets;
mod train;

pub use check::{run_checks, CheckOutcome};
pub use config::{
    BankInit, DatasetConfig, DatasetKind, EncoderConfig, EvalConfig, ExperimentConfig, Granularity, OutputConfig, TrainConfig,
    Variant,
};
pub use output::{
    emit_metrics, run_experiment, step_row, summary_row, write_representations, CsvFile, CsvSink, EPOCHS_HEADER,
    REPR_HEADER_PREFIX, STEPS_HEADER, SUMMARY_HEADER, VARIANTS_HEADER,
};
pub use presets::{load, preset, ALPHAS, GAUSSIAN_PERCENTS, PRESETS, SPIRAL_ETAS};
pub use train::{
    stream, train_run, EpochRecord, NullObserver, Observer, Representations, RunInfo, RunRecord, StepRecord,
};
