//! Metrics, synthetic data, noise injection, calibration and the robustness sweep.

mod experiment;
mod fit;
mod metrics;
mod pipeline;
mod sweep;
mod synth;

pub use experiment::{desk_precondition, run_experiment, CorpusSpec, ExperimentConfig, ExperimentOutcome};
pub use fit::{fit, quick_validation, EpochLog, FitConfig, FitLog};
pub use metrics::{acc, acc_within, apr, mae, EvalReport, GatherEval, Tally};
pub use pipeline::{
    calibrate_threshold, default_threshold_grid, evaluate_runs, gather_seed, sample_all, Calibration,
    PickingConfig, Prepared, SetEval,
};
pub use sweep::{
    robustness_sweep, spearman, summarize, summary_csv, sweep_csv, SweepRow, SweepSettings, SweepSummary,
    DEFAULT_SNRS,
};
pub use synth::{inject_noise, noise_variance, ricker, synth_gather, SynthSpec};
