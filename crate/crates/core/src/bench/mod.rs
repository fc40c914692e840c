//! Synthetic experiments: planted models, recovery, metrics, sweeps and timing.

mod delta;
mod metrics;
mod planted;
mod recovery;
mod sweep;
mod task;
mod timing;

pub use delta::{delta_ordering, DeltaOrdering};
pub use metrics::{f1_from_counts, weighted_f1, ClassMetrics, MetricReport};
pub use planted::{generate_planted_model, CopyTask, PlantedModel, PlantedSpec};
pub use recovery::{
    in_gap_thresholds, mean_profile, planted_boundaries, recover_planted_heads, score_classification, PrecisionRecall,
    RecoveryReport,
};
pub use sweep::{boundary_sweep, brackets, copy_accuracy, gain_sweep, sweep, threshold_sweep, ProfiledModels, SweepCell, SweepGrid};
pub use task::TaskLayout;
pub use timing::{
    reference_config, stats, timer_resolution, timing_harness, FlopReport, Stats, TimingConfig, TimingReport, TimingRow,
};
