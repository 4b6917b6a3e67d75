//! Metrics, the experiment protocols (ablation, multi-subject sweep,
//! threshold sweep) and latent export.

mod experiments;
mod latents;
mod metrics;
mod stats;

pub use experiments::{
    assign_subjects, config_split, init_digest, prepare_split, repetition, run_ablation, run_one,
    standardize_split, sweep_multisubject, sweep_thresholds, synthetic_split, AblationTable,
    CurvePoint, GridCell, MultiSubjectGrid, PreparedSplit, RunResult, ThresholdSweep, VariantRow,
};
pub use latents::{export_latents, LatentExport, Pca};
pub use metrics::{evaluate, predict, MetricsReport};
pub use stats::{pooled_std, ranks, spearman, Summary};
