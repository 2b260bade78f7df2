//! Agreement metrics, statistical tests, experiment drivers and the speed benchmark.

pub mod bench;
pub mod experiments;
pub mod metrics;
pub mod wilcoxon;

pub use bench::{benchmark, hardware_fingerprint, surrogate_scaling, BenchReport, ScalingReport, BENCH_REPS};
pub use experiments::{
    cohort_composition, conventional_mwf, noise_ladder, summarize_nrmse, surrogate_agreement, te_mismatch,
    threshold_sweep, Agreement, CompositionRow, EvalSubject, NoiseRow, NrmseSummary, TeRow, ThresholdRow,
    TrainingSubject,
};
pub use metrics::{
    bland_altman, compare, finite_mask, nrmse, r_squared, write_reports_csv, BlandAltman, ComparisonReport, NrmseNorm,
};
pub use wilcoxon::{enumeration_p, wilcoxon_signed_rank};
