//! Open-set metrics, the cross-condition experiment protocol and report
//! writers.

pub mod metrics;
pub mod protocol;
pub mod report;

pub use metrics::{auroc, known_accuracy, mean_std, roc_curve, tpr_at_fpr, MeanStd, ScoredSample};
pub use protocol::{
    aggregate, derive_seed, fold_split, partition_classes, run_one, run_protocol, ConfigSummary, ExperimentReport,
    FoldSplit, PositionSummary, ProtocolConfig, RunOptions, RunRow, RunScores, Variant,
};
