//! Cross-validation folds, pooled confusion matrices, metrics, ROC/AUC and
//! latency summaries.

mod folds;
mod metrics;
mod pool;
mod roc;

pub use folds::{grouped_folds, loso_folds, Fold, FoldPlan};
pub use metrics::{
    compute_diagnostic, compute_overall, ConfusionMatrix, Diagnostic, Overall, Ratio,
    DECISION_THRESHOLD,
};
pub use pool::{
    fold_confusion, latency_stats, pool_predictions, LatencyStats, Pooled, PooledPrediction,
    Prediction, REFERENCE_LATENCY_MS,
};
pub use roc::{auc_rank, roc_auc, roc_curve, RocCurve, RocPoint};
