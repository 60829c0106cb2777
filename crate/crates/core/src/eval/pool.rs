use std::time::Duration;

use crate::error::{Error, Result};

use super::metrics::{ConfusionMatrix, DECISION_THRESHOLD};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    /// Probability of the positive (unconscious) class.
    pub score: f64,
    pub positive: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PooledPrediction {
    pub fold: usize,
    pub score: f64,
    pub positive: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pooled {
    pub predictions: Vec<PooledPrediction>,
    pub confusion: ConfusionMatrix,
}

impl Pooled {
    pub fn scores(&self) -> Vec<f64> {
        self.predictions.iter().map(|p| p.score).collect()
    }

    pub fn positives(&self) -> Vec<bool> {
        self.predictions.iter().map(|p| p.positive).collect()
    }
}

pub fn fold_confusion(preds: &[Prediction]) -> ConfusionMatrix {
    let mut cm = ConfusionMatrix::default();
    for p in preds {
        cm.record(p.score >= DECISION_THRESHOLD, p.positive);
    }
    cm
}

pub fn pool_predictions(folds: &[Vec<Prediction>]) -> Result<Pooled> {
    let mut predictions = Vec::new();
    let mut confusion = ConfusionMatrix::default();
    for (fold, preds) in folds.iter().enumerate() {
        if preds.is_empty() {
            return Err(Error::InvalidArgument(format!("fold {fold} has no predictions")));
        }
        confusion = confusion + fold_confusion(preds);
        predictions.extend(preds.iter().map(|p| PooledPrediction {
            fold,
            score: p.score,
            positive: p.positive,
        }));
    }
    Ok(Pooled {
        predictions,
        confusion,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyStats {
    pub count: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub max_ms: f64,
}

/// Latency reported for the reference system, for context only.
pub const REFERENCE_LATENCY_MS: f64 = 317.22;

/// Summary of `(ingest, emit)` offsets.
pub fn latency_stats(pairs: &[(Duration, Duration)]) -> Result<LatencyStats> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no latency samples".into()));
    }
    let mut ms = Vec::with_capacity(pairs.len());
    for (i, &(ingest, emit)) in pairs.iter().enumerate() {
        let d = emit
            .checked_sub(ingest)
            .ok_or_else(|| Error::InvalidArgument(format!("epoch {i} emitted before ingest")))?;
        ms.push(d.as_secs_f64() * 1e3);
    }
    let mean_ms = ms.iter().sum::<f64>() / ms.len() as f64;
    let max_ms = ms.iter().cloned().fold(f64::MIN, f64::max);
    ms.sort_by(f64::total_cmp);
    let mid = ms.len() / 2;
    let median_ms = if ms.len() % 2 == 1 {
        ms[mid]
    } else {
        (ms[mid - 1] + ms[mid]) / 2.0
    };
    Ok(LatencyStats {
        count: ms.len(),
        mean_ms,
        median_ms,
        max_ms,
    })
}
