use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::PathBuf;

use ecgstate::data::{Epoch, ManifestRow};
use ecgstate::eval::{
    compute_diagnostic, compute_overall, fold_confusion, grouped_folds, loso_folds,
    pool_predictions, roc_auc, ConfusionMatrix, Diagnostic, FoldPlan, Overall, Prediction, Ratio,
    RocCurve,
};
use ecgstate::model::Model;
use ecgstate::numerics::RngState;
use ecgstate::training::{effective_number_weights, evaluate_loss, TrainState};
use ecgstate::{Error, Result};

use crate::config::{FoldMode, RunConfig};
use crate::io::{create_dir, echo_config, load_epochs, require_two_classes, to_dataset, write_text};

/// Rows per inference batch.
pub const PREDICT_BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct Scores {
    pub confusion: ConfusionMatrix,
    pub overall: Overall,
    pub diagnostic: Diagnostic,
    /// `None` when the test set holds a single class.
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldReport {
    pub test_subjects: Vec<u32>,
    pub rows: Vec<ManifestRow>,
    pub predictions: Vec<Prediction>,
    pub scores: Scores,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub folds: Vec<FoldReport>,
    pub pooled: Scores,
    pub roc: RocCurve,
    pub metrics_path: PathBuf,
    pub roc_path: PathBuf,
}

fn scores(confusion: ConfusionMatrix, preds: &[Prediction]) -> Result<Scores> {
    let s: Vec<f64> = preds.iter().map(|p| p.score).collect();
    let y: Vec<bool> = preds.iter().map(|p| p.positive).collect();
    let auc = match roc_auc(&s, &y) {
        Ok((_, a)) => Some(a),
        Err(Error::InvalidArgument(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(Scores {
        confusion,
        overall: compute_overall(&confusion)?,
        diagnostic: compute_diagnostic(&confusion),
        auc,
    })
}

/// Eval-mode positive-class probabilities in batches.
pub fn predict(model: &Model, epochs: &[&Epoch], seconds: usize, rate: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(epochs.len());
    for chunk in epochs.chunks(PREDICT_BATCH) {
        let mut data = Vec::with_capacity(chunk.len() * seconds * rate);
        for e in chunk {
            data.extend_from_slice(&e.samples);
        }
        let x = ecgstate::numerics::Tensor::new(&[chunk.len(), seconds, rate], data)?;
        out.extend(model.predict_positive(&x)?);
    }
    Ok(out)
}

fn plan(cfg: &RunConfig, subjects: &[u32]) -> Result<FoldPlan> {
    match cfg.folds {
        FoldMode::Loso => loso_folds(subjects),
        FoldMode::Grouped => grouped_folds(subjects, &cfg.group_sizes),
    }
}

fn ratio(r: Ratio) -> String {
    r.to_string()
}

fn metrics_line(task: &str, fold: &str, s: &Scores) -> String {
    let o = &s.overall;
    let d = &s.diagnostic;
    format!(
        "{task},{fold},{:.6},{:.6},{:.6},{},{},{},{},{}\n",
        o.acc,
        o.mf1,
        o.kappa,
        ratio(d.sp),
        ratio(d.se),
        ratio(d.ppv),
        ratio(d.npv),
        s.auc.map_or("undefined".to_string(), |a| format!("{a:.6}"))
    )
}

pub const METRICS_HEADER: &str = "task,fold,acc,mf1,kappa,sp,se,ppv,npv,auc";

/// Trains a fresh model per fold, scores its held-out subjects, pools all
/// predictions and writes metrics, ROC, per-epoch predictions and loss logs.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<EvalReport> {
    let out = cfg.require_out_dir()?;
    create_dir(out)?;
    echo_config(cfg, out)?;
    let items: Vec<(ManifestRow, Epoch)> = load_epochs(cfg)?
        .into_iter()
        .filter(|(_, e)| e.label.class_index().is_some())
        .collect();
    let subjects: Vec<u32> = items.iter().map(|(r, _)| r.subject).collect();
    let plan = plan(cfg, &subjects)?;
    let model_cfg = cfg.model_config()?;
    let root = RngState::new(cfg.seed);
    let task = cfg.task.as_str();

    let mut folds = Vec::with_capacity(plan.len());
    for (k, fold) in plan.folds.iter().enumerate() {
        let train_set: BTreeSet<u32> = fold.train.iter().copied().collect();
        let test_set: BTreeSet<u32> = fold.test.iter().copied().collect();
        let train_items: Vec<&Epoch> = items.iter().filter(|(r, _)| train_set.contains(&r.subject)).map(|(_, e)| e).collect();
        let test_pairs: Vec<&(ManifestRow, Epoch)> = items.iter().filter(|(r, _)| test_set.contains(&r.subject)).collect();
        let train = to_dataset(cfg, train_items.iter().copied())?;
        let test = to_dataset(cfg, test_pairs.iter().map(|(_, e)| e))?;
        let counts = require_two_classes(&train, &format!("fold {k} training split"))?;
        let weights = effective_number_weights(&counts, cfg.train.effective_eps)?;

        let mut state = TrainState::new(model_cfg.clone(), root.derive(100 + k as u64).seed())?;
        let mut log = String::from("epoch,train_loss,test_loss\n");
        for _ in 0..cfg.train.epochs {
            let stats = state.run_epoch(&train, &weights, &cfg.train)?;
            let test_loss = evaluate_loss(&state.model, &test, &weights, cfg.train.focal_gamma, PREDICT_BATCH)?;
            if !stats.mean_loss.is_finite() || !test_loss.is_finite() {
                return Err(Error::NonFinite(format!("loss in fold {k} epoch {}", state.epochs_completed)));
            }
            log::info!(
                "fold {k} epoch {}: train {:.6} test {:.6}",
                state.epochs_completed,
                stats.mean_loss,
                test_loss
            );
            let _ = writeln!(log, "{},{},{}", state.epochs_completed, stats.mean_loss, test_loss);
        }
        write_text(&out.join(format!("loss_fold{k}.csv")), &log)?;

        let test_epochs: Vec<&Epoch> = test_pairs.iter().map(|(_, e)| e).collect();
        let probs = predict(&state.model, &test_epochs, cfg.epoch_seconds, cfg.sampling_rate)?;
        let predictions: Vec<Prediction> = probs
            .iter()
            .zip(&test_epochs)
            .map(|(&score, e)| Prediction {
                score,
                positive: e.label.class_index() == Some(1),
            })
            .collect();
        let s = scores(fold_confusion(&predictions), &predictions)?;
        folds.push(FoldReport {
            test_subjects: fold.test.clone(),
            rows: test_pairs.iter().map(|(r, _)| r.clone()).collect(),
            predictions,
            scores: s,
        });
    }

    let per_fold: Vec<Vec<Prediction>> = folds.iter().map(|f| f.predictions.clone()).collect();
    let pooled_preds = pool_predictions(&per_fold)?;
    let (roc, _) = roc_auc(&pooled_preds.scores(), &pooled_preds.positives())?;
    let all_preds: Vec<Prediction> = per_fold.concat();
    let pooled = scores(pooled_preds.confusion, &all_preds)?;

    let mut metrics = format!("{METRICS_HEADER}\n");
    for (k, f) in folds.iter().enumerate() {
        metrics.push_str(&metrics_line(task, &k.to_string(), &f.scores));
    }
    metrics.push_str(&metrics_line(task, "pooled", &pooled));
    let metrics_path = out.join("metrics.csv");
    write_text(&metrics_path, &metrics)?;

    let mut roc_text = String::from("threshold,fpr,tpr\n");
    for p in &roc.points {
        let _ = writeln!(roc_text, "{},{},{}", p.threshold, p.fpr, p.tpr);
    }
    let roc_path = out.join(format!("roc_{task}.csv"));
    write_text(&roc_path, &roc_text)?;

    let mut pred_text = String::from("fold,subject,path,label,probability\n");
    for (k, f) in folds.iter().enumerate() {
        for (r, p) in f.rows.iter().zip(&f.predictions) {
            let _ = writeln!(pred_text, "{k},{},{},{},{}", r.subject, r.path.display(), r.label.as_str(), p.score);
        }
    }
    write_text(&out.join("predictions.csv"), &pred_text)?;

    Ok(EvalReport {
        folds,
        pooled,
        roc,
        metrics_path,
        roc_path,
    })
}
