use std::path::{Path, PathBuf};

use ecgstate::numerics::RngState;
use ecgstate::training::{
    effective_number_weights, evaluate_loss, train_step, ClassWeights, Checkpoint, Dataset, TrainState,
};
use ecgstate::{Error, Result};

use crate::config::RunConfig;
use crate::io::{create_dir, echo_config, load_epochs, require_two_classes, to_dataset, write_text};

/// Samples in the single batch of overfit mode.
pub const OVERFIT_SAMPLES: usize = 32;
pub const OVERFIT_MAX_STEPS: usize = 500;
pub const OVERFIT_TARGET: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct LossRow {
    pub epoch: u64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub checkpoint: PathBuf,
    pub loss_log: PathBuf,
    /// Per training epoch, or per step in overfit mode.
    pub losses: Vec<LossRow>,
}

fn format_loss(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

fn write_log(path: &Path, header: &str, rows: &[LossRow]) -> Result<()> {
    let mut s = format!("{header}\n");
    for r in rows {
        s.push_str(&format!("{},{},{}\n", r.epoch, r.train_loss, format_loss(r.val_loss)));
    }
    write_text(path, &s)
}

fn read_log(path: &Path, keep: u64) -> Vec<LossRow> {
    let Ok(text) = std::fs::read_to_string(path) else {
        return Vec::new();
    };
    text.lines()
        .skip(1)
        .filter_map(|l| {
            let mut f = l.split(',');
            let epoch = f.next()?.parse().ok()?;
            let train_loss = f.next()?.parse().ok()?;
            let val_loss = f.next().and_then(|v| v.parse().ok());
            Some(LossRow {
                epoch,
                train_loss,
                val_loss,
            })
        })
        .filter(|r| r.epoch <= keep)
        .collect()
}

/// Seeded hold-out split of `0..n`: `(train, validation)`.
pub fn validation_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut n_val = (fraction * n as f64).round() as usize;
    if fraction > 0.0 && n_val == 0 && n >= 2 {
        n_val = 1;
    }
    n_val = n_val.min(n.saturating_sub(1));
    let perm = RngState::new(seed).derive(3).permutation(n);
    let (val, train) = perm.split_at(n_val);
    let mut train = train.to_vec();
    let mut val = val.to_vec();
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainReport> {
    let out = cfg.require_out_dir()?;
    create_dir(out)?;
    echo_config(cfg, out)?;
    let items = load_epochs(cfg)?;
    let all = to_dataset(cfg, items.iter().map(|(_, e)| e))?;
    if cfg.overfit {
        return overfit(cfg, &all, out);
    }
    let (train_idx, val_idx) = validation_split(all.len(), cfg.validation_fraction, cfg.seed);
    let train = all.subset(&train_idx);
    let val = all.subset(&val_idx);
    let counts = require_two_classes(&train, "training split")?;
    let weights = effective_number_weights(&counts, cfg.train.effective_eps)?;
    let model_cfg = cfg.model_config()?;

    let loss_log = out.join("loss.csv");
    let (mut state, mut rows) = match &cfg.resume {
        Some(p) => {
            let state = Checkpoint::load(p)?.restore(model_cfg)?;
            let rows = read_log(&loss_log, state.epochs_completed);
            (state, rows)
        }
        None => (TrainState::new(model_cfg, cfg.seed)?, Vec::new()),
    };
    let checkpoint = out.join("checkpoint.ckpt");
    while state.epochs_completed < cfg.train.epochs as u64 {
        let stats = state.run_epoch(&train, &weights, &cfg.train)?;
        let val_loss = if val.is_empty() {
            None
        } else {
            Some(evaluate_loss(&state.model, &val, &weights, cfg.train.focal_gamma, cfg.train.batch_size)?)
        };
        if !stats.mean_loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss at epoch {}", state.epochs_completed)));
        }
        log::info!(
            "epoch {}: train {:.6} val {}",
            state.epochs_completed,
            stats.mean_loss,
            format_loss(val_loss)
        );
        rows.push(LossRow {
            epoch: state.epochs_completed,
            train_loss: stats.mean_loss,
            val_loss,
        });
        Checkpoint::capture(&state).save(&checkpoint)?;
        write_log(&loss_log, "epoch,train_loss,val_loss", &rows)?;
    }
    if rows.is_empty() {
        Checkpoint::capture(&state).save(&checkpoint)?;
        write_log(&loss_log, "epoch,train_loss,val_loss", &rows)?;
    }
    Ok(TrainReport {
        checkpoint,
        loss_log,
        losses: rows,
    })
}

/// Repeated full-batch steps on the first samples of each class, mixup off,
/// until the loss drops below the target or the step budget runs out.
fn overfit(cfg: &RunConfig, all: &Dataset, out: &Path) -> Result<TrainReport> {
    let mut picked = Vec::new();
    let (mut zeros, mut ones): (Vec<usize>, Vec<usize>) = (0..all.len()).partition(|&i| all.label(i) == 0);
    zeros.truncate(OVERFIT_SAMPLES / 2);
    ones.truncate(OVERFIT_SAMPLES - zeros.len());
    zeros.truncate(OVERFIT_SAMPLES - ones.len());
    for (a, b) in zeros.iter().zip(&ones) {
        picked.push(*a);
        picked.push(*b);
    }
    picked.extend(zeros.iter().skip(ones.len()));
    picked.extend(ones.iter().skip(zeros.len()));
    let batch = all.subset(&picked);
    require_two_classes(&batch, "overfit batch")?;
    // a balanced batch: effective-number weights would only rescale the loss
    let weights = ClassWeights::uniform(2);
    let mut train_cfg = cfg.train.clone();
    train_cfg.mixup = false;
    let mut state = TrainState::new(cfg.model_config()?, cfg.seed)?;
    let idx: Vec<usize> = (0..batch.len()).collect();
    let x = batch.batch(&idx)?;
    let y = batch.one_hot(&idx, 2);
    let mut rows = Vec::new();
    for step in 1..=OVERFIT_MAX_STEPS as u64 {
        let loss = train_step(
            &mut state.model,
            &x,
            &y,
            &weights,
            &mut state.optimizer,
            &train_cfg,
            &mut state.rng,
        )?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("overfit loss at step {step}")));
        }
        rows.push(LossRow {
            epoch: step,
            train_loss: loss,
            val_loss: None,
        });
        if loss < OVERFIT_TARGET {
            break;
        }
    }
    let checkpoint = out.join("checkpoint.ckpt");
    Checkpoint::capture(&state).save(&checkpoint)?;
    let loss_log = out.join("loss.csv");
    write_log(&loss_log, "step,train_loss,val_loss", &rows)?;
    Ok(TrainReport {
        checkpoint,
        loss_log,
        losses: rows,
    })
}
