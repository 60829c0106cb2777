use crate::error::{Error, Result};

use super::types::{Epoch, Label, RawRecording};

/// Stage names accepted in annotations.
pub const ACCEPTED_STAGES: [&str; 7] = ["Wake", "N1", "N2", "N3", "REM", "Anesthesia", "Recovery"];

/// Default SNR threshold for keeping an epoch.
pub const SNR_THRESHOLD_DB: f64 = 10.0;

pub fn label_map(stage: &str) -> Result<Label> {
    match stage {
        "Wake" | "Recovery" => Ok(Label::Conscious),
        "N1" | "N2" | "N3" | "REM" | "Anesthesia" => Ok(Label::Unconscious),
        other => Err(Error::InvalidArgument(format!(
            "unknown stage `{other}`; accepted: {}",
            ACCEPTED_STAGES.join(", ")
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Segmentation {
    pub epochs: Vec<Epoch>,
    pub warnings: Vec<String>,
}

/// Label of the annotation covering time `t`, if any.
fn label_at(rec: &RawRecording, t: f64) -> Result<Label> {
    match rec
        .annotations
        .iter()
        .find(|a| a.start_s <= t && t < a.end_s)
    {
        Some(a) => label_map(&a.stage),
        None => Ok(Label::Unlabeled),
    }
}

/// Consecutive, non-overlapping `seconds`-long epochs; the trailing
/// remainder is dropped. Each epoch takes the label covering its start.
pub fn segment_epochs(rec: &RawRecording, seconds: u32) -> Result<Segmentation> {
    if seconds == 0 {
        return Err(Error::InvalidArgument("epoch length must be positive".into()));
    }
    rec.validate()?;
    let len = seconds as usize * rec.sampling_rate as usize;
    let mut out = Segmentation::default();
    if rec.samples.len() < len {
        out.warnings.push(format!(
            "subject {}: recording of {:.3} s is shorter than one {seconds} s epoch",
            rec.subject_id,
            rec.duration_s()
        ));
        return Ok(out);
    }
    for (i, chunk) in rec.samples.chunks_exact(len).enumerate() {
        let start = (i * seconds as usize) as f64;
        out.epochs.push(Epoch {
            seconds,
            sampling_rate: rec.sampling_rate,
            samples: chunk.to_vec(),
            label: label_at(rec, start)?,
            subject_id: rec.subject_id,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnrDecision {
    pub keep: bool,
    /// `-inf` when the epoch carries no power at all.
    pub snr_db: f64,
}

fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64
}

/// SNR of a filtered epoch: band power over the power of what the filter
/// removed. The mean of the unfiltered epoch is excluded from the residual.
pub fn snr_db(unfiltered: &[f64], filtered: &[f64]) -> Result<f64> {
    if unfiltered.len() != filtered.len() {
        return Err(Error::shape(
            "snr_db",
            format!("{} vs {} samples", unfiltered.len(), filtered.len()),
        ));
    }
    let mean = unfiltered.iter().sum::<f64>() / unfiltered.len().max(1) as f64;
    let resid: Vec<f64> = unfiltered
        .iter()
        .zip(filtered)
        .map(|(u, f)| u - mean - f)
        .collect();
    let band = power(filtered);
    let noise = power(&resid);
    if band + noise == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(10.0 * (band / noise).log10())
}

/// Keeps the epoch iff its SNR reaches `threshold_db`.
pub fn snr_gate(unfiltered: &[f64], filtered: &[f64], threshold_db: f64) -> Result<SnrDecision> {
    let snr = snr_db(unfiltered, filtered)?;
    let keep = if snr == f64::NEG_INFINITY {
        false
    } else {
        snr >= threshold_db
    };
    Ok(SnrDecision { keep, snr_db: snr })
}
