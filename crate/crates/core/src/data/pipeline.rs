use crate::error::{Error, Result};
use crate::task::Task;

use super::filters::{bandpass_0p5_40, remove_baseline_wander, resample_512_to_500};
use super::segment::{segment_epochs, snr_gate, SnrDecision};
use super::types::{Epoch, RawRecording};

/// Rate every epoch is brought to.
pub const TARGET_RATE: u32 = 500;
pub const BASELINE_WINDOW_S: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Rejected {
    pub index: usize,
    pub snr_db: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Preprocessed {
    pub kept: Vec<Epoch>,
    pub rejected: Vec<Rejected>,
    pub warnings: Vec<String>,
}

/// Resample (512 Hz input only), optional baseline removal, band-pass,
/// segmentation and SNR gating of one recording.
pub fn preprocess(rec: &RawRecording, task: Task, threshold_db: f64) -> Result<Preprocessed> {
    rec.validate()?;
    let mut rec = match rec.sampling_rate {
        512 => resample_512_to_500(rec)?,
        TARGET_RATE => rec.clone(),
        other => {
            return Err(Error::InvalidArgument(format!(
                "recordings must be 512 or 500 Hz, got {other} Hz"
            )))
        }
    };
    let fs = TARGET_RATE as f64;
    if task.removes_baseline_wander() {
        rec.samples = remove_baseline_wander(&rec.samples, fs, BASELINE_WINDOW_S)?;
    }
    let filtered = RawRecording {
        samples: bandpass_0p5_40(&rec.samples, fs)?,
        ..rec.clone()
    };
    let seconds = task.epoch_seconds() as u32;
    let pre = segment_epochs(&rec, seconds)?;
    let post = segment_epochs(&filtered, seconds)?;
    let mut out = Preprocessed {
        warnings: post.warnings,
        ..Default::default()
    };
    for (index, (raw, epoch)) in pre.epochs.iter().zip(post.epochs).enumerate() {
        let SnrDecision { keep, snr_db } = snr_gate(&raw.samples, &epoch.samples, threshold_db)?;
        if keep {
            out.kept.push(epoch);
        } else {
            out.rejected.push(Rejected { index, snr_db });
        }
    }
    Ok(out)
}
