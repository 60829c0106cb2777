use std::path::PathBuf;

use ecgstate::data::{
    preprocess, synth_signal, write_ecg1, write_manifest, Annotation, Label, ManifestRow,
    RawRecording, SyntheticConfig,
};
use ecgstate::numerics::RngState;
use ecgstate::Result;

use crate::config::RunConfig;
use crate::io::{create_dir, echo_config};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthReport {
    pub manifest: PathBuf,
    pub rows: Vec<ManifestRow>,
    pub rejected: usize,
    pub warnings: Vec<String>,
}

/// One recording per subject: a conscious block of `n` epochs followed by
/// an unconscious block of `n`, preprocessed into 500 Hz epoch files.
pub fn cmd_synth(cfg: &RunConfig) -> Result<SynthReport> {
    let out = cfg.require_out_dir()?;
    create_dir(out)?;
    echo_config(cfg, out)?;
    let n = cfg.synth_per_class;
    let mut report = SynthReport {
        manifest: out.join("manifest.csv"),
        rows: Vec::new(),
        rejected: 0,
        warnings: Vec::new(),
    };
    if n == 0 {
        report.warnings.push("synth_per_class = 0: writing an empty manifest".into());
    }
    let synth = SyntheticConfig {
        snr_db: cfg.synth_snr_db,
        seed: cfg.seed,
        ..SyntheticConfig::default()
    };
    synth.validate()?;
    let root = RngState::new(cfg.seed);
    let block_s = (n * cfg.epoch_seconds) as f64;
    let fs = cfg.synth_rate as f64;
    let (awake, asleep) = cfg.task.stage_names();
    for subject in 1..=cfg.synth_subjects as u32 {
        if n == 0 {
            break;
        }
        let mut rng = root.derive(1000 + subject as u64);
        let mut samples = synth_signal(&synth, Label::Conscious, block_s, fs, &mut rng)?;
        samples.extend(synth_signal(&synth, Label::Unconscious, block_s, fs, &mut rng)?);
        let mut rec = RawRecording::new(cfg.synth_rate, samples, subject)?;
        rec.annotations = vec![
            Annotation {
                start_s: 0.0,
                end_s: block_s,
                stage: awake.to_string(),
            },
            Annotation {
                start_s: block_s,
                end_s: 2.0 * block_s,
                stage: asleep.to_string(),
            },
        ];
        let pre = preprocess(&rec, cfg.task, cfg.snr_threshold_db)?;
        report.warnings.extend(pre.warnings);
        report.rejected += pre.rejected.len();
        let dir = format!("subject{subject:03}");
        create_dir(&out.join(&dir))?;
        for (i, epoch) in pre.kept.iter().enumerate() {
            let rel = PathBuf::from(&dir).join(format!("epoch{i:05}.ecg1"));
            write_ecg1(&out.join(&rel), epoch)?;
            report.rows.push(ManifestRow {
                path: rel,
                subject,
                label: epoch.label,
            });
        }
    }
    if report.rejected > 0 {
        report
            .warnings
            .push(format!("{} epochs fell below the SNR gate", report.rejected));
    }
    for w in &report.warnings {
        log::warn!("{w}");
    }
    write_manifest(&report.manifest, &report.rows)?;
    log::info!("wrote {} epochs to {}", report.rows.len(), out.display());
    Ok(report)
}
