use std::path::{Path, PathBuf};

use ecgstate::data::{read_ecg1, read_manifest, Epoch, ManifestRow};
use ecgstate::training::Dataset;
use ecgstate::{Error, Result};

use crate::config::RunConfig;

pub fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

/// Writes the effective configuration next to a command's outputs.
pub fn echo_config(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    let path = out.join("config.txt");
    write_text(&path, &cfg.to_text())?;
    Ok(path)
}

/// Manifest rows with their decoded epochs, checked against the run's
/// epoch geometry.
pub fn load_epochs(cfg: &RunConfig) -> Result<Vec<(ManifestRow, Epoch)>> {
    let rows = read_manifest(cfg.require_manifest()?)?;
    let mut out = Vec::with_capacity(rows.len());
    for row in rows {
        let epoch = read_ecg1(&row.path)?;
        if epoch.seconds as usize != cfg.epoch_seconds || epoch.sampling_rate as usize != cfg.sampling_rate {
            return Err(Error::Config(format!(
                "{}: epoch is {} s at {} Hz, run expects {} s at {} Hz",
                row.path.display(),
                epoch.seconds,
                epoch.sampling_rate,
                cfg.epoch_seconds,
                cfg.sampling_rate
            )));
        }
        if epoch.label != row.label || epoch.subject_id != row.subject {
            return Err(Error::Format {
                format: "manifest",
                detail: format!(
                    "{}: file says subject {} / {}, manifest says subject {} / {}",
                    row.path.display(),
                    epoch.subject_id,
                    epoch.label.as_str(),
                    row.subject,
                    row.label.as_str()
                ),
            });
        }
        out.push((row, epoch));
    }
    Ok(out)
}

/// Labeled epochs only, as a training dataset; unlabeled ones are skipped.
pub fn to_dataset<'a>(cfg: &RunConfig, epochs: impl IntoIterator<Item = &'a Epoch>) -> Result<Dataset> {
    let mut data = Dataset::new(cfg.epoch_seconds, cfg.sampling_rate);
    for e in epochs {
        if let Some(k) = e.label.class_index() {
            data.push(&e.samples, k)?;
        }
    }
    Ok(data)
}

/// Fails unless both classes are present.
pub fn require_two_classes(data: &Dataset, what: &str) -> Result<Vec<u64>> {
    let counts = data.class_counts(2);
    if counts.iter().any(|&c| c == 0) {
        return Err(Error::InvalidArgument(format!(
            "{what} needs both classes, found counts {counts:?}"
        )));
    }
    Ok(counts)
}
