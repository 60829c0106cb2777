//! On-disk epoch and manifest formats. Layout in `docs/formats.md`.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::types::{Epoch, Label};

pub const ECG1_MAGIC: [u8; 4] = *b"ECG1";
pub const ECG1_VERSION: u8 = 1;
pub const ECG1_HEADER_LEN: usize = 18;
pub const MANIFEST_HEADER: &str = "path,subject,label";

/// Encodes an epoch; samples are narrowed to 32-bit floats.
pub fn encode_ecg1(epoch: &Epoch) -> Vec<u8> {
    let mut out = Vec::with_capacity(ECG1_HEADER_LEN + 4 * epoch.samples.len());
    out.extend_from_slice(&ECG1_MAGIC);
    out.push(ECG1_VERSION);
    out.extend_from_slice(&epoch.sampling_rate.to_le_bytes());
    out.extend_from_slice(&epoch.seconds.to_le_bytes());
    out.push(epoch.label.code());
    out.extend_from_slice(&epoch.subject_id.to_le_bytes());
    for &v in &epoch.samples {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_ecg1(bytes: &[u8]) -> Result<Epoch> {
    let err = |d: String| Error::format("ECG1", d);
    if bytes.len() < ECG1_HEADER_LEN {
        return Err(err(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if bytes[..4] != ECG1_MAGIC {
        return Err(err("bad magic".into()));
    }
    if bytes[4] != ECG1_VERSION {
        return Err(err(format!("unsupported version {}", bytes[4])));
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let rate = u32_at(5);
    let seconds = u32_at(9);
    let label = Label::from_code(bytes[13]).ok_or_else(|| err(format!("label code {}", bytes[13])))?;
    let subject_id = u32_at(14);
    if rate == 0 || seconds == 0 {
        return Err(err(format!("empty epoch ({seconds} s at {rate} Hz)")));
    }
    let n = (rate as u64) * (seconds as u64);
    let body = &bytes[ECG1_HEADER_LEN..];
    if body.len() as u64 != n * 4 {
        return Err(err(format!(
            "{} payload bytes for {n} samples",
            body.len()
        )));
    }
    let mut samples = Vec::with_capacity(n as usize);
    for (i, c) in body.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(c.try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(err(format!("non-finite sample at {i}")));
        }
        samples.push(v as f64);
    }
    Ok(Epoch {
        seconds,
        sampling_rate: rate,
        samples,
        label,
        subject_id,
    })
}

pub fn write_ecg1(path: &Path, epoch: &Epoch) -> Result<()> {
    std::fs::write(path, encode_ecg1(epoch)).map_err(|e| Error::io(path, e))
}

pub fn read_ecg1(path: &Path) -> Result<Epoch> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ecg1(&bytes)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    /// Relative paths resolve against the manifest's directory.
    pub path: PathBuf,
    pub subject: u32,
    pub label: Label,
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestRow>> {
    let err = |line: u64, d: String| Error::format("manifest", format!("line {line}: {d}"));
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut records = reader.records();
    match records.next() {
        Some(Ok(h)) if h.iter().eq(MANIFEST_HEADER.split(',')) => {}
        Some(Ok(h)) => {
            let found: Vec<&str> = h.iter().collect();
            return Err(err(1, format!("expected header `{MANIFEST_HEADER}`, found `{}`", found.join(","))));
        }
        Some(Err(e)) => return Err(err(1, e.to_string())),
        None => return Err(err(1, "missing header".into())),
    }
    let mut rows = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 3 {
            return Err(err(line, format!("expected 3 fields, found {}", rec.len())));
        }
        if rec[0].is_empty() {
            return Err(err(line, "empty path".into()));
        }
        let subject = rec[1]
            .parse::<u32>()
            .map_err(|_| err(line, format!("bad subject `{}`", &rec[1])))?;
        let label = Label::parse(&rec[2]).ok_or_else(|| err(line, format!("bad label `{}`", &rec[2])))?;
        rows.push(ManifestRow {
            path: PathBuf::from(&rec[0]),
            subject,
            label,
        });
    }
    Ok(rows)
}

pub fn format_manifest(rows: &[ManifestRow]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::InvalidArgument(format!("manifest: {e}"));
    w.write_record(MANIFEST_HEADER.split(',')).map_err(csv_err)?;
    for r in rows {
        let p = r.path.to_str().ok_or_else(|| {
            Error::InvalidArgument(format!("manifest path {:?} is not UTF-8", r.path))
        })?;
        if p.is_empty() {
            return Err(Error::InvalidArgument("empty manifest path".into()));
        }
        w.write_record([p, &r.subject.to_string(), r.label.as_str()])
            .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(format!("manifest: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidArgument(format!("manifest: {e}")))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    Ok(parse_manifest(&text)?
        .into_iter()
        .map(|mut r| {
            if r.path.is_relative() {
                r.path = base.join(&r.path);
            }
            r
        })
        .collect())
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    std::fs::write(path, format_manifest(rows)?).map_err(|e| Error::io(path, e))
}
