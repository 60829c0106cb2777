//! ECG preprocessing, synthetic recordings and the epoch/manifest formats.

mod filters;
mod format;
mod pipeline;
mod segment;
mod synth;
mod types;

pub use filters::{bandpass_0p5_40, remove_baseline_wander, resample_512_to_500};
pub use format::{
    decode_ecg1, encode_ecg1, format_manifest, parse_manifest, read_ecg1, read_manifest,
    write_ecg1, write_manifest, ManifestRow, ECG1_HEADER_LEN, ECG1_MAGIC, ECG1_VERSION,
    MANIFEST_HEADER,
};
pub use pipeline::{preprocess, Preprocessed, Rejected, BASELINE_WINDOW_S, TARGET_RATE};
pub use segment::{
    label_map, segment_epochs, snr_db, snr_gate, Segmentation, SnrDecision, ACCEPTED_STAGES,
    SNR_THRESHOLD_DB,
};
pub use synth::{
    add_noise, beat_times, render_beats, synth_generate, synth_signal, RrModel,
    SyntheticConfig, Wave,
};
pub use types::{Annotation, Epoch, Label, RawRecording};
