use std::f64::consts::PI;

use ecgstate::data::*;
use ecgstate::numerics::RngState;
use ecgstate::Task;
use proptest::prelude::*;

fn tone(freq: f64, fs: f64, n: usize, amp: f64) -> Vec<f64> {
    (0..n).map(|i| amp * (2.0 * PI * freq * i as f64 / fs).sin()).collect()
}

/// Amplitude of the `freq` component by projection onto sin/cos over the
/// central half (whole periods assumed).
fn amplitude(x: &[f64], freq: f64, fs: f64) -> f64 {
    let (lo, hi) = (x.len() / 4, 3 * x.len() / 4);
    let (mut s, mut c) = (0.0, 0.0);
    for (i, v) in x.iter().enumerate().take(hi).skip(lo) {
        let ph = 2.0 * PI * freq * i as f64 / fs;
        s += v * ph.sin();
        c += v * ph.cos();
    }
    let n = (hi - lo) as f64;
    2.0 * (s * s + c * c).sqrt() / n
}

/// Frequency from interpolated rising zero crossings.
fn frequency(x: &[f64], fs: f64) -> f64 {
    let mut crossings = Vec::new();
    for i in x.len() / 8..(7 * x.len() / 8) {
        if x[i] < 0.0 && x[i + 1] >= 0.0 {
            crossings.push(i as f64 + x[i] / (x[i] - x[i + 1]));
        }
    }
    let periods = (crossings.len() - 1) as f64;
    fs * periods / (crossings.last().unwrap() - crossings[0])
}

fn db(ratio: f64) -> f64 {
    20.0 * ratio.log10()
}

#[test]
fn resampler_lengths_and_dc() {
    let rec = RawRecording::new(512, vec![0.37; 512], 1).unwrap();
    let out = resample_512_to_500(&rec).unwrap();
    assert_eq!(out.samples.len(), 500);
    assert_eq!(out.sampling_rate, 500);
    assert!(out.samples.iter().all(|v| (v - 0.37).abs() < 1e-6));
    let odd = RawRecording::new(512, vec![0.0; 1000], 1).unwrap();
    assert_eq!(resample_512_to_500(&odd).unwrap().samples.len(), 1000 * 125 / 128);
    let wrong = RawRecording::new(500, vec![0.0; 10], 1).unwrap();
    assert!(resample_512_to_500(&wrong).is_err());
}

#[test]
fn resampler_preserves_tone() {
    let rec = RawRecording::new(512, tone(10.0, 512.0, 512 * 8, 1.0), 1).unwrap();
    let out = resample_512_to_500(&rec).unwrap();
    let a = amplitude(&out.samples, 10.0, 500.0);
    assert!((a - 1.0).abs() < 0.01, "amplitude {a}");
    let f = frequency(&out.samples, 500.0);
    assert!((f - 10.0).abs() < 0.01, "frequency {f}");
}

#[test]
fn bandpass_response() {
    let fs = 500.0;
    let n = 5000;
    let pass = bandpass_0p5_40(&tone(10.0, fs, n, 1.0), fs).unwrap();
    assert!(db(amplitude(&pass, 10.0, fs)).abs() < 1.0);
    assert_eq!(pass.len(), n);
    let stop = bandpass_0p5_40(&tone(60.0, fs, n, 1.0), fs).unwrap();
    assert!(db(amplitude(&stop, 60.0, fs)) <= -20.0);
    let dc = bandpass_0p5_40(&vec![2.0; n], fs).unwrap();
    let peak = dc.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(peak < 2e-3, "{peak}");
    assert!(db(peak / 2.0) <= -20.0);
    assert!(bandpass_0p5_40(&[1.0; 10], 80.0).is_err());
}

#[test]
fn bandpass_is_zero_phase() {
    let fs = 500.0;
    let mut x = vec![0.0; 40_000];
    x[20_000] = 1.0;
    let y = bandpass_0p5_40(&x, fs).unwrap();
    let peak = (0..y.len()).max_by(|&a, &b| y[a].total_cmp(&y[b])).unwrap();
    assert_eq!(peak, 20_000);
    for k in 1..2000 {
        assert!((y[20_000 - k] - y[20_000 + k]).abs() < 1e-9, "lag {k}");
    }
}

#[test]
fn baseline_removal() {
    let fs = 500.0;
    let flat = remove_baseline_wander(&vec![4.2; 3000], fs, 1.0).unwrap();
    assert!(flat.iter().all(|v| v.abs() < 1e-12));

    let n = 30_000;
    let drift = tone(0.1, fs, n, 1.0);
    let t10 = tone(10.0, fs, n, 0.2);
    let mix: Vec<f64> = drift.iter().zip(&t10).map(|(a, b)| a + b).collect();
    let y = remove_baseline_wander(&mix, fs, 1.0).unwrap();
    let drift_before = amplitude(&mix, 0.1, fs);
    let drift_after = amplitude(&y, 0.1, fs);
    assert!(db(drift_after / drift_before) <= -10.0);
    assert!(db(amplitude(&y, 10.0, fs) / 0.2).abs() < 1.0);

    let mut pulses = vec![0.0; 5000];
    for i in (250..5000).step_by(400) {
        pulses[i] = 1.0;
    }
    let y = remove_baseline_wander(&pulses, fs, 1.0).unwrap();
    for i in (250..5000).step_by(400) {
        assert!(y[i] > 0.99 && y[i - 1] < 0.0 && y[i + 1] < 0.0);
    }
    assert!(remove_baseline_wander(&[1.0], 500.0, 0.0).is_err());
}

fn random_signal(n: usize, seed: u64) -> Vec<f64> {
    let mut r = RngState::new(seed);
    (0..n).map(|_| r.uniform() - 0.5).collect()
}

#[test]
fn filters_are_linear() {
    let (x, y) = (random_signal(3000, 1), random_signal(3000, 2));
    let (a, b) = (1.7, -0.6);
    let combo: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
    type Filter = fn(&[f64]) -> Vec<f64>;
    let filters: [Filter; 2] = [
        |s| bandpass_0p5_40(s, 500.0).unwrap(),
        |s| remove_baseline_wander(s, 500.0, 1.0).unwrap(),
    ];
    for f in filters {
        let (fx, fy, fc) = (f(&x), f(&y), f(&combo));
        for i in 0..x.len() {
            assert!((fc[i] - (a * fx[i] + b * fy[i])).abs() < 1e-9);
        }
    }
}

#[test]
fn segmentation() {
    let mut rec = RawRecording::new(500, vec![0.0; 300 * 500], 3).unwrap();
    rec.annotations.push(Annotation {
        start_s: 0.0,
        end_s: 60.0,
        stage: "Wake".into(),
    });
    rec.annotations.push(Annotation {
        start_s: 60.0,
        end_s: 300.0,
        stage: "N2".into(),
    });
    let s = segment_epochs(&rec, 30).unwrap();
    assert_eq!(s.epochs.len(), 10);
    assert!(s.epochs.iter().all(|e| e.samples.len() == 15_000 && e.subject_id == 3));
    assert_eq!(s.epochs[0].label, Label::Conscious);
    assert_eq!(s.epochs[1].label, Label::Conscious);
    assert_eq!(s.epochs[2].label, Label::Unconscious);

    rec.samples.extend(vec![0.0; 5 * 500]);
    assert_eq!(segment_epochs(&rec, 30).unwrap().epochs.len(), 10);
    assert_eq!(segment_epochs(&rec, 10).unwrap().epochs.len(), 30);

    let short = RawRecording::new(500, vec![0.0; 100], 0).unwrap();
    let s = segment_epochs(&short, 30).unwrap();
    assert!(s.epochs.is_empty());
    assert_eq!(s.warnings.len(), 1);
}

#[test]
fn label_vocabulary() {
    assert_eq!(label_map("N2").unwrap(), Label::Unconscious);
    assert_eq!(label_map("Wake").unwrap(), Label::Conscious);
    assert_eq!(label_map("REM").unwrap(), Label::Unconscious);
    assert_eq!(label_map("Recovery").unwrap(), Label::Conscious);
    for s in ACCEPTED_STAGES {
        let l = label_map(s).unwrap();
        assert_eq!(l == Label::Conscious, s == "Wake" || s == "Recovery");
    }
    let err = label_map("N4").unwrap_err().to_string();
    assert!(ACCEPTED_STAGES.iter().all(|s| err.contains(s)), "{err}");
}

fn filtered_pair(x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (x.to_vec(), bandpass_0p5_40(x, 500.0).unwrap())
}

#[test]
fn snr_gate_examples() {
    let cfg = SyntheticConfig::default();
    let mut rng = RngState::new(4);
    for label in [Label::Conscious, Label::Unconscious] {
        let x = synth_signal(&cfg, label, 30.0, 500.0, &mut rng).unwrap();
        let (raw, f) = filtered_pair(&x);
        let d = snr_gate(&raw, &f, SNR_THRESHOLD_DB).unwrap();
        assert!(d.keep, "clean epoch rejected at {} dB", d.snr_db);
    }
    let noise: Vec<f64> = {
        let mut r = RngState::new(8);
        (0..15_000).map(|_| r.uniform() - 0.5).collect()
    };
    let (raw, f) = filtered_pair(&noise);
    let d = snr_gate(&raw, &f, SNR_THRESHOLD_DB).unwrap();
    assert!(!d.keep && d.snr_db < 10.0);
    assert!(snr_gate(&raw, &f, f64::NEG_INFINITY).unwrap().keep);

    let zero = vec![0.0; 100];
    let d = snr_gate(&zero, &zero, SNR_THRESHOLD_DB).unwrap();
    assert!(!d.keep && d.snr_db == f64::NEG_INFINITY);
}

#[test]
fn snr_monotone_in_noise() {
    let mut cfg = SyntheticConfig::default();
    cfg.snr_db = 100.0;
    for seed in 0..5 {
        let mut rng = RngState::new(seed);
        let clean = synth_signal(&cfg, Label::Conscious, 10.0, 500.0, &mut rng).unwrap();
        let noise: Vec<f64> = (0..clean.len()).map(|_| rng.uniform() - 0.5).collect();
        let mut last = f64::INFINITY;
        for k in [0.01, 0.05, 0.2, 0.5, 1.0] {
            let x: Vec<f64> = clean.iter().zip(&noise).map(|(c, n)| c + k * n).collect();
            let (raw, f) = filtered_pair(&x);
            let s = snr_db(&raw, &f).unwrap();
            assert!(s <= last, "seed {seed}: {s} > {last} at k={k}");
            last = s;
        }
    }
}

fn r_peaks(x: &[f64], fs: f64) -> Vec<f64> {
    let thr = 0.5 * x.iter().cloned().fold(f64::MIN, f64::max);
    let guard = (0.25 * fs) as usize;
    let mut peaks = Vec::new();
    let mut i = 1;
    while i + 1 < x.len() {
        if x[i] > thr && x[i] >= x[i - 1] && x[i] >= x[i + 1] {
            peaks.push(i as f64 / fs);
            i += guard;
        } else {
            i += 1;
        }
    }
    peaks
}

fn rr(peaks: &[f64]) -> Vec<f64> {
    peaks.windows(2).map(|w| w[1] - w[0]).collect()
}

fn sd(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

#[test]
fn synthetic_physiology() {
    let cfg = SyntheticConfig::default();
    let epochs = synth_generate(&cfg, 100, 30, 500).unwrap();
    assert_eq!(epochs.len(), 200);
    let (mut hr, mut sd_c, mut sd_u) = (Vec::new(), Vec::new(), Vec::new());
    for e in &epochs {
        let intervals = rr(&r_peaks(&e.samples, 500.0));
        match e.label {
            Label::Conscious => {
                hr.push(60.0 / (intervals.iter().sum::<f64>() / intervals.len() as f64));
                sd_c.push(sd(&intervals));
            }
            _ => sd_u.push(sd(&intervals)),
        }
    }
    let mean_hr = hr.iter().sum::<f64>() / hr.len() as f64;
    assert!((mean_hr - 75.0).abs() < 2.0, "{mean_hr}");
    let wins = sd_u.iter().zip(&sd_c).filter(|(u, c)| u > c).count();
    assert_eq!(wins, 100);
}

#[test]
fn periodic_when_rr_fixed() {
    let mut cfg = SyntheticConfig::default();
    cfg.conscious.std_s = 0.0;
    cfg.snr_db = 80.0;
    let epochs = synth_generate(&cfg, 1, 30, 500).unwrap();
    let intervals = rr(&r_peaks(&epochs[0].samples, 500.0));
    assert!(intervals.iter().all(|d| (d - 0.8).abs() < 1.5 / 500.0), "{intervals:?}");
}

#[test]
fn synthetic_is_reproducible_and_validated() {
    let cfg = SyntheticConfig {
        seed: 9,
        ..Default::default()
    };
    assert_eq!(synth_generate(&cfg, 3, 10, 500).unwrap(), synth_generate(&cfg, 3, 10, 500).unwrap());
    let mut bad = cfg.clone();
    bad.conscious.mean_s = 0.1;
    assert!(synth_generate(&bad, 1, 10, 500).is_err());
    bad = cfg.clone();
    bad.snr_db = f64::NAN;
    assert!(synth_generate(&bad, 1, 10, 500).is_err());
}

#[test]
fn pipeline_counts() {
    let cfg = SyntheticConfig::default();
    let mut rng = RngState::new(2);
    let mut x = synth_signal(&cfg, Label::Conscious, 65.0, 512.0, &mut rng).unwrap();
    x.extend(synth_signal(&cfg, Label::Unconscious, 65.0, 512.0, &mut rng).unwrap());
    let mut rec = RawRecording::new(512, x, 5).unwrap();
    rec.annotations = vec![
        Annotation {
            start_s: 0.0,
            end_s: 65.0,
            stage: "Recovery".into(),
        },
        Annotation {
            start_s: 65.0,
            end_s: 130.0,
            stage: "Anesthesia".into(),
        },
    ];
    let out = preprocess(&rec, Task::Anesthesia, SNR_THRESHOLD_DB).unwrap();
    assert_eq!(out.kept.len() + out.rejected.len(), 13);
    assert!(out.rejected.is_empty(), "{:?}", out.rejected);
    assert!(out.kept.iter().all(|e| e.samples.len() == 5000 && e.sampling_rate == 500));
    assert_eq!(out.kept[6].label, Label::Conscious);
    assert_eq!(out.kept[7].label, Label::Unconscious);
}

#[test]
fn ecg1_examples() {
    let e = Epoch::new(1, 4, vec![0.5, -1.25, 3.0, 0.0], Label::Unconscious, 77).unwrap();
    let bytes = encode_ecg1(&e);
    assert_eq!(&bytes[..5], &[0x45, 0x43, 0x47, 0x31, 1]);
    assert_eq!(bytes.len(), ECG1_HEADER_LEN + 16);
    assert_eq!(decode_ecg1(&bytes).unwrap(), e);

    let mut bad = bytes.clone();
    bad[13] = 7;
    assert!(decode_ecg1(&bad).is_err());
    assert!(decode_ecg1(&bytes[..bytes.len() - 1]).is_err());
    let mut long = bytes.clone();
    long.push(0);
    assert!(decode_ecg1(&long).is_err());
    let mut nan = bytes.clone();
    nan[ECG1_HEADER_LEN..ECG1_HEADER_LEN + 4].copy_from_slice(&f32::NAN.to_le_bytes());
    assert!(decode_ecg1(&nan).is_err());
}

#[test]
fn manifest_examples() {
    let text = "path,subject,label\na.ecg1,1,conscious\nsub/b.ecg1,2,unconscious\n";
    let rows = parse_manifest(text).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1].label, Label::Unconscious);
    assert_eq!(format_manifest(&rows).unwrap(), text);
    assert!(parse_manifest("path,label\n").is_err());
    let err = parse_manifest("path,subject,label\na,1,conscious\nb,x,conscious\n").unwrap_err();
    assert!(err.to_string().contains("line 3"), "{err}");
    assert!(parse_manifest("path,subject,label\na,1\n").is_err());
    assert!(parse_manifest("path,subject,label\n").unwrap().is_empty());
}

proptest! {
    #[test]
    fn ecg1_round_trip(
        rate in 1u32..64,
        secs in 1u32..4,
        code in prop::sample::select(vec![0u8, 1, 255]),
        subject in any::<u32>(),
        seed in any::<u64>(),
    ) {
        let mut r = RngState::new(seed);
        let samples = (0..(rate * secs) as usize).map(|_| ((r.uniform() - 0.5) * 4.0) as f32 as f64).collect();
        let e = Epoch::new(secs, rate, samples, Label::from_code(code).unwrap(), subject).unwrap();
        prop_assert_eq!(decode_ecg1(&encode_ecg1(&e)).unwrap(), e);
    }

    #[test]
    fn ecg1_decode_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
        let _ = decode_ecg1(&bytes);
    }

    #[test]
    fn manifest_round_trip(rows in prop::collection::vec(("[a-z0-9_/., \"]{1,12}", any::<u32>(), 0usize..3), 0..8)) {
        let labels = [Label::Conscious, Label::Unconscious, Label::Unlabeled];
        let rows: Vec<ManifestRow> = rows
            .into_iter()
            .map(|(p, s, l)| ManifestRow { path: p.into(), subject: s, label: labels[l] })
            .collect();
        prop_assert_eq!(parse_manifest(&format_manifest(&rows).unwrap()).unwrap(), rows);
    }
}
