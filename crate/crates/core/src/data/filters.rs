use std::f64::consts::PI;

use crate::error::{Error, Result};

use super::types::RawRecording;

const UP: usize = 125;
const DOWN: usize = 128;
/// Input samples on each side of the interpolation point.
const HALF_TAPS: usize = 24;
const KAISER_BETA: f64 = 8.0;

/// Modified Bessel function of the first kind, order 0 (power series).
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..64 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Taps for each of the `UP` output phases. Phase `p` interpolates at
/// fractional offset `p / UP` past an input sample; each phase sums to 1.
fn polyphase_bank() -> Vec<Vec<f64>> {
    // cutoff at the output Nyquist, expressed as a fraction of the input rate
    let fc = 0.5 * UP as f64 / DOWN as f64;
    let norm = bessel_i0(KAISER_BETA);
    (0..UP)
        .map(|p| {
            let frac = p as f64 / UP as f64;
            let mut taps: Vec<f64> = (0..2 * HALF_TAPS)
                .map(|j| {
                    // tap j multiplies input sample base - HALF_TAPS + 1 + j
                    let tau = frac + HALF_TAPS as f64 - 1.0 - j as f64;
                    let r = tau / HALF_TAPS as f64;
                    if r.abs() >= 1.0 {
                        return 0.0;
                    }
                    let w = bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / norm;
                    2.0 * fc * sinc(2.0 * fc * tau) * w
                })
                .collect();
            let s: f64 = taps.iter().sum();
            taps.iter_mut().for_each(|t| *t /= s);
            taps
        })
        .collect()
}

/// Polyphase 125/128 resampling with a Kaiser-windowed sinc low-pass at the
/// output Nyquist. Edges are padded with the edge values.
pub fn resample_512_to_500(rec: &RawRecording) -> Result<RawRecording> {
    if rec.sampling_rate != 512 {
        return Err(Error::InvalidArgument(format!(
            "resampler expects 512 Hz input, got {} Hz",
            rec.sampling_rate
        )));
    }
    let x = &rec.samples;
    let n = x.len();
    let out_len = n * UP / DOWN;
    let bank = polyphase_bank();
    let at = |i: isize| -> f64 {
        if i < 0 {
            x[0]
        } else if i as usize >= n {
            x[n - 1]
        } else {
            x[i as usize]
        }
    };
    let mut y = Vec::with_capacity(out_len);
    for m in 0..out_len {
        // output m sits at input position m·DOWN/UP = base + phase/UP
        let pos = m * DOWN;
        let base = (pos / UP) as isize;
        let phase = pos % UP;
        let taps = &bank[phase];
        let first = base - HALF_TAPS as isize + 1;
        let v: f64 = taps
            .iter()
            .enumerate()
            .map(|(j, t)| t * at(first + j as isize))
            .sum();
        y.push(v);
    }
    Ok(RawRecording {
        sampling_rate: 500,
        samples: y,
        subject_id: rec.subject_id,
        annotations: rec.annotations.clone(),
    })
}

/// Second-order section `b0 + b1 z⁻¹ + b2 z⁻²` over `1 + a1 z⁻¹ + a2 z⁻²`.
#[derive(Debug, Clone, Copy)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    fn lowpass(f0: f64, fs: f64, q: f64) -> Self {
        let w = 2.0 * PI * f0 / fs;
        let alpha = w.sin() / (2.0 * q);
        let c = w.cos();
        let a0 = 1.0 + alpha;
        Biquad {
            b: [(1.0 - c) / 2.0 / a0, (1.0 - c) / a0, (1.0 - c) / 2.0 / a0],
            a: [-2.0 * c / a0, (1.0 - alpha) / a0],
        }
    }

    fn highpass(f0: f64, fs: f64, q: f64) -> Self {
        let w = 2.0 * PI * f0 / fs;
        let alpha = w.sin() / (2.0 * q);
        let c = w.cos();
        let a0 = 1.0 + alpha;
        Biquad {
            b: [(1.0 + c) / 2.0 / a0, -(1.0 + c) / a0, (1.0 + c) / 2.0 / a0],
            a: [-2.0 * c / a0, (1.0 - alpha) / a0],
        }
    }

    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }
}

/// Pole quality factors of a 4th-order Butterworth response.
const BUTTER4_Q: [f64; 2] = [0.541_196_100_146_197, 1.306_562_964_876_376_6];

fn bandpass_sections(fs: f64) -> Vec<Biquad> {
    let mut s = Vec::new();
    for q in BUTTER4_Q {
        s.push(Biquad::highpass(0.5, fs, q));
    }
    for q in BUTTER4_Q {
        s.push(Biquad::lowpass(40.0, fs, q));
    }
    s
}

/// Transposed direct form II cascade, started in the steady state for a
/// constant input equal to `x[0]`.
fn sosfilt_steady(sections: &[Biquad], x: &[f64]) -> Vec<f64> {
    let mut y = x.to_vec();
    let mut level = x.first().copied().unwrap_or(0.0);
    for s in sections {
        let out_level = level * s.dc_gain();
        let mut z1 = out_level - s.b[0] * level;
        let mut z2 = s.b[2] * level - s.a[1] * out_level;
        for v in y.iter_mut() {
            let xin = *v;
            let out = s.b[0] * xin + z1;
            z1 = s.b[1] * xin - s.a[0] * out + z2;
            z2 = s.b[2] * xin - s.a[1] * out;
            *v = out;
        }
        level = out_level;
    }
    y
}

/// Zero-phase 0.5–40 Hz band-pass: 4th-order Butterworth high- and low-pass
/// sections run forward then backward over an odd-reflected extension.
pub fn bandpass_0p5_40(samples: &[f64], fs: f64) -> Result<Vec<f64>> {
    if !(fs > 80.0) || !fs.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "band-pass needs a sampling rate above 80 Hz, got {fs}"
        )));
    }
    let n = samples.len();
    if n < 2 {
        return Ok(vec![0.0; n]);
    }
    let sections = bandpass_sections(fs);
    let pad = (n - 1).min(fs.round() as usize);
    let (first, last) = (samples[0], samples[n - 1]);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * first - samples[i]));
    ext.extend_from_slice(samples);
    ext.extend((1..=pad).map(|i| 2.0 * last - samples[n - 1 - i]));

    let mut y = sosfilt_steady(&sections, &ext);
    y.reverse();
    let mut y = sosfilt_steady(&sections, &y);
    y.reverse();
    Ok(y[pad..pad + n].to_vec())
}

/// Subtracts a centred moving average of `window_s` seconds; windows shrink
/// at the edges.
pub fn remove_baseline_wander(samples: &[f64], fs: f64, window_s: f64) -> Result<Vec<f64>> {
    let width = (window_s * fs).round();
    if !(width >= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "baseline window of {window_s} s at {fs} Hz spans no samples"
        )));
    }
    let half = (width as usize) / 2;
    let n = samples.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for &v in samples {
        acc += v;
        prefix.push(acc);
    }
    Ok((0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            samples[i] - (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bessel_matches_reference() {
        // I0(1), I0(5) from standard tables
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_4).abs() < 1e-14);
        assert!((bessel_i0(5.0) - 27.239_871_823_604_45).abs() < 1e-11);
    }

    #[test]
    fn phases_have_unit_gain() {
        for taps in polyphase_bank() {
            assert!((taps.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn steady_state_start_has_no_transient() {
        let s = bandpass_sections(500.0);
        let y = sosfilt_steady(&s, &[3.0; 50]);
        assert!(y.iter().all(|v| v.abs() < 1e-9), "{y:?}");
    }
}
