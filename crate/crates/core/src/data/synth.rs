use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::numerics::RngState;

use super::types::{Epoch, Label};

/// Gaussian bump: amplitude in mV, centre and width in seconds relative to
/// the R peak.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wave {
    pub amplitude: f64,
    pub offset_s: f64,
    pub width_s: f64,
}

/// RR-interval distribution of one class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RrModel {
    pub mean_s: f64,
    pub std_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub conscious: RrModel,
    pub unconscious: RrModel,
    /// P, Q, R, S, T.
    pub waves: [Wave; 5],
    pub snr_db: f64,
    pub seed: u64,
}

/// RR intervals are floored at this fraction of the class mean.
const MIN_RR_FRACTION: f64 = 0.4;

impl Default for SyntheticConfig {
    fn default() -> Self {
        let w = |amplitude, offset_s, width_s| Wave {
            amplitude,
            offset_s,
            width_s,
        };
        SyntheticConfig {
            conscious: RrModel {
                mean_s: 0.8,
                std_s: 0.03,
            },
            unconscious: RrModel {
                mean_s: 1.0,
                std_s: 0.08,
            },
            waves: [
                w(0.15, -0.2, 0.025),
                w(-0.1, -0.03, 0.01),
                w(1.0, 0.0, 0.012),
                w(-0.25, 0.03, 0.01),
                w(0.3, 0.28, 0.05),
            ],
            snr_db: 30.0,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn rr(&self, label: Label) -> Result<RrModel> {
        match label {
            Label::Conscious => Ok(self.conscious),
            Label::Unconscious => Ok(self.unconscious),
            Label::Unlabeled => Err(Error::InvalidArgument(
                "synthetic beats need a conscious or unconscious class".into(),
            )),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let widest = self.waves.iter().map(|w| w.width_s).fold(0.0, f64::max);
        for (name, rr) in [("conscious", self.conscious), ("unconscious", self.unconscious)] {
            if !(rr.mean_s > 3.0 * widest) || !rr.mean_s.is_finite() {
                return Err(Error::Config(format!(
                    "{name} mean RR {} s must exceed 3 × widest wave ({widest} s)",
                    rr.mean_s
                )));
            }
            if !(rr.std_s >= 0.0) || !rr.std_s.is_finite() {
                return Err(Error::Config(format!("{name} RR std {} s", rr.std_s)));
            }
        }
        for w in &self.waves {
            if !(w.width_s > 0.0) || !w.amplitude.is_finite() || !w.offset_s.is_finite() {
                return Err(Error::Config(format!("invalid wave {w:?}")));
            }
        }
        if !self.snr_db.is_finite() {
            return Err(Error::Config("synthetic SNR must be finite".into()));
        }
        Ok(())
    }
}

/// Beat times (R peaks) covering `[−margin, seconds + margin)`.
pub fn beat_times(rr: RrModel, seconds: f64, rng: &mut RngState) -> Result<Vec<f64>> {
    let margin = 1.0;
    let floor = MIN_RR_FRACTION * rr.mean_s;
    let jitter = Normal::new(0.0, rr.std_s).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut t = -margin + rng.uniform() * rr.mean_s;
    let mut beats = Vec::new();
    while t < seconds + margin {
        beats.push(t);
        let step = if rr.std_s == 0.0 {
            rr.mean_s
        } else {
            (rr.mean_s + jitter.sample(rng)).max(floor)
        };
        t += step;
    }
    Ok(beats)
}

/// Noise-free ECG of `n` samples at `fs` from the given R-peak times.
pub fn render_beats(waves: &[Wave], beats: &[f64], n: usize, fs: f64) -> Vec<f64> {
    let mut x = vec![0.0; n];
    for &r in beats {
        for w in waves {
            let centre = r + w.offset_s;
            let reach = 5.0 * w.width_s;
            let lo = (((centre - reach) * fs).floor().max(0.0)) as usize;
            let hi = (((centre + reach) * fs).ceil().max(0.0) as usize).min(n);
            for (i, v) in x.iter_mut().enumerate().take(hi).skip(lo) {
                let z = (i as f64 / fs - centre) / w.width_s;
                *v += w.amplitude * (-0.5 * z * z).exp();
            }
        }
    }
    x
}

/// Adds white Gaussian noise so that signal variance over noise power
/// equals `snr_db`.
pub fn add_noise(x: &mut [f64], snr_db: f64, rng: &mut RngState) -> Result<()> {
    let n = x.len().max(1) as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sigma = (var / 10f64.powf(snr_db / 10.0)).sqrt();
    if sigma == 0.0 {
        return Ok(());
    }
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    for v in x.iter_mut() {
        *v += noise.sample(rng);
    }
    Ok(())
}

/// Continuous synthetic ECG of one class.
pub fn synth_signal(
    config: &SyntheticConfig,
    label: Label,
    seconds: f64,
    fs: f64,
    rng: &mut RngState,
) -> Result<Vec<f64>> {
    let beats = beat_times(config.rr(label)?, seconds, rng)?;
    let n = (seconds * fs).round() as usize;
    let mut x = render_beats(&config.waves, &beats, n, fs);
    add_noise(&mut x, config.snr_db, rng)?;
    Ok(x)
}

/// `n_per_class` epochs of each class, conscious first, all from
/// `config.seed`.
pub fn synth_generate(config: &SyntheticConfig, n_per_class: usize, seconds: u32, fs: u32) -> Result<Vec<Epoch>> {
    config.validate()?;
    if seconds == 0 || fs == 0 {
        return Err(Error::InvalidArgument("epoch length and rate must be positive".into()));
    }
    let mut rng = RngState::new(config.seed);
    let mut out = Vec::with_capacity(2 * n_per_class);
    for label in [Label::Conscious, Label::Unconscious] {
        for _ in 0..n_per_class {
            let x = synth_signal(config, label, seconds as f64, fs as f64, &mut rng)?;
            out.push(Epoch::new(seconds, fs, x, label, 0)?);
        }
    }
    Ok(out)
}
