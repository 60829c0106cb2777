use crate::error::{Error, Result};

/// Epoch label as stored on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Conscious,
    Unconscious,
    Unlabeled,
}

impl Label {
    pub fn code(self) -> u8 {
        match self {
            Label::Conscious => 0,
            Label::Unconscious => 1,
            Label::Unlabeled => 255,
        }
    }

    pub fn from_code(code: u8) -> Option<Label> {
        match code {
            0 => Some(Label::Conscious),
            1 => Some(Label::Unconscious),
            255 => Some(Label::Unlabeled),
            _ => None,
        }
    }

    /// Class index for training; unconscious is the positive class.
    pub fn class_index(self) -> Option<usize> {
        match self {
            Label::Conscious => Some(0),
            Label::Unconscious => Some(1),
            Label::Unlabeled => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Conscious => "conscious",
            Label::Unconscious => "unconscious",
            Label::Unlabeled => "unlabeled",
        }
    }

    pub fn parse(s: &str) -> Option<Label> {
        match s {
            "conscious" => Some(Label::Conscious),
            "unconscious" => Some(Label::Unconscious),
            "unlabeled" => Some(Label::Unlabeled),
            _ => None,
        }
    }
}

/// Scored interval of a recording, in seconds from its start.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub start_s: f64,
    pub end_s: f64,
    pub stage: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawRecording {
    pub sampling_rate: u32,
    /// Millivolts.
    pub samples: Vec<f64>,
    pub subject_id: u32,
    pub annotations: Vec<Annotation>,
}

impl RawRecording {
    pub fn new(sampling_rate: u32, samples: Vec<f64>, subject_id: u32) -> Result<Self> {
        let rec = RawRecording {
            sampling_rate,
            samples,
            subject_id,
            annotations: Vec::new(),
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sampling_rate == 0 {
            return Err(Error::InvalidArgument("sampling rate must be positive".into()));
        }
        if let Some(i) = self.samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "recording of subject {} at sample {i}",
                self.subject_id
            )));
        }
        Ok(())
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sampling_rate as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Epoch {
    pub seconds: u32,
    pub sampling_rate: u32,
    pub samples: Vec<f64>,
    pub label: Label,
    pub subject_id: u32,
}

impl Epoch {
    pub fn new(seconds: u32, sampling_rate: u32, samples: Vec<f64>, label: Label, subject_id: u32) -> Result<Self> {
        let expect = seconds as usize * sampling_rate as usize;
        if samples.len() != expect {
            return Err(Error::shape(
                "Epoch::new",
                format!("{} samples for {seconds} s at {sampling_rate} Hz", samples.len()),
            ));
        }
        Ok(Epoch {
            seconds,
            sampling_rate,
            samples,
            label,
            subject_id,
        })
    }
}
