use std::fmt;
use std::str::FromStr;

use crate::error::Error;

/// The two conscious-state problems, each with its own epoch length and
/// training defaults.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    Sleep,
    Anesthesia,
}

impl Task {
    pub fn epoch_seconds(self) -> usize {
        match self {
            Task::Sleep => 30,
            Task::Anesthesia => 10,
        }
    }

    /// Whether preprocessing subtracts a moving-average baseline.
    pub fn removes_baseline_wander(self) -> bool {
        matches!(self, Task::Anesthesia)
    }

    /// Annotation used for the (conscious, unconscious) synthetic classes.
    pub fn stage_names(self) -> (&'static str, &'static str) {
        match self {
            Task::Sleep => ("Wake", "N2"),
            Task::Anesthesia => ("Recovery", "Anesthesia"),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Sleep => "sleep",
            Task::Anesthesia => "anesthesia",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sleep" => Ok(Task::Sleep),
            "anesthesia" => Ok(Task::Anesthesia),
            other => Err(Error::Config(format!(
                "unknown task `{other}` (expected sleep or anesthesia)"
            ))),
        }
    }
}
