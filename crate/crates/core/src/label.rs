use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Binary class. `Cough` is the positive class and occupies index 0 of every
/// two-way probability vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Cough,
    Others,
}

impl Label {
    pub fn index(self) -> usize {
        match self {
            Label::Cough => 0,
            Label::Others => 1,
        }
    }

    pub fn from_index(index: usize) -> Option<Label> {
        match index {
            0 => Some(Label::Cough),
            1 => Some(Label::Others),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Cough => "Cough",
            Label::Others => "Others",
        })
    }
}

impl FromStr for Label {
    type Err = String;

    /// Accepts `cough`/`others` (any case), `c`/`o`, and `1` (cough) / `0` (others).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cough" | "c" | "1" => Ok(Label::Cough),
            "others" | "other" | "o" | "0" => Ok(Label::Others),
            other => Err(format!("unrecognised label `{other}`")),
        }
    }
}
