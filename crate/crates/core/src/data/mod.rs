//! Audio, protocol and manifest I/O, length normalisation and the synthetic
//! corpus.

pub mod manifest;
pub mod protocol;
pub mod synth;
pub mod wav;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use manifest::{read_manifest, write_manifest, ManifestEntry};
pub use protocol::{parse_protocol, ProtocolEntry};
pub use synth::{make_synthetic_dataset, SynthConfig};
pub use wav::{load_wav, write_wav};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Spoof,
    Bona,
}

impl Label {
    /// Output-layer index: spoof 0, bona fide 1.
    pub fn class_index(self) -> usize {
        match self {
            Label::Spoof => 0,
            Label::Bona => 1,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Spoof => "spoof",
            Label::Bona => "bonafide",
        })
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bonafide" | "bona" => Ok(Label::Bona),
            "spoof" => Ok(Label::Spoof),
            other => Err(Error::Config(format!("unknown label `{other}` (bonafide, spoof)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub samples: Vec<f64>,
    pub label: Option<Label>,
}

/// Truncates to the first `len` samples, or tiles the whole utterance end to
/// end until `len` samples are filled.
pub fn fix_length(samples: &[f64], len: usize) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::Contract("cannot fix the length of an empty signal".into()));
    }
    Ok(samples.iter().copied().cycle().take(len).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fix_length_cases() {
        let long: Vec<f64> = (0..100_000).map(|i| i as f64).collect();
        assert_eq!(fix_length(&long, 64_600).unwrap(), long[..64_600]);
        assert_eq!(fix_length(&long[..64_600], 64_600).unwrap(), long[..64_600]);
        let short = &long[..30_000];
        let y = fix_length(short, 64_600).unwrap();
        assert_eq!(&y[..30_000], short);
        assert_eq!(&y[30_000..60_000], short);
        assert_eq!(&y[60_000..], &short[..4_600]);
        assert!(fix_length(&[], 10).is_err());
    }

    #[test]
    fn label_tokens() {
        assert_eq!("bonafide".parse::<Label>().unwrap(), Label::Bona);
        assert_eq!(Label::Spoof.to_string().parse::<Label>().unwrap(), Label::Spoof);
        assert!("genuine".parse::<Label>().is_err());
    }
}
