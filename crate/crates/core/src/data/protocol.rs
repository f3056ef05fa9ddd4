//! Five-column countermeasure protocol files:
//! `speaker utterance system key label`.

use std::fmt;

use super::Label;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProtocolEntry {
    pub speaker: String,
    pub utterance: String,
    pub system: String,
    pub key: String,
    pub label: Label,
}

impl ProtocolEntry {
    /// Attack identifier: the key column, else the system column; `-` in
    /// both means none.
    pub fn attack(&self) -> Option<&str> {
        [&self.key, &self.system].into_iter().map(String::as_str).find(|s| *s != "-")
    }

    pub fn parse_line(line: &str, line_no: usize) -> Result<Self> {
        let fields: Vec<&str> = line.split_whitespace().collect();
        let err = |detail: String| Error::Parse {
            what: "protocol",
            line: line_no,
            detail,
        };
        let [speaker, utterance, system, key, label] = fields[..] else {
            return Err(err(format!("expected 5 fields, found {}", fields.len())));
        };
        let label = match label {
            "bonafide" => Label::Bona,
            "spoof" => Label::Spoof,
            other => return Err(err(format!("label `{other}` is neither bonafide nor spoof"))),
        };
        Ok(Self {
            speaker: speaker.into(),
            utterance: utterance.into(),
            system: system.into(),
            key: key.into(),
            label,
        })
    }
}

impl fmt::Display for ProtocolEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {} {} {}", self.speaker, self.utterance, self.system, self.key, self.label)
    }
}

/// Parses every non-blank line.
pub fn parse_protocol(text: &str) -> Result<Vec<ProtocolEntry>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| ProtocolEntry::parse_line(l, i + 1))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn asvspoof_layout() {
        let text = "LA_0079 LA_T_1138215 - - bonafide\nLA_0079 LA_T_1271820 - A01 spoof\n\n";
        let p = parse_protocol(text).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p[0].label, Label::Bona);
        assert_eq!(p[0].attack(), None);
        assert_eq!(p[1].attack(), Some("A01"));
        assert_eq!(p[1].to_string(), "LA_0079 LA_T_1271820 - A01 spoof");
    }

    #[test]
    fn system_column_used_when_key_missing() {
        let e = ProtocolEntry::parse_line("s u A07 - spoof", 1).unwrap();
        assert_eq!(e.attack(), Some("A07"));
    }

    #[test]
    fn malformed_lines_name_line() {
        for bad in ["a b c d", "a b c d e f", "a b c d human"] {
            match parse_protocol(&format!("s u - - spoof\n{bad}")) {
                Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
                other => panic!("{other:?}"),
            }
        }
    }
}
