//! Dataset manifests: one audio path per line, optionally followed by a
//! label token. Relative paths resolve against the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use super::Label;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: Option<Label>,
}

pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let path = PathBuf::from(fields.next().expect("non-empty"));
        let label = fields
            .next()
            .map(|t| {
                t.parse::<Label>().map_err(|_| Error::Parse {
                    what: "manifest",
                    line: i + 1,
                    detail: format!("unknown label `{t}`"),
                })
            })
            .transpose()?;
        if let Some(extra) = fields.next() {
            return Err(Error::Parse {
                what: "manifest",
                line: i + 1,
                detail: format!("unexpected field `{extra}`"),
            });
        }
        let path = if path.is_relative() { base.join(path) } else { path };
        out.push(ManifestEntry { path, label });
    }
    Ok(out)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new(".")))
}

/// Renders entries with paths relative to `base` where possible.
pub fn write_manifest(entries: &[ManifestEntry], base: &Path) -> String {
    entries
        .iter()
        .map(|e| {
            let p = e.path.strip_prefix(base).unwrap_or(&e.path).display().to_string();
            match e.label {
                Some(l) => format!("{p} {l}\n"),
                None => format!("{p}\n"),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_round_trip() {
        let base = Path::new("/data");
        let text = "# comment\nwav/a.wav bonafide\n/abs/b.wav spoof\nc.wav\n\n";
        let m = parse_manifest(text, base).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m[0].path, PathBuf::from("/data/wav/a.wav"));
        assert_eq!(m[1].path, PathBuf::from("/abs/b.wav"));
        assert_eq!(m[2].label, None);
        assert_eq!(parse_manifest(&write_manifest(&m, base), base).unwrap(), m);
    }

    #[test]
    fn bad_label_names_line() {
        match parse_manifest("a.wav spoof\nb.wav fake", Path::new(".")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}
