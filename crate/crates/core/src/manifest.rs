//! Newline-delimited dataset and evaluation manifests.
//!
//! Records carry no style or speaker labels; the schema rejects unknown keys
//! so such fields cannot slip in.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dsp::Category;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub category: Category,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairEntry {
    pub source: PathBuf,
    pub converted: PathBuf,
    #[serde(default)]
    pub id: Option<String>,
    /// Whether the source has phonemic content worth transcribing.
    #[serde(default)]
    pub linguistic: bool,
}

fn parse_lines<T: DeserializeOwned>(text: &str, origin: &str) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Data(format!("{origin}:{}: {e}", i + 1))))
        .collect()
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn read(path: &Path) -> Result<(String, PathBuf)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((text, base))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Parses records without touching the filesystem.
    pub fn parse(text: &str) -> Result<Self> {
        let entries: Vec<ManifestEntry> = parse_lines(text, "manifest")?;
        for e in &entries {
            if !(e.duration_s.is_finite() && e.duration_s >= 0.0) {
                return Err(Error::Data(format!("{}: invalid duration {}", e.path.display(), e.duration_s)));
            }
        }
        Ok(Self { entries })
    }

    /// Relative paths resolve against the manifest's directory; every path
    /// must exist.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let (text, base) = read(path)?;
        let mut m = Self::parse(&text).map_err(|e| match e {
            Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        for e in &mut m.entries {
            e.path = resolve(&base, &e.path);
            if !e.path.is_file() {
                return Err(Error::Data(format!("manifest item {} does not exist", e.path.display())));
            }
        }
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn load_pairs(path: impl AsRef<Path>) -> Result<Vec<PairEntry>> {
    let path = path.as_ref();
    let (text, base) = read(path)?;
    let mut pairs: Vec<PairEntry> = parse_lines(&text, &path.display().to_string())?;
    for p in &mut pairs {
        p.source = resolve(&base, &p.source);
        p.converted = resolve(&base, &p.converted);
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_records() {
        let m = DatasetManifest::parse(
            "{\"path\":\"a.wav\",\"category\":\"animal\",\"duration_s\":1.5}\n\n{\"path\":\"b.wav\",\"category\":\"designed\",\"duration_s\":2}\n",
        )
        .unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.entries[0].category, Category::Animal);
    }

    #[test]
    fn label_fields_rejected() {
        for extra in ["style_id", "speaker_id", "speaker"] {
            let line = format!("{{\"path\":\"a.wav\",\"category\":\"animal\",\"duration_s\":1,\"{extra}\":3}}");
            assert!(matches!(DatasetManifest::parse(&line), Err(Error::Data(_))), "{extra}");
        }
    }

    #[test]
    fn closed_category_set() {
        let line = "{\"path\":\"a.wav\",\"category\":\"music\",\"duration_s\":1}";
        assert!(DatasetManifest::parse(line).is_err());
    }

    #[test]
    fn missing_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ndjson");
        std::fs::write(&path, "{\"path\":\"nope.wav\",\"category\":\"animal\",\"duration_s\":1}\n").unwrap();
        assert!(matches!(DatasetManifest::load(&path), Err(Error::Data(_))));
    }
}
