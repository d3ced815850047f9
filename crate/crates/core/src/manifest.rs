//! Clip manifests: `clip_id,speaker_id,path,label_O,label_C,label_E,label_A,label_N`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary class of one trait: the positive or negative end of the scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Pos,
    Neg,
}

impl Label {
    pub fn sign(self) -> f64 {
        match self {
            Label::Pos => 1.0,
            Label::Neg => -1.0,
        }
    }

    pub fn flip(self) -> Label {
        match self {
            Label::Pos => Label::Neg,
            Label::Neg => Label::Pos,
        }
    }

    /// Sign of a decision value; exactly zero maps to `Pos`.
    pub fn from_decision(value: f64) -> Label {
        if value >= 0.0 {
            Label::Pos
        } else {
            Label::Neg
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Pos => "+1",
            Label::Neg => "-1",
        })
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "+1" | "1" => Ok(Label::Pos),
            "-1" => Ok(Label::Neg),
            other => Err(Error::Manifest(format!("label must be +1 or -1, got `{other}`"))),
        }
    }
}

/// The Big-Five personality traits, each handled as an independent binary task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Trait {
    O,
    C,
    E,
    A,
    N,
}

impl Trait {
    pub const ALL: [Trait; 5] = [Trait::O, Trait::C, Trait::E, Trait::A, Trait::N];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn letter(self) -> char {
        match self {
            Trait::O => 'O',
            Trait::C => 'C',
            Trait::E => 'E',
            Trait::A => 'A',
            Trait::N => 'N',
        }
    }

    pub fn from_letter(c: char) -> Option<Trait> {
        Trait::ALL.into_iter().find(|t| t.letter() == c.to_ascii_uppercase())
    }
}

impl fmt::Display for Trait {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

impl FromStr for Trait {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut chars = s.trim().chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => Trait::from_letter(c),
            _ => None,
        }
        .ok_or_else(|| Error::InvalidParameter(format!("unknown trait `{s}` (expected O, C, E, A or N)")))
    }
}

/// Per-trait labels of one clip, indexed by [`Trait::index`].
pub type TraitLabels = [Label; 5];

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub clip_id: String,
    pub speaker_id: String,
    pub path: PathBuf,
    pub labels: TraitLabels,
}

#[derive(Debug, Deserialize)]
struct Row {
    clip_id: String,
    speaker_id: String,
    path: String,
    #[serde(rename = "label_O")]
    o: String,
    #[serde(rename = "label_C")]
    c: String,
    #[serde(rename = "label_E")]
    e: String,
    #[serde(rename = "label_A")]
    a: String,
    #[serde(rename = "label_N")]
    n: String,
}

pub const MANIFEST_HEADER: [&str; 8] = [
    "clip_id", "speaker_id", "path", "label_O", "label_C", "label_E", "label_A", "label_N",
];

/// Parses a manifest. Relative clip paths are resolved against `base_dir`.
pub fn parse_manifest<R: std::io::Read>(input: R, base_dir: &Path) -> Result<Vec<ManifestEntry>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(MANIFEST_HEADER) {
        return Err(Error::Manifest(format!(
            "header must be `{}`, got `{}`",
            MANIFEST_HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for (line, row) in rdr.deserialize::<Row>().enumerate() {
        let row = row?;
        let labels = [&row.o, &row.c, &row.e, &row.a, &row.n]
            .map(|s| s.parse::<Label>());
        let labels = labels
            .into_iter()
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::Manifest(format!("row {}: {e}", line + 2)))?;
        let path = PathBuf::from(&row.path);
        out.push(ManifestEntry {
            clip_id: row.clip_id,
            speaker_id: row.speaker_id,
            path: if path.is_absolute() { path } else { base_dir.join(path) },
            labels: labels.try_into().unwrap(),
        });
    }
    let mut seen = std::collections::HashSet::new();
    for e in &out {
        if !seen.insert(e.clip_id.as_str()) {
            return Err(Error::Manifest(format!("duplicate clip_id `{}`", e.clip_id)));
        }
    }
    Ok(out)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let file = std::fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_manifest(file, base)
}

pub fn write_manifest<W: std::io::Write>(out: W, entries: &[ManifestEntry]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(MANIFEST_HEADER)?;
    for e in entries {
        let mut rec = vec![
            e.clip_id.clone(),
            e.speaker_id.clone(),
            e.path.to_string_lossy().into_owned(),
        ];
        rec.extend(e.labels.iter().map(|l| l.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
