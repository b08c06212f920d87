//! Sample manifests and in-memory training samples.
//!
//! A manifest is a tab-separated text file with one sample per line:
//! `id  volume-path  left-label-path  right-label-path  fold`. Lines starting
//! with `#` are comments. Relative paths resolve against the manifest's
//! directory.

use crate::error::{Error, Result};
use crate::io::load_volume;
use crate::volume::{LabelVolume, Volume};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

/// Which of the two bilateral targets a run trains on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Left, Side::Right];
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Left => "left",
            Side::Right => "right",
        })
    }
}

impl FromStr for Side {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "left" => Ok(Side::Left),
            "right" => Ok(Side::Right),
            other => Err(Error::Parse(format!("side must be left or right, got {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub volume: PathBuf,
    pub left: PathBuf,
    pub right: PathBuf,
    pub fold: usize,
}

impl ManifestEntry {
    pub fn label(&self, side: Side) -> &Path {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    /// Directory relative paths are resolved against.
    pub root: PathBuf,
    pub comments: Vec<String>,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub const FILE_NAME: &'static str = "manifest.tsv";

    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let mut comments = Vec::new();
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if let Some(c) = line.strip_prefix('#') {
                comments.push(c.trim().to_owned());
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            let [id, volume, left, right, fold] = f[..] else {
                return Err(Error::Data(format!(
                    "manifest line {}: expected 5 tab-separated fields, got {}",
                    n + 1,
                    f.len()
                )));
            };
            let fold = fold
                .trim()
                .parse()
                .map_err(|e| Error::Data(format!("manifest line {}: fold {fold:?}: {e}", n + 1)))?;
            entries.push(ManifestEntry {
                id: id.to_owned(),
                volume: volume.into(),
                left: left.into(),
                right: right.into(),
                fold,
            });
        }
        if entries.is_empty() {
            return Err(Error::Data("manifest lists no samples".into()));
        }
        Ok(Manifest {
            root: root.into(),
            comments,
            entries,
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in &self.comments {
            s.push_str(&format!("# {c}\n"));
        }
        for e in &self.entries {
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                e.id,
                e.volume.display(),
                e.left.display(),
                e.right.display(),
                e.fold
            ));
        }
        s
    }

    /// Reads a manifest file, or `manifest.tsv` inside a directory.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let mut path = path.as_ref().to_path_buf();
        if path.is_dir() {
            path.push(Self::FILE_NAME);
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, root)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Number of folds, `1 + max fold`.
    pub fn fold_count(&self) -> usize {
        self.entries.iter().map(|e| e.fold + 1).max().unwrap_or(0)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Loads every entry for `side`.
    pub fn load(&self, side: Side) -> Result<Vec<Sample>> {
        self.entries.iter().map(|e| self.load_entry(e, side)).collect()
    }

    pub fn load_entry(&self, entry: &ManifestEntry, side: Side) -> Result<Sample> {
        let volume = load_volume(self.resolve(&entry.volume))?;
        let label = LabelVolume::from_volume(&load_volume(self.resolve(entry.label(side)))?)
            .map_err(|e| Error::Data(format!("{} {side} label: {e}", entry.id)))?;
        if label.dims() != volume.dims() {
            return Err(Error::Data(format!(
                "{}: label dims {:?} differ from volume dims {:?}",
                entry.id,
                label.dims(),
                volume.dims()
            )));
        }
        Ok(Sample {
            id: entry.id.clone(),
            volume,
            label,
            fold: entry.fold,
        })
    }
}

/// One volume with the label of a single side.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub volume: Volume,
    pub label: LabelVolume,
    pub fold: usize,
}

/// Splits samples into (training, validation) by fold.
pub fn split_fold(samples: &[Sample], fold: usize) -> (Vec<Sample>, Vec<Sample>) {
    samples.iter().cloned().partition(|s| s.fold != fold)
}
