//! Line-delimited JSON manifests: one `{image_path, mask_path, split,
//! source}` record per line, paths relative to the manifest's directory.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(other.to_string()),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    image_path: PathBuf,
    mask_path: PathBuf,
    split: String,
    source: String,
}

/// One image/mask pair. Paths are stored as written in the manifest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub image_path: PathBuf,
    pub mask_path: PathBuf,
    pub split: Split,
    pub source: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    /// Directory relative paths are resolved against.
    pub root: PathBuf,
    pub records: Vec<Record>,
}

impl Manifest {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn image_path(&self, r: &Record) -> PathBuf {
        self.resolve(&r.image_path)
    }

    pub fn mask_path(&self, r: &Record) -> PathBuf {
        self.resolve(&r.mask_path)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn split_counts(&self) -> BTreeMap<Split, usize> {
        let mut m = BTreeMap::new();
        for r in &self.records {
            *m.entry(r.split).or_insert(0) += 1;
        }
        m
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r).expect("record serializes"));
            s.push('\n');
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl().as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Parses and eagerly validates a manifest: split tags, file existence,
/// matching image/mask dimensions and unique image paths.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut manifest = Manifest { root, records: Vec::new() };
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let record = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord =
            serde_json::from_str(line).map_err(|e| Error::ManifestSyntax { line: record, detail: e.to_string() })?;
        let split = raw.split.parse().map_err(|tag| Error::BadSplitTag { record, tag })?;
        let r = Record { image_path: raw.image_path, mask_path: raw.mask_path, split, source: raw.source };
        let (img, mask) = (manifest.image_path(&r), manifest.mask_path(&r));
        for p in [&img, &mask] {
            if !p.is_file() {
                return Err(Error::MissingFile { record, path: p.clone() });
            }
        }
        if !seen.insert(img.clone()) {
            return Err(Error::DuplicatePath { record, path: r.image_path });
        }
        let dims = |p: &PathBuf| {
            image::image_dimensions(p).map_err(|e| Error::Decode { path: p.clone(), detail: e.to_string() })
        };
        let (image_dims, mask_dims) = (dims(&img)?, dims(&mask)?);
        if image_dims != mask_dims {
            return Err(Error::DimensionMismatch { record, image: image_dims, mask: mask_dims });
        }
        manifest.records.push(r);
    }
    Ok(manifest)
}
