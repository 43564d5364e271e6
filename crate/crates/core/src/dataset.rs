//! Roughly paired adverse/reference image sets.
//!
//! Expected layout:
//!
//! ```text
//! root/<condition>/source/<stem>.png
//! root/<condition>/reference/<stem>.png
//! ```
//!
//! Files are paired by stem inside each condition directory.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::rng::RandomState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Snow,
    Rain,
    Fog,
    Night,
    Other,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::Snow => "snow",
            Condition::Rain => "rain",
            Condition::Fog => "fog",
            Condition::Night => "night",
            Condition::Other => "other",
        })
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "snow" => Ok(Condition::Snow),
            "rain" => Ok(Condition::Rain),
            "fog" => Ok(Condition::Fog),
            "night" => Ok(Condition::Night),
            "other" => Ok(Condition::Other),
            _ => Err(Error::param(format!("unknown condition '{s}'"))),
        }
    }
}

impl Condition {
    /// Directory names outside the known set are filed under `Other`.
    pub fn from_dir_name(name: &str) -> Self {
        name.parse().unwrap_or(Condition::Other)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairEntry {
    pub source: PathBuf,
    pub target: PathBuf,
    pub condition: Condition,
}

impl PairEntry {
    pub fn stem(&self) -> String {
        self.source
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairManifest {
    pub root: PathBuf,
    /// Sorted by source path.
    pub entries: Vec<PairEntry>,
    /// Files with no counterpart on the other side.
    pub unmatched: Vec<PathBuf>,
}

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// PNG and JPEG files directly inside `dir`, keyed by stem. A missing
/// directory yields an empty map.
pub fn image_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let is_image = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if path.is_file() && is_image {
            if let Some(stem) = path.file_stem() {
                out.insert(stem.to_string_lossy().into_owned(), path);
            }
        }
    }
    Ok(out)
}

/// Walks `root` and pairs source/reference files by stem.
pub fn scan(root: impl AsRef<Path>) -> Result<PairManifest> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("dataset root {} does not exist", root.display()),
        )));
    }
    let mut entries = Vec::new();
    let mut unmatched = Vec::new();
    let mut condition_dirs: Vec<PathBuf> = fs::read_dir(root)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    condition_dirs.retain(|p| p.is_dir());
    condition_dirs.sort();
    for dir in condition_dirs {
        let condition = Condition::from_dir_name(&dir.file_name().unwrap_or_default().to_string_lossy());
        let sources = image_files(&dir.join("source"))?;
        let mut references = image_files(&dir.join("reference"))?;
        for (stem, source) in sources {
            match references.remove(&stem) {
                Some(target) => entries.push(PairEntry {
                    source,
                    target,
                    condition,
                }),
                None => unmatched.push(source),
            }
        }
        unmatched.extend(references.into_values());
    }
    if entries.is_empty() {
        return Err(Error::EmptyDataset(root.to_path_buf()));
    }
    entries.sort_by(|a, b| a.source.cmp(&b.source));
    unmatched.sort();
    Ok(PairManifest {
        root: root.to_path_buf(),
        entries,
        unmatched,
    })
}

impl PairManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// One `source<TAB>target<TAB>condition` line per entry.
    pub fn to_index(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{}\t{}\t{}\n", e.source.display(), e.target.display(), e.condition))
            .collect()
    }

    pub fn from_index(root: impl Into<PathBuf>, text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::param(format!(
                    "index line {} has {} fields, expected 3",
                    n + 1,
                    fields.len()
                )));
            }
            entries.push(PairEntry {
                source: fields[0].into(),
                target: fields[1].into(),
                condition: fields[2].parse()?,
            });
        }
        Ok(Self {
            root: root.into(),
            entries,
            unmatched: Vec::new(),
        })
    }
}

/// A decoded training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub name: String,
    pub condition: Condition,
    pub source: ImageBuffer,
    pub target: ImageBuffer,
}

/// Decodes every manifest entry, upscaling so both sides are at least
/// `min_side` pixels on the short side.
pub fn load_pairs(manifest: &PairManifest, min_side: usize) -> Result<Vec<TrainingPair>> {
    manifest
        .entries
        .iter()
        .map(|e| {
            let source = ImageBuffer::load(&e.source)?.ensure_min_side(min_side);
            let target = ImageBuffer::load(&e.target)?.ensure_min_side(min_side);
            if !source.same_shape(&target) {
                return Err(Error::data(
                    &e.target,
                    format!(
                        "reference is {}x{} but source {} is {}x{}",
                        target.height(),
                        target.width(),
                        e.source.display(),
                        source.height(),
                        source.width()
                    ),
                ));
            }
            Ok(TrainingPair {
                name: e.stem(),
                condition: e.condition,
                source,
                target,
            })
        })
        .collect()
}

/// Deterministic shuffled batches of indices, epoch after epoch. Each epoch
/// is a seed-determined permutation; the last short batch is kept.
#[derive(Debug, Clone)]
pub struct BatchStream {
    len: usize,
    batch_size: usize,
    seed: u64,
    step: u64,
}

impl BatchStream {
    pub fn new(len: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::param("batch_size must be at least 1"));
        }
        if len == 0 {
            return Err(Error::param("cannot batch an empty dataset"));
        }
        Ok(Self {
            len,
            batch_size,
            seed,
            step: 0,
        })
    }

    pub fn batches_per_epoch(&self) -> u64 {
        self.len.div_ceil(self.batch_size) as u64
    }

    pub fn epoch_order(&self, epoch: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len).collect();
        // Stream 0 is reserved for the trainer's own random state.
        let mut rng = RandomState::with_stream(self.seed, epoch + 1);
        order.shuffle(&mut rng);
        order
    }

    /// Indices of global batch number `step`.
    pub fn batch_at(&self, step: u64) -> Vec<usize> {
        let per = self.batches_per_epoch();
        let (epoch, k) = (step / per, (step % per) as usize);
        let order = self.epoch_order(epoch);
        let start = k * self.batch_size;
        order[start..(start + self.batch_size).min(self.len)].to_vec()
    }

    /// Positions the stream so the next batch is global batch `step`.
    pub fn seek(&mut self, step: u64) {
        self.step = step;
    }
}

impl Iterator for BatchStream {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let b = self.batch_at(self.step);
        self.step += 1;
        Some(b)
    }
}

/// [`BatchStream`] over a manifest.
pub fn batches(manifest: &PairManifest, batch_size: usize, seed: u64) -> Result<BatchStream> {
    BatchStream::new(manifest.len(), batch_size, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_png(path: &Path, value: f64) {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        ImageBuffer::filled(4, 5, 3, value).unwrap().save(path).unwrap();
    }

    fn fixture() -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        for cond in ["snow", "night"] {
            for stem in ["b", "a"] {
                write_png(&dir.path().join(cond).join("source").join(format!("{stem}.png")), 0.2);
                write_png(&dir.path().join(cond).join("reference").join(format!("{stem}.png")), 0.8);
            }
        }
        dir
    }

    #[test]
    fn scan_pairs_and_sorts() {
        let dir = fixture();
        let m = scan(dir.path()).unwrap();
        assert_eq!(m.len(), 4);
        let names: Vec<_> = m
            .entries
            .iter()
            .map(|e| format!("{}/{}", e.condition, e.stem()))
            .collect();
        assert_eq!(names, ["night/a", "night/b", "snow/a", "snow/b"]);
        assert!(m.unmatched.is_empty());
    }

    #[test]
    fn unmatched_files_are_reported() {
        let dir = fixture();
        let orphan = dir.path().join("snow/source/c.png");
        write_png(&orphan, 0.1);
        let m = scan(dir.path()).unwrap();
        assert_eq!(m.len(), 4);
        assert_eq!(m.unmatched, vec![orphan]);
    }

    #[test]
    fn empty_and_missing_roots() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(scan(dir.path()), Err(Error::EmptyDataset(_))));
        assert!(matches!(scan(dir.path().join("nope")), Err(Error::Io(_))));
    }

    #[test]
    fn index_round_trip() {
        let dir = fixture();
        let m = scan(dir.path()).unwrap();
        let text = m.to_index();
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().all(|l| l.split('\t').count() == 3));
        let back = PairManifest::from_index(dir.path(), &text).unwrap();
        assert_eq!(back.entries, m.entries);
    }

    #[test]
    fn loads_pairs() {
        let dir = fixture();
        let pairs = load_pairs(&scan(dir.path()).unwrap(), 8).unwrap();
        assert_eq!(pairs.len(), 4);
        assert_eq!(pairs[0].source.height(), 8);
        assert_eq!(pairs[0].source.width(), 10);
    }

    #[test]
    fn undecodable_file_is_named() {
        let dir = fixture();
        let bad = dir.path().join("snow/source/a.png");
        fs::write(&bad, b"not a png").unwrap();
        match load_pairs(&scan(dir.path()).unwrap(), 4) {
            Err(Error::Data { path, .. }) => assert_eq!(path, bad),
            other => panic!("expected data error, got {other:?}"),
        }
    }

    #[test]
    fn batch_sizes_keep_short_tail() {
        let s = BatchStream::new(5, 2, 1).unwrap();
        let sizes: Vec<_> = s.take(3).map(|b| b.len()).collect();
        assert_eq!(sizes, [2, 2, 1]);
    }

    #[test]
    fn same_seed_same_order() {
        let a = BatchStream::new(9, 4, 7).unwrap();
        let b = BatchStream::new(9, 4, 7).unwrap();
        assert_eq!(a.take(6).collect::<Vec<_>>(), b.take(6).collect::<Vec<_>>());
    }

    #[test]
    fn two_epochs_cover_each_entry_twice() {
        let s = BatchStream::new(7, 3, 3).unwrap();
        let mut counts = [0; 7];
        for b in s.take(6) {
            for i in b {
                counts[i] += 1;
            }
        }
        assert_eq!(counts, [2; 7]);
    }

    #[test]
    fn seek_matches_iteration() {
        let mut a = BatchStream::new(6, 4, 2).unwrap();
        let all: Vec<_> = a.clone().take(5).collect();
        a.seek(3);
        assert_eq!(a.next().unwrap(), all[3]);
        assert!(BatchStream::new(3, 0, 0).is_err());
    }
}
