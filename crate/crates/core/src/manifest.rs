//! JSON-lines dataset manifests and the image sources that resolve them.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{load_image, RgbImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub image_path: String,
    #[serde(default)]
    pub label: Option<String>,
    pub split: Split,
    /// Provenance of generated images: the id of the entry they were derived from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_index: Option<usize>,
    /// Id of the embedding donor, or `"sampled"` when the embedding was synthesized.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_source_id: Option<String>,
}

impl ManifestEntry {
    pub fn new(id: impl Into<String>, image_path: impl Into<String>, label: Option<String>, split: Split) -> Self {
        Self {
            id: id.into(),
            image_path: image_path.into(),
            label,
            split,
            source_id: None,
            sample_index: None,
            embedding_source_id: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::Validation(format!("duplicate manifest id {:?}", e.id)));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn filter_split(&self, split: Split) -> DatasetManifest {
        Self { entries: self.entries.iter().filter(|e| e.split == split).cloned().collect() }
    }

    /// Concatenation of two manifests; ids must stay unique.
    pub fn union(&self, other: &DatasetManifest) -> Result<DatasetManifest> {
        Self::new(self.entries.iter().chain(&other.entries).cloned().collect())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("entry serializes"));
            out.push('\n');
        }
        out
    }

    pub fn parse_jsonl(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: ManifestEntry =
                serde_json::from_str(line).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
            entries.push(entry);
        }
        Self::new(entries)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(self.to_jsonl().as_bytes())?;
        Ok(())
    }
}

/// Parses a JSON-lines manifest file.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Load { path: path.to_path_buf(), source })?;
    DatasetManifest::parse_jsonl(&text)
}

/// Anything that can produce the pixels for a manifest entry.
pub trait ImageSource: Send + Sync {
    fn load(&self, entry: &ManifestEntry) -> Result<RgbImage>;
}

/// Reads PNGs from disk; relative paths resolve against `root`.
#[derive(Debug, Clone)]
pub struct FileImageSource {
    root: PathBuf,
}

impl FileImageSource {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    /// Resolves paths relative to the directory containing `manifest_path`.
    pub fn for_manifest(manifest_path: impl AsRef<Path>) -> Self {
        let root = manifest_path.as_ref().parent().map(Path::to_path_buf).unwrap_or_default();
        Self { root }
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        let p = Path::new(&entry.image_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }
}

impl ImageSource for FileImageSource {
    fn load(&self, entry: &ManifestEntry) -> Result<RgbImage> {
        load_image(self.resolve(entry))
    }
}

/// Images held in memory, keyed by entry id.
#[derive(Debug, Clone, Default)]
pub struct MemoryImageSource {
    images: HashMap<String, RgbImage>,
}

impl MemoryImageSource {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, image: RgbImage) {
        self.images.insert(id.into(), image);
    }
}

impl FromIterator<(String, RgbImage)> for MemoryImageSource {
    fn from_iter<I: IntoIterator<Item = (String, RgbImage)>>(iter: I) -> Self {
        Self { images: iter.into_iter().collect() }
    }
}

impl ImageSource for MemoryImageSource {
    fn load(&self, entry: &ManifestEntry) -> Result<RgbImage> {
        self.images
            .get(&entry.id)
            .cloned()
            .ok_or_else(|| Error::Validation(format!("no image for entry {}", entry.id)))
    }
}

/// Wraps another source and records the id of every entry read through it.
pub struct LoggingImageSource<S> {
    inner: S,
    log: Mutex<Vec<String>>,
}

impl<S: ImageSource> LoggingImageSource<S> {
    pub fn new(inner: S) -> Self {
        Self { inner, log: Mutex::new(Vec::new()) }
    }

    /// Ids read so far, in access order.
    pub fn accessed(&self) -> Vec<String> {
        self.log.lock().expect("log lock").clone()
    }
}

impl<S: ImageSource> ImageSource for LoggingImageSource<S> {
    fn load(&self, entry: &ManifestEntry) -> Result<RgbImage> {
        self.log.lock().expect("log lock").push(entry.id.clone());
        self.inner.load(entry)
    }
}

/// Loads every image of `manifest`, resized to `resolution × resolution`.
pub fn load_all(source: &dyn ImageSource, manifest: &DatasetManifest, resolution: usize) -> Result<Vec<RgbImage>> {
    manifest.entries().iter().map(|e| Ok(source.load(e)?.resized(resolution, resolution))).collect()
}
