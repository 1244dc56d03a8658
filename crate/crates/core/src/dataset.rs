//! On-disk embedding cohorts and slide-level primitives.
//!
//! A dataset is a JSON manifest next to one binary file per slide. Each
//! binary file holds a single row-major `f32` matrix:
//!
//! ```text
//! offset  size          field
//! 0       8             magic "EVOPSEMB"
//! 8       4             rows (u32 LE)
//! 12      4             dim  (u32 LE)
//! 16      rows*dim*4    values (f32 LE, row-major)
//! ```

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const EMBEDDING_MAGIC: &[u8; 8] = b"EVOPSEMB";
pub const MANIFEST_FILE: &str = "manifest.json";
const HEADER_LEN: usize = 16;

/// Row-major matrix of patch embeddings for one slide.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    values: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, dim: usize, values: Vec<f32>) -> Result<Self> {
        if rows == 0 || dim == 0 {
            return Err(Error::Validation(format!(
                "embedding matrix must be non-empty, got {rows}x{dim}"
            )));
        }
        if values.len() != rows * dim {
            return Err(Error::Validation(format!(
                "embedding matrix {rows}x{dim} needs {} values, got {}",
                rows * dim,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite value at row {}, column {}",
                pos / dim,
                pos % dim
            )));
        }
        Ok(Self { rows, dim, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, index: usize) -> &[f32] {
        &self.values[index * self.dim..(index + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> + '_ {
        self.values.chunks_exact(self.dim)
    }

    /// Serializes the matrix in the `EVOPSEMB` layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.values.len() * 4);
        out.extend_from_slice(EMBEDDING_MAGIC);
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }
}

/// Header and payload of an embedding file, before dataset-level validation.
#[derive(Debug, Clone, PartialEq)]
pub struct RawEmbeddings {
    pub rows: usize,
    pub dim: usize,
    pub values: Vec<f32>,
}

/// Parses an `EVOPSEMB` buffer. Only framing is checked here; shape and
/// finiteness are validated against the manifest by the loader.
pub fn parse_embeddings(bytes: &[u8]) -> std::result::Result<RawEmbeddings, String> {
    if bytes.len() < HEADER_LEN {
        return Err(format!(
            "file is {} bytes, shorter than the header",
            bytes.len()
        ));
    }
    if &bytes[..8] != EMBEDDING_MAGIC {
        return Err("bad magic, expected EVOPSEMB".to_string());
    }
    let rows = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let expected = rows
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| format!("header {rows}x{dim} overflows"))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() < expected {
        return Err(format!(
            "truncated payload: header {rows}x{dim} needs {expected} bytes, found {}",
            payload.len()
        ));
    }
    if payload.len() > expected {
        return Err(format!(
            "{} trailing bytes after {rows}x{dim} payload",
            payload.len() - expected
        ));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(RawEmbeddings { rows, dim, values })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlideRecord {
    pub slide_id: String,
    pub label: String,
    pub split: Split,
    pub embeddings: EmbeddingMatrix,
}

impl SlideRecord {
    pub fn patch_count(&self) -> usize {
        self.embeddings.rows()
    }
}

/// A validated cohort. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    classes: Vec<String>,
    train: Vec<SlideRecord>,
    validation: Vec<SlideRecord>,
    test: Vec<SlideRecord>,
    dim: usize,
    normalization: String,
}

impl SplitDataset {
    /// Validates the slides and groups them by split, preserving input order
    /// within each split. Classes are the sorted set of labels.
    pub fn new(slides: Vec<SlideRecord>, normalization: impl Into<String>) -> Result<Self> {
        let first = slides
            .first()
            .ok_or_else(|| Error::Validation("dataset has no slides".into()))?;
        let dim = first.embeddings.dim();
        let mut seen = HashSet::new();
        for slide in &slides {
            if !seen.insert(slide.slide_id.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate slide_id `{}`",
                    slide.slide_id
                )));
            }
            if slide.embeddings.dim() != dim {
                return Err(Error::Validation(format!(
                    "slide `{}` has dim {}, dataset dim is {dim}",
                    slide.slide_id,
                    slide.embeddings.dim()
                )));
            }
        }
        let mut classes: Vec<String> = slides.iter().map(|s| s.label.clone()).collect();
        classes.sort();
        classes.dedup();

        let mut train = Vec::new();
        let mut validation = Vec::new();
        let mut test = Vec::new();
        for slide in slides {
            match slide.split {
                Split::Train => train.push(slide),
                Split::Validation => validation.push(slide),
                Split::Test => test.push(slide),
            }
        }
        Ok(Self {
            classes,
            train,
            validation,
            test,
            dim,
            normalization: normalization.into(),
        })
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.classes
            .binary_search_by(|c| c.as_str().cmp(label))
            .ok()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn normalization(&self) -> &str {
        &self.normalization
    }

    pub fn train(&self) -> &[SlideRecord] {
        &self.train
    }

    pub fn validation(&self) -> &[SlideRecord] {
        &self.validation
    }

    pub fn test(&self) -> &[SlideRecord] {
        &self.test
    }

    pub fn split(&self, split: Split) -> &[SlideRecord] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    /// All slides in train, validation, test order.
    pub fn slides(&self) -> impl Iterator<Item = &SlideRecord> + '_ {
        self.train.iter().chain(&self.validation).chain(&self.test)
    }

    pub fn total_train_patches(&self) -> usize {
        self.train.iter().map(SlideRecord::patch_count).sum()
    }

    /// Optimization needs every split populated.
    pub fn ensure_runnable(&self) -> Result<()> {
        for split in Split::ALL {
            if self.split(split).is_empty() {
                return Err(Error::Validation(format!("{split} split is empty")));
            }
        }
        Ok(())
    }

    /// SHA-256 over every slide's identity, label, split and raw values.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.dim as u64).to_le_bytes());
        for slide in self.slides() {
            for field in [slide.slide_id.as_str(), slide.label.as_str()] {
                hasher.update((field.len() as u64).to_le_bytes());
                hasher.update(field.as_bytes());
            }
            hasher.update([slide.split as u8]);
            hasher.update((slide.embeddings.rows() as u64).to_le_bytes());
            for v in slide.embeddings.values() {
                hasher.update(v.to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dim: usize,
    #[serde(default = "default_normalization")]
    pub normalization: String,
    pub slides: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub slide_id: String,
    pub label: String,
    pub split: Split,
    /// Relative to the manifest's directory.
    pub path: PathBuf,
    pub rows: usize,
}

fn default_normalization() -> String {
    "raw".to_string()
}

/// Accepts either the manifest file itself or the directory holding
/// `manifest.json`.
pub fn resolve_manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<SplitDataset> {
    let manifest_path = resolve_manifest_path(path.as_ref());
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::ManifestParse {
        path: manifest_path.clone(),
        message: e.to_string(),
    })?;
    if manifest.dim == 0 {
        return Err(Error::Validation("manifest dim must be at least 1".into()));
    }
    let mut ids = HashSet::new();
    for entry in &manifest.slides {
        if !ids.insert(entry.slide_id.as_str()) {
            return Err(Error::Validation(format!(
                "duplicate slide_id `{}`",
                entry.slide_id
            )));
        }
    }
    let base = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();

    let slides = manifest
        .slides
        .par_iter()
        .map(|entry| load_slide(&base, manifest.dim, entry))
        .collect::<Result<Vec<_>>>()?;
    SplitDataset::new(slides, manifest.normalization)
}

fn load_slide(base: &Path, dim: usize, entry: &ManifestEntry) -> Result<SlideRecord> {
    let path = base.join(&entry.path);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let raw = parse_embeddings(&bytes).map_err(|reason| Error::EmbeddingFormat {
        path: path.clone(),
        reason,
    })?;
    let id = &entry.slide_id;
    if raw.dim != dim {
        return Err(Error::Validation(format!(
            "slide `{id}` declares dim {}, dataset dim is {dim}",
            raw.dim
        )));
    }
    if raw.rows == 0 {
        return Err(Error::Validation(format!("slide `{id}` has no patches")));
    }
    if raw.rows != entry.rows {
        return Err(Error::Validation(format!(
            "slide `{id}` has {} rows on disk, manifest says {}",
            raw.rows, entry.rows
        )));
    }
    let embeddings = EmbeddingMatrix::new(raw.rows, raw.dim, raw.values)
        .map_err(|e| Error::Validation(format!("slide `{id}`: {e}")))?;
    Ok(SlideRecord {
        slide_id: entry.slide_id.clone(),
        label: entry.label.clone(),
        split: entry.split,
        embeddings,
    })
}

fn file_stem_for(index: usize, slide_id: &str) -> String {
    let safe: String = slide_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{index:05}_{safe}.emb")
}

/// Writes `manifest.json` and `embeddings/*.emb` under `dir`.
pub fn write_dataset(dataset: &SplitDataset, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let emb_dir = dir.join("embeddings");
    fs::create_dir_all(&emb_dir).map_err(|e| Error::io(&emb_dir, e))?;
    let mut entries = Vec::new();
    for (index, slide) in dataset.slides().enumerate() {
        let rel = PathBuf::from("embeddings").join(file_stem_for(index, &slide.slide_id));
        let path = dir.join(&rel);
        fs::write(&path, slide.embeddings.to_bytes()).map_err(|e| Error::io(&path, e))?;
        entries.push(ManifestEntry {
            slide_id: slide.slide_id.clone(),
            label: slide.label.clone(),
            split: slide.split,
            path: rel,
            rows: slide.patch_count(),
        });
    }
    let manifest = Manifest {
        dim: dataset.dim(),
        normalization: dataset.normalization().to_string(),
        slides: entries,
    };
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub slide_index: usize,
    pub offset: usize,
    pub len: usize,
}

impl Segment {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

/// Maps genome bit positions onto (training slide, patch row) pairs. Each
/// training slide owns one contiguous segment, in training-slide order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenomeLayout {
    total: usize,
    segments: Vec<Segment>,
}

impl GenomeLayout {
    /// Builds a layout directly from per-slide patch counts.
    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::Validation("training split is empty".into()));
        }
        let mut offset = 0;
        let mut segments = Vec::with_capacity(counts.len());
        for (slide_index, &len) in counts.iter().enumerate() {
            if len == 0 {
                return Err(Error::Validation(format!(
                    "training slide {slide_index} has no patches"
                )));
            }
            segments.push(Segment {
                slide_index,
                offset,
                len,
            });
            offset += len;
        }
        Ok(Self {
            total: offset,
            segments,
        })
    }

    pub fn total_patches(&self) -> usize {
        self.total
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn slide_count(&self) -> usize {
        self.segments.len()
    }

    /// Returns `(slide_index, patch_row)` for a genome position.
    pub fn locate(&self, position: usize) -> Option<(usize, usize)> {
        if position >= self.total {
            return None;
        }
        let idx = self
            .segments
            .partition_point(|s| s.offset + s.len <= position);
        let seg = &self.segments[idx];
        Some((seg.slide_index, position - seg.offset))
    }
}

pub fn build_layout(train: &[SlideRecord]) -> Result<GenomeLayout> {
    let counts: Vec<usize> = train.iter().map(SlideRecord::patch_count).collect();
    GenomeLayout::from_counts(&counts)
}

/// Component-wise mean over every patch row, accumulated in `f64`.
pub fn slide_mean_all(slide: &SlideRecord) -> Vec<f64> {
    let m = &slide.embeddings;
    let mut acc = vec![0.0f64; m.dim()];
    for row in m.iter_rows() {
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += f64::from(v);
        }
    }
    let n = m.rows() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slide(id: &str, label: &str, split: Split, rows: usize, dim: usize) -> SlideRecord {
        let values = (0..rows * dim).map(|i| i as f32 * 0.5).collect();
        SlideRecord {
            slide_id: id.into(),
            label: label.into(),
            split,
            embeddings: EmbeddingMatrix::new(rows, dim, values).unwrap(),
        }
    }

    fn write_raw(dir: &Path, name: &str, rows: u32, dim: u32, values: &[f32]) {
        let mut bytes = EMBEDDING_MAGIC.to_vec();
        bytes.extend_from_slice(&rows.to_le_bytes());
        bytes.extend_from_slice(&dim.to_le_bytes());
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(dir.join(name), bytes).unwrap();
    }

    fn write_manifest(dir: &Path, json: serde_json::Value) {
        fs::write(dir.join(MANIFEST_FILE), json.to_string()).unwrap();
    }

    #[test]
    fn loads_minimal_manifest() {
        let dir = tempfile::tempdir().unwrap();
        write_raw(dir.path(), "a.emb", 2, 4, &[1.0; 8]);
        write_raw(dir.path(), "b.emb", 1, 4, &[2.0; 4]);
        write_raw(dir.path(), "c.emb", 3, 4, &[3.0; 12]);
        write_manifest(
            dir.path(),
            serde_json::json!({
                "dim": 4,
                "slides": [
                    {"slide_id": "a", "label": "luad", "split": "train", "path": "a.emb", "rows": 2},
                    {"slide_id": "b", "label": "lusc", "split": "train", "path": "b.emb", "rows": 1},
                    {"slide_id": "c", "label": "luad", "split": "validation", "path": "c.emb", "rows": 3}
                ]
            }),
        );
        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.classes(), ["luad", "lusc"]);
        assert_eq!(ds.train().len(), 2);
        assert_eq!(ds.validation().len(), 1);
        assert!(ds.test().is_empty());
        assert_eq!(ds.dim(), 4);
        assert_eq!(ds.normalization(), "raw");
        assert!(ds.ensure_runnable().is_err());
    }

    #[test]
    fn rejects_dim_mismatch_naming_slide() {
        let dir = tempfile::tempdir().unwrap();
        write_raw(dir.path(), "a.emb", 1, 4, &[0.0; 4]);
        write_raw(dir.path(), "wide.emb", 1, 8, &[0.0; 8]);
        write_manifest(
            dir.path(),
            serde_json::json!({
                "dim": 4,
                "slides": [
                    {"slide_id": "a", "label": "x", "split": "train", "path": "a.emb", "rows": 1},
                    {"slide_id": "wide-one", "label": "y", "split": "train", "path": "wide.emb", "rows": 1}
                ]
            }),
        );
        match load_dataset(dir.path()) {
            Err(Error::Validation(msg)) => assert!(msg.contains("wide-one"), "{msg}"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_empty_slide_nonfinite_and_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        write_raw(dir.path(), "empty.emb", 0, 2, &[]);
        write_raw(dir.path(), "nan.emb", 1, 2, &[1.0, f32::NAN]);
        write_raw(dir.path(), "ok.emb", 1, 2, &[1.0, 2.0]);

        let entry = |id: &str, path: &str, rows: usize| serde_json::json!({"slide_id": id, "label": "x", "split": "train", "path": path, "rows": rows});
        write_manifest(
            dir.path(),
            serde_json::json!({"dim": 2, "slides": [entry("e", "empty.emb", 0)]}),
        );
        assert!(matches!(load_dataset(dir.path()), Err(Error::Validation(m)) if m.contains("`e`")));

        write_manifest(
            dir.path(),
            serde_json::json!({"dim": 2, "slides": [entry("n", "nan.emb", 1)]}),
        );
        assert!(matches!(load_dataset(dir.path()), Err(Error::Validation(m)) if m.contains("`n`")));

        write_manifest(
            dir.path(),
            serde_json::json!({"dim": 2, "slides": [entry("d", "ok.emb", 1), entry("d", "ok.emb", 1)]}),
        );
        assert!(
            matches!(load_dataset(dir.path()), Err(Error::Validation(m)) if m.contains("duplicate"))
        );
    }

    #[test]
    fn rejects_bad_framing() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("bad.emb"),
            b"NOTMAGIC\x01\0\0\0\x01\0\0\0\0\0\0\0",
        )
        .unwrap();
        let mut truncated = EMBEDDING_MAGIC.to_vec();
        truncated.extend_from_slice(&2u32.to_le_bytes());
        truncated.extend_from_slice(&2u32.to_le_bytes());
        truncated.extend_from_slice(&[0u8; 12]);
        fs::write(dir.path().join("short.emb"), truncated).unwrap();

        for file in ["bad.emb", "short.emb"] {
            write_manifest(
                dir.path(),
                serde_json::json!({"dim": 2, "slides": [
                    {"slide_id": "s", "label": "x", "split": "train", "path": file, "rows": 2}
                ]}),
            );
            assert!(matches!(
                load_dataset(dir.path()),
                Err(Error::EmbeddingFormat { .. })
            ));
        }
    }

    #[test]
    fn missing_or_malformed_manifest() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Io { .. })));
        fs::write(dir.path().join(MANIFEST_FILE), "{not json").unwrap();
        assert!(matches!(
            load_dataset(dir.path()),
            Err(Error::ManifestParse { .. })
        ));
    }

    #[test]
    fn write_then_load_is_exact() {
        let slides = vec![
            slide("t/1", "b", Split::Train, 3, 2),
            slide("t 2", "a", Split::Train, 1, 2),
            slide("v1", "a", Split::Validation, 2, 2),
            slide("x1", "b", Split::Test, 4, 2),
        ];
        let ds = SplitDataset::new(slides, "raw").unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.fingerprint(), ds.fingerprint());
    }

    #[test]
    fn layout_offsets_are_cumulative() {
        let layout = GenomeLayout::from_counts(&[5, 3, 4]).unwrap();
        assert_eq!(layout.total_patches(), 12);
        let offsets: Vec<_> = layout.segments().iter().map(|s| s.offset).collect();
        assert_eq!(offsets, [0, 5, 8]);
        assert_eq!(layout.locate(0), Some((0, 0)));
        assert_eq!(layout.locate(5), Some((1, 0)));
        assert_eq!(layout.locate(11), Some((2, 3)));
        assert_eq!(layout.locate(12), None);

        let single = GenomeLayout::from_counts(&[1]).unwrap();
        assert_eq!(single.total_patches(), 1);
        assert_eq!(
            single.segments(),
            [Segment {
                slide_index: 0,
                offset: 0,
                len: 1
            }]
        );
    }

    #[test]
    fn mean_of_rows() {
        let s = SlideRecord {
            slide_id: "s".into(),
            label: "a".into(),
            split: Split::Validation,
            embeddings: EmbeddingMatrix::new(2, 2, vec![1.0, 1.0, 3.0, 3.0]).unwrap(),
        };
        assert_eq!(slide_mean_all(&s), [2.0, 2.0]);

        let one = slide("o", "a", Split::Test, 1, 3);
        assert_eq!(slide_mean_all(&one), [0.0, 0.5, 1.0]);
    }
}
