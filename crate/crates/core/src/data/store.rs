//! Content-addressed artifact store with a lineage index.
//!
//! Layout:
//!
//! ```text
//! <store>/
//!   lineage                      jsonl: one ArtifactRecord per line
//!   derivations                  jsonl: input-hash -> artifact id (stage cache)
//!   dataset/<id>/manifest + <split>/<sample>.png
//!   codec/<id>/params + codec.meta
//!   poisoned_set/<id>/...        same layout as dataset + poison.meta
//!   model/<id>/params + model.meta
//!   report/<id>/...
//! ```
//!
//! Ids are truncated SHA-256 digests of the artifact content, so re-running a
//! stage with identical inputs lands on the same directory and becomes a
//! cache hit. Writes go to a temp dir and are committed by a single rename.

use std::collections::HashMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Dataset, ImageShape, LabeledImageSet, Sample, Split};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Dataset,
    Codec,
    PoisonedSet,
    Model,
    Report,
}

impl ArtifactKind {
    pub fn dir_name(&self) -> &'static str {
        match self {
            ArtifactKind::Dataset => "dataset",
            ArtifactKind::Codec => "codec",
            ArtifactKind::PoisonedSet => "poisoned_set",
            ArtifactKind::Model => "model",
            ArtifactKind::Report => "report",
        }
    }
}

/// Lineage entry for one stored artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub artifact_id: String,
    pub kind: ArtifactKind,
    pub config_snapshot: serde_json::Value,
    pub parent_ids: Vec<String>,
}

/// SHA-256 over a sequence of byte chunks, truncated to 16 hex chars.
pub fn content_hash<'a>(chunks: impl IntoIterator<Item = &'a [u8]>) -> String {
    let mut hasher = Sha256::new();
    for c in chunks {
        hasher.update(c);
    }
    let digest = hasher.finalize();
    let mut s = String::with_capacity(16);
    for b in digest.iter().take(8) {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

pub struct ArtifactStore {
    root: PathBuf,
}

impl ArtifactStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(ArtifactStore { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn artifact_dir(&self, kind: ArtifactKind, id: &str) -> PathBuf {
        self.root.join(kind.dir_name()).join(id)
    }

    fn lineage_path(&self) -> PathBuf {
        self.root.join("lineage")
    }

    fn derivations_path(&self) -> PathBuf {
        self.root.join("derivations")
    }

    pub fn records(&self) -> Result<Vec<ArtifactRecord>> {
        let path = self.lineage_path();
        if !path.exists() {
            return Ok(Vec::new());
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            out.push(serde_json::from_str(line)?);
        }
        Ok(out)
    }

    pub fn record(&self, id: &str) -> Result<Option<ArtifactRecord>> {
        Ok(self.records()?.into_iter().find(|r| r.artifact_id == id))
    }

    pub fn contains(&self, id: &str) -> Result<bool> {
        Ok(self.record(id)?.is_some())
    }

    /// Register an artifact that already exists on disk. Parents must be
    /// registered first; re-registering the same id is a no-op returning the
    /// existing record.
    pub fn register(
        &self,
        kind: ArtifactKind,
        artifact_id: &str,
        config_snapshot: serde_json::Value,
        parent_ids: &[String],
    ) -> Result<ArtifactRecord> {
        if let Some(existing) = self.record(artifact_id)? {
            return Ok(existing);
        }
        for p in parent_ids {
            if !self.contains(p)? {
                return Err(Error::UnknownArtifact(p.clone()));
            }
        }
        let record = ArtifactRecord {
            artifact_id: artifact_id.to_string(),
            kind,
            config_snapshot,
            parent_ids: parent_ids.to_vec(),
        };
        let line = serde_json::to_string(&record)?;
        let path = self.lineage_path();
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        writeln!(f, "{line}").map_err(|e| Error::io(&path, e))?;
        Ok(record)
    }

    /// All ancestors of `id`, nearest first. Errors on unknown ids.
    pub fn lineage(&self, id: &str) -> Result<Vec<ArtifactRecord>> {
        let all: HashMap<String, ArtifactRecord> = self
            .records()?
            .into_iter()
            .map(|r| (r.artifact_id.clone(), r))
            .collect();
        let start = all
            .get(id)
            .ok_or_else(|| Error::UnknownArtifact(id.to_string()))?;
        let mut out = Vec::new();
        let mut queue: Vec<String> = start.parent_ids.clone();
        let mut seen = std::collections::HashSet::new();
        while let Some(pid) = queue.pop() {
            if !seen.insert(pid.clone()) {
                continue;
            }
            let rec = all
                .get(&pid)
                .ok_or_else(|| Error::UnknownArtifact(pid.clone()))?;
            queue.extend(rec.parent_ids.iter().cloned());
            out.push(rec.clone());
        }
        Ok(out)
    }

    /// Stage cache: map a derivation (inputs) hash to a produced artifact.
    pub fn lookup_derivation(&self, key: &str) -> Result<Option<String>> {
        let path = self.derivations_path();
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let entry: (String, String) = serde_json::from_str(line)?;
            if entry.0 == key {
                return Ok(Some(entry.1));
            }
        }
        Ok(None)
    }

    pub fn record_derivation(&self, key: &str, artifact_id: &str) -> Result<()> {
        if self.lookup_derivation(key)?.is_some() {
            return Ok(());
        }
        let path = self.derivations_path();
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        let line = serde_json::to_string(&(key, artifact_id))?;
        writeln!(f, "{line}").map_err(|e| Error::io(&path, e))?;
        Ok(())
    }

    /// Commit a fully-written temp dir as `<kind>/<id>`. Committing an id
    /// that already exists keeps the existing copy.
    pub fn commit_dir(&self, kind: ArtifactKind, id: &str, tmp: &Path) -> Result<PathBuf> {
        let final_dir = self.artifact_dir(kind, id);
        if final_dir.exists() {
            fs::remove_dir_all(tmp).ok();
            return Ok(final_dir);
        }
        let parent = final_dir.parent().expect("artifact dir parent");
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        fs::rename(tmp, &final_dir).map_err(|e| Error::io(&final_dir, e))?;
        Ok(final_dir)
    }

    /// Fresh temp dir inside the store (same filesystem as the final home).
    pub fn scratch_dir(&self, tag: &str) -> Result<PathBuf> {
        let dir = self.root.join("tmp").join(format!(
            "{tag}-{}-{}",
            std::process::id(),
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_nanos())
                .unwrap_or(0)
        ));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir)
    }

    // ---- dataset artifacts ------------------------------------------------

    /// Store a dataset (both splits) and register it. Content-hash id, so
    /// storing the same data twice returns the same artifact.
    pub fn put_dataset(
        &self,
        ds: &Dataset,
        config_snapshot: serde_json::Value,
        parents: &[String],
        kind: ArtifactKind,
    ) -> Result<ArtifactRecord> {
        ds.validate()?;
        let manifest = DatasetManifest::of(ds);
        let manifest_bytes = serde_json::to_vec_pretty(&manifest)?;

        let mut chunks: Vec<&[u8]> = vec![kind.dir_name().as_bytes(), &manifest_bytes];
        let pixel_bufs: Vec<&[u8]> = ds
            .train
            .samples
            .iter()
            .chain(ds.test.samples.iter())
            .map(|s| s.pixels.as_slice().expect("contiguous pixels"))
            .collect();
        chunks.extend(pixel_bufs);
        let id = content_hash(chunks);

        let final_dir = self.artifact_dir(kind, &id);
        if !final_dir.exists() {
            let tmp = self.scratch_dir(kind.dir_name())?;
            fs::write(tmp.join("manifest"), &manifest_bytes)
                .map_err(|e| Error::io(tmp.join("manifest"), e))?;
            for split in [&ds.train, &ds.test] {
                let split_dir = tmp.join(split.split.to_string());
                fs::create_dir_all(&split_dir).map_err(|e| Error::io(&split_dir, e))?;
                split
                    .samples
                    .par_iter()
                    .try_for_each(|s| -> Result<()> {
                        let path = split_dir.join(format!("{}.png", s.id));
                        encode_png(&s.pixels, &path)
                    })?;
            }
            self.commit_dir(kind, &id, &tmp)?;
        }
        self.register(kind, &id, config_snapshot, parents)
    }

    /// Load a dataset artifact of the given kind (`Dataset` or `PoisonedSet`).
    pub fn get_dataset(&self, kind: ArtifactKind, id: &str) -> Result<Dataset> {
        let dir = self.artifact_dir(kind, id);
        let manifest_path = dir.join("manifest");
        let text =
            fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: DatasetManifest = serde_json::from_str(&text)?;

        let load_split = |split: Split, entries: &[ManifestSample]| -> Result<LabeledImageSet> {
            let samples: Vec<Sample> = entries
                .par_iter()
                .map(|e| -> Result<Sample> {
                    let path = dir.join(&e.path);
                    let pixels = decode_png(&path, manifest.shape)?;
                    Ok(Sample {
                        id: e.id.clone(),
                        label: e.label,
                        pixels,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let set = LabeledImageSet {
                name: manifest.name.clone(),
                k: manifest.k,
                split,
                shape: manifest.shape,
                samples,
            };
            set.validate()?;
            Ok(set)
        };

        let train = load_split(Split::Train, &manifest.train)?;
        let test = load_split(Split::Test, &manifest.test)?;
        Ok(Dataset {
            name: manifest.name,
            k: manifest.k,
            shape: manifest.shape,
            train,
            test,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestSample {
    id: String,
    label: u32,
    path: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetManifest {
    name: String,
    k: usize,
    shape: ImageShape,
    n_train: usize,
    n_test: usize,
    train: Vec<ManifestSample>,
    test: Vec<ManifestSample>,
}

impl DatasetManifest {
    fn of(ds: &Dataset) -> Self {
        let entry = |s: &Sample, split: Split| ManifestSample {
            id: s.id.clone(),
            label: s.label,
            path: format!("{split}/{}.png", s.id),
        };
        DatasetManifest {
            name: ds.name.clone(),
            k: ds.k,
            shape: ds.shape,
            n_train: ds.train.n(),
            n_test: ds.test.n(),
            train: ds
                .train
                .samples
                .iter()
                .map(|s| entry(s, Split::Train))
                .collect(),
            test: ds
                .test
                .samples
                .iter()
                .map(|s| entry(s, Split::Test))
                .collect(),
        }
    }
}

/// Write `[C,H,W]` pixels as a lossless PNG (rgb8 or luma8).
pub(crate) fn encode_png(pixels: &Array3<u8>, path: &Path) -> Result<()> {
    let (c, h, w) = pixels.dim();
    let img_err = |e: image::ImageError| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    match c {
        1 => {
            let mut img = image::GrayImage::new(w as u32, h as u32);
            for y in 0..h {
                for x in 0..w {
                    img.put_pixel(x as u32, y as u32, image::Luma([pixels[[0, y, x]]]));
                }
            }
            img.save(path).map_err(img_err)
        }
        3 => {
            let mut img = image::RgbImage::new(w as u32, h as u32);
            for y in 0..h {
                for x in 0..w {
                    img.put_pixel(
                        x as u32,
                        y as u32,
                        image::Rgb([pixels[[0, y, x]], pixels[[1, y, x]], pixels[[2, y, x]]]),
                    );
                }
            }
            img.save(path).map_err(img_err)
        }
        other => Err(Error::Dataset(format!(
            "unsupported channel count {other} for PNG output"
        ))),
    }
}

/// Read a PNG back into `[C,H,W]` pixels with the expected shape.
pub(crate) fn decode_png(path: &Path, shape: ImageShape) -> Result<Array3<u8>> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if (w, h) != (shape.w, shape.h) {
        return Err(Error::Dataset(format!(
            "{}: stored image is {}x{}, manifest says {}x{}",
            path.display(),
            w,
            h,
            shape.w,
            shape.h
        )));
    }
    let mut out = Array3::<u8>::zeros((shape.c, shape.h, shape.w));
    match shape.c {
        1 => {
            let g = img.to_luma8();
            for y in 0..h {
                for x in 0..w {
                    out[[0, y, x]] = g.get_pixel(x as u32, y as u32).0[0];
                }
            }
        }
        3 => {
            let rgb = img.to_rgb8();
            for y in 0..h {
                for x in 0..w {
                    let p = rgb.get_pixel(x as u32, y as u32).0;
                    out[[0, y, x]] = p[0];
                    out[[1, y, x]] = p[1];
                    out[[2, y, x]] = p[2];
                }
            }
        }
        other => {
            return Err(Error::Dataset(format!(
                "unsupported channel count {other} in manifest"
            )))
        }
    }
    Ok(out)
}
