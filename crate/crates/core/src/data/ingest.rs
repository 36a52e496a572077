//! Ingest class-per-subfolder trees or index files into the artifact store.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ArtifactKind, ArtifactRecord, ArtifactStore, Dataset, ImageShape, LabeledImageSet, Sample, Split};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestConfig {
    pub name: String,
    /// All images are resized (bilinear) to this shape and stored losslessly.
    pub shape: ImageShape,
    /// Abort when more than this fraction of files fail to decode.
    pub max_failure_fraction: f64,
}

impl IngestConfig {
    pub fn new(name: impl Into<String>) -> Self {
        IngestConfig {
            name: name.into(),
            shape: ImageShape::new(3, 32, 32),
            max_failure_fraction: 0.01,
        }
    }
}

#[derive(Debug)]
pub struct IngestOutcome {
    pub dataset: Dataset,
    pub record: ArtifactRecord,
    /// Files skipped because they failed to decode (within tolerance).
    pub failures: Vec<(PathBuf, String)>,
}

struct PendingFile {
    path: PathBuf,
    rel: String,
    label: u32,
    split: Split,
}

/// Ingest `source` into the store.
///
/// Accepted layouts, in order of detection:
/// 1. `index.tsv` at the root: `relative-path<TAB>label[<TAB>split]`.
/// 2. `train/<class>/...` (+ optional `test/<class>/...`).
/// 3. `<class>/...` — everything becomes the train split.
pub fn ingest_directory(
    store: &ArtifactStore,
    source: &Path,
    config: &IngestConfig,
) -> Result<IngestOutcome> {
    let (files, k) = plan_files(source)?;
    if files.is_empty() {
        return Err(Error::Dataset(format!(
            "{}: no image files found",
            source.display()
        )));
    }

    let decoded: Vec<std::result::Result<(usize, Array3<u8>), (PathBuf, String)>> = files
        .par_iter()
        .enumerate()
        .map(|(i, f)| {
            decode_resize(&f.path, config.shape).map(|px| (i, px)).map_err(|e| {
                (f.path.clone(), e.to_string())
            })
        })
        .collect();

    let mut failures = Vec::new();
    let mut ok: Vec<(usize, Array3<u8>)> = Vec::new();
    for d in decoded {
        match d {
            Ok(v) => ok.push(v),
            Err(f) => failures.push(f),
        }
    }
    let total = files.len();
    if (failures.len() as f64) > config.max_failure_fraction * total as f64 {
        let examples = failures
            .iter()
            .take(5)
            .map(|(p, m)| format!("{}: {m}", p.display()))
            .collect::<Vec<_>>()
            .join("; ");
        return Err(Error::IngestFailures {
            failed: failures.len(),
            total,
            examples,
        });
    }

    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, pixels) in ok {
        let f = &files[i];
        let sample = Sample {
            id: f.rel.clone(),
            label: f.label,
            pixels,
        };
        match f.split {
            Split::Train => train.push(sample),
            Split::Test => test.push(sample),
        }
    }

    // Every class must appear in the training split.
    let mut class_counts = vec![0usize; k];
    for s in &train {
        class_counts[s.label as usize] += 1;
    }
    if let Some(empty) = class_counts.iter().position(|&c| c == 0) {
        return Err(Error::Dataset(format!(
            "{}: class {empty} has no training images",
            source.display()
        )));
    }

    let dataset = Dataset {
        name: config.name.clone(),
        k,
        shape: config.shape,
        train: LabeledImageSet {
            name: config.name.clone(),
            k,
            split: Split::Train,
            shape: config.shape,
            samples: train,
        },
        test: LabeledImageSet {
            name: config.name.clone(),
            k,
            split: Split::Test,
            shape: config.shape,
            samples: test,
        },
    };
    let record = store.put_dataset(
        &dataset,
        serde_json::to_value(config)?,
        &[],
        ArtifactKind::Dataset,
    )?;
    Ok(IngestOutcome {
        dataset,
        record,
        failures,
    })
}

fn plan_files(source: &Path) -> Result<(Vec<PendingFile>, usize)> {
    let index = source.join("index.tsv");
    if index.exists() {
        return plan_from_index(source, &index);
    }
    let has_train = source.join("train").is_dir();
    let mut files = Vec::new();
    let mut classes: BTreeMap<String, u32> = BTreeMap::new();

    let mut scan_split = |split_dir: &Path, split: Split, files: &mut Vec<PendingFile>| -> Result<()> {
        let mut class_dirs: Vec<PathBuf> = read_dir_sorted(split_dir)?
            .into_iter()
            .filter(|p| p.is_dir())
            .collect();
        class_dirs.sort();
        for class_dir in &class_dirs {
            let class_name = class_dir
                .file_name()
                .and_then(|n| n.to_str())
                .unwrap_or_default()
                .to_string();
            let next = classes.len() as u32;
            let label = *classes.entry(class_name.clone()).or_insert(next);
            for path in read_dir_sorted(class_dir)? {
                if path.is_file() {
                    let rel = format!(
                        "{split}_{class_name}_{}",
                        path.file_stem().and_then(|s| s.to_str()).unwrap_or("img")
                    );
                    files.push(PendingFile {
                        path,
                        rel,
                        label,
                        split,
                    });
                }
            }
        }
        Ok(())
    };

    if has_train {
        scan_split(&source.join("train"), Split::Train, &mut files)?;
        let test_dir = source.join("test");
        if test_dir.is_dir() {
            scan_split(&test_dir, Split::Test, &mut files)?;
        }
    } else {
        scan_split(source, Split::Train, &mut files)?;
    }
    let k = classes.len();
    if k < 2 {
        return Err(Error::Dataset(format!(
            "{}: found {k} classes, need at least 2",
            source.display()
        )));
    }
    Ok((files, k))
}

fn plan_from_index(source: &Path, index: &Path) -> Result<(Vec<PendingFile>, usize)> {
    let text = fs::read_to_string(index).map_err(|e| Error::io(index, e))?;
    let mut files = Vec::new();
    let mut max_label = 0u32;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split('\t');
        let rel = parts.next().unwrap_or_default();
        let label: u32 = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| {
                Error::Dataset(format!("{}:{}: bad label", index.display(), lineno + 1))
            })?;
        let split = match parts.next().unwrap_or("train") {
            "train" => Split::Train,
            "test" => Split::Test,
            other => {
                return Err(Error::Dataset(format!(
                    "{}:{}: unknown split `{other}`",
                    index.display(),
                    lineno + 1
                )))
            }
        };
        max_label = max_label.max(label);
        files.push(PendingFile {
            path: source.join(rel),
            rel: rel.replace(['/', '\\'], "_"),
            label,
            split,
        });
    }
    Ok((files, max_label as usize + 1))
}

fn read_dir_sorted(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    out.sort();
    Ok(out)
}

fn decode_resize(path: &Path, shape: ImageShape) -> Result<Array3<u8>> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let resized = if img.width() as usize != shape.w || img.height() as usize != shape.h {
        img.resize_exact(
            shape.w as u32,
            shape.h as u32,
            image::imageops::FilterType::Triangle,
        )
    } else {
        img
    };
    let mut out = Array3::<u8>::zeros((shape.c, shape.h, shape.w));
    match shape.c {
        1 => {
            let g = resized.to_luma8();
            for y in 0..shape.h {
                for x in 0..shape.w {
                    out[[0, y, x]] = g.get_pixel(x as u32, y as u32).0[0];
                }
            }
        }
        3 => {
            let rgb = resized.to_rgb8();
            for y in 0..shape.h {
                for x in 0..shape.w {
                    let p = rgb.get_pixel(x as u32, y as u32).0;
                    out[[0, y, x]] = p[0];
                    out[[1, y, x]] = p[1];
                    out[[2, y, x]] = p[2];
                }
            }
        }
        other => {
            return Err(Error::Dataset(format!(
                "unsupported target channel count {other}"
            )))
        }
    }
    Ok(out)
}
