//! Corpus curation: random square slicing, perceptual-hash deduplication and
//! the tab-separated manifest.

mod dedup;
mod manifest;

pub use dedup::{all_pairs_within, candidate_pairs, dedup, DedupConfig};
pub use manifest::{format_record, parse_record, read_manifest, write_manifest, ManifestRecord, RecordStatus};

use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imaging::{self, phash64, CropBox, Image, ImageFormat, PerceptualHash};
use crate::keyed;

#[derive(Debug, Clone, PartialEq)]
pub struct SliceConfig {
    pub min_size: usize,
    pub max_size: usize,
    pub crops_per_image: usize,
    pub seed: u64,
}

impl Default for SliceConfig {
    fn default() -> Self {
        Self { min_size: 64, max_size: 1024, crops_per_image: 4, seed: 0 }
    }
}

impl SliceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_size == 0 || self.min_size > self.max_size {
            return Err(Error::Config(format!(
                "slice sizes need 0 < min_size={} <= max_size={}",
                self.min_size, self.max_size
            )));
        }
        if self.crops_per_image == 0 {
            return Err(Error::Config("crops_per_image must be at least 1".into()));
        }
        Ok(())
    }
}

/// `count` square boxes with side uniform on `[min, min(max, W, H)]` and
/// uniform offsets; `None` when the image is smaller than `min`.
pub fn slice_boxes(width: usize, height: usize, seed: u64, min: usize, max: usize, count: usize) -> Option<Vec<CropBox>> {
    let limit = max.min(width).min(height);
    if limit < min || min == 0 {
        return None;
    }
    let mut rng = keyed::stream(seed);
    Some(
        (0..count)
            .map(|_| {
                let side = rng.random_range(min..=limit);
                let x = rng.random_range(0..=width - side);
                let y = rng.random_range(0..=height - side);
                CropBox { x, y, width: side, height: side }
            })
            .collect(),
    )
}

/// Random square slices of `img`; `None` when it is smaller than `min`.
pub fn slice_image(img: &Image, seed: u64, min: usize, max: usize, count: usize) -> Option<Vec<Image>> {
    slice_boxes(img.width(), img.height(), seed, min, max, count).map(|boxes| {
        boxes
            .into_iter()
            .map(|b| img.crop(b.x, b.y, b.width, b.height).expect("box inside image"))
            .collect()
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CurationSummary {
    pub files: usize,
    pub records: usize,
    pub kept: usize,
    pub duplicates: usize,
    pub review: usize,
    pub excluded: usize,
    /// Pixels over kept records.
    pub kept_pixels: u64,
}

impl CurationSummary {
    pub fn of(records: &[ManifestRecord], files: usize) -> Self {
        let mut s = CurationSummary { files, records: records.len(), ..Default::default() };
        for r in records {
            match r.status {
                RecordStatus::Kept => {
                    s.kept += 1;
                    s.kept_pixels += (r.width * r.height) as u64;
                }
                RecordStatus::DuplicateOf(_) => s.duplicates += 1,
                RecordStatus::Review => s.review += 1,
                RecordStatus::Excluded(_) => s.excluded += 1,
            }
        }
        s
    }
}

/// Supported image files under `dir`, sorted by relative path.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in walkdir::WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(dir).to_path_buf();
            Error::io(path, e.into_io_error().unwrap_or_else(|| std::io::Error::other("walk failed")))
        })?;
        if entry.file_type().is_file() && ImageFormat::from_path(entry.path()).is_some() {
            files.push(entry.into_path());
        }
    }
    Ok(files)
}

fn sanitize(s: &str) -> String {
    s.chars().map(|c| if c == '\t' || c == '\n' || c == '\r' { ' ' } else { c }).collect()
}

/// Decodes, slices and hashes every image under `input_dir`, writes the
/// slices to `slice_dir`, deduplicates, and writes the manifest.
pub fn build_manifest(
    input_dir: &Path,
    output_path: &Path,
    slice_dir: &Path,
    slice: &SliceConfig,
    dedup_cfg: &DedupConfig,
    workers: usize,
) -> Result<CurationSummary> {
    slice.validate()?;
    let files = list_images(input_dir)?;
    std::fs::create_dir_all(slice_dir).map_err(|e| Error::io(slice_dir, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?;
    let per_file: Vec<Result<Vec<ManifestRecord>>> = pool.install(|| {
        files
            .par_iter()
            .enumerate()
            .map(|(fi, path)| {
                let rel = path.strip_prefix(input_dir).unwrap_or(path);
                let rel = sanitize(&rel.to_string_lossy());
                let source_tag = sanitize(
                    &Path::new(&rel).parent().map(|p| p.to_string_lossy().into_owned()).unwrap_or_default(),
                );
                let excluded = |reason: String| {
                    log::warn!("excluding {rel}: {reason}");
                    ManifestRecord {
                        id: rel.clone(),
                        path: path.to_string_lossy().into_owned(),
                        width: 0,
                        height: 0,
                        channels: 0,
                        source_tag: source_tag.clone(),
                        phash: PerceptualHash(0),
                        status: RecordStatus::Excluded(sanitize(&reason)),
                    }
                };
                let img = match imaging::load(path) {
                    Ok(img) => img,
                    Err(e) => return Ok(vec![excluded(e.to_string())]),
                };
                let key = keyed::derive(slice.seed, &[keyed::hash_str(&rel)]);
                let Some(slices) = slice_image(&img, key, slice.min_size, slice.max_size, slice.crops_per_image) else {
                    return Ok(vec![excluded(format!(
                        "{}x{} is smaller than min_size {}",
                        img.width(),
                        img.height(),
                        slice.min_size
                    ))]);
                };
                slices
                    .into_iter()
                    .enumerate()
                    .map(|(k, s)| {
                        let ext = if s.channels() == 1 { "pgm" } else { "ppm" };
                        let out = slice_dir.join(format!("{fi:06}_{k:03}.{ext}"));
                        imaging::save_pnm(&s, &out)?;
                        Ok(ManifestRecord {
                            id: format!("{rel}#{k:03}"),
                            path: out.to_string_lossy().into_owned(),
                            width: s.width(),
                            height: s.height(),
                            channels: s.channels(),
                            source_tag: source_tag.clone(),
                            phash: phash64(&s),
                            status: RecordStatus::Kept,
                        })
                    })
                    .collect()
            })
            .collect()
    });
    let mut records = Vec::new();
    for r in per_file {
        records.extend(r?);
    }
    let records = dedup(records, dedup_cfg)?;
    write_manifest(output_path, &records)?;
    Ok(CurationSummary::of(&records, files.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forced_geometry() {
        let img = Image::filled(64, 64, 1, 9).unwrap();
        let s = slice_image(&img, 1, 64, 64, 3).unwrap();
        assert!(s.iter().all(|c| c == &img));
    }

    #[test]
    fn bounded_and_seeded() {
        let a = slice_boxes(1024, 1024, 5, 64, 1024, 5).unwrap();
        assert_eq!(a.len(), 5);
        assert_eq!(a, slice_boxes(1024, 1024, 5, 64, 1024, 5).unwrap());
        assert!(a.iter().all(|b| b.x + b.width <= 1024 && b.y + b.height <= 1024 && b.width >= 64));
    }

    #[test]
    fn too_small_is_none() {
        assert!(slice_boxes(63, 500, 0, 64, 1024, 1).is_none());
    }
}
