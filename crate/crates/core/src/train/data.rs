//! Datasets and the deterministic batch pipeline.
//!
//! Batch composition and every random draw are functions of
//! `(seed, epoch, batch_index, sample)`, so the number of pipeline workers
//! only changes how fast batches arrive, never what they contain.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::curation::{read_manifest, RecordStatus};
use crate::error::{Error, Result};
use crate::hog::{hog_score, HogConfig, SemanticScores};
use crate::imaging::{self, augment, patchify, AugmentConfig, Image, PatchGrid};
use crate::keyed;

const SALT_ORDER: u64 = 0x6f72_6465;
const SALT_AUGMENT: u64 = 0x6175_676d;
const SALT_SYNTH: u64 = 0x7379_6e74;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    ids: Vec<String>,
    images: Vec<Image>,
}

impl Dataset {
    pub fn new(ids: Vec<String>, images: Vec<Image>) -> Result<Self> {
        if ids.len() != images.len() {
            return Err(Error::Contract("dataset ids and images differ in length".into()));
        }
        Ok(Self { ids, images })
    }

    /// Procedural images: colour ramps, gratings and flat shapes on a
    /// background, each with light noise.
    pub fn synthetic(count: usize, side: usize, channels: usize, seed: u64) -> Self {
        let images = (0..count)
            .map(|i| synthetic_image(side, channels, keyed::derive(seed, &[SALT_SYNTH, i as u64])))
            .collect();
        let ids = (0..count).map(|i| format!("synthetic-{i:05}")).collect();
        Self { ids, images }
    }

    /// Loads every `kept` record of a manifest. Paths are taken as written,
    /// or relative to the manifest's directory.
    pub fn from_manifest(path: &Path) -> Result<Self> {
        let records = read_manifest(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut ids = Vec::new();
        let mut images = Vec::new();
        for rec in records.into_iter().filter(|r| r.status == RecordStatus::Kept) {
            let p = Path::new(&rec.path);
            let p = if p.is_absolute() || p.exists() { p.to_path_buf() } else { base.join(p) };
            images.push(imaging::load(&p)?);
            ids.push(rec.id);
        }
        if images.is_empty() {
            return Err(Error::Capability(format!(
                "manifest {} has no kept records",
                path.display()
            )));
        }
        Ok(Self { ids, images })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image(&self, i: usize) -> &Image {
        &self.images[i]
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }
}

fn synthetic_image(side: usize, channels: usize, key: u64) -> Image {
    let mut rng = keyed::stream(key);
    let kind = rng.random_range(0..3u32);
    let c0: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..255.0));
    let c1: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..255.0));
    let angle = rng.random_range(0.0..std::f64::consts::PI);
    let (dx, dy) = (angle.cos(), angle.sin());
    let period = rng.random_range(0.25..0.75) * side as f64;
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let (cx, cy) = (rng.random_range(0.25..0.75) * side as f64, rng.random_range(0.25..0.75) * side as f64);
    let radius = rng.random_range(0.15..0.35) * side as f64;
    let s = side as f64;
    let mut pixels = Vec::with_capacity(side * side * channels);
    for y in 0..side {
        for x in 0..side {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            let t = match kind {
                0 => ((fx - s / 2.0) * dx + (fy - s / 2.0) * dy) / s + 0.5,
                1 => 0.5 + 0.5 * (std::f64::consts::TAU * (fx * dx + fy * dy) / period + phase).sin(),
                _ => f64::from((fx - cx).hypot(fy - cy) < radius),
            }
            .clamp(0.0, 1.0);
            let noise = rng.random_range(-4.0..4.0);
            let rgb: [f64; 3] = std::array::from_fn(|c| c0[c] + (c1[c] - c0[c]) * t + noise);
            if channels == 1 {
                pixels.push(imaging::luma(rgb[0], rgb[1], rgb[2]).round().clamp(0.0, 255.0) as u8);
            } else {
                pixels.extend(rgb.iter().map(|v| v.round().clamp(0.0, 255.0) as u8));
            }
        }
    }
    Image::new(side, side, channels, pixels).expect("consistent synthetic geometry")
}

/// A sample ready for the model.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    /// Position in the dataset.
    pub index: usize,
    pub grid: PatchGrid,
    /// HOG scores; absent when the configured mode does not use them.
    pub scores: Option<SemanticScores>,
}

/// Everything needed to turn a dataset image into a [`PreparedSample`].
#[derive(Debug, Clone)]
pub struct SampleRecipe {
    pub image_size: usize,
    pub patch: usize,
    pub channels: usize,
    pub hog: Option<HogConfig>,
    pub seed: u64,
}

impl SampleRecipe {
    /// Augment (keyed by seed, epoch and sample), patchify, score.
    pub fn prepare(&self, ds: &Dataset, index: usize, epoch: usize) -> Result<PreparedSample> {
        let key = keyed::derive(self.seed, &[SALT_AUGMENT, epoch as u64, index as u64]);
        let img = ds.image(index).to_channels(self.channels)?;
        let img = augment(&img, key, &AugmentConfig::new(self.image_size))?;
        let grid = patchify(&img, self.patch)?;
        let scores = self.hog.as_ref().map(|h| hog_score(&grid, h)).transpose()?;
        Ok(PreparedSample { index, grid, scores })
    }
}

/// Keyed permutation of `0..n` for one epoch.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut keyed::stream(keyed::derive(seed, &[SALT_ORDER, epoch as u64])));
    order
}

/// Batches per epoch; the last batch may be short.
pub fn batches_per_epoch(n: usize, batch_size: usize) -> usize {
    n.div_ceil(batch_size)
}

/// Dataset indices of batch `b` in `epoch`.
pub fn batch_indices(n: usize, batch_size: usize, seed: u64, epoch: usize, b: usize) -> Vec<usize> {
    let order = epoch_order(n, seed, epoch);
    let end = ((b + 1) * batch_size).min(n);
    order[b * batch_size..end].to_vec()
}

/// One batch as delivered by the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedBatch {
    pub epoch: usize,
    pub batch: usize,
    pub samples: Vec<PreparedSample>,
}

/// In-order iterator over batches prepared by a worker pool.
pub struct BatchPipeline {
    rx: Receiver<(usize, Result<PreparedBatch>)>,
    pending: BTreeMap<usize, Result<PreparedBatch>>,
    next: usize,
    total: usize,
}

impl BatchPipeline {
    /// Runs `body` with batches for `epochs` (1-based, inclusive), prepared
    /// by `workers` threads through a queue of at most `2·workers` batches.
    pub fn run<R>(
        ds: &Dataset,
        recipe: &SampleRecipe,
        batch_size: usize,
        epochs: std::ops::RangeInclusive<usize>,
        workers: usize,
        body: impl FnOnce(BatchPipeline) -> R,
    ) -> R {
        let per_epoch = batches_per_epoch(ds.len(), batch_size);
        let first = *epochs.start();
        let total = per_epoch * epochs.clone().count();
        let counter = AtomicUsize::new(0);
        let (tx, rx) = mpsc::sync_channel(2 * workers.max(1));
        std::thread::scope(|scope| {
            for _ in 0..workers.max(1) {
                let tx = tx.clone();
                let counter = &counter;
                scope.spawn(move || loop {
                    let seq = counter.fetch_add(1, Ordering::Relaxed);
                    if seq >= total {
                        break;
                    }
                    let epoch = first + seq / per_epoch;
                    let batch = seq % per_epoch;
                    let samples = batch_indices(ds.len(), batch_size, recipe.seed, epoch, batch)
                        .into_iter()
                        .map(|i| recipe.prepare(ds, i, epoch))
                        .collect::<Result<Vec<_>>>()
                        .map(|samples| PreparedBatch { epoch, batch, samples });
                    if tx.send((seq, samples)).is_err() {
                        break;
                    }
                });
            }
            drop(tx);
            body(BatchPipeline { rx, pending: BTreeMap::new(), next: 0, total })
        })
    }
}

impl Iterator for BatchPipeline {
    type Item = Result<PreparedBatch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.total {
            return None;
        }
        while !self.pending.contains_key(&self.next) {
            match self.rx.recv() {
                Ok((seq, item)) => {
                    self.pending.insert(seq, item);
                }
                Err(_) => return None,
            }
        }
        let item = self.pending.remove(&self.next);
        self.next += 1;
        item
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_is_seeded() {
        let a = Dataset::synthetic(4, 32, 3, 1);
        assert_eq!(a, Dataset::synthetic(4, 32, 3, 1));
        assert_ne!(a.image(0), Dataset::synthetic(4, 32, 3, 2).image(0));
        assert_eq!(a.image(1).channels(), 3);
    }

    #[test]
    fn batches_cover_each_epoch_once() {
        let mut seen: Vec<usize> = (0..3).flat_map(|b| batch_indices(10, 4, 7, 2, b)).collect();
        seen.sort();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        assert_ne!(epoch_order(10, 7, 1), epoch_order(10, 7, 2));
    }

    #[test]
    fn pipeline_is_ordered_and_worker_independent() {
        let ds = Dataset::synthetic(6, 32, 1, 3);
        let recipe = SampleRecipe { image_size: 32, patch: 8, channels: 1, hog: Some(HogConfig::default()), seed: 9 };
        let collect = |workers| {
            BatchPipeline::run(&ds, &recipe, 4, 1..=3, workers, |p| {
                p.map(|b| b.unwrap()).collect::<Vec<_>>()
            })
        };
        let one = collect(1);
        assert_eq!(one.len(), 6);
        assert_eq!((one[5].epoch, one[5].batch), (3, 1));
        assert_eq!(one, collect(4));
    }

    #[test]
    fn early_exit_does_not_hang() {
        let ds = Dataset::synthetic(8, 32, 1, 3);
        let recipe = SampleRecipe { image_size: 32, patch: 8, channels: 1, hog: None, seed: 0 };
        let first = BatchPipeline::run(&ds, &recipe, 1, 1..=50, 3, |mut p| p.next().unwrap().unwrap());
        assert_eq!(first.epoch, 1);
    }
}
