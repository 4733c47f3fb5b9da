//! Selective versus baseline throughput on one model, dataset and seed.

use std::time::Instant;

use super::data::{batches_per_epoch, BatchPipeline, Dataset};
use super::{TrainConfig, TrainMode, Trainer};
use crate::error::{Error, Result};
use crate::model::flops::forward_flops;
use crate::model::ModelConfig;
use crate::selection::{floor_count, SelectionConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub train: TrainConfig,
    pub selection: SelectionConfig,
    pub model: ModelConfig,
    pub warmup_steps: usize,
    pub steps: usize,
    pub dataset_size: usize,
}

impl BenchConfig {
    pub fn new(train: TrainConfig, selection: SelectionConfig, model: ModelConfig) -> Self {
        Self { train, selection, model, warmup_steps: 20, steps: 200, dataset_size: 64 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub mode: TrainMode,
    pub images_per_minute: f64,
    pub tokens_encoded_per_image: usize,
    pub tokens_reconstructed_per_image: usize,
    /// Forward FLOPs relative to the baseline row.
    pub analytic_flop_ratio: f64,
    /// Resident-set high-water mark during this mode; 0 when unavailable.
    pub peak_resident_bytes: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// Selective images/minute over baseline images/minute.
    pub speedup: f64,
    /// Selective over baseline encoder attention FLOPs.
    pub encoder_attention_ratio: f64,
    /// Selective over baseline reconstructed tokens.
    pub decoder_token_ratio: f64,
}

impl BenchReport {
    pub fn row(&self, mode: TrainMode) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.mode == mode)
    }
}

/// Best-effort reset of the kernel's resident high-water mark.
fn reset_peak_rss() {
    let _ = std::fs::write("/proc/self/clear_refs", "5");
}

fn peak_rss_bytes() -> u64 {
    std::fs::read_to_string("/proc/self/status")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("VmHWM:"))
                .and_then(|l| l.split_whitespace().nth(1).and_then(|v| v.parse::<u64>().ok()))
        })
        .map_or(0, |kb| kb * 1024)
}

fn run_mode(cfg: &BenchConfig, mode: TrainMode, ds: &Dataset) -> Result<(f64, usize, usize, u64)> {
    let per_epoch = batches_per_epoch(ds.len(), cfg.train.batch_size);
    let total = cfg.warmup_steps + cfg.steps;
    let epochs = total.div_ceil(per_epoch).max(cfg.selection.stages);
    let train = TrainConfig {
        mode,
        epochs,
        warmup_epochs: epochs as f64 * 60.0 / 800.0,
        ..cfg.train.clone()
    };
    let mut trainer = Trainer::new(&train, &cfg.selection, &cfg.model, ds.len())?;
    trainer.set_timing(false);
    let recipe = trainer.recipe();
    reset_peak_rss();
    let (elapsed, enc, rec) = BatchPipeline::run(ds, &recipe, train.batch_size, 1..=epochs, train.workers, |pipeline| {
        let mut start = None;
        let mut counts = (0, 0);
        for (i, batch) in pipeline.take(total).enumerate() {
            if i == cfg.warmup_steps {
                start = Some(Instant::now());
            }
            let r = trainer.step_batch(&batch?, &mut ())?;
            counts = (r.tokens_encoded, r.tokens_reconstructed);
        }
        let secs = start.map_or(0.0, |s| s.elapsed().as_secs_f64());
        Ok::<_, Error>((secs, counts.0, counts.1))
    })?;
    let images = (cfg.steps * cfg.train.batch_size) as f64;
    let ipm = if elapsed > 0.0 { images * 60.0 / elapsed } else { 0.0 };
    Ok((ipm, enc, rec, peak_rss_bytes()))
}

/// Times both modes; each runs `warmup_steps` untimed then `steps` timed.
pub fn bench_throughput(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.steps == 0 {
        return Err(Error::Config("bench needs at least one timed step".into()));
    }
    let m = &cfg.model;
    let ds = Dataset::synthetic(cfg.dataset_size, m.image_size, m.channels, cfg.train.seed);
    let n = m.num_patches();
    let mut rows = Vec::new();
    for mode in [TrainMode::Selective, TrainMode::MaeBaseline] {
        let (ipm, enc, rec, peak) = run_mode(cfg, mode, &ds)?;
        rows.push(BenchRow {
            mode,
            images_per_minute: ipm,
            tokens_encoded_per_image: enc,
            tokens_reconstructed_per_image: rec,
            analytic_flop_ratio: 0.0,
            peak_resident_bytes: peak,
        });
    }
    let base_visible = floor_count(1.0 - cfg.train.baseline_mask_ratio, n);
    let baseline_flops = forward_flops(m, base_visible, n - base_visible);
    for row in &mut rows {
        let f = forward_flops(m, row.tokens_encoded_per_image, row.tokens_reconstructed_per_image);
        row.analytic_flop_ratio = f.total() as f64 / baseline_flops.total() as f64;
    }
    let (sel, base) = (&rows[0], &rows[1]);
    let sel_flops = forward_flops(m, sel.tokens_encoded_per_image, sel.tokens_reconstructed_per_image);
    Ok(BenchReport {
        speedup: sel.images_per_minute / base.images_per_minute,
        encoder_attention_ratio: sel_flops.encoder_attention as f64 / baseline_flops.encoder_attention as f64,
        decoder_token_ratio: sel.tokens_reconstructed_per_image as f64 / base.tokens_reconstructed_per_image as f64,
        rows,
    })
}
