//! Pre-training: schedule, optimizer, data pipeline, loop and benchmark.

pub mod bench;
pub mod data;
mod trainer;

pub use bench::{bench_throughput, BenchConfig, BenchReport, BenchRow};
pub use data::{BatchPipeline, Dataset, PreparedBatch, PreparedSample, SampleRecipe};
pub use trainer::{init_seed, selection_key, train, TrainObserver, TrainSummary, Trainer};

use std::fmt::Write as _;
use std::str::FromStr;

use smae_tensor::{Element, Tensor};

use crate::error::{Error, Result};
use crate::selection::SelectionConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrScaleMode {
    None,
    MaskOverRecon,
}

impl FromStr for LrScaleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "mask_over_recon" => Ok(Self::MaskOverRecon),
            _ => Err(Error::Config(format!("unknown lr_scale_mode {s:?} (none|mask_over_recon)"))),
        }
    }
}

impl std::fmt::Display for LrScaleMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::MaskOverRecon => "mask_over_recon",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Selective,
    MaeBaseline,
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "selective" => Ok(Self::Selective),
            "mae_baseline" => Ok(Self::MaeBaseline),
            _ => Err(Error::Config(format!("unknown mode {s:?} (selective|mae_baseline)"))),
        }
    }
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Selective => "selective",
            Self::MaeBaseline => "mae_baseline",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub adam_eps: f64,
    /// May be fractional; the default is `T·60/800`.
    pub warmup_epochs: f64,
    /// Total epochs `T`.
    pub epochs: usize,
    pub lr_scale_mode: LrScaleMode,
    pub grad_clip: Option<f64>,
    pub mode: TrainMode,
    pub seed: u64,
    /// Visible fraction of the baseline is `1 − baseline_mask_ratio`.
    pub baseline_mask_ratio: f64,
    pub explosion_threshold: f64,
    pub explosion_patience: usize,
    /// Periodic checkpoint interval in epochs; 0 writes only the final one.
    pub checkpoint_every: usize,
    /// Threads for per-sample compute and for the data pipeline.
    pub workers: usize,
    /// Image count of the synthetic dataset used when no manifest is given.
    pub synthetic_images: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let epochs = 50;
        Self {
            base_lr: 1.5e-4,
            batch_size: 64,
            weight_decay: 0.05,
            betas: (0.9, 0.95),
            adam_eps: 1e-8,
            warmup_epochs: epochs as f64 * 60.0 / 800.0,
            epochs,
            lr_scale_mode: LrScaleMode::MaskOverRecon,
            grad_clip: None,
            mode: TrainMode::Selective,
            seed: 0,
            baseline_mask_ratio: 0.75,
            explosion_threshold: 1e3,
            explosion_patience: 3,
            checkpoint_every: 0,
            workers: 1,
            synthetic_images: 512,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, sel: &SelectionConfig) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.base_lr > 0.0) {
            return bad(format!("base_lr={} must be positive", self.base_lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.epochs == 0 || !(self.warmup_epochs >= 0.0) || self.warmup_epochs >= self.epochs as f64 {
            return bad(format!(
                "warmup_epochs={} must lie in [0, T={})",
                self.warmup_epochs, self.epochs
            ));
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return bad("grad_clip must be positive".into());
        }
        if self.mode == TrainMode::Selective && !(sel.recon_ratio > 0.0) {
            return bad(format!(
                "reconstruction ratio r={} must be > 0: the decoder needs at least one target",
                sel.recon_ratio
            ));
        }
        if !(0.0..1.0).contains(&self.baseline_mask_ratio) {
            return bad("baseline_mask_ratio must lie in [0, 1)".into());
        }
        Ok(())
    }

    /// `base_lr · batch/256 · (m/r when scaling by mask over reconstruction)`.
    pub fn peak_lr(&self, sel: &SelectionConfig) -> f64 {
        let batch = self.base_lr * self.batch_size as f64 / 256.0;
        match (self.mode, self.lr_scale_mode) {
            (TrainMode::Selective, LrScaleMode::MaskOverRecon) => {
                batch * sel.mask_ratio / sel.recon_ratio
            }
            _ => batch,
        }
    }
}

/// Linear warmup to `peak`, then half-cosine to exactly 0 on the last step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub peak: f64,
    pub warmup_steps: f64,
    pub total_steps: u64,
}

impl LrSchedule {
    pub fn new(peak: f64, warmup_epochs: f64, epochs: usize, steps_per_epoch: usize) -> Self {
        Self {
            peak,
            warmup_steps: warmup_epochs * steps_per_epoch as f64,
            total_steps: (epochs * steps_per_epoch) as u64,
        }
    }

    /// Rate at (possibly fractional) iteration `step`; the final iteration is
    /// `total_steps − 1`.
    pub fn lr_at(&self, step: f64) -> f64 {
        let w = self.warmup_steps;
        if step < w {
            return self.peak * step.max(0.0) / w;
        }
        let span = (self.total_steps as f64 - 1.0 - w).max(0.0);
        if span == 0.0 {
            return if step <= w { self.peak } else { 0.0 };
        }
        let progress = ((step - w) / span).min(1.0);
        self.peak * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

/// First and second moments per array plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
}

impl<T: Element> AdamState<T> {
    pub fn zeros_like(params: &[Tensor<T>]) -> Self {
        Self {
            m: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
            t: 0,
        }
    }
}

/// Decoupled-weight-decay Adam with bias correction:
///
/// ```text
/// w ← w·(1 − lr·wd)            (only where decay[i])
/// m ← β₁m + (1−β₁)g,  v ← β₂v + (1−β₂)g²
/// w ← w − lr · (m/(1−β₁ᵗ)) / (√(v/(1−β₂ᵗ)) + ε)
/// ```
///
/// A non-finite gradient aborts the step before anything is written.
pub fn adamw_step<T: Element>(
    params: &mut [Tensor<T>],
    grads: &[Vec<T>],
    decay: &[bool],
    state: &mut AdamState<T>,
    h: &AdamHyper,
) -> Result<()> {
    if grads.len() != params.len() || decay.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Contract("optimizer buffers do not match the parameter list".into()));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if g.len() != p.numel() || state.m[i].len() != p.numel() {
            return Err(Error::Contract(format!("gradient {i} has the wrong length")));
        }
        if let Some(pos) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                epoch: 0,
                step: 0,
                reason: format!("non-finite gradient in array {i} at {pos}"),
            });
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (T::of(h.beta1), T::of(h.beta2));
    let one = T::one();
    let lr = T::of(h.lr);
    let bc1 = one - T::of(h.beta1.powi(t));
    let bc2 = one - T::of(h.beta2.powi(t));
    let eps = T::of(h.eps);
    let shrink = one - T::of(h.lr * h.weight_decay);
    for (i, p) in params.iter_mut().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            let g = grads[i][j];
            if decay[i] {
                *w = *w * shrink;
            }
            m[j] = b1 * m[j] + (one - b1) * g;
            v[j] = b2 * v[j] + (one - b2) * g * g;
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            *w = *w - lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Global L2 norm of all gradients.
pub fn grad_norm<T: Element>(grads: &[Vec<T>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| v.as_f64() * v.as_f64())
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogFormat {
    Kv,
    Csv,
}

impl FromStr for LogFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kv" => Ok(Self::Kv),
            "csv" => Ok(Self::Csv),
            _ => Err(Error::Config(format!("unknown log format {s:?} (kv|csv)"))),
        }
    }
}

/// One optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogRecord {
    pub epoch: usize,
    pub step: u64,
    pub loss: f64,
    pub grad_norm: f64,
    pub lr: f64,
    pub stage: usize,
    pub tokens_encoded: usize,
    pub tokens_reconstructed: usize,
    /// Wall-clock rate; `None` when timing is suppressed.
    pub images_per_minute: Option<f64>,
}

impl TrainLogRecord {
    pub const FIELDS: [&'static str; 9] = [
        "epoch",
        "step",
        "loss",
        "grad_norm",
        "lr",
        "stage",
        "tokens_encoded",
        "tokens_reconstructed",
        "images_per_minute",
    ];

    fn values(&self) -> [String; 9] {
        [
            self.epoch.to_string(),
            self.step.to_string(),
            self.loss.to_string(),
            self.grad_norm.to_string(),
            self.lr.to_string(),
            self.stage.to_string(),
            self.tokens_encoded.to_string(),
            self.tokens_reconstructed.to_string(),
            self.images_per_minute.map_or_else(|| "na".to_string(), |v| format!("{v:.1}")),
        ]
    }

    pub fn csv_header() -> String {
        Self::FIELDS.join(",")
    }

    pub fn format(&self, format: LogFormat) -> String {
        let values = self.values();
        match format {
            LogFormat::Csv => values.join(","),
            LogFormat::Kv => {
                let mut out = String::new();
                for (i, (k, v)) in Self::FIELDS.iter().zip(&values).enumerate() {
                    if i > 0 {
                        out.push(' ');
                    }
                    let _ = write!(out, "{k}={v}");
                }
                out
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        let s = LrSchedule::new(1e-3, 3.75, 50, 8);
        assert_eq!(s.lr_at(0.0), 0.0);
        assert_eq!(s.lr_at(s.warmup_steps), 1e-3);
        assert!(s.lr_at((s.total_steps - 1) as f64) < 1e-8 * 1e-3);
        let below = s.lr_at(s.warmup_steps - 1e-9);
        assert!((below - 1e-3).abs() / 1e-3 < 1e-9);
    }

    #[test]
    fn adam_single_step_hand_oracle() {
        let mut p = vec![Tensor::new(vec![1], vec![1.0f64]).unwrap()];
        let mut st = AdamState::zeros_like(&p);
        let h = AdamHyper { lr: 0.1, beta1: 0.9, beta2: 0.95, eps: 1e-8, weight_decay: 0.0 };
        adamw_step(&mut p, &[vec![1.0]], &[true], &mut st, &h).unwrap();
        let want = 1.0 - 0.1 * 1.0 / (1.0 + 1e-8);
        assert!((p[0].data()[0] - want).abs() < 1e-15);
    }

    #[test]
    fn adam_fixed_point_and_decay() {
        let mut p = vec![Tensor::new(vec![2], vec![0.5f64, -2.0]).unwrap()];
        let mut st = AdamState::zeros_like(&p);
        let mut h = AdamHyper { lr: 0.01, beta1: 0.9, beta2: 0.95, eps: 1e-8, weight_decay: 0.0 };
        adamw_step(&mut p, &[vec![0.0, 0.0]], &[true], &mut st, &h).unwrap();
        assert_eq!(p[0].data(), &[0.5, -2.0]);
        h.weight_decay = 0.05;
        adamw_step(&mut p, &[vec![0.0, 0.0]], &[true], &mut st, &h).unwrap();
        let f = 1.0 - 0.01 * 0.05;
        assert_eq!(p[0].data(), &[0.5 * f, -2.0 * f]);
    }

    #[test]
    fn adam_rejects_nan_without_writing() {
        let mut p = vec![Tensor::new(vec![1], vec![1.0f32]).unwrap()];
        let mut st = AdamState::zeros_like(&p);
        let h = AdamHyper { lr: 0.1, beta1: 0.9, beta2: 0.95, eps: 1e-8, weight_decay: 0.05 };
        assert!(matches!(
            adamw_step(&mut p, &[vec![f32::NAN]], &[true], &mut st, &h),
            Err(Error::Diverged { .. })
        ));
        assert_eq!(p[0].data(), &[1.0]);
        assert_eq!(st.t, 0);
    }

    #[test]
    fn peak_lr_scaling() {
        let sel = SelectionConfig::new(0.85, 0.25, 50);
        let cfg = TrainConfig { batch_size: 256, ..TrainConfig::default() };
        assert!((cfg.peak_lr(&sel) / (1.5e-4 * 3.4) - 1.0).abs() < 1e-12);
        let none = TrainConfig { lr_scale_mode: LrScaleMode::None, ..cfg.clone() };
        assert_eq!(none.peak_lr(&sel), 1.5e-4);
    }

    #[test]
    fn record_formats() {
        let r = TrainLogRecord {
            epoch: 1,
            step: 0,
            loss: 0.5,
            grad_norm: 2.0,
            lr: 0.0,
            stage: 1,
            tokens_encoded: 28,
            tokens_reconstructed: 49,
            images_per_minute: None,
        };
        assert_eq!(
            r.format(LogFormat::Kv),
            "epoch=1 step=0 loss=0.5 grad_norm=2 lr=0 stage=1 tokens_encoded=28 tokens_reconstructed=49 images_per_minute=na"
        );
        assert_eq!(r.format(LogFormat::Csv), "1,0,0.5,2,0,1,28,49,na");
    }

    #[test]
    fn rejects_zero_reconstruction_ratio() {
        let sel = SelectionConfig::new(0.85, 0.0, 50);
        let err = TrainConfig::default().validate(&sel).unwrap_err().to_string();
        assert!(err.contains("reconstruction ratio"), "{err}");
    }
}
