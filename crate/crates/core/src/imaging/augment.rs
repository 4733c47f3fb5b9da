//! Random-resized-crop followed by a random horizontal flip.

use rand::Rng;

use super::{resize_region, Image};
use crate::error::{Error, Result};
use crate::keyed;

/// Smallest side accepted by [`augment`].
pub const MIN_AUGMENT_SIDE: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    /// Output side length.
    pub target: usize,
    /// Crop area range as a fraction of the source area.
    pub scale: (f64, f64),
    /// Crop aspect-ratio range (width / height), sampled log-uniformly.
    pub ratio: (f64, f64),
    pub flip_prob: f64,
}

impl AugmentConfig {
    pub fn new(target: usize) -> Self {
        Self {
            target,
            scale: (0.2, 1.0),
            ratio: (3.0 / 4.0, 4.0 / 3.0),
            flip_prob: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropBox {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentParams {
    pub crop: CropBox,
    pub flip: bool,
}

/// Draws the crop box and flip decision for a `w×h` source.
pub fn sample_augment(w: usize, h: usize, seed: u64, cfg: &AugmentConfig) -> AugmentParams {
    let mut rng = keyed::stream(seed);
    let area = (w * h) as f64;
    let (log_lo, log_hi) = (cfg.ratio.0.ln(), cfg.ratio.1.ln());
    let mut crop = None;
    for _ in 0..10 {
        let target_area = area * rng.random_range(cfg.scale.0..=cfg.scale.1);
        let aspect = rng.random_range(log_lo..=log_hi).exp();
        let cw = (target_area * aspect).sqrt().round() as usize;
        let ch = (target_area / aspect).sqrt().round() as usize;
        if cw > 0 && ch > 0 && cw <= w && ch <= h {
            let x = rng.random_range(0..=w - cw);
            let y = rng.random_range(0..=h - ch);
            crop = Some(CropBox {
                x,
                y,
                width: cw,
                height: ch,
            });
            break;
        }
    }
    let crop = crop.unwrap_or_else(|| {
        // Central crop at the closest admissible aspect ratio.
        let in_ratio = w as f64 / h as f64;
        let (cw, ch) = if in_ratio < cfg.ratio.0 {
            (w, ((w as f64 / cfg.ratio.0).round() as usize).clamp(1, h))
        } else if in_ratio > cfg.ratio.1 {
            (((h as f64 * cfg.ratio.1).round() as usize).clamp(1, w), h)
        } else {
            (w, h)
        };
        CropBox {
            x: (w - cw) / 2,
            y: (h - ch) / 2,
            width: cw,
            height: ch,
        }
    });
    let flip = rng.random::<f64>() < cfg.flip_prob;
    AugmentParams { crop, flip }
}

pub fn augment(img: &Image, seed: u64, cfg: &AugmentConfig) -> Result<Image> {
    if img.width() < MIN_AUGMENT_SIDE || img.height() < MIN_AUGMENT_SIDE {
        return Err(Error::Contract(format!(
            "augmentation needs at least {MIN_AUGMENT_SIDE}x{MIN_AUGMENT_SIDE}, got {}x{}",
            img.width(),
            img.height()
        )));
    }
    if cfg.target == 0 {
        return Err(Error::Contract("augmentation target must be positive".into()));
    }
    let params = sample_augment(img.width(), img.height(), seed, cfg);
    let c = params.crop;
    let out = resize_region(img, (c.x, c.y, c.width, c.height), cfg.target, cfg.target)?;
    Ok(if params.flip { out.flip_horizontal() } else { out })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(w: usize, h: usize) -> Image {
        let pixels = (0..w * h * 3).map(|i| (keyed::mix64(i as u64) & 0xff) as u8).collect();
        Image::new(w, h, 3, pixels).unwrap()
    }

    #[test]
    fn deterministic_for_seed() {
        let img = textured(40, 30);
        let cfg = AugmentConfig::new(32);
        assert_eq!(augment(&img, 5, &cfg).unwrap(), augment(&img, 5, &cfg).unwrap());
        assert_ne!(augment(&img, 5, &cfg).unwrap(), augment(&img, 6, &cfg).unwrap());
    }

    #[test]
    fn constant_source_gives_constant_output() {
        let img = Image::filled(50, 20, 1, 131).unwrap();
        let out = augment(&img, 77, &AugmentConfig::new(24)).unwrap();
        assert_eq!((out.width(), out.height()), (24, 24));
        assert!(out.pixels().iter().all(|&v| v == 131));
    }

    #[test]
    fn flip_rate_is_one_half() {
        let cfg = AugmentConfig::new(16);
        let flips = (0..10_000u64)
            .filter(|&s| sample_augment(64, 64, keyed::derive(1, &[s]), &cfg).flip)
            .count();
        let rate = flips as f64 / 10_000.0;
        assert!((0.48..=0.52).contains(&rate), "flip rate {rate}");
    }

    #[test]
    fn crops_stay_in_bounds_and_respect_scale() {
        let cfg = AugmentConfig::new(16);
        for s in 0..2_000u64 {
            let p = sample_augment(97, 61, s, &cfg);
            assert!(p.crop.x + p.crop.width <= 97 && p.crop.y + p.crop.height <= 61);
            let frac = (p.crop.width * p.crop.height) as f64 / (97.0 * 61.0);
            assert!(frac > 0.15 && frac <= 1.0 + 1e-9, "area fraction {frac}");
        }
    }

    #[test]
    fn rejects_tiny_images() {
        let img = Image::filled(15, 64, 1, 0).unwrap();
        assert!(matches!(augment(&img, 0, &AugmentConfig::new(16)), Err(Error::Contract(_))));
    }
}
