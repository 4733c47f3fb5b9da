//! Per-patch semantic richness from a single-cell histogram of oriented
//! gradients.
//!
//! Each patch is reduced to gray, differentiated with centered differences
//! in the interior and one-sided differences on the patch border (a patch
//! never reads its neighbours), and every pixel casts a magnitude-weighted
//! vote for its unsigned orientation in `[0°, 180°)`. Votes are split
//! linearly between the two nearest bin centres, wrapping at 180°. The score
//! is the L1 or L2 norm of the histogram. No block normalization is applied.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::imaging::PatchGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    L1,
    L2,
}

impl FromStr for Reduction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(Reduction::L1),
            "l2" => Ok(Reduction::L2),
            _ => Err(Error::Config(format!("unknown reduction {s:?} (l1|l2)"))),
        }
    }
}

impl std::fmt::Display for Reduction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Reduction::L1 => "l1",
            Reduction::L2 => "l2",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HogConfig {
    pub bins: usize,
    pub reduction: Reduction,
}

impl Default for HogConfig {
    fn default() -> Self {
        Self {
            bins: 9,
            reduction: Reduction::L2,
        }
    }
}

/// Non-negative score per patch, aligned with the grid's patch order.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticScores {
    scores: Vec<f64>,
    reduction: Reduction,
}

impl SemanticScores {
    pub fn new(scores: Vec<f64>, reduction: Reduction) -> Result<Self> {
        if let Some(bad) = scores.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return Err(Error::Contract(format!("semantic score {bad} is not a finite non-negative value")));
        }
        Ok(Self { scores, reduction })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn reduction(&self) -> Reduction {
        self.reduction
    }
}

/// Scores patches for selection. HOG is the only shipped implementation.
pub trait SemanticScorer: Send + Sync {
    fn score(&self, grid: &PatchGrid) -> Result<SemanticScores>;
}

impl SemanticScorer for HogConfig {
    fn score(&self, grid: &PatchGrid) -> Result<SemanticScores> {
        hog_score(grid, self)
    }
}

pub fn hog_score(grid: &PatchGrid, cfg: &HogConfig) -> Result<SemanticScores> {
    if grid.num_patches() == 0 {
        return Err(Error::Contract("HOG scoring of an empty grid".into()));
    }
    if cfg.bins < 2 {
        return Err(Error::Contract(format!("HOG needs at least 2 bins, got {}", cfg.bins)));
    }
    let scores = (0..grid.num_patches())
        .map(|i| {
            let hist = patch_histogram(grid.patch(i), grid.patch_size(), grid.channels(), cfg.bins);
            match cfg.reduction {
                Reduction::L1 => hist.iter().sum(),
                Reduction::L2 => hist.iter().map(|h| h * h).sum::<f64>().sqrt(),
            }
        })
        .collect();
    SemanticScores::new(scores, cfg.reduction)
}

fn gray(patch: &[f32], p: usize, channels: usize) -> Vec<f64> {
    match channels {
        1 => patch.iter().map(|&v| v as f64).collect(),
        _ => patch
            .chunks_exact(channels)
            .take(p * p)
            .map(|px| crate::imaging::luma(px[0] as f64, px[1] as f64, px[2] as f64))
            .collect(),
    }
}

/// Derivative along one axis at position `i` of a line of length `n`.
fn diff(at: impl Fn(usize) -> f64, i: usize, n: usize) -> f64 {
    if n < 2 {
        0.0
    } else if i == 0 {
        at(1) - at(0)
    } else if i == n - 1 {
        at(n - 1) - at(n - 2)
    } else {
        (at(i + 1) - at(i - 1)) / 2.0
    }
}

pub(crate) fn patch_histogram(patch: &[f32], p: usize, channels: usize, bins: usize) -> Vec<f64> {
    let g = gray(patch, p, channels);
    let bin_width = 180.0 / bins as f64;
    let mut hist = vec![0.0; bins];
    for y in 0..p {
        for x in 0..p {
            let gx = diff(|i| g[y * p + i], x, p);
            let gy = diff(|i| g[i * p + x], y, p);
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let mut angle = gy.atan2(gx).to_degrees();
            if angle < 0.0 {
                angle += 180.0;
            }
            if angle >= 180.0 {
                angle -= 180.0;
            }
            // Position relative to bin centres at (b + 0.5)·width.
            let pos = angle / bin_width - 0.5;
            let lo = pos.floor();
            let frac = pos - lo;
            let lo_bin = (lo as i64).rem_euclid(bins as i64) as usize;
            let hi_bin = (lo_bin + 1) % bins;
            hist[lo_bin] += mag * (1.0 - frac);
            hist[hi_bin] += mag * frac;
        }
    }
    hist
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_from(patches: &[Vec<f32>], p: usize) -> PatchGrid {
        PatchGrid::from_values(p, 1, patches.len(), 1, patches.concat()).unwrap()
    }

    fn step_edge(contrast: f32) -> Vec<f32> {
        (0..64).map(|i| if i % 8 >= 4 { contrast } else { 0.0 }).collect()
    }

    #[test]
    fn constant_patch_scores_zero() {
        let grid = grid_from(&[vec![0.3; 64]], 8);
        assert_eq!(hog_score(&grid, &HogConfig::default()).unwrap().as_slice(), &[0.0]);
    }

    #[test]
    fn stronger_edge_scores_higher() {
        let grid = grid_from(&[step_edge(1.0), step_edge(0.25)], 8);
        let s = hog_score(&grid, &HogConfig::default()).unwrap();
        assert!(s.as_slice()[0] > s.as_slice()[1]);
    }

    #[test]
    fn step_edge_l1_equals_hand_gradient_sum() {
        // Each row [0,0,0,0,1,1,1,1] has centered differences 0.5 at columns
        // 3 and 4 and zero elsewhere (one-sided borders read 0-0 and 1-1), so
        // the row contributes 1.0 and eight rows contribute 8.0.
        let cfg = HogConfig { bins: 9, reduction: Reduction::L1 };
        let s = hog_score(&grid_from(&[step_edge(1.0)], 8), &cfg).unwrap();
        assert!((s.as_slice()[0] - 8.0).abs() < 1e-12);
    }

    #[test]
    fn vote_split_conserves_magnitude() {
        let patch: Vec<f32> = (0..36).map(|i| ((i * 7 % 11) as f32) / 10.0).collect();
        let hist = patch_histogram(&patch, 6, 1, 9);
        let g: Vec<f64> = patch.iter().map(|&v| v as f64).collect();
        let mut total = 0.0;
        for y in 0..6 {
            for x in 0..6 {
                let gx = diff(|i| g[y * 6 + i], x, 6);
                let gy = diff(|i| g[i * 6 + x], y, 6);
                total += (gx * gx + gy * gy).sqrt();
            }
        }
        assert!((hist.iter().sum::<f64>() - total).abs() < 1e-12);
    }

    #[test]
    fn horizontal_gradient_lands_between_wrapping_bins() {
        // Orientation 0° sits halfway between the last and first bin centres.
        let hist = patch_histogram(&step_edge(1.0), 8, 1, 9);
        assert!((hist[0] - 4.0).abs() < 1e-12 && (hist[8] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn zero_iff_constant() {
        for seed in 0..200u64 {
            let mut patch: Vec<f32> = vec![0.5; 16];
            let k = (seed % 16) as usize;
            patch[k] = 0.5 + (seed as f32 + 1.0) / 1000.0;
            let grid = grid_from(&[patch], 4);
            assert!(hog_score(&grid, &HogConfig::default()).unwrap().as_slice()[0] > 0.0);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let grid = grid_from(&[vec![0.0; 4]], 2);
        assert!(hog_score(&grid, &HogConfig { bins: 1, reduction: Reduction::L2 }).is_err());
        let empty = PatchGrid::from_values(2, 0, 0, 1, vec![]).unwrap();
        assert!(hog_score(&empty, &HogConfig::default()).is_err());
    }
}
