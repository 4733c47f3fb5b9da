use super::Image;
use crate::error::{Error, Result};

/// An image cut into `N = (H·W)/p²` non-overlapping `p×p` patches in
/// row-major patch order. Each patch row holds `p²·C` values in `[0, 1]`,
/// laid out pixel-major with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    patch_size: usize,
    rows: usize,
    cols: usize,
    channels: usize,
    values: Vec<f32>,
}

impl PatchGrid {
    pub fn from_values(
        patch_size: usize,
        rows: usize,
        cols: usize,
        channels: usize,
        values: Vec<f32>,
    ) -> Result<Self> {
        if values.len() != rows * cols * patch_size * patch_size * channels {
            return Err(Error::Contract(format!(
                "{} values cannot fill a {rows}x{cols} grid of {patch_size}px patches with {channels} channels",
                values.len()
            )));
        }
        Ok(Self {
            patch_size,
            rows,
            cols,
            channels,
            values,
        })
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn num_patches(&self) -> usize {
        self.rows * self.cols
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn patch(&self, i: usize) -> &[f32] {
        let d = self.patch_dim();
        &self.values[i * d..(i + 1) * d]
    }

    pub fn patch_mut(&mut self, i: usize) -> &mut [f32] {
        let d = self.patch_dim();
        &mut self.values[i * d..(i + 1) * d]
    }
}

pub fn patchify(img: &Image, p: usize) -> Result<PatchGrid> {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(Error::Contract(format!(
            "image of H={h}, W={w} is not divisible into patches of p={p}"
        )));
    }
    let (rows, cols) = (h / p, w / p);
    let mut values = Vec::with_capacity(w * h * c);
    for pr in 0..rows {
        for pc in 0..cols {
            for y in pr * p..(pr + 1) * p {
                let start = (y * w + pc * p) * c;
                values.extend(img.pixels()[start..start + p * c].iter().map(|&v| v as f32 / 255.0));
            }
        }
    }
    PatchGrid::from_values(p, rows, cols, c, values)
}

pub fn unpatchify(grid: &PatchGrid) -> Result<Image> {
    let (p, c) = (grid.patch_size, grid.channels);
    let (w, h) = (grid.cols * p, grid.rows * p);
    let mut pixels = vec![0u8; w * h * c];
    for pr in 0..grid.rows {
        for pc in 0..grid.cols {
            let patch = grid.patch(pr * grid.cols + pc);
            for dy in 0..p {
                let start = ((pr * p + dy) * w + pc * p) * c;
                for (dst, &v) in pixels[start..start + p * c]
                    .iter_mut()
                    .zip(&patch[dy * p * c..(dy + 1) * p * c])
                {
                    *dst = (v * 255.0).round().clamp(0.0, 255.0) as u8;
                }
            }
        }
    }
    Image::new(w, h, c, pixels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn paper_default_geometry() {
        let img = Image::filled(224, 224, 3, 8).unwrap();
        let grid = patchify(&img, 16).unwrap();
        assert_eq!(grid.num_patches(), 196);
        assert_eq!(grid.patch_dim(), 768);
    }

    #[test]
    fn single_patch_is_whole_image() {
        let pixels: Vec<u8> = (0..64).collect();
        let img = Image::new(8, 8, 1, pixels.clone()).unwrap();
        let grid = patchify(&img, 8).unwrap();
        assert_eq!(grid.num_patches(), 1);
        let expected: Vec<f32> = pixels.iter().map(|&v| v as f32 / 255.0).collect();
        assert_eq!(grid.patch(0), expected.as_slice());
    }

    #[test]
    fn patches_are_row_major_windows() {
        // 4x4 gray image, p=2: patch 1 is the top-right 2x2 window.
        let img = Image::new(4, 4, 1, (0..16).collect()).unwrap();
        let grid = patchify(&img, 2).unwrap();
        let got: Vec<u8> = grid.patch(1).iter().map(|v| (v * 255.0).round() as u8).collect();
        assert_eq!(got, vec![2, 3, 6, 7]);
    }

    #[test]
    fn non_divisible_names_dimensions() {
        let img = Image::filled(10, 12, 1, 0).unwrap();
        let msg = patchify(&img, 8).unwrap_err().to_string();
        assert!(msg.contains("H=12") && msg.contains("W=10") && msg.contains("p=8"), "{msg}");
    }

    proptest! {
        #[test]
        fn unpatchify_inverts_patchify(p in 1usize..6, rows in 1usize..6, cols in 1usize..6,
                                       rgb in any::<bool>(), seed in any::<u64>()) {
            let c = if rgb { 3 } else { 1 };
            let (w, h) = (cols * p, rows * p);
            let pixels: Vec<u8> = (0..w * h * c)
                .map(|i| (crate::keyed::mix64(seed ^ i as u64) & 0xff) as u8)
                .collect();
            let img = Image::new(w, h, c, pixels).unwrap();
            prop_assert_eq!(unpatchify(&patchify(&img, p).unwrap()).unwrap(), img);
        }
    }
}
