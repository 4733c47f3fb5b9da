//! 64-bit DCT perceptual hash.
//!
//! Recipe: luma (0.299R + 0.587G + 0.114B), bilinear resize to 32×32,
//! unnormalized 2-D DCT-II, keep the top-left 8×8 block. The DC slot is
//! always 0; each of the other 63 coefficients sets its bit when it is
//! strictly greater than the median of those 63. Coefficient `(u, v)` maps
//! to bit `63 - (8u + v)`, so the hex rendering reads row-major.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use super::{resize_plane, Image};
use crate::error::{Error, Result};

const SIDE: usize = 32;
const BLOCK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct PerceptualHash(pub u64);

impl PerceptualHash {
    pub fn bits(self) -> u64 {
        self.0
    }

    pub fn distance(self, other: Self) -> u32 {
        hamming(self, other)
    }
}

impl fmt::Display for PerceptualHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl FromStr for PerceptualHash {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.len() != 16 {
            return Err(Error::Parse {
                offset: 0,
                message: format!("perceptual hash must be 16 hex digits, got {s:?}"),
            });
        }
        u64::from_str_radix(s, 16)
            .map(PerceptualHash)
            .map_err(|e| Error::Parse {
                offset: 0,
                message: format!("bad perceptual hash {s:?}: {e}"),
            })
    }
}

pub fn hamming(a: PerceptualHash, b: PerceptualHash) -> u32 {
    (a.0 ^ b.0).count_ones()
}

/// `cos(pi/32 · (n + 1/2) · k)` for `k < 8`, `n < 32`.
fn dct_table() -> &'static [[f64; SIDE]; BLOCK] {
    static TABLE: OnceLock<[[f64; SIDE]; BLOCK]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [[0.0; SIDE]; BLOCK];
        for (k, row) in t.iter_mut().enumerate() {
            for (n, v) in row.iter_mut().enumerate() {
                *v = (PI / SIDE as f64 * (n as f64 + 0.5) * k as f64).cos();
            }
        }
        t
    })
}

/// Top-left 8×8 DCT-II coefficients of the 32×32 luma thumbnail, row-major.
pub(crate) fn low_frequency_block(img: &Image) -> [f64; BLOCK * BLOCK] {
    let gray = img.gray_plane();
    let small = resize_plane(&gray, img.width(), img.height(), SIDE, SIDE);
    let table = dct_table();
    // Separable transform: rows first (32 rows × 8 frequencies), then columns.
    let mut row_pass = [[0.0; BLOCK]; SIDE];
    for (y, out) in row_pass.iter_mut().enumerate() {
        let row = &small[y * SIDE..(y + 1) * SIDE];
        for (v, o) in out.iter_mut().enumerate() {
            *o = row.iter().zip(&table[v]).map(|(a, b)| a * b).sum();
        }
    }
    let mut block = [0.0; BLOCK * BLOCK];
    for u in 0..BLOCK {
        for v in 0..BLOCK {
            block[u * BLOCK + v] = (0..SIDE).map(|y| table[u][y] * row_pass[y][v]).sum();
        }
    }
    block
}

pub fn phash64(img: &Image) -> PerceptualHash {
    let block = low_frequency_block(img);
    let mut ac: Vec<f64> = block[1..].to_vec();
    ac.sort_by(f64::total_cmp);
    let median = ac[ac.len() / 2];
    let bits = block
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, &c)| c > median)
        .fold(0u64, |acc, (i, _)| acc | 1u64 << (63 - i));
    PerceptualHash(bits)
}
