//! Bilinear resampling with pixel-center alignment.

use super::Image;
use crate::error::Result;

/// Source coordinate and blend weight for one destination index along an axis.
fn taps(dst: usize, src_len: usize, dst_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = src_len as f64 / dst_len as f64;
    (0..dst)
        .map(|i| {
            let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(src_len - 1);
            (lo, hi, s - lo as f64)
        })
        .collect()
}

/// Resamples a single-channel `w×h` plane to `dw×dh`.
pub fn resize_plane(src: &[f64], w: usize, h: usize, dw: usize, dh: usize) -> Vec<f64> {
    let xs = taps(dw, w, dw);
    let ys = taps(dh, h, dh);
    let mut out = Vec::with_capacity(dw * dh);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Resamples the region `[x0, x0+rw) × [y0, y0+rh)` of `img` to `dw×dh`.
pub fn resize_region(
    img: &Image,
    (x0, y0, rw, rh): (usize, usize, usize, usize),
    dw: usize,
    dh: usize,
) -> Result<Image> {
    let region = img.crop(x0, y0, rw, rh)?;
    let c = img.channels();
    let xs = taps(dw, rw, dw);
    let ys = taps(dh, rh, dh);
    let px = |x: usize, y: usize, ch: usize| region.pixel(x, y, ch) as f64;
    let mut out = Vec::with_capacity(dw * dh * c);
    for &(ya, yb, fy) in &ys {
        for &(xa, xb, fx) in &xs {
            for ch in 0..c {
                let top = px(xa, ya, ch) * (1.0 - fx) + px(xb, ya, ch) * fx;
                let bottom = px(xa, yb, ch) * (1.0 - fx) + px(xb, yb, ch) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                out.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Image::new(dw, dh, c, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_resize_is_exact() {
        let src: Vec<f64> = (0..12).map(|v| v as f64).collect();
        assert_eq!(resize_plane(&src, 4, 3, 4, 3), src);
    }

    #[test]
    fn upsample_interpolates_between_centers() {
        let out = resize_plane(&[0.0, 4.0], 2, 1, 4, 1);
        assert_eq!(out, vec![0.0, 1.0, 3.0, 4.0]);
    }

    #[test]
    fn constant_stays_constant() {
        let img = Image::filled(10, 7, 3, 93).unwrap();
        let out = resize_region(&img, (2, 1, 5, 5), 16, 16).unwrap();
        assert!(out.pixels().iter().all(|&v| v == 93));
    }
}
