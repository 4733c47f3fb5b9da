//! Image decoding, patch grids, augmentation and perceptual hashing.

mod augment;
mod patch;
mod phash;
mod pnm;
mod resize;

use std::path::Path;

pub use augment::{augment, sample_augment, AugmentConfig, AugmentParams, CropBox};
pub use patch::{patchify, unpatchify, PatchGrid};
pub use phash::{hamming, phash64, PerceptualHash};
pub use pnm::encode_pnm;
pub use resize::{resize_plane, resize_region};

use crate::error::{Error, Result};

/// 8-bit image with interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Contract(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Contract(format!(
                "images have 1 or 3 channels, got {channels}"
            )));
        }
        if pixels.len() != width * height * channels {
            return Err(Error::Contract(format!(
                "{width}x{height}x{channels} image needs {} bytes, got {}",
                width * height * channels,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize, c: usize) -> u8 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    /// Luma plane with ITU-R 601 weights (identity for gray images).
    pub fn gray_plane(&self) -> Vec<f64> {
        match self.channels {
            1 => self.pixels.iter().map(|&v| v as f64).collect(),
            _ => self
                .pixels
                .chunks_exact(3)
                .map(|p| luma(p[0] as f64, p[1] as f64, p[2] as f64))
                .collect(),
        }
    }

    /// Converts between gray and RGB; gray is replicated, RGB uses luma.
    pub fn to_channels(&self, channels: usize) -> Result<Image> {
        match (self.channels, channels) {
            (a, b) if a == b => Ok(self.clone()),
            (1, 3) => {
                let pixels = self.pixels.iter().flat_map(|&v| [v, v, v]).collect();
                Image::new(self.width, self.height, 3, pixels)
            }
            (3, 1) => {
                let pixels = self
                    .gray_plane()
                    .into_iter()
                    .map(|v| v.round().clamp(0.0, 255.0) as u8)
                    .collect();
                Image::new(self.width, self.height, 1, pixels)
            }
            (_, c) => Err(Error::Contract(format!("cannot convert to {c} channels"))),
        }
    }

    /// Sub-image `[x0, x0+w) × [y0, y0+h)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Image> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(Error::Contract(format!(
                "crop {w}x{h}+{x0}+{y0} outside {}x{} image",
                self.width, self.height
            )));
        }
        let c = self.channels;
        let mut pixels = Vec::with_capacity(w * h * c);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * c;
            pixels.extend_from_slice(&self.pixels[start..start + w * c]);
        }
        Image::new(w, h, c, pixels)
    }

    pub fn flip_horizontal(&self) -> Image {
        let c = self.channels;
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for y in 0..self.height {
            for x in (0..self.width).rev() {
                let start = (y * self.width + x) * c;
                pixels.extend_from_slice(&self.pixels[start..start + c]);
            }
        }
        Image {
            pixels,
            ..self.clone()
        }
    }
}

pub(crate) fn luma(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Pgm,
    Ppm,
    Png,
}

impl ImageFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "pgm" => Some(ImageFormat::Pgm),
            "ppm" => Some(ImageFormat::Ppm),
            "png" => Some(ImageFormat::Png),
            _ => None,
        }
    }

    /// Sniffs the format from leading magic bytes.
    pub fn sniff(bytes: &[u8]) -> Option<Self> {
        match bytes {
            [b'P', b'5', ..] => Some(ImageFormat::Pgm),
            [b'P', b'6', ..] => Some(ImageFormat::Ppm),
            [0x89, b'P', b'N', b'G', ..] => Some(ImageFormat::Png),
            _ => None,
        }
    }
}

pub fn decode(bytes: &[u8], format: ImageFormat) -> Result<Image> {
    match format {
        ImageFormat::Pgm => pnm::decode_pnm(bytes, 1),
        ImageFormat::Ppm => pnm::decode_pnm(bytes, 3),
        ImageFormat::Png => decode_png(bytes),
    }
}

pub fn load(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let format = ImageFormat::sniff(&bytes)
        .or_else(|| ImageFormat::from_path(path))
        .ok_or_else(|| Error::Capability(format!("unrecognized image format: {}", path.display())))?;
    decode(&bytes, format)
}

pub fn save_pnm(img: &Image, path: &Path) -> Result<()> {
    std::fs::write(path, encode_pnm(img)).map_err(|e| Error::io(path, e))
}

#[cfg(feature = "png")]
fn decode_png(bytes: &[u8]) -> Result<Image> {
    let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Parse { offset: 0, message: e.to_string() })?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Parse { offset: 0, message: e.to_string() })?;
    buf.truncate(info.buffer_size());
    let (w, h) = (info.width as usize, info.height as usize);
    let (channels, pixels) = match info.color_type {
        png::ColorType::Grayscale => (1, buf),
        png::ColorType::Rgb => (3, buf),
        // Alpha is dropped: only the visible-light bands are kept.
        png::ColorType::GrayscaleAlpha => (1, buf.chunks_exact(2).map(|p| p[0]).collect()),
        png::ColorType::Rgba => (
            3,
            buf.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        ),
        png::ColorType::Indexed => {
            return Err(Error::Capability("unexpanded indexed PNG".into()));
        }
    };
    Image::new(w, h, channels, pixels)
}

#[cfg(not(feature = "png"))]
fn decode_png(_bytes: &[u8]) -> Result<Image> {
    Err(Error::Capability("PNG support was not compiled in".into()))
}
