//! Grayscale float images, PGM I/O and Gaussian blur.

use std::io::Cursor;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageFormat};

use crate::FeatureError;

/// Row-major grayscale image with intensities nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Image {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Image { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Pixel lookup with coordinates clamped to the border.
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let cx = x.clamp(0, self.width as isize - 1) as usize;
        let cy = y.clamp(0, self.height as isize - 1) as usize;
        self.get(cx, cy)
    }

    pub fn pixels(&self) -> &[f64] {
        &self.data
    }

    /// Every second pixel in each direction.
    pub fn downsample(&self) -> Image {
        let (w, h) = (self.width.div_ceil(2), self.height.div_ceil(2));
        Image::from_fn(w, h, |x, y| self.get(2 * x, 2 * y))
    }

    pub fn subtract(&self, other: &Image) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    /// Quarter turn clockwise as displayed (x right, y down).
    pub fn rotate90(&self) -> Image {
        Image::from_fn(self.height, self.width, |x, y| self.get(y, self.height - 1 - x))
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Image, FeatureError> {
        let img = image::load(Cursor::new(bytes), ImageFormat::Pnm)?.into_luma8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        Ok(Image {
            width: w,
            height: h,
            data: img.pixels().map(|p| p.0[0] as f64 / 255.0).collect(),
        })
    }

    /// 8-bit binary PGM; values are clamped to `[0, 1]`.
    pub fn to_pgm(&self) -> Vec<u8> {
        let bytes: Vec<u8> = self.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        let mut out = Vec::new();
        PnmEncoder::new(&mut out)
            .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
            .write_image(&bytes, self.width as u32, self.height as u32, ExtendedColorType::L8)
            .expect("in-memory PGM encoding");
        out
    }

    pub fn load(path: &Path) -> Result<Image, FeatureError> {
        Self::from_pgm(&std::fs::read(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), FeatureError> {
        std::fs::write(path, self.to_pgm())?;
        Ok(())
    }
}

/// Sampled, normalized 1-D Gaussian of radius ⌈3σ⌉.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>, FeatureError> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(FeatureError::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    let r = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    for v in &mut k {
        *v /= s;
    }
    Ok(k)
}

/// Separable Gaussian convolution with clamped borders.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Result<Image, FeatureError> {
    let k = gaussian_kernel(sigma)?;
    let r = (k.len() / 2) as isize;
    let (w, h) = (img.width, img.height);
    let horizontal = Image::from_fn(w, h, |x, y| {
        k.iter()
            .enumerate()
            .map(|(i, kv)| kv * img.get_clamped(x as isize + i as isize - r, y as isize))
            .sum()
    });
    Ok(Image::from_fn(w, h, |x, y| {
        k.iter()
            .enumerate()
            .map(|(i, kv)| kv * horizontal.get_clamped(x as isize, y as isize + i as isize - r))
            .sum()
    }))
}
