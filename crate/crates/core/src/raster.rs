//! Float RGB images and their PNG interchange.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Pixel rectangle `[x, x + width) × [y, y + height)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    pub fn new(x: usize, y: usize, width: usize, height: usize) -> Self {
        Rect {
            x,
            y,
            width,
            height,
        }
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }

    pub fn fits_in(&self, width: usize, height: usize) -> bool {
        self.width > 0 && self.height > 0 && self.x + self.width <= width && self.y + self.height <= height
    }
}

/// Interleaved RGB image with `f32` channels, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height * 3 {
            return Err(Error::invalid(format!(
                "{width}×{height} RGB image needs {} values, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(Image {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let data = (0..width * height).flat_map(|_| rgb).collect();
        Image {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn pixels(&self) -> impl Iterator<Item = [f32; 3]> + '_ {
        self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    pub fn crop(&self, rect: Rect) -> Image {
        assert!(rect.fits_in(self.width, self.height), "crop out of bounds");
        let mut data = Vec::with_capacity(rect.area() * 3);
        for y in rect.y..rect.y + rect.height {
            let start = (y * self.width + rect.x) * 3;
            data.extend_from_slice(&self.data[start..start + rect.width * 3]);
        }
        Image {
            width: rect.width,
            height: rect.height,
            data,
        }
    }

    /// Planar 3×H×W tensor.
    pub fn to_tensor(&self) -> Tensor {
        let plane = self.width * self.height;
        let mut out = vec![0.0; plane * 3];
        for (i, p) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * plane + i] = p[c];
            }
        }
        Tensor::new(&[3, self.height, self.width], out).expect("image shape")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let &[3, h, w] = t.shape() else {
            return Err(Error::invalid(format!(
                "expected a 3×H×W tensor, got {:?}",
                t.shape()
            )));
        };
        let plane = h * w;
        let src = t.data();
        let data = (0..plane)
            .flat_map(|i| [src[i], src[plane + i], src[2 * plane + i]])
            .collect();
        Image::new(w, h, data)
    }

    pub fn mean_abs_diff(&self, other: &Image) -> f32 {
        assert_eq!(self.data.len(), other.data.len());
        let total: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs() as f64)
            .sum();
        (total / self.data.len() as f64) as f32
    }

    /// Peak signal-to-noise ratio in dB for unit-range images.
    pub fn psnr(&self, other: &Image) -> f64 {
        assert_eq!(self.data.len(), other.data.len());
        let mse: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| ((a - b) as f64).powi(2))
            .sum::<f64>()
            / self.data.len() as f64;
        if mse == 0.0 {
            f64::INFINITY
        } else {
            -10.0 * mse.log10()
        }
    }

    pub fn mean_color(&self) -> [f64; 3] {
        let mut sum = [0.0f64; 3];
        for p in self.pixels() {
            for c in 0..3 {
                sum[c] += p[c] as f64;
            }
        }
        let n = (self.width * self.height) as f64;
        sum.map(|s| s / n)
    }

    /// 8-bit quantization used for PNG output.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        Image::new(
            width,
            height,
            bytes.iter().map(|&b| b as f32 / 255.0).collect(),
        )
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        image::save_buffer_with_format(
            path,
            &self.to_rgb8(),
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
            image::ImageFormat::Png,
        )
        .map_err(|source| Error::Image {
            path: path.into(),
            source,
        })
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path)
            .map_err(|source| Error::Image {
                path: path.into(),
                source,
            })?
            .to_rgb8();
        let (w, h) = img.dimensions();
        Image::from_rgb8(w as usize, h as usize, img.as_raw())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_round_trip() {
        let img = Image::new(2, 1, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let t = img.to_tensor();
        assert_eq!(t.shape(), &[3, 1, 2]);
        assert_eq!(t.at(&[1, 0, 1]), 0.5);
        assert_eq!(Image::from_tensor(&t).unwrap(), img);
    }

    #[test]
    fn png_round_trip_is_8bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let img = Image::from_rgb8(3, 2, &[0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100, 110, 120, 130, 140, 250, 251, 255]).unwrap();
        img.save_png(&path).unwrap();
        assert_eq!(Image::load_png(&path).unwrap(), img);
    }

    #[test]
    fn crop_picks_the_rectangle() {
        let mut img = Image::filled(4, 4, [0.0; 3]);
        img.set_pixel(2, 1, [1.0, 0.5, 0.25]);
        let c = img.crop(Rect::new(1, 1, 2, 2));
        assert_eq!(c.pixel(1, 0), [1.0, 0.5, 0.25]);
        assert_eq!(c.width(), 2);
    }
}
