//! Float images and their PNG / binary PPM encodings.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma, Rgb};

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;
use crate::real::Real;

/// Row-major `height × width × channels` image with values nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::dim("image", &[height, width, channels], &[data.len()]));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f32] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    /// `(H·W) × C` tensor view, one row per pixel.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::new(
            &[self.width * self.height, self.channels],
            self.data.iter().map(|&v| T::c(v as f64)).collect(),
        )
        .expect("image tensor shape")
    }

    pub fn from_tensor<T: Real>(t: &Tensor<T>, width: usize, height: usize) -> Result<Self> {
        if t.rows() != width * height {
            return Err(Error::dim("image_from_tensor", t.shape(), &[width * height]));
        }
        Self::new(
            width,
            height,
            t.cols(),
            t.data().iter().map(|v| v.f64() as f32).collect(),
        )
    }

    /// Round trip through 8-bit storage.
    pub fn quantized(&self) -> Self {
        Self {
            data: self
                .data
                .iter()
                .map(|&v| to_u8(v) as f32 / 255.0)
                .collect(),
            ..self.clone()
        }
    }

    pub fn to_bytes_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| to_u8(v)).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let (w, h) = (self.width as u32, self.height as u32);
        let bytes = self.to_bytes_u8();
        let dynamic = match self.channels {
            1 => DynamicImage::ImageLuma8(
                ImageBuffer::<Luma<u8>, _>::from_raw(w, h, bytes).expect("luma buffer"),
            ),
            3 => DynamicImage::ImageRgb8(
                ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, bytes).expect("rgb buffer"),
            ),
            c => {
                return Err(Error::contract(format!(
                    "only 1- or 3-channel images can be written, got {c}"
                )))
            }
        };
        let format = match path.extension().and_then(|e| e.to_str()) {
            Some("ppm") | Some("pgm") | Some("pnm") => ImageFormat::Pnm,
            _ => ImageFormat::Png,
        };
        dynamic.save_with_format(path, format)?;
        Ok(())
    }

    /// Loads PNG or PPM as RGB, or as a single channel when `gray` is set.
    pub fn load(path: &Path, gray: bool) -> Result<Self> {
        let img = image::open(path)?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        let (channels, raw) = if gray {
            (1, img.into_luma8().into_raw())
        } else {
            (3, img.into_rgb8().into_raw())
        };
        Self::new(w, h, channels, raw.into_iter().map(|v| v as f32 / 255.0).collect())
    }
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}
