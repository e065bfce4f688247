use std::path::Path;

use image::{GrayImage, ImageBuffer as RawImage, Luma, Rgb, RgbImage};

use crate::ndgrad::Tensor;
use crate::scalar::Scalar;

use super::SynthError;

/// `height x width x channels` raster, row-major and channel-interleaved,
/// with every pixel in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer<T> {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<T>,
}

impl<T: Scalar> ImageBuffer<T> {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<T>) -> Result<Self, SynthError> {
        if height == 0 || width == 0 || !(channels == 1 || channels == 3) {
            return Err(SynthError::Invalid(format!("image {height}x{width}x{channels}")));
        }
        if pixels.len() != height * width * channels {
            return Err(SynthError::Invalid(format!(
                "image {height}x{width}x{channels} needs {} pixels, got {}",
                height * width * channels,
                pixels.len()
            )));
        }
        if let Some(p) = pixels.iter().find(|p| !(**p >= T::zero() && **p <= T::one())) {
            return Err(SynthError::Invalid(format!("pixel value {p} outside [0, 1]")));
        }
        Ok(Self { height, width, channels, pixels })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: T) -> Self {
        let v = value.max(T::zero()).min(T::one());
        Self { height, width, channels, pixels: vec![v; height * width * channels] }
    }

    /// Builds an image from arbitrary values, clamping into `[0, 1]` (NaN maps to 0).
    pub fn from_clamped(height: usize, width: usize, channels: usize, values: Vec<T>) -> Self {
        assert_eq!(values.len(), height * width * channels);
        let pixels = values.into_iter().map(clamp01).collect();
        Self { height, width, channels, pixels }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[T] {
        &self.pixels
    }

    /// Raw interleaved storage; writers are responsible for keeping values in `[0, 1]`.
    pub fn pixels_mut(&mut self) -> &mut [T] {
        &mut self.pixels
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> T {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    /// Writes a value, clamped into `[0, 1]`.
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: T) {
        self.pixels[(y * self.width + x) * self.channels + c] = clamp01(v);
    }

    /// Mean over channels.
    pub fn luma(&self, y: usize, x: usize) -> T {
        let base = (y * self.width + x) * self.channels;
        let s: T = self.pixels[base..base + self.channels].iter().copied().sum();
        s / T::from_usize(self.channels).unwrap()
    }

    /// Rows `[y0, y0 + rows)` as a new image.
    pub fn crop(&self, y0: usize, x0: usize, rows: usize, cols: usize) -> Self {
        assert!(y0 + rows <= self.height && x0 + cols <= self.width, "crop out of bounds");
        let mut pixels = Vec::with_capacity(rows * cols * self.channels);
        for y in y0..y0 + rows {
            let start = (y * self.width + x0) * self.channels;
            pixels.extend_from_slice(&self.pixels[start..start + cols * self.channels]);
        }
        Self { height: rows, width: cols, channels: self.channels, pixels }
    }

    /// `[1, C, H, W]` tensor with values mapped by `f`.
    pub fn to_tensor(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        let (h, w, c) = (self.height, self.width, self.channels);
        Tensor::from_fn(&[1, c, h, w], |i| {
            let ch = i / (h * w);
            let rest = i % (h * w);
            f(self.pixels[rest * c + ch])
        })
    }

    /// Inverse of [`to_tensor`](Self::to_tensor) for a single-sample tensor, clamping into `[0, 1]`.
    pub fn from_tensor(t: &Tensor<T>, f: impl Fn(T) -> T) -> Self {
        let s = t.shape();
        assert!(s.len() == 4 && s[0] == 1, "expected [1, C, H, W], got {s:?}");
        let (c, h, w) = (s[1], s[2], s[3]);
        let mut values = vec![T::zero(); c * h * w];
        for ch in 0..c {
            for i in 0..h * w {
                values[i * c + ch] = f(t.data()[ch * h * w + i]);
            }
        }
        Self::from_clamped(h, w, c, values)
    }

    /// Bilinear resize (align-corners-false).
    pub fn resize(&self, height: usize, width: usize) -> Self {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let t = self.to_tensor(|v| v);
        let geom = crate::ndgrad::kernels_resize(self.channels, self.height, self.width, height, width);
        let out = geom.forward(t.data());
        let t = Tensor::new(vec![1, self.channels, height, width], out).expect("resize shape");
        Self::from_tensor(&t, |v| v)
    }

    pub fn to_gray(&self) -> Self {
        if self.channels == 1 {
            return self.clone();
        }
        let mut pixels = Vec::with_capacity(self.height * self.width);
        for y in 0..self.height {
            for x in 0..self.width {
                pixels.push(self.luma(y, x));
            }
        }
        Self { height: self.height, width: self.width, channels: 1, pixels }
    }

    pub fn with_channels(&self, channels: usize) -> Self {
        match (self.channels, channels) {
            (a, b) if a == b => self.clone(),
            (3, 1) => self.to_gray(),
            (1, 3) => {
                let pixels = self.pixels.iter().flat_map(|&p| [p, p, p]).collect();
                Self { height: self.height, width: self.width, channels: 3, pixels }
            }
            _ => panic!("unsupported channel conversion {} -> {channels}", self.channels),
        }
    }

    /// 8-bit samples, `round(p * 255)`.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.pixels.iter().map(|p| (p.to_f64_lossy() * 255.0).round().clamp(0.0, 255.0) as u8).collect()
    }

    pub fn save_png(&self, path: &Path) -> Result<(), SynthError> {
        let (w, h) = (self.width as u32, self.height as u32);
        let bytes = self.to_bytes();
        let res = if self.channels == 1 {
            GrayImage::from_raw(w, h, bytes).expect("buffer size").save(path)
        } else {
            RgbImage::from_raw(w, h, bytes).expect("buffer size").save(path)
        };
        res.map_err(|e| SynthError::Write { file: path.display().to_string(), message: e.to_string() })
    }

    pub fn encode_png(&self) -> Vec<u8> {
        let (w, h) = (self.width as u32, self.height as u32);
        let mut out = std::io::Cursor::new(Vec::new());
        let bytes = self.to_bytes();
        if self.channels == 1 {
            let img: RawImage<Luma<u8>, _> = RawImage::from_raw(w, h, bytes).expect("buffer size");
            img.write_to(&mut out, image::ImageFormat::Png).expect("png encode to memory");
        } else {
            let img: RawImage<Rgb<u8>, _> = RawImage::from_raw(w, h, bytes).expect("buffer size");
            img.write_to(&mut out, image::ImageFormat::Png).expect("png encode to memory");
        }
        out.into_inner()
    }

    /// Loads an 8-bit PNG as grayscale (`channels == 1`) or RGB.
    pub fn load_png(path: &Path, channels: usize) -> Result<Self, SynthError> {
        let img = image::open(path).map_err(|e| SynthError::Read { file: path.display().to_string(), message: e.to_string() })?;
        let scale = T::lit(255.0);
        let (w, h) = (img.width() as usize, img.height() as usize);
        let pixels: Vec<T> = if channels == 1 {
            img.to_luma8().into_raw().into_iter().map(|b| T::from_u8(b).unwrap() / scale).collect()
        } else {
            img.to_rgb8().into_raw().into_iter().map(|b| T::from_u8(b).unwrap() / scale).collect()
        };
        Self::new(h, w, channels, pixels)
    }
}

fn clamp01<T: Scalar>(v: T) -> T {
    if v.is_nan() {
        T::zero()
    } else {
        v.max(T::zero()).min(T::one())
    }
}
