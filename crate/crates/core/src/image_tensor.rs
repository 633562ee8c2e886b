//! `ImageTensor`: an H×W×C image with intensities in [0,1], plus PNG I/O.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Height × width × channels, interleaved (HWC), every element in [0,1].
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    /// Validates shape and range.
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        Self::check_shape(height, width, channels, data.len())?;
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("pixel value {bad} outside [0,1]")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Clamps every value into [0,1]; NaN becomes 0.
    pub fn from_vec_clamped(height: usize, width: usize, channels: usize, mut data: Vec<f32>) -> Result<Self> {
        Self::check_shape(height, width, channels, data.len())?;
        for v in &mut data {
            *v = clamp01(*v);
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Self::from_vec_clamped(height, width, channels, vec![value; height * width * channels])
            .expect("valid image shape")
    }

    fn check_shape(height: usize, width: usize, channels: usize, len: usize) -> Result<()> {
        if height == 0 || width == 0 {
            return Err(Error::invalid(format!("image must be at least 1×1, got {height}×{width}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!("image must have 1 or 3 channels, got {channels}")));
        }
        if len != height * width * channels {
            return Err(Error::invalid(format!(
                "data length {len} does not match {height}×{width}×{channels}"
            )));
        }
        Ok(())
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

    /// `(height, width, channels)`
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn same_shape(&self, other: &ImageTensor) -> bool {
        self.shape() == other.shape()
    }

    pub(crate) fn require_same_shape(&self, other: &ImageTensor) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )))
        }
    }

    /// Rectangular crop.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 || top + height > self.height || left + width > self.width {
            return Err(Error::invalid(format!(
                "crop {height}×{width} at ({top},{left}) exceeds image {}×{}",
                self.height, self.width
            )));
        }
        let c = self.channels;
        let mut data = Vec::with_capacity(height * width * c);
        for y in top..top + height {
            let row = (y * self.width + left) * c;
            data.extend_from_slice(&self.data[row..row + width * c]);
        }
        Ok(Self {
            height,
            width,
            channels: c,
            data,
        })
    }

    /// Reflection-pads bottom and right edges so both sides become multiples of `multiple`.
    pub fn reflect_pad_to_multiple(&self, multiple: usize) -> Self {
        let ph = self.height.div_ceil(multiple) * multiple;
        let pw = self.width.div_ceil(multiple) * multiple;
        self.reflect_pad(ph, pw)
    }

    /// Reflection-pads (mirror without repeating the edge) to `height × width`.
    pub fn reflect_pad(&self, height: usize, width: usize) -> Self {
        assert!(height >= self.height && width >= self.width);
        let c = self.channels;
        let mut data = Vec::with_capacity(height * width * c);
        for y in 0..height {
            let sy = reflect(y, self.height);
            for x in 0..width {
                let sx = reflect(x, self.width);
                let i = (sy * self.width + sx) * c;
                data.extend_from_slice(&self.data[i..i + c]);
            }
        }
        Self {
            height,
            width,
            channels: c,
            data,
        }
    }

    /// Luma (0.299 R + 0.587 G + 0.114 B) as f64, or the single channel itself.
    pub fn luma(&self) -> Vec<f64> {
        if self.channels == 1 {
            return self.data.iter().map(|&v| v as f64).collect();
        }
        self.data
            .chunks(3)
            .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
            .collect()
    }

    /// One channel as f64 plane.
    pub fn channel_plane(&self, c: usize) -> Vec<f64> {
        self.data
            .iter()
            .skip(c)
            .step_by(self.channels)
            .map(|&v| v as f64)
            .collect()
    }

    /// `[1, C, H, W]` network tensor.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let (h, w, c) = self.shape();
        let mut data = vec![T::zero(); h * w * c];
        for (i, px) in self.data.chunks(c).enumerate() {
            for (ch, &v) in px.iter().enumerate() {
                data[ch * h * w + i] = T::from_f64_lossy(v as f64);
            }
        }
        Tensor::from_vec([1, c, h, w], data)
    }

    /// Sample `n` of an NCHW tensor, clamped into [0,1].
    pub fn from_tensor<T: Real>(t: &Tensor<T>, n: usize) -> Result<Self> {
        let [_, c, h, w] = t.shape();
        let plane = t.sample(n);
        let mut data = vec![0.0f32; h * w * c];
        for ch in 0..c {
            for i in 0..h * w {
                data[i * c + ch] = plane[ch * h * w + i].as_f64() as f32;
            }
        }
        Self::from_vec_clamped(h, w, c, data)
    }

    /// Loads an 8-bit image, converting to RGB unless it is single-channel.
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_dynamic(&img))
    }

    /// Loads an image forced to three channels.
    pub fn load_rgb(path: &Path) -> Result<Self> {
        let img = Self::load(path)?;
        Ok(img.to_rgb())
    }

    pub fn from_dynamic(img: &DynamicImage) -> Self {
        match img {
            DynamicImage::ImageLuma8(_) | DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA8(_) => {
                let g = img.to_luma8();
                let (w, h) = g.dimensions();
                let data = g.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
                Self::from_vec_clamped(h as usize, w as usize, 1, data).expect("decoded image")
            }
            _ => {
                let rgb = img.to_rgb8();
                let (w, h) = rgb.dimensions();
                let data = rgb.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
                Self::from_vec_clamped(h as usize, w as usize, 3, data).expect("decoded image")
            }
        }
    }

    pub fn to_rgb(&self) -> Self {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        Self {
            height: self.height,
            width: self.width,
            channels: 3,
            data,
        }
    }

    /// 8-bit quantization, `round(v·255)`.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| (v * 255.0).round() as u8).collect()
    }

    /// Rounds every value onto the 8-bit grid, matching a save/load round trip.
    pub fn quantized(&self) -> Self {
        let data = self.to_u8().into_iter().map(|v| v as f32 / 255.0).collect();
        Self {
            data,
            ..self.clone()
        }
    }

    /// Writes an 8-bit PNG.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let (w, h) = (self.width as u32, self.height as u32);
        let bytes = self.to_u8();
        let result = if self.channels == 3 {
            ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, bytes)
                .expect("buffer size")
                .save_with_format(path, image::ImageFormat::Png)
        } else {
            ImageBuffer::<Luma<u8>, _>::from_raw(w, h, bytes)
                .expect("buffer size")
                .save_with_format(path, image::ImageFormat::Png)
        };
        result.map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}

fn clamp01(v: f32) -> f32 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}
