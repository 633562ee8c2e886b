//! Whole-image dehazing: reflection padding to the generator's stride, optional overlapped
//! tiling for large inputs, and precision selection.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::generator::GeneratorNet;
use crate::image_tensor::ImageTensor;
use crate::tensor::Real;

/// Environment variable selecting inference precision (`f32` or `f64`).
pub const PRECISION_ENV: &str = "FSDEHAZE_PRECISION";
/// Overlap between neighbouring tiles, blended with linear ramps.
pub const TILE_OVERLAP: usize = 32;
/// Spatial stride of the generator; inputs are padded to a multiple of this.
pub const SIDE_MULTIPLE: usize = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "f32" | "float32" | "single" => Ok(Precision::F32),
            "f64" | "float64" | "double" => Ok(Precision::F64),
            other => Err(Error::Config(format!("{PRECISION_ENV}: expected f32 or f64, got {other:?}"))),
        }
    }
}

impl Precision {
    /// Reads [`PRECISION_ENV`]; unset means `f32`.
    pub fn from_env() -> Result<Self> {
        match std::env::var(PRECISION_ENV) {
            Ok(v) if !v.trim().is_empty() => v.parse(),
            _ => Ok(Precision::F32),
        }
    }
}

enum Net {
    F32(GeneratorNet<f32>),
    F64(GeneratorNet<f64>),
}

/// A generator ready for inference on arbitrary-size RGB images.
pub struct Dehazer {
    net: Net,
    tile: Option<usize>,
}

impl Dehazer {
    pub fn new(net: GeneratorNet<f32>, precision: Precision) -> Self {
        let net = match precision {
            Precision::F32 => Net::F32(net),
            Precision::F64 => Net::F64(net.cast()),
        };
        Self { net, tile: None }
    }

    /// Processes images larger than `tile` in overlapping `tile × tile` pieces.
    pub fn with_tile(mut self, tile: Option<usize>) -> Result<Self> {
        if let Some(t) = tile {
            check_tile(t)?;
        }
        self.tile = tile;
        Ok(self)
    }

    pub fn dehaze(&self, image: &ImageTensor) -> Result<ImageTensor> {
        match &self.net {
            Net::F32(n) => dehaze_any_size(n, image, self.tile),
            Net::F64(n) => dehaze_any_size(n, image, self.tile),
        }
    }
}

/// Tiles must be a multiple of 4 and wider than two overlaps.
pub fn check_tile(tile: usize) -> Result<()> {
    if tile % SIDE_MULTIPLE != 0 || tile <= 2 * TILE_OVERLAP {
        return Err(Error::Config(format!(
            "tile size must be a multiple of {SIDE_MULTIPLE} larger than {}, got {tile}",
            2 * TILE_OVERLAP
        )));
    }
    Ok(())
}

/// Pads to a multiple of 4, runs the generator (tiled when requested) and crops back.
pub fn dehaze_any_size<T: Real>(net: &GeneratorNet<T>, image: &ImageTensor, tile: Option<usize>) -> Result<ImageTensor> {
    if let Some(t) = tile {
        check_tile(t)?;
    }
    let rgb = if image.channels() == 3 { image.clone() } else { image.to_rgb() };
    let (h, w, _) = rgb.shape();
    let padded = rgb.reflect_pad_to_multiple(SIDE_MULTIPLE);
    let (ph, pw, _) = padded.shape();
    let out = match tile {
        Some(t) if ph > t || pw > t => dehaze_tiled(net, &padded, t)?,
        _ => net.dehaze(&padded)?,
    };
    out.crop(0, 0, h, w)
}

/// Tile origins covering `len` with tiles of `tile` and [`TILE_OVERLAP`] overlap.
fn origins(len: usize, tile: usize) -> Vec<usize> {
    if len <= tile {
        return vec![0];
    }
    let step = tile - TILE_OVERLAP;
    let mut v: Vec<usize> = (0..).map(|i| i * step).take_while(|&o| o + tile < len).collect();
    v.push(len - tile);
    v
}

/// Blend weight along one axis: linear ramps over the overlap, except at the image border.
fn ramp(pos: usize, size: usize, at_start: bool, at_end: bool) -> f32 {
    let n = (TILE_OVERLAP + 1) as f32;
    let mut w = 1.0f32;
    if !at_start {
        w = w.min((pos + 1) as f32 / n);
    }
    if !at_end {
        w = w.min((size - pos) as f32 / n);
    }
    w
}

fn dehaze_tiled<T: Real>(net: &GeneratorNet<T>, image: &ImageTensor, tile: usize) -> Result<ImageTensor> {
    let (h, w, c) = image.shape();
    let (th, tw) = (tile.min(h), tile.min(w));
    let mut acc = vec![0.0f32; h * w * c];
    let mut weight = vec![0.0f32; h * w];
    for &top in &origins(h, th) {
        for &left in &origins(w, tw) {
            let out = net.dehaze(&image.crop(top, left, th, tw)?)?;
            for y in 0..th {
                let wy = ramp(y, th, top == 0, top + th == h);
                for x in 0..tw {
                    let wx = ramp(x, tw, left == 0, left + tw == w);
                    let wt = wy * wx;
                    let gi = (top + y) * w + left + x;
                    weight[gi] += wt;
                    for ch in 0..c {
                        acc[gi * c + ch] += wt * out.get(y, x, ch);
                    }
                }
            }
        }
    }
    for (i, px) in acc.chunks_mut(c).enumerate() {
        for v in px {
            *v /= weight[i];
        }
    }
    ImageTensor::from_vec_clamped(h, w, c, acc)
}
