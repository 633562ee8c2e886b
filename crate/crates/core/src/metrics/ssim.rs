use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image_tensor::ImageTensor;

/// Whether statistics are taken over the whole image or averaged over sliding windows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SsimMode {
    Global,
    Windowed,
}

/// Stabilizing constants and evaluation mode for [`ssim`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimConfig {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub mode: SsimMode,
    /// Side length of the square uniform window in windowed mode.
    pub window: usize,
    /// Average per-channel SSIM instead of converting colour images to luma.
    pub per_channel: bool,
}

impl SsimConfig {
    /// Constants `(0.01·P)²`, `(0.03·P)²` and `C2/2` for dynamic range `P`.
    pub fn for_range(dynamic_range: f64) -> Self {
        let c1 = (0.01 * dynamic_range).powi(2);
        let c2 = (0.03 * dynamic_range).powi(2);
        Self {
            c1,
            c2,
            c3: c2 / 2.0,
            mode: SsimMode::Global,
            window: 11,
            per_channel: false,
        }
    }

    pub fn windowed(mut self, window: usize) -> Self {
        self.mode = SsimMode::Windowed;
        self.window = window;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("C1", self.c1), ("C2", self.c2), ("C3", self.c3)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("ssim: {name} must be positive, got {v}")));
            }
        }
        if self.mode == SsimMode::Windowed && self.window == 0 {
            return Err(Error::invalid("ssim: window must be at least 1"));
        }
        Ok(())
    }
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self::for_range(1.0)
    }
}

/// First and second moments of one window.
#[derive(Clone, Copy, Debug)]
struct Moments {
    mean_x: f64,
    mean_y: f64,
    var_x: f64,
    var_y: f64,
    cov: f64,
}

fn lcs(m: Moments, cfg: &SsimConfig) -> f64 {
    let sx = m.var_x.max(0.0).sqrt();
    let sy = m.var_y.max(0.0).sqrt();
    let l = (2.0 * m.mean_x * m.mean_y + cfg.c1) / (m.mean_x * m.mean_x + m.mean_y * m.mean_y + cfg.c1);
    let c = (2.0 * sx * sy + cfg.c2) / (m.var_x + m.var_y + cfg.c2);
    let s = (m.cov + cfg.c3) / (sx * sy + cfg.c3);
    l * c * s
}

fn global_moments(x: &[f64], y: &[f64]) -> Moments {
    let n = x.len() as f64;
    let mean_x = x.iter().sum::<f64>() / n;
    let mean_y = y.iter().sum::<f64>() / n;
    let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mean_x, b - mean_y);
        vx += da * da;
        vy += db * db;
        cxy += da * db;
    }
    Moments {
        mean_x,
        mean_y,
        var_x: vx / n,
        var_y: vy / n,
        cov: cxy / n,
    }
}

/// Summed-area table with a zero first row and column.
fn integral(h: usize, w: usize, f: impl Fn(usize) -> f64) -> Vec<f64> {
    let mut s = vec![0.0; (h + 1) * (w + 1)];
    for r in 0..h {
        let mut row = 0.0;
        for c in 0..w {
            row += f(r * w + c);
            s[(r + 1) * (w + 1) + c + 1] = s[r * (w + 1) + c + 1] + row;
        }
    }
    s
}

fn windowed_plane(x: &[f64], y: &[f64], h: usize, w: usize, cfg: &SsimConfig) -> f64 {
    let k = cfg.window;
    if k > h || k > w {
        // Window larger than the image: fall back to a single window covering everything.
        return lcs(global_moments(x, y), cfg);
    }
    let sx = integral(h, w, |i| x[i]);
    let sy = integral(h, w, |i| y[i]);
    let sxx = integral(h, w, |i| x[i] * x[i]);
    let syy = integral(h, w, |i| y[i] * y[i]);
    let sxy = integral(h, w, |i| x[i] * y[i]);
    let box_sum = |s: &[f64], r: usize, c: usize| {
        let w1 = w + 1;
        s[(r + k) * w1 + c + k] - s[r * w1 + c + k] - s[(r + k) * w1 + c] + s[r * w1 + c]
    };
    let n = (k * k) as f64;
    let mut total = 0.0;
    for r in 0..=h - k {
        for c in 0..=w - k {
            let mean_x = box_sum(&sx, r, c) / n;
            let mean_y = box_sum(&sy, r, c) / n;
            let m = Moments {
                mean_x,
                mean_y,
                var_x: box_sum(&sxx, r, c) / n - mean_x * mean_x,
                var_y: box_sum(&syy, r, c) / n - mean_y * mean_y,
                cov: box_sum(&sxy, r, c) / n - mean_x * mean_y,
            };
            total += lcs(m, cfg);
        }
    }
    total / ((h - k + 1) * (w - k + 1)) as f64
}

/// SSIM of a single plane of intensities.
pub fn ssim_plane(x: &[f64], y: &[f64], height: usize, width: usize, cfg: &SsimConfig) -> Result<f64> {
    cfg.validate()?;
    if x.len() != height * width || y.len() != height * width || x.is_empty() {
        return Err(Error::invalid(format!(
            "ssim: planes of {} and {} values for a {height}×{width} image",
            x.len(),
            y.len()
        )));
    }
    Ok(match cfg.mode {
        SsimMode::Global => lcs(global_moments(x, y), cfg),
        SsimMode::Windowed => windowed_plane(x, y, height, width, cfg),
    })
}

/// Structural similarity `l·c·s` between two images.
///
/// Colour images are compared on luma unless `per_channel` is set. The value is 1 for identical
/// images; strongly anti-correlated images can score below 0.
pub fn ssim(reference: &ImageTensor, test: &ImageTensor, cfg: &SsimConfig) -> Result<f64> {
    reference.require_same_shape(test)?;
    let (h, w, c) = reference.shape();
    if c == 1 || !cfg.per_channel {
        let (x, y) = if c == 1 {
            (reference.channel_plane(0), test.channel_plane(0))
        } else {
            (reference.luma(), test.luma())
        };
        return ssim_plane(&x, &y, h, w, cfg);
    }
    let mut sum = 0.0;
    for ch in 0..c {
        sum += ssim_plane(&reference.channel_plane(ch), &test.channel_plane(ch), h, w, cfg)?;
    }
    Ok(sum / c as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(seed: u64, h: usize, w: usize) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageTensor::new(h, w, 3, (0..h * w * 3).map(|_| rng.random::<f32>()).collect()).unwrap()
    }

    #[test]
    fn identical_images_score_one() {
        let a = noise(1, 20, 17);
        for cfg in [SsimConfig::default(), SsimConfig::default().windowed(7)] {
            assert!((ssim(&a, &a, &cfg).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn independent_noise_is_dissimilar() {
        let v = ssim(&noise(1, 32, 32), &noise(2, 32, 32), &SsimConfig::default()).unwrap();
        assert!(v.abs() < 0.2, "{v}");
    }

    #[test]
    fn constant_offset_reduces_to_luminance_term() {
        let a = ImageTensor::filled(8, 8, 1, 0.4);
        let b = ImageTensor::filled(8, 8, 1, 0.5);
        let cfg = SsimConfig::default();
        let l = (2.0 * 0.4 * 0.5 + cfg.c1) / (0.16 + 0.25 + cfg.c1);
        assert!((ssim(&a, &b, &cfg).unwrap() - l).abs() < 1e-6);
    }

    #[test]
    fn symmetric_with_default_constants() {
        let (a, b) = (noise(3, 16, 16), noise(4, 16, 16));
        for cfg in [SsimConfig::default(), SsimConfig::default().windowed(5)] {
            let ab = ssim(&a, &b, &cfg).unwrap();
            let ba = ssim(&b, &a, &cfg).unwrap();
            assert!((ab - ba).abs() < 1e-12);
        }
    }

    #[test]
    fn oversized_window_falls_back_to_global() {
        let (a, b) = (noise(5, 6, 6), noise(6, 6, 6));
        let g = ssim(&a, &b, &SsimConfig::default()).unwrap();
        let w = ssim(&a, &b, &SsimConfig::default().windowed(11)).unwrap();
        assert!((g - w).abs() < 1e-12);
    }

    #[test]
    fn rejects_nonpositive_constants() {
        let a = ImageTensor::filled(4, 4, 1, 0.5);
        let cfg = SsimConfig {
            c1: 0.0,
            ..SsimConfig::default()
        };
        assert!(ssim(&a, &a, &cfg).is_err());
    }
}
