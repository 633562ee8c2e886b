use crate::error::{Error, Result};
use crate::image_tensor::ImageTensor;

/// Peak signal-to-noise ratio in dB between equal-length intensity arrays.
///
/// The mean squared error averages over every element (pixels and channels). Identical inputs
/// give `f64::INFINITY`.
pub fn psnr_values(reference: &[f64], test: &[f64], peak: f64) -> Result<f64> {
    if reference.len() != test.len() {
        return Err(Error::invalid(format!(
            "psnr: {} reference values vs {} test values",
            reference.len(),
            test.len()
        )));
    }
    if !(peak > 0.0) || !peak.is_finite() {
        return Err(Error::invalid(format!("psnr: peak must be positive, got {peak}")));
    }
    if reference.is_empty() {
        return Err(Error::invalid("psnr: empty input"));
    }
    let sse: f64 = reference.iter().zip(test).map(|(a, b)| (a - b) * (a - b)).sum();
    let mse = sse / reference.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// PSNR between two images whose `[0,1]` intensities are expressed on a scale of `peak`
/// (1 for normalized data, 255 for 8-bit data).
pub fn psnr(reference: &ImageTensor, test: &ImageTensor, peak: f64) -> Result<f64> {
    reference.require_same_shape(test)?;
    let scale = |img: &ImageTensor| img.data().iter().map(|&v| v as f64 * peak).collect::<Vec<_>>();
    psnr_values(&scale(reference), &scale(test), peak)
}

/// Table formatting for PSNR values: `inf` for the identical-image sentinel.
pub fn format_db(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_string()
    } else {
        format!("{v:.4}")
    }
}
