//! Image-quality and detection metrics.

pub mod detection;
pub mod psnr;
pub mod ssim;

use std::fmt::Write as _;

pub use detection::{average_precision, iou, mean_average_precision, DetectionRecord, MapReport, DEFAULT_IOU_THRESHOLD};
pub use psnr::{format_db, psnr, psnr_values};
pub use ssim::{ssim, ssim_plane, SsimConfig, SsimMode};

/// Scores for one evaluated image.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageScore {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

/// Mean and population standard deviation of PSNR and SSIM over an image set.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub psnr_avg: f64,
    pub ssim_avg: f64,
    pub psnr_sd: f64,
    pub ssim_sd: f64,
    pub rows: Vec<ImageScore>,
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    if values.iter().all(|&v| v == f64::INFINITY) {
        return (f64::INFINITY, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n;
    if !mean.is_finite() {
        // Some but not all images are identical to their reference; the spread is undefined.
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl MetricReport {
    pub fn from_rows(rows: Vec<ImageScore>) -> Self {
        let (psnr_avg, psnr_sd) = mean_sd(&rows.iter().map(|r| r.psnr).collect::<Vec<_>>());
        let (ssim_avg, ssim_sd) = mean_sd(&rows.iter().map(|r| r.ssim).collect::<Vec<_>>());
        Self {
            psnr_avg,
            ssim_avg,
            psnr_sd,
            ssim_sd,
            rows,
        }
    }

    /// Summary header and values, a blank line, then one row per image.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("PSNR_AVG\tSSIM_AVG\tPSNR_SD\tSSIM_SD\n");
        writeln!(
            s,
            "{}\t{:.4}\t{}\t{:.4}",
            format_db(self.psnr_avg),
            self.ssim_avg,
            format_db(self.psnr_sd),
            self.ssim_sd
        )
        .expect("writing to a String");
        s.push_str("\nname\tPSNR\tSSIM\n");
        for r in &self.rows {
            writeln!(s, "{}\t{}\t{:.4}", r.name, format_db(r.psnr), r.ssim).expect("writing to a String");
        }
        s
    }
}
