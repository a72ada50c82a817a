//! Report rows. Each table carries the case key so rows can be joined and
//! plotted against SNR or venc.

use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseKey {
    pub case_id: String,
    /// "snr", "venc" or "input".
    pub sweep: String,
    pub snr: Option<f64>,
    pub venc_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentationRow {
    pub case_id: String,
    pub sweep: String,
    pub snr: Option<f64>,
    pub venc_fraction: Option<f64>,
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub dice: Option<f64>,
    pub jaccard: Option<f64>,
    /// Symmetric mean boundary distance, voxels.
    pub surface_mean: f64,
    pub surface_q1: f64,
    pub surface_median: f64,
    pub surface_q3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VelocityRow {
    pub case_id: String,
    pub sweep: String,
    pub snr: Option<f64>,
    pub venc_fraction: Option<f64>,
    pub rmse_raw: f64,
    pub rmse_vast: f64,
    pub ssim_raw: f64,
    pub ssim_vast: f64,
    pub cosine_raw: f64,
    pub cosine_vast: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DivergenceRow {
    pub case_id: String,
    pub sweep: String,
    pub snr: Option<f64>,
    pub venc_fraction: Option<f64>,
    pub raw_mean: f64,
    pub vast_mean: f64,
    pub raw_iqr: f64,
    pub vast_iqr: f64,
    /// `vast_mean / raw_mean`
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRow {
    pub case_id: String,
    pub segmentation_seconds: f64,
    pub reconstruction_seconds: f64,
    pub segmentation_iterations: usize,
    pub segmentation_converged: bool,
    pub reconstruction_iterations: usize,
    pub returned_iteration: usize,
    pub reconstruction_converged: bool,
    /// "ok" or the error that stopped the case.
    pub status: String,
}

impl TimingRow {
    pub fn failed(case_id: &str, message: String) -> Self {
        TimingRow {
            case_id: case_id.to_string(),
            segmentation_seconds: 0.0,
            reconstruction_seconds: 0.0,
            segmentation_iterations: 0,
            segmentation_converged: false,
            reconstruction_iterations: 0,
            returned_iteration: 0,
            reconstruction_converged: false,
            status: message,
        }
    }
}

macro_rules! keyed {
    ($row:ident { $($field:ident: $value:expr),* $(,)? }, $key:expr) => {{
        let k: &CaseKey = $key;
        $row {
            case_id: k.case_id.clone(),
            sweep: k.sweep.clone(),
            snr: k.snr,
            venc_fraction: k.venc_fraction,
            $($field: $value),*
        }
    }};
}
pub(crate) use keyed;
