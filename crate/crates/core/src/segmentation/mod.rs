//! Unsupervised vessel segmentation: low-rank magnitude denoising, Sauvola
//! initialisation, then alternating background-likelihood estimation,
//! TV-regularised fusion and mask refinement until the adaptive thresholds
//! settle.

pub mod fusion;
pub mod likelihood;
pub mod morphology;
pub mod sauvola;
pub mod tucker;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, VastError};
use crate::grid::Grid;
use crate::par;
use crate::volume::{FlowBundle, MaskVolume};

pub use fusion::{fuse_likelihoods, FusionOptions, FusionResult};
pub use likelihood::{magnitude_likelihood, phase_likelihood, sdm_field, sdm_statistic};
pub use sauvola::{sauvola3d, SauvolaParams, SauvolaResult};
pub use tucker::{tucker_denoise, TuckerModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentationOptions {
    /// Tucker ranks `[rx, ry, rz, rt]`; `None` uses the defaults.
    pub ranks: Option<[usize; 4]>,
    pub window: usize,
    pub k: f64,
    pub r: f64,
    pub max_iterations: usize,
    /// Relative change of the mean adaptive threshold that counts as settled.
    pub threshold_tolerance: f64,
    /// Components smaller than this fraction of the largest are dropped.
    pub component_fraction: f64,
    pub min_component_voxels: usize,
    /// A flow voxel must have at least one background likelihood below this.
    pub flow_likelihood: f64,
    pub fusion_iterations: usize,
    pub fusion_tolerance: f64,
}

impl Default for SegmentationOptions {
    fn default() -> Self {
        SegmentationOptions {
            ranks: None,
            window: 11,
            k: 0.2,
            r: 0.5,
            max_iterations: 20,
            threshold_tolerance: 0.01,
            component_fraction: 0.1,
            min_component_voxels: 27,
            flow_likelihood: 0.003,
            fusion_iterations: 200,
            fusion_tolerance: 1e-4,
        }
    }
}

impl SegmentationOptions {
    pub fn sauvola(&self) -> SauvolaParams {
        SauvolaParams { window: self.window, k: self.k, r: self.r }
    }

    pub fn fusion(&self) -> FusionOptions {
        FusionOptions { max_iterations: self.fusion_iterations, tolerance: self.fusion_tolerance, window: 10 }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(VastError::Config(m.to_string()));
        if self.window == 0 || self.window % 2 == 0 {
            return bad("sauvola window must be odd and positive");
        }
        if !(self.r > 0.0) || !self.k.is_finite() {
            return bad("sauvola r must be positive and k finite");
        }
        if self.max_iterations == 0 || self.fusion_iterations == 0 {
            return bad("iteration caps must be positive");
        }
        if !(0.0..=1.0).contains(&self.component_fraction) {
            return bad("component_fraction must lie in [0, 1]");
        }
        if !(self.flow_likelihood > 0.0 && self.flow_likelihood <= 1.0) {
            return bad("flow_likelihood must lie in (0, 1]");
        }
        if !(self.threshold_tolerance > 0.0) || !(self.fusion_tolerance > 0.0) {
            return bad("tolerances must be positive");
        }
        Ok(())
    }
}

/// Working state of the outer loop. All 4D fields are `x` fastest, frame last.
#[derive(Debug, Clone)]
pub struct SegmentationState {
    pub iteration: usize,
    pub flow: MaskVolume,
    pub background: MaskVolume,
    pub p_mag: Vec<f64>,
    pub p_phase: Vec<f64>,
    pub p_comb: Vec<f64>,
    pub weight: Vec<f64>,
    /// Mean Sauvola threshold of each frame.
    pub thresholds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub mean_threshold: f64,
    /// Relative change of `mean_threshold` (NaN on the first pass).
    pub threshold_change: f64,
    pub flow_voxels: usize,
    pub tv_objective: f64,
    pub fusion_converged: bool,
}

#[derive(Debug, Clone)]
pub struct SegmentationResult {
    pub static_mask: MaskVolume,
    pub phase_masks: MaskVolume,
    pub state: SegmentationState,
    pub history: Vec<IterationRecord>,
    pub converged: bool,
}

impl SegmentationResult {
    pub fn iterations(&self) -> usize {
        self.history.len()
    }
}

/// Min-max normalisation to `[0,1]`; a constant input maps to zeros.
pub fn normalize(v: &[f64]) -> Vec<f64> {
    let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let span = hi - lo;
    if !(span > 0.0) {
        return vec![0.0; v.len()];
    }
    v.iter().map(|x| (x - lo) / span).collect()
}

#[derive(Debug, Clone)]
pub struct RefinedFrame {
    pub flow: Vec<bool>,
    pub mean_threshold: f64,
}

/// Thresholds one frame of the fused background likelihood into a flow mask.
/// `evidence` is the smaller of the magnitude and phase likelihoods per voxel.
pub fn refine_mask(p_comb: &[f64], evidence: &[f64], g: Grid, opts: &SegmentationOptions) -> Result<RefinedFrame> {
    // flow is bright in the thresholded image, as in the magnitude used to
    // initialise, so Sauvola's dark class is background here as well
    let surprise: Vec<f64> = p_comb.iter().map(|p| -p.clamp(fusion::LIKELIHOOD_FLOOR, 1.0).ln()).collect();
    let img = normalize(&surprise);
    let th = sauvola3d(&img, g, &opts.sauvola());
    let raw: Vec<bool> = (0..g.len())
        .map(|i| !th.below[i] && evidence[i] < opts.flow_likelihood)
        .collect();
    let kept = morphology::keep_large_components(&raw, g, opts.component_fraction, opts.min_component_voxels);
    let flow = morphology::fill_holes(&kept, g);
    if !flow.iter().any(|&b| b) {
        return Err(VastError::EmptyMask("no voxel survived thresholding and component cleanup".into()));
    }
    Ok(RefinedFrame { flow, mean_threshold: th.mean_threshold() })
}

fn frames_of<T: Clone>(v: &[T], n: usize, t: usize) -> &[T] {
    &v[t * n..(t + 1) * n]
}

/// Background voxels used for the likelihood statistics: everything outside
/// the union of the per-frame flow masks, repeated for every frame. A lumen
/// voxel missed in a slow frame then cannot leak into the background model.
fn background_sample(flow: &[bool], g: Grid, nt: usize) -> Vec<bool> {
    let n = g.len();
    let union: Vec<bool> = (0..n).map(|i| (0..nt).any(|t| flow[i + t * n])).collect();
    (0..n * nt).map(|k| !union[k % n]).collect()
}

pub fn segment(bundle: &FlowBundle, opts: &SegmentationOptions) -> Result<SegmentationResult> {
    bundle.validate()?;
    opts.validate()?;
    let meta = &bundle.meta;
    let g = meta.grid();
    let n = g.len();
    let nt = meta.nt();
    let dims = meta.dims;
    let ranks = opts.ranks.unwrap_or_else(|| tucker::default_ranks(dims));

    let mag: Vec<f64> = bundle.magnitude.iter().map(|&m| m as f64).collect();
    let mag1 = normalize(&tucker_denoise(&mag, dims, ranks)?);

    let initial: Vec<SauvolaResult> =
        par::map_range(nt, |t| sauvola3d(frames_of(&mag1, n, t), g, &opts.sauvola()));
    let mut flow: Vec<bool> = initial.iter().flat_map(|r| r.below.iter().map(|b| !b)).collect();

    let sdm = sdm_field(&bundle.raw_velocity());
    let mut history = Vec::new();
    let mut prev_threshold: Option<f64> = None;
    let mut converged = false;
    let mut last = None;

    for iteration in 1..=opts.max_iterations {
        let bg = background_sample(&flow, g, nt);
        let p_mag = magnitude_likelihood(&mag1, &bg)?;
        let p_phase = phase_likelihood(&sdm, &bg)?;

        let per_frame: Vec<Result<(FusionResult, RefinedFrame)>> = par::map_range(nt, |t| {
            let (pm, pp) = (frames_of(&p_mag, n, t), frames_of(&p_phase, n, t));
            let fused = fuse_likelihoods(pm, pp, g, &opts.fusion());
            let evidence: Vec<f64> = pm.iter().zip(pp).map(|(a, b)| a.min(*b)).collect();
            let refined = refine_mask(&fused.p_comb, &evidence, g, opts)
                .map_err(|e| VastError::EmptyMask(format!("frame {t}, iteration {iteration}: {e}")))?;
            Ok((fused, refined))
        });
        let per_frame = per_frame.into_iter().collect::<Result<Vec<_>>>()?;

        let thresholds: Vec<f64> = per_frame.iter().map(|(_, r)| r.mean_threshold).collect();
        let mean_threshold = thresholds.iter().sum::<f64>() / nt as f64;
        let change = match prev_threshold {
            Some(prev) => (mean_threshold - prev).abs() / f64::abs(prev).max(f64::MIN_POSITIVE),
            None => f64::NAN,
        };
        flow = per_frame.iter().flat_map(|(_, r)| r.flow.iter().copied()).collect();
        history.push(IterationRecord {
            iteration,
            mean_threshold,
            threshold_change: change,
            flow_voxels: flow.iter().filter(|&&b| b).count(),
            tv_objective: per_frame.iter().map(|(f, _)| f.final_objective()).sum(),
            fusion_converged: per_frame.iter().all(|(f, _)| f.converged),
        });
        if !history.last().is_some_and(|h| h.fusion_converged) {
            log::warn!("likelihood fusion hit its iteration cap at outer iteration {iteration}");
        }

        let p_comb: Vec<f64> = per_frame.iter().flat_map(|(f, _)| f.p_comb.iter().copied()).collect();
        let weight: Vec<f64> = per_frame.iter().flat_map(|(f, _)| f.weight.iter().copied()).collect();
        last = Some((iteration, p_mag, p_phase, p_comb, weight, thresholds));
        prev_threshold = Some(mean_threshold);
        if change < opts.threshold_tolerance {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("segmentation did not settle within {} iterations", opts.max_iterations);
    }

    let (iteration, p_mag, p_phase, p_comb, weight, thresholds) = last.expect("at least one iteration");
    let phase_masks = MaskVolume::new(g, nt, flow)?;
    let static_mask = phase_masks.union_over_frames();
    let state = SegmentationState {
        iteration,
        background: phase_masks.complement(),
        flow: phase_masks.clone(),
        p_mag,
        p_phase,
        p_comb,
        weight,
        thresholds,
    };
    Ok(SegmentationResult { static_mask, phase_masks, state, history, converged })
}

/// Per-iteration diagnostics as CSV.
pub fn write_log(history: &[IterationRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for rec in history {
        w.serialize(rec)?;
    }
    w.flush().map_err(|e| VastError::io(path, e))?;
    Ok(())
}
