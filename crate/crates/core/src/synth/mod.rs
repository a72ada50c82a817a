//! Synthetic 4D Flow generation from analytic ground-truth flows.

mod signal;
mod sweep;

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Result, VastError};
use crate::grid::Grid;
use crate::volume::{AcquisitionMeta, MaskVolume, VelocityField};

pub use signal::{
    add_noise, apply_psf, magnitude_model, noise_sigma, psf_taps, psf_weight, synthesize_signal,
};
pub use sweep::{
    generate_case, generate_sweeps, ground_truth, load_truth, plan_cases, save_truth, CaseSpec,
    Corpus, Geometry, SweepConfig, SweepKind, MANIFEST_FILE,
};

/// Grid layout shared by all synthetic cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// `[nx, ny, nz, nt]`
    pub dims: [usize; 4],
    /// Voxel size in mm.
    pub spacing: [f64; 3],
    /// Frame interval in ms.
    #[serde(default = "default_frame_interval")]
    pub frame_interval: f64,
}

fn default_frame_interval() -> f64 {
    60.0
}

impl GridSpec {
    pub fn grid(&self) -> Grid {
        Grid::new(self.dims[0], self.dims[1], self.dims[2])
    }

    fn meta(&self, venc: f64) -> AcquisitionMeta {
        AcquisitionMeta::new(self.dims, self.spacing, self.frame_interval, [venc; 3])
    }

    /// Physical position (mm) of voxel `i`, measured from the grid centre.
    fn centred_position(&self, i: usize) -> [f64; 3] {
        let g = self.grid();
        let (x, y, z) = g.coords(i);
        let c = [x, y, z];
        [0, 1, 2].map(|a| (c[a] as f64 - (g.extent(a) as f64 - 1.0) / 2.0) * self.spacing[a])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub velocity: VelocityField,
    pub lumen_mask: MaskVolume,
    /// Largest speed over space and time, cm/s.
    pub v_max: f64,
}

/// Axial Poiseuille speed at radius `r` in a tube of radius `radius`.
pub fn poiseuille_speed(r: f64, radius: f64, v_peak: f64) -> f64 {
    if r >= radius {
        0.0
    } else {
        v_peak * (1.0 - (r / radius).powi(2))
    }
}

fn transverse_axes(axis: usize) -> (usize, usize) {
    match axis {
        0 => (1, 2),
        1 => (2, 0),
        _ => (0, 1),
    }
}

fn check_tube(spec: &GridSpec, radius: f64, axis: usize) -> Result<()> {
    if axis > 2 {
        return Err(VastError::Validation(format!("tube axis must be 0, 1 or 2, got {axis}")));
    }
    if !(radius > 0.0) {
        return Err(VastError::Validation(format!("tube radius must be positive, got {radius}")));
    }
    let (a, b) = transverse_axes(axis);
    for t in [a, b] {
        let half_extent = spec.dims[t] as f64 * spec.spacing[t] / 2.0;
        if radius > half_extent {
            return Err(VastError::Validation(format!(
                "tube radius {radius} mm exceeds half grid extent {half_extent} mm along axis {t}"
            )));
        }
    }
    Ok(())
}

/// Steady parabolic flow `v_peak (1 - (r/R)^2)` along `axis` in a straight
/// tube through the grid centre.
pub fn analytic_poiseuille(spec: &GridSpec, radius: f64, axis: usize, v_peak: f64) -> Result<GroundTruth> {
    check_tube(spec, radius, axis)?;
    let g = spec.grid();
    let nt = spec.dims[3];
    let (a, b) = transverse_axes(axis);
    let mut lumen = vec![false; g.len()];
    let mut profile = vec![0.0; g.len()];
    for i in 0..g.len() {
        let p = spec.centred_position(i);
        let r = (p[a] * p[a] + p[b] * p[b]).sqrt();
        if r < radius {
            lumen[i] = true;
            profile[i] = poiseuille_speed(r, radius, v_peak);
        }
    }
    let mut field = VelocityField::zeros(spec.meta(v_peak.abs().max(f64::MIN_POSITIVE)));
    let comp = field.component_mut(axis);
    for t in 0..nt {
        comp[t * g.len()..(t + 1) * g.len()].copy_from_slice(&profile);
    }
    finish(field, lumen, g)
}

/// Parameters of the pulsatile swirling tube flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VortexParams {
    /// Tube radius in mm.
    pub radius: f64,
    /// Tube axis (0 = x, 1 = y, 2 = z).
    #[serde(default = "default_axis")]
    pub axis: usize,
    /// Peak of the axial Poiseuille component at mean flow, cm/s.
    pub axial_peak: f64,
    /// Peak azimuthal (swirl) speed at mean flow, cm/s.
    pub swirl_peak: f64,
    /// Relative amplitude of the periodic waveform (0 = steady).
    pub waveform_amplitude: f64,
}

fn default_axis() -> usize {
    2
}

impl Default for VortexParams {
    fn default() -> Self {
        VortexParams { radius: 8.0, axis: 2, axial_peak: 50.0, swirl_peak: 25.0, waveform_amplitude: 0.8 }
    }
}

/// Normalised swirl profile `s (1 - s^2)` scaled to peak 1 at `s = 1/sqrt(3)`.
fn swirl_profile(s: f64) -> f64 {
    if s >= 1.0 {
        0.0
    } else {
        s * (1.0 - s * s) * (3.0 * 3.0f64.sqrt() / 2.0)
    }
}

/// Superposition of an axial Poiseuille flow and an azimuthal vortex in a
/// straight tube. Both parts are solenoidal and vanish at the wall. The axial
/// part is scaled by `1 + A sin(2 pi t / nt)` and the swirl by
/// `1 + A cos(2 pi t / nt)`.
pub fn analytic_unsteady_vortex(spec: &GridSpec, params: &VortexParams) -> Result<GroundTruth> {
    check_tube(spec, params.radius, params.axis)?;
    let g = spec.grid();
    let nt = spec.dims[3];
    let (a, b) = transverse_axes(params.axis);
    let amp = params.waveform_amplitude;
    let mut field = VelocityField::zeros(spec.meta(1.0));
    let mut lumen = vec![false; g.len()];
    for i in 0..g.len() {
        let p = spec.centred_position(i);
        let r = (p[a] * p[a] + p[b] * p[b]).sqrt();
        let s = r / params.radius;
        if s >= 1.0 {
            continue;
        }
        lumen[i] = true;
        let axial = params.axial_peak * (1.0 - s * s);
        // azimuthal unit vector (-pb, pa) / r
        let (ea, eb) = if r > 0.0 { (-p[b] / r, p[a] / r) } else { (0.0, 0.0) };
        let swirl = params.swirl_peak * swirl_profile(s);
        for t in 0..nt {
            let phase = TAU * t as f64 / nt as f64;
            let j = i + t * g.len();
            field.component_mut(params.axis)[j] = axial * (1.0 + amp * phase.sin());
            let sw = swirl * (1.0 + amp * phase.cos());
            field.component_mut(a)[j] = sw * ea;
            field.component_mut(b)[j] = sw * eb;
        }
    }
    finish(field, lumen, g)
}

fn finish(mut field: VelocityField, lumen: Vec<bool>, g: Grid) -> Result<GroundTruth> {
    let lumen_mask = MaskVolume::new_static(g, lumen)?;
    let v_max = field.max_speed();
    if v_max > 0.0 {
        field.meta.venc = [v_max; 3];
    }
    Ok(GroundTruth { velocity: field, lumen_mask, v_max })
}
