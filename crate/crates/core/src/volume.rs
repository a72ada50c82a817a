//! 4D Flow data model: acquisition metadata, complex phase-contrast
//! channels, velocity fields and voxel masks, plus the phase/velocity
//! relationship.

use std::f64::consts::{PI, TAU};

use num_complex::Complex32;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VastError};
use crate::grid::Grid;

/// Largest phase magnitude accepted after f32 storage (`f32` rounding of π
/// lands slightly above the `f64` value).
pub const PHASE_LIMIT: f64 = std::f32::consts::PI as f64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionMeta {
    /// Voxel and frame counts `[nx, ny, nz, nt]`.
    pub dims: [usize; 4],
    /// Voxel size in mm.
    pub spacing: [f64; 3],
    /// Time between cardiac frames in ms.
    pub frame_interval: f64,
    /// Velocity encoding per axis in cm/s.
    pub venc: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_nominal: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl AcquisitionMeta {
    pub fn new(dims: [usize; 4], spacing: [f64; 3], frame_interval: f64, venc: [f64; 3]) -> Self {
        AcquisitionMeta {
            dims,
            spacing,
            frame_interval,
            venc,
            snr_nominal: None,
            seed: None,
        }
    }

    pub fn grid(&self) -> Grid {
        Grid::new(self.dims[0], self.dims[1], self.dims[2])
    }

    pub fn nt(&self) -> usize {
        self.dims[3]
    }

    pub fn voxels(&self) -> usize {
        self.grid().len()
    }

    /// Total element count of one 4D array.
    pub fn len4(&self) -> usize {
        self.voxels() * self.nt()
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d == 0) {
            return Err(VastError::Validation(format!(
                "all dims must be >= 1, got {:?}",
                self.dims
            )));
        }
        if self.spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(VastError::Validation(format!(
                "spacing must be positive, got {:?}",
                self.spacing
            )));
        }
        if self.venc.iter().any(|&v| !(v.is_finite() && v > 0.0)) {
            return Err(VastError::Validation(format!(
                "venc must be positive, got {:?}",
                self.venc
            )));
        }
        if !(self.frame_interval.is_finite() && self.frame_interval > 0.0) {
            return Err(VastError::Validation(format!(
                "frame interval must be positive, got {}",
                self.frame_interval
            )));
        }
        if let Some(snr) = self.snr_nominal {
            if !(snr > 0.0) {
                return Err(VastError::Validation(format!("snr must be positive, got {snr}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Encoding {
    Reference,
    Axis(usize),
}

impl Encoding {
    pub const ALL: [Encoding; 4] = [
        Encoding::Reference,
        Encoding::Axis(0),
        Encoding::Axis(1),
        Encoding::Axis(2),
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Encoding::Reference => "ref",
            Encoding::Axis(0) => "u",
            Encoding::Axis(1) => "v",
            Encoding::Axis(_) => "w",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexChannel {
    pub values: Vec<Complex32>,
    pub encoding: Encoding,
}

/// A complete four-point phase-contrast acquisition.
///
/// `channels` holds the reference channel followed by the u, v and w
/// encodings. Magnitude is the modulus of the reference channel and each
/// phase is `arg(encoding * conj(reference))`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowBundle {
    pub meta: AcquisitionMeta,
    pub channels: [ComplexChannel; 4],
    pub magnitude: Vec<f32>,
    pub phases: [Vec<f32>; 3],
}

impl FlowBundle {
    /// Builds a bundle from raw channels, deriving magnitude and phases.
    pub fn from_channels(meta: AcquisitionMeta, channels: [Vec<Complex32>; 4]) -> Result<Self> {
        meta.validate()?;
        let n = meta.len4();
        for (c, enc) in channels.iter().zip(Encoding::ALL) {
            check_len(&format!("channel {}", enc.name()), n, c.len())?;
            if c.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
                return Err(VastError::NonFinite(format!("channel {}", enc.name())));
            }
        }
        let reference = &channels[0];
        let magnitude: Vec<f32> = reference.iter().map(|z| z.norm()).collect();
        let phases = [1, 2, 3].map(|k| {
            channels[k]
                .iter()
                .zip(reference)
                .map(|(e, r)| {
                    let e = num_complex::Complex64::new(e.re as f64, e.im as f64);
                    let r = num_complex::Complex64::new(r.re as f64, r.im as f64);
                    (e * r.conj()).arg() as f32
                })
                .collect::<Vec<f32>>()
        });
        let [r, u, v, w] = channels;
        let channels = [
            ComplexChannel { values: r, encoding: Encoding::Reference },
            ComplexChannel { values: u, encoding: Encoding::Axis(0) },
            ComplexChannel { values: v, encoding: Encoding::Axis(1) },
            ComplexChannel { values: w, encoding: Encoding::Axis(2) },
        ];
        Ok(FlowBundle { meta, channels, magnitude, phases })
    }

    /// Assembles a bundle from stored arrays and validates every invariant.
    pub fn from_parts(
        meta: AcquisitionMeta,
        channels: [Vec<Complex32>; 4],
        magnitude: Vec<f32>,
        phases: [Vec<f32>; 3],
    ) -> Result<Self> {
        let [r, u, v, w] = channels;
        let bundle = FlowBundle {
            meta,
            channels: [
                ComplexChannel { values: r, encoding: Encoding::Reference },
                ComplexChannel { values: u, encoding: Encoding::Axis(0) },
                ComplexChannel { values: v, encoding: Encoding::Axis(1) },
                ComplexChannel { values: w, encoding: Encoding::Axis(2) },
            ],
            magnitude,
            phases,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn validate(&self) -> Result<()> {
        self.meta.validate()?;
        let n = self.meta.len4();
        for c in &self.channels {
            check_len(&format!("channel {}", c.encoding.name()), n, c.values.len())?;
            if c.values.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
                return Err(VastError::NonFinite(format!("channel {}", c.encoding.name())));
            }
        }
        check_len("magnitude", n, self.magnitude.len())?;
        if let Some(m) = self.magnitude.iter().find(|m| !(m.is_finite() && **m >= 0.0)) {
            return Err(VastError::Validation(format!("magnitude must be finite and >= 0, found {m}")));
        }
        for (k, p) in self.phases.iter().enumerate() {
            let name = Encoding::Axis(k).name();
            check_len(&format!("phase {name}"), n, p.len())?;
            if let Some(bad) = p.iter().find(|v| !v.is_finite()) {
                return Err(VastError::NonFinite(format!("phase {name} ({bad})")));
            }
            if let Some(bad) = p.iter().find(|v| (v.abs() as f64) > PHASE_LIMIT) {
                return Err(VastError::Validation(format!(
                    "phase {name} value {bad} outside [-pi, pi]"
                )));
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> Grid {
        self.meta.grid()
    }

    /// Wrapped phase of one encoding axis as f64.
    pub fn phase(&self, axis: usize) -> Vec<f64> {
        self.phases[axis].iter().map(|&p| p as f64).collect()
    }

    /// Velocities obtained by direct phase-velocity conversion of the
    /// wrapped phases, without any unwrapping.
    pub fn raw_velocity(&self) -> VelocityField {
        let [u, v, w] = [0, 1, 2].map(|k| {
            let venc = self.meta.venc[k];
            self.phases[k]
                .iter()
                .map(|&p| phase_to_velocity_scalar(p as f64, venc))
                .collect::<Vec<f64>>()
        });
        VelocityField { meta: self.meta.clone(), u, v, w }
    }
}

/// Three-component velocity in cm/s over the 4D grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    pub meta: AcquisitionMeta,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub w: Vec<f64>,
}

impl VelocityField {
    pub fn zeros(meta: AcquisitionMeta) -> Self {
        let n = meta.len4();
        VelocityField { meta, u: vec![0.0; n], v: vec![0.0; n], w: vec![0.0; n] }
    }

    pub fn new(meta: AcquisitionMeta, u: Vec<f64>, v: Vec<f64>, w: Vec<f64>) -> Result<Self> {
        let f = VelocityField { meta, u, v, w };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        self.meta.validate()?;
        let n = self.meta.len4();
        for (k, c) in self.components().iter().enumerate() {
            let name = Encoding::Axis(k).name();
            check_len(&format!("velocity {name}"), n, c.len())?;
            if c.iter().any(|v| !v.is_finite()) {
                return Err(VastError::NonFinite(format!("velocity {name}")));
            }
        }
        Ok(())
    }

    pub fn components(&self) -> [&[f64]; 3] {
        [&self.u, &self.v, &self.w]
    }

    pub fn component(&self, k: usize) -> &[f64] {
        self.components()[k]
    }

    pub fn component_mut(&mut self, k: usize) -> &mut Vec<f64> {
        match k {
            0 => &mut self.u,
            1 => &mut self.v,
            _ => &mut self.w,
        }
    }

    pub fn grid(&self) -> Grid {
        self.meta.grid()
    }

    pub fn nt(&self) -> usize {
        self.meta.nt()
    }

    pub fn speed(&self, i: usize) -> f64 {
        (self.u[i] * self.u[i] + self.v[i] * self.v[i] + self.w[i] * self.w[i]).sqrt()
    }

    /// Largest speed over all voxels and frames.
    pub fn max_speed(&self) -> f64 {
        (0..self.u.len()).map(|i| self.speed(i)).fold(0.0, f64::max)
    }

    /// Zeroes every component wherever the static mask is false.
    pub fn apply_mask(&mut self, mask: &MaskVolume) {
        let n3 = self.grid().len();
        for k in 0..3 {
            let c = self.component_mut(k);
            for (i, v) in c.iter_mut().enumerate() {
                if !mask.at(i % n3, i / n3) {
                    *v = 0.0;
                }
            }
        }
    }
}

/// Boolean voxel labelling, static (one frame) or per cardiac phase.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskVolume {
    pub grid: Grid,
    pub frames: usize,
    pub labels: Vec<bool>,
}

impl MaskVolume {
    pub fn new(grid: Grid, frames: usize, labels: Vec<bool>) -> Result<Self> {
        if frames == 0 {
            return Err(VastError::Validation("mask needs at least one frame".into()));
        }
        check_len("mask", grid.len() * frames, labels.len())?;
        Ok(MaskVolume { grid, frames, labels })
    }

    pub fn new_static(grid: Grid, labels: Vec<bool>) -> Result<Self> {
        Self::new(grid, 1, labels)
    }

    pub fn empty(grid: Grid, frames: usize) -> Self {
        MaskVolume { grid, frames, labels: vec![false; grid.len() * frames] }
    }

    pub fn is_static(&self) -> bool {
        self.frames == 1
    }

    /// Label of voxel `i` at frame `t`; a static mask answers for every frame.
    #[inline]
    pub fn at(&self, i: usize, t: usize) -> bool {
        let t = if self.frames == 1 { 0 } else { t };
        self.labels[i + t * self.grid.len()]
    }

    pub fn frame(&self, t: usize) -> &[bool] {
        let n = self.grid.len();
        &self.labels[t * n..(t + 1) * n]
    }

    pub fn count(&self) -> usize {
        self.labels.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// Static union over all frames.
    pub fn union_over_frames(&self) -> MaskVolume {
        let n = self.grid.len();
        let mut labels = vec![false; n];
        for t in 0..self.frames {
            for (l, &f) in labels.iter_mut().zip(self.frame(t)) {
                *l |= f;
            }
        }
        MaskVolume { grid: self.grid, frames: 1, labels }
    }

    pub fn complement(&self) -> MaskVolume {
        MaskVolume {
            grid: self.grid,
            frames: self.frames,
            labels: self.labels.iter().map(|b| !b).collect(),
        }
    }

    /// Flat indices of the true voxels in frame `t`.
    pub fn indices(&self, t: usize) -> Vec<usize> {
        self.frame(t)
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }
}

pub(crate) fn check_len(what: &str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(VastError::ShapeMismatch { what: what.to_string(), expected, found });
    }
    Ok(())
}

/// Folds a phase into `[-pi, pi]`, leaving values already in range untouched.
#[inline]
pub fn wrap(phase: f64) -> f64 {
    if phase.abs() <= PI {
        return phase;
    }
    let r = phase - TAU * (phase / TAU).round();
    r.clamp(-PI, PI)
}

#[inline]
pub fn phase_to_velocity_scalar(phase: f64, venc: f64) -> f64 {
    venc * phase / PI
}

#[inline]
pub fn velocity_to_phase(u: f64, venc: f64) -> f64 {
    PI * u / venc
}

/// Converts a phase array to velocity in cm/s (`venc * phase / pi`).
pub fn phase_to_velocity(phase: &[f64], venc: f64) -> Result<Vec<f64>> {
    if !(venc.is_finite() && venc > 0.0) {
        return Err(VastError::Validation(format!("venc must be positive, got {venc}")));
    }
    if phase.iter().any(|p| !p.is_finite()) {
        return Err(VastError::NonFinite("phase".into()));
    }
    Ok(phase.iter().map(|&p| phase_to_velocity_scalar(p, venc)).collect())
}
