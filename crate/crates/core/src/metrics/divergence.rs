//! Voxel-wise divergence residuals.

use serde::Serialize;

use crate::error::{Result, VastError};
use crate::grid::Grid;
use crate::metrics::surface::percentile_sorted;
use crate::volume::{MaskVolume, VelocityField};

pub const HISTOGRAM_BINS: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    /// `bins + 1` edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(values: &[f64], bins: usize) -> Self {
        let hi = values.iter().copied().fold(0.0, f64::max);
        let hi = if hi > 0.0 { hi } else { 1.0 };
        let edges: Vec<f64> = (0..=bins).map(|b| hi * b as f64 / bins as f64).collect();
        let mut counts = vec![0; bins];
        for &v in values {
            let b = ((v / hi) * bins as f64).floor() as usize;
            counts[b.min(bins - 1)] += 1;
        }
        Histogram { edges, counts }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DivergenceReport {
    /// `|div u| * min spacing / mean in-mask speed` at interior voxels, all frames.
    pub residuals: Vec<f64>,
    pub mean: f64,
    pub iqr: f64,
    pub histogram: Histogram,
    /// Mean `|div u|` in 1/s before normalisation.
    pub mean_divergence: f64,
    /// Mean in-mask speed used as the normaliser, cm/s.
    pub speed_scale: f64,
}

/// Mask voxels whose six face neighbours are all inside the grid and mask.
pub fn interior_voxels(labels: &[bool], g: Grid) -> Vec<usize> {
    (0..g.len())
        .filter(|&i| {
            if !labels[i] || g.on_border(i) {
                return false;
            }
            let mut closed = true;
            g.for_each_face_neighbor(i, |j| closed &= labels[j]);
            closed
        })
        .collect()
}

/// Central-difference divergence in 1/s at voxel `i` of frame `t`.
pub fn divergence_at(u: &VelocityField, i: usize, t: usize) -> f64 {
    let g = u.grid();
    let base = t * g.len();
    (0..3)
        .map(|a| {
            let s = g.stride(a);
            let c = u.component(a);
            let dx_cm = u.meta.spacing[a] / 10.0;
            (c[base + i + s] - c[base + i - s]) / (2.0 * dx_cm)
        })
        .sum()
}

/// Divergence residuals of `u` inside the static union of `mask`.
pub fn divergence_residuals(u: &VelocityField, mask: &MaskVolume) -> Result<DivergenceReport> {
    let g = u.grid();
    if mask.grid != g {
        return Err(VastError::ShapeMismatch { what: "mask grid".into(), expected: g.len(), found: mask.grid.len() });
    }
    let labels = mask.union_over_frames().labels;
    let interior = interior_voxels(&labels, g);
    if interior.is_empty() {
        return Err(VastError::EmptyMask("no interior voxels for central differences".into()));
    }
    let nt = u.nt();
    let n = g.len();
    let inside: Vec<usize> = (0..n).filter(|&i| labels[i]).collect();
    let speed_scale =
        (0..nt).flat_map(|t| inside.iter().map(move |&i| t * n + i)).map(|j| u.speed(j)).sum::<f64>() / (nt * inside.len()) as f64;
    let div: Vec<f64> = (0..nt).flat_map(|t| interior.iter().map(move |&i| (i, t))).map(|(i, t)| divergence_at(u, i, t).abs()).collect();
    let mean_divergence = div.iter().sum::<f64>() / div.len() as f64;
    let unit_cm = u.meta.min_spacing() / 10.0;
    let residuals: Vec<f64> =
        div.iter().map(|d| if speed_scale > 0.0 { d * unit_cm / speed_scale } else { 0.0 }).collect();
    let mut sorted = residuals.clone();
    sorted.sort_by(f64::total_cmp);
    let mean = residuals.iter().sum::<f64>() / residuals.len() as f64;
    let iqr = percentile_sorted(&sorted, 0.75) - percentile_sorted(&sorted, 0.25);
    let histogram = Histogram::new(&residuals, HISTOGRAM_BINS);
    Ok(DivergenceReport { residuals, mean, iqr, histogram, mean_divergence, speed_scale })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{analytic_poiseuille, analytic_unsteady_vortex, GridSpec, VortexParams};
    use crate::volume::AcquisitionMeta;

    fn box_field(f: impl Fn(f64, f64, f64) -> [f64; 3]) -> (VelocityField, MaskVolume) {
        let meta = AcquisitionMeta::new([8, 7, 6, 2], [2.0, 1.0, 1.5], 50.0, [100.0; 3]);
        let g = meta.grid();
        let mut field = VelocityField::zeros(meta.clone());
        for t in 0..2 {
            for i in 0..g.len() {
                let (x, y, z) = g.coords(i);
                // positions in cm
                let p = [x as f64 * 0.2, y as f64 * 0.1, z as f64 * 0.15];
                let v = f(p[0], p[1], p[2]);
                for k in 0..3 {
                    field.component_mut(k)[t * g.len() + i] = v[k];
                }
            }
        }
        (field, MaskVolume::new_static(g, vec![true; g.len()]).unwrap())
    }

    #[test]
    fn uniform_and_linear_fields() {
        let (f, m) = box_field(|_, _, _| [3.0, -1.0, 2.0]);
        let r = divergence_residuals(&f, &m).unwrap();
        assert!(r.residuals.iter().all(|&v| v.abs() < 1e-12));
        let (f, m) = box_field(|x, _, _| [x, 0.0, 0.0]);
        let r = divergence_residuals(&f, &m).unwrap();
        assert!((r.mean_divergence - 1.0).abs() < 1e-12);
        let expect = 1.0 * 0.1 / r.speed_scale;
        assert!(r.residuals.iter().all(|v| (v - expect).abs() < 1e-12));
        assert_eq!(r.histogram.counts.iter().sum::<usize>(), r.residuals.len());
    }

    #[test]
    fn poiseuille_is_divergence_free() {
        let spec = GridSpec { dims: [16, 16, 10, 2], spacing: [1.0; 3], frame_interval: 50.0 };
        let gt = analytic_poiseuille(&spec, 6.0, 2, 80.0).unwrap();
        let r = divergence_residuals(&gt.velocity, &gt.lumen_mask).unwrap();
        assert!(r.mean < 1e-12);
    }

    #[test]
    fn synthetic_vortex_is_discretely_solenoidal() {
        let spec = GridSpec { dims: [16, 16, 6, 3], spacing: [1.0; 3], frame_interval: 50.0 };
        let params = VortexParams { radius: 6.0, ..VortexParams::default() };
        let gt = analytic_unsteady_vortex(&spec, &params).unwrap();
        // central differences of a pure swirl cancel exactly
        assert!(divergence_residuals(&gt.velocity, &gt.lumen_mask).unwrap().mean < 1e-12);
    }

    #[test]
    fn residual_shrinks_under_refinement() {
        // u = (b sin(ax) cos(by), -a cos(ax) sin(by), 0) is solenoidal; with
        // a != b its central-difference divergence is O(h^2)
        let (a, b) = (2.0, 3.5);
        let mean_at = |n: usize, h_mm: f64| {
            let meta = AcquisitionMeta::new([n, n, 4, 1], [h_mm, h_mm, 1.0], 50.0, [100.0; 3]);
            let g = meta.grid();
            let mut f = VelocityField::zeros(meta);
            for i in 0..g.len() {
                let (x, y) = (g.coord(i, 0) as f64 * h_mm / 10.0, g.coord(i, 1) as f64 * h_mm / 10.0);
                f.u[i] = b * (a * x).sin() * (b * y).cos() + 5.0;
                f.v[i] = -a * (a * x).cos() * (b * y).sin();
            }
            let m = MaskVolume::new_static(g, vec![true; g.len()]).unwrap();
            divergence_residuals(&f, &m).unwrap().mean
        };
        let coarse = mean_at(16, 1.0);
        let fine = mean_at(32, 0.5);
        assert!(coarse > 0.0);
        assert!(coarse >= 1.5 * fine, "{coarse} vs {fine}");
    }

    #[test]
    fn thin_mask_has_no_interior() {
        let (f, _) = box_field(|_, _, _| [1.0, 0.0, 0.0]);
        let g = f.grid();
        let m = MaskVolume::new_static(g, (0..g.len()).map(|i| g.coord(i, 0) == 3).collect()).unwrap();
        assert!(matches!(divergence_residuals(&f, &m), Err(VastError::EmptyMask(_))));
    }
}
