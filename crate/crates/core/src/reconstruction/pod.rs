//! Snapshot proper orthogonal decomposition of a masked velocity field.

use nalgebra::DMatrix;

use crate::error::{Result, VastError};
use crate::grid::Grid;
use crate::reconstruction::entropy::{mode_entropy, Dct3};
use crate::volume::{MaskVolume, VelocityField};

#[derive(Debug, Clone)]
pub struct PodBasis {
    pub grid: Grid,
    /// Mask voxels, in the order used by the mode rows.
    pub voxels: Vec<usize>,
    /// `3 M x r` spatial modes, rows laid out `[u | v | w]`.
    pub modes: DMatrix<f64>,
    /// `Nt x r` temporal coefficients.
    pub coefficients: DMatrix<f64>,
    /// Squared singular values, non-increasing.
    pub eigenvalues: Vec<f64>,
    pub entropies: Vec<f64>,
    pub selected: Vec<usize>,
    /// The input carried no energy and the basis is a single zero mode.
    pub degenerate: bool,
}

/// Decomposes the field restricted to a static mask. Every mode is initially
/// selected.
pub fn pod_decompose(field: &VelocityField, mask: &MaskVolume) -> Result<PodBasis> {
    let g = field.grid();
    let n = g.len();
    let nt = field.nt();
    if nt < 2 {
        return Err(VastError::Validation("POD needs at least two frames".into()));
    }
    let voxels = mask.union_over_frames().indices(0);
    let m = voxels.len();
    if m == 0 {
        return Err(VastError::EmptyMask("POD needs a non-empty mask".into()));
    }
    let snap = DMatrix::from_fn(3 * m, nt, |row, t| field.component(row / m)[voxels[row % m] + t * n]);
    if snap.iter().all(|&v| v == 0.0) {
        return Ok(PodBasis {
            grid: g,
            voxels,
            modes: DMatrix::zeros(3 * m, 1),
            coefficients: DMatrix::zeros(nt, 1),
            eigenvalues: vec![0.0],
            entropies: vec![0.0],
            selected: vec![0],
            degenerate: true,
        });
    }
    let svd = snap.svd(true, true);
    let (u, vt) = (svd.u.expect("left vectors"), svd.v_t.expect("right vectors"));
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let r = order.len();
    let modes = DMatrix::from_fn(3 * m, r, |i, k| u[(i, order[k])]);
    let coefficients = DMatrix::from_fn(nt, r, |t, k| svd.singular_values[order[k]] * vt[(order[k], t)]);
    let eigenvalues: Vec<f64> = order.iter().map(|&k| svd.singular_values[k].powi(2)).collect();
    let dct = Dct3::new(g);
    let entropies = crate::par::map_range(r, |k| {
        let col: Vec<f64> = modes.column(k).iter().copied().collect();
        mode_entropy(&col, &voxels, &dct).value
    });
    Ok(PodBasis { grid: g, voxels, modes, coefficients, eigenvalues, entropies, selected: (0..r).collect(), degenerate: false })
}

impl PodBasis {
    pub fn selected_energy(&self) -> f64 {
        self.selected.iter().map(|&k| self.eigenvalues[k]).sum()
    }
}

/// Rebuilds the field from the selected modes; zero outside the mask.
pub fn pod_filter(basis: &PodBasis, meta: &crate::volume::AcquisitionMeta) -> Result<VelocityField> {
    if basis.selected.is_empty() {
        return Err(VastError::Validation("POD filter needs at least one selected mode".into()));
    }
    let n = basis.grid.len();
    let nt = basis.coefficients.nrows();
    let m = basis.voxels.len();
    let mut out = VelocityField::zeros(meta.clone());
    for t in 0..nt {
        for row in 0..3 * m {
            let v: f64 = basis.selected.iter().map(|&k| basis.modes[(row, k)] * basis.coefficients[(t, k)]).sum();
            out.component_mut(row / m)[basis.voxels[row % m] + t * n] = v;
        }
    }
    Ok(out)
}
