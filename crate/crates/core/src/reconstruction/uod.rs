//! Universal outlier detection on masked velocity components.

use std::sync::atomic::{AtomicUsize, Ordering};

use crate::grid::Grid;
use crate::volume::{MaskVolume, VelocityField};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UodOptions {
    pub tau: f64,
    pub epsilon: f64,
}

impl Default for UodOptions {
    fn default() -> Self {
        UodOptions { tau: 2.0, epsilon: 1e-3 }
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}

/// In-mask neighbours of `i` in the 3x3x3 cube whose mirror image through
/// `i` is also in the mask, so the neighbour median is exact for linear data.
fn symmetric_neighbours(i: usize, mask: &[bool], g: Grid, out: &mut Vec<usize>) {
    out.clear();
    let (x, y, z) = g.coords(i);
    let (x, y, z) = (x as isize, y as isize, z as isize);
    let inside = |a: isize, b: isize, c: isize| -> Option<usize> {
        if a < 0 || b < 0 || c < 0 || a >= g.nx as isize || b >= g.ny as isize || c >= g.nz as isize {
            return None;
        }
        let j = g.index(a as usize, b as usize, c as usize);
        mask[j].then_some(j)
    };
    for dz in -1..=1isize {
        for dy in -1..=1isize {
            for dx in -1..=1isize {
                // one representative per mirror pair
                if (dz, dy, dx) <= (0, 0, 0) {
                    continue;
                }
                if let (Some(p), Some(q)) = (inside(x + dx, y + dy, z + dz), inside(x - dx, y - dy, z - dz)) {
                    out.push(p);
                    out.push(q);
                }
            }
        }
    }
}

/// Corrects one 3D component in place, returning the number of flagged
/// voxels. Voxels without any mirrored neighbour pair are not tested.
pub fn uod_component(values: &mut [f64], mask: &[bool], g: Grid, opts: &UodOptions) -> usize {
    let n = g.len();
    let mut nb_median = vec![f64::NAN; n];
    let mut residual = vec![f64::NAN; n];
    let mut nbrs = Vec::with_capacity(26);
    let mut buf = Vec::with_capacity(27);
    for i in 0..n {
        if !mask[i] {
            continue;
        }
        symmetric_neighbours(i, mask, g, &mut nbrs);
        if !nbrs.is_empty() {
            buf.clear();
            buf.extend(nbrs.iter().map(|&j| values[j]));
            let m = median(&mut buf);
            nb_median[i] = m;
            residual[i] = (values[i] - m).abs();
        }
    }
    let mut flagged = Vec::new();
    for i in 0..n {
        if residual[i].is_nan() {
            continue;
        }
        symmetric_neighbours(i, mask, g, &mut nbrs);
        buf.clear();
        buf.push(residual[i]);
        buf.extend(nbrs.iter().map(|&j| residual[j]).filter(|r| !r.is_nan()));
        let scale = median(&mut buf);
        if residual[i] / (scale + opts.epsilon) > opts.tau {
            flagged.push(i);
        }
    }
    for &i in &flagged {
        values[i] = nb_median[i];
    }
    flagged.len()
}

/// Applies the test to every component and frame; returns the total count
/// of flagged (voxel, component, frame) entries.
pub fn uod_correct(field: &mut VelocityField, mask: &MaskVolume, opts: &UodOptions) -> usize {
    let g = field.grid();
    let total = AtomicUsize::new(0);
    for k in 0..3 {
        crate::par::for_each_chunk_mut(field.component_mut(k), g.len(), |t, frame| {
            let m = mask.frame(if mask.is_static() { 0 } else { t });
            total.fetch_add(uod_component(frame, m, g, opts), Ordering::Relaxed);
        });
    }
    total.into_inner()
}
