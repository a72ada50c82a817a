//! Boundary-voxel surface distances.

use serde::Serialize;

use crate::error::{Result, VastError};
use crate::grid::Grid;
use crate::volume::MaskVolume;

/// Static kd-tree over 3D points for nearest-neighbour queries.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<[f64; 3]>,
    // implicit balanced tree: the median of each range is its node
    order: Vec<usize>,
}

impl KdTree {
    pub fn new(points: Vec<[f64; 3]>) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        build(&points, &mut order, 0);
        KdTree { points, order }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Squared distance to the closest stored point.
    pub fn nearest_sq(&self, q: [f64; 3]) -> f64 {
        let mut best = f64::INFINITY;
        self.search(&self.order, 0, q, &mut best);
        best
    }

    fn search(&self, range: &[usize], depth: usize, q: [f64; 3], best: &mut f64) {
        if range.is_empty() {
            return;
        }
        let mid = range.len() / 2;
        let p = self.points[range[mid]];
        let d2: f64 = (0..3).map(|a| (p[a] - q[a]).powi(2)).sum();
        *best = best.min(d2);
        let axis = depth % 3;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 { (&range[..mid], &range[mid + 1..]) } else { (&range[mid + 1..], &range[..mid]) };
        self.search(near, depth + 1, q, best);
        if diff * diff < *best {
            self.search(far, depth + 1, q, best);
        }
    }
}

fn build(points: &[[f64; 3]], order: &mut [usize], depth: usize) {
    if order.len() <= 1 {
        return;
    }
    let axis = depth % 3;
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]));
    let (lo, hi) = order.split_at_mut(mid);
    build(points, lo, depth + 1);
    build(points, &mut hi[1..], depth + 1);
}

/// Mask voxels with a face neighbour outside the mask. The grid edge counts
/// as outside.
pub fn boundary_voxels(labels: &[bool], g: Grid) -> Vec<usize> {
    (0..g.len())
        .filter(|&i| {
            if !labels[i] {
                return false;
            }
            if g.on_border(i) {
                return true;
            }
            let mut open = false;
            g.for_each_face_neighbor(i, |j| open |= !labels[j]);
            open
        })
        .collect()
}

fn position(g: Grid, i: usize, spacing: [f64; 3]) -> [f64; 3] {
    let (x, y, z) = g.coords(i);
    [x as f64 * spacing[0], y as f64 * spacing[1], z as f64 * spacing[2]]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurfaceDistanceReport {
    /// Per boundary point of the first mask, in units of the smallest voxel size.
    pub distances: Vec<f64>,
    pub mean: f64,
    /// 25th, 50th and 75th percentiles (linear interpolation).
    pub quartiles: [f64; 3],
}

/// Percentile `q` in [0, 1] of sorted data, interpolating between ranks.
pub(crate) fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn static_labels(m: &MaskVolume) -> Vec<bool> {
    if m.is_static() { m.labels.clone() } else { m.union_over_frames().labels }
}

/// Directed distances from the boundary of `a` to the boundary of `b`.
/// Per-frame masks are collapsed to their union first.
pub fn surface_distance(a: &MaskVolume, b: &MaskVolume, spacing: [f64; 3]) -> Result<SurfaceDistanceReport> {
    if a.grid != b.grid {
        return Err(VastError::ShapeMismatch { what: "mask grid".into(), expected: a.grid.len(), found: b.grid.len() });
    }
    if spacing.iter().any(|&s| !(s > 0.0)) {
        return Err(VastError::Validation(format!("voxel spacing must be positive, got {spacing:?}")));
    }
    let g = a.grid;
    let ba = boundary_voxels(&static_labels(a), g);
    let bb = boundary_voxels(&static_labels(b), g);
    if ba.is_empty() || bb.is_empty() {
        return Err(VastError::EmptyMask("surface distance needs a boundary on both masks".into()));
    }
    let unit = spacing.iter().copied().fold(f64::INFINITY, f64::min);
    let tree = KdTree::new(bb.iter().map(|&i| position(g, i, spacing)).collect());
    let distances: Vec<f64> =
        crate::par::map_range(ba.len(), |k| tree.nearest_sq(position(g, ba[k], spacing)).sqrt() / unit);
    let mut sorted = distances.clone();
    sorted.sort_by(f64::total_cmp);
    let mean = distances.iter().sum::<f64>() / distances.len() as f64;
    let quartiles = [0.25, 0.5, 0.75].map(|q| percentile_sorted(&sorted, q));
    Ok(SurfaceDistanceReport { distances, mean, quartiles })
}

/// Mean of the two directed mean distances.
pub fn symmetric_surface_distance(a: &MaskVolume, b: &MaskVolume, spacing: [f64; 3]) -> Result<f64> {
    let ab = surface_distance(a, b, spacing)?;
    let ba = surface_distance(b, a, spacing)?;
    Ok(0.5 * (ab.mean + ba.mean))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cube(g: Grid, lo: [usize; 3], hi: [usize; 3]) -> MaskVolume {
        let l = (0..g.len())
            .map(|i| {
                let (x, y, z) = g.coords(i);
                (lo[0]..hi[0]).contains(&x) && (lo[1]..hi[1]).contains(&y) && (lo[2]..hi[2]).contains(&z)
            })
            .collect();
        MaskVolume::new_static(g, l).unwrap()
    }

    #[test]
    fn kd_tree_matches_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<[f64; 3]> = (0..500).map(|_| [rng.random(), rng.random(), rng.random::<f64>() * 3.0]).collect();
        let tree = KdTree::new(pts.clone());
        for _ in 0..200 {
            let q = [rng.random(), rng.random(), rng.random::<f64>() * 3.0];
            let scan = pts.iter().map(|p| (0..3).map(|a| (p[a] - q[a]).powi(2)).sum::<f64>()).fold(f64::INFINITY, f64::min);
            assert_eq!(tree.nearest_sq(q), scan);
        }
    }

    #[test]
    fn identical_masks_have_zero_distance() {
        let g = Grid::new(10, 10, 10);
        let a = cube(g, [2, 2, 2], [7, 7, 7]);
        let r = surface_distance(&a, &a, [1.0; 3]).unwrap();
        assert!(r.distances.iter().all(|&d| d == 0.0));
        assert_eq!(r.quartiles, [0.0; 3]);
    }

    #[test]
    fn shifted_cube_is_about_one_voxel() {
        let g = Grid::new(14, 14, 14);
        let a = cube(g, [3, 3, 3], [9, 9, 9]);
        let b = cube(g, [4, 3, 3], [10, 9, 9]);
        // exhaustive oracle
        let pa = boundary_voxels(&a.labels, g);
        let pb = boundary_voxels(&b.labels, g);
        let oracle: f64 = pa
            .iter()
            .map(|&i| {
                let p = position(g, i, [1.0; 3]);
                pb.iter()
                    .map(|&j| {
                        let q = position(g, j, [1.0; 3]);
                        (0..3).map(|k| (p[k] - q[k]).powi(2)).sum::<f64>().sqrt()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .sum::<f64>()
            / pa.len() as f64;
        let r = surface_distance(&a, &b, [1.0; 3]).unwrap();
        assert!((r.mean - oracle).abs() < 1e-12);
        let s = symmetric_surface_distance(&a, &b, [1.0; 3]).unwrap();
        assert!(s > 0.2 && s <= 1.0, "{s}");
        assert_eq!(s, symmetric_surface_distance(&b, &a, [1.0; 3]).unwrap());
    }

    #[test]
    fn anisotropic_spacing_uses_smallest_voxel() {
        let g = Grid::new(6, 6, 8);
        let a = cube(g, [1, 1, 1], [5, 5, 6]);
        let b = cube(g, [1, 1, 2], [5, 5, 7]);
        let r = surface_distance(&a, &b, [1.0, 1.0, 1.3]).unwrap();
        // a unit z step reads as 1.3 because the divisor is the 1.0 mm spacing
        let max = r.distances.iter().copied().fold(0.0, f64::max);
        assert!((max - 1.3).abs() < 1e-12);
        assert!(r.quartiles[0] <= r.quartiles[1] && r.quartiles[1] <= r.quartiles[2]);
        let empty = MaskVolume::empty(g, 1);
        assert!(surface_distance(&a, &empty, [1.0; 3]).is_err());
    }
}
