//! Connected-component cleanup and hole filling on a single 3D frame.

use crate::grid::Grid;

/// 6-connected component labels (0 = unlabelled, components from 1) and the
/// voxel count of each component (index 0 unused).
pub fn label_components(mask: &[bool], g: Grid) -> (Vec<u32>, Vec<usize>) {
    let mut labels = vec![0u32; mask.len()];
    let mut sizes = vec![0usize];
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || labels[start] != 0 {
            continue;
        }
        let id = sizes.len() as u32;
        let mut size = 0;
        labels[start] = id;
        stack.push(start);
        while let Some(i) = stack.pop() {
            size += 1;
            g.for_each_face_neighbor(i, |j| {
                if mask[j] && labels[j] == 0 {
                    labels[j] = id;
                    stack.push(j);
                }
            });
        }
        sizes.push(size);
    }
    (labels, sizes)
}

/// Keeps components with at least `min_size` voxels and at least `fraction`
/// of the largest component's volume.
pub fn keep_large_components(mask: &[bool], g: Grid, fraction: f64, min_size: usize) -> Vec<bool> {
    let (labels, sizes) = label_components(mask, g);
    let largest = sizes.iter().copied().max().unwrap_or(0);
    let keep: Vec<bool> = sizes
        .iter()
        .map(|&s| s > 0 && s >= min_size && s as f64 >= fraction * largest as f64)
        .collect();
    labels.iter().map(|&l| l != 0 && keep[l as usize]).collect()
}

/// Fills background pockets not 6-connected to the grid border.
pub fn fill_holes(mask: &[bool], g: Grid) -> Vec<bool> {
    let mut outside = vec![false; mask.len()];
    let mut stack: Vec<usize> = (0..mask.len()).filter(|&i| !mask[i] && g.on_border(i)).collect();
    for &i in &stack {
        outside[i] = true;
    }
    while let Some(i) = stack.pop() {
        g.for_each_face_neighbor(i, |j| {
            if !mask[j] && !outside[j] {
                outside[j] = true;
                stack.push(j);
            }
        });
    }
    outside.iter().map(|o| !o).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_two_blobs() {
        let g = Grid::new(5, 1, 1);
        let (labels, sizes) = label_components(&[true, true, false, true, false], g);
        assert_eq!(labels, vec![1, 1, 0, 2, 0]);
        assert_eq!(sizes, vec![0, 2, 1]);
    }

    #[test]
    fn isolated_voxel_removed() {
        let g = Grid::new(10, 10, 10);
        let mut m = vec![false; g.len()];
        for z in 2..8 {
            for y in 2..6 {
                for x in 2..6 {
                    m[g.index(x, y, z)] = true;
                }
            }
        }
        m[g.index(8, 8, 8)] = true;
        let kept = keep_large_components(&m, g, 0.1, 1);
        assert!(!kept[g.index(8, 8, 8)]);
        assert_eq!(kept.iter().filter(|&&b| b).count(), 96);
    }

    #[test]
    fn interior_hole_filled() {
        let g = Grid::new(7, 7, 7);
        let mut m = vec![false; g.len()];
        for z in 1..6 {
            for y in 1..6 {
                for x in 1..6 {
                    m[g.index(x, y, z)] = true;
                }
            }
        }
        m[g.index(3, 3, 3)] = false;
        let f = fill_holes(&m, g);
        assert!(f[g.index(3, 3, 3)]);
        assert!(!f[g.index(0, 0, 0)]);
        assert_eq!(f.iter().filter(|&&b| b).count(), 125);
    }
}
