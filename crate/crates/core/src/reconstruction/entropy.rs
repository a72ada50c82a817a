//! Spectral entropy of a spatial mode under an orthonormal 3D DCT-II.

use crate::grid::Grid;

/// Orthonormal DCT-II matrices for the three axes of a grid.
#[derive(Debug, Clone)]
pub struct Dct3 {
    grid: Grid,
    mats: [Vec<f64>; 3],
}

fn dct_matrix(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for k in 0..n {
        let s = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        for i in 0..n {
            m[k * n + i] = s * (std::f64::consts::PI * (i as f64 + 0.5) * k as f64 / n as f64).cos();
        }
    }
    m
}

impl Dct3 {
    pub fn new(grid: Grid) -> Self {
        Dct3 { grid, mats: [dct_matrix(grid.nx), dct_matrix(grid.ny), dct_matrix(grid.nz)] }
    }

    /// Separable forward transform of a full-grid volume.
    pub fn forward(&self, vol: &[f64]) -> Vec<f64> {
        let g = self.grid;
        let mut cur = vol.to_vec();
        let mut line = Vec::new();
        for axis in 0..3 {
            let len = g.extent(axis);
            let stride = g.stride(axis);
            let mat = &self.mats[axis];
            let mut next = vec![0.0; cur.len()];
            for start in 0..cur.len() {
                if g.coord(start, axis) != 0 {
                    continue;
                }
                line.clear();
                line.extend((0..len).map(|i| cur[start + i * stride]));
                for k in 0..len {
                    let row = &mat[k * len..(k + 1) * len];
                    next[start + k * stride] = row.iter().zip(&line).map(|(a, b)| a * b).sum();
                }
            }
            cur = next;
        }
        cur
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeEntropy {
    pub value: f64,
    /// The mode had no energy; `value` is 0 by convention.
    pub zero: bool,
}

/// `mode` is laid out as `[u | v | w]` over `voxels` (compact mask order).
pub fn mode_entropy(mode: &[f64], voxels: &[usize], dct: &Dct3) -> ModeEntropy {
    let m = voxels.len();
    let mut energy = Vec::with_capacity(3 * dct.grid.len());
    for k in 0..3 {
        let mut vol = vec![0.0; dct.grid.len()];
        for (s, &i) in voxels.iter().enumerate() {
            vol[i] = mode[k * m + s];
        }
        energy.extend(dct.forward(&vol).into_iter().map(|c| c * c));
    }
    let total: f64 = energy.iter().sum();
    if !(total > 0.0) {
        return ModeEntropy { value: 0.0, zero: true };
    }
    let value = energy
        .iter()
        .filter(|&&e| e > 0.0)
        .map(|&e| {
            let p = e / total;
            -p * p.ln()
        })
        .sum();
    ModeEntropy { value, zero: false }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Inverse of the orthonormal transform, applied as its transpose.
    fn inverse(dct: &Dct3, coeffs: &[f64]) -> Vec<f64> {
        let g = dct.grid;
        let mut cur = coeffs.to_vec();
        for axis in 0..3 {
            let len = g.extent(axis);
            let stride = g.stride(axis);
            let mat = &dct.mats[axis];
            let mut next = vec![0.0; cur.len()];
            for start in (0..cur.len()).filter(|&i| g.coord(i, axis) == 0) {
                for i in 0..len {
                    next[start + i * stride] = (0..len).map(|k| mat[k * len + i] * cur[start + k * stride]).sum();
                }
            }
            cur = next;
        }
        cur
    }

    fn all_voxels(g: Grid) -> Vec<usize> {
        (0..g.len()).collect()
    }

    #[test]
    fn transform_is_orthonormal() {
        let g = Grid::new(5, 4, 3);
        let dct = Dct3::new(g);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v: Vec<f64> = (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c = dct.forward(&v);
        let e0: f64 = v.iter().map(|x| x * x).sum();
        let e1: f64 = c.iter().map(|x| x * x).sum();
        assert!((e0 - e1).abs() < 1e-10);
        // constant volume maps onto the DC coefficient
        let dc = dct.forward(&vec![2.0; g.len()]);
        assert!((dc[0] - 2.0 * (g.len() as f64).sqrt()).abs() < 1e-10);
        assert!(dc[1..].iter().all(|x| x.abs() < 1e-10));
    }

    #[test]
    fn entropy_examples() {
        let g = Grid::new(6, 5, 4);
        let dct = Dct3::new(g);
        let vox = all_voxels(g);
        let n = g.len();
        // a single coefficient in one component
        let mut one = vec![0.0; 3 * n];
        one[..n].fill(1.0);
        assert!(mode_entropy(&one, &vox, &dct).value.abs() < 1e-9);
        // equal-magnitude coefficients everywhere give ln(3n)
        let flat = inverse(&dct, &vec![1.0; n]);
        let mut mode = vec![0.0; 3 * n];
        mode[..n].copy_from_slice(&flat);
        mode[n..2 * n].copy_from_slice(&flat);
        mode[2 * n..].copy_from_slice(&flat);
        let h = mode_entropy(&mode, &vox, &dct).value;
        assert!((h - (3.0 * n as f64).ln()).abs() < 1e-9, "{h}");
        assert!(mode_entropy(&vec![0.0; 3 * n], &vox, &dct).zero);
    }

    #[test]
    fn smooth_mode_has_lower_entropy_than_noise() {
        let g = Grid::new(12, 12, 10);
        let dct = Dct3::new(g);
        let vox = all_voxels(g);
        let n = g.len();
        let smooth: Vec<f64> = (0..3 * n)
            .map(|k| {
                let (x, y, _) = g.coords(k % n);
                ((x as f64 / 11.0) * std::f64::consts::PI).sin() * (y as f64 / 11.0)
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noise: Vec<f64> = (0..3 * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let hs = mode_entropy(&smooth, &vox, &dct).value;
        let hn = mode_entropy(&noise, &vox, &dct).value;
        assert!(hs < hn, "{hs} vs {hn}");
    }
}
