//! Agreement between a velocity field and a reference inside a mask.

use serde::Serialize;

use crate::error::{Result, VastError};
use crate::grid::Grid;
use crate::volume::{MaskVolume, VelocityField};

pub const SSIM_WINDOW: usize = 7;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
/// Vectors shorter than this are left out of the cosine average.
pub const COSINE_MIN_NORM: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VelocityAgreement {
    /// cm/s, pooled over components, in-mask voxels and frames.
    pub rmse: f64,
    pub ssim: f64,
    /// NaN when no voxel has two non-negligible vectors.
    pub cosine: f64,
}

fn check(u: &VelocityField, reference: &VelocityField, mask: &MaskVolume) -> Result<()> {
    if u.meta.dims != reference.meta.dims {
        return Err(VastError::ShapeMismatch { what: "velocity field".into(), expected: reference.meta.len4(), found: u.meta.len4() });
    }
    if mask.grid != u.grid() {
        return Err(VastError::ShapeMismatch { what: "mask grid".into(), expected: u.grid().len(), found: mask.grid.len() });
    }
    if !mask.is_static() && mask.frames != u.nt() {
        return Err(VastError::ShapeMismatch { what: "mask frames".into(), expected: u.nt(), found: mask.frames });
    }
    if mask.is_empty() {
        return Err(VastError::EmptyMask("velocity agreement needs a non-empty mask".into()));
    }
    Ok(())
}

pub fn rmse(u: &VelocityField, reference: &VelocityField, mask: &MaskVolume) -> Result<f64> {
    check(u, reference, mask)?;
    let n = u.grid().len();
    let (mut se, mut count) = (0.0, 0usize);
    for t in 0..u.nt() {
        for i in 0..n {
            if mask.at(i, t) {
                let j = t * n + i;
                for k in 0..3 {
                    se += (u.component(k)[j] - reference.component(k)[j]).powi(2);
                }
                count += 3;
            }
        }
    }
    Ok((se / count as f64).sqrt())
}

pub fn cosine_similarity(u: &VelocityField, reference: &VelocityField, mask: &MaskVolume) -> Result<f64> {
    check(u, reference, mask)?;
    let n = u.grid().len();
    let (mut sum, mut count) = (0.0, 0usize);
    for t in 0..u.nt() {
        for i in (0..n).filter(|&i| mask.at(i, t)) {
            let j = t * n + i;
            let (na, nb) = (u.speed(j), reference.speed(j));
            if na < COSINE_MIN_NORM || nb < COSINE_MIN_NORM {
                continue;
            }
            let dot: f64 = (0..3).map(|k| u.component(k)[j] * reference.component(k)[j]).sum();
            sum += dot / (na * nb);
            count += 1;
        }
    }
    Ok(if count == 0 { f64::NAN } else { sum / count as f64 })
}

/// Summed-volume table with a zero guard plane on each low face.
struct Integral {
    g: Grid,
    s: Vec<f64>,
}

impl Integral {
    fn new(g: Grid, f: impl Fn(usize) -> f64) -> Self {
        let (px, py) = (g.nx + 1, g.ny + 1);
        let mut s = vec![0.0; px * py * (g.nz + 1)];
        let at = |x: usize, y: usize, z: usize| x + px * (y + py * z);
        for z in 0..g.nz {
            for y in 0..g.ny {
                for x in 0..g.nx {
                    let v = f(g.index(x, y, z));
                    s[at(x + 1, y + 1, z + 1)] = v + s[at(x, y + 1, z + 1)] + s[at(x + 1, y, z + 1)] + s[at(x + 1, y + 1, z)]
                        - s[at(x, y, z + 1)]
                        - s[at(x, y + 1, z)]
                        - s[at(x + 1, y, z)]
                        + s[at(x, y, z)];
                }
            }
        }
        Integral { g, s }
    }

    /// Sum over the inclusive box `lo..=hi`.
    fn sum(&self, lo: [usize; 3], hi: [usize; 3]) -> f64 {
        let (px, py) = (self.g.nx + 1, self.g.ny + 1);
        let at = |x: usize, y: usize, z: usize| self.s[x + px * (y + py * z)];
        let [x0, y0, z0] = lo;
        let [x1, y1, z1] = hi.map(|v| v + 1);
        at(x1, y1, z1) - at(x0, y1, z1) - at(x1, y0, z1) - at(x1, y1, z0) + at(x0, y0, z1) + at(x0, y1, z0)
            + at(x1, y0, z0)
            - at(x0, y0, z0)
    }
}

/// Mean SSIM over the voxels where `inside` holds, from 3D volumes `a`
/// (estimate) and `b` (reference). Windows are clipped at the grid edge.
pub fn ssim_3d(a: &[f64], b: &[f64], inside: &[bool], g: Grid, dynamic_range: f64) -> f64 {
    let c1 = (SSIM_K1 * dynamic_range).powi(2);
    let c2 = (SSIM_K2 * dynamic_range).powi(2);
    let sa = Integral::new(g, |i| a[i]);
    let sb = Integral::new(g, |i| b[i]);
    let saa = Integral::new(g, |i| a[i] * a[i]);
    let sbb = Integral::new(g, |i| b[i] * b[i]);
    let sab = Integral::new(g, |i| a[i] * b[i]);
    let r = SSIM_WINDOW / 2;
    let (mut total, mut count) = (0.0, 0usize);
    for i in (0..g.len()).filter(|&i| inside[i]) {
        let (x, y, z) = g.coords(i);
        let lo = [x.saturating_sub(r), y.saturating_sub(r), z.saturating_sub(r)];
        let hi = [(x + r).min(g.nx - 1), (y + r).min(g.ny - 1), (z + r).min(g.nz - 1)];
        let n = ((hi[0] - lo[0] + 1) * (hi[1] - lo[1] + 1) * (hi[2] - lo[2] + 1)) as f64;
        let (ma, mb) = (sa.sum(lo, hi) / n, sb.sum(lo, hi) / n);
        // sample (n - 1) normalisation
        let norm = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
        let va = (saa.sum(lo, hi) / n - ma * ma) * norm;
        let vb = (sbb.sum(lo, hi) / n - mb * mb) * norm;
        let cov = (sab.sum(lo, hi) / n - ma * mb) * norm;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        count += 1;
    }
    if count == 0 { f64::NAN } else { total / count as f64 }
}

/// SSIM per component and frame on the masked volumes (zero outside),
/// averaged over in-mask voxels and then over components and frames.
pub fn ssim(u: &VelocityField, reference: &VelocityField, mask: &MaskVolume) -> Result<f64> {
    check(u, reference, mask)?;
    let g = u.grid();
    let n = g.len();
    let nt = u.nt();
    let mut range: f64 = 0.0;
    for t in 0..nt {
        for i in (0..n).filter(|&i| mask.at(i, t)) {
            for k in 0..3 {
                range = range.max(reference.component(k)[t * n + i].abs());
            }
        }
    }
    if range == 0.0 {
        range = 1.0;
    }
    let scores = crate::par::map_range(3 * nt, |job| {
        let (k, t) = (job / nt, job % nt);
        let inside: Vec<bool> = (0..n).map(|i| mask.at(i, t)).collect();
        let pick = |f: &VelocityField| -> Vec<f64> {
            let c = &f.component(k)[t * n..(t + 1) * n];
            c.iter().zip(&inside).map(|(&v, &m)| if m { v } else { 0.0 }).collect()
        };
        ssim_3d(&pick(u), &pick(reference), &inside, g, range)
    });
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

pub fn velocity_agreement(u: &VelocityField, reference: &VelocityField, mask: &MaskVolume) -> Result<VelocityAgreement> {
    Ok(VelocityAgreement {
        rmse: rmse(u, reference, mask)?,
        ssim: ssim(u, reference, mask)?,
        cosine: cosine_similarity(u, reference, mask)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::AcquisitionMeta;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(seed: u64, dims: [usize; 4]) -> VelocityField {
        let meta = AcquisitionMeta::new(dims, [1.0; 3], 50.0, [100.0; 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = meta.len4();
        let mut draw = || (0..n).map(|_| rng.random_range(-50.0..50.0)).collect::<Vec<f64>>();
        let (u, v, w) = (draw(), draw(), draw());
        VelocityField::new(meta, u, v, w).unwrap()
    }

    fn full_mask(f: &VelocityField) -> MaskVolume {
        MaskVolume::new_static(f.grid(), vec![true; f.grid().len()]).unwrap()
    }

    #[test]
    fn identical_and_opposite_fields() {
        let f = random_field(1, [6, 5, 4, 3]);
        let m = full_mask(&f);
        let a = velocity_agreement(&f, &f, &m).unwrap();
        assert_eq!(a.rmse, 0.0);
        assert!((a.ssim - 1.0).abs() < 1e-12);
        assert!((a.cosine - 1.0).abs() < 1e-12);
        let mut neg = f.clone();
        (0..3).for_each(|k| neg.component_mut(k).iter_mut().for_each(|v| *v = -*v));
        assert!((cosine_similarity(&neg, &f, &m).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn bias_on_one_component_pools_over_three() {
        let f = random_field(2, [5, 5, 5, 2]);
        let mut g = f.clone();
        g.component_mut(1).iter_mut().for_each(|v| *v += 3.0);
        let r = rmse(&g, &f, &full_mask(&f)).unwrap();
        assert!((r - 3.0 / 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn ssim_matches_windowed_scan() {
        let g = Grid::new(9, 8, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a: Vec<f64> = (0..g.len()).map(|_| rng.random()).collect();
        let b: Vec<f64> = a.iter().map(|v| v + 0.3 * rng.random::<f64>()).collect();
        let inside: Vec<bool> = (0..g.len()).map(|i| i % 3 != 0).collect();
        let fast = ssim_3d(&a, &b, &inside, g, 1.3);
        let (c1, c2) = ((0.01f64 * 1.3).powi(2), (0.03f64 * 1.3).powi(2));
        let mut total = 0.0;
        let mut count = 0;
        for i in (0..g.len()).filter(|&i| inside[i]) {
            let mut w = Vec::new();
            g.for_each_in_cube(i, 3, |j| w.push((a[j], b[j])));
            let n = w.len() as f64;
            let ma = w.iter().map(|p| p.0).sum::<f64>() / n;
            let mb = w.iter().map(|p| p.1).sum::<f64>() / n;
            let va = w.iter().map(|p| (p.0 - ma).powi(2)).sum::<f64>() / (n - 1.0);
            let vb = w.iter().map(|p| (p.1 - mb).powi(2)).sum::<f64>() / (n - 1.0);
            let cv = w.iter().map(|p| (p.0 - ma) * (p.1 - mb)).sum::<f64>() / (n - 1.0);
            total += ((2.0 * ma * mb + c1) * (2.0 * cv + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
        assert!((fast - total / count as f64).abs() < 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn cosine_ignores_joint_positive_scaling(seed in 0u64..1000) {
            let a = random_field(seed, [4, 4, 3, 2]);
            let b = random_field(seed + 7, [4, 4, 3, 2]);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 99);
            let scale: Vec<f64> = (0..a.u.len()).map(|_| rng.random_range(0.1..10.0)).collect();
            let scaled = |f: &VelocityField| {
                let mut g = f.clone();
                (0..3).for_each(|k| g.component_mut(k).iter_mut().zip(&scale).for_each(|(v, s)| *v *= s));
                g
            };
            let m = full_mask(&a);
            let c0 = cosine_similarity(&a, &b, &m).unwrap();
            let c1 = cosine_similarity(&scaled(&a), &scaled(&b), &m).unwrap();
            prop_assert!((c0 - c1).abs() < 1e-12);
        }
    }
}
