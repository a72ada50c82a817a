//! 3D Sauvola thresholding with edge-clipped cubic windows, evaluated in
//! O(N) through summed-volume tables.

use crate::grid::Grid;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SauvolaParams {
    /// Odd window edge length in voxels.
    pub window: usize,
    pub k: f64,
    pub r: f64,
}

impl Default for SauvolaParams {
    fn default() -> Self {
        SauvolaParams { window: 11, k: 0.2, r: 0.5 }
    }
}

#[derive(Debug, Clone)]
pub struct SauvolaResult {
    pub threshold: Vec<f64>,
    /// `vol < threshold`: the dark class.
    pub below: Vec<bool>,
}

impl SauvolaResult {
    pub fn mean_threshold(&self) -> f64 {
        self.threshold.iter().sum::<f64>() / self.threshold.len().max(1) as f64
    }
}

#[inline]
pub fn sauvola_threshold(mean: f64, std: f64, p: &SauvolaParams) -> f64 {
    mean * (1.0 + p.k * (std / p.r - 1.0))
}

/// Summed-volume table with a zero apron, shape `(nx+1)(ny+1)(nz+1)`.
struct Integral {
    sx: usize,
    sxy: usize,
    data: Vec<f64>,
}

impl Integral {
    fn new(g: Grid, f: impl Fn(usize) -> f64) -> Self {
        let (sx, sy) = (g.nx + 1, g.ny + 1);
        let sxy = sx * sy;
        let mut data = vec![0.0; sxy * (g.nz + 1)];
        for z in 0..g.nz {
            for y in 0..g.ny {
                let mut row = 0.0;
                for x in 0..g.nx {
                    row += f(g.index(x, y, z));
                    let o = (x + 1) + sx * (y + 1) + sxy * (z + 1);
                    data[o] = row + data[o - sx] + data[o - sxy] - data[o - sx - sxy];
                }
            }
        }
        Integral { sx, sxy, data }
    }

    /// Sum over the half-open box `[x0,x1) x [y0,y1) x [z0,z1)`.
    #[inline]
    fn sum(&self, x0: usize, x1: usize, y0: usize, y1: usize, z0: usize, z1: usize) -> f64 {
        let at = |x: usize, y: usize, z: usize| self.data[x + self.sx * y + self.sxy * z];
        at(x1, y1, z1) - at(x0, y1, z1) - at(x1, y0, z1) - at(x1, y1, z0) + at(x0, y0, z1) + at(x0, y1, z0)
            + at(x1, y0, z0)
            - at(x0, y0, z0)
    }
}

/// Local window mean and population standard deviation at every voxel.
pub fn local_mean_std(vol: &[f64], g: Grid, window: usize) -> (Vec<f64>, Vec<f64>) {
    let h = window / 2;
    // centre the data so the second-moment table does not cancel badly
    let shift = vol.iter().sum::<f64>() / vol.len().max(1) as f64;
    let s1 = Integral::new(g, |i| vol[i] - shift);
    let s2 = Integral::new(g, |i| (vol[i] - shift).powi(2));
    let mut mean = vec![0.0; g.len()];
    let mut std = vec![0.0; g.len()];
    for i in 0..g.len() {
        let (x, y, z) = g.coords(i);
        let (x0, x1) = (x.saturating_sub(h), (x + h + 1).min(g.nx));
        let (y0, y1) = (y.saturating_sub(h), (y + h + 1).min(g.ny));
        let (z0, z1) = (z.saturating_sub(h), (z + h + 1).min(g.nz));
        let n = ((x1 - x0) * (y1 - y0) * (z1 - z0)) as f64;
        let m = s1.sum(x0, x1, y0, y1, z0, z1) / n;
        let v = s2.sum(x0, x1, y0, y1, z0, z1) / n - m * m;
        mean[i] = m + shift;
        std[i] = v.max(0.0).sqrt();
    }
    (mean, std)
}

pub fn sauvola3d(vol: &[f64], g: Grid, params: &SauvolaParams) -> SauvolaResult {
    let (mean, std) = local_mean_std(vol, g, params.window);
    let threshold: Vec<f64> = mean.iter().zip(&std).map(|(&m, &s)| sauvola_threshold(m, s, params)).collect();
    let below = vol.iter().zip(&threshold).map(|(v, t)| v < t).collect();
    SauvolaResult { threshold, below }
}
