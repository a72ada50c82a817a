//! Background likelihoods from magnitude (kernel density) and phase
//! (standardised difference of means against an empirical background CDF).

use crate::error::{Result, VastError};
use crate::par;
use crate::volume::VelocityField;

pub const MIN_KDE_SAMPLES: usize = 10;
const KDE_GRID: usize = 1024;
/// Floor on the neighbourhood standard deviation, cm/s.
pub const SDM_SIGMA_FLOOR: f64 = 1e-6;

/// Gaussian kernel density estimate of a 1D sample, stored as its CDF
/// tabulated on a regular grid.
#[derive(Debug, Clone)]
pub struct GaussianKde {
    pub bandwidth: f64,
    lo: f64,
    step: f64,
    cdf: Vec<f64>,
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let f = pos - lo as f64;
    sorted[lo] * (1.0 - f) + sorted[hi] * f
}

/// Silverman's rule, `0.9 min(sd, IQR / 1.34) n^(-1/5)`, with a small floor
/// for degenerate samples.
pub fn silverman_bandwidth(sorted: &[f64]) -> f64 {
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let sd = (sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = 0.9 * spread * n.powf(-0.2);
    h.max(1e-6 * (1.0 + mean.abs()))
}

impl GaussianKde {
    pub fn fit(samples: &[f64]) -> Result<Self> {
        if samples.len() < MIN_KDE_SAMPLES {
            return Err(VastError::InsufficientSamples { needed: MIN_KDE_SAMPLES, found: samples.len() });
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let h = silverman_bandwidth(&sorted);
        let lo = sorted[0] - 4.0 * h;
        let hi = sorted[sorted.len() - 1] + 4.0 * h;
        let step = (hi - lo) / (KDE_GRID - 1) as f64;

        // linear binning of the sample onto the grid
        let mut bins = vec![0.0; KDE_GRID];
        for &s in &sorted {
            let pos = (s - lo) / step;
            let j = (pos.floor() as usize).min(KDE_GRID - 2);
            let f = pos - j as f64;
            bins[j] += 1.0 - f;
            bins[j + 1] += f;
        }
        // density on the grid: binned counts convolved with the kernel
        let reach = ((4.0 * h / step).ceil() as usize).min(KDE_GRID - 1);
        let kernel: Vec<f64> = (0..=reach).map(|d| (-0.5 * (d as f64 * step / h).powi(2)).exp()).collect();
        let mut density = vec![0.0; KDE_GRID];
        for (j, &b) in bins.iter().enumerate() {
            if b == 0.0 {
                continue;
            }
            let a = j.saturating_sub(reach);
            let e = (j + reach).min(KDE_GRID - 1);
            for (i, d) in density[a..=e].iter_mut().enumerate() {
                *d += b * kernel[(a + i).abs_diff(j)];
            }
        }
        // cumulative trapezoid integral, normalised to end at 1
        let mut cdf = vec![0.0; KDE_GRID];
        for i in 1..KDE_GRID {
            cdf[i] = cdf[i - 1] + 0.5 * (density[i - 1] + density[i]) * step;
        }
        let total = cdf[KDE_GRID - 1];
        cdf.iter_mut().for_each(|c| *c /= total);
        Ok(GaussianKde { bandwidth: h, lo, step, cdf })
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let pos = (x - self.lo) / self.step;
        if pos <= 0.0 {
            return 0.0;
        }
        if pos >= (KDE_GRID - 1) as f64 {
            return 1.0;
        }
        let j = pos.floor() as usize;
        let f = pos - j as f64;
        (self.cdf[j] * (1.0 - f) + self.cdf[j + 1] * f).clamp(0.0, 1.0)
    }
}

/// `1 - F_bg(mag)` with `F_bg` the KDE fitted to magnitudes under `bg`.
pub fn magnitude_likelihood(mag: &[f64], bg: &[bool]) -> Result<Vec<f64>> {
    crate::volume::check_len("background mask", mag.len(), bg.len())?;
    let samples: Vec<f64> = mag.iter().zip(bg).filter_map(|(&m, &b)| b.then_some(m)).collect();
    let kde = GaussianKde::fit(&samples)?;
    Ok(par::map_range(mag.len(), |i| 1.0 - kde.cdf(mag[i])))
}

/// Standardised difference of means at one voxel and frame over the 3x3x3
/// spatial neighbourhood (clipped at the grid edge) and frames t-1..t+1
/// (the edge frame repeated at either end of the sequence).
pub fn sdm_statistic(u: &VelocityField, voxel: usize, frame: usize) -> f64 {
    let g = u.grid();
    let nt = u.nt();
    let frames = [frame.saturating_sub(1), frame, (frame + 1).min(nt - 1)];
    let mut total = 0.0;
    let mut idx = Vec::with_capacity(27);
    g.for_each_in_cube(voxel, 1, |j| idx.push(j));
    for k in 0..3 {
        let c = u.component(k);
        let vals = frames.iter().flat_map(|&t| idx.iter().map(move |&j| c[j + t * g.len()]));
        let n = (idx.len() * 3) as f64;
        let mean = vals.clone().sum::<f64>() / n;
        let var = vals.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt().max(SDM_SIGMA_FLOOR);
        let z = mean / (sd / 3f64.sqrt());
        total += z * z;
    }
    total.sqrt()
}

/// `sdm_statistic` at every voxel and frame.
pub fn sdm_field(u: &VelocityField) -> Vec<f64> {
    let n = u.grid().len();
    let nt = u.nt();
    par::map_range(nt, |t| (0..n).map(|i| sdm_statistic(u, i, t)).collect::<Vec<f64>>()).concat()
}

/// Empirical CDF of a background sample.
#[derive(Debug, Clone)]
pub struct EmpiricalCdf {
    sorted: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn new(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(VastError::EmptyMask("phase likelihood needs background voxels".into()));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(EmpiricalCdf { sorted })
    }

    /// Fraction of samples `<= x`.
    pub fn eval(&self, x: f64) -> f64 {
        self.sorted.partition_point(|&s| s <= x) as f64 / self.sorted.len() as f64
    }
}

/// `1 - ECDF_bg(U~)` with the ECDF taken over the current background.
pub fn phase_likelihood(sdm: &[f64], bg: &[bool]) -> Result<Vec<f64>> {
    crate::volume::check_len("background mask", sdm.len(), bg.len())?;
    let samples: Vec<f64> = sdm.iter().zip(bg).filter_map(|(&s, &b)| b.then_some(s)).collect();
    let ecdf = EmpiricalCdf::new(&samples)?;
    Ok(par::map_range(sdm.len(), |i| 1.0 - ecdf.eval(sdm[i])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::AcquisitionMeta;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn normal_sample(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(0.2, 0.05).unwrap();
        (0..n).map(|_| d.sample(&mut rng)).collect()
    }

    /// Exact Gaussian-mixture CDF, for cross-checking the tabulated one.
    fn exact_cdf(samples: &[f64], h: f64, x: f64) -> f64 {
        samples.iter().map(|s| 0.5 * (1.0 + erf((x - s) / (h * 2f64.sqrt())))).sum::<f64>() / samples.len() as f64
    }

    // Abramowitz-Stegun 7.1.26, |error| < 1.5e-7
    fn erf(x: f64) -> f64 {
        let t = 1.0 / (1.0 + 0.3275911 * x.abs());
        let y = 1.0
            - (((((1.061405429 * t - 1.453152027) * t) + 1.421413741) * t - 0.284496736) * t + 0.254829592)
                * t
                * (-x * x).exp();
        if x >= 0.0 { y } else { -y }
    }

    #[test]
    fn kde_tails_and_median() {
        let s = normal_sample(2000, 1);
        let kde = GaussianKde::fit(&s).unwrap();
        assert!(1.0 - kde.cdf(-10.0) > 0.999_999);
        assert!(1.0 - kde.cdf(10.0) < 1e-9);
        let mut sorted = s.clone();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[1000];
        assert!((1.0 - kde.cdf(median) - 0.5).abs() < 0.05);
    }

    #[test]
    fn kde_matches_exact_mixture_cdf() {
        let s = normal_sample(300, 2);
        let kde = GaussianKde::fit(&s).unwrap();
        for x in [0.05, 0.15, 0.2, 0.26, 0.33] {
            let exact = exact_cdf(&s, kde.bandwidth, x);
            assert!((kde.cdf(x) - exact).abs() < 2e-3, "x={x}: {} vs {exact}", kde.cdf(x));
        }
    }

    #[test]
    fn kde_needs_ten_samples() {
        assert!(matches!(
            GaussianKde::fit(&[0.1; 9]),
            Err(VastError::InsufficientSamples { needed: 10, found: 9 })
        ));
        // degenerate but sufficient samples still give a valid CDF
        let kde = GaussianKde::fit(&[0.2; 12]).unwrap();
        assert_eq!(kde.cdf(0.1), 0.0);
        assert_eq!(kde.cdf(0.3), 1.0);
    }

    fn field(dims: [usize; 4], f: impl Fn(usize, usize) -> [f64; 3]) -> VelocityField {
        let meta = AcquisitionMeta::new(dims, [1.0; 3], 50.0, [100.0; 3]);
        let n = meta.voxels();
        let mut out = VelocityField::zeros(meta);
        for t in 0..dims[3] {
            for i in 0..n {
                let v = f(i, t);
                out.u[i + t * n] = v[0];
                out.v[i + t * n] = v[1];
                out.w[i + t * n] = v[2];
            }
        }
        out
    }

    #[test]
    fn sdm_zero_field() {
        let u = field([3, 3, 3, 3], |_, _| [0.0; 3]);
        assert_eq!(sdm_statistic(&u, 13, 1), 0.0);
    }

    #[test]
    fn sdm_mean_two_std_one() {
        // 81 samples; values 1 and 3 in equal numbers, plus one at 2:
        // mean 2, population std sqrt(80/81)
        let u = field([3, 3, 3, 3], |i, t| {
            let k = i + 27 * t;
            let v = if k == 40 { 2.0 } else if k % 2 == 0 { 1.0 } else { 3.0 };
            [v, 0.0, 0.0]
        });
        let sd = (80.0f64 / 81.0).sqrt();
        let expect = 2.0 / (sd / 3f64.sqrt());
        assert!((sdm_statistic(&u, 13, 1) - expect).abs() < 1e-12);
        // unit std gives 2 sqrt(3)
        assert!((2.0 / (1.0 / 3f64.sqrt()) - 3.4641016).abs() < 1e-6);
    }

    #[test]
    fn sdm_constant_uses_floor() {
        let c = 1.5;
        let u = field([3, 3, 3, 2], |_, _| [c, 0.0, 0.0]);
        let expect = c * 3f64.sqrt() / SDM_SIGMA_FLOOR;
        let got = sdm_statistic(&u, 13, 0);
        assert!(got.is_finite());
        assert!((got - expect).abs() / expect < 1e-9);
    }

    #[test]
    fn ecdf_likelihood_examples() {
        let samples: Vec<f64> = (1..=1000).map(|i| i as f64 / 1000.0).collect();
        let bg = vec![true; samples.len()];
        let mut query = samples.clone();
        query.extend([0.0, 5.0, 0.9]);
        let mut mask = bg.clone();
        mask.extend([false; 3]);
        let p = phase_likelihood(&query, &mask).unwrap();
        assert_eq!(p[1000], 1.0);
        assert_eq!(p[1001], 0.0);
        assert!((p[1002] - 0.1).abs() < 0.02);
        assert!(phase_likelihood(&[1.0], &[false]).is_err());
    }
}
