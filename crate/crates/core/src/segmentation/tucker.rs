//! Tucker decomposition of the 4D magnitude tensor (HOSVD initialisation
//! refined by higher-order orthogonal iteration).

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Result, VastError};

#[derive(Debug, Clone)]
pub struct TuckerModel {
    pub dims: [usize; 4],
    pub ranks: [usize; 4],
    /// Column-orthonormal factors, `dims[n] x ranks[n]`. Index 3 is temporal.
    pub factors: [DMatrix<f64>; 4],
    /// Core coefficients, shape `ranks`, first index fastest.
    pub core: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct TuckerOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for TuckerOptions {
    fn default() -> Self {
        TuckerOptions { max_iterations: 100, tolerance: 1e-7 }
    }
}

/// Default ranks: `min(dim, 8)` spatially and `min(nt, 3)` temporally.
pub fn default_ranks(dims: [usize; 4]) -> [usize; 4] {
    [dims[0].min(8), dims[1].min(8), dims[2].min(8), dims[3].min(3)]
}

/// Mode-`n` Gram matrix `X_(n) X_(n)^T` of a tensor with shape `shape`.
fn gram(x: &[f64], shape: [usize; 4], n: usize) -> DMatrix<f64> {
    let inner: usize = shape[..n].iter().product();
    let d = shape[n];
    let outer: usize = shape[n + 1..].iter().product();
    let mut g = DMatrix::<f64>::zeros(d, d);
    for o in 0..outer {
        let base = o * d * inner;
        for a in 0..d {
            let ra = &x[base + a * inner..base + (a + 1) * inner];
            for b in a..d {
                let rb = &x[base + b * inner..base + (b + 1) * inner];
                let s: f64 = ra.iter().zip(rb).map(|(p, q)| p * q).sum();
                g[(a, b)] += s;
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            g[(a, b)] = g[(b, a)];
        }
    }
    g
}

/// Mode-`n` product with `m^T` (`m` is `shape[n] x r`), replacing axis `n`
/// by an axis of length `r`.
fn mode_product_t(x: &[f64], shape: [usize; 4], n: usize, m: &DMatrix<f64>) -> (Vec<f64>, [usize; 4]) {
    let inner: usize = shape[..n].iter().product();
    let d = shape[n];
    let outer: usize = shape[n + 1..].iter().product();
    let r = m.ncols();
    let mut out = vec![0.0; inner * r * outer];
    for o in 0..outer {
        for a in 0..d {
            let src = &x[(o * d + a) * inner..(o * d + a + 1) * inner];
            for k in 0..r {
                let coef = m[(a, k)];
                if coef == 0.0 {
                    continue;
                }
                let dst = &mut out[(o * r + k) * inner..(o * r + k + 1) * inner];
                for (y, &v) in dst.iter_mut().zip(src) {
                    *y += coef * v;
                }
            }
        }
    }
    let mut s = shape;
    s[n] = r;
    (out, s)
}

/// Mode-`n` product with `m` (`m` is `d x shape[n]`).
fn mode_product(x: &[f64], shape: [usize; 4], n: usize, m: &DMatrix<f64>) -> (Vec<f64>, [usize; 4]) {
    mode_product_t(x, shape, n, &m.transpose())
}

/// Leading `r` eigenvectors of a symmetric matrix, by decreasing eigenvalue.
fn leading_eigvecs(g: DMatrix<f64>, r: usize) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(g);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let d = eig.eigenvectors.nrows();
    let mut out = DMatrix::<f64>::zeros(d, r);
    for (k, &j) in order.iter().take(r).enumerate() {
        let mut col = eig.eigenvectors.column(j).into_owned();
        // fix the sign so the largest-magnitude entry is positive
        let (imax, _) = col.iter().enumerate().fold((0, 0.0f64), |acc, (i, v)| if v.abs() > acc.1 { (i, v.abs()) } else { acc });
        if col[imax] < 0.0 {
            col.neg_mut();
        }
        out.set_column(k, &col);
    }
    out
}

fn project_all_but(x: &[f64], dims: [usize; 4], factors: &[DMatrix<f64>; 4], skip: usize) -> (Vec<f64>, [usize; 4]) {
    let mut cur = x.to_vec();
    let mut shape = dims;
    for n in 0..4 {
        if n != skip {
            let (next, s) = mode_product_t(&cur, shape, n, &factors[n]);
            cur = next;
            shape = s;
        }
    }
    (cur, shape)
}

pub fn tucker_decompose(x: &[f64], dims: [usize; 4], ranks: [usize; 4], opts: TuckerOptions) -> Result<TuckerModel> {
    let n: usize = dims.iter().product();
    crate::volume::check_len("tucker input", n, x.len())?;
    for k in 0..4 {
        if ranks[k] == 0 || ranks[k] > dims[k] {
            return Err(VastError::Validation(format!(
                "rank {} on axis {k} must be in 1..={}",
                ranks[k], dims[k]
            )));
        }
    }
    let mut factors: [DMatrix<f64>; 4] = [0, 1, 2, 3].map(|k| leading_eigvecs(gram(x, dims, k), ranks[k]));
    let core_norm = |f: &[DMatrix<f64>; 4]| -> (Vec<f64>, f64) {
        let (y, s) = project_all_but(x, dims, f, 3);
        let (core, _) = mode_product_t(&y, s, 3, &f[3]);
        let norm = core.iter().map(|v| v * v).sum::<f64>().sqrt();
        (core, norm)
    };
    let (_, mut norm) = core_norm(&factors);
    let x_norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut iterations = 0;
    let mut change = f64::INFINITY;
    while iterations < opts.max_iterations {
        iterations += 1;
        for k in 0..4 {
            let (y, s) = project_all_but(x, dims, &factors, k);
            factors[k] = leading_eigvecs(gram(&y, s, k), ranks[k]);
        }
        let (c, m) = core_norm(&factors);
        change = (m - norm).abs() / x_norm.max(f64::MIN_POSITIVE);
        norm = m;
        if change <= opts.tolerance {
            return Ok(TuckerModel { dims, ranks, factors, core: c, iterations });
        }
    }
    Err(VastError::Decomposition { iterations, last_change: change })
}

impl TuckerModel {
    fn expand(&self, core: &[f64], shape: [usize; 4], temporal: &DMatrix<f64>) -> Vec<f64> {
        let mut cur = core.to_vec();
        let mut s = shape;
        for n in 0..3 {
            let (next, ns) = mode_product(&cur, s, n, &self.factors[n]);
            cur = next;
            s = ns;
        }
        mode_product(&cur, s, 3, temporal).0
    }

    /// Full reconstruction from all retained modes.
    pub fn reconstruct(&self) -> Vec<f64> {
        self.expand(&self.core, self.ranks, &self.factors[3])
    }

    /// Reconstruction restricted to the dominant temporal mode.
    pub fn reconstruct_dominant_temporal(&self) -> Vec<f64> {
        let [rx, ry, rz, _] = self.ranks;
        let slab = rx * ry * rz;
        let core1 = self.core[..slab].to_vec();
        let t1 = self.factors[3].columns(0, 1).into_owned();
        self.expand(&core1, [rx, ry, rz, 1], &t1)
    }
}

/// Low-rank magnitude denoising keeping only the dominant temporal mode,
/// clamped at zero.
pub fn tucker_denoise(mag: &[f64], dims: [usize; 4], ranks: [usize; 4]) -> Result<Vec<f64>> {
    let model = tucker_decompose(mag, dims, ranks, TuckerOptions::default())?;
    let mut out = model.reconstruct_dominant_temporal();
    out.iter_mut().for_each(|v| *v = v.max(0.0));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outer(a: &[f64], b: &[f64], c: &[f64], t: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(a.len() * b.len() * c.len() * t.len());
        for &tt in t {
            for &cc in c {
                for &bb in b {
                    for &aa in a {
                        out.push(aa * bb * cc * tt);
                    }
                }
            }
        }
        out
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den).sqrt()
    }

    #[test]
    fn rank_one_tensor_is_exact() {
        let a = [1.0, 2.0, 0.5, 3.0];
        let b = [0.2, 1.0, 1.5];
        let c = [2.0, 1.0, 1.0, 0.5, 0.1];
        let t = [1.0, 0.9, 1.1];
        let x = outer(&a, &b, &c, &t);
        let den = tucker_denoise(&x, [4, 3, 5, 3], [1, 1, 1, 1]).unwrap();
        assert!(rel_err(&den, &x) < 1e-6);
    }

    #[test]
    fn temporally_constant_input_stays_constant() {
        let a = [1.0, 2.0, 0.5, 3.0];
        let b = [0.2, 1.0, 1.5];
        let c = [2.0, 1.0, 1.0];
        let a2 = [0.5, -1.0, 1.0, 0.0];
        let b2 = [1.0, 0.0, -1.0];
        let c2 = [0.0, 1.0, 2.0];
        let t = [1.0; 4];
        let mut x = outer(&a, &b, &c, &t);
        for (v, w) in x.iter_mut().zip(outer(&a2, &b2, &c2, &t)) {
            *v += 0.3 * w;
        }
        let model = tucker_decompose(&x, [4, 3, 3, 4], [3, 3, 3, 2], TuckerOptions::default()).unwrap();
        let rec = model.reconstruct_dominant_temporal();
        let n3 = 36;
        for t in 1..4 {
            for i in 0..n3 {
                assert!((rec[i] - rec[i + t * n3]).abs() < 1e-10);
            }
        }
        // spatial ranks cover the rank-2 spatial content exactly
        assert!(rel_err(&rec, &x) < 1e-9);
    }

    #[test]
    fn keeps_only_dominant_temporal_component() {
        // orthogonal factors on every axis, energies 3 and 1
        let a1 = [1.0, 1.0, 1.0, 1.0];
        let a2 = [1.0, -1.0, 1.0, -1.0];
        let b1 = [1.0, 1.0, 0.0];
        let b2 = [1.0, -1.0, 0.0];
        let c1 = [1.0, 0.0, 1.0];
        let c2 = [0.0, 1.0, 0.0];
        let t1 = [1.0, 1.0, 1.0, 1.0, 1.0];
        let t2 = [1.0, -1.0, 0.0, 1.0, -1.0];
        let dominant: Vec<f64> = outer(&a1, &b1, &c1, &t1).into_iter().map(|v| 3.0 * v).collect();
        let minor = outer(&a2, &b2, &c2, &t2);
        let x: Vec<f64> = dominant.iter().zip(&minor).map(|(p, q)| p + q).collect();
        let model = tucker_decompose(&x, [4, 3, 3, 5], [2, 2, 2, 2], TuckerOptions::default()).unwrap();
        let rec = model.reconstruct_dominant_temporal();
        let residual: Vec<f64> = x.iter().zip(&rec).map(|(p, q)| p - q).collect();
        assert!(rel_err(&rec, &dominant) < 1e-9);
        assert!(rel_err(&residual, &minor) < 1e-9);
        assert!(rel_err(&model.reconstruct(), &x) < 1e-9);
    }

    #[test]
    fn rank_above_dimension_is_rejected() {
        let x = vec![1.0; 2 * 2 * 2 * 2];
        assert!(tucker_decompose(&x, [2, 2, 2, 2], [3, 1, 1, 1], TuckerOptions::default()).is_err());
    }

    #[test]
    fn iteration_cap_reports_count() {
        let x: Vec<f64> = (0..(5 * 4 * 3 * 3)).map(|i| ((i * 37) % 11) as f64).collect();
        let opts = TuckerOptions { max_iterations: 1, tolerance: 0.0 };
        match tucker_decompose(&x, [5, 4, 3, 3], [2, 2, 2, 2], opts) {
            Err(VastError::Decomposition { iterations: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }
}
