//! Symmetric sparse matrices in CSR form and a preconditioned
//! conjugate-gradient solver (incomplete Cholesky, Jacobi as fallback).

/// Row-wise accumulator for a square matrix; duplicate entries are summed.
#[derive(Debug, Clone)]
pub struct RowBuilder {
    rows: Vec<Vec<(u32, f64)>>,
}

impl RowBuilder {
    pub fn new(n: usize) -> Self {
        RowBuilder { rows: vec![Vec::new(); n] }
    }

    #[inline]
    pub fn add(&mut self, row: usize, col: usize, v: f64) {
        self.rows[row].push((col as u32, v));
    }

    pub fn build(self) -> Csr {
        let n = self.rows.len();
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for mut row in self.rows {
            row.sort_unstable_by_key(|e| e.0);
            let mut last: Option<u32> = None;
            for (c, v) in row {
                if last == Some(c) {
                    *values.last_mut().unwrap() += v;
                } else {
                    indices.push(c);
                    values.push(v);
                    last = Some(c);
                }
            }
            indptr.push(indices.len());
        }
        Csr { n, indptr, indices, values }
    }
}

#[derive(Debug, Clone)]
pub struct Csr {
    pub n: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl Csr {
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn mul_into(&self, x: &[f64], y: &mut [f64]) {
        for (r, out) in y.iter_mut().enumerate() {
            let (a, b) = (self.indptr[r], self.indptr[r + 1]);
            *out = self.indices[a..b]
                .iter()
                .zip(&self.values[a..b])
                .map(|(&c, &v)| v * x[c as usize])
                .sum();
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n)
            .map(|r| {
                let (a, b) = (self.indptr[r], self.indptr[r + 1]);
                (a..b).find(|&k| self.indices[k] as usize == r).map_or(0.0, |k| self.values[k])
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl CgOptions {
    /// Relative tolerance 1e-8 and a cap of `10 sqrt(n)` iterations.
    pub fn for_size(n: usize) -> Self {
        CgOptions { tolerance: 1e-8, max_iterations: (10.0 * (n as f64).sqrt()).ceil() as usize }
    }
}

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// `||b - A x|| / ||b||` of the returned iterate.
    pub relative_residual: f64,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Zero-fill incomplete Cholesky factor `L` (lower triangle, row-major,
/// diagonal last in each row).
#[derive(Debug, Clone)]
pub struct Ic0 {
    indptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl Ic0 {
    /// `None` when a pivot is not positive.
    pub fn new(a: &Csr) -> Option<Self> {
        Self::shifted(a, 0.0)
    }

    /// Factors `A + shift diag(A)`.
    pub fn shifted(a: &Csr, shift: f64) -> Option<Self> {
        let n = a.n;
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        let mut values: Vec<f64> = Vec::new();
        indptr.push(0);
        for r in 0..n {
            let start = indices.len();
            for k in a.indptr[r]..a.indptr[r + 1] {
                let c = a.indices[k];
                if c as usize <= r {
                    indices.push(c);
                    let v = a.values[k];
                    values.push(if c as usize == r { v * (1.0 + shift) } else { v });
                }
            }
            let end = indices.len();
            if end == start || indices[end - 1] as usize != r {
                return None;
            }
            for e in start..end {
                let c = indices[e] as usize;
                if c == r {
                    let d = values[e] - values[start..e].iter().map(|v| v * v).sum::<f64>();
                    if !(d > 0.0) {
                        return None;
                    }
                    values[e] = d.sqrt();
                    continue;
                }
                // sparse dot of row r and row c over columns < c
                let (mut p, mut q) = (start, indptr[c]);
                let (p_end, q_end) = (e, indptr[c + 1] - 1);
                let mut s = 0.0;
                while p < p_end && q < q_end {
                    match indices[p].cmp(&indices[q]) {
                        std::cmp::Ordering::Less => p += 1,
                        std::cmp::Ordering::Greater => q += 1,
                        std::cmp::Ordering::Equal => {
                            s += values[p] * values[q];
                            p += 1;
                            q += 1;
                        }
                    }
                }
                values[e] = (values[e] - s) / values[indptr[c + 1] - 1];
            }
            indptr.push(end);
        }
        Some(Ic0 { indptr, indices, values })
    }

    /// `z = (L L^T)^{-1} r`
    pub fn apply(&self, r: &[f64], z: &mut [f64]) {
        let n = r.len();
        for i in 0..n {
            let (a, b) = (self.indptr[i], self.indptr[i + 1] - 1);
            let mut s = r[i];
            for k in a..b {
                s -= self.values[k] * z[self.indices[k] as usize];
            }
            z[i] = s / self.values[b];
        }
        for i in (0..n).rev() {
            let (a, b) = (self.indptr[i], self.indptr[i + 1] - 1);
            z[i] /= self.values[b];
            let zi = z[i];
            for k in a..b {
                z[self.indices[k] as usize] -= self.values[k] * zi;
            }
        }
    }
}

enum Preconditioner {
    Cholesky(Ic0),
    Jacobi(Vec<f64>),
}

impl Preconditioner {
    fn new(a: &Csr) -> Self {
        // growing diagonal shifts until the zero-fill factor exists
        for shift in [0.0, 1e-3, 1e-2, 0.05, 0.2, 1.0] {
            if let Some(f) = Ic0::shifted(a, shift) {
                if shift > 0.0 {
                    log::debug!("incomplete Cholesky needed diagonal shift {shift}");
                }
                return Preconditioner::Cholesky(f);
            }
        }
        log::debug!("incomplete Cholesky broke down, using Jacobi");
        Preconditioner::Jacobi(a.diagonal().iter().map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 }).collect())
    }

    fn apply(&self, r: &[f64], z: &mut [f64]) {
        match self {
            Preconditioner::Cholesky(f) => f.apply(r, z),
            Preconditioner::Jacobi(d) => z.iter_mut().zip(r.iter().zip(d)).for_each(|(z, (r, d))| *z = r * d),
        }
    }
}

/// Solves `A x = b` for symmetric positive definite `A` from `x0`. At the
/// iteration cap the iterate with the smallest residual is returned.
pub fn pcg(a: &Csr, b: &[f64], x0: Vec<f64>, opts: &CgOptions) -> CgOutcome {
    let n = a.n;
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        return CgOutcome { x: vec![0.0; n], iterations: 0, relative_residual: 0.0, converged: true };
    }
    let x = x0;
    let mut ax = vec![0.0; n];
    a.mul_into(&x, &mut ax);
    let r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let res = dot(&r, &r).sqrt() / b_norm;
    if res <= opts.tolerance {
        return CgOutcome { x, iterations: 0, relative_residual: res, converged: true };
    }
    let pre = Preconditioner::new(a);
    iterate(a, &pre, b_norm, x, r, opts)
}

fn iterate(a: &Csr, pre: &Preconditioner, b_norm: f64, mut x: Vec<f64>, mut r: Vec<f64>, opts: &CgOptions) -> CgOutcome {
    let n = a.n;
    let mut z = vec![0.0; n];
    pre.apply(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut res = dot(&r, &r).sqrt() / b_norm;
    let mut best = (res, x.clone());
    let mut ap = vec![0.0; n];
    let mut it = 0;
    while res > opts.tolerance && it < opts.max_iterations {
        it += 1;
        a.mul_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            break;
        }
        let step = rz / pap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        res = dot(&r, &r).sqrt() / b_norm;
        if res < best.0 {
            best.0 = res;
            best.1.copy_from_slice(&x);
        }
        pre.apply(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let converged = best.0 <= opts.tolerance;
    CgOutcome { x: best.1, iterations: it, relative_residual: best.0, converged }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_1d(n: usize, shift: f64) -> Csr {
        let mut b = RowBuilder::new(n);
        for i in 0..n {
            b.add(i, i, 2.0 + shift);
            if i > 0 {
                b.add(i, i - 1, -1.0);
            }
            if i + 1 < n {
                b.add(i, i + 1, -0.5);
                b.add(i, i + 1, -0.5);
            }
        }
        b.build()
    }

    fn laplacian_2d(side: usize, shift: f64) -> Csr {
        let n = side * side;
        let mut b = RowBuilder::new(n);
        for i in 0..n {
            b.add(i, i, 4.0 + shift);
            let (x, y) = (i % side, i / side);
            for (ok, j) in [(x > 0, i.wrapping_sub(1)), (x + 1 < side, i + 1), (y > 0, i.wrapping_sub(side)), (y + 1 < side, i + side)] {
                if ok {
                    b.add(i, j, -1.0);
                }
            }
        }
        b.build()
    }

    #[test]
    fn duplicates_are_summed() {
        let a = laplacian_1d(4, 0.0);
        assert_eq!(a.nnz(), 10);
        assert_eq!(a.diagonal(), vec![2.0; 4]);
        let mut y = vec![0.0; 4];
        a.mul_into(&[1.0; 4], &mut y);
        assert_eq!(y, vec![1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn solves_spd_system() {
        let a = laplacian_1d(50, 0.01);
        let truth: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut b = vec![0.0; 50];
        a.mul_into(&truth, &mut b);
        let out = pcg(&a, &b, vec![0.0; 50], &CgOptions::for_size(50));
        assert!(out.converged);
        for (x, t) in out.x.iter().zip(&truth) {
            assert!((x - t).abs() < 1e-6);
        }
    }

    #[test]
    fn cap_returns_best_iterate() {
        let a = laplacian_2d(20, 1e-6);
        let b = vec![1.0; 400];
        let out = pcg(&a, &b, vec![0.0; 400], &CgOptions { tolerance: 1e-14, max_iterations: 5 });
        assert!(!out.converged);
        assert_eq!(out.iterations, 5);
        let mut ax = vec![0.0; 400];
        a.mul_into(&out.x, &mut ax);
        let r = ax.iter().zip(&b).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() / 20.0;
        assert!((r - out.relative_residual).abs() < 1e-9);
    }

    #[test]
    fn ic0_is_exact_on_tridiagonal() {
        // no fill-in for a tridiagonal matrix, so L L^T = A
        let a = laplacian_1d(30, 0.1);
        let f = Ic0::new(&a).unwrap();
        let truth: Vec<f64> = (0..30).map(|i| (i as f64).cos()).collect();
        let mut b = vec![0.0; 30];
        a.mul_into(&truth, &mut b);
        let mut z = vec![0.0; 30];
        f.apply(&b, &mut z);
        for (x, t) in z.iter().zip(&truth) {
            assert!((x - t).abs() < 1e-12);
        }
        let out = pcg(&a, &b, vec![0.0; 30], &CgOptions::for_size(30));
        assert!(out.iterations <= 2);
    }

    #[test]
    fn indefinite_pivot_is_rejected() {
        let mut b = RowBuilder::new(2);
        b.add(0, 0, 1.0);
        b.add(0, 1, 2.0);
        b.add(1, 0, 2.0);
        b.add(1, 1, 1.0);
        assert!(Ic0::new(&b.build()).is_none());
    }
}
