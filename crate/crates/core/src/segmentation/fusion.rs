//! Log-space fusion of the two background likelihoods under a voxelwise
//! weight `w in [0,1]` chosen to minimise the anisotropic total variation of
//! the fused log-likelihood.
//!
//! With `a = log p_mag`, `b = log p_phase` the fused map is `b + w (a - b)`,
//! linear in `w`, so the objective `sum |forward differences|` is convex.
//! It is minimised with a diagonally preconditioned primal-dual scheme.

use crate::grid::Grid;

/// Floor applied to likelihoods before taking logs.
pub const LIKELIHOOD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionOptions {
    pub max_iterations: usize,
    /// Relative objective decrease over `window` iterations below which the
    /// solver stops.
    pub tolerance: f64,
    pub window: usize,
}

impl Default for FusionOptions {
    fn default() -> Self {
        FusionOptions { max_iterations: 200, tolerance: 1e-4, window: 10 }
    }
}

#[derive(Debug, Clone)]
pub struct FusionResult {
    pub weight: Vec<f64>,
    pub p_comb: Vec<f64>,
    /// Best objective so far after each iteration (index 0 is the start).
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl FusionResult {
    pub fn final_objective(&self) -> f64 {
        *self.objective.last().unwrap_or(&0.0)
    }
}

fn floored_log(p: &[f64]) -> Vec<f64> {
    p.iter().map(|&v| v.clamp(LIKELIHOOD_FLOOR, 1.0).ln()).collect()
}

/// `log p_comb = w log p_mag + (1 - w) log p_phase` for a given weight field.
pub fn combine(p_mag: &[f64], p_phase: &[f64], weight: &[f64]) -> Vec<f64> {
    p_mag
        .iter()
        .zip(p_phase)
        .zip(weight)
        .map(|((&m, &p), &w)| {
            let a = m.clamp(LIKELIHOOD_FLOOR, 1.0).ln();
            let b = p.clamp(LIKELIHOOD_FLOOR, 1.0).ln();
            (b + w * (a - b)).exp()
        })
        .collect()
}

/// Sum of absolute forward differences along the three axes.
pub fn anisotropic_tv(field: &[f64], g: Grid) -> f64 {
    let mut tv = 0.0;
    for i in 0..g.len() {
        for axis in 0..3 {
            if let Some(j) = g.forward(i, axis) {
                tv += (field[j] - field[i]).abs();
            }
        }
    }
    tv
}

fn objective(a: &[f64], b: &[f64], w: &[f64], g: Grid) -> f64 {
    let l: Vec<f64> = (0..w.len()).map(|i| b[i] + w[i] * (a[i] - b[i])).collect();
    anisotropic_tv(&l, g)
}

/// Fuses one frame. `p_mag` and `p_phase` are background likelihoods on `g`.
pub fn fuse_likelihoods(p_mag: &[f64], p_phase: &[f64], g: Grid, opts: &FusionOptions) -> FusionResult {
    let n = g.len();
    let a = floored_log(p_mag);
    let b = floored_log(p_phase);
    let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();

    // edges (i, j) along forward differences; K w = d_j w_j - d_i w_i
    let mut edges = Vec::with_capacity(3 * n);
    for i in 0..n {
        for axis in 0..3 {
            if let Some(j) = g.forward(i, axis) {
                edges.push((i, j));
            }
        }
    }
    let offset: Vec<f64> = edges.iter().map(|&(i, j)| b[j] - b[i]).collect();
    let sigma: Vec<f64> = edges
        .iter()
        .map(|&(i, j)| {
            let s = d[i].abs() + d[j].abs();
            if s > 0.0 { 1.0 / s } else { 0.0 }
        })
        .collect();
    let mut col = vec![0.0; n];
    for &(i, j) in &edges {
        col[i] += d[i].abs();
        col[j] += d[j].abs();
    }
    let tau: Vec<f64> = col.iter().map(|&c| if c > 0.0 { 1.0 / c } else { 0.0 }).collect();

    let mut w = vec![0.5; n];
    let mut y = vec![0.0; edges.len()];
    let mut kty = vec![0.0; n];
    let mut best_w = w.clone();
    let mut best = objective(&a, &b, &w, g);
    let mut history = vec![best];
    let mut converged = best == 0.0;
    let mut iterations = 0;

    while !converged && iterations < opts.max_iterations {
        iterations += 1;
        kty.iter_mut().for_each(|v| *v = 0.0);
        for (e, &(i, j)) in edges.iter().enumerate() {
            kty[j] += d[j] * y[e];
            kty[i] -= d[i] * y[e];
        }
        let w_old = w.clone();
        for k in 0..n {
            w[k] = (w[k] - tau[k] * kty[k]).clamp(0.0, 1.0);
        }
        for (e, &(i, j)) in edges.iter().enumerate() {
            let wi = 2.0 * w[i] - w_old[i];
            let wj = 2.0 * w[j] - w_old[j];
            let kw = d[j] * wj - d[i] * wi + offset[e];
            y[e] = (y[e] + sigma[e] * kw).clamp(-1.0, 1.0);
        }
        let obj = objective(&a, &b, &w, g);
        if obj < best {
            best = obj;
            best_w.copy_from_slice(&w);
        }
        history.push(best);
        if best == 0.0 {
            converged = true;
        } else if iterations >= opts.window {
            let past = history[iterations - opts.window];
            converged = (past - best) / past.abs().max(f64::MIN_POSITIVE) < opts.tolerance;
        }
    }

    let p_comb = combine(p_mag, p_phase, &best_w);
    FusionResult { weight: best_w, p_comb, objective: history, iterations, converged }
}
