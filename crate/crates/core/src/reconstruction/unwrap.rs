//! Continuity-constrained phase unwrapping of one cardiac frame.
//!
//! Unknowns are the unwrapped phases of the three encodings at every mask
//! voxel. The objective is the weighted misfit to wrapped phase differences
//! plus the squared divergence of the implied velocity plus a small ridge
//! term, solved through its normal equations with preconditioned CG.

use std::collections::VecDeque;

use crate::error::{Result, VastError};
use crate::grid::Grid;
use crate::reconstruction::sparse::{pcg, CgOptions, RowBuilder};
use crate::segmentation::morphology::label_components;
use crate::volume::wrap;

const OUTSIDE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnwrapOptions {
    /// Ridge weight on the solved phase (or correction).
    pub alpha: f64,
    /// Floor on the local variance of wrapped gradients, rad^2.
    pub variance_floor: f64,
    pub tolerance: f64,
    /// Overrides the default `10 sqrt(n)` CG cap.
    pub max_iterations: Option<usize>,
}

impl Default for UnwrapOptions {
    fn default() -> Self {
        UnwrapOptions { alpha: 0.01, variance_floor: 1e-4, tolerance: 1e-8, max_iterations: None }
    }
}

/// Compact numbering of the voxels inside a mask.
#[derive(Debug, Clone)]
pub struct MaskIndex {
    pub grid: Grid,
    pub voxels: Vec<usize>,
    slot: Vec<u32>,
}

impl MaskIndex {
    pub fn new(mask: &[bool], grid: Grid) -> Self {
        let mut slot = vec![OUTSIDE; mask.len()];
        let mut voxels = Vec::new();
        for (i, &m) in mask.iter().enumerate() {
            if m {
                slot[i] = voxels.len() as u32;
                voxels.push(i);
            }
        }
        MaskIndex { grid, voxels, slot }
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    #[inline]
    pub fn slot(&self, voxel: usize) -> Option<usize> {
        let s = self.slot[voxel];
        (s != OUTSIDE).then_some(s as usize)
    }

    pub fn gather(&self, full: &[f64]) -> Vec<f64> {
        self.voxels.iter().map(|&i| full[i]).collect()
    }

    pub fn scatter(&self, compact: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.len()];
        for (&i, &v) in self.voxels.iter().zip(compact) {
            out[i] = v;
        }
        out
    }
}

/// Wrapped forward differences between in-mask voxel pairs, with weights.
#[derive(Debug, Clone)]
pub struct GradientObservations {
    /// Per axis, `(from, to)` slots of each pair.
    pub pairs: [Vec<(u32, u32)>; 3],
    /// `values[component][axis][pair]`.
    pub values: [[Vec<f64>; 3]; 3],
    /// Inverse local variance, same layout as `values`.
    pub weights: [[Vec<f64>; 3]; 3],
}

/// Wrapped-gradient observations for three phase components given on the
/// compact mask numbering.
pub fn wrapped_gradients(psi: &[Vec<f64>; 3], index: &MaskIndex, variance_floor: f64) -> Result<GradientObservations> {
    let g = index.grid;
    let mut pairs: [Vec<(u32, u32)>; 3] = Default::default();
    // pair id by origin slot, per axis
    let mut origin = [
        vec![OUTSIDE; index.len()],
        vec![OUTSIDE; index.len()],
        vec![OUTSIDE; index.len()],
    ];
    for (a, &i) in index.voxels.iter().enumerate() {
        for axis in 0..3 {
            if let Some(b) = g.forward(i, axis).and_then(|j| index.slot(j)) {
                origin[axis][a] = pairs[axis].len() as u32;
                pairs[axis].push((a as u32, b as u32));
            }
        }
    }
    if pairs.iter().all(|p| p.is_empty()) {
        return Err(VastError::Validation("mask has no neighbouring voxel pairs to unwrap".into()));
    }
    let values: [[Vec<f64>; 3]; 3] = std::array::from_fn(|k| {
        std::array::from_fn(|axis| {
            pairs[axis].iter().map(|&(a, b)| wrap(psi[k][b as usize] - psi[k][a as usize])).collect()
        })
    });
    let weights: [[Vec<f64>; 3]; 3] = std::array::from_fn(|k| {
        std::array::from_fn(|axis| {
            let vals = &values[k][axis];
            pairs[axis]
                .iter()
                .map(|&(a, _)| {
                    let mut local = Vec::with_capacity(27);
                    g.for_each_in_cube(index.voxels[a as usize], 1, |j| {
                        if let Some(s) = index.slot(j) {
                            let p = origin[axis][s];
                            if p != OUTSIDE {
                                local.push(vals[p as usize]);
                            }
                        }
                    });
                    let var = if local.len() < 2 {
                        0.0
                    } else {
                        let n = local.len() as f64;
                        let m = local.iter().sum::<f64>() / n;
                        local.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)
                    };
                    1.0 / var.max(variance_floor)
                })
                .collect()
        })
    });
    Ok(GradientObservations { pairs, values, weights })
}

/// One frame's unwrapping problem on the compact mask numbering.
#[derive(Debug, Clone)]
pub struct UnwrapProblem {
    pub index: MaskIndex,
    /// Wrapped phase to unwrap: the measurement itself, or its wrapped
    /// residual against `prior`.
    pub psi: [Vec<f64>; 3],
    /// Phase estimate the solution is a correction to (zeros if none).
    pub prior: [Vec<f64>; 3],
    pub observations: GradientObservations,
    pub venc: [f64; 3],
    /// Voxel spacing in cm.
    pub spacing_cm: [f64; 3],
    pub alpha: f64,
    /// Connected-component label (from 1) of every mask voxel.
    pub component: Vec<u32>,
    /// Mask voxels with a face neighbour outside the mask.
    pub boundary: Vec<bool>,
}

impl UnwrapProblem {
    /// `psi` and `prior` are full-grid phases for one frame.
    pub fn new(
        psi: [&[f64]; 3],
        prior: Option<[&[f64]; 3]>,
        mask: &[bool],
        grid: Grid,
        venc: [f64; 3],
        spacing_mm: [f64; 3],
        opts: &UnwrapOptions,
    ) -> Result<Self> {
        let index = MaskIndex::new(mask, grid);
        if index.is_empty() {
            return Err(VastError::EmptyMask("cannot unwrap inside an empty mask".into()));
        }
        let prior: [Vec<f64>; 3] = match prior {
            Some(p) => std::array::from_fn(|k| index.gather(p[k])),
            None => std::array::from_fn(|_| vec![0.0; index.len()]),
        };
        let psi: [Vec<f64>; 3] = std::array::from_fn(|k| {
            index.gather(psi[k]).iter().zip(&prior[k]).map(|(s, p)| wrap(s - p)).collect()
        });
        let observations = wrapped_gradients(&psi, &index, opts.variance_floor)?;
        let (labels, _) = label_components(mask, grid);
        let component = index.voxels.iter().map(|&i| labels[i]).collect();
        let boundary = index
            .voxels
            .iter()
            .map(|&i| {
                let mut edge = false;
                grid.for_each_face_neighbor(i, |j| edge |= !mask[j]);
                edge
            })
            .collect();
        Ok(UnwrapProblem {
            index,
            psi,
            prior,
            observations,
            venc,
            spacing_cm: spacing_mm.map(|s| s / 10.0),
            alpha: opts.alpha,
            component,
            boundary,
        })
    }

    pub fn unknowns(&self) -> usize {
        3 * self.index.len()
    }

    /// Divergence stencil at each mask voxel: `(unknown, coefficient)` terms,
    /// forward differences with a backward fallback at mask faces.
    fn divergence_rows(&self) -> Vec<Vec<(usize, f64)>> {
        let m = self.index.len();
        let g = self.index.grid;
        self.index
            .voxels
            .iter()
            .enumerate()
            .map(|(s, &i)| {
                let mut row = Vec::with_capacity(6);
                for axis in 0..3 {
                    let c = self.venc[axis] / (std::f64::consts::PI * self.spacing_cm[axis]);
                    if let Some(f) = g.forward(i, axis).and_then(|j| self.index.slot(j)) {
                        row.push((axis * m + f, c));
                        row.push((axis * m + s, -c));
                    } else if let Some(b) = g.backward(i, axis).and_then(|j| self.index.slot(j)) {
                        row.push((axis * m + s, c));
                        row.push((axis * m + b, -c));
                    }
                }
                row
            })
            .collect()
    }

    /// Path-integrated wrapped residual along a breadth-first spanning tree
    /// of each mask component; exact for consistent noiseless data.
    fn path_integral(&self) -> Vec<f64> {
        let m = self.index.len();
        let g = self.index.grid;
        let mut x = vec![0.0; 3 * m];
        let mut seen = vec![false; m];
        let mut queue = VecDeque::new();
        for root in 0..m {
            if seen[root] {
                continue;
            }
            seen[root] = true;
            for k in 0..3 {
                x[k * m + root] = self.psi[k][root];
            }
            queue.push_back(root);
            while let Some(a) = queue.pop_front() {
                g.for_each_face_neighbor(self.index.voxels[a], |j| {
                    if let Some(b) = self.index.slot(j) {
                        if !seen[b] {
                            seen[b] = true;
                            for k in 0..3 {
                                x[k * m + b] = x[k * m + a] + wrap(self.psi[k][b] - self.psi[k][a]);
                            }
                            queue.push_back(b);
                        }
                    }
                });
            }
        }
        x
    }
}

#[derive(Debug, Clone)]
pub struct UnwrapSolution {
    /// Unwrapped phase per component on the compact numbering
    /// (prior + correction + boundary offset).
    pub phase: [Vec<f64>; 3],
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}

pub fn continuity_unwrap(p: &UnwrapProblem, opts: &UnwrapOptions) -> UnwrapSolution {
    let m = p.index.len();
    let n = p.unknowns();
    let mut a = RowBuilder::new(n);
    let mut rhs = vec![0.0; n];
    let obs = &p.observations;
    for k in 0..3 {
        for axis in 0..3 {
            for (e, &(from, to)) in obs.pairs[axis].iter().enumerate() {
                let w2 = obs.weights[k][axis][e].powi(2);
                let gval = obs.values[k][axis][e];
                let (i, j) = (k * m + from as usize, k * m + to as usize);
                a.add(i, i, w2);
                a.add(j, j, w2);
                a.add(i, j, -w2);
                a.add(j, i, -w2);
                rhs[j] += w2 * gval;
                rhs[i] -= w2 * gval;
            }
        }
    }
    let prior_flat: Vec<f64> = p.prior.concat();
    for row in p.divergence_rows() {
        let d: f64 = row.iter().map(|&(u, c)| c * prior_flat[u]).sum();
        for &(u, cu) in &row {
            rhs[u] -= cu * d;
            for &(v, cv) in &row {
                a.add(u, v, cu * cv);
            }
        }
    }
    for i in 0..n {
        a.add(i, i, p.alpha);
    }
    let a = a.build();
    let mut cg = CgOptions::for_size(n);
    cg.tolerance = opts.tolerance;
    if let Some(cap) = opts.max_iterations {
        cg.max_iterations = cap;
    }
    let out = pcg(&a, &rhs, p.path_integral(), &cg);

    // fix each component's free offset to the median boundary phase
    let mut delta = out.x;
    let ncomp = p.component.iter().copied().max().unwrap_or(0) as usize;
    for k in 0..3 {
        let mut diffs: Vec<Vec<f64>> = vec![Vec::new(); ncomp + 1];
        let mut all: Vec<Vec<f64>> = vec![Vec::new(); ncomp + 1];
        for s in 0..m {
            let c = p.component[s] as usize;
            let d = p.psi[k][s] - delta[k * m + s];
            all[c].push(d);
            if p.boundary[s] {
                diffs[c].push(d);
            }
        }
        let offsets: Vec<f64> = (0..=ncomp)
            .map(|c| {
                let src = if diffs[c].is_empty() { &mut all[c] } else { &mut diffs[c] };
                if src.is_empty() { 0.0 } else { median(src) }
            })
            .collect();
        for s in 0..m {
            delta[k * m + s] += offsets[p.component[s] as usize];
        }
    }
    let phase = std::array::from_fn(|k| (0..m).map(|s| p.prior[k][s] + delta[k * m + s]).collect());
    if !out.converged {
        log::debug!("unwrap CG stopped at {} iterations, residual {:.3e}", out.iterations, out.relative_residual);
    }
    UnwrapSolution { phase, iterations: out.iterations, relative_residual: out.relative_residual, converged: out.converged }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn box_problem(g: Grid, f: impl Fn(usize, usize, usize) -> [f64; 3]) -> ([Vec<f64>; 3], Vec<bool>) {
        let mut psi: [Vec<f64>; 3] = Default::default();
        for i in 0..g.len() {
            let (x, y, z) = g.coords(i);
            let v = f(x, y, z);
            for k in 0..3 {
                psi[k].push(wrap(v[k]));
            }
        }
        (psi, vec![true; g.len()])
    }

    #[test]
    fn gradient_examples() {
        let g = Grid::new(8, 1, 1);
        let idx = MaskIndex::new(&vec![true; 8], g);
        let ramp = |s: f64| -> Vec<f64> { (0..8).map(|x| wrap(s * x as f64)).collect() };
        let psi = [ramp(0.4), ramp(1.2 * PI), vec![0.3; 8]];
        let obs = wrapped_gradients(&psi, &idx, 1e-4).unwrap();
        assert!(obs.values[0][0].iter().all(|v| (v - 0.4).abs() < 1e-12));
        assert!(obs.values[1][0].iter().all(|v| (v + 0.8 * PI).abs() < 1e-12));
        assert!(obs.values[2][0].iter().all(|&v| v == 0.0));
        assert!(obs.weights[2][0].iter().all(|&w| (w - 1e4).abs() < 1e-6));
        assert!(obs.pairs[1].is_empty() && obs.pairs[2].is_empty());
    }

    #[test]
    fn single_voxel_mask_rejected() {
        let g = Grid::new(3, 3, 3);
        let mut mask = vec![false; 27];
        mask[13] = true;
        let idx = MaskIndex::new(&mask, g);
        let psi: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0]);
        assert!(wrapped_gradients(&psi, &idx, 1e-4).is_err());
    }

    #[test]
    fn zero_phase_stays_zero() {
        let g = Grid::new(5, 5, 5);
        let (psi, mask) = box_problem(g, |_, _, _| [0.0; 3]);
        let opts = UnwrapOptions::default();
        let p = UnwrapProblem::new([&psi[0], &psi[1], &psi[2]], None, &mask, g, [50.0; 3], [1.0; 3], &opts).unwrap();
        let s = continuity_unwrap(&p, &opts);
        assert!(s.phase.iter().flatten().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn divergence_free_ramp_is_unwrapped() {
        // u depends on y only, v on z only, w on x only: divergence free,
        // and u wraps across the far third of the box
        let g = Grid::new(10, 12, 8);
        let truth = |x: usize, y: usize, z: usize| [-2.0 + 0.7 * y as f64, 0.1 * z as f64, 0.2 * x as f64];
        let (psi, mask) = box_problem(g, truth);
        let opts = UnwrapOptions::default();
        let p = UnwrapProblem::new([&psi[0], &psi[1], &psi[2]], None, &mask, g, [50.0; 3], [1.0; 3], &opts).unwrap();
        let s = continuity_unwrap(&p, &opts);
        let mut err: f64 = 0.0;
        for (slot, &i) in p.index.voxels.iter().enumerate() {
            let (x, y, z) = g.coords(i);
            let t = truth(x, y, z);
            for k in 0..3 {
                err = err.max((s.phase[k][slot] - t[k]).abs());
                // rewrapping reproduces the measurement
                assert!((wrap(s.phase[k][slot]) - psi[k][i]).abs() < 1e-6);
            }
        }
        assert!(err < 1e-6, "max error {err}");
    }

    #[test]
    fn correction_form_matches_direct_solve() {
        let g = Grid::new(8, 8, 6);
        let truth = |x: usize, y: usize, _z: usize| [0.7 * y as f64, 0.5 * x as f64, 0.0];
        let (psi, mask) = box_problem(g, truth);
        let prior: [Vec<f64>; 3] = std::array::from_fn(|k| {
            (0..g.len())
                .map(|i| {
                    let (x, y, z) = g.coords(i);
                    truth(x, y, z)[k] + 0.05
                })
                .collect()
        });
        let opts = UnwrapOptions::default();
        let p = UnwrapProblem::new(
            [&psi[0], &psi[1], &psi[2]],
            Some([&prior[0], &prior[1], &prior[2]]),
            &mask,
            g,
            [50.0; 3],
            [1.0; 3],
            &opts,
        )
        .unwrap();
        let s = continuity_unwrap(&p, &opts);
        for (slot, &i) in p.index.voxels.iter().enumerate() {
            let (x, y, z) = g.coords(i);
            for k in 0..3 {
                assert!((s.phase[k][slot] - truth(x, y, z)[k]).abs() < 1e-6);
            }
        }
    }
}
