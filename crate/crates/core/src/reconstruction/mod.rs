//! Velocity reconstruction inside a vessel mask: continuity-constrained
//! unwrapping, outlier replacement and POD filtering, repeated until the
//! retained POD energy settles.

pub mod entropy;
pub mod pod;
pub mod select;
pub mod sparse;
pub mod uod;
pub mod unwrap;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, VastError};
use crate::volume::{velocity_to_phase, FlowBundle, MaskVolume, VelocityField};

pub use entropy::{mode_entropy, Dct3, ModeEntropy};
pub use pod::{pod_decompose, pod_filter, PodBasis};
pub use select::select_modes;
pub use uod::{uod_correct, UodOptions};
pub use unwrap::{continuity_unwrap, wrapped_gradients, UnwrapOptions, UnwrapProblem, UnwrapSolution};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconOptions {
    pub alpha: f64,
    pub variance_floor: f64,
    pub solver_tolerance: f64,
    pub tau: f64,
    pub epsilon: f64,
    pub max_iterations: usize,
    /// Relative change of retained POD energy that stops the loop.
    pub energy_tolerance: f64,
}

impl Default for ReconOptions {
    fn default() -> Self {
        ReconOptions {
            alpha: 0.01,
            variance_floor: 1e-4,
            solver_tolerance: 1e-8,
            tau: 2.0,
            epsilon: 1e-3,
            max_iterations: 10,
            energy_tolerance: 0.01,
        }
    }
}

impl ReconOptions {
    pub fn unwrap(&self) -> UnwrapOptions {
        UnwrapOptions {
            alpha: self.alpha,
            variance_floor: self.variance_floor,
            tolerance: self.solver_tolerance,
            max_iterations: None,
        }
    }

    pub fn uod(&self) -> UodOptions {
        UodOptions { tau: self.tau, epsilon: self.epsilon }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(VastError::Config(m.to_string()));
        if !(self.alpha > 0.0) {
            return bad("ridge alpha must be positive");
        }
        if !(self.variance_floor > 0.0) || !(self.solver_tolerance > 0.0) {
            return bad("variance floor and solver tolerance must be positive");
        }
        if !(self.tau > 0.0) || !(self.epsilon > 0.0) {
            return bad("outlier tau and epsilon must be positive");
        }
        if self.max_iterations == 0 || !(self.energy_tolerance > 0.0) {
            return bad("outer iteration cap and energy tolerance must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct UnwrapStats {
    pub max_iterations: usize,
    pub max_residual: f64,
    pub converged: bool,
}

/// Unwraps every frame inside `mask` and converts to velocity. With a
/// `prior`, each frame is solved as a correction to the prior's phase.
pub fn unwrap_field(
    bundle: &FlowBundle,
    mask: &MaskVolume,
    prior: Option<&VelocityField>,
    opts: &UnwrapOptions,
) -> Result<(VelocityField, UnwrapStats)> {
    let meta = &bundle.meta;
    let g = meta.grid();
    let n = g.len();
    let nt = meta.nt();
    let psi: [Vec<f64>; 3] = std::array::from_fn(|k| bundle.phase(k));
    let prior_phase: Option<[Vec<f64>; 3]> = prior.map(|p| {
        std::array::from_fn(|k| p.component(k).iter().map(|&u| velocity_to_phase(u, meta.venc[k])).collect())
    });
    let frames = crate::par::map_range(nt, |t| -> Result<([Vec<f64>; 3], UnwrapSolution)> {
        let s = t * n..(t + 1) * n;
        let m = mask.frame(if mask.is_static() { 0 } else { t });
        let pr = prior_phase.as_ref().map(|p| [&p[0][s.clone()], &p[1][s.clone()], &p[2][s.clone()]]);
        let problem = UnwrapProblem::new(
            [&psi[0][s.clone()], &psi[1][s.clone()], &psi[2][s.clone()]],
            pr,
            m,
            g,
            meta.venc,
            meta.spacing,
            opts,
        )?;
        let sol = continuity_unwrap(&problem, opts);
        let vel = std::array::from_fn(|k| {
            let v: Vec<f64> = sol.phase[k].iter().map(|&p| p * meta.venc[k] / std::f64::consts::PI).collect();
            problem.index.scatter(&v)
        });
        Ok((vel, sol))
    });
    let mut out = VelocityField::zeros(meta.clone());
    let mut stats = UnwrapStats { converged: true, ..Default::default() };
    for (t, frame) in frames.into_iter().enumerate() {
        let (vel, sol) = frame?;
        for k in 0..3 {
            out.component_mut(k)[t * n..(t + 1) * n].copy_from_slice(&vel[k]);
        }
        stats.max_iterations = stats.max_iterations.max(sol.iterations);
        stats.max_residual = stats.max_residual.max(sol.relative_residual);
        stats.converged &= sol.converged;
    }
    Ok((out, stats))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReconRecord {
    pub iteration: usize,
    pub energy: f64,
    /// `|E_i - E_{i-1}| / E_{i-1}`; NaN on the first iteration.
    pub energy_ratio: f64,
    pub uod_flags: usize,
    pub selected_modes: usize,
    pub solver_iterations: usize,
    pub solver_residual: f64,
    pub solver_converged: bool,
}

#[derive(Debug, Clone)]
pub struct ReconResult {
    pub velocity: VelocityField,
    pub history: Vec<ReconRecord>,
    /// Outer iteration whose field was returned.
    pub returned_iteration: usize,
    pub converged: bool,
}

impl ReconResult {
    pub fn iterations(&self) -> usize {
        self.history.len()
    }
}

pub fn reconstruct(bundle: &FlowBundle, mask: &MaskVolume, opts: &ReconOptions) -> Result<ReconResult> {
    bundle.validate()?;
    opts.validate()?;
    crate::volume::check_len("mask voxels", bundle.meta.voxels(), mask.grid.len())?;
    let mask = mask.union_over_frames();
    if mask.is_empty() {
        return Err(VastError::EmptyMask("reconstruction needs a non-empty mask".into()));
    }
    let unwrap_opts = opts.unwrap();
    let mut history = Vec::new();
    let mut previous: Option<(VelocityField, f64)> = None;
    let mut best: Option<(f64, VelocityField, usize)> = None;

    for iteration in 1..=opts.max_iterations {
        let prior = previous.as_ref().map(|(f, _)| f);
        let (mut field, stats) = unwrap_field(bundle, &mask, prior, &unwrap_opts)?;
        let flags = uod_correct(&mut field, &mask, &opts.uod());
        let mut basis = pod_decompose(&field, &mask)?;
        if !basis.degenerate {
            basis.selected = select_modes(&basis.entropies, &basis.eigenvalues);
        }
        let mut filtered = pod_filter(&basis, &bundle.meta)?;
        filtered.apply_mask(&mask);
        let energy = basis.selected_energy();
        let ratio = match &previous {
            Some((_, e_prev)) if *e_prev > 0.0 => (energy - e_prev).abs() / e_prev,
            Some(_) => if energy == 0.0 { 0.0 } else { f64::INFINITY },
            None => f64::NAN,
        };
        history.push(ReconRecord {
            iteration,
            energy,
            energy_ratio: ratio,
            uod_flags: flags,
            selected_modes: basis.selected.len(),
            solver_iterations: stats.max_iterations,
            solver_residual: stats.max_residual,
            solver_converged: stats.converged,
        });
        if let Some((prev_field, _)) = previous.take() {
            if ratio < opts.energy_tolerance {
                return Ok(ReconResult { velocity: prev_field, history, returned_iteration: iteration - 1, converged: true });
            }
            if best.as_ref().is_none_or(|(r, _, _)| ratio < *r) {
                best = Some((ratio, prev_field, iteration - 1));
            }
        }
        previous = Some((filtered, energy));
    }
    log::warn!("reconstruction did not settle within {} iterations", opts.max_iterations);
    let (velocity, returned_iteration) = match best {
        Some((_, f, i)) => (f, i),
        None => (previous.expect("one iteration ran").0, history.len()),
    };
    Ok(ReconResult { velocity, history, returned_iteration, converged: false })
}

pub fn write_log(history: &[ReconRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for rec in history {
        w.serialize(rec)?;
    }
    w.flush().map_err(|e| VastError::io(path, e))?;
    Ok(())
}
