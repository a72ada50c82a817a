//! Complex signal synthesis, point-spread blur and calibrated noise.

use num_complex::{Complex32, Complex64};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::GroundTruth;
use crate::error::{Result, VastError};
use crate::grid::Grid;
use crate::par;
use crate::volume::{velocity_to_phase, FlowBundle};

/// Magnitude model over the 4D grid: `mag_lumen` inside the lumen,
/// `mag_bg` elsewhere.
pub fn magnitude_model(gt: &GroundTruth, mag_lumen: f64, mag_bg: f64) -> Vec<f64> {
    let g = gt.velocity.grid();
    let nt = gt.velocity.nt();
    let mut out = Vec::with_capacity(g.len() * nt);
    for _ in 0..nt {
        out.extend((0..g.len()).map(|i| if gt.lumen_mask.at(i, 0) { mag_lumen } else { mag_bg }));
    }
    out
}

/// Noiseless, unblurred four-point acquisition of `gt`. The reference
/// channel carries zero phase; encoding `k` carries `pi U_k / venc_k`.
pub fn synthesize_signal(gt: &GroundTruth, venc: [f64; 3], mag_lumen: f64, mag_bg: f64) -> Result<FlowBundle> {
    if venc.iter().any(|&v| !(v > 0.0)) {
        return Err(VastError::Validation(format!("venc must be positive, got {venc:?}")));
    }
    let mag = magnitude_model(gt, mag_lumen, mag_bg);
    let mut meta = gt.velocity.meta.clone();
    meta.venc = venc;
    let reference: Vec<Complex32> = mag.iter().map(|&m| Complex32::new(m as f32, 0.0)).collect();
    let enc = |k: usize| -> Vec<Complex32> {
        gt.velocity
            .component(k)
            .iter()
            .zip(&mag)
            .map(|(&u, &m)| {
                let z = Complex64::from_polar(m, velocity_to_phase(u, venc[k]));
                Complex32::new(z.re as f32, z.im as f32)
            })
            .collect()
    };
    FlowBundle::from_channels(meta, [reference, enc(0), enc(1), enc(2)])
}

/// Truncated sinc, `sin(x)/x` for `|x| <= 2` voxels and zero beyond.
pub fn psf_weight(offset_voxels: f64) -> f64 {
    let x = offset_voxels.abs();
    if x > 2.0 {
        0.0
    } else if x == 0.0 {
        1.0
    } else {
        x.sin() / x
    }
}

/// Unit-sum 1D stencil at integer offsets -2..=2.
pub fn psf_taps() -> [f64; 5] {
    let raw = [-2.0, -1.0, 0.0, 1.0, 2.0].map(psf_weight);
    let sum: f64 = raw.iter().sum();
    raw.map(|w| w / sum)
}

/// Separable blur of one 3D complex frame along every axis. At the grid
/// edges the stencil is renormalised over the taps that fall inside.
fn blur_frame(g: Grid, frame: &[Complex32], taps: &[f64; 5]) -> Vec<Complex32> {
    let mut cur: Vec<Complex64> = frame.iter().map(|z| Complex64::new(z.re as f64, z.im as f64)).collect();
    let mut next = vec![Complex64::new(0.0, 0.0); cur.len()];
    for axis in 0..3 {
        let n = g.extent(axis) as isize;
        let stride = g.stride(axis) as isize;
        for (i, out) in next.iter_mut().enumerate() {
            let c = g.coord(i, axis) as isize;
            let mut acc = Complex64::new(0.0, 0.0);
            let mut wsum = 0.0;
            for (k, &w) in taps.iter().enumerate() {
                let off = k as isize - 2;
                let p = c + off;
                if p >= 0 && p < n {
                    acc += cur[(i as isize + off * stride) as usize] * w;
                    wsum += w;
                }
            }
            *out = acc / wsum;
        }
        std::mem::swap(&mut cur, &mut next);
    }
    cur.into_iter().map(|z| Complex32::new(z.re as f32, z.im as f32)).collect()
}

/// Convolves every complex channel, frame by frame, with the truncated-sinc
/// point-spread function and re-derives magnitude and phase.
pub fn apply_psf(bundle: &FlowBundle) -> Result<FlowBundle> {
    let g = bundle.grid();
    let n = g.len();
    let nt = bundle.meta.nt();
    let taps = psf_taps();
    let blurred = par::map_range(4 * nt, |job| {
        let (c, t) = (job / nt, job % nt);
        blur_frame(g, &bundle.channels[c].values[t * n..(t + 1) * n], &taps)
    });
    let mut channels: [Vec<Complex32>; 4] = Default::default();
    for (job, frame) in blurred.into_iter().enumerate() {
        channels[job / nt].extend(frame);
    }
    FlowBundle::from_channels(bundle.meta.clone(), channels)
}

/// Per-voxel complex noise level `mag / snr`.
pub fn noise_sigma(mag: f64, snr: f64) -> f64 {
    mag / snr
}

/// Adds independent circular complex Gaussian noise `CN(0, sigma^2)` to every
/// channel, with `sigma = model_magnitude / snr` per voxel. Each
/// (channel, frame) pair draws from its own stream of a ChaCha generator
/// seeded with `seed`.
pub fn add_noise(bundle: &FlowBundle, model_magnitude: &[f64], snr: f64, seed: u64) -> Result<FlowBundle> {
    if !(snr > 0.0) {
        return Err(VastError::Validation(format!("snr must be positive, got {snr}")));
    }
    let n = bundle.grid().len();
    let nt = bundle.meta.nt();
    crate::volume::check_len("magnitude model", n * nt, model_magnitude.len())?;
    let noisy = par::map_range(4 * nt, |job| {
        let (c, t) = (job / nt, job % nt);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(job as u64);
        let range = t * n..(t + 1) * n;
        bundle.channels[c].values[range.clone()]
            .iter()
            .zip(&model_magnitude[range])
            .map(|(z, &m)| {
                let s = noise_sigma(m, snr) / std::f64::consts::SQRT_2;
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                Complex32::new((z.re as f64 + s * re) as f32, (z.im as f64 + s * im) as f32)
            })
            .collect::<Vec<_>>()
    });
    let mut channels: [Vec<Complex32>; 4] = Default::default();
    for (job, frame) in noisy.into_iter().enumerate() {
        channels[job / nt].extend(frame);
    }
    let mut meta = bundle.meta.clone();
    meta.snr_nominal = Some(snr);
    meta.seed = Some(seed);
    FlowBundle::from_channels(meta, channels)
}
