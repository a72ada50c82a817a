//! SNR and venc sweep corpora.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{analytic_poiseuille, analytic_unsteady_vortex, GridSpec, GroundTruth, VortexParams};
use super::{add_noise, apply_psf, magnitude_model, synthesize_signal};
use crate::error::{Result, VastError};
use crate::io;
use crate::par;
use crate::volume::FlowBundle;

pub const MANIFEST_FILE: &str = "manifest.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Geometry {
    Vortex(VortexParams),
    Poiseuille {
        /// mm
        radius: f64,
        #[serde(default = "axis_z")]
        axis: usize,
        /// cm/s
        v_peak: f64,
    },
}

fn axis_z() -> usize {
    2
}

/// Sweep definition, read from TOML.
///
/// ```toml
/// snr_list = [20.0, 10.0, 5.0, 3.0, 2.0]
/// venc_fractions = [1.0, 0.5, 0.4, 0.3, 0.2]
/// venc_sweep_snr = 10.0
/// base_seed = 1
///
/// [grid]
/// dims = [24, 24, 24, 13]
/// spacing = [1.0, 1.0, 1.0]
///
/// [geometry]
/// kind = "vortex"
/// radius = 8.0
/// axial_peak = 50.0
/// swirl_peak = 25.0
/// waveform_amplitude = 0.8
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// SNR values of the noise sweep, run at `snr_sweep_venc_fraction`.
    #[serde(default = "default_snrs")]
    pub snr_list: Vec<f64>,
    /// venc values of the aliasing sweep as fractions of `v_max`.
    #[serde(default = "default_fractions")]
    pub venc_fractions: Vec<f64>,
    #[serde(default = "default_venc_sweep_snr")]
    pub venc_sweep_snr: f64,
    #[serde(default = "one")]
    pub snr_sweep_venc_fraction: f64,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "one")]
    pub mag_lumen: f64,
    #[serde(default = "default_mag_bg")]
    pub mag_bg: f64,
    #[serde(default = "yes")]
    pub psf: bool,
    pub grid: GridSpec,
    pub geometry: Geometry,
}

fn default_snrs() -> Vec<f64> {
    vec![20.0, 10.0, 5.0, 3.0, 2.0]
}
fn default_fractions() -> Vec<f64> {
    vec![1.0, 0.5, 0.4, 0.3, 0.2]
}
fn default_venc_sweep_snr() -> f64 {
    10.0
}
fn one() -> f64 {
    1.0
}
fn default_mag_bg() -> f64 {
    0.2
}
fn yes() -> bool {
    true
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            snr_list: default_snrs(),
            venc_fractions: default_fractions(),
            venc_sweep_snr: default_venc_sweep_snr(),
            snr_sweep_venc_fraction: 1.0,
            base_seed: 1,
            mag_lumen: 1.0,
            mag_bg: 0.2,
            psf: true,
            grid: GridSpec { dims: [24, 24, 24, 13], spacing: [1.0; 3], frame_interval: 60.0 },
            geometry: Geometry::Vortex(VortexParams::default()),
        }
    }
}

impl SweepConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SweepConfig = toml::from_str(text).map_err(|e| VastError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| VastError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("sweep config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(VastError::Config(m));
        if let Some(s) = self.snr_list.iter().chain([&self.venc_sweep_snr]).find(|s| !(**s > 0.0 && s.is_finite())) {
            return bad(format!("SNR values must be positive, got {s}"));
        }
        if let Some(f) = self
            .venc_fractions
            .iter()
            .chain([&self.snr_sweep_venc_fraction])
            .find(|f| !(**f > 0.0 && f.is_finite()))
        {
            return bad(format!("venc fractions must be positive, got {f}"));
        }
        if !(self.mag_lumen > 0.0 && self.mag_bg >= 0.0) {
            return bad("magnitudes must be non-negative and lumen magnitude positive".into());
        }
        if self.grid.dims.iter().any(|&d| d == 0) || self.grid.spacing.iter().any(|&s| !(s > 0.0)) {
            return bad(format!("invalid grid {:?}", self.grid));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepKind {
    Snr,
    Venc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSpec {
    pub case_id: String,
    pub sweep: SweepKind,
    pub snr: f64,
    pub venc_fraction: f64,
    pub seed: u64,
}

/// Cases of both sweeps in order: the SNR sweep first, then the venc sweep.
/// Each case takes seed `base_seed + index`; a parameter point shared by
/// both sweeps appears once in each with its own noise realisation.
pub fn plan_cases(cfg: &SweepConfig) -> Vec<CaseSpec> {
    let snr_cases = cfg.snr_list.iter().map(|&snr| (SweepKind::Snr, snr, cfg.snr_sweep_venc_fraction));
    let venc_cases = cfg.venc_fractions.iter().map(|&f| (SweepKind::Venc, cfg.venc_sweep_snr, f));
    snr_cases
        .chain(venc_cases)
        .enumerate()
        .map(|(i, (sweep, snr, venc_fraction))| CaseSpec {
            case_id: match sweep {
                SweepKind::Snr => format!("snr_{snr}"),
                SweepKind::Venc => format!("venc_{venc_fraction:.2}"),
            },
            sweep,
            snr,
            venc_fraction,
            seed: cfg.base_seed + i as u64,
        })
        .collect()
}

pub fn ground_truth(cfg: &SweepConfig) -> Result<GroundTruth> {
    match &cfg.geometry {
        Geometry::Vortex(p) => analytic_unsteady_vortex(&cfg.grid, p),
        Geometry::Poiseuille { radius, axis, v_peak } => analytic_poiseuille(&cfg.grid, *radius, *axis, *v_peak),
    }
}

/// Synthesis, optional blur and noise for one case.
pub fn generate_case(cfg: &SweepConfig, gt: &GroundTruth, case: &CaseSpec) -> Result<FlowBundle> {
    let venc = case.venc_fraction * gt.v_max;
    let clean = synthesize_signal(gt, [venc; 3], cfg.mag_lumen, cfg.mag_bg)?;
    let blurred = if cfg.psf { apply_psf(&clean)? } else { clean };
    let model = magnitude_model(gt, cfg.mag_lumen, cfg.mag_bg);
    add_noise(&blurred, &model, case.snr, case.seed)
}

pub fn save_truth(gt: &GroundTruth, dir: &Path) -> Result<()> {
    io::save_velocity(&gt.velocity, &dir.join("velocity"))?;
    io::save_mask(&gt.lumen_mask, &dir.join("lumen_mask"))
}

pub fn load_truth(dir: &Path) -> Result<GroundTruth> {
    let velocity = io::load_velocity(&dir.join("velocity"))?;
    let lumen_mask = io::load_mask(&dir.join("lumen_mask"))?;
    let v_max = velocity.max_speed();
    Ok(GroundTruth { velocity, lumen_mask, v_max })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub case_id: String,
    pub sweep: SweepKind,
    pub snr: f64,
    pub venc_fraction: f64,
    pub venc: f64,
    pub v_max: f64,
    pub seed: u64,
    pub bundle: String,
    pub truth: String,
    pub bundle_sha256: String,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub root: PathBuf,
    pub rows: Vec<ManifestRow>,
}

impl Corpus {
    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let mut rdr = csv::Reader::from_path(&path)?;
        let rows = rdr.deserialize().collect::<std::result::Result<Vec<ManifestRow>, _>>()?;
        Ok(Corpus { root: root.to_path_buf(), rows })
    }

    pub fn bundle_dir(&self, row: &ManifestRow) -> PathBuf {
        self.root.join(&row.bundle)
    }

    pub fn truth_dir(&self, row: &ManifestRow) -> PathBuf {
        self.root.join(&row.truth)
    }
}

/// SHA-256 over every file in `dir`, visited in name order.
pub(crate) fn hash_dir(dir: &Path) -> Result<String> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| VastError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    names.sort();
    let mut h = Sha256::new();
    for p in names {
        let bytes = fs::read(&p).map_err(|e| VastError::io(&p, e))?;
        h.update(p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default().as_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

/// Writes every planned case (bundle plus ground truth) under `out_dir` and a
/// manifest table listing them. Cases are generated in parallel.
pub fn generate_sweeps(cfg: &SweepConfig, out_dir: &Path) -> Result<Corpus> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| VastError::io(out_dir, e))?;
    let cfg_path = out_dir.join("sweep_config.toml");
    fs::write(&cfg_path, cfg.to_toml()).map_err(|e| VastError::io(&cfg_path, e))?;
    let gt = ground_truth(cfg)?;
    let cases = plan_cases(cfg);
    let rows = par::map_range(cases.len(), |i| -> Result<ManifestRow> {
        let case = &cases[i];
        let bundle = generate_case(cfg, &gt, case)?;
        let rel_bundle = format!("cases/{}/bundle", case.case_id);
        let rel_truth = format!("cases/{}/truth", case.case_id);
        io::save_bundle(&bundle, &out_dir.join(&rel_bundle))?;
        save_truth(&gt, &out_dir.join(&rel_truth))?;
        Ok(ManifestRow {
            case_id: case.case_id.clone(),
            sweep: case.sweep,
            snr: case.snr,
            venc_fraction: case.venc_fraction,
            venc: bundle.meta.venc[0],
            v_max: gt.v_max,
            seed: case.seed,
            bundle_sha256: hash_dir(&out_dir.join(&rel_bundle))?,
            bundle: rel_bundle,
            truth: rel_truth,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut w = csv::Writer::from_path(out_dir.join(MANIFEST_FILE))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| VastError::io(out_dir.join(MANIFEST_FILE), e))?;
    Ok(Corpus { root: out_dir.to_path_buf(), rows })
}
