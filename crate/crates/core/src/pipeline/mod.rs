//! Batch commands behind the CLI: synthesis, segmentation, reconstruction,
//! evaluation and full runs that write plot-ready CSV reports.
//!
//! A run directory looks like
//!
//! ```text
//! <out>/resolved_config.toml
//! <out>/corpus/...                 (when a sweep is synthesised)
//! <out>/cases/<id>/mask/           static vessel mask
//! <out>/cases/<id>/phase_masks/    per-frame masks
//! <out>/cases/<id>/velocity/       reconstructed field
//! <out>/cases/<id>/*.csv           iteration logs, distances, histograms
//! <out>/report/*.csv               one row per case
//! <out>/manifest.csv               every file with its size and SHA-256
//! ```

mod config;
mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Result, VastError};
use crate::io::{self, DatasetKind};
use crate::metrics::{self, divergence_residuals, overlap_scores, surface_distance, velocity_agreement};
use crate::reconstruction::{self, reconstruct, ReconOptions, ReconResult};
use crate::segmentation::{self, segment, SegmentationOptions, SegmentationResult};
use crate::synth::{self, Corpus, GroundTruth, SweepConfig, SweepKind};
use crate::volume::{FlowBundle, MaskVolume, VelocityField};

pub use config::{PipelineConfig, CONFIG_SNAPSHOT, THREADS_ENV};
pub use report::{CaseKey, DivergenceRow, SegmentationRow, TimingRow, VelocityRow};
use report::keyed;

pub const REPORT_DIR: &str = "report";
pub const SEGMENTATION_METRICS: &str = "segmentation_metrics.csv";
pub const VELOCITY_METRICS: &str = "velocity_metrics.csv";
pub const DIVERGENCE_METRICS: &str = "divergence_metrics.csv";
pub const TIMING: &str = "timing.csv";
pub const RUN_MANIFEST: &str = "manifest.csv";

fn create(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| VastError::io(dir, e))
}

pub fn cmd_synth(cfg: &SweepConfig, out_dir: &Path) -> Result<Corpus> {
    synth::generate_sweeps(cfg, out_dir)
}

#[derive(Serialize)]
struct SegmentationSummary {
    iterations: usize,
    converged: bool,
    flow_voxels: usize,
}

/// Writes the masks and logs of a segmentation run into `out_dir`.
pub fn write_segmentation(result: &SegmentationResult, out_dir: &Path) -> Result<()> {
    create(out_dir)?;
    io::save_mask(&result.static_mask, &out_dir.join("mask"))?;
    io::save_mask(&result.phase_masks, &out_dir.join("phase_masks"))?;
    segmentation::write_log(&result.history, &out_dir.join("segmentation_log.csv"))?;
    let summary = SegmentationSummary {
        iterations: result.iterations(),
        converged: result.converged,
        flow_voxels: result.static_mask.count(),
    };
    metrics::write_rows(&[summary], &out_dir.join("segmentation_summary.csv"))
}

pub fn cmd_segment(bundle_dir: &Path, out_dir: &Path, opts: &SegmentationOptions) -> Result<SegmentationResult> {
    let bundle = io::load_bundle(bundle_dir)?;
    let result = segment(&bundle, opts)?;
    if !result.converged {
        log::warn!("segmentation did not converge in {} iterations", result.iterations());
    }
    write_segmentation(&result, out_dir)?;
    Ok(result)
}

#[derive(Serialize)]
struct ReconSummary {
    iterations: usize,
    returned_iteration: usize,
    converged: bool,
}

pub fn write_reconstruction(result: &ReconResult, mask: &MaskVolume, out_dir: &Path, vtk: bool) -> Result<()> {
    create(out_dir)?;
    io::save_velocity(&result.velocity, &out_dir.join("velocity"))?;
    reconstruction::write_log(&result.history, &out_dir.join("reconstruction_log.csv"))?;
    let summary = ReconSummary {
        iterations: result.iterations(),
        returned_iteration: result.returned_iteration,
        converged: result.converged,
    };
    metrics::write_rows(&[summary], &out_dir.join("reconstruction_summary.csv"))?;
    if vtk {
        io::export_vtk(&result.velocity, mask, 0, &out_dir.join("velocity_frame0.vtk"))?;
    }
    Ok(())
}

pub fn cmd_reconstruct(bundle_dir: &Path, mask_dir: &Path, out_dir: &Path, opts: &ReconOptions, vtk: bool) -> Result<ReconResult> {
    let bundle = io::load_bundle(bundle_dir)?;
    let mask = io::load_mask(mask_dir)?;
    let result = reconstruct(&bundle, &mask, opts)?;
    write_reconstruction(&result, &mask.union_over_frames(), out_dir, vtk)?;
    Ok(result)
}

/// Metric rows for one case. Velocity agreement is scored over the true
/// lumen; the raw field is restricted to the same mask the reconstruction
/// saw. Divergence is measured inside the predicted mask.
pub fn case_metrics(
    key: &CaseKey,
    bundle: &FlowBundle,
    truth: Option<&GroundTruth>,
    mask: &MaskVolume,
    vast: &VelocityField,
    case_dir: Option<&Path>,
) -> Result<(Option<SegmentationRow>, Option<VelocityRow>, DivergenceRow)> {
    let mask = mask.union_over_frames();
    let mut raw = bundle.raw_velocity();
    raw.apply_mask(&mask);
    let d_raw = divergence_residuals(&raw, &mask)?;
    let d_vast = divergence_residuals(vast, &mask)?;
    let div = keyed!(
        DivergenceRow {
            raw_mean: d_raw.mean,
            vast_mean: d_vast.mean,
            raw_iqr: d_raw.iqr,
            vast_iqr: d_vast.iqr,
            ratio: d_vast.mean / d_raw.mean,
        },
        key
    );
    if let Some(dir) = case_dir {
        metrics::write_histogram(&d_raw.histogram, &dir.join("divergence_hist_raw.csv"))?;
        metrics::write_histogram(&d_vast.histogram, &dir.join("divergence_hist_vast.csv"))?;
    }
    let Some(truth) = truth else {
        return Ok((None, None, div));
    };
    let spacing = bundle.meta.spacing;
    let ov = overlap_scores(&truth.lumen_mask, &mask)?;
    let ab = surface_distance(&mask, &truth.lumen_mask, spacing)?;
    let ba = surface_distance(&truth.lumen_mask, &mask, spacing)?;
    let mut pooled: Vec<f64> = ab.distances.iter().chain(&ba.distances).copied().collect();
    pooled.sort_by(f64::total_cmp);
    let q = |p: f64| metrics::surface::percentile_sorted(&pooled, p);
    if let Some(dir) = case_dir {
        metrics::write_distances(&ab, &dir.join("surface_distances.csv"))?;
    }
    let seg = keyed!(
        SegmentationRow {
            accuracy: ov.accuracy,
            precision: ov.precision,
            recall: ov.recall,
            f1: ov.f1,
            dice: ov.dice,
            jaccard: ov.jaccard,
            surface_mean: 0.5 * (ab.mean + ba.mean),
            surface_q1: q(0.25),
            surface_median: q(0.5),
            surface_q3: q(0.75),
        },
        key
    );
    let a_raw = velocity_agreement(&raw, &truth.velocity, &truth.lumen_mask)?;
    let a_vast = velocity_agreement(vast, &truth.velocity, &truth.lumen_mask)?;
    let vel = keyed!(
        VelocityRow {
            rmse_raw: a_raw.rmse,
            rmse_vast: a_vast.rmse,
            ssim_raw: a_raw.ssim,
            ssim_vast: a_vast.ssim,
            cosine_raw: a_raw.cosine,
            cosine_vast: a_vast.cosine,
        },
        key
    );
    Ok((Some(seg), Some(vel), div))
}

/// Everything one case contributes to a run.
#[derive(Debug, Clone)]
pub struct CaseReport {
    pub key: CaseKey,
    pub segmentation: Option<SegmentationRow>,
    pub velocity: Option<VelocityRow>,
    pub divergence: Option<DivergenceRow>,
    pub timing: TimingRow,
}

/// Segments, reconstructs and scores one bundle, writing its outputs to
/// `case_dir` when given.
pub fn run_case(
    key: CaseKey,
    bundle: &FlowBundle,
    truth: Option<&GroundTruth>,
    cfg: &PipelineConfig,
    case_dir: Option<&Path>,
) -> Result<CaseReport> {
    let t0 = Instant::now();
    let seg = segment(bundle, &cfg.segmentation)?;
    let seg_seconds = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let recon = reconstruct(bundle, &seg.static_mask, &cfg.reconstruction)?;
    let recon_seconds = t1.elapsed().as_secs_f64();
    if let Some(dir) = case_dir {
        write_segmentation(&seg, dir)?;
        write_reconstruction(&recon, &seg.static_mask, dir, cfg.vtk)?;
    }
    // Score the field at the precision it is stored with, so a later
    // `evaluate_corpus` over the run directory reproduces these rows.
    let mut stored = recon.velocity.clone();
    for k in 0..3 {
        stored.component_mut(k).iter_mut().for_each(|x| *x = *x as f32 as f64);
    }
    let (segmentation, velocity, divergence) =
        case_metrics(&key, bundle, truth, &seg.static_mask, &stored, case_dir)?;
    let timing = TimingRow {
        case_id: key.case_id.clone(),
        segmentation_seconds: seg_seconds,
        reconstruction_seconds: recon_seconds,
        segmentation_iterations: seg.iterations(),
        segmentation_converged: seg.converged,
        reconstruction_iterations: recon.iterations(),
        returned_iteration: recon.returned_iteration,
        reconstruction_converged: recon.converged,
        status: "ok".into(),
    };
    Ok(CaseReport { key, segmentation, velocity, divergence: Some(divergence), timing })
}

fn sweep_name(kind: SweepKind) -> String {
    match kind {
        SweepKind::Snr => "snr".into(),
        SweepKind::Venc => "venc".into(),
    }
}

/// Writes the per-case tables under `report_dir`.
pub fn write_reports(cases: &[CaseReport], report_dir: &Path) -> Result<()> {
    create(report_dir)?;
    let seg: Vec<_> = cases.iter().filter_map(|c| c.segmentation.clone()).collect();
    let vel: Vec<_> = cases.iter().filter_map(|c| c.velocity.clone()).collect();
    let div: Vec<_> = cases.iter().filter_map(|c| c.divergence.clone()).collect();
    let timing: Vec<_> = cases.iter().map(|c| c.timing.clone()).collect();
    if !seg.is_empty() {
        metrics::write_rows(&seg, &report_dir.join(SEGMENTATION_METRICS))?;
        metrics::write_rows(&vel, &report_dir.join(VELOCITY_METRICS))?;
    }
    metrics::write_rows(&div, &report_dir.join(DIVERGENCE_METRICS))?;
    metrics::write_rows(&timing, &report_dir.join(TIMING))
}

#[derive(Serialize)]
struct ManifestEntry {
    path: String,
    bytes: u64,
    sha256: String,
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> =
        fs::read_dir(dir).map_err(|e| VastError::io(dir, e))?.filter_map(|e| e.ok().map(|e| e.path())).collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_files(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

/// Lists every file under `root` (except the manifest itself) with its hash.
pub fn write_run_manifest(root: &Path) -> Result<()> {
    let mut files = Vec::new();
    collect_files(root, &mut files)?;
    let manifest = root.join(RUN_MANIFEST);
    let mut rows = Vec::new();
    for p in files.into_iter().filter(|p| *p != manifest) {
        let bytes = fs::read(&p).map_err(|e| VastError::io(&p, e))?;
        let rel = p.strip_prefix(root).unwrap_or(&p).to_string_lossy().replace('\\', "/");
        rows.push(ManifestEntry { path: rel, bytes: bytes.len() as u64, sha256: hex::encode(Sha256::digest(&bytes)) });
    }
    metrics::write_rows(&rows, &manifest)
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub cases: Vec<CaseReport>,
}

impl RunSummary {
    pub fn failures(&self) -> usize {
        self.cases.iter().filter(|c| c.timing.status != "ok").count()
    }
}

enum Job {
    Corpus { corpus: Corpus, index: usize },
    Input(PathBuf),
}

fn run_job(job: &Job, cfg: &PipelineConfig, cases_dir: &Path) -> (CaseKey, Result<CaseReport>) {
    match job {
        Job::Corpus { corpus, index } => {
            let row = &corpus.rows[*index];
            let key = CaseKey {
                case_id: row.case_id.clone(),
                sweep: sweep_name(row.sweep),
                snr: Some(row.snr),
                venc_fraction: Some(row.venc_fraction),
            };
            let out = (|| {
                let bundle = io::load_bundle(&corpus.bundle_dir(row))?;
                let truth = synth::load_truth(&corpus.truth_dir(row))?;
                let dir = cases_dir.join(&row.case_id);
                run_case(key.clone(), &bundle, Some(&truth), cfg, Some(&dir))
            })();
            (key, out)
        }
        Job::Input(path) => {
            let name = path.file_name().map_or_else(|| "input".to_string(), |n| n.to_string_lossy().into_owned());
            let key = CaseKey { case_id: name, sweep: "input".into(), snr: None, venc_fraction: None };
            let out = (|| {
                let bundle = io::load_bundle(path)?;
                let dir = cases_dir.join(&key.case_id);
                run_case(key.clone(), &bundle, None, cfg, Some(&dir))
            })();
            (key, out)
        }
    }
}

/// Full run: optional synthesis, then segmentation, reconstruction and
/// scoring of every case, then reports and the run manifest. Failed cases
/// are listed in the timing table and reported as an error at the end.
pub fn cmd_pipeline(cfg: &PipelineConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let threads = cfg.resolved_threads()?;
    crate::par::with_threads(threads, || run_pipeline(cfg))
}

fn run_pipeline(cfg: &PipelineConfig) -> Result<RunSummary> {
    let out = &cfg.out_dir;
    cfg.write_snapshot(out)?;
    let corpus = if let Some(path) = &cfg.sweep_config {
        let mut sweep = SweepConfig::load(path)?;
        if let Some(seed) = cfg.seed {
            sweep.base_seed = seed;
        }
        Some(cmd_synth(&sweep, &out.join("corpus"))?)
    } else if let Some(root) = &cfg.corpus {
        Some(Corpus::load(root)?)
    } else {
        None
    };
    let mut jobs = Vec::new();
    if let Some(c) = &corpus {
        jobs.extend((0..c.rows.len()).map(|index| Job::Corpus { corpus: c.clone(), index }));
    }
    jobs.extend(cfg.inputs.iter().cloned().map(Job::Input));
    if jobs.is_empty() {
        return Err(VastError::Config("nothing to process: set inputs, sweep_config or corpus".into()));
    }
    let cases_dir = out.join("cases");
    let results = crate::par::map_range(jobs.len(), |i| run_job(&jobs[i], cfg, &cases_dir));
    let cases: Vec<CaseReport> = results
        .into_iter()
        .map(|(key, r)| {
            r.unwrap_or_else(|e| {
                log::error!("case {} failed: {e}", key.case_id);
                CaseReport {
                    timing: TimingRow::failed(&key.case_id, e.to_string()),
                    key,
                    segmentation: None,
                    velocity: None,
                    divergence: None,
                }
            })
        })
        .collect();
    write_reports(&cases, &out.join(REPORT_DIR))?;
    write_run_manifest(out)?;
    let summary = RunSummary { out_dir: out.clone(), cases };
    match summary.failures() {
        0 => Ok(summary),
        n => Err(VastError::CaseFailures(n)),
    }
}

/// Row written by [`cmd_evaluate`] for a pair of masks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaskEvaluation {
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub dice: Option<f64>,
    pub jaccard: Option<f64>,
    pub surface_mean: f64,
}

/// Row written by [`cmd_evaluate`] for a pair of velocity fields.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VelocityEvaluation {
    pub rmse: f64,
    pub ssim: f64,
    pub cosine: f64,
    pub divergence_mean: f64,
    pub reference_divergence_mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Evaluation {
    Masks(MaskEvaluation),
    Velocity(VelocityEvaluation),
}

/// Scores `pred` against `truth`: two mask directories, or two velocity
/// directories plus the mask to score inside.
pub fn cmd_evaluate(pred: &Path, truth: &Path, mask: Option<&Path>, out_dir: &Path) -> Result<Evaluation> {
    let kind = io::read_header(pred)?.kind;
    let truth_kind = io::read_header(truth)?.kind;
    if kind != truth_kind {
        return Err(VastError::Validation(format!("cannot compare a {kind:?} with a {truth_kind:?}")));
    }
    create(out_dir)?;
    match kind {
        DatasetKind::Mask => {
            let (p, t) = (io::load_mask(pred)?, io::load_mask(truth)?);
            let ov = overlap_scores(&t, &p)?;
            let spacing = match mask {
                Some(_) => return Err(VastError::Validation("--mask only applies to velocity fields".into())),
                None => [1.0; 3],
            };
            let ab = surface_distance(&p, &t, spacing)?;
            let ba = surface_distance(&t, &p, spacing)?;
            metrics::write_distances(&ab, &out_dir.join("surface_distances.csv"))?;
            let row = MaskEvaluation {
                accuracy: ov.accuracy,
                precision: ov.precision,
                recall: ov.recall,
                f1: ov.f1,
                dice: ov.dice,
                jaccard: ov.jaccard,
                surface_mean: 0.5 * (ab.mean + ba.mean),
            };
            metrics::write_rows(std::slice::from_ref(&row), &out_dir.join("overlap.csv"))?;
            Ok(Evaluation::Masks(row))
        }
        DatasetKind::Velocity => {
            let mask_dir = mask.ok_or_else(|| VastError::Validation("velocity evaluation needs a mask".into()))?;
            let m = io::load_mask(mask_dir)?;
            let (p, t) = (io::load_velocity(pred)?, io::load_velocity(truth)?);
            let a = velocity_agreement(&p, &t, &m)?;
            let row = VelocityEvaluation {
                rmse: a.rmse,
                ssim: a.ssim,
                cosine: a.cosine,
                divergence_mean: divergence_residuals(&p, &m)?.mean,
                reference_divergence_mean: divergence_residuals(&t, &m)?.mean,
            };
            metrics::write_rows(std::slice::from_ref(&row), &out_dir.join("velocity_agreement.csv"))?;
            Ok(Evaluation::Velocity(row))
        }
        DatasetKind::Bundle => Err(VastError::Validation("evaluate expects masks or velocity fields, not bundles".into())),
    }
}

/// Scores an earlier run against a corpus: one row per manifest case, read
/// from `<run_dir>/cases/<id>/{mask,velocity}`.
pub fn evaluate_corpus(run_dir: &Path, corpus_dir: &Path, out_dir: &Path) -> Result<Vec<CaseReport>> {
    let corpus = Corpus::load(corpus_dir)?;
    let mut cases = Vec::new();
    for row in &corpus.rows {
        let key = CaseKey {
            case_id: row.case_id.clone(),
            sweep: sweep_name(row.sweep),
            snr: Some(row.snr),
            venc_fraction: Some(row.venc_fraction),
        };
        let dir = run_dir.join("cases").join(&row.case_id);
        let bundle = io::load_bundle(&corpus.bundle_dir(row))?;
        let truth = synth::load_truth(&corpus.truth_dir(row))?;
        let mask = io::load_mask(&dir.join("mask"))?;
        let vast = io::load_velocity(&dir.join("velocity"))?;
        let (segmentation, velocity, divergence) = case_metrics(&key, &bundle, Some(&truth), &mask, &vast, None)?;
        cases.push(CaseReport {
            timing: TimingRow { status: "ok".into(), ..TimingRow::failed(&key.case_id, String::new()) },
            key,
            segmentation,
            velocity,
            divergence: Some(divergence),
        });
    }
    create(out_dir)?;
    let seg: Vec<_> = cases.iter().filter_map(|c| c.segmentation.clone()).collect();
    let vel: Vec<_> = cases.iter().filter_map(|c| c.velocity.clone()).collect();
    let div: Vec<_> = cases.iter().filter_map(|c| c.divergence.clone()).collect();
    metrics::write_rows(&seg, &out_dir.join(SEGMENTATION_METRICS))?;
    metrics::write_rows(&vel, &out_dir.join(VELOCITY_METRICS))?;
    metrics::write_rows(&div, &out_dir.join(DIVERGENCE_METRICS))?;
    Ok(cases)
}
