//! `vast`: batch driver for synthesis, segmentation, reconstruction,
//! evaluation and full pipeline runs.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use vast_core::pipeline::{self, Evaluation, PipelineConfig, THREADS_ENV};
use vast_core::synth::{SweepConfig, MANIFEST_FILE};

#[derive(Parser)]
#[command(name = "vast", version, about = "4D flow MRI segmentation and velocity reconstruction")]
struct Cli {
    /// Worker threads (default: all available cores).
    #[arg(long, global = true, env = THREADS_ENV)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic SNR and venc sweeps.
    Synth {
        /// Sweep definition (TOML); defaults to the built-in sweeps.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Replace the SNR list, e.g. `--snr 20,5`.
        #[arg(long, value_delimiter = ',')]
        snr: Option<Vec<f64>>,
    },
    /// Segment the vessel in one bundle.
    Segment {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Pipeline config (TOML); only its segmentation table is used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: SegOverrides,
    },
    /// Reconstruct velocity inside a mask.
    Reconstruct {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Pipeline config (TOML); only its reconstruction table is used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: ReconOverrides,
        /// Also write a VTK file of the first frame.
        #[arg(long)]
        vtk: bool,
    },
    /// Score predictions: two masks, two velocity fields (with --mask), or a
    /// run directory against a corpus.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full run: optional synthesis, then segment, reconstruct and report.
    Pipeline {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Bundle directories to process (repeatable).
        #[arg(long = "input")]
        inputs: Vec<PathBuf>,
        /// Synthesise this sweep first and process its cases.
        #[arg(long)]
        sweep_config: Option<PathBuf>,
        /// Process an existing corpus.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        vtk: bool,
        #[command(flatten)]
        seg: SegOverrides,
        #[command(flatten)]
        recon: ReconOverrides,
    },
}

#[derive(Args, Default)]
struct SegOverrides {
    /// Tucker ranks as rx,ry,rz,rt.
    #[arg(long, value_delimiter = ',', num_args = 4)]
    ranks: Option<Vec<usize>>,
    #[arg(long)]
    sauvola_k: Option<f64>,
    #[arg(long)]
    sauvola_r: Option<f64>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    seg_max_iterations: Option<usize>,
    /// Iteration budget of the TV fusion.
    #[arg(long)]
    tv_iterations: Option<usize>,
}

#[derive(Args, Default)]
struct ReconOverrides {
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    solver_tolerance: Option<f64>,
    #[arg(long)]
    recon_max_iterations: Option<usize>,
}

impl SegOverrides {
    fn apply(&self, cfg: &mut PipelineConfig) {
        let s = &mut cfg.segmentation;
        if let Some(r) = &self.ranks {
            s.ranks = Some([r[0], r[1], r[2], r[3]]);
        }
        set(&mut s.k, self.sauvola_k);
        set(&mut s.r, self.sauvola_r);
        set(&mut s.window, self.window);
        set(&mut s.max_iterations, self.seg_max_iterations);
        set(&mut s.fusion_iterations, self.tv_iterations);
    }
}

impl ReconOverrides {
    fn apply(&self, cfg: &mut PipelineConfig) {
        let r = &mut cfg.reconstruction;
        set(&mut r.alpha, self.alpha);
        set(&mut r.tau, self.tau);
        set(&mut r.epsilon, self.epsilon);
        set(&mut r.solver_tolerance, self.solver_tolerance);
        set(&mut r.max_iterations, self.recon_max_iterations);
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(PipelineConfig::default()),
    }
}

/// Snapshot for single-stage commands: records the options that produced
/// the outputs.
fn finish_config(mut cfg: PipelineConfig, threads: Option<usize>, out: &Path, inputs: Vec<PathBuf>) -> Result<PipelineConfig> {
    cfg.threads = threads.or(cfg.threads);
    cfg.out_dir = out.to_path_buf();
    cfg.inputs = inputs;
    cfg.validate()?;
    cfg.write_snapshot(out)?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let threads = cli.threads;
    match cli.command {
        Command::Synth { config, out, seed, snr } => {
            let mut cfg = match &config {
                Some(p) => SweepConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
                None => SweepConfig::default(),
            };
            set(&mut cfg.base_seed, seed);
            set(&mut cfg.snr_list, snr);
            let n = threads.map_or_else(default_threads, Ok)?;
            let corpus = vast_core::par::with_threads(n, || pipeline::cmd_synth(&cfg, &out))?;
            println!("wrote {} cases and {}", corpus.rows.len(), out.join(MANIFEST_FILE).display());
        }
        Command::Segment { bundle, out, config, overrides } => {
            let mut cfg = load_config(config.as_deref())?;
            overrides.apply(&mut cfg);
            let cfg = finish_config(cfg, threads, &out, vec![bundle.clone()])?;
            let n = cfg.resolved_threads()?;
            let result =
                vast_core::par::with_threads(n, || pipeline::cmd_segment(&bundle, &out, &cfg.segmentation))?;
            let flag = if result.converged { "converged" } else { "non-converged" };
            println!("{} flow voxels after {} iterations ({flag})", result.static_mask.count(), result.iterations());
        }
        Command::Reconstruct { bundle, mask, out, config, overrides, vtk } => {
            let mut cfg = load_config(config.as_deref())?;
            overrides.apply(&mut cfg);
            cfg.vtk |= vtk;
            let cfg = finish_config(cfg, threads, &out, vec![bundle.clone()])?;
            let n = cfg.resolved_threads()?;
            let result = vast_core::par::with_threads(n, || {
                pipeline::cmd_reconstruct(&bundle, &mask, &out, &cfg.reconstruction, cfg.vtk)
            })?;
            let flag = if result.converged { "converged" } else { "non-converged" };
            println!(
                "{} iterations, returned iteration {} ({flag})",
                result.iterations(),
                result.returned_iteration
            );
        }
        Command::Evaluate { pred, truth, mask, out } => {
            let n = threads.map_or_else(default_threads, Ok)?;
            if truth.join(MANIFEST_FILE).is_file() {
                let cases = vast_core::par::with_threads(n, || pipeline::evaluate_corpus(&pred, &truth, &out))?;
                println!("scored {} cases into {}", cases.len(), out.display());
            } else {
                match vast_core::par::with_threads(n, || pipeline::cmd_evaluate(&pred, &truth, mask.as_deref(), &out))? {
                    Evaluation::Masks(m) => println!("dice {:?} surface distance {:.4}", m.dice, m.surface_mean),
                    Evaluation::Velocity(v) => {
                        println!("rmse {:.4} ssim {:.4} cosine {:.4}", v.rmse, v.ssim, v.cosine)
                    }
                }
            }
        }
        Command::Pipeline { config, out, seed, inputs, sweep_config, corpus, vtk, seg, recon } => {
            let mut cfg = load_config(config.as_deref())?;
            set(&mut cfg.out_dir, out);
            set(&mut cfg.seed, seed.map(Some));
            set(&mut cfg.sweep_config, sweep_config.map(Some));
            set(&mut cfg.corpus, corpus.map(Some));
            set(&mut cfg.threads, threads.map(Some));
            cfg.inputs.extend(inputs);
            cfg.vtk |= vtk;
            seg.apply(&mut cfg);
            recon.apply(&mut cfg);
            let summary = pipeline::cmd_pipeline(&cfg)?;
            println!("processed {} cases into {}", summary.cases.len(), summary.out_dir.display());
        }
    }
    Ok(())
}

fn default_threads() -> Result<usize> {
    Ok(PipelineConfig::default().resolved_threads()?)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
