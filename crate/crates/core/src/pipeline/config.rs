use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, VastError};
use crate::reconstruction::ReconOptions;
use crate::segmentation::SegmentationOptions;

pub const THREADS_ENV: &str = "VAST_THREADS";
pub const CONFIG_SNAPSHOT: &str = "resolved_config.toml";

/// Run configuration, read from TOML. Every table is optional.
///
/// ```toml
/// out_dir = "runs/snr"
/// sweep_config = "sweep.toml"
/// threads = 4
/// vtk = true
///
/// [segmentation]
/// k = 0.2
///
/// [reconstruction]
/// alpha = 0.01
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Bundle directories processed without ground truth.
    pub inputs: Vec<PathBuf>,
    pub out_dir: PathBuf,
    /// Sweep definition; when set, the corpus is synthesised into
    /// `<out_dir>/corpus` before processing.
    pub sweep_config: Option<PathBuf>,
    /// Existing corpus directory (with manifest) to process.
    pub corpus: Option<PathBuf>,
    /// Worker threads; falls back to the environment, then all cores.
    pub threads: Option<usize>,
    /// Replaces the sweep's base seed.
    pub seed: Option<u64>,
    /// Export frame 0 of each reconstructed field as VTK.
    pub vtk: bool,
    pub segmentation: SegmentationOptions,
    pub reconstruction: ReconOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            inputs: Vec::new(),
            out_dir: PathBuf::from("vast-run"),
            sweep_config: None,
            corpus: None,
            threads: None,
            seed: None,
            vtk: false,
            segmentation: SegmentationOptions::default(),
            reconstruction: ReconOptions::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| VastError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| VastError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("pipeline config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        if self.threads == Some(0) {
            return Err(VastError::Config("threads must be at least 1".into()));
        }
        if self.sweep_config.is_some() && self.corpus.is_some() {
            return Err(VastError::Config("set at most one of sweep_config and corpus".into()));
        }
        self.segmentation.validate()?;
        self.reconstruction.validate()
    }

    /// Thread count from the config, then `VAST_THREADS`, then all cores.
    pub fn resolved_threads(&self) -> Result<usize> {
        if let Some(t) = self.threads {
            return Ok(t);
        }
        match std::env::var(THREADS_ENV) {
            Ok(v) => match v.trim().parse::<usize>() {
                Ok(t) if t > 0 => Ok(t),
                _ => Err(VastError::Config(format!("{THREADS_ENV} must be a positive integer, got '{v}'"))),
            },
            Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
        }
    }

    /// Writes the resolved configuration into `dir`.
    pub fn write_snapshot(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| VastError::io(dir, e))?;
        let path = dir.join(CONFIG_SNAPSHOT);
        std::fs::write(&path, self.to_toml()).map_err(|e| VastError::io(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_carry_standard_constants() {
        let c = PipelineConfig::default();
        assert_eq!((c.segmentation.k, c.segmentation.r, c.segmentation.window), (0.2, 0.5, 11));
        assert_eq!((c.reconstruction.alpha, c.reconstruction.tau, c.reconstruction.epsilon), (0.01, 2.0, 1e-3));
    }

    #[test]
    fn toml_round_trip_and_rejections() {
        let c = PipelineConfig::from_toml("threads = 2\n[segmentation]\nk = 0.3\n").unwrap();
        assert_eq!(c.threads, Some(2));
        assert_eq!(c.segmentation.k, 0.3);
        assert_eq!(PipelineConfig::from_toml(&c.to_toml()).unwrap(), c);
        assert!(PipelineConfig::from_toml("threads = 0").is_err());
        assert!(PipelineConfig::from_toml("[segmentation]\nwindow = 10").is_err());
        assert!(PipelineConfig::from_toml("[reconstruction]\ntau = -1.0").is_err());
        assert!(PipelineConfig::from_toml("colour = 1").is_err());
    }
}
