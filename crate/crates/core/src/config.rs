//! Run configuration, read from TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bev::GridSpec;
use crate::dvm::Bins;
use crate::error::{Error, Result};
use crate::learn::{Fusion, Hyperparams, ModelDims};
use crate::scene::{CameraModel, LidarConfig, WorldSpec};

/// LiDAR of each domain role.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Lidars {
    pub source1: LidarConfig,
    pub source2: LidarConfig,
    pub target: LidarConfig,
}

impl Default for Lidars {
    fn default() -> Self {
        Self {
            source1: LidarConfig::with_beams(16),
            source2: LidarConfig::with_beams(64),
            target: LidarConfig::with_beams(32),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    /// Area-to-area fusion.
    pub baf: bool,
    /// Contrastive learning on density-maintained vectors.
    pub bdcl: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            baf: true,
            bdcl: true,
        }
    }
}

impl Ablation {
    pub fn fusion(&self) -> Fusion {
        if self.baf {
            Fusion::Area
        } else {
            Fusion::None
        }
    }
}

/// Scene counts and rendering.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Training scenes per source domain.
    pub train_scenes: usize,
    /// Target-domain scenes used for validation during training.
    pub val_scenes: usize,
    /// Target-domain scenes used for final scoring.
    pub test_scenes: usize,
    /// Standard deviation of the albedo-channel noise.
    pub render_noise: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_scenes: 24,
            val_scenes: 4,
            test_scenes: 8,
            render_noise: 0.03,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Scenes written per domain role.
    pub count: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { count: 10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub fractions: Vec<f64>,
    /// Maximum displacement of a perturbed projection, in pixels.
    pub radius_px: f64,
    pub seeds: Vec<u64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            fractions: vec![0.0, 0.05, 0.2, 0.5, 1.0],
            radius_px: 12.0,
            seeds: vec![1, 2, 3, 4, 5],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DgConfig {
    pub seeds: Vec<u64>,
}

impl Default for DgConfig {
    fn default() -> Self {
        Self {
            seeds: vec![1, 2, 3, 4, 5],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HistConfig {
    /// Lower edges of the population bins, e.g. "1,10,50".
    pub bins: String,
}

impl Default for HistConfig {
    fn default() -> Self {
        Self {
            bins: Bins::default().to_string(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Output directory; the `--out` flag takes precedence.
    pub out: Option<String>,
    pub world: WorldSpec,
    pub camera: CameraModel,
    pub lidar: Lidars,
    pub grid: GridSpec,
    pub model: ModelDims,
    pub train: Hyperparams,
    pub ablation: Ablation,
    pub data: DataConfig,
    pub synth: SynthConfig,
    pub sweep: SweepConfig,
    pub dg: DgConfig,
    pub hist: HistConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn bins(&self) -> Result<Bins> {
        self.hist.bins.parse()
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.camera.validate()?;
        for l in [&self.lidar.source1, &self.lidar.source2, &self.lidar.target] {
            l.validate()?;
        }
        self.grid.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.bins()?;
        if !(self.data.render_noise >= 0.0) {
            return Err(Error::Config("render_noise must be >= 0".into()));
        }
        if self.sweep.fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::Config("sweep fractions must lie in [0, 1]".into()));
        }
        if self.sweep.fractions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("sweep fractions must be strictly ascending".into()));
        }
        if !(self.sweep.radius_px >= 0.0) {
            return Err(Error::Config("sweep radius_px must be >= 0".into()));
        }
        Ok(())
    }
}
