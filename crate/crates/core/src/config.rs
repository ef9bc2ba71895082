//! Experiment configuration: a single JSON document covering data, model,
//! training, optimizer, and loss settings. Unknown keys are rejected and
//! every field has a default, so a partial document is a valid experiment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{self, SynthConfig, Tile};
use crate::error::{Error, Result};
use crate::models::ModelSpec;
use crate::objectives::LossConfig;
use crate::optim::OptimizerConfig;
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    /// Generate a synthetic scene in memory.
    Synth {
        width: usize,
        height: usize,
        seed: u64,
        #[serde(default)]
        params: SynthConfig,
    },
    /// Load a raster header (JSON sidecar) and a mask (`.pgm` or raster).
    Raster { image: PathBuf, mask: PathBuf },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    pub tile_size: usize,
    /// Train/validation/test shares for the stratified split.
    pub split_fractions: (f64, f64, f64),
    pub split_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Synth {
                width: 512,
                height: 512,
                seed: 7,
                params: SynthConfig::default(),
            },
            tile_size: 256,
            split_fractions: (0.7, 0.1, 0.2),
            split_seed: 42,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Seeds model initialization; `train.seed` drives shuffling and dropout.
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub optimizer: OptimizerConfig,
    pub loss: LossConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.optimizer.validate()?;
        self.loss.validate()?;
        if self.data.tile_size < (1 << self.model.depth) {
            return Err(Error::Config(format!(
                "tile_size {} too small for depth {}",
                self.data.tile_size, self.model.depth
            )));
        }
        if let DataSource::Synth { params, .. } = &self.data.source {
            params.validate()?;
        }
        Ok(())
    }

    pub fn to_pretty_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Parse a config file, rejecting unknown keys.
pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    let cfg: ExperimentConfig = serde_json::from_str(&text)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Materialize the configured data source into raw (unstandardized) tiles.
pub fn prepare_tiles(cfg: &DataConfig) -> Result<Vec<Tile>> {
    let (raster, mask) = match &cfg.source {
        DataSource::Synth {
            width,
            height,
            seed,
            params,
        } => data::synth_scene(*width, *height, params, *seed)?,
        DataSource::Raster { image, mask } => {
            let raster = data::load_raster(image)?;
            let mask = load_mask_any(mask)?;
            (raster, mask)
        }
    };
    let tiles = data::tile(&raster, &mask, cfg.tile_size)?;
    if tiles.is_empty() {
        return Err(Error::Data(format!(
            "no usable {0}x{0} tiles in the input",
            cfg.tile_size
        )));
    }
    Ok(tiles)
}

/// Masks arrive either as binary PGM or as a 0/1 raster.
pub fn load_mask_any(path: &Path) -> Result<data::Mask> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")) {
        data::load_mask_pgm(path)
    } else {
        let raster = data::load_raster(path)?;
        Ok(data::Mask {
            width: raster.width,
            height: raster.height,
            data: raster.values.iter().map(|&v| u8::from(v >= 0.5)).collect(),
        })
    }
}
