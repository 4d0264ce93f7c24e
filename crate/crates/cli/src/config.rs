use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use srunet::network::NetworkConfig;
use srunet::postprocess::VectorizeConfig;
use srunet::trainer::TrainConfig;

/// Everything a run reads, as loaded from a TOML file and then overridden
/// by command-line flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Global seed; copied into every seeded component.
    pub seed: u64,
    pub synth: SynthSection,
    pub data: DataSection,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub tiling: TilingSection,
    pub postprocess: VectorizeConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub tiles: usize,
    pub size: usize,
    /// Parent scenes are `scene_tiles × scene_tiles` tiles.
    pub scene_tiles: usize,
    pub density: f64,
    /// Share of roads erased from the historical map.
    pub masked_ratio: f64,
    /// Share of tiles written with the `val` role; the rest are `train`.
    pub val_ratio: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            tiles: 16,
            size: 512,
            scene_tiles: 4,
            density: 0.5,
            masked_ratio: 0.3,
            val_ratio: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Dataset directory written by `gen-synth`.
    pub path: Option<PathBuf>,
    /// Output directory of a training run.
    pub out: Option<PathBuf>,
    /// Labeled share of the training pool.
    pub lab_ratio: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            path: None,
            out: None,
            lab_ratio: 0.125,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TilingSection {
    /// Defaults to the network's training tile size.
    pub tile_size: Option<usize>,
    pub overlap: usize,
    /// Tiles per forward pass.
    pub batch: usize,
    pub threshold: f64,
}

impl Default for TilingSection {
    fn default() -> Self {
        Self {
            tile_size: None,
            overlap: 64,
            batch: 2,
            threshold: 0.5,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Pushes the global seed into the sections that carry their own.
    pub fn resolve(mut self) -> Self {
        self.train.seed = self.seed;
        self
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).context("serializing resolved config")
    }
}
