//! Run configuration: a strict key-value TOML file. Unknown keys are
//! rejected so a typo cannot silently fall back to a default.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::descriptor::{LevelShape, PyramidProfile};
use crate::error::{Error, Result};
use crate::sphere::{default_viewport_centers, SphereCoord};
use crate::training::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSource {
    /// Viewport feature pyramids are read from `.ahgf` files.
    Files,
    /// Pyramids are synthesized deterministically (the desk-scale stand-in
    /// for a pretrained backbone).
    Synthetic,
}

/// Dataset presets: the neighbor count and the MOS significance threshold
/// follow the dataset's MOS scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetProfile {
    /// MOS in [1, 10]; k = 5, threshold 0.5.
    Oiqa,
    /// MOS in [0, 100]; k = 0, threshold 5.0.
    Cviqd,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub profile: Option<DatasetProfile>,
    /// Content-hyperedge neighbor count; overrides the profile preset.
    pub k: Option<usize>,
    pub delta_deg: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_predictor: f64,
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub dropout: f64,
    pub layer_dims: Vec<usize>,
    pub mos_scale: f64,
    pub n_viewports: usize,
    /// Explicit viewport centers as (lon_deg, lat_deg) pairs; when absent
    /// the 20 icosahedron face centers are used.
    pub viewport_centers: Option<Vec<[f64; 2]>>,
    pub viewport_fov_deg: f64,
    pub viewport_resolution: usize,
    pub feature_source: FeatureSource,
    /// Per-level (channels, height, width) for synthesized pyramids.
    pub synthetic_profile: Vec<[usize; 3]>,
    /// |delta MOS| significance threshold for the Krasula analysis;
    /// overrides the profile preset.
    pub mos_diff_threshold: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            profile: None,
            k: None,
            delta_deg: 45.0,
            batch_size: 16,
            epochs: 40,
            lr_predictor: 1e-3,
            lr_decay: 0.25,
            lr_decay_every: 40,
            dropout: 0.5,
            layer_dims: vec![1024, 256, 128, 64, 32, 1],
            mos_scale: 1.0,
            n_viewports: 20,
            viewport_centers: None,
            viewport_fov_deg: 90.0,
            viewport_resolution: 256,
            feature_source: FeatureSource::Files,
            synthetic_profile: vec![[64, 64, 64], [128, 32, 32], [256, 16, 16], [512, 8, 8]],
            mos_diff_threshold: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(centers) = &self.viewport_centers {
            if centers.len() != self.n_viewports {
                return Err(Error::Config(format!(
                    "viewport_centers lists {} entries but n_viewports = {}",
                    centers.len(),
                    self.n_viewports
                )));
            }
        }
        self.to_train_config().validate()?;
        self.pyramid_profile()?;
        Ok(())
    }

    /// The neighbor count: explicit `k`, else the profile preset, else 5.
    pub fn effective_k(&self) -> usize {
        self.k.unwrap_or(match self.profile {
            Some(DatasetProfile::Cviqd) => 0,
            Some(DatasetProfile::Oiqa) | None => 5,
        })
    }

    /// Krasula significance threshold on the dataset's MOS scale.
    pub fn effective_mos_diff_threshold(&self) -> f64 {
        self.mos_diff_threshold.unwrap_or(match self.profile {
            Some(DatasetProfile::Cviqd) => 5.0,
            Some(DatasetProfile::Oiqa) | None => 0.5,
        })
    }

    pub fn centers(&self) -> Result<Vec<SphereCoord>> {
        match &self.viewport_centers {
            Some(list) => list
                .iter()
                .map(|&[lon, lat]| SphereCoord::from_degrees(lon, lat))
                .collect(),
            None => default_viewport_centers(self.n_viewports),
        }
    }

    pub fn pyramid_profile(&self) -> Result<PyramidProfile> {
        PyramidProfile::new(
            self.synthetic_profile
                .iter()
                .map(|&[c, h, w]| LevelShape {
                    channels: c,
                    height: h,
                    width: w,
                })
                .collect(),
        )
    }

    pub fn to_train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            epochs: self.epochs,
            lr_predictor: self.lr_predictor,
            lr_decay: self.lr_decay,
            lr_decay_every: self.lr_decay_every,
            dropout: self.dropout,
            seed: self.seed,
            k: self.effective_k(),
            delta: self.delta_deg.to_radians(),
            layer_dims: self.layer_dims.clone(),
            mos_scale: self.mos_scale,
        }
    }
}
