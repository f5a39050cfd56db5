//! Run configuration file (TOML).
//!
//! Every key is optional; missing keys take the library defaults. Command-line
//! flags are applied on top, so precedence is flag > file > default.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use vistr::eval::SyntheticSceneConfig;
use vistr::pose::{MatchMode, RansacConfig, DEFAULT_RATIO};
use vistr::retrieval::RetrievalConfig;
use vistr::vae::{TrainConfig, VaeArch};

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds scene generation, training, sampling and RANSAC.
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub paths: Paths,
    pub scene: SceneSection,
    pub train: TrainSection,
    pub retrieval: RetrievalSection,
    pub ransac: RansacSection,
    pub matching: MatchingSection,
    pub bench: BenchSection,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub scene_text: Option<PathBuf>,
    pub query_text: Option<PathBuf>,
    pub bundle: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub train_log: Option<PathBuf>,
    pub submap: Option<PathBuf>,
    pub poses: Option<PathBuf>,
    pub timings: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSection {
    pub points: usize,
    pub cameras: usize,
    pub query_every: usize,
    pub extent: f64,
    pub embedding_dim: usize,
    pub descriptor_dim: usize,
    pub descriptor_noise: f64,
    pub embedding_scale: f64,
    pub embedding_frequency: f64,
    pub embedding_noise: f64,
    pub fov_deg: f64,
    pub width: u32,
    pub height: u32,
    /// Zero means unlimited.
    pub max_depth: f64,
    pub dropout: f64,
    pub keypoint_noise_px: f64,
    pub clutter: usize,
    pub query_jitter_m: f64,
    pub query_jitter_deg: f64,
}

impl Default for SceneSection {
    fn default() -> Self {
        let d = SyntheticSceneConfig::default();
        SceneSection {
            points: d.points,
            cameras: d.cameras,
            query_every: d.query_every,
            extent: d.extent,
            embedding_dim: d.embedding_dim,
            descriptor_dim: d.descriptor_dim,
            descriptor_noise: d.descriptor_noise,
            embedding_scale: d.embedding_scale,
            embedding_frequency: d.embedding_frequency,
            embedding_noise: d.embedding_noise,
            fov_deg: d.fov_deg,
            width: d.width,
            height: d.height,
            max_depth: d.max_depth.unwrap_or(0.0),
            dropout: d.dropout,
            keypoint_noise_px: d.keypoint_noise_px,
            clutter: d.clutter,
            query_jitter_m: d.query_jitter.0,
            query_jitter_deg: d.query_jitter.1,
        }
    }
}

impl SceneSection {
    pub fn to_config(&self, seed: u64) -> SyntheticSceneConfig {
        SyntheticSceneConfig {
            points: self.points,
            cameras: self.cameras,
            query_every: self.query_every,
            extent: self.extent,
            embedding_dim: self.embedding_dim,
            descriptor_dim: self.descriptor_dim,
            descriptor_noise: self.descriptor_noise,
            embedding_scale: self.embedding_scale,
            embedding_frequency: self.embedding_frequency,
            embedding_noise: self.embedding_noise,
            fov_deg: self.fov_deg,
            width: self.width,
            height: self.height,
            max_depth: (self.max_depth > 0.0).then_some(self.max_depth),
            dropout: self.dropout,
            keypoint_noise_px: self.keypoint_noise_px,
            clutter: self.clutter,
            query_jitter: (self.query_jitter_m, self.query_jitter_deg),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub iterations: usize,
    pub batch_images: usize,
    pub points_per_image: usize,
    pub mc_samples: usize,
    pub max_lr: f64,
    pub lr_warmup_fraction: f64,
    pub lr_div_factor: f64,
    pub lr_final_div_factor: f64,
    pub kl_warmup_start: usize,
    pub kl_warmup_period: usize,
    pub full_kl_before_warmup: bool,
    pub embedding_noise_var: f64,
    pub sigma_init: f64,
    pub latent_dim: usize,
    pub width: usize,
    pub hidden_layers: usize,
    pub residual_layer: usize,
    pub lift_dim: usize,
    pub log_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            iterations: d.iterations,
            batch_images: d.batch_images,
            points_per_image: d.points_per_image,
            mc_samples: d.mc_samples,
            max_lr: d.max_lr,
            lr_warmup_fraction: d.lr_warmup_fraction,
            lr_div_factor: d.lr_div_factor,
            lr_final_div_factor: d.lr_final_div_factor,
            kl_warmup_start: d.kl_warmup_start,
            kl_warmup_period: d.kl_warmup_period,
            full_kl_before_warmup: d.full_kl_before_warmup,
            embedding_noise_var: d.embedding_noise_var,
            sigma_init: d.sigma_init,
            latent_dim: d.arch.latent_dim,
            width: d.arch.width,
            hidden_layers: d.arch.hidden_layers,
            residual_layer: d.arch.residual_layer,
            lift_dim: d.arch.lift_dim,
            log_every: d.log_every,
        }
    }
}

impl TrainSection {
    pub fn to_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            iterations: self.iterations,
            batch_images: self.batch_images,
            points_per_image: self.points_per_image,
            mc_samples: self.mc_samples,
            max_lr: self.max_lr,
            lr_warmup_fraction: self.lr_warmup_fraction,
            lr_div_factor: self.lr_div_factor,
            lr_final_div_factor: self.lr_final_div_factor,
            kl_warmup_start: self.kl_warmup_start,
            kl_warmup_period: self.kl_warmup_period,
            full_kl_before_warmup: self.full_kl_before_warmup,
            embedding_noise_var: self.embedding_noise_var,
            sigma_init: self.sigma_init,
            arch: VaeArch {
                latent_dim: self.latent_dim,
                width: self.width,
                hidden_layers: self.hidden_layers,
                residual_layer: self.residual_layer,
                lift_dim: self.lift_dim,
            },
            log_every: self.log_every,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSection {
    pub samples: usize,
    pub radius: f64,
    /// Zero disables downsampling of the generated points.
    pub voxel: f64,
    /// Query inspected by `retrieve`; the first query when unset.
    pub query: Option<u64>,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        let d = RetrievalConfig::default();
        RetrievalSection { samples: d.samples, radius: d.radius, voxel: d.voxel, query: None }
    }
}

impl RetrievalSection {
    pub fn to_config(&self, seed: u64) -> RetrievalConfig {
        RetrievalConfig { samples: self.samples, radius: self.radius, voxel: self.voxel, seed }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacSection {
    pub threshold: f64,
    pub max_iterations: usize,
    pub confidence: f64,
    pub min_matches: usize,
}

impl Default for RansacSection {
    fn default() -> Self {
        let d = RansacConfig::default();
        RansacSection {
            threshold: d.threshold,
            max_iterations: d.max_iterations,
            confidence: d.confidence,
            min_matches: d.min_matches,
        }
    }
}

impl RansacSection {
    pub fn to_config(&self, seed: u64) -> RansacConfig {
        RansacConfig {
            threshold: self.threshold,
            max_iterations: self.max_iterations,
            confidence: self.confidence,
            min_matches: self.min_matches,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchKind {
    Mutual,
    Ratio,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchingSection {
    pub mode: MatchKind,
    pub ratio: f64,
}

impl Default for MatchingSection {
    fn default() -> Self {
        MatchingSection { mode: MatchKind::Mutual, ratio: DEFAULT_RATIO }
    }
}

impl MatchingSection {
    pub fn to_mode(&self) -> MatchMode {
        match self.mode {
            MatchKind::Mutual => MatchMode::MutualNearest,
            MatchKind::Ratio => MatchMode::Ratio(self.ratio),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    /// Passes over the query set.
    pub repeat: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection { repeat: 1 }
    }
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| ConfigError(format!("{}: {}", path.display(), e.0)))
    }
}
