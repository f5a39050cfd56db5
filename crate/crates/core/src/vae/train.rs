//! Training loop: batch sampling, embedding augmentation, ELBO, Adam.

use std::fmt;

use ndarray::Array2;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::adam::Adam;
use super::loss::{elbo_loss, ElboBatch};
use super::model::{VaeArch, VaeModel};
use super::schedule::{kl_weight_schedule, lr_schedule};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::Point3;
use crate::scene::{build_training_pairs, SceneBundle};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
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
    /// Use a KL weight of 1 instead of 0 before the warm-up starts.
    pub full_kl_before_warmup: bool,
    /// Variance of the Gaussian noise added to training embeddings.
    pub embedding_noise_var: f64,
    /// Initial diagonal of the reconstruction covariance.
    pub sigma_init: f64,
    pub arch: VaeArch,
    pub log_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 100_000,
            batch_images: 128,
            points_per_image: 50,
            mc_samples: 50,
            max_lr: 0.001,
            lr_warmup_fraction: 0.3,
            lr_div_factor: 25.0,
            lr_final_div_factor: 1e4,
            kl_warmup_start: 20_000,
            kl_warmup_period: 2_000,
            full_kl_before_warmup: false,
            embedding_noise_var: 1.0,
            sigma_init: 0.1,
            arch: VaeArch::default(),
            log_every: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Single-core preset: 20k iterations of a width-64 model on small batches,
    /// KL warm-up starting at a fifth of the run.
    pub fn desk() -> Self {
        TrainConfig {
            iterations: 20_000,
            batch_images: 16,
            points_per_image: 8,
            mc_samples: 2,
            kl_warmup_start: 4_000,
            arch: VaeArch { width: 64, lift_dim: 16, ..VaeArch::default() },
            log_every: 100,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = self.iterations > 0
            && self.batch_images > 0
            && self.points_per_image > 0
            && self.mc_samples >= 1
            && self.max_lr > 0.0
            && self.lr_div_factor > 0.0
            && self.lr_final_div_factor > 0.0
            && self.kl_warmup_period >= 2
            && self.sigma_init > 0.0
            && self.embedding_noise_var >= 0.0
            && self.log_every > 0
            && (0.0..1.0).contains(&self.lr_warmup_fraction);
        if !positive {
            return Err(Error::InvalidArgument(format!("invalid training config {self:?}")));
        }
        self.arch.validate()
    }
}

/// Window-averaged training statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRecord {
    pub iter: usize,
    pub loss: f64,
    pub recon: f64,
    pub kl: f64,
    pub beta: f64,
    pub lr: f64,
}

impl fmt::Display for LogRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}, {:.6}, {:.6}, {:.6}, {:.4}, {:.6e}",
            self.iter, self.loss, self.recon, self.kl, self.beta, self.lr
        )
    }
}

pub fn format_training_log(log: &[LogRecord]) -> String {
    let mut s = String::from("# iter, loss, recon, kl, beta, lr\n");
    for r in log {
        s.push_str(&r.to_string());
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub model: VaeModel,
    pub log: Vec<LogRecord>,
}

/// Training stopped early; carries the parameters from before the failing step.
#[derive(Debug)]
pub struct TrainAbort {
    pub error: Error,
    pub last_good: Box<VaeModel>,
    pub log: Vec<LogRecord>,
}

impl fmt::Display for TrainAbort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "training aborted: {}", self.error)
    }
}

impl std::error::Error for TrainAbort {}

/// Per-image lists of normalised visible points.
struct Dataset {
    by_image: Vec<Vec<Point3>>,
    embeddings: Vec<Vec<f32>>,
}

impl Dataset {
    fn new(bundle: &SceneBundle, seed: u64) -> Self {
        let mut by_image = vec![Vec::new(); bundle.images().len()];
        for pair in build_training_pairs(bundle, seed) {
            by_image[pair.image].push(pair.point);
        }
        Dataset {
            by_image,
            embeddings: bundle.images().iter().map(|im| im.embedding.clone()).collect(),
        }
    }
}

/// Stateful trainer; [`train`] drives it for the configured number of iterations.
pub struct Trainer {
    cfg: TrainConfig,
    data: Dataset,
    model: VaeModel,
    adam: Adam<f32>,
    rng: ChaCha8Rng,
    exec: Exec,
    iter: usize,
}

impl Trainer {
    pub fn new(bundle: &SceneBundle, cfg: TrainConfig, exec: Exec) -> Result<Self> {
        cfg.validate()?;
        if bundle.images().is_empty() {
            return Err(Error::InvalidArgument("bundle has no mapping images".into()));
        }
        let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9E37_79B9_7F4A_7C15);
        let model = VaeModel::random(cfg.arch, bundle.embedding_dim(), *bundle.norm(), cfg.sigma_init, &mut init_rng);
        Ok(Trainer {
            data: Dataset::new(bundle, cfg.seed),
            adam: Adam::new(&model),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            model,
            cfg,
            exec,
            iter: 0,
        })
    }

    pub fn model(&self) -> &VaeModel {
        &self.model
    }

    pub fn iteration(&self) -> usize {
        self.iter
    }

    fn sample_batch(&mut self) -> (Array2<f32>, Array2<f32>, Array2<f32>) {
        let cfg = &self.cfg;
        let (b, k, m) = (cfg.batch_images, cfg.points_per_image, cfg.mc_samples);
        let de = self.model.embedding_dim;
        let pairs = b * k;
        let noise = Normal::new(0.0, cfg.embedding_noise_var.sqrt()).unwrap();
        let mut emb = Array2::<f32>::zeros((pairs, de));
        let mut pts = Array2::<f32>::zeros((pairs, 3));
        let mut row = 0;
        for _ in 0..b {
            let img = self.rng.random_range(0..self.data.by_image.len());
            let seen = &self.data.by_image[img];
            let picks: Vec<usize> = if seen.len() >= k {
                index::sample(&mut self.rng, seen.len(), k).into_vec()
            } else {
                (0..k).map(|_| self.rng.random_range(0..seen.len())).collect()
            };
            let noisy: Vec<f32> = self.data.embeddings[img]
                .iter()
                .map(|&v| v + noise.sample(&mut self.rng) as f32)
                .collect();
            for p in picks {
                for j in 0..de {
                    emb[[row, j]] = noisy[j];
                }
                for j in 0..3 {
                    pts[[row, j]] = seen[p][j] as f32;
                }
                row += 1;
            }
        }
        let d = self.model.latent_dim();
        let eps = Array2::from_shape_simple_fn((pairs * m, d), || StandardNormal.sample(&mut self.rng));
        (emb, pts, eps)
    }

    /// Runs one optimisation step and returns `(loss, recon, kl, beta, lr)`.
    pub fn step(&mut self) -> Result<(f64, f64, f64, f64, f64)> {
        let beta = kl_weight_schedule(self.iter, &self.cfg);
        let lr = lr_schedule(self.iter, &self.cfg);
        let (emb, pts, eps) = self.sample_batch();
        let batch = ElboBatch {
            embeddings: &emb,
            points: &pts,
            eps: &eps,
            samples: self.cfg.mc_samples,
        };
        let out = elbo_loss(&self.model, &batch, beta, self.exec).map_err(|e| match e {
            Error::Divergence { term, .. } => Error::Divergence { term, iteration: self.iter },
            other => other,
        })?;
        self.adam.step(&mut self.model, &out.grad, lr);
        self.iter += 1;
        Ok((out.loss, out.recon, out.kl, beta, lr))
    }
}

/// Trains a scene model for `cfg.iterations` steps. Deterministic for a fixed
/// seed and execution policy.
pub fn train(bundle: &SceneBundle, cfg: &TrainConfig, exec: Exec) -> std::result::Result<Trained, TrainAbort> {
    let abort = |error, model: VaeModel, log| TrainAbort { error, last_good: Box::new(model), log };
    let mut trainer = match Trainer::new(bundle, cfg.clone(), exec) {
        Ok(t) => t,
        Err(e) => {
            let model = VaeModel::zeros(cfg.arch, bundle.embedding_dim(), *bundle.norm());
            return Err(abort(e, model, Vec::new()));
        }
    };
    let mut log = Vec::with_capacity(cfg.iterations / cfg.log_every + 1);
    let mut window = [0.0f64; 3];
    let mut count = 0usize;
    for it in 0..cfg.iterations {
        let before = trainer.model.clone();
        let (loss, recon, kl, beta, lr) = match trainer.step() {
            Ok(v) => v,
            Err(e) => return Err(abort(e, before, log)),
        };
        if !trainer.model.is_finite() {
            let e = Error::Divergence { term: "parameters", iteration: it };
            return Err(abort(e, before, log));
        }
        window[0] += loss;
        window[1] += recon;
        window[2] += kl;
        count += 1;
        if (it + 1) % cfg.log_every == 0 || it + 1 == cfg.iterations {
            let n = count as f64;
            let rec = LogRecord {
                iter: it + 1,
                loss: window[0] / n,
                recon: window[1] / n,
                kl: window[2] / n,
                beta,
                lr,
            };
            log::debug!("{rec}");
            log.push(rec);
            window = [0.0; 3];
            count = 0;
        }
    }
    Ok(Trained { model: trainer.model, log })
}
