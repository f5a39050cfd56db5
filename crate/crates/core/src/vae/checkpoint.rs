//! Model checkpoint (`VSTM`, version 1, little-endian).
//!
//! ```text
//! header   "VSTM" u32 version u32 latent_dim u32 embedding_dim
//!          u32 lift_dim u32 width u32 hidden_layers u32 residual_layer
//! shapes   u32 tensor count, then u32 rows u32 cols per tensor
//! blob     f32 parameters in shape-table order
//! norm     f64 scale, 3 x f64 offset
//! config   u64 iterations u32 batch_images u32 points_per_image u32 mc_samples
//!          f64 max_lr f64 lr_warmup_fraction f64 lr_div_factor f64 lr_final_div_factor
//!          u64 kl_warmup_start u64 kl_warmup_period u8 full_kl_before_warmup
//!          f64 embedding_noise_var f64 sigma_init u32 log_every u64 seed
//! ```

use std::fs;
use std::path::Path;

use nalgebra::Vector3;

use super::model::{VaeArch, VaeModel};
use super::train::TrainConfig;
use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::scene::NormTransform;

pub const MODEL_MAGIC: &[u8; 4] = b"VSTM";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: VaeModel,
    pub config: TrainConfig,
}

pub fn checkpoint_to_bytes(model: &VaeModel, config: &TrainConfig) -> Vec<u8> {
    let mut w = Writer::new();
    w.raw(MODEL_MAGIC);
    w.u32(MODEL_VERSION);
    let a = model.arch;
    for v in [a.latent_dim, model.embedding_dim, a.lift_dim, a.width, a.hidden_layers, a.residual_layer] {
        w.u32(v as u32);
    }
    let shapes = model.shapes();
    w.u32(shapes.len() as u32);
    for (r, c) in &shapes {
        w.u32(*r as u32);
        w.u32(*c as u32);
    }
    for s in model.slices() {
        w.f32s(s);
    }
    w.f64(model.norm.scale);
    w.f64s(model.norm.offset.as_slice());

    w.u64(config.iterations as u64);
    w.u32(config.batch_images as u32);
    w.u32(config.points_per_image as u32);
    w.u32(config.mc_samples as u32);
    w.f64s(&[config.max_lr, config.lr_warmup_fraction, config.lr_div_factor, config.lr_final_div_factor]);
    w.u64(config.kl_warmup_start as u64);
    w.u64(config.kl_warmup_period as u64);
    w.u8(config.full_kl_before_warmup as u8);
    w.f64(config.embedding_noise_var);
    w.f64(config.sigma_init);
    w.u32(config.log_every as u32);
    w.u64(config.seed);
    w.buf
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes, "model checkpoint");
    r.expect_magic(MODEL_MAGIC)?;
    r.expect_version(MODEL_VERSION)?;
    let mut dims = [0usize; 6];
    for d in &mut dims {
        *d = r.u32()? as usize;
    }
    let [latent_dim, embedding_dim, lift_dim, width, hidden_layers, residual_layer] = dims;
    let arch = VaeArch { latent_dim, width, hidden_layers, residual_layer, lift_dim };
    arch.validate().map_err(|e| Error::Format(e.to_string()))?;
    if embedding_dim == 0 {
        return Err(Error::Format("zero embedding dimension".into()));
    }
    let mut model = VaeModel::zeros(arch, embedding_dim, NormTransform::identity());
    let expected = model.shapes();
    let n = r.u32()? as usize;
    if n != expected.len() {
        return Err(Error::Format(format!("shape table has {n} tensors, expected {}", expected.len())));
    }
    for (i, want) in expected.iter().enumerate() {
        let got = (r.u32()? as usize, r.u32()? as usize);
        if got != *want {
            return Err(Error::Format(format!("tensor {i} has shape {got:?}, expected {want:?}")));
        }
    }
    for s in model.slices_mut() {
        let v = r.f32_vec(s.len())?;
        s.copy_from_slice(&v);
    }
    if !model.is_finite() {
        return Err(Error::Data("checkpoint contains non-finite parameters".into()));
    }
    let scale = r.f64()?;
    let offset = Vector3::from(r.f64s::<3>()?);
    model.norm = NormTransform { scale, offset };
    model.norm.validate()?;

    let iterations = r.u64()? as usize;
    let batch_images = r.u32()? as usize;
    let points_per_image = r.u32()? as usize;
    let mc_samples = r.u32()? as usize;
    let [max_lr, lr_warmup_fraction, lr_div_factor, lr_final_div_factor] = r.f64s::<4>()?;
    let kl_warmup_start = r.u64()? as usize;
    let kl_warmup_period = r.u64()? as usize;
    let full_kl_before_warmup = r.u8()? != 0;
    let embedding_noise_var = r.f64()?;
    let sigma_init = r.f64()?;
    let log_every = r.u32()? as usize;
    let seed = r.u64()?;
    r.finish()?;
    Ok(Checkpoint {
        model,
        config: TrainConfig {
            iterations,
            batch_images,
            points_per_image,
            mc_samples,
            max_lr,
            lr_warmup_fraction,
            lr_div_factor,
            lr_final_div_factor,
            kl_warmup_start,
            kl_warmup_period,
            full_kl_before_warmup,
            embedding_noise_var,
            sigma_init,
            arch,
            log_every,
            seed,
        },
    })
}

pub fn save_model(model: &VaeModel, config: &TrainConfig, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, checkpoint_to_bytes(model, config))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    checkpoint_from_bytes(&fs::read(path)?)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<VaeModel> {
    Ok(load_checkpoint(path)?.model)
}

/// Loads a model and checks it accepts embeddings of the given dimension.
pub fn load_model_for(path: impl AsRef<Path>, embedding_dim: usize) -> Result<VaeModel> {
    let model = load_model(path)?;
    model.check_embedding(embedding_dim)?;
    Ok(model)
}

/// Size in bytes of the checkpoint for a model of this architecture.
pub fn checkpoint_size(model: &VaeModel) -> usize {
    let header = 4 + 4 * 7;
    let shapes = 4 + 8 * model.shapes().len();
    let norm = 32;
    let config = 8 + 12 + 32 + 16 + 1 + 16 + 4 + 8;
    header + shapes + 4 * model.parameter_count() + norm + config
}
