//! Scene-specific conditional VAE with hand-written backpropagation.

mod adam;
mod checkpoint;
mod loss;
pub mod mlp;
mod model;
mod schedule;
mod train;

pub use adam::Adam;
pub use checkpoint::{
    checkpoint_from_bytes, checkpoint_size, checkpoint_to_bytes, load_checkpoint, load_model, load_model_for,
    save_model, Checkpoint, MODEL_MAGIC, MODEL_VERSION,
};
pub use loss::{elbo_loss, kl_to_standard_normal, reconstruction_loglik, ElboBatch, ElboOutput};
pub use mlp::{Linear, Mlp, Real};
pub use model::{decode, encode, reparameterise, CholeskyFactor, LatentGaussian, Vae, VaeArch, VaeModel};
pub use schedule::{kl_weight_schedule, lr_peak_iteration, lr_schedule};
pub use train::{format_training_log, train, LogRecord, TrainAbort, TrainConfig, Trained, Trainer};
