use nalgebra::{Matrix3, Vector3};
use ndarray::{s, Array2};
use rand::Rng;

use super::mlp::{Linear, Mlp, Real};
use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::scene::NormTransform;

pub const LOG_VAR_MIN: f64 = -20.0;
pub const LOG_VAR_MAX: f64 = 20.0;

/// Network dimensions shared by the encoder and decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VaeArch {
    pub latent_dim: usize,
    pub width: usize,
    pub hidden_layers: usize,
    /// Zero-based hidden layer receiving the residual projection of the input.
    pub residual_layer: usize,
    /// Width of the learned lift applied to points and latents.
    pub lift_dim: usize,
}

impl Default for VaeArch {
    fn default() -> Self {
        VaeArch {
            latent_dim: 4,
            width: 512,
            hidden_layers: 5,
            residual_layer: 2,
            lift_dim: 64,
        }
    }
}

impl VaeArch {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.width == 0 || self.hidden_layers == 0 || self.lift_dim == 0 {
            return Err(Error::InvalidArgument(format!("architecture dims must be positive: {self:?}")));
        }
        if self.residual_layer >= self.hidden_layers {
            return Err(Error::InvalidArgument(format!(
                "residual layer {} out of range for {} hidden layers",
                self.residual_layer, self.hidden_layers
            )));
        }
        Ok(())
    }
}

/// Lower-triangular Cholesky factor of the 3x3 reconstruction covariance.
///
/// The diagonal is stored as logarithms, so `L` always has a positive
/// diagonal and `L Lᵀ` is positive definite by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CholeskyFactor<T> {
    /// `ln L00, ln L11, ln L22`.
    pub log_diag: [T; 3],
    /// `L10, L20, L21`.
    pub lower: [T; 3],
}

impl<T: Real> CholeskyFactor<T> {
    /// Factor of `variance * I`.
    pub fn isotropic(variance: f64) -> Self {
        let l = T::of(0.5 * variance.ln());
        CholeskyFactor {
            log_diag: [l; 3],
            lower: [T::zero(); 3],
        }
    }

    pub fn zeros() -> Self {
        CholeskyFactor {
            log_diag: [T::zero(); 3],
            lower: [T::zero(); 3],
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        let d = self.log_diag.map(|v| v.f64().exp());
        let [l10, l20, l21] = self.lower.map(|v| v.f64());
        Matrix3::new(d[0], 0.0, 0.0, l10, d[1], 0.0, l20, l21, d[2])
    }

    pub fn covariance(&self) -> Matrix3<f64> {
        let l = self.matrix();
        l * l.transpose()
    }
}

/// A single input's diagonal Gaussian posterior over the latent.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGaussian {
    pub mean: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl LatentGaussian {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Conditional VAE over structure points.
///
/// Both networks consume `[embedding ‖ lift(·)]`: the encoder lifts a
/// normalised point, the decoder lifts a latent sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Vae<T> {
    pub arch: VaeArch,
    pub embedding_dim: usize,
    pub lift_point: Linear<T>,
    pub lift_latent: Linear<T>,
    pub encoder: Mlp<T>,
    pub decoder: Mlp<T>,
    pub chol: CholeskyFactor<T>,
    pub norm: NormTransform,
}

/// The stored model type.
pub type VaeModel = Vae<f32>;

impl<T: Real> Vae<T> {
    pub fn random(arch: VaeArch, embedding_dim: usize, norm: NormTransform, sigma_init: f64, rng: &mut impl Rng) -> Self {
        let input = embedding_dim + arch.lift_dim;
        Vae {
            arch,
            embedding_dim,
            lift_point: Linear::random(3, arch.lift_dim, rng),
            lift_latent: Linear::random(arch.latent_dim, arch.lift_dim, rng),
            encoder: Mlp::random(input, arch.width, arch.hidden_layers, arch.residual_layer, 2 * arch.latent_dim, rng),
            decoder: Mlp::random(input, arch.width, arch.hidden_layers, arch.residual_layer, 3, rng),
            chol: CholeskyFactor::isotropic(sigma_init),
            norm,
        }
    }

    /// Model with every weight and bias zero and `Σ = I`.
    pub fn zeros(arch: VaeArch, embedding_dim: usize, norm: NormTransform) -> Self {
        let input = embedding_dim + arch.lift_dim;
        Vae {
            arch,
            embedding_dim,
            lift_point: Linear::zeros(3, arch.lift_dim),
            lift_latent: Linear::zeros(arch.latent_dim, arch.lift_dim),
            encoder: Mlp::zeros(input, arch.width, arch.hidden_layers, arch.residual_layer, 2 * arch.latent_dim),
            decoder: Mlp::zeros(input, arch.width, arch.hidden_layers, arch.residual_layer, 3),
            chol: CholeskyFactor::zeros(),
            norm,
        }
    }

    /// Zero-valued container with this model's shapes, used for gradients.
    pub fn zeros_like(&self) -> Self {
        let mut z = Vae::zeros(self.arch, self.embedding_dim, self.norm);
        z.chol = CholeskyFactor { log_diag: [T::zero(); 3], lower: [T::zero(); 3] };
        z
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    /// Parameter slices in checkpoint order.
    pub fn slices(&self) -> Vec<&[T]> {
        let mut out = vec![
            self.lift_point.w.as_slice().unwrap(),
            self.lift_point.b.as_slice().unwrap(),
            self.lift_latent.w.as_slice().unwrap(),
            self.lift_latent.b.as_slice().unwrap(),
        ];
        out.extend(self.encoder.slices());
        out.extend(self.decoder.slices());
        out.push(&self.chol.log_diag);
        out.push(&self.chol.lower);
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = vec![
            self.lift_point.w.as_slice_mut().unwrap(),
            self.lift_point.b.as_slice_mut().unwrap(),
            self.lift_latent.w.as_slice_mut().unwrap(),
            self.lift_latent.b.as_slice_mut().unwrap(),
        ];
        out.extend(self.encoder.slices_mut());
        out.extend(self.decoder.slices_mut());
        out.push(&mut self.chol.log_diag);
        out.push(&mut self.chol.lower);
        out
    }

    /// `(rows, cols)` of every tensor in [`Vae::slices`] order.
    pub fn shapes(&self) -> Vec<(usize, usize)> {
        let mut out = vec![
            self.lift_point.w.dim(),
            (1, self.lift_point.b.len()),
            self.lift_latent.w.dim(),
            (1, self.lift_latent.b.len()),
        ];
        out.extend(self.encoder.shapes());
        out.extend(self.decoder.shapes());
        out.push((1, 3));
        out.push((1, 3));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    pub fn cast<U: Real>(&self) -> Vae<U> {
        let mut out = Vae::<U>::zeros(self.arch, self.embedding_dim, self.norm);
        for (dst, src) in out.slices_mut().into_iter().zip(self.slices()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = U::of(s.f64());
            }
        }
        out
    }

    pub(crate) fn check_embedding(&self, len: usize) -> Result<()> {
        if len != self.embedding_dim {
            return Err(Error::Shape(format!(
                "embedding has {len} values, model expects {}",
                self.embedding_dim
            )));
        }
        Ok(())
    }

    /// Builds `[embedding rows ‖ lift(values)]` where row `r` uses embedding row `emb_row(r)`.
    pub(crate) fn network_input(
        &self,
        embeddings: &Array2<T>,
        emb_row: impl Fn(usize) -> usize,
        lifted: &Array2<T>,
    ) -> Array2<T> {
        let rows = lifted.nrows();
        let de = self.embedding_dim;
        let mut x = Array2::zeros((rows, de + self.arch.lift_dim));
        for r in 0..rows {
            x.slice_mut(s![r, ..de]).assign(&embeddings.row(emb_row(r)));
        }
        x.slice_mut(s![.., de..]).assign(lifted);
        x
    }

    /// Batched encoder: returns `(mean, clamped log-variance)` rows.
    pub fn encode_batch(&self, embeddings: &Array2<T>, points: &Array2<T>) -> (Array2<T>, Array2<T>) {
        let lifted = self.lift_point.forward(&points.view());
        let x = self.network_input(embeddings, |r| r, &lifted);
        let out = self.encoder.forward(&x);
        let d = self.latent_dim();
        let mean = out.slice(s![.., ..d]).to_owned();
        let log_var = out
            .slice(s![.., d..])
            .mapv(|v| v.max(T::of(LOG_VAR_MIN)).min(T::of(LOG_VAR_MAX)));
        (mean, log_var)
    }

    /// Decodes every latent row with one shared embedding; outputs normalised points.
    pub fn decode_shared(&self, embedding: &[T], latents: &Array2<T>) -> Array2<T> {
        let emb = Array2::from_shape_vec((1, embedding.len()), embedding.to_vec()).unwrap();
        let lifted = self.lift_latent.forward(&latents.view());
        let x = self.network_input(&emb, |_| 0, &lifted);
        self.decoder.forward(&x)
    }

    pub fn encode(&self, embedding: &[f32], y: &Point3) -> Result<LatentGaussian> {
        self.check_embedding(embedding.len())?;
        if y.iter().any(|v| !(0.0..=1.0).contains(v)) {
            log::warn!("encoding point {y:?} outside the unit cube");
        }
        let emb = Array2::from_shape_fn((1, embedding.len()), |(_, j)| T::of(embedding[j] as f64));
        let pt = Array2::from_shape_fn((1, 3), |(_, j)| T::of(y[j]));
        let (mean, log_var) = self.encode_batch(&emb, &pt);
        Ok(LatentGaussian {
            mean: mean.iter().map(|v| v.f64()).collect(),
            log_var: log_var.iter().map(|v| v.f64()).collect(),
        })
    }

    /// Decodes one latent into a normalised-space point.
    pub fn decode(&self, embedding: &[f32], z: &[f64]) -> Result<Point3> {
        self.check_embedding(embedding.len())?;
        if z.len() != self.latent_dim() {
            return Err(Error::Shape(format!(
                "latent has {} values, model expects {}",
                z.len(),
                self.latent_dim()
            )));
        }
        let emb: Vec<T> = embedding.iter().map(|&v| T::of(v as f64)).collect();
        let lat = Array2::from_shape_fn((1, z.len()), |(_, j)| T::of(z[j]));
        let out = self.decode_shared(&emb, &lat);
        Ok(Vector3::new(out[[0, 0]].f64(), out[[0, 1]].f64(), out[[0, 2]].f64()))
    }
}

/// `z = mean + exp(log_var / 2) * eps`.
pub fn reparameterise(g: &LatentGaussian, eps: &[f64]) -> Result<Vec<f64>> {
    if eps.len() != g.dim() || g.log_var.len() != g.dim() {
        return Err(Error::Shape(format!("eps has {} values, latent has {}", eps.len(), g.dim())));
    }
    Ok(g.mean
        .iter()
        .zip(&g.log_var)
        .zip(eps)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect())
}

pub fn encode(model: &VaeModel, embedding: &[f32], y: &Point3) -> Result<LatentGaussian> {
    model.encode(embedding, y)
}

pub fn decode(model: &VaeModel, embedding: &[f32], z: &[f64]) -> Result<Point3> {
    model.decode(embedding, z)
}
