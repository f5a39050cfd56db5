//! ELBO objective: Gaussian reconstruction likelihood with a learnable full
//! covariance, closed-form KL to the standard normal prior, and the
//! reverse-mode gradients of their batch mean.

use std::f64::consts::PI;

use nalgebra::Matrix3;
use ndarray::{s, Array2, Axis};

use super::mlp::Real;
use super::model::{LatentGaussian, Vae, LOG_VAR_MAX, LOG_VAR_MIN};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::Point3;

/// Pairs per independently processed chunk. Fixed so the gradient reduction
/// order never depends on the thread count.
pub const ELBO_CHUNK_PAIRS: usize = 128;

/// `log N(y; ŷ, L Lᵀ)` for a lower-triangular `L` with positive diagonal.
pub fn reconstruction_loglik(y: &Point3, y_hat: &Point3, chol: &Matrix3<f64>) -> Result<f64> {
    if (0..3).any(|i| !(chol[(i, i)] > 0.0)) {
        return Err(Error::InvalidArgument("Cholesky factor needs a positive diagonal".into()));
    }
    if chol[(0, 1)] != 0.0 || chol[(0, 2)] != 0.0 || chol[(1, 2)] != 0.0 {
        return Err(Error::InvalidArgument("Cholesky factor must be lower triangular".into()));
    }
    let log_det = 2.0 * (0..3).map(|i| chol[(i, i)].ln()).sum::<f64>();
    let r = y - y_hat;
    let w = chol
        .solve_lower_triangular(&r)
        .ok_or_else(|| Error::InvalidArgument("singular Cholesky factor".into()))?;
    Ok(-0.5 * (3.0 * (2.0 * PI).ln() + log_det + w.norm_squared()))
}

/// `KL(N(mean, diag(exp(log_var))) || N(0, I))`.
pub fn kl_to_standard_normal(g: &LatentGaussian) -> f64 {
    -0.5 * g
        .mean
        .iter()
        .zip(&g.log_var)
        .map(|(m, lv)| 1.0 + lv - m * m - lv.exp())
        .sum::<f64>()
}

/// One training batch. `eps` holds `samples` consecutive rows per pair.
pub struct ElboBatch<'a, T> {
    pub embeddings: &'a Array2<T>,
    pub points: &'a Array2<T>,
    pub eps: &'a Array2<T>,
    pub samples: usize,
}

#[derive(Debug, Clone)]
pub struct ElboOutput<T> {
    /// `recon + beta * kl`.
    pub loss: f64,
    /// Mean negative log-likelihood over pairs and Monte Carlo samples.
    pub recon: f64,
    /// Mean KL over pairs.
    pub kl: f64,
    pub grad: Vae<T>,
}

struct ChunkResult<T> {
    nll_sum: f64,
    kl_sum: f64,
    grad: Vae<T>,
}

/// Batch ELBO loss and its gradient with respect to every model parameter.
pub fn elbo_loss<T: Real>(model: &Vae<T>, batch: &ElboBatch<T>, beta: f64, exec: Exec) -> Result<ElboOutput<T>> {
    let pairs = batch.points.nrows();
    let m = batch.samples;
    if pairs == 0 || m == 0 {
        return Err(Error::InvalidArgument("empty ELBO batch".into()));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidArgument(format!("KL weight {beta} outside [0, 1]")));
    }
    if batch.embeddings.nrows() != pairs || batch.points.ncols() != 3 {
        return Err(Error::Shape("embedding and point rows disagree".into()));
    }
    model.check_embedding(batch.embeddings.ncols())?;
    if batch.eps.dim() != (pairs * m, model.latent_dim()) {
        return Err(Error::Shape(format!(
            "eps has shape {:?}, expected ({}, {})",
            batch.eps.dim(),
            pairs * m,
            model.latent_dim()
        )));
    }

    let starts: Vec<usize> = (0..pairs).step_by(ELBO_CHUNK_PAIRS).collect();
    let results = exec.map(&starts, |&start| {
        let end = (start + ELBO_CHUNK_PAIRS).min(pairs);
        chunk(model, batch, start, end, pairs, beta)
    });

    let mut it = results.into_iter();
    let mut acc = it.next().unwrap();
    for r in it {
        acc.nll_sum += r.nll_sum;
        acc.kl_sum += r.kl_sum;
        for (a, b) in acc.grad.slices_mut().into_iter().zip(r.grad.slices()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x = *x + *y);
        }
    }
    let recon = acc.nll_sum / (pairs * m) as f64;
    let kl = acc.kl_sum / pairs as f64;
    if !recon.is_finite() {
        return Err(Error::Divergence { term: "reconstruction", iteration: 0 });
    }
    if !kl.is_finite() {
        return Err(Error::Divergence { term: "kl", iteration: 0 });
    }
    Ok(ElboOutput {
        loss: recon + beta * kl,
        recon,
        kl,
        grad: acc.grad,
    })
}

fn chunk<T: Real>(model: &Vae<T>, batch: &ElboBatch<T>, start: usize, end: usize, pairs: usize, beta: f64) -> ChunkResult<T> {
    let m = batch.samples;
    let d = model.latent_dim();
    let de = model.embedding_dim;
    let n = end - start;
    let emb = batch.embeddings.slice(s![start..end, ..]).to_owned();
    let pts = batch.points.slice(s![start..end, ..]).to_owned();
    let eps = batch.eps.slice(s![start * m..end * m, ..]);
    let mut grad = model.zeros_like();

    // Encoder.
    let lifted_y = model.lift_point.forward(&pts.view());
    let x_enc = model.network_input(&emb, |r| r, &lifted_y);
    let (enc_cache, enc_out) = model.encoder.forward_cached(&x_enc);
    let lo = T::of(LOG_VAR_MIN);
    let hi = T::of(LOG_VAR_MAX);
    let mean = enc_out.slice(s![.., ..d]);
    let raw_lv = enc_out.slice(s![.., d..]);
    let log_var = raw_lv.mapv(|v| v.max(lo).min(hi));
    let std = log_var.mapv(|v| (v * T::of(0.5)).exp());

    // Reparameterised samples, pair-major.
    let mut z = Array2::<T>::zeros((n * m, d));
    for (r, mut row) in z.axis_iter_mut(Axis(0)).enumerate() {
        let p = r / m;
        for k in 0..d {
            row[k] = mean[[p, k]] + std[[p, k]] * eps[[r, k]];
        }
    }

    // Decoder.
    let lifted_z = model.lift_latent.forward(&z.view());
    let x_dec = model.network_input(&emb, |r| r / m, &lifted_z);
    let (dec_cache, y_hat) = model.decoder.forward_cached(&x_dec);

    // Reconstruction term and its gradients.
    let l = model.chol.matrix();
    let ld = [l[(0, 0)], l[(1, 1)], l[(2, 2)]];
    let (l10, l20, l21) = (l[(1, 0)], l[(2, 0)], l[(2, 1)]);
    let log_det = 2.0 * model.chol.log_diag.iter().map(|v| v.f64()).sum::<f64>();
    let constant = 0.5 * (3.0 * (2.0 * PI).ln() + log_det);
    let scale = 1.0 / (pairs * m) as f64;
    let mut nll_sum = 0.0;
    let mut dl = Matrix3::<f64>::zeros();
    let mut dy_hat = Array2::<T>::zeros((n * m, 3));
    for r in 0..n * m {
        let p = r / m;
        let res = [
            pts[[p, 0]].f64() - y_hat[[r, 0]].f64(),
            pts[[p, 1]].f64() - y_hat[[r, 1]].f64(),
            pts[[p, 2]].f64() - y_hat[[r, 2]].f64(),
        ];
        // w = L⁻¹ res
        let w0 = res[0] / ld[0];
        let w1 = (res[1] - l10 * w0) / ld[1];
        let w2 = (res[2] - l20 * w0 - l21 * w1) / ld[2];
        // s = L⁻ᵀ w = Σ⁻¹ res
        let s2 = w2 / ld[2];
        let s1 = (w1 - l21 * s2) / ld[1];
        let s0 = (w0 - l10 * s1 - l20 * s2) / ld[0];
        nll_sum += constant + 0.5 * (w0 * w0 + w1 * w1 + w2 * w2);
        dy_hat[[r, 0]] = T::of(-s0 * scale);
        dy_hat[[r, 1]] = T::of(-s1 * scale);
        dy_hat[[r, 2]] = T::of(-s2 * scale);
        let (sv, wv) = ([s0, s1, s2], [w0, w1, w2]);
        for i in 0..3 {
            for j in 0..=i {
                dl[(i, j)] -= sv[i] * wv[j];
            }
        }
    }
    // d(-loglik)/dL = diag(1/L_ii) - lower(s wᵀ), averaged over the batch.
    for i in 0..3 {
        let dii = (n * m) as f64 / ld[i] + dl[(i, i)];
        grad.chol.log_diag[i] = T::of(dii * ld[i] * scale);
    }
    grad.chol.lower = [T::of(dl[(1, 0)] * scale), T::of(dl[(2, 0)] * scale), T::of(dl[(2, 1)] * scale)];

    // KL term.
    let mut kl_sum = 0.0;
    for p in 0..n {
        for k in 0..d {
            let (mu, lv) = (mean[[p, k]].f64(), log_var[[p, k]].f64());
            kl_sum += -0.5 * (1.0 + lv - mu * mu - lv.exp());
        }
    }

    // Backward through the decoder and latent lift.
    let dx_dec = model.decoder.backward(&dec_cache, &dy_hat, &mut grad.decoder);
    let dlift_z = dx_dec.slice(s![.., de..]).to_owned();
    let dz = model
        .lift_latent
        .backward(&z.view(), &dlift_z, &mut grad.lift_latent, true)
        .unwrap();

    // Backward through the reparameterisation and KL into the encoder outputs.
    let kl_scale = T::of(beta / pairs as f64);
    let half = T::of(0.5);
    let mut d_enc = Array2::<T>::zeros((n, 2 * d));
    for p in 0..n {
        for k in 0..d {
            let mut dmu = T::zero();
            let mut dstd = T::zero();
            for j in 0..m {
                let r = p * m + j;
                dmu = dmu + dz[[r, k]];
                dstd = dstd + dz[[r, k]] * eps[[r, k]];
            }
            let mu = mean[[p, k]];
            let lv = log_var[[p, k]];
            d_enc[[p, k]] = dmu + kl_scale * mu;
            let in_range = raw_lv[[p, k]] >= lo && raw_lv[[p, k]] <= hi;
            if in_range {
                d_enc[[p, d + k]] = dstd * std[[p, k]] * half + kl_scale * half * (lv.exp() - T::one());
            }
        }
    }
    let dx_enc = model.encoder.backward(&enc_cache, &d_enc, &mut grad.encoder);
    let dlift_y = dx_enc.slice(s![.., de..]).to_owned();
    model.lift_point.backward(&pts.view(), &dlift_y, &mut grad.lift_point, false);

    ChunkResult { nll_sum, kl_sum, grad }
}
