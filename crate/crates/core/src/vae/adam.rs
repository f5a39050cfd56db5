use super::mlp::Real;
use super::model::Vae;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam with bias correction, operating on every parameter tensor of a [`Vae`].
#[derive(Debug, Clone)]
pub struct Adam<T> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: i32,
}

impl<T: Real> Adam<T> {
    pub fn new(model: &Vae<T>) -> Self {
        let zeros: Vec<Vec<T>> = model.slices().iter().map(|s| vec![T::zero(); s.len()]).collect();
        Adam {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step(&mut self, model: &mut Vae<T>, grad: &Vae<T>, lr: f64) {
        self.t += 1;
        let b1 = T::of(BETA1);
        let b2 = T::of(BETA2);
        let c1 = T::of(1.0 - BETA1);
        let c2 = T::of(1.0 - BETA2);
        let step = T::of(lr / (1.0 - BETA1.powi(self.t)));
        let vhat = T::of(1.0 / (1.0 - BETA2.powi(self.t)));
        let eps = T::of(EPSILON);
        for (((p, g), m), v) in model
            .slices_mut()
            .into_iter()
            .zip(grad.slices())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + c1 * g[i];
                v[i] = b2 * v[i] + c2 * g[i] * g[i];
                p[i] = p[i] - step * m[i] / ((v[i] * vhat).sqrt() + eps);
            }
        }
    }
}
