//! Batched multilayer perceptron with explicit reverse-mode gradients.

use std::fmt::Debug;
use std::iter::Sum;

use ndarray::{Array1, Array2, ArrayView2, Axis, LinalgScalar, ScalarOperand, Zip};
use num_traits::{Float, FromPrimitive};
use rand::Rng;

pub const LEAKY_SLOPE: f64 = 0.01;

/// Scalar type the networks are generic over (`f32` for training, `f64` for checks).
pub trait Real:
    Float + LinalgScalar + ScalarOperand + FromPrimitive + Default + Debug + Sum + Send + Sync + 'static
{
    fn of(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).unwrap()
    }
    fn f64(self) -> f64 {
        self.to_f64().unwrap()
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Fully connected layer `y = x W + b` with `W` stored as `(inputs, outputs)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub w: Array2<T>,
    pub b: Array1<T>,
}

impl<T: Real> Linear<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Linear {
            w: Array2::zeros((inputs, outputs)),
            b: Array1::zeros(outputs),
        }
    }

    /// Uniform fan-in initialisation in `[-1/sqrt(in), 1/sqrt(in)]`.
    pub fn random(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        Linear {
            w: Array2::from_shape_simple_fn((inputs, outputs), || T::of(rng.random_range(-bound..bound))),
            b: Array1::from_shape_simple_fn(outputs, || T::of(rng.random_range(-bound..bound))),
        }
    }

    pub fn inputs(&self) -> usize {
        self.w.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.w.ncols()
    }

    pub fn forward(&self, x: &ArrayView2<T>) -> Array2<T> {
        x.dot(&self.w) + &self.b
    }

    /// Accumulates parameter gradients into `grad` and returns the input gradient
    /// when `want_input` is set.
    pub fn backward(
        &self,
        x: &ArrayView2<T>,
        dy: &Array2<T>,
        grad: &mut Linear<T>,
        want_input: bool,
    ) -> Option<Array2<T>> {
        ndarray::linalg::general_mat_mul(T::one(), &x.t(), dy, T::one(), &mut grad.w);
        grad.b.zip_mut_with(&dy.sum_axis(Axis(0)), |a, &b| *a = *a + b);
        want_input.then(|| dy.dot(&self.w.t()))
    }
}

pub(crate) fn leaky<T: Real>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        v * T::of(LEAKY_SLOPE)
    }
}

/// Hidden stack of LeakyReLU layers with one residual projection from the
/// network input into a chosen hidden layer's pre-activation, followed by a
/// linear head.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub hidden: Vec<Linear<T>>,
    pub residual: Array2<T>,
    pub residual_layer: usize,
    pub head: Linear<T>,
}

/// Activations kept from the forward pass for backpropagation.
pub struct MlpCache<T> {
    inputs: Vec<Array2<T>>,
    pre: Vec<Array2<T>>,
    last: Array2<T>,
}

impl<T: Real> Mlp<T> {
    pub fn zeros(inputs: usize, width: usize, layers: usize, residual_layer: usize, outputs: usize) -> Self {
        Mlp {
            hidden: (0..layers)
                .map(|l| Linear::zeros(if l == 0 { inputs } else { width }, width))
                .collect(),
            residual: Array2::zeros((inputs, width)),
            residual_layer,
            head: Linear::zeros(width, outputs),
        }
    }

    pub fn random(
        inputs: usize,
        width: usize,
        layers: usize,
        residual_layer: usize,
        outputs: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let hidden = (0..layers)
            .map(|l| Linear::random(if l == 0 { inputs } else { width }, width, rng))
            .collect();
        let residual = Linear::<T>::random(inputs, width, rng).w;
        Mlp {
            hidden,
            residual,
            residual_layer,
            head: Linear::random(width, outputs, rng),
        }
    }

    pub fn inputs(&self) -> usize {
        self.residual.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.head.outputs()
    }

    pub fn zeros_like(&self) -> Self {
        Mlp {
            hidden: self.hidden.iter().map(|l| Linear::zeros(l.inputs(), l.outputs())).collect(),
            residual: Array2::zeros(self.residual.raw_dim()),
            residual_layer: self.residual_layer,
            head: Linear::zeros(self.head.inputs(), self.head.outputs()),
        }
    }

    pub fn forward(&self, x: &Array2<T>) -> Array2<T> {
        self.forward_cached(x).1
    }

    pub fn forward_cached(&self, x: &Array2<T>) -> (MlpCache<T>, Array2<T>) {
        let mut inputs = Vec::with_capacity(self.hidden.len());
        let mut pre = Vec::with_capacity(self.hidden.len());
        let mut a = x.clone();
        for (l, layer) in self.hidden.iter().enumerate() {
            let mut z = layer.forward(&a.view());
            if l == self.residual_layer {
                ndarray::linalg::general_mat_mul(T::one(), x, &self.residual, T::one(), &mut z);
            }
            let h = z.mapv(leaky);
            inputs.push(a);
            pre.push(z);
            a = h;
        }
        let out = self.head.forward(&a.view());
        (MlpCache { inputs, pre, last: a }, out)
    }

    /// Backpropagates `dout` and accumulates into `grad`. Returns the gradient
    /// with respect to the network input.
    pub fn backward(&self, cache: &MlpCache<T>, dout: &Array2<T>, grad: &mut Mlp<T>) -> Array2<T> {
        let mut dh = self
            .head
            .backward(&cache.last.view(), dout, &mut grad.head, true)
            .unwrap();
        let x = &cache.inputs[0];
        let mut dx: Option<Array2<T>> = None;
        for l in (0..self.hidden.len()).rev() {
            let slope = T::of(LEAKY_SLOPE);
            Zip::from(&mut dh).and(&cache.pre[l]).for_each(|d, &z| {
                if z <= T::zero() {
                    *d = *d * slope;
                }
            });
            if l == self.residual_layer {
                ndarray::linalg::general_mat_mul(T::one(), &x.t(), &dh, T::one(), &mut grad.residual);
                dx = Some(dh.dot(&self.residual.t()));
            }
            dh = self.hidden[l]
                .backward(&cache.inputs[l].view(), &dh, &mut grad.hidden[l], true)
                .unwrap();
        }
        match dx {
            Some(r) => dh + r,
            None => dh,
        }
    }

    /// Parameter slices in checkpoint order.
    pub fn slices(&self) -> Vec<&[T]> {
        let mut out = Vec::new();
        for l in &self.hidden {
            out.push(l.w.as_slice().unwrap());
            out.push(l.b.as_slice().unwrap());
        }
        out.push(self.residual.as_slice().unwrap());
        out.push(self.head.w.as_slice().unwrap());
        out.push(self.head.b.as_slice().unwrap());
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        for l in &mut self.hidden {
            out.push(l.w.as_slice_mut().unwrap());
            out.push(l.b.as_slice_mut().unwrap());
        }
        out.push(self.residual.as_slice_mut().unwrap());
        out.push(self.head.w.as_slice_mut().unwrap());
        out.push(self.head.b.as_slice_mut().unwrap());
        out
    }

    /// `(rows, cols)` of every parameter tensor in [`Mlp::slices`] order; biases are `(1, n)`.
    pub fn shapes(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for l in &self.hidden {
            out.push(l.w.dim());
            out.push((1, l.b.len()));
        }
        out.push(self.residual.dim());
        out.push(self.head.w.dim());
        out.push((1, self.head.b.len()));
        out
    }
}
