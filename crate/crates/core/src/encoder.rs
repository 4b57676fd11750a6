//! The pixel encoder: a multilayer perceptron with exactly two ReLU hidden
//! layers and a linear output, with hand-written backpropagation.
//!
//! The network is generic over the float type so gradients can be checked in
//! double precision against finite differences; training uses `f32`.

use std::fmt::Debug;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use num_traits::{Float, FromPrimitive};
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::tensor::Tensor;

pub trait Scalar:
    Float + FromPrimitive + ndarray::LinalgScalar + ndarray::ScalarOperand + Debug + Send + Sync + 'static
{
}
impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderDims {
    pub input: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub output: usize,
}

impl EncoderDims {
    pub fn new(input: usize, hidden1: usize, hidden2: usize, output: usize) -> Self {
        Self {
            input,
            hidden1,
            hidden2,
            output,
        }
    }
}

/// One affine layer, `weight` is `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Dense<T> {
    fn zeros(inp: usize, out: usize) -> Self {
        Self {
            weight: Array2::zeros((out, inp)),
            bias: Array1::zeros(out),
        }
    }

    fn apply(&self, x: ArrayView2<T>) -> Array2<T> {
        x.dot(&self.weight.t()) + &self.bias
    }
}

/// Encoder parameters. The gradient of a loss with respect to the parameters
/// is represented by the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<T = f32> {
    pub hidden1: Dense<T>,
    pub hidden2: Dense<T>,
    pub output: Dense<T>,
}

pub type EncoderParams = Encoder<f32>;

/// Activations kept from the forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    input: Array2<T>,
    act1: Array2<T>,
    act2: Array2<T>,
    pub output: Array2<T>,
}

fn relu<T: Scalar>(mut a: Array2<T>) -> Array2<T> {
    a.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
    a
}

impl<T: Scalar> Encoder<T> {
    pub fn zeros(dims: EncoderDims) -> Self {
        Self {
            hidden1: Dense::zeros(dims.input, dims.hidden1),
            hidden2: Dense::zeros(dims.hidden1, dims.hidden2),
            output: Dense::zeros(dims.hidden2, dims.output),
        }
    }

    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn init(dims: EncoderDims, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let mut enc = Self::zeros(dims);
        for layer in enc.layers_mut() {
            let (out, inp) = layer.weight.dim();
            let limit = (6.0 / (inp + out) as f64).sqrt();
            layer
                .weight
                .mapv_inplace(|_| T::from_f64(rng.random_range(-limit..limit)).unwrap());
        }
        enc
    }

    pub fn dims(&self) -> EncoderDims {
        EncoderDims {
            input: self.hidden1.weight.ncols(),
            hidden1: self.hidden1.weight.nrows(),
            hidden2: self.hidden2.weight.nrows(),
            output: self.output.weight.nrows(),
        }
    }

    pub fn layers(&self) -> [&Dense<T>; 3] {
        [&self.hidden1, &self.hidden2, &self.output]
    }

    pub fn layers_mut(&mut self) -> [&mut Dense<T>; 3] {
        [&mut self.hidden1, &mut self.hidden2, &mut self.output]
    }

    /// Embeds a single feature vector.
    pub fn encode(&self, x: &[T]) -> Result<Vec<T>> {
        let d = self.dims().input;
        if x.len() != d {
            return Err(Error::Shape(format!("encoder expects {d} inputs, got {}", x.len())));
        }
        let row = ArrayView2::from_shape((1, d), x).expect("length checked");
        Ok(self.encode_batch(row).into_raw_vec_and_offset().0)
    }

    /// Embeds the rows of `x` (`n x input`).
    pub fn encode_batch(&self, x: ArrayView2<T>) -> Array2<T> {
        self.forward(x).output
    }

    pub fn forward(&self, x: ArrayView2<T>) -> ForwardCache<T> {
        let act1 = relu(self.hidden1.apply(x));
        let act2 = relu(self.hidden2.apply(act1.view()));
        let output = self.output.apply(act2.view());
        ForwardCache {
            input: x.to_owned(),
            act1,
            act2,
            output,
        }
    }

    /// Parameter gradient given the loss gradient with respect to the outputs.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_output: ArrayView2<T>) -> Encoder<T> {
        let step = |weight: &Array2<T>, grad_pre: &Array2<T>, act_in: &Array2<T>| {
            let layer = Dense {
                weight: grad_pre.t().dot(act_in),
                bias: grad_pre.sum_axis(Axis(0)),
            };
            (layer, grad_pre.dot(weight))
        };

        let g3 = grad_output.to_owned();
        let (output, g_act2) = step(&self.output.weight, &g3, &cache.act2);
        let g2 = mask_relu(g_act2, &cache.act2);
        let (hidden2, g_act1) = step(&self.hidden2.weight, &g2, &cache.act1);
        let g1 = mask_relu(g_act1, &cache.act1);
        let (hidden1, _) = step(&self.hidden1.weight, &g1, &cache.input);
        Encoder {
            hidden1,
            hidden2,
            output,
        }
    }

    pub fn n_params(&self) -> usize {
        self.layers()
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// All parameters in a fixed order: per layer, weights row-major then bias.
    pub fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in self.layers() {
            out.extend(l.weight.iter().copied());
            out.extend(l.bias.iter().copied());
        }
        out
    }

    pub fn from_flat(dims: EncoderDims, flat: &[T]) -> Result<Self> {
        let mut enc = Self::zeros(dims);
        if flat.len() != enc.n_params() {
            return Err(Error::Shape(format!(
                "{} parameters for an encoder with {}",
                flat.len(),
                enc.n_params()
            )));
        }
        let mut it = flat.iter().copied();
        for l in enc.layers_mut() {
            l.weight.iter_mut().for_each(|w| *w = it.next().unwrap());
            l.bias.iter_mut().for_each(|b| *b = it.next().unwrap());
        }
        Ok(enc)
    }

    pub fn cast<U: Scalar>(&self) -> Encoder<U> {
        let conv = |v: T| U::from(v).unwrap();
        let layer = |l: &Dense<T>| Dense {
            weight: l.weight.mapv(conv),
            bias: l.bias.mapv(conv),
        };
        Encoder {
            hidden1: layer(&self.hidden1),
            hidden2: layer(&self.hidden2),
            output: layer(&self.output),
        }
    }

    /// `self += alpha * other`
    pub fn add_scaled(&mut self, alpha: T, other: &Encoder<T>) {
        for (a, b) in self.layers_mut().into_iter().zip(other.layers()) {
            a.weight.scaled_add(alpha, &b.weight);
            a.bias.scaled_add(alpha, &b.bias);
        }
    }

    pub fn scale(&mut self, alpha: T) {
        for l in self.layers_mut() {
            l.weight.mapv_inplace(|v| v * alpha);
            l.bias.mapv_inplace(|v| v * alpha);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.layers()
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }
}

fn mask_relu<T: Scalar>(mut grad: Array2<T>, act: &Array2<T>) -> Array2<T> {
    grad.zip_mut_with(act, |g, &a| {
        if a <= T::zero() {
            *g = T::zero();
        }
    });
    grad
}

impl Encoder<f32> {
    /// SHA-256 over the little-endian bytes of [`Encoder::to_flat`].
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for v in self.to_flat() {
            hasher.update(v.to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }

    /// Parameter blobs in layer order: `(name, tensor)`.
    pub fn to_tensors(&self) -> Vec<(String, Tensor)> {
        let names = ["hidden1", "hidden2", "output"];
        names
            .iter()
            .zip(self.layers())
            .flat_map(|(name, l)| {
                let (o, i) = l.weight.dim();
                [
                    (
                        format!("{name}.weight"),
                        Tensor::from_f32(vec![o, i], l.weight.iter().copied().collect())
                            .expect("non-empty layer"),
                    ),
                    (
                        format!("{name}.bias"),
                        Tensor::from_f32(vec![o], l.bias.to_vec()).expect("non-empty layer"),
                    ),
                ]
            })
            .collect()
    }

    pub fn from_tensors(dims: EncoderDims, tensors: &[(String, Tensor)]) -> Result<Self> {
        let mut flat = Vec::new();
        for (name, t) in tensors {
            let values = t
                .as_f32()
                .ok_or_else(|| Error::Validation(format!("parameter {name} must be f32")))?;
            flat.extend_from_slice(values);
        }
        let enc = Self::from_flat(dims, &flat)?;
        for ((name, t), expected) in tensors.iter().zip(enc.to_tensors()) {
            if t.shape() != expected.1.shape() {
                return Err(Error::Shape(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    expected.1.shape()
                )));
            }
        }
        if !enc.all_finite() {
            return Err(Error::Numeric("encoder parameters are not finite".into()));
        }
        Ok(enc)
    }
}
