//! Feed-forward embedding network, its hand-written backward pass, and the
//! Gaussian-type kernel on embeddings.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DkajError, Result};
use crate::scalar::Scalar;

/// Rows per work unit for batched passes. Partial gradients are summed in
/// chunk order, so results do not depend on the thread count.
const ROW_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Relu => z.max(T::zero()),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    fn derivative<T: Scalar>(self, z: T, a: T) -> T {
        match self {
            Activation::Relu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => T::one() - a * a,
        }
    }
}

/// Architecture of the embedding network: `num_layers` hidden layers of
/// `hidden_units` each, then a linear map to `embed_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbeddingConfig {
    pub num_layers: usize,
    pub hidden_units: usize,
    pub embed_dim: usize,
    pub activation: Activation,
    pub seed: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            num_layers: 2,
            hidden_units: 64,
            embed_dim: 10,
            activation: Activation::Relu,
            seed: 0,
        }
    }
}

impl EmbeddingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_units == 0 && self.num_layers > 0 {
            return Err(DkajError::InvalidConfig(
                "hidden_units must be positive".into(),
            ));
        }
        if self.embed_dim == 0 {
            return Err(DkajError::InvalidConfig(
                "embed_dim must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn layer_sizes(&self, input_dim: usize) -> Vec<usize> {
        let mut sizes = vec![input_dim];
        sizes.extend(std::iter::repeat_n(self.hidden_units, self.num_layers));
        sizes.push(self.embed_dim);
        sizes
    }
}

/// Parameters of the multilayer perceptron `f(.; theta)`.
///
/// Layer `k` maps `sizes[k]` inputs to `sizes[k+1]` outputs with a row-major
/// `sizes[k+1] x sizes[k]` weight matrix. The activation is applied after
/// every layer except the last.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    sizes: Vec<usize>,
    weights: Vec<Vec<T>>,
    biases: Vec<Vec<T>>,
    activation: Activation,
}

/// Gradient with the same layout as [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrad<T> {
    pub weights: Vec<Vec<T>>,
    pub biases: Vec<Vec<T>>,
}

impl<T: Scalar> MlpGrad<T> {
    fn zeros_like(mlp: &Mlp<T>) -> Self {
        Self {
            weights: mlp
                .weights
                .iter()
                .map(|w| vec![T::zero(); w.len()])
                .collect(),
            biases: mlp
                .biases
                .iter()
                .map(|b| vec![T::zero(); b.len()])
                .collect(),
        }
    }

    fn add_assign(&mut self, other: &MlpGrad<T>) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.iter_mut().zip(b).for_each(|(x, &y)| *x += y);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            a.iter_mut().zip(b).for_each(|(x, &y)| *x += y);
        }
    }

    pub fn flat(&self) -> Vec<T> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }
}

/// Per-layer pre-activations and outputs of a batched forward pass.
pub struct ForwardCache<T> {
    rows: usize,
    pre: Vec<Vec<T>>,
    post: Vec<Vec<T>>,
}

impl<T> ForwardCache<T> {
    /// Final-layer outputs (`rows x embed_dim`).
    pub fn output(&self) -> &[T] {
        self.post.last().expect("at least the input layer")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
}

impl<T: Scalar> Mlp<T> {
    /// Uniform weights in `+-sqrt(1/fan_in)`, zero biases, reproducible from `seed`.
    pub fn init(config: &EmbeddingConfig, input_dim: usize, seed: u64) -> Self {
        let sizes = config.layer_sizes(input_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(sizes.len() - 1);
        let mut biases = Vec::with_capacity(sizes.len() - 1);
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = if fan_in > 0 {
                (1.0 / fan_in as f64).sqrt()
            } else {
                0.0
            };
            let layer = (0..fan_in * fan_out)
                .map(|_| {
                    T::of(if bound > 0.0 {
                        rng.random_range(-bound..bound)
                    } else {
                        0.0
                    })
                })
                .collect();
            weights.push(layer);
            biases.push(vec![T::zero(); fan_out]);
        }
        Self {
            sizes,
            weights,
            biases,
            activation: config.activation,
        }
    }

    pub fn from_parts(
        sizes: Vec<usize>,
        weights: Vec<Vec<T>>,
        biases: Vec<Vec<T>>,
        activation: Activation,
    ) -> Result<Self> {
        if sizes.len() < 2 || weights.len() != sizes.len() - 1 || biases.len() != weights.len() {
            return Err(DkajError::ShapeMismatch {
                expected: sizes.len().saturating_sub(1),
                got: weights.len(),
            });
        }
        for (k, w) in sizes.windows(2).enumerate() {
            if weights[k].len() != w[0] * w[1] {
                return Err(DkajError::ShapeMismatch {
                    expected: w[0] * w[1],
                    got: weights[k].len(),
                });
            }
            if biases[k].len() != w[1] {
                return Err(DkajError::ShapeMismatch {
                    expected: w[1],
                    got: biases[k].len(),
                });
            }
        }
        if weights
            .iter()
            .chain(&biases)
            .flatten()
            .any(|v| !v.is_finite())
        {
            return Err(DkajError::InvalidConfig(
                "non-finite network parameter".into(),
            ));
        }
        Ok(Self {
            sizes,
            weights,
            biases,
            activation,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn weights(&self) -> &[Vec<T>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<T>] {
        &self.biases
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn embed_dim(&self) -> usize {
        *self.sizes.last().expect("nonempty sizes")
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// Parameters flattened layer by layer (weights then biases).
    pub fn flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[T]) {
        assert_eq!(flat.len(), self.num_params());
        let mut at = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let (nw, nb) = (w.len(), b.len());
            w.copy_from_slice(&flat[at..at + nw]);
            b.copy_from_slice(&flat[at + nw..at + nw + nb]);
            at += nw + nb;
        }
    }

    /// Embedding of one feature vector.
    pub fn embed(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.input_dim() {
            return Err(DkajError::ShapeMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let mut a = x.to_vec();
        let last = self.weights.len() - 1;
        for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let fan_in = self.sizes[k];
            a = b
                .iter()
                .enumerate()
                .map(|(o, &bias)| {
                    let z = dot(&w[o * fan_in..(o + 1) * fan_in], &a) + bias;
                    if k < last {
                        self.activation.apply(z)
                    } else {
                        z
                    }
                })
                .collect();
        }
        Ok(a)
    }

    /// Embeddings of a row-major `rows x input_dim` matrix, `rows x embed_dim` out.
    pub fn embed_batch(&self, x: &[T]) -> Result<Vec<T>> {
        Ok(self.forward(x)?.post.pop().expect("output layer"))
    }

    /// Batched forward pass retaining what the backward pass needs.
    pub fn forward(&self, x: &[T]) -> Result<ForwardCache<T>> {
        let p = self.input_dim();
        if (p == 0 || !x.len().is_multiple_of(p)) && !(p == 0 && x.is_empty()) {
            return Err(DkajError::ShapeMismatch {
                expected: p,
                got: x.len(),
            });
        }
        let rows = x.len().checked_div(p).unwrap_or(0);
        let last = self.weights.len() - 1;
        let mut pre = Vec::with_capacity(self.weights.len());
        let mut post = vec![x.to_vec()];
        for k in 0..self.weights.len() {
            let (fan_in, fan_out) = (self.sizes[k], self.sizes[k + 1]);
            let input = &post[k];
            let w = &self.weights[k];
            let b = &self.biases[k];
            let mut z = vec![T::zero(); rows * fan_out];
            z.par_chunks_mut(fan_out * ROW_CHUNK)
                .enumerate()
                .for_each(|(c, out)| {
                    for (r, zrow) in out.chunks_mut(fan_out).enumerate() {
                        let row = c * ROW_CHUNK + r;
                        let a_in = &input[row * fan_in..(row + 1) * fan_in];
                        for (o, zo) in zrow.iter_mut().enumerate() {
                            *zo = dot(&w[o * fan_in..(o + 1) * fan_in], a_in) + b[o];
                        }
                    }
                });
            let a = if k < last {
                z.iter().map(|&v| self.activation.apply(v)).collect()
            } else {
                z.clone()
            };
            pre.push(z);
            post.push(a);
        }
        Ok(ForwardCache { rows, pre, post })
    }

    /// Gradient of a loss with respect to the parameters, given the loss
    /// gradient with respect to the batch outputs (`rows x embed_dim`).
    pub fn backward(&self, cache: &ForwardCache<T>, grad_out: &[T]) -> MlpGrad<T> {
        let rows = cache.rows;
        let n_chunks = rows.div_ceil(ROW_CHUNK);
        let partials: Vec<MlpGrad<T>> = (0..n_chunks)
            .into_par_iter()
            .map(|c| {
                let start = c * ROW_CHUNK;
                let end = (start + ROW_CHUNK).min(rows);
                self.backward_rows(cache, grad_out, start, end)
            })
            .collect();
        let mut total = MlpGrad::zeros_like(self);
        for p in &partials {
            total.add_assign(p);
        }
        total
    }

    fn backward_rows(
        &self,
        cache: &ForwardCache<T>,
        grad_out: &[T],
        start: usize,
        end: usize,
    ) -> MlpGrad<T> {
        let mut grad = MlpGrad::zeros_like(self);
        let n_layers = self.weights.len();
        let d = self.embed_dim();
        for row in start..end {
            let mut delta: Vec<T> = grad_out[row * d..(row + 1) * d].to_vec();
            for k in (0..n_layers).rev() {
                let (fan_in, fan_out) = (self.sizes[k], self.sizes[k + 1]);
                if k < n_layers - 1 {
                    let z = &cache.pre[k][row * fan_out..(row + 1) * fan_out];
                    let a = &cache.post[k + 1][row * fan_out..(row + 1) * fan_out];
                    for o in 0..fan_out {
                        delta[o] *= self.activation.derivative(z[o], a[o]);
                    }
                }
                let a_in = &cache.post[k][row * fan_in..(row + 1) * fan_in];
                let gw = &mut grad.weights[k];
                for o in 0..fan_out {
                    let g = delta[o];
                    if g != T::zero() {
                        let gw_row = &mut gw[o * fan_in..(o + 1) * fan_in];
                        for (gwi, &ai) in gw_row.iter_mut().zip(a_in) {
                            *gwi += g * ai;
                        }
                    }
                    grad.biases[k][o] += g;
                }
                if k > 0 {
                    let w = &self.weights[k];
                    let mut next = vec![T::zero(); fan_in];
                    for o in 0..fan_out {
                        let g = delta[o];
                        if g != T::zero() {
                            for (ni, &wi) in next.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                                *ni += g * wi;
                            }
                        }
                    }
                    delta = next;
                }
            }
        }
        grad
    }
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

#[inline]
pub(crate) fn squared_distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| {
        let diff = x - y;
        acc + diff * diff
    })
}

/// `K(e1, e2) = exp(-||e1 - e2||^2)`.
pub fn kernel<T: Scalar>(e1: &[T], e2: &[T]) -> Result<T> {
    if e1.len() != e2.len() {
        return Err(DkajError::ShapeMismatch {
            expected: e1.len(),
            got: e2.len(),
        });
    }
    Ok((-squared_distance(e1, e2)).exp())
}

/// Distance radius whose kernel weight equals `min_weight`: `sqrt(-ln w)`.
/// A weight of zero yields an unbounded radius.
pub fn tau_from_min_kernel_weight(min_weight: f64) -> f64 {
    if min_weight <= 0.0 {
        f64::INFINITY
    } else {
        (-min_weight.ln()).max(0.0).sqrt()
    }
}
