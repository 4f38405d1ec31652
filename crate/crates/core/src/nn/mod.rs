//! Dense feed-forward networks with exact backpropagation.
//!
//! Parameters live in one flat vector. Layer `k` stores its weight matrix
//! row-major as `fan_out × fan_in`, followed by `fan_out` biases, so the total
//! count is `Σ (fan_in + 1)·fan_out`.

mod io;
mod optim;

pub use io::{MlpMetadata, MLP_FORMAT_VERSION};
pub use optim::{clip_grad_norm, AdamW};

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::seeded;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("architecture mismatch between networks")]
    ArchitectureMismatch,
    #[error("non-finite gradient entry at index {index}")]
    NonFiniteGradient { index: usize },
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("soft-update rate {0} outside (0, 1]")]
    InvalidTau(f64),
}

/// Per-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
    /// Softmax applied independently to consecutive groups of this many units.
    SoftmaxGroups(usize),
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Identity => {}
            Activation::Tanh => z.mapv_inplace(f64::tanh),
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Activation::SoftmaxGroups(k) => {
                for mut row in z.rows_mut() {
                    for group in row.as_slice_mut().expect("contiguous row").chunks_mut(k) {
                        let max = group.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let mut sum = 0.0;
                        for v in group.iter_mut() {
                            *v = (*v - max).exp();
                            sum += *v;
                        }
                        for v in group.iter_mut() {
                            *v /= sum;
                        }
                    }
                }
            }
        }
    }

    /// Turns `g = ∂L/∂y` into `∂L/∂z` in place, given the activation output `y`.
    fn backprop(self, y: &Array2<f64>, g: &mut Array2<f64>) {
        match self {
            Activation::Identity => {}
            Activation::Tanh => g.zip_mut_with(y, |g, &y| *g *= 1.0 - y * y),
            Activation::Relu => g.zip_mut_with(y, |g, &y| {
                if y <= 0.0 {
                    *g = 0.0
                }
            }),
            Activation::SoftmaxGroups(k) => {
                for (mut grow, yrow) in g.rows_mut().into_iter().zip(y.rows()) {
                    let gs = grow.as_slice_mut().expect("contiguous row");
                    let ys = yrow.as_slice().expect("contiguous row");
                    for (gg, yg) in gs.chunks_mut(k).zip(ys.chunks(k)) {
                        let dot: f64 = gg.iter().zip(yg).map(|(a, b)| a * b).sum();
                        for (a, &b) in gg.iter_mut().zip(yg) {
                            *a = b * (*a - dot);
                        }
                    }
                }
            }
        }
    }
}

/// Activations of every layer for a batch; `layers[0]` is the input.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub layers: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.layers.last().expect("cache holds at least the input")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    activations: Vec<Activation>,
    params: Vec<f64>,
    seed: u64,
}

impl Mlp {
    /// Glorot-uniform weights (±√(6/(fan_in+fan_out))), zero biases.
    pub fn new(layer_sizes: &[usize], activations: &[Activation], seed: u64) -> Result<Self, NnError> {
        Self::check_architecture(layer_sizes, activations)?;
        let mut rng = seeded(seed, 0);
        let mut params = Vec::with_capacity(Self::param_count_for(layer_sizes));
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            params.extend((0..fan_in * fan_out).map(|_| rng.random_range(-limit..=limit)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            activations: activations.to_vec(),
            params,
            seed,
        })
    }

    /// Hidden layers share `hidden_act`; the output layer uses `out_act`.
    pub fn with_hidden(
        input: usize,
        hidden: &[usize],
        output: usize,
        hidden_act: Activation,
        out_act: Activation,
        seed: u64,
    ) -> Result<Self, NnError> {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        let mut acts = vec![hidden_act; hidden.len()];
        acts.push(out_act);
        Self::new(&sizes, &acts, seed)
    }

    pub fn from_params(
        layer_sizes: &[usize],
        activations: &[Activation],
        seed: u64,
        params: Vec<f64>,
    ) -> Result<Self, NnError> {
        Self::check_architecture(layer_sizes, activations)?;
        let expected = Self::param_count_for(layer_sizes);
        if params.len() != expected {
            return Err(NnError::ShapeMismatch { expected, got: params.len() });
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            activations: activations.to_vec(),
            params,
            seed,
        })
    }

    fn check_architecture(sizes: &[usize], acts: &[Activation]) -> Result<(), NnError> {
        let bad = |m: String| Err(NnError::InvalidArchitecture(m));
        if sizes.len() < 2 {
            return bad("need at least input and output widths".into());
        }
        if sizes.contains(&0) {
            return bad("layer widths must be >= 1".into());
        }
        if acts.len() != sizes.len() - 1 {
            return bad(format!("{} activations for {} layers", acts.len(), sizes.len() - 1));
        }
        for (k, act) in acts.iter().enumerate() {
            if let Activation::SoftmaxGroups(g) = act {
                if *g == 0 || !sizes[k + 1].is_multiple_of(*g) {
                    return bad(format!("softmax group {g} does not divide width {}", sizes[k + 1]));
                }
            }
        }
        Ok(())
    }

    pub fn param_count_for(layer_sizes: &[usize]) -> usize {
        layer_sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("non-empty")
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn same_architecture(&self, other: &Mlp) -> bool {
        self.layer_sizes == other.layer_sizes && self.activations == other.activations
    }

    fn layer(&self, k: usize, offset: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>, usize) {
        let (fan_in, fan_out) = (self.layer_sizes[k], self.layer_sizes[k + 1]);
        let w_len = fan_in * fan_out;
        let w = ArrayView2::from_shape((fan_out, fan_in), &self.params[offset..offset + w_len])
            .expect("weight block shape");
        let b = ArrayView1::from(&self.params[offset + w_len..offset + w_len + fan_out]);
        (w, b, offset + w_len + fan_out)
    }

    fn check_input(&self, x: &ArrayView2<'_, f64>) -> Result<(), NnError> {
        if x.ncols() != self.input_dim() {
            return Err(NnError::ShapeMismatch { expected: self.input_dim(), got: x.ncols() });
        }
        Ok(())
    }

    /// Batched forward pass keeping every layer's activation for backprop.
    pub fn forward_cached(&self, x: ArrayView2<'_, f64>) -> Result<ForwardCache, NnError> {
        self.check_input(&x)?;
        let mut layers = Vec::with_capacity(self.layer_sizes.len());
        layers.push(x.to_owned());
        let mut offset = 0;
        for (k, act) in self.activations.iter().enumerate() {
            let (w, b, next) = self.layer(k, offset);
            offset = next;
            let mut z = layers[k].dot(&w.t());
            z += &b;
            act.apply(&mut z);
            layers.push(z);
        }
        Ok(ForwardCache { layers })
    }

    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>, NnError> {
        Ok(self.forward_cached(x)?.layers.pop().expect("output layer"))
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        Ok(self.forward_batch(view)?.into_raw_vec_and_offset().0)
    }

    /// Backpropagates `grad_out = ∂L/∂output` (one row per batch sample).
    /// Returns the parameter gradient summed over the batch and `∂L/∂input`.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_out: ArrayView2<'_, f64>,
    ) -> Result<(Vec<f64>, Array2<f64>), NnError> {
        let out = cache.output();
        if grad_out.dim() != out.dim() {
            return Err(NnError::ShapeMismatch { expected: out.ncols(), got: grad_out.ncols() });
        }
        let mut grad = vec![0.0; self.params.len()];
        let mut offsets = Vec::with_capacity(self.activations.len());
        let mut off = 0;
        for k in 0..self.activations.len() {
            offsets.push(off);
            off = self.layer(k, off).2;
        }
        let mut g = grad_out.as_standard_layout().into_owned();
        for k in (0..self.activations.len()).rev() {
            self.activations[k].backprop(&cache.layers[k + 1], &mut g);
            let (w, _, _) = self.layer(k, offsets[k]);
            let (fan_in, fan_out) = (self.layer_sizes[k], self.layer_sizes[k + 1]);
            let dw = g.t().dot(&cache.layers[k]);
            let db = g.sum_axis(Axis(0));
            let start = offsets[k];
            grad[start..start + fan_in * fan_out]
                .iter_mut()
                .zip(dw.iter())
                .for_each(|(d, s)| *d = *s);
            grad[start + fan_in * fan_out..start + fan_in * fan_out + fan_out]
                .iter_mut()
                .zip(db.iter())
                .for_each(|(d, s)| *d = *s);
            g = g.dot(&w);
        }
        Ok((grad, g))
    }

    /// Gradient of `grad_out · f(x)` with respect to the parameters, for one input.
    pub fn gradient(&self, x: &[f64], grad_out: &[f64]) -> Result<Vec<f64>, NnError> {
        if grad_out.len() != self.output_dim() {
            return Err(NnError::ShapeMismatch { expected: self.output_dim(), got: grad_out.len() });
        }
        if x.len() != self.input_dim() {
            return Err(NnError::ShapeMismatch { expected: self.input_dim(), got: x.len() });
        }
        let cache = self.forward_cached(ArrayView2::from_shape((1, x.len()), x).expect("row"))?;
        let g = ArrayView2::from_shape((1, grad_out.len()), grad_out).expect("row");
        Ok(self.backward(&cache, g)?.0)
    }

    /// `self ← τ·source + (1−τ)·self`, element-wise.
    pub fn soft_update(&mut self, source: &Mlp, tau: f64) -> Result<(), NnError> {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(NnError::InvalidTau(tau));
        }
        if !self.same_architecture(source) {
            return Err(NnError::ArchitectureMismatch);
        }
        if tau == 1.0 {
            self.params.copy_from_slice(&source.params);
            return Ok(());
        }
        for (t, s) in self.params.iter_mut().zip(&source.params) {
            *t = tau * s + (1.0 - tau) * *t;
        }
        Ok(())
    }
}
