use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

/// Lower clamp applied to every logistic output; the upper clamp is `1 - PROB_EPS`.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

/// Logistic function with outputs clamped to `[PROB_EPS, 1 - PROB_EPS]`.
#[inline]
pub fn logistic(z: f64) -> f64 {
    let p = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => logistic(z),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `in × out`.
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn input_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.cols()
    }
}

/// Parameters of a dense feedforward network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    layers: Vec<Layer>,
}

/// Per-layer activations recorded by [`Network::forward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    inputs: Vec<Matrix>,
    pre: Vec<Matrix>,
    outputs: Matrix,
}

impl ForwardCache {
    pub fn outputs(&self) -> &Matrix {
        &self.outputs
    }

    /// Pre-activation values of the final layer.
    pub fn final_pre_activation(&self) -> &Matrix {
        self.pre.last().expect("cache of a non-empty network")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// Gradients shaped like a [`Network`].
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkGrads {
    pub layers: Vec<LayerGrads>,
}

impl NetworkGrads {
    pub fn zeros_like(net: &Network) -> Self {
        NetworkGrads {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weights: Matrix::zeros(l.weights.rows(), l.weights.cols()),
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &NetworkGrads) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::Shape("gradient shapes differ".into()));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a
                .weights
                .as_mut_slice()
                .iter_mut()
                .zip(b.weights.as_slice())
            {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &NetworkGrads) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.weights.rows() == b.weights.rows()
                    && a.weights.cols() == b.weights.cols()
                    && a.bias.len() == b.bias.len()
            })
    }

    /// All gradient entries, layer by layer, weights before bias.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.as_slice().iter().chain(&l.bias).copied())
    }

    pub(crate) fn slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
    }

    pub(crate) fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
    }
}

fn validate_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "a network needs at least an input and an output size, got {sizes:?}"
        )));
    }
    if sizes.contains(&0) {
        return Err(Error::InvalidConfig(format!(
            "layer sizes must be positive, got {sizes:?}"
        )));
    }
    Ok(())
}

/// Builds a rectifier network with logistic outputs, weights drawn from
/// `N(0, 2 / fan_in)` and zero biases.
pub fn init_network(layer_sizes: &[usize], seed: u64) -> Result<Network> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Network::init(layer_sizes, Activation::Relu, Activation::Sigmoid, &mut rng)
}

impl Network {
    /// Initializes a network with `hidden` activation on every layer but the
    /// last, which uses `output`.
    pub fn init<R: rand::Rng + ?Sized>(
        layer_sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Network> {
        validate_sizes(layer_sizes)?;
        let n_layers = layer_sizes.len() - 1;
        let mut layers = Vec::with_capacity(n_layers);
        for (k, pair) in layer_sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
                .map_err(|e| Error::InvalidConfig(e.to_string()))?;
            let values = (0..fan_in * fan_out).map(|_| normal.sample(rng)).collect();
            layers.push(Layer {
                weights: Matrix::from_vec(fan_in, fan_out, values)?,
                bias: vec![0.0; fan_out],
                activation: if k + 1 == n_layers { output } else { hidden },
            });
        }
        Ok(Network { layers })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Network> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig("network has no layers".into()));
        }
        for (k, l) in layers.iter().enumerate() {
            if l.bias.len() != l.output_dim() {
                return Err(Error::Shape(format!(
                    "layer {k}: bias has {} entries for {} outputs",
                    l.bias.len(),
                    l.output_dim()
                )));
            }
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::Shape(format!(
                    "layer {k} outputs {} values but layer {} expects {}",
                    pair[0].output_dim(),
                    k + 1,
                    pair[1].input_dim()
                )));
            }
        }
        Ok(Network { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    /// Layer widths from input to output.
    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Layer::output_dim))
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.as_slice().len() + l.bias.len())
            .sum()
    }

    pub(crate) fn slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, ForwardCache)> {
        if x.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has {} columns, network expects {}",
                x.cols(),
                self.input_dim()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut current = x.clone();
        for layer in &self.layers {
            let z = current.affine(&layer.weights, &layer.bias);
            let mut a = z.clone();
            for v in a.as_mut_slice() {
                *v = layer.activation.apply(*v);
            }
            inputs.push(current);
            pre.push(z);
            current = a;
        }
        let outputs = current.clone();
        Ok((
            outputs.clone(),
            ForwardCache {
                inputs,
                pre,
                outputs,
            },
        ))
    }

    /// Gradients of a scalar loss given `∂loss/∂outputs`.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &Matrix) -> Result<NetworkGrads> {
        self.backward_full(cache, output_grad, false)
            .map(|(g, _)| g)
    }

    /// Like [`Network::backward`] but also returns `∂loss/∂input`.
    pub fn backward_full(
        &self,
        cache: &ForwardCache,
        output_grad: &Matrix,
        want_input_grad: bool,
    ) -> Result<(NetworkGrads, Option<Matrix>)> {
        self.check_cache(cache, output_grad)?;
        let last = self.layers.len() - 1;
        let act = self.layers[last].activation;
        let mut delta = output_grad.clone();
        for ((d, &z), &a) in delta
            .as_mut_slice()
            .iter_mut()
            .zip(cache.pre[last].as_slice())
            .zip(cache.outputs.as_slice())
        {
            *d *= act.derivative(z, a);
        }
        Ok(self.backprop(cache, delta, want_input_grad))
    }

    /// Backpropagates from `∂loss/∂(final pre-activation)`, bypassing the
    /// output activation's derivative.
    pub fn backward_from_pre_activation(
        &self,
        cache: &ForwardCache,
        pre_grad: &Matrix,
        want_input_grad: bool,
    ) -> Result<(NetworkGrads, Option<Matrix>)> {
        self.check_cache(cache, pre_grad)?;
        Ok(self.backprop(cache, pre_grad.clone(), want_input_grad))
    }

    fn check_cache(&self, cache: &ForwardCache, grad: &Matrix) -> Result<()> {
        let consistent = cache.pre.len() == self.layers.len()
            && cache
                .pre
                .iter()
                .zip(&self.layers)
                .all(|(z, l)| z.cols() == l.output_dim())
            && cache
                .inputs
                .iter()
                .zip(&self.layers)
                .all(|(x, l)| x.cols() == l.input_dim());
        if !consistent {
            return Err(Error::Shape(
                "cache was not produced by this network".into(),
            ));
        }
        if grad.rows() != cache.outputs.rows() || grad.cols() != cache.outputs.cols() {
            return Err(Error::Shape(format!(
                "output gradient is {}x{}, outputs are {}x{}",
                grad.rows(),
                grad.cols(),
                cache.outputs.rows(),
                cache.outputs.cols()
            )));
        }
        Ok(())
    }

    fn backprop(
        &self,
        cache: &ForwardCache,
        mut delta: Matrix,
        want_input_grad: bool,
    ) -> (NetworkGrads, Option<Matrix>) {
        let mut grads = NetworkGrads::zeros_like(self);
        let mut input_grad = None;
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let g = &mut grads.layers[k];
            cache.inputs[k].add_transpose_mul(&delta, &mut g.weights);
            for r in 0..delta.rows() {
                for (b, &d) in g.bias.iter_mut().zip(delta.row(r)) {
                    *b += d;
                }
            }
            if k == 0 && !want_input_grad {
                break;
            }
            let mut upstream = delta.mul_transpose(&layer.weights);
            if k == 0 {
                input_grad = Some(upstream);
                break;
            }
            let below = &self.layers[k - 1];
            let z_below = cache.pre[k - 1].as_slice();
            let a_below = cache.inputs[k].as_slice();
            for ((u, &z), &a) in upstream.as_mut_slice().iter_mut().zip(z_below).zip(a_below) {
                *u *= below.activation.derivative(z, a);
            }
            delta = upstream;
        }
        (grads, input_grad)
    }
}
