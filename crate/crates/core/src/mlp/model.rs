use ndarray::{Array1, Array2, ArrayView2, Axis};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::beamformer::Beamformer;
use crate::error::{Error, Result};
use crate::questioner::MeasurementRule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Linear => x,
        }
    }

    /// Derivative expressed through the activation output.
    fn slope(self, out: f64) -> f64 {
        match self {
            Activation::Relu => f64::from(u8::from(out > 0.0)),
            Activation::Linear => 1.0,
        }
    }
}

/// Dense layer `x ↦ W·x + b` with `W` stored as `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weights: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    /// Uniform in `±1/√fan_in` for weights and biases.
    pub fn random<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        Self {
            weights: Array2::from_shape_simple_fn((outputs, inputs), || {
                rng.random_range(-bound..bound)
            }),
            bias: Array1::from_shape_simple_fn(outputs, || rng.random_range(-bound..bound)),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }
}

/// What a network was trained for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub query_size: usize,
    pub bins: usize,
    pub antennas: usize,
    pub secondary: usize,
    pub theta_min: f64,
    pub theta_max: f64,
    pub spacing: f64,
    pub rule: MeasurementRule,
    pub loss: String,
    pub hidden: Activation,
    pub seed: u64,
    pub epochs: usize,
    pub best_epoch: usize,
    pub learning_rate: f64,
}

/// Fully connected network ending in a unit-norm complex projection.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: Vec<Layer>,
    meta: ModelMeta,
}

/// Activations of every layer for a batch (row per sample); entry 0 is the input.
pub(crate) struct Tape {
    pub outputs: Vec<Array2<f64>>,
}

impl MlpModel {
    pub fn new(layers: Vec<Layer>, meta: ModelMeta) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("a network needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::Shape {
                    expected: pair[0].outputs(),
                    actual: pair[1].inputs(),
                });
            }
        }
        for l in &layers {
            if l.bias.len() != l.outputs() {
                return Err(Error::Shape {
                    expected: l.outputs(),
                    actual: l.bias.len(),
                });
            }
        }
        let out = layers.last().map(Layer::outputs).unwrap_or(0);
        if out != 2 * meta.antennas {
            return Err(Error::Shape {
                expected: 2 * meta.antennas,
                actual: out,
            });
        }
        Ok(Self { layers, meta })
    }

    /// Randomly initialized network with the given layer widths.
    pub fn random<R: Rng + ?Sized>(widths: &[usize], meta: ModelMeta, rng: &mut R) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::config("need at least input and output widths"));
        }
        let layers = widths
            .windows(2)
            .map(|w| Layer::random(w[0], w[1], rng))
            .collect();
        Self::new(layers, meta)
    }

    pub fn meta(&self) -> &ModelMeta {
        &self.meta
    }

    pub fn meta_mut(&mut self) -> &mut ModelMeta {
        &mut self.meta
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].inputs())
            .chain(self.layers.iter().map(Layer::outputs))
            .collect()
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs()
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            Activation::Linear
        } else {
            self.meta.hidden
        }
    }

    /// Network output before the complex reassembly and projection.
    pub fn forward_raw(&self, input: &[f64]) -> Result<Array1<f64>> {
        if input.len() != self.input_width() {
            return Err(Error::Shape {
                expected: self.input_width(),
                actual: input.len(),
            });
        }
        let mut x = Array1::from(input.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let act = self.activation(i);
            x = layer.weights.dot(&x) + &layer.bias;
            x.mapv_inplace(|v| act.apply(v));
        }
        Ok(x)
    }

    pub fn forward(&self, input: &[f64]) -> Result<Beamformer> {
        let raw = self.forward_raw(input)?;
        Beamformer::normalize(to_complex(raw.as_slice().expect("contiguous")))
            .ok_or(Error::DegenerateOutput)
    }

    pub(crate) fn forward_batch(&self, inputs: ArrayView2<'_, f64>) -> Tape {
        let mut outputs = Vec::with_capacity(self.layers.len() + 1);
        outputs.push(inputs.to_owned());
        for (i, layer) in self.layers.iter().enumerate() {
            let act = self.activation(i);
            let mut z = outputs[i].dot(&layer.weights.t()) + &layer.bias;
            z.mapv_inplace(|v| act.apply(v));
            outputs.push(z);
        }
        Tape { outputs }
    }

    /// Parameter gradients from the loss gradient w.r.t. the raw batch output.
    pub(crate) fn backward(&self, tape: &Tape, grad_out: Array2<f64>) -> Vec<Layer> {
        let mut grads: Vec<Layer> = Vec::with_capacity(self.layers.len());
        let mut delta = grad_out;
        for i in (0..self.layers.len()).rev() {
            let act = self.activation(i);
            let out = &tape.outputs[i + 1];
            delta.zip_mut_with(out, |d, &o| *d *= act.slope(o));
            let input = &tape.outputs[i];
            grads.push(Layer {
                weights: delta.t().dot(input),
                bias: delta.sum_axis(Axis(0)),
            });
            if i > 0 {
                delta = delta.dot(&self.layers[i].weights);
            }
        }
        grads.reverse();
        grads
    }
}

/// Reals `[re_0..re_{N−1}, im_0..im_{N−1}]` to `N` complex entries.
pub fn to_complex(raw: &[f64]) -> Vec<Complex64> {
    let n = raw.len() / 2;
    (0..n).map(|m| Complex64::new(raw[m], raw[n + m])).collect()
}

#[cfg(test)]
pub(crate) fn test_meta(
    query_size: usize,
    bins: usize,
    antennas: usize,
    secondary: usize,
) -> ModelMeta {
    ModelMeta {
        query_size,
        bins,
        antennas,
        secondary,
        theta_min: -60.0,
        theta_max: 60.0,
        spacing: 0.5,
        rule: MeasurementRule::OneBit,
        loss: "test".into(),
        hidden: Activation::Relu,
        seed: 0,
        epochs: 0,
        best_epoch: 0,
        learning_rate: 1e-4,
    }
}
