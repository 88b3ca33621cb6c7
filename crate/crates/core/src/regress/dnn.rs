//! Fully connected network with logistic-sigmoid hidden layers and a linear
//! scalar output.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scaling::{InputScaler, ResponseScaler};
use super::{check_input, Prediction};
use crate::data::{ChannelVoltages, Dataset, GlucoseKind};
use crate::error::{Error, Result};
use crate::par::{self, Execution};

pub const DEFAULT_HIDDEN_LAYERS: usize = 10;
pub const DEFAULT_WIDTH: usize = 10;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Dense layer, weights stored row-major as `outputs × inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn affine(&self, x: &[f64]) -> Vec<f64> {
        (0..self.outputs)
            .map(|o| {
                let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + self.bias[o]
            })
            .collect()
    }
}

/// Layers chained input → hidden (sigmoid) … → output (identity, width 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub layers: Vec<DenseLayer>,
}

impl Network {
    /// `dims` lists every layer width, e.g. `[3, 4, 4, 1]`.
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Self::check_dims(dims)?;
        Ok(Self {
            layers: dims.windows(2).map(|w| DenseLayer::zeros(w[0], w[1])).collect(),
        })
    }

    /// Weights and biases uniform in `±1/√fan_in`.
    pub fn random(dims: &[usize], seed: u64) -> Result<Self> {
        let mut net = Self::zeros(dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut net.layers {
            let bound = 1.0 / (layer.inputs as f64).sqrt();
            for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *w = rng.random_range(-bound..=bound);
            }
        }
        Ok(net)
    }

    fn check_dims(dims: &[usize]) -> Result<()> {
        if dims.len() < 2 || dims.contains(&0) || dims[dims.len() - 1] != 1 {
            return Err(Error::InvalidInput(format!(
                "layer widths {dims:?} must be positive and end in a single output"
            )));
        }
        Ok(())
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].inputs];
        d.extend(self.layers.iter().map(|l| l.outputs));
        d
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn hidden_layers(&self) -> usize {
        self.layers.len() - 1
    }

    /// Verifies widths chain and every parameter is finite.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidInput("network has no layers".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::InvalidInput(format!("layer {i} storage does not match its shape")));
            }
            if i > 0 && self.layers[i - 1].outputs != l.inputs {
                return Err(Error::InvalidInput(format!("layer {i} does not chain")));
            }
            if l.weights.iter().chain(&l.bias).any(|w| !w.is_finite()) {
                return Err(Error::NonFinite(format!("weights of layer {i}")));
            }
        }
        if self.layers[self.layers.len() - 1].outputs != 1 {
            return Err(Error::InvalidInput("network must have a scalar output".into()));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    /// Flattened parameters: per layer, weights row-major then biases.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            p.extend_from_slice(&l.weights);
            p.extend_from_slice(&l.bias);
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.param_count() {
            return Err(Error::InvalidInput(format!(
                "{} parameters for a network of {}",
                p.len(),
                self.param_count()
            )));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&p[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&p[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    /// Activations of every layer, input first, output last.
    pub fn activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = l.affine(&acts[i]);
            if i < last {
                z.iter_mut().for_each(|v| *v = sigmoid(*v));
            }
            acts.push(z);
        }
        acts
    }

    pub fn forward(&self, x: &[f64]) -> f64 {
        self.activations(x)[self.layers.len()][0]
    }

    /// Gradient of the scalar output with respect to every parameter, by
    /// reverse-mode accumulation. Ordered as [`Network::params`].
    pub fn output_gradient(&self, x: &[f64]) -> Vec<f64> {
        let acts = self.activations(x);
        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); self.layers.len()];
        // Sensitivity of the output to the pre-activation of the current layer.
        let mut delta = vec![1.0];
        for li in (0..self.layers.len()).rev() {
            let l = &self.layers[li];
            let input = &acts[li];
            let mut g = Vec::with_capacity(l.param_count());
            for &d in &delta {
                g.extend(input.iter().map(|a| d * a));
            }
            g.extend_from_slice(&delta);
            grads[li] = g;
            if li > 0 {
                delta = (0..l.inputs)
                    .map(|k| {
                        let back: f64 = (0..l.outputs)
                            .map(|o| l.weights[o * l.inputs + k] * delta[o])
                            .sum();
                        let a = input[k];
                        back * a * (1.0 - a)
                    })
                    .collect();
            }
        }
        grads.concat()
    }

    /// Jacobian of the outputs (equivalently of residuals `f(x) − y`) for a
    /// batch of inputs, one row per input.
    pub fn jacobian(&self, inputs: &[Vec<f64>], exec: Execution) -> Result<DMatrix<f64>> {
        if inputs.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let dim = self.input_dim();
        if let Some(bad) = inputs.iter().find(|x| x.len() != dim) {
            return Err(Error::InvalidInput(format!(
                "input of length {} for a network expecting {dim}",
                bad.len()
            )));
        }
        let rows = par::map_slice(inputs, exec, |x| self.output_gradient(x));
        let p = self.param_count();
        Ok(DMatrix::from_fn(inputs.len(), p, |i, j| rows[i][j]))
    }
}

/// A trained network with its input and response standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DnnModel {
    pub network: Network,
    pub x_scaler: InputScaler,
    pub y_scaler: ResponseScaler,
}

impl DnnModel {
    pub fn standardized_input(&self, v: &ChannelVoltages) -> Vec<f64> {
        self.x_scaler.transform(v).to_vec()
    }

    pub fn predict_raw(&self, v: &ChannelVoltages) -> Result<f64> {
        check_input(v)?;
        self.network.validate()?;
        let out = self.network.forward(&self.standardized_input(v));
        Ok(self.y_scaler.inverse(out))
    }

    pub fn predict(&self, v: &ChannelVoltages) -> Result<Prediction> {
        Prediction::from_raw(self.predict_raw(v)?)
    }

    /// Residual Jacobian over the samples of `batch` carrying a `kind` reference.
    pub fn jacobian(&self, batch: &Dataset, kind: GlucoseKind) -> Result<DMatrix<f64>> {
        let inputs: Vec<Vec<f64>> = batch
            .usable(kind)
            .iter()
            .map(|(v, _)| self.standardized_input(v))
            .collect();
        self.network.jacobian(&inputs, Execution::default())
    }
}

pub fn dnn_forward(m: &DnnModel, v: &ChannelVoltages) -> Result<Prediction> {
    m.predict(v)
}

pub fn dnn_jacobian(m: &DnnModel, batch: &Dataset, kind: GlucoseKind) -> Result<DMatrix<f64>> {
    m.jacobian(batch, kind)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_model(dims: &[usize]) -> DnnModel {
        DnnModel {
            network: Network::zeros(dims).unwrap(),
            x_scaler: InputScaler::identity(),
            y_scaler: ResponseScaler { mean: 120.0, std: 40.0 },
        }
    }

    #[test]
    fn zero_network_outputs_bias() {
        let mut m = zero_model(&[3, 5, 5, 1]);
        let acts = m.network.activations(&[0.3, -2.0, 7.0]);
        assert!(acts[1].iter().chain(&acts[2]).all(|&a| a == 0.5));
        assert_eq!(m.predict_raw(&ChannelVoltages::new(1.0, 2.0, 3.0)).unwrap(), 120.0);
        m.network.layers[2].bias[0] = 0.5;
        assert_eq!(m.predict_raw(&ChannelVoltages::new(1.0, 2.0, 3.0)).unwrap(), 140.0);
    }

    #[test]
    fn one_neuron_by_hand() {
        let mut net = Network::zeros(&[3, 1, 1]).unwrap();
        net.layers[0].weights = vec![0.5, -0.25, 2.0];
        net.layers[0].bias = vec![0.1];
        net.layers[1].weights = vec![3.0];
        net.layers[1].bias = vec![-1.0];
        let x = [1.0, 2.0, -0.5];
        let pre: f64 = 0.5 * 1.0 - 0.25 * 2.0 + 2.0 * -0.5 + 0.1;
        let want = 3.0 / (1.0 + (-pre).exp()) - 1.0;
        assert!((net.forward(&x) - want).abs() < 1e-12);
    }

    #[test]
    fn hidden_activations_in_open_interval() {
        let net = Network::random(&[3, 6, 6, 6, 1], 9).unwrap();
        for x in [[0.0, 0.0, 0.0], [5.0, -5.0, 3.0], [-2.0, 1.5, 0.2]] {
            let acts = net.activations(&x);
            for hidden in &acts[1..acts.len() - 1] {
                assert!(hidden.iter().all(|&a| a > 0.0 && a < 1.0));
            }
        }
    }

    #[test]
    fn params_round_trip() {
        let net = Network::random(&[3, 4, 4, 1], 1).unwrap();
        assert_eq!(net.param_count(), 16 + 20 + 5);
        let mut other = Network::zeros(&[3, 4, 4, 1]).unwrap();
        other.set_params(&net.params()).unwrap();
        assert_eq!(other, net);
        assert!(other.set_params(&[0.0; 3]).is_err());
    }

    #[test]
    fn zero_net_bias_column_is_one() {
        let net = Network::zeros(&[3, 4, 1]).unwrap();
        let batch = vec![vec![0.1, 0.2, 0.3], vec![-1.0, 2.0, 0.0], vec![0.1, 0.2, 0.3]];
        let j = net.jacobian(&batch, Execution::Sequential).unwrap();
        let last = net.param_count() - 1;
        for i in 0..3 {
            assert_eq!(j[(i, last)], 1.0);
        }
        assert_eq!(j.row(0), j.row(2));
        assert!(net.jacobian(&[vec![1.0]], Execution::Sequential).is_err());
        assert!(net.jacobian(&[], Execution::Sequential).is_err());
    }

    #[test]
    fn rejects_non_finite_weights() {
        let mut m = zero_model(&[3, 2, 1]);
        m.network.layers[0].weights[1] = f64::NAN;
        assert!(m.predict(&ChannelVoltages::new(1.0, 1.0, 1.0)).is_err());
    }

    #[test]
    fn initialization_bounds() {
        let net = Network::random(&[3, 10, 1], 5).unwrap();
        let b0 = 1.0 / 3f64.sqrt();
        assert!(net.layers[0].weights.iter().all(|w| w.abs() <= b0));
        let b1 = 1.0 / 10f64.sqrt();
        assert!(net.layers[1].weights.iter().all(|w| w.abs() <= b1));
        assert_eq!(net, Network::random(&[3, 10, 1], 5).unwrap());
    }
}
