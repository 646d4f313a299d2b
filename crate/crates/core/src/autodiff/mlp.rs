use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::graph::{Activation, Graph, Var};
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `[in, out]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
    pub activation: Activation,
}

/// Dense multi-layer perceptron parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    layers: Vec<Layer>,
}

impl MlpParams {
    /// `dims = [input, hidden.., output]`. Hidden layers use `hidden`,
    /// the last layer uses `output`. Weights are drawn from
    /// `N(0, 1/fan_in)`, biases start at zero.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Config(format!("invalid MLP dims {dims:?}")));
        }
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let normal = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).unwrap();
                let weight = (0..fan_in * fan_out).map(|_| normal.sample(rng)).collect();
                Layer {
                    weight: Tensor::from_parts(vec![fan_in, fan_out], weight),
                    bias: Tensor::zeros(&[fan_out]),
                    activation: if i + 2 == dims.len() { output } else { hidden },
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("MLP needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            let (fan_in, fan_out) = match l.weight.shape() {
                [a, b] => (*a, *b),
                s => return Err(Error::Config(format!("layer {i} weight has shape {s:?}"))),
            };
            if l.bias.shape() != [fan_out] {
                return Err(Error::Shape {
                    op: "mlp bias",
                    lhs: l.weight.shape().to_vec(),
                    rhs: l.bias.shape().to_vec(),
                });
            }
            if i > 0 && layers[i - 1].weight.shape()[1] != fan_in {
                return Err(Error::Shape {
                    op: "mlp layers",
                    lhs: layers[i - 1].weight.shape().to_vec(),
                    rhs: l.weight.shape().to_vec(),
                });
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weight.shape()[1]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().map(Tensor::numel).sum()
    }

    /// Weight, bias, weight, bias, ... in layer order.
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn named_tensors(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    (format!("{prefix}.{i}.weight"), &l.weight),
                    (format!("{prefix}.{i}.bias"), &l.bias),
                ]
            })
            .collect()
    }

    /// Zeroes the last layer so the network outputs `act(0)` everywhere.
    pub fn zero_output_layer(&mut self) {
        let last = self.layers.last_mut().unwrap();
        last.weight.data_mut().fill(0.0);
        last.bias.data_mut().fill(0.0);
    }

    /// Registers every tensor as a trainable leaf.
    pub fn bind(&self, g: &mut Graph) -> BoundMlp {
        self.bind_with(g, true)
    }

    /// Registers every tensor as a constant.
    pub fn bind_frozen(&self, g: &mut Graph) -> BoundMlp {
        self.bind_with(g, false)
    }

    fn bind_with(&self, g: &mut Graph, trainable: bool) -> BoundMlp {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let (w, b) = if trainable {
                    (g.param(l.weight.clone()), g.param(l.bias.clone()))
                } else {
                    (g.constant(l.weight.clone()), g.constant(l.bias.clone()))
                };
                (w, b, l.activation)
            })
            .collect();
        BoundMlp { layers }
    }

    /// Graph-free forward pass over a `[rows, input]` batch.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (rows, cols) = x.matrix_dims();
        if cols != self.input_dim() {
            return Err(Error::Shape {
                op: "mlp forward",
                lhs: x.shape().to_vec(),
                rhs: self.layers[0].weight.shape().to_vec(),
            });
        }
        let mut h = x.data().to_vec();
        for l in &self.layers {
            let (fan_in, fan_out) = (l.weight.shape()[0], l.weight.shape()[1]);
            let mut out = Vec::with_capacity(rows * fan_out);
            for _ in 0..rows {
                out.extend_from_slice(l.bias.data());
            }
            gemm(rows, fan_in, fan_out, &h, false, l.weight.data(), false, &mut out, true);
            match l.activation {
                Activation::Tanh => out.iter_mut().for_each(|v| *v = v.tanh()),
                Activation::Relu => out.iter_mut().for_each(|v| *v = v.max(0.0)),
                Activation::Sigmoid => out.iter_mut().for_each(|v| *v = super::graph::sigmoid(*v)),
                Activation::Identity => {}
            }
            h = out;
        }
        Ok(Tensor::from_parts(vec![rows, self.output_dim()], h))
    }
}

/// An [`MlpParams`] whose tensors live in a [`Graph`].
#[derive(Clone, Debug)]
pub struct BoundMlp {
    layers: Vec<(Var, Var, Activation)>,
}

impl BoundMlp {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let mut h = x;
        for &(w, b, act) in &self.layers {
            h = g.dense(h, w, b, act)?;
        }
        Ok(h)
    }

    /// Leaf handles in [`MlpParams::tensors`] order.
    pub fn vars(&self) -> impl Iterator<Item = Var> + '_ {
        self.layers.iter().flat_map(|&(w, b, _)| [w, b])
    }

    /// Accumulated gradients in [`MlpParams::tensors`] order; zeros where no
    /// gradient arrived.
    pub fn gradients(&self, g: &Graph) -> Vec<Tensor> {
        self.vars().map(|v| g.grad_or_zeros(v)).collect()
    }
}
