//! Dense feed-forward networks and their training plumbing.
//!
//! A `DenseNet` is a stack of affine layers with per-layer activations. The
//! value-level `forward` serves evaluation and checkpointing; `bind` plus
//! `forward_bound` replay the same computation onto a `Tape` when gradients
//! are needed. Binding once and reusing the bound parameters lets several
//! forward passes (student samples, both discriminator branches) share one
//! set of parameter leaves.

pub mod check;
pub mod optim;
pub mod tape;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{uniform_in, Rng};
use crate::tensor::Tensor;

pub use tape::{Grads, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `fan_out x fan_in` weight matrix.
    pub weights: Tensor,
    /// `[fan_out]` bias vector.
    pub bias: Tensor,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    layers: Vec<Layer>,
}

/// Tape handles for one binding of a network's parameters.
pub struct BoundParams {
    pairs: Vec<(Var, Var)>,
}

impl BoundParams {
    /// `(weights, bias)` vars per layer, in network order.
    pub fn pairs(&self) -> &[(Var, Var)] {
        &self.pairs
    }

    /// Flattened vars in the order `params_mut` exposes the tensors.
    pub fn flat(&self) -> Vec<Var> {
        self.pairs.iter().flat_map(|&(w, b)| [w, b]).collect()
    }
}

impl DenseNet {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("a network needs at least one layer"));
        }
        for (i, layer) in layers.iter().enumerate() {
            if !layer.weights.is_matrix() {
                return Err(Error::config(format!(
                    "layer {i} weights must be a matrix, got shape {:?}",
                    layer.weights.shape()
                )));
            }
            if layer.bias.shape() != [layer.weights.rows()] {
                return Err(Error::config(format!(
                    "layer {i} bias length {:?} does not match {} output units",
                    layer.bias.shape(),
                    layer.weights.rows()
                )));
            }
            if i > 0 && layer.weights.cols() != layers[i - 1].weights.rows() {
                return Err(Error::config(format!(
                    "layer {i} expects {} inputs but layer {} emits {}",
                    layer.weights.cols(),
                    i - 1,
                    layers[i - 1].weights.rows()
                )));
            }
        }
        Ok(DenseNet { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weights.rows()
    }

    /// Mutable views of all parameters, interleaved `[w0, b0, w1, b1, ..]`.
    /// The order is the contract between networks and `OptimizerState`.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weights, &mut l.bias])
            .collect()
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.shape().to_vec(), l.bias.shape().to_vec()])
            .collect()
    }

    /// Value-level forward pass over a `batch x input_dim` matrix.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if !x.is_matrix() || x.cols() != self.input_dim() {
            return Err(Error::config(format!(
                "forward wants a matrix with {} columns, got shape {:?}",
                self.input_dim(),
                x.shape()
            )));
        }
        let mut cur = x.clone();
        for layer in &self.layers {
            let (rows, fan_out, fan_in) =
                (cur.rows(), layer.weights.rows(), layer.weights.cols());
            let mut next = Tensor::zeros(vec![rows, fan_out]);
            for r in 0..rows {
                let xrow = cur.row(r);
                let orow = next.row_mut(r);
                for o in 0..fan_out {
                    let wrow = layer.weights.row(o);
                    let mut acc = layer.bias.data()[o];
                    for i in 0..fan_in {
                        acc += xrow[i] * wrow[i];
                    }
                    orow[o] = match layer.activation {
                        Activation::Relu => acc.max(0.0),
                        Activation::Sigmoid => tape::clamped_sigmoid(acc, 0.0),
                        Activation::Identity => acc,
                    };
                }
            }
            cur = next;
        }
        Ok(cur)
    }

    /// Registers every parameter as a tape leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        let pairs = self
            .layers
            .iter()
            .map(|l| (tape.leaf(l.weights.clone()), tape.leaf(l.bias.clone())))
            .collect();
        BoundParams { pairs }
    }

    /// Replays the forward pass on the tape from already-bound parameters.
    pub fn forward_bound(&self, tape: &mut Tape, params: &BoundParams, input: Var) -> Result<Var> {
        if params.pairs.len() != self.layers.len() {
            return Err(Error::config(format!(
                "bound parameters cover {} layers, network has {}",
                params.pairs.len(),
                self.layers.len()
            )));
        }
        let mut cur = input;
        for (layer, &(w, b)) in self.layers.iter().zip(&params.pairs) {
            let z = tape.affine(cur, w, b)?;
            cur = match layer.activation {
                Activation::Relu => tape.relu(z),
                Activation::Sigmoid => tape.sigmoid(z, 0.0),
                Activation::Identity => z,
            };
        }
        Ok(cur)
    }

    /// Serializes to a stable JSON checkpoint.
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::format(format!("checkpoint encode failed: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let net: DenseNet = serde_json::from_str(text)
            .map_err(|e| Error::format(format!("checkpoint decode failed: {e}")))?;
        DenseNet::new(net.layers)
    }
}

/// Uniform fan-in scaled init: weights on `±sqrt(6 / fan_in)`, zero biases,
/// relu on hidden layers and identity logits on the last.
pub fn init_net(sizes: &[usize], rng: &mut Rng) -> Result<DenseNet> {
    if sizes.len() < 2 {
        return Err(Error::config(format!(
            "init_net needs input and output sizes, got {:?}",
            sizes
        )));
    }
    if sizes.iter().any(|&s| s == 0) {
        return Err(Error::config(format!("zero-width layer in sizes {:?}", sizes)));
    }
    let mut layers = Vec::with_capacity(sizes.len() - 1);
    for li in 0..sizes.len() - 1 {
        let (fan_in, fan_out) = (sizes[li], sizes[li + 1]);
        let bound = (6.0 / fan_in as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| uniform_in(rng, -bound, bound))
            .collect();
        layers.push(Layer {
            weights: Tensor::matrix(fan_out, fan_in, data)?,
            bias: Tensor::zeros(vec![fan_out]),
            activation: if li + 2 == sizes.len() {
                Activation::Identity
            } else {
                Activation::Relu
            },
        });
    }
    DenseNet::new(layers)
}

/// Row-wise softmax at unit temperature.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    if !logits.is_matrix() {
        return Err(Error::config(format!(
            "softmax wants a matrix, got shape {:?}",
            logits.shape()
        )));
    }
    let mut out = Tensor::zeros(logits.shape().to_vec());
    for r in 0..logits.rows() {
        tape::softmax_row(out.row_mut(r), logits.row(r), 1.0);
    }
    Ok(out)
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn init_is_seed_deterministic_and_bounded() {
        let a = init_net(&[4, 8, 3], &mut seeded(5)).unwrap();
        let b = init_net(&[4, 8, 3], &mut seeded(5)).unwrap();
        assert_eq!(a, b);
        let c = init_net(&[4, 8, 3], &mut seeded(6)).unwrap();
        assert_ne!(a, c);

        for layer in a.layers() {
            let bound = (6.0 / layer.weights.cols() as f64).sqrt();
            assert!(layer.weights.data().iter().all(|w| w.abs() <= bound));
            assert!(layer.bias.data().iter().all(|&b| b == 0.0));
        }
        assert_eq!(a.layers()[0].activation, Activation::Relu);
        assert_eq!(a.layers()[1].activation, Activation::Identity);
    }

    #[test]
    fn init_rejects_degenerate_sizes() {
        assert!(init_net(&[4], &mut seeded(0)).is_err());
        assert!(init_net(&[4, 0, 2], &mut seeded(0)).is_err());
    }

    #[test]
    fn forward_matches_hand_computation() {
        let net = DenseNet::new(vec![
            Layer {
                weights: Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
                bias: Tensor::zeros(vec![2]),
                activation: Activation::Relu,
            },
            Layer {
                weights: Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap(),
                bias: Tensor::new(vec![1], vec![0.5]).unwrap(),
                activation: Activation::Identity,
            },
        ])
        .unwrap();
        let x = Tensor::matrix(1, 2, vec![1.0, -1.0]).unwrap();
        let y = net.forward(&x).unwrap();
        assert_eq!(y.data(), &[1.5]);
    }

    #[test]
    fn forward_rejects_wrong_input_width() {
        let net = init_net(&[3, 2], &mut seeded(1)).unwrap();
        let x = Tensor::matrix(1, 4, vec![0.0; 4]).unwrap();
        assert!(net.forward(&x).is_err());
    }

    #[test]
    fn forward_bound_agrees_with_value_forward() {
        let mut rng = seeded(77);
        let net = init_net(&[5, 7, 4], &mut rng).unwrap();
        let data = (0..15).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = Tensor::matrix(3, 5, data).unwrap();

        let value = net.forward(&x).unwrap();
        let mut tape = Tape::new();
        let params = net.bind(&mut tape);
        let input = tape.leaf(x);
        let out = net.forward_bound(&mut tape, &params, input).unwrap();

        for (a, b) in tape.value(out).data().iter().zip(value.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_byte_identical() {
        let net = init_net(&[6, 9, 3], &mut seeded(42)).unwrap();
        let json = net.to_json().unwrap();
        let loaded = DenseNet::from_json(&json).unwrap();
        assert_eq!(net, loaded);
        assert_eq!(json, loaded.to_json().unwrap());
        assert!(json.contains("\"relu\""));
        assert!(json.contains("\"identity\""));
    }

    #[test]
    fn from_json_rejects_inconsistent_layers() {
        let truncated_weights = r#"{"layers":[{
            "weights": {"shape": [2, 3], "data": [0.0, 0.0]},
            "bias": {"shape": [2], "data": [0.0, 0.0]},
            "activation": "identity"
        }]}"#;
        assert!(DenseNet::from_json(truncated_weights).is_err());

        let broken_chain = r#"{"layers":[
            {"weights": {"shape": [2, 3], "data": [0,0,0,0,0,0]},
             "bias": {"shape": [2], "data": [0,0]},
             "activation": "relu"},
            {"weights": {"shape": [1, 4], "data": [0,0,0,0]},
             "bias": {"shape": [1], "data": [0]},
             "activation": "identity"}
        ]}"#;
        assert!(DenseNet::from_json(broken_chain).is_err());
    }

    #[test]
    fn new_rejects_mismatched_chain() {
        let layers = vec![
            Layer {
                weights: Tensor::matrix(4, 2, vec![0.0; 8]).unwrap(),
                bias: Tensor::zeros(vec![4]),
                activation: Activation::Relu,
            },
            Layer {
                weights: Tensor::matrix(3, 5, vec![0.0; 15]).unwrap(),
                bias: Tensor::zeros(vec![3]),
                activation: Activation::Identity,
            },
        ];
        assert!(DenseNet::new(layers).is_err());
    }

    #[test]
    fn softmax_rows_are_distributions() {
        let z = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.0, 1.0]).unwrap();
        let p = softmax(&z).unwrap();
        for r in 0..2 {
            let total: f64 = p.row(r).iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert!(p.row(r).iter().all(|&v| v > 0.0));
        }
        assert!(p.at(0, 2) > p.at(0, 1));
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.1, 0.9, 0.9]), 1);
        assert_eq!(argmax(&[0.5]), 0);
    }
}
