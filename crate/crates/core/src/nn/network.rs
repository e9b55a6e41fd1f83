use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::imagecore::FloatPlane;

use super::layers::{self, ConvGeom};
use super::spec::{ArchitectureSpec, LayerSpec};
use super::Tensor;

/// Items per forward pass in [`Network::predict`]. Results do not depend
/// on it.
const PREDICT_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Layer {
    Conv { geom: ConvGeom, w: Vec<f64>, b: Vec<f64> },
    Relu,
    MaxPool { window: usize, stride: usize },
    Dense { n_in: usize, n_out: usize, w: Vec<f64>, b: Vec<f64> },
    Dropout { rate: f64 },
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
}

/// One parameter vector: the weights or the biases of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamBlock {
    pub layer: usize,
    pub kind: ParamKind,
    pub len: usize,
}

/// Per-layer state kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub(crate) enum Aux {
    None,
    Argmax(Vec<u32>),
    Mask(Option<Vec<f64>>),
}

/// Activations of a forward pass that started at layer `start`.
#[derive(Debug, Clone)]
pub struct Forward {
    pub(crate) start: usize,
    /// `inputs[i]` feeds layer `start + i`.
    pub(crate) inputs: Vec<Tensor>,
    pub(crate) aux: Vec<Aux>,
    pub(crate) logits: Tensor,
}

impl Forward {
    pub fn logits(&self) -> &Tensor {
        &self.logits
    }

    /// Output of layer `i` (the input of layer `i + 1`, or the logits).
    pub fn output_of(&self, i: usize) -> Option<&Tensor> {
        let j = i.checked_sub(self.start)? + 1;
        if j < self.inputs.len() {
            Some(&self.inputs[j])
        } else if j == self.inputs.len() {
            Some(&self.logits)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    spec: ArchitectureSpec,
    pub(crate) layers: Vec<Layer>,
    pub(crate) rng: ChaCha8Rng,
    /// Layer whose parameter gradients are sign-flipped, for testing the
    /// gradient checker.
    pub(crate) fault: Option<usize>,
    /// Optimiser settings of the last training run, kept in checkpoints.
    pub(crate) trained_with: Option<String>,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.layers == other.layers
    }
}

fn diverged(layer: usize, kind: &str, detail: &str) -> Error {
    Error::Diverged {
        epoch: 0,
        batch: 0,
        layer: format!("{layer} ({kind})"),
        detail: detail.to_string(),
    }
}

impl Network {
    /// Builds the network with He-normal weights (`std = sqrt(2 / fan_in)`)
    /// and zero biases, drawn in layer order from `seed`.
    pub fn build(spec: ArchitectureSpec, seed: u64) -> Result<Self> {
        let shapes = spec.shapes()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(spec.layers.len());
        let mut in_shape = spec.input.to_vec();
        for (l, out_shape) in spec.layers.iter().zip(&shapes) {
            let mut he = |fan_in: usize, n: usize| -> Vec<f64> {
                let d = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                (0..n).map(|_| d.sample(&mut rng)).collect()
            };
            layers.push(match *l {
                LayerSpec::Conv { out_channels, kernel, stride, padding } => {
                    let geom = ConvGeom {
                        in_c: in_shape[0],
                        in_h: in_shape[1],
                        in_w: in_shape[2],
                        out_c: out_channels,
                        kernel,
                        stride,
                        padding,
                    };
                    let w = he(geom.in_c * kernel * kernel, geom.weight_len());
                    Layer::Conv { geom, w, b: vec![0.0; out_channels] }
                }
                LayerSpec::Dense { out_features } => {
                    let n_in: usize = in_shape.iter().product();
                    let w = he(n_in, n_in * out_features);
                    Layer::Dense { n_in, n_out: out_features, w, b: vec![0.0; out_features] }
                }
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::MaxPool { window, stride } => Layer::MaxPool { window, stride },
                LayerSpec::Dropout { rate } => Layer::Dropout { rate },
                LayerSpec::Softmax => Layer::Softmax,
            });
            in_shape = out_shape.clone();
        }
        Ok(Network { spec, layers, rng, fault: None, trained_with: None })
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    /// Optimiser settings recorded by the last [`train`](super::train) call.
    pub fn trained_with(&self) -> Option<&str> {
        self.trained_with.as_deref()
    }

    /// Sets the rate of every dropout layer (and the spec to match).
    pub fn set_dropout_rate(&mut self, rate: f64) -> Result<()> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!("dropout rate must lie in [0, 1), got {rate}")));
        }
        for l in &mut self.layers {
            if let Layer::Dropout { rate: r } = l {
                *r = rate;
            }
        }
        for l in &mut self.spec.layers {
            if let LayerSpec::Dropout { rate: r } = l {
                *r = rate;
            }
        }
        Ok(())
    }

    /// Reseeds the dropout generator.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    pub fn param_blocks(&self) -> Vec<ParamBlock> {
        let mut out = Vec::new();
        for (layer, l) in self.layers.iter().enumerate() {
            if let Layer::Conv { w, b, .. } | Layer::Dense { w, b, .. } = l {
                out.push(ParamBlock { layer, kind: ParamKind::Weight, len: w.len() });
                out.push(ParamBlock { layer, kind: ParamKind::Bias, len: b.len() });
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_blocks().iter().map(|b| b.len).sum()
    }

    /// Parameter vectors in [`param_blocks`](Self::param_blocks) order.
    pub fn params(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in &self.layers {
            if let Layer::Conv { w, b, .. } | Layer::Dense { w, b, .. } = l {
                out.push(w.as_slice());
                out.push(b.as_slice());
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            if let Layer::Conv { w, b, .. } | Layer::Dense { w, b, .. } = l {
                out.push(w.as_mut_slice());
                out.push(b.as_mut_slice());
            }
        }
        out
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != 4 || x.shape()[1..] != self.spec.input {
            return Err(Error::Shape(format!(
                "network {} expects [b, {}, {}, {}] input, got {:?}",
                self.spec.name,
                self.spec.input[0],
                self.spec.input[1],
                self.spec.input[2],
                x.shape()
            )));
        }
        Ok(())
    }

    /// Forward pass from layer `start` with `x` as that layer's input.
    /// Dropout is active only when `rng` is given.
    pub(crate) fn run_from(
        &self,
        start: usize,
        x: Tensor,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Forward> {
        let mut inputs = Vec::with_capacity(self.layers.len() - start);
        let mut aux = Vec::with_capacity(self.layers.len() - start);
        let mut cur = x;
        for (i, l) in self.layers.iter().enumerate().skip(start) {
            let (next, a) = match l {
                Layer::Conv { geom, w, b } => (layers::conv2d_forward(&cur, w, b, geom)?, Aux::None),
                Layer::Relu => (layers::relu_forward(&cur), Aux::None),
                Layer::MaxPool { window, stride } => {
                    let (y, arg) = layers::maxpool2d_forward(&cur, *window, *stride)?;
                    (y, Aux::Argmax(arg))
                }
                Layer::Dense { n_in, n_out, w, b } => {
                    let flat = cur.clone().reshape(vec![cur.batch(), *n_in])?;
                    (layers::dense_forward(&flat, w, b, *n_in, *n_out)?, Aux::None)
                }
                Layer::Dropout { rate } => match rng.as_deref_mut() {
                    Some(r) => {
                        let (y, mask) = layers::dropout_forward(&cur, *rate, r, true)?;
                        (y, Aux::Mask(mask))
                    }
                    None => (cur.clone(), Aux::Mask(None)),
                },
                Layer::Softmax => (cur.clone(), Aux::None),
            };
            if !next.all_finite() {
                return Err(diverged(i, self.spec.layers[i].kind(), "non-finite activation"));
            }
            inputs.push(cur);
            aux.push(a);
            cur = next;
        }
        Ok(Forward { start, inputs, aux, logits: cur })
    }

    /// True if every ReLU input sign and pooling argmax from layer `from`
    /// on agrees between two passes, i.e. both lie on the same linear piece.
    pub(crate) fn same_pattern(&self, a: &Forward, b: &Forward, from: usize) -> bool {
        let from = from.max(a.start).max(b.start);
        (from..self.layers.len()).all(|layer| {
            let (i, j) = (layer - a.start, layer - b.start);
            match (&self.layers[layer], &a.aux[i], &b.aux[j]) {
                (Layer::Relu, _, _) => a.inputs[i]
                    .data()
                    .iter()
                    .zip(b.inputs[j].data())
                    .all(|(p, q)| (*p > 0.0) == (*q > 0.0)),
                (_, Aux::Argmax(x), Aux::Argmax(y)) => x == y,
                _ => true,
            }
        })
    }

    /// Training-mode forward pass: dropout masks are drawn from the
    /// network's generator.
    pub fn forward_train(&mut self, x: &Tensor) -> Result<Forward> {
        self.check_input(x)?;
        let mut rng = self.rng.clone();
        let out = self.run_from(0, x.clone(), Some(&mut rng));
        self.rng = rng;
        out
    }

    /// Inference-mode forward pass (dropout is the identity).
    pub fn forward(&self, x: &Tensor) -> Result<Forward> {
        self.check_input(x)?;
        self.run_from(0, x.clone(), None)
    }

    /// Gradients of every parameter block, in
    /// [`param_blocks`](Self::param_blocks) order, given the gradient of the
    /// loss with respect to the logits.
    pub fn backward(&self, fwd: &Forward, dlogits: &Tensor) -> Result<Vec<Vec<f64>>> {
        let mut grads: Vec<Vec<f64>> = Vec::new();
        let mut d = dlogits.clone();
        for (i, l) in self.layers.iter().enumerate().skip(fwd.start).rev() {
            let x = &fwd.inputs[i - fwd.start];
            let flip = if self.fault == Some(i) { -1.0 } else { 1.0 };
            d = match (l, &fwd.aux[i - fwd.start]) {
                (Layer::Conv { geom, w, .. }, _) => {
                    let g = layers::conv2d_backward(x, w, geom, &d)?;
                    grads.push(g.db.iter().map(|v| flip * v).collect());
                    grads.push(g.dw.iter().map(|v| flip * v).collect());
                    g.dx
                }
                (Layer::Dense { n_in, n_out, w, .. }, _) => {
                    let flat = x.clone().reshape(vec![x.batch(), *n_in])?;
                    let g = layers::dense_backward(&flat, w, *n_in, *n_out, &d)?;
                    grads.push(g.db.iter().map(|v| flip * v).collect());
                    grads.push(g.dw.iter().map(|v| flip * v).collect());
                    g.dx.reshape(x.shape().to_vec())?
                }
                (Layer::Relu, _) => layers::relu_backward(x, &d),
                (Layer::MaxPool { .. }, Aux::Argmax(arg)) => {
                    layers::maxpool2d_backward(x.shape(), arg, &d)?
                }
                (Layer::Dropout { .. }, Aux::Mask(mask)) => {
                    layers::dropout_backward(mask.as_deref(), &d)
                }
                (Layer::Softmax, _) => d,
                _ => unreachable!("forward state does not match layer {i}"),
            };
        }
        grads.reverse();
        Ok(grads)
    }

    /// Class probabilities for each tile, inference mode. Output rows do
    /// not depend on how the tiles are batched.
    pub fn predict(&self, tiles: &[&FloatPlane]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(tiles.len());
        for chunk in tiles.chunks(PREDICT_CHUNK) {
            let x = self.batch_tensor(chunk)?;
            let probs = layers::softmax(&self.forward(&x)?.logits);
            out.extend(probs.data().chunks(self.spec.class_count).map(<[f64]>::to_vec));
        }
        Ok(out)
    }

    /// Stacks single-channel planes into a `[b, 1, h, w]` tensor.
    pub fn batch_tensor(&self, tiles: &[&FloatPlane]) -> Result<Tensor> {
        let [c, h, w] = self.spec.input;
        let mut data = Vec::with_capacity(tiles.len() * h * w);
        for t in tiles {
            if c != 1 || t.width() != w || t.height() != h {
                return Err(Error::Shape(format!(
                    "tile is {}x{}, network {} expects {c}x{h}x{w}",
                    t.width(),
                    t.height(),
                    self.spec.name
                )));
            }
            data.extend_from_slice(t.values());
        }
        Tensor::new(vec![tiles.len(), c, h, w], data)
    }
}
