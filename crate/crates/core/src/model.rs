//! Layer stack description, learnable parameters, and the network-level
//! forward and backward passes.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, usage_err, Result};
use crate::layers::{self, PoolSwitches};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    /// Bias-free convolution with `filters` kernels of size `kernel×kernel`.
    Conv { filters: usize, kernel: usize },
    Relu,
    /// 2×2 window, stride 2.
    MaxPool,
    QuadrantPool,
    FullyConnected { units: usize, bias: bool },
    Dropout { rate: f64 },
    Softmax,
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool => "maxpool",
            LayerSpec::QuadrantPool => "quadrantpool",
            LayerSpec::FullyConnected { .. } => "fullyconnected",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Softmax => "softmax",
        }
    }
}

/// Input geometry plus the ordered layer stack. The last layer is always
/// `Softmax`, fed by a fully-connected layer whose width is the class count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// `(channels, height, width)` of one input sample.
    pub input: [usize; 3],
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    /// conv(64,5) → relu → maxpool → conv(128,5) → relu → maxpool →
    /// conv(256,5) → relu → quadrantpool → fc(300) → relu → dropout(0.5) →
    /// fc(K) → softmax, on 96×96 grayscale input.
    pub fn standard(n_classes: usize) -> Self {
        Self::with_widths([1, 96, 96], [64, 128, 256], 5, 300, n_classes, 0.5)
    }

    /// The standard topology with configurable widths, kernel and dropout rate.
    pub fn with_widths(
        input: [usize; 3],
        filters: [usize; 3],
        kernel: usize,
        hidden: usize,
        n_classes: usize,
        dropout: f64,
    ) -> Self {
        use LayerSpec::*;
        let layers = vec![
            Conv { filters: filters[0], kernel },
            Relu,
            MaxPool,
            Conv { filters: filters[1], kernel },
            Relu,
            MaxPool,
            Conv { filters: filters[2], kernel },
            Relu,
            QuadrantPool,
            FullyConnected { units: hidden, bias: true },
            Relu,
            Dropout { rate: dropout },
            FullyConnected { units: n_classes, bias: true },
            Softmax,
        ];
        ModelSpec { input, layers }
    }

    /// Per-sample output shape `(c, h, w)` of every layer, or the first
    /// inconsistency found.
    pub fn output_shapes(&self) -> Result<Vec<[usize; 3]>> {
        let mut shape = self.input;
        if shape.iter().any(|&d| d == 0) {
            return Err(shape_err!("input extent is zero: {shape:?}"));
        }
        let last = self.layers.len().checked_sub(1).ok_or_else(|| usage_err!("empty layer stack"))?;
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let [c, h, w] = shape;
            shape = match *layer {
                LayerSpec::Conv { filters, kernel } => {
                    if filters == 0 || kernel % 2 == 0 {
                        return Err(shape_err!("layer {i}: conv needs filters > 0 and an odd kernel"));
                    }
                    let (oh, ow) = layers::conv_output_hw(h, w, kernel).map_err(|e| shape_err!("layer {i}: {e}"))?;
                    [filters, oh, ow]
                }
                LayerSpec::Relu => shape,
                LayerSpec::MaxPool => {
                    let (oh, ow) = layers::maxpool_output_hw(h, w).map_err(|e| shape_err!("layer {i}: {e}"))?;
                    [c, oh, ow]
                }
                LayerSpec::QuadrantPool => {
                    if h < 2 || w < 2 {
                        return Err(shape_err!("layer {i}: quadrant pooling needs 2x2, got {h}x{w}"));
                    }
                    [c, 2, 2]
                }
                LayerSpec::FullyConnected { units, .. } => {
                    if units == 0 {
                        return Err(shape_err!("layer {i}: fully-connected layer with zero units"));
                    }
                    [units, 1, 1]
                }
                LayerSpec::Dropout { rate } => {
                    layers::check_rate(rate)?;
                    shape
                }
                LayerSpec::Softmax => {
                    if i != last {
                        return Err(usage_err!("softmax must be the last layer"));
                    }
                    let fed_by_fc = i > 0 && matches!(self.layers[i - 1], LayerSpec::FullyConnected { .. });
                    if !fed_by_fc || c < 2 {
                        return Err(usage_err!("softmax must follow a fully-connected layer with >= 2 units"));
                    }
                    shape
                }
            };
            shapes.push(shape);
        }
        if !matches!(self.layers[last], LayerSpec::Softmax) {
            return Err(usage_err!("layer stack must end with softmax"));
        }
        Ok(shapes)
    }

    pub fn n_classes(&self) -> usize {
        match self.layers.iter().rev().find_map(|l| match l {
            LayerSpec::FullyConnected { units, .. } => Some(*units),
            _ => None,
        }) {
            Some(k) => k,
            None => 0,
        }
    }

    /// Stack index of the `ordinal`-th convolution (1-based).
    pub fn conv_index(&self, ordinal: usize) -> Option<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, LayerSpec::Conv { .. }))
            .nth(ordinal.checked_sub(1)?)
            .map(|(i, _)| i)
    }

    pub fn conv_count(&self) -> usize {
        self.layers.iter().filter(|l| matches!(l, LayerSpec::Conv { .. })).count()
    }

    /// Stack index of the ReLU directly following the `ordinal`-th conv.
    pub fn conv_relu_index(&self, ordinal: usize) -> Option<usize> {
        let i = self.conv_index(ordinal)?;
        matches!(self.layers.get(i + 1), Some(LayerSpec::Relu)).then_some(i + 1)
    }

    /// Parameter tensor shapes `(weight, bias)` of layer `i`.
    pub fn param_shapes(&self, i: usize) -> Result<(Option<[usize; 4]>, Option<[usize; 4]>)> {
        let shapes = self.output_shapes()?;
        let in_shape = if i == 0 { self.input } else { shapes[i - 1] };
        Ok(match self.layers[i] {
            LayerSpec::Conv { filters, kernel } => (Some([filters, in_shape[0], kernel, kernel]), None),
            LayerSpec::FullyConnected { units, bias } => {
                let d = in_shape.iter().product();
                (Some([1, 1, d, units]), bias.then_some([1, 1, 1, units]))
            }
            _ => (None, None),
        })
    }

    pub fn parameter_count(&self) -> Result<usize> {
        let mut total = 0;
        for i in 0..self.layers.len() {
            let (w, b) = self.param_shapes(i)?;
            total += w.map_or(0, |s| s.iter().product::<usize>());
            total += b.map_or(0, |s| s.iter().product::<usize>());
        }
        Ok(total)
    }
}

/// Learnable tensors of one layer (both absent for parameter-free layers).
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<S> {
    pub weight: Option<Tensor<S>>,
    pub bias: Option<Tensor<S>>,
}

impl<S: Scalar> LayerParams<S> {
    pub fn empty() -> Self {
        LayerParams { weight: None, bias: None }
    }

    pub fn zeros_like(&self) -> Self {
        LayerParams {
            weight: self.weight.as_ref().map(|t| Tensor::zeros(t.shape())),
            bias: self.bias.as_ref().map(|t| Tensor::zeros(t.shape())),
        }
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<S>> {
        self.weight.iter().chain(self.bias.iter())
    }
}

/// Provenance carried alongside trained weights.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub seed: u64,
    pub config_hash: u64,
    pub epochs: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<S> {
    pub spec: ModelSpec,
    pub layers: Vec<LayerParams<S>>,
    pub meta: RunMeta,
}

pub enum Mode<'a> {
    Train(&'a mut Rng),
    Eval,
}

/// What one layer's backward pass needs from its forward pass.
#[derive(Clone, Debug)]
pub enum LayerCache<S> {
    Conv { input: Tensor<S> },
    Relu { mask: Vec<bool> },
    MaxPool(PoolSwitches),
    QuadrantPool { input_shape: [usize; 4] },
    Dense { input: Tensor<S> },
    Dropout { mask: Option<Vec<S>> },
    Softmax,
}

/// Caches of a full forward pass; consumed by exactly one backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<S> {
    pub layers: Vec<LayerCache<S>>,
}

impl<S: Scalar> ModelParams<S> {
    pub fn new(spec: ModelSpec, layers: Vec<LayerParams<S>>) -> Result<Self> {
        if layers.len() != spec.layers.len() {
            return Err(shape_err!("{} parameter slots for {} layers", layers.len(), spec.layers.len()));
        }
        for (i, lp) in layers.iter().enumerate() {
            let (w, b) = spec.param_shapes(i)?;
            if lp.weight.as_ref().map(|t| t.shape()) != w || lp.bias.as_ref().map(|t| t.shape()) != b {
                return Err(shape_err!("layer {i} ({}) parameters do not match the spec", spec.layers[i].name()));
            }
        }
        Ok(ModelParams { spec, layers, meta: RunMeta::default() })
    }

    pub fn n_classes(&self) -> usize {
        self.spec.n_classes()
    }

    fn check_input(&self, x: &Tensor<S>) -> Result<()> {
        let [_, c, h, w] = x.shape();
        if [c, h, w] != self.spec.input {
            return Err(shape_err!("input {:?} does not match model input {:?}", x.shape(), self.spec.input));
        }
        Ok(())
    }

    fn weight(&self, i: usize) -> &Tensor<S> {
        self.layers[i].weight.as_ref().expect("validated at construction")
    }

    fn layer_forward(
        &self,
        i: usize,
        x: Tensor<S>,
        mode: &mut Mode<'_>,
        keep: bool,
    ) -> Result<(Tensor<S>, Option<LayerCache<S>>)> {
        Ok(match self.spec.layers[i] {
            LayerSpec::Conv { .. } => {
                let y = layers::conv2d_forward(&x, self.weight(i))?;
                (y, keep.then_some(LayerCache::Conv { input: x }))
            }
            LayerSpec::Relu => {
                let (y, mask) = layers::relu_forward(&x);
                (y, keep.then_some(LayerCache::Relu { mask }))
            }
            LayerSpec::MaxPool => {
                let (y, sw) = layers::maxpool2_forward(&x)?;
                (y, keep.then_some(LayerCache::MaxPool(sw)))
            }
            LayerSpec::QuadrantPool => {
                let input_shape = x.shape();
                (layers::quadrantpool_forward(&x)?, keep.then_some(LayerCache::QuadrantPool { input_shape }))
            }
            LayerSpec::FullyConnected { units, .. } => {
                let zero;
                let bias = match &self.layers[i].bias {
                    Some(b) => b,
                    None => {
                        zero = Tensor::zeros([1, 1, 1, units]);
                        &zero
                    }
                };
                let y = layers::dense_forward(&x, self.weight(i), bias)?;
                (y, keep.then_some(LayerCache::Dense { input: x }))
            }
            LayerSpec::Dropout { rate } => match mode {
                Mode::Train(rng) => {
                    let (y, mask) = layers::dropout_train(&x, rate, rng)?;
                    (y, keep.then_some(LayerCache::Dropout { mask }))
                }
                Mode::Eval => (x, keep.then_some(LayerCache::Dropout { mask: None })),
            },
            LayerSpec::Softmax => (x, keep.then_some(LayerCache::Softmax)),
        })
    }

    /// Forward pass to the logits (the input of the softmax layer), keeping
    /// every cache the backward pass needs.
    pub fn forward(&self, x: Tensor<S>, mut mode: Mode<'_>) -> Result<(Tensor<S>, ForwardCache<S>)> {
        self.check_input(&x)?;
        let mut caches = Vec::with_capacity(self.spec.layers.len());
        let mut cur = x;
        for i in 0..self.spec.layers.len() {
            let (y, cache) = self.layer_forward(i, cur, &mut mode, true)?;
            caches.push(cache.expect("kept"));
            cur = y;
        }
        Ok((cur, ForwardCache { layers: caches }))
    }

    /// Evaluation-mode forward pass that stops after layer `last` and returns
    /// its output. No caches are kept.
    pub fn forward_until(&self, x: Tensor<S>, last: usize) -> Result<Tensor<S>> {
        self.check_input(&x)?;
        if last >= self.spec.layers.len() {
            return Err(usage_err!("layer {last} out of range"));
        }
        let mut cur = x;
        for i in 0..=last {
            cur = self.layer_forward(i, cur, &mut Mode::Eval, false)?.0;
        }
        Ok(cur)
    }

    /// Evaluation-mode forward pass that also returns every layer output.
    pub fn forward_traced(&self, x: Tensor<S>, last: usize) -> Result<(Vec<Tensor<S>>, ForwardCache<S>)> {
        self.check_input(&x)?;
        if last >= self.spec.layers.len() {
            return Err(usage_err!("layer {last} out of range"));
        }
        let mut outputs = Vec::with_capacity(last + 1);
        let mut caches = Vec::with_capacity(last + 1);
        let mut cur = x;
        for i in 0..=last {
            let (y, cache) = self.layer_forward(i, cur, &mut Mode::Eval, true)?;
            caches.push(cache.expect("kept"));
            outputs.push(y.clone());
            cur = y;
        }
        Ok((outputs, ForwardCache { layers: caches }))
    }

    /// Class probabilities in evaluation mode.
    pub fn predict(&self, x: Tensor<S>) -> Result<Tensor<S>> {
        let logits = self.forward_until(x, self.spec.layers.len() - 1)?;
        layers::softmax(&logits)
    }

    /// Parameter gradients given the gradient of the loss at the logits.
    pub fn backward(&self, cache: ForwardCache<S>, grad_logits: Tensor<S>) -> Result<Vec<LayerParams<S>>> {
        if cache.layers.len() != self.spec.layers.len() {
            return Err(usage_err!("backward needs the cache of a full forward pass"));
        }
        let mut grads: Vec<LayerParams<S>> = (0..self.layers.len()).map(|_| LayerParams::empty()).collect();
        let mut g = grad_logits;
        for (i, c) in cache.layers.into_iter().enumerate().rev() {
            g = match c {
                LayerCache::Softmax => g,
                LayerCache::Dropout { mask } => layers::dropout_backward(&g, mask.as_deref())?,
                LayerCache::Relu { mask } => layers::relu_backward(&g, &mask)?,
                LayerCache::MaxPool(sw) => layers::maxpool2_backward(&g, &sw)?,
                LayerCache::QuadrantPool { input_shape } => layers::quadrantpool_backward(&g, input_shape)?,
                LayerCache::Dense { input } => {
                    let w = self.weight(i);
                    let zero;
                    let bias = match &self.layers[i].bias {
                        Some(b) => b,
                        None => {
                            zero = Tensor::zeros([1, 1, 1, w.shape()[3]]);
                            &zero
                        }
                    };
                    let dg = layers::dense_backward(&input, w, bias, &g)?;
                    grads[i] = LayerParams {
                        weight: Some(dg.weights),
                        bias: self.layers[i].bias.is_some().then_some(dg.bias),
                    };
                    dg.input
                }
                LayerCache::Conv { input } => {
                    let w = self.weight(i);
                    let k = w.shape()[2];
                    grads[i] = LayerParams {
                        weight: Some(layers::conv2d_backward_weights(&input, &g, k)?),
                        bias: None,
                    };
                    if i == 0 {
                        // The input gradient of the first layer is never used.
                        break;
                    }
                    let [_, _, h, wd] = input.shape();
                    layers::conv2d_backward_input(&g, w, h, wd)?
                }
            };
        }
        Ok(grads)
    }

    pub fn convert<T: Scalar>(&self) -> ModelParams<T> {
        ModelParams {
            spec: self.spec.clone(),
            layers: self
                .layers
                .iter()
                .map(|lp| LayerParams {
                    weight: lp.weight.as_ref().map(|t| t.convert()),
                    bias: lp.bias.as_ref().map(|t| t.convert()),
                })
                .collect(),
            meta: self.meta.clone(),
        }
    }

    pub fn bit_eq(&self, other: &Self) -> bool {
        self.spec == other.spec
            && self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.tensors().count() == b.tensors().count() && a.tensors().zip(b.tensors()).all(|(x, y)| x.bit_eq(y))
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_size_shape_pipeline() {
        let spec = ModelSpec::standard(8);
        let shapes = spec.output_shapes().unwrap();
        let spatial: Vec<usize> = shapes.iter().map(|s| s[1]).collect();
        assert_eq!(&spatial[..9], &[92, 92, 46, 42, 42, 21, 17, 17, 2]);
        assert_eq!(shapes[8], [256, 2, 2]);
        assert_eq!(shapes[9], [300, 1, 1]);
        assert_eq!(shapes[12], [8, 1, 1]);
        assert_eq!(spec.param_shapes(9).unwrap().0, Some([1, 1, 1024, 300]));
        assert_eq!(
            spec.parameter_count().unwrap(),
            64 * 25 + 128 * 64 * 25 + 256 * 128 * 25 + 1024 * 300 + 300 + 300 * 8 + 8
        );
        assert_eq!(spec.conv_index(3), Some(6));
        assert_eq!(spec.conv_relu_index(3), Some(7));
    }

    #[test]
    fn too_small_input_errors_at_construction() {
        let mut spec = ModelSpec::standard(6);
        spec.input = [1, 28, 28];
        assert!(matches!(spec.output_shapes(), Err(crate::Error::Shape(_))));
        let mut spec = ModelSpec::standard(6);
        spec.layers.pop();
        assert!(spec.output_shapes().is_err());
    }
}
