use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{
    self, Activation, BatchNormCache, ConvSpec, DropoutMask, LayerParams, Mode, PoolIndices,
};
use crate::rng::RngState;
use crate::tensor::{Shape, Tensor};

/// Architecture-level description of one layer; enough to rebuild it and
/// to check the shape of every parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerKind {
    Conv { spec: ConvSpec },
    TransposedConv { spec: ConvSpec },
    BatchNorm { channels: usize },
    Activation { activation: Activation },
    ChannelwiseFc { channels: usize, size: usize },
    Linear { inputs: usize, outputs: usize },
    Reshape { c: usize, h: usize, w: usize },
    Dropout { rate: f64 },
    MaxPool { kernel: usize, stride: usize },
}

impl LayerKind {
    /// Output shape for a given input shape, validating the input.
    pub fn output_shape(&self, s: Shape) -> Result<Shape> {
        let need_channels = |c: usize| -> Result<()> {
            if s.c != c {
                return Err(Error::InvalidShape(format!(
                    "{self:?} expects {c} channels, got input {s}"
                )));
            }
            Ok(())
        };
        match self {
            LayerKind::Conv { spec } => {
                need_channels(spec.in_channels)?;
                let (h, w) = spec.conv_output_hw(s.h, s.w)?;
                Ok(Shape::new(s.n, spec.out_channels, h, w))
            }
            LayerKind::TransposedConv { spec } => {
                need_channels(spec.in_channels)?;
                let (h, w) = spec.transposed_output_hw(s.h, s.w)?;
                Ok(Shape::new(s.n, spec.out_channels, h, w))
            }
            LayerKind::BatchNorm { channels } => {
                need_channels(*channels)?;
                Ok(s)
            }
            LayerKind::ChannelwiseFc { channels, size } => {
                need_channels(*channels)?;
                if (s.h, s.w) != (*size, *size) {
                    return Err(Error::InvalidShape(format!(
                        "channel-wise layer expects {size}x{size} maps, got {s}"
                    )));
                }
                Ok(s)
            }
            LayerKind::Linear { inputs, outputs } => {
                if s.item_len() != *inputs {
                    return Err(Error::InvalidShape(format!(
                        "linear layer expects {inputs} features, got {s}"
                    )));
                }
                Ok(Shape::new(s.n, *outputs, 1, 1))
            }
            LayerKind::Reshape { c, h, w } => {
                if s.item_len() != c * h * w {
                    return Err(Error::InvalidShape(format!("cannot reshape {s} to ({c}, {h}, {w})")));
                }
                Ok(Shape::new(s.n, *c, *h, *w))
            }
            LayerKind::MaxPool { kernel, stride } => {
                if *kernel > s.h || *kernel > s.w {
                    return Err(Error::InvalidShape(format!("pool window {kernel} exceeds {s}")));
                }
                Ok(Shape::new(
                    s.n,
                    s.c,
                    (s.h - kernel) / stride + 1,
                    (s.w - kernel) / stride + 1,
                ))
            }
            LayerKind::Activation { .. } | LayerKind::Dropout { .. } => Ok(s),
        }
    }

    /// Freshly initialized parameters for this layer, if it has any.
    fn init_params(&self, name: &str, rng: &mut RngState) -> Option<LayerParams> {
        match self {
            LayerKind::Conv { spec } => Some(LayerParams::gaussian(
                name,
                spec.conv_weight_shape(),
                Some(spec.bias_shape()),
                rng,
            )),
            LayerKind::TransposedConv { spec } => Some(LayerParams::gaussian(
                name,
                spec.transposed_weight_shape(),
                Some(spec.bias_shape()),
                rng,
            )),
            LayerKind::BatchNorm { channels } => Some(LayerParams::batchnorm(name, *channels)),
            LayerKind::ChannelwiseFc { channels, size } => Some(LayerParams::gaussian(
                name,
                Shape::new(1, *channels, size * size, size * size),
                Some(Shape::new(1, *channels, *size, *size)),
                rng,
            )),
            LayerKind::Linear { inputs, outputs } => Some(LayerParams::gaussian(
                name,
                Shape::new(1, 1, *outputs, *inputs),
                Some(Shape::new(1, *outputs, 1, 1)),
                rng,
            )),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
enum Cache {
    Empty,
    Input(Tensor),
    Activation { input: Tensor, output: Tensor },
    BatchNorm(BatchNormCache),
    Dropout(DropoutMask),
    Pool(PoolIndices, Shape),
    Reshape(Shape),
}

#[derive(Debug, Clone)]
pub struct Layer {
    pub kind: LayerKind,
    pub params: Option<LayerParams>,
    cache: Cache,
}

impl Layer {
    fn name(&self, index: usize) -> String {
        self.params
            .as_ref()
            .map_or_else(|| index.to_string(), |p| p.name.clone())
    }

    fn forward(&mut self, x: &Tensor, mode: Mode, rng: &mut RngState) -> Result<Tensor> {
        let train = mode == Mode::Train;
        let keep = |t: &Tensor| if train { Cache::Input(t.detached()) } else { Cache::Empty };
        let params = self.params.as_mut();
        let (y, cache) = match (&self.kind, params) {
            (LayerKind::Conv { spec }, Some(p)) => (layers::conv2d(x, p, spec)?, keep(x)),
            (LayerKind::TransposedConv { spec }, Some(p)) => {
                (layers::transposed_conv2d(x, p, spec)?, keep(x))
            }
            (LayerKind::BatchNorm { .. }, Some(p)) => {
                if train {
                    let (y, c) = layers::batchnorm2d_train(x, p)?;
                    (y, Cache::BatchNorm(c))
                } else {
                    (layers::batchnorm2d_eval(x, p)?, Cache::Empty)
                }
            }
            (LayerKind::ChannelwiseFc { .. }, Some(p)) => (layers::channelwise_fc(x, p)?, keep(x)),
            (LayerKind::Linear { .. }, Some(p)) => (layers::linear(x, p)?, keep(x)),
            (LayerKind::Activation { activation }, None) => {
                let y = layers::activation_forward(x, *activation);
                let cache = if train {
                    Cache::Activation {
                        input: x.detached(),
                        output: y.clone(),
                    }
                } else {
                    Cache::Empty
                };
                (y, cache)
            }
            (LayerKind::Dropout { rate }, None) => {
                let (y, m) = layers::dropout(x, *rate, rng, mode)?;
                (y, if train { Cache::Dropout(m) } else { Cache::Empty })
            }
            (LayerKind::MaxPool { kernel, stride }, None) => {
                let (y, idx) = layers::maxpool2d(x, *kernel, *stride)?;
                (y, if train { Cache::Pool(idx, x.shape()) } else { Cache::Empty })
            }
            (LayerKind::Reshape { c, h, w }, None) => {
                let y = x.reshape(Shape::new(x.shape().n, *c, *h, *w))?;
                (y, if train { Cache::Reshape(x.shape()) } else { Cache::Empty })
            }
            (kind, _) => {
                return Err(Error::InvalidArgument(format!(
                    "layer {kind:?} has inconsistent parameters"
                )))
            }
        };
        self.cache = cache;
        Ok(y)
    }

    fn backward(&mut self, dy: &Tensor, index: usize) -> Result<Tensor> {
        let missing = || Error::MissingCache(index.to_string());
        let cache = std::mem::replace(&mut self.cache, Cache::Empty);
        match (&self.kind, self.params.as_mut(), cache) {
            (LayerKind::Conv { spec }, Some(p), Cache::Input(x)) => {
                let g = layers::conv2d_backward(&x, p, spec, dy)?;
                p.weight.accumulate_grad(g.dweight.data());
                if let (Some(b), Some(db)) = (p.bias.as_mut(), g.dbias) {
                    b.accumulate_grad(db.data());
                }
                Ok(g.dx)
            }
            (LayerKind::TransposedConv { spec }, Some(p), Cache::Input(x)) => {
                let g = layers::transposed_conv2d_backward(&x, p, spec, dy)?;
                p.weight.accumulate_grad(g.dweight.data());
                if let (Some(b), Some(db)) = (p.bias.as_mut(), g.dbias) {
                    b.accumulate_grad(db.data());
                }
                Ok(g.dx)
            }
            (LayerKind::BatchNorm { .. }, Some(p), Cache::BatchNorm(c)) => {
                let g = layers::batchnorm2d_backward(&c, p, dy)?;
                p.weight.accumulate_grad(g.dgamma.data());
                if let Some(b) = p.bias.as_mut() {
                    b.accumulate_grad(g.dbeta.data());
                }
                Ok(g.dx)
            }
            (LayerKind::ChannelwiseFc { .. }, Some(p), Cache::Input(x)) => {
                let g = layers::channelwise_fc_backward(&x, p, dy)?;
                p.weight.accumulate_grad(g.dweight.data());
                if let Some(b) = p.bias.as_mut() {
                    b.accumulate_grad(g.dbias.data());
                }
                Ok(g.dx)
            }
            (LayerKind::Linear { .. }, Some(p), Cache::Input(x)) => {
                let g = layers::linear_backward(&x, p, dy)?;
                p.weight.accumulate_grad(g.dweight.data());
                if let Some(b) = p.bias.as_mut() {
                    b.accumulate_grad(g.dbias.data());
                }
                Ok(g.dx)
            }
            (LayerKind::Activation { activation }, None, Cache::Activation { input, output }) => {
                layers::activation_backward(*activation, &input, &output, dy)
            }
            (LayerKind::Dropout { .. }, None, Cache::Dropout(m)) => layers::dropout_backward(&m, dy),
            (LayerKind::MaxPool { .. }, None, Cache::Pool(idx, shape)) => {
                layers::maxpool2d_backward(&idx, shape, dy)
            }
            (LayerKind::Reshape { .. }, None, Cache::Reshape(shape)) => dy.reshape(shape),
            _ => Err(missing()),
        }
    }
}

/// A feed-forward stack of layers with cached activations for backprop.
#[derive(Debug, Clone)]
pub struct Network {
    name: String,
    layers: Vec<Layer>,
    /// Per-item input shape `(1, C, H, W)`.
    input: Shape,
    /// Layers `[0, embed_end)` produce the context embedding.
    embed_end: Option<usize>,
}

impl Network {
    /// Initialize parameters for `kinds` and validate the shape chain from `input`.
    pub fn build(
        name: impl Into<String>,
        kinds: Vec<LayerKind>,
        input: Shape,
        embed_end: Option<usize>,
        rng: &mut RngState,
    ) -> Result<Self> {
        let name = name.into();
        let input = input.with_batch(1);
        let mut shape = input;
        for k in &kinds {
            shape = k.output_shape(shape)?;
        }
        if let Some(e) = embed_end {
            if e == 0 || e > kinds.len() {
                return Err(Error::InvalidArgument(format!("embedding boundary {e} out of range")));
            }
        }
        let layers = kinds
            .into_iter()
            .enumerate()
            .map(|(i, kind)| {
                let params = kind.init_params(&i.to_string(), rng);
                Layer {
                    kind,
                    params,
                    cache: Cache::Empty,
                }
            })
            .collect();
        Ok(Network {
            name,
            layers,
            input,
            embed_end,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn kinds(&self) -> Vec<LayerKind> {
        self.layers.iter().map(|l| l.kind.clone()).collect()
    }

    pub fn input_shape(&self) -> Shape {
        self.input
    }

    pub fn embed_end(&self) -> Option<usize> {
        self.embed_end
    }

    pub fn output_shape(&self, batch: usize) -> Result<Shape> {
        self.layers
            .iter()
            .try_fold(self.input.with_batch(batch), |s, l| l.kind.output_shape(s))
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let s = x.shape();
        if s.with_batch(1) != self.input || s.n == 0 {
            return Err(Error::ShapeMismatch {
                expected: self.input.with_batch(s.n.max(1)),
                actual: s,
            });
        }
        Ok(())
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode, rng: &mut RngState) -> Result<Tensor> {
        let end = self.layers.len();
        self.forward_prefix(x, end, mode, rng)
    }

    /// Run layers `[0, end)` only.
    pub fn forward_prefix(
        &mut self,
        x: &Tensor,
        end: usize,
        mode: Mode,
        rng: &mut RngState,
    ) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = x.detached();
        for layer in &mut self.layers[..end] {
            h = layer.forward(&h, mode, rng)?;
        }
        Ok(h)
    }

    /// Backpropagate `dy` through the cached train-mode forward pass,
    /// accumulating parameter gradients. Returns the input gradient.
    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let mut g = dy.detached();
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            g = layer.backward(&g, i)?;
        }
        Ok(g)
    }

    pub fn zero_grad(&mut self) {
        for p in self.layers.iter_mut().filter_map(|l| l.params.as_mut()) {
            p.zero_grad();
        }
    }

    /// Learned tensors in a fixed order (layer, then weight before bias).
    pub fn learned_tensors(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .filter_map(|l| l.params.as_ref())
            .flat_map(|p| p.learned())
            .collect()
    }

    pub fn learned_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .filter_map(|l| l.params.as_mut())
            .flat_map(|p| p.learned_mut())
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.learned_tensors().iter().map(|t| t.numel()).sum()
    }

    /// Every persistent tensor (learned parameters and batch-norm running
    /// statistics) under a stable name.
    pub fn state_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            let Some(p) = &l.params else { continue };
            let base = l.name(i);
            out.push((format!("{base}.weight"), p.weight.detached()));
            if let Some(b) = &p.bias {
                out.push((format!("{base}.bias"), b.detached()));
            }
            if let Some(st) = &p.aux {
                let c = st.running_mean.len();
                out.push((
                    format!("{base}.running_mean"),
                    Tensor::from_vec([1, c, 1, 1], st.running_mean.clone()).expect("stat length"),
                ));
                out.push((
                    format!("{base}.running_var"),
                    Tensor::from_vec([1, c, 1, 1], st.running_var.clone()).expect("stat length"),
                ));
            }
        }
        out
    }

    /// Overwrite persistent tensors by name. Every expected tensor must be
    /// present with its exact shape.
    pub fn load_state(&mut self, tensors: &HashMap<String, Tensor>) -> Result<()> {
        let fetch = |name: &str, expected: Shape| -> Result<Tensor> {
            let t = tensors
                .get(name)
                .ok_or_else(|| Error::InvalidArgument(format!("missing tensor {name}")))?;
            if t.shape() != expected {
                return Err(Error::InvalidShape(format!(
                    "tensor {name} has shape {}, architecture needs {expected}",
                    t.shape()
                )));
            }
            Ok(t.detached())
        };
        for (i, l) in self.layers.iter_mut().enumerate() {
            let base = l.name(i);
            let Some(p) = l.params.as_mut() else { continue };
            p.weight = fetch(&format!("{base}.weight"), p.weight.shape())?;
            if let Some(b) = p.bias.as_mut() {
                *b = fetch(&format!("{base}.bias"), b.shape())?;
            }
            if let Some(st) = p.aux.as_mut() {
                let shape = Shape::new(1, st.running_mean.len(), 1, 1);
                st.running_mean = fetch(&format!("{base}.running_mean"), shape)?.into_data();
                st.running_var = fetch(&format!("{base}.running_var"), shape)?.into_data();
            }
        }
        Ok(())
    }
}
