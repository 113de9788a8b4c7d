//! Network descriptions and the runnable layer graph.
//!
//! A [`ModelSpec`] is a pure description: layer kinds and widths, with input
//! channel counts left implicit. [`ModelSpec::build`] walks it once to infer
//! shapes, initialize parameters and hand each stochastic layer its own
//! random stream, producing a [`Network`].
//!
//! Layers are numbered depth first (branch contents included). Layer `i`
//! draws its run-time randomness from stream `i` and its initial weights from
//! stream `INIT_STREAM_BASE + i`, so changing the activation kind changes
//! neither the numbering nor any initial weight.

use crate::error::{mismatch, Error, Result};
use crate::ops::{
    concat_backward, concat_forward, split_backward, Conv2d, ConvSpec, Dense, Dropout, DropoutSpec,
    Pool2d, PoolKind, PoolSpec, Spp, SppSpec,
};
use crate::param::{Param, ParamView};
use crate::rectifier::{ActivationConfig, ActivationLayer, Mode};
use crate::rng::{RngStream, INIT_STREAM_BASE};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub enum LayerDef {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Pool(PoolSpec),
    Dropout(f64),
    /// The model's activation function.
    Activation,
    /// Feeds the input to every branch and concatenates their outputs on the
    /// channel axis.
    Branch(Vec<Vec<LayerDef>>),
    Spp(Vec<usize>),
    Flatten,
    Dense {
        out: usize,
    },
}

impl LayerDef {
    /// `k×k` convolution with stride 1 and same padding.
    pub fn conv(k: usize, out_channels: usize) -> Self {
        LayerDef::Conv {
            out_channels,
            kernel: k,
            stride: 1,
            padding: k / 2,
        }
    }

    pub fn max_pool(k: usize, stride: usize, pad: usize) -> Self {
        LayerDef::Pool(PoolSpec::square(PoolKind::Max, k, stride, pad))
    }

    pub fn avg_pool(k: usize, stride: usize, pad: usize) -> Self {
        LayerDef::Pool(PoolSpec::square(PoolKind::Avg, k, stride, pad))
    }

    fn label(&self, activation: &ActivationConfig) -> String {
        match self {
            LayerDef::Conv { out_channels, kernel, .. } => format!("conv {kernel}x{kernel}, {out_channels}"),
            LayerDef::Pool(p) => {
                let kind = match p.kind {
                    PoolKind::Max => "max",
                    PoolKind::Avg => "avg",
                };
                format!("{}x{} {kind} pool, /{}", p.window.0, p.window.1, p.stride.0)
            }
            LayerDef::Dropout(r) => format!("dropout, {r}"),
            LayerDef::Activation => activation.label(),
            LayerDef::Branch(b) => format!("split: {} branches", b.len()),
            LayerDef::Spp(levels) => format!("spp {levels:?}"),
            LayerDef::Flatten => "flatten".into(),
            LayerDef::Dense { out } => format!("fc, {out}"),
        }
    }
}

/// One row of a shape trace.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceEntry {
    /// Nesting path, e.g. `branch1/conv 3x3, 96`.
    pub label: String,
    pub input: Vec<usize>,
    pub output: Vec<usize>,
    pub is_activation: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub name: String,
    pub layers: Vec<LayerDef>,
    pub num_classes: usize,
    pub activation: ActivationConfig,
    /// Per-example input shape `(C, H, W)`.
    pub input_shape: Shape,
}

impl ModelSpec {
    /// Output shape of every layer for a batch of `batch` inputs, without
    /// allocating parameters.
    pub fn shape_trace(&self, batch: usize) -> Result<Vec<TraceEntry>> {
        let mut dims = vec![batch];
        dims.extend_from_slice(self.input_shape.dims());
        let mut trace = Vec::new();
        let out = trace_layers(&self.layers, dims, "", &self.activation, &mut trace)?;
        if out != [batch, self.num_classes] {
            return Err(mismatch(format!(
                "{} produces {out:?}, expected ({batch}×{})",
                self.name, self.num_classes
            )));
        }
        Ok(trace)
    }

    /// Instantiates the network with parameters initialized from `seed`.
    pub fn build(&self, seed: u64) -> Result<Network> {
        self.activation.validate()?;
        let mut builder = Builder {
            seed,
            next_index: 0,
            activation: self.activation,
        };
        let mut dims = vec![1];
        dims.extend_from_slice(self.input_shape.dims());
        let (mut layers, out) = builder.build_layers(&self.layers, dims)?;
        if out != [1, self.num_classes] {
            return Err(mismatch(format!(
                "{} produces {out:?}, expected (1×{})",
                self.name, self.num_classes
            )));
        }
        if let Some(Layer::Conv(c)) = layers.first_mut() {
            c.needs_input_grad = false;
        }
        Ok(Network {
            name: self.name.clone(),
            layers,
            num_classes: self.num_classes,
            input_shape: self.input_shape.clone(),
        })
    }
}

fn conv_spec(def: &LayerDef, in_channels: usize) -> Option<ConvSpec> {
    match *def {
        LayerDef::Conv {
            out_channels,
            kernel,
            stride,
            padding,
        } => Some(ConvSpec {
            in_channels,
            out_channels,
            kernel: (kernel, kernel),
            stride: (stride, stride),
            padding: (padding, padding),
        }),
        _ => None,
    }
}

fn spatial(dims: &[usize], what: &str) -> Result<(usize, usize, usize, usize)> {
    match *dims {
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(mismatch(format!("{what} needs an NCHW input, got {dims:?}"))),
    }
}

/// Output dims of a single non-branch layer.
fn layer_output(def: &LayerDef, dims: &[usize]) -> Result<Vec<usize>> {
    Ok(match def {
        LayerDef::Conv { .. } => {
            let (n, c, h, w) = spatial(dims, "convolution")?;
            let spec = conv_spec(def, c).expect("conv def");
            let (oh, ow) = spec.output_hw(h, w)?;
            vec![n, spec.out_channels, oh, ow]
        }
        LayerDef::Pool(p) => {
            let (n, c, h, w) = spatial(dims, "pooling")?;
            let (oh, ow) = p.output_hw(h, w)?;
            vec![n, c, oh, ow]
        }
        LayerDef::Dropout(_) | LayerDef::Activation => dims.to_vec(),
        LayerDef::Spp(levels) => {
            let (n, c, h, w) = spatial(dims, "SPP")?;
            let spec = SppSpec::new(levels.clone())?;
            if levels.iter().any(|&l| l > h || l > w) {
                return Err(mismatch(format!("SPP levels {levels:?} exceed the {h}×{w} map")));
            }
            vec![n, spec.output_len(c)]
        }
        LayerDef::Flatten => vec![dims[0], dims[1..].iter().product()],
        LayerDef::Dense { out } => vec![dims[0], *out],
        LayerDef::Branch(_) => unreachable!("branches are traced recursively"),
    })
}

fn trace_layers(
    defs: &[LayerDef],
    mut dims: Vec<usize>,
    prefix: &str,
    activation: &ActivationConfig,
    trace: &mut Vec<TraceEntry>,
) -> Result<Vec<usize>> {
    for def in defs {
        let label = format!("{prefix}{}", def.label(activation));
        let out = match def {
            LayerDef::Branch(branches) => {
                trace.push(TraceEntry {
                    label: label.clone(),
                    input: dims.clone(),
                    output: dims.clone(),
                    is_activation: false,
                });
                let outs = branches
                    .iter()
                    .enumerate()
                    .map(|(i, b)| trace_layers(b, dims.clone(), &format!("{prefix}branch{}/", i + 1), activation, trace))
                    .collect::<Result<Vec<_>>>()?;
                let mut out = outs[0].clone();
                for o in &outs[1..] {
                    if o.len() != out.len() || o[0] != out[0] || o[2..] != out[2..] {
                        return Err(mismatch(format!("branch outputs {outs:?} cannot be concatenated")));
                    }
                    out[1] += o[1];
                }
                let concat = TraceEntry {
                    label: format!("{prefix}channel concat, {}", out[1]),
                    input: dims.clone(),
                    output: out.clone(),
                    is_activation: false,
                };
                trace.push(concat);
                dims = out;
                continue;
            }
            _ => layer_output(def, &dims)?,
        };
        trace.push(TraceEntry {
            label,
            input: dims,
            output: out.clone(),
            is_activation: matches!(def, LayerDef::Activation),
        });
        dims = out;
    }
    Ok(dims)
}

struct Builder {
    seed: u64,
    next_index: u64,
    activation: ActivationConfig,
}

impl Builder {
    fn build_layers(&mut self, defs: &[LayerDef], mut dims: Vec<usize>) -> Result<(Vec<Layer>, Vec<usize>)> {
        let mut layers = Vec::with_capacity(defs.len());
        for def in defs {
            let index = self.next_index;
            self.next_index += 1;
            let layer = match def {
                LayerDef::Conv { .. } => {
                    let (_, c, _, _) = spatial(&dims, "convolution")?;
                    let spec = conv_spec(def, c).expect("conv def");
                    let mut rng = RngStream::new(self.seed, INIT_STREAM_BASE + index);
                    let weights = he_normal(&spec.weight_dims(), spec.patch_len(), &mut rng)?;
                    Layer::Conv(Conv2d::new(spec, weights, vec![0.0; spec.out_channels])?)
                }
                LayerDef::Pool(p) => Layer::Pool(Pool2d::new(*p)),
                LayerDef::Dropout(rate) => Layer::Dropout(Dropout::new(
                    DropoutSpec::new(*rate)?,
                    RngStream::new(self.seed, index),
                )),
                LayerDef::Activation => {
                    let channels = if dims.len() >= 2 { dims[1] } else { 1 };
                    Layer::Activation(ActivationLayer::new(
                        self.activation,
                        channels,
                        RngStream::new(self.seed, index),
                    )?)
                }
                LayerDef::Branch(branches) => {
                    let mut built = Vec::with_capacity(branches.len());
                    let mut channels = Vec::with_capacity(branches.len());
                    for b in branches {
                        let (layers, out) = self.build_layers(b, dims.clone())?;
                        channels.push(out[1]);
                        built.push(layers);
                    }
                    Layer::Branch(Branch {
                        branches: built,
                        channels,
                    })
                }
                LayerDef::Spp(levels) => Layer::Spp(Spp::new(SppSpec::new(levels.clone())?)),
                LayerDef::Flatten => Layer::Flatten(Flatten { input_dims: None }),
                LayerDef::Dense { out } => {
                    let inp: usize = dims[1..].iter().product();
                    let mut rng = RngStream::new(self.seed, INIT_STREAM_BASE + index);
                    let weights = he_normal(&[*out, inp], inp, &mut rng)?;
                    Layer::Dense(Dense::new(weights, vec![0.0; *out])?)
                }
            };
            dims = match def {
                LayerDef::Branch(_) => {
                    let Layer::Branch(b) = &layer else { unreachable!() };
                    let mut d = dims.clone();
                    d[1] = b.channels.iter().sum();
                    d
                }
                _ => layer_output(def, &dims)?,
            };
            layers.push(layer);
        }
        Ok((layers, dims))
    }
}

/// Gaussian weights with standard deviation `sqrt(2 / fan_in)`.
fn he_normal(dims: &[usize], fan_in: usize, rng: &mut RngStream) -> Result<Tensor> {
    let std = (2.0 / fan_in as f64).sqrt();
    let shape = Shape::new(dims.to_vec())?;
    let data = (0..shape.numel()).map(|_| rng.normal(0.0, std)).collect();
    Tensor::from_shape_vec(shape, data)
}

#[derive(Clone, Debug)]
pub struct Flatten {
    input_dims: Option<Vec<usize>>,
}

impl Flatten {
    fn forward(&mut self, x: Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let flat = [dims[0], dims[1..].iter().product()];
        self.input_dims = Some(dims);
        x.reshape(&flat)
    }

    fn backward(&self, grad_out: &Tensor) -> Result<Tensor> {
        let dims = self
            .input_dims
            .as_ref()
            .ok_or(Error::StaleCache("flatten backward before forward"))?;
        grad_out.clone().reshape(dims)
    }
}

#[derive(Clone, Debug)]
pub struct Branch {
    pub branches: Vec<Vec<Layer>>,
    channels: Vec<usize>,
}

#[derive(Clone, Debug)]
pub enum Layer {
    Conv(Conv2d),
    Pool(Pool2d),
    Dropout(Dropout),
    Activation(ActivationLayer),
    Branch(Branch),
    Spp(Spp),
    Flatten(Flatten),
    Dense(Dense),
}

impl Layer {
    pub fn forward(&mut self, x: Tensor, mode: Mode) -> Result<Tensor> {
        match self {
            Layer::Conv(l) => l.forward(x),
            Layer::Pool(l) => l.forward(x),
            Layer::Dropout(l) => Ok(l.forward(x, mode)),
            Layer::Activation(l) => l.forward(x, mode),
            Layer::Branch(b) => {
                let outs = b
                    .branches
                    .iter_mut()
                    .map(|layers| run_forward(layers, x.clone(), mode))
                    .collect::<Result<Vec<_>>>()?;
                concat_forward(&outs)
            }
            Layer::Spp(l) => l.forward(x),
            Layer::Flatten(l) => l.forward(x),
            Layer::Dense(l) => l.forward(x),
        }
    }

    /// Returns `None` only for a layer told not to produce an input gradient.
    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Option<Tensor>> {
        match self {
            Layer::Conv(l) => l.backward(grad_out),
            Layer::Pool(l) => l.backward(grad_out).map(Some),
            Layer::Dropout(l) => l.backward(grad_out).map(Some),
            Layer::Activation(l) => l.backward(grad_out).map(Some),
            Layer::Branch(b) => {
                let parts = concat_backward(grad_out, &b.channels)?;
                let mut grads = Vec::with_capacity(parts.len());
                for (layers, g) in b.branches.iter_mut().zip(parts) {
                    let g = run_backward(layers, g)?
                        .ok_or_else(|| mismatch("branch layers must produce input gradients"))?;
                    grads.push(g);
                }
                split_backward(&grads).map(Some)
            }
            Layer::Spp(l) => l.backward(grad_out).map(Some),
            Layer::Flatten(l) => l.backward(grad_out).map(Some),
            Layer::Dense(l) => l.backward(grad_out).map(Some),
        }
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(ParamView<'_>)) {
        fn view<'a>(name: String, p: &'a mut Param, f: &mut dyn FnMut(ParamView<'_>)) {
            let dims = p.value.dims().to_vec();
            f(ParamView {
                name,
                dims,
                value: p.value.data_mut(),
                grad: p.grad.data_mut(),
                decay: p.decay,
            });
        }
        match self {
            Layer::Conv(l) => {
                view(format!("{prefix}conv.weight"), &mut l.weight, f);
                view(format!("{prefix}conv.bias"), &mut l.bias, f);
            }
            Layer::Dense(l) => {
                view(format!("{prefix}fc.weight"), &mut l.weight, f);
                view(format!("{prefix}fc.bias"), &mut l.bias, f);
            }
            Layer::Activation(l) => {
                if let Some(s) = l.prelu_state_mut() {
                    f(ParamView {
                        name: format!("{prefix}prelu.slope"),
                        dims: vec![s.slopes.len()],
                        value: &mut s.slopes,
                        grad: &mut s.slope_grads,
                        decay: false,
                    });
                }
            }
            Layer::Branch(b) => {
                for (i, layers) in b.branches.iter_mut().enumerate() {
                    for (j, l) in layers.iter_mut().enumerate() {
                        l.visit_params(&format!("{prefix}branch{}.{j}.", i + 1), f);
                    }
                }
            }
            Layer::Pool(_) | Layer::Dropout(_) | Layer::Spp(_) | Layer::Flatten(_) => {}
        }
    }

    fn visit_activations(&self, f: &mut dyn FnMut(&ActivationLayer)) {
        match self {
            Layer::Activation(a) => f(a),
            Layer::Branch(b) => b.branches.iter().flatten().for_each(|l| l.visit_activations(f)),
            _ => {}
        }
    }
}

fn run_forward(layers: &mut [Layer], mut x: Tensor, mode: Mode) -> Result<Tensor> {
    for l in layers {
        x = l.forward(x, mode)?;
    }
    Ok(x)
}

fn run_backward(layers: &mut [Layer], grad: Tensor) -> Result<Option<Tensor>> {
    let mut g = Some(grad);
    for l in layers.iter_mut().rev() {
        let Some(cur) = g else {
            return Err(mismatch("a layer without an input gradient must come first"));
        };
        g = l.backward(&cur)?;
    }
    Ok(g)
}

/// A built network: forward to logits, backward from the logit gradient.
#[derive(Clone, Debug)]
pub struct Network {
    pub name: String,
    pub layers: Vec<Layer>,
    pub num_classes: usize,
    /// Per-example input shape `(C, H, W)`.
    pub input_shape: Shape,
}

impl Network {
    /// Assembles a network from already-built layers.
    pub fn from_layers(name: &str, layers: Vec<Layer>, num_classes: usize, input_shape: Shape) -> Self {
        Network {
            name: name.into(),
            layers,
            num_classes,
            input_shape,
        }
    }

    pub fn forward(&mut self, x: Tensor, mode: Mode) -> Result<Tensor> {
        if x.dims().get(1..) != Some(self.input_shape.dims()) {
            return Err(mismatch(format!(
                "{} expects inputs N×{:?}, got {:?}",
                self.name,
                self.input_shape,
                x.shape()
            )));
        }
        run_forward(&mut self.layers, x, mode)
    }

    /// Accumulates parameter gradients for the most recent forward.
    pub fn backward(&mut self, grad_logits: Tensor) -> Result<()> {
        run_backward(&mut self.layers, grad_logits).map(|_| ())
    }

    pub fn zero_grads(&mut self) {
        self.visit_params(&mut |p| p.grad.fill(0.0));
    }

    /// Visits every trainable parameter in a fixed depth-first order.
    pub fn visit_params(&mut self, f: &mut dyn FnMut(ParamView<'_>)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_params(&format!("{i}."), f);
        }
    }

    pub fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.value.len());
        n
    }

    /// Flat copy of every parameter value, in visiting order.
    pub fn param_values(&mut self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit_params(&mut |p| out.extend_from_slice(p.value));
        out
    }

    pub fn visit_activations(&self, f: &mut dyn FnMut(&ActivationLayer)) {
        for l in &self.layers {
            l.visit_activations(f);
        }
    }
}
