//! The CFO regression network: a 1-D convolutional trunk reduced to a
//! 512-d descriptor by global average pooling, followed by a three-layer
//! fully connected head.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::error::{NnError, Result};
use crate::ops::{self, Activation, ConvSpec, Mode};
use crate::real::Real;
use crate::tensor::{Act, Tensor};

pub const BIAS_INIT: f64 = 0.1;
pub const DEFAULT_DROPOUT: [f64; 2] = [0.3, 0.25];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamKind {
    Weight,
    Bias,
    BnScale,
    BnShift,
}

/// Freeze/fine-tune split: the trunk (convolutions and their batch norms)
/// versus the three fully connected layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Conv,
    Fc,
}

#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub kind: ParamKind,
    pub group: ParamGroup,
    pub tensor: Tensor<T>,
}

impl<T: Real> Param<T> {
    fn new(name: String, kind: ParamKind, group: ParamGroup, tensor: Tensor<T>) -> Self {
        Self { name, kind, group, tensor }
    }
}

/// Structural description of one layer; the architecture hash is derived
/// from the list of these.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerDesc {
    Conv(ConvSpec),
    BatchNorm(usize),
    Act(Activation),
    GlobalAvgPool,
    Linear { inputs: usize, outputs: usize },
    Dropout(f64),
}

impl fmt::Display for LayerDesc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerDesc::Conv(s) => write!(
                f,
                "conv({}->{},k{},s{},p{},g{})",
                s.in_ch, s.out_ch, s.kernel, s.stride, s.padding, s.groups
            ),
            LayerDesc::BatchNorm(c) => write!(f, "bn({c})"),
            LayerDesc::Act(Activation::Gelu) => write!(f, "gelu"),
            LayerDesc::Act(Activation::Silu) => write!(f, "silu"),
            LayerDesc::GlobalAvgPool => write!(f, "avgpool"),
            LayerDesc::Linear { inputs, outputs } => write!(f, "fc({inputs}->{outputs})"),
            // Rates do not change the parameter layout.
            LayerDesc::Dropout(_) => write!(f, "dropout"),
        }
    }
}

pub fn trunk_layout() -> Vec<LayerDesc> {
    use LayerDesc::*;
    vec![
        Conv(ConvSpec::new(1, 64, 7, 1, 3, 1)),
        BatchNorm(64),
        Act(Activation::Gelu),
        Conv(ConvSpec::new(64, 128, 5, 2, 2, 1)),
        BatchNorm(128),
        Act(Activation::Gelu),
        Conv(ConvSpec::depthwise(128, 3, 1)),
        Conv(ConvSpec::pointwise(128, 256)),
        BatchNorm(256),
        Act(Activation::Gelu),
        Conv(ConvSpec::depthwise(256, 3, 1)),
        Conv(ConvSpec::pointwise(256, 512)),
        BatchNorm(512),
        Act(Activation::Gelu),
        GlobalAvgPool,
    ]
}

pub fn head_layout(dropout: [f64; 2]) -> Vec<LayerDesc> {
    use LayerDesc::*;
    vec![
        Linear { inputs: 512, outputs: 256 },
        Act(Activation::Gelu),
        Dropout(dropout[0]),
        Linear { inputs: 256, outputs: 128 },
        Act(Activation::Silu),
        Dropout(dropout[1]),
        Linear { inputs: 128, outputs: 1 },
    ]
}

/// SHA-256 of the layer list, one descriptor per line.
pub fn architecture_hash(layers: &[LayerDesc]) -> [u8; 32] {
    let text: String = layers.iter().map(|l| format!("{l}\n")).collect();
    Sha256::digest(text.as_bytes()).into()
}

/// Hash of the standard network.
pub fn standard_architecture_hash() -> [u8; 32] {
    let mut layers = trunk_layout();
    layers.extend(head_layout(DEFAULT_DROPOUT));
    architecture_hash(&layers)
}

enum Layer<T> {
    Conv {
        spec: ConvSpec,
        weight: Param<T>,
        bias: Param<T>,
        need_dx: bool,
        cache: Option<ops::ConvCache<T>>,
    },
    BatchNorm {
        gamma: Param<T>,
        beta: Param<T>,
        running_mean: Tensor<T>,
        running_var: Tensor<T>,
        cache: Option<ops::BnCache<T>>,
    },
    Act {
        kind: Activation,
        cache: Option<ops::ActCache<T>>,
    },
    Pool {
        len: usize,
    },
    Linear {
        outputs: usize,
        weight: Param<T>,
        bias: Param<T>,
        input: Option<Act<T>>,
    },
    Dropout {
        p: f64,
        mask: Option<Vec<T>>,
    },
}

impl<T: Real> Layer<T> {
    fn build(desc: &LayerDesc, index: usize, group: ParamGroup, first: bool) -> Self {
        let name = |s: &str| format!("{index}.{s}");
        match *desc {
            LayerDesc::Conv(spec) => Layer::Conv {
                spec,
                weight: Param::new(name("weight"), ParamKind::Weight, group, Tensor::zeros(&spec.weight_shape())),
                bias: Param::new(name("bias"), ParamKind::Bias, group, Tensor::zeros(&[spec.out_ch])),
                need_dx: !first,
                cache: None,
            },
            LayerDesc::BatchNorm(c) => Layer::BatchNorm {
                gamma: Param::new(name("gamma"), ParamKind::BnScale, group, Tensor::full(&[c], T::one())),
                beta: Param::new(name("beta"), ParamKind::BnShift, group, Tensor::zeros(&[c])),
                running_mean: Tensor::zeros(&[c]),
                running_var: Tensor::full(&[c], T::one()),
                cache: None,
            },
            LayerDesc::Act(kind) => Layer::Act { kind, cache: None },
            LayerDesc::GlobalAvgPool => Layer::Pool { len: 0 },
            LayerDesc::Linear { inputs, outputs } => Layer::Linear {
                outputs,
                weight: Param::new(name("weight"), ParamKind::Weight, group, Tensor::zeros(&[outputs, inputs])),
                bias: Param::new(name("bias"), ParamKind::Bias, group, Tensor::zeros(&[outputs])),
                input: None,
            },
            LayerDesc::Dropout(p) => Layer::Dropout { p, mask: None },
        }
    }

    fn forward<R: Rng + ?Sized>(&mut self, x: Act<T>, mode: Mode, rng: &mut R, record: bool) -> Result<Act<T>> {
        match self {
            Layer::Conv { spec, weight, bias, cache, .. } => {
                let (y, c) = ops::conv1d_forward_owned(x, &weight.tensor.data, &bias.tensor.data, spec)?;
                *cache = record.then_some(c);
                Ok(y)
            }
            Layer::BatchNorm { gamma, beta, running_mean, running_var, cache } => {
                let (y, c) = ops::batchnorm_forward(
                    &x,
                    &gamma.tensor.data,
                    &beta.tensor.data,
                    &mut running_mean.data,
                    &mut running_var.data,
                    mode,
                )?;
                *cache = record.then_some(c);
                Ok(y)
            }
            Layer::Act { kind, cache } => {
                let (data, c) = ops::activation_forward(*kind, &x.data);
                *cache = record.then_some(c);
                Ok(Act { data, ..x })
            }
            Layer::Pool { len } => {
                *len = x.len;
                ops::avg_pool_forward(&x)
            }
            Layer::Linear { outputs, weight, bias, input } => {
                let y = ops::linear_forward(&x, &weight.tensor.data, &bias.tensor.data, *outputs)?;
                *input = record.then_some(x);
                Ok(y)
            }
            Layer::Dropout { p, mask } => {
                let (data, m) = ops::dropout_forward(&x.data, *p, mode, rng)?;
                *mask = m;
                Ok(Act { data, ..x })
            }
        }
    }

    /// Accumulates parameter gradients and returns the input gradient
    /// (`None` for a first layer that does not need one).
    fn backward(&mut self, dy: Act<T>) -> Result<Option<Act<T>>> {
        let missing = || NnError::Shape("backward called without a recorded forward pass".into());
        match self {
            Layer::Conv { spec, weight, bias, need_dx, cache } => {
                let c = cache.as_ref().ok_or_else(missing)?;
                let g = ops::conv1d_backward(c, &weight.tensor.data, &dy, spec, *need_dx)?;
                weight.tensor.accumulate_grad(&g.dweight);
                bias.tensor.accumulate_grad(&g.dbias);
                Ok(g.dx)
            }
            Layer::BatchNorm { gamma, beta, cache, .. } => {
                let c = cache.as_ref().ok_or_else(missing)?;
                let g = ops::batchnorm_backward(c, &gamma.tensor.data, &dy)?;
                gamma.tensor.accumulate_grad(&g.dgamma);
                beta.tensor.accumulate_grad(&g.dbeta);
                Ok(Some(g.dx))
            }
            Layer::Act { cache, .. } => {
                let c = cache.as_ref().ok_or_else(missing)?;
                let data = ops::activation_backward(c, &dy.data);
                Ok(Some(Act { data, ..dy }))
            }
            Layer::Pool { len } => Ok(Some(ops::avg_pool_backward(&dy, *len))),
            Layer::Linear { weight, bias, input, .. } => {
                let x = input.as_ref().ok_or_else(missing)?;
                let g = ops::linear_backward(x, &weight.tensor.data, &dy)?;
                weight.tensor.accumulate_grad(&g.dweight);
                bias.tensor.accumulate_grad(&g.dbias);
                Ok(Some(g.dx))
            }
            Layer::Dropout { mask, .. } => {
                let data = ops::dropout_backward(mask.as_deref(), &dy.data);
                Ok(Some(Act { data, ..dy }))
            }
        }
    }

    fn params(&self) -> Vec<&Param<T>> {
        match self {
            Layer::Conv { weight, bias, .. } | Layer::Linear { weight, bias, .. } => vec![weight, bias],
            Layer::BatchNorm { gamma, beta, .. } => vec![gamma, beta],
            _ => Vec::new(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        match self {
            Layer::Conv { weight, bias, .. } | Layer::Linear { weight, bias, .. } => vec![weight, bias],
            Layer::BatchNorm { gamma, beta, .. } => vec![gamma, beta],
            _ => Vec::new(),
        }
    }

    fn buffers(&self) -> Vec<&Tensor<T>> {
        match self {
            Layer::BatchNorm { running_mean, running_var, .. } => vec![running_mean, running_var],
            _ => Vec::new(),
        }
    }

    fn clear_cache(&mut self) {
        match self {
            Layer::Conv { cache, .. } => *cache = None,
            Layer::BatchNorm { cache, .. } => *cache = None,
            Layer::Act { cache, .. } => *cache = None,
            Layer::Linear { input, .. } => *input = None,
            Layer::Dropout { mask, .. } => *mask = None,
            Layer::Pool { .. } => {}
        }
    }
}

/// Named array in a model's persistent state (parameters and batch-norm
/// running statistics), in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray<T> {
    pub name: String,
    pub group: ParamGroup,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

pub struct CfoNet<T> {
    trunk: Vec<Layer<T>>,
    head: Vec<Layer<T>>,
    layout: Vec<LayerDesc>,
}

impl<T: Real> CfoNet<T> {
    /// Standard network with zeroed parameters; call [`CfoNet::he_init`].
    pub fn zeroed(dropout: [f64; 2]) -> Result<Self> {
        for p in dropout {
            if !(0.0..1.0).contains(&p) {
                return Err(NnError::Config(format!("dropout rate {p} outside [0, 1)")));
            }
        }
        Ok(Self::from_layout(trunk_layout(), head_layout(dropout)))
    }

    /// He-initialized standard network.
    pub fn new<R: Rng + ?Sized>(dropout: [f64; 2], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeroed(dropout)?;
        net.he_init(rng);
        Ok(net)
    }

    /// Arbitrary layer stack, used for small test networks. The head must
    /// consist of layers that act on pooled `C × B × 1` activations.
    pub fn from_layout(trunk: Vec<LayerDesc>, head: Vec<LayerDesc>) -> Self {
        let mut index = 0;
        let mut build = |descs: &[LayerDesc], group| {
            descs
                .iter()
                .map(|d| {
                    let l = Layer::build(d, index, group, index == 0);
                    index += 1;
                    l
                })
                .collect::<Vec<_>>()
        };
        let trunk_layers = build(&trunk, ParamGroup::Conv);
        let head_layers = build(&head, ParamGroup::Fc);
        let mut layout = trunk;
        layout.extend(head);
        Self { trunk: trunk_layers, head: head_layers, layout }
    }

    pub fn layout(&self) -> &[LayerDesc] {
        &self.layout
    }

    pub fn architecture_hash(&self) -> [u8; 32] {
        architecture_hash(&self.layout)
    }

    /// Weights ~ N(0, 2 / fan_out) with `fan_out = out_channels · kernel`
    /// for convolutions and `out_features` for linear layers; every bias
    /// is 0.1. Batch-norm scale and shift start at 1 and 0.
    pub fn he_init<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for layer in self.trunk.iter_mut().chain(self.head.iter_mut()) {
            let (weight, bias, fan_out) = match layer {
                Layer::Conv { spec, weight, bias, .. } => (weight, bias, spec.out_ch * spec.kernel),
                Layer::Linear { outputs, weight, bias, .. } => (weight, bias, *outputs),
                _ => continue,
            };
            let normal = Normal::new(0.0, (2.0 / fan_out as f64).sqrt()).expect("positive std");
            weight.tensor.data.iter_mut().for_each(|w| *w = T::lit(normal.sample(rng)));
            bias.tensor.data.iter_mut().for_each(|b| *b = T::lit(BIAS_INIT));
        }
    }

    fn run<R: Rng + ?Sized>(layers: &mut [Layer<T>], mut x: Act<T>, mode: Mode, rng: &mut R, record: bool) -> Result<Act<T>> {
        for layer in layers {
            x = layer.forward(x, mode, rng, record)?;
        }
        Ok(x)
    }

    fn check_input(x: &Act<T>) -> Result<()> {
        if x.channels != 1 || x.batch == 0 {
            return Err(NnError::Shape(format!(
                "model input must be B x 1 x L with B > 0, got {} channels, batch {}",
                x.channels, x.batch
            )));
        }
        Ok(())
    }

    /// Trunk output: pooled descriptors as a `512 × B × 1` activation.
    pub fn forward_trunk<R: Rng + ?Sized>(&mut self, x: Act<T>, mode: Mode, rng: &mut R, record: bool) -> Result<Act<T>> {
        Self::check_input(&x)?;
        Self::run(&mut self.trunk, x, mode, rng, record)
    }

    pub fn forward_head<R: Rng + ?Sized>(&mut self, f: Act<T>, mode: Mode, rng: &mut R, record: bool) -> Result<Act<T>> {
        Self::run(&mut self.head, f, mode, rng, record)
    }

    /// Full forward pass recording everything needed by [`CfoNet::backward`].
    /// Returns one prediction per batch item.
    pub fn forward<R: Rng + ?Sized>(&mut self, x: Act<T>, mode: Mode, rng: &mut R) -> Result<Vec<T>> {
        let f = self.forward_trunk(x, mode, rng, true)?;
        Ok(self.forward_head(f, mode, rng, true)?.data)
    }

    /// Evaluation-mode prediction without recording caches.
    pub fn predict(&mut self, x: Act<T>) -> Result<Vec<T>> {
        // Evaluation mode never draws from the generator.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let f = self.forward_trunk(x, Mode::Eval, &mut rng, false)?;
        Ok(self.forward_head(f, Mode::Eval, &mut rng, false)?.data)
    }

    /// Backpropagates `d loss / d prediction` through head and trunk.
    pub fn backward(&mut self, dpred: &[T]) -> Result<()> {
        let df = self.backward_head(dpred)?;
        let mut g = Some(df);
        for layer in self.trunk.iter_mut().rev() {
            let dy = g.take().expect("only the first layer omits its input gradient");
            g = layer.backward(dy)?;
        }
        Ok(())
    }

    /// Backpropagates through the head only; returns the gradient with
    /// respect to the pooled descriptor.
    pub fn backward_head(&mut self, dpred: &[T]) -> Result<Act<T>> {
        let mut g = Act::new(1, dpred.len(), 1, dpred.to_vec())?;
        for layer in self.head.iter_mut().rev() {
            g = layer.backward(g)?.ok_or_else(|| NnError::Shape("head layer returned no gradient".into()))?;
        }
        Ok(g)
    }

    pub fn clear_caches(&mut self) {
        self.trunk.iter_mut().chain(self.head.iter_mut()).for_each(Layer::clear_cache);
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.trunk.iter().chain(&self.head).flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.trunk.iter_mut().chain(self.head.iter_mut()).flat_map(Layer::params_mut).collect()
    }

    pub fn group_params_mut(&mut self, group: ParamGroup) -> Vec<&mut Param<T>> {
        self.params_mut().into_iter().filter(|p| p.group == group).collect()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(|p| p.tensor.zero_grad());
    }

    pub fn param_count(&self, group: ParamGroup) -> usize {
        self.params().iter().filter(|p| p.group == group).map(|p| p.tensor.len()).sum()
    }

    /// Parameters followed by running statistics, layer by layer.
    pub fn state(&self) -> Vec<NamedArray<T>> {
        let mut out = Vec::new();
        for (i, layer) in self.trunk.iter().chain(&self.head).enumerate() {
            for p in layer.params() {
                out.push(NamedArray {
                    name: p.name.clone(),
                    group: p.group,
                    shape: p.tensor.shape().to_vec(),
                    data: p.tensor.data.clone(),
                });
            }
            let group = if i < self.trunk.len() { ParamGroup::Conv } else { ParamGroup::Fc };
            for (b, suffix) in layer.buffers().into_iter().zip(["running_mean", "running_var"]) {
                out.push(NamedArray {
                    name: format!("{i}.{suffix}"),
                    group,
                    shape: b.shape().to_vec(),
                    data: b.data.clone(),
                });
            }
        }
        out
    }

    /// Restores arrays produced by [`CfoNet::state`] on an identical layout.
    pub fn load_state(&mut self, state: &[NamedArray<T>]) -> Result<()> {
        let mut slots: Vec<(String, &mut Tensor<T>)> = Vec::new();
        for (i, layer) in self.trunk.iter_mut().chain(self.head.iter_mut()).enumerate() {
            if let Layer::BatchNorm { gamma, beta, running_mean, running_var, .. } = layer {
                slots.push((gamma.name.clone(), &mut gamma.tensor));
                slots.push((beta.name.clone(), &mut beta.tensor));
                slots.push((format!("{i}.running_mean"), running_mean));
                slots.push((format!("{i}.running_var"), running_var));
            } else {
                for p in layer.params_mut() {
                    slots.push((p.name.clone(), &mut p.tensor));
                }
            }
        }
        if slots.len() != state.len() {
            return Err(NnError::Shape(format!("state has {} arrays, model expects {}", state.len(), slots.len())));
        }
        for ((name, tensor), arr) in slots.into_iter().zip(state) {
            if name != arr.name || tensor.shape() != arr.shape.as_slice() {
                return Err(NnError::Shape(format!("state array '{}' does not fit this model", arr.name)));
            }
            tensor.data.copy_from_slice(&arr.data);
        }
        Ok(())
    }

    /// Little-endian bytes of every conv-group parameter and running
    /// statistic; equal bytes mean the trunk is untouched.
    pub fn group_bytes(&self, group: ParamGroup) -> Vec<u8> {
        let mut out = Vec::new();
        for arr in self.state().into_iter().filter(|a| a.group == group) {
            for v in arr.data {
                out.extend_from_slice(&v.as_f64().to_le_bytes());
            }
        }
        out
    }

    /// Sum of squared weight entries (no biases, no batch-norm parameters).
    pub fn weight_sq_norm(&self) -> f64 {
        self.params()
            .iter()
            .filter(|p| p.kind == ParamKind::Weight)
            .flat_map(|p| p.tensor.data.iter())
            .map(|v| v.as_f64().powi(2))
            .sum()
    }

    /// Converts every array to another precision.
    pub fn cast<U: Real>(&self) -> CfoNet<U> {
        let (trunk, head): (Vec<_>, Vec<_>) = {
            let n = self.trunk.len();
            let (a, b) = self.layout.split_at(n);
            (a.to_vec(), b.to_vec())
        };
        let mut out = CfoNet::<U>::from_layout(trunk, head);
        let state: Vec<NamedArray<U>> = self
            .state()
            .into_iter()
            .map(|a| NamedArray {
                name: a.name,
                group: a.group,
                shape: a.shape,
                data: a.data.iter().map(|v| U::lit(v.as_f64())).collect(),
            })
            .collect();
        out.load_state(&state).expect("identical layout");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{max_rel_error, numeric_grad};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn standard_shapes_and_counts() {
        let mut net = CfoNet::<f32>::new(DEFAULT_DROPOUT, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let fc = net.param_count(ParamGroup::Fc);
        assert_eq!(fc, 512 * 256 + 256 + 256 * 128 + 128 + 128 + 1);
        let conv = net.param_count(ParamGroup::Conv);
        let expected_conv = (64 * 7 + 64 + 128)
            + (128 * 64 * 5 + 128 + 256)
            + (128 * 3 + 128)
            + (256 * 128 + 256 + 512)
            + (256 * 3 + 256)
            + (512 * 256 + 512 + 1024);
        assert_eq!(conv, expected_conv);
        let x = Act::new(1, 8, 320, vec![0.5f32; 8 * 320]).unwrap();
        assert_eq!(net.predict(x.clone()).unwrap().len(), 8);
        assert!(net.predict(Act::new(2, 4, 320, vec![0.0; 2 * 4 * 320]).unwrap()).is_err());
        assert_eq!(net.architecture_hash(), standard_architecture_hash());
    }

    #[test]
    fn init_statistics_and_determinism() {
        let a = CfoNet::<f64>::new(DEFAULT_DROPOUT, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let b = CfoNet::<f64>::new(DEFAULT_DROPOUT, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(a.state(), b.state());
        for p in a.params() {
            if p.kind == ParamKind::Bias {
                assert!(p.tensor.data.iter().all(|&v| v == 0.1), "{}", p.name);
            }
        }
        let fc1 = a.params().into_iter().find(|p| p.tensor.shape() == [256, 512]).unwrap();
        let n = fc1.tensor.len() as f64;
        let mean = fc1.tensor.data.iter().sum::<f64>() / n;
        let var = fc1.tensor.data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!((var / (2.0 / 256.0) - 1.0).abs() < 0.1, "{var}");
    }

    #[test]
    fn eval_forward_is_pure() {
        let mut net = CfoNet::<f32>::new(DEFAULT_DROPOUT, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data: Vec<f32> = (0..4 * 320).map(|_| rng.random_range(-2.0..2.0)).collect();
        let x = Act::new(1, 4, 320, data).unwrap();
        let a = net.predict(x.clone()).unwrap();
        let b = net.predict(x.clone()).unwrap();
        let c = net.forward(x, Mode::Eval, &mut rng).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn group_split_is_exactly_the_head() {
        let mut net = CfoNet::<f64>::zeroed(DEFAULT_DROPOUT).unwrap();
        let fc: Vec<_> = net.group_params_mut(ParamGroup::Fc).into_iter().map(|p| p.name.clone()).collect();
        assert_eq!(fc.len(), 6);
        assert!(fc.iter().all(|n| n.ends_with("weight") || n.ends_with("bias")));
    }

    #[test]
    fn cast_round_trip_and_state_reload() {
        let net = CfoNet::<f64>::new(DEFAULT_DROPOUT, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let f: CfoNet<f32> = net.cast();
        let back: CfoNet<f32> = f.cast::<f64>().cast();
        assert_eq!(f.state(), back.state());
        let mut other = CfoNet::<f32>::zeroed(DEFAULT_DROPOUT).unwrap();
        other.load_state(&f.state()).unwrap();
        assert_eq!(other.state(), f.state());
        assert!(other.load_state(&f.state()[1..]).is_err());
    }

    /// End-to-end parameter gradients of a reduced network on a 2-sample
    /// batch. The layer types and their ordering match the standard model;
    /// only widths are shrunk so the central differences stay cheap.
    #[test]
    fn small_network_gradients_match_finite_differences() {
        use LayerDesc::*;
        let trunk = vec![
            Conv(ConvSpec::new(1, 4, 7, 1, 3, 1)),
            BatchNorm(4),
            Act(Activation::Gelu),
            Conv(ConvSpec::new(4, 4, 5, 2, 2, 1)),
            BatchNorm(4),
            Act(Activation::Gelu),
            Conv(ConvSpec::depthwise(4, 3, 1)),
            Conv(ConvSpec::pointwise(4, 6)),
            BatchNorm(6),
            Act(Activation::Gelu),
            GlobalAvgPool,
        ];
        let head = vec![
            Linear { inputs: 6, outputs: 5 },
            Act(Activation::Gelu),
            Dropout(0.3),
            Linear { inputs: 5, outputs: 3 },
            Act(Activation::Silu),
            Linear { inputs: 3, outputs: 1 },
        ];
        let mut net = CfoNet::<f64>::from_layout(trunk, head);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        net.he_init(&mut rng);
        let x = crate::tensor::Act::new(1, 2, 12, (0..24).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap();
        let target = [0.3, -0.2];
        let drop_seed = 77;
        let loss_of = |net: &mut CfoNet<f64>| -> f64 {
            let pred = net.forward(x.clone(), Mode::Train, &mut ChaCha8Rng::seed_from_u64(drop_seed)).unwrap();
            pred.iter().zip(&target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / 2.0
        };

        let pred = net.forward(x.clone(), Mode::Train, &mut ChaCha8Rng::seed_from_u64(drop_seed)).unwrap();
        let dpred: Vec<f64> = pred.iter().zip(&target).map(|(p, t)| p - t).collect();
        net.zero_grad();
        net.backward(&dpred).unwrap();
        let analytic: Vec<Vec<f64>> = net.params().iter().map(|p| p.tensor.grad.clone().unwrap()).collect();
        let n_params = analytic.len();
        for pi in 0..n_params {
            let values = net.params()[pi].tensor.data.clone();
            let numeric = numeric_grad(&values, |v| {
                let mut probe = net.cast::<f64>();
                probe.params_mut()[pi].tensor.data.copy_from_slice(v);
                loss_of(&mut probe)
            });
            let err = max_rel_error(&analytic[pi], &numeric);
            assert!(err < 1e-3, "{}: {err}", net.params()[pi].name);
        }
    }
}
