//! Parameter storage and the layers used by the generator, critic and
//! classifier networks.

use crate::functional::{self, BatchStats};
use crate::graph::{grad, Var};
use crate::tensor::Tensor;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Named tensors owned by a network. Buffers (`trainable == false`) are
/// saved with the parameters but never receive gradients.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    trainable: Vec<bool>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.insert(name.into(), value, true)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.insert(name.into(), value, false)
    }

    fn insert(&mut self, name: String, value: Tensor, trainable: bool) -> ParamId {
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.tensors.push(value);
        self.trainable.push(trainable);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.trainable[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.ids().filter(|&id| self.trainable[id.0]).collect()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.tensors
            .iter()
            .zip(&self.trainable)
            .filter(|(_, &t)| t)
            .map(|(t, _)| t.len())
            .sum()
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        self.names.iter().cloned().zip(self.tensors.iter().cloned()).collect()
    }

    /// Overwrites every tensor from `(name, tensor)` pairs. All names must be
    /// present with matching shapes.
    pub fn load_named(&mut self, named: &[(String, Tensor)]) -> Result<(), String> {
        for (i, name) in self.names.iter().enumerate() {
            let (_, t) = named
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| format!("missing tensor {name}"))?;
            if t.shape() != self.tensors[i].shape() {
                return Err(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    self.tensors[i].shape()
                ));
            }
            self.tensors[i] = t.clone();
        }
        Ok(())
    }

    /// Graph handles for a forward pass in which parameters are
    /// differentiable.
    pub fn bind(&self) -> Bound {
        self.bind_with(true)
    }

    /// Graph handles with every tensor constant.
    pub fn bind_frozen(&self) -> Bound {
        self.bind_with(false)
    }

    fn bind_with(&self, trainable: bool) -> Bound {
        Bound {
            vars: self
                .tensors
                .iter()
                .zip(&self.trainable)
                .map(|(t, &tr)| {
                    if trainable && tr {
                        Var::leaf(t.clone())
                    } else {
                        Var::constant(t.clone())
                    }
                })
                .collect(),
        }
    }
}

/// Parameters of a `ParamSet` as graph nodes for one forward pass.
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn get(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }

    /// Gradients of `loss` for every trainable parameter, in id order.
    pub fn param_grads(&self, loss: &Var, params: &ParamSet) -> Vec<(ParamId, Tensor)> {
        let ids = params.trainable_ids();
        let wrt: Vec<Var> = ids.iter().map(|&id| self.vars[id.0].clone()).collect();
        grad(loss, &wrt, false)
            .into_iter()
            .zip(ids)
            .map(|(g, id)| (id, g.value().clone()))
            .collect()
    }
}

/// Convolution with runtime He scaling: weights are stored ~N(0, 1) and
/// multiplied by `sqrt(2 / fan_in)` on every forward pass.
#[derive(Debug, Clone)]
pub struct EqualizedConv2d {
    weight: ParamId,
    bias: ParamId,
    scale: f64,
    pad: usize,
}

impl EqualizedConv2d {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Self {
        Self::with_gain(params, name, cin, cout, kernel, 2f64.sqrt(), rng)
    }

    /// Runtime scale `gain / sqrt(fan_in)`.
    pub fn with_gain<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let weight = params.add(
            format!("{name}.weight"),
            Tensor::randn(vec![cout, cin, kernel, kernel], rng),
        );
        let bias = params.add(format!("{name}.bias"), Tensor::zeros(vec![cout]));
        let fan_in = (cin * kernel * kernel) as f64;
        EqualizedConv2d {
            weight,
            bias,
            scale: gain / fan_in.sqrt(),
            pad: kernel / 2,
        }
    }

    pub fn forward(&self, b: &Bound, x: &Var) -> Var {
        let w = b.get(self.weight).scale(self.scale);
        functional::conv2d(x, &w, Some(b.get(self.bias)), 1, self.pad)
    }
}

/// Dense layer with the same runtime scaling as [`EqualizedConv2d`].
#[derive(Debug, Clone)]
pub struct EqualizedLinear {
    weight: ParamId,
    bias: ParamId,
    scale: f64,
}

impl EqualizedLinear {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let weight = params.add(
            format!("{name}.weight"),
            Tensor::randn(vec![fan_out, fan_in], rng),
        );
        let bias = params.add(format!("{name}.bias"), Tensor::zeros(vec![fan_out]));
        EqualizedLinear {
            weight,
            bias,
            scale: gain / (fan_in as f64).sqrt(),
        }
    }

    pub fn forward(&self, b: &Bound, x: &Var) -> Var {
        let w = b.get(self.weight).scale(self.scale);
        functional::linear(x, &w, Some(b.get(self.bias)))
    }
}

/// Plain convolution with He-normal initialization.
#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: ParamId,
    bias: Option<ParamId>,
    stride: usize,
    pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let std = (2.0 / (cin * kernel * kernel) as f64).sqrt();
        let weight = params.add(
            format!("{name}.weight"),
            Tensor::randn(vec![cout, cin, kernel, kernel], rng).map(|x| x * std),
        );
        let bias = bias.then(|| params.add(format!("{name}.bias"), Tensor::zeros(vec![cout])));
        Conv2d {
            weight,
            bias,
            stride,
            pad: kernel / 2,
        }
    }

    pub fn forward(&self, b: &Bound, x: &Var) -> Var {
        functional::conv2d(
            x,
            b.get(self.weight),
            self.bias.map(|id| b.get(id)),
            self.stride,
            self.pad,
        )
    }
}

/// Dense layer with uniform fan-in initialization.
#[derive(Debug, Clone)]
pub struct Linear {
    weight: ParamId,
    bias: ParamId,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = params.add(
            format!("{name}.weight"),
            Tensor::rand_uniform(vec![fan_out, fan_in], -bound, bound, rng),
        );
        let bias = params.add(format!("{name}.bias"), Tensor::zeros(vec![fan_out]));
        Linear { weight, bias }
    }

    pub fn forward(&self, b: &Bound, x: &Var) -> Var {
        functional::linear(x, b.get(self.weight), Some(b.get(self.bias)))
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    gamma: ParamId,
    beta: ParamId,
    running_mean: ParamId,
    running_var: ParamId,
    momentum: f64,
    eps: f64,
}

impl BatchNorm2d {
    pub fn new(params: &mut ParamSet, name: &str, channels: usize) -> Self {
        BatchNorm2d {
            gamma: params.add(format!("{name}.gamma"), Tensor::ones(vec![channels])),
            beta: params.add(format!("{name}.beta"), Tensor::zeros(vec![channels])),
            running_mean: params
                .add_buffer(format!("{name}.running_mean"), Tensor::zeros(vec![channels])),
            running_var: params
                .add_buffer(format!("{name}.running_var"), Tensor::ones(vec![channels])),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    /// Training mode normalizes with batch statistics and returns the
    /// pending running-statistics update.
    pub fn forward(&self, b: &Bound, x: &Var, training: bool) -> (Var, Option<BnUpdate>) {
        let running = (!training).then(|| {
            (
                b.get(self.running_mean).value(),
                b.get(self.running_var).value(),
            )
        });
        let (out, stats) = functional::batch_norm(
            x,
            b.get(self.gamma),
            b.get(self.beta),
            running,
            self.eps,
        );
        let update = stats.map(|stats| BnUpdate {
            layer: self.clone(),
            stats,
            count: x.shape()[0] * x.shape()[2] * x.shape()[3],
        });
        (out, update)
    }
}

/// Running-statistics update produced by a training-mode batch norm pass.
pub struct BnUpdate {
    layer: BatchNorm2d,
    stats: BatchStats,
    count: usize,
}

impl BnUpdate {
    pub fn apply(&self, params: &mut ParamSet) {
        let m = self.layer.momentum;
        let n = self.count as f64;
        // Running variance tracks the unbiased estimate.
        let correction = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
        let mean = params.get_mut(self.layer.running_mean);
        for (r, &s) in mean.data_mut().iter_mut().zip(self.stats.mean.data()) {
            *r = (1.0 - m) * *r + m * s;
        }
        let var = params.get_mut(self.layer.running_var);
        for (r, &s) in var.data_mut().iter_mut().zip(self.stats.var.data()) {
            *r = (1.0 - m) * *r + m * s * correction;
        }
    }
}
