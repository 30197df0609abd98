//! Named weight storage and the per-forward binding of weights to a tape.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use sigan_tensor::{Conv2dGeometry, Float, Gradients, NormGroups, Tape, Tensor, Var};

use super::arch::{NormKind, ParamKind, ParamSpec};
use crate::error::{Result, SiganError};

pub const INIT_STD: f64 = 0.02;
pub const BN_MOMENTUM: f64 = 0.1;
pub const NORM_EPS: f64 = 1e-5;

/// Trainable parameters and non-trainable buffers, keyed by layer name.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    pub params: BTreeMap<String, Tensor<T>>,
    pub buffers: BTreeMap<String, Tensor<T>>,
}

impl<T> Default for ParamStore<T> {
    fn default() -> Self {
        Self { params: BTreeMap::new(), buffers: BTreeMap::new() }
    }
}

impl<T: Float> ParamStore<T> {
    /// Gaussian initialization: conv weights `N(0, 0.02)`, norm scales
    /// `N(1, 0.02)`, biases and shifts zero, running variance one.
    pub fn init(specs: &[ParamSpec], rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut store = Self::default();
        for spec in specs {
            let n: usize = spec.shape.iter().product();
            let data: Vec<T> = match spec.kind {
                ParamKind::ConvWeight => (0..n).map(|_| T::lit(normal.sample(rng))).collect(),
                ParamKind::NormScale => (0..n).map(|_| T::lit(1.0 + normal.sample(rng))).collect(),
                ParamKind::Bias | ParamKind::NormShift | ParamKind::RunningMean => vec![T::zero(); n],
                ParamKind::RunningVar => vec![T::one(); n],
            };
            let tensor = Tensor::new(spec.shape.clone(), data);
            if spec.kind.is_buffer() {
                store.buffers.insert(spec.name.clone(), tensor);
            } else {
                store.params.insert(spec.name.clone(), tensor);
            }
        }
        store
    }

    /// Builds a store from loose tensors, checking names and shapes against
    /// `specs`.
    pub fn from_tensors(specs: &[ParamSpec], mut tensors: BTreeMap<String, Tensor<T>>) -> Result<Self> {
        let mut store = Self::default();
        for spec in specs {
            let t = tensors
                .remove(&spec.name)
                .ok_or_else(|| SiganError::Checkpoint(format!("missing tensor {}", spec.name)))?;
            if t.shape() != spec.shape.as_slice() {
                return Err(SiganError::shape(format!("tensor {}", spec.name), &spec.shape, t.shape()));
            }
            if spec.kind.is_buffer() {
                store.buffers.insert(spec.name.clone(), t);
            } else {
                store.params.insert(spec.name.clone(), t);
            }
        }
        if let Some(extra) = tensors.keys().next() {
            return Err(SiganError::Checkpoint(format!("unexpected tensor {extra}")));
        }
        Ok(store)
    }

    /// Verifies that every spec is present with the right shape and nothing else is.
    pub fn check(&self, specs: &[ParamSpec]) -> Result<()> {
        let all = self.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
        Self::from_tensors(specs, all).map(|_| ())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name).or_else(|| self.buffers.get(name))
    }

    /// Parameters then buffers, each in name order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().chain(&self.buffers).map(|(k, v)| (k.as_str(), v))
    }

    pub fn num_params(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn cast<U: Float>(&self) -> ParamStore<U> {
        let conv = |m: &BTreeMap<String, Tensor<T>>| m.iter().map(|(k, v)| (k.clone(), v.cast())).collect();
        ParamStore { params: conv(&self.params), buffers: conv(&self.buffers) }
    }

    pub fn all_finite(&self) -> bool {
        self.iter().all(|(_, t)| t.all_finite())
    }
}

/// Whether normalization layers use batch statistics or running averages.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Binds a [`ParamStore`] to a tape for one or more forward passes.
///
/// Each parameter becomes a single tape variable on first use, so repeated
/// passes through the same network accumulate gradients in one place. In
/// training mode, batch-norm running statistics are updated in a private
/// copy that [`ForwardCtx::into_buffers`] hands back.
pub struct ForwardCtx<'t, 's, T: Float> {
    tape: &'t Tape<T>,
    store: &'s ParamStore<T>,
    mode: Mode,
    trainable: bool,
    vars: RefCell<HashMap<String, Var<'t, T>>>,
    buffers: RefCell<BTreeMap<String, Tensor<T>>>,
}

impl<'t, 's, T: Float> ForwardCtx<'t, 's, T> {
    pub fn new(tape: &'t Tape<T>, store: &'s ParamStore<T>, mode: Mode, trainable: bool) -> Self {
        Self {
            tape,
            store,
            mode,
            trainable,
            vars: RefCell::new(HashMap::new()),
            buffers: RefCell::new(store.buffers.clone()),
        }
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// The tape variable for parameter `name`.
    ///
    /// Panics on unknown names; layouts are validated before any forward pass.
    pub fn param(&self, name: &str) -> Var<'t, T> {
        if let Some(v) = self.vars.borrow().get(name) {
            return *v;
        }
        let value = self.store.params.get(name).unwrap_or_else(|| panic!("no parameter named {name}")).clone();
        let var = if self.trainable { self.tape.leaf(value) } else { self.tape.constant(value) };
        self.vars.borrow_mut().insert(name.to_string(), var);
        var
    }

    pub fn has_param(&self, name: &str) -> bool {
        self.store.params.contains_key(name)
    }

    /// Convolution with weight `{prefix}.conv.weight` and the optional bias.
    pub fn conv(&self, prefix: &str, x: Var<'t, T>, g: Conv2dGeometry) -> Var<'t, T> {
        let w = self.param(&format!("{prefix}.conv.weight"));
        let bias_name = format!("{prefix}.conv.bias");
        let b = self.has_param(&bias_name).then(|| self.param(&bias_name));
        x.conv2d(w, b, g)
    }

    pub fn conv_t(&self, prefix: &str, x: Var<'t, T>, g: Conv2dGeometry) -> Var<'t, T> {
        let w = self.param(&format!("{prefix}.conv.weight"));
        let bias_name = format!("{prefix}.conv.bias");
        let b = self.has_param(&bias_name).then(|| self.param(&bias_name));
        x.conv_transpose2d(w, b, g)
    }

    /// Normalization with affine parameters `{prefix}.norm.{weight,bias}`.
    pub fn norm(&self, prefix: &str, x: Var<'t, T>, kind: NormKind) -> Var<'t, T> {
        let scale = self.param(&format!("{prefix}.norm.weight"));
        let shift = self.param(&format!("{prefix}.norm.bias"));
        let eps = T::lit(NORM_EPS);
        match (kind, self.mode) {
            (NormKind::Instance, _) => x.normalize(NormGroups::Instance, eps).0.channel_affine(scale, shift),
            (NormKind::Batch, Mode::Train) => {
                let (y, stats) = x.normalize(NormGroups::Batch, eps);
                self.update_running(prefix, &stats.mean, &stats.var, stats.count);
                y.channel_affine(scale, shift)
            }
            (NormKind::Batch, Mode::Eval) => {
                let buffers = self.buffers.borrow();
                let mean = &buffers[&format!("{prefix}.norm.running_mean")];
                let var = &buffers[&format!("{prefix}.norm.running_var")];
                let inv_std = var.map(|v| T::one() / (v + eps).sqrt());
                let s = scale.mul(self.tape.constant(inv_std));
                let t = shift.sub(s.mul(self.tape.constant(mean.clone())));
                x.channel_affine(s, t)
            }
        }
    }

    fn update_running(&self, prefix: &str, mean: &[T], var: &[T], count: usize) {
        let m = T::lit(BN_MOMENTUM);
        let unbias = if count > 1 { T::lit(count as f64 / (count - 1) as f64) } else { T::one() };
        let mut buffers = self.buffers.borrow_mut();
        if let Some(rm) = buffers.get_mut(&format!("{prefix}.norm.running_mean")) {
            for (r, &v) in rm.data_mut().iter_mut().zip(mean) {
                *r = (T::one() - m) * *r + m * v;
            }
        }
        if let Some(rv) = buffers.get_mut(&format!("{prefix}.norm.running_var")) {
            for (r, &v) in rv.data_mut().iter_mut().zip(var) {
                *r = (T::one() - m) * *r + m * v * unbias;
            }
        }
    }

    /// Gradients of every parameter touched so far; untouched ones get zeros.
    pub fn param_grads(&self, grads: &Gradients<T>) -> BTreeMap<String, Tensor<T>> {
        let vars = self.vars.borrow();
        self.store
            .params
            .iter()
            .map(|(name, p)| {
                let g = vars.get(name).and_then(|v| grads.get(v)).cloned();
                (name.clone(), g.unwrap_or_else(|| Tensor::zeros(p.shape().to_vec())))
            })
            .collect()
    }

    /// Buffers after any running-statistic updates.
    pub fn into_buffers(self) -> BTreeMap<String, Tensor<T>> {
        self.buffers.into_inner()
    }
}
