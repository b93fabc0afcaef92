//! Parameter storage, the forward context, and the elementary layers the
//! LKA blocks and networks are assembled from.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::norm::{batch_norm, layer_norm_channels, BatchNormState};
use crate::tensor::{conv3d, ops, ConvSpec, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// `U(−√(6/fan_in), √(6/fan_in))`.
    HeUniform { fan_in: usize },
    Zeros,
    Ones,
    Const(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Slot {
    Param { shape: Vec<usize>, init: Init },
    /// Batch-norm running statistics; not a trainable parameter.
    BatchNorm { channels: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SlotSpec {
    pub name: String,
    pub slot: Slot,
}

#[derive(Clone, Debug)]
pub struct Param<F> {
    pub shape: Vec<usize>,
    pub data: Arc<Vec<F>>,
}

/// Named parameters and batch-norm states of a model.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<F> {
    pub params: BTreeMap<String, Param<F>>,
    pub batch_norms: BTreeMap<String, BatchNormState<F>>,
}

/// FNV-1a, used to derive a per-parameter RNG stream from its name.
fn name_hash(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

impl<F: Real> ParamStore<F> {
    /// Initializes every slot. Each parameter draws from its own
    /// `(seed, name)` stream, so values do not depend on visiting order.
    pub fn init(slots: &[SlotSpec], seed: u64) -> Result<Self> {
        let mut store = ParamStore { params: BTreeMap::new(), batch_norms: BTreeMap::new() };
        for s in slots {
            let dup = match &s.slot {
                Slot::Param { shape, init } => {
                    let n: usize = shape.iter().product();
                    let data = match *init {
                        Init::HeUniform { fan_in } => {
                            let bound = (6.0 / fan_in as f64).sqrt();
                            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ name_hash(&s.name));
                            (0..n).map(|_| F::lit(rng.gen_range(-bound..bound))).collect()
                        }
                        Init::Zeros => vec![F::zero(); n],
                        Init::Ones => vec![F::one(); n],
                        Init::Const(v) => vec![F::lit(v); n],
                    };
                    store.params.insert(s.name.clone(), Param { shape: shape.clone(), data: Arc::new(data) }).is_some()
                }
                Slot::BatchNorm { channels } => {
                    store.batch_norms.insert(s.name.clone(), BatchNormState::new(*channels)).is_some()
                }
            };
            if dup {
                return Err(Error::Config(format!("duplicate parameter name {}", s.name)));
            }
        }
        Ok(store)
    }

    pub fn get(&self, name: &str) -> Result<&Param<F>> {
        self.params.get(name).ok_or_else(|| Error::Config(format!("unknown parameter {name}")))
    }

    /// Overwrites a parameter's values, keeping its shape.
    pub fn set(&mut self, name: &str, data: Vec<F>) -> Result<()> {
        let p = self.params.get_mut(name).ok_or_else(|| Error::Config(format!("unknown parameter {name}")))?;
        if data.len() != p.data.len() {
            return Err(Error::shape(format!("{name}: {} values for shape {:?}", data.len(), p.shape)));
        }
        p.data = Arc::new(data);
        Ok(())
    }

    /// Number of scalar parameters actually stored.
    pub fn scalar_count(&self) -> usize {
        self.params.values().map(|p| p.data.len()).sum()
    }

    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        let conv = |v: &[F]| -> Vec<G> { v.iter().map(|&x| G::lit(x.as_f64())).collect() };
        ParamStore {
            params: self
                .params
                .iter()
                .map(|(k, p)| (k.clone(), Param { shape: p.shape.clone(), data: Arc::new(conv(&p.data)) }))
                .collect(),
            batch_norms: self
                .batch_norms
                .iter()
                .map(|(k, s)| {
                    (k.clone(), BatchNormState { running_mean: conv(&s.running_mean), running_var: conv(&s.running_var) })
                })
                .collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Running statistics.
    Eval,
}

/// State of one forward pass: parameter leaves handed out so far, and the
/// batch-norm statistics produced in training mode.
pub struct Ctx<'a, F: Real> {
    store: &'a ParamStore<F>,
    pub mode: Mode,
    track_params: bool,
    leaves: BTreeMap<String, Tensor<F>>,
    bn_updates: BTreeMap<String, BatchNormState<F>>,
}

impl<'a, F: Real> Ctx<'a, F> {
    pub fn new(store: &'a ParamStore<F>, mode: Mode, track_params: bool) -> Self {
        Ctx { store, mode, track_params, leaves: BTreeMap::new(), bn_updates: BTreeMap::new() }
    }

    /// Uses `tensor` wherever the parameter `name` is requested.
    pub fn insert_leaf(&mut self, name: &str, tensor: Tensor<F>) -> Result<()> {
        let p = self.store.get(name)?;
        if p.shape != tensor.shape() {
            return Err(Error::shape(format!("{name}: tensor {:?} for parameter {:?}", tensor.shape(), p.shape)));
        }
        self.leaves.insert(name.to_string(), tensor);
        Ok(())
    }

    pub fn param(&mut self, name: &str) -> Result<Tensor<F>> {
        if let Some(t) = self.leaves.get(name) {
            return Ok(t.clone());
        }
        let p = self.store.get(name)?;
        let t = Tensor::from_shared(p.shape.clone(), Arc::clone(&p.data))?.requires_grad(self.track_params);
        self.leaves.insert(name.to_string(), t.clone());
        Ok(t)
    }

    fn bn_state(&self, name: &str) -> Result<BatchNormState<F>> {
        if let Some(s) = self.bn_updates.get(name) {
            return Ok(s.clone());
        }
        self.store
            .batch_norms
            .get(name)
            .cloned()
            .ok_or_else(|| Error::Config(format!("unknown batch-norm state {name}")))
    }

    /// Gradients of every parameter handed out, after `backward`.
    pub fn take_grads(&mut self) -> BTreeMap<String, Vec<F>> {
        self.leaves.iter().filter_map(|(k, t)| t.take_grad().map(|g| (k.clone(), g))).collect()
    }

    pub fn take_bn_updates(&mut self) -> BTreeMap<String, BatchNormState<F>> {
        std::mem::take(&mut self.bn_updates)
    }
}

/// Per-layer FLOP record.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct FlopRow {
    pub layer: String,
    pub kind: &'static str,
    pub output_shape: [usize; 4],
    pub flops: f64,
}

#[derive(Clone, Debug, Default, serde::Serialize)]
pub struct FlopCounter {
    pub rows: Vec<FlopRow>,
}

impl FlopCounter {
    pub fn push(&mut self, layer: &str, kind: &'static str, output_shape: [usize; 4], flops: f64) {
        self.rows.push(FlopRow { layer: layer.to_string(), kind, output_shape, flops });
    }

    pub fn total(&self) -> f64 {
        self.rows.iter().map(|r| r.flops).sum()
    }

    /// Per-element operations (activations, residual adds, scales).
    pub fn elementwise(&mut self, layer: &str, kind: &'static str, shape: [usize; 4], per_element: f64) {
        self.push(layer, kind, shape, per_element * shape.iter().product::<usize>() as f64);
    }
}

/// Layer structure shared by every building block. Shapes passed to
/// `flops` are `[C, D, H, W]` for a single batch item.
pub trait Layer {
    fn slots(&self, out: &mut Vec<SlotSpec>);

    /// Closed-form number of trainable scalars.
    fn param_count(&self) -> usize;

    fn flops(&self, input: [usize; 4], counter: &mut FlopCounter) -> Result<[usize; 4]>;

    fn forward<F: Real>(&self, ctx: &mut Ctx<'_, F>, x: &Tensor<F>) -> Result<Tensor<F>>;
}

pub(crate) fn check_channels<F: Real>(x: &Tensor<F>, expected: usize, who: &str) -> Result<()> {
    if x.ndim() != 5 || x.shape()[1] != expected {
        return Err(Error::shape(format!("{who} expects N,{expected},D,H,W input, got {:?}", x.shape())));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conv3d {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub spec: ConvSpec,
    pub bias: bool,
}

impl Conv3d {
    pub fn new(name: impl Into<String>, cin: usize, cout: usize, spec: ConvSpec) -> Self {
        Conv3d { name: name.into(), cin, cout, spec, bias: true }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }
}

impl Layer for Conv3d {
    fn slots(&self, out: &mut Vec<SlotSpec>) {
        let shape = self.spec.weight_shape(self.cin, self.cout).to_vec();
        let fan_in = shape[1] * self.spec.taps();
        out.push(SlotSpec { name: self.weight_name(), slot: Slot::Param { shape, init: Init::HeUniform { fan_in } } });
        if self.bias {
            out.push(SlotSpec { name: self.bias_name(), slot: Slot::Param { shape: vec![self.cout], init: Init::Zeros } });
        }
    }

    fn param_count(&self) -> usize {
        let g = self.spec.groups;
        let per_tap = if self.spec.transpose { self.cin * (self.cout / g) } else { self.cout * (self.cin / g) };
        per_tap * self.spec.taps() + if self.bias { self.cout } else { 0 }
    }

    fn flops(&self, input: [usize; 4], counter: &mut FlopCounter) -> Result<[usize; 4]> {
        if input[0] != self.cin {
            return Err(Error::shape(format!("{}: {} input channels, expected {}", self.name, input[0], self.cin)));
        }
        let sp = self.spec.output_size([input[1], input[2], input[3]])?;
        let out = [self.cout, sp[0], sp[1], sp[2]];
        let g = self.spec.groups as f64;
        let taps = self.spec.taps() as f64;
        let flops = if self.spec.transpose {
            let in_vox = (input[1] * input[2] * input[3]) as f64;
            2.0 * in_vox * self.cin as f64 * (self.cout as f64 / g) * taps
        } else {
            let out_vox = sp.iter().product::<usize>() as f64;
            2.0 * out_vox * self.cout as f64 * (self.cin as f64 / g) * taps
        };
        counter.push(&self.name, if self.spec.transpose { "conv_transpose" } else { "conv" }, out, flops);
        Ok(out)
    }

    fn forward<F: Real>(&self, ctx: &mut Ctx<'_, F>, x: &Tensor<F>) -> Result<Tensor<F>> {
        check_channels(x, self.cin, &self.name)?;
        let w = ctx.param(&self.weight_name())?;
        let b = if self.bias { Some(ctx.param(&self.bias_name())?) } else { None };
        conv3d(x, &w, b.as_ref(), &self.spec)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm3d {
    pub name: String,
    pub channels: usize,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm3d {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        BatchNorm3d { name: name.into(), channels, momentum: 0.1, eps: 1e-5 }
    }
}

impl Layer for BatchNorm3d {
    fn slots(&self, out: &mut Vec<SlotSpec>) {
        let c = self.channels;
        out.push(SlotSpec { name: format!("{}.gamma", self.name), slot: Slot::Param { shape: vec![c], init: Init::Ones } });
        out.push(SlotSpec { name: format!("{}.beta", self.name), slot: Slot::Param { shape: vec![c], init: Init::Zeros } });
        out.push(SlotSpec { name: self.name.clone(), slot: Slot::BatchNorm { channels: c } });
    }

    fn param_count(&self) -> usize {
        2 * self.channels
    }

    fn flops(&self, input: [usize; 4], counter: &mut FlopCounter) -> Result<[usize; 4]> {
        counter.elementwise(&self.name, "batch_norm", input, 4.0);
        Ok(input)
    }

    fn forward<F: Real>(&self, ctx: &mut Ctx<'_, F>, x: &Tensor<F>) -> Result<Tensor<F>> {
        check_channels(x, self.channels, &self.name)?;
        let gamma = ctx.param(&format!("{}.gamma", self.name))?;
        let beta = ctx.param(&format!("{}.beta", self.name))?;
        let mut state = ctx.bn_state(&self.name)?;
        let training = ctx.mode == Mode::Train;
        let y = batch_norm(x, &gamma, &beta, &mut state, training, F::lit(self.momentum), F::lit(self.eps))?;
        if training {
            ctx.bn_updates.insert(self.name.clone(), state);
        }
        Ok(y)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm3d {
    pub name: String,
    pub channels: usize,
    pub eps: f64,
}

impl LayerNorm3d {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        LayerNorm3d { name: name.into(), channels, eps: 1e-5 }
    }
}

impl Layer for LayerNorm3d {
    fn slots(&self, out: &mut Vec<SlotSpec>) {
        let c = self.channels;
        out.push(SlotSpec { name: format!("{}.gamma", self.name), slot: Slot::Param { shape: vec![c], init: Init::Ones } });
        out.push(SlotSpec { name: format!("{}.beta", self.name), slot: Slot::Param { shape: vec![c], init: Init::Zeros } });
    }

    fn param_count(&self) -> usize {
        2 * self.channels
    }

    fn flops(&self, input: [usize; 4], counter: &mut FlopCounter) -> Result<[usize; 4]> {
        counter.elementwise(&self.name, "layer_norm", input, 4.0);
        Ok(input)
    }

    fn forward<F: Real>(&self, ctx: &mut Ctx<'_, F>, x: &Tensor<F>) -> Result<Tensor<F>> {
        check_channels(x, self.channels, &self.name)?;
        let gamma = ctx.param(&format!("{}.gamma", self.name))?;
        let beta = ctx.param(&format!("{}.beta", self.name))?;
        layer_norm_channels(x, &gamma, &beta, F::lit(self.eps))
    }
}

/// Learned per-channel multiplier on a residual branch.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerScale {
    pub name: String,
    pub channels: usize,
    pub init: f64,
}

impl Layer for LayerScale {
    fn slots(&self, out: &mut Vec<SlotSpec>) {
        out.push(SlotSpec { name: self.name.clone(), slot: Slot::Param { shape: vec![self.channels], init: Init::Const(self.init) } });
    }

    fn param_count(&self) -> usize {
        self.channels
    }

    fn flops(&self, input: [usize; 4], counter: &mut FlopCounter) -> Result<[usize; 4]> {
        counter.elementwise(&self.name, "scale", input, 1.0);
        Ok(input)
    }

    fn forward<F: Real>(&self, ctx: &mut Ctx<'_, F>, x: &Tensor<F>) -> Result<Tensor<F>> {
        check_channels(x, self.channels, &self.name)?;
        let s = ctx.param(&self.name)?;
        ops::mul(x, &s)
    }
}

/// `conv → batch norm → GELU`, the unit of the convolutional stages and
/// decoders.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvNormAct {
    pub conv: Conv3d,
    pub norm: BatchNorm3d,
}

impl ConvNormAct {
    pub fn new(name: &str, cin: usize, cout: usize, stride: usize) -> Self {
        ConvNormAct {
            conv: Conv3d::new(format!("{name}.conv"), cin, cout, ConvSpec::cubic(3).stride(stride).padding(1)),
            norm: BatchNorm3d::new(format!("{name}.norm"), cout),
        }
    }
}

impl Layer for ConvNormAct {
    fn slots(&self, out: &mut Vec<SlotSpec>) {
        self.conv.slots(out);
        self.norm.slots(out);
    }

    fn param_count(&self) -> usize {
        self.conv.param_count() + self.norm.param_count()
    }

    fn flops(&self, input: [usize; 4], counter: &mut FlopCounter) -> Result<[usize; 4]> {
        let s = self.conv.flops(input, counter)?;
        let s = self.norm.flops(s, counter)?;
        counter.elementwise(&self.conv.name, "gelu", s, 1.0);
        Ok(s)
    }

    fn forward<F: Real>(&self, ctx: &mut Ctx<'_, F>, x: &Tensor<F>) -> Result<Tensor<F>> {
        let y = self.conv.forward(ctx, x)?;
        let y = self.norm.forward(ctx, &y)?;
        Ok(crate::tensor::activation::gelu(&y))
    }
}
