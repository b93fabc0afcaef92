//! Large-kernel-attention building blocks: the LKA unit, attention module,
//! convolutional feed-forward, patch embedding/expansion and the repeating
//! LKA block.

pub mod layers;

use serde::{Deserialize, Serialize};

pub use layers::{
    BatchNorm3d, Conv3d, ConvNormAct, Ctx, FlopCounter, FlopRow, Init, Layer, LayerNorm3d, LayerScale, Mode, Param,
    ParamStore, Slot, SlotSpec,
};

use crate::error::{Error, Result};
use crate::tensor::activation::gelu;
use crate::tensor::{ops, ConvSpec, Real, Tensor};
use layers::check_channels;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LkaParams {
    pub dw_kernel: usize,
    pub dilated_kernel: usize,
    pub dilation: usize,
}

impl Default for LkaParams {
    fn default() -> Self {
        LkaParams { dw_kernel: 5, dilated_kernel: 7, dilation: 3 }
    }
}

impl LkaParams {
    pub fn validate(&self) -> Result<()> {
        if self.dw_kernel % 2 == 0 || self.dilated_kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "LKA kernel sizes must be odd, got {} and {}",
                self.dw_kernel, self.dilated_kernel
            )));
        }
        if self.dilation == 0 {
            return Err(Error::Config("LKA dilation must be at least 1".into()));
        }
        Ok(())
    }

    /// Per-axis support of the composed kernel.
    pub fn composed_support(&self) -> usize {
        (self.dw_kernel - 1) + self.dilation * (self.dilated_kernel - 1) + 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockParams {
    pub in_channels: usize,
    pub out_channels: usize,
    pub repeats: usize,
    pub embed_stride: usize,
    pub ffn_expansion: f64,
    pub layer_scale_init: f64,
    pub lka: LkaParams,
}

impl BlockParams {
    pub fn validate(&self) -> Result<()> {
        self.lka.validate()?;
        if self.repeats == 0 {
            return Err(Error::Config("an LKA block needs at least one repeat".into()));
        }
        if !matches!(self.embed_stride, 1 | 2) {
            return Err(Error::Config(format!("embed stride must be 1 or 2, got {}", self.embed_stride)));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config("block channel counts must be positive".into()));
        }
        if !(self.ffn_expansion > 0.0) || hidden_width(self.out_channels, self.ffn_expansion) == 0 {
            return Err(Error::Config(format!("invalid ffn expansion {}", self.ffn_expansion)));
        }
        Ok(())
    }
}

pub fn hidden_width(channels: usize, expansion: f64) -> usize {
    (channels as f64 * expansion).round() as usize
}

/// `x ⊙ PConv(dDWConv(DWConv(x)))`.
#[derive(Clone, Debug, PartialEq)]
pub struct LkaUnit {
    pub channels: usize,
    pub dw: Conv3d,
    pub ddw: Conv3d,
    pub pw: Conv3d,
}

impl LkaUnit {
    pub fn new(name: &str, channels: usize, p: &LkaParams) -> Self {
        let c = channels;
        let dw = ConvSpec::cubic(p.dw_kernel).padding((p.dw_kernel - 1) / 2).groups(c);
        let ddw = ConvSpec::cubic(p.dilated_kernel)
            .dilation(p.dilation)
            .padding(p.dilation * (p.dilated_kernel - 1) / 2)
            .groups(c);
        LkaUnit {
            channels,
            dw: Conv3d::new(format!("{name}.dw"), c, c, dw),
            ddw: Conv3d::new(format!("{name}.ddw"), c, c, ddw),
            pw: Conv3d::new(format!("{name}.pw"), c, c, ConvSpec::pointwise()),
        }
    }

    /// The attention map `PConv(dDWConv(DWConv(x)))`.
    pub fn attention_map<F: Real>(&self, ctx: &mut Ctx<'_, F>, x: &Tensor<F>) -> Result<Tensor<F>> {
        check_channels(x, self.channels, "lka_unit")?;
        let a = self.dw.forward(ctx, x)?;
        let a = self.ddw.forward(ctx, &a)?;
        self.pw.forward(ctx, &a)
    }
}

impl Layer for LkaUnit {
    fn slots(&self, out: &mut Vec<SlotSpec>) {
        self.dw.slots(out);
        self.ddw.slots(out);
        self.pw.slots(out);
    }

    fn param_count(&self) -> usize {
        self.dw.param_count() + self.ddw.param_count() + self.pw.param_count()
    }

    fn flops(&self, input: [usize; 4], counter: &mut FlopCounter) -> Result<[usize; 4]> {
        let s = self.dw.flops(input, counter)?;
        let s = self.ddw.flops(s, counter)?;
        let s = self.pw.flops(s, counter)?;
        counter.elementwise(&self.pw.name, "mul", s, 1.0);
        Ok(s)
    }

    fn forward<F: Real>(&self, ctx: &mut Ctx<'_, F>, x: &Tensor<F>) -> Result<Tensor<F>> {
        let attn = self.attention_map(ctx, x)?;
        ops::mul(x, &attn)
    }
}

/// `x + PConv(LKA(GELU(PConv(x))))`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionModule {
    pub channels: usize,
    pub proj_in: Conv3d,
    pub lka: LkaUnit,
    pub proj_out: Conv3d,
}

impl AttentionModule {
    pub fn new(name: &str, channels: usize, p: &LkaParams) -> Self {
        let c = channels;
        AttentionModule {
            channels,
            proj_in: Conv3d::new(format!("{name}.proj_in"), c, c, ConvSpec::pointwise()),
            lka: LkaUnit::new(&format!("{name}.lka"), c, p),
            proj_out: Conv3d::new(format!("{name}.proj_out"), c, c, ConvSpec::pointwise()),
        }
    }

    /// The residual branch alone.
    pub fn branch<F: Real>(&self, ctx: &mut Ctx<'_, F>, x: &Tensor<F>) -> Result<Tensor<F>> {
        check_channels(x, self.channels, "attention_module")?;
        let h = gelu(&self.proj_in.forward(ctx, x)?);
        let h = self.lka.forward(ctx, &h)?;
        self.proj_out.forward(ctx, &h)
    }
}

impl Layer for AttentionModule {
    fn slots(&self, out: &mut Vec<SlotSpec>) {
        self.proj_in.slots(out);
        self.lka.slots(out);
        self.proj_out.slots(out);
    }

    fn param_count(&self) -> usize {
        self.proj_in.param_count() + self.lka.param_count() + self.proj_out.param_count()
    }

    fn flops(&self, input: [usize; 4], counter: &mut FlopCounter) -> Result<[usize; 4]> {
        let s = self.proj_in.flops(input, counter)?;
        counter.elementwise(&self.proj_in.name, "gelu", s, 1.0);
        let s = self.lka.flops(s, counter)?;
        let s = self.proj_out.flops(s, counter)?;
        counter.elementwise(&self.proj_out.name, "add", s, 1.0);
        Ok(s)
    }

    fn forward<F: Real>(&self, ctx: &mut Ctx<'_, F>, x: &Tensor<F>) -> Result<Tensor<F>> {
        let b = self.branch(ctx, x)?;
        ops::add(x, &b)
    }
}

/// `PConv(C→E·C) → depthwise 3³ → GELU → PConv(E·C→C)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvFF {
    pub channels: usize,
    pub hidden: usize,
    pub fc1: Conv3d,
    pub dw: Conv3d,
    pub fc2: Conv3d,
}

impl ConvFF {
    pub fn new(name: &str, channels: usize, expansion: f64) -> Self {
        let (c, h) = (channels, hidden_width(channels, expansion));
        ConvFF {
            channels,
            hidden: h,
            fc1: Conv3d::new(format!("{name}.fc1"), c, h, ConvSpec::pointwise()),
            dw: Conv3d::new(format!("{name}.dw"), h, h, ConvSpec::cubic(3).padding(1).groups(h)),
            fc2: Conv3d::new(format!("{name}.fc2"), h, c, ConvSpec::pointwise()),
        }
    }
}

impl Layer for ConvFF {
    fn slots(&self, out: &mut Vec<SlotSpec>) {
        self.fc1.slots(out);
        self.dw.slots(out);
        self.fc2.slots(out);
    }

    fn param_count(&self) -> usize {
        self.fc1.param_count() + self.dw.param_count() + self.fc2.param_count()
    }

    fn flops(&self, input: [usize; 4], counter: &mut FlopCounter) -> Result<[usize; 4]> {
        let s = self.fc1.flops(input, counter)?;
        let s = self.dw.flops(s, counter)?;
        counter.elementwise(&self.dw.name, "gelu", s, 1.0);
        self.fc2.flops(s, counter)
    }

    fn forward<F: Real>(&self, ctx: &mut Ctx<'_, F>, x: &Tensor<F>) -> Result<Tensor<F>> {
        check_channels(x, self.channels, "conv_ff")?;
        let h = self.fc1.forward(ctx, x)?;
        let h = gelu(&self.dw.forward(ctx, &h)?);
        self.fc2.forward(ctx, &h)
    }
}

/// Overlapping patch embedding (3³ conv, pad 1) or its transposed
/// counterpart, followed by batch norm.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchEmbed {
    pub conv: Conv3d,
    pub norm: BatchNorm3d,
}

impl PatchEmbed {
    pub fn embed(name: &str, cin: usize, cout: usize, stride: usize) -> Self {
        PatchEmbed {
            conv: Conv3d::new(format!("{name}.conv"), cin, cout, ConvSpec::cubic(3).stride(stride).padding(1)),
            norm: BatchNorm3d::new(format!("{name}.norm"), cout),
        }
    }

    /// Learnt ×2 upsampling: transposed 3³ conv, stride 2, pad 1, output padding 1.
    pub fn expand(name: &str, cin: usize, cout: usize) -> Self {
        PatchEmbed {
            conv: Conv3d::new(format!("{name}.conv"), cin, cout, ConvSpec::cubic(3).stride(2).padding(1).transposed(1)),
            norm: BatchNorm3d::new(format!("{name}.norm"), cout),
        }
    }

    fn check_input(&self, spatial: &[usize]) -> Result<()> {
        let s = self.conv.spec.stride[0];
        if !self.conv.spec.transpose && spatial.iter().any(|&d| d < s) {
            return Err(Error::shape(format!("{}: spatial size {spatial:?} smaller than stride {s}", self.conv.name)));
        }
        Ok(())
    }
}

impl Layer for PatchEmbed {
    fn slots(&self, out: &mut Vec<SlotSpec>) {
        self.conv.slots(out);
        self.norm.slots(out);
    }

    fn param_count(&self) -> usize {
        self.conv.param_count() + self.norm.param_count()
    }

    fn flops(&self, input: [usize; 4], counter: &mut FlopCounter) -> Result<[usize; 4]> {
        self.check_input(&input[1..])?;
        let s = self.conv.flops(input, counter)?;
        self.norm.flops(s, counter)
    }

    fn forward<F: Real>(&self, ctx: &mut Ctx<'_, F>, x: &Tensor<F>) -> Result<Tensor<F>> {
        check_channels(x, self.conv.cin, &self.conv.name)?;
        self.check_input(&x.shape()[2..])?;
        let y = self.conv.forward(ctx, x)?;
        self.norm.forward(ctx, &y)
    }
}

/// One `{BN → attention → scale, BN → ConvFF → scale}` residual pair.
#[derive(Clone, Debug, PartialEq)]
pub struct LkaRepeat {
    pub norm1: BatchNorm3d,
    pub attn: AttentionModule,
    pub scale1: LayerScale,
    pub norm2: BatchNorm3d,
    pub ffn: ConvFF,
    pub scale2: LayerScale,
}

impl LkaRepeat {
    pub fn new(name: &str, channels: usize, p: &BlockParams) -> Self {
        let c = channels;
        LkaRepeat {
            norm1: BatchNorm3d::new(format!("{name}.norm1"), c),
            attn: AttentionModule::new(&format!("{name}.attn"), c, &p.lka),
            scale1: LayerScale { name: format!("{name}.scale1"), channels: c, init: p.layer_scale_init },
            norm2: BatchNorm3d::new(format!("{name}.norm2"), c),
            ffn: ConvFF::new(&format!("{name}.ffn"), c, p.ffn_expansion),
            scale2: LayerScale { name: format!("{name}.scale2"), channels: c, init: p.layer_scale_init },
        }
    }
}

impl Layer for LkaRepeat {
    fn slots(&self, out: &mut Vec<SlotSpec>) {
        self.norm1.slots(out);
        self.attn.slots(out);
        self.scale1.slots(out);
        self.norm2.slots(out);
        self.ffn.slots(out);
        self.scale2.slots(out);
    }

    fn param_count(&self) -> usize {
        self.norm1.param_count()
            + self.attn.param_count()
            + self.scale1.param_count()
            + self.norm2.param_count()
            + self.ffn.param_count()
            + self.scale2.param_count()
    }

    fn flops(&self, input: [usize; 4], counter: &mut FlopCounter) -> Result<[usize; 4]> {
        let s = self.norm1.flops(input, counter)?;
        let s = self.attn.flops(s, counter)?;
        let s = self.scale1.flops(s, counter)?;
        counter.elementwise(&self.scale1.name, "add", s, 1.0);
        let s = self.norm2.flops(s, counter)?;
        let s = self.ffn.flops(s, counter)?;
        let s = self.scale2.flops(s, counter)?;
        counter.elementwise(&self.scale2.name, "add", s, 1.0);
        Ok(s)
    }

    fn forward<F: Real>(&self, ctx: &mut Ctx<'_, F>, x: &Tensor<F>) -> Result<Tensor<F>> {
        let h = self.norm1.forward(ctx, x)?;
        let h = self.attn.forward(ctx, &h)?;
        let h = self.scale1.forward(ctx, &h)?;
        let y = ops::add(x, &h)?;
        let h = self.norm2.forward(ctx, &y)?;
        let h = self.ffn.forward(ctx, &h)?;
        let h = self.scale2.forward(ctx, &h)?;
        ops::add(&y, &h)
    }
}

/// Patch embedding, `N` repeats, then a channel layer norm.
#[derive(Clone, Debug, PartialEq)]
pub struct LkaBlock {
    pub params: BlockParams,
    pub embed: PatchEmbed,
    pub repeats: Vec<LkaRepeat>,
    pub norm: LayerNorm3d,
}

impl LkaBlock {
    pub fn new(name: &str, p: BlockParams) -> Result<Self> {
        p.validate()?;
        Ok(LkaBlock {
            params: p,
            embed: PatchEmbed::embed(&format!("{name}.embed"), p.in_channels, p.out_channels, p.embed_stride),
            repeats: (0..p.repeats).map(|i| LkaRepeat::new(&format!("{name}.repeat{i}"), p.out_channels, &p)).collect(),
            norm: LayerNorm3d::new(format!("{name}.norm"), p.out_channels),
        })
    }

    /// Output of the last repeat, before the final layer norm.
    pub fn forward_pre_norm<F: Real>(&self, ctx: &mut Ctx<'_, F>, x: &Tensor<F>) -> Result<Tensor<F>> {
        let mut y = self.embed.forward(ctx, x)?;
        for r in &self.repeats {
            y = r.forward(ctx, &y)?;
        }
        Ok(y)
    }
}

impl Layer for LkaBlock {
    fn slots(&self, out: &mut Vec<SlotSpec>) {
        self.embed.slots(out);
        for r in &self.repeats {
            r.slots(out);
        }
        self.norm.slots(out);
    }

    fn param_count(&self) -> usize {
        self.embed.param_count() + self.repeats.iter().map(Layer::param_count).sum::<usize>() + self.norm.param_count()
    }

    fn flops(&self, input: [usize; 4], counter: &mut FlopCounter) -> Result<[usize; 4]> {
        let mut s = self.embed.flops(input, counter)?;
        for r in &self.repeats {
            s = r.flops(s, counter)?;
        }
        self.norm.flops(s, counter)
    }

    fn forward<F: Real>(&self, ctx: &mut Ctx<'_, F>, x: &Tensor<F>) -> Result<Tensor<F>> {
        let y = self.forward_pre_norm(ctx, x)?;
        self.norm.forward(ctx, &y)
    }
}

/// Dense kernel equal to a `k1³` kernel followed by a `k2³` kernel dilated
/// by `dilation`. Returns the kernel and its per-axis support.
pub fn compose_depthwise<F: Real>(first: &[F], k1: usize, second: &[F], k2: usize, dilation: usize) -> Result<(Vec<F>, usize)> {
    if first.len() != k1 * k1 * k1 || second.len() != k2 * k2 * k2 {
        return Err(Error::shape(format!(
            "kernels of {} and {} values for sizes {k1} and {k2}",
            first.len(),
            second.len()
        )));
    }
    if dilation == 0 {
        return Err(Error::Conv("dilation must be at least 1".into()));
    }
    let side = (k1 - 1) + dilation * (k2 - 1) + 1;
    let mut out = vec![F::zero(); side * side * side];
    for a in 0..k2 {
        for b in 0..k2 {
            for c in 0..k2 {
                let s = second[(a * k2 + b) * k2 + c];
                let (oa, ob, oc) = (a * dilation, b * dilation, c * dilation);
                for i in 0..k1 {
                    for j in 0..k1 {
                        for l in 0..k1 {
                            out[((oa + i) * side + ob + j) * side + oc + l] += s * first[(i * k1 + j) * k1 + l];
                        }
                    }
                }
            }
        }
    }
    Ok((out, side))
}

/// Builds parameters for any layer and returns both.
pub fn init_layer<L: Layer, F: Real>(layer: &L, seed: u64) -> Result<ParamStore<F>> {
    let mut slots = Vec::new();
    layer.slots(&mut slots);
    ParamStore::init(&slots, seed)
}
