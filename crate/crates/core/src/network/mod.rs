//! U-Net assemblies (LKA encoder with convolutional or LKA decoder, and a
//! plain convolutional baseline) with parameter and FLOP accounting.

pub mod checkpoint;

use serde::{Deserialize, Serialize};

use crate::blocks::{
    BlockParams, Conv3d, ConvNormAct, Ctx, FlopCounter, Layer, LayerNorm3d, LkaBlock, LkaParams, LkaRepeat, Mode,
    ParamStore, PatchEmbed, SlotSpec,
};
use crate::error::{Error, Result};
use crate::tensor::{ops, ConvSpec, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    LkaE,
    LkaEd,
    PlainUnet,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::LkaE, Variant::LkaEd, Variant::PlainUnet];

    pub fn name(self) -> &'static str {
        match self {
            Variant::LkaE => "lka_e",
            Variant::LkaEd => "lka_ed",
            Variant::PlainUnet => "plain_unet",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?} (expected lka_e, lka_ed or plain_unet)")))
    }
}

pub const DEFAULT_FFN_EXPANSION: f64 = 11.0;
pub const DEFAULT_LAYER_SCALE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub variant: Variant,
    pub stage_channels: Vec<usize>,
    pub stage_repeats: Vec<usize>,
    pub in_channels: usize,
    pub num_classes: usize,
    pub lka: LkaParams,
    pub ffn_expansion: f64,
    pub layer_scale_init: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::LkaE,
            stage_channels: vec![32, 64, 128, 256, 320, 320],
            stage_repeats: vec![1, 1, 1, 1, 2, 1],
            in_channels: 2,
            num_classes: 2,
            lka: LkaParams::default(),
            ffn_expansion: DEFAULT_FFN_EXPANSION,
            layer_scale_init: DEFAULT_LAYER_SCALE,
        }
    }
}

impl ModelConfig {
    pub fn new(variant: Variant, in_channels: usize, num_classes: usize) -> Self {
        ModelConfig { variant, in_channels, num_classes, ..Default::default() }
    }

    /// A narrower, shallower configuration for fast experiments.
    pub fn small(variant: Variant, in_channels: usize, num_classes: usize) -> Self {
        ModelConfig {
            variant,
            in_channels,
            num_classes,
            stage_channels: vec![8, 16, 24, 32],
            stage_repeats: vec![1, 1, 1, 1],
            ffn_expansion: 2.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.stage_channels.len();
        if n == 0 || n != self.stage_repeats.len() {
            return Err(Error::Config(format!(
                "stage_channels ({n}) and stage_repeats ({}) must be non-empty and of equal length",
                self.stage_repeats.len()
            )));
        }
        if self.stage_channels.contains(&0) || self.stage_repeats.contains(&0) {
            return Err(Error::Config("stage channels and repeats must be positive".into()));
        }
        if self.in_channels == 0 || self.num_classes == 0 {
            return Err(Error::Config("in_channels and num_classes must be at least 1".into()));
        }
        if !self.layer_scale_init.is_finite() {
            return Err(Error::Config("layer_scale_init must be finite".into()));
        }
        self.lka.validate()
    }

    /// Spatial sizes must be multiples of this.
    pub fn downsample_factor(&self) -> usize {
        1 << (self.stage_channels.len() - 1)
    }

    fn block_params(&self, cin: usize, stage: usize) -> BlockParams {
        BlockParams {
            in_channels: cin,
            out_channels: self.stage_channels[stage],
            repeats: self.stage_repeats[stage],
            embed_stride: if stage == 0 { 1 } else { 2 },
            ffn_expansion: self.ffn_expansion,
            layer_scale_init: self.layer_scale_init,
            lka: self.lka,
        }
    }
}

/// Two `conv → BN → GELU` layers, the first optionally strided.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvStage {
    pub first: ConvNormAct,
    pub second: ConvNormAct,
}

impl ConvStage {
    fn new(name: &str, cin: usize, cout: usize, stride: usize) -> Self {
        ConvStage {
            first: ConvNormAct::new(&format!("{name}.conv0"), cin, cout, stride),
            second: ConvNormAct::new(&format!("{name}.conv1"), cout, cout, 1),
        }
    }
}

impl Layer for ConvStage {
    fn slots(&self, out: &mut Vec<SlotSpec>) {
        self.first.slots(out);
        self.second.slots(out);
    }
    fn param_count(&self) -> usize {
        self.first.param_count() + self.second.param_count()
    }
    fn flops(&self, input: [usize; 4], counter: &mut FlopCounter) -> Result<[usize; 4]> {
        let s = self.first.flops(input, counter)?;
        self.second.flops(s, counter)
    }
    fn forward<F: Real>(&self, ctx: &mut Ctx<'_, F>, x: &Tensor<F>) -> Result<Tensor<F>> {
        let y = self.first.forward(ctx, x)?;
        self.second.forward(ctx, &y)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum EncoderStage {
    Lka(LkaBlock),
    Conv(ConvStage),
}

impl EncoderStage {
    /// The stage's last feature map before its final normalization.
    fn forward_pre_norm<F: Real>(&self, ctx: &mut Ctx<'_, F>, x: &Tensor<F>) -> Result<Tensor<F>> {
        match self {
            EncoderStage::Lka(b) => b.forward_pre_norm(ctx, x),
            EncoderStage::Conv(s) => {
                let y = s.first.forward(ctx, x)?;
                s.second.conv.forward(ctx, &y)
            }
        }
    }
}

impl Layer for EncoderStage {
    fn slots(&self, out: &mut Vec<SlotSpec>) {
        match self {
            EncoderStage::Lka(b) => b.slots(out),
            EncoderStage::Conv(s) => s.slots(out),
        }
    }
    fn param_count(&self) -> usize {
        match self {
            EncoderStage::Lka(b) => b.param_count(),
            EncoderStage::Conv(s) => s.param_count(),
        }
    }
    fn flops(&self, input: [usize; 4], counter: &mut FlopCounter) -> Result<[usize; 4]> {
        match self {
            EncoderStage::Lka(b) => b.flops(input, counter),
            EncoderStage::Conv(s) => s.flops(input, counter),
        }
    }
    fn forward<F: Real>(&self, ctx: &mut Ctx<'_, F>, x: &Tensor<F>) -> Result<Tensor<F>> {
        match self {
            EncoderStage::Lka(b) => b.forward(ctx, x),
            EncoderStage::Conv(s) => s.forward(ctx, x),
        }
    }
}

/// One up-step: upsample the coarse map, concatenate the skip, refine.
#[derive(Clone, Debug, PartialEq)]
pub enum DecoderStage {
    Conv { up: Conv3d, refine: ConvStage },
    Lka { up: PatchEmbed, fuse: Conv3d, repeats: Vec<LkaRepeat>, norm: LayerNorm3d },
}

impl DecoderStage {
    fn conv(name: &str, coarse: usize, skip: usize) -> Self {
        DecoderStage::Conv {
            up: Conv3d::new(format!("{name}.up"), coarse, skip, ConvSpec::cubic(2).stride(2).transposed(0)),
            refine: ConvStage::new(&format!("{name}.refine"), 2 * skip, skip, 1),
        }
    }

    fn lka(name: &str, coarse: usize, skip: usize, p: &BlockParams) -> Self {
        DecoderStage::Lka {
            up: PatchEmbed::expand(&format!("{name}.up"), coarse, skip),
            fuse: Conv3d::new(format!("{name}.fuse"), 2 * skip, skip, ConvSpec::pointwise()),
            repeats: (0..p.repeats).map(|i| LkaRepeat::new(&format!("{name}.repeat{i}"), skip, p)).collect(),
            norm: LayerNorm3d::new(format!("{name}.norm"), skip),
        }
    }

    fn slots(&self, out: &mut Vec<SlotSpec>) {
        match self {
            DecoderStage::Conv { up, refine } => {
                up.slots(out);
                refine.slots(out);
            }
            DecoderStage::Lka { up, fuse, repeats, norm } => {
                up.slots(out);
                fuse.slots(out);
                repeats.iter().for_each(|r| r.slots(out));
                norm.slots(out);
            }
        }
    }

    fn param_count(&self) -> usize {
        match self {
            DecoderStage::Conv { up, refine } => up.param_count() + refine.param_count(),
            DecoderStage::Lka { up, fuse, repeats, norm } => {
                up.param_count() + fuse.param_count() + repeats.iter().map(Layer::param_count).sum::<usize>() + norm.param_count()
            }
        }
    }

    fn flops(&self, coarse: [usize; 4], skip: [usize; 4], counter: &mut FlopCounter) -> Result<[usize; 4]> {
        let up_shape = match self {
            DecoderStage::Conv { up, .. } => up.flops(coarse, counter)?,
            DecoderStage::Lka { up, .. } => up.flops(coarse, counter)?,
        };
        if up_shape[1..] != skip[1..] {
            return Err(Error::shape(format!("upsampled {up_shape:?} does not match skip {skip:?}")));
        }
        let cat = [up_shape[0] + skip[0], skip[1], skip[2], skip[3]];
        match self {
            DecoderStage::Conv { refine, .. } => refine.flops(cat, counter),
            DecoderStage::Lka { fuse, repeats, norm, .. } => {
                let mut s = fuse.flops(cat, counter)?;
                for r in repeats {
                    s = r.flops(s, counter)?;
                }
                norm.flops(s, counter)
            }
        }
    }

    fn forward<F: Real>(&self, ctx: &mut Ctx<'_, F>, coarse: &Tensor<F>, skip: &Tensor<F>) -> Result<Tensor<F>> {
        let up = match self {
            DecoderStage::Conv { up, .. } => up.forward(ctx, coarse)?,
            DecoderStage::Lka { up, .. } => up.forward(ctx, coarse)?,
        };
        let cat = ops::concat_channels(&[up, skip.clone()])?;
        match self {
            DecoderStage::Conv { refine, .. } => refine.forward(ctx, &cat),
            DecoderStage::Lka { fuse, repeats, norm, .. } => {
                let mut y = fuse.forward(ctx, &cat)?;
                for r in repeats {
                    y = r.forward(ctx, &y)?;
                }
                norm.forward(ctx, &y)
            }
        }
    }
}

/// Layer structure of a model, independent of parameter storage.
#[derive(Clone, Debug, PartialEq)]
pub struct Architecture {
    pub config: ModelConfig,
    pub encoder: Vec<EncoderStage>,
    /// `decoder[i]` produces the resolution of encoder stage `i`.
    pub decoder: Vec<DecoderStage>,
    pub head: Conv3d,
}

pub struct ForwardOutput<F: Real> {
    pub logits: Tensor<F>,
    pub encoder: Vec<Tensor<F>>,
}

impl Architecture {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let ch = &config.stage_channels;
        let mut encoder = Vec::with_capacity(ch.len());
        for i in 0..ch.len() {
            let cin = if i == 0 { config.in_channels } else { ch[i - 1] };
            let name = format!("encoder.{i}");
            encoder.push(match config.variant {
                Variant::PlainUnet => EncoderStage::Conv(ConvStage::new(&name, cin, ch[i], if i == 0 { 1 } else { 2 })),
                Variant::LkaE | Variant::LkaEd => EncoderStage::Lka(LkaBlock::new(&name, config.block_params(cin, i))?),
            });
        }
        let decoder = (0..ch.len() - 1)
            .map(|i| {
                let name = format!("decoder.{i}");
                match config.variant {
                    Variant::LkaEd => DecoderStage::lka(&name, ch[i + 1], ch[i], &config.block_params(ch[i], i)),
                    _ => DecoderStage::conv(&name, ch[i + 1], ch[i]),
                }
            })
            .collect();
        let head = Conv3d::new("head", ch[0], config.num_classes, ConvSpec::pointwise());
        Ok(Architecture { config: config.clone(), encoder, decoder, head })
    }

    pub fn slots(&self) -> Vec<SlotSpec> {
        let mut out = Vec::new();
        self.encoder.iter().for_each(|s| s.slots(&mut out));
        self.decoder.iter().for_each(|s| s.slots(&mut out));
        self.head.slots(&mut out);
        out
    }

    /// Parameter count composed from each layer's closed-form count.
    pub fn param_count(&self) -> usize {
        self.encoder.iter().map(Layer::param_count).sum::<usize>()
            + self.decoder.iter().map(DecoderStage::param_count).sum::<usize>()
            + self.head.param_count()
    }

    pub fn check_spatial(&self, spatial: &[usize]) -> Result<()> {
        let f = self.config.downsample_factor();
        if spatial.len() != 3 || spatial.iter().any(|&d| d == 0 || d % f != 0) {
            return Err(Error::shape(format!("spatial size {spatial:?} must be positive multiples of {f}")));
        }
        Ok(())
    }

    /// FLOPs for one input of shape `[C, D, H, W]`.
    pub fn flops(&self, input: [usize; 4]) -> Result<FlopCounter> {
        self.check_spatial(&input[1..])?;
        let mut counter = FlopCounter::default();
        let mut shapes = Vec::with_capacity(self.encoder.len());
        let mut s = input;
        for stage in &self.encoder {
            s = stage.flops(s, &mut counter)?;
            shapes.push(s);
        }
        let mut y = *shapes.last().expect("at least one stage");
        for i in (0..self.decoder.len()).rev() {
            y = self.decoder[i].flops(y, shapes[i], &mut counter)?;
        }
        self.head.flops(y, &mut counter)?;
        Ok(counter)
    }

    pub fn forward<F: Real>(&self, ctx: &mut Ctx<'_, F>, x: &Tensor<F>) -> Result<ForwardOutput<F>> {
        if x.ndim() != 5 {
            return Err(Error::shape(format!("model input must be N,C,D,H,W, got {:?}", x.shape())));
        }
        if x.shape()[1] != self.config.in_channels {
            return Err(Error::shape(format!("model expects {} input channels, got {}", self.config.in_channels, x.shape()[1])));
        }
        self.check_spatial(&x.shape()[2..])?;
        let mut feats = Vec::with_capacity(self.encoder.len());
        let mut h = x.clone();
        for stage in &self.encoder {
            h = stage.forward(ctx, &h)?;
            feats.push(h.clone());
        }
        for i in (0..self.decoder.len()).rev() {
            h = self.decoder[i].forward(ctx, &h, &feats[i])?;
        }
        Ok(ForwardOutput { logits: self.head.forward(ctx, &h)?, encoder: feats })
    }

    /// Runs the encoder up to `stage` and returns that stage's final
    /// feature map before normalization.
    pub fn encoder_pre_norm<F: Real>(&self, ctx: &mut Ctx<'_, F>, x: &Tensor<F>, stage: usize) -> Result<Tensor<F>> {
        if stage >= self.encoder.len() {
            return Err(Error::OutOfRange(format!("stage {stage} of {}", self.encoder.len())));
        }
        let mut h = x.clone();
        for s in &self.encoder[..stage] {
            h = s.forward(ctx, &h)?;
        }
        self.encoder[stage].forward_pre_norm(ctx, &h)
    }
}

/// A built model: architecture plus parameters and batch-norm states.
#[derive(Clone, Debug)]
pub struct Model<F: Real = f32> {
    pub arch: Architecture,
    pub params: ParamStore<F>,
}

impl<F: Real> Model<F> {
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        let arch = Architecture::new(config)?;
        let params = ParamStore::init(&arch.slots(), seed)?;
        Ok(Model { arch, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.arch.config
    }

    /// Inference forward with running batch-norm statistics.
    pub fn predict(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let mut ctx = Ctx::new(&self.params, Mode::Eval, false);
        Ok(self.arch.forward(&mut ctx, x)?.logits)
    }

    pub fn cast<G: Real>(&self) -> Model<G> {
        Model { arch: self.arch.clone(), params: self.params.cast() }
    }
}

/// Total trainable scalars, from the closed-form layer counts.
pub fn count_params<F: Real>(model: &Model<F>) -> usize {
    model.arch.param_count()
}

/// Total trainable scalars, summed over the stored tensors.
pub fn count_stored_params<F: Real>(model: &Model<F>) -> usize {
    model.params.scalar_count()
}

#[derive(Clone, Debug, Serialize)]
pub struct FlopReport {
    pub variant: Variant,
    pub input_shape: [usize; 4],
    pub convention: &'static str,
    pub total_gflops: f64,
    pub conv_gflops: f64,
    pub layers: Vec<crate::blocks::FlopRow>,
}

pub const FLOP_CONVENTION: &str = "multiply-accumulate = 2 FLOPs; transposed conv counted over input voxels; \
norms 4, activations/residual adds/scales 1 FLOP per element; batch of one";

pub fn count_flops<F: Real>(model: &Model<F>, input_shape: [usize; 4]) -> Result<FlopReport> {
    let counter = model.arch.flops(input_shape)?;
    let conv: f64 = counter.rows.iter().filter(|r| r.kind.starts_with("conv")).map(|r| r.flops).sum();
    Ok(FlopReport {
        variant: model.config().variant,
        input_shape,
        convention: FLOP_CONVENTION,
        total_gflops: counter.total() / 1e9,
        conv_gflops: conv / 1e9,
        layers: counter.rows,
    })
}
