//! Bundled oracle suites: kernel composition, gradient checks, sliding-window
//! equivalence and metric brute force.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::blocks::{compose_depthwise, init_layer, BlockParams, Ctx, Layer, LkaBlock, LkaParams, Mode, ParamStore};
use crate::error::Result;
use crate::gradcheck::check_gradients;
use crate::inference::{sliding_window, Predictor, VoxelwiseModel, WindowSpec};
use crate::metrics::{avd, dice, hd95, lcd, lesion_f1, Connectivity, Mask};
use crate::pipeline::Volume;
use crate::tensor::activation::gelu;
use crate::tensor::norm::{batch_norm, layer_norm_channels, BatchNormState};
use crate::tensor::ops::{self, max_rel_err};
use crate::tensor::{conv3d, ConvSpec, Tensor};
use crate::training::{dice_ce_loss, LossOptions};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    KernelComposition,
    GradientChecks,
    SlidingWindow,
    MetricsOracle,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::KernelComposition, Suite::GradientChecks, Suite::SlidingWindow, Suite::MetricsOracle];

    pub fn name(self) -> &'static str {
        match self {
            Suite::KernelComposition => "kernel_composition",
            Suite::GradientChecks => "gradient_checks",
            Suite::SlidingWindow => "sliding_window",
            Suite::MetricsOracle => "metrics_oracle",
        }
    }
}

/// One measured quantity compared against its bound.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub passed: bool,
}

impl Check {
    /// Passes when `value < bound`.
    pub fn below(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Check { name: name.into(), value, bound, passed: value < bound }
    }

    /// Passes when `value == expected`.
    pub fn exact(name: impl Into<String>, value: f64, expected: f64) -> Self {
        Check { name: name.into(), value, bound: expected, passed: value == expected }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub checks: Vec<Check>,
    pub seconds: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SelftestReport {
    pub suites: Vec<SuiteReport>,
    pub seconds: f64,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(SuiteReport::passed)
    }
}

/// Problem sizes for every suite.
#[derive(Clone, Debug, PartialEq)]
pub struct Sizes {
    pub kernel_pairs: usize,
    pub composition_side: usize,
    pub grad_instances: usize,
    pub grad_coords: usize,
    pub volume_side: usize,
    pub window_side: usize,
    pub mask_pairs: usize,
}

impl Sizes {
    pub fn reduced() -> Self {
        Sizes { kernel_pairs: 5, composition_side: 8, grad_instances: 5, grad_coords: 24, volume_side: 48, window_side: 16, mask_pairs: 200 }
    }

    pub fn full() -> Self {
        Sizes { kernel_pairs: 50, composition_side: 12, grad_instances: 5, grad_coords: 60, volume_side: 160, window_side: 64, mask_pairs: 1000 }
    }
}

#[derive(Clone, Debug)]
pub struct SelftestOptions {
    pub sizes: Sizes,
    pub seed: u64,
    /// Perturbs the centre tap of every composed kernel, which must make the
    /// composition suite fail.
    pub corrupt_kernel: bool,
}

impl Default for SelftestOptions {
    fn default() -> Self {
        SelftestOptions { sizes: Sizes::reduced(), seed: 0, corrupt_kernel: false }
    }
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_vec(shape.to_vec(), rand_vec(rng, shape.iter().product())).expect("shape matches data")
}

/// Single-channel cube of side `n` centred in zeros of side `n + 2·border`.
fn zero_extend(x: &[f64], n: usize, border: usize) -> Vec<f64> {
    let m = n + 2 * border;
    let mut out = vec![0.0; m * m * m];
    for z in 0..n {
        for y in 0..n {
            let src = (z * n + y) * n;
            let dst = ((z + border) * m + y + border) * m + border;
            out[dst..dst + n].copy_from_slice(&x[src..src + n]);
        }
    }
    out
}

fn crop_centre(x: &[f64], m: usize, n: usize) -> Vec<f64> {
    let b = (m - n) / 2;
    let mut out = Vec::with_capacity(n * n * n);
    for z in 0..n {
        for y in 0..n {
            let src = ((z + b) * m + y + b) * m + b;
            out.extend_from_slice(&x[src..src + n]);
        }
    }
    out
}

/// Compares `dDW(DW(x))` with one dense convolution by the composed kernel
/// for random per-channel kernel pairs. Returns worst 64- and 32-bit
/// relative errors and every composed side length.
pub fn composition_errors(pairs: usize, side: usize, seed: u64, corrupt: bool) -> Result<(f64, f64, Vec<usize>)> {
    let p = LkaParams::default();
    let (k1, k2, dil) = (p.dw_kernel, p.dilated_kernel, p.dilation);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut e64, mut e32) = (0.0f64, 0.0f64);
    let mut sides = Vec::new();
    let dw = ConvSpec::cubic(k1).padding((k1 - 1) / 2);
    let ddw = ConvSpec::cubic(k2).dilation(dil).padding(dil * (k2 - 1) / 2);
    for _ in 0..pairs {
        let w1 = rand_vec(&mut rng, k1.pow(3));
        let w2 = rand_vec(&mut rng, k2.pow(3));
        let x = rand_vec(&mut rng, side.pow(3));
        let (mut kc, ks) = compose_depthwise(&w1, k1, &w2, k2, dil)?;
        if corrupt {
            let centre = kc.len() / 2;
            kc[centre] += 1.0;
        }
        sides.push(ks);
        let half = (ks - 1) / 2;
        let x_t = Tensor::from_vec(vec![1, 1, side, side, side], x.clone())?;
        let dense = Tensor::from_vec(vec![1, 1, ks, ks, ks], kc)?;
        let want = conv3d(&x_t, &dense, None, &ConvSpec::cubic(ks).padding(half))?;

        // The sequential path runs on a zero-extended grid so no intermediate
        // value is lost at the border.
        let m = side + 2 * half;
        let ext = Tensor::from_vec(vec![1, 1, m, m, m], zero_extend(&x, side, half))?;
        let t1 = Tensor::from_vec(vec![1, 1, k1, k1, k1], w1)?;
        let t2 = Tensor::from_vec(vec![1, 1, k2, k2, k2], w2)?;
        let seq = conv3d(&conv3d(&ext, &t1, None, &dw)?, &t2, None, &ddw)?;
        e64 = e64.max(max_rel_err(&crop_centre(seq.data(), m, side), want.data()));

        let seq32 = conv3d(&conv3d(&ext.cast::<f32>(), &t1.cast(), None, &dw)?, &t2.cast(), None, &ddw)?;
        let got32: Vec<f64> = seq32.data().iter().map(|&v| v as f64).collect();
        e32 = e32.max(max_rel_err(&crop_centre(&got32, m, side), want.data()));
    }
    Ok((e64, e32, sides))
}

fn suite_composition(o: &SelftestOptions) -> Result<Vec<Check>> {
    let (e64, e32, sides) = composition_errors(o.sizes.kernel_pairs, o.sizes.composition_side, o.seed, o.corrupt_kernel)?;
    let support = LkaParams::default().composed_support() as f64;
    let bad_side = sides.iter().find(|&&s| s as f64 != support).copied().unwrap_or(support as usize);
    Ok(vec![
        Check::below("composition_f64", e64, 1e-12),
        Check::below("composition_f32", e32, 1e-5),
        Check::exact("composed_support", bad_side as f64, support),
    ])
}

fn project(y: &Tensor<f64>, seed: u64) -> Result<Tensor<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let r = rand_tensor(&mut rng, y.shape());
    Ok(ops::sum(&ops::mul(y, &r)?))
}

type LossFn<'a> = Box<dyn Fn(&[Tensor<f64>]) -> Result<Tensor<f64>> + 'a>;

/// Worst relative error of every primitive gradient (keyed by primitive)
/// over `instances` random draws.
pub fn primitive_gradient_errors(instances: usize, coords: usize, seed: u64) -> Result<Vec<(String, f64)>> {
    let mut worst: Vec<(String, f64)> = Vec::new();
    let mut record = |name: &str, e: f64| match worst.iter_mut().find(|(n, _)| n == name) {
        Some((_, w)) => *w = w.max(e),
        None => worst.push((name.to_string(), e)),
    };
    let convs = [
        ("conv3d", 3, 4, [4, 5, 4], ConvSpec::cubic(3).padding(1)),
        ("conv3d_strided", 2, 3, [5, 6, 5], ConvSpec::cubic(3).stride(2).padding(1)),
        ("conv3d_depthwise_dilated", 3, 3, [6, 6, 6], ConvSpec::cubic(3).dilation(2).padding(2).groups(3)),
        ("conv3d_pointwise", 3, 2, [3, 4, 3], ConvSpec::pointwise()),
        ("conv3d_transposed", 2, 3, [3, 3, 3], ConvSpec::cubic(3).stride(2).padding(1).transposed(1)),
        ("conv3d_transposed_k2", 2, 2, [3, 2, 3], ConvSpec::cubic(2).stride(2).transposed(0)),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for inst in 0..instances as u64 {
        let s = seed.wrapping_add(inst);
        for (name, cin, cout, sp, spec) in &convs {
            let x = rand_tensor(&mut rng, &[2, *cin, sp[0], sp[1], sp[2]]);
            let w = rand_tensor(&mut rng, &spec.weight_shape(*cin, *cout));
            let b = rand_tensor(&mut rng, &[*cout]);
            let r = check_gradients(|t| project(&conv3d(&t[0], &t[1], Some(&t[2]), spec)?, s), &[x, w, b], 1e-5, coords, s)?;
            record(name, r.max_rel_err);
        }
        let shape = [2, 3, 3, 2, 4];
        let x = rand_tensor(&mut rng, &shape);
        let y = rand_tensor(&mut rng, &shape);
        let ch = rand_tensor(&mut rng, &[3]);
        let gamma = rand_tensor(&mut rng, &[3]);
        let beta = rand_tensor(&mut rng, &[3]);
        let bn_state = BatchNormState { running_mean: vec![0.1, -0.2, 0.3], running_var: vec![1.5, 0.7, 2.0] };
        let cases: Vec<(&str, Vec<Tensor<f64>>, LossFn)> = vec![
            ("add", vec![x.clone(), ch.clone()], Box::new(|t| project(&ops::add(&t[0], &t[1])?, s))),
            ("sub", vec![x.clone(), y.clone()], Box::new(|t| project(&ops::sub(&t[0], &t[1])?, s))),
            ("mul", vec![x.clone(), y.clone()], Box::new(|t| project(&ops::mul(&t[0], &t[1])?, s))),
            ("mul_broadcast", vec![x.clone(), ch.clone()], Box::new(|t| project(&ops::mul(&t[0], &t[1])?, s))),
            ("scale", vec![x.clone()], Box::new(|t| project(&ops::scale(&t[0], -1.7), s))),
            ("sum", vec![x.clone()], Box::new(|t| Ok(ops::scale(&ops::sum(&ops::mul(&t[0], &t[0])?), 0.5)))),
            ("mean", vec![x.clone()], Box::new(|t| Ok(ops::mean(&ops::mul(&t[0], &t[0])?)))),
            ("sum_per_channel", vec![x.clone()], Box::new(|t| project(&ops::sum_per_channel(&ops::mul(&t[0], &t[0])?)?, s))),
            ("concat_channels", vec![x.clone(), y.clone()], Box::new(|t| {
                let c = ops::concat_channels(&[t[0].clone(), t[1].clone()])?;
                project(&ops::mul(&c, &c)?, s)
            })),
            ("reshape", vec![x.clone()], Box::new(|t| project(&ops::mul(&t[0].reshape(vec![6, 3, 2, 2, 2])?, &t[0].reshape(vec![6, 3, 2, 2, 2])?)?, s))),
            ("gelu", vec![x.clone()], Box::new(|t| project(&gelu(&ops::scale(&t[0], 2.0)), s))),
            ("batch_norm_train", vec![x.clone(), gamma.clone(), beta.clone()], Box::new(|t| {
                let mut st = bn_state.clone();
                project(&batch_norm(&t[0], &t[1], &t[2], &mut st, true, 0.1, 1e-5)?, s)
            })),
            ("batch_norm_eval", vec![x.clone(), gamma.clone(), beta.clone()], Box::new(|t| {
                let mut st = bn_state.clone();
                project(&batch_norm(&t[0], &t[1], &t[2], &mut st, false, 0.1, 1e-5)?, s)
            })),
            ("layer_norm_channels", vec![x.clone(), gamma.clone(), beta.clone()], Box::new(|t| {
                project(&layer_norm_channels(&t[0], &t[1], &t[2], 1e-5)?, s)
            })),
        ];
        for (name, inputs, f) in &cases {
            record(name, check_gradients(f, inputs, 1e-5, coords, s)?.max_rel_err);
        }
        let z = Tensor::from_vec(vec![2, 3, 4, 2, 3], rand_vec(&mut rng, 144).iter().map(|v| 2.0 * v).collect())?;
        let mut onehot = vec![0.0; 144];
        for b in 0..2 {
            for v in 0..24 {
                onehot[(b * 3 + rng.gen_range(0..3)) * 24 + v] = 1.0;
            }
        }
        let g = Tensor::from_vec(vec![2, 3, 4, 2, 3], onehot)?;
        let r = check_gradients(|t| dice_ce_loss(&t[0], &g, LossOptions::default()), &[z], 1e-5, coords, s)?;
        record("dice_ce_loss", r.max_rel_err);
    }
    Ok(worst)
}

/// Worst relative error of the full-block gradient over its input and all
/// parameters, in training and inference mode.
pub fn block_gradient_error(instances: usize, coords: usize, seed: u64) -> Result<f64> {
    let mut worst = 0.0f64;
    for inst in 0..instances as u64 {
        let s = seed.wrapping_add(inst);
        let mode = if inst % 2 == 0 { Mode::Train } else { Mode::Eval };
        let p = BlockParams {
            in_channels: 2,
            out_channels: 3,
            repeats: 1 + (inst as usize % 2),
            embed_stride: 2,
            ffn_expansion: 2.0,
            layer_scale_init: 0.5,
            lka: LkaParams::default(),
        };
        let block = LkaBlock::new("b", p)?;
        let store: ParamStore<f64> = init_layer(&block, s)?;
        let mut rng = ChaCha8Rng::seed_from_u64(s ^ 0x51);
        // Under batch statistics a bias directly before a batch norm has an
        // identically zero gradient.
        let names: Vec<String> =
            store.params.keys().filter(|k| !(mode == Mode::Train && k.as_str() == "b.embed.conv.bias")).cloned().collect();
        let mut inputs = vec![rand_tensor(&mut rng, &[2, 2, 6, 6, 6])];
        for name in &names {
            let prm = &store.params[name];
            let data: Vec<f64> = prm.data.iter().map(|v| v + 0.2 * rng.gen_range(-1.0..1.0)).collect();
            inputs.push(Tensor::from_vec(prm.shape.clone(), data)?);
        }
        let r = rand_tensor(&mut rng, &[2, 3, 3, 3, 3]);
        let report = check_gradients(
            |t| {
                let mut ctx = Ctx::new(&store, mode, false);
                for (name, leaf) in names.iter().zip(&t[1..]) {
                    ctx.insert_leaf(name, leaf.clone())?;
                }
                Ok(ops::sum(&ops::mul(&block.forward(&mut ctx, &t[0])?, &r)?))
            },
            &inputs,
            1e-5,
            coords,
            s,
        )?;
        worst = worst.max(report.max_rel_err);
    }
    Ok(worst)
}

fn suite_gradients(o: &SelftestOptions) -> Result<Vec<Check>> {
    let mut checks: Vec<Check> = primitive_gradient_errors(o.sizes.grad_instances, o.sizes.grad_coords, o.seed)?
        .into_iter()
        .map(|(n, e)| Check::below(format!("grad_{n}"), e, 1e-6))
        .collect();
    checks.push(Check::below("grad_lka_block", block_gradient_error(o.sizes.grad_instances, o.sizes.grad_coords, o.seed)?, 1e-5));
    Ok(checks)
}

/// Relative error between merged sliding-window logits and a whole-volume
/// forward of a voxelwise model, with the window smaller than and equal to
/// the volume.
pub fn sliding_window_errors(volume_side: usize, window_side: usize, seed: u64) -> Result<(f64, f64)> {
    let model = VoxelwiseModel::random(2, 6, 3, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x77);
    let shape = [volume_side; 3];
    let n = 2 * volume_side.pow(3);
    let v = Volume::new(shape, [1.0; 3], 2, (0..n).map(|_| rng.gen_range(-2.0f32..2.0)).collect())?;
    let to64 = |x: &[f32]| x.iter().map(|&a| a as f64).collect::<Vec<_>>();
    let whole = to64(&model.predict(&v)?);
    let tiled = sliding_window(&model, &v, &WindowSpec::cubic(window_side))?;
    let single = sliding_window(&model, &v, &WindowSpec::cubic(volume_side))?;
    Ok((max_rel_err(&to64(&tiled.data), &whole), max_rel_err(&to64(&single.data), &whole)))
}

fn suite_sliding(o: &SelftestOptions) -> Result<Vec<Check>> {
    let (tiled, single) = sliding_window_errors(o.sizes.volume_side, o.sizes.window_side, o.seed)?;
    Ok(vec![Check::below("sliding_window_tiled", tiled, 1e-5), Check::below("sliding_window_single", single, 1e-6)])
}

fn coords(i: usize, s: [usize; 3]) -> [i64; 3] {
    [(i / (s[1] * s[2])) as i64, ((i / s[2]) % s[1]) as i64, (i % s[2]) as i64]
}

fn brute_components(m: &Mask, max_l1: i64) -> usize {
    let n = m.data.len();
    let mut label = vec![usize::MAX; n];
    let mut count = 0;
    for start in 0..n {
        if !m.data[start] || label[start] != usize::MAX {
            continue;
        }
        let mut stack = vec![start];
        label[start] = count;
        while let Some(a) = stack.pop() {
            let ca = coords(a, m.shape);
            for b in 0..n {
                let cb = coords(b, m.shape);
                let d: Vec<i64> = (0..3).map(|k| (ca[k] - cb[k]).abs()).collect();
                if m.data[b] && label[b] == usize::MAX && d.iter().all(|&x| x <= 1) && d.iter().sum::<i64>() <= max_l1 {
                    label[b] = count;
                    stack.push(b);
                }
            }
        }
        count += 1;
    }
    count
}

fn brute_hd95(p: &Mask, g: &Mask, sp: [f64; 3]) -> Option<f64> {
    let s = p.shape;
    let surface = |m: &Mask| -> Vec<usize> {
        (0..m.data.len())
            .filter(|&i| {
                m.data[i]
                    && (0..6).any(|k| {
                        let mut q = coords(i, s);
                        q[k / 2] += if k % 2 == 0 { -1 } else { 1 };
                        q.iter().zip(s).any(|(&v, n)| v < 0 || v >= n as i64)
                            || !m.data[((q[0] as usize) * s[1] + q[1] as usize) * s[2] + q[2] as usize]
                    })
            })
            .collect()
    };
    let (a, b) = (surface(p), surface(g));
    if a.is_empty() || b.is_empty() {
        return None;
    }
    let dist = |i: usize, j: usize| {
        let (ci, cj) = (coords(i, s), coords(j, s));
        (0..3).map(|k| ((ci[k] - cj[k]) as f64 * sp[k]).powi(2)).sum::<f64>().sqrt()
    };
    let directed = |from: &[usize], to: &[usize]| {
        let mut d: Vec<f64> = from.iter().map(|&i| to.iter().map(|&j| dist(i, j)).fold(f64::INFINITY, f64::min)).collect();
        d.sort_by(f64::total_cmp);
        let pos = 0.95 * (d.len() - 1) as f64;
        let lo = pos as usize;
        let hi = (lo + 1).min(d.len() - 1);
        d[lo] + (d[hi] - d[lo]) * (pos - lo as f64)
    };
    Some(directed(&a, &b).max(directed(&b, &a)))
}

/// Counts of random 4³ mask pairs on which each metric disagrees with its
/// brute-force oracle, and the worst HD95 deviation.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MetricsOracleOutcome {
    pub pairs: usize,
    pub dice_mismatches: usize,
    pub lcd_mismatches: usize,
    pub avd_mismatches: usize,
    pub hd95_presence_mismatches: usize,
    pub hd95_max_abs_err: f64,
}

pub fn metrics_oracle(pairs: usize, seed: u64) -> Result<MetricsOracleOutcome> {
    let shape = [4, 4, 4];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = MetricsOracleOutcome { pairs, ..Default::default() };
    let dyadic = [0.5, 0.75, 1.0, 1.25, 2.0];
    for t in 0..pairs {
        let density = [0.05, 0.2, 0.5, 0.8][t % 4];
        let p = Mask::new(shape, (0..64).map(|_| rng.gen_bool(density)).collect())?;
        let g = Mask::new(shape, (0..64).map(|_| rng.gen_bool(density)).collect())?;
        let sp = [0, 1, 2].map(|_| dyadic[rng.gen_range(0..dyadic.len())]);
        let np = p.data.iter().filter(|&&b| b).count();
        let ng = g.data.iter().filter(|&&b| b).count();
        let inter = p.data.iter().zip(&g.data).filter(|(&a, &b)| a && b).count();
        let want_dice = if np + ng == 0 { 1.0 } else { 2.0 * inter as f64 / (np + ng) as f64 };
        out.dice_mismatches += usize::from(dice(&p, &g)? != want_dice);
        for (conn, l1) in [(Connectivity::Six, 1), (Connectivity::Eighteen, 2), (Connectivity::TwentySix, 3)] {
            let want = brute_components(&p, l1).abs_diff(brute_components(&g, l1));
            out.lcd_mismatches += usize::from(lcd(&p, &g, conn)? != want);
        }
        out.avd_mismatches += usize::from(avd(&p, &g, sp)? != np.abs_diff(ng) as f64 * sp[0] * sp[1] * sp[2]);
        match (hd95(&p, &g, sp)?, brute_hd95(&p, &g, sp)) {
            (Some(a), Some(b)) => out.hd95_max_abs_err = out.hd95_max_abs_err.max((a - b).abs()),
            (None, None) => {}
            _ => out.hd95_presence_mismatches += 1,
        }
    }
    Ok(out)
}

/// The three worked examples: Dice 2/3, lesion-wise F1 2/3, HD95 3.0 mm.
pub fn worked_examples() -> Result<[f64; 3]> {
    let line = |on: &[usize]| {
        let mut m = Mask::empty([1, 1, 8]);
        on.iter().for_each(|&i| m.data[i] = true);
        m
    };
    let d = dice(&line(&[0, 1, 2, 3]), &line(&[2, 3]))?;
    let f1 = lesion_f1(&line(&[0]), &line(&[0, 5]), Connectivity::TwentySix)?;
    let h = hd95(&line(&[1]), &line(&[4]), [1.0; 3])?.unwrap_or(f64::NAN);
    Ok([d, f1, h])
}

fn suite_metrics(o: &SelftestOptions) -> Result<Vec<Check>> {
    let r = metrics_oracle(o.sizes.mask_pairs, o.seed)?;
    let [d, f1, h] = worked_examples()?;
    Ok(vec![
        Check::exact("dice_mismatches", r.dice_mismatches as f64, 0.0),
        Check::exact("lcd_mismatches", r.lcd_mismatches as f64, 0.0),
        Check::exact("avd_mismatches", r.avd_mismatches as f64, 0.0),
        Check::exact("hd95_presence_mismatches", r.hd95_presence_mismatches as f64, 0.0),
        Check::below("hd95_max_abs_err", r.hd95_max_abs_err, 1e-9),
        Check::exact("worked_dice", d, 2.0 / 3.0),
        Check::exact("worked_lesion_f1", f1, 2.0 / 3.0),
        Check::exact("worked_hd95", h, 3.0),
    ])
}

pub fn run_suite(suite: Suite, opts: &SelftestOptions) -> SuiteReport {
    let t0 = Instant::now();
    let result = match suite {
        Suite::KernelComposition => suite_composition(opts),
        Suite::GradientChecks => suite_gradients(opts),
        Suite::SlidingWindow => suite_sliding(opts),
        Suite::MetricsOracle => suite_metrics(opts),
    };
    let checks = result.unwrap_or_else(|e| {
        vec![Check { name: format!("{}_error: {e}", suite.name()), value: f64::NAN, bound: f64::NAN, passed: false }]
    });
    SuiteReport { suite, checks, seconds: t0.elapsed().as_secs_f64() }
}

/// Runs every suite once, in registry order.
pub fn run_selftest(opts: &SelftestOptions) -> SelftestReport {
    let t0 = Instant::now();
    let suites = Suite::ALL.iter().map(|&s| run_suite(s, opts)).collect();
    SelftestReport { suites, seconds: t0.elapsed().as_secs_f64() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corrupt_kernel_fails_by_name() {
        let opts = SelftestOptions { corrupt_kernel: true, sizes: Sizes { kernel_pairs: 1, composition_side: 4, ..Sizes::reduced() }, seed: 1 };
        let r = run_suite(Suite::KernelComposition, &opts);
        let failed: Vec<&str> = r.failures().map(|c| c.name.as_str()).collect();
        assert!(failed.contains(&"composition_f64"), "{failed:?}");
        let clean = run_suite(Suite::KernelComposition, &SelftestOptions { corrupt_kernel: false, ..opts });
        assert!(clean.passed(), "{:?}", clean.checks);
    }

    #[test]
    fn worked_examples_reproduce() {
        assert_eq!(worked_examples().unwrap(), [2.0 / 3.0, 2.0 / 3.0, 3.0]);
    }

    #[test]
    fn registry_lists_each_suite_once() {
        let names: std::collections::BTreeSet<&str> = Suite::ALL.iter().map(|s| s.name()).collect();
        assert_eq!(names.len(), Suite::ALL.len());
    }
}
