//! Effective receptive fields and the blur probe.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::blocks::{Ctx, Mode};
use crate::error::{Error, Result};
use crate::inference::{logits_to_labels, sliding_window, Predictor, WindowSpec};
use crate::metrics::{dice, hd95, Mask};
use crate::network::Model;
use crate::pipeline::{gaussian_blur, Volume};
use crate::tensor::{ops, Real, Tensor};

/// Max-normalized input-gradient magnitude of the central output voxel.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErfMap {
    /// 1-based encoder stage.
    pub stage: usize,
    pub subjects: usize,
    pub shape: [usize; 3],
    pub data: Vec<f64>,
}

impl ErfMap {
    pub fn to_volume(&self) -> Volume {
        Volume { shape: self.shape, spacing_mm: [1.0; 3], channels: 1, data: self.data.iter().map(|&v| v as f32).collect() }
    }

    pub fn center_of_mass(&self) -> [f64; 3] {
        let [_, h, w] = self.shape;
        let total: f64 = self.data.iter().sum();
        let mut c = [0.0; 3];
        for (i, &v) in self.data.iter().enumerate() {
            let p = [i / (h * w), (i / w) % h, i % w];
            for a in 0..3 {
                c[a] += v * p[a] as f64;
            }
        }
        c.map(|x| x / total)
    }
}

/// `|∂(Σ_c y[c, centre]) / ∂x|` summed over input channels for one input.
/// `f` maps an `1, C, D, H, W` tensor to a feature map of any spatial size.
pub fn input_gradient<F: Real>(f: impl Fn(&Tensor<F>) -> Result<Tensor<F>>, input: &Volume) -> Result<Vec<f64>> {
    let [d, h, w] = input.shape;
    let x = Tensor::from_vec(vec![1, input.channels, d, h, w], input.data.iter().map(|&v| F::lit(v as f64)).collect())?
        .requires_grad(true);
    let y = f(&x)?;
    let s = y.shape().to_vec();
    if s.len() != 5 || s[0] != 1 {
        return Err(Error::shape(format!("feature map must be 1,C,D,H,W, got {s:?}")));
    }
    let (c, sp) = (s[1], [s[2], s[3], s[4]]);
    let centre = ((sp[0] / 2) * sp[1] + sp[1] / 2) * sp[2] + sp[2] / 2;
    let nvox = sp[0] * sp[1] * sp[2];
    let mut seed = vec![F::zero(); c * nvox];
    for ch in 0..c {
        seed[ch * nvox + centre] = F::one();
    }
    let loss = ops::sum(&ops::mul(&y, &Tensor::from_vec(s, seed)?)?);
    loss.backward()?;
    let g = x.grad().unwrap_or_else(|| vec![F::zero(); x.numel()]);
    let n = d * h * w;
    Ok((0..n).map(|i| (0..input.channels).map(|ch| g[ch * n + i].as_f64().abs()).sum()).collect())
}

/// Averages per-input gradient maps and divides by the maximum (an all-zero
/// map stays zero).
pub fn erf_from<F: Real>(f: impl Fn(&Tensor<F>) -> Result<Tensor<F>> + Sync, stage: usize, inputs: &[Volume]) -> Result<ErfMap> {
    let first = inputs.first().ok_or_else(|| Error::Empty("ERF needs at least one input".into()))?;
    if inputs.iter().any(|v| v.shape != first.shape || v.channels != first.channels) {
        return Err(Error::shape("ERF inputs must share one shape"));
    }
    let maps: Vec<Vec<f64>> = inputs.par_iter().map(|v| input_gradient(&f, v)).collect::<Result<_>>()?;
    let mut data = vec![0.0; maps[0].len()];
    for m in &maps {
        data.iter_mut().zip(m).for_each(|(a, b)| *a += b);
    }
    let max = data.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        data.iter_mut().for_each(|v| *v /= max);
    }
    Ok(ErfMap { stage, subjects: inputs.len(), shape: first.shape, data })
}

/// ERF of encoder stage `stage` (1-based) at the stage's final feature map
/// before normalization, in inference mode.
pub fn erf_map<F: Real>(model: &Model<F>, stage: usize, inputs: &[Volume]) -> Result<ErfMap> {
    let stages = model.arch.encoder.len();
    if stage == 0 || stage > stages {
        return Err(Error::OutOfRange(format!("stage {stage} not in 1..={stages}")));
    }
    erf_from(
        |x| {
            let mut ctx = Ctx::new(&model.params, Mode::Eval, false);
            model.arch.encoder_pre_norm(&mut ctx, x, stage - 1)
        },
        stage,
        inputs,
    )
}

/// Radius of the smallest ball about the geometric centre containing every
/// voxel with value ≥ `threshold`.
pub fn erf_radius(map: &ErfMap, threshold: f64) -> Result<f64> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!("threshold must be in (0, 1), got {threshold}")));
    }
    let [d, h, w] = map.shape;
    let c = [(d / 2) as f64, (h / 2) as f64, (w / 2) as f64];
    let mut r2: Option<f64> = None;
    for (i, &v) in map.data.iter().enumerate() {
        if v >= threshold {
            let p = [(i / (h * w)) as f64, ((i / w) % h) as f64, (i % w) as f64];
            let dist = (0..3).map(|a| (p[a] - c[a]).powi(2)).sum::<f64>();
            r2 = Some(r2.map_or(dist, |r: f64| r.max(dist)));
        }
    }
    r2.map(f64::sqrt).ok_or_else(|| Error::Empty(format!("no ERF value ≥ {threshold}")))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BlurProbeRow {
    pub case: String,
    pub sigma: f64,
    pub dice: f64,
    /// `None` when exactly one of the two predictions is empty.
    pub hd95: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BlurProbeResult {
    pub sigmas: Vec<f64>,
    pub rows: Vec<BlurProbeRow>,
}

impl BlurProbeResult {
    pub fn median_dice(&self, sigma: f64) -> Option<f64> {
        let mut v: Vec<f64> = self.rows.iter().filter(|r| r.sigma == sigma).map(|r| r.dice).collect();
        if v.is_empty() {
            return None;
        }
        Some(crate::metrics::percentile(&mut v, 50.0))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |e| Error::io(path, e);
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        writeln!(f, "case,sigma,dice,hd95").map_err(io)?;
        for r in &self.rows {
            let hd = r.hd95.map_or_else(String::new, |v| v.to_string());
            writeln!(f, "{},{},{},{}", r.case, r.sigma, r.dice, hd).map_err(io)?;
        }
        f.flush().map_err(io)
    }
}

/// Number of inversions in a sequence that should be non-increasing.
pub fn count_increases(values: &[f64]) -> usize {
    values.windows(2).filter(|w| w[1] > w[0]).count()
}

/// Blurs the first `blur_channels` channels and leaves the rest (such as an
/// appended foreground mask) untouched.
pub fn blur_channels(v: &Volume, sigma: f64, blur_channels: usize) -> Result<Volume> {
    let mut out = v.clone();
    for c in 0..blur_channels.min(v.channels) {
        let single = Volume { shape: v.shape, spacing_mm: v.spacing_mm, channels: 1, data: v.channel(c).to_vec() };
        out.channel_mut(c).copy_from_slice(&gaussian_blur(&single, sigma)?.data);
    }
    Ok(out)
}

/// Compares predictions on blurred inputs with the prediction on the clean
/// input. Foreground is every non-zero label.
pub fn blur_probe<P: Predictor + ?Sized>(
    model: &P,
    cases: &[(String, Volume)],
    sigmas: &[f64],
    window: &WindowSpec,
    blur_channel_count: usize,
) -> Result<BlurProbeResult> {
    let fg = |v: &Volume| Mask { shape: v.shape, data: logits_to_labels(v).data.iter().map(|&l| l > 0.0).collect() };
    let per_case: Vec<Vec<BlurProbeRow>> = cases
        .par_iter()
        .map(|(name, input)| {
            let reference = fg(&sliding_window(model, input, window)?);
            sigmas
                .iter()
                .map(|&sigma| {
                    let pred = if sigma == 0.0 {
                        reference.clone()
                    } else {
                        fg(&sliding_window(model, &blur_channels(input, sigma, blur_channel_count)?, window)?)
                    };
                    let hd = if pred.is_empty() && reference.is_empty() {
                        Some(0.0)
                    } else {
                        hd95(&pred, &reference, input.spacing_mm)?
                    };
                    Ok(BlurProbeRow { case: name.clone(), sigma, dice: dice(&pred, &reference)?, hd95: hd })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(BlurProbeResult { sigmas: sigmas.to_vec(), rows: per_case.into_iter().flatten().collect() })
}

/// Writes `erf_stage{N}.rvf` per map and `erf_radius.csv`.
pub fn write_erf_outputs(dir: &Path, maps: &[ErfMap], threshold: f64) -> Result<()> {
    use crate::pipeline::io::{write_rvf, Dtype};
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("erf_radius.csv");
    let io = |e| Error::io(&path, e);
    let mut f = std::io::BufWriter::new(std::fs::File::create(&path).map_err(io)?);
    writeln!(f, "stage,threshold,radius,subjects").map_err(io)?;
    for m in maps {
        write_rvf(&dir.join(format!("erf_stage{}.rvf", m.stage)), &m.to_volume(), Dtype::F32)?;
        let r = erf_radius(m, threshold).map_or_else(|_| String::new(), |r| r.to_string());
        writeln!(f, "{},{},{},{}", m.stage, threshold, r, m.subjects).map_err(io)?;
    }
    f.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube_map(n: usize, half: usize) -> ErfMap {
        let c = n / 2;
        let mut data = vec![0.0; n * n * n];
        for z in c - half..=c + half {
            for y in c - half..=c + half {
                for x in c - half..=c + half {
                    data[(z * n + y) * n + x] = 0.5;
                }
            }
        }
        ErfMap { stage: 1, subjects: 1, shape: [n; 3], data }
    }

    #[test]
    fn radius_examples() {
        assert_eq!(erf_radius(&cube_map(21, 0), 0.1).unwrap(), 0.0);
        assert!((erf_radius(&cube_map(21, 5), 0.1).unwrap() - 75f64.sqrt()).abs() < 1e-12);
        assert!(erf_radius(&cube_map(21, 5), 0.9).is_err());
        assert!(erf_radius(&cube_map(21, 5), 1.0).is_err());
    }

    #[test]
    fn increases_counted() {
        assert_eq!(count_increases(&[1.0, 0.9, 0.9, 0.5]), 0);
        assert_eq!(count_increases(&[1.0, 0.8, 0.85, 0.7]), 1);
    }
}
