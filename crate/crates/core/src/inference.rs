//! Gaussian-weighted sliding-window prediction and flip test-time
//! augmentation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::Model;
use crate::pipeline::Volume;
use crate::tensor::activation::gelu;
use crate::tensor::{conv3d, ConvSpec, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowSpec {
    pub size: [usize; 3],
    pub overlap: f64,
    pub sigma_scale: f64,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec { size: [128; 3], overlap: 0.5, sigma_scale: 0.125 }
    }
}

impl WindowSpec {
    pub fn cubic(size: usize) -> Self {
        WindowSpec { size: [size; 3], ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.size.contains(&0) {
            return Err(Error::Config("window size must be ≥ 1 per axis".into()));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(Error::Config(format!("overlap must be in [0, 1), got {}", self.overlap)));
        }
        if !(self.sigma_scale > 0.0) {
            return Err(Error::Config("sigma_scale must be positive".into()));
        }
        Ok(())
    }
}

/// Anything that maps a `C, D, H, W` volume to `K, D, H, W` logits.
pub trait Predictor: Sync {
    fn num_classes(&self) -> usize;
    fn predict(&self, input: &Volume) -> Result<Vec<f32>>;
}

fn to_tensor<F: Real>(v: &Volume) -> Result<Tensor<F>> {
    Tensor::from_vec(
        vec![1, v.channels, v.shape[0], v.shape[1], v.shape[2]],
        v.data.iter().map(|&x| F::lit(x as f64)).collect(),
    )
}

impl<F: Real> Predictor for Model<F> {
    fn num_classes(&self) -> usize {
        self.config().num_classes
    }

    fn predict(&self, input: &Volume) -> Result<Vec<f32>> {
        let y = Model::predict(self, &to_tensor::<F>(input)?)?;
        Ok(y.data().iter().map(|v| v.as_f64() as f32).collect())
    }
}

/// Network made only of pointwise convolutions: `PConv → GELU → PConv`.
pub struct VoxelwiseModel {
    pub w1: Tensor<f64>,
    pub b1: Tensor<f64>,
    pub w2: Tensor<f64>,
    pub b2: Tensor<f64>,
}

impl VoxelwiseModel {
    pub fn random(in_channels: usize, hidden: usize, classes: usize, seed: u64) -> Self {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut t = |shape: Vec<usize>| {
            let n = shape.iter().product();
            Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("valid shape")
        };
        VoxelwiseModel {
            w1: t(vec![hidden, in_channels, 1, 1, 1]),
            b1: t(vec![hidden]),
            w2: t(vec![classes, hidden, 1, 1, 1]),
            b2: t(vec![classes]),
        }
    }
}

impl Predictor for VoxelwiseModel {
    fn num_classes(&self) -> usize {
        self.w2.shape()[0]
    }

    fn predict(&self, input: &Volume) -> Result<Vec<f32>> {
        let x = to_tensor::<f64>(input)?;
        let h = gelu(&conv3d(&x, &self.w1, Some(&self.b1), &ConvSpec::pointwise())?);
        let y = conv3d(&h, &self.w2, Some(&self.b2), &ConvSpec::pointwise())?;
        Ok(y.data().iter().map(|&v| v as f32).collect())
    }
}

/// Ignores its input and returns the same logits everywhere.
pub struct ConstantModel {
    pub logits: Vec<f32>,
}

impl Predictor for ConstantModel {
    fn num_classes(&self) -> usize {
        self.logits.len()
    }

    fn predict(&self, input: &Volume) -> Result<Vec<f32>> {
        let n = input.voxels();
        Ok(self.logits.iter().flat_map(|&c| std::iter::repeat(c).take(n)).collect())
    }
}

/// Window origins along one axis: step `⌊size·(1−overlap)⌋` (at least 1),
/// with the last window clamped to end at the border.
pub fn window_starts(len: usize, size: usize, overlap: f64) -> Vec<usize> {
    if len <= size {
        return vec![0];
    }
    let step = ((size as f64 * (1.0 - overlap)).floor() as usize).max(1);
    let mut starts: Vec<usize> = (0..).map(|i| i * step).take_while(|&s| s + size < len).collect();
    starts.push(len - size);
    starts
}

/// Separable Gaussian importance map over a window, max 1, floored at 1e-3.
pub fn gaussian_importance(size: [usize; 3], sigma_scale: f64) -> Vec<f64> {
    let axis = |n: usize| -> Vec<f64> {
        let c = (n as f64 - 1.0) / 2.0;
        let s = sigma_scale * n as f64;
        (0..n).map(|i| (-(i as f64 - c).powi(2) / (2.0 * s * s)).exp()).collect()
    };
    let (a, b, c) = (axis(size[0]), axis(size[1]), axis(size[2]));
    let mut w = Vec::with_capacity(size.iter().product());
    for &za in &a {
        for &yb in &b {
            for &xc in &c {
                w.push(za * yb * xc);
            }
        }
    }
    let max = w.iter().cloned().fold(0.0, f64::max);
    w.iter_mut().for_each(|v| *v = (*v / max).max(1e-3));
    w
}

fn pad_to(v: &Volume, target: [usize; 3]) -> Volume {
    if v.shape == target {
        return v.clone();
    }
    let mut out = Volume::zeros(target, v.channels);
    out.spacing_mm = v.spacing_mm;
    for c in 0..v.channels {
        for z in 0..v.shape[0] {
            for y in 0..v.shape[1] {
                let s = v.index(c, z, y, 0);
                let d = out.index(c, z, y, 0);
                out.data[d..d + v.shape[2]].copy_from_slice(&v.data[s..s + v.shape[2]]);
            }
        }
    }
    out
}

fn extract(v: &Volume, origin: [usize; 3], size: [usize; 3]) -> Volume {
    let mut out = Volume::zeros(size, v.channels);
    out.spacing_mm = v.spacing_mm;
    for c in 0..v.channels {
        for z in 0..size[0] {
            for y in 0..size[1] {
                let s = v.index(c, z + origin[0], y + origin[1], origin[2]);
                let d = out.index(c, z, y, 0);
                out.data[d..d + size[2]].copy_from_slice(&v.data[s..s + size[2]]);
            }
        }
    }
    out
}

/// Gaussian-merged sliding-window logits. Volumes smaller than the window
/// are zero padded and the padding is removed from the result. Windows are
/// evaluated one at a time into running accumulators.
pub fn sliding_window<P: Predictor + ?Sized>(model: &P, v: &Volume, spec: &WindowSpec) -> Result<Volume> {
    spec.validate()?;
    if v.voxels() == 0 || v.data.is_empty() {
        return Err(Error::Empty("cannot predict on an empty volume".into()));
    }
    let size = spec.size;
    let padded_shape: [usize; 3] = std::array::from_fn(|a| v.shape[a].max(size[a]));
    let padded = pad_to(v, padded_shape);
    let k = model.num_classes();
    let [pd, ph, pw] = padded_shape;
    let nvox = pd * ph * pw;
    let mut acc = vec![0.0f64; k * nvox];
    let mut wsum = vec![0.0f64; nvox];
    let imp = gaussian_importance(size, spec.sigma_scale);
    let wn: usize = size.iter().product();

    let starts: [Vec<usize>; 3] = std::array::from_fn(|a| window_starts(padded_shape[a], size[a], spec.overlap));
    for &z0 in &starts[0] {
        for &y0 in &starts[1] {
            for &x0 in &starts[2] {
                let win = extract(&padded, [z0, y0, x0], size);
                let logits = model.predict(&win)?;
                if logits.len() != k * wn {
                    return Err(Error::shape(format!("predictor returned {} values for {k}×{size:?}", logits.len())));
                }
                for z in 0..size[0] {
                    for y in 0..size[1] {
                        let wrow = (z * size[1] + y) * size[2];
                        let grow = ((z + z0) * ph + y + y0) * pw + x0;
                        for x in 0..size[2] {
                            let w = imp[wrow + x];
                            wsum[grow + x] += w;
                            for c in 0..k {
                                acc[c * nvox + grow + x] += w * logits[c * wn + wrow + x] as f64;
                            }
                        }
                    }
                }
            }
        }
    }
    let merged = Volume {
        shape: padded_shape,
        spacing_mm: v.spacing_mm,
        channels: k,
        data: acc.iter().enumerate().map(|(i, &a)| (a / wsum[i % nvox]) as f32).collect(),
    };
    Ok(extract(&merged, [0, 0, 0], v.shape))
}

/// Mirrors the volume along the flagged axes (`[D, H, W]`).
pub fn flip(v: &Volume, axes: [bool; 3]) -> Volume {
    if axes == [false; 3] {
        return v.clone();
    }
    let [d, h, w] = v.shape;
    let mut out = v.clone();
    for c in 0..v.channels {
        for z in 0..d {
            let sz = if axes[0] { d - 1 - z } else { z };
            for y in 0..h {
                let sy = if axes[1] { h - 1 - y } else { y };
                for x in 0..w {
                    let sx = if axes[2] { w - 1 - x } else { x };
                    let o = out.index(c, z, y, x);
                    out.data[o] = v.get(c, sz, sy, sx);
                }
            }
        }
    }
    out
}

/// All 8 axis-flip combinations, identity first.
pub fn all_flips() -> Vec<[bool; 3]> {
    (0..8).map(|m| [m & 4 != 0, m & 2 != 0, m & 1 != 0]).collect()
}

/// Mean of flipped-input sliding-window predictions mapped back by the
/// inverse flip.
pub fn tta_flips<P: Predictor + ?Sized>(model: &P, v: &Volume, spec: &WindowSpec, flip_set: &[[bool; 3]]) -> Result<Volume> {
    if flip_set.is_empty() {
        return Err(Error::Config("flip set must not be empty".into()));
    }
    let mut sum: Option<Vec<f64>> = None;
    let mut shape_out = None;
    for &f in flip_set {
        let y = flip(&sliding_window(model, &flip(v, f), spec)?, f);
        let s = sum.get_or_insert_with(|| vec![0.0; y.data.len()]);
        s.iter_mut().zip(&y.data).for_each(|(a, &b)| *a += b as f64);
        shape_out = Some((y.shape, y.channels));
    }
    let (shape, channels) = shape_out.expect("non-empty flip set");
    let n = flip_set.len() as f64;
    Ok(Volume {
        shape,
        spacing_mm: v.spacing_mm,
        channels,
        data: sum.expect("non-empty").into_iter().map(|a| (a / n) as f32).collect(),
    })
}

/// Argmax over classes; ties go to the lower class index.
pub fn logits_to_labels(logits: &Volume) -> Volume {
    let n = logits.voxels();
    let mut out = Volume::zeros(logits.shape, 1);
    out.spacing_mm = logits.spacing_mm;
    for i in 0..n {
        let mut best = 0;
        for c in 1..logits.channels {
            if logits.data[c * n + i] > logits.data[best * n + i] {
                best = c;
            }
        }
        out.data[i] = best as f32;
    }
    out
}
