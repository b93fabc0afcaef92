//! Volumes, preprocessing, augmentation crops, blurring and synthetic cases.

pub mod io;
pub mod synth;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use synth::{synth_case, SyntheticSpec};

/// Multi-channel voxel grid in `C, D, H, W` order.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    pub shape: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Volume {
    pub fn new(shape: [usize; 3], spacing_mm: [f64; 3], channels: usize, data: Vec<f32>) -> Result<Self> {
        if spacing_mm.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::Config(format!("spacing must be positive, got {spacing_mm:?}")));
        }
        if channels == 0 || shape.contains(&0) {
            return Err(Error::shape(format!("empty volume {channels}×{shape:?}")));
        }
        if data.len() != channels * shape.iter().product::<usize>() {
            return Err(Error::shape(format!("{} voxels for {channels}×{shape:?}", data.len())));
        }
        Ok(Volume { shape, spacing_mm, channels, data })
    }

    pub fn zeros(shape: [usize; 3], channels: usize) -> Self {
        Volume { shape, spacing_mm: [1.0; 3], channels, data: vec![0.0; channels * shape.iter().product::<usize>()] }
    }

    pub fn voxels(&self) -> usize {
        self.shape.iter().product()
    }

    #[inline]
    pub fn index(&self, c: usize, z: usize, y: usize, x: usize) -> usize {
        ((c * self.shape[0] + z) * self.shape[1] + y) * self.shape[2] + x
    }

    pub fn get(&self, c: usize, z: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(c, z, y, x)]
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.voxels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.voxels();
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Voxels where any channel is strictly positive.
    pub fn foreground(&self) -> Vec<bool> {
        let n = self.voxels();
        (0..n).map(|i| (0..self.channels).any(|c| self.data[c * n + i] > 0.0)).collect()
    }
}

/// Half-open box `[start, end)` per axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub start: [usize; 3],
    pub end: [usize; 3],
}

impl BoundingBox {
    pub fn size(&self) -> [usize; 3] {
        [self.end[0] - self.start[0], self.end[1] - self.start[1], self.end[2] - self.start[2]]
    }
}

/// Copies the box `bbox` out of `v`.
pub fn crop(v: &Volume, bbox: &BoundingBox) -> Result<Volume> {
    if (0..3).any(|a| bbox.start[a] >= bbox.end[a] || bbox.end[a] > v.shape[a]) {
        return Err(Error::shape(format!("box {bbox:?} outside volume {:?}", v.shape)));
    }
    let s = bbox.size();
    let mut out = Volume { shape: s, spacing_mm: v.spacing_mm, channels: v.channels, data: Vec::with_capacity(v.channels * s.iter().product::<usize>()) };
    for c in 0..v.channels {
        for z in bbox.start[0]..bbox.end[0] {
            for y in bbox.start[1]..bbox.end[1] {
                let o = v.index(c, z, y, 0);
                out.data.extend_from_slice(&v.data[o + bbox.start[2]..o + bbox.end[2]]);
            }
        }
    }
    Ok(out)
}

/// Tight box around voxels with value > 0 in any channel.
pub fn crop_foreground(v: &Volume) -> Result<(Volume, BoundingBox)> {
    let fg = v.foreground();
    let [d, h, w] = v.shape;
    let mut start = [usize::MAX; 3];
    let mut end = [0usize; 3];
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                if fg[(z * h + y) * w + x] {
                    for (a, p) in [z, y, x].into_iter().enumerate() {
                        start[a] = start[a].min(p);
                        end[a] = end[a].max(p + 1);
                    }
                }
            }
        }
    }
    if start[0] == usize::MAX {
        return Err(Error::Empty("volume has no positive voxels to crop to".into()));
    }
    let bbox = BoundingBox { start, end };
    Ok((crop(v, &bbox)?, bbox))
}

/// Places `v` at `bbox` inside a zero volume of shape `full`.
pub fn uncrop(v: &Volume, bbox: &BoundingBox, full: [usize; 3]) -> Result<Volume> {
    if bbox.size() != v.shape || (0..3).any(|a| bbox.end[a] > full[a]) {
        return Err(Error::shape(format!("cannot place {:?} at {bbox:?} in {full:?}", v.shape)));
    }
    let mut out = Volume::zeros(full, v.channels);
    out.spacing_mm = v.spacing_mm;
    for c in 0..v.channels {
        for z in 0..v.shape[0] {
            for y in 0..v.shape[1] {
                let src = v.index(c, z, y, 0);
                let dst = out.index(c, z + bbox.start[0], y + bbox.start[1], bbox.start[2]);
                out.data[dst..dst + v.shape[2]].copy_from_slice(&v.data[src..src + v.shape[2]]);
            }
        }
    }
    Ok(out)
}

/// Adds a channel that is 1 where any input channel is > 0.
pub fn append_foreground_mask(v: &Volume) -> Volume {
    let mask = v.foreground();
    let mut out = v.clone();
    out.channels += 1;
    out.data.extend(mask.iter().map(|&m| if m { 1.0 } else { 0.0 }));
    out
}

/// Per-channel z-score over foreground voxels (any channel > 0); background
/// is set to 0. Channels with zero foreground variance become all zero and
/// are reported in the returned list.
pub fn normalize_intensity(v: &Volume) -> (Volume, Vec<usize>) {
    let fg = v.foreground();
    let mut out = v.clone();
    let mut flagged = Vec::new();
    for c in 0..v.channels {
        let ch = out.channel_mut(c);
        let (mut n, mut sum) = (0usize, 0.0f64);
        for (val, &f) in ch.iter().zip(&fg) {
            if f {
                n += 1;
                sum += *val as f64;
            }
        }
        let mean = if n > 0 { sum / n as f64 } else { 0.0 };
        let var = ch.iter().zip(&fg).filter(|(_, &f)| f).map(|(&val, _)| (val as f64 - mean).powi(2)).sum::<f64>()
            / n.max(1) as f64;
        let std = var.sqrt();
        if n == 0 || std <= 1e-12 * mean.abs().max(1.0) {
            flagged.push(c);
            ch.iter_mut().for_each(|x| *x = 0.0);
            continue;
        }
        for (val, &f) in ch.iter_mut().zip(&fg) {
            *val = if f { ((*val as f64 - mean) / std) as f32 } else { 0.0 };
        }
    }
    (out, flagged)
}

/// Model input for an image: normalized channels plus the foreground mask
/// of the raw intensities.
pub fn prepare_input(image: &Volume) -> Volume {
    let mask = image.foreground();
    let (mut out, _) = normalize_intensity(image);
    out.channels += 1;
    out.data.extend(mask.iter().map(|&m| if m { 1.0 } else { 0.0 }));
    out
}

/// Reads `v` at a possibly out-of-range position, zero outside.
fn window_copy(v: &Volume, offset: [isize; 3], size: [usize; 3], flips: [bool; 3]) -> Volume {
    let mut out = Volume::zeros(size, v.channels);
    out.spacing_mm = v.spacing_mm;
    for c in 0..v.channels {
        for z in 0..size[0] {
            let sz = offset[0] + if flips[0] { size[0] - 1 - z } else { z } as isize;
            if sz < 0 || sz >= v.shape[0] as isize {
                continue;
            }
            for y in 0..size[1] {
                let sy = offset[1] + if flips[1] { size[1] - 1 - y } else { y } as isize;
                if sy < 0 || sy >= v.shape[1] as isize {
                    continue;
                }
                for x in 0..size[2] {
                    let sx = offset[2] + if flips[2] { size[2] - 1 - x } else { x } as isize;
                    if sx < 0 || sx >= v.shape[2] as isize {
                        continue;
                    }
                    let o = out.index(c, z, y, x);
                    out.data[o] = v.get(c, sz as usize, sy as usize, sx as usize);
                }
            }
        }
    }
    out
}

/// Same random crop (and optional per-axis flips) of an image and its
/// labels. Axes shorter than `size` are zero padded.
pub fn random_crop(image: &Volume, labels: &Volume, size: [usize; 3], seed: u64, flips: bool) -> Result<(Volume, Volume)> {
    if image.shape != labels.shape {
        return Err(Error::shape(format!("image {:?} and labels {:?} differ", image.shape, labels.shape)));
    }
    if size.contains(&0) {
        return Err(Error::shape("crop size must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut offset = [0isize; 3];
    for a in 0..3 {
        let (d, s) = (image.shape[a] as isize, size[a] as isize);
        let (lo, hi) = if s <= d { (0, d - s) } else { (d - s, 0) };
        offset[a] = rng.gen_range(lo..=hi);
    }
    let fl = if flips { [rng.gen_bool(0.5), rng.gen_bool(0.5), rng.gen_bool(0.5)] } else { [false; 3] };
    Ok((window_copy(image, offset, size, fl), window_copy(labels, offset, size, fl)))
}

/// Normalized 1D Gaussian taps over `[-r, r]` with `r = ⌈4σ⌉`.
pub fn gaussian_kernel_1d(sigma: f64) -> Vec<f64> {
    let r = (4.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-r..=r).map(|i| (-(i as f64).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / s).collect()
}

/// Separable Gaussian blur with `σ` in voxels; borders replicate the edge
/// voxel.
pub fn gaussian_blur(v: &Volume, sigma_vox: f64) -> Result<Volume> {
    if !(sigma_vox >= 0.0) || !sigma_vox.is_finite() {
        return Err(Error::Config(format!("blur sigma must be ≥ 0, got {sigma_vox}")));
    }
    if sigma_vox == 0.0 {
        return Ok(v.clone());
    }
    let k = gaussian_kernel_1d(sigma_vox);
    let r = (k.len() / 2) as isize;
    let [d, h, w] = v.shape;
    let strides = [h * w, w, 1];
    let mut buf: Vec<f64> = v.data.iter().map(|&x| x as f64).collect();
    let mut tmp = vec![0.0f64; buf.len()];
    for axis in 0..3 {
        let len = v.shape[axis] as isize;
        let st = strides[axis];
        for c in 0..v.channels {
            let base = c * d * h * w;
            for z in 0..d {
                for y in 0..h {
                    for x in 0..w {
                        let pos = [z, y, x][axis] as isize;
                        let o = base + (z * h + y) * w + x;
                        let line0 = o - pos as usize * st;
                        let mut acc = 0.0;
                        for (t, &kv) in k.iter().enumerate() {
                            let p = (pos + t as isize - r).clamp(0, len - 1) as usize;
                            acc += kv * buf[line0 + p * st];
                        }
                        tmp[o] = acc;
                    }
                }
            }
        }
        std::mem::swap(&mut buf, &mut tmp);
    }
    Ok(Volume { data: buf.into_iter().map(|x| x as f32).collect(), ..v.clone() })
}

/// One-hot encoding of integer labels into `K` channels.
pub fn one_hot(labels: &Volume, num_classes: usize) -> Result<Volume> {
    if labels.channels != 1 {
        return Err(Error::shape(format!("labels must have one channel, got {}", labels.channels)));
    }
    let n = labels.voxels();
    let mut out = Volume::zeros(labels.shape, num_classes);
    out.spacing_mm = labels.spacing_mm;
    for (i, &l) in labels.data.iter().enumerate() {
        let k = l as usize;
        if l < 0.0 || l.fract() != 0.0 || k >= num_classes {
            return Err(Error::OutOfRange(format!("label {l} for {num_classes} classes")));
        }
        out.data[k * n + i] = 1.0;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vol(shape: [usize; 3], channels: usize, f: impl Fn(usize, usize, usize, usize) -> f32) -> Volume {
        let mut v = Volume::zeros(shape, channels);
        for c in 0..channels {
            for z in 0..shape[0] {
                for y in 0..shape[1] {
                    for x in 0..shape[2] {
                        let i = v.index(c, z, y, x);
                        v.data[i] = f(c, z, y, x);
                    }
                }
            }
        }
        v
    }

    #[test]
    fn crop_foreground_examples() {
        let v = vol([3, 4, 5], 2, |c, z, _, _| 1.0 + c as f32 + z as f32);
        let (c, b) = crop_foreground(&v).unwrap();
        assert_eq!(c, v);
        assert_eq!(b, BoundingBox { start: [0; 3], end: [3, 4, 5] });

        let v = vol([6, 6, 6], 1, |_, z, y, x| if (z, y, x) == (2, 3, 4) { 5.0 } else { 0.0 });
        let (c, b) = crop_foreground(&v).unwrap();
        assert_eq!(c.shape, [1, 1, 1]);
        assert_eq!(b.start, [2, 3, 4]);
        assert_eq!(c.data, vec![5.0]);

        let v = vol([16, 16, 16], 1, |_, z, _, _| if (3..=7).contains(&z) { 1.0 } else { 0.0 });
        let (c, _) = crop_foreground(&v).unwrap();
        assert_eq!(c.shape, [5, 16, 16]);

        assert!(crop_foreground(&Volume::zeros([2, 2, 2], 1)).is_err());
        let neg = vol([2, 2, 2], 1, |_, _, _, _| -1.0);
        assert!(crop_foreground(&neg).is_err());
    }

    #[test]
    fn crop_then_uncrop_restores() {
        let v = vol([7, 6, 5], 2, |c, z, y, x| {
            if (2..5).contains(&z) && (1..4).contains(&y) && x > 0 { (c + z + y + x) as f32 } else { 0.0 }
        });
        let (c, b) = crop_foreground(&v).unwrap();
        assert_eq!(uncrop(&c, &b, v.shape).unwrap(), v);
    }

    #[test]
    fn foreground_mask_examples() {
        let m = append_foreground_mask(&Volume::zeros([2, 2, 2], 1));
        assert_eq!(m.channels, 2);
        assert!(m.channel(1).iter().all(|&x| x == 0.0));
        let pos = vol([2, 2, 2], 1, |_, _, _, _| 0.5);
        assert!(append_foreground_mask(&pos).channel(1).iter().all(|&x| x == 1.0));
        let half = vol([4, 3, 2], 1, |_, z, _, _| if z < 2 { 2.0 } else { 0.0 });
        let m = append_foreground_mask(&half);
        for (i, &x) in m.channel(1).iter().enumerate() {
            assert_eq!(x, if half.data[i] > 0.0 { 1.0 } else { 0.0 });
        }
        let again = append_foreground_mask(&m);
        assert_eq!(again.channel(2), m.channel(1));
    }

    #[test]
    fn normalize_examples() {
        let v = Volume::new([1, 1, 3], [1.0; 3], 1, vec![1.0, 3.0, 0.0]).unwrap();
        let (n, flagged) = normalize_intensity(&v);
        assert_eq!(n.data, vec![-1.0, 1.0, 0.0]);
        assert!(flagged.is_empty());

        let c = Volume::new([1, 1, 3], [1.0; 3], 1, vec![2.0, 2.0, 0.0]).unwrap();
        let (n, flagged) = normalize_intensity(&c);
        assert_eq!(n.data, vec![0.0; 3]);
        assert_eq!(flagged, vec![0]);
    }

    #[test]
    fn blur_examples() {
        let v = vol([5, 6, 7], 1, |_, z, y, x| (z * 7 + y * 3 + x) as f32);
        assert_eq!(gaussian_blur(&v, 0.0).unwrap(), v);
        let c = vol([6, 6, 6], 2, |_, _, _, _| 3.5);
        let b = gaussian_blur(&c, 1.3).unwrap();
        assert!(b.data.iter().all(|&x| (x - 3.5).abs() < 1e-6));
        assert!(gaussian_blur(&c, -1.0).is_err());
        let k = gaussian_kernel_1d(1.0);
        assert_eq!(k.len(), 9);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn one_hot_round_trip() {
        let l = Volume::new([1, 2, 2], [1.0; 3], 1, vec![0.0, 1.0, 2.0, 1.0]).unwrap();
        let h = one_hot(&l, 3).unwrap();
        assert_eq!(h.data, vec![1., 0., 0., 0., 0., 1., 0., 1., 0., 0., 1., 0.]);
        assert!(one_hot(&l, 2).is_err());
    }
}
