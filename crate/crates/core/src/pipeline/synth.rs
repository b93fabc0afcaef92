//! Synthetic "brain with lesions" cases.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{gaussian_blur, Volume};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub shape: [usize; 3],
    /// Inclusive.
    pub lesion_count_range: [usize; 2],
    pub radius_range_vox: [f64; 2],
    pub intensity_contrast: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            shape: [40, 40, 40],
            lesion_count_range: [1, 4],
            radius_range_vox: [2.5, 5.0],
            intensity_contrast: 0.8,
            noise_sigma: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.lesion_count_range;
        let [rlo, rhi] = self.radius_range_vox;
        if lo > hi || !(rlo <= rhi) || !(rlo >= 1.0) {
            return Err(Error::Config(format!(
                "invalid synthetic ranges: lesions {:?}, radii {:?} (radii must be ≥ 1)",
                self.lesion_count_range, self.radius_range_vox
            )));
        }
        if self.shape.iter().any(|&d| d < 8) {
            return Err(Error::Config(format!("synthetic shape {:?} too small (min 8 per axis)", self.shape)));
        }
        if !(self.noise_sigma >= 0.0) || !self.intensity_contrast.is_finite() {
            return Err(Error::Config("noise_sigma must be ≥ 0 and contrast finite".into()));
        }
        Ok(())
    }
}

fn white_noise(rng: &mut ChaCha8Rng, shape: [usize; 3]) -> Volume {
    let mut v = Volume::zeros(shape, 1);
    v.data.iter_mut().for_each(|x| *x = rng.sample::<f64, _>(StandardNormal) as f32);
    v
}

fn unit_std(v: &mut [f32]) {
    let n = v.len() as f64;
    let mean = v.iter().map(|&x| x as f64).sum::<f64>() / n;
    let std = (v.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n).sqrt().max(1e-12);
    v.iter_mut().for_each(|x| *x = ((*x as f64 - mean) / std) as f32);
}

/// An ellipsoidal brain with smooth and fine-grained intensity variation,
/// plus ellipsoidal lesions of raised intensity. Returns `(image, labels)`;
/// labels are 0/1 and lesions lie inside the brain.
pub fn synth_case(spec: &SyntheticSpec) -> Result<(Volume, Volume)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let shape = spec.shape;
    let [d, h, w] = shape;
    let centre = shape.map(|n| (n as f64 - 1.0) / 2.0);
    let semi: [f64; 3] = std::array::from_fn(|a| shape[a] as f64 * rng.gen_range(0.38..0.45));

    let mut smooth = gaussian_blur(&white_noise(&mut rng, shape), 3.0)?;
    unit_std(&mut smooth.data);
    let fine = white_noise(&mut rng, shape);

    let brain_r = |z: usize, y: usize, x: usize| -> f64 {
        let p = [z, y, x];
        (0..3).map(|a| ((p[a] as f64 - centre[a]) / semi[a]).powi(2)).sum::<f64>().sqrt()
    };

    let mut image = Volume::zeros(shape, 1);
    let mut labels = Volume::zeros(shape, 1);
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                if brain_r(z, y, x) <= 1.0 {
                    let i = (z * h + y) * w + x;
                    let val = 1.0 + spec.noise_sigma * (smooth.data[i] as f64 + 0.5 * fine.data[i] as f64);
                    image.data[i] = val.max(1e-3) as f32;
                }
            }
        }
    }

    let count = rng.gen_range(spec.lesion_count_range[0]..=spec.lesion_count_range[1]);
    for _ in 0..count {
        let r = rng.gen_range(spec.radius_range_vox[0]..=spec.radius_range_vox[1]);
        // Random aspect with unit product keeps the volume at (4/3)πr³.
        let (u, v) = (rng.gen_range(-0.25f64..0.25).exp(), rng.gen_range(-0.25f64..0.25).exp());
        let axes = [r * u, r * v, r / (u * v)];
        let reach = axes.iter().cloned().fold(0.0, f64::max);
        // Centre far enough inside the brain that the whole lesion fits.
        let mut c = centre;
        for _ in 0..100 {
            let cand: [f64; 3] = std::array::from_fn(|a| centre[a] + rng.gen_range(-1.0..1.0) * (semi[a] - reach - 1.0).max(0.0));
            let inside = (0..3).map(|a| ((cand[a] - centre[a]) / (semi[a] - reach).max(1.0)).powi(2)).sum::<f64>() <= 1.0;
            if inside {
                c = cand;
                break;
            }
        }
        let lo = |a: usize| (c[a] - axes[a]).floor().max(0.0) as usize;
        let hi = |a: usize| ((c[a] + axes[a]).ceil() as usize).min(shape[a] - 1);
        for z in lo(0)..=hi(0) {
            for y in lo(1)..=hi(1) {
                for x in lo(2)..=hi(2) {
                    let p = [z as f64, y as f64, x as f64];
                    let q: f64 = (0..3).map(|a| ((p[a] - c[a]) / axes[a]).powi(2)).sum();
                    let i = (z * h + y) * w + x;
                    if q <= 1.0 && image.data[i] > 0.0 && labels.data[i] == 0.0 {
                        labels.data[i] = 1.0;
                        image.data[i] = (image.data[i] as f64 + spec.intensity_contrast).max(1e-3) as f32;
                    }
                }
            }
        }
    }
    Ok((image, labels))
}
