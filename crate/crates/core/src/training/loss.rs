//! Soft Dice + cross-entropy on softmax probabilities.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossOptions {
    pub include_background: bool,
    pub eps: f64,
}

impl Default for LossOptions {
    fn default() -> Self {
        LossOptions { include_background: true, eps: 1e-5 }
    }
}

/// Per-voxel softmax over the class axis of an `N, K, ...` array.
pub fn softmax_channels<F: Real>(logits: &[F], n: usize, k: usize, inner: usize) -> Vec<F> {
    let mut p = vec![F::zero(); logits.len()];
    for b in 0..n {
        let base = b * k * inner;
        for v in 0..inner {
            let mut m = F::neg_infinity();
            for c in 0..k {
                m = m.max(logits[base + c * inner + v]);
            }
            let mut s = F::zero();
            for c in 0..k {
                let e = (logits[base + c * inner + v] - m).exp();
                p[base + c * inner + v] = e;
                s += e;
            }
            for c in 0..k {
                p[base + c * inner + v] /= s;
            }
        }
    }
    p
}

/// `mean_{n,k} (1 − (2Σpg + ε)/(Σp + Σg + ε)) + mean_voxels(−Σ_k g log p)`.
/// `target` must be one-hot with the logits' shape.
pub fn dice_ce_loss<F: Real>(logits: &Tensor<F>, target: &Tensor<F>, opts: LossOptions) -> Result<Tensor<F>> {
    let shape = logits.shape();
    if shape != target.shape() {
        return Err(Error::shape(format!("logits {shape:?} vs target {:?}", target.shape())));
    }
    if shape.len() < 3 || shape[1] < 2 {
        return Err(Error::shape(format!("loss needs N,K,... logits with K ≥ 2, got {shape:?}")));
    }
    let (n, k) = (shape[0], shape[1]);
    let inner: usize = shape[2..].iter().product();
    let z = logits.data();
    let g = target.data();
    let p = softmax_channels(z, n, k, inner);
    let eps = opts.eps;
    let k0 = if opts.include_background { 0 } else { 1 };
    let terms = (n * (k - k0)) as f64;
    let vox = (n * inner) as f64;

    let mut ce = 0.0f64;
    for b in 0..n {
        let base = b * k * inner;
        for v in 0..inner {
            let mut m = F::neg_infinity();
            for c in 0..k {
                m = m.max(z[base + c * inner + v]);
            }
            let lse = m.as_f64() + (0..k).map(|c| (z[base + c * inner + v] - m).as_f64().exp()).sum::<f64>().ln();
            for c in 0..k {
                let gi = g[base + c * inner + v].as_f64();
                if gi != 0.0 {
                    ce -= gi * (z[base + c * inner + v].as_f64() - lse);
                }
            }
        }
    }
    ce /= vox;

    // Per (n, k): intersection and denominator sums.
    let mut stats = vec![(0.0f64, 0.0f64); n * k];
    for b in 0..n {
        for c in k0..k {
            let o = (b * k + c) * inner;
            let (mut i, mut s) = (0.0, 0.0);
            for v in o..o + inner {
                let (pv, gv) = (p[v].as_f64(), g[v].as_f64());
                i += pv * gv;
                s += pv + gv;
            }
            stats[b * k + c] = (i, s);
        }
    }
    let dice: f64 =
        stats.iter().enumerate().filter(|(j, _)| j % k >= k0).map(|(_, &(i, s))| 1.0 - (2.0 * i + eps) / (s + eps)).sum::<f64>()
            / terms;
    let value = F::lit(dice + ce);
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("loss is {}", value.as_f64())));
    }

    let target = target.clone();
    Ok(Tensor::from_op(vec![], vec![value], vec![logits.clone()], move |go, _| {
        let go = go[0].as_f64();
        let g = target.data();
        let mut dz = vec![F::zero(); p.len()];
        let mut a = vec![0.0f64; k];
        for b in 0..n {
            let base = b * k * inner;
            for v in 0..inner {
                // a_c = dDice/dp_c at this voxel.
                let mut gsum = 0.0;
                for c in 0..k {
                    let idx = base + c * inner + v;
                    gsum += g[idx].as_f64();
                    a[c] = if c >= k0 {
                        let (i, s) = stats[b * k + c];
                        -(2.0 * g[idx].as_f64() * (s + eps) - (2.0 * i + eps)) / ((s + eps) * (s + eps) * terms)
                    } else {
                        0.0
                    };
                }
                let pa: f64 = (0..k).map(|c| p[base + c * inner + v].as_f64() * a[c]).sum();
                for c in 0..k {
                    let idx = base + c * inner + v;
                    let pc = p[idx].as_f64();
                    let d_dice = pc * (a[c] - pa);
                    let d_ce = (pc * gsum - g[idx].as_f64()) / vox;
                    dz[idx] = F::lit(go * (d_dice + d_ce));
                }
            }
        }
        vec![Some(dz)]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(shape.to_vec(), v).unwrap()
    }

    #[test]
    fn saturated_correct_logits_give_tiny_loss() {
        // Two voxels: class 0 then class 1. Both classes present.
        let z = t(&[1, 2, 2], vec![20.0, -20.0, -20.0, 20.0]);
        let g = t(&[1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        assert!(dice_ce_loss(&z, &g, LossOptions::default()).unwrap().item() < 1e-3);
    }

    #[test]
    fn uniform_logits_closed_form() {
        let g = t(&[1, 2, 4], vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let z = t(&[1, 2, 4], vec![0.0; 8]);
        let eps = 1e-5;
        // Class 0: Σpg = 1.5, Σp = 2, Σg = 3; class 1: Σpg = 0.5, Σp = 2, Σg = 1.
        let d0 = 1.0 - (3.0 + eps) / (5.0 + eps);
        let d1 = 1.0 - (1.0 + eps) / (3.0 + eps);
        let want = (d0 + d1) / 2.0 + std::f64::consts::LN_2;
        let got = dice_ce_loss(&z, &g, LossOptions::default()).unwrap().item();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        let fg_only = dice_ce_loss(&z, &g, LossOptions { include_background: false, ..Default::default() }).unwrap().item();
        assert!((fg_only - (d1 + std::f64::consts::LN_2)).abs() < 1e-12);
    }

    #[test]
    fn shape_errors() {
        let z = t(&[1, 2, 2], vec![0.0; 4]);
        assert!(dice_ce_loss(&z, &t(&[1, 2, 1], vec![1.0, 0.0]), LossOptions::default()).is_err());
        let one = t(&[1, 1, 2], vec![0.0; 2]);
        assert!(dice_ce_loss(&one, &one, LossOptions::default()).is_err());
    }
}
