//! Batch normalization over `(N, spatial)` and layer normalization over the
//! channel axis.

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Running statistics of one batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState<F> {
    pub running_mean: Vec<F>,
    pub running_var: Vec<F>,
}

impl<F: Real> BatchNormState<F> {
    pub fn new(channels: usize) -> Self {
        BatchNormState { running_mean: vec![F::zero(); channels], running_var: vec![F::one(); channels] }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }
}

fn channel_dims(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::shape(format!("normalization needs N,C,... input, got {shape:?}")));
    }
    Ok((shape[0], shape[1], shape[2..].iter().product()))
}

fn check_affine<F: Real>(c: usize, gamma: &Tensor<F>, beta: &Tensor<F>) -> Result<()> {
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::shape(format!(
            "affine parameters {:?}/{:?} for {c} channels",
            gamma.shape(),
            beta.shape()
        )));
    }
    Ok(())
}

/// Batch normalization. In training mode the batch statistics normalize the
/// input and update `state`; otherwise the running statistics are used.
pub fn batch_norm<F: Real>(
    x: &Tensor<F>,
    gamma: &Tensor<F>,
    beta: &Tensor<F>,
    state: &mut BatchNormState<F>,
    training: bool,
    momentum: F,
    eps: F,
) -> Result<Tensor<F>> {
    let (n, c, inner) = channel_dims(x.shape())?;
    check_affine(c, gamma, beta)?;
    if state.channels() != c {
        return Err(Error::shape(format!("batch-norm state has {} channels, input {c}", state.channels())));
    }
    let xd = x.data();
    let idx = move |b: usize, ch: usize| (b * c + ch) * inner;
    let count = n * inner;
    let cnt = F::lit(count as f64);

    let (mean, var) = if training {
        let mut mean = vec![F::zero(); c];
        let mut var = vec![F::zero(); c];
        for ch in 0..c {
            let mut s = F::zero();
            for b in 0..n {
                s += xd[idx(b, ch)..idx(b, ch) + inner].iter().copied().sum::<F>();
            }
            let m = s / cnt;
            let mut v = F::zero();
            for b in 0..n {
                v += xd[idx(b, ch)..idx(b, ch) + inner].iter().map(|&u| (u - m) * (u - m)).sum::<F>();
            }
            mean[ch] = m;
            var[ch] = v / cnt;
        }
        for ch in 0..c {
            state.running_mean[ch] = (F::one() - momentum) * state.running_mean[ch] + momentum * mean[ch];
            if count > 1 {
                let unbiased = var[ch] * cnt / F::lit((count - 1) as f64);
                state.running_var[ch] = (F::one() - momentum) * state.running_var[ch] + momentum * unbiased;
            }
        }
        (mean, var)
    } else {
        (state.running_mean.clone(), state.running_var.clone())
    };

    let inv_std: Vec<F> = var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
    let (gd, bd) = (gamma.data(), beta.data());
    let mut xhat = vec![F::zero(); xd.len()];
    let mut y = vec![F::zero(); xd.len()];
    for b in 0..n {
        for ch in 0..c {
            let o = idx(b, ch);
            for i in o..o + inner {
                let h = (xd[i] - mean[ch]) * inv_std[ch];
                xhat[i] = h;
                y[i] = gd[ch] * h + bd[ch];
            }
        }
    }

    let gv = gamma.shared_data();
    Ok(Tensor::from_op(x.shape().to_vec(), y, vec![x.clone(), gamma.clone(), beta.clone()], move |g, needs| {
        let mut dgamma = vec![F::zero(); c];
        let mut dbeta = vec![F::zero(); c];
        for b in 0..n {
            for ch in 0..c {
                let o = idx(b, ch);
                for i in o..o + inner {
                    dgamma[ch] += g[i] * xhat[i];
                    dbeta[ch] += g[i];
                }
            }
        }
        let dx = needs[0].then(|| {
            let mut dx = vec![F::zero(); g.len()];
            for ch in 0..c {
                let k = gv[ch] * inv_std[ch];
                if training {
                    // dx = γ·σ⁻¹·(g − mean(g) − x̂·mean(g·x̂))
                    let mg = dbeta[ch] / cnt;
                    let mgx = dgamma[ch] / cnt;
                    for b in 0..n {
                        let o = idx(b, ch);
                        for i in o..o + inner {
                            dx[i] = k * (g[i] - mg - xhat[i] * mgx);
                        }
                    }
                } else {
                    for b in 0..n {
                        let o = idx(b, ch);
                        for i in o..o + inner {
                            dx[i] = k * g[i];
                        }
                    }
                }
            }
            dx
        });
        vec![dx, needs[1].then_some(dgamma), needs[2].then_some(dbeta)]
    }))
}

/// Normalizes across channels independently at every voxel, then applies a
/// per-channel affine transform.
pub fn layer_norm_channels<F: Real>(x: &Tensor<F>, gamma: &Tensor<F>, beta: &Tensor<F>, eps: F) -> Result<Tensor<F>> {
    let (n, c, inner) = channel_dims(x.shape())?;
    check_affine(c, gamma, beta)?;
    let xd = x.data();
    let cf = F::lit(c as f64);
    let mut xhat = vec![F::zero(); xd.len()];
    let mut inv_std = vec![F::zero(); n * inner];
    let (gd, bd) = (gamma.data(), beta.data());
    let mut y = vec![F::zero(); xd.len()];
    for b in 0..n {
        let base = b * c * inner;
        for v in 0..inner {
            let mut m = F::zero();
            for ch in 0..c {
                m += xd[base + ch * inner + v];
            }
            m /= cf;
            let mut var = F::zero();
            for ch in 0..c {
                let d = xd[base + ch * inner + v] - m;
                var += d * d;
            }
            let is = F::one() / (var / cf + eps).sqrt();
            inv_std[b * inner + v] = is;
            for ch in 0..c {
                let i = base + ch * inner + v;
                xhat[i] = (xd[i] - m) * is;
                y[i] = gd[ch] * xhat[i] + bd[ch];
            }
        }
    }
    let gv = gamma.shared_data();
    Ok(Tensor::from_op(x.shape().to_vec(), y, vec![x.clone(), gamma.clone(), beta.clone()], move |g, needs| {
        let mut dgamma = vec![F::zero(); c];
        let mut dbeta = vec![F::zero(); c];
        for (i, (&gi, &h)) in g.iter().zip(&xhat).enumerate() {
            let ch = (i / inner) % c;
            dgamma[ch] += gi * h;
            dbeta[ch] += gi;
        }
        let dx = needs[0].then(|| {
            let mut dx = vec![F::zero(); g.len()];
            for b in 0..n {
                let base = b * c * inner;
                for v in 0..inner {
                    let mut mg = F::zero();
                    let mut mgx = F::zero();
                    for ch in 0..c {
                        let i = base + ch * inner + v;
                        let gh = g[i] * gv[ch];
                        mg += gh;
                        mgx += gh * xhat[i];
                    }
                    mg /= cf;
                    mgx /= cf;
                    let is = inv_std[b * inner + v];
                    for ch in 0..c {
                        let i = base + ch * inner + v;
                        dx[i] = is * (g[i] * gv[ch] - mg - xhat[i] * mgx);
                    }
                }
            }
            dx
        });
        vec![dx, needs[1].then_some(dgamma), needs[2].then_some(dbeta)]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(shape.to_vec(), v).unwrap()
    }

    #[test]
    fn batch_norm_constant_input_is_zero() {
        let x = t(&[2, 1, 2, 1, 1], vec![3.0; 4]);
        let mut st = BatchNormState::new(1);
        let y = batch_norm(&x, &t(&[1], vec![1.0]), &t(&[1], vec![0.0]), &mut st, true, 0.1, 1e-5).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_norm_affine_collapse() {
        let x = t(&[1, 2, 3, 1, 1], vec![1.0, -4.0, 2.0, 9.0, 0.5, 3.0]);
        let mut st = BatchNormState::new(2);
        for training in [true, false] {
            let y = batch_norm(&x, &t(&[2], vec![0.0; 2]), &t(&[2], vec![5.0; 2]), &mut st, training, 0.1, 1e-5).unwrap();
            assert!(y.data().iter().all(|&v| v == 5.0));
        }
    }

    #[test]
    fn batch_norm_two_values() {
        let x = t(&[1, 1, 2, 1, 1], vec![1.0, 3.0]);
        let mut st = BatchNormState::new(1);
        let y = batch_norm(&x, &t(&[1], vec![1.0]), &t(&[1], vec![0.0]), &mut st, true, 0.1, 0.0).unwrap();
        assert_eq!(y.data(), &[-1.0, 1.0]);
        // running mean 0.9*0 + 0.1*2, running var 0.9*1 + 0.1*2 (unbiased var of {1,3} is 2)
        assert!((st.running_mean[0] - 0.2).abs() < 1e-12);
        assert!((st.running_var[0] - 1.1).abs() < 1e-12);
    }

    #[test]
    fn batch_norm_eval_uses_running_stats() {
        let x = t(&[1, 1, 2, 1, 1], vec![1.0, 3.0]);
        let mut st = BatchNormState { running_mean: vec![1.0], running_var: vec![4.0] };
        let y = batch_norm(&x, &t(&[1], vec![1.0]), &t(&[1], vec![0.0]), &mut st, false, 0.1, 0.0).unwrap();
        assert_eq!(y.data(), &[0.0, 1.0]);
        assert_eq!(st.running_mean, vec![1.0]);
    }

    #[test]
    fn batch_norm_channel_mismatch() {
        let x = t(&[1, 2, 1, 1, 1], vec![1.0, 2.0]);
        let mut st = BatchNormState::new(3);
        assert!(batch_norm(&x, &t(&[2], vec![1.0; 2]), &t(&[2], vec![0.0; 2]), &mut st, true, 0.1, 1e-5).is_err());
    }

    #[test]
    fn layer_norm_examples() {
        let x = t(&[1, 2, 1, 1, 1], vec![0.0, 2.0]);
        let y = layer_norm_channels(&x, &t(&[2], vec![1.0; 2]), &t(&[2], vec![0.0; 2]), 0.0).unwrap();
        assert_eq!(y.data(), &[-1.0, 1.0]);

        let x = t(&[1, 3, 2, 1, 1], vec![4.0, 1.0, 4.0, 1.0, 4.0, 1.0]);
        let y = layer_norm_channels(&x, &t(&[3], vec![1.0; 3]), &t(&[3], vec![0.0; 3]), 1e-5).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));

        let y = layer_norm_channels(&x, &t(&[3], vec![0.0; 3]), &t(&[3], vec![1.0, 2.0, 3.0]), 1e-5).unwrap();
        assert_eq!(y.data(), &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        assert!(layer_norm_channels(&x, &t(&[2], vec![1.0; 2]), &t(&[2], vec![0.0; 2]), 1e-5).is_err());
    }
}
