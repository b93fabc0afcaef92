//! Elementwise arithmetic, channel broadcasting, reductions and
//! concatenation.
//!
//! Binary operations accept a right-hand side that either matches the left
//! shape exactly, is a per-channel vector `[C]` broadcast along axis 1 of an
//! `N, C, ...` tensor, or is a single-element scalar tensor.

use super::{numel, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    /// `(channels, inner)`: rhs index is `(i / inner) % channels`.
    Channel(usize, usize),
    Scalar,
}

fn broadcast_kind(a: &[usize], b: &[usize]) -> Result<Broadcast> {
    if a == b {
        return Ok(Broadcast::Same);
    }
    if numel(b) == 1 {
        return Ok(Broadcast::Scalar);
    }
    if b.len() == 1 && a.len() >= 2 && a[1] == b[0] {
        return Ok(Broadcast::Channel(b[0], numel(&a[2..])));
    }
    Err(Error::shape(format!("cannot broadcast {b:?} onto {a:?}")))
}

impl Broadcast {
    #[inline]
    fn index(self, i: usize) -> usize {
        match self {
            Broadcast::Same => i,
            Broadcast::Channel(c, inner) => (i / inner) % c,
            Broadcast::Scalar => 0,
        }
    }

    /// Sums a full-size gradient down to the rhs shape.
    fn reduce<F: Real>(self, g: &[F], rhs_len: usize) -> Vec<F> {
        match self {
            Broadcast::Same => g.to_vec(),
            _ => {
                let mut out = vec![F::zero(); rhs_len];
                for (i, &v) in g.iter().enumerate() {
                    out[self.index(i)] += v;
                }
                out
            }
        }
    }
}

pub fn add<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    let bc = broadcast_kind(a.shape(), b.shape())?;
    let (ad, bd) = (a.data(), b.data());
    let data: Vec<F> = match bc {
        Broadcast::Same => ad.iter().zip(bd).map(|(&x, &y)| x + y).collect(),
        _ => ad.iter().enumerate().map(|(i, &x)| x + bd[bc.index(i)]).collect(),
    };
    let blen = b.numel();
    Ok(Tensor::from_op(a.shape().to_vec(), data, vec![a.clone(), b.clone()], move |g, needs| {
        vec![
            needs[0].then(|| g.to_vec()),
            needs[1].then(|| bc.reduce(g, blen)),
        ]
    }))
}

pub fn sub<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    add(a, &scale(b, F::lit(-1.0)))
}

pub fn mul<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    let bc = broadcast_kind(a.shape(), b.shape())?;
    let (ad, bd) = (a.data(), b.data());
    let data: Vec<F> = match bc {
        Broadcast::Same => ad.iter().zip(bd).map(|(&x, &y)| x * y).collect(),
        _ => ad.iter().enumerate().map(|(i, &x)| x * bd[bc.index(i)]).collect(),
    };
    let (av, bv) = (a.shared_data(), b.shared_data());
    let blen = b.numel();
    Ok(Tensor::from_op(a.shape().to_vec(), data, vec![a.clone(), b.clone()], move |g, needs| {
        let ga = needs[0].then(|| g.iter().enumerate().map(|(i, &gi)| gi * bv[bc.index(i)]).collect());
        let gb = needs[1].then(|| {
            let prod: Vec<F> = g.iter().zip(av.iter()).map(|(&gi, &x)| gi * x).collect();
            bc.reduce(&prod, blen)
        });
        vec![ga, gb]
    }))
}

pub fn scale<F: Real>(a: &Tensor<F>, s: F) -> Tensor<F> {
    let data = a.data().iter().map(|&x| x * s).collect();
    Tensor::from_op(a.shape().to_vec(), data, vec![a.clone()], move |g, _| {
        vec![Some(g.iter().map(|&v| v * s).collect())]
    })
}

pub fn sum<F: Real>(a: &Tensor<F>) -> Tensor<F> {
    let total = a.data().iter().copied().sum::<F>();
    let n = a.numel();
    Tensor::from_op(vec![1], vec![total], vec![a.clone()], move |g, _| vec![Some(vec![g[0]; n])])
}

pub fn mean<F: Real>(a: &Tensor<F>) -> Tensor<F> {
    let n = F::lit(a.numel() as f64);
    scale(&sum(a), F::one() / n)
}

/// Sums out every axis except axis 1, giving a `[C]` vector.
pub fn sum_per_channel<F: Real>(a: &Tensor<F>) -> Result<Tensor<F>> {
    if a.ndim() < 2 {
        return Err(Error::shape("sum_per_channel needs at least 2 axes"));
    }
    let c = a.shape()[1];
    let inner = numel(&a.shape()[2..]);
    let bc = Broadcast::Channel(c, inner);
    let data = bc.reduce(a.data(), c);
    let n = a.numel();
    Ok(Tensor::from_op(vec![c], data, vec![a.clone()], move |g, _| {
        vec![Some((0..n).map(|i| g[bc.index(i)]).collect())]
    }))
}

/// Concatenates `N, C_i, ...` tensors along the channel axis.
pub fn concat_channels<F: Real>(parts: &[Tensor<F>]) -> Result<Tensor<F>> {
    let first = parts.first().ok_or_else(|| Error::shape("concat of nothing"))?;
    if first.ndim() < 2 {
        return Err(Error::shape("concat_channels needs at least 2 axes"));
    }
    let n = first.shape()[0];
    let rest = first.shape()[2..].to_vec();
    for p in parts {
        if p.ndim() != first.ndim() || p.shape()[0] != n || p.shape()[2..] != rest[..] {
            return Err(Error::shape(format!("concat {:?} with {:?}", first.shape(), p.shape())));
        }
    }
    let inner = numel(&rest);
    let chans: Vec<usize> = parts.iter().map(|p| p.shape()[1]).collect();
    let total_c: usize = chans.iter().sum();
    let mut data = Vec::with_capacity(n * total_c * inner);
    for b in 0..n {
        for (p, &c) in parts.iter().zip(&chans) {
            data.extend_from_slice(&p.data()[b * c * inner..(b + 1) * c * inner]);
        }
    }
    let mut shape = vec![n, total_c];
    shape.extend_from_slice(&rest);
    Ok(Tensor::from_op(shape, data, parts.to_vec(), move |g, needs| {
        let mut grads: Vec<Option<Vec<F>>> = chans
            .iter()
            .zip(needs)
            .map(|(&c, &need)| need.then(|| Vec::with_capacity(n * c * inner)))
            .collect();
        for b in 0..n {
            let mut off = b * total_c * inner;
            for (gslot, &c) in grads.iter_mut().zip(&chans) {
                if let Some(gv) = gslot {
                    gv.extend_from_slice(&g[off..off + c * inner]);
                }
                off += c * inner;
            }
        }
        grads
    }))
}

/// Relative error `max|a-b| / max|b|`, the comparison used by every oracle
/// check in this crate.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(shape.to_vec(), v).unwrap()
    }

    #[test]
    fn add_zeros_and_mul_ones_are_identity() {
        let x = t(&[1, 2, 2], vec![1.0, -2.0, 3.5, 4.0]);
        assert_eq!(add(&x, &Tensor::zeros([1, 2, 2])).unwrap().data(), x.data());
        assert_eq!(mul(&x, &Tensor::ones([1, 2, 2])).unwrap().data(), x.data());
    }

    #[test]
    fn sum_of_two_by_two() {
        let x = t(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(sum(&x).item(), 10.0);
        assert_eq!(mean(&x).item(), 2.5);
    }

    #[test]
    fn channel_broadcast_applies_per_channel() {
        let x = t(&[1, 2, 2], vec![1.0, 1.0, 1.0, 1.0]);
        let s = t(&[2], vec![2.0, 3.0]);
        assert_eq!(mul(&x, &s).unwrap().data(), &[2.0, 2.0, 3.0, 3.0]);
        assert_eq!(add(&x, &s).unwrap().data(), &[3.0, 3.0, 4.0, 4.0]);
        assert!(add(&x, &t(&[3], vec![0.0; 3])).is_err());
    }

    #[test]
    fn channel_broadcast_gradient_reduces() {
        let x = t(&[2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).requires_grad(true);
        let s = t(&[2], vec![10.0, 20.0]).requires_grad(true);
        sum(&mul(&x, &s).unwrap()).backward().unwrap();
        assert_eq!(s.grad().unwrap(), vec![1.0 + 3.0, 2.0 + 4.0]);
        assert_eq!(x.grad().unwrap(), vec![10.0, 20.0, 10.0, 20.0]);
    }

    #[test]
    fn concat_and_split_gradients() {
        let a = t(&[2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).requires_grad(true);
        let b = t(&[2, 2, 2], vec![5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).requires_grad(true);
        let c = concat_channels(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(c.shape(), &[2, 3, 2]);
        assert_eq!(c.data(), &[1.0, 2.0, 5.0, 6.0, 7.0, 8.0, 3.0, 4.0, 9.0, 10.0, 11.0, 12.0]);
        let w = t(&[2, 3, 2], (0..12).map(|i| i as f64).collect());
        sum(&mul(&c, &w).unwrap()).backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![0.0, 1.0, 6.0, 7.0]);
        assert_eq!(b.grad().unwrap(), vec![2.0, 3.0, 4.0, 5.0, 8.0, 9.0, 10.0, 11.0]);
    }
}
