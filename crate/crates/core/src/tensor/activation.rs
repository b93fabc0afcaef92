use super::{Real, Tensor};

/// Exact GELU, `x * Φ(x)` with the erf form of the Gaussian CDF.
pub fn gelu<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    let half = F::lit(0.5);
    let inv_sqrt2 = F::lit(std::f64::consts::FRAC_1_SQRT_2);
    let data = x.data().iter().map(|&v| v * half * (F::one() + (v * inv_sqrt2).erf())).collect();
    let xv = x.shared_data();
    Tensor::from_op(x.shape().to_vec(), data, vec![x.clone()], move |g, _| {
        let inv_sqrt_2pi = F::lit(0.398_942_280_401_432_7);
        let grad = g
            .iter()
            .zip(xv.iter())
            .map(|(&gi, &v)| {
                let cdf = half * (F::one() + (v * inv_sqrt2).erf());
                let pdf = inv_sqrt_2pi * (-half * v * v).exp();
                gi * (cdf + v * pdf)
            })
            .collect();
        vec![Some(grad)]
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gelu1(v: f64) -> f64 {
        gelu(&Tensor::<f64>::scalar(v)).item()
    }

    #[test]
    fn reference_values() {
        assert_eq!(gelu1(0.0), 0.0);
        assert!((gelu1(10.0) - 10.0).abs() < 1e-6);
        // 1 * Φ(1), Φ(1) = 0.8413447460685429
        assert!((gelu1(1.0) - 0.841_345).abs() < 1e-5);
        assert!((gelu(&Tensor::<f32>::scalar(1.0)).item() - 0.841_345).abs() < 1e-5);
    }
}
