//! Central finite-difference gradient checking in 64-bit.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::ops::max_rel_err;
use crate::tensor::Tensor;

/// Outcome of comparing reverse-mode gradients against finite differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Worst `max|analytic − numeric| / max|numeric|` over the inputs.
    pub max_rel_err: f64,
    pub coords_checked: usize,
}

/// Compares the gradient of the scalar `loss(inputs)` with respect to every
/// input against central differences with step `h`, on at most
/// `max_coords` randomly chosen coordinates per input.
pub fn check_gradients<L>(loss: L, inputs: &[Tensor<f64>], h: f64, max_coords: usize, seed: u64) -> Result<GradCheckReport>
where
    L: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let leaves: Vec<Tensor<f64>> = inputs.iter().map(|t| t.detach().requires_grad(true)).collect();
    loss(&leaves)?.backward()?;
    let analytic: Vec<Vec<f64>> =
        leaves.iter().map(|l| l.grad().unwrap_or_else(|| vec![0.0; l.numel()])).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (i, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let coords: Vec<usize> = if n <= max_coords { (0..n).collect() } else { sample(&mut rng, n, max_coords).into_vec() };
        let mut numeric = Vec::with_capacity(coords.len());
        let mut exact = Vec::with_capacity(coords.len());
        for &c in &coords {
            let eval = |delta: f64| -> Result<f64> {
                let mut data = input.to_vec();
                data[c] += delta;
                let mut probe: Vec<Tensor<f64>> = inputs.iter().map(|t| t.detach()).collect();
                probe[i] = Tensor::from_vec(input.shape().to_vec(), data)?;
                Ok(loss(&probe)?.item())
            };
            numeric.push((eval(h)? - eval(-h)?) / (2.0 * h));
            exact.push(analytic[i][c]);
        }
        checked += coords.len();
        worst = worst.max(max_rel_err(&exact, &numeric));
    }
    Ok(GradCheckReport { max_rel_err: worst, coords_checked: checked })
}
