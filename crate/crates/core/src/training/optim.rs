//! Global-norm gradient clipping and Adam.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::blocks::ParamStore;
use crate::error::{Error, Result};
use crate::network::checkpoint::Blob;
use crate::tensor::Real;

pub type Grads<F> = BTreeMap<String, Vec<F>>;

/// Scales all gradients by `max_norm / norm` when the global L2 norm exceeds
/// `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm<F: Real>(grads: &mut Grads<F>, max_norm: f64) -> Result<f64> {
    let sq: f64 = grads.values().flat_map(|g| g.iter()).map(|v| v.as_f64() * v.as_f64()).sum();
    let norm = sq.sqrt();
    if !norm.is_finite() {
        let bad = grads.iter().find(|(_, g)| g.iter().any(|v| !v.is_finite())).map(|(k, _)| k.as_str()).unwrap_or("?");
        return Err(Error::NonFinite(format!("gradient of {bad} is not finite")));
    }
    if norm > max_norm {
        let s = F::lit(max_norm / norm);
        grads.values_mut().for_each(|g| g.iter_mut().for_each(|v| *v *= s));
    }
    Ok(norm)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn to_blobs(&self) -> Vec<Blob> {
        let mut out = Vec::new();
        for (k, m) in &self.m {
            out.push(Blob { name: format!("adam.m:{k}"), shape: vec![m.len()], dtype: 1, data: m.clone() });
        }
        for (k, v) in &self.v {
            out.push(Blob { name: format!("adam.v:{k}"), shape: vec![v.len()], dtype: 1, data: v.clone() });
        }
        out
    }

    pub fn from_blobs(step: u64, blobs: &[Blob]) -> Self {
        let mut st = AdamState { step, ..Default::default() };
        for b in blobs {
            if let Some(k) = b.name.strip_prefix("adam.m:") {
                st.m.insert(k.to_string(), b.data.clone());
            } else if let Some(k) = b.name.strip_prefix("adam.v:") {
                st.v.insert(k.to_string(), b.data.clone());
            }
        }
        st
    }
}

/// One bias-corrected Adam update of every parameter that has a gradient.
pub fn adam_step<F: Real>(params: &mut ParamStore<F>, grads: &Grads<F>, state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (name, g) in grads {
        let p = params.params.get_mut(name).ok_or_else(|| Error::Config(format!("gradient for unknown parameter {name}")))?;
        if g.len() != p.data.len() {
            return Err(Error::shape(format!("{name}: gradient of {} for {} values", g.len(), p.data.len())));
        }
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        if m.len() != g.len() || v.len() != g.len() {
            return Err(Error::shape(format!("{name}: optimizer state does not match parameter size")));
        }
        let mut data = p.data.as_ref().clone();
        for i in 0..g.len() {
            let gi = g[i].as_f64();
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            data[i] = F::lit(data[i].as_f64() - cfg.lr * mhat / (vhat.sqrt() + cfg.eps));
        }
        p.data = Arc::new(data);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::{Init, Slot, SlotSpec};

    fn store(vals: &[f64]) -> ParamStore<f64> {
        let mut s = ParamStore::init(
            &[SlotSpec { name: "w".into(), slot: Slot::Param { shape: vec![vals.len()], init: Init::Zeros } }],
            0,
        )
        .unwrap();
        s.set("w", vals.to_vec()).unwrap();
        s
    }

    #[test]
    fn clipping_examples() {
        let mut g: Grads<f64> = [("a".to_string(), vec![0.3, 0.4])].into();
        assert_eq!(clip_grad_norm(&mut g, 1.0).unwrap(), 0.5);
        assert_eq!(g["a"], vec![0.3, 0.4]);

        let mut g: Grads<f64> = [("a".to_string(), vec![1.2, 1.6])].into();
        assert_eq!(clip_grad_norm(&mut g, 1.0).unwrap(), 2.0);
        assert!((g["a"][0] - 0.6).abs() < 1e-15 && (g["a"][1] - 0.8).abs() < 1e-15);

        let mut g: Grads<f64> = [("a".to_string(), vec![3.0]), ("b".to_string(), vec![4.0])].into();
        assert_eq!(clip_grad_norm(&mut g, 1.0).unwrap(), 5.0);
        assert!((g["a"][0] - 0.6).abs() < 1e-15 && (g["b"][0] - 0.8).abs() < 1e-15);

        let mut g: Grads<f64> = [("a".to_string(), vec![f64::NAN])].into();
        assert!(clip_grad_norm(&mut g, 1.0).is_err());
    }

    #[test]
    fn adam_zero_gradient_is_no_update() {
        let mut s = store(&[1.0, -2.0]);
        let mut st = AdamState::default();
        for _ in 0..3 {
            adam_step(&mut s, &[("w".to_string(), vec![0.0, 0.0])].into(), &mut st, &AdamConfig::default()).unwrap();
        }
        assert_eq!(s.params["w"].data.as_ref(), &vec![1.0, -2.0]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut s = store(&[1.0, -2.0, 0.5]);
        let cfg = AdamConfig { lr: 1e-3, ..Default::default() };
        let mut st = AdamState::default();
        adam_step(&mut s, &[("w".to_string(), vec![1.0; 3])].into(), &mut st, &cfg).unwrap();
        for (new, old) in s.params["w"].data.iter().zip([1.0, -2.0, 0.5]) {
            assert!(((old - new) - cfg.lr).abs() < 1e-6 * cfg.lr);
        }
    }

    #[test]
    fn adam_state_round_trips_through_blobs() {
        let mut s = store(&[1.0]);
        let mut st = AdamState::default();
        adam_step(&mut s, &[("w".to_string(), vec![0.5])].into(), &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(AdamState::from_blobs(st.step, &st.to_blobs()), st);
    }
}
