use std::collections::BTreeMap;

use crate::tensor::{ParamId, ParamStore};

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Adam with bias correction. State exists only for the handles it was
/// built with.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    state: BTreeMap<ParamId, Moments>,
    scales: BTreeMap<ParamId, f64>,
}

impl Adam {
    pub fn new(store: &ParamStore, trainable: &[ParamId], lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let state = trainable
            .iter()
            .map(|&id| {
                let n = store.get(id).len();
                (id, Moments { m: vec![0.0; n], v: vec![0.0; n] })
            })
            .collect();
        Self {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            state,
            scales: BTreeMap::new(),
        }
    }

    /// Multiplies the learning rate of one handle by `scale`.
    pub fn set_lr_scale(&mut self, id: ParamId, scale: f64) {
        self.scales.insert(id, scale);
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn tracks(&self, id: ParamId) -> bool {
        self.state.contains_key(&id)
    }

    /// One update from the gradients stored in `store`. Parameters without a
    /// gradient are treated as having zero gradient.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (&id, mom) in self.state.iter_mut() {
            let lr = self.lr * self.scales.get(&id).copied().unwrap_or(1.0);
            let tensor = store.get_mut(id);
            let grad = tensor.grad().map(<[f64]>::to_vec);
            let data = tensor.data_mut();
            for i in 0..data.len() {
                let g = grad.as_ref().map_or(0.0, |g| g[i]);
                mom.m[i] = self.beta1 * mom.m[i] + (1.0 - self.beta1) * g;
                mom.v[i] = self.beta2 * mom.v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = mom.m[i] / c1;
                let v_hat = mom.v[i] / c2;
                data[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn store_with(values: Vec<f64>) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let n = values.len();
        let id = s.add("w", Tensor::new(vec![n], values).unwrap().with_requires_grad(true));
        (s, id)
    }

    #[test]
    fn zero_gradient_fresh_state_is_a_null_update() {
        let (mut s, id) = store_with(vec![0.5, -1.0]);
        s.get_mut(id).accumulate_grad(&[0.0, 0.0]);
        let mut adam = Adam::new(&s, &[id], 0.1, 0.9, 0.999, 1e-8);
        adam.step(&mut s);
        assert_eq!(s.get(id).data(), &[0.5, -1.0]);
    }

    #[test]
    fn single_step_matches_closed_form() {
        let g = [0.3, -2.0, 1e-6];
        let (lr, b1, b2, eps) = (0.01, 0.9, 0.999, 1e-8);
        let (mut s, id) = store_with(vec![1.0, 1.0, 1.0]);
        s.get_mut(id).accumulate_grad(&g);
        let mut adam = Adam::new(&s, &[id], lr, b1, b2, eps);
        adam.step(&mut s);
        for (i, gi) in g.iter().enumerate() {
            // m̂ = g and v̂ = g² after one bias-corrected step.
            let m_hat = (1.0 - b1) * gi / (1.0 - b1);
            let v_hat = (1.0 - b2) * gi * gi / (1.0 - b2);
            let expected = 1.0 - lr * m_hat / (v_hat.sqrt() + eps);
            assert!((s.get(id).data()[i] - expected).abs() < 1e-15);
            let approx = 1.0 - lr * gi / (gi.abs() + eps);
            assert!((s.get(id).data()[i] - approx).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let (mut s, id) = store_with(vec![0.1, 0.2, 0.3]);
            let mut adam = Adam::new(&s, &[id], 1e-3, 0.9, 0.999, 1e-8);
            for k in 0..5 {
                s.zero_grads();
                let g: Vec<f64> = s.get(id).data().iter().map(|w| w * (k as f64 + 1.0)).collect();
                s.get_mut(id).accumulate_grad(&g);
                adam.step(&mut s);
            }
            (s.get(id).data().to_vec(), adam)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn untracked_parameters_are_untouched() {
        let mut s = ParamStore::new();
        let a = s.add("a", Tensor::filled(&[2], 1.0).with_requires_grad(true));
        let b = s.add("b", Tensor::filled(&[2], 1.0).with_requires_grad(true));
        s.get_mut(a).accumulate_grad(&[1.0, 1.0]);
        s.get_mut(b).accumulate_grad(&[1.0, 1.0]);
        let mut adam = Adam::new(&s, &[a], 0.1, 0.9, 0.999, 1e-8);
        adam.step(&mut s);
        assert!(adam.tracks(a) && !adam.tracks(b));
        assert_eq!(s.get(b).data(), &[1.0, 1.0]);
        assert_ne!(s.get(a).data(), &[1.0, 1.0]);
    }
}
