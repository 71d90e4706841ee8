use ndarray::{Array2, Zip};

use crate::error::NnError;
use crate::param::{ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// Bias-corrected Adam over a subset of a store's arrays.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    ids: Vec<ParamId>,
    m: Vec<Array2<f32>>,
    v: Vec<Array2<f32>>,
    t: u64,
}

impl Adam {
    pub fn new(store: &ParamStore<f32>, ids: Vec<ParamId>, config: AdamConfig) -> Self {
        let m: Vec<_> = ids
            .iter()
            .map(|&id| Array2::zeros(store.get(id).values.raw_dim()))
            .collect();
        Self {
            config,
            v: m.clone(),
            m,
            ids,
            t: 0,
        }
    }

    pub fn ids(&self) -> &[ParamId] {
        &self.ids
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self, k: usize) -> &Array2<f32> {
        &self.m[k]
    }

    pub fn second_moment(&self, k: usize) -> &Array2<f32> {
        &self.v[k]
    }

    /// Applies one update. `grads` is indexed by [`ParamId`] over the whole
    /// store (as returned by `Gradients::for_store`). A non-finite gradient
    /// rejects the whole update and leaves params and moments untouched.
    pub fn step(&mut self, store: &mut ParamStore<f32>, grads: &[Array2<f32>]) -> Result<(), NnError> {
        for &id in &self.ids {
            if grads[id.0].iter().any(|g| !g.is_finite()) {
                return Err(NnError::NonFiniteGradient(id.0));
            }
        }
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let step_size = (c.lr / bc1) as f32;
        let bc2_sqrt = bc2.sqrt() as f32;
        let (b1, b2, eps) = (c.beta1 as f32, c.beta2 as f32, c.eps as f32);
        for (k, &id) in self.ids.iter().enumerate() {
            let g = &grads[id.0];
            let p = &mut store.get_mut(id).values;
            Zip::from(p)
                .and(&mut self.m[k])
                .and(&mut self.v[k])
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= step_size * *m / (v.sqrt() / bc2_sqrt + eps);
                });
            if store.get(id).values.iter().any(|x| !x.is_finite()) {
                return Err(NnError::NonFiniteParam(id.0));
            }
        }
        Ok(())
    }
}

/// Rescales `grads[ids]` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Array2<f32>], ids: &[ParamId], max_norm: f64) -> f64 {
    let sq: f64 = ids
        .iter()
        .flat_map(|id| grads[id.0].iter())
        .map(|&g| (g as f64) * (g as f64))
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm.is_finite() {
        let k = (max_norm / norm) as f32;
        for id in ids {
            grads[id.0].mapv_inplace(|g| g * k);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn store() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.push(array![[1.0, -2.0, 0.5]]);
        s
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut s = store();
        let before = s.clone();
        let mut adam = Adam::new(&s, vec![ParamId(0)], AdamConfig::default());
        adam.step(&mut s, &[array![[1.0, 1.0, 1.0]]]).unwrap();
        let after_first = s.clone();
        let m1 = adam.first_moment(0).clone();
        adam.step(&mut s, &[Array2::zeros((1, 3))]).unwrap();
        // the remaining first moment still moves params; with zero moments there is no motion
        assert_ne!(after_first, before);
        assert!(adam.first_moment(0).iter().zip(m1.iter()).all(|(a, b)| a.abs() < b.abs()));

        let mut fresh = store();
        let mut adam = Adam::new(&fresh, vec![ParamId(0)], AdamConfig::default());
        adam.step(&mut fresh, &[Array2::zeros((1, 3))]).unwrap();
        assert_eq!(fresh, before);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut s = store();
        let before = s.get(ParamId(0)).values.clone();
        let cfg = AdamConfig::with_lr(1e-2);
        let mut adam = Adam::new(&s, vec![ParamId(0)], cfg);
        let g = array![[0.3f32, -4.0, 1e-3]];
        adam.step(&mut s, &[g.clone()]).unwrap();
        // m_hat = g, v_hat = g^2 so the step is lr * g / (|g| + eps)
        for j in 0..3 {
            let delta = (s.get(ParamId(0)).values[[0, j]] - before[[0, j]]) as f64;
            let gj = g[[0, j]] as f64;
            let expected = -cfg.lr * gj / (gj.abs() + cfg.eps);
            assert!((delta - expected).abs() < 1e-6, "{delta} vs {expected}");
        }
    }

    #[test]
    fn deterministic() {
        let g = array![[0.1f32, 0.2, -0.3]];
        let run = || {
            let mut s = store();
            let mut adam = Adam::new(&s, vec![ParamId(0)], AdamConfig::default());
            for _ in 0..5 {
                adam.step(&mut s, &[g.clone()]).unwrap();
            }
            s
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut s = store();
        let before = s.clone();
        let mut adam = Adam::new(&s, vec![ParamId(0)], AdamConfig::default());
        let err = adam.step(&mut s, &[array![[0.0, f32::NAN, 0.0]]]);
        assert!(matches!(err, Err(NnError::NonFiniteGradient(0))));
        assert_eq!(s, before);
        assert_eq!(adam.steps_taken(), 0);
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g = vec![array![[3.0f32, 4.0]]];
        let n = clip_grad_norm(&mut g, &[ParamId(0)], 1.0);
        assert!((n - 5.0).abs() < 1e-12);
        assert!((g[0][[0, 0]] - 0.6).abs() < 1e-6);
    }
}
