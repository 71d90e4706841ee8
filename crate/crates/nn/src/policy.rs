//! Tanh-squashed diagonal Gaussian policies.
//!
//! Actions live in the normalized box `[-1, 1]^d`; environments rescale them.
//! `log_prob` is the density of the squashed action in that box:
//! `log N(u; mu, sigma) - sum ln(1 - tanh(u)^2)` with `a = tanh(u)`.

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::NnError;
use crate::mlp::Mlp;
use crate::param::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{softplus, Tape, Var};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Clone, Debug, PartialEq)]
pub enum LogStd {
    /// One learned log-std per action dimension, independent of the state.
    Shared(ParamId),
    /// Second half of the network output.
    FromNetwork,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPolicy {
    pub net: Mlp,
    pub act_dim: usize,
    pub log_std: LogStd,
}

/// One draw from the policy for a single observation.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicySample {
    /// Pre-squash Gaussian sample `u`.
    pub raw: Vec<f32>,
    /// `tanh(u)`, inside `[-1, 1]`.
    pub action: Vec<f32>,
    pub log_prob: f32,
}

impl GaussianPolicy {
    pub fn state_independent<R: Rng + ?Sized>(
        store: &mut ParamStore<f32>,
        obs_dim: usize,
        hidden: &[usize],
        act_dim: usize,
        init_log_std: f32,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        let sizes = layer_sizes(obs_dim, hidden, act_dim);
        let net = Mlp::new(store, &sizes, 0.01, rng)?;
        let log_std = store.filled(1, act_dim, init_log_std);
        Ok(Self {
            net,
            act_dim,
            log_std: LogStd::Shared(log_std),
        })
    }

    pub fn state_dependent<R: Rng + ?Sized>(
        store: &mut ParamStore<f32>,
        obs_dim: usize,
        hidden: &[usize],
        act_dim: usize,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        let sizes = layer_sizes(obs_dim, hidden, 2 * act_dim);
        let net = Mlp::new(store, &sizes, 0.01, rng)?;
        Ok(Self {
            net,
            act_dim,
            log_std: LogStd::FromNetwork,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.net.param_ids();
        if let LogStd::Shared(id) = self.log_std {
            ids.push(id);
        }
        ids
    }

    /// Mean and clamped log-std for a batch of observations.
    pub fn distribution<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        obs: &Array2<T>,
    ) -> Result<(Array2<T>, Array2<T>), NnError> {
        let out = self.net.infer(store, obs)?;
        let d = self.act_dim;
        let (lo, hi) = (T::c(LOG_STD_MIN), T::c(LOG_STD_MAX));
        let (mean, log_std) = match self.log_std {
            LogStd::Shared(id) => {
                let row = store.get(id).values.mapv(|x| x.max(lo).min(hi));
                let ls = row.broadcast((obs.nrows(), d)).unwrap().to_owned();
                (out, ls)
            }
            LogStd::FromNetwork => {
                let mean = out.slice(ndarray::s![.., 0..d]).to_owned();
                let ls = out.slice(ndarray::s![.., d..2 * d]).mapv(|x| x.max(lo).min(hi));
                (mean, ls)
            }
        };
        Ok((mean, log_std))
    }

    /// Deterministic action `tanh(mean)` for one observation.
    pub fn mean_action(&self, store: &ParamStore<f32>, obs: &[f32]) -> Result<Vec<f32>, NnError> {
        let x = Array2::from_shape_vec((1, obs.len()), obs.to_vec()).unwrap();
        let (mean, _) = self.distribution(store, &x)?;
        Ok(mean.iter().map(|m| m.tanh_act()).collect())
    }

    pub fn sample<R: Rng + ?Sized>(
        &self,
        store: &ParamStore<f32>,
        obs: &[f32],
        rng: &mut R,
    ) -> Result<PolicySample, NnError> {
        let x = Array2::from_shape_vec((1, obs.len()), obs.to_vec()).unwrap();
        let (mean, log_std) = self.distribution(store, &x)?;
        let mut raw = Vec::with_capacity(self.act_dim);
        let mut log_prob = 0.0f64;
        for j in 0..self.act_dim {
            let eps: f64 = rng.sample(StandardNormal);
            let (m, ls) = (mean[[0, j]] as f64, log_std[[0, j]] as f64);
            let u = m + ls.exp() * eps;
            log_prob += -0.5 * eps * eps - ls - HALF_LN_2PI - squash_log_det(u);
            raw.push(u as f32);
        }
        let action = raw.iter().map(|u| u.tanh_act()).collect();
        Ok(PolicySample {
            raw,
            action,
            log_prob: log_prob as f32,
        })
    }

    /// Records mean and clamped log-std (both n x act_dim) on a tape.
    pub fn distribution_on_tape<T: Scalar, U: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<U>,
        obs: Var,
    ) -> Result<(Var, Var), NnError> {
        let out = self.net.forward(tape, store, obs)?;
        let d = self.act_dim;
        let n = tape.value(obs).nrows();
        let (lo, hi) = (T::c(LOG_STD_MIN), T::c(LOG_STD_MAX));
        Ok(match self.log_std {
            LogStd::Shared(id) => {
                let row = tape.param(store, id);
                let row = tape.clamp(row, lo, hi);
                let ls = tape.broadcast_rows(row, n);
                (out, ls)
            }
            LogStd::FromNetwork => {
                let mean = tape.slice_cols(out, 0, d);
                let raw = tape.slice_cols(out, d, 2 * d);
                (mean, tape.clamp(raw, lo, hi))
            }
        })
    }
}

fn layer_sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut sizes = vec![input];
    sizes.extend_from_slice(hidden);
    sizes.push(output);
    sizes
}

/// `ln(1 - tanh(u)^2)` computed as `2 (ln 2 - u - softplus(-2u))`.
pub fn squash_log_det(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

/// Log density (per row, n x 1) of the fixed pre-squash sample `raw` under the
/// squashed Gaussian `(mean, log_std)`.
pub fn log_prob_on_tape<T: Scalar>(tape: &mut Tape<T>, mean: Var, log_std: Var, raw: &Array2<T>) -> Var {
    let u = tape.constant(raw.clone());
    let diff = tape.sub(u, mean);
    let neg_ls = tape.neg(log_std);
    let inv_std = tape.exp(neg_ls);
    let z = tape.mul(diff, inv_std);
    let z2 = tape.square(z);
    let quad = tape.scale(z2, T::c(-0.5));
    let per_dim = tape.sub(quad, log_std);
    let per_dim = tape.add_scalar(per_dim, T::c(-HALF_LN_2PI));
    let gauss = tape.sum_cols(per_dim);
    let corr: Array2<T> = raw
        .mapv(|u| T::c(squash_log_det(u.to_f64().unwrap())))
        .sum_axis(Axis(1))
        .insert_axis(Axis(1));
    let corr = tape.constant(corr);
    tape.sub(gauss, corr)
}

/// Reparameterized draw `u = mean + exp(log_std) * eps`. Returns the squashed
/// action `tanh(u)` (n x d) and its log density (n x 1), both differentiable.
pub fn rsample_on_tape<T: Scalar>(tape: &mut Tape<T>, mean: Var, log_std: Var, eps: &Array2<T>) -> (Var, Var) {
    let e = tape.constant(eps.clone());
    let std = tape.exp(log_std);
    let noise = tape.mul(std, e);
    let u = tape.add(mean, noise);
    let action = tape.tanh(u);
    // log N(u) = -eps^2/2 - log_std - ln(2 pi)/2 with eps fixed
    let e2 = eps.mapv(|x| T::c(-0.5) * x * x - T::c(HALF_LN_2PI));
    let e2 = tape.constant(e2);
    let per_dim = tape.sub(e2, log_std);
    // ln(1 - tanh^2 u) = 2 (ln 2 - u - softplus(-2u))
    let m2u = tape.scale(u, T::c(-2.0));
    let sp = tape.softplus(m2u);
    let u_plus_sp = tape.add(u, sp);
    let ld = tape.scale(u_plus_sp, T::c(-2.0));
    let ld = tape.add_scalar(ld, T::c(2.0 * std::f64::consts::LN_2));
    let per_dim = tape.sub(per_dim, ld);
    let log_prob = tape.sum_cols(per_dim);
    (action, log_prob)
}

/// Entropy of the unsquashed diagonal Gaussian, per row (n x 1).
pub fn gaussian_entropy_on_tape<T: Scalar>(tape: &mut Tape<T>, log_std: Var) -> Var {
    let h = tape.add_scalar(log_std, T::c(HALF_LN_2PI + 0.5));
    tape.sum_cols(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn policy_with(mean_bias: f32, log_std: f32) -> (GaussianPolicy, ParamStore<f32>) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let p = GaussianPolicy::state_independent(&mut store, 2, &[4], 1, log_std, &mut rng).unwrap();
        let ids = p.net.param_ids();
        for id in &ids {
            store.get_mut(*id).values.fill(0.0);
        }
        store.get_mut(*ids.last().unwrap()).values.fill(mean_bias);
        (p, store)
    }

    #[test]
    fn vanishing_std_gives_squashed_mean() {
        let (p, store) = policy_with(0.7, -20.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = p.sample(&store, &[0.1, 0.2], &mut rng).unwrap();
        assert!((s.action[0] - 0.7f32.tanh()).abs() < 1e-6);
        assert!((p.mean_action(&store, &[0.1, 0.2]).unwrap()[0] - 0.7f32.tanh()).abs() < 1e-6);
    }

    #[test]
    fn actions_stay_in_box() {
        let (p, store) = policy_with(3.0, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let s = p.sample(&store, &[0.0, 0.0], &mut rng).unwrap();
            assert!(s.action[0].abs() <= 1.0);
        }
    }

    #[test]
    fn symmetric_head_has_zero_mean_action() {
        let (p, store) = policy_with(0.0, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let mut acc = 0.0f64;
        for _ in 0..n {
            acc += p.sample(&store, &[0.0, 0.0], &mut rng).unwrap().action[0] as f64;
        }
        assert!((acc / n as f64).abs() < 0.01);
    }

    #[test]
    fn monte_carlo_log_prob_matches_negative_entropy() {
        // Oracle: H = H_gauss + E[ln(1 - tanh(u)^2)], expectation by
        // trapezoidal quadrature over the Gaussian density.
        let (mu, ls) = (0.4f64, -0.3f64);
        let sigma = ls.exp();
        let h_gauss = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln() + ls;
        let (lo, hi, steps) = (mu - 12.0 * sigma, mu + 12.0 * sigma, 200_000);
        let h = (hi - lo) / steps as f64;
        let mut expect = 0.0;
        for k in 0..=steps {
            let u = lo + k as f64 * h;
            let z = (u - mu) / sigma;
            let dens = (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
            let w = if k == 0 || k == steps { 0.5 } else { 1.0 };
            expect += w * h * dens * (1.0 - u.tanh().powi(2)).ln();
        }
        let entropy = h_gauss + expect;

        let (p, store) = policy_with(mu as f32, ls as f32);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 100_000;
        let mut acc = 0.0f64;
        for _ in 0..n {
            acc += p.sample(&store, &[0.0, 0.0], &mut rng).unwrap().log_prob as f64;
        }
        let mc = acc / n as f64;
        assert!(((mc + entropy) / entropy).abs() < 0.01, "mc {mc} entropy {entropy}");
    }

    #[test]
    fn tape_log_prob_matches_sampler() {
        let (p, store) = policy_with(0.3, -0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = p.sample(&store, &[0.5, -0.5], &mut rng).unwrap();
        let mut tape = Tape::<f64>::new();
        let obs = tape.constant(Array2::from_shape_vec((1, 2), vec![0.5, -0.5]).unwrap());
        let (m, l) = p.distribution_on_tape(&mut tape, &store, obs).unwrap();
        let raw = Array2::from_shape_vec((1, 1), vec![s.raw[0] as f64]).unwrap();
        let lp = log_prob_on_tape(&mut tape, m, l, &raw);
        assert!((tape.scalar(lp) - s.log_prob as f64).abs() < 1e-4);
    }

    #[test]
    fn rsample_log_prob_matches_explicit_density() {
        let mut tape = Tape::<f64>::new();
        let m = tape.constant(Array2::from_elem((1, 1), 0.2));
        let l = tape.constant(Array2::from_elem((1, 1), -0.4));
        let eps = Array2::from_elem((1, 1), 0.9);
        let (a, lp) = rsample_on_tape(&mut tape, m, l, &eps);
        let u = 0.2 + (-0.4f64).exp() * 0.9;
        assert!((tape.scalar(a) - u.tanh()).abs() < 1e-14);
        let expected = -0.5 * 0.81 - (-0.4) - HALF_LN_2PI - (1.0 - u.tanh().powi(2)).ln();
        assert!((tape.scalar(lp) - expected).abs() < 1e-12);
    }
}
