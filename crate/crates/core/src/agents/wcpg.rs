//! Worst-case policy gradient on top of the SAC machinery.
//!
//! The return of `(s, a)` is modelled as `N(Q, var)` with two critic heads
//! (variance through a softplus). The actor is conditioned on the risk level
//! `alpha`, redrawn uniformly each training episode, and follows the
//! likelihood-ratio gradient weighted by the Gaussian CVaR.

use ndarray::Array2;
use perturbrl_nn::policy::log_prob_on_tape;
use perturbrl_nn::tape::softplus;
use perturbrl_nn::{Adam, AdamConfig, GaussianPolicy, Mlp, NnError, Objective, ParamId, ParamStore, Scalar, Tape, Var};
use rand::Rng as _;

use super::cvar::{gaussian_cvar, variance_target};
use super::sac::{cat, critic_sizes, critic_step, infer, run_off_policy, soft_td_target, OffPolicy, OffPolicyCore, SacConfig};
use super::{ActorSnapshot, Agent, AgentKind, TrainLoop};
use crate::env::TaskKind;
use crate::error::{config, Result};
use crate::rng::{substream, tag, Rng};

#[derive(Clone, Debug, PartialEq)]
pub struct WcpgConfig {
    /// Training risk levels are drawn from `U(alpha_min, alpha_max)`.
    pub alpha_min: f64,
    pub alpha_max: f64,
    /// Risk level fed to the actor at evaluation; midpoint of the range when
    /// unset.
    pub eval_alpha: Option<f64>,
}

impl Default for WcpgConfig {
    fn default() -> Self {
        Self { alpha_min: 0.1, alpha_max: 1.0, eval_alpha: None }
    }
}

impl WcpgConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |a: f64| a > 0.0 && a <= 1.0;
        if !(ok(self.alpha_min) && ok(self.alpha_max) && self.alpha_min <= self.alpha_max) {
            return Err(config("wcpg alpha range must satisfy 0 < min <= max <= 1"));
        }
        if let Some(a) = self.eval_alpha {
            if !ok(a) {
                return Err(config("wcpg.eval_alpha must lie in (0, 1]"));
            }
        }
        Ok(())
    }

    /// A single fixed risk level.
    pub fn fixed(alpha: f64) -> Self {
        Self { alpha_min: alpha, alpha_max: alpha, eval_alpha: Some(alpha) }
    }

    pub fn eval_alpha(&self) -> f64 {
        self.eval_alpha.unwrap_or(0.5 * (self.alpha_min + self.alpha_max))
    }
}

/// Squared errors of the mean head against `y_q` and of the softplus
/// variance head against `y_var`.
pub struct WcpgCriticLoss<'a> {
    pub q: &'a Mlp,
    pub var: &'a Mlp,
    pub input: &'a Array2<f64>,
    pub y_q: &'a Array2<f64>,
    pub y_var: &'a Array2<f64>,
}

impl Objective for WcpgCriticLoss<'_> {
    fn loss<T: Scalar>(&self, tape: &mut Tape<T>, p: &ParamStore<T>) -> std::result::Result<Var, NnError> {
        let x = tape.constant(self.input.mapv(T::c));
        let q = self.q.forward(tape, p, x)?;
        let yq = tape.constant(self.y_q.mapv(T::c));
        let e = tape.sub(q, yq);
        let e = tape.square(e);
        let lq = tape.mean(e);
        let v = self.var.forward(tape, p, x)?;
        let v = tape.softplus(v);
        let yv = tape.constant(self.y_var.mapv(T::c));
        let e = tape.sub(v, yv);
        let e = tape.square(e);
        let lv = tape.mean(e);
        Ok(tape.add(lq, lv))
    }
}

/// `-mean(log pi(raw | obs) w)` with constant weights `w`.
pub struct ScoreFunctionLoss<'a> {
    pub policy: &'a GaussianPolicy,
    pub obs: &'a Array2<f64>,
    pub raw: &'a Array2<f64>,
    pub weights: &'a Array2<f64>,
}

impl Objective for ScoreFunctionLoss<'_> {
    fn loss<T: Scalar>(&self, tape: &mut Tape<T>, p: &ParamStore<T>) -> std::result::Result<Var, NnError> {
        let obs = tape.constant(self.obs.mapv(T::c));
        let (mean, log_std) = self.policy.distribution_on_tape(tape, p, obs)?;
        let lp = log_prob_on_tape(tape, mean, log_std, &self.raw.mapv(T::c));
        let w = tape.constant(self.weights.mapv(T::c));
        let t = tape.mul(lp, w);
        let m = tape.mean(t);
        Ok(tape.neg(m))
    }
}

/// Per-sample actor weights `Gamma(q, var, alpha) - temperature * logp`,
/// centred on their batch mean.
pub fn actor_weights(q: &[f64], var: &[f64], alpha: &[f64], logp: &[f64], temperature: f64) -> Result<Vec<f64>> {
    let mut w = Vec::with_capacity(q.len());
    for i in 0..q.len() {
        w.push(gaussian_cvar(q[i], var[i], alpha[i])? - temperature * logp[i]);
    }
    let m = w.iter().sum::<f64>() / w.len().max(1) as f64;
    Ok(w.into_iter().map(|x| x - m).collect())
}

pub struct Wcpg {
    pub(crate) core: OffPolicyCore,
    pub wcpg: WcpgConfig,
    pub critic_store: ParamStore<f32>,
    pub target_store: ParamStore<f32>,
    pub q: Mlp,
    pub var: Mlp,
    critic_adam: Adam,
    risk_rng: Rng,
}

impl Wcpg {
    pub fn new(
        task: TaskKind,
        obs_dim: usize,
        act_dim: usize,
        hidden: &[usize],
        cfg: SacConfig,
        wcpg: WcpgConfig,
        seed: u64,
    ) -> Result<Self> {
        wcpg.validate()?;
        let mut init = substream(seed, &[tag("wcpg-init")]);
        let core = OffPolicyCore::new(AgentKind::Wcpg, task, obs_dim + 1, act_dim, hidden, cfg.clone(), seed, &mut init)?;
        let mut critic_store = ParamStore::new();
        let sizes = critic_sizes(obs_dim + 1 + act_dim, hidden, 1);
        let q = Mlp::new(&mut critic_store, &sizes, 1.0, &mut init)?;
        let var = Mlp::new(&mut critic_store, &sizes, 1.0, &mut init)?;
        let ids = (0..critic_store.len()).map(ParamId).collect();
        let critic_adam = Adam::new(&critic_store, ids, AdamConfig::with_lr(cfg.lr));
        Ok(Self {
            core,
            wcpg,
            target_store: critic_store.clone(),
            critic_store,
            q,
            var,
            critic_adam,
            risk_rng: substream(seed, &[tag("wcpg-risk")]),
        })
    }

    fn heads(&self, store: &ParamStore<f32>, x: &Array2<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
        let q = infer(&self.q, store, x)?;
        let v = infer(&self.var, store, x)?.into_iter().map(softplus).collect();
        Ok((q, v))
    }
}

impl OffPolicy for Wcpg {
    fn core(&mut self) -> &mut OffPolicyCore {
        &mut self.core
    }

    fn begin_episode(&mut self) {
        let (lo, hi) = (self.wcpg.alpha_min, self.wcpg.alpha_max);
        let a = if lo == hi { lo } else { self.risk_rng.random_range(lo..hi) };
        self.core.extra = vec![a];
    }

    fn update(&mut self) -> Result<()> {
        let b = self.core.sample_batch();
        let n = b.reward.len();
        let temp = self.core.alpha();
        let gamma = self.core.cfg.gamma;

        let next = self.core.sample_actions(&b.next_obs)?;
        let (qn, vn) = self.heads(&self.target_store, &cat(&b.next_obs, &next.act))?;
        let input = cat(&b.obs, &b.act);
        let (q_now, _) = self.heads(&self.critic_store, &input)?;
        let y_q = Array2::from_shape_fn((n, 1), |(i, _)| {
            soft_td_target(b.reward[i], b.terminated[i], qn[i], next.logp[i], temp, gamma)
        });
        let y_var = Array2::from_shape_fn((n, 1), |(i, _)| {
            variance_target(b.reward[i], b.terminated[i], qn[i], vn[i], q_now[i], gamma)
        });
        let closs = WcpgCriticLoss { q: &self.q, var: &self.var, input: &input, y_q: &y_q, y_var: &y_var };
        critic_step(&closs, &mut self.critic_store, &mut self.critic_adam, "wcpg critic")?;

        let fresh = self.core.sample_actions(&b.obs)?;
        let (q, v) = self.heads(&self.critic_store, &cat(&b.obs, &fresh.act))?;
        let risk: Vec<f64> = b.obs.column(b.obs.ncols() - 1).to_vec();
        let w = actor_weights(&q, &v, &risk, &fresh.logp, temp)?;
        let weights = Array2::from_shape_vec((n, 1), w).expect("one weight per row");
        let policy = self.core.policy.clone();
        let aloss = ScoreFunctionLoss { policy: &policy, obs: &b.obs, raw: &fresh.raw, weights: &weights };
        self.core.actor_step(&aloss)?;
        self.core.alpha_step(&fresh.logp)?;
        self.target_store.polyak_from(&self.critic_store, self.core.cfg.tau as f32);
        Ok(())
    }
}

impl Agent for Wcpg {
    fn kind(&self) -> AgentKind {
        AgentKind::Wcpg
    }

    fn train(&mut self, ctx: &mut TrainLoop) -> Result<()> {
        run_off_policy(self, ctx)
    }

    fn snapshot(&self) -> Result<ActorSnapshot> {
        let a = self.wcpg.eval_alpha();
        self.core.snapshot(
            vec![a],
            vec![
                ("alpha_min".into(), self.wcpg.alpha_min.to_string()),
                ("alpha_max".into(), self.wcpg.alpha_max.to_string()),
                ("eval_alpha".into(), a.to_string()),
            ],
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Env, EnvConfig};
    use crate::rng::substream;
    use perturbrl_nn::{grad_check, GradCheckConfig};

    fn small() -> Wcpg {
        Wcpg::new(TaskKind::CartPole, 4, 1, &[8, 8], SacConfig { batch: 16, warmup: 40, ..Default::default() }, WcpgConfig::default(), 6)
            .unwrap()
    }

    fn toy(n: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, cols), |(i, j)| ((i * cols + j) as f64 * 0.37).sin())
    }

    #[test]
    fn config_ranges() {
        assert!(WcpgConfig::default().validate().is_ok());
        assert!(WcpgConfig { alpha_min: 0.0, ..Default::default() }.validate().is_err());
        assert!(WcpgConfig { alpha_min: 0.8, alpha_max: 0.5, eval_alpha: None }.validate().is_err());
        assert_eq!(WcpgConfig::default().eval_alpha(), 0.55);
        assert_eq!(WcpgConfig::fixed(0.3).eval_alpha(), 0.3);
    }

    #[test]
    fn zero_variance_unit_alpha_weights_are_centred_values() {
        let q = [1.0, -2.0, 0.5, 3.0];
        let logp = [0.1, -0.3, 0.2, 0.0];
        let w = actor_weights(&q, &[0.0; 4], &[1.0; 4], &logp, 0.0).unwrap();
        let m = q.iter().sum::<f64>() / 4.0;
        for (x, qi) in w.iter().zip(q) {
            assert!((x - (qi - m)).abs() < 1e-12);
        }
    }

    #[test]
    fn critic_gradient_passes_finite_differences() {
        let w = small();
        let input = toy(12, 6);
        let y_q = toy(12, 1);
        let y_var = toy(12, 1).mapv(|v| v.abs());
        let obj = WcpgCriticLoss { q: &w.q, var: &w.var, input: &input, y_q: &y_q, y_var: &y_var };
        let r = grad_check(&obj, &w.critic_store, GradCheckConfig::default(), &mut substream(0, &[])).unwrap();
        assert!(r.checked >= 64);
        assert!(r.max_rel_error <= 1e-4, "{r:?}");
    }

    #[test]
    fn actor_gradient_passes_finite_differences() {
        let mut w = small();
        for p in w.core.store.iter_mut() {
            p.values.mapv_inplace(|v| v * 2.0 + 0.03);
        }
        let obs = toy(12, 5);
        let raw = toy(12, 1).mapv(|v| 0.8 * v);
        let weights = toy(12, 1).mapv(|v| v - 0.1);
        let obj = ScoreFunctionLoss { policy: &w.core.policy, obs: &obs, raw: &raw, weights: &weights };
        let r = grad_check(&obj, &w.core.store, GradCheckConfig::default(), &mut substream(0, &[])).unwrap();
        assert!(r.checked >= 64);
        assert!(r.max_rel_error <= 1e-4, "{r:?}");
    }

    #[test]
    fn variance_head_is_non_negative() {
        let w = small();
        let (_, v) = w.heads(&w.critic_store, &toy(50, 6).mapv(|x| 30.0 * x)).unwrap();
        assert!(v.iter().all(|x| *x >= 0.0));
    }

    #[test]
    fn risk_level_is_redrawn_per_episode_and_fixed_for_eval() {
        let mut w = small();
        let env = Env::new(EnvConfig::new(TaskKind::CartPole)).unwrap();
        let mut ctx = TrainLoop::new(env, 2, 120);
        w.train(&mut ctx).unwrap();
        let mut seen: Vec<f32> = (0..w.core.buffer.len()).map(|i| *w.core.buffer.get(i).obs.last().unwrap()).collect();
        assert!(seen.iter().all(|a| (0.1..=1.0).contains(a)));
        seen.dedup();
        assert!(seen.len() >= 2, "one risk level per episode");
        let snap = w.snapshot().unwrap();
        assert_eq!(snap.extra_inputs, vec![0.55]);
        assert_eq!(snap.policy.net.input_dim(), 5);
    }
}
