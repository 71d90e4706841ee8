//! Risk-averse actor-critic on top of the SAC machinery: a critic
//! conditioned on the percentile `tau`, trained by quantile regression, and
//! an actor that maximizes the Monte Carlo CVaR of that critic at a fixed
//! level.

use ndarray::{concatenate, Array2, Axis};
use perturbrl_nn::policy::rsample_on_tape;
use perturbrl_nn::{Adam, AdamConfig, GaussianPolicy, Mlp, NnError, Objective, ParamId, ParamStore, Scalar, Tape, Var};
use rand::Rng as _;
use rand_distr::Open01;

use super::cvar::sample_taus;
use super::sac::{cat, critic_sizes, critic_step, infer, run_off_policy, soft_td_target, OffPolicy, OffPolicyCore, SacConfig};
use super::{ActorSnapshot, Agent, AgentKind, TrainLoop};
use crate::env::TaskKind;
use crate::error::{config, Result};
use crate::rng::{substream, tag, Rng};

#[derive(Clone, Debug, PartialEq)]
pub struct RaacConfig {
    /// CVaR level optimized by the actor.
    pub alpha: f64,
    /// Percentile samples per state for the actor's CVaR estimate.
    pub actor_quantiles: usize,
    /// Percentile samples per transition on each side of the TD loss.
    pub critic_quantiles: usize,
}

impl Default for RaacConfig {
    fn default() -> Self {
        Self { alpha: 0.3, actor_quantiles: 32, critic_quantiles: 8 }
    }
}

impl RaacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(config("raac.alpha must lie in (0, 1]"));
        }
        if self.actor_quantiles == 0 || self.critic_quantiles == 0 {
            return Err(config("raac quantile counts must be >= 1"));
        }
        Ok(())
    }
}

fn with_tau(x: &Array2<f64>, tau: &[f64]) -> Array2<f64> {
    let t = Array2::from_shape_fn((x.nrows(), 1), |(i, _)| tau[i]);
    concatenate(Axis(1), &[x.view(), t.view()]).expect("row counts match")
}

/// Pairwise quantile regression loss. Column `i` of `taus` is the percentile
/// fed to the critic for prediction `i`; `targets` holds the sampled TD
/// targets of each row.
pub struct QuantileLoss<'a> {
    pub net: &'a Mlp,
    /// Rows of `obs ++ action`.
    pub input: &'a Array2<f64>,
    pub taus: &'a Array2<f64>,
    pub targets: &'a Array2<f64>,
}

impl Objective for QuantileLoss<'_> {
    fn loss<T: Scalar>(&self, tape: &mut Tape<T>, p: &ParamStore<T>) -> std::result::Result<Var, NnError> {
        let (n, m) = self.targets.dim();
        let y = tape.constant(self.targets.mapv(T::c));
        let mut total: Option<Var> = None;
        for i in 0..self.taus.ncols() {
            let col = self.taus.column(i).to_vec();
            let x = tape.constant(with_tau(self.input, &col).mapv(T::c));
            let z = self.net.forward(tape, p, x)?;
            let z = tape.broadcast_cols(z, m);
            let u = tape.sub(y, z);
            // tau - 1{u < 0} is piecewise constant in the parameters
            let w = {
                let uv = tape.value(u);
                Array2::from_shape_fn((n, m), |(r, c)| {
                    let t = T::c(col[r]);
                    if uv[[r, c]] < T::zero() {
                        t - T::one()
                    } else {
                        t
                    }
                })
            };
            let w = tape.constant(w);
            let l = tape.mul(u, w);
            let l = tape.mean(l);
            total = Some(match total {
                None => l,
                Some(t) => tape.add(t, l),
            });
        }
        let total = total.ok_or_else(|| NnError::Shape("no quantile columns".into()))?;
        Ok(tape.scale(total, T::c(1.0 / self.taus.ncols() as f64)))
    }
}

/// `mean(temperature logp - CVaR)` where CVaR averages the frozen critic over
/// the percentile columns of `taus`, at reparameterized actions.
pub struct RaacActorLoss<'a> {
    pub policy: &'a GaussianPolicy,
    pub net: &'a Mlp,
    pub critic_store: &'a ParamStore<f32>,
    pub obs: &'a Array2<f64>,
    pub eps: &'a Array2<f64>,
    pub taus: &'a Array2<f64>,
    pub temperature: f64,
}

impl Objective for RaacActorLoss<'_> {
    fn loss<T: Scalar>(&self, tape: &mut Tape<T>, p: &ParamStore<T>) -> std::result::Result<Var, NnError> {
        let obs = tape.constant(self.obs.mapv(T::c));
        let (mean, log_std) = self.policy.distribution_on_tape(tape, p, obs)?;
        let (a, lp) = rsample_on_tape(tape, mean, log_std, &self.eps.mapv(T::c));
        let k = self.taus.ncols();
        let mut sum: Option<Var> = None;
        for j in 0..k {
            let t = tape.constant(self.taus.column(j).to_owned().insert_axis(Axis(1)).mapv(T::c));
            let x = tape.concat_cols(&[obs, a, t]);
            let z = self.net.forward_frozen(tape, self.critic_store, x)?;
            sum = Some(match sum {
                None => z,
                Some(s) => tape.add(s, z),
            });
        }
        let sum = sum.ok_or_else(|| NnError::Shape("no percentile samples".into()))?;
        let cvar = tape.scale(sum, T::c(1.0 / k as f64));
        let ent = tape.scale(lp, T::c(self.temperature));
        let t = tape.sub(ent, cvar);
        Ok(tape.mean(t))
    }
}

fn open_unit(rng: &mut Rng, shape: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || rng.sample(Open01))
}

pub struct Raac {
    pub(crate) core: OffPolicyCore,
    pub raac: RaacConfig,
    pub critic_store: ParamStore<f32>,
    pub target_store: ParamStore<f32>,
    pub net: Mlp,
    critic_adam: Adam,
    tau_rng: Rng,
}

impl Raac {
    pub fn new(
        task: TaskKind,
        obs_dim: usize,
        act_dim: usize,
        hidden: &[usize],
        cfg: SacConfig,
        raac: RaacConfig,
        seed: u64,
    ) -> Result<Self> {
        raac.validate()?;
        let mut init = substream(seed, &[tag("raac-init")]);
        let core = OffPolicyCore::new(AgentKind::Raac, task, obs_dim, act_dim, hidden, cfg.clone(), seed, &mut init)?;
        let mut critic_store = ParamStore::new();
        let net = Mlp::new(&mut critic_store, &critic_sizes(obs_dim + act_dim + 1, hidden, 1), 1.0, &mut init)?;
        let ids = (0..critic_store.len()).map(ParamId).collect();
        let critic_adam = Adam::new(&critic_store, ids, AdamConfig::with_lr(cfg.lr));
        Ok(Self {
            core,
            raac,
            target_store: critic_store.clone(),
            critic_store,
            net,
            critic_adam,
            tau_rng: substream(seed, &[tag("raac-tau")]),
        })
    }

    /// Monte Carlo CVaR of the online critic at one state-action pair.
    pub fn cvar(&mut self, obs: &[f64], action: &[f64], k: usize) -> Result<f64> {
        let taus = sample_taus(self.raac.alpha, k, &mut self.tau_rng)?;
        let row: Vec<f64> = obs.iter().chain(action).copied().collect();
        let x = Array2::from_shape_fn((k, row.len()), |(_, j)| row[j]);
        let z = infer(&self.net, &self.critic_store, &with_tau(&x, &taus))?;
        Ok(z.iter().sum::<f64>() / k as f64)
    }
}

impl OffPolicy for Raac {
    fn core(&mut self) -> &mut OffPolicyCore {
        &mut self.core
    }

    fn update(&mut self) -> Result<()> {
        let b = self.core.sample_batch();
        let n = b.reward.len();
        let nq = self.raac.critic_quantiles;
        let temp = self.core.alpha();
        let gamma = self.core.cfg.gamma;

        let next = self.core.sample_actions(&b.next_obs)?;
        let next_in = cat(&b.next_obs, &next.act);
        let tau_next = open_unit(&mut self.tau_rng, (n, nq));
        let mut targets = Array2::zeros((n, nq));
        for j in 0..nq {
            let col = tau_next.column(j).to_vec();
            let z = infer(&self.net, &self.target_store, &with_tau(&next_in, &col))?;
            for i in 0..n {
                targets[[i, j]] = soft_td_target(b.reward[i], b.terminated[i], z[i], next.logp[i], temp, gamma);
            }
        }
        let taus = open_unit(&mut self.tau_rng, (n, nq));
        let input = cat(&b.obs, &b.act);
        let closs = QuantileLoss { net: &self.net, input: &input, taus: &taus, targets: &targets };
        critic_step(&closs, &mut self.critic_store, &mut self.critic_adam, "raac critic")?;

        let eps = self.core.noise(n);
        let k = self.raac.actor_quantiles;
        let flat = sample_taus(self.raac.alpha, n * k, &mut self.tau_rng)?;
        let actor_taus = Array2::from_shape_vec((n, k), flat).expect("n * k samples");
        let policy = self.core.policy.clone();
        let aloss = RaacActorLoss {
            policy: &policy,
            net: &self.net,
            critic_store: &self.critic_store,
            obs: &b.obs,
            eps: &eps,
            taus: &actor_taus,
            temperature: temp,
        };
        self.core.actor_step(&aloss)?;
        let fresh = self.core.sample_actions(&b.obs)?;
        self.core.alpha_step(&fresh.logp)?;
        self.target_store.polyak_from(&self.critic_store, self.core.cfg.tau as f32);
        Ok(())
    }
}

impl Agent for Raac {
    fn kind(&self) -> AgentKind {
        AgentKind::Raac
    }

    fn train(&mut self, ctx: &mut TrainLoop) -> Result<()> {
        run_off_policy(self, ctx)
    }

    fn snapshot(&self) -> Result<ActorSnapshot> {
        self.core.snapshot(
            Vec::new(),
            vec![
                ("alpha".into(), self.raac.alpha.to_string()),
                ("actor_quantiles".into(), self.raac.actor_quantiles.to_string()),
                ("critic_quantiles".into(), self.raac.critic_quantiles.to_string()),
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

    fn small(raac: RaacConfig) -> Raac {
        let cfg = SacConfig { batch: 16, warmup: 40, ..Default::default() };
        Raac::new(TaskKind::CartPole, 4, 1, &[8, 8], cfg, raac, 8).unwrap()
    }

    fn toy(n: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, cols), |(i, j)| ((i * cols + j) as f64 * 0.53).sin())
    }

    #[test]
    fn critic_gradient_passes_finite_differences() {
        let r = small(RaacConfig::default());
        let input = toy(10, 5);
        let taus = toy(10, 3).mapv(|v| 0.5 + 0.45 * v);
        // targets far from the predictions keep residuals away from the kink
        let targets = toy(10, 4).mapv(|v| 3.0 * v.signum() + v);
        let obj = QuantileLoss { net: &r.net, input: &input, taus: &taus, targets: &targets };
        let rep = grad_check(&obj, &r.critic_store, GradCheckConfig::default(), &mut substream(0, &[])).unwrap();
        assert!(rep.checked >= 64);
        assert!(rep.max_rel_error <= 1e-4, "{rep:?}");
    }

    #[test]
    fn actor_gradient_passes_finite_differences() {
        let mut r = small(RaacConfig::default());
        for p in r.core.store.iter_mut() {
            p.values.mapv_inplace(|v| v * 2.0 + 0.02);
        }
        let obs = toy(8, 4);
        let eps = toy(8, 1);
        let taus = toy(8, 5).mapv(|v| 0.15 + 0.1 * v);
        let obj = RaacActorLoss {
            policy: &r.core.policy,
            net: &r.net,
            critic_store: &r.critic_store,
            obs: &obs,
            eps: &eps,
            taus: &taus,
            temperature: 0.2,
        };
        let rep = grad_check(&obj, &r.core.store, GradCheckConfig::default(), &mut substream(0, &[])).unwrap();
        assert!(rep.checked >= 64);
        assert!(rep.max_rel_error <= 1e-4, "{rep:?}");
    }

    /// At level 1 the CVaR estimate is the average of the critic over all
    /// percentiles, i.e. the mean-critic value.
    #[test]
    fn unit_level_cvar_is_mean_over_percentiles() {
        let mut r = small(RaacConfig { alpha: 1.0, ..Default::default() });
        for p in r.critic_store.iter_mut() {
            p.values.mapv_inplace(|v| v * 3.0);
        }
        let (obs, act) = ([0.1, -0.2, 0.3, 0.05], [0.4]);
        let est = r.cvar(&obs, &act, 20_000).unwrap();
        let m = 2000;
        let grid: Vec<f64> = (0..m).map(|i| (i as f64 + 0.5) / m as f64).collect();
        let row: Vec<f64> = obs.iter().chain(&act).copied().collect();
        let x = Array2::from_shape_fn((m, 5), |(_, j)| row[j]);
        let z = infer(&r.net, &r.critic_store, &with_tau(&x, &grid)).unwrap();
        let mean = z.iter().sum::<f64>() / m as f64;
        let spread = z.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
        assert!((est - mean).abs() <= 0.02 * spread.max(1e-3), "{est} vs {mean}");
    }

    #[test]
    fn short_run_is_finite() {
        let mut r = small(RaacConfig { actor_quantiles: 4, critic_quantiles: 4, ..Default::default() });
        let env = Env::new(EnvConfig::new(TaskKind::CartPole)).unwrap();
        let mut ctx = TrainLoop::new(env, 1, 100);
        r.train(&mut ctx).unwrap();
        assert!(r.critic_store.all_finite() && r.core.store.all_finite());
    }
}
