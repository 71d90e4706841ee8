//! Soft actor-critic with twin critics, Polyak-averaged targets and an
//! automatically tuned entropy temperature. The actor/temperature/replay
//! machinery ([`OffPolicyCore`]) is shared with WCPG and RAAC.

use ndarray::{concatenate, Array2, Axis};
use perturbrl_nn::policy::{rsample_on_tape, squash_log_det};
use perturbrl_nn::{Adam, AdamConfig, GaussianPolicy, Mlp, NnError, Objective, ParamId, ParamStore, Scalar, Tape, Var};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::buffer::{ReplayBuffer, Transition};
use super::{check_finite, check_loss, ActorSnapshot, Agent, AgentKind, TrainLoop};
use crate::env::{AdversaryInput, TaskKind};
use crate::error::{config, Result};
use crate::rng::{substream, tag, Rng};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Clone, Debug, PartialEq)]
pub struct SacConfig {
    pub gamma: f64,
    pub tau: f64,
    pub lr: f64,
    pub batch: usize,
    pub capacity: usize,
    pub warmup: usize,
    pub updates_per_step: usize,
    pub init_alpha: f64,
    pub auto_alpha: bool,
    /// Defaults to `-act_dim`.
    pub target_entropy: Option<f64>,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            gamma: 0.98,
            tau: 0.005,
            lr: 3e-4,
            batch: 256,
            capacity: 1_000_000,
            warmup: 1000,
            updates_per_step: 1,
            init_alpha: 0.2,
            auto_alpha: true,
            target_entropy: None,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(config("sac.tau must lie in (0, 1]"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(config("sac.gamma must lie in (0, 1]"));
        }
        if self.batch == 0 || self.capacity < self.batch {
            return Err(config("sac.capacity must be >= sac.batch >= 1"));
        }
        if !(self.lr > 0.0 && self.init_alpha > 0.0) {
            return Err(config("sac.lr and sac.init_alpha must be positive"));
        }
        Ok(())
    }
}

/// Entropy-regularized TD target `r + gamma (1 - d) (q' - alpha logp')`.
pub fn soft_td_target(reward: f64, terminated: bool, q_next: f64, logp_next: f64, alpha: f64, gamma: f64) -> f64 {
    if terminated {
        reward
    } else {
        reward + gamma * (q_next - alpha * logp_next)
    }
}

pub(crate) fn critic_sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut s = vec![input];
    s.extend_from_slice(hidden);
    s.push(output);
    s
}

/// Sampled training batch in f64.
pub(crate) struct Batch {
    pub obs: Array2<f64>,
    pub act: Array2<f64>,
    pub reward: Vec<f64>,
    pub next_obs: Array2<f64>,
    pub terminated: Vec<bool>,
}

pub(crate) struct ActionBatch {
    pub act: Array2<f64>,
    pub raw: Array2<f64>,
    pub logp: Vec<f64>,
}

/// Actor, temperature and replay shared by the SAC family.
pub(crate) struct OffPolicyCore {
    pub kind: AgentKind,
    pub task: TaskKind,
    pub cfg: SacConfig,
    pub store: ParamStore<f32>,
    pub policy: GaussianPolicy,
    adam: Adam,
    log_alpha: ParamStore<f32>,
    alpha_adam: Adam,
    target_entropy: f64,
    pub buffer: ReplayBuffer,
    explore_rng: Rng,
    pub batch_rng: Rng,
    pub noise_rng: Rng,
    current_obs: Option<Vec<f64>>,
    /// Per-episode inputs appended to observations.
    pub extra: Vec<f64>,
}

impl OffPolicyCore {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        kind: AgentKind,
        task: TaskKind,
        in_dim: usize,
        act_dim: usize,
        hidden: &[usize],
        cfg: SacConfig,
        seed: u64,
        init: &mut Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let policy = GaussianPolicy::state_dependent(&mut store, in_dim, hidden, act_dim, init)?;
        let ids = (0..store.len()).map(ParamId).collect();
        let adam = Adam::new(&store, ids, AdamConfig::with_lr(cfg.lr));
        let mut log_alpha = ParamStore::new();
        log_alpha.filled(1, 1, cfg.init_alpha.ln() as f32);
        let alpha_adam = Adam::new(&log_alpha, vec![ParamId(0)], AdamConfig::with_lr(cfg.lr));
        Ok(Self {
            kind,
            task,
            target_entropy: cfg.target_entropy.unwrap_or(-(act_dim as f64)),
            buffer: ReplayBuffer::new(cfg.capacity),
            cfg,
            store,
            policy,
            adam,
            log_alpha,
            alpha_adam,
            explore_rng: substream(seed, &[tag("offpolicy-explore")]),
            batch_rng: substream(seed, &[tag("offpolicy-batch")]),
            noise_rng: substream(seed, &[tag("offpolicy-noise")]),
            current_obs: None,
            extra: Vec::new(),
        })
    }

    pub fn alpha(&self) -> f64 {
        f64::from(self.log_alpha.get(ParamId(0)).values[[0, 0]]).exp()
    }

    fn augment(&self, obs: &[f64]) -> Vec<f64> {
        obs.iter().chain(&self.extra).copied().collect()
    }

    /// Squashed actions, raw samples and log-densities for a batch, drawn
    /// with the noise stream.
    pub fn sample_actions(&mut self, obs: &Array2<f64>) -> Result<ActionBatch> {
        let (mean, log_std) = self.policy.distribution(&self.store, &obs.mapv(|v| v as f32))?;
        let (n, d) = mean.dim();
        let mut out = ActionBatch { act: Array2::zeros((n, d)), raw: Array2::zeros((n, d)), logp: vec![0.0; n] };
        for i in 0..n {
            for j in 0..d {
                let eps: f64 = StandardNormal.sample(&mut self.noise_rng);
                let (m, ls) = (f64::from(mean[[i, j]]), f64::from(log_std[[i, j]]));
                let u = m + ls.exp() * eps;
                out.raw[[i, j]] = u;
                out.act[[i, j]] = u.tanh();
                out.logp[i] += -0.5 * eps * eps - ls - HALF_LN_2PI - squash_log_det(u);
            }
        }
        Ok(out)
    }

    pub fn noise(&mut self, n: usize) -> Array2<f64> {
        let d = self.policy.act_dim;
        Array2::from_shape_simple_fn((n, d), || StandardNormal.sample(&mut self.noise_rng))
    }

    pub fn sample_batch(&mut self) -> Batch {
        let idx = self.buffer.sample_indices(self.cfg.batch, &mut self.batch_rng);
        let n = idx.len();
        let t0 = self.buffer.get(idx[0]);
        let (od, ad) = (t0.obs.len(), t0.action.len());
        let mut b = Batch {
            obs: Array2::zeros((n, od)),
            act: Array2::zeros((n, ad)),
            reward: Vec::with_capacity(n),
            next_obs: Array2::zeros((n, od)),
            terminated: Vec::with_capacity(n),
        };
        for (r, &i) in idx.iter().enumerate() {
            let t = self.buffer.get(i);
            for j in 0..od {
                b.obs[[r, j]] = f64::from(t.obs[j]);
                b.next_obs[[r, j]] = f64::from(t.next_obs[j]);
            }
            for j in 0..ad {
                b.act[[r, j]] = f64::from(t.action[j]);
            }
            b.reward.push(f64::from(t.reward));
            b.terminated.push(t.terminated);
        }
        b
    }

    /// One gradient step of the actor on `obj`.
    pub fn actor_step<O: Objective>(&mut self, obj: &O) -> Result<f32> {
        let mut tape = Tape::<f32>::new();
        let root = obj.loss(&mut tape, &self.store)?;
        let loss = tape.scalar(root);
        check_loss(loss, "actor")?;
        let grads = tape.backward(root)?.for_store(&self.store);
        self.adam.step(&mut self.store, &grads)?;
        check_finite(&self.store, "actor")?;
        Ok(loss)
    }

    /// Temperature step on `-log_alpha * (logp + target_entropy)`.
    pub fn alpha_step(&mut self, logp: &[f64]) -> Result<()> {
        if !self.cfg.auto_alpha || logp.is_empty() {
            return Ok(());
        }
        let g = -logp.iter().map(|l| l + self.target_entropy).sum::<f64>() / logp.len() as f64;
        let grad = Array2::from_elem((1, 1), g as f32);
        self.alpha_adam.step(&mut self.log_alpha, &[grad])?;
        Ok(())
    }

    pub fn snapshot(&self, eval_extra: Vec<f64>, hyper: Vec<(String, String)>) -> Result<ActorSnapshot> {
        let mut s = ActorSnapshot::extract(self.kind, self.task, &self.policy, &self.store)?;
        s.extra_inputs = eval_extra;
        s.hyper = hyper;
        s.hyper.extend([
            ("gamma".into(), self.cfg.gamma.to_string()),
            ("tau".into(), self.cfg.tau.to_string()),
            ("lr".into(), self.cfg.lr.to_string()),
            ("batch".into(), self.cfg.batch.to_string()),
        ]);
        Ok(s)
    }
}

/// Agents built on [`OffPolicyCore`].
pub(crate) trait OffPolicy: Agent {
    fn core(&mut self) -> &mut OffPolicyCore;
    /// Called before each training episode (e.g. to redraw a risk level).
    fn begin_episode(&mut self) {}
    fn update(&mut self) -> Result<()>;
}

/// Interaction loop: uniform exploration during warmup, then one (or more)
/// updates per environment step.
pub(crate) fn run_off_policy<A: OffPolicy>(agent: &mut A, ctx: &mut TrainLoop) -> Result<()> {
    while !ctx.exhausted() {
        let obs = match agent.core().current_obs.take() {
            Some(o) => o,
            None => {
                agent.begin_episode();
                let o = ctx.reset()?;
                agent.core().augment(&o)
            }
        };
        let core = agent.core();
        let action: Vec<f64> = if ctx.steps() < core.cfg.warmup {
            let d = core.policy.act_dim;
            (0..d).map(|_| core.explore_rng.random_range(-1.0..=1.0)).collect()
        } else {
            let x: Vec<f32> = obs.iter().map(|v| *v as f32).collect();
            let s = core.policy.sample(&core.store, &x, &mut core.explore_rng)?;
            s.action.iter().map(|a| f64::from(*a)).collect()
        };
        let step = ctx.step(&action, &AdversaryInput::default())?;
        let core = agent.core();
        let next = core.augment(&step.obs);
        core.buffer.push(Transition {
            obs: obs.iter().map(|v| *v as f32).collect(),
            action: action.iter().map(|v| *v as f32).collect(),
            reward: step.reward as f32,
            next_obs: next.iter().map(|v| *v as f32).collect(),
            terminated: step.terminated,
        });
        core.current_obs = if step.done() { None } else { Some(next) };
        if ctx.steps() >= core.cfg.warmup && core.buffer.len() >= core.cfg.batch {
            for _ in 0..core.cfg.updates_per_step {
                agent.update()?;
            }
        }
        if ctx.eval_due() {
            let snap = agent.snapshot()?;
            ctx.report(&snap)?;
        }
    }
    Ok(())
}

/// Mean squared error of both critics against a fixed target.
pub struct TwinCriticLoss<'a> {
    pub q1: &'a Mlp,
    pub q2: &'a Mlp,
    /// Rows of `obs ++ action`.
    pub input: &'a Array2<f64>,
    pub target: &'a Array2<f64>,
}

impl Objective for TwinCriticLoss<'_> {
    fn loss<T: Scalar>(&self, tape: &mut Tape<T>, p: &ParamStore<T>) -> std::result::Result<Var, NnError> {
        let x = tape.constant(self.input.mapv(T::c));
        let y = tape.constant(self.target.mapv(T::c));
        let mut total = None;
        for q in [self.q1, self.q2] {
            let v = q.forward(tape, p, x)?;
            let e = tape.sub(v, y);
            let e = tape.square(e);
            let m = tape.mean(e);
            total = Some(match total {
                None => m,
                Some(t) => tape.add(t, m),
            });
        }
        Ok(total.expect("two critics"))
    }
}

/// `mean(alpha logp - min(Q1, Q2))` over reparameterized actions; critic
/// weights are constants.
pub struct SacActorLoss<'a> {
    pub policy: &'a GaussianPolicy,
    pub q1: &'a Mlp,
    pub q2: &'a Mlp,
    pub critic_store: &'a ParamStore<f32>,
    pub obs: &'a Array2<f64>,
    pub eps: &'a Array2<f64>,
    pub alpha: f64,
}

impl Objective for SacActorLoss<'_> {
    fn loss<T: Scalar>(&self, tape: &mut Tape<T>, p: &ParamStore<T>) -> std::result::Result<Var, NnError> {
        let obs = tape.constant(self.obs.mapv(T::c));
        let (mean, log_std) = self.policy.distribution_on_tape(tape, p, obs)?;
        let (a, lp) = rsample_on_tape(tape, mean, log_std, &self.eps.mapv(T::c));
        let x = tape.concat_cols(&[obs, a]);
        let v1 = self.q1.forward_frozen(tape, self.critic_store, x)?;
        let v2 = self.q2.forward_frozen(tape, self.critic_store, x)?;
        let q = tape.minimum(v1, v2);
        let ent = tape.scale(lp, T::c(self.alpha));
        let t = tape.sub(ent, q);
        Ok(tape.mean(t))
    }
}

pub(crate) fn cat(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    concatenate(Axis(1), &[a.view(), b.view()]).expect("row counts match")
}

pub(crate) fn infer(net: &Mlp, store: &ParamStore<f32>, x: &Array2<f64>) -> Result<Vec<f64>> {
    let out = net.infer(store, &x.mapv(|v| v as f32))?;
    Ok(out.iter().map(|v| f64::from(*v)).collect())
}

pub(crate) fn critic_step<O: Objective>(obj: &O, store: &mut ParamStore<f32>, adam: &mut Adam, what: &str) -> Result<f32> {
    let mut tape = Tape::<f32>::new();
    let root = obj.loss(&mut tape, store)?;
    let loss = tape.scalar(root);
    check_loss(loss, what)?;
    let grads = tape.backward(root)?.for_store(store);
    adam.step(store, &grads)?;
    check_finite(store, what)?;
    Ok(loss)
}

pub struct Sac {
    pub(crate) core: OffPolicyCore,
    pub critic_store: ParamStore<f32>,
    pub target_store: ParamStore<f32>,
    pub q1: Mlp,
    pub q2: Mlp,
    critic_adam: Adam,
}

impl Sac {
    pub fn new(task: TaskKind, obs_dim: usize, act_dim: usize, hidden: &[usize], cfg: SacConfig, seed: u64) -> Result<Self> {
        let mut init = substream(seed, &[tag("sac-init")]);
        let core = OffPolicyCore::new(AgentKind::Sac, task, obs_dim, act_dim, hidden, cfg.clone(), seed, &mut init)?;
        let mut critic_store = ParamStore::new();
        let sizes = critic_sizes(obs_dim + act_dim, hidden, 1);
        let q1 = Mlp::new(&mut critic_store, &sizes, 1.0, &mut init)?;
        let q2 = Mlp::new(&mut critic_store, &sizes, 1.0, &mut init)?;
        let ids = (0..critic_store.len()).map(ParamId).collect();
        let critic_adam = Adam::new(&critic_store, ids, AdamConfig::with_lr(cfg.lr));
        Ok(Self {
            core,
            target_store: critic_store.clone(),
            critic_store,
            q1,
            q2,
            critic_adam,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.core.alpha()
    }
}

impl OffPolicy for Sac {
    fn core(&mut self) -> &mut OffPolicyCore {
        &mut self.core
    }

    fn update(&mut self) -> Result<()> {
        let b = self.core.sample_batch();
        let n = b.reward.len();
        let alpha = self.core.alpha();
        let gamma = self.core.cfg.gamma;

        let next = self.core.sample_actions(&b.next_obs)?;
        let next_in = cat(&b.next_obs, &next.act);
        let t1 = infer(&self.q1, &self.target_store, &next_in)?;
        let t2 = infer(&self.q2, &self.target_store, &next_in)?;
        let target = Array2::from_shape_fn((n, 1), |(i, _)| {
            soft_td_target(b.reward[i], b.terminated[i], t1[i].min(t2[i]), next.logp[i], alpha, gamma)
        });
        let input = cat(&b.obs, &b.act);
        let closs = TwinCriticLoss { q1: &self.q1, q2: &self.q2, input: &input, target: &target };
        critic_step(&closs, &mut self.critic_store, &mut self.critic_adam, "sac critic")?;

        let eps = self.core.noise(n);
        let policy = self.core.policy.clone();
        let aloss = SacActorLoss {
            policy: &policy,
            q1: &self.q1,
            q2: &self.q2,
            critic_store: &self.critic_store,
            obs: &b.obs,
            eps: &eps,
            alpha,
        };
        self.core.actor_step(&aloss)?;

        let fresh = self.core.sample_actions(&b.obs)?;
        self.core.alpha_step(&fresh.logp)?;
        self.target_store.polyak_from(&self.critic_store, self.core.cfg.tau as f32);
        Ok(())
    }
}

impl Agent for Sac {
    fn kind(&self) -> AgentKind {
        AgentKind::Sac
    }

    fn train(&mut self, ctx: &mut TrainLoop) -> Result<()> {
        run_off_policy(self, ctx)
    }

    fn snapshot(&self) -> Result<ActorSnapshot> {
        self.core.snapshot(Vec::new(), vec![("alpha".into(), self.core.alpha().to_string())])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Env, EnvConfig};
    use perturbrl_nn::{grad_check, GradCheckConfig};

    fn small(cfg: SacConfig) -> Sac {
        Sac::new(TaskKind::CartPole, 4, 1, &[8, 8], cfg, 2).unwrap()
    }

    #[test]
    fn zero_temperature_target_is_plain_td() {
        assert_eq!(soft_td_target(1.0, false, 2.0, -3.7, 0.0, 0.9), 1.0 + 0.9 * 2.0);
        assert_eq!(soft_td_target(1.0, true, 2.0, -3.7, 0.5, 0.9), 1.0);
    }

    #[test]
    fn unit_tau_copies_online_critics() {
        let mut sac = small(SacConfig::default());
        for p in sac.critic_store.iter_mut() {
            p.values.mapv_inplace(|v| v + 1.0);
        }
        sac.target_store.polyak_from(&sac.critic_store, 1.0);
        assert_eq!(sac.target_store, sac.critic_store);
    }

    fn toy(n: usize) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let obs = Array2::from_shape_fn((n, 4), |(i, j)| ((i * 4 + j) as f64 * 0.7).sin());
        let act = Array2::from_shape_fn((n, 1), |(i, _)| (i as f64 * 0.3).cos() * 0.8);
        let y = Array2::from_shape_fn((n, 1), |(i, _)| i as f64 * 0.1);
        (obs, act, y)
    }

    #[test]
    fn critic_gradient_passes_finite_differences() {
        let sac = small(SacConfig::default());
        let (obs, act, y) = toy(10);
        let input = cat(&obs, &act);
        let obj = TwinCriticLoss { q1: &sac.q1, q2: &sac.q2, input: &input, target: &y };
        let r = grad_check(&obj, &sac.critic_store, GradCheckConfig::default(), &mut substream(0, &[])).unwrap();
        assert!(r.max_rel_error <= 1e-4, "{r:?}");
    }

    #[test]
    fn actor_gradient_passes_finite_differences() {
        let mut sac = small(SacConfig::default());
        for p in sac.core.store.iter_mut() {
            p.values.mapv_inplace(|v| v * 2.0 + 0.05);
        }
        let (obs, _, _) = toy(10);
        let eps = sac.core.noise(10);
        let obj = SacActorLoss {
            policy: &sac.core.policy,
            q1: &sac.q1,
            q2: &sac.q2,
            critic_store: &sac.critic_store,
            obs: &obs,
            eps: &eps,
            alpha: 0.2,
        };
        let r = grad_check(&obj, &sac.core.store, GradCheckConfig::default(), &mut substream(0, &[])).unwrap();
        assert!(r.max_rel_error <= 1e-4, "{r:?}");
    }

    #[test]
    fn short_run_is_deterministic_and_finite() {
        let run = || {
            let cfg = SacConfig { batch: 16, warmup: 50, ..Default::default() };
            let mut sac = small(cfg);
            let env = Env::new(EnvConfig::new(TaskKind::CartPole)).unwrap();
            let mut ctx = TrainLoop::new(env, 4, 150);
            sac.train(&mut ctx).unwrap();
            assert!(sac.alpha().is_finite());
            sac.snapshot().unwrap().to_checkpoint().to_bytes().unwrap()
        };
        assert_eq!(run(), run());
    }
}
