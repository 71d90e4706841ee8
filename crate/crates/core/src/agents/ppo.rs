//! Proximal policy optimization with a clipped surrogate, GAE and a separate
//! value network.

use ndarray::Array2;
use perturbrl_nn::policy::{gaussian_entropy_on_tape, log_prob_on_tape};
use perturbrl_nn::{
    clip_grad_norm, Adam, AdamConfig, GaussianPolicy, Mlp, NnError, Objective, ParamStore, PolicySample, Scalar,
    Tape, Var,
};
use rand::seq::SliceRandom;

use super::gae::{gae_steps, normalize, GaeStep};
use super::{batch_f32, check_finite, check_loss, ActorSnapshot, Agent, AgentKind, TrainLoop};
use crate::env::{AdversaryInput, Env, TaskKind};
use crate::error::{config, Result};
use crate::rng::{substream, tag, Rng};

#[derive(Clone, Debug, PartialEq)]
pub struct PpoConfig {
    pub clip: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub lr: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub rollout: usize,
    pub vf_coef: f64,
    pub ent_coef: f64,
    pub max_grad_norm: Option<f64>,
    pub init_log_std: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip: 0.2,
            gamma: 0.98,
            lambda: 0.92,
            lr: 3e-4,
            epochs: 10,
            minibatch: 64,
            rollout: 2000,
            vf_coef: 0.5,
            ent_coef: 0.0,
            max_grad_norm: Some(0.5),
            init_log_std: -0.5,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return Err(config("ppo.clip must lie in (0, 1)"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0 && self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(config("ppo.gamma and ppo.lambda must lie in (0, 1]"));
        }
        if self.epochs == 0 || self.minibatch == 0 || self.rollout == 0 {
            return Err(config("ppo.epochs, ppo.minibatch and ppo.rollout must be >= 1"));
        }
        if !(self.lr > 0.0) {
            return Err(config("ppo.lr must be positive"));
        }
        Ok(())
    }
}

/// `min(r A, clip(r, 1 - eps, 1 + eps) A)` for one sample.
pub fn clipped_surrogate(ratio: f64, advantage: f64, eps: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - eps, 1.0 + eps) * advantage)
}

/// On-policy experience; may span several episodes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Rollout {
    pub obs: Vec<Vec<f64>>,
    pub raw: Vec<Vec<f32>>,
    pub logp: Vec<f32>,
    pub rewards: Vec<f64>,
    pub terminated: Vec<bool>,
    pub boundary: Vec<bool>,
    /// Observation after a non-terminal boundary, for bootstrapping.
    pub boundary_obs: Vec<Option<Vec<f64>>>,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    pub fn push(&mut self, obs: Vec<f64>, sample: &PolicySample, reward: f64) {
        self.obs.push(obs);
        self.raw.push(sample.raw.clone());
        self.logp.push(sample.log_prob);
        self.rewards.push(reward);
        self.terminated.push(false);
        self.boundary.push(false);
        self.boundary_obs.push(None);
    }

    /// Marks the end of an episode (or of the collection window) at the last
    /// pushed step.
    pub fn close(&mut self, terminated: bool, next_obs: Option<Vec<f64>>) {
        if let Some(last) = self.obs.len().checked_sub(1) {
            self.terminated[last] = terminated;
            self.boundary[last] = true;
            self.boundary_obs[last] = if terminated { None } else { next_obs };
        }
    }
}

/// Minibatch of PPO training data in f64 (cast to the tape's scalar type).
#[derive(Clone, Debug, PartialEq)]
pub struct PpoBatch {
    pub obs: Array2<f64>,
    pub raw: Array2<f64>,
    pub old_logp: Array2<f64>,
    pub adv: Array2<f64>,
    pub returns: Array2<f64>,
}

impl PpoBatch {
    pub fn len(&self) -> usize {
        self.obs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.nrows() == 0
    }

    pub fn select(&self, idx: &[usize]) -> PpoBatch {
        let pick = |a: &Array2<f64>| a.select(ndarray::Axis(0), idx);
        PpoBatch {
            obs: pick(&self.obs),
            raw: pick(&self.raw),
            old_logp: pick(&self.old_logp),
            adv: pick(&self.adv),
            returns: pick(&self.returns),
        }
    }
}

/// Clipped surrogate + value regression - entropy bonus.
pub struct PpoLoss<'a> {
    pub policy: &'a GaussianPolicy,
    pub critic: &'a Mlp,
    pub batch: &'a PpoBatch,
    pub clip: f64,
    pub vf_coef: f64,
    pub ent_coef: f64,
}

impl Objective for PpoLoss<'_> {
    fn loss<T: Scalar>(&self, tape: &mut Tape<T>, p: &ParamStore<T>) -> std::result::Result<Var, NnError> {
        let b = self.batch;
        let obs = tape.constant(b.obs.mapv(T::c));
        let (mean, log_std) = self.policy.distribution_on_tape(tape, p, obs)?;
        let lp = log_prob_on_tape(tape, mean, log_std, &b.raw.mapv(T::c));
        let old = tape.constant(b.old_logp.mapv(T::c));
        let diff = tape.sub(lp, old);
        let ratio = tape.exp(diff);
        let adv = tape.constant(b.adv.mapv(T::c));
        let s1 = tape.mul(ratio, adv);
        let clipped = tape.clamp(ratio, T::c(1.0 - self.clip), T::c(1.0 + self.clip));
        let s2 = tape.mul(clipped, adv);
        let surr = tape.minimum(s1, s2);
        let surr = tape.mean(surr);
        let policy_loss = tape.neg(surr);

        let v = self.critic.forward(tape, p, obs)?;
        let ret = tape.constant(b.returns.mapv(T::c));
        let err = tape.sub(v, ret);
        let sq = tape.square(err);
        let vl = tape.mean(sq);
        let vl = tape.scale(vl, T::c(self.vf_coef));

        let total = tape.add(policy_loss, vl);
        if self.ent_coef == 0.0 {
            return Ok(total);
        }
        let ent = gaussian_entropy_on_tape(tape, log_std);
        let ent = tape.mean(ent);
        let ent = tape.scale(ent, T::c(self.ent_coef));
        Ok(tape.sub(total, ent))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PpoStats {
    pub loss: f32,
    pub grad_norm: f64,
    pub updates: usize,
}

const TAG_PPO_SAMPLE: u64 = tag("ppo-sample");
const TAG_PPO_SHUFFLE: u64 = tag("ppo-shuffle");

pub struct Ppo {
    pub(crate) kind: AgentKind,
    task: TaskKind,
    pub cfg: PpoConfig,
    pub store: ParamStore<f32>,
    pub policy: GaussianPolicy,
    pub critic: Mlp,
    adam: Adam,
    sample_rng: Rng,
    shuffle_rng: Rng,
    current_obs: Option<Vec<f64>>,
}

impl Ppo {
    pub fn new(task: TaskKind, obs_dim: usize, act_dim: usize, hidden: &[usize], cfg: PpoConfig, seed: u64) -> Result<Self> {
        Self::with_streams(AgentKind::Ppo, task, obs_dim, act_dim, hidden, cfg, seed, &[])
    }

    /// `tags` separate the random streams of several PPO learners that share
    /// one seed (e.g. adversaries).
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn with_streams(
        kind: AgentKind,
        task: TaskKind,
        obs_dim: usize,
        act_dim: usize,
        hidden: &[usize],
        cfg: PpoConfig,
        seed: u64,
        tags: &[u64],
    ) -> Result<Self> {
        cfg.validate()?;
        let stream = |t: u64| {
            let mut all = tags.to_vec();
            all.push(t);
            substream(seed, &all)
        };
        let mut init = stream(tag("ppo-init"));
        let mut store = ParamStore::new();
        let policy =
            GaussianPolicy::state_independent(&mut store, obs_dim, hidden, act_dim, cfg.init_log_std as f32, &mut init)?;
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let critic = Mlp::new(&mut store, &sizes, 1.0, &mut init)?;
        let ids = (0..store.len()).map(perturbrl_nn::ParamId).collect();
        let adam = Adam::new(&store, ids, AdamConfig::with_lr(cfg.lr));
        Ok(Self {
            kind,
            task,
            sample_rng: stream(TAG_PPO_SAMPLE),
            shuffle_rng: stream(TAG_PPO_SHUFFLE),
            cfg,
            store,
            policy,
            critic,
            adam,
            current_obs: None,
        })
    }

    pub fn sample(&mut self, obs: &[f64]) -> Result<PolicySample> {
        let x: Vec<f32> = obs.iter().map(|v| *v as f32).collect();
        Ok(self.policy.sample(&self.store, &x, &mut self.sample_rng)?)
    }

    /// Sample with an external stream (used when another phase must not
    /// disturb this learner's own stream).
    pub fn sample_with(&self, obs: &[f64], rng: &mut Rng) -> Result<PolicySample> {
        let x: Vec<f32> = obs.iter().map(|v| *v as f32).collect();
        Ok(self.policy.sample(&self.store, &x, rng)?)
    }

    pub fn values(&self, obs: &[Vec<f64>]) -> Result<Vec<f64>> {
        if obs.is_empty() {
            return Ok(Vec::new());
        }
        let v = self.critic.infer(&self.store, &batch_f32(obs))?;
        Ok(v.iter().map(|x| f64::from(*x)).collect())
    }

    /// Advantages (normalized) and value targets for a rollout.
    pub fn batch(&self, ro: &Rollout) -> Result<PpoBatch> {
        let n = ro.len();
        let values = self.values(&ro.obs)?;
        let extra: Vec<Vec<f64>> = ro.boundary_obs.iter().flatten().cloned().collect();
        let extra_v = self.values(&extra)?;
        let mut k = 0;
        let steps: Vec<GaeStep> = (0..n)
            .map(|t| {
                let next_value = if ro.boundary[t] {
                    match &ro.boundary_obs[t] {
                        Some(_) => {
                            k += 1;
                            extra_v[k - 1]
                        }
                        None => 0.0,
                    }
                } else {
                    values[t + 1]
                };
                GaeStep {
                    reward: ro.rewards[t],
                    value: values[t],
                    next_value,
                    terminated: ro.terminated[t],
                    boundary: ro.boundary[t],
                }
            })
            .collect();
        let mut adv = gae_steps(&steps, self.cfg.gamma, self.cfg.lambda);
        let returns: Vec<f64> = adv.iter().zip(&values).map(|(a, v)| a + v).collect();
        normalize(&mut adv);
        let d = ro.obs.first().map_or(0, Vec::len);
        let m = self.policy.act_dim;
        Ok(PpoBatch {
            obs: Array2::from_shape_fn((n, d), |(i, j)| ro.obs[i][j]),
            raw: Array2::from_shape_fn((n, m), |(i, j)| f64::from(ro.raw[i][j])),
            old_logp: Array2::from_shape_fn((n, 1), |(i, _)| f64::from(ro.logp[i])),
            adv: Array2::from_shape_fn((n, 1), |(i, _)| adv[i]),
            returns: Array2::from_shape_fn((n, 1), |(i, _)| returns[i]),
        })
    }

    pub fn update(&mut self, batch: &PpoBatch) -> Result<PpoStats> {
        let n = batch.len();
        let mut stats = PpoStats::default();
        if n == 0 {
            return Ok(stats);
        }
        let mut idx: Vec<usize> = (0..n).collect();
        let ids = self.adam.ids().to_vec();
        for _ in 0..self.cfg.epochs {
            idx.shuffle(&mut self.shuffle_rng);
            for chunk in idx.chunks(self.cfg.minibatch) {
                let mb = batch.select(chunk);
                let obj = PpoLoss {
                    policy: &self.policy,
                    critic: &self.critic,
                    batch: &mb,
                    clip: self.cfg.clip,
                    vf_coef: self.cfg.vf_coef,
                    ent_coef: self.cfg.ent_coef,
                };
                let mut tape = Tape::<f32>::new();
                let root = obj.loss(&mut tape, &self.store)?;
                let loss = tape.scalar(root);
                check_loss(loss, "ppo")?;
                let mut grads = tape.backward(root)?.for_store(&self.store);
                if let Some(max) = self.cfg.max_grad_norm {
                    stats.grad_norm = clip_grad_norm(&mut grads, &ids, max);
                }
                self.adam.step(&mut self.store, &grads)?;
                stats.loss = loss;
                stats.updates += 1;
            }
        }
        check_finite(&self.store, "ppo")?;
        Ok(stats)
    }

    /// Collects one rollout (bounded by the loop's budget) and updates.
    /// `adversary` is consulted before every step with the environment in
    /// its pre-step state.
    pub(crate) fn iteration(
        &mut self,
        ctx: &mut TrainLoop,
        adversary: &mut dyn FnMut(&Env) -> Result<AdversaryInput>,
    ) -> Result<()> {
        let mut ro = Rollout::default();
        while ro.len() < self.cfg.rollout && !ctx.exhausted() {
            let obs = match self.current_obs.take() {
                Some(o) => o,
                None => ctx.reset()?,
            };
            let s = self.sample(&obs)?;
            let action: Vec<f64> = s.action.iter().map(|a| f64::from(*a)).collect();
            let adv = adversary(&ctx.env)?;
            let step = ctx.step(&action, &adv)?;
            ro.push(obs, &s, step.reward);
            if step.done() {
                ro.close(step.terminated, Some(step.obs));
            } else {
                self.current_obs = Some(step.obs);
            }
            if ctx.eval_due() {
                let snap = self.snapshot()?;
                ctx.report(&snap)?;
            }
        }
        if ctx.stopped() {
            // the observer asked to stop: keep the reported policy
            return Ok(());
        }
        if let Some(o) = &self.current_obs {
            ro.close(false, Some(o.clone()));
        }
        let batch = self.batch(&ro)?;
        self.update(&batch)?;
        Ok(())
    }

    pub fn task(&self) -> TaskKind {
        self.task
    }
}

impl Agent for Ppo {
    fn kind(&self) -> AgentKind {
        self.kind
    }

    fn train(&mut self, ctx: &mut TrainLoop) -> Result<()> {
        while !ctx.exhausted() {
            self.iteration(ctx, &mut |_| Ok(AdversaryInput::default()))?;
        }
        Ok(())
    }

    fn snapshot(&self) -> Result<ActorSnapshot> {
        let mut s = ActorSnapshot::extract(self.kind, self.task, &self.policy, &self.store)?;
        s.hyper = vec![
            ("clip".into(), self.cfg.clip.to_string()),
            ("gamma".into(), self.cfg.gamma.to_string()),
            ("lambda".into(), self.cfg.lambda.to_string()),
            ("lr".into(), self.cfg.lr.to_string()),
            ("epochs".into(), self.cfg.epochs.to_string()),
            ("minibatch".into(), self.cfg.minibatch.to_string()),
            ("rollout".into(), self.cfg.rollout.to_string()),
        ];
        Ok(s)
    }
}
