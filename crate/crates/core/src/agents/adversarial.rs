//! Adversarial PPO: RARL (one adversary) and RAP (a population sampled
//! uniformly per episode).
//!
//! Each iteration has a protagonist phase (the protagonist learns while the
//! current adversaries act) followed by an adversary phase on a separate
//! environment instance (adversaries learn from the negated reward while the
//! protagonist acts). Only protagonist steps count towards the budget, and
//! the adversary phase never touches the protagonist's training streams, so a
//! zero-scale adversary leaves training identical to plain PPO.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;

use super::ppo::{Ppo, PpoConfig, Rollout};
use super::{ActorSnapshot, Agent, AgentKind, TrainLoop};
use crate::disturbance::Site;
use crate::dynamics::ExternalForce;
use crate::env::{AdversaryInput, Env, Mode, TaskKind};
use crate::error::{config, Error, Result};
use crate::rng::{substream, tag, Rng};

/// Where the adversary's output enters the system.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Channel {
    /// External force at the pole tip / on the quadrotor body.
    Dynamics,
    /// Added to the physical action.
    Action,
}

impl Channel {
    pub fn name(self) -> &'static str {
        match self {
            Channel::Dynamics => "dyn",
            Channel::Action => "act",
        }
    }

    fn site(self) -> Site {
        match self {
            Channel::Dynamics => Site::Dynamics,
            Channel::Action => Site::Action,
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Channel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dyn" => Ok(Channel::Dynamics),
            "act" => Ok(Channel::Action),
            _ => Err(config(format!("unknown adversary channel '{s}' (expected dyn or act)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdversarialConfig {
    pub population: usize,
    /// Defaults to the dynamics channel for RARL and the action channel for
    /// RAP.
    pub channel: Option<Channel>,
    /// Bound on each output component, in physical units (N).
    pub scale: f64,
    /// Steps per adversary phase; the protagonist's rollout length when
    /// unset.
    pub rollout: Option<usize>,
}

impl Default for AdversarialConfig {
    fn default() -> Self {
        Self { population: 5, channel: None, scale: 0.5, rollout: None }
    }
}

impl AdversarialConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population == 0 {
            return Err(config("adversary.population must be >= 1"));
        }
        if !(self.scale >= 0.0 && self.scale.is_finite()) {
            return Err(config("adversary.scale must be a finite non-negative number"));
        }
        if self.rollout == Some(0) {
            return Err(config("adversary.rollout must be >= 1"));
        }
        Ok(())
    }
}

/// Uniform draw of one population member.
pub fn draw_adversary(rng: &mut Rng, population: usize) -> usize {
    rng.random_range(0..population)
}

/// Zero-sum reward of the adversary.
pub fn adversary_reward(protagonist_reward: f64) -> f64 {
    -protagonist_reward
}

fn to_input(channel: Channel, scale: f64, action: &[f32]) -> AdversaryInput {
    let v: Vec<f64> = action.iter().map(|a| scale * f64::from(*a)).collect();
    match channel {
        Channel::Action => AdversaryInput { action: Some(v), force: None },
        Channel::Dynamics => AdversaryInput { action: None, force: Some(ExternalForce::new(v[0], v[1])) },
    }
}

const TAG_ADV: u64 = tag("adversary");

pub struct AdversarialPpo {
    kind: AgentKind,
    pub protagonist: Ppo,
    pub adversaries: Vec<Ppo>,
    pub cfg: AdversarialConfig,
    channel: Channel,
    seed: u64,
    /// Per-episode adversary choice during protagonist phases.
    select_rng: Rng,
    /// Adversary sampling during protagonist phases.
    drive_rng: Rng,
    /// Per-episode adversary choice during adversary phases.
    phase_select_rng: Rng,
    /// Protagonist sampling during adversary phases.
    phase_protagonist_rng: Rng,
    phase_env: Option<Env>,
    phase_episode: u64,
    current: usize,
}

impl AdversarialPpo {
    pub fn new(
        kind: AgentKind,
        task: TaskKind,
        hidden: &[usize],
        ppo: PpoConfig,
        cfg: AdversarialConfig,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        let channel = cfg.channel.unwrap_or(match kind {
            AgentKind::Rap => Channel::Action,
            _ => Channel::Dynamics,
        });
        let (o, a) = (task.obs_dim(), task.act_dim());
        let mut protagonist = Ppo::new(task, o, a, hidden, ppo.clone(), seed)?;
        protagonist.kind = kind;
        let adv_dim = task.site_dim(channel.site());
        let adversaries = (0..cfg.population)
            .map(|k| Ppo::with_streams(kind, task, task.state_dim(), adv_dim, hidden, ppo.clone(), seed, &[TAG_ADV, k as u64]))
            .collect::<Result<Vec<_>>>()?;
        let stream = |t: &str| substream(seed, &[TAG_ADV, tag(t)]);
        Ok(Self {
            kind,
            protagonist,
            adversaries,
            channel,
            seed,
            select_rng: stream("select"),
            drive_rng: stream("drive"),
            phase_select_rng: stream("phase-select"),
            phase_protagonist_rng: stream("phase-protagonist"),
            phase_env: None,
            phase_episode: 0,
            current: 0,
            cfg,
        })
    }

    pub fn channel(&self) -> Channel {
        self.channel
    }

    /// Input of adversary `k` for a given true state.
    pub fn adversary_input(&mut self, k: usize, state: &[f64], deterministic: bool) -> Result<AdversaryInput> {
        if self.cfg.scale == 0.0 {
            return Ok(AdversaryInput::default());
        }
        let adv = &self.adversaries[k];
        let x: Vec<f32> = state.iter().map(|v| *v as f32).collect();
        let a = if deterministic {
            adv.policy.mean_action(&adv.store, &x)?
        } else {
            adv.policy.sample(&adv.store, &x, &mut self.drive_rng)?.action
        };
        Ok(to_input(self.channel, self.cfg.scale, &a))
    }

    /// Collects one phase of adversary experience against the current
    /// protagonist and updates every adversary that acted.
    pub fn adversary_phase(&mut self, template: &Env) -> Result<()> {
        let steps = self.cfg.rollout.unwrap_or(self.protagonist.cfg.rollout);
        if self.phase_env.is_none() {
            self.phase_env = Some(Env::new(template.config().clone())?);
        }
        let env = self.phase_env.as_mut().expect("created above");
        let phase_seed = substream(self.seed, &[TAG_ADV, tag("phase-seed")]).random::<u64>();
        let mut rollouts: Vec<Rollout> = vec![Rollout::default(); self.adversaries.len()];
        let mut collected = 0;
        while collected < steps {
            let k = draw_adversary(&mut self.phase_select_rng, self.adversaries.len());
            let mut obs = env.reset(Mode::Train, phase_seed, self.phase_episode)?;
            self.phase_episode += 1;
            let mut state = env.true_state();
            loop {
                let p = self.protagonist.sample_with(&obs, &mut self.phase_protagonist_rng)?;
                let action: Vec<f64> = p.action.iter().map(|a| f64::from(*a)).collect();
                let s = self.adversaries[k].sample(&state)?;
                let input = to_input(self.channel, self.cfg.scale, &s.action);
                let step = env.step_with(&action, &input)?;
                let r = adversary_reward(step.reward);
                debug_assert_eq!(r + step.reward, 0.0);
                rollouts[k].push(state.clone(), &s, r);
                collected += 1;
                let done = step.done();
                obs = step.obs;
                state = env.true_state();
                if done {
                    rollouts[k].close(step.terminated, Some(state.clone()));
                    break;
                }
                if collected >= steps {
                    rollouts[k].close(false, Some(state.clone()));
                    break;
                }
            }
        }
        for (adv, ro) in self.adversaries.iter_mut().zip(&rollouts) {
            if !ro.is_empty() {
                let batch = adv.batch(ro)?;
                adv.update(&batch)?;
            }
        }
        Ok(())
    }
}

impl Agent for AdversarialPpo {
    fn kind(&self) -> AgentKind {
        self.kind
    }

    fn train(&mut self, ctx: &mut TrainLoop) -> Result<()> {
        while !ctx.exhausted() {
            let Self { protagonist, adversaries, cfg, channel, select_rng, drive_rng, current, .. } = self;
            let (channel, scale, pop) = (*channel, cfg.scale, adversaries.len());
            let mut hook = |env: &Env| -> Result<AdversaryInput> {
                if env.step_index() == 0 {
                    *current = draw_adversary(select_rng, pop);
                }
                if scale == 0.0 {
                    return Ok(AdversaryInput::default());
                }
                let adv = &adversaries[*current];
                let x: Vec<f32> = env.true_state().iter().map(|v| *v as f32).collect();
                let a = adv.policy.sample(&adv.store, &x, drive_rng)?.action;
                Ok(to_input(channel, scale, &a))
            };
            protagonist.iteration(ctx, &mut hook)?;
            if ctx.stopped() {
                break;
            }
            let template = Env::new(ctx.env.config().clone())?;
            self.adversary_phase(&template)?;
        }
        Ok(())
    }

    fn snapshot(&self) -> Result<ActorSnapshot> {
        let mut s = self.protagonist.snapshot()?;
        s.kind = self.kind;
        s.hyper.extend([
            ("adversary.population".into(), self.adversaries.len().to_string()),
            ("adversary.channel".into(), self.channel.to_string()),
            ("adversary.scale".into(), self.cfg.scale.to_string()),
        ]);
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvConfig;

    fn ppo_cfg() -> PpoConfig {
        PpoConfig { rollout: 100, minibatch: 32, epochs: 2, ..Default::default() }
    }

    fn train(agent: &mut dyn Agent, steps: usize) -> perturbrl_nn::ParamStore<f32> {
        let env = Env::new(EnvConfig::new(TaskKind::CartPole)).unwrap();
        let mut ctx = TrainLoop::new(env, 9, steps);
        agent.train(&mut ctx).unwrap();
        assert_eq!(ctx.steps(), steps);
        agent.snapshot().unwrap().store
    }

    #[test]
    fn population_draws_are_uniform() {
        let mut rng = substream(4, &[]);
        let mut counts = [0usize; 5];
        for _ in 0..10_000 {
            counts[draw_adversary(&mut rng, 5)] += 1;
        }
        for c in counts {
            assert!((1850..=2150).contains(&c), "{counts:?}");
        }
    }

    #[test]
    fn zero_scale_matches_plain_ppo_bit_for_bit() {
        let mut ppo = Ppo::new(TaskKind::CartPole, 4, 1, &[8, 8], ppo_cfg(), 3).unwrap();
        let plain = train(&mut ppo, 350);
        for kind in [AgentKind::Rarl, AgentKind::Rap] {
            let cfg = AdversarialConfig { scale: 0.0, population: 3, ..Default::default() };
            let mut adv = AdversarialPpo::new(kind, TaskKind::CartPole, &[8, 8], ppo_cfg(), cfg, 3).unwrap();
            assert_eq!(train(&mut adv, 350), plain, "{kind}");
        }
    }

    #[test]
    fn singleton_population_matches_rarl_on_the_same_channel() {
        let cfg = AdversarialConfig { population: 1, channel: Some(Channel::Action), scale: 1.0, rollout: Some(80) };
        let mut rarl = AdversarialPpo::new(AgentKind::Rarl, TaskKind::CartPole, &[8, 8], ppo_cfg(), cfg.clone(), 5).unwrap();
        let mut rap = AdversarialPpo::new(AgentKind::Rap, TaskKind::CartPole, &[8, 8], ppo_cfg(), cfg, 5).unwrap();
        assert_eq!(train(&mut rarl, 250), train(&mut rap, 250));
        assert_eq!(rarl.adversaries[0].store, rap.adversaries[0].store);
    }

    #[test]
    fn adversary_changes_training_when_active() {
        let mut ppo = Ppo::new(TaskKind::CartPole, 4, 1, &[8, 8], ppo_cfg(), 3).unwrap();
        let plain = train(&mut ppo, 250);
        let cfg = AdversarialConfig { scale: 1.0, population: 2, ..Default::default() };
        let mut adv = AdversarialPpo::new(AgentKind::Rap, TaskKind::CartPole, &[8, 8], ppo_cfg(), cfg, 3).unwrap();
        assert_ne!(train(&mut adv, 250), plain);
    }

    #[test]
    fn default_channels_and_output_bounds() {
        let rarl = AdversarialPpo::new(AgentKind::Rarl, TaskKind::CartPole, &[8], ppo_cfg(), AdversarialConfig::default(), 1).unwrap();
        assert_eq!(rarl.channel(), Channel::Dynamics);
        assert_eq!(rarl.adversaries[0].policy.act_dim, 2);
        let mut rap = AdversarialPpo::new(AgentKind::Rap, TaskKind::CartPole, &[8], ppo_cfg(), AdversarialConfig::default(), 1).unwrap();
        assert_eq!(rap.channel(), Channel::Action);
        for i in 0..200 {
            let s = [0.1 * i as f64, -0.2, 3.0, -1.0];
            let inp = rap.adversary_input(i % 5, &s, false).unwrap();
            assert!(inp.action.unwrap().iter().all(|v| v.abs() <= 0.5));
        }
        assert_eq!(adversary_reward(0.25), -0.25);
    }
}
