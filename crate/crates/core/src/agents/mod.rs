//! Agents: PPO, SAC, adversarial PPO (RARL / RAP), WCPG, RAAC and
//! domain-randomized PPO, plus the shared training loop and actor snapshots.

pub mod adversarial;
pub mod buffer;
pub mod cvar;
pub mod dr;
pub mod gradients;
pub mod gae;
pub mod ppo;
pub mod raac;
pub mod sac;
pub mod wcpg;

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use perturbrl_nn::{Checkpoint, GaussianPolicy, LogStd, Mlp, ParamId, ParamStore};

use crate::disturbance::{ParamRandomization, ParamSet};
use crate::env::{AdversaryInput, Env, Mode, Step, TaskKind};
use crate::error::{config, Error, Result};
use crate::rng::{substream, tag};

pub use adversarial::{AdversarialConfig, AdversarialPpo, Channel};
pub use dr::DomainRandomized;
pub use gradients::gradient_suite;
pub use ppo::{Ppo, PpoConfig};
pub use raac::{Raac, RaacConfig};
pub use sac::{Sac, SacConfig};
pub use wcpg::{Wcpg, WcpgConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AgentKind {
    Ppo,
    Sac,
    Rarl,
    Rap,
    Wcpg,
    Raac,
    PpoDr,
}

impl AgentKind {
    pub const ALL: [AgentKind; 7] = [
        AgentKind::Ppo,
        AgentKind::Sac,
        AgentKind::Rarl,
        AgentKind::Rap,
        AgentKind::Wcpg,
        AgentKind::Raac,
        AgentKind::PpoDr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Ppo => "ppo",
            AgentKind::Sac => "sac",
            AgentKind::Rarl => "rarl",
            AgentKind::Rap => "rap",
            AgentKind::Wcpg => "wcpg",
            AgentKind::Raac => "raac",
            AgentKind::PpoDr => "ppo_dr",
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AgentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        AgentKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| config(format!("unknown agent '{s}'")))
    }
}

/// Anything that maps an observation to a normalized action.
pub trait Policy {
    fn act(&self, obs: &[f64]) -> Result<Vec<f64>>;
}

/// Frozen deterministic actor extracted from an agent; what checkpoints hold.
#[derive(Clone, Debug, PartialEq)]
pub struct ActorSnapshot {
    pub kind: AgentKind,
    pub task: TaskKind,
    pub policy: GaussianPolicy,
    pub store: ParamStore<f32>,
    /// Constant inputs appended to every observation (e.g. WCPG's risk level).
    pub extra_inputs: Vec<f64>,
    /// `key value` pairs echoed into the checkpoint header.
    pub hyper: Vec<(String, String)>,
}

impl ActorSnapshot {
    /// Copies the policy's arrays out of an agent store into a compact one.
    pub fn extract(kind: AgentKind, task: TaskKind, policy: &GaussianPolicy, store: &ParamStore<f32>) -> Result<Self> {
        let ids = policy.param_ids();
        let sub = store.subset(&ids);
        let net = Mlp::from_layout(&sub, policy.net.sizes(), ParamId(0))?;
        let log_std = match policy.log_std {
            LogStd::Shared(_) => LogStd::Shared(ParamId(ids.len() - 1)),
            LogStd::FromNetwork => LogStd::FromNetwork,
        };
        Ok(Self {
            kind,
            task,
            policy: GaussianPolicy {
                net,
                act_dim: policy.act_dim,
                log_std,
            },
            store: sub,
            extra_inputs: Vec::new(),
            hyper: Vec::new(),
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let sizes: Vec<String> = self.policy.net.sizes().iter().map(|s| s.to_string()).collect();
        let extra: Vec<String> = self.extra_inputs.iter().map(|v| v.to_string()).collect();
        let mut ck = Checkpoint::new(self.store.clone())
            .with("agent", self.kind)
            .with("task", self.task)
            .with("layers", sizes.join(","))
            .with("act_dim", self.policy.act_dim)
            .with(
                "log_std",
                match self.policy.log_std {
                    LogStd::Shared(_) => "shared",
                    LogStd::FromNetwork => "network",
                },
            )
            .with("extra_inputs", if extra.is_empty() { "-".to_string() } else { extra.join(",") });
        for (k, v) in &self.hyper {
            ck = ck.with(&format!("hyper.{k}"), v);
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let schema = |e: &str| Error::Schema(format!("checkpoint: {e}"));
        let kind: AgentKind = ck.require("agent")?.parse()?;
        let task: TaskKind = ck.require("task")?.parse()?;
        let sizes: Vec<usize> = ck
            .require("layers")?
            .split(',')
            .map(|s| s.parse().map_err(|_| schema("bad layers")))
            .collect::<Result<_>>()?;
        let act_dim: usize = ck.require("act_dim")?.parse().map_err(|_| schema("bad act_dim"))?;
        let extra_inputs: Vec<f64> = match ck.require("extra_inputs")? {
            "-" => Vec::new(),
            s => s
                .split(',')
                .map(|v| v.parse().map_err(|_| schema("bad extra_inputs")))
                .collect::<Result<_>>()?,
        };
        let net = Mlp::from_layout(&ck.params, &sizes, ParamId(0))?;
        let log_std = match ck.require("log_std")? {
            "shared" => {
                let id = ParamId(2 * (sizes.len() - 1));
                if id.0 >= ck.params.len() || ck.params.get(id).shape() != [1, act_dim] {
                    return Err(schema("missing shared log-std array"));
                }
                LogStd::Shared(id)
            }
            "network" => LogStd::FromNetwork,
            other => return Err(schema(&format!("unknown log_std mode {other}"))),
        };
        if sizes.first().copied() != Some(task.obs_dim() + extra_inputs.len()) {
            return Err(schema("network input width does not match the task"));
        }
        let hyper = ck
            .header
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("hyper.").map(|k| (k.to_string(), v.clone())))
            .collect();
        Ok(Self {
            kind,
            task,
            policy: GaussianPolicy { net, act_dim, log_std },
            store: ck.params.clone(),
            extra_inputs,
            hyper,
        })
    }
}

impl Policy for ActorSnapshot {
    fn act(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let input: Vec<f32> = obs.iter().chain(&self.extra_inputs).map(|v| *v as f32).collect();
        Ok(self
            .policy
            .mean_action(&self.store, &input)?
            .into_iter()
            .map(f64::from)
            .collect())
    }
}

pub type Observer<'a> = dyn FnMut(usize, &ActorSnapshot) -> Result<bool> + 'a;

/// Environment-step bookkeeping shared by every agent's training loop:
/// budget, episode counter, domain randomization at reset, and periodic
/// callbacks for learning curves (which may request an early stop).
pub struct TrainLoop<'a> {
    pub env: Env,
    pub seed: u64,
    budget: usize,
    steps: usize,
    episode: u64,
    randomization: Option<ParamRandomization>,
    nominal: ParamSet,
    eval_every: usize,
    next_eval: usize,
    observer: Option<&'a mut Observer<'a>>,
    stopped: bool,
}

const TAG_DR: u64 = tag("domain-randomization");

impl<'a> TrainLoop<'a> {
    pub fn new(env: Env, seed: u64, budget: usize) -> Self {
        let nominal = *env.params();
        Self {
            env,
            seed,
            budget,
            steps: 0,
            episode: 0,
            randomization: None,
            nominal,
            eval_every: usize::MAX,
            next_eval: usize::MAX,
            observer: None,
            stopped: false,
        }
    }

    pub fn with_observer(mut self, every: usize, observer: &'a mut Observer<'a>) -> Self {
        self.eval_every = every.max(1);
        self.next_eval = self.eval_every;
        self.observer = Some(observer);
        self
    }

    pub fn set_randomization(&mut self, spec: Option<ParamRandomization>) -> Result<()> {
        if let Some(s) = &spec {
            s.validate()?;
        }
        self.randomization = spec;
        Ok(())
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn episodes(&self) -> u64 {
        self.episode
    }

    pub fn stopped(&self) -> bool {
        self.stopped
    }

    pub fn exhausted(&self) -> bool {
        self.stopped || self.steps >= self.budget
    }

    pub fn obs_dim(&self) -> usize {
        self.env.obs_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.env.act_dim()
    }

    /// Starts the next training episode, redrawing physical parameters when
    /// randomization is active.
    pub fn reset(&mut self) -> Result<Vec<f64>> {
        let e = self.episode;
        self.episode += 1;
        if let Some(spec) = &self.randomization {
            let mut rng = substream(self.seed, &[TAG_DR, e]);
            let p = spec.sample(&self.nominal, &mut rng)?;
            self.env.set_params(p)?;
        }
        self.env.reset(Mode::Train, self.seed, e)
    }

    pub fn step(&mut self, action: &[f64], adversary: &AdversaryInput) -> Result<Step> {
        let s = self.env.step_with(action, adversary)?;
        self.steps += 1;
        Ok(s)
    }

    pub fn eval_due(&self) -> bool {
        self.observer.is_some() && self.steps >= self.next_eval
    }

    /// Hands a snapshot to the observer; it may ask to stop training.
    pub fn report(&mut self, snapshot: &ActorSnapshot) -> Result<()> {
        if let Some(obs) = self.observer.as_mut() {
            while self.next_eval <= self.steps {
                self.next_eval = self.next_eval.saturating_add(self.eval_every);
            }
            if obs(self.steps, snapshot)? {
                self.stopped = true;
            }
        }
        Ok(())
    }
}

/// Common agent interface used by the harness.
pub trait Agent: Send {
    fn kind(&self) -> AgentKind;
    /// Trains until the loop's budget is used up or an observer stops it.
    fn train(&mut self, ctx: &mut TrainLoop) -> Result<()>;
    fn snapshot(&self) -> Result<ActorSnapshot>;
}

/// Per-agent hyperparameters; each agent reads its own section.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentConfig {
    pub hidden: Vec<usize>,
    pub ppo: PpoConfig,
    pub sac: SacConfig,
    pub adversarial: AdversarialConfig,
    pub wcpg: WcpgConfig,
    pub raac: RaacConfig,
    pub dr: Option<ParamRandomization>,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            ppo: PpoConfig::default(),
            sac: SacConfig::default(),
            adversarial: AdversarialConfig::default(),
            wcpg: WcpgConfig::default(),
            raac: RaacConfig::default(),
            dr: None,
        }
    }
}

/// Builds a freshly initialized agent.
pub fn build_agent(kind: AgentKind, task: TaskKind, cfg: &AgentConfig, seed: u64) -> Result<Box<dyn Agent>> {
    let (o, a) = (task.obs_dim(), task.act_dim());
    let h = &cfg.hidden;
    Ok(match kind {
        AgentKind::Ppo => Box::new(Ppo::new(task, o, a, h, cfg.ppo.clone(), seed)?),
        AgentKind::Sac => Box::new(Sac::new(task, o, a, h, cfg.sac.clone(), seed)?),
        AgentKind::Rarl | AgentKind::Rap => {
            let mut adv = cfg.adversarial.clone();
            if kind == AgentKind::Rarl {
                adv.population = 1;
            }
            Box::new(AdversarialPpo::new(kind, task, h, cfg.ppo.clone(), adv, seed)?)
        }
        AgentKind::Wcpg => Box::new(Wcpg::new(task, o, a, h, cfg.sac.clone(), cfg.wcpg.clone(), seed)?),
        AgentKind::Raac => Box::new(Raac::new(task, o, a, h, cfg.sac.clone(), cfg.raac.clone(), seed)?),
        AgentKind::PpoDr => {
            let spec = cfg
                .dr
                .ok_or_else(|| config("ppo_dr needs a randomization range (dr.range)"))?;
            Box::new(DomainRandomized::new(Ppo::new(task, o, a, h, cfg.ppo.clone(), seed)?, spec))
        }
    })
}

/// Rows of observations as an `n x d` f32 matrix.
pub(crate) fn batch_f32(rows: &[Vec<f64>]) -> Array2<f32> {
    let d = rows.first().map_or(0, Vec::len);
    Array2::from_shape_fn((rows.len(), d), |(i, j)| rows[i][j] as f32)
}

pub(crate) fn check_finite(store: &ParamStore<f32>, what: &str) -> Result<()> {
    if store.all_finite() {
        Ok(())
    } else {
        Err(Error::Diverged(format!("{what} parameters became non-finite")))
    }
}

pub(crate) fn check_loss(v: f32, what: &str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged(format!("{what} loss is {v}")))
    }
}
