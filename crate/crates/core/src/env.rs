//! Episodic environments: cart-pole stabilisation and planar-quadrotor
//! circle tracking, with disturbance injection at observations, actions and
//! dynamics.
//!
//! Agents act in a normalized box `[-1, 1]^m`. The environment maps that to
//! physical inputs (cart force in N, per-motor thrust in N), adds any action
//! disturbance, simulates one control period with the dynamics disturbance
//! as an external force, and emits `exp(-cost)` computed on the true
//! post-step state and the input actually applied.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;

use crate::disturbance::{self, isotropic_direction, Disturbance, DisturbanceSpec, ParamSet, Site};
use crate::dynamics::{
    step_cartpole, step_quadrotor, CartPoleLimits, CartPoleParams, CartPoleState, ExternalForce, QuadrotorLimits,
    QuadrotorParams, QuadrotorState, DT,
};
use crate::error::{config, Error, Result};
use crate::metrics::{quadratic_cost, rmse, step_reward, CostWeights, EpisodeRecord};
use crate::rng::{substream, tag, Rng};

pub const MAX_STEPS: usize = 250;
pub const CART_FORCE_MAX: f64 = 10.0;
pub const CIRCLE_RADIUS: f64 = 0.5;
pub const CIRCLE_CENTER_Z: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TaskKind {
    CartPole,
    Quadrotor,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::CartPole => "cartpole",
            TaskKind::Quadrotor => "quadrotor",
        }
    }

    pub fn state_dim(self) -> usize {
        match self {
            TaskKind::CartPole => 4,
            TaskKind::Quadrotor => 6,
        }
    }

    pub fn obs_dim(self) -> usize {
        match self {
            TaskKind::CartPole => 4,
            TaskKind::Quadrotor => 8,
        }
    }

    pub fn act_dim(self) -> usize {
        match self {
            TaskKind::CartPole => 1,
            TaskKind::Quadrotor => 2,
        }
    }

    pub fn site_dim(self, site: Site) -> usize {
        match site {
            Site::Observation => self.obs_dim(),
            Site::Action => self.act_dim(),
            Site::Dynamics => 2,
        }
    }

    pub fn default_direction(self, site: Site) -> Vec<f64> {
        match site {
            Site::Observation => isotropic_direction(self.obs_dim()),
            Site::Action => isotropic_direction(self.act_dim()),
            Site::Dynamics => vec![1.0, 0.0],
        }
    }

    pub fn default_params(self) -> ParamSet {
        match self {
            TaskKind::CartPole => ParamSet::CartPole(CartPoleParams::default()),
            TaskKind::Quadrotor => ParamSet::Quadrotor(QuadrotorParams::default()),
        }
    }

    pub fn default_weights(self) -> CostWeights {
        match self {
            TaskKind::CartPole => CostWeights::cartpole_default(),
            TaskKind::Quadrotor => CostWeights::quadrotor_default(),
        }
    }

    /// Absolute per-component intervals for training-episode initial states.
    pub fn default_train_init(self) -> Vec<(f64, f64)> {
        match self {
            TaskKind::CartPole => vec![(-0.5, 0.5), (-0.15, 0.15), (-0.1, 0.1), (-0.1, 0.1)],
            TaskKind::Quadrotor => vec![(0.4, 0.6), (0.4, 0.6), (-0.1, 0.1), (-0.1, 0.1), (-0.1, 0.1), (-0.1, 0.1)],
        }
    }

    pub fn default_eval_init(self) -> Vec<f64> {
        match self {
            TaskKind::CartPole => vec![0.0, 0.1, 0.0, 0.0],
            TaskKind::Quadrotor => vec![0.5, 0.5, 0.0, 0.0, 0.0, 0.0],
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cartpole" | "cart_pole" => Ok(TaskKind::CartPole),
            "quadrotor" | "quad" => Ok(TaskKind::Quadrotor),
            _ => Err(config(format!("unknown task '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Reference waypoint `(x, z)` on the tracking circle; one revolution per
/// `max_steps`, starting at `(0.5, 0.5)`.
pub fn reference_waypoint(step: usize, max_steps: usize) -> (f64, f64) {
    let phase = 2.0 * PI * step as f64 / max_steps as f64;
    (CIRCLE_RADIUS * phase.cos(), CIRCLE_CENTER_Z + CIRCLE_RADIUS * phase.sin())
}

/// Full reference state: waypoint position plus the circle's tangent velocity.
pub fn reference_state(step: usize, max_steps: usize) -> [f64; 6] {
    let (x, z) = reference_waypoint(step, max_steps);
    let omega = 2.0 * PI / (max_steps as f64 * DT);
    let phase = 2.0 * PI * step as f64 / max_steps as f64;
    [x, z, 0.0, -CIRCLE_RADIUS * omega * phase.sin(), CIRCLE_RADIUS * omega * phase.cos(), 0.0]
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvConfig {
    pub task: TaskKind,
    pub max_steps: usize,
    pub params: ParamSet,
    pub weights: CostWeights,
    pub disturbances: Vec<DisturbanceSpec>,
    pub train_init: Vec<(f64, f64)>,
    pub eval_init: Vec<f64>,
}

impl EnvConfig {
    pub fn new(task: TaskKind) -> Self {
        Self {
            task,
            max_steps: MAX_STEPS,
            params: task.default_params(),
            weights: task.default_weights(),
            disturbances: Vec::new(),
            train_init: task.default_train_init(),
            eval_init: task.default_eval_init(),
        }
    }

    pub fn with_disturbance(mut self, spec: DisturbanceSpec) -> Self {
        self.disturbances.retain(|d| d.site != spec.site);
        self.disturbances.push(spec);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.task.state_dim();
        if self.max_steps < 1 {
            return Err(config("env.max_steps must be >= 1"));
        }
        self.params.validate().map_err(|e| config(e.to_string()))?;
        match (&self.params, self.task) {
            (ParamSet::CartPole(_), TaskKind::CartPole) | (ParamSet::Quadrotor(_), TaskKind::Quadrotor) => {}
            _ => return Err(config("parameter set does not match the task")),
        }
        self.weights.validate()?;
        if self.weights.state.nrows() != n || self.weights.input.nrows() != self.task.act_dim() {
            return Err(config(format!(
                "weights must be {n}x{n} and {m}x{m} for {}",
                self.task,
                m = self.task.act_dim()
            )));
        }
        if self.train_init.len() != n || self.eval_init.len() != n {
            return Err(config(format!("initial-state ranges must have {n} components")));
        }
        for (lo, hi) in &self.train_init {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(config(format!("initial-state interval [{lo}, {hi}] is invalid")));
            }
        }
        let mut seen = Vec::new();
        for d in &self.disturbances {
            if seen.contains(&d.site) {
                return Err(config(format!("more than one disturbance on site {}", d.site)));
            }
            seen.push(d.site);
            d.bind(self.task.site_dim(d.site), &self.task.default_direction(d.site))?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum SysState {
    CartPole(CartPoleState),
    Quadrotor(QuadrotorState),
}

impl SysState {
    fn to_vec(self) -> Vec<f64> {
        match self {
            SysState::CartPole(s) => s.to_array().to_vec(),
            SysState::Quadrotor(s) => s.to_array().to_vec(),
        }
    }

    fn from_slice(task: TaskKind, v: &[f64]) -> Self {
        match task {
            TaskKind::CartPole => SysState::CartPole(CartPoleState::from_array([v[0], v[1], v[2], v[3]])),
            TaskKind::Quadrotor => {
                SysState::Quadrotor(QuadrotorState::from_array([v[0], v[1], v[2], v[3], v[4], v[5]]))
            }
        }
    }
}

/// Extra inputs injected by a learned adversary, added on top of any
/// configured disturbance.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdversaryInput {
    pub action: Option<Vec<f64>>,
    pub force: Option<ExternalForce>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepInfo {
    pub true_state: Vec<f64>,
    /// Physical input actually applied after action disturbance (and, for the
    /// quadrotor, thrust saturation).
    pub applied_action: Vec<f64>,
    pub external_force: ExternalForce,
    pub cost: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
    pub info: StepInfo,
}

impl Step {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

struct Channel {
    dist: Disturbance,
    rng: Rng,
}

pub struct Env {
    cfg: EnvConfig,
    state: SysState,
    step_index: usize,
    done: bool,
    started: bool,
    channels: Vec<Channel>,
    ret: f64,
    sq_err: f64,
}

const TAG_EPISODE: u64 = tag("episode");
const TAG_INIT: u64 = tag("init");

impl Env {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        let state = SysState::from_slice(cfg.task, &cfg.eval_init);
        Ok(Self {
            cfg,
            state,
            step_index: 0,
            done: true,
            started: false,
            channels: Vec::new(),
            ret: 0.0,
            sq_err: 0.0,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn task(&self) -> TaskKind {
        self.cfg.task
    }

    pub fn obs_dim(&self) -> usize {
        self.cfg.task.obs_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.cfg.task.act_dim()
    }

    pub fn params(&self) -> &ParamSet {
        &self.cfg.params
    }

    /// Replace the physical parameters; only allowed between episodes.
    pub fn set_params(&mut self, params: ParamSet) -> Result<()> {
        if !self.done {
            return Err(Error::Usage("parameters can only change between episodes".into()));
        }
        let old = std::mem::replace(&mut self.cfg.params, params);
        if let Err(e) = self.cfg.validate() {
            self.cfg.params = old;
            return Err(e);
        }
        Ok(())
    }

    pub fn true_state(&self) -> Vec<f64> {
        self.state.to_vec()
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Start an episode. All randomness (initial state, noise) derives from
    /// `(seed, episode)` with one substream per consumer.
    pub fn reset(&mut self, mode: Mode, seed: u64, episode: u64) -> Result<Vec<f64>> {
        let init = match mode {
            Mode::Eval => self.cfg.eval_init.clone(),
            Mode::Train => {
                let mut rng = substream(seed, &[TAG_EPISODE, episode, TAG_INIT]);
                self.cfg
                    .train_init
                    .iter()
                    .map(|&(lo, hi)| if lo == hi { lo } else { rng.random_range(lo..=hi) })
                    .collect()
            }
        };
        self.state = SysState::from_slice(self.cfg.task, &init);
        self.channels = self
            .cfg
            .disturbances
            .iter()
            .map(|spec| {
                let dist = spec.bind(self.cfg.task.site_dim(spec.site), &self.cfg.task.default_direction(spec.site))?;
                let rng = substream(seed, &[TAG_EPISODE, episode, tag(spec.site.name())]);
                Ok(Channel { dist, rng })
            })
            .collect::<Result<_>>()?;
        self.step_index = 0;
        self.done = false;
        self.started = true;
        self.ret = 0.0;
        self.sq_err = 0.0;
        let obs = self.clean_observation();
        Ok(self.disturb(Site::Observation, obs, 0))
    }

    fn sample_site(&mut self, site: Site, i: usize) -> Option<Vec<f64>> {
        self.channels
            .iter_mut()
            .find(|c| c.dist.site() == site)
            .map(|c| c.dist.sample(i, &mut c.rng))
    }

    fn disturb(&mut self, site: Site, nominal: Vec<f64>, i: usize) -> Vec<f64> {
        match self.sample_site(site, i) {
            Some(d) => disturbance::apply(&nominal, &d).expect("dimension checked at bind"),
            None => nominal,
        }
    }

    fn clean_observation(&self) -> Vec<f64> {
        let mut obs = self.state.to_vec();
        if self.cfg.task == TaskKind::Quadrotor {
            let (wx, wz) = reference_waypoint(self.step_index + 1, self.cfg.max_steps);
            obs.push(wx);
            obs.push(wz);
        }
        obs
    }

    /// Goal state for the cost after `step_index` steps have been taken.
    fn goal(&self, step_index: usize) -> (Vec<f64>, Vec<f64>) {
        match &self.cfg.params {
            ParamSet::CartPole(_) => (vec![0.0; 4], vec![0.0]),
            ParamSet::Quadrotor(p) => {
                let h = p.hover_thrust();
                (reference_state(step_index, self.cfg.max_steps).to_vec(), vec![h, h])
            }
        }
    }

    /// Physical input for a normalized action in `[-1, 1]^m`.
    pub fn physical_action(&self, action: &[f64]) -> Vec<f64> {
        match &self.cfg.params {
            ParamSet::CartPole(_) => vec![CART_FORCE_MAX * action[0].clamp(-1.0, 1.0)],
            ParamSet::Quadrotor(p) => action
                .iter()
                .map(|a| 0.5 * (a.clamp(-1.0, 1.0) + 1.0) * p.thrust_max)
                .collect(),
        }
    }

    pub fn step(&mut self, action: &[f64]) -> Result<Step> {
        self.step_with(action, &AdversaryInput::default())
    }

    pub fn step_with(&mut self, action: &[f64], adversary: &AdversaryInput) -> Result<Step> {
        if !self.started || self.done {
            return Err(Error::Usage("step called before reset or after the episode ended".into()));
        }
        if action.len() != self.act_dim() || action.iter().any(|a| !a.is_finite()) {
            return Err(Error::Domain(format!(
                "action must be {} finite values, got {action:?}",
                self.act_dim()
            )));
        }
        let i = self.step_index;

        let mut applied = self.physical_action(action);
        applied = self.disturb(Site::Action, applied, i);
        if let Some(extra) = &adversary.action {
            applied = disturbance::apply(&applied, extra)?;
        }
        let mut force = match self.sample_site(Site::Dynamics, i) {
            Some(d) => ExternalForce::new(d[0], d[1]),
            None => ExternalForce::ZERO,
        };
        if let Some(f) = adversary.force {
            force.fx += f.fx;
            force.fz += f.fz;
        }

        self.state = match (self.state, &self.cfg.params) {
            (SysState::CartPole(s), ParamSet::CartPole(p)) => {
                SysState::CartPole(step_cartpole(&s, applied[0], force, p, DT)?)
            }
            (SysState::Quadrotor(s), ParamSet::Quadrotor(p)) => {
                for t in applied.iter_mut() {
                    *t = t.clamp(0.0, p.thrust_max);
                }
                SysState::Quadrotor(step_quadrotor(&s, (applied[0], applied[1]), force, p, DT)?)
            }
            _ => unreachable!("validated at construction"),
        };
        self.step_index += 1;

        let true_state = self.state.to_vec();
        let (x_goal, u_goal) = self.goal(self.step_index);
        let cost = quadratic_cost(&true_state, &x_goal, &applied, &u_goal, &self.cfg.weights)?;
        let reward = step_reward(cost);
        self.ret += reward;
        self.sq_err += self.tracking_error(&true_state).iter().map(|e| e * e).sum::<f64>();

        let terminated = match self.state {
            SysState::CartPole(s) => CartPoleLimits::default().is_terminal(&s),
            SysState::Quadrotor(s) => QuadrotorLimits::default().is_terminal(&s),
        };
        let truncated = !terminated && self.step_index >= self.cfg.max_steps;
        self.done = terminated || truncated;

        let obs = self.clean_observation();
        let obs = self.disturb(Site::Observation, obs, self.step_index);
        Ok(Step {
            obs,
            reward,
            terminated,
            truncated,
            info: StepInfo {
                true_state,
                applied_action: applied,
                external_force: force,
                cost,
            },
        })
    }

    /// Error vector used by the RMSE metric: full state against the origin
    /// for the cart-pole, position against the waypoint for the quadrotor.
    fn tracking_error(&self, s: &[f64]) -> Vec<f64> {
        match self.cfg.task {
            TaskKind::CartPole => s.to_vec(),
            TaskKind::Quadrotor => {
                let (wx, wz) = reference_waypoint(self.step_index, self.cfg.max_steps);
                vec![s[0] - wx, s[1] - wz]
            }
        }
    }

    /// Summary of the finished (or running) episode.
    pub fn episode_record(&self) -> EpisodeRecord {
        let len = self.step_index.max(1);
        EpisodeRecord {
            ret: self.ret,
            len: self.step_index,
            rmse: (self.sq_err / len as f64).sqrt(),
        }
    }
}

/// RMSE of a recorded trajectory against the task's reference, via the
/// generic metric.
pub fn trajectory_rmse(task: TaskKind, states: &[Vec<f64>], max_steps: usize) -> Result<f64> {
    match task {
        TaskKind::CartPole => {
            let refs = vec![vec![0.0; 4]; states.len()];
            rmse(states, &refs)
        }
        TaskKind::Quadrotor => {
            let pos: Vec<Vec<f64>> = states.iter().map(|s| vec![s[0], s[1]]).collect();
            let refs: Vec<Vec<f64>> = (1..=states.len())
                .map(|k| {
                    let (x, z) = reference_waypoint(k, max_steps);
                    vec![x, z]
                })
                .collect();
            rmse(&pos, &refs)
        }
    }
}
