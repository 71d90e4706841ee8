//! Flat `key = value` experiment configs.
//!
//! One entry per line, `#` starts a comment, lists are comma separated and
//! matrix rows are separated by `;`. Every key has a typed default except
//! `task`; unknown keys are rejected.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;

use crate::agents::{AgentConfig, AgentKind, Channel};
use crate::disturbance::{DisturbanceSpec, DrRange, Interval, ParamRandomization, ParamSet, Site, Waveform};
use crate::env::{EnvConfig, TaskKind};
use crate::error::{config, Error, Result};
use crate::metrics::CostWeights;

/// A problem found while resolving a config, tied to the offending key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// Raw entries in file order, with later overrides replacing earlier values.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigMap {
    entries: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn parse(text: &str) -> std::result::Result<Self, Vec<Diagnostic>> {
        let mut map = ConfigMap::default();
        let mut errs = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = format!("line {}", n + 1);
            let Some((k, v)) = line.split_once('=') else {
                errs.push(Diagnostic {
                    path: at,
                    message: format!("expected 'key = value', got '{line}'"),
                });
                continue;
            };
            let (k, v) = (k.trim(), v.trim());
            if !valid_key(k) {
                errs.push(Diagnostic {
                    path: at,
                    message: format!("invalid key '{k}'"),
                });
            } else if map.entries.insert(k.to_string(), v.to_string()).is_some() {
                errs.push(Diagnostic {
                    path: k.to_string(),
                    message: format!("duplicate key ({at})"),
                });
            }
        }
        if errs.is_empty() {
            Ok(map)
        } else {
            Err(errs)
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !valid_key(key) {
            return Err(Error::Usage(format!("invalid config key '{key}'")));
        }
        self.entries.insert(key.to_string(), value.trim().to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn remove(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

fn valid_key(k: &str) -> bool {
    !k.is_empty()
        && !k.starts_with('.')
        && !k.ends_with('.')
        && k.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_' || c == '.')
}

/// Every key the resolver understands. Also used by the CLI to reject
/// unknown `--key value` overrides up front.
pub const KNOWN_KEYS: &[&str] = &[
    "task",
    "agent.kind",
    "agent.hidden",
    "ppo.clip",
    "ppo.gamma",
    "ppo.lambda",
    "ppo.lr",
    "ppo.epochs",
    "ppo.minibatch",
    "ppo.rollout",
    "ppo.vf_coef",
    "ppo.ent_coef",
    "ppo.max_grad_norm",
    "ppo.init_log_std",
    "sac.gamma",
    "sac.tau",
    "sac.lr",
    "sac.batch",
    "sac.capacity",
    "sac.warmup",
    "sac.updates_per_step",
    "sac.init_alpha",
    "sac.auto_alpha",
    "sac.target_entropy",
    "adversary.population",
    "adversary.channel",
    "adversary.scale",
    "adversary.rollout",
    "wcpg.alpha_min",
    "wcpg.alpha_max",
    "wcpg.eval_alpha",
    "raac.alpha",
    "raac.actor_quantiles",
    "raac.critic_quantiles",
    "dr.range",
    "dr.pole_length",
    "dr.pole_mass",
    "dr.cart_mass",
    "dr.mass",
    "dr.inertia_yy",
    "env.max_steps",
    "env.pole_length",
    "env.pole_mass",
    "env.cart_mass",
    "env.mass",
    "env.inertia_yy",
    "weights.state",
    "weights.input",
    "disturbance.site",
    "disturbance.kind",
    "disturbance.level",
    "disturbance.onset",
    "disturbance.width",
    "disturbance.period",
    "disturbance.direction",
    "train.steps",
    "train.eval_every",
    "train.curve_episodes",
    "train.curve_metric",
    "train.target_return",
    "seeds",
    "eval.episodes",
    "eval.site",
    "eval.kind",
    "eval.level",
    "eval.onset",
    "eval.width",
    "eval.period",
    "eval.direction",
    "sweep.sites",
    "sweep.kind",
    "sweep.levels",
    "sweep.param",
    "heatmap.site",
    "heatmap.kind",
    "heatmap.train_levels",
    "heatmap.test_levels",
    "ablate.kind",
    "output",
    "workers",
];

/// Keys that do not influence results and are left out of the fingerprint.
pub const UNHASHED_KEYS: &[&str] = &["output", "workers"];

pub const DEFAULT_EVAL_EPISODES: usize = 25;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CurveMetric {
    Return,
    Rmse,
}

impl CurveMetric {
    pub fn name(self) -> &'static str {
        match self {
            CurveMetric::Return => "return",
            CurveMetric::Rmse => "rmse",
        }
    }
}

impl FromStr for CurveMetric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "return" => Ok(CurveMetric::Return),
            "rmse" => Ok(CurveMetric::Rmse),
            _ => Err(config(format!("unknown curve metric '{s}'"))),
        }
    }
}

/// Physical parameters that can be swept or overridden by name.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamName {
    PoleLength,
    PoleMass,
    CartMass,
    Mass,
    InertiaYy,
}

impl ParamName {
    pub const ALL: [ParamName; 5] = [
        ParamName::PoleLength,
        ParamName::PoleMass,
        ParamName::CartMass,
        ParamName::Mass,
        ParamName::InertiaYy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamName::PoleLength => "pole_length",
            ParamName::PoleMass => "pole_mass",
            ParamName::CartMass => "cart_mass",
            ParamName::Mass => "mass",
            ParamName::InertiaYy => "inertia_yy",
        }
    }

    pub fn applies_to(self, task: TaskKind) -> bool {
        match self {
            ParamName::PoleLength | ParamName::PoleMass | ParamName::CartMass => task == TaskKind::CartPole,
            ParamName::Mass | ParamName::InertiaYy => task == TaskKind::Quadrotor,
        }
    }

    pub fn set(self, params: &ParamSet, value: f64) -> Result<ParamSet> {
        let mut p = *params;
        match (&mut p, self) {
            (ParamSet::CartPole(c), ParamName::PoleLength) => c.pole_length = value,
            (ParamSet::CartPole(c), ParamName::PoleMass) => c.pole_mass = value,
            (ParamSet::CartPole(c), ParamName::CartMass) => c.cart_mass = value,
            (ParamSet::Quadrotor(q), ParamName::Mass) => q.mass = value,
            (ParamSet::Quadrotor(q), ParamName::InertiaYy) => q.inertia_yy = value,
            _ => return Err(config(format!("parameter {} does not exist for this task", self.name()))),
        }
        Ok(p)
    }
}

impl fmt::Display for ParamName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ParamName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ParamName::ALL
            .iter()
            .copied()
            .find(|p| p.name() == s)
            .ok_or_else(|| config(format!("unknown parameter '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationKind {
    DrRange,
    AdversaryScale,
    CvarAlpha,
}

impl AblationKind {
    pub const ALL: [AblationKind; 3] = [AblationKind::DrRange, AblationKind::AdversaryScale, AblationKind::CvarAlpha];

    pub fn name(self) -> &'static str {
        match self {
            AblationKind::DrRange => "dr_range",
            AblationKind::AdversaryScale => "adversary_scale",
            AblationKind::CvarAlpha => "cvar_alpha",
        }
    }
}

impl fmt::Display for AblationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        AblationKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| config(format!("unknown ablation '{s}'")))
    }
}

/// What a 1-D sweep varies.
#[derive(Clone, Debug, PartialEq)]
pub enum SweepAxis {
    Disturbance { sites: Vec<Site>, kind: Waveform },
    Param(ParamName),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub levels: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapConfig {
    pub site: Site,
    pub kind: Waveform,
    pub train_levels: Vec<f64>,
    pub test_levels: Vec<f64>,
}

/// Fully resolved experiment description.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    pub agents: Vec<AgentKind>,
    pub agent: AgentConfig,
    pub env: EnvConfig,
    /// Injected during training only.
    pub train_disturbance: Option<DisturbanceSpec>,
    pub train_steps: usize,
    pub eval_every: usize,
    pub curve_episodes: usize,
    pub curve_metric: CurveMetric,
    pub target_return: Option<f64>,
    pub seeds: Vec<u64>,
    pub eval_episodes: usize,
    /// Test-time disturbance for the `eval` command.
    pub eval_disturbance: Option<DisturbanceSpec>,
    pub sweep: SweepConfig,
    pub heatmap: HeatmapConfig,
    pub ablation: Option<AblationKind>,
    pub output: String,
    pub workers: usize,
    /// `key = value` pairs with every default filled in, sorted by key.
    resolved: Vec<(String, String)>,
}

/// Default sweep grid for a waveform: noise std 0..1 in steps of 0.1,
/// deterministic magnitudes 0..10 N in steps of 1.
pub fn default_levels(kind: Waveform) -> Vec<f64> {
    if kind.is_noise() {
        (0..=10).map(|i| i as f64 / 10.0).collect()
    } else {
        (0..=10).map(f64::from).collect()
    }
}

pub fn default_train_steps(task: TaskKind) -> usize {
    match task {
        TaskKind::CartPole => 300_000,
        TaskKind::Quadrotor => 500_000,
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> std::result::Result<Self, Vec<Diagnostic>> {
        Self::from_map(&ConfigMap::parse(text)?)
    }

    pub fn from_map(map: &ConfigMap) -> std::result::Result<Self, Vec<Diagnostic>> {
        let mut r = Reader::new(map);
        let cfg = r.resolve();
        let mut diags = r.finish();
        match cfg {
            Some(cfg) if diags.is_empty() => Ok(cfg),
            _ => {
                if diags.is_empty() {
                    diags.push(Diagnostic {
                        path: "task".into(),
                        message: "config could not be resolved".into(),
                    });
                }
                Err(diags)
            }
        }
    }

    pub fn resolved(&self) -> &[(String, String)] {
        &self.resolved
    }

    /// Replaces the seed list (CLI `--seed`).
    pub fn with_seeds(mut self, seeds: Vec<u64>) -> Result<Self> {
        check_seeds(&seeds).map_err(config)?;
        let v = join(&seeds);
        self.set_resolved("seeds", v);
        self.seeds = seeds;
        Ok(self)
    }

    pub fn with_workers(mut self, workers: usize) -> Result<Self> {
        if workers == 0 {
            return Err(config("workers must be >= 1"));
        }
        self.workers = workers;
        self.set_resolved("workers", workers.to_string());
        Ok(self)
    }

    pub fn with_output(mut self, output: &str) -> Self {
        self.output = output.to_string();
        self.set_resolved("output", output.to_string());
        self
    }

    fn set_resolved(&mut self, key: &str, value: String) {
        if let Some(e) = self.resolved.iter_mut().find(|(k, _)| k == key) {
            e.1 = value;
        }
    }

    /// Hex SHA-256 over the resolved entries that affect results.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for (k, v) in &self.resolved {
            if UNHASHED_KEYS.contains(&k.as_str()) {
                continue;
            }
            h.update(k.as_bytes());
            h.update(b"=");
            h.update(v.as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Environment for a training run with the given disturbance.
    pub fn train_env(&self, disturbance: Option<&DisturbanceSpec>) -> EnvConfig {
        with_optional(self.env.clone(), disturbance)
    }
}

/// Adds `spec` unless it is absent or degenerate (level 0 or kind `none`),
/// so that a zero level and no disturbance take the same code path.
pub fn with_optional(env: EnvConfig, spec: Option<&DisturbanceSpec>) -> EnvConfig {
    match spec {
        Some(s) if is_active(s) => env.with_disturbance(s.clone()),
        _ => env,
    }
}

pub fn is_active(spec: &DisturbanceSpec) -> bool {
    spec.kind != Waveform::None && spec.level != 0.0
}

fn check_seeds(seeds: &[u64]) -> std::result::Result<(), String> {
    if seeds.is_empty() {
        return Err("need at least one seed".into());
    }
    let set: BTreeSet<_> = seeds.iter().collect();
    if set.len() != seeds.len() {
        return Err("seeds must be distinct".into());
    }
    Ok(())
}

fn check_increasing(levels: &[f64]) -> std::result::Result<(), String> {
    if levels.is_empty() {
        return Err("level list must not be empty".into());
    }
    if levels.iter().any(|l| !l.is_finite()) {
        return Err("levels must be finite".into());
    }
    if levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err("levels must be strictly increasing".into());
    }
    Ok(())
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn render_matrix(m: &Array2<f64>) -> String {
    let is_diag = m.indexed_iter().all(|((i, j), v)| i == j || *v == 0.0);
    if is_diag {
        join(&m.diag().to_vec())
    } else {
        m.rows().into_iter().map(|r| join(&r.to_vec())).collect::<Vec<_>>().join(";")
    }
}

fn render_opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or("auto".into(), ToString::to_string)
}

/// Key-by-key resolver that records every problem instead of stopping at the
/// first one.
struct Reader<'a> {
    map: &'a ConfigMap,
    used: BTreeSet<String>,
    diags: Vec<Diagnostic>,
    out: BTreeMap<String, String>,
}

impl<'a> Reader<'a> {
    fn new(map: &'a ConfigMap) -> Self {
        Self {
            map,
            used: BTreeSet::new(),
            diags: Vec::new(),
            out: BTreeMap::new(),
        }
    }

    fn err(&mut self, path: &str, message: impl Into<String>) {
        self.diags.push(Diagnostic {
            path: path.to_string(),
            message: message.into(),
        });
    }

    fn raw(&mut self, key: &str) -> Option<&'a str> {
        self.used.insert(key.to_string());
        self.map.get(key)
    }

    fn echo(&mut self, key: &str, value: String) {
        self.out.insert(key.to_string(), value);
    }

    fn parse_one<T: FromStr>(&mut self, key: &str, s: &str) -> Option<T>
    where
        T::Err: fmt::Display,
    {
        match s.parse::<T>() {
            Ok(v) => Some(v),
            Err(e) => {
                self.err(key, format!("cannot parse '{s}': {e}"));
                None
            }
        }
    }

    fn value<T: FromStr + ToString>(&mut self, key: &str, default: T) -> T
    where
        T::Err: fmt::Display,
    {
        let v = match self.raw(key) {
            Some(s) => self.parse_one(key, s).unwrap_or(default),
            None => default,
        };
        self.echo(key, v.to_string());
        v
    }

    /// `auto` (or absent) maps to `None`.
    fn optional<T: FromStr + ToString>(&mut self, key: &str, default: Option<T>) -> Option<T>
    where
        T::Err: fmt::Display,
    {
        let v = match self.raw(key) {
            Some("auto") | Some("none") => None,
            Some(s) => self.parse_one(key, s).or(default),
            None => default,
        };
        self.echo(key, render_opt(&v));
        v
    }

    fn list<T: FromStr + ToString + Clone>(&mut self, key: &str, default: Vec<T>) -> Vec<T>
    where
        T::Err: fmt::Display,
    {
        let v = match self.raw(key) {
            Some(s) => {
                let parts: Option<Vec<T>> = s.split(',').map(|p| self.parse_one(key, p.trim())).collect();
                parts.unwrap_or(default)
            }
            None => default,
        };
        self.echo(key, join(&v));
        v
    }

    fn positive(&mut self, key: &str, default: f64) -> f64 {
        let v = self.value(key, default);
        if !(v > 0.0 && v.is_finite()) {
            self.err(key, format!("must be positive, got {v}"));
        }
        v
    }

    fn fraction(&mut self, key: &str, default: f64) -> f64 {
        let v = self.value(key, default);
        if !(v > 0.0 && v <= 1.0) {
            self.err(key, format!("must lie in (0, 1], got {v}"));
        }
        v
    }

    fn count(&mut self, key: &str, default: usize, min: usize) -> usize {
        let v = self.value(key, default);
        if v < min {
            self.err(key, format!("must be >= {min}, got {v}"));
        }
        v
    }

    fn levels(&mut self, key: &str, default: Vec<f64>) -> Vec<f64> {
        let v = self.list(key, default);
        if let Err(e) = check_increasing(&v) {
            self.err(key, e);
        }
        if v.iter().any(|l| *l < 0.0) {
            self.err(key, "levels must be non-negative");
        }
        v
    }

    fn matrix(&mut self, key: &str, default: &Array2<f64>) -> Array2<f64> {
        let Some(s) = self.raw(key) else {
            self.echo(key, render_matrix(default));
            return default.clone();
        };
        let rows: Option<Vec<Vec<f64>>> = s
            .split(';')
            .map(|r| r.split(',').map(|p| self.parse_one::<f64>(key, p.trim())).collect())
            .collect();
        let Some(rows) = rows else {
            return default.clone();
        };
        let m = if rows.len() == 1 {
            Array2::from_diag(&ndarray::Array1::from(rows[0].clone()))
        } else {
            let n = rows.len();
            if rows.iter().any(|r| r.len() != n) {
                self.err(key, format!("expected {n} rows of {n} values"));
                return default.clone();
            }
            Array2::from_shape_fn((n, n), |(i, j)| rows[i][j])
        };
        self.echo(key, render_matrix(&m));
        m
    }

    fn interval(&mut self, key: &str, default: Interval) -> Interval {
        let v = self.list(key, vec![default.lo, default.hi]);
        if v.len() != 2 {
            self.err(key, "expected 'lo,hi'");
            return default;
        }
        let i = Interval::new(v[0], v[1]);
        if let Err(e) = i.validate(key) {
            self.err(key, strip_prefix(&e));
        }
        i
    }

    fn disturbance(&mut self, prefix: &str, task: TaskKind) -> Option<DisturbanceSpec> {
        let k = |s: &str| format!("{prefix}.{s}");
        let site_key = k("site");
        let site: Option<Site> = self.optional(&site_key, None);
        let mut spec = DisturbanceSpec::new(site.unwrap_or(Site::Observation), Waveform::None, 0.0);
        let kind: Waveform = self.value(&k("kind"), if site.is_some() { Waveform::WhiteNoise } else { Waveform::None });
        let level: f64 = self.value(&k("level"), 0.0);
        let onset = self.value(&k("onset"), spec.onset);
        let width = self.value(&k("width"), spec.width);
        let period = self.value(&k("period"), spec.period);
        let direction: Option<Vec<f64>> = match self.raw(&k("direction")) {
            None | Some("auto") => None,
            Some(s) => s.split(',').map(|p| self.parse_one(&k("direction"), p.trim())).collect(),
        };
        self.echo(&k("direction"), direction.as_ref().map_or("auto".into(), |d| join(d)));
        let Some(site) = site else {
            let idle = |v: &str| v == "none" || v.parse::<f64>() == Ok(0.0);
            for extra in ["kind", "level"] {
                if self.map.get(&k(extra)).is_some_and(|v| !idle(v)) {
                    self.err(&site_key, format!("required when {} is set", k(extra)));
                }
            }
            return None;
        };
        spec.site = site;
        spec.kind = kind;
        spec.level = level;
        spec.onset = onset;
        spec.width = width;
        spec.period = period;
        spec.direction = direction;
        if let Err(e) = spec.validate() {
            // messages name the offending field as `disturbance.<field>`
            let msg = strip_prefix(&e);
            let field = ["level", "width", "period", "direction"]
                .into_iter()
                .find(|f| msg.starts_with(&format!("disturbance.{f}")))
                .unwrap_or("level");
            self.err(&k(field), msg);
        } else if let Err(e) = spec.bind(task.site_dim(site), &task.default_direction(site)) {
            self.err(&k("direction"), strip_prefix(&e));
        }
        Some(spec)
    }

    fn resolve(&mut self) -> Option<ExperimentConfig> {
        let task: Option<TaskKind> = match self.raw("task") {
            Some(s) => self.parse_one("task", s),
            None => {
                self.err("task", "missing required key");
                None
            }
        };
        let task = task?;
        self.echo("task", task.to_string());

        let agents: Vec<AgentKind> = self.list("agent.kind", vec![AgentKind::Ppo]);
        if agents.is_empty() {
            self.err("agent.kind", "need at least one agent");
        }
        let mut agent = AgentConfig {
            hidden: self.list("agent.hidden", vec![64, 64]),
            ..AgentConfig::default()
        };
        if agent.hidden.contains(&0) {
            self.err("agent.hidden", "layer widths must be >= 1");
        }

        let d = agent.ppo.clone();
        agent.ppo.clip = self.positive("ppo.clip", d.clip);
        agent.ppo.gamma = self.fraction("ppo.gamma", d.gamma);
        agent.ppo.lambda = self.fraction("ppo.lambda", d.lambda);
        agent.ppo.lr = self.positive("ppo.lr", d.lr);
        agent.ppo.epochs = self.count("ppo.epochs", d.epochs, 1);
        agent.ppo.minibatch = self.count("ppo.minibatch", d.minibatch, 1);
        agent.ppo.rollout = self.count("ppo.rollout", d.rollout, 1);
        agent.ppo.vf_coef = self.value("ppo.vf_coef", d.vf_coef);
        agent.ppo.ent_coef = self.value("ppo.ent_coef", d.ent_coef);
        agent.ppo.max_grad_norm = self.optional("ppo.max_grad_norm", d.max_grad_norm);
        agent.ppo.init_log_std = self.value("ppo.init_log_std", d.init_log_std);
        if let Err(e) = agent.ppo.validate() {
            self.err("ppo", strip_prefix(&e));
        }

        let d = agent.sac.clone();
        agent.sac.gamma = self.fraction("sac.gamma", d.gamma);
        agent.sac.tau = self.fraction("sac.tau", d.tau);
        agent.sac.lr = self.positive("sac.lr", d.lr);
        agent.sac.batch = self.count("sac.batch", d.batch, 1);
        agent.sac.capacity = self.count("sac.capacity", d.capacity, 1);
        agent.sac.warmup = self.value("sac.warmup", d.warmup);
        agent.sac.updates_per_step = self.count("sac.updates_per_step", d.updates_per_step, 1);
        agent.sac.init_alpha = self.positive("sac.init_alpha", d.init_alpha);
        agent.sac.auto_alpha = self.value("sac.auto_alpha", d.auto_alpha);
        agent.sac.target_entropy = self.optional("sac.target_entropy", d.target_entropy);
        if let Err(e) = agent.sac.validate() {
            self.err("sac", strip_prefix(&e));
        }

        let d = agent.adversarial.clone();
        agent.adversarial.population = self.count("adversary.population", d.population, 1);
        agent.adversarial.channel = self.optional::<Channel>("adversary.channel", d.channel);
        agent.adversarial.scale = self.value("adversary.scale", d.scale);
        agent.adversarial.rollout = self.optional("adversary.rollout", d.rollout);
        if let Err(e) = agent.adversarial.validate() {
            self.err("adversary", strip_prefix(&e));
        }

        let d = agent.wcpg.clone();
        agent.wcpg.alpha_min = self.fraction("wcpg.alpha_min", d.alpha_min);
        agent.wcpg.alpha_max = self.fraction("wcpg.alpha_max", d.alpha_max);
        agent.wcpg.eval_alpha = self.optional("wcpg.eval_alpha", d.eval_alpha);
        if let Err(e) = agent.wcpg.validate() {
            self.err("wcpg", strip_prefix(&e));
        }

        let d = agent.raac.clone();
        agent.raac.alpha = self.fraction("raac.alpha", d.alpha);
        agent.raac.actor_quantiles = self.count("raac.actor_quantiles", d.actor_quantiles, 1);
        agent.raac.critic_quantiles = self.count("raac.critic_quantiles", d.critic_quantiles, 1);
        if let Err(e) = agent.raac.validate() {
            self.err("raac", strip_prefix(&e));
        }

        let mut env = EnvConfig::new(task);
        env.max_steps = self.count("env.max_steps", env.max_steps, 1);
        for p in ParamName::ALL.into_iter().filter(|p| p.applies_to(task)) {
            let key = format!("env.{p}");
            let current = match (env.params, p) {
                (ParamSet::CartPole(c), ParamName::PoleLength) => c.pole_length,
                (ParamSet::CartPole(c), ParamName::PoleMass) => c.pole_mass,
                (ParamSet::CartPole(c), ParamName::CartMass) => c.cart_mass,
                (ParamSet::Quadrotor(q), ParamName::Mass) => q.mass,
                (ParamSet::Quadrotor(q), ParamName::InertiaYy) => q.inertia_yy,
                _ => unreachable!("filtered by task"),
            };
            let v = self.positive(&key, current);
            env.params = p.set(&env.params, v).expect("parameter applies to task");
        }
        let state = self.matrix("weights.state", &env.weights.state);
        let input = self.matrix("weights.input", &env.weights.input);
        env.weights = CostWeights { state, input };
        if let Err(e) = env.weights.validate() {
            let path = if e.to_string().contains("weights.input") { "weights.input" } else { "weights.state" };
            self.err(path, strip_prefix(&e));
        }
        let (n, m) = (task.state_dim(), task.act_dim());
        if env.weights.state.nrows() != n {
            self.err("weights.state", format!("must be {n}x{n} for {task}"));
        }
        if env.weights.input.nrows() != m {
            self.err("weights.input", format!("must be {m}x{m} for {task}"));
        }

        agent.dr = Some(match task {
            TaskKind::CartPole => {
                let range: DrRange = self.value_with("dr.range", DrRange::Mid, |r| r.name().to_string());
                let ParamRandomization::CartPole {
                    pole_length,
                    pole_mass,
                    cart_mass,
                } = ParamRandomization::cartpole(range)
                else {
                    unreachable!("cart-pole preset")
                };
                ParamRandomization::CartPole {
                    pole_length: self.interval("dr.pole_length", pole_length),
                    pole_mass: self.interval("dr.pole_mass", pole_mass),
                    cart_mass: self.interval("dr.cart_mass", cart_mass),
                }
            }
            TaskKind::Quadrotor => {
                let ParamSet::Quadrotor(q) = env.params else {
                    unreachable!("quadrotor params")
                };
                ParamRandomization::Quadrotor {
                    mass: self.interval("dr.mass", Interval::new(0.5 * q.mass, 1.5 * q.mass)),
                    inertia_yy: self.interval("dr.inertia_yy", Interval::new(0.5 * q.inertia_yy, 1.5 * q.inertia_yy)),
                }
            }
        });

        let train_disturbance = self.disturbance("disturbance", task);
        let eval_disturbance = self.disturbance("eval", task);

        let train_steps = self.value("train.steps", default_train_steps(task));
        let eval_every = self.count("train.eval_every", 10_000, 1);
        let curve_episodes = self.count("train.curve_episodes", 5, 1);
        let default_metric = match task {
            TaskKind::CartPole => CurveMetric::Return,
            TaskKind::Quadrotor => CurveMetric::Rmse,
        };
        let curve_metric = self.value_with("train.curve_metric", default_metric, |m| m.name().to_string());
        let target_return: Option<f64> = self.optional("train.target_return", None);
        if let Some(t) = target_return {
            if !(t > 0.0 && t <= 1.0) {
                self.err("train.target_return", format!("must lie in (0, 1], got {t}"));
            }
        }

        let seeds: Vec<u64> = self.list("seeds", vec![1, 2, 3]);
        if let Err(e) = check_seeds(&seeds) {
            self.err("seeds", e);
        }
        let eval_episodes = self.count("eval.episodes", DEFAULT_EVAL_EPISODES, 1);

        let sweep_kind: Waveform = self.value("sweep.kind", Waveform::WhiteNoise);
        let sweep_param: Option<ParamName> = self.optional("sweep.param", None);
        let sweep_sites: Vec<Site> = self.list("sweep.sites", Site::ALL.to_vec());
        let axis = match sweep_param {
            Some(p) => {
                if !p.applies_to(task) {
                    self.err("sweep.param", format!("{p} is not a {task} parameter"));
                }
                SweepAxis::Param(p)
            }
            None => {
                if sweep_sites.is_empty() {
                    self.err("sweep.sites", "need at least one site");
                }
                if sweep_kind == Waveform::None {
                    self.err("sweep.kind", "sweeping 'none' is meaningless");
                }
                SweepAxis::Disturbance {
                    sites: sweep_sites,
                    kind: sweep_kind,
                }
            }
        };
        let sweep_default = match &axis {
            SweepAxis::Disturbance { kind, .. } => default_levels(*kind),
            SweepAxis::Param(_) => vec![0.25, 0.5, 1.0, 1.5, 2.0],
        };
        let sweep_levels = self.levels("sweep.levels", sweep_default);
        if let SweepAxis::Param(_) = axis {
            if sweep_levels.first().is_some_and(|l| *l <= 0.0) {
                self.err("sweep.levels", "parameter values must be positive");
            }
        }

        let heatmap_site: Site = self.value("heatmap.site", Site::Dynamics);
        let heatmap_kind: Waveform = self.value("heatmap.kind", Waveform::WhiteNoise);
        let heatmap_train = self.levels("heatmap.train_levels", default_levels(heatmap_kind));
        let heatmap_test = self.levels("heatmap.test_levels", default_levels(heatmap_kind));

        let ablation: Option<AblationKind> = self.optional("ablate.kind", None);
        if ablation == Some(AblationKind::DrRange) && task != TaskKind::CartPole {
            self.err("ablate.kind", "the randomization-range presets exist for cart-pole only");
        }

        let output: String = self.value("output", "results".to_string());
        let workers = self.count("workers", 1, 1);

        for (k, _) in self.map.iter() {
            if !self.used.contains(k) {
                let msg = if KNOWN_KEYS.contains(&k) {
                    format!("does not apply to task {task}")
                } else {
                    "unknown key".to_string()
                };
                self.err(k, msg);
            }
        }

        let mut env_check = env.clone();
        if let Some(s) = &train_disturbance {
            env_check = with_optional(env_check, Some(s));
        }
        if self.diags.is_empty() {
            if let Err(e) = env_check.validate() {
                self.err("env", strip_prefix(&e));
            }
        }

        Some(ExperimentConfig {
            task,
            agents,
            agent,
            env,
            train_disturbance,
            train_steps,
            eval_every,
            curve_episodes,
            curve_metric,
            target_return,
            seeds,
            eval_episodes,
            eval_disturbance,
            sweep: SweepConfig {
                axis,
                levels: sweep_levels,
            },
            heatmap: HeatmapConfig {
                site: heatmap_site,
                kind: heatmap_kind,
                train_levels: heatmap_train,
                test_levels: heatmap_test,
            },
            ablation,
            output,
            workers,
            resolved: self.out.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
        })
    }

    fn value_with<T: FromStr>(&mut self, key: &str, default: T, show: impl Fn(&T) -> String) -> T
    where
        T::Err: fmt::Display,
    {
        let v = match self.raw(key) {
            Some(s) => self.parse_one(key, s).unwrap_or(default),
            None => default,
        };
        self.echo(key, show(&v));
        v
    }

    fn finish(self) -> Vec<Diagnostic> {
        self.diags
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) | Error::Domain(m) => m.clone(),
        other => other.to_string(),
    }
}
