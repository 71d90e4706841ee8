//! Experiment orchestration: training runs with learning curves, evaluation,
//! 1-D sweeps, train x test heat maps and ablations, executed as independent
//! jobs on a bounded worker pool.

pub mod config;
pub mod persist;
pub mod plot;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::agents::{build_agent, ActorSnapshot, AgentConfig, AgentKind, Policy, TrainLoop, WcpgConfig};
use crate::disturbance::{DisturbanceSpec, DrRange, ParamRandomization, Site, Waveform};
use crate::env::{Env, EnvConfig, Mode};
use crate::error::{config, Error, Result};
use crate::metrics::{mean, std_dev, EpisodeRecord, EvalSummary};
use perturbrl_nn::Checkpoint;

pub use config::{AblationKind, ConfigMap, CurveMetric, Diagnostic, ExperimentConfig, ParamName, SweepAxis};
pub use persist::{load, persist, AblationCell, CurvePoint, EvalRecord, Manifest, ResultSet, Status};

/// Runs `N` evaluation episodes of the deterministic policy from the fixed
/// evaluation initial state. Episode `e` draws its noise from substream
/// `(seed, e)`.
pub fn evaluate(policy: &ActorSnapshot, env_cfg: &EnvConfig, seed: u64, n: usize) -> Result<EvalSummary> {
    if policy.task != env_cfg.task {
        return Err(config(format!(
            "checkpoint was trained on {} but the environment is {}",
            policy.task, env_cfg.task
        )));
    }
    let mut env = Env::new(env_cfg.clone())?;
    let mut episodes = Vec::with_capacity(n);
    for e in 0..n as u64 {
        let mut obs = env.reset(Mode::Eval, seed, e)?;
        loop {
            let step = env.step(&policy.act(&obs)?)?;
            if step.done() {
                break;
            }
            obs = step.obs;
        }
        episodes.push(env.episode_record());
    }
    EvalSummary::new(episodes)
}

/// Outcome of one training run.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub agent: AgentKind,
    pub seed: u64,
    /// Absent when training diverged.
    pub snapshot: Option<ActorSnapshot>,
    /// `(environment steps, metric)` from the start of training.
    pub curve: Vec<(usize, f64)>,
    pub steps: usize,
    pub failure: Option<String>,
}

impl RunOutcome {
    pub fn status(&self) -> Status {
        if self.snapshot.is_some() {
            Status::Ok
        } else {
            Status::Failed
        }
    }
}

fn curve_value(metric: CurveMetric, s: &EvalSummary) -> f64 {
    match metric {
        CurveMetric::Return => s.mean_return(),
        CurveMetric::Rmse => s.mean_rmse(),
    }
}

/// Trains one agent for `steps` environment steps (fewer if the configured
/// target return is reached), logging the curve metric every
/// `cfg.eval_every` steps on the training environment.
pub fn train_run(
    cfg: &ExperimentConfig,
    kind: AgentKind,
    agent_cfg: &AgentConfig,
    seed: u64,
    disturbance: Option<&DisturbanceSpec>,
    steps: usize,
) -> Result<RunOutcome> {
    let env_cfg = cfg.train_env(disturbance);
    let mut agent = build_agent(kind, cfg.task, agent_cfg, seed)?;
    let probe = |snap: &ActorSnapshot| -> Result<EvalSummary> { evaluate(snap, &env_cfg, seed, cfg.curve_episodes) };

    let mut curve = vec![(0, curve_value(cfg.curve_metric, &probe(&agent.snapshot()?)?))];
    let mut reached = false;
    let (result, used) = {
        let mut observer = |step: usize, snap: &ActorSnapshot| -> Result<bool> {
            let s = probe(snap)?;
            curve.push((step, curve_value(cfg.curve_metric, &s)));
            reached = cfg.target_return.is_some_and(|t| s.mean_return() >= t);
            Ok(reached)
        };
        let env = Env::new(env_cfg.clone())?;
        let mut ctx = TrainLoop::new(env, seed, steps).with_observer(cfg.eval_every, &mut observer);
        let r = agent.train(&mut ctx);
        (r, ctx.steps())
    };

    let failure = match result {
        Ok(()) => None,
        Err(Error::Diverged(m)) => Some(m),
        Err(e) => return Err(e),
    };
    let snapshot = match failure {
        None => {
            let snap = agent.snapshot()?;
            if !snap.store.all_finite() {
                return Ok(RunOutcome {
                    agent: kind,
                    seed,
                    snapshot: None,
                    curve,
                    steps: used,
                    failure: Some("policy parameters are non-finite".into()),
                });
            }
            if !reached && curve.last().map(|c| c.0) != Some(used) {
                curve.push((used, curve_value(cfg.curve_metric, &probe(&snap)?)));
            }
            Some(snap)
        }
        Some(_) => None,
    };
    Ok(RunOutcome {
        agent: kind,
        seed,
        snapshot,
        curve,
        steps: used,
        failure,
    })
}

/// Mean and spread over seeds at each logged step; `n_seeds` counts the
/// runs that reached that step.
pub fn aggregate_curves(curves: &[&[(usize, f64)]]) -> Vec<CurvePoint> {
    let mut by_step: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for c in curves {
        for &(s, v) in c.iter() {
            by_step.entry(s).or_default().push(v);
        }
    }
    by_step
        .into_iter()
        .map(|(step, vs)| CurvePoint {
            step,
            mean: mean(&vs),
            std: std_dev(&vs),
            n_seeds: vs.len(),
        })
        .collect()
}

/// Executes independent jobs on `workers` threads; results keep job order,
/// so output does not depend on the worker count.
pub fn run_jobs<J, R, F>(workers: usize, jobs: &[J], f: F) -> Result<Vec<R>>
where
    J: Sync,
    R: Send,
    F: Fn(&J) -> Result<R> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Usage(format!("cannot start worker pool: {e}")))?;
    pool.install(|| jobs.par_iter().map(&f).collect())
}

/// A named test environment for one evaluation cell.
#[derive(Clone, Debug, PartialEq)]
pub struct TestCondition {
    pub name: String,
    pub site: String,
    pub kind: String,
    pub level: String,
    pub param_overrides: String,
    pub env: EnvConfig,
}

impl TestCondition {
    pub fn clean(base: &EnvConfig) -> Self {
        Self {
            name: "default".into(),
            site: "none".into(),
            kind: "none".into(),
            level: "0".into(),
            param_overrides: String::new(),
            env: base.clone(),
        }
    }

    pub fn disturbance(base: &EnvConfig, spec: &DisturbanceSpec) -> Self {
        Self {
            name: format!("{} {} {}", spec.site, spec.kind, spec.level),
            site: spec.site.to_string(),
            kind: spec.kind.to_string(),
            level: spec.level.to_string(),
            param_overrides: String::new(),
            env: config::with_optional(base.clone(), Some(spec)),
        }
    }

    pub fn param(base: &EnvConfig, p: ParamName, value: f64) -> Result<Self> {
        let mut env = base.clone();
        env.params = p.set(&env.params, value)?;
        Ok(Self {
            name: format!("{p}={value}"),
            site: "none".into(),
            kind: "none".into(),
            level: value.to_string(),
            param_overrides: format!("{p}={value}"),
            env,
        })
    }

    fn record(&self, run: &RunOutcome, label: &str, train_level: f64, n: usize) -> Result<EvalRecord> {
        let (episodes, status) = match &run.snapshot {
            Some(snap) => (evaluate(snap, &self.env, run.seed, n)?.episodes, Status::Ok),
            None => (Vec::new(), Status::Failed),
        };
        Ok(EvalRecord {
            task: self.env.task,
            agent: label.to_string(),
            seed: run.seed,
            site: self.site.clone(),
            kind: self.kind.clone(),
            train_level,
            test_level: self.level.clone(),
            param_overrides: self.param_overrides.clone(),
            episodes,
            status,
        })
    }
}

fn level_of(spec: Option<&DisturbanceSpec>) -> f64 {
    spec.filter(|s| config::is_active(s)).map_or(0.0, |s| s.level)
}

/// Everything `train` produces.
#[derive(Clone, Debug)]
pub struct TrainReport {
    pub runs: Vec<RunOutcome>,
    /// Clean-environment evaluation of each final policy.
    pub records: Vec<EvalRecord>,
    pub curves: Vec<(AgentKind, Vec<CurvePoint>)>,
}

pub fn run_train(cfg: &ExperimentConfig) -> Result<TrainReport> {
    let jobs: Vec<(AgentKind, u64)> = cfg
        .agents
        .iter()
        .flat_map(|&a| cfg.seeds.iter().map(move |&s| (a, s)))
        .collect();
    let dist = cfg.train_disturbance.as_ref();
    let clean = TestCondition::clean(&cfg.env);
    let out = run_jobs(cfg.workers, &jobs, |&(kind, seed)| {
        let run = train_run(cfg, kind, &cfg.agent, seed, dist, cfg.train_steps)?;
        let rec = clean.record(&run, kind.name(), level_of(dist), cfg.eval_episodes)?;
        Ok((run, rec))
    })?;
    let (runs, records): (Vec<_>, Vec<_>) = out.into_iter().unzip();
    let curves = cfg
        .agents
        .iter()
        .map(|&a| {
            let cs: Vec<&[(usize, f64)]> = runs.iter().filter(|r| r.agent == a).map(|r| r.curve.as_slice()).collect();
            (a, aggregate_curves(&cs))
        })
        .collect();
    Ok(TrainReport { runs, records, curves })
}

/// Evaluates saved policies under the config's `eval.*` disturbance, once
/// per configured seed.
pub fn run_eval(cfg: &ExperimentConfig, policies: &[ActorSnapshot]) -> Result<Vec<EvalRecord>> {
    let cond = match &cfg.eval_disturbance {
        Some(spec) if config::is_active(spec) => TestCondition::disturbance(&cfg.env, spec),
        _ => TestCondition::clean(&cfg.env),
    };
    let jobs: Vec<(&ActorSnapshot, u64)> = policies
        .iter()
        .flat_map(|p| cfg.seeds.iter().map(move |&s| (p, s)))
        .collect();
    run_jobs(cfg.workers, &jobs, |&(p, seed)| {
        let run = RunOutcome {
            agent: p.kind,
            seed,
            snapshot: Some(p.clone()),
            curve: Vec::new(),
            steps: 0,
            failure: None,
        };
        cond.record(&run, p.kind.name(), 0.0, cfg.eval_episodes)
    })
}

/// Test conditions of a 1-D sweep, grouped by site and sorted by level.
pub fn sweep_conditions(cfg: &ExperimentConfig) -> Result<Vec<TestCondition>> {
    match &cfg.sweep.axis {
        SweepAxis::Disturbance { sites, kind } => Ok(sites
            .iter()
            .flat_map(|&site| {
                cfg.sweep
                    .levels
                    .iter()
                    .map(move |&l| TestCondition::disturbance(&cfg.env, &DisturbanceSpec::new(site, *kind, l)))
            })
            .collect()),
        SweepAxis::Param(p) => cfg
            .sweep
            .levels
            .iter()
            .map(|&v| TestCondition::param(&cfg.env, *p, v))
            .collect(),
    }
}

/// Evaluates one trained policy on every condition.
pub fn sweep_1d(run: &RunOutcome, conditions: &[TestCondition], train_level: f64, n: usize) -> Result<Vec<EvalRecord>> {
    conditions
        .iter()
        .map(|c| c.record(run, run.agent.name(), train_level, n))
        .collect()
}

/// Trains each agent and seed (with the configured training disturbance, if
/// any) and evaluates it on the sweep grid.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<EvalRecord>> {
    let conds = sweep_conditions(cfg)?;
    let jobs: Vec<(AgentKind, u64)> = cfg
        .agents
        .iter()
        .flat_map(|&a| cfg.seeds.iter().map(move |&s| (a, s)))
        .collect();
    let dist = cfg.train_disturbance.as_ref();
    let out = run_jobs(cfg.workers, &jobs, |&(kind, seed)| {
        let run = train_run(cfg, kind, &cfg.agent, seed, dist, cfg.train_steps)?;
        sweep_1d(&run, &conds, level_of(dist), cfg.eval_episodes)
    })?;
    Ok(out.into_iter().flatten().collect())
}

/// One agent per train level (white noise of that level injected while
/// training), evaluated on every test level at the same site. Train level 0
/// is the clean agent, so that row matches `run_sweep` on the same site.
pub fn run_heatmap(cfg: &ExperimentConfig) -> Result<Vec<EvalRecord>> {
    let h = &cfg.heatmap;
    let conds: Vec<TestCondition> = h
        .test_levels
        .iter()
        .map(|&l| TestCondition::disturbance(&cfg.env, &DisturbanceSpec::new(h.site, h.kind, l)))
        .collect();
    let mut jobs = Vec::new();
    for &a in &cfg.agents {
        for &tl in &h.train_levels {
            for &s in &cfg.seeds {
                jobs.push((a, tl, s));
            }
        }
    }
    let out = run_jobs(cfg.workers, &jobs, |&(kind, tl, seed)| {
        let spec = DisturbanceSpec::new(h.site, h.kind, tl);
        let run = train_run(cfg, kind, &cfg.agent, seed, Some(&spec), cfg.train_steps)?;
        sweep_1d(&run, &conds, tl, cfg.eval_episodes)
    })?;
    Ok(out.into_iter().flatten().collect())
}

/// A trained configuration compared in an ablation table.
#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    pub label: String,
    pub kind: AgentKind,
    pub agent: AgentConfig,
}

pub const ADVERSARY_SCALES: [f64; 4] = [0.01, 0.1, 0.5, 1.0];
pub const CVAR_ALPHAS: [f64; 4] = [0.1, 0.3, 0.5, 1.0];
pub const MISMATCH_SCALES: [f64; 2] = [1.5, 8.0];
/// Observation noise half-width and action noise std (N) of the combined
/// noise condition.
pub const OBS_NOISE: f64 = 0.05;
pub const ACT_NOISE: f64 = 1.0;
/// Half-width (N) of the uniform tap force on the dynamics site.
pub const TAP_FORCE: f64 = 1.0;

/// The PPO baseline followed by the swept variants, in table-column order.
pub fn ablation_variants(kind: AblationKind, base: &AgentConfig) -> Vec<Variant> {
    let mut out = vec![Variant {
        label: "ppo".into(),
        kind: AgentKind::Ppo,
        agent: base.clone(),
    }];
    match kind {
        AblationKind::DrRange => {
            for r in DrRange::ALL {
                out.push(Variant {
                    label: format!("ppo_dr[{}]", r.name()),
                    kind: AgentKind::PpoDr,
                    agent: AgentConfig {
                        dr: Some(ParamRandomization::cartpole(r)),
                        ..base.clone()
                    },
                });
            }
        }
        AblationKind::AdversaryScale => {
            for k in [AgentKind::Rarl, AgentKind::Rap] {
                for s in ADVERSARY_SCALES {
                    let mut a = base.clone();
                    a.adversarial.scale = s;
                    out.push(Variant {
                        label: format!("{k}[scale={s}]"),
                        kind: k,
                        agent: a,
                    });
                }
            }
        }
        AblationKind::CvarAlpha => {
            for k in [AgentKind::Wcpg, AgentKind::Raac] {
                for alpha in CVAR_ALPHAS {
                    let mut a = base.clone();
                    match k {
                        AgentKind::Wcpg => a.wcpg = WcpgConfig::fixed(alpha),
                        _ => a.raac.alpha = alpha,
                    }
                    out.push(Variant {
                        label: format!("{k}[alpha={alpha}]"),
                        kind: k,
                        agent: a,
                    });
                }
            }
        }
    }
    out
}

/// Table rows: nominal, parameters x1.5 and x8, combined observation and
/// action noise, and a tap force.
pub fn ablation_conditions(base: &EnvConfig) -> Vec<TestCondition> {
    let mut out = vec![TestCondition::clean(base)];
    for f in MISMATCH_SCALES {
        let mut env = base.clone();
        env.params = env.params.scaled(f);
        out.push(TestCondition {
            name: format!("params x{f}"),
            site: "none".into(),
            kind: "none".into(),
            level: "0".into(),
            param_overrides: format!("scale={f}"),
            env,
        });
    }
    let obs = DisturbanceSpec::new(Site::Observation, Waveform::UniformNoise, OBS_NOISE);
    let act = DisturbanceSpec::new(Site::Action, Waveform::WhiteNoise, ACT_NOISE);
    out.push(TestCondition {
        name: "obs + act noise".into(),
        site: "obs+act".into(),
        kind: "uniform+white".into(),
        level: format!("{OBS_NOISE}+{ACT_NOISE}"),
        param_overrides: String::new(),
        env: base.clone().with_disturbance(obs).with_disturbance(act),
    });
    let tap = DisturbanceSpec::new(Site::Dynamics, Waveform::UniformNoise, TAP_FORCE);
    out.push(TestCondition {
        name: "tap force".into(),
        ..TestCondition::disturbance(base, &tap)
    });
    out
}

#[derive(Clone, Debug)]
pub struct AblationReport {
    pub kind: AblationKind,
    pub records: Vec<EvalRecord>,
    /// Condition-major, variants in column order.
    pub table: Vec<AblationCell>,
}

pub fn run_ablate(cfg: &ExperimentConfig) -> Result<AblationReport> {
    let kind = cfg
        .ablation
        .ok_or_else(|| config("ablate needs ablate.kind (dr_range, adversary_scale or cvar_alpha)"))?;
    let variants = ablation_variants(kind, &cfg.agent);
    let conds = ablation_conditions(&cfg.env);
    let mut jobs = Vec::new();
    for v in &variants {
        for &s in &cfg.seeds {
            jobs.push((v, s));
        }
    }
    let out = run_jobs(cfg.workers, &jobs, |&(v, seed)| {
        let run = train_run(cfg, v.kind, &v.agent, seed, None, cfg.train_steps)?;
        conds
            .iter()
            .map(|c| c.record(&run, &v.label, 0.0, cfg.eval_episodes))
            .collect::<Result<Vec<_>>>()
    })?;
    let records: Vec<EvalRecord> = out.into_iter().flatten().collect();
    let table = ablation_table(&conds, &variants, &records, cfg.seeds.len());
    Ok(AblationReport { kind, records, table })
}

/// Pools episodes over seeds for every condition x variant cell.
/// `records` must be variant-major, then seed, then condition.
pub fn ablation_table(
    conds: &[TestCondition],
    variants: &[Variant],
    records: &[EvalRecord],
    n_seeds: usize,
) -> Vec<AblationCell> {
    let mut cells = Vec::new();
    for (ci, c) in conds.iter().enumerate() {
        for (vi, v) in variants.iter().enumerate() {
            let rows: Vec<&EvalRecord> = (0..n_seeds)
                .filter_map(|s| records.get((vi * n_seeds + s) * conds.len() + ci))
                .collect();
            let ok: Vec<&EvalRecord> = rows.iter().copied().filter(|r| r.status == Status::Ok).collect();
            let eps: Vec<EpisodeRecord> = ok.iter().flat_map(|r| r.episodes.iter().copied()).collect();
            let summary = EvalSummary::new(eps.clone()).ok();
            let stat = |f: fn(&EvalSummary) -> f64| summary.as_ref().map_or(f64::NAN, f);
            cells.push(AblationCell {
                condition: c.name.clone(),
                variant: v.label.clone(),
                n_seeds: ok.len(),
                n_failed: rows.len() - ok.len(),
                n_episodes: eps.len(),
                mean_rmse: stat(EvalSummary::mean_rmse),
                std_rmse: stat(EvalSummary::std_rmse),
                mean_return: stat(EvalSummary::mean_return),
                std_return: stat(EvalSummary::std_return),
            });
        }
    }
    cells
}

pub fn checkpoint_name(kind: AgentKind, seed: u64) -> String {
    format!("{kind}_seed{seed}.ckpt")
}

pub fn save_checkpoint(snapshot: &ActorSnapshot, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, snapshot.to_checkpoint().to_bytes()?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ActorSnapshot> {
    ActorSnapshot::from_checkpoint(&Checkpoint::from_bytes(&fs::read(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::TaskKind;

    fn tiny(extra: &str) -> ExperimentConfig {
        ExperimentConfig::parse(&format!(
            "task = cartpole\nagent.hidden = 8\nppo.rollout = 200\nppo.epochs = 2\n\
             train.steps = 400\ntrain.eval_every = 200\ntrain.curve_episodes = 1\n\
             eval.episodes = 3\n{}{extra}",
            if extra.contains("seeds") { "" } else { "seeds = 1,2\n" }
        ))
        .unwrap()
    }

    #[test]
    fn evaluate_is_deterministic_and_zero_level_equals_none() {
        let cfg = tiny("");
        let snap = build_agent(AgentKind::Ppo, TaskKind::CartPole, &cfg.agent, 3).unwrap().snapshot().unwrap();
        let a = evaluate(&snap, &cfg.env, 5, 4).unwrap();
        assert_eq!(a, evaluate(&snap, &cfg.env, 5, 4).unwrap());
        let zero = TestCondition::disturbance(&cfg.env, &DisturbanceSpec::new(Site::Action, Waveform::WhiteNoise, 0.0));
        assert_eq!(evaluate(&snap, &zero.env, 5, 4).unwrap(), a);
    }

    #[test]
    fn noise_differs_across_episodes_but_reproduces() {
        let cfg = tiny("");
        let snap = build_agent(AgentKind::Ppo, TaskKind::CartPole, &cfg.agent, 3).unwrap().snapshot().unwrap();
        let c = TestCondition::disturbance(&cfg.env, &DisturbanceSpec::new(Site::Observation, Waveform::WhiteNoise, 0.3));
        let s = evaluate(&snap, &c.env, 5, 3).unwrap();
        assert_ne!(s.episodes[0], s.episodes[1]);
        assert_eq!(s, evaluate(&snap, &c.env, 5, 3).unwrap());
    }

    #[test]
    fn task_mismatch_is_an_error() {
        let cfg = tiny("");
        let snap = build_agent(AgentKind::Ppo, TaskKind::CartPole, &cfg.agent, 3).unwrap().snapshot().unwrap();
        assert!(evaluate(&snap, &EnvConfig::new(TaskKind::Quadrotor), 0, 1).is_err());
    }

    #[test]
    fn zero_budget_keeps_initialization() {
        let cfg = tiny("");
        let run = train_run(&cfg, AgentKind::Sac, &cfg.agent, 4, None, 0).unwrap();
        let init = build_agent(AgentKind::Sac, TaskKind::CartPole, &cfg.agent, 4).unwrap().snapshot().unwrap();
        assert_eq!(run.snapshot.unwrap(), init);
        assert_eq!(run.curve.len(), 1);
        assert_eq!(run.steps, 0);
    }

    #[test]
    fn curve_is_logged_at_fixed_intervals() {
        let cfg = tiny("");
        let run = train_run(&cfg, AgentKind::Ppo, &cfg.agent, 1, None, 600).unwrap();
        let steps: Vec<usize> = run.curve.iter().map(|c| c.0).collect();
        assert_eq!(steps, vec![0, 200, 400, 600]);
    }

    #[test]
    fn target_return_stops_early() {
        let cfg = tiny("train.target_return = 0.0001");
        let run = train_run(&cfg, AgentKind::Ppo, &cfg.agent, 1, None, 10_000).unwrap();
        assert_eq!(run.steps, 200);
    }

    #[test]
    fn curve_aggregation_counts_seeds_per_step() {
        let a = [(0, 1.0), (10, 3.0)];
        let b = [(0, 3.0)];
        let pts = aggregate_curves(&[&a, &b]);
        assert_eq!(pts[0], CurvePoint { step: 0, mean: 2.0, std: 2f64.sqrt(), n_seeds: 2 });
        assert_eq!(pts[1], CurvePoint { step: 10, mean: 3.0, std: 0.0, n_seeds: 1 });
    }

    #[test]
    fn results_do_not_depend_on_worker_count() {
        let cfg = tiny("sweep.sites = act\nsweep.levels = 0,0.5");
        let one = run_sweep(&cfg).unwrap();
        let two = run_sweep(&cfg.clone().with_workers(2).unwrap()).unwrap();
        assert_eq!(one.len(), 4);
        assert!(one.iter().zip(&two).all(|(a, b)| a.bit_eq(b)));
        assert_eq!(one[0].test_level, "0");
        assert_eq!(one[1].test_level, "0.5");
    }

    #[test]
    fn heatmap_row_zero_equals_sweep() {
        let cfg = tiny(
            "seeds = 2\nsweep.sites = dyn\nsweep.levels = 0,1\n\
             heatmap.site = dyn\nheatmap.train_levels = 0,0.5\nheatmap.test_levels = 0,1",
        );
        let sweep = run_sweep(&cfg).unwrap();
        let heat = run_heatmap(&cfg).unwrap();
        assert_eq!(heat.len(), 4);
        let row0: Vec<&EvalRecord> = heat.iter().filter(|r| r.train_level == 0.0).collect();
        assert_eq!(row0.len(), sweep.len());
        assert!(row0.iter().zip(&sweep).all(|(a, b)| a.bit_eq(b)));
        assert!(!heat[2].bit_eq(&heat[0]));
    }

    #[test]
    fn param_sweep_records_overrides() {
        let cfg = tiny("seeds = 1\nsweep.param = pole_length\nsweep.levels = 0.4,0.8");
        let recs = run_sweep(&cfg).unwrap();
        assert_eq!(recs[0].param_overrides, "pole_length=0.4");
        assert_eq!(recs[1].test_level_value(), Some(0.8));
    }

    #[test]
    fn ablation_grids_and_rows() {
        let base = AgentConfig::default();
        let labels = |k| ablation_variants(k, &base).into_iter().map(|v| v.label).collect::<Vec<_>>();
        assert_eq!(
            labels(AblationKind::DrRange),
            ["ppo", "ppo_dr[default]", "ppo_dr[low]", "ppo_dr[mid]", "ppo_dr[high]"]
        );
        assert_eq!(labels(AblationKind::AdversaryScale).len(), 9);
        assert_eq!(labels(AblationKind::AdversaryScale)[4], "rarl[scale=1]");
        assert_eq!(labels(AblationKind::CvarAlpha)[5], "raac[alpha=0.1]");
        let names: Vec<String> = ablation_conditions(&EnvConfig::new(TaskKind::CartPole))
            .into_iter()
            .map(|c| c.name)
            .collect();
        assert_eq!(names, ["default", "params x1.5", "params x8", "obs + act noise", "tap force"]);
    }

    #[test]
    fn ablation_table_pools_seeds() {
        let cfg = tiny("seeds = 1,2\nablate.kind = dr_range");
        let rep = run_ablate(&cfg).unwrap();
        assert_eq!(rep.records.len(), 5 * 2 * 5);
        assert_eq!(rep.table.len(), 5 * 5);
        let c = &rep.table[0];
        assert_eq!((c.condition.as_str(), c.variant.as_str(), c.n_seeds, c.n_episodes), ("default", "ppo", 2, 6));
        let pooled: Vec<EpisodeRecord> = [&rep.records[0], &rep.records[5]]
            .iter()
            .flat_map(|r| r.episodes.clone())
            .collect();
        assert_eq!(c.mean_rmse, EvalSummary::new(pooled).unwrap().mean_rmse());
    }
}
