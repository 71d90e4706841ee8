//! Finite-difference checks of every agent loss on small fixed inputs.

use ndarray::Array2;
use perturbrl_nn::{grad_check, GradCheckConfig, GradCheckReport, ParamStore};

use super::adversarial::{AdversarialConfig, AdversarialPpo};
use super::ppo::{Ppo, PpoBatch, PpoConfig, PpoLoss, Rollout};
use super::raac::{QuantileLoss, Raac, RaacActorLoss, RaacConfig};
use super::sac::{cat, Sac, SacActorLoss, SacConfig, TwinCriticLoss};
use super::wcpg::{ScoreFunctionLoss, Wcpg, WcpgConfig, WcpgCriticLoss};
use super::AgentKind;
use crate::env::TaskKind;
use crate::error::Result;
use crate::rng::{substream, tag};

const HIDDEN: [usize; 2] = [8, 8];

fn toy(n: usize, cols: usize, phase: f64) -> Array2<f64> {
    Array2::from_shape_fn((n, cols), |(i, j)| ((i * cols + j) as f64 * phase).sin())
}

fn perturb(store: &mut ParamStore<f32>, gain: f32, shift: f32) {
    for p in store.iter_mut() {
        p.values.mapv_inplace(|v| v * gain + shift);
    }
}

/// Rollout batch with shifted old log-probs so both clip branches are active.
fn ppo_batch(agent: &mut Ppo, obs_dim: usize, sign: f64) -> Result<PpoBatch> {
    let mut ro = Rollout::default();
    for i in 0..12 {
        let obs: Vec<f64> = (0..obs_dim).map(|j| (0.3 * (i * obs_dim + j) as f64).sin()).collect();
        let s = agent.sample(&obs)?;
        ro.push(obs, &s, sign / (1.0 + i as f64));
    }
    ro.close(false, Some(vec![0.0; obs_dim]));
    let mut batch = agent.batch(&ro)?;
    batch.old_logp.mapv_inplace(|v| v + 0.1);
    Ok(batch)
}

fn check_ppo(agent: &mut Ppo, obs_dim: usize, sign: f64, cfg: GradCheckConfig, seed: u64) -> Result<GradCheckReport> {
    let batch = ppo_batch(agent, obs_dim, sign)?;
    perturb(&mut agent.store, 1.3, 0.01);
    let obj = PpoLoss { policy: &agent.policy, critic: &agent.critic, batch: &batch, clip: 0.2, vf_coef: 0.5, ent_coef: 0.01 };
    Ok(grad_check(&obj, &agent.store, cfg, &mut substream(seed, &[tag("ppo-check")]))?)
}

/// Runs the finite-difference check on each loss and returns `(name, report)`
/// pairs in a fixed order.
pub fn gradient_suite(cfg: GradCheckConfig, seed: u64) -> Result<Vec<(String, GradCheckReport)>> {
    let task = TaskKind::CartPole;
    let (o, a) = (task.obs_dim(), task.act_dim());
    let mut out = Vec::new();
    let rng = |name: &str| substream(seed, &[tag("grad-suite"), tag(name)]);

    let ppo_cfg = PpoConfig { rollout: 64, minibatch: 16, epochs: 2, ..Default::default() };
    let mut ppo = Ppo::new(task, o, a, &HIDDEN, ppo_cfg.clone(), seed)?;
    out.push(("ppo".to_string(), check_ppo(&mut ppo, o, 1.0, cfg, seed)?));

    for kind in [AgentKind::Rarl, AgentKind::Rap] {
        let mut adv = AdversarialPpo::new(kind, task, &HIDDEN, ppo_cfg.clone(), AdversarialConfig::default(), seed)?;
        out.push((format!("{kind} protagonist"), check_ppo(&mut adv.protagonist, o, 1.0, cfg, seed)?));
        let s = task.state_dim();
        out.push((format!("{kind} adversary"), check_ppo(&mut adv.adversaries[0], s, -1.0, cfg, seed)?));
    }

    let sac_cfg = SacConfig { batch: 16, warmup: 40, ..Default::default() };
    let mut sac = Sac::new(task, o, a, &HIDDEN, sac_cfg.clone(), seed)?;
    let obs = toy(10, o, 0.7);
    let act = toy(10, a, 0.3).mapv(|v| 0.8 * v);
    let input = cat(&obs, &act);
    let y = toy(10, 1, 0.9);
    let obj = TwinCriticLoss { q1: &sac.q1, q2: &sac.q2, input: &input, target: &y };
    out.push(("sac critic".into(), grad_check(&obj, &sac.critic_store, cfg, &mut rng("sac critic"))?));
    perturb(&mut sac.core.store, 2.0, 0.05);
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
    out.push(("sac actor".into(), grad_check(&obj, &sac.core.store, cfg, &mut rng("sac actor"))?));

    let mut w = Wcpg::new(task, o, a, &HIDDEN, sac_cfg.clone(), WcpgConfig::default(), seed)?;
    // critic input carries the risk level as an extra column
    let input = toy(12, o + a + 1, 0.37);
    let y_q = toy(12, 1, 0.41);
    let y_var = toy(12, 1, 0.43).mapv(f64::abs);
    let obj = WcpgCriticLoss { q: &w.q, var: &w.var, input: &input, y_q: &y_q, y_var: &y_var };
    out.push(("wcpg critic".into(), grad_check(&obj, &w.critic_store, cfg, &mut rng("wcpg critic"))?));
    perturb(&mut w.core.store, 2.0, 0.03);
    let obs = toy(12, o + 1, 0.37);
    let raw = toy(12, a, 0.29).mapv(|v| 0.8 * v);
    let weights = toy(12, 1, 0.31).mapv(|v| v - 0.1);
    let obj = ScoreFunctionLoss { policy: &w.core.policy, obs: &obs, raw: &raw, weights: &weights };
    out.push(("wcpg actor".into(), grad_check(&obj, &w.core.store, cfg, &mut rng("wcpg actor"))?));

    let mut r = Raac::new(task, o, a, &HIDDEN, sac_cfg, RaacConfig::default(), seed)?;
    let input = toy(10, o + a, 0.53);
    let taus = toy(10, 3, 0.47).mapv(|v| 0.5 + 0.45 * v);
    // targets far from the predictions keep residuals away from the kink
    let targets = toy(10, 4, 0.59).mapv(|v| 3.0 * v.signum() + v);
    let obj = QuantileLoss { net: &r.net, input: &input, taus: &taus, targets: &targets };
    out.push(("raac critic".into(), grad_check(&obj, &r.critic_store, cfg, &mut rng("raac critic"))?));
    perturb(&mut r.core.store, 2.0, 0.02);
    let obs = toy(8, o, 0.53);
    let eps = toy(8, a, 0.61);
    let taus = toy(8, 5, 0.67).mapv(|v| 0.15 + 0.1 * v);
    let obj = RaacActorLoss {
        policy: &r.core.policy,
        net: &r.net,
        critic_store: &r.critic_store,
        obs: &obs,
        eps: &eps,
        taus: &taus,
        temperature: 0.2,
    };
    out.push(("raac actor".into(), grad_check(&obj, &r.core.store, cfg, &mut rng("raac actor"))?));
    Ok(out)
}
