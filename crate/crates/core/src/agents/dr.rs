//! Domain randomization wrapper: physical parameters are redrawn at every
//! training-episode reset; evaluation uses whatever parameters the caller's
//! environment has.

use super::{ActorSnapshot, Agent, AgentKind, TrainLoop};
use crate::disturbance::ParamRandomization;
use crate::error::Result;

pub struct DomainRandomized<A> {
    pub inner: A,
    pub spec: ParamRandomization,
}

impl<A: Agent> DomainRandomized<A> {
    pub fn new(inner: A, spec: ParamRandomization) -> Self {
        Self { inner, spec }
    }
}

impl<A: Agent> Agent for DomainRandomized<A> {
    fn kind(&self) -> AgentKind {
        AgentKind::PpoDr
    }

    fn train(&mut self, ctx: &mut TrainLoop) -> Result<()> {
        ctx.set_randomization(Some(self.spec))?;
        let out = self.inner.train(ctx);
        ctx.set_randomization(None)?;
        out
    }

    fn snapshot(&self) -> Result<ActorSnapshot> {
        let mut s = self.inner.snapshot()?;
        s.kind = AgentKind::PpoDr;
        s.hyper.push(("dr".into(), format!("{:?}", self.spec)));
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::disturbance::{DrRange, ParamSet};
    use crate::env::{Env, EnvConfig, TaskKind};
    use crate::agents::{Ppo, PpoConfig};

    fn ppo() -> Ppo {
        let cfg = PpoConfig { rollout: 120, minibatch: 40, epochs: 2, ..Default::default() };
        Ppo::new(TaskKind::CartPole, 4, 1, &[8, 8], cfg, 2).unwrap()
    }

    fn run(agent: &mut dyn Agent) -> Vec<u8> {
        let env = Env::new(EnvConfig::new(TaskKind::CartPole)).unwrap();
        let mut ctx = TrainLoop::new(env, 5, 300);
        agent.train(&mut ctx).unwrap();
        let mut s = agent.snapshot().unwrap();
        s.kind = AgentKind::Ppo;
        s.hyper.clear();
        s.to_checkpoint().to_bytes().unwrap()
    }

    #[test]
    fn degenerate_ranges_reduce_to_the_base_agent() {
        let nominal = TaskKind::CartPole.default_params();
        let mut dr = DomainRandomized::new(ppo(), ParamRandomization::fixed(&nominal));
        assert_eq!(run(&mut dr), run(&mut ppo()));
    }

    #[test]
    fn high_range_changes_parameters_once_per_episode() {
        let spec = ParamRandomization::cartpole(DrRange::High);
        let env = Env::new(EnvConfig::new(TaskKind::CartPole)).unwrap();
        let mut ctx = TrainLoop::new(env, 5, 10_000);
        ctx.set_randomization(Some(spec)).unwrap();
        let mut seen = Vec::new();
        for _ in 0..30 {
            ctx.reset().unwrap();
            let p = *ctx.env.params();
            let mut a = vec![0.0];
            while !ctx.env.is_done() {
                ctx.step(&a, &Default::default()).unwrap();
                assert_eq!(*ctx.env.params(), p);
                a[0] = -a[0];
            }
            if let ParamSet::CartPole(c) = p {
                assert!((0.1..=3.0).contains(&c.pole_length));
                seen.push(c.pole_length);
            }
        }
        seen.dedup();
        assert!(seen.len() > 20);
    }
}
