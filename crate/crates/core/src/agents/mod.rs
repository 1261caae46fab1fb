//! Decision optimizers: the exhaustive oracle, discrete SAC and DQN.

pub mod checkpoint;
pub mod dqn;
pub mod oracle;
pub mod replay;
pub mod sac;
pub mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use dqn::{dqn_loss, dqn_update, DqnAgent, DqnConfig};
pub use oracle::{oracle_best, oracle_sweep, oracle_sweep_with, OracleDecision};
pub use replay::{Batch, ReplayBuffer, Transition};
pub use sac::{sac_alpha_loss, sac_policy_loss, sac_q_loss, sac_update, SacAgent, SacConfig, TargetUpdate};
pub use train::{train, MetricsRow, TrainConfig, TrainSummary};

use crate::environment::{action_reward, Env};
use crate::error::{Error, Result};
use crate::system_model::{Action, ActionSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActMode {
    /// Stochastic: sample the policy (SAC) or act epsilon-greedily (DQN).
    Train,
    /// Deterministic argmax over valid actions.
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Sac,
    Dqn,
}

impl std::str::FromStr for AgentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sac" | "sac-d" | "sac_d" => Ok(AgentKind::Sac),
            "dqn" => Ok(AgentKind::Dqn),
            other => Err(Error::Config(format!("unknown agent '{other}' (expected sac or dqn)"))),
        }
    }
}

impl std::fmt::Display for AgentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AgentKind::Sac => "SAC-d",
            AgentKind::Dqn => "DQN",
        })
    }
}

/// Losses and schedule values from one gradient update. Fields an agent
/// does not have are `None`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UpdateMetrics {
    pub q_loss: f64,
    pub policy_loss: Option<f64>,
    pub alpha_loss: Option<f64>,
    pub entropy: Option<f64>,
    pub alpha: Option<f64>,
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)] // a handful of agents per process
pub enum Agent {
    Sac(SacAgent),
    Dqn(DqnAgent),
}

impl Agent {
    pub fn kind(&self) -> AgentKind {
        match self {
            Agent::Sac(_) => AgentKind::Sac,
            Agent::Dqn(_) => AgentKind::Dqn,
        }
    }

    pub fn space(&self) -> &ActionSpace {
        match self {
            Agent::Sac(a) => &a.space,
            Agent::Dqn(a) => &a.space,
        }
    }

    pub fn mask(&self) -> &[bool] {
        match self {
            Agent::Sac(a) => &a.mask,
            Agent::Dqn(a) => &a.mask,
        }
    }

    pub fn warmup(&self) -> usize {
        match self {
            Agent::Sac(a) => a.cfg.warmup,
            Agent::Dqn(a) => a.cfg.warmup,
        }
    }

    pub fn batch_size(&self) -> usize {
        match self {
            Agent::Sac(a) => a.cfg.batch_size,
            Agent::Dqn(a) => a.cfg.batch_size,
        }
    }

    pub fn buffer_capacity(&self) -> usize {
        match self {
            Agent::Sac(a) => a.cfg.buffer_capacity,
            Agent::Dqn(a) => a.cfg.buffer_capacity,
        }
    }

    pub fn update_every(&self) -> usize {
        match self {
            Agent::Sac(a) => a.cfg.update_every,
            Agent::Dqn(a) => a.cfg.update_every,
        }
    }

    pub fn act<R: Rng + ?Sized>(&self, obs: &[f64], mode: ActMode, rng: &mut R) -> Result<usize> {
        match self {
            Agent::Sac(a) => a.act(obs, mode, rng),
            Agent::Dqn(a) => a.act(obs, mode, rng),
        }
    }

    pub fn update(&mut self, buffer: &mut ReplayBuffer) -> Result<UpdateMetrics> {
        match self {
            Agent::Sac(a) => sac_update(a, buffer),
            Agent::Dqn(a) => dqn_update(a, buffer),
        }
    }

    /// Called once per environment step (drives DQN's epsilon schedule).
    pub fn on_env_step(&mut self) {
        if let Agent::Dqn(a) = self {
            a.env_steps += 1;
        }
    }
}

/// Greedy decision at a pinned bandwidth: start from the on-device state,
/// act greedily for `settle_steps` steps (the observation reflects the
/// previous decision) and report the final action with its reward.
pub fn greedy_decision(agent: &Agent, env: &Env, bandwidth: f64, settle_steps: usize) -> Result<(Action, f64)> {
    let mut env = env.with_fixed_bandwidth(bandwidth)?;
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0); // unused by greedy acting
    let mut index = agent.act(&env.observation(), ActMode::Greedy, &mut rng)?;
    for _ in 1..settle_steps.max(1) {
        env.step(index);
        index = agent.act(&env.observation(), ActMode::Greedy, &mut rng)?;
    }
    let eval = env.evaluator();
    let action = eval.space().action(index);
    let reward = if eval.space().is_valid(&action) {
        action_reward(eval, env.reward_config(), env.config().channel_mode, &action, bandwidth)
    } else {
        0.0
    };
    Ok((action, reward))
}

/// Index of the largest value among unmasked slots; ties go to the lowest
/// index.
pub fn argmax_masked(values: &[f64], mask: &[bool]) -> Result<usize> {
    if values.len() != mask.len() {
        return Err(Error::ShapeMismatch { expected: mask.len(), actual: values.len() });
    }
    let mut best: Option<usize> = None;
    for (i, (&v, &m)) in values.iter().zip(mask).enumerate() {
        if m && best.is_none_or(|b| v > values[b]) {
            best = Some(i);
        }
    }
    best.ok_or(Error::AllMasked)
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_categorical<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &pi) in p.iter().enumerate() {
        if pi > 0.0 {
            acc += pi;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Uniform draw from the unmasked slots.
pub fn random_valid<R: Rng + ?Sized>(mask: &[bool], rng: &mut R) -> usize {
    let n = mask.iter().filter(|&&m| m).count();
    assert!(n > 0, "no valid actions");
    let k = rng.random_range(0..n);
    mask.iter().enumerate().filter(|(_, &m)| m).nth(k).map(|(i, _)| i).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn argmax_skips_masked_and_breaks_ties_low() {
        assert_eq!(argmax_masked(&[9.0, 1.0, 3.0, 3.0], &[false, true, true, true]).unwrap(), 2);
        assert!(matches!(argmax_masked(&[1.0], &[false]), Err(Error::AllMasked)));
    }

    #[test]
    fn categorical_never_picks_zero_probability() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = [0.0, 0.25, 0.0, 0.75];
        let mut counts = [0usize; 4];
        for _ in 0..4000 {
            counts[sample_categorical(&p, &mut rng)] += 1;
        }
        assert_eq!(counts[0] + counts[2], 0);
        assert!((counts[3] as f64 / 4000.0 - 0.75).abs() < 0.03);
    }

    #[test]
    fn random_valid_respects_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mask = [false, true, false, true, true];
        for _ in 0..200 {
            assert!(mask[random_valid(&mask, &mut rng)]);
        }
    }

    #[test]
    fn agent_kind_parses() {
        assert_eq!("SAC".parse::<AgentKind>().unwrap(), AgentKind::Sac);
        assert_eq!("dqn".parse::<AgentKind>().unwrap(), AgentKind::Dqn);
        assert!("ppo".parse::<AgentKind>().is_err());
    }
}
