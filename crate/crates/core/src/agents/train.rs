//! Off-policy training loop shared by SAC-d and DQN.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::replay::{ReplayBuffer, Transition};
use super::{random_valid, ActMode, Agent, UpdateMetrics};
use crate::environment::Env;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub total_steps: u64,
    pub seed: u64,
    /// Environment steps between metrics rows.
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { total_steps: 50_000, seed: 0, log_every: 1000 }
    }
}

/// One row of the training metrics CSV. Empty cells mean "not applicable
/// yet" (before warmup, or a quantity the agent does not have).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsRow {
    pub step: u64,
    pub q_loss: Option<f64>,
    pub policy_loss: Option<f64>,
    pub alpha_loss: Option<f64>,
    pub entropy: Option<f64>,
    pub alpha: Option<f64>,
    pub epsilon: Option<f64>,
    /// Summed reward of the most recently finished episode.
    pub episode_reward: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub env_steps: u64,
    pub updates: u64,
    pub episodes: u64,
    pub metrics: Vec<MetricsRow>,
}

impl TrainSummary {
    pub fn write_metrics_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        if self.metrics.is_empty() {
            // Serde only emits the header alongside the first row.
            w.write_record(METRICS_HEADER.split(','))?;
        }
        for row in &self.metrics {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub const METRICS_HEADER: &str = "step,q_loss,policy_loss,alpha_loss,entropy,alpha,epsilon,episode_reward";

/// Runs `cfg.total_steps` environment steps: uniformly random valid actions
/// during warmup, then the agent's stochastic policy, with one gradient
/// update every `update_every` steps. Horizon truncation resets the
/// environment but is stored as non-terminal.
pub fn train(agent: &mut Agent, env: &mut Env, cfg: &TrainConfig) -> Result<TrainSummary> {
    if agent.space().len() != env.n_actions() {
        return Err(Error::ShapeMismatch { expected: env.n_actions(), actual: agent.space().len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut buffer = ReplayBuffer::new(agent.buffer_capacity(), cfg.seed ^ 0x005E_ED0F_B0FF);
    let warmup = agent.warmup() as u64;
    let every = agent.update_every() as u64;

    env.reset();
    let mut obs = env.observation();
    let (mut updates, mut episodes) = (0u64, 0u64);
    let mut episode_return = 0.0;
    let mut last_return = None;
    let mut last_update: Option<UpdateMetrics> = None;
    let mut metrics = Vec::new();

    for step in 1..=cfg.total_steps {
        let action = if step <= warmup {
            random_valid(agent.mask(), &mut rng)
        } else {
            agent.act(&obs, ActMode::Train, &mut rng)?
        };
        let out = env.step(action);
        let next = env.observation();
        buffer.push(Transition { state: obs, action, reward: out.reward, next_state: next, done: false });
        agent.on_env_step();
        episode_return += out.reward;
        obs = next;
        if out.truncated {
            episodes += 1;
            last_return = Some(episode_return);
            episode_return = 0.0;
            env.reset();
            obs = env.observation();
        }

        if step > warmup && buffer.len() >= agent.batch_size() && step % every == 0 {
            last_update = Some(agent.update(&mut buffer)?);
            updates += 1;
        }

        if cfg.log_every > 0 && (step % cfg.log_every == 0 || step == cfg.total_steps) {
            let u = last_update;
            metrics.push(MetricsRow {
                step,
                q_loss: u.map(|u| u.q_loss),
                policy_loss: u.and_then(|u| u.policy_loss),
                alpha_loss: u.and_then(|u| u.alpha_loss),
                entropy: u.and_then(|u| u.entropy),
                alpha: u.and_then(|u| u.alpha),
                epsilon: match agent {
                    Agent::Dqn(d) => Some(d.epsilon()),
                    Agent::Sac(_) => None,
                },
                episode_reward: last_return,
            });
        }
    }
    Ok(TrainSummary { env_steps: cfg.total_steps, updates, episodes, metrics })
}
