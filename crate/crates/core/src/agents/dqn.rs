//! Deep Q-network baseline: epsilon-greedy behaviour, uniform replay, a hard
//! target copy and a masked max in the bootstrap target.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::replay::{Batch, ReplayBuffer};
use super::{argmax_masked, random_valid, ActMode, UpdateMetrics};
use crate::environment::STATE_DIM;
use crate::error::{Error, Result};
use crate::neuralnet::{Adam, Grads, Mlp};
use crate::system_model::ActionSpace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DqnConfig {
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub lr: f64,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Environment steps over which epsilon decays linearly.
    pub epsilon_decay_steps: u64,
    /// Gradient updates between hard target copies.
    pub target_every: u64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub warmup: usize,
    pub update_every: usize,
}

impl Default for DqnConfig {
    fn default() -> Self {
        DqnConfig {
            hidden_width: 128,
            hidden_layers: 4,
            lr: 1e-3,
            gamma: 0.99,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_steps: 50_000,
            target_every: 1000,
            batch_size: 64,
            buffer_capacity: 100_000,
            warmup: 1000,
            update_every: 1,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("dqn: {m}")));
        if self.hidden_width == 0 {
            return bad("hidden_width must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=1.0).contains(&self.epsilon_end) {
            return bad("epsilon values must lie in [0, 1]");
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 || self.update_every == 0 || self.target_every == 0 {
            return bad("batch_size, buffer_capacity, update_every and target_every must be positive");
        }
        Ok(())
    }

    pub fn widths(&self, n_actions: usize) -> Vec<usize> {
        let mut w = vec![STATE_DIM];
        w.extend(std::iter::repeat_n(self.hidden_width, self.hidden_layers));
        w.push(n_actions);
        w
    }

    /// Linear schedule from `epsilon_start` to `epsilon_end`.
    pub fn epsilon(&self, env_steps: u64) -> f64 {
        if self.epsilon_decay_steps == 0 {
            return self.epsilon_end;
        }
        let frac = (env_steps as f64 / self.epsilon_decay_steps as f64).min(1.0);
        self.epsilon_start + frac * (self.epsilon_end - self.epsilon_start)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DqnAgent {
    pub cfg: DqnConfig,
    pub space: ActionSpace,
    pub mask: Vec<bool>,
    pub q: Mlp,
    pub q_target: Mlp,
    pub env_steps: u64,
    opt: Adam,
    updates: u64,
}

impl DqnAgent {
    pub fn new(cfg: DqnConfig, space: ActionSpace, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mask = space.mask();
        let q = Mlp::new(&cfg.widths(space.len()), &mut ChaCha8Rng::seed_from_u64(seed));
        Ok(DqnAgent {
            opt: Adam::for_net(&q, cfg.lr),
            q_target: q.clone(),
            q,
            mask,
            space,
            cfg,
            env_steps: 0,
            updates: 0,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.cfg.epsilon(self.env_steps)
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn act<R: Rng + ?Sized>(&self, obs: &[f64], mode: ActMode, rng: &mut R) -> Result<usize> {
        if mode == ActMode::Train && rng.random::<f64>() < self.epsilon() {
            return Ok(random_valid(&self.mask, rng));
        }
        argmax_masked(&self.q.forward(obs)?, &self.mask)
    }
}

pub struct DqnLoss {
    pub loss: f64,
    pub grads: Grads,
    pub targets: Vec<f64>,
}

/// `mean 1/2 (Q(s,a) - y)^2` with `y = r + gamma (1 - done) max_{valid a'} Q_target(s', a')`.
pub fn dqn_loss(agent: &DqnAgent, batch: &Batch) -> Result<DqnLoss> {
    if batch.is_empty() {
        return Err(Error::EmptyInput);
    }
    let next_q = agent.q_target.forward_batch(batch.next_states.view())?;
    let mut targets = Vec::with_capacity(batch.len());
    for i in 0..batch.len() {
        let row = next_q.row(i);
        let row = row.as_slice().expect("standard layout");
        let best = row[argmax_masked(row, &agent.mask)?];
        targets.push(batch.rewards[i] + if batch.dones[i] { 0.0 } else { agent.cfg.gamma * best });
    }
    let cache = agent.q.forward_cached(batch.states.view())?;
    let out = cache.output();
    let n = batch.len() as f64;
    let mut g = Array2::zeros(out.dim());
    let mut loss = 0.0;
    for (i, &a) in batch.actions.iter().enumerate() {
        if a >= agent.mask.len() || !agent.mask[a] {
            return Err(Error::InvalidAction(format!("batch contains masked slot {a}")));
        }
        let delta = out[[i, a]] - targets[i];
        loss += 0.5 * delta * delta;
        g[[i, a]] = delta / n;
    }
    Ok(DqnLoss { loss: loss / n, grads: agent.q.backward(&cache, g.view())?, targets })
}

pub fn dqn_update(agent: &mut DqnAgent, buffer: &mut ReplayBuffer) -> Result<UpdateMetrics> {
    let batch = buffer.sample(agent.cfg.batch_size).ok_or(Error::EmptyInput)?;
    let l = dqn_loss(agent, &batch)?;
    agent.opt.step_net(&mut agent.q, &l.grads);
    agent.updates += 1;
    if agent.updates.is_multiple_of(agent.cfg.target_every) {
        agent.q_target = agent.q.clone();
    }
    if !agent.q.is_finite() {
        return Err(Error::NonFiniteParameters("dqn q-network"));
    }
    Ok(UpdateMetrics { q_loss: l.loss, epsilon: Some(agent.epsilon()), ..Default::default() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::replay::Transition;
    use crate::profile::tests::toy_profile;

    fn agent() -> DqnAgent {
        let cfg = DqnConfig { hidden_width: 6, hidden_layers: 2, ..Default::default() };
        DqnAgent::new(cfg, ActionSpace::new(&toy_profile(), &[8, 16]).unwrap(), 3).unwrap()
    }

    fn batch(seed: u64, n: usize) -> Batch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ts: Vec<Transition> = (0..n)
            .map(|_| Transition {
                state: std::array::from_fn(|_| rng.random_range(-1.0..1.0)),
                action: rng.random_range(0..6),
                reward: rng.random_range(0.0..1.0),
                next_state: std::array::from_fn(|_| rng.random_range(-1.0..1.0)),
                done: rng.random_bool(0.3),
            })
            .collect();
        Batch::from_transitions(&ts)
    }

    #[test]
    fn epsilon_decays_linearly_then_holds() {
        let cfg = DqnConfig { epsilon_start: 1.0, epsilon_end: 0.1, epsilon_decay_steps: 100, ..Default::default() };
        assert_eq!(cfg.epsilon(0), 1.0);
        assert!((cfg.epsilon(50) - 0.55).abs() < 1e-12);
        assert!((cfg.epsilon(100) - 0.1).abs() < 1e-12);
        assert!((cfg.epsilon(10_000) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn target_uses_masked_max() {
        let a = agent();
        let b = batch(1, 5);
        let l = dqn_loss(&a, &b).unwrap();
        for i in 0..b.len() {
            let s2: Vec<f64> = b.next_states.row(i).to_vec();
            let max = a.q_target.forward(&s2).unwrap().into_iter().fold(f64::NEG_INFINITY, f64::max);
            let y = b.rewards[i] + if b.dones[i] { 0.0 } else { 0.99 * max };
            assert!((l.targets[i] - y).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_matches_finite_differences() {
        let a = agent();
        let b = batch(2, 4);
        let l = dqn_loss(&a, &b).unwrap();
        let analytic = l.grads.flatten();
        let base = a.q.params();
        let h = 1e-6;
        for i in (0..base.len()).step_by(7) {
            let mut probe = a.clone();
            let mut p = base.clone();
            p[i] += h;
            probe.q.set_params(&p).unwrap();
            // Target network is held fixed.
            let plus = dqn_loss(&probe, &b).unwrap().loss;
            p[i] -= 2.0 * h;
            probe.q.set_params(&p).unwrap();
            let minus = dqn_loss(&probe, &b).unwrap().loss;
            let num = (plus - minus) / (2.0 * h);
            assert!((num - analytic[i]).abs() <= 1e-6 * (1.0 + num.abs()), "param {i}: {num} vs {}", analytic[i]);
        }
    }

    #[test]
    fn greedy_act_is_argmax() {
        let a = agent();
        let obs = [0.3, -0.2, 0.8, 0.5];
        let q = a.q.forward(&obs).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(a.act(&obs, ActMode::Greedy, &mut rng).unwrap(), argmax_masked(&q, &a.mask).unwrap());
    }

    #[test]
    fn hard_target_copy_period() {
        let mut a = agent();
        a.cfg.target_every = 2;
        a.cfg.batch_size = 4;
        let mut buf = ReplayBuffer::new(16, 0);
        let b = batch(3, 8);
        for i in 0..8 {
            buf.push(Transition {
                state: std::array::from_fn(|j| b.states[[i, j]]),
                action: b.actions[i],
                reward: b.rewards[i],
                next_state: std::array::from_fn(|j| b.next_states[[i, j]]),
                done: b.dones[i],
            });
        }
        dqn_update(&mut a, &mut buf).unwrap();
        assert_ne!(a.q, a.q_target);
        dqn_update(&mut a, &mut buf).unwrap();
        assert_eq!(a.q, a.q_target);
    }
}
