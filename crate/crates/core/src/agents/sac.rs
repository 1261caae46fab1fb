//! Discrete Soft Actor-Critic over the flattened, masked action space.
//!
//! Because the action set is finite, every expectation over the policy is
//! computed exactly as a probability-weighted sum rather than sampled:
//!
//! * soft value `V(s') = pi(s')^T [Q_target(s') - alpha log pi(s')]`,
//!   critic target `y = r + gamma (1 - done) V(s')`, critic loss `mean 1/2 (Q(s,a) - y)^2`;
//! * actor loss `mean pi(s)^T [alpha log pi(s) - Q(s)]`;
//! * temperature loss `log(alpha) * mean (H(pi(s)) - H_target)`, minimized
//!   over `log alpha`, so `alpha` grows while the policy is less random than
//!   the target entropy and shrinks while it is more random. Taking the
//!   gradient in log space keeps Adam's step independent of `alpha`'s
//!   magnitude.

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::replay::{Batch, ReplayBuffer};
use super::{argmax_masked, sample_categorical, ActMode, UpdateMetrics};
use crate::environment::STATE_DIM;
use crate::error::{Error, Result};
use crate::neuralnet::{entropy, masked_log_softmax, Adam, Grads, Mlp};
use crate::system_model::ActionSpace;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetUpdate {
    Polyak { tau: f64 },
    Hard { every: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SacConfig {
    pub hidden_width: usize,
    /// Hidden layers; the network has `hidden_layers + 1` weight matrices.
    pub hidden_layers: usize,
    pub lr: f64,
    /// Actor learning rate; `None` uses `lr`.
    pub policy_lr: Option<f64>,
    /// Temperature learning rate; `None` uses `lr`.
    pub alpha_lr: Option<f64>,
    /// Global gradient-norm clip for the critic and actor; `None` disables it.
    pub max_grad_norm: Option<f64>,
    pub gamma: f64,
    pub target_update: TargetUpdate,
    /// Target entropy as a fraction of `ln(valid actions)`.
    pub target_entropy_scale: f64,
    pub initial_alpha: f64,
    /// Hold alpha at `initial_alpha` instead of tuning it.
    pub fixed_alpha: bool,
    pub twin_q: bool,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Random-action steps before learning starts.
    pub warmup: usize,
    /// Environment steps per gradient update.
    pub update_every: usize,
    /// When false the policy spans every slot and invalid picks earn 0.
    pub mask_invalid: bool,
}

impl Default for SacConfig {
    fn default() -> Self {
        SacConfig {
            hidden_width: 128,
            hidden_layers: 4,
            lr: 1e-3,
            policy_lr: None,
            alpha_lr: None,
            max_grad_norm: None,
            gamma: 0.99,
            target_update: TargetUpdate::Polyak { tau: 0.005 },
            target_entropy_scale: 0.6,
            initial_alpha: 1.0,
            fixed_alpha: false,
            twin_q: false,
            batch_size: 64,
            buffer_capacity: 100_000,
            warmup: 1000,
            update_every: 1,
            mask_invalid: true,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("sac: {m}")));
        if self.hidden_width == 0 {
            return bad("hidden_width must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.alpha_lr.is_some_and(|l| !(l > 0.0 && l.is_finite())) {
            return bad("alpha_lr must be positive");
        }
        if self.policy_lr.is_some_and(|l| !(l > 0.0 && l.is_finite())) {
            return bad("policy_lr must be positive");
        }
        if self.max_grad_norm.is_some_and(|g| !(g > 0.0)) {
            return bad("max_grad_norm must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(self.initial_alpha > 0.0 && self.initial_alpha.is_finite()) {
            return bad("initial_alpha must be positive");
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 || self.update_every == 0 {
            return bad("batch_size, buffer_capacity and update_every must be positive");
        }
        match self.target_update {
            TargetUpdate::Polyak { tau } if !(tau > 0.0 && tau <= 1.0) => bad("tau must lie in (0, 1]"),
            TargetUpdate::Hard { every: 0 } => bad("hard target update period must be positive"),
            _ => Ok(()),
        }
    }

    pub fn widths(&self, n_actions: usize) -> Vec<usize> {
        let mut w = vec![STATE_DIM];
        w.extend(std::iter::repeat_n(self.hidden_width, self.hidden_layers));
        w.push(n_actions);
        w
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SacAgent {
    pub cfg: SacConfig,
    pub space: ActionSpace,
    pub mask: Vec<bool>,
    pub policy: Mlp,
    pub q: Mlp,
    pub q_target: Mlp,
    pub q2: Option<Mlp>,
    pub q2_target: Option<Mlp>,
    pub log_alpha: f64,
    pub target_entropy: f64,
    opt_policy: Adam,
    opt_q: Adam,
    opt_q2: Option<Adam>,
    opt_alpha: Adam,
    updates: u64,
}

impl SacAgent {
    pub fn new(cfg: SacConfig, space: ActionSpace, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let n = space.len();
        let mask = if cfg.mask_invalid { space.mask() } else { vec![true; n] };
        let valid = space.mask().iter().filter(|&&m| m).count();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let widths = cfg.widths(n);
        let policy = Mlp::new(&widths, &mut rng);
        let q = Mlp::new(&widths, &mut rng);
        let q2 = cfg.twin_q.then(|| Mlp::new(&widths, &mut rng));
        Ok(SacAgent {
            opt_policy: Adam::for_net(&policy, cfg.policy_lr.unwrap_or(cfg.lr)),
            opt_q: Adam::for_net(&q, cfg.lr),
            opt_q2: q2.as_ref().map(|n| Adam::for_net(n, cfg.lr)),
            opt_alpha: Adam::new(1, cfg.alpha_lr.unwrap_or(cfg.lr)),
            q_target: q.clone(),
            q2_target: q2.clone(),
            policy,
            q,
            q2,
            log_alpha: cfg.initial_alpha.ln(),
            target_entropy: cfg.target_entropy_scale * (valid as f64).ln(),
            mask,
            space,
            cfg,
            updates: 0,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn n_actions(&self) -> usize {
        self.mask.len()
    }

    /// Action probabilities for one observation.
    pub fn probabilities(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let logits = self.policy.forward(obs)?;
        crate::neuralnet::masked_softmax(&logits, &self.mask)
    }

    pub fn act<R: Rng + ?Sized>(&self, obs: &[f64], mode: ActMode, rng: &mut R) -> Result<usize> {
        let p = self.probabilities(obs)?;
        Ok(match mode {
            ActMode::Greedy => argmax_masked(&p, &self.mask)?,
            ActMode::Train => sample_categorical(&p, rng),
        })
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::EmptyInput);
        }
        for &a in &batch.actions {
            if a >= self.mask.len() || !self.mask[a] {
                return Err(Error::InvalidAction(format!("batch contains masked slot {a}")));
            }
        }
        Ok(())
    }

    /// Row-wise log-probabilities and probabilities of the policy.
    fn policy_dist(&self, logits: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let mut log_p = Array2::zeros(logits.dim());
        for (i, row) in logits.axis_iter(Axis(0)).enumerate() {
            let lp = masked_log_softmax(row.as_slice().expect("standard layout"), &self.mask)?;
            log_p.row_mut(i).assign(&ndarray::Array1::from(lp));
        }
        let p = log_p.mapv(|l: f64| if l == f64::NEG_INFINITY { 0.0 } else { l.exp() });
        Ok((log_p, p))
    }

    /// `sum_a p_a * f(a)` over unmasked slots, per row.
    fn expect_rows(&self, p: &Array2<f64>, f: impl Fn(usize, usize) -> f64) -> Vec<f64> {
        (0..p.nrows()).map(|i| (0..p.ncols()).filter(|&a| self.mask[a]).map(|a| p[[i, a]] * f(i, a)).sum()).collect()
    }
}

pub struct QLoss {
    pub loss: f64,
    pub grads: Grads,
    pub loss2: Option<f64>,
    pub grads2: Option<Grads>,
    pub targets: Vec<f64>,
}

pub struct PolicyLoss {
    pub loss: f64,
    pub grads: Grads,
    /// Per-row policy entropy in nats.
    pub entropies: Vec<f64>,
}

pub struct AlphaLoss {
    /// `log(alpha) * (mean H - H_target)`.
    pub loss: f64,
    /// dJ/d(log alpha) = mean(H) - H_target. Negative when the policy is
    /// less random than the target, so a descent step raises alpha.
    pub grad_log_alpha: f64,
    pub mean_entropy: f64,
}

/// Critic loss and gradients w.r.t. the online Q network(s). The soft target
/// uses the target network(s) and the current policy and is held fixed.
pub fn sac_q_loss(agent: &SacAgent, batch: &Batch) -> Result<QLoss> {
    agent.check_batch(batch)?;
    let alpha = agent.alpha();
    let next_logits = agent.policy.forward_batch(batch.next_states.view())?;
    let (next_log_p, next_p) = agent.policy_dist(&next_logits)?;
    let mut next_q = agent.q_target.forward_batch(batch.next_states.view())?;
    if let Some(t2) = &agent.q2_target {
        let q2 = t2.forward_batch(batch.next_states.view())?;
        next_q.zip_mut_with(&q2, |a, &b| *a = a.min(b));
    }
    let soft_v = agent.expect_rows(&next_p, |i, a| next_q[[i, a]] - alpha * next_log_p[[i, a]]);
    let targets: Vec<f64> = (0..batch.len())
        .map(|i| batch.rewards[i] + if batch.dones[i] { 0.0 } else { agent.cfg.gamma * soft_v[i] })
        .collect();

    let critic = |net: &Mlp| -> Result<(f64, Grads)> {
        let cache = net.forward_cached(batch.states.view())?;
        let out = cache.output();
        let n = batch.len() as f64;
        let mut g = Array2::zeros(out.dim());
        let mut loss = 0.0;
        for (i, &a) in batch.actions.iter().enumerate() {
            let delta = out[[i, a]] - targets[i];
            loss += 0.5 * delta * delta;
            g[[i, a]] = delta / n;
        }
        Ok((loss / n, net.backward(&cache, g.view())?))
    };
    let (loss, grads) = critic(&agent.q)?;
    let (loss2, grads2) = match &agent.q2 {
        Some(q2) => {
            let (l, g) = critic(q2)?;
            (Some(l), Some(g))
        }
        None => (None, None),
    };
    Ok(QLoss { loss, grads, loss2, grads2, targets })
}

/// Actor loss and gradients w.r.t. the policy network only.
pub fn sac_policy_loss(agent: &SacAgent, batch: &Batch) -> Result<PolicyLoss> {
    agent.check_batch(batch)?;
    let alpha = agent.alpha();
    let mut q = agent.q.forward_batch(batch.states.view())?;
    if let Some(q2) = &agent.q2 {
        let other = q2.forward_batch(batch.states.view())?;
        q.zip_mut_with(&other, |a, &b| *a = a.min(b));
    }
    let cache = agent.policy.forward_cached(batch.states.view())?;
    let (log_p, p) = agent.policy_dist(cache.output())?;
    let n = batch.len() as f64;
    let per_row = agent.expect_rows(&p, |i, a| alpha * log_p[[i, a]] - q[[i, a]]);
    // d/dz_j sum_a p_a g_a = p_j (g_j - sum_a p_a g_a), with g_a = alpha log p_a - Q_a.
    let mut g = Array2::zeros(p.dim());
    for i in 0..p.nrows() {
        for j in (0..p.ncols()).filter(|&j| agent.mask[j]) {
            let gj = alpha * log_p[[i, j]] - q[[i, j]];
            g[[i, j]] = p[[i, j]] * (gj - per_row[i]) / n;
        }
    }
    let entropies = p.axis_iter(Axis(0)).map(|row| entropy(row.as_slice().unwrap())).collect();
    Ok(PolicyLoss { loss: per_row.iter().sum::<f64>() / n, grads: agent.policy.backward(&cache, g.view())?, entropies })
}

/// Temperature loss `log(alpha) * mean(H(pi(s)) - H_target)` and its gradient.
pub fn sac_alpha_loss(agent: &SacAgent, batch: &Batch) -> Result<AlphaLoss> {
    agent.check_batch(batch)?;
    let logits = agent.policy.forward_batch(batch.states.view())?;
    let (_, p) = agent.policy_dist(&logits)?;
    let mean_entropy =
        p.axis_iter(Axis(0)).map(|row| entropy(row.as_slice().unwrap())).sum::<f64>() / batch.len() as f64;
    Ok(alpha_terms(agent, mean_entropy))
}

fn alpha_terms(agent: &SacAgent, mean_entropy: f64) -> AlphaLoss {
    let g = mean_entropy - agent.target_entropy;
    AlphaLoss { loss: agent.log_alpha * g, grad_log_alpha: g, mean_entropy }
}

fn clip(grads: &mut Grads, max_norm: Option<f64>) {
    if let Some(m) = max_norm {
        let n = grads.norm();
        if n > m {
            grads.scale(m / n);
        }
    }
}

/// One critic step, one actor step, one temperature step, then the target
/// update.
pub fn sac_update(agent: &mut SacAgent, buffer: &mut ReplayBuffer) -> Result<UpdateMetrics> {
    let batch = buffer.sample(agent.cfg.batch_size).ok_or(Error::EmptyInput)?;

    let max_norm = agent.cfg.max_grad_norm;
    let mut q = sac_q_loss(agent, &batch)?;
    clip(&mut q.grads, max_norm);
    agent.opt_q.step_net(&mut agent.q, &q.grads);
    if let (Some(net), Some(opt), Some(g)) = (agent.q2.as_mut(), agent.opt_q2.as_mut(), q.grads2.as_mut()) {
        clip(g, max_norm);
        opt.step_net(net, g);
    }

    let mut pi = sac_policy_loss(agent, &batch)?;
    clip(&mut pi.grads, max_norm);
    agent.opt_policy.step_net(&mut agent.policy, &pi.grads);

    let mean_entropy = pi.entropies.iter().sum::<f64>() / pi.entropies.len() as f64;
    let alpha = alpha_terms(agent, mean_entropy);
    if !agent.cfg.fixed_alpha {
        let mut la = [agent.log_alpha];
        agent.opt_alpha.update(&mut la, &[alpha.grad_log_alpha]);
        agent.log_alpha = la[0];
    }

    agent.updates += 1;
    match agent.cfg.target_update {
        TargetUpdate::Polyak { tau } => {
            agent.q_target.soft_update(&agent.q, tau);
            if let (Some(t), Some(o)) = (agent.q2_target.as_mut(), agent.q2.as_ref()) {
                t.soft_update(o, tau);
            }
        }
        TargetUpdate::Hard { every } => {
            if agent.updates.is_multiple_of(every) {
                agent.q_target = agent.q.clone();
                agent.q2_target = agent.q2.clone();
            }
        }
    }

    if !agent.q.is_finite() || agent.q2.as_ref().is_some_and(|n| !n.is_finite()) {
        return Err(Error::NonFiniteParameters("sac critic"));
    }
    if !agent.policy.is_finite() {
        return Err(Error::NonFiniteParameters("sac policy"));
    }
    if !agent.log_alpha.is_finite() {
        return Err(Error::NonFiniteParameters("sac temperature"));
    }
    Ok(UpdateMetrics {
        q_loss: q.loss,
        policy_loss: Some(pi.loss),
        alpha_loss: Some(alpha.loss),
        entropy: Some(mean_entropy),
        alpha: Some(agent.alpha()),
        epsilon: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::replay::Transition;
    use crate::neuralnet::{masked_softmax, Dense};
    use crate::profile::tests::toy_profile;
    use ndarray::Array1;

    fn toy_space() -> ActionSpace {
        // One exit of two layers, bits {8, 16}: 3 x 2 = 6 slots, all valid.
        ActionSpace::new(&toy_profile(), &[8, 16]).unwrap()
    }

    fn tiny_cfg() -> SacConfig {
        SacConfig { hidden_width: 5, hidden_layers: 2, initial_alpha: 0.3, ..Default::default() }
    }

    fn batch(seed: u64, n: usize, actions: usize) -> Batch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ts: Vec<Transition> = (0..n)
            .map(|_| Transition {
                state: std::array::from_fn(|_| rng.random_range(-1.0..1.0)),
                action: rng.random_range(0..actions),
                reward: rng.random_range(0.0..2.0),
                next_state: std::array::from_fn(|_| rng.random_range(-1.0..1.0)),
                done: rng.random_bool(0.2),
            })
            .collect();
        Batch::from_transitions(&ts)
    }

    /// Stand-alone formula evaluation on plain vectors.
    fn q_loss_by_formula(agent: &SacAgent, b: &Batch) -> f64 {
        let alpha = agent.alpha();
        let mut total = 0.0;
        for i in 0..b.len() {
            let s: Vec<f64> = b.states.row(i).to_vec();
            let s2: Vec<f64> = b.next_states.row(i).to_vec();
            let p2 = masked_softmax(&agent.policy.forward(&s2).unwrap(), &agent.mask).unwrap();
            let qt = agent.q_target.forward(&s2).unwrap();
            let v: f64 = p2.iter().zip(&qt).filter(|(p, _)| **p > 0.0).map(|(p, q)| p * (q - alpha * p.ln())).sum();
            let y = b.rewards[i] + if b.dones[i] { 0.0 } else { agent.cfg.gamma * v };
            let q = agent.q.forward(&s).unwrap()[b.actions[i]];
            total += 0.5 * (q - y).powi(2);
        }
        total / b.len() as f64
    }

    fn policy_loss_by_formula(agent: &SacAgent, b: &Batch) -> f64 {
        let alpha = agent.alpha();
        (0..b.len())
            .map(|i| {
                let s: Vec<f64> = b.states.row(i).to_vec();
                let p = masked_softmax(&agent.policy.forward(&s).unwrap(), &agent.mask).unwrap();
                let q = agent.q.forward(&s).unwrap();
                p.iter().zip(&q).filter(|(p, _)| **p > 0.0).map(|(p, q)| p * (alpha * p.ln() - q)).sum::<f64>()
            })
            .sum::<f64>()
            / b.len() as f64
    }

    #[test]
    fn zero_reward_zero_q_gives_zero_loss() {
        let mut cfg = tiny_cfg();
        cfg.gamma = 0.0;
        let mut agent = SacAgent::new(cfg, toy_space(), 1).unwrap();
        agent.q = Mlp::zeros(&agent.cfg.widths(6));
        let mut b = batch(2, 8, 6);
        b.rewards.iter_mut().for_each(|r| *r = 0.0);
        let l = sac_q_loss(&agent, &b).unwrap();
        assert_eq!(l.loss, 0.0);
        assert!(l.grads.flatten().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn terminal_target_is_the_reward() {
        let agent = SacAgent::new(tiny_cfg(), toy_space(), 1).unwrap();
        let mut b = batch(3, 6, 6);
        b.dones.iter_mut().for_each(|d| *d = true);
        let l = sac_q_loss(&agent, &b).unwrap();
        assert_eq!(l.targets, b.rewards);
    }

    #[test]
    fn q_loss_matches_formula() {
        let agent = SacAgent::new(tiny_cfg(), toy_space(), 4).unwrap();
        for n in [1, 7] {
            let b = batch(5 + n as u64, n, 6);
            let l = sac_q_loss(&agent, &b).unwrap();
            assert!((l.loss - q_loss_by_formula(&agent, &b)).abs() < 1e-12);
        }
    }

    #[test]
    fn policy_loss_matches_formula() {
        let agent = SacAgent::new(tiny_cfg(), toy_space(), 6).unwrap();
        let b = batch(7, 5, 6);
        let l = sac_policy_loss(&agent, &b).unwrap();
        assert!((l.loss - policy_loss_by_formula(&agent, &b)).abs() < 1e-12);
    }

    #[test]
    fn uniform_policy_with_flat_q_has_zero_logit_gradient() {
        let mut agent = SacAgent::new(tiny_cfg(), toy_space(), 8).unwrap();
        let w = agent.cfg.widths(6);
        // Constant logits and constant Q: zero last-layer weights, equal biases.
        let flatten_last = |net: &mut Mlp, bias: f64| {
            let mut layers: Vec<Dense> = net.layers().to_vec();
            let last = layers.last_mut().unwrap();
            last.w.fill(0.0);
            last.b = Array1::from_elem(last.b.len(), bias);
            *net = Mlp::from_layers(layers).unwrap();
        };
        agent.policy = Mlp::new(&w, &mut ChaCha8Rng::seed_from_u64(1));
        flatten_last(&mut agent.policy, 0.4);
        flatten_last(&mut agent.q, 2.5);
        let l = sac_policy_loss(&agent, &batch(9, 4, 6)).unwrap();
        assert!(l.grads.flatten().iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn zero_temperature_step_favours_argmax() {
        let mut cfg = tiny_cfg();
        cfg.initial_alpha = 1e-300; // effectively zero, log alpha stays finite
        let mut agent = SacAgent::new(cfg, toy_space(), 10).unwrap();
        let b = batch(11, 1, 6);
        let s: Vec<f64> = b.states.row(0).to_vec();
        let q = agent.q.forward(&s).unwrap();
        let best = argmax_masked(&q, &agent.mask).unwrap();
        let before = agent.probabilities(&s).unwrap()[best];
        let l = sac_policy_loss(&agent, &b).unwrap();
        let mut opt = Adam::for_net(&agent.policy, 1e-3);
        opt.step_net(&mut agent.policy, &l.grads);
        assert!(agent.probabilities(&s).unwrap()[best] > before);
    }

    #[test]
    fn alpha_gradient_sign() {
        let mut agent = SacAgent::new(tiny_cfg(), toy_space(), 12).unwrap();
        let b = batch(13, 4, 6);
        let h = sac_alpha_loss(&agent, &b).unwrap().mean_entropy;

        agent.target_entropy = h;
        assert!(sac_alpha_loss(&agent, &b).unwrap().grad_log_alpha.abs() < 1e-12);

        // Policy less random than the target: minimizing J raises alpha.
        agent.target_entropy = h + 0.5;
        let g = sac_alpha_loss(&agent, &b).unwrap();
        assert!(g.grad_log_alpha < 0.0);
        let mut la = [agent.log_alpha];
        Adam::new(1, 1e-3).update(&mut la, &[g.grad_log_alpha]);
        assert!(la[0] > agent.log_alpha);
    }

    #[test]
    fn uniform_policy_at_max_entropy_target_has_zero_alpha_gradient() {
        let mut agent = SacAgent::new(tiny_cfg(), toy_space(), 14).unwrap();
        agent.policy = Mlp::zeros(&agent.cfg.widths(6));
        agent.target_entropy = 6f64.ln();
        assert!(sac_alpha_loss(&agent, &batch(15, 3, 6)).unwrap().grad_log_alpha.abs() < 1e-12);
    }

    #[test]
    fn masked_slot_in_batch_is_rejected() {
        let p = crate::profile::ModelProfile::bundled();
        let space = ActionSpace::new(&p, &[8]).unwrap();
        let agent = SacAgent::new(tiny_cfg(), space, 0).unwrap();
        let mut b = batch(1, 2, 1);
        b.actions[1] = 15; // ep=1, pp=15
        assert!(matches!(sac_q_loss(&agent, &b), Err(Error::InvalidAction(_))));
    }

    #[test]
    fn hard_copy_syncs_target() {
        let mut cfg = tiny_cfg();
        cfg.target_update = TargetUpdate::Hard { every: 3 };
        cfg.batch_size = 4;
        let mut agent = SacAgent::new(cfg, toy_space(), 16).unwrap();
        let mut buf = ReplayBuffer::new(100, 0);
        let b = batch(17, 20, 6);
        for i in 0..20 {
            buf.push(Transition {
                state: std::array::from_fn(|j| b.states[[i, j]]),
                action: b.actions[i],
                reward: b.rewards[i],
                next_state: std::array::from_fn(|j| b.next_states[[i, j]]),
                done: b.dones[i],
            });
        }
        sac_update(&mut agent, &mut buf).unwrap();
        assert_ne!(agent.q_target, agent.q);
        sac_update(&mut agent, &mut buf).unwrap();
        sac_update(&mut agent, &mut buf).unwrap();
        assert_eq!(agent.q_target, agent.q);
    }

    fn jittered(seed: u64, cfg: SacConfig) -> SacAgent {
        let mut agent = SacAgent::new(cfg, toy_space(), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xF00D);
        for net in [&mut agent.q, &mut agent.q_target, &mut agent.policy].into_iter().chain(agent.q2.as_mut()) {
            let p: Vec<f64> = net.params().iter().map(|v| v + rng.random_range(-0.1..0.1)).collect();
            net.set_params(&p).unwrap();
        }
        agent
    }

    fn assert_fd(analytic: &[f64], params: &[f64], mut f: impl FnMut(&[f64]) -> f64) {
        let h = 1e-5;
        let mut p = params.to_vec();
        for i in 0..params.len() {
            p[i] = params[i] + h;
            let up = f(&p);
            p[i] = params[i] - h;
            let down = f(&p);
            p[i] = params[i];
            let numeric = (up - down) / (2.0 * h);
            let scale = numeric.abs().max(analytic[i].abs()).max(1e-6);
            assert!(
                (numeric - analytic[i]).abs() / scale < 1e-4,
                "param {i}: analytic {} numeric {numeric}",
                analytic[i]
            );
        }
    }

    #[test]
    fn q_loss_gradient_matches_finite_differences() {
        let agent = jittered(20, SacConfig { twin_q: true, ..tiny_cfg() });
        let b = batch(21, 6, 6);
        let l = sac_q_loss(&agent, &b).unwrap();
        let mut probe = agent.clone();
        assert_fd(&l.grads.flatten(), &agent.q.params(), |p| {
            probe.q.set_params(p).unwrap();
            sac_q_loss(&probe, &b).unwrap().loss
        });
        let mut probe = agent.clone();
        assert_fd(&l.grads2.unwrap().flatten(), &agent.q2.as_ref().unwrap().params(), |p| {
            probe.q2.as_mut().unwrap().set_params(p).unwrap();
            sac_q_loss(&probe, &b).unwrap().loss2.unwrap()
        });
    }

    #[test]
    fn policy_loss_gradient_matches_finite_differences() {
        let agent = jittered(22, tiny_cfg());
        let b = batch(23, 6, 6);
        let l = sac_policy_loss(&agent, &b).unwrap();
        let mut probe = agent.clone();
        assert_fd(&l.grads.flatten(), &agent.policy.params(), |p| {
            probe.policy.set_params(p).unwrap();
            sac_policy_loss(&probe, &b).unwrap().loss
        });
    }

    #[test]
    fn alpha_loss_gradient_matches_finite_differences() {
        let mut agent = jittered(24, tiny_cfg());
        agent.target_entropy = 0.4;
        let b = batch(25, 6, 6);
        let l = sac_alpha_loss(&agent, &b).unwrap();
        let mut probe = agent.clone();
        assert_fd(&[l.grad_log_alpha], &[agent.log_alpha], |p| {
            probe.log_alpha = p[0];
            sac_alpha_loss(&probe, &b).unwrap().loss
        });
    }

    #[test]
    fn high_temperature_keeps_the_policy_spread_out() {
        let entropy_after = |alpha: f64| {
            let cfg = SacConfig { initial_alpha: alpha, fixed_alpha: true, batch_size: 16, lr: 1e-2, ..tiny_cfg() };
            let mut agent = SacAgent::new(cfg, toy_space(), 30).unwrap();
            let mut buf = ReplayBuffer::new(100, 1);
            let mut rng = ChaCha8Rng::seed_from_u64(31);
            for _ in 0..64 {
                let action = rng.random_range(0..6);
                let state = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
                // Action 0 is always best.
                buf.push(Transition {
                    state,
                    action,
                    reward: if action == 0 { 1.0 } else { 0.0 },
                    next_state: state,
                    done: true,
                });
            }
            let mut last = 0.0;
            for _ in 0..500 {
                last = sac_update(&mut agent, &mut buf).unwrap().entropy.unwrap();
            }
            last
        };
        let hot = entropy_after(10.0);
        let cold = entropy_after(1e-4);
        assert!(hot > 0.95 * 6f64.ln(), "alpha=10 entropy {hot}");
        assert!(cold < 0.5 * 6f64.ln(), "alpha~0 entropy {cold}");
    }
}
