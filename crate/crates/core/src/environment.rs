//! MDP wrapper around the evaluator.
//!
//! The observation is the previous step's realized latency, energy and
//! accuracy plus the current uplink bandwidth. The reward weighs accuracy
//! against normalized latency with a bandwidth-dependent coefficient
//! `a = n ln(1 + B/s)`, `b = 1 - a`, and is zero whenever device energy
//! exceeds the budget.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::system_model::{Action, ChannelMode, EvalResult, Evaluator};
use crate::MB_PER_S;

pub const STATE_DIM: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub latency_ms: f64,
    pub energy_j: f64,
    pub accuracy: f64,
    /// Bytes per second.
    pub bandwidth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    /// Bandwidth sensitivity `s`, bytes/s.
    pub sensitivity: f64,
    /// Top of the bandwidth range, bytes/s.
    pub b_max: f64,
    /// Explicit `n`; `None` normalizes so that `a(b_max) = 1`.
    pub normalization: Option<f64>,
    /// Latency normalizer: the reward uses `T_ref / T`.
    pub t_ref_ms: f64,
    /// Device energy budget; `None` is unbounded.
    pub energy_budget_j: Option<f64>,
    /// Energy normalizer used for the state when the budget is unbounded.
    pub e_ref_j: f64,
}

impl RewardConfig {
    /// Defaults tied to an evaluator: `T_ref` and `e_ref` are the latency and
    /// energy of the deepest exit run entirely on the device.
    pub fn for_evaluator(eval: &Evaluator, sensitivity: f64, b_max: f64, energy_budget_j: Option<f64>) -> Result<Self> {
        let channel = eval.channel(ChannelMode::RawRate, b_max);
        let local = eval.evaluate(&eval.on_device_reference(), &channel)?;
        let cfg = RewardConfig {
            sensitivity,
            b_max,
            normalization: None,
            t_ref_ms: local.total_latency_ms,
            energy_budget_j,
            e_ref_j: local.total_energy_j,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `s` = 1 MB/s, `B_max` = 10 MB/s, budget from the device profile.
    pub fn default_for(eval: &Evaluator) -> Result<Self> {
        Self::for_evaluator(eval, MB_PER_S, 10.0 * MB_PER_S, eval.profile().device.energy_budget_j)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("reward.{name} must be finite and positive, got {v}")))
            }
        };
        positive("sensitivity", self.sensitivity)?;
        positive("b_max", self.b_max)?;
        positive("t_ref_ms", self.t_ref_ms)?;
        positive("e_ref_j", self.e_ref_j)?;
        if let Some(n) = self.normalization {
            positive("normalization", n)?;
        }
        if let Some(b) = self.energy_budget_j {
            positive("energy_budget_j", b)?;
        }
        Ok(())
    }

    /// The accuracy weight `a(B)`.
    pub fn accuracy_weight(&self, bandwidth: f64) -> f64 {
        let x = (bandwidth / self.sensitivity).ln_1p();
        match self.normalization {
            None => x / (self.b_max / self.sensitivity).ln_1p(),
            Some(n) => n * x,
        }
    }

    /// `(a, b)` with `b = 1 - a`.
    pub fn weights(&self, bandwidth: f64) -> (f64, f64) {
        let a = self.accuracy_weight(bandwidth);
        (a, 1.0 - a)
    }
}

pub fn reward(result: &EvalResult, bandwidth: f64, cfg: &RewardConfig) -> Result<f64> {
    let t = result.total_latency_ms;
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::DegenerateLatency(t));
    }
    if cfg.energy_budget_j.is_some_and(|budget| result.total_energy_j > budget) {
        return Ok(0.0);
    }
    let (a, b) = cfg.weights(bandwidth);
    Ok(a * result.accuracy + b * (cfg.t_ref_ms / t))
}

/// Network input: `[min(T_ref/T, 1.5), min(e/e_norm, 1.5), acc, B/B_max]`,
/// where `e_norm` is the energy budget or `e_ref` when unbounded. Energy is
/// clipped like latency: slow uplinks can push it orders of magnitude past
/// the reference.
pub fn normalize_state(state: &EnvState, cfg: &RewardConfig) -> [f64; STATE_DIM] {
    let latency = if state.latency_ms > 0.0 { (cfg.t_ref_ms / state.latency_ms).clamp(0.0, 1.5) } else { 1.5 };
    let e_norm = cfg.energy_budget_j.unwrap_or(cfg.e_ref_j);
    [latency, (state.energy_j / e_norm).clamp(0.0, 1.5), state.accuracy, state.bandwidth / cfg.b_max]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BandwidthProcess {
    Fixed {
        bandwidth: f64,
    },
    /// Cycles through the grid, one point per step.
    GridSweep {
        grid: Vec<f64>,
    },
    /// Independent uniform draw from `[lo, hi]` every step.
    Uniform {
        lo: f64,
        hi: f64,
    },
    /// `B' = clamp(B + U(-step, step), lo, hi)`; starts uniformly in range
    /// unless `start` is given.
    BoundedRandomWalk {
        lo: f64,
        hi: f64,
        step: f64,
        #[serde(default)]
        start: Option<f64>,
    },
}

impl BandwidthProcess {
    pub fn fixed_mb(mb_per_s: f64) -> Self {
        BandwidthProcess::Fixed { bandwidth: mb_per_s * MB_PER_S }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("bandwidth process: {msg}")));
        let ok_bw = |b: f64| b.is_finite() && b >= 0.0;
        match self {
            BandwidthProcess::Fixed { bandwidth } if !ok_bw(*bandwidth) => {
                bad(format!("invalid bandwidth {bandwidth}"))
            }
            BandwidthProcess::GridSweep { grid } if grid.is_empty() || !grid.iter().all(|&b| ok_bw(b)) => {
                bad("grid must be non-empty with finite non-negative points".into())
            }
            BandwidthProcess::Uniform { lo, hi } if !(ok_bw(*lo) && ok_bw(*hi) && lo <= hi) => {
                bad(format!("invalid range [{lo}, {hi}]"))
            }
            BandwidthProcess::BoundedRandomWalk { lo, hi, step, start } => {
                if !(ok_bw(*lo) && ok_bw(*hi) && lo <= hi) {
                    return bad(format!("invalid range [{lo}, {hi}]"));
                }
                if !(step.is_finite() && *step >= 0.0) {
                    return bad(format!("invalid step {step}"));
                }
                if start.is_some_and(|s| !(s >= *lo && s <= *hi)) {
                    return bad("start outside range".into());
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Inclusive range of emitted values.
    pub fn range(&self) -> (f64, f64) {
        match self {
            BandwidthProcess::Fixed { bandwidth } => (*bandwidth, *bandwidth),
            BandwidthProcess::GridSweep { grid } => {
                (grid.iter().copied().fold(f64::INFINITY, f64::min), grid.iter().copied().fold(0.0, f64::max))
            }
            BandwidthProcess::Uniform { lo, hi } | BandwidthProcess::BoundedRandomWalk { lo, hi, .. } => (*lo, *hi),
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

#[derive(Debug, Clone)]
struct BandwidthState {
    process: BandwidthProcess,
    rng: ChaCha8Rng,
    cursor: usize,
    current: f64,
}

impl BandwidthState {
    fn new(process: BandwidthProcess, seed: u64) -> Self {
        BandwidthState { process, rng: ChaCha8Rng::seed_from_u64(seed), cursor: 0, current: 0.0 }
    }

    fn reset(&mut self) -> f64 {
        self.cursor = 0;
        self.current = match &self.process {
            BandwidthProcess::Fixed { bandwidth } => *bandwidth,
            BandwidthProcess::GridSweep { grid } => grid[0],
            BandwidthProcess::Uniform { lo, hi } => uniform(&mut self.rng, *lo, *hi),
            BandwidthProcess::BoundedRandomWalk { lo, hi, start, .. } => {
                start.unwrap_or_else(|| if hi > lo { self.rng.random_range(*lo..=*hi) } else { *lo })
            }
        };
        self.current
    }

    fn advance(&mut self) -> f64 {
        self.current = match &self.process {
            BandwidthProcess::Fixed { bandwidth } => *bandwidth,
            BandwidthProcess::GridSweep { grid } => {
                self.cursor = (self.cursor + 1) % grid.len();
                grid[self.cursor]
            }
            BandwidthProcess::Uniform { lo, hi } => uniform(&mut self.rng, *lo, *hi),
            BandwidthProcess::BoundedRandomWalk { lo, hi, step, .. } => {
                let delta = if *step > 0.0 { self.rng.random_range(-*step..=*step) } else { 0.0 };
                (self.current + delta).clamp(*lo, *hi)
            }
        };
        self.current
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub horizon: usize,
    pub channel_mode: ChannelMode,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig { horizon: 64, channel_mode: ChannelMode::RawRate, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    pub action: Action,
    /// False when the slot is outside the valid action set.
    pub valid: bool,
    /// False when the action could not be evaluated (zero uplink rate).
    pub feasible: bool,
    pub result: Option<EvalResult>,
    /// Bandwidth the action was evaluated under.
    pub bandwidth: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub state: EnvState,
    pub reward: f64,
    /// Horizon reached. Time-limit truncation, not a terminal state.
    pub truncated: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone)]
pub struct Env {
    evaluator: Arc<Evaluator>,
    reward_cfg: RewardConfig,
    cfg: EnvConfig,
    bandwidth: BandwidthState,
    mask: Vec<bool>,
    state: EnvState,
    t: usize,
}

impl Env {
    pub fn new(
        evaluator: Arc<Evaluator>,
        reward_cfg: RewardConfig,
        process: BandwidthProcess,
        cfg: EnvConfig,
    ) -> Result<Self> {
        reward_cfg.validate()?;
        process.validate()?;
        if cfg.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        let mask = evaluator.space().mask();
        let bandwidth = BandwidthState::new(process, cfg.seed);
        let mut env = Env {
            evaluator,
            reward_cfg,
            cfg,
            bandwidth,
            mask,
            state: EnvState { latency_ms: 0.0, energy_j: 0.0, accuracy: 0.0, bandwidth: 0.0 },
            t: 0,
        };
        env.reset();
        Ok(env)
    }

    pub fn evaluator(&self) -> &Arc<Evaluator> {
        &self.evaluator
    }

    pub fn reward_config(&self) -> &RewardConfig {
        &self.reward_cfg
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn n_actions(&self) -> usize {
        self.mask.len()
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn observation(&self) -> [f64; STATE_DIM] {
        normalize_state(&self.state, &self.reward_cfg)
    }

    /// Same environment, bandwidth pinned to `bandwidth`.
    pub fn with_fixed_bandwidth(&self, bandwidth: f64) -> Result<Env> {
        Env::new(
            self.evaluator.clone(),
            self.reward_cfg.clone(),
            BandwidthProcess::Fixed { bandwidth },
            self.cfg.clone(),
        )
    }

    /// Starts an episode from the on-device reference outcome at the
    /// process's first bandwidth.
    pub fn reset(&mut self) -> EnvState {
        self.t = 0;
        let bw = self.bandwidth.reset();
        let local = self
            .evaluator
            .evaluate(&self.evaluator.on_device_reference(), &self.evaluator.channel(self.cfg.channel_mode, bw))
            .expect("on-device reference needs no uplink");
        self.state = EnvState {
            latency_ms: local.total_latency_ms,
            energy_j: local.total_energy_j,
            accuracy: local.accuracy,
            bandwidth: bw,
        };
        self.state
    }

    /// Scores `action` (a flattened slot) under the current bandwidth, then
    /// advances the bandwidth process. Invalid or unevaluable actions earn 0
    /// and leave latency/energy/accuracy unchanged.
    pub fn step(&mut self, action: usize) -> Step {
        let space = self.evaluator.space();
        let bw = self.state.bandwidth;
        let decoded = if action < space.len() { space.action(action) } else { Action { ep: 0, pp: 0, bits: 0 } };
        let valid = action < self.mask.len() && self.mask[action];
        let mut info = StepInfo { action: decoded, valid, feasible: false, result: None, bandwidth: bw };
        let mut reward_value = 0.0;
        if valid {
            let channel = self.evaluator.channel(self.cfg.channel_mode, bw);
            if let Ok(r) = self.evaluator.evaluate(&decoded, &channel) {
                reward_value = reward(&r, bw, &self.reward_cfg).unwrap_or(0.0);
                info.feasible = true;
                info.result = Some(r);
                self.state.latency_ms = r.total_latency_ms;
                self.state.energy_j = r.total_energy_j;
                self.state.accuracy = r.accuracy;
            }
        }
        self.state.bandwidth = self.bandwidth.advance();
        self.t += 1;
        Step { state: self.state, reward: reward_value, truncated: self.t >= self.cfg.horizon, info }
    }
}

/// The reward-maximizing evaluation helper used by the oracle and sweeps:
/// reward of `action` at `bandwidth`, 0 when it cannot be evaluated.
pub fn action_reward(eval: &Evaluator, cfg: &RewardConfig, mode: ChannelMode, action: &Action, bandwidth: f64) -> f64 {
    eval.evaluate(action, &eval.channel(mode, bandwidth))
        .ok()
        .and_then(|r| reward(&r, bandwidth, cfg).ok())
        .unwrap_or(0.0)
}

pub fn action_mask(eval: &Evaluator) -> Vec<bool> {
    eval.space().mask()
}
