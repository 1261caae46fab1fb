//! Experiment configuration: one JSON document, every field defaulted.
//! Bandwidths in the file are in MB/s (1 MB = 10^6 bytes); everything is
//! converted to bytes/s when the experiment is built.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agents::{Agent, AgentKind, DqnAgent, DqnConfig, SacAgent, SacConfig, TrainConfig};
use crate::environment::{BandwidthProcess, Env, EnvConfig, RewardConfig};
use crate::error::{Error, Result};
use crate::profile::{load_profile, ModelProfile};
use crate::quantization::QuantConfig;
use crate::system_model::{ChannelMode, Evaluator, DEFAULT_BITS};
use crate::MB_PER_S;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardSettings {
    pub sensitivity_mb: f64,
    pub b_max_mb: f64,
    /// Explicit `n`; `null` uses `1 / ln(1 + b_max/s)`.
    pub normalization: Option<f64>,
    /// Overrides the profile's device budget. `null` keeps the profile value.
    pub energy_budget_j: Option<f64>,
    /// Overrides the on-device latency normalizer.
    pub t_ref_ms: Option<f64>,
}

impl Default for RewardSettings {
    fn default() -> Self {
        RewardSettings {
            sensitivity_mb: 1.0,
            b_max_mb: 10.0,
            normalization: None,
            energy_budget_j: None,
            t_ref_ms: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSettings {
    pub horizon: usize,
    /// Bandwidth process used while training, in MB/s.
    pub train_bandwidth: BandwidthProcess,
}

impl Default for EnvSettings {
    fn default() -> Self {
        EnvSettings { horizon: 64, train_bandwidth: BandwidthProcess::Uniform { lo: 0.0, hi: 10.0 } }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSettings {
    /// Grid in MB/s.
    pub grid_mb: Vec<f64>,
    /// Greedy steps taken at each grid point before the decision is read.
    pub settle_steps: usize,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings { grid_mb: (0..=10).map(f64::from).collect(), settle_steps: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Profile path, relative to the config file. `null` uses the bundled profile.
    pub profile: Option<PathBuf>,
    pub bits: Vec<u8>,
    pub quant: QuantConfig,
    pub channel_mode: ChannelMode,
    /// Seed for the synthetic feature maps behind the transmission table.
    pub table_seed: u64,
    /// Seed for agent initialization, exploration and the bandwidth process.
    pub seed: u64,
    pub reward: RewardSettings,
    pub env: EnvSettings,
    pub agent: AgentKind,
    pub sac: SacConfig,
    pub dqn: DqnConfig,
    pub train: TrainConfig,
    pub sweep: SweepSettings,
    #[serde(skip)]
    base_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            profile: None,
            bits: DEFAULT_BITS.to_vec(),
            quant: QuantConfig::default(),
            channel_mode: ChannelMode::RawRate,
            table_seed: 0,
            seed: 0,
            reward: RewardSettings::default(),
            env: EnvSettings::default(),
            agent: AgentKind::Sac,
            sac: SacConfig::default(),
            dqn: DqnConfig::default(),
            train: TrainConfig::default(),
            sweep: SweepSettings::default(),
            base_dir: None,
        }
    }
}

/// Everything derived from a config that runs share: the evaluator and the
/// resolved reward parameters.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub evaluator: Arc<Evaluator>,
    pub reward: RewardConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.bits.is_empty() {
            return bad("bits must list at least one bit-width".into());
        }
        if let Some(b) = self.bits.iter().find(|b| !self.quant.allowed_bits.contains(b)) {
            return bad(format!("bit-width {b} is not in quant.allowed_bits"));
        }
        let r = &self.reward;
        if !(r.sensitivity_mb > 0.0 && r.sensitivity_mb.is_finite()) || !(r.b_max_mb > 0.0 && r.b_max_mb.is_finite()) {
            return bad("reward.sensitivity_mb and reward.b_max_mb must be positive".into());
        }
        if self.env.horizon == 0 {
            return bad("env.horizon must be at least 1".into());
        }
        self.env.train_bandwidth.validate()?;
        if self.sweep.grid_mb.is_empty() || !self.sweep.grid_mb.iter().all(|b| b.is_finite() && *b >= 0.0) {
            return bad("sweep.grid_mb must be non-empty with finite non-negative values".into());
        }
        self.sac.validate()?;
        self.dqn.validate()?;
        Ok(())
    }

    pub fn profile_path(&self) -> Option<PathBuf> {
        self.profile.as_ref().map(|p| match &self.base_dir {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p.clone(),
        })
    }

    pub fn load_profile(&self) -> Result<ModelProfile> {
        match self.profile_path() {
            Some(p) => load_profile(p),
            None => Ok(ModelProfile::bundled()),
        }
    }

    pub fn build(&self) -> Result<Experiment> {
        self.build_with_profile(self.load_profile()?)
    }

    pub fn build_with_profile(&self, profile: ModelProfile) -> Result<Experiment> {
        self.validate()?;
        let budget = self.reward.energy_budget_j.or(profile.device.energy_budget_j);
        let evaluator = Arc::new(Evaluator::new(profile, &self.bits, self.quant.clone(), self.table_seed)?);
        let mut reward = RewardConfig::for_evaluator(
            &evaluator,
            self.reward.sensitivity_mb * MB_PER_S,
            self.reward.b_max_mb * MB_PER_S,
            budget,
        )?;
        reward.normalization = self.reward.normalization;
        if let Some(t) = self.reward.t_ref_ms {
            reward.t_ref_ms = t;
        }
        reward.validate()?;
        Ok(Experiment { config: self.clone(), evaluator, reward })
    }
}

impl Experiment {
    pub fn env_config(&self, seed: u64) -> EnvConfig {
        EnvConfig { horizon: self.config.env.horizon, channel_mode: self.config.channel_mode, seed }
    }

    /// Training environment with the configured bandwidth process.
    pub fn train_env(&self, seed: u64) -> Result<Env> {
        Env::new(
            self.evaluator.clone(),
            self.reward.clone(),
            scale_process(&self.config.env.train_bandwidth, MB_PER_S),
            self.env_config(seed),
        )
    }

    pub fn new_agent(&self, kind: AgentKind, seed: u64) -> Result<Agent> {
        let space = self.evaluator.space().clone();
        Ok(match kind {
            AgentKind::Sac => Agent::Sac(SacAgent::new(self.config.sac.clone(), space, seed)?),
            AgentKind::Dqn => Agent::Dqn(DqnAgent::new(self.config.dqn.clone(), space, seed)?),
        })
    }

    pub fn grid(&self) -> Vec<f64> {
        self.config.sweep.grid_mb.iter().map(|b| b * MB_PER_S).collect()
    }
}

/// Multiplies every bandwidth in a process by `k`.
pub fn scale_process(p: &BandwidthProcess, k: f64) -> BandwidthProcess {
    match p {
        BandwidthProcess::Fixed { bandwidth } => BandwidthProcess::Fixed { bandwidth: bandwidth * k },
        BandwidthProcess::GridSweep { grid } => {
            BandwidthProcess::GridSweep { grid: grid.iter().map(|b| b * k).collect() }
        }
        BandwidthProcess::Uniform { lo, hi } => BandwidthProcess::Uniform { lo: lo * k, hi: hi * k },
        BandwidthProcess::BoundedRandomWalk { lo, hi, step, start } => {
            BandwidthProcess::BoundedRandomWalk { lo: lo * k, hi: hi * k, step: step * k, start: start.map(|s| s * k) }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_default() {
        assert_eq!(ExperimentConfig::from_json("{}").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn roundtrips_through_json() {
        let mut c = ExperimentConfig::default();
        c.reward.energy_budget_j = Some(0.2);
        c.agent = AgentKind::Dqn;
        assert_eq!(ExperimentConfig::from_json(&c.to_json().unwrap()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_values_with_field_names() {
        for (doc, needle) in [
            (r#"{"bits": []}"#, "bits"),
            (r#"{"bits": [40]}"#, "allowed_bits"),
            (r#"{"env": {"horizon": 0}}"#, "horizon"),
            (r#"{"sweep": {"grid_mb": []}}"#, "grid_mb"),
            (r#"{"sac": {"lr": -1}}"#, "lr"),
        ] {
            let err = ExperimentConfig::from_json(doc).unwrap_err();
            assert!(err.is_validation());
            assert!(err.to_string().contains(needle), "{doc}: {err}");
        }
        assert!(ExperimentConfig::from_json(r#"{"bogus": 1}"#).unwrap_err().is_validation());
    }

    #[test]
    fn builds_bundled_experiment() {
        let e = ExperimentConfig::default().build().unwrap();
        assert_eq!(e.evaluator.space().len(), 189);
        assert_eq!(e.grid().len(), 11);
        assert_eq!(e.reward.b_max, 10.0 * MB_PER_S);
        assert!(e.reward.energy_budget_j.is_none());
    }

    #[test]
    fn relative_profile_path_resolves_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        crate::profile::save_profile(&ModelProfile::bundled(), dir.path().join("p.profile")).unwrap();
        std::fs::write(dir.path().join("c.json"), r#"{"profile": "p.profile"}"#).unwrap();
        let c = ExperimentConfig::load(dir.path().join("c.json")).unwrap();
        assert_eq!(c.load_profile().unwrap(), ModelProfile::bundled());
    }
}
