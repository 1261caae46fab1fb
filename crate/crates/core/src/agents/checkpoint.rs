//! Versioned JSON checkpoints holding the full agent state (networks,
//! targets, optimizer moments, temperature and action space).

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Agent;
use crate::error::{Error, Result};
use crate::system_model::ActionSpace;

pub const CHECKPOINT_FORMAT: &str = "coinfer-agent";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub env_steps: u64,
    pub agent: Agent,
}

impl Checkpoint {
    pub fn new(agent: Agent, env_steps: u64) -> Self {
        Checkpoint { format: CHECKPOINT_FORMAT.into(), version: CHECKPOINT_VERSION, env_steps, agent }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text)?;
        if c.format != CHECKPOINT_FORMAT {
            return Err(Error::CheckpointMismatch(format!("unknown format '{}'", c.format)));
        }
        if c.version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointMismatch(format!("unsupported version {}", c.version)));
        }
        Ok(c)
    }

    /// Fails unless the checkpoint was trained on `space`.
    pub fn check_space(&self, space: &ActionSpace) -> Result<()> {
        if self.agent.space() != space {
            return Err(Error::CheckpointMismatch(format!(
                "checkpoint action space {:?}/{:?} does not match {:?}/{:?}",
                self.agent.space().layer_counts,
                self.agent.space().bits,
                space.layer_counts,
                space.bits
            )));
        }
        Ok(())
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, checkpoint: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, checkpoint.to_json()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{DqnAgent, DqnConfig, SacAgent, SacConfig};
    use crate::profile::tests::toy_profile;

    fn space() -> ActionSpace {
        ActionSpace::new(&toy_profile(), &[8, 16]).unwrap()
    }

    #[test]
    fn roundtrip_sac_and_dqn() {
        let cfg = SacConfig { hidden_width: 4, hidden_layers: 1, twin_q: true, ..Default::default() };
        for agent in [
            Agent::Sac(SacAgent::new(cfg, space(), 1).unwrap()),
            Agent::Dqn(
                DqnAgent::new(DqnConfig { hidden_width: 4, hidden_layers: 1, ..Default::default() }, space(), 1)
                    .unwrap(),
            ),
        ] {
            let c = Checkpoint::new(agent, 42);
            let back = Checkpoint::from_json(&c.to_json().unwrap()).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.to_json().unwrap(), c.to_json().unwrap());
        }
    }

    #[test]
    fn version_and_space_are_checked() {
        let agent = Agent::Dqn(
            DqnAgent::new(DqnConfig { hidden_width: 4, hidden_layers: 1, ..Default::default() }, space(), 0).unwrap(),
        );
        let c = Checkpoint::new(agent, 0);
        let bumped = c.to_json().unwrap().replace("\"version\": 1", "\"version\": 99");
        assert!(matches!(Checkpoint::from_json(&bumped), Err(Error::CheckpointMismatch(_))));
        let other = ActionSpace::new(&toy_profile(), &[8]).unwrap();
        assert!(c.check_space(&other).is_err());
        assert!(c.check_space(&space()).is_ok());
    }
}
