use serde::Serialize;

use crate::environment::{reward, RewardConfig};
use crate::par::{self, Exec};
use crate::system_model::{Action, ChannelMode, EvalResult, Evaluator};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleDecision {
    pub action: Action,
    /// Flattened slot index.
    pub index: usize,
    pub reward: f64,
    /// `None` when no valid action is evaluable (all rewards 0).
    pub result: Option<EvalResult>,
}

/// Exhaustive search over every valid action. Unevaluable actions score 0;
/// ties go to the lowest flattened index.
pub fn oracle_best(eval: &Evaluator, mode: ChannelMode, bandwidth: f64, cfg: &RewardConfig) -> OracleDecision {
    let space = eval.space();
    let channel = eval.channel(mode, bandwidth);
    let mut best: Option<OracleDecision> = None;
    for index in 0..space.len() {
        let action = space.action(index);
        if !space.is_valid(&action) {
            continue;
        }
        let result = eval.evaluate(&action, &channel).ok();
        let r = result.and_then(|res| reward(&res, bandwidth, cfg).ok()).unwrap_or(0.0);
        if best.is_none_or(|b| r > b.reward) {
            best = Some(OracleDecision { action, index, reward: r, result });
        }
    }
    best.expect("action space has at least one valid action")
}

/// Oracle decisions for every bandwidth in `grid`, in grid order.
pub fn oracle_sweep(eval: &Evaluator, mode: ChannelMode, grid: &[f64], cfg: &RewardConfig) -> Vec<OracleDecision> {
    oracle_sweep_with(Exec::default(), eval, mode, grid, cfg)
}

pub fn oracle_sweep_with(
    exec: Exec,
    eval: &Evaluator,
    mode: ChannelMode,
    grid: &[f64],
    cfg: &RewardConfig,
) -> Vec<OracleDecision> {
    par::map_with(exec, grid, |&bw| oracle_best(eval, mode, bw, cfg))
}
