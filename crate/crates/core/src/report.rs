//! Tabular outputs: bandwidth sweeps, single decisions and the
//! quantization/compression report. Column sets are fixed; see the
//! `*_HEADER` constants.

use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::agents::{greedy_decision, oracle_sweep_with, Agent};
use crate::config::Experiment;
use crate::environment::action_reward;
use crate::error::{Error, Result};
use crate::par::{self, Exec};
use crate::profile::ModelProfile;
use crate::quantization::{accuracy_after, QuantConfig};
use crate::system_model::{Action, ChannelMode, EvalResult, Evaluator, TransmissionTable};
use crate::MB_PER_S;

pub const SWEEP_HEADER: &str = "bandwidth_mb,optimizer,ep,pp,c,latency_ms,accuracy,energy_j,reward";
pub const QUANT_HEADER: &str = "layer,name,kind,bits,raw_bytes,compressed_bytes,ratio,accuracy";
pub const EVAL_HEADER: &str = "ep,pp,c,bandwidth_mb,device_latency_ms,transmission_latency_ms,edge_latency_ms,total_latency_ms,compute_energy_j,transmission_energy_j,total_energy_j,accuracy,transmitted_bytes,reward";

pub const ORACLE: &str = "Oracle";
pub const ON_DEVICE: &str = "On Device";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub bandwidth_mb: f64,
    pub optimizer: String,
    pub ep: usize,
    pub pp: usize,
    pub c: u8,
    pub latency_ms: f64,
    pub accuracy: f64,
    pub energy_j: f64,
    pub reward: f64,
}

impl SweepRow {
    pub fn action(&self) -> Action {
        Action { ep: self.ep, pp: self.pp, bits: self.c }
    }

    fn new(optimizer: &str, bandwidth: f64, action: Action, result: Option<EvalResult>, reward: f64) -> Self {
        SweepRow {
            bandwidth_mb: bandwidth / MB_PER_S,
            optimizer: optimizer.to_string(),
            ep: action.ep,
            pp: action.pp,
            c: action.bits,
            latency_ms: result.map_or(f64::INFINITY, |r| r.total_latency_ms),
            accuracy: result.map_or(0.0, |r| r.accuracy),
            energy_j: result.map_or(f64::INFINITY, |r| r.total_energy_j),
            reward,
        }
    }
}

/// One row per grid point (bytes/s) from the exhaustive oracle.
pub fn oracle_rows(exp: &Experiment, grid: &[f64], exec: Exec) -> Vec<SweepRow> {
    let mode = exp.config.channel_mode;
    oracle_sweep_with(exec, &exp.evaluator, mode, grid, &exp.reward)
        .into_iter()
        .zip(grid)
        .map(|(d, &bw)| SweepRow::new(ORACLE, bw, d.action, d.result, d.reward))
        .collect()
}

/// The deepest branch run entirely on the device, at every grid point.
pub fn on_device_rows(exp: &Experiment, grid: &[f64]) -> Vec<SweepRow> {
    let eval = &exp.evaluator;
    let action = eval.on_device_reference();
    grid.iter()
        .map(|&bw| {
            let r = eval.evaluate(&action, &eval.channel(exp.config.channel_mode, bw)).ok();
            let reward = action_reward(eval, &exp.reward, exp.config.channel_mode, &action, bw);
            SweepRow::new(ON_DEVICE, bw, action, r, reward)
        })
        .collect()
}

/// Greedy decisions of a trained agent, evaluated in parallel over the grid
/// on read-only copies.
pub fn agent_rows(exp: &Experiment, name: &str, agent: &Agent, grid: &[f64], exec: Exec) -> Result<Vec<SweepRow>> {
    if agent.space() != exp.evaluator.space() {
        return Err(Error::CheckpointMismatch(format!(
            "agent '{name}' has {} action slots, the profile needs {}",
            agent.space().len(),
            exp.evaluator.space().len()
        )));
    }
    let env = exp.train_env(exp.config.seed)?;
    let settle = exp.config.sweep.settle_steps;
    par::map_with(exec, grid, |&bw| {
        let (action, reward) = greedy_decision(agent, &env, bw, settle)?;
        let r = exp.evaluator.evaluate(&action, &exp.evaluator.channel(exp.config.channel_mode, bw)).ok();
        Ok(SweepRow::new(name, bw, action, r, reward))
    })
    .into_iter()
    .collect()
}

/// Lowest-latency action on the deepest branch that offloads anything.
pub fn best_split(eval: &Evaluator, mode: ChannelMode, bandwidth: f64) -> Option<(Action, EvalResult)> {
    let deepest = eval.on_device_reference().ep;
    eval.evaluate_all(&eval.channel(mode, bandwidth))
        .into_iter()
        .filter(|(a, r)| a.ep == deepest && r.transmitted_bytes > 0)
        .min_by(|x, y| x.1.total_latency_ms.total_cmp(&y.1.total_latency_ms).then(x.0.cmp(&y.0)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizerSummary {
    pub optimizer: String,
    pub mean_reward: f64,
    /// Mean reward relative to the oracle's mean reward.
    pub fraction_of_oracle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeedupSummary {
    pub bandwidth_mb: f64,
    pub on_device_latency_ms: f64,
    pub best_split: Option<Action>,
    pub best_split_latency_ms: Option<f64>,
    /// On-device latency over best-split latency.
    pub speedup: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub grid_points: usize,
    pub optimizers: Vec<OptimizerSummary>,
    pub speedup: SpeedupSummary,
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub summary: SweepSummary,
}

/// Oracle, every agent and the on-device reference over the configured grid.
/// Rows are ordered by grid point, then optimizer.
pub fn run_sweep(exp: &Experiment, agents: &[(String, Agent)]) -> Result<SweepReport> {
    let grid = exp.grid();
    let mut columns: Vec<Vec<SweepRow>> = vec![oracle_rows(exp, &grid, Exec::default())];
    for (name, agent) in agents {
        columns.push(agent_rows(exp, name, agent, &grid, Exec::default())?);
    }
    columns.push(on_device_rows(exp, &grid));

    let oracle_mean = mean(columns[0].iter().map(|r| r.reward));
    let optimizers = columns
        .iter()
        .map(|col| {
            let m = mean(col.iter().map(|r| r.reward));
            OptimizerSummary {
                optimizer: col[0].optimizer.clone(),
                mean_reward: m,
                fraction_of_oracle: if oracle_mean > 0.0 { m / oracle_mean } else { f64::NAN },
            }
        })
        .collect();

    let rows = (0..grid.len()).flat_map(|i| columns.iter().map(move |c| c[i].clone())).collect();
    Ok(SweepReport {
        rows,
        summary: SweepSummary {
            grid_points: grid.len(),
            optimizers,
            speedup: speedup_summary(exp, exp.reward.b_max),
            threads: par::num_threads(),
        },
    })
}

pub fn speedup_summary(exp: &Experiment, bandwidth: f64) -> SpeedupSummary {
    let eval = &exp.evaluator;
    let mode = exp.config.channel_mode;
    let local = eval
        .evaluate(&eval.on_device_reference(), &eval.channel(mode, bandwidth))
        .expect("on-device reference needs no uplink")
        .total_latency_ms;
    let split = best_split(eval, mode, bandwidth);
    SpeedupSummary {
        bandwidth_mb: bandwidth / MB_PER_S,
        on_device_latency_ms: local,
        best_split: split.map(|s| s.0),
        best_split_latency_ms: split.map(|s| s.1.total_latency_ms),
        speedup: split.map(|s| local / s.1.total_latency_ms),
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantRow {
    /// Partition point: the row describes layer `layer`'s output.
    pub layer: usize,
    pub name: String,
    pub kind: String,
    pub bits: u8,
    pub raw_bytes: f64,
    pub compressed_bytes: u64,
    pub ratio: f64,
    /// Accuracy of the deepest exit when partitioned here at `bits`.
    pub accuracy: f64,
}

/// Raw versus quantized-and-coded size of every layer output for each
/// bit-width, with the resulting accuracy.
pub fn quantize_report(profile: &ModelProfile, bits: &[u8], quant: &QuantConfig, seed: u64) -> Result<Vec<QuantRow>> {
    let table = TransmissionTable::build(profile, bits, quant, seed)?;
    let deepest = profile.topology.deepest_exit().exit_id;
    let mut rows = Vec::new();
    for (i, layer) in profile.layers().iter().enumerate() {
        let pp = i + 1;
        for &b in bits {
            let compressed = table.bytes(pp, b).ok_or(Error::UnsupportedBits(b))?;
            rows.push(QuantRow {
                layer: pp,
                name: layer.name.clone(),
                kind: serde_json::to_value(layer.kind)?.as_str().unwrap_or_default().to_string(),
                bits: b,
                raw_bytes: layer.output_size,
                compressed_bytes: compressed,
                ratio: if layer.output_size > 0.0 { compressed as f64 / layer.output_size } else { f64::NAN },
                accuracy: accuracy_after(profile, quant, deepest, pp, b)?,
            });
        }
    }
    Ok(rows)
}

/// Writes `rows` as CSV with a header row derived from the field names.
pub fn write_csv<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Sequential versus parallel wall time of the oracle over `grid`, in seconds.
pub fn time_oracle_sweep(exp: &Experiment, grid: &[f64]) -> (f64, f64) {
    let time = |exec| {
        let t = Instant::now();
        let _ = oracle_rows(exp, grid, exec);
        t.elapsed().as_secs_f64()
    };
    (time(Exec::Sequential), time(Exec::Parallel))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;

    fn exp() -> Experiment {
        ExperimentConfig::default().build().unwrap()
    }

    #[test]
    fn oracle_rows_match_direct_evaluation() {
        let e = exp();
        let grid = e.grid();
        for row in oracle_rows(&e, &grid, Exec::Sequential) {
            let bw = row.bandwidth_mb * MB_PER_S;
            let r = e.evaluator.evaluate(&row.action(), &e.evaluator.channel(ChannelMode::RawRate, bw)).unwrap();
            assert_eq!(row.latency_ms, r.total_latency_ms);
            assert_eq!(row.energy_j, r.total_energy_j);
            assert_eq!(row.reward, action_reward(&e.evaluator, &e.reward, ChannelMode::RawRate, &row.action(), bw));
        }
    }

    #[test]
    fn on_device_latency_is_flat() {
        let e = exp();
        let rows = on_device_rows(&e, &e.grid());
        assert!(rows.iter().all(|r| r.latency_ms == rows[0].latency_ms && r.ep == 3 && r.pp == 20));
    }

    #[test]
    fn sweep_interleaves_optimizers_per_grid_point() {
        let e = exp();
        let rep = run_sweep(&e, &[]).unwrap();
        assert_eq!(rep.rows.len(), 22);
        assert_eq!(rep.rows[0].optimizer, ORACLE);
        assert_eq!(rep.rows[1].optimizer, ON_DEVICE);
        assert_eq!(rep.summary.optimizers[0].fraction_of_oracle, 1.0);
        assert!(rep.summary.speedup.speedup.unwrap() >= 2.0);
    }

    #[test]
    fn quantize_report_ratios() {
        let p = ModelProfile::bundled();
        let rows = quantize_report(&p, &[4, 8, 12, 16], &QuantConfig::default(), 0).unwrap();
        assert_eq!(rows.len(), 20 * 4);
        for r in &rows {
            // Slack for the codebook: 2 bytes plus symbol and length bytes
            // per distinct symbol, of which there are at most min(2^c, n).
            let n = (r.raw_bytes / 4.0).round();
            let distinct = n.min(2f64.powi(r.bits.into()));
            let slack = 2.0 + distinct * ((f64::from(r.bits) / 8.0).ceil() + 1.0);
            assert!(r.compressed_bytes as f64 <= r.raw_bytes + slack, "{r:?}");
            if r.kind == "activation" && r.bits == 8 {
                assert!(r.ratio <= 0.1, "{r:?}");
            }
        }
    }

    #[test]
    fn csv_headers_are_stable() {
        let dir = tempfile::tempdir().unwrap();
        let e = exp();
        let path = dir.path().join("s.csv");
        write_csv(&path, &on_device_rows(&e, &[0.0])).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().next().unwrap(), SWEEP_HEADER);
        let path = dir.path().join("q.csv");
        write_csv(&path, &quantize_report(&ModelProfile::bundled(), &[8], &QuantConfig::default(), 0).unwrap())
            .unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().next().unwrap(), QUANT_HEADER);
    }
}
