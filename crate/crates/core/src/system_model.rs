//! Deterministic evaluator mapping (profile, action, channel) to latency,
//! device energy and accuracy.
//!
//! Latency splits into device compute over layers `1..=pp`, transmission of
//! layer `pp`'s (quantized, Huffman-coded) output, and edge compute over layers
//! `pp+1..=exit`. Device energy is `sum k0 f^2 O_i X_i` over device-side layers
//! plus `P * bytes / R` for the uplink, where `R` is the bandwidth itself
//! (`raw_rate`) or `B log2(1 + P*sinr)` (`shannon`).

use std::collections::BTreeMap;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Exec};
use crate::profile::{DeviceProfile, ModelProfile};
use crate::quantization::{accuracy_after, compressed_size_with, synthetic_feature_map, QuantConfig};

pub const DEFAULT_BITS: [u8; 3] = [8, 12, 16];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Action {
    /// Exit point, 1-based.
    pub ep: usize,
    /// Partition point: layers `1..=pp` run on the device.
    pub pp: usize,
    /// Quantization bits for the transmitted feature map.
    pub bits: u8,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(ep={}, pp={}, c={})", self.ep, self.pp, self.bits)
    }
}

/// Flattened joint action space `exits x (max_layers + 1) x bits`, with a
/// validity mask for partition points beyond a branch's length.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSpace {
    pub layer_counts: Vec<usize>,
    pub bits: Vec<u8>,
}

impl ActionSpace {
    pub fn new(profile: &ModelProfile, bits: &[u8]) -> Result<Self> {
        if bits.is_empty() {
            return Err(Error::Config("quantization bit set is empty".into()));
        }
        let mut sorted = bits.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        Ok(ActionSpace { layer_counts: profile.exits().iter().map(|e| e.layer_count).collect(), bits: sorted })
    }

    fn pp_slots(&self) -> usize {
        self.layer_counts.iter().max().map_or(0, |m| m + 1)
    }

    /// Number of flattened slots, valid or not.
    pub fn len(&self) -> usize {
        self.layer_counts.len() * self.pp_slots() * self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_valid(&self, a: &Action) -> bool {
        a.ep >= 1
            && a.ep <= self.layer_counts.len()
            && a.pp <= self.layer_counts[a.ep - 1]
            && self.bits.contains(&a.bits)
    }

    pub fn index_of(&self, a: &Action) -> Option<usize> {
        if !self.is_valid(a) {
            return None;
        }
        let b = self.bits.iter().position(|&b| b == a.bits)?;
        Some(((a.ep - 1) * self.pp_slots() + a.pp) * self.bits.len() + b)
    }

    /// Decodes a slot; the result may be invalid (see [`Self::mask`]).
    pub fn action(&self, index: usize) -> Action {
        let nb = self.bits.len();
        let bits = self.bits[index % nb];
        let rest = index / nb;
        Action { ep: rest / self.pp_slots() + 1, pp: rest % self.pp_slots(), bits }
    }

    pub fn mask(&self) -> Vec<bool> {
        (0..self.len()).map(|i| self.is_valid(&self.action(i))).collect()
    }

    /// Valid actions in (ep, pp, bits) order, matching flattened order.
    pub fn valid_actions(&self) -> Vec<Action> {
        (0..self.len()).map(|i| self.action(i)).filter(|a| self.is_valid(a)).collect()
    }
}

pub fn enumerate_actions(profile: &ModelProfile, bits: &[u8]) -> Result<Vec<Action>> {
    Ok(ActionSpace::new(profile, bits)?.valid_actions())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelMode {
    #[default]
    RawRate,
    Shannon,
}

impl std::str::FromStr for ChannelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw_rate" | "raw" => Ok(ChannelMode::RawRate),
            "shannon" => Ok(ChannelMode::Shannon),
            other => Err(Error::Config(format!("unknown channel mode '{other}' (raw_rate|shannon)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub mode: ChannelMode,
    /// Bytes per second.
    pub bandwidth: f64,
    pub tx_power_w: f64,
    pub sinr: f64,
}

impl ChannelConfig {
    pub fn for_device(mode: ChannelMode, bandwidth: f64, device: &DeviceProfile) -> Self {
        ChannelConfig { mode, bandwidth, tx_power_w: device.tx_power_w, sinr: device.sinr }
    }

    pub fn with_bandwidth(self, bandwidth: f64) -> Self {
        ChannelConfig { bandwidth, ..self }
    }

    /// Effective uplink rate in bytes per second.
    pub fn rate(&self) -> f64 {
        match self.mode {
            ChannelMode::RawRate => self.bandwidth,
            ChannelMode::Shannon => self.bandwidth * (1.0 + self.tx_power_w * self.sinr).log2(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub device_latency_ms: f64,
    pub transmission_latency_ms: f64,
    pub edge_latency_ms: f64,
    pub total_latency_ms: f64,
    pub compute_energy_j: f64,
    pub transmission_energy_j: f64,
    pub total_energy_j: f64,
    pub accuracy: f64,
    pub transmitted_bytes: u64,
}

/// Bytes sent over the uplink for every (partition point, bits) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionTable {
    raw_input: u64,
    sizes: BTreeMap<(usize, u8), u64>,
}

impl TransmissionTable {
    pub fn build(profile: &ModelProfile, bits: &[u8], quant: &QuantConfig, seed: u64) -> Result<Self> {
        Self::build_with(Exec::default(), profile, bits, quant, seed)
    }

    /// Compressed sizes come from synthetic feature maps of each layer's
    /// element count and sparsity. The map for a layer depends only on
    /// `seed` and the layer index, so sizes are comparable across bit-widths.
    pub fn build_with(exec: Exec, profile: &ModelProfile, bits: &[u8], quant: &QuantConfig, seed: u64) -> Result<Self> {
        let mut jobs: Vec<(usize, f64, f64, u8)> = Vec::new();
        for (i, layer) in profile.layers().iter().enumerate() {
            for &b in bits {
                jobs.push((i + 1, layer.output_size, layer.sparsity(), b));
            }
        }
        if quant.quantize_raw_input {
            for &b in bits {
                jobs.push((0, profile.input_size, 0.0, b));
            }
        }
        let sizes = par::map_with(exec, &jobs, |&(index, bytes, sparsity, b)| {
            let n = ((bytes / 4.0).round() as usize).max(1);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let x = synthetic_feature_map(n, sparsity, &mut rng);
            compressed_size_with(quant, &x, b).map(|s| ((index, b), s.total()))
        });
        Ok(TransmissionTable {
            raw_input: profile.input_size.ceil() as u64,
            sizes: sizes.into_iter().collect::<Result<_>>()?,
        })
    }

    /// Bytes sent when partitioning after layer `pp` (0 = raw input).
    pub fn bytes(&self, pp: usize, bits: u8) -> Option<u64> {
        match self.sizes.get(&(pp, bits)) {
            Some(&s) => Some(s),
            None if pp == 0 => Some(self.raw_input),
            None => None,
        }
    }
}

/// A profile bound to a bit set, quantization settings and a precomputed
/// transmission table. Immutable; share freely across threads.
#[derive(Debug, Clone)]
pub struct Evaluator {
    profile: ModelProfile,
    quant: QuantConfig,
    space: ActionSpace,
    table: TransmissionTable,
}

impl Evaluator {
    pub fn new(profile: ModelProfile, bits: &[u8], quant: QuantConfig, seed: u64) -> Result<Self> {
        let space = ActionSpace::new(&profile, bits)?;
        let table = TransmissionTable::build(&profile, &space.bits, &quant, seed)?;
        Ok(Evaluator { profile, quant, space, table })
    }

    pub fn bundled() -> Result<Self> {
        Self::new(ModelProfile::bundled(), &DEFAULT_BITS, QuantConfig::default(), 0)
    }

    pub fn profile(&self) -> &ModelProfile {
        &self.profile
    }

    pub fn space(&self) -> &ActionSpace {
        &self.space
    }

    pub fn quant(&self) -> &QuantConfig {
        &self.quant
    }

    pub fn table(&self) -> &TransmissionTable {
        &self.table
    }

    pub fn channel(&self, mode: ChannelMode, bandwidth: f64) -> ChannelConfig {
        ChannelConfig::for_device(mode, bandwidth, &self.profile.device)
    }

    /// Deepest exit executed entirely on the device.
    pub fn on_device_reference(&self) -> Action {
        let deepest = self.profile.topology.deepest_exit();
        Action { ep: deepest.exit_id, pp: deepest.layer_count, bits: self.space.bits[0] }
    }

    pub fn evaluate(&self, action: &Action, channel: &ChannelConfig) -> Result<EvalResult> {
        if !self.space.is_valid(action) {
            return Err(Error::InvalidAction(format!("{action} is outside the action space")));
        }
        let exit_len = self.space.layer_counts[action.ep - 1];
        let layers = &self.profile.layers()[..exit_len];
        let (device_side, edge_side) = layers.split_at(action.pp);

        // `fold` from +0.0: an empty f64 `sum()` is -0.0, which leaks into CSVs.
        let device_latency_ms = device_side.iter().fold(0.0, |acc, l| acc + l.device_latency_ms);
        let edge_latency_ms = edge_side.iter().fold(0.0, |acc, l| acc + l.edge_latency_ms);
        let dev = &self.profile.device;
        let cycles = device_side.iter().fold(0.0, |acc, l| acc + l.cycles());
        let compute_energy_j = dev.k0 * dev.frequency_hz * dev.frequency_hz * cycles;

        let transmitted_bytes = if action.pp == exit_len {
            0
        } else {
            self.table
                .bytes(action.pp, action.bits)
                .ok_or_else(|| Error::InvalidAction(format!("no transmission size for {action}")))?
        };
        let (transmission_latency_ms, transmission_energy_j) = if transmitted_bytes == 0 {
            (0.0, 0.0)
        } else {
            let rate = channel.rate();
            if !(rate > 0.0) {
                return Err(Error::ZeroRate(transmitted_bytes));
            }
            let seconds = transmitted_bytes as f64 / rate;
            (seconds * 1e3, channel.tx_power_w * seconds)
        };

        Ok(EvalResult {
            device_latency_ms,
            transmission_latency_ms,
            edge_latency_ms,
            total_latency_ms: device_latency_ms + transmission_latency_ms + edge_latency_ms,
            compute_energy_j,
            transmission_energy_j,
            total_energy_j: compute_energy_j + transmission_energy_j,
            accuracy: accuracy_after(&self.profile, &self.quant, action.ep, action.pp, action.bits)?,
            transmitted_bytes,
        })
    }

    /// Evaluates every valid action; actions that cannot be evaluated under
    /// this channel (zero rate) are skipped.
    pub fn evaluate_all(&self, channel: &ChannelConfig) -> Vec<(Action, EvalResult)> {
        let actions = self.space.valid_actions();
        par::map(&actions, |a| self.evaluate(a, channel).ok().map(|r| (*a, r))).into_iter().flatten().collect()
    }
}

/// True when `a` is at least as good as `b` in latency, accuracy and energy,
/// and strictly better in one of them.
pub fn dominates(a: &EvalResult, b: &EvalResult) -> bool {
    let no_worse =
        a.total_latency_ms <= b.total_latency_ms && a.accuracy >= b.accuracy && a.total_energy_j <= b.total_energy_j;
    let better =
        a.total_latency_ms < b.total_latency_ms || a.accuracy > b.accuracy || a.total_energy_j < b.total_energy_j;
    no_worse && better
}

/// Non-dominated actions in (latency, accuracy, energy), in action order.
pub fn pareto_front(evaluator: &Evaluator, channel: &ChannelConfig) -> Vec<(Action, EvalResult)> {
    let mut all = evaluator.evaluate_all(channel);
    // Sweep in lexicographic (latency, -accuracy, energy) order: a point can
    // only be dominated by one that sorts before it.
    all.sort_by(|(_, x), (_, y)| {
        x.total_latency_ms
            .total_cmp(&y.total_latency_ms)
            .then(y.accuracy.total_cmp(&x.accuracy))
            .then(x.total_energy_j.total_cmp(&y.total_energy_j))
    });
    let mut front: Vec<(Action, EvalResult)> = Vec::new();
    for (a, r) in all {
        if !front.iter().any(|(_, f)| dominates(f, &r)) {
            front.push((a, r));
        }
    }
    front.sort_by_key(|(a, _)| *a);
    front
}
