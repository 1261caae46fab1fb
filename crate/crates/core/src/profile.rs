//! Measured characteristics of a multi-branch network and of the device/edge
//! pair. Everything downstream is pure computation over a [`ModelProfile`].
//!
//! Profiles are stored as a single JSON document carrying a `version` field.
//! The quantization accuracy table may be given per layer (`entries`) or as
//! per-kind defaults (`kind_defaults`) which are expanded to every layer of
//! every exit on load; explicit entries win over defaults.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PROFILE_VERSION: u32 = 1;

const BUNDLED_ALEXNET: &str = include_str!("../profiles/alexnet_branchy.profile");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Convolution,
    FullyConnected,
    Activation,
    Pooling,
    Normalization,
    Other,
}

impl LayerKind {
    /// Default zero-mass of the synthetic feature map emitted by this kind.
    pub fn default_sparsity(self) -> f64 {
        match self {
            LayerKind::Activation => 0.9,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerProfile {
    pub name: String,
    pub kind: LayerKind,
    /// Milliseconds on the end device.
    pub device_latency_ms: f64,
    /// Milliseconds on the edge server.
    pub edge_latency_ms: f64,
    /// Bytes of the raw 32-bit feature map emitted by this layer.
    pub output_size: f64,
    /// CPU cycles per processed byte.
    pub intensity: f64,
    /// Bytes processed by this layer.
    pub processed_size: f64,
    /// Fraction of exact zeros in this layer's output, used by the synthetic
    /// feature-map generator. Falls back to [`LayerKind::default_sparsity`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sparsity: Option<f64>,
}

impl LayerProfile {
    pub fn sparsity(&self) -> f64 {
        self.sparsity.unwrap_or_else(|| self.kind.default_sparsity())
    }

    /// Device cycles spent on this layer, `O_i * X_p`.
    pub fn cycles(&self) -> f64 {
        self.intensity * self.processed_size
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitBranch {
    /// 1-based.
    pub exit_id: usize,
    /// The exit runs the first `layer_count` layers of the topology.
    pub layer_count: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchTopology {
    pub layers: Vec<LayerProfile>,
    pub exits: Vec<ExitBranch>,
}

impl BranchTopology {
    pub fn exit(&self, exit_id: usize) -> Option<&ExitBranch> {
        self.exits.iter().find(|e| e.exit_id == exit_id)
    }

    pub fn layer_count(&self, exit_id: usize) -> Option<usize> {
        self.exit(exit_id).map(|e| e.layer_count)
    }

    pub fn deepest_exit(&self) -> &ExitBranch {
        self.exits.iter().max_by_key(|e| e.layer_count).expect("validated topology has at least one exit")
    }

    pub fn max_layer_count(&self) -> usize {
        self.exits.iter().map(|e| e.layer_count).max().unwrap_or(0)
    }
}

/// Key of one accuracy-drop cell: (exit id, layer index, bits). Layer index 0
/// is the raw network input.
pub type QuantKey = (usize, usize, u8);

#[derive(Debug, Clone, Default, PartialEq)]
pub struct QuantAccuracyTable {
    kind_defaults: BTreeMap<LayerKind, BTreeMap<u8, f64>>,
    raw_input: BTreeMap<u8, f64>,
    entries: BTreeMap<QuantKey, f64>,
}

impl QuantAccuracyTable {
    pub fn get(&self, exit_id: usize, layer_index: usize, bits: u8) -> Option<f64> {
        self.entries.get(&(exit_id, layer_index, bits)).copied()
    }

    pub fn insert(&mut self, exit_id: usize, layer_index: usize, bits: u8, drop: f64) {
        self.entries.insert((exit_id, layer_index, bits), drop);
    }

    pub fn entries(&self) -> impl Iterator<Item = (QuantKey, f64)> + '_ {
        self.entries.iter().map(|(k, v)| (*k, *v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Expands per-kind and raw-input defaults into per-layer entries without
    /// overwriting explicit ones. Total: exits pointing past the layer list are
    /// clamped, the validator reports them separately.
    fn materialize(&mut self, topology: &BranchTopology) {
        let kind_defaults = std::mem::take(&mut self.kind_defaults);
        let raw_input = std::mem::take(&mut self.raw_input);
        for exit in &topology.exits {
            let n = exit.layer_count.min(topology.layers.len());
            for (&bits, &drop) in &raw_input {
                self.entries.entry((exit.exit_id, 0, bits)).or_insert(drop);
            }
            for (i, layer) in topology.layers[..n].iter().enumerate() {
                if let Some(per_bits) = kind_defaults.get(&layer.kind) {
                    for (&bits, &drop) in per_bits {
                        self.entries.entry((exit.exit_id, i + 1, bits)).or_insert(drop);
                    }
                }
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct QuantEntry {
    exit_id: usize,
    layer_index: usize,
    bits: u8,
    accuracy_drop: f64,
}

#[derive(Serialize, Deserialize)]
struct QuantTableDoc {
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    kind_defaults: BTreeMap<LayerKind, BTreeMap<u8, f64>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    raw_input: BTreeMap<u8, f64>,
    #[serde(default)]
    entries: Vec<QuantEntry>,
}

impl Serialize for QuantAccuracyTable {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        QuantTableDoc {
            kind_defaults: self.kind_defaults.clone(),
            raw_input: self.raw_input.clone(),
            entries: self
                .entries
                .iter()
                .map(|(&(exit_id, layer_index, bits), &accuracy_drop)| QuantEntry {
                    exit_id,
                    layer_index,
                    bits,
                    accuracy_drop,
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for QuantAccuracyTable {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = QuantTableDoc::deserialize(d)?;
        let mut entries = BTreeMap::new();
        for e in doc.entries {
            entries.insert((e.exit_id, e.layer_index, e.bits), e.accuracy_drop);
        }
        Ok(QuantAccuracyTable { kind_defaults: doc.kind_defaults, raw_input: doc.raw_input, entries })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    /// Device energy constant, J*s^2/cycle.
    pub k0: f64,
    /// CPU frequency, cycles/s.
    pub frequency_hz: f64,
    /// Transmission power, W.
    pub tx_power_w: f64,
    /// Link SINR (dimensionless).
    pub sinr: f64,
    /// Device energy budget per inference in joules; `None` is unbounded.
    #[serde(default)]
    pub energy_budget_j: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProfile {
    pub version: u32,
    #[serde(default)]
    pub name: String,
    /// Bytes of the raw network input, sent when partitioning at layer 0.
    pub input_size: f64,
    #[serde(flatten)]
    pub topology: BranchTopology,
    #[serde(default)]
    pub quant_accuracy: QuantAccuracyTable,
    pub device: DeviceProfile,
}

impl ModelProfile {
    /// The bundled multi-branch AlexNet profile (synthetic latency/size values).
    pub fn bundled() -> Self {
        Self::from_json(BUNDLED_ALEXNET).expect("bundled profile is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut profile: ModelProfile = serde_json::from_str(text)?;
        profile.quant_accuracy.materialize(&profile.topology);
        let violations = validate_profile(&profile);
        if violations.is_empty() {
            Ok(profile)
        } else {
            Err(Error::Validation(violations))
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn layers(&self) -> &[LayerProfile] {
        &self.topology.layers
    }

    pub fn exits(&self) -> &[ExitBranch] {
        &self.topology.exits
    }

    pub fn layer_count(&self, exit_id: usize) -> Option<usize> {
        self.topology.layer_count(exit_id)
    }
}

pub fn load_profile(path: impl AsRef<Path>) -> Result<ModelProfile> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ModelProfile::from_json(&text)
}

pub fn save_profile(profile: &ModelProfile, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, profile.to_json()? + "\n").map_err(|e| Error::io(path, e))
}

/// One violated invariant. `field` is a JSON-path-like locator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

struct Checker(Vec<Violation>);

impl Checker {
    fn push(&mut self, field: impl Into<String>, message: impl Into<String>) {
        self.0.push(Violation { field: field.into(), message: message.into() });
    }

    fn non_negative(&mut self, field: impl Into<String>, v: f64) {
        if !v.is_finite() {
            self.push(field, format!("must be finite, got {v}"));
        } else if v < 0.0 {
            self.push(field, format!("must be non-negative, got {v}"));
        }
    }

    fn positive(&mut self, field: impl Into<String>, v: f64) {
        if !(v.is_finite() && v > 0.0) {
            self.push(field, format!("must be finite and positive, got {v}"));
        }
    }

    fn fraction(&mut self, field: impl Into<String>, v: f64) {
        if !(0.0..=1.0).contains(&v) {
            self.push(field, format!("must lie in [0, 1], got {v}"));
        }
    }
}

/// Checks every profile invariant. Never panics; an empty list means valid.
pub fn validate_profile(profile: &ModelProfile) -> Vec<Violation> {
    let mut c = Checker(Vec::new());

    if profile.version != PROFILE_VERSION {
        c.push("version", format!("unsupported version {} (expected {PROFILE_VERSION})", profile.version));
    }
    c.non_negative("input_size", profile.input_size);

    let layers = &profile.topology.layers;
    if layers.is_empty() {
        c.push("layers", "layer list is empty");
    }
    for (i, l) in layers.iter().enumerate() {
        let at = |f: &str| format!("layers[{i}].{f}");
        c.non_negative(at("device_latency_ms"), l.device_latency_ms);
        c.non_negative(at("edge_latency_ms"), l.edge_latency_ms);
        c.non_negative(at("output_size"), l.output_size);
        c.non_negative(at("intensity"), l.intensity);
        c.non_negative(at("processed_size"), l.processed_size);
        if let Some(s) = l.sparsity {
            c.fraction(at("sparsity"), s);
        }
    }

    let exits = &profile.topology.exits;
    if exits.is_empty() {
        c.push("exits", "no exits defined");
    }
    for (i, e) in exits.iter().enumerate() {
        if e.exit_id != i + 1 {
            c.push(format!("exits[{i}].exit_id"), format!("exit ids must be 1..=n in order, got {}", e.exit_id));
        }
        if e.layer_count == 0 {
            c.push(format!("exits[{i}].layer_count"), "exit must use at least one layer");
        }
        c.fraction(format!("exits[{i}].accuracy"), e.accuracy);
    }
    for (i, w) in exits.windows(2).enumerate() {
        if w[1].layer_count <= w[0].layer_count {
            c.push(format!("exits[{}].layer_count", i + 1), "exit layer_counts not strictly increasing");
        }
        if !(w[1].accuracy > w[0].accuracy) {
            c.push(format!("exits[{}].accuracy", i + 1), "exit accuracies not strictly increasing");
        }
    }
    if let Some(last) = exits.last() {
        if last.layer_count != layers.len() {
            c.push(
                format!("exits[{}].layer_count", exits.len() - 1),
                format!("last exit must use all {} layers, uses {}", layers.len(), last.layer_count),
            );
        }
    }

    for ((exit_id, layer_index, bits), drop) in profile.quant_accuracy.entries() {
        let at = format!("quant_accuracy[exit={exit_id},layer={layer_index},bits={bits}]");
        match profile.topology.layer_count(exit_id) {
            None => c.push(&at, format!("unknown exit {exit_id}")),
            Some(n) if layer_index > n => c.push(&at, format!("layer index beyond exit length {n}")),
            _ => {}
        }
        if bits == 0 {
            c.push(&at, "bits must be positive");
        }
        c.fraction(&at, drop);
    }
    // Non-increasing in bits for a fixed (exit, layer); entries are sorted by key.
    let cells: Vec<_> = profile.quant_accuracy.entries().collect();
    for w in cells.windows(2) {
        let ((e0, l0, b0), d0) = w[0];
        let ((e1, l1, b1), d1) = w[1];
        if (e0, l0) == (e1, l1) && d1 > d0 {
            c.push(
                format!("quant_accuracy[exit={e1},layer={l1},bits={b1}]"),
                format!("accuracy_drop increases with bits ({d0} at {b0} bits < {d1} at {b1} bits)"),
            );
        }
    }

    let d = &profile.device;
    c.positive("device.k0", d.k0);
    c.positive("device.frequency_hz", d.frequency_hz);
    c.positive("device.tx_power_w", d.tx_power_w);
    c.non_negative("device.sinr", d.sinr);
    if let Some(b) = d.energy_budget_j {
        c.positive("device.energy_budget_j", b);
    }

    c.0
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Two layers, one exit; every value chosen for easy hand arithmetic.
    pub(crate) fn toy_profile() -> ModelProfile {
        let layer = |name: &str, kind, dev, edge, out| LayerProfile {
            name: name.into(),
            kind,
            device_latency_ms: dev,
            edge_latency_ms: edge,
            output_size: out,
            intensity: 100.0,
            processed_size: 1000.0,
            sparsity: None,
        };
        let mut profile = ModelProfile {
            version: PROFILE_VERSION,
            name: "toy".into(),
            input_size: 4000.0,
            topology: BranchTopology {
                layers: vec![
                    layer("conv", LayerKind::Convolution, 10.0, 2.0, 8000.0),
                    layer("relu", LayerKind::Activation, 1.0, 0.5, 8000.0),
                ],
                exits: vec![ExitBranch { exit_id: 1, layer_count: 2, accuracy: 0.8 }],
            },
            quant_accuracy: QuantAccuracyTable::default(),
            device: DeviceProfile { k0: 1e-27, frequency_hz: 1e9, tx_power_w: 1.0, sinr: 1.0, energy_budget_j: None },
        };
        for layer in 0..=2 {
            profile.quant_accuracy.insert(1, layer, 8, 0.02);
        }
        profile
    }

    #[test]
    fn bundled_profile_matches_published_topology() {
        let p = ModelProfile::bundled();
        assert_eq!(p.layers().len(), 20);
        let counts: Vec<_> = p.exits().iter().map(|e| e.layer_count).collect();
        let accs: Vec<_> = p.exits().iter().map(|e| e.accuracy).collect();
        assert_eq!(counts, [9, 12, 20]);
        assert_eq!(accs, [0.787, 0.817, 0.836]);
        assert!(validate_profile(&p).is_empty());
    }

    #[test]
    fn kind_defaults_expand_per_layer() {
        let p = ModelProfile::bundled();
        // exit 1 covers raw input + 9 layers, exit 2 covers 13, exit 3 covers 21; four bit-widths.
        assert_eq!(p.quant_accuracy.len(), (10 + 13 + 21) * 4);
        let conv = p.quant_accuracy.get(3, 1, 8).unwrap();
        let relu = p.quant_accuracy.get(3, 2, 8).unwrap();
        assert!(conv > relu);
    }

    #[test]
    fn non_increasing_exit_counts_rejected() {
        let mut p = ModelProfile::bundled();
        p.topology.exits[2].layer_count = 12;
        let text = serde_json::to_string(&p).unwrap();
        let err = ModelProfile::from_json(&text).unwrap_err();
        assert!(err.to_string().contains("exit layer_counts not strictly increasing"), "{err}");
    }

    #[test]
    fn empty_layer_list_rejected() {
        let mut p = toy_profile();
        p.topology.layers.clear();
        let v = validate_profile(&p);
        assert!(v.iter().any(|v| v.field == "layers"));
    }

    #[test]
    fn negative_latency_is_one_violation() {
        let mut p = toy_profile();
        p.topology.layers[1].device_latency_ms = -1.0;
        let v = validate_profile(&p);
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].field, "layers[1].device_latency_ms");
    }

    #[test]
    fn increasing_drop_names_the_cell() {
        let mut p = toy_profile();
        p.quant_accuracy.insert(1, 1, 16, 0.05);
        let v = validate_profile(&p);
        assert_eq!(v.len(), 1, "{v:?}");
        assert!(v[0].field.contains("exit=1,layer=1,bits=16"));
    }

    #[test]
    fn nan_fields_do_not_panic() {
        let mut p = toy_profile();
        p.input_size = f64::NAN;
        p.device.k0 = f64::NAN;
        p.topology.exits[0].accuracy = f64::NAN;
        p.topology.exits.push(ExitBranch { exit_id: 7, layer_count: 99, accuracy: f64::INFINITY });
        assert!(validate_profile(&p).len() >= 4);
    }

    #[test]
    fn malformed_json_is_a_parse_error() {
        assert!(matches!(ModelProfile::from_json("{ not json"), Err(Error::Parse(_))));
    }

    #[test]
    fn save_then_load_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.profile");
        let p = ModelProfile::bundled();
        save_profile(&p, &path).unwrap();
        assert_eq!(load_profile(&path).unwrap(), p);
    }
}
