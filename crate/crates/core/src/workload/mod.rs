//! Networks, layers, SoC configuration, and the seeded multi-tenant
//! workload generator.

mod generator;
mod netfile;

pub use generator::{GeneratorParams, NetworkRegistry, generate_workload};
pub use netfile::load_network;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Identifies one dispatched inference query within a scenario.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
pub struct TaskId(pub u64);

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Two-way layer classification: high arithmetic intensity (conv/FC) vs
/// bandwidth-bound operators (residual add, pooling).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Compute,
    Mem,
}

/// One DNN layer: the unit of scheduling, estimation and throttling.
///
/// Byte fields describe the traffic footprint of one execution of the
/// layer. `input_b_bytes` is the second operand of a two-input
/// bandwidth-bound operator (e.g. a residual add) and is zero elsewhere.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDesc {
    pub name: String,
    pub kind: LayerKind,
    /// Multiply-accumulate count; nonzero exactly for compute layers.
    pub total_mac: u64,
    pub weight_bytes: u64,
    /// Input activation (operand A) footprint.
    pub input_bytes: u64,
    /// Second operand footprint; only meaningful for memory layers.
    pub input_b_bytes: u64,
    pub output_bytes: u64,
    pub bias_bytes: u64,
    /// Working-set bytes of one tile of the tiled loop nest.
    pub tile_bytes: u64,
    /// Number of tiles in the loop nest, >= 1.
    pub tiling_factor: u64,
}

impl LayerDesc {
    /// Checks the per-layer invariants, naming the violated one.
    pub fn validate(&self) -> Result<()> {
        let ctx = || format!("layer `{}`", self.name);
        match self.kind {
            LayerKind::Compute => {
                if self.total_mac == 0 {
                    return Err(Error::validation(
                        ctx(),
                        "total_mac must be > 0 for compute layers",
                    ));
                }
                if self.input_b_bytes != 0 {
                    return Err(Error::validation(
                        ctx(),
                        "input_b_bytes is only allowed on mem layers",
                    ));
                }
            }
            LayerKind::Mem => {
                if self.total_mac != 0 {
                    return Err(Error::validation(
                        ctx(),
                        "total_mac must be 0 for mem layers",
                    ));
                }
            }
        }
        if self.tiling_factor == 0 {
            return Err(Error::validation(ctx(), "tiling_factor must be >= 1"));
        }
        Ok(())
    }
}

/// An executable network: ordered layers, execution order = list order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkDesc {
    pub name: String,
    pub layers: Vec<LayerDesc>,
}

impl NetworkDesc {
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::validation(
                format!("network `{}`", self.name),
                "must declare at least one layer",
            ));
        }
        for layer in &self.layers {
            layer.validate()?;
        }
        Ok(())
    }
}

/// SoC hardware parameters plus model-only knobs.
///
/// Bandwidths are in bytes per accelerator cycle; at the default 1 GHz a
/// DRAM bandwidth of 16 B/cycle corresponds to 16 GB/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SocConfig {
    pub num_tiles: u32,
    pub pes_per_tile: u32,
    pub scratchpad_bytes_per_tile: u64,
    pub accumulator_bytes_per_tile: u64,
    pub l2_bytes: u64,
    pub l2_banks: u32,
    pub dram_bw_bytes_per_cycle: u64,
    /// Model-only: aggregate shared-cache bandwidth (8 banks x 8 B).
    pub l2_bw_bytes_per_cycle: u64,
    /// Reporting only; cycle counts are the unit of time everywhere.
    pub frequency_hz: u64,
    /// Compute/memory overlap quality, in (0, 1). Tunable per SoC.
    pub overlap_factor: f64,
    /// Cycles a tile is blocked while its throttle registers are rewritten.
    pub mem_repartition_cost_cycles: u64,
    /// Cycles a task is blocked when its tile allocation changes
    /// (thread spawning and synchronization).
    pub compute_repartition_cost_cycles: u64,
    /// Bytes moved per memory request; throttle budgets count requests.
    pub request_granularity_bytes: u64,
    /// Recompute a partitioned layer prediction as bw_rate * from_dram
    /// instead of from_dram / bw_rate. Dimensionally odd; off by default,
    /// kept only for side-by-side comparison.
    pub prediction_update_as_product: bool,
}

impl Default for SocConfig {
    fn default() -> Self {
        SocConfig {
            num_tiles: 8,
            pes_per_tile: 256,
            scratchpad_bytes_per_tile: 128 * 1024,
            accumulator_bytes_per_tile: 64 * 1024,
            l2_bytes: 2 * 1024 * 1024,
            l2_banks: 8,
            dram_bw_bytes_per_cycle: 16,
            l2_bw_bytes_per_cycle: 64,
            frequency_hz: 1_000_000_000,
            overlap_factor: 0.5,
            mem_repartition_cost_cycles: 8,
            compute_repartition_cost_cycles: 1_000_000,
            request_granularity_bytes: 64,
            prediction_update_as_product: false,
        }
    }
}

impl SocConfig {
    pub fn validate(&self) -> Result<()> {
        let ctx = "soc config";
        if self.num_tiles == 0 || self.pes_per_tile == 0 {
            return Err(Error::validation(ctx, "tile and PE counts must be > 0"));
        }
        if self.scratchpad_bytes_per_tile == 0
            || self.accumulator_bytes_per_tile == 0
            || self.l2_bytes == 0
            || self.l2_banks == 0
            || self.dram_bw_bytes_per_cycle == 0
            || self.l2_bw_bytes_per_cycle == 0
            || self.frequency_hz == 0
            || self.request_granularity_bytes == 0
        {
            return Err(Error::validation(ctx, "sizes and bandwidths must be > 0"));
        }
        if !(self.overlap_factor > 0.0 && self.overlap_factor < 1.0) {
            return Err(Error::validation(ctx, "overlap_factor must lie in (0, 1)"));
        }
        if self.dram_bw_bytes_per_cycle > self.l2_bw_bytes_per_cycle {
            return Err(Error::validation(
                ctx,
                "DRAM bandwidth must not exceed L2 bandwidth",
            ));
        }
        Ok(())
    }

    /// Peak MAC throughput of `tiles` tiles, per cycle.
    pub fn macs_per_cycle(&self, tiles: u32) -> f64 {
        f64::from(self.pes_per_tile) * f64::from(tiles)
    }
}

/// One dispatched inference query.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub task_id: TaskId,
    pub network: Arc<NetworkDesc>,
    pub dispatch_cycle: u64,
    /// Static user priority, 0 (lowest) ..= 11 (highest).
    pub user_priority: u8,
    /// End-to-end deadline in cycles, measured from dispatch.
    pub qos_target_cycles: u64,
}

pub const PRIORITY_MAX: u8 = 11;

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        let ctx = || format!("task {}", self.task_id);
        if self.user_priority > PRIORITY_MAX {
            return Err(Error::validation(ctx(), "user_priority must be <= 11"));
        }
        if self.qos_target_cycles == 0 {
            return Err(Error::validation(ctx(), "qos_target_cycles must be > 0"));
        }
        Ok(())
    }

    pub fn deadline_cycle(&self) -> u64 {
        self.dispatch_cycle.saturating_add(self.qos_target_cycles)
    }
}

/// Benchmark grouping by model size: A = light, B = heavy, C = mixed.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum WorkloadSet {
    A,
    B,
    C,
}

impl WorkloadSet {
    /// Names of the benchmark networks belonging to the set.
    pub fn network_names(self) -> &'static [&'static str] {
        const LIGHT: &[&str] = &["squeezenet", "yololite", "kws"];
        const HEAVY: &[&str] = &["googlenet", "alexnet", "resnet50", "yolov2"];
        const ALL: &[&str] = &[
            "squeezenet",
            "yololite",
            "kws",
            "googlenet",
            "alexnet",
            "resnet50",
            "yolov2",
        ];
        match self {
            WorkloadSet::A => LIGHT,
            WorkloadSet::B => HEAVY,
            WorkloadSet::C => ALL,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(WorkloadSet::A),
            "B" => Ok(WorkloadSet::B),
            "C" => Ok(WorkloadSet::C),
            other => Err(Error::UnknownSet(other.to_string())),
        }
    }
}

impl fmt::Display for WorkloadSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WorkloadSet::A => write!(f, "A"),
            WorkloadSet::B => write!(f, "B"),
            WorkloadSet::C => write!(f, "C"),
        }
    }
}

/// Latency-target tightness: light (1.2x), medium (1.0x), hard (0.8x).
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum QosLevel {
    L,
    M,
    H,
}

impl QosLevel {
    pub fn multiplier(self) -> f64 {
        match self {
            QosLevel::L => 1.2,
            QosLevel::M => 1.0,
            QosLevel::H => 0.8,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "L" => Ok(QosLevel::L),
            "M" => Ok(QosLevel::M),
            "H" => Ok(QosLevel::H),
            other => Err(Error::validation(
                "qos level",
                format!("unknown level `{other}` (expected L, M or H)"),
            )),
        }
    }
}

impl fmt::Display for QosLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QosLevel::L => write!(f, "L"),
            QosLevel::M => write!(f, "M"),
            QosLevel::H => write!(f, "H"),
        }
    }
}

/// A generated multi-tenant scenario: the input to one simulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadScenario {
    pub tasks: Vec<TaskSpec>,
    pub workload_set: WorkloadSet,
    pub qos_level: QosLevel,
    pub seed: u64,
}

impl WorkloadScenario {
    /// A single-purpose scenario wrapper for hand-built task lists.
    pub fn from_tasks(tasks: Vec<TaskSpec>) -> Self {
        WorkloadScenario {
            tasks,
            workload_set: WorkloadSet::C,
            qos_level: QosLevel::M,
            seed: 0,
        }
    }
}

/// Priority buckets used when reporting SLA satisfaction per group:
/// 0-2 low, 3-8 mid, 9-11 high.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum PriorityGroup {
    Low,
    Mid,
    High,
}

impl PriorityGroup {
    pub fn of(priority: u8) -> Self {
        match priority {
            0..=2 => PriorityGroup::Low,
            3..=8 => PriorityGroup::Mid,
            _ => PriorityGroup::High,
        }
    }

    pub const ALL: [PriorityGroup; 3] =
        [PriorityGroup::Low, PriorityGroup::Mid, PriorityGroup::High];
}

impl fmt::Display for PriorityGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PriorityGroup::Low => write!(f, "p-Low"),
            PriorityGroup::Mid => write!(f, "p-Mid"),
            PriorityGroup::High => write!(f, "p-High"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn compute_layer(mac: u64) -> LayerDesc {
        LayerDesc {
            name: "l".into(),
            kind: LayerKind::Compute,
            total_mac: mac,
            weight_bytes: 100,
            input_bytes: 100,
            input_b_bytes: 0,
            output_bytes: 100,
            bias_bytes: 10,
            tile_bytes: 310,
            tiling_factor: 1,
        }
    }

    #[test]
    fn compute_layer_requires_macs() {
        let err = compute_layer(0).validate().unwrap_err();
        assert!(err.to_string().contains("total_mac"));
        assert!(compute_layer(1).validate().is_ok());
    }

    #[test]
    fn mem_layer_rejects_macs() {
        let mut l = compute_layer(5);
        l.kind = LayerKind::Mem;
        let err = l.validate().unwrap_err();
        assert!(err.to_string().contains("total_mac"));
    }

    #[test]
    fn empty_network_rejected() {
        let net = NetworkDesc {
            name: "empty".into(),
            layers: vec![],
        };
        assert!(net.validate().is_err());
    }

    #[test]
    fn soc_defaults_are_consistent() {
        let soc = SocConfig::default();
        soc.validate().unwrap();
        assert_eq!(soc.num_tiles, 8);
        assert_eq!(soc.pes_per_tile, 256);
        assert_eq!(soc.l2_bytes, 2 * 1024 * 1024);
        assert!(soc.dram_bw_bytes_per_cycle <= soc.l2_bw_bytes_per_cycle);
    }

    #[test]
    fn priority_buckets() {
        assert_eq!(PriorityGroup::of(1), PriorityGroup::Low);
        assert_eq!(PriorityGroup::of(5), PriorityGroup::Mid);
        assert_eq!(PriorityGroup::of(10), PriorityGroup::High);
        assert_eq!(PriorityGroup::of(2), PriorityGroup::Low);
        assert_eq!(PriorityGroup::of(3), PriorityGroup::Mid);
        assert_eq!(PriorityGroup::of(8), PriorityGroup::Mid);
        assert_eq!(PriorityGroup::of(9), PriorityGroup::High);
    }
}
