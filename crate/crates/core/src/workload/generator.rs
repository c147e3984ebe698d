//! Seeded generation of multi-tenant inference scenarios.
//!
//! Tasks are drawn uniformly from the workload set's networks, dispatch
//! times follow a Poisson arrival process (exponential inter-arrival
//! gaps), priorities follow a configurable discrete distribution over
//! 0..=11, and QoS targets are set relative to each network's isolated
//! full-SoC latency from the estimator. Everything is a pure function of
//! `(seed, n, set, level, soc)` plus the generator knobs.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp;
use serde::{Deserialize, Serialize};

use super::netfile::load_network;
use super::{NetworkDesc, QosLevel, SocConfig, TaskId, TaskSpec, WorkloadScenario, WorkloadSet};
use crate::error::{Error, Result};
use crate::estimator::estimate_network;

/// Accepted task-count range for full-scale scenarios.
pub const N_RANGE: (usize, usize) = (200, 500);

/// Generator knobs beyond the `(seed, n, set, level)` tuple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorParams {
    /// QoS baseline = qos_k x isolated full-SoC latency of the network.
    pub qos_k: f64,
    /// Mean inter-arrival gap as a fraction of the set's mean isolated
    /// latency. 0.5 keeps several tenants in flight.
    pub arrival_scale: f64,
    /// Relative weights of priorities 0..=11. The default decays
    /// geometrically (ratio 0.75): low priorities are the most common.
    pub priority_weights: Vec<f64>,
    /// Permit task counts outside the accepted range (desk-scale tests).
    pub allow_any_n: bool,
}

pub fn default_priority_weights() -> Vec<f64> {
    (0..12).map(|p| 0.75_f64.powi(p)).collect()
}

impl Default for GeneratorParams {
    fn default() -> Self {
        GeneratorParams {
            qos_k: 2.0,
            arrival_scale: 0.5,
            priority_weights: default_priority_weights(),
            allow_any_n: false,
        }
    }
}

/// Loaded benchmark networks, keyed by name.
#[derive(Debug, Clone, Default)]
pub struct NetworkRegistry {
    nets: BTreeMap<String, Arc<NetworkDesc>>,
}

impl NetworkRegistry {
    pub fn new() -> Self {
        NetworkRegistry::default()
    }

    pub fn insert(&mut self, net: NetworkDesc) {
        self.nets.insert(net.name.clone(), Arc::new(net));
    }

    pub fn get(&self, name: &str) -> Result<Arc<NetworkDesc>> {
        self.nets
            .get(name)
            .cloned()
            .ok_or_else(|| Error::MissingNetwork(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.nets.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.nets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nets.is_empty()
    }

    /// Loads every `*.toml` network description in `dir`.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let mut reg = NetworkRegistry::new();
        let mut paths: Vec<_> = std::fs::read_dir(dir.as_ref())?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext == "toml"))
            .collect();
        paths.sort();
        for path in paths {
            reg.insert(load_network(&path)?);
        }
        Ok(reg)
    }

    /// Networks of a workload set, in the set's canonical order.
    pub fn set_networks(&self, set: WorkloadSet) -> Result<Vec<Arc<NetworkDesc>>> {
        set.network_names().iter().map(|n| self.get(n)).collect()
    }
}

/// Generates an `n`-task scenario. Identical arguments produce an
/// identical scenario, and QoS levels change only the targets.
pub fn generate_workload(
    registry: &NetworkRegistry,
    seed: u64,
    n: usize,
    set: WorkloadSet,
    level: QosLevel,
    soc: &SocConfig,
    params: &GeneratorParams,
) -> Result<WorkloadScenario> {
    if !params.allow_any_n && !(N_RANGE.0..=N_RANGE.1).contains(&n) {
        return Err(Error::TaskCountOutOfRange {
            n,
            min: N_RANGE.0,
            max: N_RANGE.1,
        });
    }
    if params.priority_weights.len() != 12 {
        return Err(Error::validation(
            "generator",
            "priority_weights must have exactly 12 entries",
        ));
    }

    let nets = registry.set_networks(set)?;
    let mut baselines = Vec::with_capacity(nets.len());
    for net in &nets {
        let (_, isolated) = estimate_network(net, soc, soc.num_tiles)?;
        baselines.push(params.qos_k * isolated as f64);
    }
    let mean_isolated: f64 = baselines
        .iter()
        .map(|b| b / params.qos_k)
        .sum::<f64>()
        / nets.len() as f64;
    let mean_gap = (params.arrival_scale * mean_isolated).max(1.0);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gap_dist = Exp::new(1.0 / mean_gap)
        .map_err(|e| Error::validation("generator", format!("bad arrival rate: {e}")))?;
    let prio_dist = WeightedIndex::new(&params.priority_weights)
        .map_err(|e| Error::validation("generator", format!("bad priority weights: {e}")))?;

    let mut tasks = Vec::with_capacity(n);
    let mut clock = 0.0_f64;
    for i in 0..n {
        let which = (rng.next_u64_range(nets.len() as u64)) as usize;
        clock += gap_dist.sample(&mut rng);
        let priority = prio_dist.sample(&mut rng) as u8;
        let target = (level.multiplier() * baselines[which]).ceil() as u64;
        tasks.push(TaskSpec {
            task_id: TaskId(i as u64),
            network: Arc::clone(&nets[which]),
            dispatch_cycle: clock as u64,
            user_priority: priority,
            qos_target_cycles: target.max(1),
        });
    }

    Ok(WorkloadScenario {
        tasks,
        workload_set: set,
        qos_level: level,
        seed,
    })
}

/// Uniform integer draw without the distribution plumbing, stable across
/// platforms for a fixed stream.
trait UniformDraw {
    fn next_u64_range(&mut self, bound: u64) -> u64;
}

impl UniformDraw for ChaCha8Rng {
    fn next_u64_range(&mut self, bound: u64) -> u64 {
        use rand::RngCore;
        // Multiply-shift: unbiased enough for benchmark selection and
        // independent of rand's range implementation details.
        let x = self.next_u64();
        ((u128::from(x) * u128::from(bound)) >> 64) as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::{LayerDesc, LayerKind};

    fn tiny_net(name: &str, mac: u64) -> NetworkDesc {
        NetworkDesc {
            name: name.into(),
            layers: vec![LayerDesc {
                name: "l0".into(),
                kind: LayerKind::Compute,
                total_mac: mac,
                weight_bytes: 1000,
                input_bytes: 1000,
                input_b_bytes: 0,
                output_bytes: 1000,
                bias_bytes: 10,
                tile_bytes: 3010,
                tiling_factor: 1,
            }],
        }
    }

    fn registry() -> NetworkRegistry {
        let mut reg = NetworkRegistry::new();
        for (i, name) in WorkloadSet::C.network_names().iter().enumerate() {
            reg.insert(tiny_net(name, 1_000_000 * (i as u64 + 1)));
        }
        reg
    }

    fn params() -> GeneratorParams {
        GeneratorParams {
            allow_any_n: true,
            ..Default::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let reg = registry();
        let soc = SocConfig::default();
        let a = generate_workload(&reg, 1, 5, WorkloadSet::A, QosLevel::M, &soc, &params())
            .unwrap();
        let b = generate_workload(&reg, 1, 5, WorkloadSet::A, QosLevel::M, &soc, &params())
            .unwrap();
        assert_eq!(a, b);
        let c = generate_workload(&reg, 2, 5, WorkloadSet::A, QosLevel::M, &soc, &params())
            .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn qos_levels_scale_targets_only() {
        let reg = registry();
        let soc = SocConfig::default();
        let h = generate_workload(&reg, 7, 20, WorkloadSet::B, QosLevel::H, &soc, &params())
            .unwrap();
        let l = generate_workload(&reg, 7, 20, WorkloadSet::B, QosLevel::L, &soc, &params())
            .unwrap();
        for (th, tl) in h.tasks.iter().zip(l.tasks.iter()) {
            assert_eq!(th.dispatch_cycle, tl.dispatch_cycle);
            assert_eq!(th.user_priority, tl.user_priority);
            assert_eq!(th.network.name, tl.network.name);
            // Hard target = (0.8 / 1.2) x light target; both are ceiled
            // from the same baseline, so they differ by at most one cycle
            // from the exact ratio.
            let exact = (0.8 / 1.2) * tl.qos_target_cycles as f64;
            let diff = th.qos_target_cycles as f64 - exact;
            assert!(
                diff.abs() <= 1.0,
                "target {} vs exact {exact}",
                th.qos_target_cycles
            );
        }
    }

    #[test]
    fn target_tightness_is_strictly_ordered() {
        let reg = registry();
        let soc = SocConfig::default();
        let h = generate_workload(&reg, 3, 10, WorkloadSet::C, QosLevel::H, &soc, &params())
            .unwrap();
        let m = generate_workload(&reg, 3, 10, WorkloadSet::C, QosLevel::M, &soc, &params())
            .unwrap();
        let l = generate_workload(&reg, 3, 10, WorkloadSet::C, QosLevel::L, &soc, &params())
            .unwrap();
        for i in 0..10 {
            assert!(h.tasks[i].qos_target_cycles < m.tasks[i].qos_target_cycles);
            assert!(m.tasks[i].qos_target_cycles < l.tasks[i].qos_target_cycles);
        }
    }

    #[test]
    fn every_network_of_the_set_appears_across_seeds() {
        let reg = registry();
        let soc = SocConfig::default();
        let mut seen: std::collections::BTreeSet<String> = Default::default();
        for seed in 0..50 {
            let s = generate_workload(
                &reg,
                seed,
                20,
                WorkloadSet::C,
                QosLevel::M,
                &soc,
                &params(),
            )
            .unwrap();
            for t in &s.tasks {
                seen.insert(t.network.name.clone());
            }
        }
        for name in WorkloadSet::C.network_names() {
            assert!(seen.contains(*name), "{name} never drawn");
        }
    }

    #[test]
    fn priorities_follow_the_configured_distribution() {
        let reg = registry();
        let soc = SocConfig::default();
        let mut counts = [0usize; 12];
        let mut total = 0usize;
        for seed in 0..40 {
            let s = generate_workload(
                &reg,
                seed,
                260,
                WorkloadSet::C,
                QosLevel::M,
                &soc,
                &GeneratorParams::default(),
            )
            .unwrap();
            for t in &s.tasks {
                assert!(t.user_priority <= 11);
                counts[t.user_priority as usize] += 1;
                total += 1;
            }
        }
        assert!(total >= 10_000);
        let weights = default_priority_weights();
        let wsum: f64 = weights.iter().sum();
        for (p, &c) in counts.iter().enumerate() {
            let expected = weights[p] / wsum;
            let observed = c as f64 / total as f64;
            let sigma = (expected * (1.0 - expected) / total as f64).sqrt();
            assert!(
                (observed - expected).abs() < 5.0 * sigma + 1e-3,
                "priority {p}: observed {observed:.4}, expected {expected:.4}"
            );
        }
    }

    #[test]
    fn out_of_range_n_needs_the_override() {
        let reg = registry();
        let soc = SocConfig::default();
        let strict = GeneratorParams::default();
        assert!(matches!(
            generate_workload(&reg, 1, 5, WorkloadSet::A, QosLevel::M, &soc, &strict),
            Err(Error::TaskCountOutOfRange { .. })
        ));
        assert!(generate_workload(
            &reg,
            1,
            200,
            WorkloadSet::A,
            QosLevel::M,
            &soc,
            &strict
        )
        .is_ok());
    }

    #[test]
    fn unknown_set_name_is_an_error() {
        assert!(matches!(
            WorkloadSet::parse("D"),
            Err(Error::UnknownSet(_))
        ));
        assert!(WorkloadSet::parse("b").is_ok());
    }

    #[test]
    fn missing_network_is_reported_by_name() {
        let reg = NetworkRegistry::new();
        let soc = SocConfig::default();
        let err =
            generate_workload(&reg, 1, 5, WorkloadSet::A, QosLevel::M, &soc, &params())
                .unwrap_err();
        assert!(matches!(err, Error::MissingNetwork(_)));
    }
}
