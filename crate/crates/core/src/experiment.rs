//! Experiment orchestration: expands the policy x workload-set x QoS x
//! seed matrix, runs the simulations (in parallel across runs), and
//! emits per-task results plus plot-ready aggregate CSVs. Column layouts
//! are frozen in `docs/formats.md`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::estimate_network;
use crate::metrics;
use crate::scheduler::{Policy, SchedParams};
use crate::sim::{
    isolated_tiles, run_isolated, run_simulation, SimConfig, SimResult,
    DEFAULT_EPOCH_CYCLES, DEFAULT_MAX_CYCLES,
};
use crate::workload::{
    generate_workload, GeneratorParams, NetworkDesc, NetworkRegistry, QosLevel, SocConfig,
    TaskId, TaskSpec, WorkloadScenario, WorkloadSet,
};

/// The full experiment description, loadable from a TOML config.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentMatrix {
    pub policies: Vec<Policy>,
    pub workload_sets: Vec<WorkloadSet>,
    pub qos_levels: Vec<QosLevel>,
    pub seeds: Vec<u64>,
    pub n_tasks: usize,
    pub networks_dir: PathBuf,
    /// Aggregates are normalized to this policy's column.
    pub baseline: Policy,
    /// Worker threads; 0 picks the rayon default.
    pub workers: usize,
    pub emit_traces: bool,
    pub generator: GeneratorParams,
    pub soc: SocConfig,
    pub sched: SchedParams,
    pub epoch_cycles: u64,
    pub max_cycles: u64,
}

impl Default for ExperimentMatrix {
    fn default() -> Self {
        ExperimentMatrix {
            policies: Policy::ALL.to_vec(),
            workload_sets: vec![WorkloadSet::C],
            qos_levels: vec![QosLevel::M],
            seeds: vec![1],
            n_tasks: 250,
            networks_dir: PathBuf::from("assets/networks"),
            baseline: Policy::DynCompute,
            workers: 0,
            emit_traces: false,
            generator: GeneratorParams::default(),
            soc: SocConfig::default(),
            sched: SchedParams::default(),
            epoch_cycles: DEFAULT_EPOCH_CYCLES,
            max_cycles: DEFAULT_MAX_CYCLES,
        }
    }
}

impl ExperimentMatrix {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        let matrix: ExperimentMatrix = toml::from_str(text).map_err(|err| Error::Parse {
            path: origin.to_string(),
            line: 0,
            message: err.message().to_string(),
        })?;
        matrix.validate()?;
        Ok(matrix)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        if self.policies.is_empty()
            || self.workload_sets.is_empty()
            || self.qos_levels.is_empty()
            || self.seeds.is_empty()
        {
            return Err(Error::validation("experiment", "empty matrix axis"));
        }
        if self.n_tasks == 0 {
            return Err(Error::validation("experiment", "n_tasks must be > 0"));
        }
        self.soc.validate()
    }

    pub fn run_count(&self) -> usize {
        self.policies.len() * self.workload_sets.len() * self.qos_levels.len() * self.seeds.len()
    }
}

/// One completed run of the matrix.
#[derive(Debug)]
pub struct RunOutput {
    pub policy: Policy,
    pub set: WorkloadSet,
    pub level: QosLevel,
    pub seed: u64,
    pub result: SimResult,
    pub report: metrics::MetricsReport,
    pub isolated: BTreeMap<TaskId, u64>,
}

/// Everything `cmd_run` produces before serialization.
#[derive(Debug)]
pub struct MatrixOutput {
    pub runs: Vec<RunOutput>,
}

/// Expands and executes the matrix. Deterministic: run order, task
/// generation and all outputs depend only on the config.
pub fn run_matrix(matrix: &ExperimentMatrix) -> Result<MatrixOutput> {
    matrix.validate()?;
    let registry = NetworkRegistry::load_dir(&matrix.networks_dir)?;

    // Isolated reference latencies, per network per tile width. One
    // width per policy (the static partition pins tasks to one group).
    let mut widths: Vec<u32> = matrix
        .policies
        .iter()
        .map(|&p| isolated_tiles(p, &matrix.soc, &matrix.sched))
        .collect();
    widths.sort_unstable();
    widths.dedup();

    let mut iso_cache: BTreeMap<(String, u32), u64> = BTreeMap::new();
    for set in &matrix.workload_sets {
        for net in registry.set_networks(*set)? {
            for &w in &widths {
                let key = (net.name.clone(), w);
                if iso_cache.contains_key(&key) {
                    continue;
                }
                let probe = TaskSpec {
                    task_id: TaskId(0),
                    network: net.clone(),
                    dispatch_cycle: 0,
                    user_priority: 0,
                    qos_target_cycles: u64::MAX / 4,
                };
                let mut soc = matrix.soc.clone();
                soc.num_tiles = matrix.soc.num_tiles;
                let cycles = run_isolated(&probe, &soc, w)?;
                iso_cache.insert(key, cycles);
            }
        }
    }

    // The scenario for a (set, level, seed) triple is shared across
    // policies, so the comparison is apples to apples.
    let mut scenarios: BTreeMap<(WorkloadSet, QosLevel, u64), WorkloadScenario> = BTreeMap::new();
    for &set in &matrix.workload_sets {
        for &level in &matrix.qos_levels {
            for &seed in &matrix.seeds {
                let scenario = generate_workload(
                    &registry,
                    seed,
                    matrix.n_tasks,
                    set,
                    level,
                    &matrix.soc,
                    &matrix.generator,
                )?;
                scenarios.insert((set, level, seed), scenario);
            }
        }
    }

    let mut tuples: Vec<(Policy, WorkloadSet, QosLevel, u64)> = Vec::new();
    for &policy in &matrix.policies {
        for &set in &matrix.workload_sets {
            for &level in &matrix.qos_levels {
                for &seed in &matrix.seeds {
                    tuples.push((policy, set, level, seed));
                }
            }
        }
    }

    let run_one = |&(policy, set, level, seed): &(Policy, WorkloadSet, QosLevel, u64)| -> Result<RunOutput> {
        let scenario = scenarios[&(set, level, seed)].clone();
        let mut cfg = SimConfig::new(matrix.soc.clone(), policy, scenario);
        cfg.epoch_cycles = matrix.epoch_cycles;
        cfg.max_cycles = matrix.max_cycles;
        cfg.sched = matrix.sched;
        cfg.record_bandwidth_trace = matrix.emit_traces;
        cfg.record_runtime_trace = matrix.emit_traces;
        let result = run_simulation(&cfg)?;

        let width = isolated_tiles(policy, &matrix.soc, &matrix.sched);
        let isolated: BTreeMap<TaskId, u64> = cfg
            .scenario
            .tasks
            .iter()
            .map(|t| {
                (
                    t.task_id,
                    iso_cache[&(t.network.name.clone(), width)],
                )
            })
            .collect();
        let report = metrics::report(&result.records, &isolated)?;
        Ok(RunOutput {
            policy,
            set,
            level,
            seed,
            result,
            report,
            isolated,
        })
    };

    let runs: Vec<Result<RunOutput>> = if matrix.workers == 1 {
        tuples.iter().map(run_one).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(matrix.workers)
            .build()
            .map_err(|e| Error::validation("experiment", format!("thread pool: {e}")))?;
        pool.install(|| tuples.par_iter().map(run_one).collect())
    };
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(MatrixOutput { runs })
}

/// Runs the matrix and writes every output file under `out_dir`:
/// `results.csv`, `metrics.csv`, the four aggregate files, and per-run
/// traces when enabled. Returns the list of files written.
pub fn run_to_files(matrix: &ExperimentMatrix, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    let output = run_matrix(matrix)?;
    let mut written = Vec::new();

    let results_path = out_dir.join("results.csv");
    write_results_csv(&output, &results_path)?;
    written.push(results_path);

    let metrics_path = out_dir.join("metrics.csv");
    write_metrics_csv(&output, &metrics_path)?;
    written.push(metrics_path);

    for (name, table) in aggregate_tables(&output, matrix.baseline) {
        let path = out_dir.join(name);
        std::fs::write(&path, table)?;
        written.push(path);
    }

    if matrix.emit_traces {
        let trace_dir = out_dir.join("traces");
        std::fs::create_dir_all(&trace_dir)?;
        for run in &output.runs {
            let stem = format!("{}_{}_{}_{}", run.policy, run.set, run.level, run.seed);
            let bw = trace_dir.join(format!("{stem}_bandwidth.csv"));
            write_bandwidth_trace(&run.result, &bw)?;
            written.push(bw);
            let rt = trace_dir.join(format!("{stem}_runtime.csv"));
            write_runtime_trace(&run.result, &rt)?;
            written.push(rt);
        }
    }
    Ok(written)
}

fn write_results_csv(output: &MatrixOutput, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "policy",
        "workload_set",
        "qos_level",
        "seed",
        "task_id",
        "network",
        "priority",
        "dispatch_cycle",
        "start_cycle",
        "finish_cycle",
        "end_to_end_cycles",
        "qos_target_cycles",
        "deadline_met",
        "mem_reconfigs",
        "compute_migrations",
        "charged_mem_cycles",
        "charged_compute_cycles",
        "c_single_cycles",
        "proportional_progress",
    ])?;
    for run in &output.runs {
        let pp: BTreeMap<TaskId, f64> = run.report.per_task_pp.iter().copied().collect();
        for r in &run.result.records {
            w.write_record([
                run.policy.to_string(),
                run.set.to_string(),
                run.level.to_string(),
                run.seed.to_string(),
                r.task_id.to_string(),
                r.network.clone(),
                r.priority.to_string(),
                r.dispatch_cycle.to_string(),
                r.start_cycle.to_string(),
                r.finish_cycle.to_string(),
                r.end_to_end_cycles.to_string(),
                r.qos_target_cycles.to_string(),
                (r.deadline_met as u8).to_string(),
                r.mem_reconfigs.to_string(),
                r.compute_migrations.to_string(),
                r.charged_mem_cycles.to_string(),
                r.charged_compute_cycles.to_string(),
                run.isolated[&r.task_id].to_string(),
                format!("{}", pp.get(&r.task_id).copied().unwrap_or(f64::NAN)),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_metrics_csv(output: &MatrixOutput, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "policy",
        "workload_set",
        "qos_level",
        "seed",
        "tasks",
        "sla_overall",
        "sla_p_low",
        "sla_p_mid",
        "sla_p_high",
        "stp",
        "fairness",
    ])?;
    for run in &output.runs {
        let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        w.write_record([
            run.policy.to_string(),
            run.set.to_string(),
            run.level.to_string(),
            run.seed.to_string(),
            run.report.task_count.to_string(),
            format!("{}", run.report.sla_rate_overall),
            opt(run.report.sla_rate_low),
            opt(run.report.sla_rate_mid),
            opt(run.report.sla_rate_high),
            format!("{}", run.report.stp),
            format!("{}", run.report.fairness),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Builds the four plot-ready aggregate tables, each normalized to the
/// baseline policy: overall SLA rate, per-priority-group SLA rate
/// (pooled over seeds), mean STP and mean fairness.
pub fn aggregate_tables(output: &MatrixOutput, baseline: Policy) -> Vec<(&'static str, String)> {
    type Key = (WorkloadSet, QosLevel, Policy);

    let mut sla: BTreeMap<Key, Vec<f64>> = BTreeMap::new();
    let mut stp: BTreeMap<Key, Vec<f64>> = BTreeMap::new();
    let mut fair: BTreeMap<Key, Vec<f64>> = BTreeMap::new();
    // group -> (met, total), pooled across seeds
    let mut by_group: BTreeMap<(Key, &'static str), (u64, u64)> = BTreeMap::new();

    for run in &output.runs {
        let key = (run.set, run.level, run.policy);
        sla.entry(key).or_default().push(run.report.sla_rate_overall);
        stp.entry(key).or_default().push(run.report.stp);
        fair.entry(key).or_default().push(run.report.fairness);
        for r in &run.result.records {
            let group = match r.priority {
                0..=2 => "p-Low",
                3..=8 => "p-Mid",
                _ => "p-High",
            };
            let slot = by_group.entry((key, group)).or_default();
            slot.1 += 1;
            slot.0 += u64::from(r.deadline_met);
        }
    }

    let mean = |v: &Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    let simple_table = |data: &BTreeMap<Key, Vec<f64>>| -> String {
        let mut text = String::from("workload_set,qos_level,policy,value,normalized_to_baseline\n");
        for ((set, level, policy), values) in data {
            let value = mean(values);
            let base = data
                .get(&(*set, *level, baseline))
                .map(|v| mean(v))
                .unwrap_or(f64::NAN);
            let norm = if base.is_finite() && base > 0.0 {
                format!("{}", value / base)
            } else {
                String::new()
            };
            text.push_str(&format!("{set},{level},{policy},{value},{norm}\n"));
        }
        text
    };

    let mut group_table =
        String::from("workload_set,qos_level,policy,priority_group,value,normalized_to_baseline\n");
    for (((set, level, policy), group), (met, total)) in &by_group {
        let value = *met as f64 / (*total).max(1) as f64;
        let base = by_group
            .get(&((*set, *level, baseline), group))
            .map(|(m, t)| *m as f64 / (*t).max(1) as f64)
            .unwrap_or(f64::NAN);
        let norm = if base.is_finite() && base > 0.0 {
            format!("{}", value / base)
        } else {
            String::new()
        };
        group_table.push_str(&format!("{set},{level},{policy},{group},{value},{norm}\n"));
    }

    vec![
        ("sla_overall.csv", simple_table(&sla)),
        ("sla_by_priority.csv", group_table),
        ("stp.csv", simple_table(&stp)),
        ("fairness.csv", simple_table(&fair)),
    ]
}

fn write_bandwidth_trace(result: &SimResult, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "epoch",
        "tile_id",
        "task_id",
        "demanded_bytes",
        "served_bytes",
        "stalled",
    ])?;
    for row in &result.bandwidth_trace {
        w.write_record([
            row.epoch.to_string(),
            row.tile_id.to_string(),
            row.task_id.to_string(),
            row.demanded_bytes.to_string(),
            row.served_bytes.to_string(),
            (row.stalled as u8).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_runtime_trace(result: &SimResult, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "cycle",
        "task_id",
        "layer",
        "score",
        "bw_rate_before",
        "bw_rate_after",
        "overflow",
        "window",
        "threshold_load",
    ])?;
    for row in &result.runtime_trace {
        w.write_record([
            row.cycle.to_string(),
            row.task_id.to_string(),
            row.layer.to_string(),
            format!("{}", row.score),
            format!("{}", row.bw_rate_before),
            format!("{}", row.bw_rate_after),
            format!("{}", row.overflow),
            row.window.to_string(),
            row.threshold_load.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-layer estimate rows plus a network total, as CSV text.
pub fn estimate_csv(net: &NetworkDesc, soc: &SocConfig, tiles: u32) -> Result<String> {
    let mut out = String::from(
        "layer,kind,compute_ideal_cycles,memory_ideal_cycles,prediction_cycles,\
         total_mem_bytes,from_dram_bytes,bw_rate_bytes_per_cycle\n",
    );
    let (estimates, total) = estimate_network(net, soc, tiles)?;
    for (layer, est) in net.layers.iter().zip(estimates.iter()) {
        out.push_str(&format!(
            "{},{:?},{},{},{},{},{},{}\n",
            layer.name,
            layer.kind,
            est.compute_ideal_cycles,
            est.memory_ideal_cycles,
            est.prediction_cycles,
            est.total_mem_bytes,
            est.from_dram_bytes,
            est.bw_rate_bytes_per_cycle,
        ));
    }
    out.push_str(&format!("TOTAL,,,,{total},,,\n"));
    Ok(out)
}

/// Result of validating one shipped network asset.
#[derive(Debug, Clone)]
pub struct NetworkValidation {
    pub name: String,
    pub layers: usize,
    /// Worst per-layer relative gap between the contention-free replay
    /// and the analytical prediction.
    pub max_rel_error: f64,
    pub worst_layer: String,
}

/// Validates every network in `dir` against the schema and invariants,
/// then cross-checks the analytical prediction against a contention-free
/// single-tenant replay, layer by layer. The replay must stay within
/// `tolerance` (fractional) of the prediction.
pub fn validate_assets(
    dir: impl AsRef<Path>,
    soc: &SocConfig,
    tolerance: f64,
) -> Result<Vec<NetworkValidation>> {
    let registry = NetworkRegistry::load_dir(dir)?;
    if registry.is_empty() {
        return Err(Error::validation("validate", "no network files found"));
    }
    let mut reports = Vec::new();
    for name in registry.names().map(str::to_owned).collect::<Vec<_>>() {
        let net = registry.get(&name)?;
        net.validate()?;
        let (estimates, total) = estimate_network(&net, soc, soc.num_tiles)?;

        let probe = TaskSpec {
            task_id: TaskId(0),
            network: net.clone(),
            dispatch_cycle: 0,
            user_priority: 0,
            qos_target_cycles: total.saturating_mul(16).max(1),
        };
        let scenario = WorkloadScenario::from_tasks(vec![probe]);
        let cfg = SimConfig::new(soc.clone(), Policy::DynCompute, scenario);
        let result = run_simulation(&cfg)?;

        let mut max_rel = 0.0_f64;
        let mut worst = String::new();
        for span in &result.layer_spans {
            let est = &estimates[span.layer_index];
            let measured = span.cycles().max(1.0);
            let rel = (measured - est.prediction_cycles as f64).abs() / measured;
            if rel > max_rel {
                max_rel = rel;
                worst = net.layers[span.layer_index].name.clone();
            }
        }
        if max_rel > tolerance {
            return Err(Error::validation(
                format!("network `{name}`"),
                format!(
                    "layer `{worst}` replay deviates {:.2}% from the prediction (> {:.0}%)",
                    max_rel * 100.0,
                    tolerance * 100.0
                ),
            ));
        }
        // Spot-check that dims-derived estimates stayed internally
        // consistent (every layer produced a span).
        if result.layer_spans.len() != net.layers.len() {
            return Err(Error::validation(
                format!("network `{name}`"),
                "replay did not execute every layer",
            ));
        }
        reports.push(NetworkValidation {
            name: name.clone(),
            layers: net.layers.len(),
            max_rel_error: max_rel,
            worst_layer: worst,
        });
    }
    Ok(reports)
}

/// Writes a human-readable validation report.
pub fn write_validation_report(
    reports: &[NetworkValidation],
    mut out: impl Write,
) -> std::io::Result<()> {
    writeln!(out, "{:<12} {:>7} {:>12} worst layer", "network", "layers", "max |err|")?;
    for r in reports {
        writeln!(
            out,
            "{:<12} {:>7} {:>11.2}% {}",
            r.name,
            r.layers,
            r.max_rel_error * 100.0,
            r.worst_layer
        )?;
    }
    Ok(())
}
