//! The discrete-time engine: advances fixed-length epochs, applies
//! schedule decisions, drives tile progress through the arbitrated
//! memory system, fires layer-boundary runtime hooks, charges
//! repartition costs, and records completions.
//!
//! Layer progress follows the same two-pipe structure as the analytical
//! estimator. The memory pipe is a serial chain — DRAM bytes, then L2
//! bytes, then the un-overlapped serialization tail — whose DRAM and L2
//! stages are served by per-epoch proportional arbitration; the compute
//! pipe drains MACs at the allocated PE rate concurrently. Within an
//! epoch each stage is paced at the resource rate weighted by the tile's
//! grant share, which makes an uncontended run land exactly on the
//! estimator's prediction and lets completion times be interpolated
//! inside the final epoch.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{estimate_layer, estimate_network, LayerEstimate};
use crate::hw::{arbitrate_epoch, MemorySystem, ThrottleConfig, TileState};
use crate::runtime::{
    detect_and_partition, dynamic_score, Scoreboard, TaskRuntimeState,
};
use crate::scheduler::{
    decide, Policy, SchedContext, SchedParams, TaskQueue, TaskQueueEntry, TaskStatus,
};
use crate::workload::{
    LayerKind, NetworkDesc, SocConfig, TaskId, TaskSpec, WorkloadScenario,
};

/// Everything one simulation run needs.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub soc: SocConfig,
    pub policy: Policy,
    pub scenario: WorkloadScenario,
    pub epoch_cycles: u64,
    /// Hard safety cap; exceeding it aborts the run with a diagnostic.
    pub max_cycles: u64,
    pub sched: SchedParams,
    pub record_bandwidth_trace: bool,
    pub record_runtime_trace: bool,
}

pub const DEFAULT_EPOCH_CYCLES: u64 = 100;
pub const DEFAULT_MAX_CYCLES: u64 = 1_000_000_000;

impl SimConfig {
    pub fn new(soc: SocConfig, policy: Policy, scenario: WorkloadScenario) -> Self {
        SimConfig {
            soc,
            policy,
            scenario,
            epoch_cycles: DEFAULT_EPOCH_CYCLES,
            max_cycles: DEFAULT_MAX_CYCLES,
            sched: SchedParams::default(),
            record_bandwidth_trace: false,
            record_runtime_trace: false,
        }
    }
}

/// Completion record for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: TaskId,
    pub network: String,
    pub priority: u8,
    pub dispatch_cycle: u64,
    pub start_cycle: u64,
    pub finish_cycle: u64,
    pub end_to_end_cycles: u64,
    pub qos_target_cycles: u64,
    pub deadline_met: bool,
    pub mem_reconfigs: u64,
    pub compute_migrations: u64,
    pub charged_mem_cycles: u64,
    pub charged_compute_cycles: u64,
}

/// Exact (interpolated) active interval of one layer execution.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpan {
    pub task_id: TaskId,
    pub layer_index: usize,
    pub tiles: u32,
    pub start: f64,
    pub finish: f64,
}

impl LayerSpan {
    pub fn cycles(&self) -> f64 {
        self.finish - self.start
    }
}

/// One per-epoch bandwidth trace row (emitted when enabled).
#[derive(Debug, Clone, Serialize)]
pub struct BandwidthTraceRow {
    pub epoch: u64,
    pub tile_id: u32,
    pub task_id: u64,
    pub demanded_bytes: u64,
    pub served_bytes: u64,
    pub stalled: bool,
}

/// One runtime-event trace row (emitted when enabled).
#[derive(Debug, Clone, Serialize)]
pub struct RuntimeTraceRow {
    pub cycle: u64,
    pub task_id: u64,
    pub layer: usize,
    pub score: f64,
    pub bw_rate_before: f64,
    pub bw_rate_after: f64,
    pub overflow: f64,
    pub window: u64,
    pub threshold_load: u64,
}

/// Output of one run.
#[derive(Debug, Clone)]
pub struct SimResult {
    pub policy: Policy,
    pub records: Vec<TaskRecord>,
    pub layer_spans: Vec<LayerSpan>,
    pub bandwidth_trace: Vec<BandwidthTraceRow>,
    pub runtime_trace: Vec<RuntimeTraceRow>,
    pub total_epochs: u64,
    /// Largest per-epoch DRAM total observed; always <= capacity.
    pub max_dram_served_per_epoch: u64,
    /// Served DRAM bytes per task over the whole run.
    pub dram_served_by_task: BTreeMap<TaskId, u64>,
}

impl SimResult {
    pub fn record(&self, id: TaskId) -> Option<&TaskRecord> {
        self.records.iter().find(|r| r.task_id == id)
    }
}

/// Tallies charged repartition events across all tasks:
/// `(memory reconfigurations, compute migrations)`.
pub fn count_repartition_events(result: &SimResult) -> (u64, u64) {
    let mem = result.records.iter().map(|r| r.mem_reconfigs).sum();
    let compute = result.records.iter().map(|r| r.compute_migrations).sum();
    (mem, compute)
}

/// Runs `task` alone on a `tiles`-wide slice of the SoC with the full
/// shared memory system to itself; returns its end-to-end cycles. This
/// is the reference latency for throughput and fairness.
pub fn run_isolated(task: &TaskSpec, soc: &SocConfig, tiles: u32) -> Result<u64> {
    let mut solo_soc = soc.clone();
    solo_soc.num_tiles = tiles.clamp(1, soc.num_tiles);
    let mut spec = task.clone();
    spec.dispatch_cycle = 0;
    let scenario = WorkloadScenario::from_tasks(vec![spec]);
    let cfg = SimConfig::new(solo_soc, Policy::DynCompute, scenario);
    let result = run_simulation(&cfg)?;
    Ok(result.records[0].end_to_end_cycles)
}

/// Single-tenant tile allocation a policy grants: the static partition
/// pins a task to one fixed group, everything else spans the SoC.
pub fn isolated_tiles(policy: Policy, soc: &SocConfig, sched: &SchedParams) -> u32 {
    match policy {
        Policy::Static => (soc.num_tiles / sched.static_groups.max(1)).max(1),
        _ => soc.num_tiles,
    }
}

// ---------------------------------------------------------------------
// Engine internals
// ---------------------------------------------------------------------

/// Remaining work of the current layer on one tile.
#[derive(Debug, Clone, Default)]
struct TileWork {
    dram_rem: u64,
    l2_rem: u64,
    /// Serialization tail of the memory pipe, cycles.
    tax_rem: f64,
    macs_rem: f64,
    /// Reconfiguration/migration stall, blocks both pipes.
    stall_rem: f64,
    finished_at: Option<f64>,
}

impl TileWork {
    fn done(&self) -> bool {
        self.finished_at.is_some()
    }
}

#[derive(Debug)]
struct TaskRun {
    spec: TaskSpec,
    current_layer: usize,
    tiles: Vec<u32>,
    layer_active: bool,
    layer_start_ts: f64,
    start_cycle: Option<u64>,
    finish_ts: Option<f64>,
    /// Estimator sum over unexecuted layers at the current allocation,
    /// refreshed at every layer boundary.
    remain_prediction: f64,
    /// Consecutive boundaries where a p-High task could not meet its
    /// deadline even after bandwidth partitioning.
    deadline_risk_streak: u8,
    mem_reconfigs: u64,
    compute_migrations: u64,
    charged_mem_cycles: u64,
    charged_compute_cycles: u64,
    done: bool,
}

impl TaskRun {
    fn running(&self) -> bool {
        !self.done && !self.tiles.is_empty()
    }
}

#[derive(Debug, Clone)]
struct NetworkInfo {
    estimated_total: u64,
    avg_bw: f64,
    /// Layer-block id per layer: maximal runs of equal compute/memory
    /// classification at the full-SoC allocation.
    block_of_layer: Vec<usize>,
}

struct Engine<'a> {
    cfg: &'a SimConfig,
    epoch: u64,
    tiles: Vec<TileState>,
    work: Vec<Option<TileWork>>,
    tasks: Vec<TaskRun>,
    index_of: BTreeMap<TaskId, usize>,
    queue: TaskQueue,
    scoreboard: Scoreboard,
    mem: MemorySystem,
    net_info: BTreeMap<String, NetworkInfo>,
    next_arrival: usize,
    arrival_order: Vec<usize>,
    spans: Vec<LayerSpan>,
    bw_trace: Vec<BandwidthTraceRow>,
    rt_trace: Vec<RuntimeTraceRow>,
    max_dram_epoch: u64,
    dram_by_task: BTreeMap<TaskId, u64>,
    // Scratch buffers reused across epochs.
    dram_wants: Vec<u64>,
    l2_wants: Vec<u64>,
}

/// Deterministic even split of `total` units over `k` holders: the first
/// `total % k` holders take one extra unit.
fn split_bytes(total: u64, k: u64, idx: u64) -> u64 {
    total / k + u64::from(idx < total % k)
}

pub fn run_simulation(cfg: &SimConfig) -> Result<SimResult> {
    cfg.soc.validate()?;
    if cfg.epoch_cycles == 0 {
        return Err(Error::validation("sim config", "epoch_cycles must be >= 1"));
    }
    for task in &cfg.scenario.tasks {
        task.validate()?;
        task.network.validate()?;
    }
    let engine = Engine::new(cfg)?;
    engine.run()
}

impl<'a> Engine<'a> {
    fn new(cfg: &'a SimConfig) -> Result<Self> {
        let soc = &cfg.soc;
        let tiles = (0..soc.num_tiles)
            .map(|i| TileState::new(i, soc.request_granularity_bytes))
            .collect();
        let work = vec![None; soc.num_tiles as usize];

        let mut net_info = BTreeMap::new();
        for task in &cfg.scenario.tasks {
            let net = &task.network;
            if !net_info.contains_key(&net.name) {
                net_info.insert(net.name.clone(), network_info(net, soc)?);
            }
        }

        let mut tasks = Vec::with_capacity(cfg.scenario.tasks.len());
        let mut index_of = BTreeMap::new();
        for (i, spec) in cfg.scenario.tasks.iter().enumerate() {
            index_of.insert(spec.task_id, i);
            tasks.push(TaskRun {
                spec: spec.clone(),
                current_layer: 0,
                tiles: Vec::new(),
                layer_active: false,
                layer_start_ts: 0.0,
                start_cycle: None,
                finish_ts: None,
                remain_prediction: 0.0,
                deadline_risk_streak: 0,
                mem_reconfigs: 0,
                compute_migrations: 0,
                charged_mem_cycles: 0,
                charged_compute_cycles: 0,
                done: false,
            });
        }
        if index_of.len() != tasks.len() {
            return Err(Error::validation("scenario", "duplicate task ids"));
        }

        let mut arrival_order: Vec<usize> = (0..tasks.len()).collect();
        arrival_order.sort_by_key(|&i| (tasks[i].spec.dispatch_cycle, tasks[i].spec.task_id));

        Ok(Engine {
            cfg,
            epoch: 0,
            tiles,
            work,
            tasks,
            index_of,
            queue: TaskQueue::new(),
            scoreboard: Scoreboard::new(),
            mem: MemorySystem::new(
                soc.dram_bw_bytes_per_cycle,
                soc.l2_bw_bytes_per_cycle,
                cfg.epoch_cycles,
            ),
            net_info,
            next_arrival: 0,
            arrival_order,
            spans: Vec::new(),
            bw_trace: Vec::new(),
            rt_trace: Vec::new(),
            max_dram_epoch: 0,
            dram_by_task: BTreeMap::new(),
            dram_wants: vec![0; soc.num_tiles as usize],
            l2_wants: vec![0; soc.num_tiles as usize],
        })
    }

    fn now(&self) -> u64 {
        self.epoch * self.cfg.epoch_cycles
    }

    fn run(mut self) -> Result<SimResult> {
        loop {
            let now = self.now();
            if now > self.cfg.max_cycles {
                let stuck = self
                    .tasks
                    .iter()
                    .find(|t| !t.done)
                    .map(|t| t.spec.task_id.0)
                    .unwrap_or(0);
                return Err(Error::CycleCapExceeded {
                    cap: self.cfg.max_cycles,
                    task: stuck,
                    last_event: format!("epoch {}", self.epoch),
                });
            }

            let arrived = self.admit_arrivals(now);
            let (completions, boundary_tasks, block_boundary) = self.process_boundaries(now);

            if self.tasks.iter().all(|t| t.done) {
                break;
            }

            // Idle fast-forward: nothing running and nothing queued.
            if !self.any_running() && self.queue_empty_waiting() {
                if let Some(&next) = self.arrival_order.get(self.next_arrival) {
                    let target = self.tasks[next].spec.dispatch_cycle;
                    let target_epoch = target / self.cfg.epoch_cycles;
                    if target_epoch > self.epoch {
                        self.epoch = target_epoch;
                        continue;
                    }
                }
            }

            let schedule_now = arrived
                || !completions.is_empty()
                || self.scheduling_boundary(&boundary_tasks, block_boundary)
                || self.epoch == 0;
            if schedule_now {
                self.schedule(now, &boundary_tasks, block_boundary);
            }

            self.start_pending_layers(now)?;
            self.advance_epoch(now);
            self.epoch += 1;
        }

        let records = self.final_records();
        Ok(SimResult {
            policy: self.cfg.policy,
            records,
            layer_spans: self.spans,
            bandwidth_trace: self.bw_trace,
            runtime_trace: self.rt_trace,
            total_epochs: self.epoch,
            max_dram_served_per_epoch: self.max_dram_epoch,
            dram_served_by_task: self.dram_by_task,
        })
    }

    fn any_running(&self) -> bool {
        self.tasks.iter().any(|t| t.running())
    }

    fn queue_empty_waiting(&self) -> bool {
        !self.queue.iter().any(|e| e.status == TaskStatus::Waiting)
    }

    fn scheduling_boundary(&self, boundary: &[TaskId], block_boundary: bool) -> bool {
        if boundary.is_empty() {
            return false;
        }
        match self.cfg.policy {
            // Group admission happens on frees; layer boundaries matter
            // only to the runtime hook and the rare tile migration.
            Policy::DynMemory => false,
            Policy::TimeMux => true,
            Policy::Static => false,
            Policy::DynCompute => block_boundary,
        }
    }

    fn admit_arrivals(&mut self, now: u64) -> bool {
        let mut any = false;
        while let Some(&idx) = self.arrival_order.get(self.next_arrival) {
            let spec = &self.tasks[idx].spec;
            if spec.dispatch_cycle > now {
                break;
            }
            let info = &self.net_info[&spec.network.name];
            self.queue.push(TaskQueueEntry {
                task_id: spec.task_id,
                dispatch_cycle: spec.dispatch_cycle,
                status: TaskStatus::Waiting,
                user_priority: spec.user_priority,
                qos_target_cycles: spec.qos_target_cycles,
                estimated_total_cycles: info.estimated_total,
                estimated_avg_bw: info.avg_bw,
                score: f64::from(spec.user_priority),
                mem_intensive: false,
            });
            self.next_arrival += 1;
            any = true;
        }
        any
    }

    /// Detects layers finished during the previous epoch, records spans,
    /// advances tasks, completes networks and frees their tiles.
    /// Returns (completed tasks, tasks at a layer boundary, whether any
    /// boundary crossed a layer block).
    fn process_boundaries(&mut self, _now: u64) -> (Vec<TaskId>, Vec<TaskId>, bool) {
        let mut completions = Vec::new();
        let mut boundaries = Vec::new();
        let mut block_boundary = false;

        for idx in 0..self.tasks.len() {
            if !self.tasks[idx].layer_active || self.tasks[idx].done {
                continue;
            }
            let all_done = self.tasks[idx]
                .tiles
                .iter()
                .all(|&t| self.work[t as usize].as_ref().is_some_and(|w| w.done()));
            if !all_done {
                continue;
            }

            let finish = self.tasks[idx]
                .tiles
                .iter()
                .map(|&t| {
                    self.work[t as usize]
                        .as_ref()
                        .and_then(|w| w.finished_at)
                        .unwrap_or(0.0)
                })
                .fold(0.0_f64, f64::max);

            let task_id = self.tasks[idx].spec.task_id;
            let layer = self.tasks[idx].current_layer;
            self.spans.push(LayerSpan {
                task_id,
                layer_index: layer,
                tiles: self.tasks[idx].tiles.len() as u32,
                start: self.tasks[idx].layer_start_ts,
                finish,
            });

            for &t in &self.tasks[idx].tiles.clone() {
                self.work[t as usize] = None;
            }
            self.tasks[idx].layer_active = false;
            self.tasks[idx].current_layer += 1;

            let net = Arc::clone(&self.tasks[idx].spec.network);
            if self.tasks[idx].current_layer >= net.layers.len() {
                // Network complete.
                self.tasks[idx].finish_ts = Some(finish);
                self.tasks[idx].done = true;
                for &t in &self.tasks[idx].tiles.clone() {
                    self.tiles[t as usize].assigned_task = None;
                    self.tiles[t as usize]
                        .configure_throttle(ThrottleConfig::disabled(), finish.ceil() as u64);
                }
                self.tasks[idx].tiles.clear();
                self.queue.set_status(task_id, TaskStatus::Done);
                self.scoreboard.remove(task_id);
                completions.push(task_id);
            } else {
                boundaries.push(task_id);
                let info = &self.net_info[&net.name];
                let prev_block = info.block_of_layer[layer];
                let next_block = info.block_of_layer[self.tasks[idx].current_layer];
                if prev_block != next_block {
                    block_boundary = true;
                }
            }
        }
        (completions, boundaries, block_boundary)
    }

    fn current_alloc(&self) -> BTreeMap<TaskId, u32> {
        self.tasks
            .iter()
            .filter(|t| t.running())
            .map(|t| (t.spec.task_id, t.tiles.len() as u32))
            .collect()
    }

    fn running_scores(&self, now: u64) -> BTreeMap<TaskId, f64> {
        self.tasks
            .iter()
            .filter(|t| t.running())
            .map(|t| {
                let state = TaskRuntimeState {
                    remain_prediction_cycles: t.remain_prediction,
                    slack_cycles: t.spec.deadline_cycle() as i64 - now as i64,
                    user_priority: t.spec.user_priority,
                };
                (t.spec.task_id, dynamic_score(&state))
            })
            .collect()
    }

    fn schedule(&mut self, now: u64, boundary_tasks: &[TaskId], block_boundary: bool) {
        self.queue.score_tasks(now, &self.cfg.soc);
        let current = self.current_alloc();
        let scores = self.running_scores(now);
        let free: u32 = self.cfg.soc.num_tiles - current.values().sum::<u32>();
        let ctx = SchedContext {
            now,
            free_tiles: free,
            current: &current,
            running_scores: &scores,
            boundary_tasks,
            block_boundary,
        };
        let decision = decide(self.cfg.policy, &self.queue, &self.cfg.soc, &self.cfg.sched, &ctx);
        self.apply_decision(&decision.allocation, &decision.migration_charges, now);
    }

    fn apply_decision(
        &mut self,
        allocation: &[(TaskId, u32)],
        charges: &[TaskId],
        now: u64,
    ) {
        let desired: BTreeMap<TaskId, u32> = allocation.iter().copied().collect();
        let total: u32 = desired.values().sum();
        assert!(
            total <= self.cfg.soc.num_tiles,
            "decision oversubscribes tiles: {total}"
        );

        // Preempt running tasks the policy dropped (layer boundaries only).
        let running: Vec<TaskId> = self.current_alloc().keys().copied().collect();
        for id in running {
            if !desired.contains_key(&id) {
                let idx = self.index_of[&id];
                assert!(
                    !self.tasks[idx].layer_active,
                    "cannot preempt task {id} mid-layer"
                );
                for &t in &self.tasks[idx].tiles.clone() {
                    self.tiles[t as usize].assigned_task = None;
                    self.work[t as usize] = None;
                }
                self.tasks[idx].tiles.clear();
                self.queue.set_status(id, TaskStatus::Waiting);
            }
        }

        // Shrink pass: release tiles from tasks losing them.
        for (&id, &want) in &desired {
            let idx = self.index_of[&id];
            let have = self.tasks[idx].tiles.len() as u32;
            if have > want {
                let released: Vec<u32> = self
                    .tasks[idx]
                    .tiles
                    .split_off(want as usize)
                    .into_iter()
                    .collect();
                for &t in &released {
                    self.tiles[t as usize].assigned_task = None;
                    self.work[t as usize] = None;
                }
                if self.tasks[idx].layer_active {
                    self.redistribute_layer(idx, now);
                }
            }
        }

        // Grow pass: hand free tiles (ascending id) to new/growing tasks.
        let mut free: Vec<u32> = (0..self.cfg.soc.num_tiles)
            .filter(|&t| self.tiles[t as usize].assigned_task.is_none())
            .collect();
        free.sort_unstable();
        let mut free_iter = free.into_iter();
        for (&id, &want) in &desired {
            let idx = self.index_of[&id];
            let have = self.tasks[idx].tiles.len() as u32;
            if have < want {
                let was_running = have > 0;
                for _ in have..want {
                    let t = free_iter
                        .next()
                        .expect("tile conservation guarantees availability");
                    self.tiles[t as usize].assigned_task = Some(id);
                    self.tiles[t as usize].current_layer = self.tasks[idx].current_layer;
                    self.tasks[idx].tiles.push(t);
                }
                if was_running && self.tasks[idx].layer_active {
                    self.redistribute_layer(idx, now);
                }
                if !was_running {
                    self.queue.set_status(id, TaskStatus::Running);
                    self.tasks[idx].start_cycle.get_or_insert(now);
                }
            }
        }

        for id in charges {
            let idx = self.index_of[id];
            let cost = self.cfg.soc.compute_repartition_cost_cycles;
            self.tasks[idx].compute_migrations += 1;
            self.tasks[idx].charged_compute_cycles += cost;
            for &t in &self.tasks[idx].tiles {
                if let Some(w) = self.work[t as usize].as_mut() {
                    w.stall_rem += cost as f64;
                    w.finished_at = None;
                } else {
                    self.work[t as usize] = Some(TileWork {
                        stall_rem: cost as f64,
                        ..TileWork::default()
                    });
                }
            }
        }
    }

    /// Re-splits the remaining work of a mid-layer task over its current
    /// tile set after a resize.
    fn redistribute_layer(&mut self, idx: usize, _now: u64) {
        let tiles = self.tasks[idx].tiles.clone();
        if tiles.is_empty() {
            return;
        }
        let mut dram = 0u64;
        let mut l2 = 0u64;
        let mut macs = 0.0f64;
        let mut tax = 0.0f64;
        let mut stall = 0.0f64;
        for &t in &tiles {
            if let Some(w) = self.work[t as usize].take() {
                dram += w.dram_rem;
                l2 += w.l2_rem;
                macs += w.macs_rem;
                tax = tax.max(w.tax_rem);
                stall = stall.max(w.stall_rem);
            }
        }
        let k = tiles.len() as u64;
        for (i, &t) in tiles.iter().enumerate() {
            self.work[t as usize] = Some(TileWork {
                dram_rem: split_bytes(dram, k, i as u64),
                l2_rem: split_bytes(l2, k, i as u64),
                tax_rem: tax,
                macs_rem: macs / k as f64,
                stall_rem: stall,
                finished_at: None,
            });
        }
    }

    /// Sets up work for every running task that is between layers:
    /// fires the runtime hook (adaptive policy only), configures the
    /// throttles, charges reconfiguration, and splits the layer totals
    /// over the task's tiles.
    fn start_pending_layers(&mut self, now: u64) -> Result<()> {
        for idx in 0..self.tasks.len() {
            if self.tasks[idx].done
                || self.tasks[idx].layer_active
                || self.tasks[idx].tiles.is_empty()
            {
                continue;
            }

            if self.cfg.policy == Policy::DynMemory {
                self.maybe_migrate_tile(idx, now);
            }

            let net = Arc::clone(&self.tasks[idx].spec.network);
            let layer = &net.layers[self.tasks[idx].current_layer];
            let k = self.tasks[idx].tiles.len() as u32;
            let est = estimate_layer(layer, &self.cfg.soc, k)?;

            // Remaining-network prediction at the current allocation.
            let mut remain = 0.0;
            for l in &net.layers[self.tasks[idx].current_layer..] {
                remain += estimate_layer(l, &self.cfg.soc, k)?.prediction_cycles as f64;
            }
            self.tasks[idx].remain_prediction = remain;

            let throttle = if self.cfg.policy == Policy::DynMemory {
                self.runtime_hook(idx, &est, remain, now)
            } else {
                ThrottleConfig::disabled()
            };

            self.install_layer_work(idx, &est, layer.kind, throttle, now);
        }
        Ok(())
    }

    /// The per-layer runtime pass: score, detect contention, repartition
    /// bandwidth, update the scoreboard, and track deadline risk for the
    /// compute-repartition escape hatch.
    fn runtime_hook(
        &mut self,
        idx: usize,
        est: &LayerEstimate,
        remain: f64,
        now: u64,
    ) -> ThrottleConfig {
        let spec = &self.tasks[idx].spec;
        let me = TaskRuntimeState {
            remain_prediction_cycles: remain,
            slack_cycles: spec.deadline_cycle() as i64 - now as i64,
            user_priority: spec.user_priority,
        };
        let board = self.scoreboard.others(spec.task_id);
        let k = self.tasks[idx].tiles.len() as u32;
        let outcome = detect_and_partition(est, &me, &board, &self.cfg.soc, k);

        self.scoreboard
            .update(spec.task_id, outcome.bw_rate, outcome.score);

        if self.cfg.record_runtime_trace {
            self.rt_trace.push(RuntimeTraceRow {
                cycle: now,
                task_id: spec.task_id.0,
                layer: self.tasks[idx].current_layer,
                score: outcome.score,
                bw_rate_before: est.bw_rate_bytes_per_cycle,
                bw_rate_after: outcome.bw_rate,
                overflow: outcome.overflow,
                window: outcome.throttle.window_cycles,
                threshold_load: outcome.throttle.threshold_load,
            });
        }

        // Deadline-risk tracking for the rare compute repartition: the
        // adjusted remaining prediction still misses the deadline.
        let adjusted_remain =
            remain - est.prediction_cycles as f64 + outcome.prediction_cycles as f64;
        let slack = me.slack_cycles as f64;
        if self.tasks[idx].spec.user_priority >= 9 && adjusted_remain > slack {
            self.tasks[idx].deadline_risk_streak =
                self.tasks[idx].deadline_risk_streak.saturating_add(1);
        } else {
            self.tasks[idx].deadline_risk_streak = 0;
        }

        outcome.throttle
    }

    /// Reassigns one idle-or-lowest-score tile to a p-High task that has
    /// missed its deadline projection at two consecutive boundaries.
    fn maybe_migrate_tile(&mut self, idx: usize, now: u64) {
        if self.tasks[idx].deadline_risk_streak < 2 {
            return;
        }
        if self.tasks[idx].tiles.len() as u32 >= self.cfg.soc.num_tiles {
            self.tasks[idx].deadline_risk_streak = 0;
            return;
        }

        let tile = if let Some(t) = (0..self.cfg.soc.num_tiles)
            .find(|&t| self.tiles[t as usize].assigned_task.is_none())
        {
            Some(t)
        } else {
            // Lowest-score running donor with tiles to spare.
            let scores = self.running_scores(now);
            let me = self.tasks[idx].spec.task_id;
            let donor = self
                .tasks
                .iter()
                .filter(|t| t.running() && t.spec.task_id != me && t.tiles.len() >= 2)
                .min_by(|a, b| {
                    scores[&a.spec.task_id]
                        .total_cmp(&scores[&b.spec.task_id])
                        .then(a.spec.task_id.cmp(&b.spec.task_id))
                })
                .map(|t| t.spec.task_id);
            donor.map(|d| {
                let didx = self.index_of[&d];
                let t = self.tasks[didx].tiles.pop().expect("donor has >= 2 tiles");
                self.tiles[t as usize].assigned_task = None;
                self.work[t as usize] = None;
                if self.tasks[didx].layer_active {
                    self.redistribute_layer(didx, now);
                }
                t
            })
        };

        let Some(t) = tile else {
            self.tasks[idx].deadline_risk_streak = 0;
            return;
        };

        let id = self.tasks[idx].spec.task_id;
        self.tiles[t as usize].assigned_task = Some(id);
        self.tasks[idx].tiles.push(t);
        self.tasks[idx].compute_migrations += 1;
        let cost = self.cfg.soc.compute_repartition_cost_cycles;
        self.tasks[idx].charged_compute_cycles += cost;
        // The beneficiary pays: its tiles stall while threads migrate.
        for &tile in &self.tasks[idx].tiles {
            let w = self.work[tile as usize].get_or_insert_with(TileWork::default);
            w.stall_rem += cost as f64;
            w.finished_at = None;
        }
        self.tasks[idx].deadline_risk_streak = 0;
    }

    fn install_layer_work(
        &mut self,
        idx: usize,
        est: &LayerEstimate,
        kind: LayerKind,
        throttle: ThrottleConfig,
        now: u64,
    ) {
        let soc = &self.cfg.soc;
        let k = self.tasks[idx].tiles.len() as u64;
        let c = est.compute_ideal_cycles;
        let m = est.memory_ideal_cycles;
        let f = soc.overlap_factor;

        // The serialization tail lands on the longer pipe: as extra MACs
        // when compute dominates, as plain cycles on the memory chain
        // otherwise. Memory layers have no compute pipe and no tail.
        let (mac_total, tax) = match kind {
            LayerKind::Compute => {
                if c >= m {
                    let extra = f * m * soc.macs_per_cycle(k as u32);
                    (est_macs(est, soc, k as u32) + extra, 0.0)
                } else {
                    (est_macs(est, soc, k as u32), f * c)
                }
            }
            LayerKind::Mem => (0.0, 0.0),
        };

        let is_adaptive = self.cfg.policy == Policy::DynMemory;
        let mem_cost = soc.mem_repartition_cost_cycles;
        if is_adaptive {
            self.tasks[idx].mem_reconfigs += 1;
            self.tasks[idx].charged_mem_cycles += mem_cost;
        }

        let tiles = self.tasks[idx].tiles.clone();
        for (i, &t) in tiles.iter().enumerate() {
            let slot = t as usize;
            self.tiles[slot].configure_throttle(throttle, now);
            self.tiles[slot].current_layer = self.tasks[idx].current_layer;
            let carry_stall = self.work[slot]
                .as_ref()
                .map(|w| w.stall_rem)
                .unwrap_or(0.0);
            self.work[slot] = Some(TileWork {
                dram_rem: split_bytes(est.from_dram_bytes, k, i as u64),
                l2_rem: split_bytes(est.total_mem_bytes, k, i as u64),
                tax_rem: tax,
                macs_rem: mac_total / k as f64,
                stall_rem: carry_stall + if is_adaptive { mem_cost as f64 } else { 0.0 },
                finished_at: None,
            });
        }
        self.tasks[idx].layer_active = true;
        self.tasks[idx].layer_start_ts = now as f64;
    }

    /// One epoch of demand formation, arbitration and progress.
    fn advance_epoch(&mut self, now: u64) {
        let soc = &self.cfg.soc;
        let epoch = self.cfg.epoch_cycles;
        let e = epoch as f64;
        let dram_bw = soc.dram_bw_bytes_per_cycle as f64;
        let l2_bw = soc.l2_bw_bytes_per_cycle as f64;
        let n = soc.num_tiles as usize;

        self.dram_wants[..n].fill(0);
        self.l2_wants[..n].fill(0);

        // Demand phase.
        for t in 0..n {
            let Some(w) = self.work[t].as_ref() else {
                continue;
            };
            if w.done() {
                continue;
            }
            self.tiles[t].sync_window(now);
            let active = (e - w.stall_rem).max(0.0);
            if active <= 0.0 {
                continue;
            }
            let allowance = self.tiles[t].issue_allowance(now, epoch);
            let d_feasible = (active * dram_bw).ceil() as u64;
            let d_want = w.dram_rem.min(allowance).min(d_feasible);
            let l_feasible = (active * l2_bw).ceil() as u64;
            let l_want = w
                .l2_rem
                .min(allowance.saturating_sub(d_want))
                .min(l_feasible);
            self.dram_wants[t] = d_want;
            self.l2_wants[t] = l_want;
        }

        let dram_served = arbitrate_epoch(
            &self.dram_wants[..n],
            self.mem.dram_capacity_per_epoch,
        );
        let l2_served = arbitrate_epoch(&self.l2_wants[..n], self.mem.l2_capacity_per_epoch);

        let dram_total: u64 = dram_served.iter().sum();
        let l2_total: u64 = l2_served.iter().sum();
        self.max_dram_epoch = self.max_dram_epoch.max(dram_total);

        // Pacing rates: the resource rate weighted by grant share, so a
        // lone small transfer moves at full speed while a saturated
        // resource degrades every tile to its fair share.
        let dram_rate_per_grant = if dram_total > 0 {
            dram_bw / dram_total as f64
        } else {
            0.0
        };
        let l2_rate_per_grant = if l2_total > 0 {
            l2_bw / l2_total as f64
        } else {
            0.0
        };

        // Progress phase: walk each tile's epoch timeline.
        for t in 0..n {
            let Some(w) = self.work[t].as_mut() else {
                continue;
            };
            if w.done() {
                continue;
            }

            let cursor = w.stall_rem.min(e);
            w.stall_rem = (w.stall_rem - cursor).max(0.0);

            let g_d = dram_served[t];
            let g_l = l2_served[t];
            let mut issued = 0u64;

            // DRAM stage.
            let mut mem_cursor = cursor;
            if w.dram_rem > 0 && g_d > 0 && mem_cursor < e {
                let rate = g_d as f64 * dram_rate_per_grant;
                let movable = (rate * (e - mem_cursor)).floor() as u64;
                let moved = w.dram_rem.min(g_d).min(movable);
                w.dram_rem -= moved;
                issued += moved;
                *self
                    .dram_by_task
                    .entry(self.tiles[t].assigned_task.unwrap_or(TaskId(u64::MAX)))
                    .or_default() += moved;
                if w.dram_rem == 0 {
                    mem_cursor += moved as f64 / rate;
                } else {
                    mem_cursor = e;
                }
            } else if w.dram_rem > 0 {
                mem_cursor = e;
            }

            // L2 stage.
            if w.dram_rem == 0 && w.l2_rem > 0 && g_l > 0 && mem_cursor < e {
                let rate = g_l as f64 * l2_rate_per_grant;
                let movable = (rate * (e - mem_cursor)).floor() as u64;
                let moved = w.l2_rem.min(g_l).min(movable);
                w.l2_rem -= moved;
                issued += moved;
                if w.l2_rem == 0 {
                    mem_cursor += moved as f64 / rate;
                } else {
                    mem_cursor = e;
                }
            } else if w.l2_rem > 0 {
                mem_cursor = e;
            }

            // Serialization tail.
            if w.dram_rem == 0 && w.l2_rem == 0 && w.tax_rem > 0.0 && mem_cursor < e {
                let burn = w.tax_rem.min(e - mem_cursor);
                w.tax_rem -= burn;
                mem_cursor += burn;
                if w.tax_rem > 1e-9 {
                    mem_cursor = e;
                }
            } else if w.tax_rem > 0.0 {
                mem_cursor = e;
            }

            // Compute pipe, concurrent with the memory chain.
            let mut compute_cursor = cursor;
            if w.macs_rem > 0.0 && compute_cursor < e {
                let rate = soc.pes_per_tile as f64;
                let available = (e - compute_cursor) * rate;
                if w.macs_rem <= available {
                    compute_cursor += w.macs_rem / rate;
                    self.tiles[t].compute_done_macs += w.macs_rem.ceil() as u64;
                    w.macs_rem = 0.0;
                } else {
                    w.macs_rem -= available;
                    self.tiles[t].compute_done_macs += available.ceil() as u64;
                    compute_cursor = e;
                }
            }

            if issued > 0 {
                self.tiles[t].record_issue(now, epoch, issued);
            }

            let mem_done = w.dram_rem == 0 && w.l2_rem == 0 && w.tax_rem <= 1e-9;
            let compute_done = w.macs_rem <= 1e-9;
            if mem_done && compute_done {
                let end = mem_cursor.max(compute_cursor).max(cursor);
                w.finished_at = Some(now as f64 + end);
            }

            if self.cfg.record_bandwidth_trace {
                self.bw_trace.push(BandwidthTraceRow {
                    epoch: self.epoch,
                    tile_id: t as u32,
                    task_id: self.tiles[t].assigned_task.map(|i| i.0).unwrap_or(u64::MAX),
                    demanded_bytes: self.dram_wants[t] + self.l2_wants[t],
                    served_bytes: g_d + g_l,
                    stalled: self.tiles[t].stalled,
                });
            }
        }
    }

    fn final_records(&self) -> Vec<TaskRecord> {
        let mut records: Vec<TaskRecord> = self
            .tasks
            .iter()
            .map(|t| {
                let finish = t.finish_ts.expect("all tasks done").ceil() as u64;
                let end_to_end = finish.saturating_sub(t.spec.dispatch_cycle);
                TaskRecord {
                    task_id: t.spec.task_id,
                    network: t.spec.network.name.clone(),
                    priority: t.spec.user_priority,
                    dispatch_cycle: t.spec.dispatch_cycle,
                    start_cycle: t.start_cycle.unwrap_or(t.spec.dispatch_cycle),
                    finish_cycle: finish,
                    end_to_end_cycles: end_to_end,
                    qos_target_cycles: t.spec.qos_target_cycles,
                    deadline_met: end_to_end <= t.spec.qos_target_cycles,
                    mem_reconfigs: t.mem_reconfigs,
                    compute_migrations: t.compute_migrations,
                    charged_mem_cycles: t.charged_mem_cycles,
                    charged_compute_cycles: t.charged_compute_cycles,
                }
            })
            .collect();
        records.sort_by_key(|r| r.task_id);
        records
    }
}

fn est_macs(est: &LayerEstimate, soc: &SocConfig, tiles: u32) -> f64 {
    est.compute_ideal_cycles * soc.macs_per_cycle(tiles)
}

fn network_info(net: &NetworkDesc, soc: &SocConfig) -> Result<NetworkInfo> {
    let (estimates, total) = estimate_network(net, soc, soc.num_tiles)?;
    let dram_total: u64 = estimates.iter().map(|e| e.from_dram_bytes).sum();
    let avg_bw = dram_total as f64 / total.max(1) as f64;

    let mut block_of_layer = Vec::with_capacity(estimates.len());
    let mut block = 0usize;
    let mut prev_compute_bound: Option<bool> = None;
    for e in &estimates {
        let compute_bound = e.compute_ideal_cycles >= e.memory_ideal_cycles;
        match prev_compute_bound {
            Some(p) if p == compute_bound => {}
            Some(_) => block += 1,
            None => {}
        }
        prev_compute_bound = Some(compute_bound);
        block_of_layer.push(block);
    }
    Ok(NetworkInfo {
        estimated_total: total,
        avg_bw,
        block_of_layer,
    })
}
