//! Workload scheduling: the priority- and memory-aware group scheduler
//! plus the three baseline multi-tenancy policies.
//!
//! All four policies answer the same question at every scheduling
//! instant — which tasks should hold how many tiles — so the engine can
//! run them interchangeably and simply diff the decision against the
//! current allocation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::workload::{SocConfig, TaskId};

/// The multi-tenancy policy under evaluation.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    /// Adaptive memory-bandwidth partitioning with throttle windows and
    /// the occasional compute repartition.
    DynMemory,
    /// One task at a time on the whole array; priority preemption at
    /// layer boundaries.
    TimeMux,
    /// Fixed equal tile groups, no runtime repartitioning.
    Static,
    /// Tiles rebalanced across co-runners proportional to dynamic score
    /// at layer-block boundaries; no memory lever.
    DynCompute,
}

impl Policy {
    pub const ALL: [Policy; 4] = [
        Policy::DynMemory,
        Policy::TimeMux,
        Policy::Static,
        Policy::DynCompute,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Policy::DynMemory => "dyn-memory",
            Policy::TimeMux => "time-mux",
            Policy::Static => "static",
            Policy::DynCompute => "dyn-compute",
        }
    }

    pub fn parse(s: &str) -> Option<Policy> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dyn-memory" | "dyn_memory" | "dynmemory" => Some(Policy::DynMemory),
            "time-mux" | "time_mux" | "timemux" => Some(Policy::TimeMux),
            "static" => Some(Policy::Static),
            "dyn-compute" | "dyn_compute" | "dyncompute" => Some(Policy::DynCompute),
            _ => None,
        }
    }
}

impl std::fmt::Display for Policy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Scheduler knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchedParams {
    /// Admission threshold on the dynamic score. Zero admits by ordering
    /// alone; any positive value only delays admission.
    pub admission_threshold: f64,
    /// Optionally stop admitting once the estimated DRAM demand of the
    /// co-running set reaches capacity.
    pub bandwidth_gate: bool,
    /// Number of fixed tile groups under the static policy.
    pub static_groups: u32,
}

impl Default for SchedParams {
    fn default() -> Self {
        SchedParams {
            admission_threshold: 0.0,
            bandwidth_gate: false,
            static_groups: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskStatus {
    Waiting,
    Running,
    Done,
}

/// Queue row for one dispatched task.
#[derive(Debug, Clone)]
pub struct TaskQueueEntry {
    pub task_id: TaskId,
    pub dispatch_cycle: u64,
    pub status: TaskStatus,
    pub user_priority: u8,
    pub qos_target_cycles: u64,
    /// Whole-network prediction at dispatch, full-SoC allocation.
    pub estimated_total_cycles: u64,
    /// Network DRAM bytes / estimated total, bytes per cycle.
    pub estimated_avg_bw: f64,
    pub score: f64,
    pub mem_intensive: bool,
}

/// The dispatch queue all policies draw from.
#[derive(Debug, Default, Clone)]
pub struct TaskQueue {
    entries: BTreeMap<TaskId, TaskQueueEntry>,
}

impl TaskQueue {
    pub fn new() -> Self {
        TaskQueue::default()
    }

    pub fn push(&mut self, entry: TaskQueueEntry) {
        self.entries.insert(entry.task_id, entry);
    }

    pub fn get(&self, id: TaskId) -> Option<&TaskQueueEntry> {
        self.entries.get(&id)
    }

    pub fn get_mut(&mut self, id: TaskId) -> Option<&mut TaskQueueEntry> {
        self.entries.get_mut(&id)
    }

    pub fn set_status(&mut self, id: TaskId, status: TaskStatus) {
        if let Some(e) = self.entries.get_mut(&id) {
            e.status = status;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &TaskQueueEntry> {
        self.entries.values()
    }

    /// Refreshes waiting scores: user priority plus the slowdown already
    /// suffered in the queue, `(now - dispatch) / estimated_total`.
    pub fn score_tasks(&mut self, now: u64, soc: &SocConfig) {
        let half_bw = 0.5 * soc.dram_bw_bytes_per_cycle as f64;
        for e in self.entries.values_mut() {
            if e.status != TaskStatus::Waiting {
                continue;
            }
            let waited = now.saturating_sub(e.dispatch_cycle) as f64;
            let slowdown = waited / e.estimated_total_cycles.max(1) as f64;
            e.score = f64::from(e.user_priority) + slowdown;
            e.mem_intensive = e.estimated_avg_bw > half_bw;
        }
    }

    /// Waiting tasks ordered by descending score, ties broken by earlier
    /// dispatch and then lower task id.
    pub fn waiting_by_score(&self) -> Vec<&TaskQueueEntry> {
        let mut waiting: Vec<&TaskQueueEntry> = self
            .entries
            .values()
            .filter(|e| e.status == TaskStatus::Waiting)
            .collect();
        waiting.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then(a.dispatch_cycle.cmp(&b.dispatch_cycle))
                .then(a.task_id.cmp(&b.task_id))
        });
        waiting
    }

    /// Waiting tasks ordered by priority class, FIFO within a class.
    pub fn waiting_by_priority(&self) -> Vec<&TaskQueueEntry> {
        let mut waiting: Vec<&TaskQueueEntry> = self
            .entries
            .values()
            .filter(|e| e.status == TaskStatus::Waiting)
            .collect();
        waiting.sort_by(|a, b| {
            b.user_priority
                .cmp(&a.user_priority)
                .then(a.dispatch_cycle.cmp(&b.dispatch_cycle))
                .then(a.task_id.cmp(&b.task_id))
        });
        waiting
    }
}

/// What a policy wants the tile assignment to look like after a
/// scheduling instant.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScheduleDecision {
    /// Complete desired allocation: every task that should be running
    /// and its tile count. Running tasks absent from the list are
    /// preempted back to the queue.
    pub allocation: Vec<(TaskId, u32)>,
    /// Tasks charged a compute-repartition cost by this decision.
    pub migration_charges: Vec<TaskId>,
}

impl ScheduleDecision {
    pub fn tiles_of(&self, id: TaskId) -> Option<u32> {
        self.allocation.iter().find(|(t, _)| *t == id).map(|(_, n)| *n)
    }
}

/// Inputs a policy may consult at a scheduling instant.
#[derive(Debug, Clone, Copy)]
pub struct SchedContext<'a> {
    pub now: u64,
    pub free_tiles: u32,
    /// Current allocation of running tasks.
    pub current: &'a BTreeMap<TaskId, u32>,
    /// Dynamic (deadline-aware) scores of running tasks.
    pub running_scores: &'a BTreeMap<TaskId, f64>,
    /// Tasks that reached a layer boundary at this instant.
    pub boundary_tasks: &'a [TaskId],
    /// Whether any boundary was also a layer-block boundary.
    pub block_boundary: bool,
}

/// Splits `total` tiles over `weights`, guaranteeing one tile each and
/// handing the remainder out by largest proportional share (ties to the
/// heavier weight, then to the earlier index).
pub fn proportional_tiles(total: u32, weights: &[f64]) -> Vec<u32> {
    let n = weights.len() as u32;
    assert!(n > 0 && n <= total, "need 1..=total members");
    let spare = total - n;
    let sum: f64 = weights.iter().map(|w| w.max(0.0)).sum();
    let mut out = vec![1u32; weights.len()];
    if spare == 0 {
        return out;
    }
    if sum <= 0.0 {
        // No signal: round-robin the spare tiles.
        for i in 0..spare {
            out[(i % n) as usize] += 1;
        }
        return out;
    }
    let mut fractions: Vec<(f64, usize)> = Vec::with_capacity(weights.len());
    let mut handed = 0u32;
    for (i, w) in weights.iter().enumerate() {
        let exact = f64::from(spare) * w.max(0.0) / sum;
        let floor = exact.floor() as u32;
        out[i] += floor;
        handed += floor;
        fractions.push((exact - f64::from(floor), i));
    }
    fractions.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then(weights[b.1].total_cmp(&weights[a.1]))
            .then(a.1.cmp(&b.1))
    });
    for (_, i) in fractions {
        if handed == spare {
            break;
        }
        out[i] += 1;
        handed += 1;
    }
    out
}

/// Group formation: admit waiting tasks above the threshold in score
/// order, pairing every memory-intensive pick with the best
/// non-memory-intensive candidate still queued, then split the free
/// tiles evenly with the remainder going to higher scores.
pub fn select_group(
    queue: &TaskQueue,
    free_tiles: u32,
    params: &SchedParams,
    soc: &SocConfig,
    running_bw: f64,
) -> Vec<(TaskId, u32)> {
    if free_tiles == 0 {
        return Vec::new();
    }
    let mut ex: Vec<&TaskQueueEntry> = queue
        .waiting_by_score()
        .into_iter()
        .filter(|e| e.score > params.admission_threshold)
        .collect();

    let mut group: Vec<&TaskQueueEntry> = Vec::new();
    let mut admitted_bw = 0.0;
    let capacity = soc.dram_bw_bytes_per_cycle as f64;
    while (group.len() as u32) < free_tiles && !ex.is_empty() {
        let head = ex.remove(0);
        if params.bandwidth_gate
            && !group.is_empty()
            && running_bw + admitted_bw + head.estimated_avg_bw > capacity
        {
            break;
        }
        admitted_bw += head.estimated_avg_bw;
        let head_is_mem = head.mem_intensive;
        group.push(head);
        if head_is_mem && (group.len() as u32) < free_tiles {
            if let Some(pos) = ex.iter().position(|e| !e.mem_intensive) {
                let co = ex.remove(pos);
                admitted_bw += co.estimated_avg_bw;
                group.push(co);
            }
        }
    }
    if group.is_empty() {
        return Vec::new();
    }

    // Even split; remainder to higher scores.
    let mut ordered: Vec<&TaskQueueEntry> = group.clone();
    ordered.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.dispatch_cycle.cmp(&b.dispatch_cycle))
            .then(a.task_id.cmp(&b.task_id))
    });
    let n = group.len() as u32;
    let base = free_tiles / n;
    let rem = free_tiles % n;
    ordered
        .iter()
        .enumerate()
        .map(|(i, e)| (e.task_id, base + u32::from((i as u32) < rem)))
        .collect()
}

/// One task at a time on the whole array. A strictly higher-priority
/// waiter takes over at the runner's next layer boundary (the incoming
/// task pays the thread-migration cost); equal priorities run FIFO.
pub fn decide_time_multiplex(
    queue: &TaskQueue,
    soc: &SocConfig,
    ctx: &SchedContext<'_>,
) -> ScheduleDecision {
    let runner = ctx.current.keys().next().copied();
    let waiting = queue.waiting_by_priority();
    let best = waiting.first();

    match (runner, best) {
        (None, Some(next)) => ScheduleDecision {
            allocation: vec![(next.task_id, soc.num_tiles)],
            migration_charges: Vec::new(),
        },
        (None, None) => ScheduleDecision::default(),
        (Some(curr), Some(next)) => {
            let at_boundary = ctx.boundary_tasks.contains(&curr);
            let curr_priority = queue.get(curr).map(|e| e.user_priority).unwrap_or(0);
            if at_boundary && next.user_priority > curr_priority {
                ScheduleDecision {
                    allocation: vec![(next.task_id, soc.num_tiles)],
                    migration_charges: vec![next.task_id],
                }
            } else {
                ScheduleDecision {
                    allocation: vec![(curr, soc.num_tiles)],
                    migration_charges: Vec::new(),
                }
            }
        }
        (Some(curr), None) => ScheduleDecision {
            allocation: vec![(curr, soc.num_tiles)],
            migration_charges: Vec::new(),
        },
    }
}

/// Fixed equal tile groups; each free group runs the highest-scored
/// waiting task to completion. No runtime repartitioning of any kind.
pub fn decide_static_partition(
    queue: &TaskQueue,
    soc: &SocConfig,
    params: &SchedParams,
    ctx: &SchedContext<'_>,
) -> ScheduleDecision {
    let groups = params.static_groups.max(1).min(soc.num_tiles);
    let group_tiles = (soc.num_tiles / groups).max(1);
    let mut allocation: Vec<(TaskId, u32)> =
        ctx.current.iter().map(|(t, n)| (*t, *n)).collect();
    let mut free_groups = groups.saturating_sub(ctx.current.len() as u32);
    for entry in queue.waiting_by_score() {
        if free_groups == 0 {
            break;
        }
        allocation.push((entry.task_id, group_tiles));
        free_groups -= 1;
    }
    ScheduleDecision {
        allocation,
        migration_charges: Vec::new(),
    }
}

/// Rebalances tiles across co-runners proportional to their dynamic
/// scores. Resizes happen at layer-block boundaries (and at arrivals and
/// completions); every resized running task pays the migration cost.
pub fn decide_dynamic_compute(
    queue: &TaskQueue,
    soc: &SocConfig,
    ctx: &SchedContext<'_>,
) -> ScheduleDecision {
    let mut members: Vec<TaskId> = ctx.current.keys().copied().collect();
    for entry in queue.waiting_by_score() {
        if members.len() as u32 >= soc.num_tiles {
            break;
        }
        members.push(entry.task_id);
    }
    if members.is_empty() {
        return ScheduleDecision::default();
    }

    let weights: Vec<f64> = members
        .iter()
        .map(|id| {
            ctx.running_scores
                .get(id)
                .copied()
                .or_else(|| queue.get(*id).map(|e| e.score))
                .unwrap_or(0.0)
        })
        .collect();
    let tiles = proportional_tiles(soc.num_tiles, &weights);

    let mut allocation = Vec::with_capacity(members.len());
    let mut charges = Vec::new();
    for (id, n) in members.iter().zip(tiles.iter()) {
        allocation.push((*id, *n));
        if let Some(prev) = ctx.current.get(id) {
            if prev != n {
                charges.push(*id);
            }
        }
    }
    ScheduleDecision {
        allocation,
        migration_charges: charges,
    }
}

/// Dispatches a scheduling instant to the active policy.
pub fn decide(
    policy: Policy,
    queue: &TaskQueue,
    soc: &SocConfig,
    params: &SchedParams,
    ctx: &SchedContext<'_>,
) -> ScheduleDecision {
    match policy {
        Policy::DynMemory => {
            let mut allocation: Vec<(TaskId, u32)> =
                ctx.current.iter().map(|(t, n)| (*t, *n)).collect();
            let running_bw: f64 = ctx
                .current
                .keys()
                .filter_map(|id| queue.get(*id))
                .map(|e| e.estimated_avg_bw)
                .sum();
            allocation.extend(select_group(queue, ctx.free_tiles, params, soc, running_bw));
            ScheduleDecision {
                allocation,
                migration_charges: Vec::new(),
            }
        }
        Policy::TimeMux => decide_time_multiplex(queue, soc, ctx),
        Policy::Static => decide_static_partition(queue, soc, params, ctx),
        Policy::DynCompute => decide_dynamic_compute(queue, soc, ctx),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: u64, priority: u8, dispatch: u64, est: u64, avg_bw: f64) -> TaskQueueEntry {
        TaskQueueEntry {
            task_id: TaskId(id),
            dispatch_cycle: dispatch,
            status: TaskStatus::Waiting,
            user_priority: priority,
            qos_target_cycles: 10 * est,
            estimated_total_cycles: est,
            estimated_avg_bw: avg_bw,
            score: 0.0,
            mem_intensive: false,
        }
    }

    fn soc() -> SocConfig {
        SocConfig::default()
    }

    fn ctx<'a>(
        free: u32,
        current: &'a BTreeMap<TaskId, u32>,
        scores: &'a BTreeMap<TaskId, f64>,
    ) -> SchedContext<'a> {
        SchedContext {
            now: 0,
            free_tiles: free,
            current,
            running_scores: scores,
            boundary_tasks: &[],
            block_boundary: false,
        }
    }

    #[test]
    fn waiting_scores_add_slowdown() {
        let mut q = TaskQueue::new();
        q.push(entry(0, 5, 0, 1000, 2.0));
        q.score_tasks(2000, &soc());
        assert_eq!(q.get(TaskId(0)).unwrap().score, 7.0);
    }

    #[test]
    fn fresh_task_scores_its_priority() {
        let mut q = TaskQueue::new();
        q.push(entry(0, 4, 500, 1000, 2.0));
        q.score_tasks(500, &soc());
        assert_eq!(q.get(TaskId(0)).unwrap().score, 4.0);
    }

    #[test]
    fn memory_intensity_threshold_is_half_dram_bw() {
        let mut q = TaskQueue::new();
        q.push(entry(0, 1, 0, 1000, 9.0));
        q.push(entry(1, 1, 0, 1000, 8.0));
        q.score_tasks(0, &soc());
        assert!(q.get(TaskId(0)).unwrap().mem_intensive, "9 > 8");
        assert!(!q.get(TaskId(1)).unwrap().mem_intensive, "8 is not > 8");
    }

    #[test]
    fn sole_candidate_takes_every_free_tile() {
        let mut q = TaskQueue::new();
        q.push(entry(0, 3, 0, 1000, 2.0));
        q.score_tasks(100, &soc());
        let group = select_group(&q, 8, &SchedParams::default(), &soc(), 0.0);
        assert_eq!(group, vec![(TaskId(0), 8)]);
    }

    #[test]
    fn memory_intensive_head_pairs_with_a_compute_bound_task() {
        let mut q = TaskQueue::new();
        q.push(entry(0, 9, 0, 1000, 12.0)); // top, memory intensive
        q.push(entry(1, 5, 0, 1000, 12.0)); // memory intensive
        q.push(entry(2, 3, 0, 1000, 1.0)); // compute bound
        q.score_tasks(0, &soc());
        let group = select_group(&q, 2, &SchedParams::default(), &soc(), 0.0);
        let ids: Vec<TaskId> = group.iter().map(|(t, _)| *t).collect();
        assert_eq!(ids, vec![TaskId(0), TaskId(2)], "skips the second mem-intensive task");
    }

    #[test]
    fn below_threshold_tasks_wait_until_slowdown_admits_them() {
        let mut q = TaskQueue::new();
        q.push(entry(0, 0, 0, 1000, 2.0));
        let params = SchedParams {
            admission_threshold: 3.0,
            ..Default::default()
        };
        q.score_tasks(1000, &soc()); // score 1.0
        assert!(select_group(&q, 8, &params, &soc(), 0.0).is_empty());
        // Slowdown grows without bound, so the task is eventually admitted.
        q.score_tasks(4000, &soc()); // score 4.0
        let group = select_group(&q, 8, &params, &soc(), 0.0);
        assert_eq!(group.len(), 1);
    }

    #[test]
    fn group_split_is_even_with_remainder_to_higher_scores() {
        let mut q = TaskQueue::new();
        q.push(entry(0, 9, 0, 1000, 1.0));
        q.push(entry(1, 5, 0, 1000, 1.0));
        q.push(entry(2, 3, 0, 1000, 1.0));
        q.score_tasks(0, &soc());
        let group = select_group(&q, 8, &SchedParams::default(), &soc(), 0.0);
        assert_eq!(group, vec![(TaskId(0), 3), (TaskId(1), 3), (TaskId(2), 2)]);
        let total: u32 = group.iter().map(|(_, n)| n).sum();
        assert_eq!(total, 8);
    }

    #[test]
    fn time_mux_runs_one_task_on_all_tiles() {
        let mut q = TaskQueue::new();
        q.push(entry(0, 2, 0, 1000, 1.0));
        q.score_tasks(0, &soc());
        let current = BTreeMap::new();
        let scores = BTreeMap::new();
        let d = decide_time_multiplex(&q, &soc(), &ctx(8, &current, &scores));
        assert_eq!(d.allocation, vec![(TaskId(0), 8)]);
        assert!(d.migration_charges.is_empty(), "initial placement is free");
    }

    #[test]
    fn time_mux_preempts_for_strictly_higher_priority_at_boundaries() {
        let mut q = TaskQueue::new();
        q.push(entry(0, 2, 0, 1000, 1.0));
        q.push(entry(1, 8, 50, 1000, 1.0));
        q.set_status(TaskId(0), TaskStatus::Running);
        q.score_tasks(100, &soc());
        let mut current = BTreeMap::new();
        current.insert(TaskId(0), 8u32);
        let scores = BTreeMap::new();

        // Mid-layer: no preemption.
        let d = decide_time_multiplex(&q, &soc(), &ctx(0, &current, &scores));
        assert_eq!(d.allocation, vec![(TaskId(0), 8)]);

        // At the boundary the higher-priority arrival takes over and is
        // charged the migration.
        let boundary = [TaskId(0)];
        let c = SchedContext {
            boundary_tasks: &boundary,
            ..ctx(0, &current, &scores)
        };
        let d = decide_time_multiplex(&q, &soc(), &c);
        assert_eq!(d.allocation, vec![(TaskId(1), 8)]);
        assert_eq!(d.migration_charges, vec![TaskId(1)]);
    }

    #[test]
    fn time_mux_breaks_priority_ties_fifo() {
        let mut q = TaskQueue::new();
        q.push(entry(0, 5, 300, 1000, 1.0));
        q.push(entry(1, 5, 100, 1000, 1.0));
        q.score_tasks(400, &soc());
        let current = BTreeMap::new();
        let scores = BTreeMap::new();
        let d = decide_time_multiplex(&q, &soc(), &ctx(8, &current, &scores));
        assert_eq!(d.allocation, vec![(TaskId(1), 8)], "earlier dispatch wins");
    }

    #[test]
    fn static_partition_holds_fixed_groups() {
        let mut q = TaskQueue::new();
        for i in 0..5 {
            q.push(entry(i, (5 - i) as u8, 0, 1000, 1.0));
        }
        q.score_tasks(10, &soc());
        let current = BTreeMap::new();
        let scores = BTreeMap::new();
        let d = decide_static_partition(
            &q,
            &soc(),
            &SchedParams::default(),
            &ctx(8, &current, &scores),
        );
        assert_eq!(d.allocation.len(), 4, "only four groups exist");
        assert!(d.allocation.iter().all(|(_, n)| *n == 2));
        assert!(d.migration_charges.is_empty());
    }

    #[test]
    fn static_partition_leaves_a_lone_task_underprovisioned() {
        let mut q = TaskQueue::new();
        q.push(entry(0, 5, 0, 1000, 1.0));
        q.score_tasks(0, &soc());
        let current = BTreeMap::new();
        let scores = BTreeMap::new();
        let d = decide_static_partition(
            &q,
            &soc(),
            &SchedParams::default(),
            &ctx(8, &current, &scores),
        );
        assert_eq!(d.allocation, vec![(TaskId(0), 2)]);
    }

    #[test]
    fn dynamic_compute_gives_a_lone_task_everything() {
        let mut q = TaskQueue::new();
        q.push(entry(0, 5, 0, 1000, 1.0));
        q.score_tasks(0, &soc());
        let current = BTreeMap::new();
        let scores = BTreeMap::new();
        let d = decide_dynamic_compute(&q, &soc(), &ctx(8, &current, &scores));
        assert_eq!(d.allocation, vec![(TaskId(0), 8)]);
        assert!(d.migration_charges.is_empty());
    }

    #[test]
    fn dynamic_compute_splits_equal_scores_evenly() {
        let q = TaskQueue::new();
        let mut current = BTreeMap::new();
        current.insert(TaskId(0), 6u32);
        current.insert(TaskId(1), 2u32);
        let mut scores = BTreeMap::new();
        scores.insert(TaskId(0), 4.0);
        scores.insert(TaskId(1), 4.0);
        let d = decide_dynamic_compute(&q, &soc(), &ctx(0, &current, &scores));
        assert_eq!(d.allocation, vec![(TaskId(0), 4), (TaskId(1), 4)]);
        // Both moved, both pay.
        assert_eq!(d.migration_charges, vec![TaskId(0), TaskId(1)]);
    }

    #[test]
    fn dynamic_compute_allocates_three_to_one_as_six_plus_two() {
        let q = TaskQueue::new();
        let mut current = BTreeMap::new();
        current.insert(TaskId(0), 4u32);
        current.insert(TaskId(1), 4u32);
        let mut scores = BTreeMap::new();
        scores.insert(TaskId(0), 6.0);
        scores.insert(TaskId(1), 2.0);
        let d = decide_dynamic_compute(&q, &soc(), &ctx(0, &current, &scores));
        assert_eq!(d.allocation, vec![(TaskId(0), 6), (TaskId(1), 2)]);
    }

    #[test]
    fn proportional_tiles_respects_minimum() {
        assert_eq!(proportional_tiles(8, &[100.0, 0.01]), vec![7, 1]);
        assert_eq!(proportional_tiles(8, &[1.0, 1.0, 1.0, 1.0]), vec![2, 2, 2, 2]);
        assert_eq!(proportional_tiles(3, &[5.0, 1.0, 1.0]), vec![1, 1, 1]);
    }

    #[test]
    fn every_decision_conserves_tiles() {
        // Across policies, the summed allocation never exceeds the SoC.
        let soc = soc();
        let mut q = TaskQueue::new();
        for i in 0..10 {
            q.push(entry(i, (i % 12) as u8, i * 10, 1000 + i * 7, (i % 3) as f64 * 6.0));
        }
        q.score_tasks(500, &soc);
        let current = BTreeMap::new();
        let scores = BTreeMap::new();
        for policy in Policy::ALL {
            let d = decide(
                policy,
                &q,
                &soc,
                &SchedParams::default(),
                &ctx(8, &current, &scores),
            );
            let total: u32 = d.allocation.iter().map(|(_, n)| n).sum();
            assert!(total <= soc.num_tiles, "{policy}: {total}");
            let mut ids: Vec<TaskId> = d.allocation.iter().map(|(t, _)| *t).collect();
            ids.sort();
            ids.dedup();
            assert_eq!(ids.len(), d.allocation.len(), "{policy}: duplicate task");
        }
    }

    #[test]
    fn higher_priority_wins_at_equal_slowdown() {
        let mut q = TaskQueue::new();
        q.push(entry(0, 2, 0, 1000, 1.0));
        q.push(entry(1, 7, 0, 1000, 1.0));
        q.score_tasks(500, &soc());
        let waiting = q.waiting_by_score();
        assert_eq!(waiting[0].task_id, TaskId(1));
    }
}
