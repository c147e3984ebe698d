//! Per-layer dynamic priority scoring, scoreboard-based contention
//! detection, weighted bandwidth repartitioning, and throttle
//! configuration.
//!
//! At every layer boundary the runtime predicts the next layer's DRAM
//! demand, sums the demands of the co-running tasks from the scoreboard,
//! and — when the total oversubscribes DRAM — shaves the caller's rate by
//! a share weighted against the co-runners' score-weighted usage. The
//! reduced rate is then materialized as a `(window, threshold_load)`
//! register pair for every tile the task owns.

use std::collections::BTreeMap;

use crate::estimator::LayerEstimate;
use crate::hw::ThrottleConfig;
use crate::workload::{SocConfig, TaskId};

/// Added to the user priority once the deadline is reached, in place of
/// the unbounded remaining-work / slack ratio.
pub const SCORE_CAP: f64 = 100.0;

/// One row of the runtime's bandwidth scoreboard.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreboardEntry {
    pub task_id: TaskId,
    /// Current DRAM demand of the task, bytes/cycle.
    pub bw_rate: f64,
    /// Dynamic priority score at the last layer boundary.
    pub score: f64,
}

/// Deadline bookkeeping for one running task.
#[derive(Debug, Clone, Copy)]
pub struct TaskRuntimeState {
    /// Estimator sum over the layers not yet executed, cycles.
    pub remain_prediction_cycles: f64,
    /// Cycles left until the QoS deadline; may be negative.
    pub slack_cycles: i64,
    pub user_priority: u8,
}

/// `user_priority + remaining_work / slack`, capped once the deadline
/// has passed. Grows without bound as slack shrinks toward zero.
pub fn dynamic_score(state: &TaskRuntimeState) -> f64 {
    let base = f64::from(state.user_priority);
    if state.slack_cycles <= 0 {
        return base + SCORE_CAP;
    }
    let urgency = state.remain_prediction_cycles / state.slack_cycles as f64;
    base + urgency.min(SCORE_CAP)
}

/// Result of contention detection for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionOutcome {
    pub throttle: ThrottleConfig,
    /// DRAM demand after repartitioning, bytes/cycle.
    pub bw_rate: f64,
    /// Layer prediction after repartitioning, cycles.
    pub prediction_cycles: u64,
    /// Demand minus capacity before the cut; <= 0 means no contention.
    pub overflow: f64,
    pub score: f64,
}

/// Detects contention against the scoreboard and, when present, computes
/// the caller's reduced bandwidth share and throttle registers.
///
/// `board` holds the co-runners only (never the calling task). With an
/// empty board a positive overflow means the task alone oversubscribes
/// DRAM; sharing is moot, so it runs unthrottled.
pub fn detect_and_partition(
    layer_est: &LayerEstimate,
    me: &TaskRuntimeState,
    board: &[ScoreboardEntry],
    soc: &SocConfig,
    num_tiles: u32,
) -> PartitionOutcome {
    debug_assert!(num_tiles >= 1);
    let score = dynamic_score(me);
    let bw_rate = layer_est.bw_rate_bytes_per_cycle;
    let other_bw_rate: f64 = board.iter().map(|e| e.bw_rate).sum();
    let weight_sum: f64 = board.iter().map(|e| e.score * e.bw_rate).sum();

    let dram_max = soc.dram_bw_bytes_per_cycle as f64;
    let overflow = bw_rate + other_bw_rate - dram_max;

    if overflow <= 0.0 || weight_sum <= 0.0 {
        return PartitionOutcome {
            throttle: ThrottleConfig::disabled(),
            bw_rate,
            prediction_cycles: layer_est.prediction_cycles,
            overflow,
            score,
        };
    }

    let curr_weight_sum = score * bw_rate;
    let mut new_bw = bw_rate - overflow * weight_sum / (curr_weight_sum + weight_sum);

    // Floor: at least one request per original window per tile, so a
    // low-score task keeps a trickle instead of starving.
    let tiles = f64::from(num_tiles);
    let floor =
        soc.request_granularity_bytes as f64 * tiles / layer_est.prediction_cycles as f64;
    new_bw = new_bw.max(floor);

    let prediction = if soc.prediction_update_as_product {
        (new_bw * layer_est.from_dram_bytes as f64).ceil() as u64
    } else {
        (layer_est.from_dram_bytes as f64 / new_bw).ceil() as u64
    }
    .max(1);

    let threshold_bytes =
        (layer_est.total_mem_bytes as f64 / tiles).ceil() as u64;
    let threshold_load = threshold_bytes
        .div_ceil(soc.request_granularity_bytes)
        .max(1);
    let window = (prediction as f64 / tiles).ceil() as u64;
    let window = window.max(1);

    PartitionOutcome {
        throttle: ThrottleConfig::new(window, threshold_load)
            .expect("both registers nonzero"),
        bw_rate: new_bw,
        prediction_cycles: prediction,
        overflow,
        score,
    }
}

/// The runtime's global scoreboard: one row per task with an incomplete
/// network, updated only at layer boundaries.
#[derive(Debug, Default, Clone)]
pub struct Scoreboard {
    rows: BTreeMap<TaskId, ScoreboardEntry>,
}

impl Scoreboard {
    pub fn new() -> Self {
        Scoreboard::default()
    }

    /// Rows of every co-runner of `task`, in task-id order.
    pub fn others(&self, task: TaskId) -> Vec<ScoreboardEntry> {
        self.rows
            .values()
            .filter(|e| e.task_id != task)
            .copied()
            .collect()
    }

    pub fn update(&mut self, task: TaskId, bw_rate: f64, score: f64) {
        self.rows.insert(
            task,
            ScoreboardEntry {
                task_id: task,
                bw_rate,
                score,
            },
        );
    }

    pub fn remove(&mut self, task: TaskId) {
        self.rows.remove(&task);
    }

    pub fn contains(&self, task: TaskId) -> bool {
        self.rows.contains_key(&task)
    }

    pub fn total_bw(&self) -> f64 {
        self.rows.values().map(|e| e.bw_rate).sum()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::LayerEstimate;

    fn est(from_dram: u64, total_mem: u64, prediction: u64) -> LayerEstimate {
        LayerEstimate {
            compute_ideal_cycles: 0.0,
            memory_ideal_cycles: prediction as f64,
            prediction_cycles: prediction,
            total_mem_bytes: total_mem,
            from_dram_bytes: from_dram,
            bw_rate_bytes_per_cycle: from_dram as f64 / prediction as f64,
        }
    }

    fn state(priority: u8, remain: f64, slack: i64) -> TaskRuntimeState {
        TaskRuntimeState {
            remain_prediction_cycles: remain,
            slack_cycles: slack,
            user_priority: priority,
        }
    }

    fn soc() -> SocConfig {
        SocConfig::default()
    }

    #[test]
    fn score_blends_priority_and_urgency() {
        assert_eq!(dynamic_score(&state(5, 1000.0, 1000)), 6.0);
    }

    #[test]
    fn score_with_no_remaining_work_is_the_priority() {
        assert_eq!(dynamic_score(&state(7, 0.0, 500)), 7.0);
    }

    #[test]
    fn score_caps_at_the_deadline() {
        assert_eq!(dynamic_score(&state(3, 1000.0, 0)), 3.0 + SCORE_CAP);
        assert_eq!(dynamic_score(&state(3, 1000.0, -10)), 3.0 + SCORE_CAP);
    }

    #[test]
    fn score_grows_as_slack_shrinks() {
        let wide = dynamic_score(&state(2, 5000.0, 10_000));
        let tight = dynamic_score(&state(2, 5000.0, 100));
        assert!(tight > wide);
    }

    #[test]
    fn asymmetric_partition_hand_trace() {
        // Own rate 10 B/cy at score 2; one co-runner at (score 1, 10 B/cy);
        // capacity 16 -> overflow 4; cut = 4 * 10 / (20 + 10).
        let e = est(10_000, 10_000, 1_000);
        let me = state(2, 0.0, 1); // score 2: urgency 0
        let board = [ScoreboardEntry {
            task_id: TaskId(9),
            bw_rate: 10.0,
            score: 1.0,
        }];
        let out = detect_and_partition(&e, &me, &board, &soc(), 2);
        let want = 10.0 - 4.0 * 10.0 / 30.0;
        assert!(
            (out.bw_rate - want).abs() <= 1e-9 * want,
            "got {}",
            out.bw_rate
        );
        assert!(out.throttle.is_enabled());
        assert!(out.overflow > 0.0);
    }

    #[test]
    fn no_overflow_means_no_throttling() {
        let e = est(4_000, 4_000, 1_000); // 4 B/cy
        let me = state(2, 0.0, 1);
        let board = [
            ScoreboardEntry {
                task_id: TaskId(1),
                bw_rate: 5.0,
                score: 1.0,
            },
            ScoreboardEntry {
                task_id: TaskId(2),
                bw_rate: 3.0,
                score: 4.0,
            },
        ];
        let out = detect_and_partition(&e, &me, &board, &soc(), 2);
        assert_eq!(out.throttle, ThrottleConfig::disabled());
        assert_eq!(out.bw_rate, 4.0);
        assert_eq!(out.prediction_cycles, 1_000);
        assert!(out.overflow < 0.0);
    }

    #[test]
    fn symmetric_partition_sums_to_capacity() {
        // Two identical tasks at 10 B/cy each against 16 B/cy of DRAM:
        // each sheds overflow * (s*10) / (s*10 + s*10) = 2, and the pair
        // lands exactly on capacity. The shed is score-scale free.
        for score in [3_u8, 7, 11] {
            let e = est(10_000, 10_000, 1_000);
            let me = state(score, 0.0, 1);
            let board = [ScoreboardEntry {
                task_id: TaskId(1),
                bw_rate: 10.0,
                score: f64::from(score),
            }];
            let a = detect_and_partition(&e, &me, &board, &soc(), 2);
            let b = detect_and_partition(&e, &me, &board, &soc(), 2);
            assert!((a.bw_rate - 8.0).abs() <= 1e-9 * 8.0);
            assert!((a.bw_rate + b.bw_rate - 16.0).abs() <= 1e-9 * 16.0);
        }
    }

    #[test]
    fn lone_oversubscriber_is_left_alone() {
        let e = est(200_000, 200_000, 10_000); // 20 B/cy > 16
        let me = state(1, 0.0, 1);
        let out = detect_and_partition(&e, &me, &[], &soc(), 8);
        assert!(out.overflow > 0.0);
        assert_eq!(out.throttle, ThrottleConfig::disabled());
        assert_eq!(out.bw_rate, 20.0);
    }

    #[test]
    fn scores_are_scale_invariant() {
        // Scaling every score (caller and board) by a positive constant
        // leaves each post-partition rate unchanged: the cut is
        // overflow * ws / (cws + ws) and both terms scale linearly.
        let cut = |k: f64| {
            let bw: f64 = 10.0;
            let overflow = bw + 10.0 - 16.0;
            let ws: f64 = (2.0 * k) * 6.0 + (5.0 * k) * 4.0;
            let cws = (4.0 * k) * bw;
            bw - overflow * ws / (cws + ws)
        };
        let a = cut(1.0);
        for k in [0.25, 3.7, 100.0] {
            assert!((cut(k) - a).abs() < 1e-12);
        }
        // And the implementation agrees with the formula at k = 1.
        let e = est(10_000, 10_000, 1_000);
        let me = state(4, 0.0, 1);
        let board = [
            ScoreboardEntry {
                task_id: TaskId(1),
                bw_rate: 6.0,
                score: 2.0,
            },
            ScoreboardEntry {
                task_id: TaskId(2),
                bw_rate: 4.0,
                score: 5.0,
            },
        ];
        let out = detect_and_partition(&e, &me, &board, &soc(), 2);
        assert!((out.bw_rate - a).abs() < 1e-12);
    }

    #[test]
    fn higher_own_score_keeps_more_bandwidth() {
        let e = est(10_000, 10_000, 1_000);
        let board = [ScoreboardEntry {
            task_id: TaskId(1),
            bw_rate: 10.0,
            score: 3.0,
        }];
        let lo = detect_and_partition(&e, &state(1, 0.0, 1), &board, &soc(), 2);
        let hi = detect_and_partition(&e, &state(9, 0.0, 1), &board, &soc(), 2);
        assert!(hi.bw_rate > lo.bw_rate);
    }

    #[test]
    fn partitioned_prediction_stretches_with_the_cut() {
        let e = est(16_000, 16_000, 1_000); // 16 B/cy
        let me = state(0, 0.0, 1);
        let board = [ScoreboardEntry {
            task_id: TaskId(1),
            bw_rate: 16.0,
            score: 5.0,
        }];
        let out = detect_and_partition(&e, &me, &board, &soc(), 4);
        assert!(out.bw_rate < 16.0);
        let want = (e.from_dram_bytes as f64 / out.bw_rate).ceil() as u64;
        assert_eq!(out.prediction_cycles, want);
        // window = prediction / tiles, threshold = total_mem / tiles in
        // request units.
        assert_eq!(
            out.throttle.window_cycles,
            (out.prediction_cycles as f64 / 4.0).ceil() as u64
        );
        assert_eq!(out.throttle.threshold_load, (16_000_f64 / 4.0 / 64.0).ceil() as u64);
    }

    #[test]
    fn scoreboard_tracks_rows_in_task_order() {
        let mut board = Scoreboard::new();
        board.update(TaskId(5), 3.0, 1.0);
        board.update(TaskId(1), 2.0, 2.0);
        board.update(TaskId(5), 4.0, 1.5);
        assert_eq!(board.len(), 2);
        let others = board.others(TaskId(1));
        assert_eq!(others.len(), 1);
        assert_eq!(others[0].task_id, TaskId(5));
        assert_eq!(others[0].bw_rate, 4.0);
        board.remove(TaskId(5));
        assert!(!board.contains(TaskId(5)));
    }
}
