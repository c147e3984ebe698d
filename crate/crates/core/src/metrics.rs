//! Evaluation metrics: SLA satisfaction (overall and per priority
//! group), system throughput as summed normalized progress, and fairness
//! as the worst pairwise ratio of priority-normalized progress.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::sim::TaskRecord;
use crate::workload::{PriorityGroup, TaskId};

/// Metrics for one simulation run.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub sla_rate_overall: f64,
    /// Per priority bucket; `None` when the bucket is empty.
    pub sla_rate_low: Option<f64>,
    pub sla_rate_mid: Option<f64>,
    pub sla_rate_high: Option<f64>,
    pub stp: f64,
    pub fairness: f64,
    /// Fairness over a single task is reported as 1.0 and flagged here.
    pub fairness_degenerate: bool,
    pub per_task_pp: Vec<(TaskId, f64)>,
    pub task_count: usize,
}

/// Fraction of tasks whose dispatch-to-finish latency met the QoS
/// target, overall and per priority group.
pub fn sla_rate(
    records: &[TaskRecord],
) -> Result<(f64, BTreeMap<PriorityGroup, f64>)> {
    if records.is_empty() {
        return Err(Error::EmptyResults);
    }
    let mut met = 0usize;
    let mut group_total: BTreeMap<u8, (usize, usize)> = BTreeMap::new();
    for r in records {
        let group = PriorityGroup::of(r.priority) as u8;
        let slot = group_total.entry(group).or_default();
        slot.1 += 1;
        if r.deadline_met {
            met += 1;
            slot.0 += 1;
        }
    }
    let overall = met as f64 / records.len() as f64;
    let mut per_group = BTreeMap::new();
    for g in PriorityGroup::ALL {
        if let Some((m, t)) = group_total.get(&(g as u8)) {
            per_group.insert(g, *m as f64 / *t as f64);
        }
    }
    Ok((overall, per_group))
}

/// System throughput: the sum over tasks of isolated-over-multi-tenant
/// latency. Ranges from near zero up to the task count.
pub fn stp(records: &[TaskRecord], isolated: &BTreeMap<TaskId, u64>) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyResults);
    }
    let mut sum = 0.0;
    for r in records {
        let single = isolated
            .get(&r.task_id)
            .ok_or(Error::MissingIsolated(r.task_id.0))?;
        sum += *single as f64 / r.end_to_end_cycles.max(1) as f64;
    }
    Ok(sum)
}

/// Proportional progress per task and the fairness value.
///
/// `PP_i` normalizes the task's progress (isolated over multi-tenant
/// latency) by its share of the total priority weight; fairness is the
/// minimum over ordered pairs, i.e. `min PP / max PP`. Priorities are
/// used exactly as given — callers working from 0-based user priorities
/// should offset them by one so no share is zero.
pub fn fairness(
    records: &[TaskRecord],
    isolated: &BTreeMap<TaskId, u64>,
    priorities: &BTreeMap<TaskId, f64>,
) -> Result<(f64, bool, Vec<(TaskId, f64)>)> {
    if records.is_empty() {
        return Err(Error::EmptyResults);
    }
    let weight_total: f64 = records
        .iter()
        .map(|r| priorities.get(&r.task_id).copied().unwrap_or(0.0))
        .sum();
    if weight_total <= 0.0 {
        return Err(Error::validation(
            "fairness",
            "priority weights must sum to a positive value",
        ));
    }

    let mut pp = Vec::with_capacity(records.len());
    for r in records {
        let single = isolated
            .get(&r.task_id)
            .ok_or(Error::MissingIsolated(r.task_id.0))?;
        let weight = priorities.get(&r.task_id).copied().unwrap_or(0.0);
        if weight <= 0.0 {
            return Err(Error::validation(
                "fairness",
                format!("task {} has a non-positive priority weight", r.task_id),
            ));
        }
        let progress = *single as f64 / r.end_to_end_cycles.max(1) as f64;
        pp.push((r.task_id, progress / (weight / weight_total)));
    }

    if pp.len() == 1 {
        return Ok((1.0, true, pp));
    }
    let min = pp.iter().map(|(_, v)| *v).fold(f64::INFINITY, f64::min);
    let max = pp.iter().map(|(_, v)| *v).fold(0.0_f64, f64::max);
    Ok((min / max, false, pp))
}

/// Computes the full report for one run. User priorities are offset by
/// one in the fairness weights so priority-0 tasks keep a nonzero share.
pub fn report(
    records: &[TaskRecord],
    isolated: &BTreeMap<TaskId, u64>,
) -> Result<MetricsReport> {
    let (overall, groups) = sla_rate(records)?;
    let stp_value = stp(records, isolated)?;
    let priorities: BTreeMap<TaskId, f64> = records
        .iter()
        .map(|r| (r.task_id, f64::from(r.priority) + 1.0))
        .collect();
    let (fair, degenerate, pp) = fairness(records, isolated, &priorities)?;
    Ok(MetricsReport {
        sla_rate_overall: overall,
        sla_rate_low: groups.get(&PriorityGroup::Low).copied(),
        sla_rate_mid: groups.get(&PriorityGroup::Mid).copied(),
        sla_rate_high: groups.get(&PriorityGroup::High).copied(),
        stp: stp_value,
        fairness: fair,
        fairness_degenerate: degenerate,
        per_task_pp: pp,
        task_count: records.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: u64, priority: u8, end_to_end: u64, target: u64) -> TaskRecord {
        TaskRecord {
            task_id: TaskId(id),
            network: String::new(),
            priority,
            dispatch_cycle: 0,
            start_cycle: 0,
            finish_cycle: end_to_end,
            end_to_end_cycles: end_to_end,
            qos_target_cycles: target,
            deadline_met: end_to_end <= target,
            mem_reconfigs: 0,
            compute_migrations: 0,
            charged_mem_cycles: 0,
            charged_compute_cycles: 0,
        }
    }

    fn iso(pairs: &[(u64, u64)]) -> BTreeMap<TaskId, u64> {
        pairs.iter().map(|(id, v)| (TaskId(*id), *v)).collect()
    }

    #[test]
    fn all_deadlines_met_is_rate_one() {
        let recs = vec![record(0, 1, 50, 100), record(1, 5, 80, 100)];
        let (overall, groups) = sla_rate(&recs).unwrap();
        assert_eq!(overall, 1.0);
        assert_eq!(groups[&PriorityGroup::Low], 1.0);
        assert_eq!(groups[&PriorityGroup::Mid], 1.0);
    }

    #[test]
    fn three_of_four_is_three_quarters() {
        let recs = vec![
            record(0, 1, 50, 100),
            record(1, 1, 99, 100),
            record(2, 1, 100, 100),
            record(3, 1, 101, 100),
        ];
        let (overall, _) = sla_rate(&recs).unwrap();
        assert_eq!(overall, 0.75);
    }

    #[test]
    fn priorities_bucket_into_low_mid_high() {
        let recs = vec![
            record(0, 1, 50, 100),
            record(1, 5, 200, 100),
            record(2, 10, 50, 100),
        ];
        let (_, groups) = sla_rate(&recs).unwrap();
        assert_eq!(groups[&PriorityGroup::Low], 1.0);
        assert_eq!(groups[&PriorityGroup::Mid], 0.0);
        assert_eq!(groups[&PriorityGroup::High], 1.0);
    }

    #[test]
    fn stp_hand_example() {
        let recs = vec![record(0, 1, 200, 1000), record(1, 1, 400, 1000)];
        let isolated = iso(&[(0, 100), (1, 300)]);
        assert_eq!(stp(&recs, &isolated).unwrap(), 1.25);
    }

    #[test]
    fn stp_of_the_isolated_scenario_is_n() {
        let recs: Vec<TaskRecord> =
            (0..7).map(|i| record(i, 1, 100 + i, 10_000)).collect();
        let isolated: BTreeMap<TaskId, u64> =
            recs.iter().map(|r| (r.task_id, r.end_to_end_cycles)).collect();
        assert_eq!(stp(&recs, &isolated).unwrap(), 7.0);
    }

    #[test]
    fn two_tasks_each_halved_is_one() {
        let recs = vec![record(0, 1, 200, 1000), record(1, 1, 600, 1000)];
        let isolated = iso(&[(0, 100), (1, 300)]);
        assert_eq!(stp(&recs, &isolated).unwrap(), 1.0);
    }

    #[test]
    fn missing_isolated_entry_is_an_error() {
        let recs = vec![record(0, 1, 200, 1000)];
        assert!(matches!(
            stp(&recs, &BTreeMap::new()),
            Err(Error::MissingIsolated(0))
        ));
    }

    #[test]
    fn equal_priorities_equal_slowdowns_are_fair() {
        let recs = vec![record(0, 2, 200, 1000), record(1, 2, 200, 1000)];
        let isolated = iso(&[(0, 100), (1, 100)]);
        let priorities = [(TaskId(0), 2.0), (TaskId(1), 2.0)].into_iter().collect();
        let (fair, degenerate, pp) = fairness(&recs, &isolated, &priorities).unwrap();
        assert_eq!(fair, 1.0);
        assert!(!degenerate);
        assert!(pp.iter().all(|(_, v)| *v == 1.0));
    }

    #[test]
    fn unequal_priorities_equal_slowdowns_hand_example() {
        // Priorities (1, 3), both slowed 2x: PP = (2, 2/3), min/max = 1/3.
        let recs = vec![record(0, 1, 200, 1000), record(1, 3, 200, 1000)];
        let isolated = iso(&[(0, 100), (1, 100)]);
        let priorities = [(TaskId(0), 1.0), (TaskId(1), 3.0)].into_iter().collect();
        let (fair, _, pp) = fairness(&recs, &isolated, &priorities).unwrap();
        assert_eq!(pp[0].1, 2.0);
        assert_eq!(pp[1].1, 0.5 / 0.75);
        assert_eq!(fair, 1.0 / 3.0);
    }

    #[test]
    fn fairness_is_priority_scale_invariant() {
        let recs = vec![record(0, 1, 150, 1000), record(1, 3, 400, 1000)];
        let isolated = iso(&[(0, 100), (1, 100)]);
        let p1: BTreeMap<TaskId, f64> =
            [(TaskId(0), 1.0), (TaskId(1), 3.0)].into_iter().collect();
        let p2: BTreeMap<TaskId, f64> =
            [(TaskId(0), 5.0), (TaskId(1), 15.0)].into_iter().collect();
        let (f1, _, pp1) = fairness(&recs, &isolated, &p1).unwrap();
        let (f2, _, pp2) = fairness(&recs, &isolated, &p2).unwrap();
        assert_eq!(f1, f2);
        for (a, b) in pp1.iter().zip(pp2.iter()) {
            assert!((a.1 - b.1).abs() < 1e-12);
        }
    }

    #[test]
    fn single_task_fairness_is_flagged() {
        let recs = vec![record(0, 1, 150, 1000)];
        let isolated = iso(&[(0, 100)]);
        let priorities = [(TaskId(0), 1.0)].into_iter().collect();
        let (fair, degenerate, _) = fairness(&recs, &isolated, &priorities).unwrap();
        assert_eq!(fair, 1.0);
        assert!(degenerate);
    }

    #[test]
    fn metrics_ignore_task_order() {
        let mut recs = vec![
            record(0, 1, 150, 1000),
            record(1, 3, 400, 1000),
            record(2, 9, 220, 1000),
        ];
        let isolated = iso(&[(0, 100), (1, 100), (2, 100)]);
        let a = report(&recs, &isolated).unwrap();
        recs.reverse();
        let b = report(&recs, &isolated).unwrap();
        assert_eq!(a.sla_rate_overall, b.sla_rate_overall);
        assert_eq!(a.stp, b.stp);
        assert_eq!(a.fairness, b.fairness);
    }

    #[test]
    fn report_offsets_zero_priority() {
        let recs = vec![record(0, 0, 100, 1000), record(1, 11, 100, 1000)];
        let isolated = iso(&[(0, 100), (1, 100)]);
        let r = report(&recs, &isolated).unwrap();
        assert!(r.fairness.is_finite());
        assert!(r.fairness > 0.0);
    }

    #[test]
    fn empty_results_are_rejected() {
        assert!(matches!(sla_rate(&[]), Err(Error::EmptyResults)));
    }
}
