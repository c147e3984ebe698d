//! Behavioral model of the per-tile memory-access monitoring and
//! throttling engine, plus the shared memory system that serves
//! per-epoch bandwidth demands.
//!
//! Each tile carries an access counter and a thresholding register pair
//! `(window, threshold_load)` written by the runtime. Within a monitored
//! window the tile may issue at most `threshold_load` requests; once the
//! counter saturates the engine inserts bubbles (no further memory
//! traffic) until the window rolls over or the runtime rewrites the
//! registers. Budgets replenish at every window boundary so a stalled
//! engine cannot deadlock between runtime invocations.

use crate::error::{Error, Result};
use crate::workload::TaskId;

/// Throttle register pair. `(0, 0)` disables regulation entirely.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ThrottleConfig {
    pub window_cycles: u64,
    /// Maximum requests per window.
    pub threshold_load: u64,
}

impl ThrottleConfig {
    pub fn new(window_cycles: u64, threshold_load: u64) -> Result<Self> {
        if (window_cycles == 0) != (threshold_load == 0) {
            return Err(Error::validation(
                "throttle config",
                "window and threshold must both be set or both be zero",
            ));
        }
        Ok(ThrottleConfig {
            window_cycles,
            threshold_load,
        })
    }

    pub fn disabled() -> Self {
        ThrottleConfig::default()
    }

    pub fn is_enabled(&self) -> bool {
        self.window_cycles > 0
    }
}

/// Register and counter state of one accelerator tile.
#[derive(Debug, Clone)]
pub struct TileState {
    pub tile_id: u32,
    pub assigned_task: Option<TaskId>,
    pub current_layer: usize,
    /// Bytes issued in the current window (the hardware counts requests;
    /// byte granularity avoids rounding inside a window).
    pub access_counter_bytes: u64,
    pub window_start_cycle: u64,
    pub throttle: ThrottleConfig,
    pub stalled: bool,
    pub compute_done_macs: u64,
    pub mem_done_bytes: u64,
    request_granularity: u64,
}

impl TileState {
    pub fn new(tile_id: u32, request_granularity: u64) -> Self {
        TileState {
            tile_id,
            assigned_task: None,
            current_layer: 0,
            access_counter_bytes: 0,
            window_start_cycle: 0,
            throttle: ThrottleConfig::disabled(),
            stalled: false,
            compute_done_macs: 0,
            mem_done_bytes: 0,
            request_granularity,
        }
    }

    fn threshold_bytes(&self) -> u64 {
        self.throttle.threshold_load * self.request_granularity
    }

    /// Rewrites the throttle registers: the counter resets, a fresh
    /// window starts at `now`, and any stall is cleared.
    pub fn configure_throttle(&mut self, cfg: ThrottleConfig, now: u64) {
        self.throttle = cfg;
        self.access_counter_bytes = 0;
        self.window_start_cycle = now;
        self.stalled = false;
    }

    /// Rolls the window forward so `now` falls inside the current one.
    /// The counter resets at every boundary crossed.
    pub fn sync_window(&mut self, now: u64) {
        if !self.throttle.is_enabled() {
            return;
        }
        let w = self.throttle.window_cycles;
        if now >= self.window_start_cycle + w {
            let periods = (now - self.window_start_cycle) / w;
            self.window_start_cycle += periods * w;
            self.access_counter_bytes = 0;
            self.stalled = false;
        }
    }

    /// Bytes the tile may issue over `[now, now + dt)` without exceeding
    /// any window budget. Call `sync_window(now)` first.
    pub fn issue_allowance(&self, now: u64, dt: u64) -> u64 {
        if !self.throttle.is_enabled() {
            return u64::MAX;
        }
        debug_assert!(now >= self.window_start_cycle);
        let w = self.throttle.window_cycles;
        let head = self.threshold_bytes().saturating_sub(self.access_counter_bytes);
        let first_boundary = self.window_start_cycle + w;
        let end = now + dt;
        if first_boundary >= end {
            head
        } else {
            let crossings = (end - 1 - first_boundary) / w + 1;
            head.saturating_add(crossings.saturating_mul(self.threshold_bytes()))
        }
    }

    /// Attributes `bytes` issued over `[now, now + dt)` to windows,
    /// earliest first (the engine issues as fast as its budget allows).
    /// `bytes` must not exceed `issue_allowance(now, dt)`.
    pub fn record_issue(&mut self, now: u64, dt: u64, bytes: u64) {
        self.mem_done_bytes += bytes;
        if !self.throttle.is_enabled() {
            return;
        }
        debug_assert!(bytes <= self.issue_allowance(now, dt));
        let w = self.throttle.window_cycles;
        let mut remaining = bytes;
        loop {
            let head = self.threshold_bytes() - self.access_counter_bytes;
            if remaining <= head {
                self.access_counter_bytes += remaining;
                break;
            }
            remaining -= head;
            self.window_start_cycle += w;
            self.access_counter_bytes = 0;
        }
        self.stalled = self.access_counter_bytes >= self.threshold_bytes();
    }
}

/// Per-epoch shared-memory capacities and the proportional-share
/// arbiter. DRAM is the narrow resource; the L2 check runs independently
/// for traffic that never leaves the cache.
#[derive(Debug, Clone)]
pub struct MemorySystem {
    pub dram_capacity_per_epoch: u64,
    pub l2_capacity_per_epoch: u64,
}

impl MemorySystem {
    pub fn new(dram_bw: u64, l2_bw: u64, epoch_cycles: u64) -> Self {
        MemorySystem {
            dram_capacity_per_epoch: dram_bw * epoch_cycles,
            l2_capacity_per_epoch: l2_bw * epoch_cycles,
        }
    }
}

/// Serves per-tile byte demands against a shared capacity.
///
/// If the total demand fits, everyone is served in full. Otherwise
/// shares are proportional to demand, floored to whole bytes, with the
/// remainder distributed by largest fractional share (ties to the lower
/// tile id). The served total never exceeds `capacity`.
pub fn arbitrate_epoch(demands: &[u64], capacity: u64) -> Vec<u64> {
    let total: u128 = demands.iter().map(|&d| u128::from(d)).sum();
    if total <= u128::from(capacity) {
        return demands.to_vec();
    }
    let cap = u128::from(capacity);
    let mut served: Vec<u64> = Vec::with_capacity(demands.len());
    let mut fractions: Vec<(u128, usize)> = Vec::with_capacity(demands.len());
    let mut handed_out: u64 = 0;
    for (idx, &d) in demands.iter().enumerate() {
        let exact = u128::from(d) * cap;
        let floor = (exact / total) as u64;
        served.push(floor);
        handed_out += floor;
        fractions.push((exact % total, idx));
    }
    // Largest remainder first; ascending tile id on ties.
    fractions.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut leftover = capacity - handed_out;
    for (frac, idx) in fractions {
        if leftover == 0 {
            break;
        }
        if frac > 0 && served[idx] < demands[idx] {
            served[idx] += 1;
            leftover -= 1;
        }
    }
    let total_served: u64 = served.iter().sum();
    assert!(
        total_served <= capacity,
        "arbiter over-served: {total_served} > {capacity}"
    );
    served
}
