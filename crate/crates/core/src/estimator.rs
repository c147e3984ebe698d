//! Analytical latency and memory-traffic prediction for a layer on a
//! given tile allocation, plus the overlap-factor tuning utility.
//!
//! Compute layers are modeled as two concurrent pipes — ideal compute
//! time at full PE utilization and ideal memory time across L2 and DRAM —
//! blended by the SoC's overlap factor. Memory layers are pure transfer
//! time. The same byte accounting drives the simulation engine, so the
//! two models agree on uncontended hardware by construction.

use crate::error::{Error, Result};
use crate::workload::{LayerDesc, LayerKind, NetworkDesc, SocConfig};

/// Prediction for one layer on a fixed tile allocation.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerEstimate {
    /// Ideal compute time at 100% PE utilization, in cycles.
    pub compute_ideal_cycles: f64,
    /// Ideal transfer time over L2 and DRAM combined, in cycles.
    pub memory_ideal_cycles: f64,
    /// Predicted latency, rounded up to whole cycles.
    pub prediction_cycles: u64,
    /// Total traffic through the shared L2.
    pub total_mem_bytes: u64,
    /// Subset of the traffic that reaches DRAM.
    pub from_dram_bytes: u64,
    /// Average DRAM demand implied by the prediction.
    pub bw_rate_bytes_per_cycle: f64,
}

/// `max(c, m) + min(c, m) * f`: the longer pipe plus the imperfectly
/// hidden part of the shorter one.
pub fn combine_overlap(compute_ideal: f64, memory_ideal: f64, overlap_factor: f64) -> f64 {
    compute_ideal.max(memory_ideal) + compute_ideal.min(memory_ideal) * overlap_factor
}

/// Byte totals for one execution of a layer.
///
/// Loads count the weight tensor, the input activation (re-fetched once
/// per loop-nest tile when a tile overflows the private scratchpad) and
/// the bias; stores count the output tensor. The DRAM subset is the
/// weight/output/bias traffic plus the input when it cannot stay
/// resident in L2, plus whole-tile refills when a single tile overflows
/// L2 itself.
pub fn layer_traffic(layer: &LayerDesc, soc: &SocConfig) -> (u64, u64) {
    match layer.kind {
        LayerKind::Compute => {
            let input_reloads = if layer.tile_bytes > soc.scratchpad_bytes_per_tile {
                layer.tiling_factor.max(1)
            } else {
                1
            };
            let loads =
                layer.weight_bytes + layer.input_bytes * input_reloads + layer.bias_bytes;
            let stores = layer.output_bytes;
            let total_mem = loads + stores;

            let mut from_dram = layer.weight_bytes + layer.output_bytes + layer.bias_bytes;
            if layer.input_bytes > soc.l2_bytes {
                // Input activation cannot be cached; reload from DRAM.
                from_dram += layer.input_bytes;
            }
            if layer.tile_bytes > soc.l2_bytes {
                // A single tile thrashes the cache; every tile refills.
                from_dram += layer.tiling_factor * layer.tile_bytes;
            }
            (total_mem, from_dram)
        }
        LayerKind::Mem => {
            let total_mem = layer.input_bytes + layer.input_b_bytes + layer.output_bytes;
            let from_dram = layer.input_b_bytes + layer.output_bytes;
            (total_mem, from_dram)
        }
    }
}

/// Predicts latency and traffic for `layer` running on
/// `num_tiles_allocated` tiles.
pub fn estimate_layer(
    layer: &LayerDesc,
    soc: &SocConfig,
    num_tiles_allocated: u32,
) -> Result<LayerEstimate> {
    if num_tiles_allocated == 0 || num_tiles_allocated > soc.num_tiles {
        return Err(Error::BadTileAllocation {
            got: num_tiles_allocated,
            max: soc.num_tiles,
        });
    }
    if layer.kind == LayerKind::Compute && layer.total_mac == 0 {
        return Err(Error::ComputeLayerWithoutMacs(layer.name.clone()));
    }

    let (total_mem, from_dram) = layer_traffic(layer, soc);
    let dram_bw = soc.dram_bw_bytes_per_cycle as f64;
    let l2_bw = soc.l2_bw_bytes_per_cycle as f64;

    let (compute_ideal, memory_ideal, prediction_raw) = match layer.kind {
        LayerKind::Compute => {
            let compute_ideal = layer.total_mac as f64 / soc.macs_per_cycle(num_tiles_allocated);
            let memory_ideal = from_dram as f64 / dram_bw + total_mem as f64 / l2_bw;
            let prediction = combine_overlap(compute_ideal, memory_ideal, soc.overlap_factor);
            (compute_ideal, memory_ideal, prediction)
        }
        LayerKind::Mem => {
            let memory_ideal = from_dram as f64 / dram_bw + total_mem as f64 / l2_bw;
            (0.0, memory_ideal, memory_ideal)
        }
    };

    let prediction_cycles = (prediction_raw.ceil() as u64).max(1);
    Ok(LayerEstimate {
        compute_ideal_cycles: compute_ideal,
        memory_ideal_cycles: memory_ideal,
        prediction_cycles,
        total_mem_bytes: total_mem,
        from_dram_bytes: from_dram,
        bw_rate_bytes_per_cycle: from_dram as f64 / prediction_cycles as f64,
    })
}

/// Per-layer estimates plus the summed end-to-end prediction.
pub fn estimate_network(
    network: &NetworkDesc,
    soc: &SocConfig,
    num_tiles: u32,
) -> Result<(Vec<LayerEstimate>, u64)> {
    let estimates = network
        .layers
        .iter()
        .map(|layer| estimate_layer(layer, soc, num_tiles))
        .collect::<Result<Vec<_>>>()?;
    let total = estimates.iter().map(|e| e.prediction_cycles).sum();
    Ok((estimates, total))
}

/// Lower and upper clamp for the tuned overlap factor.
pub const OVERLAP_CLAMP: (f64, f64) = (0.01, 0.99);

/// Fits the overlap factor from measured layer runtimes on the full SoC.
///
/// Inverting the blend gives one candidate per sample,
/// `f_i = (measured - max(c, m)) / min(c, m)`; the median over samples is
/// robust to a few noisy layers. Samples where the measurement does not
/// exceed the longer pipe carry no overlap information and contribute
/// the lower clamp.
pub fn tune_overlap_factor(samples: &[(LayerDesc, f64)], soc: &SocConfig) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::NoTuningSamples);
    }
    let mut candidates = Vec::with_capacity(samples.len());
    for (layer, measured) in samples {
        let est = estimate_layer(layer, soc, soc.num_tiles)?;
        let hi = est.compute_ideal_cycles.max(est.memory_ideal_cycles);
        let lo = est.compute_ideal_cycles.min(est.memory_ideal_cycles);
        let f = if lo > 0.0 && *measured > hi {
            (measured - hi) / lo
        } else {
            OVERLAP_CLAMP.0
        };
        candidates.push(f.clamp(OVERLAP_CLAMP.0, OVERLAP_CLAMP.1));
    }
    candidates.sort_by(|a, b| a.total_cmp(b));
    let mid = candidates.len() / 2;
    let median = if candidates.len() % 2 == 1 {
        candidates[mid]
    } else {
        (candidates[mid - 1] + candidates[mid]) / 2.0
    };
    Ok(median)
}
