//! Event-level simulation of a schedule: hazard checking, bit-exact data
//! replay against the reference model, and a cycle estimate.

mod hazard;
mod replay;
mod timing;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use hazard::{check_hazards, Hazard, HazardKind};
pub use replay::{replay, tile_layer, Mismatch, ReplayOutcome};
pub use timing::{compute_cycles, dma_cycles, estimate_cycles, pipeline_slots, LayerTiming, SimConfig, Slot, TimingReport};

use crate::golden::{GoldenError, IntTensor};
use crate::graph::NetworkGraph;
use crate::schedule::{Event, Level, Schedule};
use crate::tiler::MemoryHierarchy;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("schedule has {} hazard(s); first: {}", .0.len(), .0.first().map_or("", |h| h.message.as_str()))]
    Hazards(Vec<Hazard>),
    #[error(transparent)]
    Golden(#[from] GoldenError),
    #[error("missing {0}")]
    Missing(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct SimReport {
    pub timing: TimingReport,
    pub hazards: Vec<Hazard>,
    /// Highest byte in use per level: L1 slots, live L2 stack bytes, L3 image.
    pub peak: BTreeMap<String, usize>,
    pub tiles_checked: usize,
    pub mismatches: Vec<Mismatch>,
    pub bit_exact: bool,
    #[serde(skip)]
    pub output: Option<IntTensor>,
}

/// Peak bytes of each level: the end of the highest L1 and L3 buffer, and
/// the largest sum of simultaneously allocated L2 buffers.
pub fn peak_usage(s: &Schedule) -> BTreeMap<String, usize> {
    let top = |level: Level| s.buffers.values().filter(|b| b.level == level).map(|b| b.offset + b.size).max().unwrap_or(0);
    let (mut live, mut l2) = (0usize, 0usize);
    for e in &s.events {
        match e {
            Event::StackAlloc { size, .. } => {
                live += size;
                l2 = l2.max(live);
            }
            Event::StackDealloc { size, .. } => live = live.saturating_sub(*size),
            _ => {}
        }
    }
    if l2 == 0 {
        l2 = top(Level::L2);
    }
    BTreeMap::from([("l1".to_string(), top(Level::L1)), ("l2".to_string(), l2), ("l3".to_string(), top(Level::L3))])
}

/// Checks, replays and times a network schedule.
///
/// A schedule with hazards is not replayed: its data results would depend
/// on transfer timing.
pub fn simulate(
    graph: &NetworkGraph,
    schedule: &Schedule,
    mem: &MemoryHierarchy,
    cfg: &SimConfig,
    input: &IntTensor,
) -> Result<SimReport, SimError> {
    cfg.validate().map_err(SimError::Config)?;
    let hazards = check_hazards(schedule, mem);
    if !hazards.is_empty() {
        return Err(SimError::Hazards(hazards));
    }
    let out = replay(graph, schedule, input)?;
    Ok(SimReport {
        timing: estimate_cycles(schedule, graph, mem, cfg),
        hazards,
        peak: peak_usage(schedule),
        tiles_checked: out.tiles_checked,
        bit_exact: out.mismatches.is_empty(),
        mismatches: out.mismatches,
        output: Some(out.output),
    })
}
