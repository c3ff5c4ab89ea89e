//! End-to-end compilation: tiling, L2 allocation, scheduling and a hazard
//! check of the result.

use serde::Serialize;
use thiserror::Error;

use crate::alloc::{plan_allocation, AllocError, AllocationPlan};
use crate::graph::NetworkGraph;
use crate::memsim::{check_hazards, Hazard};
use crate::schedule::{build_network_schedule, Schedule, ScheduleError};
use crate::tiler::{tile_network_with_reserve, MemoryHierarchy, NetworkTiling, ObjectiveWeights, TilingError};

#[derive(Debug, Error)]
pub enum CompileError {
    #[error(transparent)]
    Tiling(#[from] TilingError),
    #[error(transparent)]
    Alloc(#[from] AllocError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("generated schedule has {} hazard(s); first: {}", .0.len(), .0.first().map_or("", |h| h.message.as_str()))]
    Hazards(Vec<Hazard>),
}

#[derive(Clone, Debug, Serialize)]
pub struct Compiled {
    pub tiling: NetworkTiling,
    pub plan: AllocationPlan,
    pub schedule: Schedule,
    /// Tiling passes run before the plan fit L2.
    pub attempts: usize,
}

/// Attempts before an L2 overflow is reported.
pub const MAX_ATTEMPTS: usize = 8;

/// Tiles, allocates and schedules a network.
///
/// Per-layer cascade decisions only see the buffers around each layer, so
/// the stack plan can still overflow L2. When it does, the shortfall is
/// withheld from every layer's budget and tiling runs again.
pub fn compile(graph: &NetworkGraph, mem: &MemoryHierarchy, weights: &ObjectiveWeights) -> Result<Compiled, CompileError> {
    let mut reserve = 0usize;
    let mut attempts = 0;
    loop {
        attempts += 1;
        let tiling = tile_network_with_reserve(graph, mem, weights, reserve)?;
        match plan_allocation(graph, &tiling, mem.l2_bytes) {
            Ok(plan) => {
                let schedule = build_network_schedule(graph, &tiling, &plan)?;
                let hazards = check_hazards(&schedule, mem);
                if !hazards.is_empty() {
                    return Err(CompileError::Hazards(hazards));
                }
                return Ok(Compiled { tiling, plan, schedule, attempts });
            }
            Err(AllocError::Exhausted { minimum_capacity, .. }) if attempts < MAX_ATTEMPTS => {
                reserve += minimum_capacity.saturating_sub(mem.l2_bytes).max(4);
            }
            Err(e) => return Err(e.into()),
        }
    }
}
