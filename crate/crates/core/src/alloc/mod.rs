//! L2 buffer placement with a bidirectional stack and lifetime counters.

mod plan;
mod stack;
mod verify;

use thiserror::Error;

pub use plan::{
    act_id, d_stack, l3_layout, network_sequence, output_buffer_bytes, plan_allocation, plan_sequence, render_memory_map, stripe_id,
    weight_id, weight_slots, AllocEvent, AllocOp, AllocSequence, AllocStep, AllocationPlan, L3Layout, LayerAlloc, Region, SequencePlan,
    WeightPart,
};
pub use stack::{Corner, LiveBuffer, StackState};
pub use verify::{check_liveness, verify_plan, PlanDiagnostic};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AllocError {
    #[error("layer {layer}: allocating {buffer} overflows L2 by {shortfall} bytes")]
    Overflow { layer: String, buffer: String, shortfall: usize },
    #[error("layer {layer}: allocating {buffer} overflows L2 by {shortfall} bytes; the plan needs {minimum_capacity} bytes")]
    Exhausted { layer: String, buffer: String, shortfall: usize, minimum_capacity: usize },
    #[error("buffer {0} is already live")]
    Duplicate(String),
    #[error("{0}")]
    Mismatch(String),
}
