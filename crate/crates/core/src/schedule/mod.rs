//! Event-list schedules for the double-buffered tile loops and the network
//! loop, and C emission of those schedules.

mod build;
mod emit;
mod types;

use thiserror::Error;

pub use build::{build_layer_schedule, build_network_schedule, l3_act_id, l3_weight_id, sublayer_tiles, x_transfer, y_transfer};
pub use emit::{c_ident, emit_c, LayerFootprint, Manifest, SourceBundle, HAL_HEADER};
pub use types::{Buffer, Channel, Event, KernelCall, LayerSpan, Level, Purpose, Role, Schedule, Stride, TileGeom, Transfer, TripCounts};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScheduleError {
    #[error("layer {layer}: tiles cover {covered} output elements, expected {expected}")]
    GridMismatch { layer: String, covered: usize, expected: usize },
    #[error("layer {layer}: prefetch of {bytes} bytes exceeds its {slot}-byte L2 slot")]
    PrefetchTooLarge { layer: String, bytes: usize, slot: usize },
    #[error("{0}")]
    Mismatch(String),
}
