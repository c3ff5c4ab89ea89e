//! L3-L2 residency decisions and L2-L1 tile sizing.

mod cascade;
mod memory;
mod network;
mod problem;
mod score;
mod solver;

use thiserror::Error;

pub use cascade::{l3_cascade, l3_cascade_with, x_stripe_rows, CascadeInput, L2Footprint, L3Decision, StageCheck};
pub use memory::{BackendFn, BackendModel, MemoryHierarchy, ObjectiveWeights};
pub use network::{
    live_residual_bytes, output_may_spill, representative_problem, sublayers, tile_network, tile_network_with_reserve, weight_group_bytes,
    LayerReport, LayerTiling, NetworkTiling, SubLayer,
};
pub use problem::{input_window, split, TileDims, TileProblem, Window};
pub use score::{heuristics, score_tile, Heuristics};
pub use solver::{
    border_tiles, enumerate_feasible, enumerate_problem, solve_l2l1, solve_problem, solve_with_problem, Grid, TilingSolution,
    ENUMERATION_CAP,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TilingError {
    #[error("layer {layer}: no feasible L1 tile; the smallest candidate needs {footprint} bytes against a budget below {budget}")]
    NoFeasibleTile { layer: String, footprint: usize, budget: usize },
    #[error("layer {layer}: {candidates} candidates exceed the enumeration cap of {cap}")]
    EnumerationCap { layer: String, candidates: u128, cap: u128 },
    #[error("layer {layer}: cannot fit L2 ({reason}); smallest footprint {smallest} bytes, budget {budget}")]
    L3Infeasible { layer: String, smallest: usize, budget: usize, reason: String },
    #[error("{0}")]
    InvalidConfig(String),
}

impl TilingError {
    pub fn layer(&self) -> Option<&str> {
        match self {
            TilingError::NoFeasibleTile { layer, .. }
            | TilingError::EnumerationCap { layer, .. }
            | TilingError::L3Infeasible { layer, .. } => Some(layer),
            TilingError::InvalidConfig(_) => None,
        }
    }
}
