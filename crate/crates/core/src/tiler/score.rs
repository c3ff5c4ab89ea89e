use serde::{Deserialize, Serialize};

use super::memory::ObjectiveWeights;
use super::problem::{TileDims, TileProblem};
use crate::rational::Score;

/// Heuristic terms of the objective for one tile.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Heuristics {
    /// Output channels, rewarding im2col reuse.
    pub i2c: usize,
    /// Row balance across the 8 cores, or pixel balance over 16 when the
    /// (sub-)layer has fewer than 8 output rows.
    pub par: usize,
    /// Even tile width for the 4x2 matmul kernel.
    pub mm_w: usize,
    /// Output channels a multiple of 4 for the 4x2 matmul kernel.
    pub mm_ch: usize,
}

pub fn heuristics(layer_h_y: usize, c: usize, h: usize, w: usize) -> Heuristics {
    let par = if layer_h_y < 8 { (h * w - 1) % 16 } else { (h - 1) % 8 };
    Heuristics { i2c: c, par, mm_w: (w - 1) % 2, mm_ch: (c - 1) % 4 }
}

fn int(v: usize) -> Score {
    Score::from_integer(v as i128)
}

/// Objective value of `tile` within `problem`.
pub fn score_tile(tile: &TileDims, problem: &TileProblem, w: &ObjectiveWeights) -> Score {
    let h = heuristics(problem.h_y, tile.c_y_t, tile.h_y_t, tile.w_y_t);
    w.alpha * int(tile.occupancy())
        + w.beta_i2c * int(h.i2c)
        + w.beta_par * int(h.par)
        + w.beta_mm_w * int(h.mm_w)
        + w.beta_mm_ch * int(h.mm_ch)
}
