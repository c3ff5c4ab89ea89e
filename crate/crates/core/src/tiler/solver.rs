use serde::{Deserialize, Serialize};

use super::cascade::L3Decision;
use super::memory::{MemoryHierarchy, ObjectiveWeights};
use super::problem::{TileDims, TileProblem};
use super::score::score_tile;
use super::TilingError;
use crate::graph::LayerSpec;
use crate::rational::{score_serde, Score};

/// Default cap on the candidate count of [`enumerate_feasible`].
pub const ENUMERATION_CAP: u128 = 10_000_000;

/// Tile counts along output channels, rows and columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Grid {
    pub fn of(p: &TileProblem, t: &TileDims) -> Grid {
        Grid { c: p.c_y.div_ceil(t.c_y_t), h: p.h_y.div_ceil(t.h_y_t), w: p.w_y.div_ceil(t.w_y_t) }
    }

    pub fn count(&self) -> usize {
        self.c * self.h * self.w
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TilingSolution {
    pub l3: L3Decision,
    /// Extents the tile search ran on (an L3 sub-layer when L3 tiling is on).
    pub problem: TileProblem,
    pub main_tile: TileDims,
    pub border_tiles: Vec<TileDims>,
    pub tile_grid: Grid,
    #[serde(with = "score_serde")]
    pub objective_score: Score,
    /// Bytes of L1 the main tile uses, backend scratch included.
    pub l1_usage: usize,
}

/// Largest feasible width for `(c, h)`, or 0 when even `w = 1` does not fit.
fn max_width(p: &TileProblem, mem: &MemoryHierarchy, c: usize, h: usize) -> usize {
    let fits = |w: usize| TileDims::new(p, mem, c, h, w).fits(mem.l1_bytes);
    if !fits(1) {
        return 0;
    }
    let (mut lo, mut hi) = (1, p.w_y);
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        if fits(mid) {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    lo
}

fn int(v: usize) -> Score {
    Score::from_integer(v as i128)
}

/// Branch and bound over `(h, C, w)` in decreasing order of each.
///
/// Feasibility is monotone in every extent, so for fixed `(h, C)` the feasible
/// widths form a prefix found by binary search. Within that prefix only the
/// last 16 widths can win: every width-dependent heuristic is periodic with a
/// period dividing 16 and occupancy grows with width. Ties keep the first
/// candidate visited, which is the one with larger `h`, then `C`, then `w`.
pub fn solve_problem(p: &TileProblem, mem: &MemoryHierarchy, weights: &ObjectiveWeights) -> Result<(TileDims, Score), TilingError> {
    let max_occupancy = int(mem.l1_bytes.saturating_sub(1) / 2);
    let fixed_bonus = weights.beta_mm_w * int(1) + weights.beta_mm_ch * int(3);
    let mut best: Option<(Score, TileDims)> = None;
    for h in (1..=p.h_y).rev() {
        let par_max = if p.h_y < 8 { 15 } else { (h - 1) % 8 };
        for c in (1..=p.c_y).rev() {
            let occ = int(TileDims::new(p, mem, c, h, p.w_y).occupancy()).min(max_occupancy);
            let bound = weights.alpha * occ + weights.beta_i2c * int(c) + weights.beta_par * int(par_max) + fixed_bonus;
            if best.as_ref().is_some_and(|(s, _)| bound < *s) {
                break;
            }
            let w_max = max_width(p, mem, c, h);
            if w_max == 0 {
                continue;
            }
            for w in (w_max.saturating_sub(15).max(1)..=w_max).rev() {
                let t = TileDims::new(p, mem, c, h, w);
                let s = score_tile(&t, p, weights);
                if best.as_ref().is_none_or(|(b, _)| s > *b) {
                    best = Some((s, t));
                }
            }
        }
    }
    match best {
        Some((s, t)) => Ok((t, s)),
        None => {
            let smallest = TileDims::new(p, mem, 1, 1, 1);
            Err(TilingError::NoFeasibleTile { layer: p.id.clone(), footprint: smallest.total(), budget: mem.l1_bytes / 2 })
        }
    }
}

/// Leftover tiles at the bottom, right and channel edges, in every
/// combination, each at the forced leftover extent.
pub fn border_tiles(p: &TileProblem, mem: &MemoryHierarchy, main: &TileDims) -> Vec<TileDims> {
    let rem = |total: usize, step: usize| (!total.is_multiple_of(step)).then_some(total % step);
    let hs = [Some(main.h_y_t), rem(p.h_y, main.h_y_t)];
    let ws = [Some(main.w_y_t), rem(p.w_y, main.w_y_t)];
    let cs = [Some(main.c_y_t), rem(p.c_y, main.c_y_t)];
    let mut out = Vec::new();
    for (hi, h) in hs.iter().enumerate() {
        for (wi, w) in ws.iter().enumerate() {
            for (ci, c) in cs.iter().enumerate() {
                if hi + wi + ci == 0 {
                    continue;
                }
                if let (Some(h), Some(w), Some(c)) = (h, w, c) {
                    out.push(TileDims::new(p, mem, *c, *h, *w));
                }
            }
        }
    }
    out
}

/// Solves the tile problem and assembles the full solution record.
pub fn solve_with_problem(
    p: &TileProblem,
    l3: L3Decision,
    mem: &MemoryHierarchy,
    weights: &ObjectiveWeights,
) -> Result<TilingSolution, TilingError> {
    let (main, score) = solve_problem(p, mem, weights)?;
    Ok(TilingSolution {
        border_tiles: border_tiles(p, mem, &main),
        tile_grid: Grid::of(p, &main),
        l1_usage: main.total(),
        objective_score: score,
        main_tile: main,
        problem: p.clone(),
        l3,
    })
}

/// L2-L1 tiling of a layer whose tensors are all resident in L2.
pub fn solve_l2l1(layer: &LayerSpec, mem: &MemoryHierarchy, weights: &ObjectiveWeights) -> Result<TilingSolution, TilingError> {
    solve_with_problem(&TileProblem::from_layer(layer), L3Decision::resident(layer), mem, weights)
}

/// Every feasible tile of `p`, in decreasing `(h, C, w)` order.
pub fn enumerate_problem<'a>(
    p: &'a TileProblem,
    mem: &'a MemoryHierarchy,
    cap: u128,
) -> Result<impl Iterator<Item = TileDims> + 'a, TilingError> {
    if p.search_space() > cap {
        return Err(TilingError::EnumerationCap { layer: p.id.clone(), candidates: p.search_space(), cap });
    }
    Ok((1..=p.h_y).rev().flat_map(move |h| {
        (1..=p.c_y).rev().flat_map(move |c| (1..=p.w_y).rev().map(move |w| TileDims::new(p, mem, c, h, w)).filter(|t| t.fits(mem.l1_bytes)))
    }))
}

/// Brute-force feasible set of a layer, capped at [`ENUMERATION_CAP`] candidates.
pub fn enumerate_feasible(layer: &LayerSpec, mem: &MemoryHierarchy) -> Result<Vec<TileDims>, TilingError> {
    let p = TileProblem::from_layer(layer);
    let all = enumerate_problem(&p, mem, ENUMERATION_CAP)?.collect();
    Ok(all)
}
