use serde::{Deserialize, Serialize};

use super::cascade::{l3_cascade_with, CascadeInput, L3Decision};
use super::memory::{MemoryHierarchy, ObjectiveWeights};
use super::problem::{input_window, split, TileDims, TileProblem, Window};
use super::solver::{solve_with_problem, Grid, TilingSolution};
use super::TilingError;
use crate::graph::{LayerKind, LayerSpec, NetworkGraph};
use crate::rational::{score_serde, Score};

fn align4(v: usize) -> usize {
    v.div_ceil(4) * 4
}

/// One piece of a layer split by L3 tiling: a run of output rows and a run
/// of output channels, with the input rows it reads.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubLayer {
    pub row0: usize,
    pub rows: usize,
    pub ch0: usize,
    pub channels: usize,
    pub input_rows: Window,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerTiling {
    pub id: String,
    pub solution: TilingSolution,
    /// Stripe-major, slice-minor.
    pub sublayers: Vec<SubLayer>,
    /// L2 bytes of this layer's weight slots plus its input stripe buffer.
    pub w_group: usize,
    /// Residual tensors held in L2 across this layer without being read by it.
    pub live_residual: usize,
    /// Budget the cascade ran against.
    pub l2_budget: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkTiling {
    pub layers: Vec<LayerTiling>,
    /// L2 bytes withheld from every cascade decision.
    pub l2_reserve: usize,
}

/// Per-layer entry of the tiling report.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerReport {
    pub layer: String,
    pub stage: u8,
    pub main_tile: TileDims,
    pub border_tiles: Vec<TileDims>,
    pub grid: Grid,
    #[serde(with = "score_serde")]
    pub score: Score,
    pub l1_usage: usize,
    pub l3: L3Decision,
    pub sublayers: usize,
}

impl NetworkTiling {
    pub fn report(&self) -> Vec<LayerReport> {
        self.layers
            .iter()
            .map(|t| LayerReport {
                layer: t.id.clone(),
                stage: t.solution.l3.stage,
                main_tile: t.solution.main_tile.clone(),
                border_tiles: t.solution.border_tiles.clone(),
                grid: t.solution.tile_grid,
                score: t.solution.objective_score,
                l1_usage: t.solution.l1_usage,
                l3: t.solution.l3.clone(),
                sublayers: t.sublayers.len(),
            })
            .collect()
    }

    pub fn get(&self, id: &str) -> Option<&LayerTiling> {
        self.layers.iter().find(|l| l.id == id)
    }
}

/// L2 bytes a layer needs next to its input and output: every weight slot,
/// plus the input stripe buffer when the input streams from L3.
pub fn weight_group_bytes(layer: &LayerSpec, d: &L3Decision) -> usize {
    let weights = match d.c_y_slice {
        Some(c) if d.tile_w_on => 2 * align4(layer.weight_slice_bytes(c)),
        _ => align4(layer.weight_bytes()),
    };
    let stripe = match d.h_x_stripe {
        Some(r) if d.tile_x_on => align4(r * layer.w_x() * layer.c_x()),
        _ => 0,
    };
    weights + stripe
}

/// Bytes of tensors live across step `i` that layer `i` neither reads nor
/// writes.
pub fn live_residual_bytes(graph: &NetworkGraph, i: usize) -> usize {
    let layer = &graph.layers[i];
    let mut names: Vec<(&str, usize)> = vec![(&graph.input_name, graph.input.byte_size())];
    for l in &graph.layers[..i] {
        names.push((&l.output, l.output_bytes()));
    }
    names
        .into_iter()
        .filter(|(name, _)| !layer.inputs.iter().any(|x| x == name))
        .filter(|(name, _)| graph.last_consumer(name).is_some_and(|q| q > i))
        .map(|(_, b)| align4(b))
        .sum()
}

/// The output of layer `i` may go to L3 only when layer `i + 1` is its sole
/// reader, is not an add, and the tensor is not the network output.
pub fn output_may_spill(graph: &NetworkGraph, i: usize) -> bool {
    let l = &graph.layers[i];
    l.output != graph.output_name && graph.consumers_of(i) == [i + 1] && graph.layers[i + 1].kind != LayerKind::Add
}

/// Sub-layers of `layer` under decision `d`.
pub fn sublayers(layer: &LayerSpec, d: &L3Decision) -> Vec<SubLayer> {
    let rows = d.stripe_rows(layer.h_y());
    let chans = d.slice_channels(layer.c_y());
    let mut out = Vec::new();
    for (row0, n) in split(layer.h_y(), rows) {
        let input_rows = input_window(row0, n, layer.stride, layer.kernel_h, layer.padding.top, layer.h_x());
        for (ch0, c) in split(layer.c_y(), chans) {
            out.push(SubLayer { row0, rows: n, ch0, channels: c, input_rows });
        }
    }
    out
}

/// Tile problem covering every sub-layer: the tallest stripe, its widest
/// input window and the main channel slice.
pub fn representative_problem(layer: &LayerSpec, subs: &[SubLayer]) -> TileProblem {
    let mut p = TileProblem::from_layer(layer);
    p.h_y = subs.iter().map(|s| s.rows).max().unwrap_or(p.h_y);
    p.c_y = subs.iter().map(|s| s.channels).max().unwrap_or(p.c_y);
    p.h_x = subs.iter().map(|s| s.input_rows.len).max().unwrap_or(p.h_x);
    p
}

const FIXPOINT_LIMIT: usize = 64;
const CAP_LIMIT: usize = 256;

enum Settled {
    Done(Vec<L3Decision>),
    /// Layer `layer - 1` does not fit next to `layer`'s weight group; retry
    /// with that group capped at `cap`.
    Squeeze {
        layer: usize,
        cap: usize,
    },
    /// Layer `layer + 1` cannot stream its input from L3; retry with
    /// `layer`'s output kept in L2.
    Pin {
        layer: usize,
    },
    /// Layer `layer + 1` cannot hold its input in L2; retry with `layer`'s
    /// output sent to L3.
    Spill {
        layer: usize,
    },
}

/// Runs the cascade over the network until every layer's reservation covers
/// its successor's weight group.
///
/// That group depends on the successor's own decision, so reservations
/// start at zero and only grow. A layer that stops fitting because of its
/// reservation asks for its successor's weights to be capped instead. A layer
/// that cannot read its input from L3 asks its producer not to spill, and one
/// that cannot hold its input in L2 asks its producer to spill.
fn settle(graph: &NetworkGraph, budgets: &[usize], w_cap: &[usize], pinned: &[bool], spill: &[bool]) -> Result<Settled, TilingError> {
    let n = graph.layers.len();
    let mut w_next = vec![0usize; n];
    let mut prev: Vec<L3Decision> = Vec::new();
    for _ in 0..FIXPOINT_LIMIT {
        let mut decisions: Vec<L3Decision> = Vec::with_capacity(n);
        let mut prev_in_l3 = false;
        for (i, layer) in graph.layers.iter().enumerate() {
            let ctx = CascadeInput {
                input_in_l3: prev_in_l3,
                w_next: w_next[i],
                l2_budget: budgets[i].max(1),
                output_may_spill: i + 1 < n && !pinned[i] && output_may_spill(graph, i),
                w_cap: w_cap[i],
                force_spill: spill[i],
            };
            let d = match l3_cascade_with(layer, &ctx) {
                Ok(d) => d,
                Err(e) => {
                    if let TilingError::L3Infeasible { smallest, budget, .. } = e {
                        if prev_in_l3 {
                            return Ok(Settled::Pin { layer: i - 1 });
                        }
                        if i > 0 && !spill[i - 1] && !pinned[i - 1] && output_may_spill(graph, i - 1) {
                            return Ok(Settled::Spill { layer: i - 1 });
                        }
                        let shortfall = smallest.saturating_sub(budget) + 1;
                        let held = prev.get(i + 1).map_or(0, |d| weight_group_bytes(&graph.layers[i + 1], d));
                        if w_next[i] > 0 && held > shortfall {
                            return Ok(Settled::Squeeze { layer: i + 1, cap: held - shortfall });
                        }
                    }
                    return Err(e);
                }
            };
            prev_in_l3 = d.output_in_l3();
            decisions.push(d);
        }
        let mut stable = true;
        for i in 0..n.saturating_sub(1) {
            let need = weight_group_bytes(&graph.layers[i + 1], &decisions[i + 1]);
            if need > w_next[i] {
                w_next[i] = need;
                stable = false;
            }
        }
        if stable {
            return Ok(Settled::Done(decisions));
        }
        prev = decisions;
    }
    Err(TilingError::InvalidConfig("weight reservations did not settle".to_string()))
}

pub fn tile_network(graph: &NetworkGraph, mem: &MemoryHierarchy, weights: &ObjectiveWeights) -> Result<NetworkTiling, TilingError> {
    tile_network_with_reserve(graph, mem, weights, 0)
}

/// Cascade and L2-L1 tiling for every layer.
pub fn tile_network_with_reserve(
    graph: &NetworkGraph,
    mem: &MemoryHierarchy,
    weights: &ObjectiveWeights,
    l2_reserve: usize,
) -> Result<NetworkTiling, TilingError> {
    mem.validate().map_err(TilingError::InvalidConfig)?;
    weights.validate().map_err(TilingError::InvalidConfig)?;
    let n = graph.layers.len();
    let residual: Vec<usize> = (0..n).map(|i| live_residual_bytes(graph, i)).collect();
    let budgets: Vec<usize> = residual.iter().map(|r| mem.l2_bytes.saturating_sub(l2_reserve + r)).collect();
    let mut w_cap = vec![usize::MAX; n];
    let mut pinned = vec![false; n];
    let mut spill = vec![false; n];
    for _ in 0..CAP_LIMIT {
        match settle(graph, &budgets, &w_cap, &pinned, &spill)? {
            Settled::Done(decisions) => {
                let mut layers = Vec::with_capacity(n);
                for ((i, layer), d) in graph.layers.iter().enumerate().zip(decisions) {
                    let subs = sublayers(layer, &d);
                    let p = representative_problem(layer, &subs);
                    let w_group = weight_group_bytes(layer, &d);
                    let solution = solve_with_problem(&p, d, mem, weights)?;
                    layers.push(LayerTiling {
                        id: layer.id.clone(),
                        solution,
                        sublayers: subs,
                        w_group,
                        live_residual: residual[i],
                        l2_budget: budgets[i],
                    });
                }
                return Ok(NetworkTiling { layers, l2_reserve });
            }
            Settled::Squeeze { layer, cap } => w_cap[layer] = cap,
            Settled::Pin { layer } => pinned[layer] = true,
            Settled::Spill { layer } => spill[layer] = true,
        }
    }
    Err(TilingError::InvalidConfig("weight reservations did not settle".to_string()))
}
