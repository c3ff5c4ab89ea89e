use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::stack::{align4, Corner, StackState};
use super::AllocError;
use crate::graph::NetworkGraph;
use crate::tiler::{LayerTiling, NetworkTiling};

/// One weight-group buffer of the layer after the current one.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightPart {
    pub id: String,
    pub bytes: usize,
}

/// What one layer step allocates: its output and the next layer's weights.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocStep {
    pub layer: String,
    pub output: String,
    pub y_bytes: usize,
    pub y_lifetime: u32,
    /// Allocated in order, so the last part sits nearest the stack pointer.
    pub next_weights: Vec<WeightPart>,
}

/// Graph-free description of a network's L2 buffer traffic.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocSequence {
    pub input: String,
    pub input_bytes: usize,
    /// Steps the input survives, counting the prologue.
    pub input_lifetime: u32,
    pub first_weights: Vec<WeightPart>,
    pub steps: Vec<AllocStep>,
    /// Buffer left live after the last step.
    pub keep: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocOp {
    Alloc,
    Dealloc,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocEvent {
    pub op: AllocOp,
    pub id: String,
    pub offset: usize,
    pub size: usize,
    pub layer: String,
    /// -1 for the prologue, `n` for the final cleanup.
    pub step: i64,
    pub corner: Corner,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub offset: usize,
    pub size: usize,
}

impl Region {
    pub fn end(&self) -> usize {
        self.offset + self.size
    }
}

/// L2 placement of one layer's buffers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerAlloc {
    pub layer: String,
    pub corner: Corner,
    /// Per input tensor; the stripe buffer when the input streams from L3.
    pub inputs: Vec<Region>,
    pub output: Region,
    pub weights: Option<Region>,
    /// Bytes of one weight slot; the region holds one or two.
    pub weight_slot: usize,
    pub x_stripe: Option<Region>,
}

/// Off-chip placement of weights and spilled activations.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct L3Layout {
    pub weights: BTreeMap<String, Region>,
    pub activations: BTreeMap<String, Region>,
    pub used: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocationPlan {
    pub capacity: usize,
    pub events: Vec<AllocEvent>,
    pub peak_usage: usize,
    pub layers: Vec<LayerAlloc>,
    pub buffers: BTreeMap<String, Region>,
    pub l3: L3Layout,
}

/// Result of running an [`AllocSequence`] on the stack.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SequencePlan {
    pub events: Vec<AllocEvent>,
    pub peak_usage: usize,
    pub buffers: BTreeMap<String, Region>,
    /// Corner each step allocated on, prologue first.
    pub corners: Vec<Corner>,
}

struct Runner {
    st: StackState,
    events: Vec<AllocEvent>,
    buffers: BTreeMap<String, Region>,
    peak: usize,
}

impl Runner {
    fn alloc(&mut self, id: &str, size: usize, corner: Corner, lifetime: Option<u32>, layer: &str, step: i64) -> Result<(), AllocError> {
        let offset = self.st.alloc(id, size, corner, lifetime, layer)?;
        let size = align4(size);
        self.peak = self.peak.max(self.st.used());
        self.buffers.insert(id.to_string(), Region { offset, size });
        self.events.push(AllocEvent { op: AllocOp::Alloc, id: id.to_string(), offset, size, layer: layer.to_string(), step, corner });
        Ok(())
    }

    fn free(&mut self, id: &str, layer: &str, step: i64) {
        if let Some(b) = self.st.free(id) {
            self.events.push(AllocEvent {
                op: AllocOp::Dealloc,
                id: id.to_string(),
                offset: b.offset,
                size: b.size,
                layer: layer.to_string(),
                step,
                corner: b.corner,
            });
        }
    }

    /// Allocates a weight group and reports whether it took any bytes.
    fn alloc_group(&mut self, parts: &[WeightPart], corner: Corner, layer: &str, step: i64) -> Result<bool, AllocError> {
        let mut any = false;
        for p in parts.iter().filter(|p| p.bytes > 0) {
            self.alloc(&p.id, p.bytes, corner, None, layer, step)?;
            any = true;
        }
        Ok(any)
    }
}

/// Runs the bidirectional stack over a sequence.
///
/// Each step picks the current corner, frees the weight group that served
/// two steps back and every activation whose counter reached zero, then
/// pushes the output followed by the next layer's weights. The output's
/// counter is set, all counters tick, and the corner flips whenever weights
/// were pushed.
pub fn plan_sequence(seq: &AllocSequence, capacity: usize) -> Result<SequencePlan, AllocError> {
    let mut r = Runner { st: StackState::new(capacity), events: Vec::new(), buffers: BTreeMap::new(), peak: 0 };
    let mut corners = Vec::with_capacity(seq.steps.len() + 1);
    // Weight group allocated at each step, prologue at index 0.
    let mut groups: Vec<Vec<String>> = Vec::with_capacity(seq.steps.len() + 1);
    let live_ids = |parts: &[WeightPart]| parts.iter().filter(|p| p.bytes > 0).map(|p| p.id.clone()).collect::<Vec<_>>();

    let corner = r.st.begin_end;
    corners.push(corner);
    r.alloc(&seq.input, seq.input_bytes, corner, Some(seq.input_lifetime), "prologue", -1)?;
    if r.alloc_group(&seq.first_weights, corner, "prologue", -1)? {
        r.st.begin_end = corner.other();
    }
    groups.push(live_ids(&seq.first_weights));
    r.st.tick();

    for (i, s) in seq.steps.iter().enumerate() {
        let step = i as i64;
        let corner = r.st.begin_end;
        corners.push(corner);
        if i >= 1 {
            // Group allocated at step i - 2, which is groups[i - 1].
            for id in groups[i - 1].clone() {
                r.free(&id, &s.layer, step);
            }
        }
        for id in r.st.expired() {
            r.free(&id, &s.layer, step);
        }
        r.alloc(&s.output, s.y_bytes, corner, None, &s.layer, step)?;
        let pushed = r.alloc_group(&s.next_weights, corner, &s.layer, step)?;
        groups.push(live_ids(&s.next_weights));
        r.st.set_lifetime(&s.output, s.y_lifetime);
        r.st.tick();
        if pushed {
            r.st.begin_end = corner.other();
        }
    }

    let end = seq.steps.len() as i64;
    let mut rest: Vec<(String, usize)> =
        r.st.live.iter().filter(|(id, _)| seq.keep.as_deref() != Some(id.as_str())).map(|(id, b)| (id.clone(), b.offset)).collect();
    rest.sort_by_key(|(_, o)| std::cmp::Reverse(*o));
    for (id, _) in rest {
        r.free(&id, "finish", end);
    }
    Ok(SequencePlan { events: r.events, peak_usage: r.peak, buffers: r.buffers, corners })
}

pub fn act_id(tensor: &str) -> String {
    format!("act/{tensor}")
}

pub fn weight_id(layer: &str) -> String {
    format!("w/{layer}")
}

pub fn stripe_id(layer: &str) -> String {
    format!("xs/{layer}")
}

/// L2 bytes of the output buffer: a stripe when the output goes to L3.
pub fn output_buffer_bytes(graph: &NetworkGraph, i: usize, t: &LayerTiling) -> usize {
    let l = &graph.layers[i];
    let d = &t.solution.l3;
    if d.tile_y_on {
        d.stripe_rows(l.h_y()) * l.w_y() * d.slice_channels(l.c_y())
    } else {
        l.output_bytes()
    }
}

/// Bytes of one L2 weight slot and the number of slots.
pub fn weight_slots(graph: &NetworkGraph, i: usize, t: &LayerTiling) -> (usize, usize) {
    let l = &graph.layers[i];
    let d = &t.solution.l3;
    match d.c_y_slice {
        Some(c) if d.tile_w_on => (align4(l.weight_slice_bytes(c)), 2),
        _ => (align4(l.weight_bytes()), 1),
    }
}

fn stripe_bytes(graph: &NetworkGraph, i: usize, t: &LayerTiling) -> usize {
    let l = &graph.layers[i];
    let d = &t.solution.l3;
    match d.h_x_stripe {
        Some(r) if d.tile_x_on => r * l.w_x() * l.c_x(),
        _ => 0,
    }
}

fn group(graph: &NetworkGraph, i: usize, t: &LayerTiling) -> Vec<WeightPart> {
    let id = &graph.layers[i].id;
    let (slot, n) = weight_slots(graph, i, t);
    vec![WeightPart { id: stripe_id(id), bytes: stripe_bytes(graph, i, t) }, WeightPart { id: weight_id(id), bytes: slot * n }]
}

/// Stack sequence of a tiled network.
pub fn network_sequence(graph: &NetworkGraph, tiling: &NetworkTiling) -> AllocSequence {
    let n = graph.layers.len();
    let steps = (0..n)
        .map(|i| {
            let l = &graph.layers[i];
            let t = &tiling.layers[i];
            AllocStep {
                layer: l.id.clone(),
                output: act_id(&l.output),
                y_bytes: output_buffer_bytes(graph, i, t),
                y_lifetime: if t.solution.l3.tile_y_on { 1 } else { l.activation_lifetime.max(1) },
                next_weights: if i + 1 < n { group(graph, i + 1, &tiling.layers[i + 1]) } else { Vec::new() },
            }
        })
        .collect();
    AllocSequence {
        input: act_id(&graph.input_name),
        input_bytes: graph.input.byte_size(),
        input_lifetime: graph.last_consumer(&graph.input_name).map_or(1, |q| q as u32 + 2),
        first_weights: if n > 0 { group(graph, 0, &tiling.layers[0]) } else { Vec::new() },
        steps,
        keep: Some(act_id(&graph.output_name)),
    }
}

/// Weights of every layer followed by every spilled activation.
pub fn l3_layout(graph: &NetworkGraph, tiling: &NetworkTiling) -> L3Layout {
    let mut out = L3Layout::default();
    for l in &graph.layers {
        if l.weight_bytes() > 0 {
            let size = align4(l.weight_bytes());
            out.weights.insert(l.id.clone(), Region { offset: out.used, size });
            out.used += size;
        }
    }
    for (l, t) in graph.layers.iter().zip(&tiling.layers) {
        if t.solution.l3.tile_y_on {
            let size = align4(l.output_bytes());
            out.activations.insert(l.output.clone(), Region { offset: out.used, size });
            out.used += size;
        }
    }
    out
}

/// Full L2 plan of a tiled network within `capacity` bytes.
///
/// On overflow the error carries the smallest capacity that succeeds. Stack
/// behavior does not depend on the capacity, so that is exactly the peak of
/// an unbounded run.
pub fn plan_allocation(graph: &NetworkGraph, tiling: &NetworkTiling, capacity: usize) -> Result<AllocationPlan, AllocError> {
    if tiling.layers.len() != graph.layers.len() {
        return Err(AllocError::Mismatch(format!("{} tilings for {} layers", tiling.layers.len(), graph.layers.len())));
    }
    let seq = network_sequence(graph, tiling);
    let sp = match plan_sequence(&seq, capacity) {
        Ok(sp) => sp,
        Err(AllocError::Overflow { layer, buffer, shortfall }) => {
            let minimum_capacity = plan_sequence(&seq, usize::MAX / 4)?.peak_usage;
            return Err(AllocError::Exhausted { layer, buffer, shortfall, minimum_capacity });
        }
        Err(e) => return Err(e),
    };
    let region = |id: &str| sp.buffers.get(id).copied();
    let mut layers = Vec::with_capacity(graph.layers.len());
    for (i, l) in graph.layers.iter().enumerate() {
        let t = &tiling.layers[i];
        let x_stripe = region(&stripe_id(&l.id));
        let inputs = if t.solution.l3.tile_x_on {
            x_stripe.into_iter().collect()
        } else {
            l.inputs.iter().filter_map(|x| region(&act_id(x))).collect()
        };
        let (slot, _) = weight_slots(graph, i, t);
        layers.push(LayerAlloc {
            layer: l.id.clone(),
            corner: sp.corners[i + 1],
            inputs,
            output: region(&act_id(&l.output)).ok_or_else(|| AllocError::Mismatch(format!("no buffer for {}", l.output)))?,
            weights: region(&weight_id(&l.id)),
            weight_slot: slot,
            x_stripe,
        });
    }
    Ok(AllocationPlan { capacity, events: sp.events, peak_usage: sp.peak_usage, layers, buffers: sp.buffers, l3: l3_layout(graph, tiling) })
}

/// `max_i(x_i + w_i + w_(i+1) + y_i)` over a chain, each term 4-aligned.
pub fn d_stack(sizes: &[(usize, usize, usize)]) -> usize {
    (0..sizes.len())
        .map(|i| {
            let (x, w, y) = sizes[i];
            let w_next = sizes.get(i + 1).map_or(0, |s| s.1);
            align4(x) + align4(w) + align4(w_next) + align4(y)
        })
        .max()
        .unwrap_or(0)
}

/// Text memory map: the live buffers after each step, by offset.
pub fn render_memory_map(plan: &AllocationPlan) -> String {
    let mut live: BTreeMap<usize, (String, usize)> = BTreeMap::new();
    let mut out = String::new();
    let mut i = 0;
    while i < plan.events.len() {
        let step = plan.events[i].step;
        let layer = plan.events[i].layer.clone();
        while i < plan.events.len() && plan.events[i].step == step {
            let e = &plan.events[i];
            match e.op {
                AllocOp::Alloc => {
                    live.insert(e.offset, (e.id.clone(), e.size));
                }
                AllocOp::Dealloc => {
                    live.remove(&e.offset);
                }
            }
            i += 1;
        }
        let _ = writeln!(out, "step {step} ({layer})");
        for (o, (id, s)) in &live {
            let _ = writeln!(out, "  [{o:>8}, {:>8})  {id}", o + s);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn part(id: &str, bytes: usize) -> Vec<WeightPart> {
        vec![WeightPart { id: id.into(), bytes }]
    }

    fn step(layer: &str, y: usize, life: u32, w_next: Option<(&str, usize)>) -> AllocStep {
        AllocStep {
            layer: layer.into(),
            output: format!("y_{layer}"),
            y_bytes: y,
            y_lifetime: life,
            next_weights: w_next.map_or(Vec::new(), |(id, b)| part(id, b)),
        }
    }

    fn chain(x: usize, w1: usize, y1: usize, w2: usize, y2: usize) -> AllocSequence {
        AllocSequence {
            input: "x".into(),
            input_bytes: x,
            input_lifetime: 2,
            first_weights: part("w1", w1),
            steps: vec![step("l1", y1, 1, Some(("w2", w2))), step("l2", y2, 1, None)],
            keep: Some("y_l2".into()),
        }
    }

    #[test]
    fn two_layer_chain_leaves_only_output() {
        let p = plan_sequence(&chain(10, 4, 8, 6, 2), 40).unwrap();
        let mut live = std::collections::BTreeSet::new();
        for e in &p.events {
            match e.op {
                AllocOp::Alloc => assert!(live.insert(e.id.clone())),
                AllocOp::Dealloc => assert!(live.remove(&e.id)),
            }
        }
        assert_eq!(live.into_iter().collect::<Vec<_>>(), vec!["y_l2".to_string()]);
        assert_eq!(p.peak_usage, 12 + 4 + 8 + 8);
    }

    #[test]
    fn single_layer_boundary() {
        let seq = AllocSequence {
            input: "x".into(),
            input_bytes: 12,
            input_lifetime: 2,
            first_weights: part("w", 8),
            steps: vec![step("l", 8, 1, None)],
            keep: Some("y_l".into()),
        };
        assert!(plan_sequence(&seq, 28).is_ok());
        assert!(matches!(plan_sequence(&seq, 27), Err(AllocError::Overflow { shortfall: 1, .. })));
    }

    #[test]
    fn residual_survives_until_add() {
        // l1 -> l2 -> l3(add of y_l1, y_l2)
        let seq = AllocSequence {
            input: "x".into(),
            input_bytes: 16,
            input_lifetime: 2,
            first_weights: part("w1", 4),
            steps: vec![step("l1", 16, 3, Some(("w2", 4))), step("l2", 16, 2, None), step("l3", 16, 1, None)],
            keep: Some("y_l3".into()),
        };
        let p = plan_sequence(&seq, 1024).unwrap();
        let freed = p.events.iter().find(|e| e.op == AllocOp::Dealloc && e.id == "y_l1").unwrap();
        assert_eq!(freed.layer, "finish");
    }

    #[test]
    fn d_stack_formula() {
        assert_eq!(d_stack(&[(10, 4, 8), (8, 6, 2)]), 12 + 4 + 8 + 8);
        assert_eq!(d_stack(&[]), 0);
    }
}
