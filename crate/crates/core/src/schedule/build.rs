use super::types::*;
use super::ScheduleError;
use crate::alloc::{act_id, stripe_id, weight_id, AllocOp, AllocationPlan, LayerAlloc};
use crate::graph::{LayerKind, LayerSpec, Layout, NetworkGraph, Padding};
use crate::tiler::{input_window, split, LayerTiling, NetworkTiling, SubLayer, TileDims};

pub fn l3_weight_id(layer: &str) -> String {
    format!("l3w/{layer}")
}

pub fn l3_act_id(tensor: &str) -> String {
    format!("l3act/{tensor}")
}

fn slot_id(layer: &str, name: &str) -> String {
    format!("l1/{layer}/{name}")
}

/// A double buffer: the exec slot feeds the kernel, the load slot is the
/// DMA target.
#[derive(Clone, Debug)]
struct Pair {
    ids: [String; 2],
    exec: usize,
}

impl Pair {
    fn exec(&self) -> &str {
        &self.ids[self.exec]
    }

    fn load(&self) -> &str {
        &self.ids[1 - self.exec]
    }
}

/// Output tiles of a sub-layer in LTO, LTH, LTW order.
pub fn sublayer_tiles(layer: &LayerSpec, sub: &SubLayer, main: &TileDims) -> Vec<TileGeom> {
    let p = layer.padding;
    let mut out = Vec::new();
    for (oc, c) in split(sub.channels, main.c_y_t) {
        for (oh, h) in split(sub.rows, main.h_y_t) {
            for (ow, w) in split(layer.w_y(), main.w_y_t) {
                let (row, ch) = (sub.row0 + oh, sub.ch0 + oc);
                let rw = input_window(row, h, layer.stride, layer.kernel_h, p.top, layer.h_x());
                let cw = input_window(ow, w, layer.stride, layer.kernel_w, p.left, layer.w_x());
                let (in_ch, in_channels) = if layer.kind.reduces_channels() { (0, layer.c_x()) } else { (ch, c) };
                out.push(TileGeom {
                    out_row: row,
                    out_col: ow,
                    out_ch: ch,
                    rows: h,
                    cols: w,
                    channels: c,
                    in_row: rw.start,
                    in_col: cw.start,
                    in_ch,
                    in_rows: rw.len,
                    in_cols: cw.len,
                    in_channels,
                    padding: Padding { top: rw.pad_before, bottom: rw.pad_after, left: cw.pad_before, right: cw.pad_after },
                    x_layout: if layer.kind == LayerKind::Depthwise { Layout::Chw } else { Layout::Hwc },
                });
            }
        }
    }
    out
}

/// Input tile copy from an HWC tensor whose rows start at `row_base`.
pub fn x_transfer(src: &str, row_base: usize, w_x: usize, c_x: usize, g: &TileGeom, dst: &str) -> Transfer {
    let src_offset = ((g.in_row - row_base) * w_x + g.in_col) * c_x + g.in_ch;
    let row = w_x * c_x;
    let (len, dims) = match g.x_layout {
        // Gathers one channel plane at a time into CHW order.
        Layout::Chw => (
            1,
            vec![
                Stride { count: g.in_cols, src: c_x, dst: 1 },
                Stride { count: g.in_rows, src: row, dst: g.in_cols },
                Stride { count: g.in_channels, src: 1, dst: g.in_rows * g.in_cols },
            ],
        ),
        _ if g.in_channels == c_x => (g.in_cols * c_x, vec![Stride { count: g.in_rows, src: row, dst: g.in_cols * c_x }]),
        _ => (
            g.in_channels,
            vec![
                Stride { count: g.in_cols, src: c_x, dst: g.in_channels },
                Stride { count: g.in_rows, src: row, dst: g.in_cols * g.in_channels },
            ],
        ),
    };
    Transfer { src: src.to_string(), src_offset, dst: dst.to_string(), dst_offset: 0, len, dims }
}

/// Output tile store into an HWC buffer of `cb` channels starting at
/// `(row_base, ch_base)`.
pub fn y_transfer(src: &str, g: &TileGeom, dst: &str, w_y: usize, row_base: usize, ch_base: usize, cb: usize) -> Transfer {
    let dst_offset = ((g.out_row - row_base) * w_y + g.out_col) * cb + (g.out_ch - ch_base);
    let (len, dims) = if g.channels == cb {
        (g.cols * cb, vec![Stride { count: g.rows, src: g.cols * cb, dst: w_y * cb }])
    } else {
        (
            g.channels,
            vec![Stride { count: g.cols, src: g.channels, dst: cb }, Stride { count: g.rows, src: g.cols * g.channels, dst: w_y * cb }],
        )
    };
    Transfer { src: src.to_string(), src_offset: 0, dst: dst.to_string(), dst_offset, len, dims }
}

struct Builder<'a> {
    graph: &'a NetworkGraph,
    s: Schedule,
    next_id: u64,
    /// In-flight transfers: id, channel, source and destination buffer.
    pending: Vec<(u64, Channel, String, String)>,
}

impl Builder<'_> {
    fn push(&mut self, e: Event) {
        self.s.events.push(e);
    }

    fn dma(&mut self, channel: Channel, purpose: Purpose, layer: &str, t: Transfer) {
        let id = self.next_id;
        self.next_id += 1;
        self.pending.push((id, channel, t.src.clone(), t.dst.clone()));
        self.push(Event::DmaAsync { id, channel, purpose, layer: layer.to_string(), transfer: t });
    }

    /// Waits for the transfers on `buffer`, if any are outstanding.
    fn wait(&mut self, buffer: &str) -> bool {
        let touches = |p: &(u64, Channel, String, String)| p.2 == buffer || p.3 == buffer;
        let Some(&(_, channel, _, _)) = self.pending.iter().rev().find(|p| touches(p)) else {
            return false;
        };
        let id = self.pending.iter().filter(|p| touches(p) && p.1 == channel).map(|p| p.0).max().unwrap_or_default();
        self.pending.retain(|p| !(touches(p) && p.1 == channel));
        self.push(Event::DmaWait { id, channel, buffer: buffer.to_string() });
        true
    }

    fn swap(&mut self, p: &mut Pair) {
        self.push(Event::Swap { a: p.ids[0].clone(), b: p.ids[1].clone() });
        p.exec = 1 - p.exec;
    }

    fn stack_events(&mut self, plan: &AllocationPlan, step: i64) {
        for e in plan.events.iter().filter(|e| e.step == step) {
            let ev = match e.op {
                AllocOp::Alloc => Event::StackAlloc { id: e.id.clone(), offset: e.offset, size: e.size },
                AllocOp::Dealloc => Event::StackDealloc { id: e.id.clone(), offset: e.offset, size: e.size },
            };
            self.push(ev);
        }
    }

    fn add_buffer(&mut self, id: String, level: Level, offset: usize, size: usize, role: Role, pair: Option<String>) {
        self.s.buffers.insert(id.clone(), Buffer { id, level, offset, size, role, pair });
    }

    /// Adds the L1 slots of a layer, packed from address 0.
    fn l1_slots(&mut self, layer: &LayerSpec, main: &TileDims) -> LayerSlots {
        let inputs = layer.inputs.len().max(1);
        let x = main.l1_x / inputs;
        let mut at = 0;
        let id = &layer.id;
        let mut pair = |b: &mut Self, name: &str, size: usize, roles: (Role, Role)| -> Pair {
            let ids = [slot_id(id, &format!("{name}0")), slot_id(id, &format!("{name}1"))];
            b.add_buffer(ids[0].clone(), Level::L1, at, size, roles.0, Some(ids[1].clone()));
            b.add_buffer(ids[1].clone(), Level::L1, at + size, size, roles.1, Some(ids[0].clone()));
            at += 2 * size;
            Pair { ids, exec: 0 }
        };
        let xp = pair(self, "x", x, (Role::XExec, Role::XLoad));
        let x2 = (inputs > 1).then(|| pair(self, "x2_", x, (Role::X2Exec, Role::X2Load)));
        let w = layer.kind.has_weights().then(|| pair(self, "w", main.l1_w, (Role::WExec, Role::WLoad)));
        let y = pair(self, "y", main.l1_y, (Role::YExec, Role::YLoad));
        let scratch = (main.l1_backend > 0).then(|| {
            let sid = slot_id(id, "scratch");
            self.add_buffer(sid.clone(), Level::L1, at, main.l1_backend, Role::Scratch, None);
            sid
        });
        LayerSlots { x: xp, x2, w, y, scratch }
    }
}

struct LayerSlots {
    x: Pair,
    x2: Option<Pair>,
    w: Option<Pair>,
    y: Pair,
    scratch: Option<String>,
}

/// Where a sub-layer reads weights: buffer, byte offset of the slot and the
/// first output channel the slot holds.
struct WeightSource {
    buffer: String,
    offset: usize,
    ch_base: usize,
}

struct YTarget {
    buffer: String,
    row_base: usize,
    ch_base: usize,
    channels: usize,
}

fn prefetched(layer: &LayerSpec, t: &LayerTiling) -> bool {
    layer.kind.has_weights() && !t.solution.l3.tile_w_on
}

/// Events of one sub-layer's double-buffered tile loop.
#[allow(clippy::too_many_arguments)]
fn tile_loop(
    b: &mut Builder,
    layer: &LayerSpec,
    sub_idx: usize,
    tiles: &[TileGeom],
    slots: &mut LayerSlots,
    x_src: &[(String, usize)],
    w_src: Option<&WeightSource>,
    y_dst: &YTarget,
) {
    let id = &layer.id;
    let (w_x, c_x) = (layer.w_x(), layer.c_x());
    let per_ch = layer.weight_slice_bytes(1);
    let w_tile = |g: &TileGeom, dst: &str| {
        let ws = w_src.expect("weighted layer has a weight source");
        Transfer::linear(&ws.buffer, ws.offset + (g.out_ch - ws.ch_base) * per_ch, dst, 0, g.channels * per_ch)
    };
    let load_x = |b: &mut Builder, slots: &LayerSlots, g: &TileGeom| {
        let t = x_transfer(&x_src[0].0, x_src[0].1, w_x, c_x, g, slots.x.load());
        b.dma(Channel::L2l1, Purpose::XTile, id, t);
        if let Some(p) = &slots.x2 {
            let t = x_transfer(&x_src[1].0, x_src[1].1, w_x, c_x, g, p.load());
            b.dma(Channel::L2l1, Purpose::X2Tile, id, t);
        }
    };
    let block_starts: Vec<bool> = tiles.iter().enumerate().map(|(t, g)| t == 0 || tiles[t - 1].out_ch != g.out_ch).collect();
    let next_block = |t: usize| (t + 1..tiles.len()).find(|&k| block_starts[k]);

    load_x(b, slots, &tiles[0]);
    if let Some(w) = &slots.w {
        let t = w_tile(&tiles[0], w.load());
        b.dma(Channel::L2l1, Purpose::WTile, id, t);
    }
    let mut store_pending = false;
    for (t, g) in tiles.iter().enumerate() {
        let xl = slots.x.load().to_string();
        b.wait(&xl);
        let mut xp = slots.x.clone();
        b.swap(&mut xp);
        slots.x = xp;
        if let Some(mut p) = slots.x2.clone() {
            let l = p.load().to_string();
            b.wait(&l);
            b.swap(&mut p);
            slots.x2 = Some(p);
        }
        if let Some(next) = tiles.get(t + 1) {
            load_x(b, slots, next);
        }
        if block_starts[t] {
            if let Some(mut w) = slots.w.clone() {
                let l = w.load().to_string();
                b.wait(&l);
                b.swap(&mut w);
                if let Some(k) = next_block(t) {
                    let tr = w_tile(&tiles[k], w.load());
                    b.dma(Channel::L2l1, Purpose::WTile, id, tr);
                }
                slots.w = Some(w);
            }
        }
        let mut x = vec![slots.x.exec().to_string()];
        x.extend(slots.x2.as_ref().map(|p| p.exec().to_string()));
        b.push(Event::KernelCall(KernelCall {
            layer: id.clone(),
            sub: sub_idx,
            tile: t,
            x,
            w: slots.w.as_ref().map(|p| p.exec().to_string()),
            y: slots.y.exec().to_string(),
            scratch: slots.scratch.clone(),
            geom: g.clone(),
        }));
        if store_pending {
            let l = slots.y.load().to_string();
            b.wait(&l);
        }
        let mut y = slots.y.clone();
        b.swap(&mut y);
        slots.y = y;
        let tr = y_transfer(slots.y.load(), g, &y_dst.buffer, layer.w_y(), y_dst.row_base, y_dst.ch_base, y_dst.channels);
        b.dma(Channel::L2l1, Purpose::YTile, id, tr);
        store_pending = true;
    }
    let l = slots.y.load().to_string();
    b.wait(&l);
}

fn layer_body(b: &mut Builder, i: usize, t: &LayerTiling, la: &LayerAlloc) -> Result<(TripCounts, usize), ScheduleError> {
    let graph = b.graph;
    let layer = &graph.layers[i];
    let d = &t.solution.l3;
    let main = &t.solution.main_tile;
    let mut slots = b.l1_slots(layer, main);
    let wid = weight_id(&layer.id);
    let per_ch = layer.weight_slice_bytes(1);
    let mut covered = 0usize;
    let mut calls = 0usize;
    let mut trips = None;
    // Slot holding the current weight slice, and the slice it holds.
    let mut slice_slot: Option<(usize, usize)> = None;
    for (k, sub) in t.sublayers.iter().enumerate() {
        let x_src: Vec<(String, usize)> = if d.tile_x_on {
            let xs = stripe_id(&layer.id);
            let src = l3_act_id(&layer.inputs[0]);
            let row = layer.w_x() * layer.c_x();
            let tr = Transfer::linear(&src, sub.input_rows.start * row, &xs, 0, sub.input_rows.len * row);
            b.dma(Channel::L3l2, Purpose::StripeIn, &layer.id, tr);
            b.wait(&xs);
            vec![(xs, sub.input_rows.start)]
        } else {
            layer.inputs.iter().map(|x| (act_id(x), 0)).collect()
        };
        let w_src = if !layer.kind.has_weights() {
            None
        } else if d.tile_w_on {
            let slot_bytes = la.weight_slot;
            let load = |b: &mut Builder, slot: usize, s: &SubLayer| {
                let tr = Transfer::linear(&l3_weight_id(&layer.id), s.ch0 * per_ch, &wid, slot * slot_bytes, s.channels * per_ch);
                b.dma(Channel::L3l2, Purpose::SliceLoad, &layer.id, tr);
            };
            let slot = match slice_slot {
                None => {
                    load(b, 0, sub);
                    0
                }
                Some((slot, ch0)) if ch0 == sub.ch0 => slot,
                Some((slot, _)) => 1 - slot,
            };
            if slice_slot.map(|s| s.1) != Some(sub.ch0) {
                b.wait(&wid);
            }
            slice_slot = Some((slot, sub.ch0));
            if let Some(next) = t.sublayers.get(k + 1) {
                if next.ch0 != sub.ch0 {
                    load(b, 1 - slot, next);
                }
            }
            Some(WeightSource { buffer: wid.clone(), offset: slot * slot_bytes, ch_base: sub.ch0 })
        } else {
            Some(WeightSource { buffer: wid.clone(), offset: 0, ch_base: 0 })
        };
        let y_dst = if d.tile_y_on {
            YTarget { buffer: act_id(&layer.output), row_base: sub.row0, ch_base: sub.ch0, channels: d.slice_channels(layer.c_y()) }
        } else {
            YTarget { buffer: act_id(&layer.output), row_base: 0, ch_base: 0, channels: layer.c_y() }
        };
        let tiles = sublayer_tiles(layer, sub, main);
        covered += tiles.iter().map(|g| g.rows * g.cols * g.channels).sum::<usize>();
        calls += tiles.len();
        trips.get_or_insert(TripCounts {
            lto: sub.channels.div_ceil(main.c_y_t),
            lth: sub.rows.div_ceil(main.h_y_t),
            ltw: layer.w_y().div_ceil(main.w_y_t),
            lti: 1,
        });
        tile_loop(b, layer, k, &tiles, &mut slots, &x_src, w_src.as_ref(), &y_dst);
        if d.tile_y_on {
            let src = act_id(&layer.output);
            let cb = d.slice_channels(layer.c_y());
            let tr = Transfer {
                src: src.clone(),
                src_offset: 0,
                dst: l3_act_id(&layer.output),
                dst_offset: sub.row0 * layer.w_y() * layer.c_y() + sub.ch0,
                len: sub.channels,
                dims: vec![Stride { count: sub.rows * layer.w_y(), src: cb, dst: layer.c_y() }],
            };
            b.dma(Channel::L3l2, Purpose::StripeOut, &layer.id, tr);
            b.wait(&src);
        }
    }
    if covered != layer.h_y() * layer.w_y() * layer.c_y() {
        return Err(ScheduleError::GridMismatch { layer: layer.id.clone(), covered, expected: layer.h_y() * layer.w_y() * layer.c_y() });
    }
    Ok((trips.unwrap_or(TripCounts { lto: 0, lth: 0, ltw: 0, lti: 1 }), calls))
}

/// Concatenates the layer loops with stack events, L3 weight prefetches and
/// L3 stripe traffic.
pub fn build_network_schedule(graph: &NetworkGraph, tiling: &NetworkTiling, plan: &AllocationPlan) -> Result<Schedule, ScheduleError> {
    let n = graph.layers.len();
    if tiling.layers.len() != n || plan.layers.len() != n {
        return Err(ScheduleError::Mismatch("tilings, plan and graph disagree on layer count".to_string()));
    }
    let mut b = Builder { graph, s: Schedule::default(), next_id: 0, pending: Vec::new() };
    for (id, r) in &plan.buffers {
        let role = if id.starts_with("w/") {
            Role::L2Weights
        } else if id.starts_with("xs/") {
            Role::L2Stripe
        } else {
            Role::L2Activation
        };
        b.add_buffer(id.clone(), Level::L2, r.offset, r.size, role, None);
    }
    for (l, r) in &plan.l3.weights {
        b.add_buffer(l3_weight_id(l), Level::L3, r.offset, r.size, Role::L3Weights, None);
    }
    for (t, r) in &plan.l3.activations {
        b.add_buffer(l3_act_id(t), Level::L3, r.offset, r.size, Role::L3Activation, None);
    }
    let prefetch = |b: &mut Builder, j: usize, purpose: Purpose| -> Result<(), ScheduleError> {
        let l = &graph.layers[j];
        let wid = weight_id(&l.id);
        let slot = plan.layers[j].weights.map_or(0, |r| r.size);
        if l.weight_bytes() > slot {
            return Err(ScheduleError::PrefetchTooLarge { layer: l.id.clone(), bytes: l.weight_bytes(), slot });
        }
        b.dma(Channel::L3l2, purpose, &l.id, Transfer::linear(&l3_weight_id(&l.id), 0, &wid, 0, l.weight_bytes()));
        Ok(())
    };

    b.stack_events(plan, -1);
    if n > 0 && prefetched(&graph.layers[0], &tiling.layers[0]) {
        prefetch(&mut b, 0, Purpose::WeightLoad)?;
    }
    for i in 0..n {
        let start = b.s.events.len();
        b.stack_events(plan, i as i64);
        if i + 1 < n && prefetched(&graph.layers[i + 1], &tiling.layers[i + 1]) {
            prefetch(&mut b, i + 1, Purpose::Prefetch)?;
        }
        if prefetched(&graph.layers[i], &tiling.layers[i]) {
            b.wait(&weight_id(&graph.layers[i].id));
        }
        let (trips, calls) = layer_body(&mut b, i, &tiling.layers[i], &plan.layers[i])?;
        b.s.layers.push(LayerSpan {
            layer: graph.layers[i].id.clone(),
            start,
            end: b.s.events.len(),
            trips,
            sublayers: tiling.layers[i].sublayers.len(),
            kernel_calls: calls,
        });
    }
    b.stack_events(plan, n as i64);
    Ok(b.s)
}

/// Schedule of a single layer whose tensors sit in L2 at the plan's offsets.
pub fn build_layer_schedule(
    graph: &NetworkGraph,
    index: usize,
    tiling: &LayerTiling,
    plan: &AllocationPlan,
) -> Result<Schedule, ScheduleError> {
    let mut b = Builder { graph, s: Schedule::default(), next_id: 0, pending: Vec::new() };
    for (id, r) in &plan.buffers {
        b.add_buffer(id.clone(), Level::L2, r.offset, r.size, Role::L2Activation, None);
    }
    for (l, r) in &plan.l3.weights {
        b.add_buffer(l3_weight_id(l), Level::L3, r.offset, r.size, Role::L3Weights, None);
    }
    for (t, r) in &plan.l3.activations {
        b.add_buffer(l3_act_id(t), Level::L3, r.offset, r.size, Role::L3Activation, None);
    }
    let (trips, calls) = layer_body(&mut b, index, tiling, &plan.layers[index])?;
    b.s.layers.push(LayerSpan {
        layer: graph.layers[index].id.clone(),
        start: 0,
        end: b.s.events.len(),
        trips,
        sublayers: tiling.sublayers.len(),
        kernel_calls: calls,
    });
    Ok(b.s)
}
