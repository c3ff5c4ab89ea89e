use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::graph::{LayerKind, LayerSpec, NetworkGraph};
use crate::schedule::{Channel, Event, KernelCall, Schedule, TileGeom};
use crate::tiler::MemoryHierarchy;

/// Cluster and kernel cost parameters of the cycle model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub cores: u64,
    /// A tile of `m` MACs costs `ceil(m * mac_cycles_num / (cores * mac_cycles_den))`.
    pub mac_cycles_num: u64,
    pub mac_cycles_den: u64,
    /// Fixed cost of entering a kernel.
    pub call_overhead: u64,
    /// Buffer swap and loop bookkeeping per tile.
    pub slot_overhead: u64,
    /// Multiplier on compute of kernels larger than 1x1.
    pub im2col_penalty: f64,
    /// Multiplier on compute of tiles whose width is odd or whose channel
    /// count is not a multiple of 4.
    pub leftover_penalty: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            cores: 8,
            mac_cycles_num: 14,
            mac_cycles_den: 32,
            call_overhead: 200,
            slot_overhead: 40,
            im2col_penalty: 1.0,
            leftover_penalty: 1.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.cores == 0 || self.mac_cycles_den == 0 {
            return Err("cores and mac_cycles_den must be positive".to_string());
        }
        if !(self.im2col_penalty >= 1.0 && self.leftover_penalty >= 1.0) {
            return Err("penalties must be at least 1".to_string());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerTiming {
    pub layer: String,
    pub cycles: u64,
    pub compute: u64,
    pub overhead: u64,
    /// Cycles neither computing nor in kernel overhead: DMA the pipeline
    /// could not hide.
    pub dma_stall: u64,
    /// Part of `dma_stall` inside pipeline slots that have a predecessor
    /// and a successor, excluding the first load and the last store.
    pub steady_stall: u64,
    pub kernel_calls: usize,
    pub l2l1_bytes: u64,
    pub l3l2_bytes: u64,
}

/// One step of a double-buffered tile loop: the kernel on tile `t`, the
/// load of tile `t + 1` and the store of tile `t - 1`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub compute: u64,
    pub dma_in: u64,
    pub dma_out: u64,
    pub elapsed: u64,
}

/// Slots of one tile loop and the index of the layer span it ran in.
pub type SpanSlots = (Option<usize>, Vec<Slot>);

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimingReport {
    pub layers: Vec<LayerTiming>,
    pub total_cycles: u64,
    pub compute_cycles: u64,
    pub overhead_cycles: u64,
    pub dma_stall_cycles: u64,
    pub l2l1_bytes: u64,
    pub l3l2_bytes: u64,
}

pub fn dma_cycles(bytes: usize, bandwidth: f64, latency: u64) -> u64 {
    latency + (bytes as f64 / bandwidth).ceil() as u64
}

fn channel_cost(mem: &MemoryHierarchy, ch: Channel, bytes: usize) -> u64 {
    match ch {
        Channel::L2l1 => dma_cycles(bytes, mem.l2l1_bandwidth, mem.l2l1_latency),
        Channel::L3l2 => dma_cycles(bytes, mem.l3l2_bandwidth, mem.l3l2_latency),
    }
}

/// Cycles of one kernel call on a tile.
pub fn compute_cycles(layer: &LayerSpec, g: &TileGeom, cfg: &SimConfig) -> u64 {
    let out = (g.rows * g.cols * g.channels) as u64;
    let window = (layer.kernel_h * layer.kernel_w) as u64;
    match layer.kind {
        LayerKind::PoolAvg | LayerKind::PoolMax => (out * window).div_ceil(cfg.cores),
        LayerKind::Add => (2 * out).div_ceil(cfg.cores),
        _ => {
            let cin = if layer.kind.reduces_channels() { g.in_channels } else { 1 } as u64;
            let macs = out * window * cin;
            let base = (macs * cfg.mac_cycles_num).div_ceil(cfg.cores * cfg.mac_cycles_den);
            let mut f = 1.0;
            if window > 1 {
                f *= cfg.im2col_penalty;
            }
            if g.cols % 2 == 1 || !g.channels.is_multiple_of(4) {
                f *= cfg.leftover_penalty;
            }
            (base as f64 * f).ceil() as u64
        }
    }
}

/// L2-L1 work between two L3 synchronisation points: kernels and the tile
/// transfers that feed and drain them.
#[derive(Default)]
struct Segment {
    compute: Vec<u64>,
    /// Load cycles attributed to each kernel.
    load: Vec<u64>,
    store: Vec<u64>,
    /// Loads not yet claimed by a kernel, by destination buffer.
    pending_loads: Vec<(String, u64)>,
    /// Output slot of every kernel so far.
    y_slots: Vec<String>,
    unclaimed: u64,
}

impl Segment {
    fn kernel(&mut self, k: &KernelCall, comp: u64) {
        let mut load = 0;
        self.pending_loads.retain(|(dst, c)| {
            let hit = k.x.iter().any(|x| x == dst) || k.w.as_deref() == Some(dst.as_str());
            if hit {
                load += c;
            }
            !hit
        });
        self.compute.push(comp);
        self.load.push(load);
        self.store.push(0);
        self.y_slots.push(k.y.clone());
    }

    fn store(&mut self, src: &str, cycles: u64) {
        match self.y_slots.iter().rposition(|y| y == src) {
            Some(t) => self.store[t] += cycles,
            None => self.unclaimed += cycles,
        }
    }

    fn slots(&self, cfg: &SimConfig) -> Vec<Slot> {
        let n = self.compute.len();
        (0..n)
            .map(|t| {
                let dma_in = self.load.get(t + 1).copied().unwrap_or(0);
                let dma_out = if t > 0 { self.store[t - 1] } else { 0 };
                let busy = cfg.call_overhead + self.compute[t];
                Slot { compute: self.compute[t], dma_in, dma_out, elapsed: busy.max(dma_in).max(dma_out) + cfg.slot_overhead }
            })
            .collect()
    }

    /// Double-buffered pipeline time: loading tile `t + 1` and storing tile
    /// `t - 1` overlap the kernel on tile `t`.
    fn cycles(&self, cfg: &SimConfig) -> (u64, Vec<Slot>) {
        let leftover: u64 = self.pending_loads.iter().map(|(_, c)| c).sum::<u64>() + self.unclaimed;
        let slots = self.slots(cfg);
        if slots.is_empty() {
            return (leftover, slots);
        }
        let body: u64 = slots.iter().map(|s| s.elapsed).sum();
        (self.load[0] + leftover + body + self.store[slots.len() - 1], slots)
    }
}

struct Clock<'a> {
    mem: &'a MemoryHierarchy,
    cfg: &'a SimConfig,
    now: u64,
    lane_free: u64,
    done_at: HashMap<u64, u64>,
    /// L3 transfers in flight: id, completion, buffers touched.
    l3_pending: Vec<(u64, String, String)>,
    seg: Segment,
    /// Slots of every flushed segment, tagged with the span they ran in.
    slots: Vec<SpanSlots>,
    span: Option<usize>,
}

impl Clock<'_> {
    fn flush(&mut self) {
        let seg = std::mem::take(&mut self.seg);
        let (cycles, slots) = seg.cycles(self.cfg);
        self.now += cycles;
        if !slots.is_empty() {
            self.slots.push((self.span, slots));
        }
    }
}

fn steady(slots: &[Slot], cfg: &SimConfig) -> u64 {
    let n = slots.len();
    slots
        .iter()
        .enumerate()
        .filter(|(t, _)| *t > 0 && *t + 1 < n)
        .map(|(_, s)| s.elapsed - (cfg.call_overhead + s.compute + cfg.slot_overhead))
        .sum()
}

/// Cycle estimate of a schedule.
///
/// L3 transfers share one lane and run in the background until awaited.
/// Each stretch of L2-L1 work between L3 events is costed as a
/// double-buffered pipeline.
pub fn estimate_cycles(schedule: &Schedule, graph: &NetworkGraph, mem: &MemoryHierarchy, cfg: &SimConfig) -> TimingReport {
    run_clock(schedule, graph, mem, cfg).0
}

/// Pipeline slots of every tile loop in the schedule, with the index of the
/// layer span each loop belongs to.
pub fn pipeline_slots(schedule: &Schedule, graph: &NetworkGraph, mem: &MemoryHierarchy, cfg: &SimConfig) -> Vec<SpanSlots> {
    run_clock(schedule, graph, mem, cfg).1
}

fn run_clock(schedule: &Schedule, graph: &NetworkGraph, mem: &MemoryHierarchy, cfg: &SimConfig) -> (TimingReport, Vec<SpanSlots>) {
    let layers: BTreeMap<&str, &LayerSpec> = graph.layers.iter().map(|l| (l.id.as_str(), l)).collect();
    let mut c = Clock {
        mem,
        cfg,
        now: 0,
        lane_free: 0,
        done_at: HashMap::new(),
        l3_pending: Vec::new(),
        seg: Segment::default(),
        slots: Vec::new(),
        span: None,
    };
    let mut report = TimingReport::default();
    let mut span_of = vec![None; schedule.events.len()];
    for (k, s) in schedule.layers.iter().enumerate() {
        for slot in span_of.iter_mut().take(s.end).skip(s.start) {
            *slot = Some(k);
        }
        report.layers.push(LayerTiming { layer: s.layer.clone(), ..Default::default() });
    }
    let mut starts = vec![0u64; schedule.layers.len()];
    let mut current: Option<usize> = None;
    for (i, e) in schedule.events.iter().enumerate() {
        if span_of[i] != current {
            c.flush();
            if let Some(k) = current {
                report.layers[k].cycles = c.now - starts[k];
            }
            if let Some(k) = span_of[i] {
                starts[k] = c.now;
            }
            current = span_of[i];
            c.span = current;
        }
        let slot = current.map(|k| &mut report.layers[k]);
        match e {
            Event::KernelCall(k) => {
                let comp = layers.get(k.layer.as_str()).map_or(0, |l| compute_cycles(l, &k.geom, cfg));
                c.seg.kernel(k, comp);
                if let Some(t) = slot {
                    t.compute += comp;
                    t.overhead += cfg.call_overhead + cfg.slot_overhead;
                    t.kernel_calls += 1;
                }
            }
            Event::DmaAsync { channel: Channel::L2l1, transfer, .. } => {
                let cost = channel_cost(mem, Channel::L2l1, transfer.bytes());
                if schedule.buffers.get(&transfer.src).is_some_and(|b| b.level == crate::schedule::Level::L1) {
                    c.seg.store(&transfer.src, cost);
                } else {
                    c.seg.pending_loads.push((transfer.dst.clone(), cost));
                }
                if let Some(t) = slot {
                    t.l2l1_bytes += transfer.bytes() as u64;
                }
            }
            Event::DmaWait { channel: Channel::L2l1, .. } | Event::Swap { .. } => {}
            Event::DmaAsync { id, channel: Channel::L3l2, transfer, .. } => {
                c.flush();
                let start = c.now.max(c.lane_free);
                let end = start + channel_cost(c.mem, Channel::L3l2, transfer.bytes());
                c.lane_free = end;
                c.done_at.insert(*id, end);
                c.l3_pending.push((*id, transfer.src.clone(), transfer.dst.clone()));
                if let Some(t) = slot {
                    t.l3l2_bytes += transfer.bytes() as u64;
                }
            }
            Event::DmaWait { channel: Channel::L3l2, buffer, .. } => {
                c.flush();
                let mut latest = c.now;
                c.l3_pending.retain(|(id, s, d)| {
                    let hit = s == buffer || d == buffer;
                    if hit {
                        latest = latest.max(c.done_at.get(id).copied().unwrap_or(0));
                    }
                    !hit
                });
                c.now = latest;
            }
            Event::StackAlloc { .. } | Event::StackDealloc { .. } => c.flush(),
        }
    }
    c.flush();
    if let Some(k) = current {
        report.layers[k].cycles = c.now - starts[k];
    }
    for (span, slots) in &c.slots {
        if let Some(k) = span {
            report.layers[*k].steady_stall += steady(slots, cfg);
        }
    }
    for t in &mut report.layers {
        t.dma_stall = t.cycles.saturating_sub(t.compute + t.overhead);
        report.compute_cycles += t.compute;
        report.overhead_cycles += t.overhead;
        report.dma_stall_cycles += t.dma_stall;
        report.l2l1_bytes += t.l2l1_bytes;
        report.l3l2_bytes += t.l3l2_bytes;
    }
    report.total_cycles = c.now;
    (report, c.slots)
}
