use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::schedule::{Buffer, Channel, Event, Level, Schedule, Transfer};
use crate::tiler::MemoryHierarchy;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HazardKind {
    ReadBeforeLoad,
    WriteInFlight,
    SwapBusy,
    Capacity,
    WaitWithoutIssue,
    NeverAwaited,
    RoleMismatch,
    OutOfBounds,
    Unallocated,
    StackOverlap,
    UnknownBuffer,
    NotLoaded,
    WrongChannel,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hazard {
    /// Event index, or the event count for end-of-schedule findings.
    pub event: usize,
    pub kind: HazardKind,
    pub message: String,
}

#[derive(Clone, Copy, Debug)]
struct Span {
    level: Level,
    lo: usize,
    hi: usize,
}

impl Span {
    fn overlaps(&self, o: &Span) -> bool {
        self.level == o.level && self.lo < o.hi && o.lo < self.hi
    }
}

struct InFlight {
    id: u64,
    channel: Channel,
    src_buf: String,
    dst_buf: String,
    src: Span,
    dst: Span,
}

fn capacity(mem: &MemoryHierarchy, level: Level) -> usize {
    match level {
        Level::L1 => mem.l1_bytes,
        Level::L2 => mem.l2_bytes,
        Level::L3 => mem.l3_bytes,
    }
}

fn whole(b: &Buffer) -> Span {
    Span { level: b.level, lo: b.offset, hi: b.offset + b.size }
}

struct Checker<'a> {
    s: &'a Schedule,
    out: Vec<Hazard>,
    at: usize,
    inflight: Vec<InFlight>,
    exec: BTreeMap<&'a str, bool>,
    loaded: BTreeSet<String>,
    l2_live: BTreeMap<String, (usize, usize)>,
}

impl<'a> Checker<'a> {
    fn report(&mut self, kind: HazardKind, message: String) {
        self.out.push(Hazard { event: self.at, kind, message });
    }

    fn buffer(&mut self, id: &str) -> Option<&'a Buffer> {
        let b = self.s.buffers.get(id);
        if b.is_none() {
            self.report(HazardKind::UnknownBuffer, format!("unknown buffer {id}"));
        }
        b
    }

    fn require_live(&mut self, b: &Buffer) {
        if b.level == Level::L2 && !self.l2_live.contains_key(&b.id) {
            self.report(HazardKind::Unallocated, format!("{} is used while not allocated", b.id));
        }
    }

    fn in_flight_dst(&self, span: &Span) -> Option<u64> {
        self.inflight.iter().find(|f| f.dst.overlaps(span)).map(|f| f.id)
    }

    fn in_flight_any(&self, span: &Span) -> Option<u64> {
        self.inflight.iter().find(|f| f.dst.overlaps(span) || f.src.overlaps(span)).map(|f| f.id)
    }

    fn dma(&mut self, id: u64, channel: Channel, t: &Transfer) {
        let (Some(src), Some(dst)) = (self.buffer(&t.src), self.buffer(&t.dst)) else {
            return;
        };
        if self.inflight.iter().any(|f| f.id == id) {
            self.report(HazardKind::WriteInFlight, format!("transfer {id} issued twice"));
        }
        let ok_channel = match channel {
            Channel::L3l2 => matches!((src.level, dst.level), (Level::L3, Level::L2) | (Level::L2, Level::L3)),
            Channel::L2l1 => matches!((src.level, dst.level), (Level::L2, Level::L1) | (Level::L1, Level::L2)),
        };
        if !ok_channel {
            self.report(HazardKind::WrongChannel, format!("transfer {id} from {} to {} on {channel:?}", t.src, t.dst));
        }
        for (b, off, span) in [(src, t.src_offset, t.src_span()), (dst, t.dst_offset, t.dst_span())] {
            if off + span > b.size {
                self.report(
                    HazardKind::OutOfBounds,
                    format!("transfer {id} touches [{off}, {}) of {} ({} bytes)", off + span, b.id, b.size),
                );
            }
            self.require_live(b);
        }
        if dst.level == Level::L1 && self.exec.get(dst.id.as_str()) != Some(&false) {
            self.report(HazardKind::RoleMismatch, format!("transfer {id} loads into {} which is not a load slot", dst.id));
        }
        if src.level == Level::L1 {
            if self.exec.get(src.id.as_str()) != Some(&false) {
                self.report(HazardKind::RoleMismatch, format!("transfer {id} stores from {} which is not a load slot", src.id));
            }
            if !self.loaded.contains(&src.id) {
                self.report(HazardKind::NotLoaded, format!("transfer {id} stores {} before it was written", src.id));
            }
        }
        let s_span = Span { level: src.level, lo: src.offset + t.src_offset, hi: src.offset + t.src_offset + t.src_span() };
        let d_span = Span { level: dst.level, lo: dst.offset + t.dst_offset, hi: dst.offset + t.dst_offset + t.dst_span() };
        if let Some(other) = self.in_flight_dst(&s_span) {
            self.report(HazardKind::ReadBeforeLoad, format!("transfer {id} reads {} while transfer {other} is still writing it", t.src));
        }
        if let Some(other) = self.in_flight_any(&d_span) {
            self.report(HazardKind::WriteInFlight, format!("transfer {id} writes {} while transfer {other} is in flight there", t.dst));
        }
        self.inflight.push(InFlight { id, channel, src_buf: t.src.clone(), dst_buf: t.dst.clone(), src: s_span, dst: d_span });
    }

    fn wait(&mut self, id: u64, channel: Channel, buffer: &str) {
        let touching: Vec<u64> =
            self.inflight.iter().filter(|f| f.channel == channel && (f.src_buf == buffer || f.dst_buf == buffer)).map(|f| f.id).collect();
        if touching.is_empty() {
            self.report(HazardKind::WaitWithoutIssue, format!("wait on {buffer} with no transfer in flight on {channel:?}"));
            return;
        }
        if !touching.contains(&id) {
            self.report(HazardKind::WaitWithoutIssue, format!("wait names transfer {id}, which is not in flight on {buffer}"));
        }
        let mut done = Vec::new();
        self.inflight.retain(|f| {
            let hit = touching.contains(&f.id);
            if hit {
                done.push(f.dst_buf.clone());
            }
            !hit
        });
        self.loaded.extend(done);
    }

    fn kernel(&mut self, k: &crate::schedule::KernelCall) {
        let reads: Vec<&String> = k.x.iter().chain(k.w.iter()).collect();
        for id in reads {
            let Some(b) = self.buffer(id) else { continue };
            if self.exec.get(id.as_str()) != Some(&true) {
                self.report(HazardKind::RoleMismatch, format!("kernel tile {} reads {id} which is not an exec slot", k.tile));
            }
            if let Some(t) = self.in_flight_dst(&whole(b)) {
                self.report(
                    HazardKind::ReadBeforeLoad,
                    format!("kernel tile {} reads {id} while transfer {t} is still writing it", k.tile),
                );
            } else if !self.loaded.contains(id) {
                self.report(HazardKind::NotLoaded, format!("kernel tile {} reads {id} before any load", k.tile));
            }
        }
        let writes: Vec<&String> = std::iter::once(&k.y).chain(k.scratch.iter()).collect();
        for id in writes {
            let Some(b) = self.buffer(id) else { continue };
            if id == &k.y && self.exec.get(id.as_str()) != Some(&true) {
                self.report(HazardKind::RoleMismatch, format!("kernel tile {} writes {id} which is not an exec slot", k.tile));
            }
            if let Some(t) = self.in_flight_any(&whole(b)) {
                self.report(HazardKind::WriteInFlight, format!("kernel tile {} writes {id} while transfer {t} is in flight there", k.tile));
            }
        }
        self.loaded.insert(k.y.clone());
    }

    fn swap(&mut self, a: &str, b: &str) {
        let (Some(ba), Some(bb)) = (self.buffer(a), self.buffer(b)) else {
            return;
        };
        if ba.pair.as_deref() != Some(b) || bb.pair.as_deref() != Some(a) {
            self.report(HazardKind::RoleMismatch, format!("{a} and {b} are not a double buffer"));
            return;
        }
        for buf in [ba, bb] {
            if let Some(t) = self.in_flight_any(&whole(buf)) {
                self.report(HazardKind::SwapBusy, format!("swap of {} while transfer {t} is in flight", buf.id));
            }
        }
        for id in [ba.id.as_str(), bb.id.as_str()] {
            if let Some(e) = self.exec.get_mut(id) {
                *e = !*e;
            }
        }
    }

    fn stack_alloc(&mut self, id: &str, offset: usize, size: usize, cap: usize) {
        if offset + size > cap {
            self.report(HazardKind::Capacity, format!("{id} [{offset}, {}) exceeds L2 capacity {cap}", offset + size));
        }
        if let Some((other, _)) = self.l2_live.iter().find(|(_, (o, s))| offset < o + s && *o < offset + size) {
            let other = other.clone();
            self.report(HazardKind::StackOverlap, format!("{id} overlaps live {other}"));
        }
        if self.l2_live.insert(id.to_string(), (offset, size)).is_some() {
            self.report(HazardKind::StackOverlap, format!("{id} allocated twice"));
        }
    }

    fn stack_free(&mut self, id: &str) {
        if self.l2_live.remove(id).is_none() {
            self.report(HazardKind::Unallocated, format!("free of {id} which is not allocated"));
            return;
        }
        if let Some(b) = self.s.buffers.get(id) {
            if let Some(t) = self.in_flight_any(&whole(b)) {
                self.report(HazardKind::WriteInFlight, format!("free of {id} while transfer {t} is in flight"));
            }
        }
    }
}

/// Replays the schedule's ordering rules without data and reports every
/// hazard: reads of buffers still being loaded, writes over in-flight
/// transfers, swaps of busy buffers, role violations, waits with nothing to
/// wait for, transfers never awaited, stack misuse and capacity overflow.
pub fn check_hazards(s: &Schedule, mem: &MemoryHierarchy) -> Vec<Hazard> {
    let mut c = Checker {
        s,
        out: Vec::new(),
        at: 0,
        inflight: Vec::new(),
        exec: s.buffers.values().filter(|b| b.role.is_slot()).map(|b| (b.id.as_str(), b.role.is_exec())).collect(),
        loaded: BTreeSet::new(),
        l2_live: BTreeMap::new(),
    };
    // A schedule without stack events (a single layer) treats its L2
    // buffers as allocated throughout.
    if !s.events.iter().any(|e| matches!(e, Event::StackAlloc { .. })) {
        for b in s.buffers.values().filter(|b| b.level == Level::L2) {
            c.l2_live.insert(b.id.clone(), (b.offset, b.size));
        }
    }
    for b in s.buffers.values() {
        let cap = capacity(mem, b.level);
        if b.offset + b.size > cap {
            c.report(HazardKind::Capacity, format!("{} [{}, {}) exceeds {:?} capacity {cap}", b.id, b.offset, b.offset + b.size, b.level));
        }
    }
    for (i, e) in s.events.iter().enumerate() {
        c.at = i;
        match e {
            Event::DmaAsync { id, channel, transfer, .. } => c.dma(*id, *channel, transfer),
            Event::DmaWait { id, channel, buffer } => c.wait(*id, *channel, buffer),
            Event::KernelCall(k) => c.kernel(k),
            Event::Swap { a, b } => c.swap(a, b),
            Event::StackAlloc { id, offset, size } => c.stack_alloc(id, *offset, *size, mem.l2_bytes),
            Event::StackDealloc { id, .. } => c.stack_free(id),
        }
    }
    c.at = s.events.len();
    let left: Vec<(u64, String)> = c.inflight.iter().map(|f| (f.id, f.dst_buf.clone())).collect();
    for (id, dst) in left {
        c.report(HazardKind::NeverAwaited, format!("transfer {id} into {dst} is never awaited"));
    }
    c.out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Layout, Padding};
    use crate::schedule::{KernelCall, Purpose, Role, TileGeom};

    fn buffer(id: &str, level: Level, offset: usize, role: Role, pair: Option<&str>) -> (String, Buffer) {
        let b = Buffer { id: id.to_string(), level, offset, size: 64, role, pair: pair.map(str::to_string) };
        (id.to_string(), b)
    }

    fn schedule(events: Vec<Event>) -> Schedule {
        Schedule {
            events,
            buffers: [
                buffer("act", Level::L2, 0, Role::L2Activation, None),
                buffer("out", Level::L2, 64, Role::L2Activation, None),
                buffer("xa", Level::L1, 0, Role::XLoad, Some("xb")),
                buffer("xb", Level::L1, 64, Role::XExec, Some("xa")),
                buffer("ya", Level::L1, 128, Role::YExec, Some("yb")),
                buffer("yb", Level::L1, 192, Role::YLoad, Some("ya")),
            ]
            .into_iter()
            .collect(),
            layers: Vec::new(),
        }
    }

    fn load(id: u64) -> Event {
        Event::DmaAsync {
            id,
            channel: Channel::L2l1,
            purpose: Purpose::XTile,
            layer: "l".to_string(),
            transfer: Transfer::linear("act", 0, "xa", 0, 64),
        }
    }

    fn store(id: u64) -> Event {
        Event::DmaAsync {
            id,
            channel: Channel::L2l1,
            purpose: Purpose::YTile,
            layer: "l".to_string(),
            transfer: Transfer::linear("ya", 0, "out", 0, 64),
        }
    }

    fn wait(id: u64, buffer: &str) -> Event {
        Event::DmaWait { id, channel: Channel::L2l1, buffer: buffer.to_string() }
    }

    fn kernel() -> Event {
        let g = TileGeom {
            out_row: 0,
            out_col: 0,
            out_ch: 0,
            rows: 4,
            cols: 4,
            channels: 4,
            in_row: 0,
            in_col: 0,
            in_ch: 0,
            in_rows: 4,
            in_cols: 4,
            in_channels: 4,
            padding: Padding::default(),
            x_layout: Layout::Hwc,
        };
        Event::KernelCall(KernelCall {
            layer: "l".to_string(),
            sub: 0,
            tile: 0,
            x: vec!["xa".to_string()],
            w: None,
            y: "ya".to_string(),
            scratch: None,
            geom: g,
        })
    }

    fn swap(a: &str, b: &str) -> Event {
        Event::Swap { a: a.to_string(), b: b.to_string() }
    }

    fn kinds(events: Vec<Event>) -> Vec<HazardKind> {
        check_hazards(&schedule(events), &MemoryHierarchy::default()).into_iter().map(|h| h.kind).collect()
    }

    #[test]
    fn ordered_tile_is_clean() {
        let tile = vec![load(0), wait(0, "xa"), swap("xa", "xb"), kernel(), swap("ya", "yb"), store(1), wait(1, "ya")];
        assert_eq!(kinds(tile), vec![]);
    }

    #[test]
    fn kernel_before_wait_reads_in_flight_data() {
        let found = kinds(vec![load(0), swap("xa", "xb"), kernel(), wait(0, "xa")]);
        assert_eq!(found, vec![HazardKind::SwapBusy, HazardKind::ReadBeforeLoad]);
    }

    #[test]
    fn kernel_on_load_slot_is_a_role_mismatch() {
        let found = kinds(vec![load(0), wait(0, "xa"), kernel()]);
        assert!(found.contains(&HazardKind::RoleMismatch), "{found:?}");
    }

    #[test]
    fn dangling_and_spurious_waits() {
        assert!(kinds(vec![load(0)]).contains(&HazardKind::NeverAwaited));
        assert!(kinds(vec![wait(5, "xa")]).contains(&HazardKind::WaitWithoutIssue));
    }

    #[test]
    fn buffer_beyond_level_capacity() {
        let mut s = schedule(vec![]);
        s.buffers.get_mut("yb").unwrap().offset = MemoryHierarchy::default().l1_bytes;
        let found: Vec<_> = check_hazards(&s, &MemoryHierarchy::default()).into_iter().map(|h| h.kind).collect();
        assert!(found.contains(&HazardKind::Capacity), "{found:?}");
    }
}
