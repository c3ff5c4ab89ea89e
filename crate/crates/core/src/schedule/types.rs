use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::graph::{Layout, Padding};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    L1,
    L2,
    L3,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    L3l2,
    L2l1,
}

/// Initial role of a buffer. L1 double-buffer slots start as `*_exec` or
/// `*_load` and trade roles on every swap.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    XExec,
    XLoad,
    X2Exec,
    X2Load,
    WExec,
    WLoad,
    YExec,
    YLoad,
    Scratch,
    L2Activation,
    L2Weights,
    L2Stripe,
    L3Weights,
    L3Activation,
}

impl Role {
    pub fn is_exec(self) -> bool {
        matches!(self, Role::XExec | Role::X2Exec | Role::WExec | Role::YExec)
    }

    pub fn is_slot(self) -> bool {
        matches!(self, Role::XExec | Role::XLoad | Role::X2Exec | Role::X2Load | Role::WExec | Role::WLoad | Role::YExec | Role::YLoad)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Buffer {
    pub id: String,
    pub level: Level,
    /// Absolute byte offset within the level.
    pub offset: usize,
    pub size: usize,
    pub role: Role,
    /// Other half of a double buffer.
    pub pair: Option<String>,
}

/// One stride level of a DMA descriptor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stride {
    pub count: usize,
    pub src: usize,
    pub dst: usize,
}

/// Strided copy of `len`-byte runs. `dims` lists stride levels innermost
/// first; no levels means a plain 1D copy.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transfer {
    pub src: String,
    pub src_offset: usize,
    pub dst: String,
    pub dst_offset: usize,
    pub len: usize,
    pub dims: Vec<Stride>,
}

impl Transfer {
    pub fn linear(src: &str, src_offset: usize, dst: &str, dst_offset: usize, len: usize) -> Transfer {
        Transfer { src: src.to_string(), src_offset, dst: dst.to_string(), dst_offset, len, dims: Vec::new() }
    }

    pub fn bytes(&self) -> usize {
        self.len * self.dims.iter().map(|d| d.count).product::<usize>()
    }

    /// Bytes from the first to one past the last byte read, relative to the
    /// source offset.
    pub fn src_span(&self) -> usize {
        if self.bytes() == 0 {
            return 0;
        }
        self.len + self.dims.iter().map(|d| (d.count - 1) * d.src).sum::<usize>()
    }

    pub fn dst_span(&self) -> usize {
        if self.bytes() == 0 {
            return 0;
        }
        self.len + self.dims.iter().map(|d| (d.count - 1) * d.dst).sum::<usize>()
    }

    /// Calls `f(src_offset, dst_offset)` for every contiguous run, in order.
    pub fn for_each_run(&self, mut f: impl FnMut(usize, usize)) {
        let n: usize = self.dims.iter().map(|d| d.count).product();
        let mut idx = vec![0usize; self.dims.len()];
        for _ in 0..n {
            let (mut s, mut d) = (self.src_offset, self.dst_offset);
            for (k, dim) in idx.iter().zip(&self.dims) {
                s += k * dim.src;
                d += k * dim.dst;
            }
            f(s, d);
            for (k, dim) in idx.iter_mut().zip(&self.dims) {
                *k += 1;
                if *k < dim.count {
                    break;
                }
                *k = 0;
            }
        }
    }

    /// Number of 1D runs, the count a plain 2D engine would issue.
    pub fn rows(&self) -> usize {
        self.dims.iter().map(|d| d.count).product()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    /// Input tile, L2 to L1.
    XTile,
    /// Second input tile of an add.
    X2Tile,
    WTile,
    /// Output tile, L1 to L2.
    YTile,
    /// Input stripe, L3 to L2.
    StripeIn,
    /// Output stripe, L2 to L3.
    StripeOut,
    /// Weight slice, L3 to L2.
    SliceLoad,
    /// Whole weights of the next layer, L3 to L2.
    Prefetch,
    /// Whole weights of the first layer, loaded before the network starts.
    WeightLoad,
}

/// Output region of a tile and the input window it reads, in layer
/// coordinates.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileGeom {
    pub out_row: usize,
    pub out_col: usize,
    pub out_ch: usize,
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub in_row: usize,
    pub in_col: usize,
    pub in_ch: usize,
    pub in_rows: usize,
    pub in_cols: usize,
    pub in_channels: usize,
    pub padding: Padding,
    /// Layout of the input tile in L1.
    pub x_layout: Layout,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelCall {
    pub layer: String,
    pub sub: usize,
    pub tile: usize,
    pub x: Vec<String>,
    pub w: Option<String>,
    pub y: String,
    pub scratch: Option<String>,
    pub geom: TileGeom,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    DmaAsync {
        id: u64,
        channel: Channel,
        purpose: Purpose,
        layer: String,
        transfer: Transfer,
    },
    /// Completes the in-flight transfers on `channel` that touch `buffer`.
    /// `id` is the latest of them.
    DmaWait {
        id: u64,
        channel: Channel,
        buffer: String,
    },
    KernelCall(KernelCall),
    Swap {
        a: String,
        b: String,
    },
    StackAlloc {
        id: String,
        offset: usize,
        size: usize,
    },
    StackDealloc {
        id: String,
        offset: usize,
        size: usize,
    },
}

impl Event {
    /// Buffers the event names directly.
    pub fn buffers(&self) -> Vec<&str> {
        match self {
            Event::DmaAsync { transfer, .. } => vec![&transfer.src, &transfer.dst],
            Event::DmaWait { buffer, .. } => vec![buffer],
            Event::KernelCall(k) => {
                let mut v: Vec<&str> = k.x.iter().map(String::as_str).collect();
                v.extend(k.w.as_deref());
                v.push(&k.y);
                v.extend(k.scratch.as_deref());
                v
            }
            Event::Swap { a, b } => vec![a, b],
            Event::StackAlloc { id, .. } | Event::StackDealloc { id, .. } => vec![id],
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Event::DmaAsync { .. } => "dma_async",
            Event::DmaWait { .. } => "dma_wait",
            Event::KernelCall(_) => "kernel_call",
            Event::Swap { .. } => "swap",
            Event::StackAlloc { .. } => "stack_alloc",
            Event::StackDealloc { .. } => "stack_dealloc",
        }
    }
}

/// Tile loop trip counts: output channels, rows, columns, input channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripCounts {
    pub lto: usize,
    pub lth: usize,
    pub ltw: usize,
    pub lti: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpan {
    pub layer: String,
    /// Event index range `[start, end)`.
    pub start: usize,
    pub end: usize,
    /// Trip counts of the main sub-layer.
    pub trips: TripCounts,
    pub sublayers: usize,
    pub kernel_calls: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub events: Vec<Event>,
    pub buffers: BTreeMap<String, Buffer>,
    pub layers: Vec<LayerSpan>,
}

impl Schedule {
    pub fn kernel_calls(&self) -> impl Iterator<Item = &KernelCall> {
        self.events.iter().filter_map(|e| match e {
            Event::KernelCall(k) => Some(k),
            _ => None,
        })
    }

    pub fn transfers(&self, purpose: Purpose) -> impl Iterator<Item = (usize, &Transfer)> {
        self.events.iter().enumerate().filter_map(move |(i, e)| match e {
            Event::DmaAsync { purpose: p, transfer, .. } if *p == purpose => Some((i, transfer)),
            _ => None,
        })
    }
}
