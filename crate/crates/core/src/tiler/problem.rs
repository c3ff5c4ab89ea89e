use serde::{Deserialize, Serialize};

use super::memory::MemoryHierarchy;
use crate::graph::{LayerKind, LayerSpec};

/// Extents of a (sub-)layer as seen by the L2-L1 tile search.
///
/// `h_x`/`w_x` cap the input window of a tile; for an L3 stripe they hold the
/// tallest input stripe rather than the whole input.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileProblem {
    pub id: String,
    pub kind: LayerKind,
    pub h_y: usize,
    pub w_y: usize,
    pub c_y: usize,
    pub h_x: usize,
    pub w_x: usize,
    pub c_x: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub stride: usize,
    pub inputs: usize,
}

impl TileProblem {
    pub fn from_layer(l: &LayerSpec) -> Self {
        TileProblem {
            id: l.id.clone(),
            kind: l.kind,
            h_y: l.h_y(),
            w_y: l.w_y(),
            c_y: l.c_y(),
            h_x: l.h_x(),
            w_x: l.w_x(),
            c_x: l.c_x(),
            k_h: l.kernel_h,
            k_w: l.kernel_w,
            stride: l.stride,
            inputs: l.inputs.len().max(1),
        }
    }

    /// Input rows needed by `h` output rows, capped by the input extent.
    pub fn in_rows(&self, h: usize) -> usize {
        ((h - 1) * self.stride + self.k_h).min(self.h_x)
    }

    pub fn in_cols(&self, w: usize) -> usize {
        ((w - 1) * self.stride + self.k_w).min(self.w_x)
    }

    /// Input channels a tile of `c` output channels reads.
    pub fn in_channels(&self, c: usize) -> usize {
        if self.kind.reduces_channels() {
            self.c_x
        } else {
            c
        }
    }

    pub fn weight_bytes(&self, c: usize) -> usize {
        if self.kind.has_weights() {
            let cin = if self.kind.reduces_channels() { self.c_x } else { 1 };
            c * self.k_h * self.k_w * cin
        } else {
            0
        }
    }

    pub fn search_space(&self) -> u128 {
        self.h_y as u128 * self.w_y as u128 * self.c_y as u128
    }
}

/// One L1 tile: output extents, the input window it reads and its L1 bytes.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TileDims {
    pub c_y_t: usize,
    pub h_y_t: usize,
    pub w_y_t: usize,
    pub c_x_t: usize,
    pub h_x_t: usize,
    pub w_x_t: usize,
    pub l1_x: usize,
    pub l1_w: usize,
    pub l1_y: usize,
    pub l1_backend: usize,
}

impl TileDims {
    pub fn new(p: &TileProblem, mem: &MemoryHierarchy, c: usize, h: usize, w: usize) -> TileDims {
        let h_x_t = p.in_rows(h);
        let w_x_t = p.in_cols(w);
        let c_x_t = p.in_channels(c);
        let mut t = TileDims {
            c_y_t: c,
            h_y_t: h,
            w_y_t: w,
            c_x_t,
            h_x_t,
            w_x_t,
            l1_x: h_x_t * w_x_t * c_x_t * p.inputs,
            l1_w: p.weight_bytes(c),
            l1_y: h * w * c,
            l1_backend: 0,
        };
        t.l1_backend = mem.backend_bytes(p, &t);
        t
    }

    /// `L1_x + L1_y + L1_w`, the occupancy term of the objective.
    pub fn occupancy(&self) -> usize {
        self.l1_x + self.l1_y + self.l1_w
    }

    pub fn total(&self) -> usize {
        self.occupancy() + self.l1_backend
    }

    /// `L1_x + L1_y + L1_w + L1_backend < L1 / 2`.
    pub fn fits(&self, l1_bytes: usize) -> bool {
        2 * self.total() < l1_bytes
    }
}

/// Clipped input window of a run of output positions along one axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: usize,
    pub len: usize,
    pub pad_before: usize,
    pub pad_after: usize,
}

/// Input rows `[start, start + len)` read by outputs `[out0, out0 + n)`, with
/// the zero padding that falls outside the tensor on each side.
pub fn input_window(out0: usize, n: usize, stride: usize, kernel: usize, pad_before: usize, extent: usize) -> Window {
    let lo = (out0 * stride) as isize - pad_before as isize;
    let hi = ((out0 + n - 1) * stride + kernel) as isize - pad_before as isize;
    let start = lo.max(0);
    let end = hi.min(extent as isize);
    Window {
        start: start as usize,
        len: (end - start).max(0) as usize,
        pad_before: (-lo).max(0) as usize,
        pad_after: (hi - extent as isize).max(0) as usize,
    }
}

/// Splits `total` into runs of `step`, the last one possibly shorter.
pub fn split(total: usize, step: usize) -> Vec<(usize, usize)> {
    let step = step.max(1);
    (0..total).step_by(step).map(|s| (s, step.min(total - s))).collect()
}
