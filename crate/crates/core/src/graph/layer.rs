use serde::{Deserialize, Serialize};

use super::tensor::QTensorSpec;
use crate::rational::Quantum;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    Depthwise,
    Pointwise,
    Linear,
    PoolAvg,
    PoolMax,
    Add,
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::Depthwise => "depthwise",
            LayerKind::Pointwise => "pointwise",
            LayerKind::Linear => "linear",
            LayerKind::PoolAvg => "pool_avg",
            LayerKind::PoolMax => "pool_max",
            LayerKind::Add => "add",
        }
    }

    pub fn has_weights(self) -> bool {
        matches!(self, LayerKind::Conv | LayerKind::Depthwise | LayerKind::Pointwise | LayerKind::Linear)
    }

    /// Whether each output channel depends on every input channel.
    pub fn reduces_channels(self) -> bool {
        matches!(self, LayerKind::Conv | LayerKind::Pointwise | LayerKind::Linear)
    }

    pub fn is_pool(self) -> bool {
        matches!(self, LayerKind::PoolAvg | LayerKind::PoolMax)
    }
}

/// Per-edge zero padding.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    pub fn uniform(p: usize) -> Self {
        Padding { top: p, bottom: p, left: p, right: p }
    }

    pub fn is_zero(&self) -> bool {
        *self == Padding::default()
    }
}

/// Integer requantization `clamp((m * phi) >> d, 0, 255)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Requant {
    pub m: i32,
    pub d: u32,
}

impl Requant {
    pub const IDENTITY: Requant = Requant { m: 1, d: 0 };
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub kappa: Vec<i32>,
    pub lambda: Vec<i32>,
}

/// Quanta of the layer operands.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quanta {
    pub eps_x: Quantum,
    pub eps_w: Option<Quantum>,
    pub eps_y: Quantum,
}

/// One fused layer: linear/add/pool op, optional batch norm, requantization.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub id: String,
    pub kind: LayerKind,
    /// Activation tensor names consumed (two for `add`).
    pub inputs: Vec<String>,
    pub output: String,
    pub input_spec: QTensorSpec,
    pub output_spec: QTensorSpec,
    pub weight_spec: Option<QTensorSpec>,
    /// Name of the weight tensor and its blob file in the network document.
    pub weight_name: Option<String>,
    pub weight_blob: Option<String>,
    #[serde(skip)]
    pub weights: Option<Vec<i8>>,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: Padding,
    pub bn: Option<BatchNorm>,
    pub requant: Requant,
    /// Per-branch alignment for `add`, one entry per input.
    pub branch_requant: Vec<Requant>,
    pub quanta: Quanta,
    /// Producer layer ids (or the network input name) feeding an `add`.
    pub residual_inputs: Vec<String>,
    /// Layers executed until the output may be freed, counting this one.
    pub activation_lifetime: u32,
}

/// `floor((x - k + p0 + p1) / s) + 1`, or `None` when the window does not fit.
pub fn output_extent(x: usize, k: usize, p0: usize, p1: usize, s: usize) -> Option<usize> {
    if s == 0 || x + p0 + p1 < k {
        return None;
    }
    Some((x + p0 + p1 - k) / s + 1)
}

impl LayerSpec {
    pub fn has_bn(&self) -> bool {
        self.bn.is_some()
    }

    pub fn h_x(&self) -> usize {
        self.input_spec.hwc().0
    }
    pub fn w_x(&self) -> usize {
        self.input_spec.hwc().1
    }
    pub fn c_x(&self) -> usize {
        self.input_spec.hwc().2
    }
    pub fn h_y(&self) -> usize {
        self.output_spec.hwc().0
    }
    pub fn w_y(&self) -> usize {
        self.output_spec.hwc().1
    }
    pub fn c_y(&self) -> usize {
        self.output_spec.hwc().2
    }

    /// Bytes of one input activation.
    pub fn input_bytes(&self) -> usize {
        self.input_spec.byte_size()
    }

    pub fn output_bytes(&self) -> usize {
        self.output_spec.byte_size()
    }

    pub fn weight_bytes(&self) -> usize {
        self.weight_spec.as_ref().map_or(0, |w| w.byte_size())
    }

    /// Input channels each output channel reads (1 for per-channel ops).
    pub fn weight_cin(&self) -> usize {
        if self.kind.reduces_channels() {
            self.c_x()
        } else {
            1
        }
    }

    /// Bytes of the weights of `c` output channels.
    pub fn weight_slice_bytes(&self, c: usize) -> usize {
        if self.kind.has_weights() {
            c * self.kernel_h * self.kernel_w * self.weight_cin()
        } else {
            0
        }
    }

    /// Multiply-accumulates (or window reads for pool/add) of the whole layer.
    pub fn ops(&self) -> u64 {
        let out = (self.h_y() * self.w_y() * self.c_y()) as u64;
        match self.kind {
            LayerKind::Add => out * 2,
            _ => out * (self.kernel_h * self.kernel_w * self.weight_cin()) as u64,
        }
    }

    /// Expected `(h_y, w_y)` from the input geometry, kernel, padding and stride.
    pub fn expected_output_hw(&self) -> Option<(usize, usize)> {
        let p = self.padding;
        Some((
            output_extent(self.h_x(), self.kernel_h, p.top, p.bottom, self.stride)?,
            output_extent(self.w_x(), self.kernel_w, p.left, p.right, self.stride)?,
        ))
    }
}
