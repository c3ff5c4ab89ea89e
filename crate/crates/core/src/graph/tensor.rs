use serde::{Deserialize, Serialize};

use crate::rational::Quantum;

/// Named tensor dimension.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DimName {
    #[serde(rename = "C_y")]
    Cy,
    #[serde(rename = "h")]
    H,
    #[serde(rename = "w")]
    W,
    #[serde(rename = "C_x")]
    Cx,
    #[serde(rename = "K_h")]
    Kh,
    #[serde(rename = "K_w")]
    Kw,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Layout {
    #[serde(rename = "HWC")]
    Hwc,
    #[serde(rename = "CHW")]
    Chw,
    #[serde(rename = "CoHWCi")]
    CoHwCi,
}

impl Layout {
    pub fn as_str(self) -> &'static str {
        match self {
            Layout::Hwc => "HWC",
            Layout::Chw => "CHW",
            Layout::CoHwCi => "CoHWCi",
        }
    }

    pub fn from_name(s: &str) -> Option<Layout> {
        match s {
            "HWC" => Some(Layout::Hwc),
            "CHW" => Some(Layout::Chw),
            "CoHWCi" => Some(Layout::CoHwCi),
            _ => None,
        }
    }
}

/// Shape, layout, precision and quantization of a tensor.
///
/// `dims` is listed in memory order, outermost first, so the layout and the
/// dimension order always agree.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QTensorSpec {
    pub dims: Vec<(DimName, usize)>,
    pub layout: Layout,
    pub bits: u8,
    pub signed: bool,
    pub quantum: Quantum,
    pub zero_point_alpha: Quantum,
}

impl QTensorSpec {
    /// Unsigned 8-bit activation in HWC order.
    pub fn activation(h: usize, w: usize, c: usize, quantum: Quantum) -> Self {
        QTensorSpec {
            dims: vec![(DimName::H, h), (DimName::W, w), (DimName::Cx, c)],
            layout: Layout::Hwc,
            bits: 8,
            signed: false,
            quantum,
            zero_point_alpha: Quantum::zero(),
        }
    }

    /// Signed 8-bit weights in CoHWCi order.
    pub fn weights(co: usize, kh: usize, kw: usize, ci: usize, quantum: Quantum) -> Self {
        QTensorSpec {
            dims: vec![(DimName::Cy, co), (DimName::Kh, kh), (DimName::Kw, kw), (DimName::Cx, ci)],
            layout: Layout::CoHwCi,
            bits: 8,
            signed: true,
            quantum,
            zero_point_alpha: Quantum::zero(),
        }
    }

    /// Signed 32-bit accumulator in HWC order.
    pub fn accumulator(h: usize, w: usize, c: usize, quantum: Quantum) -> Self {
        QTensorSpec {
            dims: vec![(DimName::H, h), (DimName::W, w), (DimName::Cy, c)],
            layout: Layout::Hwc,
            bits: 32,
            signed: true,
            quantum,
            zero_point_alpha: Quantum::zero(),
        }
    }

    pub fn extent(&self, name: DimName) -> Option<usize> {
        self.dims.iter().find(|(n, _)| *n == name).map(|&(_, e)| e)
    }

    /// Channel extent of an activation (`C_x` or `C_y`).
    pub fn channels(&self) -> usize {
        self.extent(DimName::Cx).or_else(|| self.extent(DimName::Cy)).unwrap_or(0)
    }

    /// `(h, w, c)` of an activation-like tensor regardless of layout.
    pub fn hwc(&self) -> (usize, usize, usize) {
        (self.extent(DimName::H).unwrap_or(0), self.extent(DimName::W).unwrap_or(0), self.channels())
    }

    pub fn num_elements(&self) -> usize {
        self.dims.iter().map(|&(_, e)| e).product()
    }

    pub fn byte_size(&self) -> usize {
        self.num_elements() * usize::from(self.bits / 8)
    }

    /// Same tensor with HWC dims reordered for `layout` (activations only).
    pub fn with_layout(&self, layout: Layout) -> QTensorSpec {
        let (h, w, c) = self.hwc();
        let cname = if self.extent(DimName::Cx).is_some() { DimName::Cx } else { DimName::Cy };
        let dims = match layout {
            Layout::Chw => vec![(cname, c), (DimName::H, h), (DimName::W, w)],
            _ => vec![(DimName::H, h), (DimName::W, w), (cname, c)],
        };
        QTensorSpec { dims, layout, ..self.clone() }
    }

    /// Invariant violations, empty when the tensor description is well formed.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.bits != 8 && self.bits != 32 {
            out.push(format!("bits must be 8 or 32, got {}", self.bits));
        }
        if !self.quantum.is_positive() {
            out.push(format!("quantum must be positive, got {}", self.quantum));
        }
        if self.num_elements() == 0 {
            out.push("tensor has zero elements".to_string());
        }
        let names: Vec<DimName> = self.dims.iter().map(|d| d.0).collect();
        let expected_len = if self.layout == Layout::CoHwCi { 4 } else { 3 };
        if names.len() != expected_len {
            out.push(format!("{} layout expects {} dims, got {}", self.layout.as_str(), expected_len, names.len()));
        } else {
            let layout_ok = match self.layout {
                Layout::Hwc => names[0] == DimName::H && names[1] == DimName::W && matches!(names[2], DimName::Cx | DimName::Cy),
                Layout::Chw => matches!(names[0], DimName::Cx | DimName::Cy) && names[1] == DimName::H && names[2] == DimName::W,
                Layout::CoHwCi => names == [DimName::Cy, DimName::Kh, DimName::Kw, DimName::Cx],
            };
            if !layout_ok {
                out.push(format!("dims {:?} do not match layout {}", names, self.layout.as_str()));
            }
        }
        match (self.layout, self.bits, self.signed) {
            (Layout::CoHwCi, 8, true) => {}
            (Layout::CoHwCi, _, _) => out.push("weights must be signed 8-bit".to_string()),
            (_, 8, false) | (_, 32, true) => {}
            (_, 8, true) => out.push("activations must be unsigned 8-bit".to_string()),
            (_, _, _) => out.push("accumulators must be signed 32-bit".to_string()),
        }
        if self.layout != Layout::CoHwCi && !self.zero_point_alpha.is_zero() {
            out.push("activation zero point must be 0".to_string());
        }
        out
    }
}
