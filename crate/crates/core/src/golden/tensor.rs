use crate::graph::{Layout, QTensorSpec};
use crate::rational::Quantum;

use super::GoldenError;

/// Integer tensor stored in the layout of its spec.
///
/// Values are kept as `i32` for every precision; the declared bit width bounds
/// what may be stored.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntTensor {
    pub spec: QTensorSpec,
    pub data: Vec<i32>,
}

impl IntTensor {
    pub fn new(spec: QTensorSpec, data: Vec<i32>) -> Result<Self, GoldenError> {
        if data.len() != spec.num_elements() {
            return Err(GoldenError::Shape(format!("data has {} elements, spec needs {}", data.len(), spec.num_elements())));
        }
        let (lo, hi) = match (spec.bits, spec.signed) {
            (8, false) => (0, 255),
            (8, true) => (-128, 127),
            _ => (i32::MIN, i32::MAX),
        };
        if let Some(v) = data.iter().find(|&&v| v < lo || v > hi) {
            return Err(GoldenError::Range(format!(
                "value {v} outside [{lo}, {hi}] for {}-bit {} tensor",
                spec.bits,
                if spec.signed { "signed" } else { "unsigned" }
            )));
        }
        Ok(IntTensor { spec, data })
    }

    /// Unsigned 8-bit HWC activation from raw bytes.
    pub fn from_u8_hwc(h: usize, w: usize, c: usize, quantum: Quantum, bytes: &[u8]) -> Result<Self, GoldenError> {
        IntTensor::new(QTensorSpec::activation(h, w, c, quantum), bytes.iter().map(|&b| i32::from(b)).collect())
    }

    pub fn zeros(spec: QTensorSpec) -> Self {
        let n = spec.num_elements();
        IntTensor { spec, data: vec![0; n] }
    }

    pub fn hwc(&self) -> (usize, usize, usize) {
        self.spec.hwc()
    }

    /// Flat index of activation element `(h, w, c)`.
    pub fn index(&self, h: usize, w: usize, c: usize) -> usize {
        let (hh, ww, cc) = self.spec.hwc();
        debug_assert!(h < hh && w < ww && c < cc);
        match self.spec.layout {
            Layout::Chw => (c * hh + h) * ww + w,
            _ => (h * ww + w) * cc + c,
        }
    }

    pub fn at(&self, h: usize, w: usize, c: usize) -> i32 {
        self.data[self.index(h, w, c)]
    }

    pub fn set(&mut self, h: usize, w: usize, c: usize, v: i32) {
        let i = self.index(h, w, c);
        self.data[i] = v;
    }

    /// Payload as bytes for 8-bit tensors (two's complement for signed).
    pub fn to_bytes(&self) -> Vec<u8> {
        match self.spec.bits {
            8 => self.data.iter().map(|&v| v as u8).collect(),
            _ => self.data.iter().flat_map(|v| v.to_le_bytes()).collect(),
        }
    }

    /// Copies the HWC window `[h0, h0+h) x [w0, w0+w) x [c0, c0+c)`.
    pub fn window(&self, h0: usize, w0: usize, c0: usize, h: usize, w: usize, c: usize) -> IntTensor {
        let mut spec = self.spec.with_layout(Layout::Hwc);
        spec.dims = vec![(crate::graph::DimName::H, h), (crate::graph::DimName::W, w), (spec.dims[2].0, c)];
        let mut data = Vec::with_capacity(h * w * c);
        for y in h0..h0 + h {
            for x in w0..w0 + w {
                for k in c0..c0 + c {
                    data.push(self.at(y, x, k));
                }
            }
        }
        IntTensor { spec, data }
    }
}

/// Permutes an activation between HWC and CHW storage.
pub fn convert_layout(t: &IntTensor, target: Layout) -> Result<IntTensor, GoldenError> {
    if !matches!(target, Layout::Hwc | Layout::Chw) || t.spec.layout == Layout::CoHwCi {
        return Err(GoldenError::Shape("layout conversion only applies to HWC/CHW activations".into()));
    }
    let (h, w, c) = t.hwc();
    let mut out = IntTensor { spec: t.spec.with_layout(target), data: vec![0; t.data.len()] };
    for y in 0..h {
        for x in 0..w {
            for k in 0..c {
                out.set(y, x, k, t.at(y, x, k));
            }
        }
    }
    Ok(out)
}
