//! Tensor dump files: a `dims/layout/bits` header line and a little-endian payload.

use crate::graph::{DimName, Layout, QTensorSpec};
use crate::rational::Quantum;

use super::{GoldenError, IntTensor};

pub fn write_dump(t: &IntTensor) -> Vec<u8> {
    let dims: Vec<String> = t.spec.dims.iter().map(|d| d.1.to_string()).collect();
    let mut out = format!("{}/{}/{}\n", dims.join("x"), t.spec.layout.as_str(), t.spec.bits).into_bytes();
    out.extend(t.to_bytes());
    out
}

/// Reads a dump; 8-bit CoHWCi payloads are signed, other 8-bit payloads unsigned.
pub fn read_dump(bytes: &[u8], quantum: Quantum) -> Result<IntTensor, GoldenError> {
    let bad = |m: &str| GoldenError::Dump(m.to_string());
    let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| bad("missing header line"))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| bad("header is not UTF-8"))?;
    let mut parts = header.split('/');
    let (Some(dims), Some(layout), Some(bits), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
        return Err(bad("header must be dims/layout/bits"));
    };
    let extents = dims.split('x').map(|d| d.parse::<usize>()).collect::<Result<Vec<_>, _>>().map_err(|_| bad("bad dims"))?;
    let layout = Layout::from_name(layout).ok_or_else(|| bad("unknown layout"))?;
    let bits: u8 = bits.parse().map_err(|_| bad("bad bit width"))?;
    let names: &[DimName] = match layout {
        Layout::Hwc if bits == 32 => &[DimName::H, DimName::W, DimName::Cy],
        Layout::Hwc => &[DimName::H, DimName::W, DimName::Cx],
        Layout::Chw => &[DimName::Cx, DimName::H, DimName::W],
        Layout::CoHwCi => &[DimName::Cy, DimName::Kh, DimName::Kw, DimName::Cx],
    };
    if extents.len() != names.len() {
        return Err(bad("dims do not match layout"));
    }
    let signed = bits == 32 || layout == Layout::CoHwCi;
    let spec = QTensorSpec {
        dims: names.iter().copied().zip(extents).collect(),
        layout,
        bits,
        signed,
        quantum,
        zero_point_alpha: Quantum::zero(),
    };
    let payload = &bytes[nl + 1..];
    let data: Vec<i32> = match (bits, signed) {
        (8, false) => payload.iter().map(|&b| i32::from(b)).collect(),
        (8, true) => payload.iter().map(|&b| i32::from(b as i8)).collect(),
        (32, _) => {
            if !payload.len().is_multiple_of(4) {
                return Err(bad("32-bit payload length is not a multiple of 4"));
            }
            payload.chunks_exact(4).map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect()
        }
        _ => return Err(bad("bits must be 8 or 32")),
    };
    IntTensor::new(spec, data).map_err(|e| GoldenError::Dump(e.to_string()))
}
