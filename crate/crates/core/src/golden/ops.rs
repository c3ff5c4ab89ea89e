use std::collections::BTreeMap;

use crate::graph::{DimName, LayerKind, LayerSpec, NetworkGraph, QTensorSpec, Requant};

use super::{GoldenError, IntTensor};

fn overflow(layer: &LayerSpec, what: &str) -> GoldenError {
    GoldenError::Overflow { layer: layer.id.clone(), what: what.to_string() }
}

fn accumulator_spec(layer: &LayerSpec) -> QTensorSpec {
    let q = match layer.quanta.eps_w {
        Some(w) => layer.quanta.eps_x.checked_mul(&w).unwrap_or(layer.quanta.eps_x),
        None => layer.quanta.eps_x,
    };
    QTensorSpec::accumulator(layer.h_y(), layer.w_y(), layer.c_y(), q)
}

fn check_input(x: &IntTensor, layer: &LayerSpec) -> Result<(), GoldenError> {
    if x.hwc() != layer.input_spec.hwc() {
        return Err(GoldenError::Shape(format!("layer `{}` expects input {:?}, got {:?}", layer.id, layer.input_spec.hwc(), x.hwc())));
    }
    if x.spec.bits != 8 || x.spec.signed {
        return Err(GoldenError::Shape(format!("layer `{}` expects an unsigned 8-bit input", layer.id)));
    }
    Ok(())
}

/// Input coordinate read by output `o` at kernel offset `k`, if not padding.
#[inline]
fn tap(o: usize, k: usize, stride: usize, pad: usize, extent: usize) -> Option<usize> {
    let pos = (o * stride + k).checked_sub(pad)?;
    (pos < extent).then_some(pos)
}

/// Integer dot products of conv, depthwise, pointwise and linear layers.
///
/// Padding contributes zeros. The reduction runs over kernel rows, kernel
/// columns and then channels, so the channel index is innermost.
pub fn linear_accumulate(x: &IntTensor, w: &IntTensor, layer: &LayerSpec) -> Result<IntTensor, GoldenError> {
    if !layer.kind.has_weights() {
        return Err(GoldenError::Shape(format!("layer `{}` has no weights", layer.id)));
    }
    check_input(x, layer)?;
    let (kh, kw) = (layer.kernel_h, layer.kernel_w);
    let cin = layer.weight_cin();
    let (h_x, w_x, _) = x.hwc();
    let (h_y, w_y, c_y) = (layer.h_y(), layer.w_y(), layer.c_y());
    let wshape = (w.spec.extent(DimName::Cy), w.spec.extent(DimName::Kh), w.spec.extent(DimName::Kw), w.spec.extent(DimName::Cx));
    if wshape != (Some(c_y), Some(kh), Some(kw), Some(cin)) {
        return Err(GoldenError::Shape(format!("layer `{}` expects weights ({c_y}, {kh}, {kw}, {cin}), got {wshape:?}", layer.id)));
    }
    let depthwise = layer.kind == LayerKind::Depthwise;
    let s = layer.stride;
    let p = layer.padding;
    let mut out = IntTensor::zeros(accumulator_spec(layer));
    for oh in 0..h_y {
        for ow in 0..w_y {
            for co in 0..c_y {
                let mut acc: i32 = 0;
                for ky in 0..kh {
                    let Some(ih) = tap(oh, ky, s, p.top, h_x) else { continue };
                    for kx in 0..kw {
                        let Some(iw) = tap(ow, kx, s, p.left, w_x) else { continue };
                        let wbase = ((co * kh + ky) * kw + kx) * cin;
                        for ci in 0..cin {
                            let xc = if depthwise { co } else { ci };
                            let prod = x.at(ih, iw, xc) * w.data[wbase + ci];
                            acc = acc.checked_add(prod).ok_or_else(|| overflow(layer, "32-bit accumulator"))?;
                        }
                    }
                }
                out.set(oh, ow, co, acc);
            }
        }
    }
    Ok(out)
}

/// `kappa * phi + lambda` per output channel, computed in 64 bits.
pub fn batch_norm(phi: &IntTensor, kappa: &[i32], lambda: &[i32]) -> Result<IntTensor, GoldenError> {
    let c = phi.spec.channels();
    if kappa.len() != c || lambda.len() != c {
        return Err(GoldenError::Shape(format!("batch norm needs {c} channels, got kappa {} lambda {}", kappa.len(), lambda.len())));
    }
    let (h, w, _) = phi.hwc();
    let mut out = phi.clone();
    for y in 0..h {
        for x in 0..w {
            for k in 0..c {
                let v = i64::from(kappa[k]) * i64::from(phi.at(y, x, k)) + i64::from(lambda[k]);
                let v =
                    i32::try_from(v).map_err(|_| GoldenError::Overflow { layer: String::new(), what: format!("batch norm result {v}") })?;
                out.set(y, x, k, v);
            }
        }
    }
    Ok(out)
}

/// `clamp((m * phi) >> d, 0, 2^bits - 1)` with a 64-bit product and an
/// arithmetic shift.
#[inline]
pub fn requantize_value(phi: i32, m: i32, d: u32, out_bits: u32) -> i32 {
    let shifted = (i64::from(m) * i64::from(phi)) >> d;
    let hi = (1i64 << out_bits) - 1;
    shifted.clamp(0, hi) as i32
}

/// Collapses a 32-bit tensor to unsigned `out_bits` values.
pub fn requantize(phi: &IntTensor, m: i32, d: u32, out_bits: u32) -> Result<IntTensor, GoldenError> {
    if d > 31 || m < 0 || !(1..=31).contains(&out_bits) {
        return Err(GoldenError::Range(format!("invalid requant m={m} d={d} bits={out_bits}")));
    }
    let (h, w, c) = phi.hwc();
    let q = phi.spec.quantum;
    let mut spec = QTensorSpec::activation(h, w, c, q).with_layout(phi.spec.layout);
    spec.bits = 8;
    Ok(IntTensor { spec, data: phi.data.iter().map(|&v| requantize_value(v, m, d, out_bits)).collect() })
}

fn pool(x: &IntTensor, layer: &LayerSpec) -> Result<IntTensor, GoldenError> {
    check_input(x, layer)?;
    let (h_x, w_x, c) = x.hwc();
    let s = layer.stride;
    let p = layer.padding;
    let max = layer.kind == LayerKind::PoolMax;
    let mut out = IntTensor::zeros(accumulator_spec(layer));
    for oh in 0..layer.h_y() {
        for ow in 0..layer.w_y() {
            for k in 0..c {
                let mut acc: i32 = 0;
                for ky in 0..layer.kernel_h {
                    let Some(ih) = tap(oh, ky, s, p.top, h_x) else { continue };
                    for kx in 0..layer.kernel_w {
                        let Some(iw) = tap(ow, kx, s, p.left, w_x) else { continue };
                        let v = x.at(ih, iw, k);
                        acc = if max { acc.max(v) } else { acc + v };
                    }
                }
                out.set(oh, ow, k, acc);
            }
        }
    }
    Ok(out)
}

fn add(a: &IntTensor, b: &IntTensor, layer: &LayerSpec) -> Result<IntTensor, GoldenError> {
    check_input(a, layer)?;
    check_input(b, layer)?;
    let [ra, rb]: [Requant; 2] =
        layer.branch_requant.clone().try_into().map_err(|_| GoldenError::Shape(format!("add `{}` needs two branch requants", layer.id)))?;
    let (h, w, c) = a.hwc();
    let mut out = IntTensor::zeros(accumulator_spec(layer));
    for y in 0..h {
        for x in 0..w {
            for k in 0..c {
                let va = (i64::from(ra.m) * i64::from(a.at(y, x, k))) >> ra.d;
                let vb = (i64::from(rb.m) * i64::from(b.at(y, x, k))) >> rb.d;
                let sum = i32::try_from(va + vb).map_err(|_| overflow(layer, "add branch sum"))?;
                out.set(y, x, k, sum);
            }
        }
    }
    Ok(out)
}

/// Runs one fused layer and returns its unsigned 8-bit HWC output.
pub fn run_layer(layer: &LayerSpec, inputs: &[&IntTensor]) -> Result<IntTensor, GoldenError> {
    let arity = if layer.kind == LayerKind::Add { 2 } else { 1 };
    if inputs.len() != arity {
        return Err(GoldenError::Shape(format!("layer `{}` takes {arity} inputs, got {}", layer.id, inputs.len())));
    }
    let phi = match layer.kind {
        LayerKind::Conv | LayerKind::Depthwise | LayerKind::Pointwise | LayerKind::Linear => {
            let (spec, data) = match (&layer.weight_spec, &layer.weights) {
                (Some(s), Some(d)) => (s.clone(), d.iter().map(|&v| i32::from(v)).collect()),
                _ => return Err(GoldenError::Shape(format!("layer `{}` has no weight payload", layer.id))),
            };
            let w = IntTensor::new(spec, data)?;
            linear_accumulate(inputs[0], &w, layer)?
        }
        LayerKind::PoolAvg | LayerKind::PoolMax => pool(inputs[0], layer)?,
        LayerKind::Add => add(inputs[0], inputs[1], layer)?,
    };
    let phi = match &layer.bn {
        Some(bn) => batch_norm(&phi, &bn.kappa, &bn.lambda).map_err(|e| match e {
            GoldenError::Overflow { what, .. } => GoldenError::Overflow { layer: layer.id.clone(), what },
            other => other,
        })?,
        None => phi,
    };
    let y = requantize(&phi, layer.requant.m, layer.requant.d, 8)?;
    Ok(IntTensor { spec: layer.output_spec.with_layout(crate::graph::Layout::Hwc), data: y.data })
}

fn execute(graph: &NetworkGraph, input: &IntTensor, keep_all: bool) -> Result<BTreeMap<String, IntTensor>, GoldenError> {
    if input.hwc() != graph.input.hwc() {
        return Err(GoldenError::Shape(format!("network expects input {:?}, got {:?}", graph.input.hwc(), input.hwc())));
    }
    let n = graph.layers.len();
    let mut live: BTreeMap<String, (IntTensor, u32)> = BTreeMap::new();
    let input_life = graph.last_consumer(&graph.input_name).map_or(1, |j| j as u32 + 1);
    live.insert(graph.input_name.clone(), (input.clone(), input_life));
    let mut all = BTreeMap::new();
    for (i, layer) in graph.layers.iter().enumerate() {
        let ins = layer
            .inputs
            .iter()
            .map(|t| {
                live.get(t)
                    .map(|(v, _)| v)
                    .ok_or_else(|| GoldenError::Shape(format!("layer `{}` reads `{t}` after it was released", layer.id)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let y = run_layer(layer, &ins)?;
        if keep_all {
            all.insert(layer.output.clone(), y.clone());
        }
        live.insert(layer.output.clone(), (y, layer.activation_lifetime));
        // Counters tick once per executed layer; zero means no reader remains.
        live.retain(|_, (_, life)| {
            *life = life.saturating_sub(1);
            *life > 0
        });
        if i + 1 == n && !keep_all {
            if let Some((t, _)) = live.remove(&graph.output_name) {
                all.insert(graph.output_name.clone(), t);
            }
        }
    }
    Ok(all)
}

/// Reference execution of a whole network in topological order.
pub fn run_network(graph: &NetworkGraph, input: &IntTensor) -> Result<IntTensor, GoldenError> {
    if graph.layers.is_empty() {
        return Ok(input.clone());
    }
    let mut out = execute(graph, input, false)?;
    out.remove(&graph.output_name).ok_or_else(|| GoldenError::Shape(format!("output `{}` was not produced", graph.output_name)))
}

/// Every layer output of a network run, keyed by tensor name.
pub fn run_network_trace(graph: &NetworkGraph, input: &IntTensor) -> Result<BTreeMap<String, IntTensor>, GoldenError> {
    execute(graph, input, true)
}
