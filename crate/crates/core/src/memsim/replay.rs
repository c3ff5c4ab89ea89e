use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::alloc::act_id;
use crate::golden::{run_layer, run_network_trace, IntTensor};
use crate::graph::{LayerSpec, NetworkGraph, QTensorSpec};
use crate::schedule::{l3_weight_id, Buffer, Event, KernelCall, Level, Schedule};

/// First differing element of a tile or of the network output.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mismatch {
    pub layer: String,
    /// Kernel call index within the layer, absent for the network output.
    pub tile: Option<usize>,
    /// Flat HWC index within the compared region.
    pub index: usize,
    pub expected: i32,
    pub actual: i32,
}

/// Byte images of the three memory levels.
pub struct Memory {
    levels: [Vec<u8>; 3],
}

fn level_index(l: Level) -> usize {
    match l {
        Level::L1 => 0,
        Level::L2 => 1,
        Level::L3 => 2,
    }
}

impl Memory {
    fn new(s: &Schedule) -> Memory {
        let mut size = [0usize; 3];
        for b in s.buffers.values() {
            let i = level_index(b.level);
            size[i] = size[i].max(b.offset + b.size);
        }
        Memory { levels: size.map(|n| vec![0u8; n]) }
    }

    fn slice(&self, b: &Buffer, off: usize, len: usize) -> &[u8] {
        let a = b.offset + off;
        &self.levels[level_index(b.level)][a..a + len]
    }

    fn write(&mut self, b: &Buffer, off: usize, data: &[u8]) {
        let a = b.offset + off;
        self.levels[level_index(b.level)][a..a + data.len()].copy_from_slice(data);
    }

    fn copy(&mut self, src: &Buffer, so: usize, dst: &Buffer, d_o: usize, len: usize) {
        let (si, di) = (level_index(src.level), level_index(dst.level));
        let (sa, da) = (src.offset + so, dst.offset + d_o);
        if si == di {
            self.levels[si].copy_within(sa..sa + len, da);
        } else {
            let tmp = self.levels[si][sa..sa + len].to_vec();
            self.levels[di][da..da + len].copy_from_slice(&tmp);
        }
    }
}

/// A layer narrowed to one tile: the tile's input window, padding, output
/// extent, weight slice and batch-norm slice.
pub fn tile_layer(layer: &LayerSpec, k: &KernelCall) -> LayerSpec {
    narrow(&strip(layer), layer, k)
}

/// Copy of `layer` without its weight payload and batch-norm vectors.
fn strip(layer: &LayerSpec) -> LayerSpec {
    let mut t = layer.clone();
    t.weights = None;
    t.bn = None;
    t
}

fn narrow(base: &LayerSpec, layer: &LayerSpec, k: &KernelCall) -> LayerSpec {
    let g = &k.geom;
    let mut t = base.clone();
    t.input_spec = QTensorSpec::activation(g.in_rows, g.in_cols, g.in_channels, layer.input_spec.quantum);
    t.output_spec = QTensorSpec::activation(g.rows, g.cols, g.channels, layer.output_spec.quantum);
    t.padding = g.padding;
    if let Some(w) = &layer.weight_spec {
        t.weight_spec = Some(QTensorSpec::weights(g.channels, layer.kernel_h, layer.kernel_w, layer.weight_cin(), w.quantum));
    }
    if let Some(bn) = &layer.bn {
        let r = g.out_ch..g.out_ch + g.channels;
        t.bn = Some(crate::graph::BatchNorm { kappa: bn.kappa[r.clone()].to_vec(), lambda: bn.lambda[r].to_vec() });
    }
    t
}

pub struct ReplayOutcome {
    pub output: IntTensor,
    pub mismatches: Vec<Mismatch>,
    pub tiles_checked: usize,
}

const MISMATCH_LIMIT: usize = 32;

/// Executes a hazard-free schedule on byte images of L1, L2 and L3.
///
/// Transfers copy data when issued, which is equivalent once the checker
/// has shown no access races with an in-flight transfer. Every kernel runs
/// the reference operator on the bytes it finds in L1 and is compared with
/// the matching region of the reference run.
pub fn replay(graph: &NetworkGraph, schedule: &Schedule, input: &IntTensor) -> Result<ReplayOutcome, SimError> {
    let trace = run_network_trace(graph, input)?;
    let layers: BTreeMap<&str, (&LayerSpec, LayerSpec)> = graph.layers.iter().map(|l| (l.id.as_str(), (l, strip(l)))).collect();
    let buf = |id: &str| schedule.buffers.get(id).ok_or_else(|| SimError::Missing(format!("buffer {id}")));
    let mut mem = Memory::new(schedule);
    for l in &graph.layers {
        if let (Some(w), Ok(b)) = (&l.weights, buf(&l3_weight_id(&l.id))) {
            let bytes: Vec<u8> = w.iter().map(|&v| v as u8).collect();
            mem.write(b, 0, &bytes);
        }
    }
    let input_buf = buf(&act_id(&graph.input_name))?;
    mem.write(input_buf, 0, &input.to_bytes());

    let mut mismatches = Vec::new();
    let mut tiles = 0usize;
    let mut per_layer: BTreeMap<&str, usize> = BTreeMap::new();
    for e in &schedule.events {
        match e {
            Event::DmaAsync { transfer, .. } => {
                let (s, d) = (buf(&transfer.src)?, buf(&transfer.dst)?);
                transfer.for_each_run(|so, d_o| mem.copy(s, so, d, d_o, transfer.len));
            }
            Event::KernelCall(k) => {
                let (layer, base) = layers.get(k.layer.as_str()).ok_or_else(|| SimError::Missing(format!("layer {}", k.layer)))?;
                let layer = *layer;
                let g = &k.geom;
                let t = narrow(base, layer, k);
                let x_len = g.in_rows * g.in_cols * g.in_channels;
                let mut xs = Vec::with_capacity(k.x.len());
                for id in &k.x {
                    let spec = t.input_spec.with_layout(g.x_layout);
                    let data = mem.slice(buf(id)?, 0, x_len).iter().map(|&v| i32::from(v)).collect();
                    xs.push(IntTensor::new(spec, data)?);
                }
                let mut t = t;
                if let Some(w) = &k.w {
                    let n = layer.weight_slice_bytes(g.channels);
                    t.weights = Some(mem.slice(buf(w)?, 0, n).iter().map(|&v| v as i8).collect());
                }
                let refs: Vec<&IntTensor> = xs.iter().collect();
                let y = run_layer(&t, &refs)?;
                let tile = per_layer.entry(layer.id.as_str()).or_insert(0);
                let expected = trace
                    .get(&layer.output)
                    .ok_or_else(|| SimError::Missing(format!("reference output {}", layer.output)))?
                    .window(g.out_row, g.out_col, g.out_ch, g.rows, g.cols, g.channels);
                if let Some(i) = (0..y.data.len()).find(|&i| y.data[i] != expected.data[i]) {
                    if mismatches.len() < MISMATCH_LIMIT {
                        mismatches.push(Mismatch {
                            layer: layer.id.clone(),
                            tile: Some(*tile),
                            index: i,
                            expected: expected.data[i],
                            actual: y.data[i],
                        });
                    }
                }
                *tile += 1;
                tiles += 1;
                mem.write(buf(&k.y)?, 0, &y.to_bytes());
            }
            Event::DmaWait { .. } | Event::Swap { .. } | Event::StackAlloc { .. } | Event::StackDealloc { .. } => {}
        }
    }

    let (h, w, c) = graph.output.hwc();
    let out_buf = buf(&act_id(&graph.output_name))?;
    let output = IntTensor::from_u8_hwc(h, w, c, graph.output.quantum, mem.slice(out_buf, 0, h * w * c))?;
    let expected = trace.get(&graph.output_name).ok_or_else(|| SimError::Missing(format!("reference output {}", graph.output_name)))?;
    if let Some(i) = (0..output.data.len()).find(|&i| output.data[i] != expected.data[i]) {
        mismatches.push(Mismatch {
            layer: graph.output_name.clone(),
            tile: None,
            index: i,
            expected: expected.data[i],
            actual: output.data[i],
        });
    }
    Ok(ReplayOutcome { output, mismatches, tiles_checked: tiles })
}
