use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::types::{Buffer, Channel, Event, Level, Schedule, Transfer};
use crate::alloc::AllocationPlan;
use crate::graph::NetworkGraph;
use crate::tiler::NetworkTiling;

/// Hardware-abstraction header shared by every emitted file.
pub const HAL_HEADER: &str = r#"#ifndef TILEFLOW_HAL_H
#define TILEFLOW_HAL_H

#include <stddef.h>
#include <stdint.h>

/* One stride level of a DMA descriptor, innermost first. */
typedef struct {
    uint32_t count;
    uint32_t src_stride;
    uint32_t dst_stride;
} tf_stride_t;

#define TF_CH_L3L2 0
#define TF_CH_L2L1 1

/* Base of the off-chip memory; a device runtime maps it, the simulator stub
   points it at a host array. */
#ifndef TF_L3_BASE
extern uint8_t *tf_l3_base;
#define TF_L3_BASE tf_l3_base
#endif

#define TF_L1(off) (l1_buffer + (off))
#define TF_L2(off) (l2_buffer + (off))
#define TF_L3(off) (TF_L3_BASE + (off))

/* Copies `len` bytes per run over `ndims` stride levels and returns at once.
   Transfer `id` completes at the matching DMA_WAIT. */
#ifndef DMA_2D_ASYNC
void tf_dma_async(uint32_t id, int channel, uint8_t *dst, const uint8_t *src, uint32_t len,
                  const tf_stride_t *dims, uint32_t ndims);
#define DMA_2D_ASYNC(id, ch, dst, src, len, dims, ndims) tf_dma_async((id), (ch), (dst), (src), (len), (dims), (ndims))
#endif

#ifndef DMA_WAIT
void tf_dma_wait(uint32_t id, int channel);
#define DMA_WAIT(id, ch) tf_dma_wait((id), (ch))
#endif

/* Runs one tile of a layer. Tile geometry is rows, cols, channels of the
   output, then input rows, cols, channels, the first output channel and the
   four paddings. */
#ifndef KERNEL_CALL
#define KERNEL_CALL(fn, layer, tile, x, x2, w, y, scratch, geom) fn((layer), (tile), (x), (x2), (w), (y), (scratch), (geom))
#endif

/* Exchanges the roles of a double buffer; addresses are static, so the
   default does nothing. */
#ifndef TF_SWAP
#define TF_SWAP(a, b) ((void)0)
#endif

typedef void (*tf_kernel_fn)(uint32_t layer, uint32_t tile, const uint8_t *x, const uint8_t *x2, const int8_t *w,
                             uint8_t *y, uint8_t *scratch, const uint16_t *geom);

void tf_kernel_conv(uint32_t, uint32_t, const uint8_t *, const uint8_t *, const int8_t *, uint8_t *, uint8_t *, const uint16_t *);
void tf_kernel_depthwise(uint32_t, uint32_t, const uint8_t *, const uint8_t *, const int8_t *, uint8_t *, uint8_t *, const uint16_t *);
void tf_kernel_pointwise(uint32_t, uint32_t, const uint8_t *, const uint8_t *, const int8_t *, uint8_t *, uint8_t *, const uint16_t *);
void tf_kernel_linear(uint32_t, uint32_t, const uint8_t *, const uint8_t *, const int8_t *, uint8_t *, uint8_t *, const uint16_t *);
void tf_kernel_pool_avg(uint32_t, uint32_t, const uint8_t *, const uint8_t *, const int8_t *, uint8_t *, uint8_t *, const uint16_t *);
void tf_kernel_pool_max(uint32_t, uint32_t, const uint8_t *, const uint8_t *, const int8_t *, uint8_t *, uint8_t *, const uint16_t *);
void tf_kernel_add(uint32_t, uint32_t, const uint8_t *, const uint8_t *, const int8_t *, uint8_t *, uint8_t *, const uint16_t *);

#endif
"#;

/// Emitted sources keyed by file name, plus the manifest.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceBundle {
    pub files: BTreeMap<String, String>,
    pub manifest: Manifest,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerFootprint {
    pub layer: String,
    pub file: String,
    pub function: String,
    pub l1_bytes: usize,
    pub l2_bytes: usize,
    pub kernel_calls: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub network_function: String,
    pub layers: Vec<LayerFootprint>,
    pub l1_peak: usize,
    pub l2_peak: usize,
    pub l3_used: usize,
    pub kernel_calls: usize,
    pub warnings: Vec<String>,
}

pub fn c_ident(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect()
}

fn addr(b: &Buffer, off: usize) -> String {
    let m = match b.level {
        Level::L1 => "TF_L1",
        Level::L2 => "TF_L2",
        Level::L3 => "TF_L3",
    };
    format!("{m}({})", b.offset + off)
}

fn ch(c: Channel) -> &'static str {
    match c {
        Channel::L3l2 => "TF_CH_L3L2",
        Channel::L2l1 => "TF_CH_L2L1",
    }
}

fn dims_decl(id: u64, t: &Transfer) -> String {
    if t.dims.is_empty() {
        return String::new();
    }
    let items: Vec<String> = t.dims.iter().map(|d| format!("{{{}, {}, {}}}", d.count, d.src, d.dst)).collect();
    format!("    static const tf_stride_t d{id}[{}] = {{{}}};\n", t.dims.len(), items.join(", "))
}

fn statement(s: &Schedule, layer_index: &BTreeMap<&str, usize>, kinds: &BTreeMap<&str, &str>, e: &Event, out: &mut String) {
    let buf = |id: &str| &s.buffers[id];
    match e {
        Event::DmaAsync { id, channel, transfer: t, .. } => {
            out.push_str(&dims_decl(*id, t));
            let dims = if t.dims.is_empty() { "NULL".to_string() } else { format!("d{id}") };
            let _ = writeln!(
                out,
                "    DMA_2D_ASYNC({id}, {}, {}, {}, {}, {dims}, {});",
                ch(*channel),
                addr(buf(&t.dst), t.dst_offset),
                addr(buf(&t.src), t.src_offset),
                t.len,
                t.dims.len()
            );
        }
        Event::DmaWait { id, channel, .. } => {
            let _ = writeln!(out, "    DMA_WAIT({id}, {});", ch(*channel));
        }
        Event::KernelCall(k) => {
            let g = &k.geom;
            let p = g.padding;
            let slot = |id: Option<&String>| id.map_or("NULL".to_string(), |i| addr(buf(i), 0));
            let geom = [g.rows, g.cols, g.channels, g.in_rows, g.in_cols, g.in_channels, g.out_ch, p.top, p.bottom, p.left, p.right];
            let geom: Vec<String> = geom.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(
                out,
                "    {{\n        static const uint16_t g[11] = {{{}}};\n        KERNEL_CALL(tf_kernel_{}, {}, {}, {}, {}, (const int8_t *){}, {}, {}, g);\n    }}",
                geom.join(", "),
                kinds[k.layer.as_str()],
                layer_index[k.layer.as_str()],
                k.tile,
                slot(k.x.first()),
                slot(k.x.get(1)),
                slot(k.w.as_ref()),
                addr(buf(&k.y), 0),
                slot(k.scratch.as_ref()),
            );
        }
        Event::Swap { a, b } => {
            let _ = writeln!(out, "    TF_SWAP({}, {});", addr(buf(a), 0), addr(buf(b), 0));
        }
        Event::StackAlloc { id, offset, size } => {
            let _ = writeln!(out, "    /* stack alloc {id} [{offset}, {}) */", offset + size);
        }
        Event::StackDealloc { id, offset, size } => {
            let _ = writeln!(out, "    /* stack free {id} [{offset}, {}) */", offset + size);
        }
    }
}

const SIGNATURE: &str = "uint8_t *l1_buffer, size_t l1_size, uint8_t *l2_buffer, size_t l2_size";

/// C orchestration sources mirroring `schedule` statement for statement.
///
/// Each layer becomes one translation unit; the network function runs the
/// stack prologue, every layer and the final cleanup in schedule order.
pub fn emit_c(graph: &NetworkGraph, _tiling: &NetworkTiling, plan: &AllocationPlan, schedule: &Schedule) -> SourceBundle {
    let layer_index: BTreeMap<&str, usize> = graph.layers.iter().enumerate().map(|(i, l)| (l.id.as_str(), i)).collect();
    let kinds: BTreeMap<&str, &str> = graph.layers.iter().map(|l| (l.id.as_str(), l.kind.as_str())).collect();
    let mut files = BTreeMap::new();
    files.insert("tileflow_hal.h".to_string(), HAL_HEADER.to_string());
    let mut manifest = Manifest {
        network_function: "tileflow_network".to_string(),
        l2_peak: plan.peak_usage,
        l3_used: plan.l3.used,
        ..Default::default()
    };
    let mut net = String::new();
    let _ = writeln!(net, "#include \"tileflow_hal.h\"\n");
    let mut decls = String::new();
    let mut body = String::new();
    let mut cursor = 0;
    for (i, span) in schedule.layers.iter().enumerate() {
        for e in &schedule.events[cursor..span.start] {
            statement(schedule, &layer_index, &kinds, e, &mut body);
        }
        cursor = span.end;
        let func = format!("layer_{}", c_ident(&span.layer));
        let file = format!("{func}.c");
        let mut src = String::new();
        let _ = writeln!(src, "#include \"tileflow_hal.h\"\n");
        let _ = writeln!(src, "void {func}({SIGNATURE})\n{{\n    (void)l1_size;\n    (void)l2_size;");
        for e in &schedule.events[span.start..span.end] {
            statement(schedule, &layer_index, &kinds, e, &mut src);
        }
        src.push_str("}\n");
        files.insert(file.clone(), src);
        let _ = writeln!(decls, "void {func}({SIGNATURE});");
        let _ = writeln!(body, "    {func}(l1_buffer, l1_size, l2_buffer, l2_size);");
        let l1_bytes = schedule
            .buffers
            .values()
            .filter(|b| b.level == Level::L1 && b.id.starts_with(&format!("l1/{}/", span.layer)))
            .map(|b| b.offset + b.size)
            .max()
            .unwrap_or(0);
        let la = &plan.layers[i];
        let l2_bytes = la.inputs.iter().map(|r| r.size).sum::<usize>() + la.output.size + la.weights.map_or(0, |r| r.size);
        manifest.l1_peak = manifest.l1_peak.max(l1_bytes);
        manifest.kernel_calls += span.kernel_calls;
        manifest.layers.push(LayerFootprint {
            layer: span.layer.clone(),
            file,
            function: func,
            l1_bytes,
            l2_bytes,
            kernel_calls: span.kernel_calls,
        });
    }
    for e in &schedule.events[cursor..] {
        statement(schedule, &layer_index, &kinds, e, &mut body);
    }
    let _ = writeln!(net, "{decls}");
    let _ = writeln!(
        net,
        "/* Runs the whole network. The input must already sit at L2 offset {} and the\n   output is left at L2 offset {}. */",
        plan.buffers.get(&crate::alloc::act_id(&graph.input_name)).map_or(0, |r| r.offset),
        plan.buffers.get(&crate::alloc::act_id(&graph.output_name)).map_or(0, |r| r.offset),
    );
    let _ = writeln!(
        net,
        "int tileflow_network({SIGNATURE})\n{{\n    if (l1_size < {} || l2_size < {})\n        return -1;",
        manifest.l1_peak, plan.capacity
    );
    net.push_str(&body);
    net.push_str("    return 0;\n}\n");
    files.insert("network.c".to_string(), net);
    SourceBundle { files, manifest }
}
