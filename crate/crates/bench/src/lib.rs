//! Workloads shared by the benchmarks in `benches/`.

use tileflow_core::fixtures::{conv_chain, mobilenet_v1, random_input};
use tileflow_core::tiler::MemoryHierarchy;
use tileflow_core::{IntTensor, NetworkGraph};

/// A named network with the memory it is compiled for and an input.
pub struct Workload {
    pub name: &'static str,
    pub graph: NetworkGraph,
    pub mem: MemoryHierarchy,
    pub input: IntTensor,
}

fn workload(name: &'static str, graph: NetworkGraph, mem: MemoryHierarchy) -> Workload {
    let input = random_input(&graph, 0);
    Workload { name, graph, mem, input }
}

/// Small enough to simulate inside a benchmark iteration.
pub fn small() -> Vec<Workload> {
    vec![
        workload("conv_chain_16", conv_chain(3, 16, 16, 8, 3), MemoryHierarchy::with_sizes(4 << 10, 512 << 10, 8 << 20)),
        workload("mobilenet_32", mobilenet_v1(1, 32), MemoryHierarchy::default()),
    ]
}

/// MobileNet-v1 at 128x128 with 512 kB and 256 kB of L2.
pub fn mobilenet_128() -> Vec<Workload> {
    let g = mobilenet_v1(1, 128);
    vec![
        workload("mobilenet_128_l2_512k", g.clone(), MemoryHierarchy::with_sizes(64 << 10, 512 << 10, 8 << 20)),
        workload("mobilenet_128_l2_256k", g, MemoryHierarchy::with_sizes(64 << 10, 256 << 10, 8 << 20)),
    ]
}
