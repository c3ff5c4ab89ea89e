//! Tiling, buffer allocation, DMA scheduling and simulation for quantized
//! neural networks on microcontrollers with a three-level scratchpad hierarchy.

pub mod alloc;
pub mod fixtures;
pub mod golden;
pub mod graph;
pub mod memsim;
pub mod pipeline;
pub mod rational;
pub mod schedule;
pub mod tiler;

pub use golden::{run_layer, run_network, IntTensor};
pub use graph::{parse_network, LayerKind, LayerSpec, NetworkGraph, QTensorSpec};
pub use pipeline::{compile, CompileError, Compiled};
pub use rational::{Quantum, Score};
