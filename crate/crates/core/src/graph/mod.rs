//! Network intermediate representation: tensors, fused layers and the graph.

mod format;
mod fuse;
mod layer;
mod tensor;
mod validate;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use format::{parse_network, to_document, NetworkDocument, NodeDoc, NodeOp, TensorDoc};
pub use fuse::{fuse_nodes, FusedNode};
pub use layer::{output_extent, BatchNorm, LayerKind, LayerSpec, Padding, Quanta, Requant};
pub use tensor::{DimName, Layout, QTensorSpec};
pub use validate::validate_graph;

/// Data flow from one layer to another through a named tensor.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub producer: usize,
    pub consumer: usize,
    pub tensor: String,
}

/// A topologically ordered list of fused layers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkGraph {
    pub layers: Vec<LayerSpec>,
    pub edges: Vec<Edge>,
    pub input_name: String,
    pub input: QTensorSpec,
    pub output_name: String,
    pub output: QTensorSpec,
}

impl NetworkGraph {
    /// Index of the layer producing `tensor`, `None` for the network input.
    pub fn producer_of(&self, tensor: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.output == tensor)
    }

    pub fn consumers_of(&self, layer: usize) -> Vec<usize> {
        let name = &self.layers[layer].output;
        self.consumers_of_tensor(name)
    }

    pub fn consumers_of_tensor(&self, tensor: &str) -> Vec<usize> {
        self.layers.iter().enumerate().filter(|(_, l)| l.inputs.iter().any(|i| i == tensor)).map(|(j, _)| j).collect()
    }

    /// Last layer reading `tensor`, if any.
    pub fn last_consumer(&self, tensor: &str) -> Option<usize> {
        self.consumers_of_tensor(tensor).into_iter().max()
    }

    pub fn layer_index(&self, id: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.id == id)
    }

    /// Spec of any activation tensor (network input or a layer output).
    pub fn tensor_spec(&self, name: &str) -> Option<&QTensorSpec> {
        if name == self.input_name {
            return Some(&self.input);
        }
        self.layers.iter().find(|l| l.output == name).map(|l| &l.output_spec)
    }

    /// Rebuilds `edges` from the tensor names of the layers.
    pub fn derive_edges(layers: &[LayerSpec]) -> Vec<Edge> {
        let mut edges = Vec::new();
        for (c, l) in layers.iter().enumerate() {
            for t in &l.inputs {
                if let Some(p) = layers.iter().position(|q| &q.output == t) {
                    edges.push(Edge { producer: p, consumer: c, tensor: t.clone() });
                }
            }
        }
        edges.sort();
        edges
    }

    /// Recomputes lifetimes and residual producer ids from the current order.
    pub fn refresh_derived(&mut self) {
        let n = self.layers.len();
        self.edges = Self::derive_edges(&self.layers);
        for i in 0..n {
            let out = self.layers[i].output.clone();
            let last = self.last_consumer(&out);
            let mut lifetime = match last {
                Some(j) if j > i => (j - i + 1) as u32,
                _ => 1,
            };
            if out == self.output_name {
                lifetime = lifetime.max((n - i + 1) as u32);
            }
            self.layers[i].activation_lifetime = lifetime;
            if self.layers[i].kind == LayerKind::Add {
                let ids = self.layers[i]
                    .inputs
                    .iter()
                    .map(|t| match self.producer_of(t) {
                        Some(p) => self.layers[p].id.clone(),
                        None => t.clone(),
                    })
                    .collect();
                self.layers[i].residual_inputs = ids;
            }
        }
    }
}

/// A validation finding tied to a layer where applicable.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub layer: Option<String>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.layer {
            Some(l) => write!(f, "layer `{l}`: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("schema violation at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("layer `{layer}`: geometric inconsistency, {equation}")]
    Geometry { layer: String, equation: String },
    #[error("dangling tensor reference `{tensor}` in node `{node}`")]
    Dangling { node: String, tensor: String },
    #[error("node `{node}`: {message}")]
    Fusion { node: String, message: String },
    #[error("weight blob `{blob}`: {message}")]
    Blob { blob: String, message: String },
    #[error("graph is invalid: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Diagnostic>),
}

/// Source of raw weight payloads referenced by the network document.
pub trait BlobSource {
    fn load(&self, name: &str) -> Result<Vec<u8>, String>;
}

/// Blobs read from files in a directory.
#[derive(Clone, Debug)]
pub struct DirBlobs(pub PathBuf);

impl BlobSource for DirBlobs {
    fn load(&self, name: &str) -> Result<Vec<u8>, String> {
        let path = self.0.join(name);
        std::fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))
    }
}

impl BlobSource for BTreeMap<String, Vec<u8>> {
    fn load(&self, name: &str) -> Result<Vec<u8>, String> {
        self.get(name).cloned().ok_or_else(|| format!("no blob named `{name}`"))
    }
}
