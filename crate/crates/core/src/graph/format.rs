//! JSON network description: parsing into [`NetworkGraph`] and back.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::fuse::{fuse_nodes, FusedNode};
use super::layer::{output_extent, BatchNorm, LayerKind, LayerSpec, Padding, Quanta, Requant};
use super::tensor::{DimName, Layout, QTensorSpec};
use super::validate::validate_graph;
use super::{BlobSource, GraphError, NetworkGraph};
use crate::rational::Quantum;

/// Raw node operation names accepted in the `op` field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeOp {
    Conv,
    Depthwise,
    Pointwise,
    Linear,
    PoolAvg,
    PoolMax,
    Add,
    Bn,
    Quant,
}

impl NodeOp {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeOp::Conv => "conv",
            NodeOp::Depthwise => "depthwise",
            NodeOp::Pointwise => "pointwise",
            NodeOp::Linear => "linear",
            NodeOp::PoolAvg => "pool_avg",
            NodeOp::PoolMax => "pool_max",
            NodeOp::Add => "add",
            NodeOp::Bn => "bn",
            NodeOp::Quant => "quant",
        }
    }

    /// Ops with weights, the only ones batch norm may follow.
    pub fn is_linear(self) -> bool {
        matches!(self, NodeOp::Conv | NodeOp::Depthwise | NodeOp::Pointwise | NodeOp::Linear)
    }

    fn layer_kind(self) -> Option<LayerKind> {
        Some(match self {
            NodeOp::Conv => LayerKind::Conv,
            NodeOp::Depthwise => LayerKind::Depthwise,
            NodeOp::Pointwise => LayerKind::Pointwise,
            NodeOp::Linear => LayerKind::Linear,
            NodeOp::PoolAvg => LayerKind::PoolAvg,
            NodeOp::PoolMax => LayerKind::PoolMax,
            NodeOp::Add => LayerKind::Add,
            NodeOp::Bn | NodeOp::Quant => return None,
        })
    }

    fn from_kind(kind: LayerKind) -> NodeOp {
        match kind {
            LayerKind::Conv => NodeOp::Conv,
            LayerKind::Depthwise => NodeOp::Depthwise,
            LayerKind::Pointwise => NodeOp::Pointwise,
            LayerKind::Linear => NodeOp::Linear,
            LayerKind::PoolAvg => NodeOp::PoolAvg,
            LayerKind::PoolMax => NodeOp::PoolMax,
            LayerKind::Add => NodeOp::Add,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorDoc {
    /// Extents in memory order for `layout`.
    pub shape: Vec<usize>,
    pub layout: Layout,
    pub bits: u8,
    pub signed: bool,
    pub quantum: Quantum,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zero_point: Option<Quantum>,
    /// Blob file holding the payload (weights only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDoc {
    pub name: String,
    pub op: NodeOp,
    pub inputs: Vec<String>,
    pub output: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    /// `[top, bottom, left, right]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pads: Option<[usize; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<Vec<i32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<Vec<i32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_x: Option<Quantum>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_w: Option<Quantum>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_y: Option<Quantum>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch_requant: Option<Vec<Requant>>,
}

impl NodeDoc {
    pub fn new(name: &str, op: NodeOp, inputs: Vec<String>, output: &str) -> Self {
        NodeDoc {
            name: name.to_string(),
            op,
            inputs,
            output: output.to_string(),
            kernel: None,
            stride: None,
            pads: None,
            kappa: None,
            lambda: None,
            eps_x: None,
            eps_w: None,
            eps_y: None,
            m: None,
            d: None,
            branch_requant: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkDocument {
    pub tensors: BTreeMap<String, TensorDoc>,
    pub nodes: Vec<NodeDoc>,
    pub input: String,
    pub output: String,
}

fn schema(path: impl Into<String>, message: impl Into<String>) -> GraphError {
    GraphError::Schema { path: path.into(), message: message.into() }
}

fn tensor_spec(name: &str, doc: &TensorDoc) -> Result<QTensorSpec, GraphError> {
    let names: &[DimName] = match doc.layout {
        Layout::Hwc => &[DimName::H, DimName::W, DimName::Cx],
        Layout::Chw => &[DimName::Cx, DimName::H, DimName::W],
        Layout::CoHwCi => &[DimName::Cy, DimName::Kh, DimName::Kw, DimName::Cx],
    };
    if doc.shape.len() != names.len() {
        return Err(schema(
            format!("tensors.{name}.shape"),
            format!("{} layout needs {} extents, got {}", doc.layout.as_str(), names.len(), doc.shape.len()),
        ));
    }
    let spec = QTensorSpec {
        dims: names.iter().copied().zip(doc.shape.iter().copied()).collect(),
        layout: doc.layout,
        bits: doc.bits,
        signed: doc.signed,
        quantum: doc.quantum,
        zero_point_alpha: doc.zero_point.unwrap_or_else(Quantum::zero),
    };
    if let Some(v) = spec.violations().first() {
        return Err(schema(format!("tensors.{name}"), v.clone()));
    }
    Ok(spec)
}

/// Activation specs are stored in HWC regardless of the document layout.
fn activation_spec(name: &str, doc: &TensorDoc) -> Result<QTensorSpec, GraphError> {
    let spec = tensor_spec(name, doc)?;
    if spec.layout == Layout::CoHwCi || spec.bits != 8 {
        return Err(schema(format!("tensors.{name}"), "expected an 8-bit activation tensor"));
    }
    Ok(spec.with_layout(Layout::Hwc))
}

struct Builder<'a> {
    doc: &'a NetworkDocument,
    blobs: &'a dyn BlobSource,
    produced: BTreeSet<&'a str>,
}

impl Builder<'_> {
    fn activation(&self, node: &NodeDoc, tensor: &str) -> Result<QTensorSpec, GraphError> {
        let dangling = || GraphError::Dangling { node: node.name.clone(), tensor: tensor.to_string() };
        if tensor != self.doc.input && !self.produced.contains(tensor) {
            return Err(dangling());
        }
        let decl = self.doc.tensors.get(tensor).ok_or_else(dangling)?;
        activation_spec(tensor, decl)
    }

    fn layer(&self, f: &FusedNode) -> Result<LayerSpec, GraphError> {
        let op = &f.op;
        let kind = op.op.layer_kind().expect("fusion yields op nodes");
        let qpath = |field: &str| format!("nodes.{}.{field}", f.quant.name);
        let weighted = kind.has_weights();
        let arity = if weighted || kind == LayerKind::Add { 2 } else { 1 };
        if op.inputs.len() != arity {
            return Err(schema(
                format!("nodes.{}.inputs", op.name),
                format!("`{}` takes {arity} inputs, got {}", op.op.as_str(), op.inputs.len()),
            ));
        }
        let act_inputs: Vec<String> = if weighted { vec![op.inputs[0].clone()] } else { op.inputs.clone() };
        let input_spec = self.activation(op, &act_inputs[0])?;
        for extra in &act_inputs[1..] {
            self.activation(op, extra)?;
        }

        let (weight_spec, weight_name, weight_blob, weights) = if weighted {
            let wname = &op.inputs[1];
            let decl = self.doc.tensors.get(wname).ok_or_else(|| GraphError::Dangling { node: op.name.clone(), tensor: wname.clone() })?;
            let spec = tensor_spec(wname, decl)?;
            if spec.layout != Layout::CoHwCi {
                return Err(schema(format!("tensors.{wname}.layout"), "weights must be CoHWCi"));
            }
            let blob = decl.data.clone().ok_or_else(|| schema(format!("tensors.{wname}.data"), "missing weight blob"))?;
            let bytes = self.blobs.load(&blob).map_err(|message| GraphError::Blob { blob: blob.clone(), message })?;
            if bytes.len() != spec.byte_size() {
                return Err(GraphError::Blob {
                    blob,
                    message: format!("length {} does not match {} bytes of tensor `{wname}`", bytes.len(), spec.byte_size()),
                });
            }
            let data = bytes.iter().map(|&b| b as i8).collect();
            (Some(spec), Some(wname.clone()), Some(blob), Some(data))
        } else {
            (None, None, None, None)
        };

        let (kernel_h, kernel_w) = match (&weight_spec, op.kernel) {
            (Some(w), k) => {
                let kh = w.extent(DimName::Kh).unwrap_or(0);
                let kw = w.extent(DimName::Kw).unwrap_or(0);
                if let Some([a, b]) = k {
                    if (a, b) != (kh, kw) {
                        return Err(schema(
                            format!("nodes.{}.kernel", op.name),
                            format!("kernel [{a}, {b}] disagrees with weight shape {kh}x{kw}"),
                        ));
                    }
                }
                (kh, kw)
            }
            (None, Some([a, b])) => (a, b),
            (None, None) if kind == LayerKind::Add => (1, 1),
            (None, None) => return Err(schema(format!("nodes.{}.kernel", op.name), "missing field")),
        };
        let stride = op.stride.unwrap_or(1);
        let [top, bottom, left, right] = op.pads.unwrap_or([0; 4]);
        let padding = Padding { top, bottom, left, right };

        let out_name = &f.quant.output;
        let out_decl =
            self.doc.tensors.get(out_name).ok_or_else(|| schema(format!("tensors.{out_name}"), "quant output must be declared"))?;
        let output_spec = activation_spec(out_name, out_decl)?;

        let (h_x, w_x, c_x) = input_spec.hwc();
        let (h_y, w_y, c_y) = output_spec.hwc();
        let geometry = |equation: String| GraphError::Geometry { layer: op.name.clone(), equation };
        let eh = output_extent(h_x, kernel_h, top, bottom, stride);
        if eh != Some(h_y) {
            return Err(geometry(format!(
                "h_y = floor((h_x - K_h + p_top + p_bot) / s) + 1 = floor(({h_x} - {kernel_h} + {top} + {bottom}) / {stride}) + 1 gives {}, declared {h_y}",
                eh.map_or("no valid window".to_string(), |v| v.to_string())
            )));
        }
        let ew = output_extent(w_x, kernel_w, left, right, stride);
        if ew != Some(w_y) {
            return Err(geometry(format!(
                "w_y = floor((w_x - K_w + p_left + p_right) / s) + 1 = floor(({w_x} - {kernel_w} + {left} + {right}) / {stride}) + 1 gives {}, declared {w_y}",
                ew.map_or("no valid window".to_string(), |v| v.to_string())
            )));
        }
        let expected_cy = match &weight_spec {
            Some(w) if kind != LayerKind::Depthwise => w.extent(DimName::Cy).unwrap_or(0),
            _ => c_x,
        };
        if expected_cy != c_y {
            return Err(geometry(format!("C_y = {expected_cy} expected from the {} op, declared {c_y}", kind.as_str())));
        }

        let bn = match &f.bn {
            Some(b) => {
                let kappa = b.kappa.clone().ok_or_else(|| schema(format!("nodes.{}.kappa", b.name), "missing field"))?;
                let lambda = b.lambda.clone().ok_or_else(|| schema(format!("nodes.{}.lambda", b.name), "missing field"))?;
                Some(BatchNorm { kappa, lambda })
            }
            None => None,
        };
        let q = &f.quant;
        let m = q.m.ok_or_else(|| schema(qpath("m"), "missing field"))?;
        let d = q.d.ok_or_else(|| schema(qpath("d"), "missing field"))?;
        let branch_requant = match kind {
            LayerKind::Add => op.branch_requant.clone().unwrap_or_else(|| vec![Requant::IDENTITY; 2]),
            _ => Vec::new(),
        };
        Ok(LayerSpec {
            id: op.name.clone(),
            kind,
            inputs: act_inputs,
            output: out_name.clone(),
            quanta: Quanta {
                eps_x: q.eps_x.unwrap_or(input_spec.quantum),
                eps_w: q.eps_w.or(weight_spec.as_ref().map(|w| w.quantum)),
                eps_y: q.eps_y.unwrap_or(output_spec.quantum),
            },
            input_spec,
            output_spec,
            weight_spec,
            weight_name,
            weight_blob,
            weights,
            kernel_h,
            kernel_w,
            stride,
            padding,
            bn,
            requant: Requant { m, d },
            branch_requant,
            residual_inputs: Vec::new(),
            activation_lifetime: 0,
        })
    }
}

/// Layers downstream of `start` along single-producer, single-consumer links.
fn branch_length(layers: &[LayerSpec], start: usize) -> usize {
    let mut len = 1;
    let mut cur = start;
    loop {
        let consumers: Vec<usize> = (0..layers.len()).filter(|&j| layers[j].inputs.contains(&layers[cur].output)).collect();
        if consumers.len() != 1 || layers[consumers[0]].inputs.len() != 1 {
            return len;
        }
        cur = consumers[0];
        len += 1;
        if len > layers.len() {
            return len;
        }
    }
}

/// Topological order preferring the longest pending branch, then the branch
/// currently being executed, then document order.
fn schedule_order(layers: &[LayerSpec], input: &str) -> Option<Vec<usize>> {
    let n = layers.len();
    let mut done = vec![false; n];
    let mut available: BTreeSet<&str> = BTreeSet::new();
    available.insert(input);
    let mut order = Vec::with_capacity(n);
    let mut last: Option<usize> = None;
    while order.len() < n {
        let best = (0..n).filter(|&i| !done[i] && layers[i].inputs.iter().all(|t| available.contains(t.as_str()))).max_by_key(|&i| {
            let continues = last.is_some_and(|l| layers[i].inputs.contains(&layers[l].output));
            (branch_length(layers, i), continues, std::cmp::Reverse(i))
        })?;
        done[best] = true;
        available.insert(&layers[best].output);
        order.push(best);
        last = Some(best);
    }
    Some(order)
}

/// Parses a network document, resolving weight blobs through `blobs`.
pub fn parse_network(document: &str, blobs: &dyn BlobSource) -> Result<NetworkGraph, GraphError> {
    let de = &mut serde_json::Deserializer::from_str(document);
    let doc: NetworkDocument = serde_path_to_error::deserialize(de)
        .map_err(|e| GraphError::Schema { path: e.path().to_string(), message: e.into_inner().to_string() })?;
    build_graph(&doc, blobs)
}

pub(crate) fn build_graph(doc: &NetworkDocument, blobs: &dyn BlobSource) -> Result<NetworkGraph, GraphError> {
    let input_decl = doc.tensors.get(&doc.input).ok_or_else(|| schema("input", format!("tensor `{}` is not declared", doc.input)))?;
    let input = activation_spec(&doc.input, input_decl)?;

    let mut seen = BTreeSet::new();
    for n in &doc.nodes {
        if !seen.insert(n.name.as_str()) {
            return Err(schema(format!("nodes.{}", n.name), "duplicate node name"));
        }
    }
    let fused = fuse_nodes(&doc.nodes)?;
    let builder = Builder { doc, blobs, produced: fused.iter().map(|f| f.quant.output.as_str()).collect() };
    let layers = fused.iter().map(|f| builder.layer(f)).collect::<Result<Vec<_>, _>>()?;
    if !layers.iter().any(|l| l.output == doc.output) {
        return Err(GraphError::Dangling { node: "output".to_string(), tensor: doc.output.clone() });
    }
    let order = schedule_order(&layers, &doc.input).ok_or_else(|| {
        GraphError::Invalid(vec![super::Diagnostic {
            layer: None,
            message: "layers form a cycle or consume unavailable tensors".to_string(),
        }])
    })?;
    let mut slots: Vec<Option<LayerSpec>> = layers.into_iter().map(Some).collect();
    let layers = order.iter().map(|&i| slots[i].take().expect("order is a permutation")).collect();
    let output = doc
        .tensors
        .get(&doc.output)
        .map(|d| activation_spec(&doc.output, d))
        .transpose()?
        .expect("output was produced by a declared quant output");
    let mut graph =
        NetworkGraph { layers, edges: Vec::new(), input_name: doc.input.clone(), input, output_name: doc.output.clone(), output };
    graph.refresh_derived();
    let diags = validate_graph(&graph);
    if !diags.is_empty() {
        return Err(GraphError::Invalid(diags));
    }
    Ok(graph)
}

fn tensor_doc(spec: &QTensorSpec, data: Option<String>) -> TensorDoc {
    TensorDoc {
        shape: spec.dims.iter().map(|d| d.1).collect(),
        layout: spec.layout,
        bits: spec.bits,
        signed: spec.signed,
        quantum: spec.quantum,
        zero_point: (!spec.zero_point_alpha.is_zero()).then_some(spec.zero_point_alpha),
        data,
    }
}

/// Serializes a graph into a document plus its weight blobs.
pub fn to_document(graph: &NetworkGraph) -> (NetworkDocument, BTreeMap<String, Vec<u8>>) {
    let mut tensors = BTreeMap::new();
    let mut blobs = BTreeMap::new();
    let mut nodes = Vec::new();
    tensors.insert(graph.input_name.clone(), tensor_doc(&graph.input, None));
    for l in &graph.layers {
        let mut op = NodeDoc::new(&l.id, NodeOp::from_kind(l.kind), l.inputs.clone(), &format!("{}.acc", l.id));
        if let (Some(spec), Some(data)) = (&l.weight_spec, &l.weights) {
            let wname = l.weight_name.clone().unwrap_or_else(|| format!("{}.w", l.id));
            let blob = l.weight_blob.clone().unwrap_or_else(|| format!("{}.w.bin", l.id));
            tensors.insert(wname.clone(), tensor_doc(spec, Some(blob.clone())));
            blobs.insert(blob, data.iter().map(|&v| v as u8).collect());
            op.inputs.push(wname);
        }
        op.kernel = Some([l.kernel_h, l.kernel_w]);
        op.stride = Some(l.stride);
        let p = l.padding;
        op.pads = Some([p.top, p.bottom, p.left, p.right]);
        if l.kind == LayerKind::Add {
            op.branch_requant = Some(l.branch_requant.clone());
        }
        let mut last = op.output.clone();
        nodes.push(op);
        if let Some(bn) = &l.bn {
            let mut b = NodeDoc::new(&format!("{}.bn", l.id), NodeOp::Bn, vec![last], &format!("{}.bn_out", l.id));
            b.kappa = Some(bn.kappa.clone());
            b.lambda = Some(bn.lambda.clone());
            last = b.output.clone();
            nodes.push(b);
        }
        let mut q = NodeDoc::new(&format!("{}.quant", l.id), NodeOp::Quant, vec![last], &l.output);
        q.eps_x = Some(l.quanta.eps_x);
        q.eps_w = l.quanta.eps_w;
        q.eps_y = Some(l.quanta.eps_y);
        q.m = Some(l.requant.m);
        q.d = Some(l.requant.d);
        nodes.push(q);
        tensors.insert(l.output.clone(), tensor_doc(&l.output_spec, None));
    }
    let doc = NetworkDocument { tensors, nodes, input: graph.input_name.clone(), output: graph.output_name.clone() };
    (doc, blobs)
}
