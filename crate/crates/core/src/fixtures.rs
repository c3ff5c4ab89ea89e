//! Deterministic network builders used by tests, benches and the CLI `gen` command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::golden::IntTensor;
use crate::graph::{parse_network, to_document, BatchNorm, LayerKind, LayerSpec, NetworkGraph, Padding, QTensorSpec, Quanta, Requant};
use crate::rational::Quantum;

fn act_quantum() -> Quantum {
    Quantum::new(1, 255)
}

fn weight_quantum() -> Quantum {
    Quantum::new(1, 128)
}

/// A layer without meaningful parameters, for exercising single operators.
pub fn bare_layer(
    kind: LayerKind,
    (h, w, c_x): (usize, usize, usize),
    c_y: usize,
    (kh, kw): (usize, usize),
    stride: usize,
    padding: Padding,
) -> LayerSpec {
    let h_y = crate::graph::output_extent(h, kh, padding.top, padding.bottom, stride).expect("kernel fits");
    let w_y = crate::graph::output_extent(w, kw, padding.left, padding.right, stride).expect("kernel fits");
    let cin = if kind.reduces_channels() { c_x } else { 1 };
    let weight_spec = kind.has_weights().then(|| QTensorSpec::weights(c_y, kh, kw, cin, weight_quantum()));
    let weights = weight_spec.as_ref().map(|s| vec![0i8; s.byte_size()]);
    LayerSpec {
        id: format!("{}_bare", kind.as_str()),
        kind,
        inputs: if kind == LayerKind::Add { vec!["x".into(), "x2".into()] } else { vec!["x".into()] },
        output: "y".into(),
        input_spec: QTensorSpec::activation(h, w, c_x, act_quantum()),
        output_spec: QTensorSpec::activation(h_y, w_y, c_y, act_quantum()),
        weight_spec,
        weight_name: None,
        weight_blob: None,
        weights,
        kernel_h: kh,
        kernel_w: kw,
        stride,
        padding,
        bn: None,
        requant: Requant::IDENTITY,
        branch_requant: if kind == LayerKind::Add { vec![Requant::IDENTITY; 2] } else { Vec::new() },
        quanta: Quanta { eps_x: act_quantum(), eps_w: kind.has_weights().then(weight_quantum), eps_y: act_quantum() },
        residual_inputs: Vec::new(),
        activation_lifetime: 1,
    }
}

/// Incremental network construction with random weights and requantization
/// parameters scaled to keep outputs spread over the 8-bit range.
pub struct NetBuilder {
    rng: ChaCha8Rng,
    layers: Vec<LayerSpec>,
    input: QTensorSpec,
}

impl NetBuilder {
    pub const INPUT: &'static str = "input";

    pub fn new(seed: u64, h: usize, w: usize, c: usize) -> Self {
        NetBuilder { rng: ChaCha8Rng::seed_from_u64(seed), layers: Vec::new(), input: QTensorSpec::activation(h, w, c, act_quantum()) }
    }

    pub fn input_name(&self) -> String {
        Self::INPUT.to_string()
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn shape(&self, tensor: &str) -> (usize, usize, usize) {
        if tensor == Self::INPUT {
            return self.input.hwc();
        }
        self.layers.iter().find(|l| l.output == tensor).map(|l| l.output_spec.hwc()).expect("known tensor")
    }

    fn push(&mut self, mut layer: LayerSpec, from: &[&str]) -> String {
        let n = self.layers.len();
        layer.id = format!("L{n}_{}", layer.kind.as_str());
        layer.output = format!("y{n}");
        layer.inputs = from.iter().map(|s| s.to_string()).collect();
        if layer.kind.has_weights() {
            layer.weight_name = Some(format!("{}.w", layer.id));
            layer.weight_blob = Some(format!("{}.w.bin", layer.id));
        }
        let out = layer.output.clone();
        self.layers.push(layer);
        out
    }

    fn weighted(&mut self, kind: LayerKind, from: &str, c_y: usize, (kh, kw): (usize, usize), stride: usize, pad: Padding) -> String {
        let shape = self.shape(from);
        let mut l = bare_layer(kind, shape, c_y, (kh, kw), stride, pad);
        let rng = &mut self.rng;
        let n = l.weight_bytes();
        l.weights = Some((0..n).map(|_| rng.gen_range(-128i32..=127) as i8).collect());
        let fan_in = (kh * kw * l.weight_cin()) as f64;
        let spread = fan_in.sqrt() * 11_000.0;
        let c = l.c_y();
        let kappa = (0..c).map(|_| rng.gen_range(1..=4)).collect();
        let lim = spread as i32;
        let lambda = (0..c).map(|_| rng.gen_range(-lim..=lim)).collect();
        l.bn = Some(BatchNorm { kappa, lambda });
        let m: i32 = rng.gen_range(1..=8);
        let d = ((f64::from(m) * spread * 2.5 / 128.0).log2().ceil().max(0.0)) as u32;
        l.requant = Requant { m, d: d.min(31) };
        self.push(l, &[from])
    }

    pub fn conv(&mut self, from: &str, c_y: usize, k: usize, stride: usize, pad: Padding) -> String {
        self.weighted(LayerKind::Conv, from, c_y, (k, k), stride, pad)
    }

    pub fn depthwise(&mut self, from: &str, k: usize, stride: usize, pad: Padding) -> String {
        let c = self.shape(from).2;
        self.weighted(LayerKind::Depthwise, from, c, (k, k), stride, pad)
    }

    pub fn pointwise(&mut self, from: &str, c_y: usize) -> String {
        self.weighted(LayerKind::Pointwise, from, c_y, (1, 1), 1, Padding::default())
    }

    /// Fully connected layer over the whole input.
    pub fn linear(&mut self, from: &str, c_y: usize) -> String {
        let (h, w, _) = self.shape(from);
        self.weighted(LayerKind::Linear, from, c_y, (h, w), 1, Padding::default())
    }

    /// Pooling; average pooling divides by the window size via `m / 2^d`.
    pub fn pool(&mut self, from: &str, kind: LayerKind, k: usize, stride: usize, pad: Padding) -> String {
        let requant = match kind {
            LayerKind::PoolAvg => Requant { m: (1 << 12) / (k * k) as i32, d: 12 },
            _ => Requant::IDENTITY,
        };
        self.pool_with(from, kind, k, stride, pad, requant)
    }

    pub fn pool_with(&mut self, from: &str, kind: LayerKind, k: usize, stride: usize, pad: Padding, requant: Requant) -> String {
        let shape = self.shape(from);
        let mut l = bare_layer(kind, shape, shape.2, (k, k), stride, pad);
        l.requant = requant;
        self.push(l, &[from])
    }

    /// Residual add averaging its two branches.
    pub fn add(&mut self, a: &str, b: &str) -> String {
        let r = Requant { m: 1, d: 1 };
        self.add_with(a, b, [r, r], Requant::IDENTITY)
    }

    pub fn add_with(&mut self, a: &str, b: &str, branch: [Requant; 2], requant: Requant) -> String {
        let shape = self.shape(a);
        assert_eq!(shape, self.shape(b), "add branches must match");
        let mut l = bare_layer(LayerKind::Add, shape, shape.2, (1, 1), 1, Padding::default());
        l.branch_requant = branch.to_vec();
        l.requant = requant;
        self.push(l, &[a, b])
    }

    /// Finalizes the graph through the document format so ordering, edges and
    /// lifetimes match what the parser produces.
    pub fn finish(self, output: &str) -> NetworkGraph {
        let out_spec = self.layers.iter().find(|l| l.output == output).map(|l| l.output_spec.clone()).expect("output is produced");
        let mut g = NetworkGraph {
            layers: self.layers,
            edges: Vec::new(),
            input_name: Self::INPUT.to_string(),
            input: self.input,
            output_name: output.to_string(),
            output: out_spec,
        };
        g.refresh_derived();
        let (doc, blobs) = to_document(&g);
        let text = serde_json::to_string(&doc).expect("serializable");
        parse_network(&text, &blobs).unwrap_or_else(|e| panic!("fixture network is invalid: {e}"))
    }
}

/// `n` same-padded `k x k` convolutions keeping `h x w x c`.
pub fn conv_chain(n: usize, h: usize, w: usize, c: usize, k: usize) -> NetworkGraph {
    let mut b = NetBuilder::new(0xC0 + n as u64, h, w, c);
    let mut cur = b.input_name();
    for _ in 0..n {
        cur = b.conv(&cur, c, k, 1, Padding::uniform(k / 2));
    }
    b.finish(&cur)
}

/// Alternating depthwise and pointwise layers on a 16x16x8 input.
pub fn dw_pw_chain(seed: u64, pairs: usize) -> NetworkGraph {
    let mut b = NetBuilder::new(seed, 16, 16, 8);
    let mut cur = b.input_name();
    for i in 0..pairs {
        cur = b.depthwise(&cur, 3, 1 + i % 2, Padding::uniform(1));
        cur = b.pointwise(&cur, 8 * (1 + i % 2));
    }
    b.finish(&cur)
}

/// A 3x3 conv whose output feeds both a chain of `branch_len` pointwise layers
/// and the skip input of a closing add.
pub fn residual_diamond(branch_len: usize) -> NetworkGraph {
    let mut b = NetBuilder::new(0xD1 + branch_len as u64, 8, 8, 8);
    let x = b.input_name();
    let skip = b.conv(&x, 8, 3, 1, Padding::uniform(1));
    let mut cur = skip.clone();
    for _ in 0..branch_len {
        cur = b.pointwise(&cur, 8);
    }
    let out = b.add(&skip, &cur);
    b.finish(&out)
}

/// MobileNet-v1 (width 1.0) at `resolution`: 29 fused layers.
pub fn mobilenet_v1(seed: u64, resolution: usize) -> NetworkGraph {
    let mut b = NetBuilder::new(seed, resolution, resolution, 3);
    let x = b.input_name();
    let mut cur = b.conv(&x, 32, 3, 2, Padding::uniform(1));
    let blocks: [(usize, usize); 13] =
        [(64, 1), (128, 2), (128, 1), (256, 2), (256, 1), (512, 2), (512, 1), (512, 1), (512, 1), (512, 1), (512, 1), (1024, 2), (1024, 1)];
    for (c_out, stride) in blocks {
        cur = b.depthwise(&cur, 3, stride, Padding::uniform(1));
        cur = b.pointwise(&cur, c_out);
    }
    let k = b.shape(&cur).0;
    cur = b.pool(&cur, LayerKind::PoolAvg, k, 1, Padding::default());
    cur = b.linear(&cur, 1000);
    b.finish(&cur)
}

/// Uniform random 8-bit network input.
pub fn random_input(graph: &NetworkGraph, seed: u64) -> IntTensor {
    let (h, w, c) = graph.input.hwc();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bytes: Vec<u8> = (0..h * w * c).map(|_| rng.gen()).collect();
    IntTensor::from_u8_hwc(h, w, c, graph.input.quantum, &bytes).expect("input spec is 8-bit HWC")
}

/// The 64x64x32 to 64x64x32, 3x3, same-padded convolution used as the
/// reference tiling example.
pub fn reference_conv_layer() -> LayerSpec {
    let mut b = NetBuilder::new(61, 64, 64, 32);
    let x = b.input_name();
    let y = b.conv(&x, 32, 3, 1, Padding::uniform(1));
    b.finish(&y).layers.remove(0)
}

/// Random network with 2 to 8 layers mixing conv, depthwise, pointwise, pooling
/// and residual adds, with activations at most 32x32x64.
pub fn random_network(seed: u64) -> NetworkGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = *[7usize, 8, 12, 15, 16, 24, 32].get(rng.gen_range(0..7)).unwrap();
    let c0 = rng.gen_range(1..=16);
    let target = rng.gen_range(2..=8);
    let mut b = NetBuilder::new(seed ^ 0x5eed, side, side, c0);
    let mut cur = b.input_name();
    let channels = |rng: &mut ChaCha8Rng| *[3usize, 4, 8, 12, 16, 24, 32, 48, 64].get(rng.gen_range(0..9)).unwrap();
    while b.len() < target {
        let (h, w, c) = b.shape(&cur);
        let left = target - b.len();
        match rng.gen_range(0..6) {
            0 => {
                let k = if rng.gen_bool(0.7) { 3 } else { 1 };
                let stride = if h >= 8 && rng.gen_bool(0.3) { 2 } else { 1 };
                let pad = match (k, rng.gen_range(0..3)) {
                    (1, _) => Padding::default(),
                    (_, 0) => Padding { top: 0, bottom: 1, left: 1, right: 0 },
                    _ => Padding::uniform(1),
                };
                let c_y = channels(&mut rng);
                cur = b.conv(&cur, c_y, k, stride, pad);
            }
            1 => {
                let stride = if h >= 8 && rng.gen_bool(0.3) { 2 } else { 1 };
                cur = b.depthwise(&cur, 3, stride, Padding::uniform(1));
            }
            2 => {
                let c_y = channels(&mut rng);
                cur = b.pointwise(&cur, c_y);
            }
            3 if h >= 4 && w >= 4 => {
                let kind = if rng.gen_bool(0.5) { LayerKind::PoolAvg } else { LayerKind::PoolMax };
                cur = b.pool(&cur, kind, 2, 2, Padding::default());
            }
            4 | 5 if left >= 2 => {
                let skip = cur.clone();
                let mut branch = cur.clone();
                let extra = if left >= 3 && rng.gen_bool(0.5) { 2 } else { 1 };
                for _ in 0..extra {
                    branch = match rng.gen_range(0..3) {
                        0 => b.depthwise(&branch, 3, 1, Padding::uniform(1)),
                        1 => b.conv(&branch, c, 3, 1, Padding::uniform(1)),
                        _ => b.pointwise(&branch, c),
                    };
                }
                cur = b.add(&skip, &branch);
            }
            _ => {
                let c_y = channels(&mut rng);
                cur = b.pointwise(&cur, c_y);
            }
        }
    }
    b.finish(&cur)
}
