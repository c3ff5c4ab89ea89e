use std::collections::{BTreeMap, BTreeSet};

use super::layer::{LayerKind, LayerSpec};
use super::tensor::{DimName, Layout};
use super::{Diagnostic, NetworkGraph};

fn diag(layer: &LayerSpec, message: impl Into<String>) -> Diagnostic {
    Diagnostic { layer: Some(layer.id.clone()), message: message.into() }
}

fn check_layer(l: &LayerSpec, out: &mut Vec<Diagnostic>) {
    for (what, spec) in [("input", &l.input_spec), ("output", &l.output_spec)] {
        for v in spec.violations() {
            out.push(diag(l, format!("{what} tensor: {v}")));
        }
        if spec.layout == Layout::CoHwCi || spec.bits != 8 || spec.signed {
            out.push(diag(l, format!("{what} tensor must be an unsigned 8-bit activation")));
        }
    }
    if l.stride == 0 {
        out.push(diag(l, "stride must be at least 1"));
        return;
    }
    let p = l.padding;
    if p.top >= l.kernel_h || p.bottom >= l.kernel_h {
        out.push(diag(l, "vertical padding must be smaller than K_h"));
    }
    if p.left >= l.kernel_w || p.right >= l.kernel_w {
        out.push(diag(l, "horizontal padding must be smaller than K_w"));
    }
    match l.expected_output_hw() {
        Some(hw) if hw == (l.h_y(), l.w_y()) => {}
        Some((h, w)) => {
            out.push(diag(l, format!("output geometry {}x{} disagrees with floor((x - K + p0 + p1) / s) + 1 = {h}x{w}", l.h_y(), l.w_y())))
        }
        None => out.push(diag(l, "kernel does not fit the padded input")),
    }
    match (&l.weight_spec, l.kind.has_weights()) {
        (Some(w), true) => {
            for v in w.violations() {
                out.push(diag(l, format!("weight tensor: {v}")));
            }
            let shape = (
                w.extent(DimName::Cy).unwrap_or(0),
                w.extent(DimName::Kh).unwrap_or(0),
                w.extent(DimName::Kw).unwrap_or(0),
                w.extent(DimName::Cx).unwrap_or(0),
            );
            let expected = (l.c_y(), l.kernel_h, l.kernel_w, l.weight_cin());
            if shape != expected {
                out.push(diag(l, format!("weight shape {shape:?} should be (C_y, K_h, K_w, C_x) = {expected:?}")));
            }
            match &l.weights {
                Some(data) if data.len() != w.byte_size() => {
                    out.push(diag(l, format!("weight payload has {} bytes, expected {}", data.len(), w.byte_size())))
                }
                None => out.push(diag(l, "weight payload missing")),
                _ => {}
            }
        }
        (None, true) => out.push(diag(l, "missing weight tensor")),
        (Some(_), false) => out.push(diag(l, format!("`{}` takes no weights", l.kind.as_str()))),
        (None, false) => {}
    }
    match l.kind {
        LayerKind::Depthwise | LayerKind::PoolAvg | LayerKind::PoolMax if l.c_x() != l.c_y() => {
            out.push(diag(l, format!("{} requires C_x = C_y", l.kind.as_str())));
        }
        LayerKind::Pointwise if l.kernel_h != 1 || l.kernel_w != 1 || !l.padding.is_zero() => {
            out.push(diag(l, "pointwise requires K_h = K_w = 1 and zero padding"));
        }
        LayerKind::Linear if l.kernel_h != l.h_x() || l.kernel_w != l.w_x() || !l.padding.is_zero() => {
            out.push(diag(l, "linear kernel must cover the whole unpadded input"));
        }
        _ => {}
    }
    let arity = if l.kind == LayerKind::Add { 2 } else { 1 };
    if l.inputs.len() != arity {
        out.push(diag(l, format!("expected {arity} activation inputs, got {}", l.inputs.len())));
    }
    if l.kind == LayerKind::Add {
        if l.branch_requant.len() != 2 {
            out.push(diag(l, "add needs one branch requant per input"));
        }
        if l.kernel_h != 1 || l.kernel_w != 1 || l.stride != 1 || !l.padding.is_zero() {
            out.push(diag(l, "add must be a 1x1, stride-1, unpadded op"));
        }
    }
    for r in std::iter::once(&l.requant).chain(&l.branch_requant) {
        if r.m < 0 || r.d > 31 {
            out.push(diag(l, format!("requant m={} d={} must satisfy m >= 0, d <= 31", r.m, r.d)));
        }
    }
    if let Some(bn) = &l.bn {
        if bn.kappa.len() != l.c_y() || bn.lambda.len() != l.c_y() {
            out.push(diag(l, "batch norm kappa/lambda must have C_y entries"));
        }
    }
    if l.quanta.eps_w.is_none() && l.kind.has_weights() {
        out.push(diag(l, "missing eps_w"));
    }
    if !l.quanta.eps_x.is_positive() || !l.quanta.eps_y.is_positive() {
        out.push(diag(l, "quanta must be positive"));
    }
}

/// Finds one cycle in the edge relation, returned as layer indices.
fn find_cycle(n: usize, succ: &BTreeMap<usize, BTreeSet<usize>>) -> Option<Vec<usize>> {
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut state = vec![0u8; n];
    let mut stack: Vec<usize> = Vec::new();
    fn dfs(v: usize, succ: &BTreeMap<usize, BTreeSet<usize>>, state: &mut [u8], stack: &mut Vec<usize>) -> Option<Vec<usize>> {
        state[v] = 1;
        stack.push(v);
        for &w in succ.get(&v).into_iter().flatten() {
            if state[w] == 1 {
                let start = stack.iter().position(|&x| x == w).unwrap_or(0);
                return Some(stack[start..].to_vec());
            }
            if state[w] == 0 {
                if let Some(c) = dfs(w, succ, state, stack) {
                    return Some(c);
                }
            }
        }
        stack.pop();
        state[v] = 2;
        None
    }
    for v in 0..n {
        if state[v] == 0 {
            if let Some(c) = dfs(v, succ, &mut state, &mut stack) {
                return Some(c);
            }
        }
    }
    None
}

/// Checks every graph and layer invariant; returns one diagnostic per violation.
pub fn validate_graph(graph: &NetworkGraph) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    for l in &graph.layers {
        check_layer(l, &mut out);
    }

    let mut ids = BTreeSet::new();
    let mut producers: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, l) in graph.layers.iter().enumerate() {
        if !ids.insert(l.id.as_str()) {
            out.push(diag(l, "duplicate layer id"));
        }
        if l.output == graph.input_name || producers.insert(l.output.as_str(), i).is_some() {
            out.push(diag(l, format!("tensor `{}` has more than one producer", l.output)));
        }
    }

    let mut succ: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for (c, l) in graph.layers.iter().enumerate() {
        for t in &l.inputs {
            match producers.get(t.as_str()) {
                Some(&p) => {
                    succ.entry(p).or_default().insert(c);
                    let spec = &graph.layers[p].output_spec;
                    if spec.hwc() != l.input_spec.hwc() {
                        out.push(diag(l, format!("input `{t}` is {:?} but the layer expects {:?}", spec.hwc(), l.input_spec.hwc())));
                    }
                }
                None if *t == graph.input_name => {
                    if graph.input.hwc() != l.input_spec.hwc() {
                        out.push(diag(l, "network input shape disagrees with the layer input"));
                    }
                }
                None => out.push(diag(l, format!("input `{t}` has no producer"))),
            }
        }
    }
    for e in &graph.edges {
        if !succ.get(&e.producer).is_some_and(|s| s.contains(&e.consumer)) {
            out.push(Diagnostic {
                layer: None,
                message: format!("edge {} -> {} via `{}` is not backed by tensor flow", e.producer, e.consumer, e.tensor),
            });
        }
    }

    match find_cycle(graph.layers.len(), &succ) {
        Some(cycle) => {
            let names: Vec<&str> = cycle.iter().map(|&i| graph.layers[i].id.as_str()).collect();
            out.push(Diagnostic { layer: Some(names[0].to_string()), message: format!("cycle {} -> {}", names.join(" -> "), names[0]) });
        }
        None => {
            for (&p, cs) in &succ {
                for &c in cs {
                    if c <= p {
                        out.push(diag(&graph.layers[c], format!("consumes `{}` before it is produced", graph.layers[p].output)));
                    }
                }
            }
        }
    }

    for l in graph.layers.iter().filter(|l| l.kind == LayerKind::Add) {
        let shapes: Vec<_> = l.inputs.iter().filter_map(|t| graph.tensor_spec(t)).map(|s| s.hwc()).collect();
        if shapes.len() == 2 && shapes[0] != shapes[1] {
            out.push(diag(l, format!("add branches have mismatched shapes {:?} and {:?}", shapes[0], shapes[1])));
        }
    }
    if graph.tensor_spec(&graph.output_name).is_none() {
        out.push(Diagnostic { layer: None, message: format!("output `{}` is never produced", graph.output_name) });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn valid_chain_has_no_diagnostics() {
        let g = fixtures::conv_chain(2, 8, 8, 4, 3);
        assert_eq!(validate_graph(&g), vec![]);
    }

    #[test]
    fn mismatched_add_is_one_diagnostic() {
        let mut g = fixtures::residual_diamond(2);
        let add = g.layers.iter().position(|l| l.kind == LayerKind::Add).unwrap();
        // Point the second branch at a tensor of a different shape.
        let other = g.layers[add].inputs[1].clone();
        let p = g.producer_of(&other).unwrap();
        let (h, w, c) = g.layers[p].output_spec.hwc();
        let q = g.layers[p].output_spec.quantum;
        g.layers[p].output_spec = crate::graph::QTensorSpec::activation(h, w, c + 1, q);
        // Keep the producer itself consistent so only the add is flagged.
        let c_new = c + 1;
        let lp = &mut g.layers[p];
        lp.weight_spec =
            lp.weight_spec.as_ref().map(|_| crate::graph::QTensorSpec::weights(c_new, lp.kernel_h, lp.kernel_w, lp.weight_cin(), q));
        lp.weights = Some(vec![0; lp.weight_spec.as_ref().unwrap().byte_size()]);
        if let Some(bn) = &mut lp.bn {
            bn.kappa.push(1);
            bn.lambda.push(0);
        }
        let diags = validate_graph(&g);
        let add_id = g.layers[add].id.clone();
        let add_diags: Vec<_> = diags.iter().filter(|d| d.message.contains("mismatched")).collect();
        assert_eq!(add_diags.len(), 1, "{diags:?}");
        assert_eq!(add_diags[0].layer.as_deref(), Some(add_id.as_str()));
    }

    #[test]
    fn cycle_is_named() {
        let mut g = fixtures::conv_chain(2, 8, 8, 4, 3);
        let out1 = g.layers[1].output.clone();
        g.layers[0].inputs = vec![out1];
        let diags = validate_graph(&g);
        assert_eq!(diags.len(), 1, "{diags:?}");
        assert!(diags[0].message.contains("cycle"), "{diags:?}");
        assert!(diags[0].message.contains(&g.layers[0].id));
        assert!(diags[0].message.contains(&g.layers[1].id));
    }
}
