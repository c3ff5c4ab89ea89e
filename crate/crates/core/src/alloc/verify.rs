use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::plan::{act_id, AllocOp, AllocationPlan};
use crate::graph::NetworkGraph;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanDiagnostic {
    /// Index into the plan's event trace.
    pub event: usize,
    pub message: String,
}

/// Replays the event trace and reports every overlap between live buffers,
/// every buffer outside `[0, capacity)` and every free of an unknown id.
pub fn verify_plan(plan: &AllocationPlan) -> Vec<PlanDiagnostic> {
    let mut live: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    let mut out = Vec::new();
    for (k, e) in plan.events.iter().enumerate() {
        let mut diag = |message: String| out.push(PlanDiagnostic { event: k, message });
        match e.op {
            AllocOp::Alloc => {
                if e.offset + e.size > plan.capacity {
                    diag(format!("{} [{}, {}) exceeds capacity {}", e.id, e.offset, e.offset + e.size, plan.capacity));
                }
                for (id, (o, s)) in &live {
                    if e.offset < o + s && *o < e.offset + e.size {
                        diag(format!("{} [{}, {}) overlaps {} [{}, {})", e.id, e.offset, e.offset + e.size, id, o, o + s));
                    }
                }
                if live.insert(&e.id, (e.offset, e.size)).is_some() {
                    diag(format!("{} allocated twice", e.id));
                }
            }
            AllocOp::Dealloc => {
                if live.remove(e.id.as_str()).is_none() {
                    diag(format!("dealloc of {} which is not allocated", e.id));
                }
            }
        }
    }
    out
}

/// Flags activations freed before a later layer reads them. Tensors spilled
/// to L3 are exempt since their readers fetch them from there.
pub fn check_liveness(graph: &NetworkGraph, plan: &AllocationPlan) -> Vec<PlanDiagnostic> {
    let mut out = Vec::new();
    let mut tensors: Vec<&str> = vec![&graph.input_name];
    tensors.extend(graph.layers.iter().map(|l| l.output.as_str()));
    for t in tensors {
        if plan.l3.activations.contains_key(t) {
            continue;
        }
        let id = act_id(t);
        let last = graph.last_consumer(t);
        for (k, e) in plan.events.iter().enumerate() {
            if e.op == AllocOp::Dealloc && e.id == id {
                if let Some(q) = last {
                    if e.step <= q as i64 {
                        out.push(PlanDiagnostic { event: k, message: format!("{t} freed at step {} but read at step {q}", e.step) });
                    }
                }
            }
        }
    }
    out
}
