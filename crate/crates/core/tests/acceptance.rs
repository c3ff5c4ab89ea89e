//! Acceptance suite: one line per criterion, non-zero exit if any fails.

use std::collections::BTreeMap;
use std::time::Instant;

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tileflow_core::alloc::{
    d_stack, plan_sequence, verify_plan, AllocOp, AllocSequence, AllocStep, AllocationPlan, Corner, L3Layout, WeightPart,
};
use tileflow_core::fixtures::{bare_layer, conv_chain, dw_pw_chain, random_network, reference_conv_layer, residual_diamond, NetBuilder};
use tileflow_core::golden::{linear_accumulate, requantize_value};
use tileflow_core::graph::{LayerKind, Padding};
use tileflow_core::memsim::{check_hazards, compute_cycles, dma_cycles, estimate_cycles, pipeline_slots, simulate, SimConfig};
use tileflow_core::schedule::{build_layer_schedule, sublayer_tiles, Channel, Event, Purpose, Schedule};
use tileflow_core::tiler::{
    enumerate_feasible, heuristics, l3_cascade_with, score_tile, solve_l2l1, tile_network, CascadeInput, MemoryHierarchy, ObjectiveWeights,
    TileDims, TileProblem, TilingError,
};
use tileflow_core::{compile, run_network, IntTensor, LayerSpec, NetworkGraph, QTensorSpec, Quantum, Score};

// Pinned tolerances and sizes.
const BIT_EXACT_TOLERANCE: i32 = 0;
const NETWORKS: u64 = 20;
const SOLVER_LAYERS: u64 = 200;
const HEURISTIC_ORACLE_LAYERS: u64 = 50;
const ALLOC_SEQUENCES: u64 = 500;
const MUTANT_DETECTION: f64 = 0.95;
const REQUANT_CALLS: u64 = 1_000_000;
const RATIONAL_TENSORS: u64 = 1_000;
const L1_SWEEP: [usize; 6] = [8 << 10, 12 << 10, 16 << 10, 24 << 10, 32 << 10, 64 << 10];

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn a4(v: usize) -> usize {
    v.div_ceil(4) * 4
}

fn random_input(g: &NetworkGraph, seed: u64) -> IntTensor {
    let (h, w, c) = g.input.hwc();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bytes: Vec<u8> = (0..h * w * c).map(|_| rng.gen()).collect();
    IntTensor::from_u8_hwc(h, w, c, g.input.quantum, &bytes).unwrap()
}

fn int(v: i128) -> Score {
    Score::from_integer(v)
}

/// The two smallest L2 sizes, on a 7/8 geometric ladder down from eight times the
/// largest single-layer footprint, that still compile with L1 at half of L2
/// (at most 16 kB). These push layers to L3.
fn tight_configs(g: &NetworkGraph) -> Vec<(usize, usize)> {
    let top = g.layers.iter().map(|l| l.input_bytes() + l.weight_bytes() + l.output_bytes()).max().unwrap_or(0) * 8;
    let mut ok = Vec::new();
    let mut l2 = top.max(1024);
    while l2 >= 256 {
        let l1 = (l2 / 2).min(16 << 10);
        let mem = MemoryHierarchy::with_sizes(l1, l2, 8 << 20);
        if compile(g, &mem, &ObjectiveWeights::default()).is_ok() {
            ok.push((l1, l2));
        }
        l2 = l2 * 7 / 8;
    }
    ok.iter().rev().take(2).copied().collect()
}

/// Bit-exact replay of randomized networks under several memory sizes.
fn criterion_1() -> Outcome {
    let fixed = [(16 << 10, 192 << 10), (32 << 10, 256 << 10), (64 << 10, 512 << 10)];
    let mut runs = 0;
    let mut spilled = 0;
    for seed in 0..NETWORKS {
        let g = random_network(seed);
        let input = random_input(&g, seed);
        let expected = run_network(&g, &input).map_err(|e| format!("seed {seed}: reference failed: {e}"))?;
        let mut configs = fixed.to_vec();
        configs.extend(tight_configs(&g));
        ensure(configs.len() >= 5, || format!("seed {seed}: only {} memory configurations", configs.len()))?;
        for &(l1, l2) in &configs {
            let mem = MemoryHierarchy::with_sizes(l1, l2, 8 << 20);
            let c = compile(&g, &mem, &ObjectiveWeights::default())
                .map_err(|e| format!("seed {seed}, l1 {l1}, l2 {l2}: compile failed: {e}"))?;
            spilled += c.tiling.layers.iter().filter(|t| t.solution.l3.stage > 0).count();
            let r = simulate(&g, &c.schedule, &mem, &SimConfig::default(), &input)
                .map_err(|e| format!("seed {seed}, l1 {l1}, l2 {l2}: {e}"))?;
            let out = r.output.ok_or("no output")?;
            let worst = out.data.iter().zip(&expected.data).map(|(a, b)| (a - b).abs()).max().unwrap_or(0);
            ensure(worst <= BIT_EXACT_TOLERANCE && r.mismatches.is_empty(), || {
                format!("seed {seed}, l1 {l1}, l2 {l2}: max error {worst}, {:?}", r.mismatches.first())
            })?;
            runs += 1;
        }
    }
    Ok(format!("{runs} runs identical to the reference, {spilled} layers used L3 tiling"))
}

fn random_layer(rng: &mut ChaCha8Rng, max_side: usize, max_c: usize) -> LayerSpec {
    let kinds = [
        LayerKind::Conv,
        LayerKind::Depthwise,
        LayerKind::Pointwise,
        LayerKind::PoolAvg,
        LayerKind::PoolMax,
        LayerKind::Add,
        LayerKind::Linear,
    ];
    let kind = kinds[rng.gen_range(0..kinds.len())];
    let h = rng.gen_range(2..=max_side);
    let w = rng.gen_range(2..=max_side);
    let c_x = rng.gen_range(1..=max_c);
    match kind {
        LayerKind::Conv => {
            let k = if rng.gen_bool(0.7) { 3 } else { 1 };
            let s = rng.gen_range(1..=2);
            bare_layer(kind, (h, w, c_x), rng.gen_range(1..=max_c), (k, k), s, Padding::uniform(k / 2))
        }
        LayerKind::Depthwise => bare_layer(kind, (h, w, c_x), c_x, (3, 3), rng.gen_range(1..=2), Padding::uniform(1)),
        LayerKind::Pointwise => bare_layer(kind, (h, w, c_x), rng.gen_range(1..=max_c), (1, 1), 1, Padding::default()),
        LayerKind::PoolAvg | LayerKind::PoolMax => bare_layer(kind, (h, w, c_x), c_x, (2, 2), 2, Padding::default()),
        LayerKind::Add => bare_layer(kind, (h, w, c_x), c_x, (1, 1), 1, Padding::default()),
        LayerKind::Linear => bare_layer(kind, (h, w, c_x), rng.gen_range(1..=max_c), (h, w), 1, Padding::default()),
    }
}

fn random_weights(rng: &mut ChaCha8Rng) -> ObjectiveWeights {
    let mut r = |hi: i128| Score::new(rng.gen_range(0..=hi), rng.gen_range(1..=8));
    ObjectiveWeights { alpha: r(8), beta_i2c: r(1000), beta_par: r(1_000_000), beta_mm_w: r(1_000_000), beta_mm_ch: r(1_000_000) }
}

/// Branch and bound against exhaustive enumeration.
fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut infeasible = 0;
    let mut candidates = 0usize;
    for i in 0..SOLVER_LAYERS {
        let layer = random_layer(&mut rng, 16, 32);
        let mem = MemoryHierarchy::with_sizes(rng.gen_range(256..=24 << 10), 1 << 20, 8 << 20);
        let weights = if i % 2 == 0 { ObjectiveWeights::default() } else { random_weights(&mut rng) };
        let p = TileProblem::from_layer(&layer);
        let all = enumerate_feasible(&layer, &mem).map_err(|e| format!("layer {i}: {e}"))?;
        candidates += all.len();
        let best = all.iter().map(|t| score_tile(t, &p, &weights)).max();
        match (solve_l2l1(&layer, &mem, &weights), best) {
            (Ok(sol), Some(b)) => ensure(sol.objective_score == b && score_tile(&sol.main_tile, &p, &weights) == b, || {
                format!("layer {i} ({:?}): solver {} vs exhaustive {b}", layer.kind, sol.objective_score)
            })?,
            (Err(TilingError::NoFeasibleTile { .. }), None) => infeasible += 1,
            (got, want) => return Err(format!("layer {i}: solver {got:?} vs exhaustive {want:?}")),
        }
    }
    Ok(format!(
        "{SOLVER_LAYERS} layers match the exhaustive maximum ({infeasible} infeasible on both sides, {candidates} feasible tiles scored)"
    ))
}

/// The 64x64x32 to 32, 3x3 example with 28 kB of usable L1 (half of 56 kB).
fn criterion_3() -> Outcome {
    let layer = reference_conv_layer();
    let mem = MemoryHierarchy::with_sizes(56 << 10, 512 << 10, 8 << 20);
    let weights = ObjectiveWeights::default();
    let p = TileProblem::from_layer(&layer);
    let main = TileDims::new(&p, &mem, 32, 56, 2);
    let border = TileDims::new(&p, &mem, 32, 8, 2);
    ensure(main.fits(mem.l1_bytes), || format!("reference main tile needs {} bytes", main.total()))?;
    ensure(border.fits(mem.l1_bytes), || format!("reference border tile needs {} bytes", border.total()))?;
    let sol = solve_l2l1(&layer, &mem, &weights).map_err(|e| e.to_string())?;
    let reference = score_tile(&main, &p, &weights);
    ensure(sol.objective_score >= reference, || format!("solver score {} below reference tile score {reference}", sol.objective_score))?;
    let t = &sol.main_tile;
    Ok(format!(
        "reference tile feasible ({} B); solver tile h={} w={} c={} scores {} >= {}",
        main.total(),
        t.h_y_t,
        t.w_y_t,
        t.c_y_t,
        sol.objective_score,
        reference
    ))
}

/// Heuristic table and the occupancy-only oracle.
fn criterion_4() -> Outcome {
    // (layer h_y, c, h, w) -> (i2c, par, mm_w, mm_ch)
    let table: [((usize, usize, usize, usize), (usize, usize, usize, usize)); 22] = [
        ((64, 32, 8, 2), (32, 7, 1, 3)),
        ((64, 4, 9, 2), (4, 0, 1, 3)),
        ((4, 1, 4, 4), (1, 15, 1, 0)),
        ((8, 1, 4, 4), (1, 3, 1, 0)),
        ((64, 1, 1, 1), (1, 0, 0, 0)),
        ((16, 5, 16, 3), (5, 7, 0, 0)),
        ((7, 8, 7, 7), (8, 0, 0, 3)),
        ((7, 2, 1, 16), (2, 15, 1, 1)),
        ((3, 16, 3, 5), (16, 14, 0, 3)),
        ((56, 32, 56, 2), (32, 7, 1, 3)),
        ((64, 6, 10, 4), (6, 1, 1, 1)),
        ((1, 1, 1, 1), (1, 0, 0, 0)),
        ((5, 3, 2, 8), (3, 15, 1, 2)),
        ((5, 3, 2, 9), (3, 1, 0, 2)),
        ((8, 12, 8, 1), (12, 7, 0, 3)),
        ((100, 7, 33, 6), (7, 0, 1, 2)),
        ((6, 4, 6, 6), (4, 3, 1, 3)),
        ((12, 9, 4, 10), (9, 3, 1, 0)),
        ((2, 64, 2, 32), (64, 15, 1, 3)),
        ((9, 2, 9, 9), (2, 0, 0, 1)),
        ((32, 20, 17, 15), (20, 0, 0, 3)),
        ((4, 16, 4, 4), (16, 15, 1, 3)),
    ];
    for ((lh, c, h, w), want) in table {
        let got = heuristics(lh, c, h, w);
        ensure((got.i2c, got.par, got.mm_w, got.mm_ch) == want, || {
            format!("heuristics({lh}, {c}, {h}, {w}) = {got:?}, expected {want:?}")
        })?;
    }
    // Pointwise 8x8x8 -> 8, tile 8x2x8: occupancy 128 + 64 + 128 = 320.
    let layer = bare_layer(LayerKind::Pointwise, (8, 8, 8), 8, (1, 1), 1, Padding::default());
    let mem = MemoryHierarchy::default();
    let p = TileProblem::from_layer(&layer);
    let s = score_tile(&TileDims::new(&p, &mem, 8, 8, 2), &p, &ObjectiveWeights::default());
    ensure(s == int(160 + 800 + 7_000_000 + 1_000_000 + 3_000_000), || format!("combined score {s}"))?;

    let zero_beta = ObjectiveWeights { alpha: Score::new(1, 2), beta_i2c: int(0), beta_par: int(0), beta_mm_w: int(0), beta_mm_ch: int(0) };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut checked = 0;
    for i in 0..HEURISTIC_ORACLE_LAYERS {
        let layer = random_layer(&mut rng, 16, 32);
        let mem = MemoryHierarchy::with_sizes(rng.gen_range(512..=24 << 10), 1 << 20, 8 << 20);
        let best = enumerate_feasible(&layer, &mem).map_err(|e| e.to_string())?.iter().map(|t| t.occupancy()).max();
        match (solve_l2l1(&layer, &mem, &zero_beta), best) {
            (Ok(sol), Some(b)) => {
                ensure(sol.main_tile.occupancy() == b, || format!("layer {i}: occupancy {} vs oracle {b}", sol.main_tile.occupancy()))?;
                checked += 1;
            }
            (Err(_), None) => {}
            (got, want) => return Err(format!("layer {i}: {got:?} vs oracle {want:?}")),
        }
    }
    Ok(format!("{} heuristic cases; occupancy oracle agrees on {checked} feasible layers", table.len()))
}

/// Stages 0 to 4, each with the footprint inequality checked by hand.
fn criterion_5() -> Outcome {
    let conv = |h: usize, c_x: usize, c_y: usize| bare_layer(LayerKind::Conv, (h, h, c_x), c_y, (3, 3), 1, Padding::uniform(1));
    let ctx = |input_in_l3: bool, budget: usize| CascadeInput {
        input_in_l3,
        w_next: 0,
        l2_budget: budget,
        output_may_spill: true,
        w_cap: usize::MAX,
        force_spill: false,
    };
    let families = [
        (conv(16, 16, 16), ctx(false, 512 << 10), 0u8),
        (conv(128, 32, 32), ctx(true, 1 << 20), 1),
        (conv(4, 256, 256), ctx(false, 512 << 10), 2),
        (conv(64, 32, 32), ctx(false, 256 << 10), 3),
        (bare_layer(LayerKind::Conv, (32, 32, 128), 256, (3, 3), 1, Padding::uniform(1)), ctx(false, 256 << 10), 4),
    ];
    for (layer, c, want) in &families {
        let d = l3_cascade_with(layer, c).map_err(|e| format!("stage {want} family: {e}"))?;
        ensure(d.stage == *want, || format!("family for stage {want} got stage {}", d.stage))?;
        let (w, x, y) = (layer.weight_bytes(), layer.input_bytes(), layer.output_bytes());
        let slice = |ch: usize| 2 * layer.weight_slice_bytes(ch);
        let row = layer.w_y() * layer.c_y();
        // Accepted footprint recomputed from the stage's split extents.
        let accepted = match d.stage {
            0 => a4(w) + a4(x) + a4(y),
            1 => a4(w) + a4(d.h_x_stripe.unwrap() * layer.w_x() * layer.c_x()) + a4(y),
            2 => a4(slice(d.c_y_slice.unwrap())) + a4(x) + a4(y),
            3 => a4(w) + a4(x) + a4(d.h_y_stripe.unwrap() * row),
            _ => {
                let cs = d.c_y_slice.unwrap();
                a4(slice(cs)) + a4(x) + a4(d.h_y_stripe.unwrap() * layer.w_y() * cs)
            }
        };
        ensure(accepted == d.footprint.total() && accepted < c.l2_budget, || {
            format!("stage {want}: footprint {accepted} vs reported {} under {}", d.footprint.total(), c.l2_budget)
        })?;
        let stages: Vec<u8> = d.rejected.iter().map(|r| r.stage).collect();
        ensure(stages == (0..*want).collect::<Vec<_>>(), || format!("stage {want}: rejected {stages:?}"))?;
        for r in &d.rejected {
            let smallest = match r.stage {
                0 => Some(a4(w) + a4(x) + a4(y)),
                2 => Some(a4(slice(1)) + a4(x) + a4(y)),
                3 => Some(a4(w) + a4(x) + a4(row)),
                _ => None,
            };
            match (r.legal, smallest) {
                (true, Some(s)) => ensure(r.footprint.map(|f| f.total()) == Some(s) && s >= c.l2_budget, || {
                    format!("stage {want}: rejected stage {} has footprint {s} under {}", r.stage, c.l2_budget)
                })?,
                (false, _) => {
                    let illegal = match r.stage {
                        0 => c.input_in_l3,
                        1 => !c.input_in_l3,
                        _ => false,
                    };
                    ensure(illegal, || format!("stage {want}: stage {} marked illegal", r.stage))?;
                }
                (true, None) => return Err(format!("stage {want}: stage {} cannot be legal here", r.stage)),
            }
        }
    }
    Ok("stages 0-4 reached; accepted footprints below budget, rejected ones at or above it".to_string())
}

fn random_sequence(rng: &mut ChaCha8Rng, residual: bool) -> AllocSequence {
    let n = rng.gen_range(2..=10);
    let size = |rng: &mut ChaCha8Rng| rng.gen_range(1..=4000);
    let weights = |rng: &mut ChaCha8Rng, id: usize| {
        vec![WeightPart { id: format!("w/{id}"), bytes: if rng.gen_bool(0.9) { rng.gen_range(1..=4000) } else { 0 } }]
    };
    let steps = (0..n)
        .map(|i| AllocStep {
            layer: format!("L{i}"),
            output: format!("act/{i}"),
            y_bytes: size(rng),
            y_lifetime: if residual { rng.gen_range(1..=4) } else { 2 },
            next_weights: if i + 1 < n { weights(rng, i + 1) } else { Vec::new() },
        })
        .collect();
    AllocSequence {
        input: "act/input".into(),
        input_bytes: size(rng),
        input_lifetime: if residual { rng.gen_range(1..=4) } else { 2 },
        first_weights: weights(rng, 0),
        steps,
        keep: Some(format!("act/{}", n - 1)),
    }
}

/// Bytes two stacks growing in the same direction need: each corner's
/// allocations kept in a region of their own, sized at that stack's peak.
fn same_direction_peak(events: &[tileflow_core::alloc::AllocEvent]) -> usize {
    let mut stacks: BTreeMap<Corner, (Vec<(String, usize, bool)>, usize, usize)> = BTreeMap::new();
    let mut corner_of = BTreeMap::new();
    for e in events {
        match e.op {
            AllocOp::Alloc => {
                let (st, top, peak) = stacks.entry(e.corner).or_default();
                st.push((e.id.clone(), e.size, true));
                *top += e.size;
                *peak = (*peak).max(*top);
                corner_of.insert(e.id.clone(), e.corner);
            }
            AllocOp::Dealloc => {
                let (st, top, _) = stacks.get_mut(&corner_of[&e.id]).unwrap();
                if let Some(b) = st.iter_mut().find(|b| b.0 == e.id) {
                    b.2 = false;
                }
                while st.last().is_some_and(|b| !b.2) {
                    *top -= st.pop().unwrap().1;
                }
            }
        }
    }
    stacks.values().map(|s| s.2).sum()
}

fn sequence_plan(seq: &AllocSequence, capacity: usize) -> Result<(AllocationPlan, usize), String> {
    let sp = plan_sequence(seq, capacity).map_err(|e| e.to_string())?;
    Ok((
        AllocationPlan {
            capacity,
            events: sp.events,
            peak_usage: sp.peak_usage,
            layers: Vec::new(),
            buffers: sp.buffers,
            l3: L3Layout::default(),
        },
        sp.peak_usage,
    ))
}

/// Allocator fuzzing, the same-direction dominance oracle and the chain bound.
fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut chains, mut residuals, mut weight_free, mut worst_excess) = (0, 0, 0, 0);
    for i in 0..ALLOC_SEQUENCES {
        let residual = i % 2 == 1;
        let seq = random_sequence(&mut rng, residual);
        let (plan, peak) = sequence_plan(&seq, 1 << 30)?;
        let diags = verify_plan(&plan);
        ensure(diags.is_empty(), || format!("sequence {i}: {:?}", diags[0]))?;
        let (tight, _) = sequence_plan(&seq, peak)?;
        ensure(verify_plan(&tight).is_empty(), || format!("sequence {i}: plan at its own peak is unsound"))?;
        ensure(plan_sequence(&seq, peak - 1).is_err(), || format!("sequence {i}: fits below its peak"))?;
        if residual {
            residuals += 1;
            continue;
        }
        let oracle = same_direction_peak(&plan.events);
        ensure(peak <= oracle, || format!("chain {i}: bidirectional {peak} > same-direction {oracle}"))?;
        // Layer i reads x_i and writes y_i; d_stack adds w_(i+1) itself.
        let w = |k: usize| -> usize {
            if k == 0 {
                seq.first_weights.iter().map(|p| p.bytes).sum()
            } else {
                seq.steps.get(k - 1).map_or(0, |s| s.next_weights.iter().map(|p| p.bytes).sum())
            }
        };
        let sizes: Vec<(usize, usize, usize)> = (0..seq.steps.len())
            .map(|k| {
                let x = if k == 0 { seq.input_bytes } else { seq.steps[k - 1].y_bytes };
                (x, w(k), seq.steps[k].y_bytes)
            })
            .collect();
        let bound = d_stack(&sizes);
        // The corner only flips on a weight push, so a weight-free layer
        // stacks two outputs on one side and the formula no longer applies.
        if sizes.iter().all(|s| s.1 > 0) {
            ensure(peak == bound, || format!("chain {i}: peak {peak} vs D_stack {bound} for {sizes:?}"))?;
            chains += 1;
        } else {
            weight_free += 1;
            worst_excess = worst_excess.max(peak.saturating_sub(bound));
        }
    }
    Ok(format!(
        "{ALLOC_SEQUENCES} sequences sound; {chains} weighted chains equal D_stack, all chains within the same-direction bound; \
         {weight_free} chains with weight-free layers exceed D_stack by at most {worst_excess} B; {residuals} residual sequences"
    ))
}

fn corpus() -> Vec<(String, NetworkGraph, MemoryHierarchy)> {
    let mut out = vec![
        ("conv_chain".to_string(), conv_chain(3, 16, 16, 8, 3), MemoryHierarchy::with_sizes(4 << 10, 512 << 10, 8 << 20)),
        ("dw_pw".to_string(), dw_pw_chain(3, 2), MemoryHierarchy::with_sizes(8 << 10, 256 << 10, 8 << 20)),
        ("residual".to_string(), residual_diamond(2), MemoryHierarchy::with_sizes(4 << 10, 256 << 10, 8 << 20)),
        ("spilled".to_string(), conv_chain(2, 32, 32, 32, 3), MemoryHierarchy::with_sizes(16 << 10, 80 << 10, 8 << 20)),
    ];
    for seed in 0..4 {
        out.push((format!("random_{seed}"), random_network(seed), MemoryHierarchy::with_sizes(16 << 10, 192 << 10, 8 << 20)));
    }
    out
}

fn shares_buffer(a: &Event, b: &Event) -> bool {
    let bb = b.buffers();
    a.buffers().iter().any(|x| bb.contains(x))
}

/// Hazard-free generated schedules, and mutants that the checker catches.
fn criterion_7() -> Outcome {
    let (mut mutants, mut caught, mut schedules) = (0usize, 0usize, 0);
    for (name, g, mem) in corpus() {
        let c = compile(&g, &mem, &ObjectiveWeights::default()).map_err(|e| format!("{name}: {e}"))?;
        let s = &c.schedule;
        let h = check_hazards(s, &mem);
        ensure(h.is_empty(), || format!("{name}: {:?}", h[0]))?;
        schedules += 1;
        let mut check = |m: Schedule| {
            mutants += 1;
            if !check_hazards(&m, &mem).is_empty() {
                caught += 1;
            }
        };
        for (i, e) in s.events.iter().enumerate() {
            if matches!(e, Event::DmaWait { .. }) {
                let mut m = s.clone();
                m.events.remove(i);
                check(m);
            }
        }
        for i in 0..s.events.len().saturating_sub(1) {
            if shares_buffer(&s.events[i], &s.events[i + 1]) {
                let mut m = s.clone();
                m.events.swap(i, i + 1);
                check(m);
            }
        }
    }
    let rate = caught as f64 / mutants.max(1) as f64;
    let line = format!("{schedules} schedules hazard-free; {caught}/{mutants} mutants caught ({:.2}%)", rate * 100.0);
    if rate >= MUTANT_DETECTION {
        Ok(line)
    } else {
        Err(line)
    }
}

/// Next-layer weight prefetch inside the previous layer's span.
fn criterion_8() -> Outcome {
    let g = conv_chain(3, 16, 16, 8, 3);
    let mem = MemoryHierarchy::default();
    let c = compile(&g, &mem, &ObjectiveWeights::default()).map_err(|e| e.to_string())?;
    let s = &c.schedule;
    let prefetches: Vec<(usize, String)> = s
        .events
        .iter()
        .enumerate()
        .filter_map(|(i, e)| match e {
            Event::DmaAsync { purpose: Purpose::Prefetch, channel: Channel::L3l2, transfer, .. } => Some((i, transfer.dst.clone())),
            _ => None,
        })
        .collect();
    ensure(prefetches.len() == 2, || format!("{} prefetch events", prefetches.len()))?;
    for (k, (at, dst)) in prefetches.iter().enumerate() {
        let prev = &s.layers[k];
        let consumer = &s.layers[k + 1];
        ensure(prev.start <= *at && *at < prev.end, || {
            format!("prefetch into {dst} at event {at} outside span {}..{}", prev.start, prev.end)
        })?;
        let wait = s.events.iter().position(|e| matches!(e, Event::DmaWait { channel: Channel::L3l2, buffer, .. } if buffer == dst));
        let first_use = s.events.iter().enumerate().position(|(i, e)| {
            i >= consumer.start && matches!(e, Event::DmaAsync { purpose: Purpose::WTile, transfer, .. } if &transfer.src == dst)
        });
        match (wait, first_use) {
            (Some(w), Some(u)) => ensure(*at < w && w < u && w >= consumer.start, || {
                format!("{dst}: issue {at}, wait {w}, first use {u}, consumer starts {}", consumer.start)
            })?,
            other => return Err(format!("{dst}: wait/use {other:?}")),
        }
    }
    Ok("2 prefetches, each issued in the previous layer and awaited before first weight use".to_string())
}

/// Layers for the timing checks: every operator kind at several shapes.
fn timing_layers() -> Vec<NetworkGraph> {
    let mut out = Vec::new();
    for (seed, (h, c, k)) in [(16, 16, 3), (32, 8, 3), (8, 64, 1), (16, 32, 1), (12, 24, 3)].into_iter().enumerate() {
        let mut b = NetBuilder::new(seed as u64, h, h, c);
        let x = b.input_name();
        let y = b.conv(&x, c, k, 1, Padding::uniform(k / 2));
        out.push(b.finish(&y));
    }
    for (seed, (h, c)) in [(16, 16), (32, 8)].into_iter().enumerate() {
        let mut b = NetBuilder::new(10 + seed as u64, h, h, c);
        let x = b.input_name();
        let y = b.depthwise(&x, 3, 1, Padding::uniform(1));
        out.push(b.finish(&y));
    }
    let mut b = NetBuilder::new(20, 16, 16, 16);
    let x = b.input_name();
    let y = b.pool(&x, LayerKind::PoolMax, 2, 2, Padding::default());
    out.push(b.finish(&y));
    let mut b = NetBuilder::new(21, 16, 16, 16);
    let x = b.input_name();
    let y = b.pointwise(&x, 16);
    let z = b.add(&x, &y);
    out.push(b.finish(&z));
    let mut b = NetBuilder::new(22, 24, 24, 8);
    let x = b.input_name();
    let y = b.conv(&x, 16, 3, 2, Padding::uniform(1));
    out.push(b.finish(&y));
    out
}

/// Hand-rolled slot model of a single-layer tile loop: the kernel on tile
/// `t` overlaps the load of tile `t + 1` and the store of tile `t - 1`.
fn hand_slots(
    layer: &LayerSpec,
    main: &TileDims,
    sub: &tileflow_core::tiler::SubLayer,
    mem: &MemoryHierarchy,
    cfg: &SimConfig,
) -> Vec<u64> {
    let tiles = sublayer_tiles(layer, sub, main);
    let per_ch = layer.weight_slice_bytes(1);
    let inputs = layer.inputs.len();
    let l2l1 = |bytes: usize| dma_cycles(bytes, mem.l2l1_bandwidth, mem.l2l1_latency);
    let load = |t: usize| {
        let g = &tiles[t];
        let mut c = inputs as u64 * l2l1(g.in_rows * g.in_cols * g.in_channels);
        let block_start = t == 0 || tiles[t - 1].out_ch != g.out_ch;
        if per_ch > 0 && block_start {
            c += l2l1(g.channels * per_ch);
        }
        c
    };
    let store = |t: usize| l2l1(tiles[t].rows * tiles[t].cols * tiles[t].channels);
    (0..tiles.len())
        .map(|t| {
            let comp = cfg.call_overhead + compute_cycles(layer, &tiles[t], cfg);
            let dma_in = if t + 1 < tiles.len() { load(t + 1) } else { 0 };
            let dma_out = if t > 0 { store(t - 1) } else { 0 };
            comp.max(dma_in).max(dma_out) + cfg.slot_overhead
        })
        .collect()
}

fn network_cycles(g: &NetworkGraph, mem: &MemoryHierarchy) -> Result<u64, String> {
    let c = compile(g, mem, &ObjectiveWeights::default()).map_err(|e| e.to_string())?;
    Ok(estimate_cycles(&c.schedule, g, mem, &SimConfig::default()).total_cycles)
}

/// Slot timing against a hand-rolled model, hidden DMA in a compute-bound
/// pointwise layer, and monotonicity in bandwidth and L1 size.
fn criterion_9() -> Outcome {
    let cfg = SimConfig::default();
    let mem = MemoryHierarchy::with_sizes(16 << 10, 512 << 10, 8 << 20);
    let mut slots_checked = 0;
    let layers = timing_layers();
    ensure(layers.len() >= 10, || "fewer than 10 timing layers".into())?;
    for g in &layers {
        let t = tile_network(g, &mem, &ObjectiveWeights::default()).map_err(|e| e.to_string())?;
        let c = compile(g, &mem, &ObjectiveWeights::default()).map_err(|e| e.to_string())?;
        let lt = &t.layers[0];
        let s = build_layer_schedule(g, 0, lt, &c.plan).map_err(|e| e.to_string())?;
        let got = pipeline_slots(&s, g, &mem, &cfg);
        ensure(got.len() == 1, || format!("{}: {} tile loops", g.layers[0].id, got.len()))?;
        let want = hand_slots(&g.layers[0], &lt.solution.main_tile, &lt.sublayers[0], &mem, &cfg);
        let elapsed: Vec<u64> = got[0].1.iter().map(|s| s.elapsed).collect();
        ensure(elapsed == want, || format!("{}: slots {elapsed:?} vs hand model {want:?}", g.layers[0].id))?;
        slots_checked += want.len();
    }

    // 64 -> 64 pointwise: 64 MACs per output byte against 2 bytes moved.
    let mut b = NetBuilder::new(30, 16, 16, 64);
    let x = b.input_name();
    let y = b.pointwise(&x, 64);
    let pw = b.finish(&y);
    let c = compile(&pw, &mem, &ObjectiveWeights::default()).map_err(|e| e.to_string())?;
    let r = estimate_cycles(&c.schedule, &pw, &mem, &cfg);
    let calls = r.layers[0].kernel_calls;
    ensure(calls >= 3, || format!("pointwise fixture has only {calls} tiles"))?;
    ensure(r.layers[0].steady_stall == 0, || format!("steady-state DMA stall {}", r.layers[0].steady_stall))?;

    let net = random_network(3);
    let mut prev = u64::MAX;
    let mut bw_curve = Vec::new();
    for f in [0.5, 1.0, 2.0, 4.0, 8.0] {
        let mut m = MemoryHierarchy::with_sizes(16 << 10, 192 << 10, 8 << 20);
        m.l2l1_bandwidth *= f;
        m.l3l2_bandwidth *= f;
        let cyc = network_cycles(&net, &m)?;
        bw_curve.push(cyc);
        ensure(cyc <= prev, || format!("cycles rise with bandwidth: {bw_curve:?}"))?;
        prev = cyc;
    }
    let mut l1_curves = Vec::new();
    for g in [conv_chain(3, 32, 32, 16, 3), dw_pw_chain(5, 3), random_network(7)] {
        let mut curve = Vec::new();
        for l1 in L1_SWEEP {
            curve.push(network_cycles(&g, &MemoryHierarchy::with_sizes(l1, 512 << 10, 8 << 20))?);
        }
        l1_curves.push(curve);
    }
    ensure(l1_curves.iter().all(|c| c.windows(2).all(|w| w[1] <= w[0])), || {
        format!("cycles not monotone in L1 over {L1_SWEEP:?}: {l1_curves:?}")
    })?;
    Ok(format!(
        "{slots_checked} slots match the hand model over {} layers; pointwise steady stall 0 over {calls} tiles; bandwidth {bw_curve:?}; L1 sweeps {l1_curves:?}",
        layers.len()
    ))
}

/// Requantization range and exact dequantized accumulation.
fn criterion_10() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..REQUANT_CALLS {
        let phi = rng.gen::<i32>();
        let m = rng.gen_range(0..=i32::MAX);
        let d = rng.gen_range(0..=31);
        let v = requantize_value(phi, m, d, 8);
        ensure((0..=255).contains(&v), || format!("requantize({phi}, {m}, {d}) = {v}"))?;
    }
    for i in 0..RATIONAL_TENSORS {
        let k = *[1usize, 3].get(rng.gen_range(0..2)).unwrap();
        let (h, w, c_x, c_y) = (rng.gen_range(k..=6), rng.gen_range(k..=6), rng.gen_range(1..=4), rng.gen_range(1..=4));
        let mut layer = bare_layer(LayerKind::Conv, (h, w, c_x), c_y, (k, k), 1, Padding::uniform(k / 2));
        let eps_x = Quantum::new(1, rng.gen_range(1..=255));
        let eps_w = Quantum::new(rng.gen_range(1..=3), rng.gen_range(1..=128));
        layer.quanta.eps_x = eps_x;
        layer.quanta.eps_w = Some(eps_w);
        let xs: Vec<i32> = (0..h * w * c_x).map(|_| rng.gen_range(0..=255)).collect();
        let ws: Vec<i32> = (0..c_y * k * k * c_x).map(|_| rng.gen_range(-128..=127)).collect();
        let x = IntTensor::new(QTensorSpec::activation(h, w, c_x, eps_x), xs.clone()).map_err(|e| e.to_string())?;
        let wt = IntTensor::new(QTensorSpec::weights(c_y, k, k, c_x, eps_w), ws.clone()).map_err(|e| e.to_string())?;
        let phi = linear_accumulate(&x, &wt, &layer).map_err(|e| e.to_string())?;
        let (ex, ew) = (eps_x.to_i128(), eps_w.to_i128());
        let (h_y, w_y) = (layer.h_y(), layer.w_y());
        let pad = k / 2;
        for oh in 0..h_y {
            for ow in 0..w_y {
                for co in 0..c_y {
                    // Real-valued convolution of the dequantized operands.
                    let mut real = Ratio::<i128>::from_integer(0);
                    for ky in 0..k {
                        for kx in 0..k {
                            let (ih, iw) = ((oh + ky) as isize - pad as isize, (ow + kx) as isize - pad as isize);
                            if ih < 0 || iw < 0 || ih >= h as isize || iw >= w as isize {
                                continue;
                            }
                            for ci in 0..c_x {
                                let xv = xs[((ih as usize) * w + iw as usize) * c_x + ci];
                                let wv = ws[((co * k + ky) * k + kx) * c_x + ci];
                                real += ex * Ratio::from_integer(xv as i128) * ew * Ratio::from_integer(wv as i128);
                            }
                        }
                    }
                    let got = ex * ew * Ratio::from_integer(phi.at(oh, ow, co) as i128);
                    ensure(got == real, || format!("tensor {i} at ({oh}, {ow}, {co}): {got} vs {real}"))?;
                }
            }
        }
    }
    Ok(format!("{REQUANT_CALLS} requantizations in [0, 255]; {RATIONAL_TENSORS} tensors exact"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("bit-exact replay", criterion_1),
        ("solver optimality", criterion_2),
        ("reference tiling example", criterion_3),
        ("heuristic formulas", criterion_4),
        ("L3 cascade stages", criterion_5),
        ("allocator soundness", criterion_6),
        ("schedule legality", criterion_7),
        ("weight prefetch structure", criterion_8),
        ("timing model", criterion_9),
        ("requantization and range", criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("criterion {:>2} PASS {name} ({secs:.1}s): {msg}", i + 1),
            Err(msg) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name} ({secs:.1}s): {msg}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
