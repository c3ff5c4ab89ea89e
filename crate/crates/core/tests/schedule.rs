use std::collections::{BTreeSet, HashMap};

use proptest::prelude::*;
use tileflow_core::fixtures::{conv_chain, dw_pw_chain, random_input, random_network, residual_diamond};
use tileflow_core::memsim::{estimate_cycles, replay, simulate, SimConfig};
use tileflow_core::schedule::{emit_c, Channel, Event, Purpose, Schedule};
use tileflow_core::tiler::{MemoryHierarchy, ObjectiveWeights};
use tileflow_core::{compile, Compiled, NetworkGraph};

fn build(g: &NetworkGraph, mem: &MemoryHierarchy) -> Compiled {
    compile(g, mem, &ObjectiveWeights::default()).unwrap_or_else(|e| panic!("compile: {e}"))
}

fn small_l1() -> MemoryHierarchy {
    MemoryHierarchy::with_sizes(8 * 1024, 256 * 1024, 8 << 20)
}

fn networks() -> Vec<NetworkGraph> {
    vec![conv_chain(3, 16, 16, 8, 3), dw_pw_chain(3, 3), residual_diamond(2), random_network(4)]
}

fn span_events<'a>(s: &'a Schedule, layer: &str) -> &'a [Event] {
    let span = s.layers.iter().find(|l| l.layer == layer).unwrap();
    &s.events[span.start..span.end]
}

#[test]
fn kernel_calls_match_tile_grid() {
    for g in networks() {
        let c = build(&g, &small_l1());
        for (t, span) in c.tiling.layers.iter().zip(&c.schedule.layers) {
            let main = &t.solution.main_tile;
            let layer = g.layers.iter().find(|l| l.id == t.id).unwrap();
            let grid: usize = t
                .sublayers
                .iter()
                .map(|s| s.channels.div_ceil(main.c_y_t) * s.rows.div_ceil(main.h_y_t) * layer.w_y().div_ceil(main.w_y_t))
                .sum();
            let events = span_events(&c.schedule, &t.id);
            let calls = events.iter().filter(|e| matches!(e, Event::KernelCall(_))).count();
            let x_loads = events.iter().filter(|e| matches!(e, Event::DmaAsync { purpose: Purpose::XTile, .. })).count();
            assert_eq!(calls, grid, "{}", t.id);
            assert_eq!(span.kernel_calls, grid, "{}", t.id);
            assert_eq!(x_loads, grid, "{}", t.id);
        }
    }
}

#[test]
fn emitted_statements_mirror_events() {
    for g in networks() {
        let c = build(&g, &small_l1());
        let bundle = emit_c(&g, &c.tiling, &c.plan, &c.schedule);
        let count = |needle: &str| -> usize {
            bundle
                .files
                .iter()
                .filter(|(name, _)| name.ends_with(".c"))
                .map(|(_, text)| text.lines().filter(|l| l.trim_start().starts_with(needle)).count())
                .sum()
        };
        let kinds = |k: &str| c.schedule.events.iter().filter(|e| e.kind_name() == k).count();
        assert_eq!(count("DMA_2D_ASYNC("), kinds("dma_async"));
        assert_eq!(count("DMA_WAIT("), kinds("dma_wait"));
        assert_eq!(count("KERNEL_CALL("), kinds("kernel_call"));
        assert_eq!(bundle.manifest.kernel_calls, kinds("kernel_call"));

        let network = &bundle.files["network.c"];
        assert!(network.contains("uint8_t *l1_buffer"));
        assert!(network.contains("uint8_t *l2_buffer"));
        assert_eq!(emit_c(&g, &c.tiling, &c.plan, &c.schedule), bundle);
    }
}

#[test]
fn at_most_two_transfers_in_flight_per_role() {
    for g in networks() {
        let c = build(&g, &small_l1());
        let mut pending: Vec<(Channel, Purpose, String, String)> = Vec::new();
        let mut peak: HashMap<(Channel, Purpose), usize> = HashMap::new();
        for e in &c.schedule.events {
            match e {
                Event::DmaAsync { channel, purpose, transfer, .. } => {
                    pending.push((*channel, *purpose, transfer.src.clone(), transfer.dst.clone()));
                    let n = pending.iter().filter(|p| p.0 == *channel && p.1 == *purpose).count();
                    let p = peak.entry((*channel, *purpose)).or_default();
                    *p = (*p).max(n);
                }
                Event::DmaWait { channel, buffer, .. } => {
                    pending.retain(|p| !(p.0 == *channel && (&p.2 == buffer || &p.3 == buffer)));
                }
                _ => {}
            }
        }
        assert!(pending.is_empty());
        for (k, n) in peak {
            assert!(n <= 2, "{k:?} has {n} transfers in flight");
        }
    }
}

#[test]
fn estimate_matches_simulation_timing() {
    let g = dw_pw_chain(3, 3);
    let mem = small_l1();
    let c = build(&g, &mem);
    let cfg = SimConfig::default();
    let report = simulate(&g, &c.schedule, &mem, &cfg, &random_input(&g, 1)).unwrap();
    assert!(report.bit_exact);
    assert_eq!(report.timing, estimate_cycles(&c.schedule, &g, &mem, &cfg));
}

#[test]
fn weight_bytes_are_conserved() {
    let g = conv_chain(2, 16, 16, 16, 3);
    let mem = MemoryHierarchy::with_sizes(4 * 1024, 256 * 1024, 8 << 20);
    let c = build(&g, &mem);
    for (layer, t) in g.layers.iter().zip(&c.tiling.layers) {
        let main = &t.solution.main_tile;
        let events = span_events(&c.schedule, &layer.id);
        let moved: usize = events
            .iter()
            .filter_map(|e| match e {
                Event::DmaAsync { purpose: Purpose::WTile, transfer, .. } => Some(transfer.bytes()),
                _ => None,
            })
            .sum();
        // Weight tiles stay in L1 across the spatial loop of their channel block.
        let want: usize = t
            .sublayers
            .iter()
            .flat_map(|s| (0..s.channels).step_by(main.c_y_t).map(|c0| layer.weight_slice_bytes(main.c_y_t.min(s.channels - c0))))
            .sum();
        assert_eq!(moved, want, "{}", layer.id);
        assert!(t.sublayers.len() > 1 || moved == layer.weight_bytes());
    }
}

#[test]
fn halving_l2l1_bandwidth_slows_memory_bound_layers() {
    let g = conv_chain(1, 32, 32, 32, 1);
    let fast = MemoryHierarchy::with_sizes(4 * 1024, 256 * 1024, 8 << 20);
    let mut slow = fast.clone();
    slow.l2l1_bandwidth /= 2.0;
    let cfg = SimConfig { cores: 64, ..SimConfig::default() };
    let c = build(&g, &fast);
    let a = estimate_cycles(&c.schedule, &g, &fast, &cfg);
    let b = estimate_cycles(&c.schedule, &g, &slow, &cfg);
    assert!(a.layers[0].dma_stall > 0, "layer is not memory bound: {:?}", a.layers[0]);
    assert!(b.total_cycles > a.total_cycles);
}

#[test]
fn whole_layer_in_l1_is_one_kernel_call() {
    let g = conv_chain(1, 8, 8, 8, 3);
    let c = build(&g, &MemoryHierarchy::with_sizes(64 * 1024, 256 * 1024, 8 << 20));
    let t = estimate_cycles(&c.schedule, &g, &MemoryHierarchy::default(), &SimConfig::default());
    assert_eq!(t.layers[0].kernel_calls, 1);
    assert_eq!(t.layers[0].steady_stall, 0);
}

#[test]
fn replay_catches_swapped_tile_sources() {
    let g = conv_chain(2, 16, 16, 8, 3);
    let c = build(&g, &MemoryHierarchy::with_sizes(4 * 1024, 256 * 1024, 8 << 20));
    let input = random_input(&g, 3);
    assert!(replay(&g, &c.schedule, &input).unwrap().mismatches.is_empty());

    let mut s = c.schedule.clone();
    let loads: Vec<usize> = s.transfers(Purpose::XTile).map(|(i, _)| i).collect();
    let shape = |s: &Schedule, i: usize| match &s.events[i] {
        Event::DmaAsync { transfer, .. } => (transfer.len, transfer.dims.clone(), transfer.src_offset),
        _ => unreachable!(),
    };
    let (a, b) = loads
        .iter()
        .flat_map(|&a| loads.iter().map(move |&b| (a, b)))
        .find(|&(a, b)| {
            let (la, da, oa) = shape(&s, a);
            let (lb, db, ob) = shape(&s, b);
            la == lb && da == db && oa != ob
        })
        .expect("two equally shaped input tiles");
    let (ob, oa) = (shape(&s, b).2, shape(&s, a).2);
    for (i, off) in [(a, ob), (b, oa)] {
        if let Event::DmaAsync { transfer, .. } = &mut s.events[i] {
            transfer.src_offset = off;
        }
    }
    let outcome = replay(&g, &s, &input).unwrap();
    assert!(!outcome.mismatches.is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn tiles_partition_every_output(seed in 0u64..1000, l1 in prop::sample::select(vec![4096usize, 8192, 16384])) {
        let g = random_network(seed);
        let mem = MemoryHierarchy::with_sizes(l1, 256 * 1024, 8 << 20);
        let Ok(c) = compile(&g, &mem, &ObjectiveWeights::default()) else {
            return Ok(());
        };
        for layer in &g.layers {
            let mut seen = BTreeSet::new();
            for e in span_events(&c.schedule, &layer.id) {
                if let Event::KernelCall(k) = e {
                    let t = &k.geom;
                    for r in t.out_row..t.out_row + t.rows {
                        for col in t.out_col..t.out_col + t.cols {
                            for ch in t.out_ch..t.out_ch + t.channels {
                                prop_assert!(seen.insert((r, col, ch)), "{} covers {:?} twice", layer.id, (r, col, ch));
                            }
                        }
                    }
                }
            }
            prop_assert_eq!(seen.len(), layer.h_y() * layer.w_y() * layer.c_y(), "{}", &layer.id);
        }
    }
}

#[test]
fn simulation_reports_peaks_and_rejects_bad_configs() {
    let g = conv_chain(2, 16, 16, 8, 3);
    let mem = small_l1();
    let c = build(&g, &mem);
    let input = random_input(&g, 5);
    let r = simulate(&g, &c.schedule, &mem, &SimConfig::default(), &input).unwrap();
    assert_eq!(r.peak["l2"], c.plan.peak_usage);
    assert!(r.peak["l1"] <= mem.l1_bytes);
    assert_eq!(r.output.unwrap(), tileflow_core::run_network(&g, &input).unwrap());

    let bad = SimConfig { cores: 0, ..SimConfig::default() };
    assert!(simulate(&g, &c.schedule, &mem, &bad, &input).is_err());
}
