use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tileflow_core::alloc::{render_memory_map, AllocEvent};
use tileflow_core::fixtures::{conv_chain, dw_pw_chain, mobilenet_v1, random_input, random_network, residual_diamond};
use tileflow_core::golden::{read_dump, write_dump};
use tileflow_core::graph::{to_document, DirBlobs};
use tileflow_core::memsim::{simulate as run_sim, SimConfig, SimReport};
use tileflow_core::schedule::emit_c;
use tileflow_core::tiler::{tile_network, LayerReport, MemoryHierarchy, ObjectiveWeights};
use tileflow_core::{compile, parse_network, Compiled, NetworkGraph};

use crate::{EmitArgs, Fixture, GenArgs, RunArgs, SimArgs};

pub const TILING_FILE: &str = "tiling.json";
pub const ALLOCATION_FILE: &str = "allocation.json";
pub const MEMORY_MAP_FILE: &str = "memory_map.txt";
pub const SCHEDULE_FILE: &str = "schedule.json";
pub const SIMULATION_FILE: &str = "simulation.json";
pub const OUTPUT_FILE: &str = "output.bin";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Everything that determines the compiled result, recorded in each report.
#[derive(Serialize)]
struct Settings<'a> {
    l1: usize,
    l2: usize,
    l3: usize,
    l2l1_bandwidth: f64,
    l3l2_bandwidth: f64,
    objective: &'a ObjectiveWeights,
}

struct Loaded {
    graph: NetworkGraph,
    mem: MemoryHierarchy,
    weights: ObjectiveWeights,
    /// SHA-256 over the document, every layer's weights and the settings.
    digest: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn load(a: &RunArgs) -> Result<Loaded> {
    let text = fs::read_to_string(&a.net).with_context(|| format!("reading {}", a.net.display()))?;
    let dir = match &a.weights_dir {
        Some(d) => d.clone(),
        None => a.net.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let graph = parse_network(&text, &DirBlobs(dir)).with_context(|| format!("importing {}", a.net.display()))?;
    let mem = a.mem.hierarchy();
    let weights = a.objective.weights();
    let settings = Settings {
        l1: mem.l1_bytes,
        l2: mem.l2_bytes,
        l3: mem.l3_bytes,
        l2l1_bandwidth: mem.l2l1_bandwidth,
        l3l2_bandwidth: mem.l3l2_bandwidth,
        objective: &weights,
    };
    let mut h = Sha256::new();
    h.update(text.as_bytes());
    for l in &graph.layers {
        h.update(l.id.as_bytes());
        if let Some(w) = &l.weights {
            h.update(w.iter().map(|&v| v as u8).collect::<Vec<_>>());
        }
    }
    h.update(serde_json::to_vec(&settings)?);
    Ok(Loaded { graph, mem, weights, digest: hex(&h.finalize()) })
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf> {
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

#[derive(Serialize, Deserialize)]
pub struct TilingFile {
    pub digest: String,
    pub l2_reserve: usize,
    pub layers: Vec<LayerReport>,
}

#[derive(Serialize, Deserialize)]
pub struct AllocationFile {
    pub capacity: usize,
    pub peak_usage: usize,
    pub events: Vec<AllocEvent>,
}

#[derive(Serialize, Deserialize)]
pub struct SimulationFile {
    pub digest: String,
    pub passed: bool,
    /// `seed:<n>` or the input dump's SHA-256.
    pub input: String,
    pub tiling_attempts: usize,
    pub report: SimReport,
}

#[derive(Serialize, Deserialize)]
pub struct ManifestFile {
    pub digest: String,
    #[serde(flatten)]
    pub manifest: tileflow_core::schedule::Manifest,
}

fn l3_summary(layers: &[LayerReport]) -> String {
    let spilled = layers.iter().filter(|l| l.stage > 0).count();
    format!("{} layers, {spilled} with L3 tiling", layers.len())
}

pub fn tile(a: &RunArgs) -> Result<()> {
    let l = load(a)?;
    let t = tile_network(&l.graph, &l.mem, &l.weights)?;
    out_dir(&a.out)?;
    let layers = t.report();
    let path = write_json(&a.out, TILING_FILE, &TilingFile { digest: l.digest, l2_reserve: t.l2_reserve, layers })?;
    println!("{}: {}", path.display(), l3_summary(&t.report()));
    Ok(())
}

fn write_compiled(dir: &Path, digest: &str, c: &Compiled) -> Result<()> {
    write_json(dir, TILING_FILE, &TilingFile { digest: digest.to_string(), l2_reserve: c.tiling.l2_reserve, layers: c.tiling.report() })?;
    write_json(
        dir,
        ALLOCATION_FILE,
        &AllocationFile { capacity: c.plan.capacity, peak_usage: c.plan.peak_usage, events: c.plan.events.clone() },
    )?;
    fs::write(dir.join(MEMORY_MAP_FILE), render_memory_map(&c.plan))?;
    write_json(dir, SCHEDULE_FILE, &c.schedule)?;
    Ok(())
}

pub fn simulate(a: &SimArgs) -> Result<()> {
    let l = load(&a.run)?;
    let c = compile(&l.graph, &l.mem, &l.weights)?;
    let (input, source) = match &a.input {
        Some(p) => {
            let bytes = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
            let t = read_dump(&bytes, l.graph.input.quantum)?;
            (t, hex(&Sha256::digest(&bytes)))
        }
        None => (random_input(&l.graph, a.seed), format!("seed:{}", a.seed)),
    };
    let mut cfg = SimConfig::default();
    if let Some(cores) = a.cores {
        cfg.cores = cores;
    }
    let report = run_sim(&l.graph, &c.schedule, &l.mem, &cfg, &input)?;
    out_dir(&a.run.out)?;
    write_compiled(&a.run.out, &l.digest, &c)?;
    if let Some(out) = &report.output {
        fs::write(a.run.out.join(OUTPUT_FILE), write_dump(out))?;
    }
    let passed = report.bit_exact && report.hazards.is_empty();
    let summary = format!("{} tiles checked, {} cycles, L2 peak {} B", report.tiles_checked, report.timing.total_cycles, c.plan.peak_usage);
    let mismatches = report.mismatches.len();
    write_json(
        &a.run.out,
        SIMULATION_FILE,
        &SimulationFile { digest: l.digest, passed, input: source, tiling_attempts: c.attempts, report },
    )?;
    if !passed {
        bail!("simulation differs from the golden model in {mismatches} place(s); see {SIMULATION_FILE}");
    }
    println!("bit-exact: {summary}");
    Ok(())
}

/// Why the simulation report in `dir` does not vouch for `digest`, if it does not.
fn unverified(dir: &Path, digest: &str) -> Option<String> {
    let path = dir.join(SIMULATION_FILE);
    let Ok(text) = fs::read_to_string(&path) else {
        return Some(format!("no simulation report at {}", path.display()));
    };
    match serde_json::from_str::<serde_json::Value>(&text) {
        Ok(v) if v["digest"] != digest => Some("simulation report is for a different network or configuration".to_string()),
        Ok(v) if v["passed"] != true => Some("simulation report did not pass".to_string()),
        Ok(_) => None,
        Err(e) => Some(format!("unreadable simulation report: {e}")),
    }
}

pub fn emit(a: &EmitArgs) -> Result<()> {
    let l = load(&a.run)?;
    let warning = unverified(&a.run.out, &l.digest);
    if let Some(w) = &warning {
        if !a.force {
            bail!("{w}; run `tileflow simulate` first or pass --force");
        }
        eprintln!("warning: {w}; emitting anyway");
    }
    let c = compile(&l.graph, &l.mem, &l.weights)?;
    let mut bundle = emit_c(&l.graph, &c.tiling, &c.plan, &c.schedule);
    if let Some(w) = warning {
        bundle.manifest.warnings.push(format!("emitted with --force: {w}"));
    }
    let src = a.run.out.join("src");
    out_dir(&src)?;
    for (name, text) in &bundle.files {
        fs::write(src.join(name), text).with_context(|| format!("writing {name}"))?;
    }
    write_json(&a.run.out, MANIFEST_FILE, &ManifestFile { digest: l.digest, manifest: bundle.manifest })?;
    println!("{} files in {}", bundle.files.len(), src.display());
    Ok(())
}

pub fn gen(a: &GenArgs) -> Result<()> {
    let g = match a.fixture {
        Fixture::ConvChain => conv_chain(3, 16, 16, 8, 3),
        Fixture::DwPw => dw_pw_chain(a.seed, 3),
        Fixture::Residual => residual_diamond(2),
        Fixture::Mobilenet => mobilenet_v1(a.seed, a.resolution),
        Fixture::Random => random_network(a.seed),
    };
    let (doc, blobs) = to_document(&g);
    out_dir(&a.out)?;
    let path = write_json(&a.out, "network.json", &doc)?;
    for (name, bytes) in &blobs {
        fs::write(a.out.join(name), bytes).with_context(|| format!("writing {name}"))?;
    }
    println!("{}: {} layers, {} blobs", path.display(), g.layers.len(), blobs.len());
    Ok(())
}
