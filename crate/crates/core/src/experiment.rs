//! Running configured experiments: data generation, loading, simulation,
//! functional check, stats; plus sweeps and the canned experiment set.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig, Fault, WorkloadKind};
use crate::cpu::{CpuOp, KernelPhase};
use crate::isa::{assemble, Precision};
use crate::machine::{Machine, MachineError};
use crate::mapping::{self, MatrixLayout, ScheduleOptions, TilePlan};
use crate::oracle;
use crate::sim::SimTime;
use crate::stats::RunStats;
use crate::tiling;

/// Address space used for every experiment workload.
pub const ASID: u16 = 1;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Machine(#[from] MachineError),
    #[error("functional mismatch: {mismatches} of {total} elements differ from the reference (first at row {row}, col {col})")]
    Mismatch {
        mismatches: usize,
        total: usize,
        row: usize,
        col: usize,
    },
    #[error("relative error {error:e} exceeds tolerance {tolerance:e}")]
    Precision { error: f64, tolerance: f64 },
    #[error("program: {0}")]
    Program(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl ExperimentError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Machine(MachineError::Config(_)) | Self::Program(_) => 2,
            Self::Mismatch { .. } | Self::Precision { .. } => 3,
            Self::Machine(_) => 4,
            Self::Io(_) => 1,
        }
    }

    /// Event trace attached to protocol assertions.
    pub fn trace(&self) -> Option<&[String]> {
        match self {
            Self::Machine(MachineError::Protocol { trace, .. }) => Some(trace),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub config: ExperimentConfig,
    pub stats: RunStats,
    pub events: u64,
    /// Sub-tile the GEMMs ran with (`0, 0`: engine's choice).
    pub subtile: (u16, u16),
    /// Elements compared against the same-order reference.
    pub checked: usize,
    pub max_relative_error: Option<f64>,
}

impl Outcome {
    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.stats.write_csv(f, &self.config.to_toml())
    }
}

/// Operands of one GEMM workload, row-major.
#[derive(Debug, Clone)]
pub struct GemmData {
    pub precision: Precision,
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub a: Vec<u8>,
    pub b: Vec<u8>,
    pub c0: Vec<u8>,
}

/// Uniform values in `[-1, 1)`, rounded to `p`.
pub fn random_matrix(rng: &mut impl Rng, p: Precision, len: usize) -> Vec<u8> {
    let v: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
    oracle::encode(p, &v)
}

impl GemmData {
    pub fn random(p: Precision, m: usize, n: usize, k: usize, accumulate: bool, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_matrix(&mut rng, p, m * k);
        let b = random_matrix(&mut rng, p, k * n);
        let c0 = if accumulate { random_matrix(&mut rng, p, m * n) } else { Vec::new() };
        Self {
            precision: p,
            m,
            n,
            k,
            a,
            b,
            c0,
        }
    }
}

/// Near-square `rows x cols` arrangement of `nodes` tiles, `rows <= cols`.
pub fn node_grid(nodes: usize) -> (usize, usize) {
    let rows = (1..=nodes).filter(|r| nodes % r == 0 && r * r <= nodes).max().unwrap_or(1);
    (rows, nodes / rows)
}

/// `(m, n, k, tr, tc)` of a GEMM-shaped workload.
pub fn gemm_shape(cfg: &ExperimentConfig) -> Option<(u64, u64, u64, u64, u64)> {
    let w = &cfg.workload;
    match w.kind {
        WorkloadKind::Gemm => Some((w.m, w.n, w.k, w.tr, w.tc)),
        WorkloadKind::Independent => Some((w.size, w.size, w.size, w.size, w.size)),
        WorkloadKind::PerNode => {
            let (r, c) = node_grid(cfg.machine.nodes);
            Some((r as u64 * w.size, c as u64 * w.size, w.size, w.size, w.size))
        }
        WorkloadKind::DlLayer => {
            let (m, n, k) = mapping::layer_dims(w.layer.as_ref()?);
            Some((m, n, k, w.tr.min(m), w.tc.min(n)))
        }
        WorkloadKind::Program => None,
    }
}

fn schedule_options(cfg: &ExperimentConfig, subtile: (u16, u16)) -> ScheduleOptions {
    let w = &cfg.workload;
    ScheduleOptions {
        precision: w.precision,
        accumulate: w.accumulate,
        subtile,
        stash: w.stash,
        lock: w.lock,
        post: (w.post_flops > 0).then(|| KernelPhase {
            flops: w.post_flops,
            precision: w.precision,
            label: "post".into(),
        }),
    }
}

fn load_operands(mach: &mut Machine, cfg: &ExperimentConfig, plan: &TilePlan, layout: &MatrixLayout, data: &GemmData) {
    let es = data.precision.element_size();
    mach.load(ASID, layout.a_base, &data.a);
    mach.load(ASID, layout.b_base, &mapping::pack_b(plan, &data.b, es));
    if cfg.workload.accumulate {
        mach.load(ASID, layout.c_base, &mapping::pack_c(plan, &data.c0, es));
    } else {
        mach.load(ASID, layout.c_base, &vec![0u8; data.m * data.n * es]);
    }
}

/// Builds a machine with the operands loaded in the blocked layout and the
/// per-node schedules installed.
pub fn build_machine(
    cfg: &ExperimentConfig,
    plan: &TilePlan,
    data: &GemmData,
    subtile: (u16, u16),
) -> Result<Machine, ExperimentError> {
    let mut mach = Machine::new(cfg.machine.clone())?;
    let layout = MatrixLayout::default();
    load_operands(&mut mach, cfg, plan, &layout, data);
    let programs = mapping::build_schedule(plan, &layout, &schedule_options(cfg, subtile));
    for (node, ops) in programs.into_iter().enumerate() {
        mach.load_program(node, ASID, ops);
    }
    Ok(mach)
}

fn inject_fault(mach: &mut Machine, cfg: &ExperimentConfig) {
    match cfg.run.fault {
        Some(Fault::UnmapPage { vaddr }) => {
            mach.pt.unmap_page(ASID, vaddr);
        }
        Some(Fault::LoseReport { node }) => mach.lose_report = Some(node),
        None => {}
    }
}

/// Operand placement of node `node` in an independent-workload run.
pub fn independent_layout(node: usize) -> MatrixLayout {
    let d = MatrixLayout::default();
    let off = node as u64 * INDEPENDENT_STRIDE;
    MatrixLayout {
        a_base: d.a_base + off,
        b_base: d.b_base + off,
        c_base: d.c_base + off,
    }
}

/// Distance between the operand sets of neighbouring nodes.
pub const INDEPENDENT_STRIDE: u64 = 0x40_0000_0000;

/// Builds a machine where node `i` multiplies `data[i]` on its own operands.
pub fn build_independent(cfg: &ExperimentConfig, data: &[GemmData], subtile: (u16, u16)) -> Result<Machine, ExperimentError> {
    let mut mach = Machine::new(cfg.machine.clone())?;
    let opts = schedule_options(cfg, subtile);
    for (node, d) in data.iter().enumerate() {
        let plan = mapping::plan_tiles(d.m as u64, d.n as u64, d.k as u64, d.m as u64, d.n as u64, 1);
        let layout = independent_layout(node);
        load_operands(&mut mach, cfg, &plan, &layout, d);
        let ops = mapping::build_schedule(&plan, &layout, &opts).swap_remove(0);
        mach.load_program(node, ASID, ops);
    }
    Ok(mach)
}

/// Simulates the first tile alone with each candidate sub-tile and keeps
/// the fastest.
pub fn autotune_subtile(cfg: &ExperimentConfig, plan: &TilePlan, data: &GemmData) -> Result<(u16, u16), ExperimentError> {
    let t = plan.tiles[0];
    let cands = tiling::candidates(t.h, t.w, plan.k, data.precision, cfg.machine.mmae.buffer_bytes)
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
    let mut trial_cfg = cfg.clone();
    trial_cfg.machine.nodes = 1;
    trial_cfg.workload.post_flops = 0;
    trial_cfg.workload.lock = false;
    let trial_plan = mapping::plan_tiles(t.h, t.w, plan.k, t.h, t.w, 1);
    let es = data.precision.element_size();
    let sub = |src: &[u8], rows: std::ops::Range<usize>, cols: std::ops::Range<usize>, ld: usize| -> Vec<u8> {
        let mut out = Vec::with_capacity(rows.len() * cols.len() * es);
        for r in rows {
            out.extend_from_slice(&src[(r * ld + cols.start) * es..(r * ld + cols.end) * es]);
        }
        out
    };
    let (h, w, k) = (t.h as usize, t.w as usize, plan.k as usize);
    let trial = GemmData {
        precision: data.precision,
        m: h,
        n: w,
        k,
        a: sub(&data.a, 0..h, 0..k, k),
        b: sub(&data.b, 0..k, 0..w, data.n),
        c0: if cfg.workload.accumulate { sub(&data.c0, 0..h, 0..w, data.n) } else { Vec::new() },
    };
    let mut err = None;
    // a trial still running when the best one so far had finished cannot win
    let mut limit: Option<SimTime> = None;
    let best = tiling::autotune(&cands, |c| {
        let run = build_machine(&trial_cfg, &trial_plan, &trial, (c.ttr, c.ttc)).and_then(|mut m| {
            Ok(match m.run_until(limit)? {
                Some(s) => {
                    limit = Some(limit.map_or(s.end, |l| l.min(s.end)));
                    RunStats::collect(&m).global.span_cycles
                }
                None => u64::MAX,
            })
        });
        run.unwrap_or_else(|e| {
            err.get_or_insert(e);
            u64::MAX
        })
    });
    if let Some(e) = err {
        return Err(e);
    }
    Ok(best.map(|c| (c.ttr, c.ttc)).unwrap_or((0, 0)))
}

/// Compares `got` with the same-order reference; returns the element count.
pub fn check_bit_exact(data: &GemmData, accumulate: bool, got: &[u8]) -> Result<usize, ExperimentError> {
    let want = oracle::same_order(data.precision, &data.a, &data.b, &data.c0, data.m, data.n, data.k, accumulate);
    let es = data.precision.element_size();
    let mut first = None;
    let mut mismatches = 0;
    for (i, (g, w)) in got.chunks(es).zip(want.chunks(es)).enumerate() {
        if g != w {
            mismatches += 1;
            first.get_or_insert(i);
        }
    }
    match first {
        None => Ok(data.m * data.n),
        Some(i) => Err(ExperimentError::Mismatch {
            mismatches,
            total: data.m * data.n,
            row: i / data.n,
            col: i % data.n,
        }),
    }
}

/// Runs one experiment to completion.
pub fn run(cfg: &ExperimentConfig) -> Result<Outcome, ExperimentError> {
    cfg.check()?;
    match cfg.workload.kind {
        WorkloadKind::Program => run_program(cfg),
        WorkloadKind::Independent => run_independent(cfg),
        _ => run_gemm(cfg),
    }
}

fn check_result(cfg: &ExperimentConfig, data: &GemmData, got: &[u8], checked: &mut usize, max_err: &mut Option<f64>) -> Result<(), ExperimentError> {
    let w = &cfg.workload;
    if cfg.run.functional_check {
        *checked += check_bit_exact(data, w.accumulate, got)?;
    }
    if cfg.run.precision_check {
        let e = oracle::max_relative_error(w.precision, &data.a, &data.b, &data.c0, got, data.m, data.n, data.k, w.accumulate);
        *max_err = Some(max_err.map_or(e, |m: f64| m.max(e)));
        let tolerance = oracle::tolerance(w.precision);
        if e > tolerance {
            return Err(ExperimentError::Precision { error: e, tolerance });
        }
    }
    Ok(())
}

fn run_independent(cfg: &ExperimentConfig) -> Result<Outcome, ExperimentError> {
    let w = &cfg.workload;
    let s = w.size as usize;
    let data: Vec<GemmData> = (0..cfg.machine.nodes)
        .map(|node| GemmData::random(w.precision, s, s, s, w.accumulate, cfg.run.seed.wrapping_add(node as u64)))
        .collect();
    let subtile = if w.autotune {
        let plan = mapping::plan_tiles(w.size, w.size, w.size, w.size, w.size, 1);
        autotune_subtile(cfg, &plan, &data[0])?
    } else {
        (w.ttr, w.ttc)
    };
    let mut mach = build_independent(cfg, &data, subtile)?;
    inject_fault(&mut mach, cfg);
    let summary = mach.run()?;
    let es = w.precision.element_size() as u64;
    let mut checked = 0;
    let mut max_relative_error = None;
    for (node, d) in data.iter().enumerate() {
        let got = mach.read(ASID, independent_layout(node).c_base, w.size * w.size * es)?;
        check_result(cfg, d, &got, &mut checked, &mut max_relative_error)?;
    }
    Ok(Outcome {
        config: cfg.clone(),
        stats: RunStats::collect(&mach),
        events: summary.events,
        subtile,
        checked,
        max_relative_error,
    })
}

fn run_gemm(cfg: &ExperimentConfig) -> Result<Outcome, ExperimentError> {
    let w = &cfg.workload;
    let (m, n, k, tr, tc) = gemm_shape(cfg).ok_or_else(|| ConfigError::Invalid("workload has no GEMM shape".into()))?;
    let plan = mapping::plan_tiles_with(m, n, k, tr, tc, cfg.machine.nodes, w.assignment);
    let data = GemmData::random(w.precision, m as usize, n as usize, k as usize, w.accumulate, cfg.run.seed);
    let subtile = if w.autotune {
        autotune_subtile(cfg, &plan, &data)?
    } else {
        (w.ttr, w.ttc)
    };
    let mut mach = build_machine(cfg, &plan, &data, subtile)?;
    inject_fault(&mut mach, cfg);
    let summary = mach.run()?;
    let es = w.precision.element_size();
    let blocked = mach.read(ASID, MatrixLayout::default().c_base, m * n * es as u64)?;
    let got = mapping::unpack_c(&plan, &blocked, es);
    let mut checked = 0;
    let mut max_relative_error = None;
    check_result(cfg, &data, &got, &mut checked, &mut max_relative_error)?;
    Ok(Outcome {
        config: cfg.clone(),
        stats: RunStats::collect(&mach),
        events: summary.events,
        subtile,
        checked,
        max_relative_error,
    })
}

fn run_program(cfg: &ExperimentConfig) -> Result<Outcome, ExperimentError> {
    let w = &cfg.workload;
    let path = w.program.as_ref().expect("checked");
    let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::Program(format!("{}: {e}", path.display())))?;
    let prog = assemble(&text).map_err(|e| ExperimentError::Program(e.to_string()))?;
    let mut mach = Machine::new(cfg.machine.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
    let es = w.precision.element_size() as u64;
    for &(addr, len) in &w.regions {
        let data = random_matrix(&mut rng, w.precision, len.div_ceil(es) as usize);
        mach.load(ASID, addr, &data[..len as usize]);
    }
    let mut ops: Vec<CpuOp> = prog
        .registers
        .iter()
        .map(|(&reg, &value)| CpuOp::SetReg { reg, value })
        .collect();
    ops.extend(prog.instructions.iter().map(|&i| CpuOp::Mpais(i)));
    mach.load_program(0, ASID, ops);
    inject_fault(&mut mach, cfg);
    let summary = mach.run()?;
    Ok(Outcome {
        config: cfg.clone(),
        stats: RunStats::collect(&mach),
        events: summary.events,
        subtile: (0, 0),
        checked: 0,
        max_relative_error: None,
    })
}

/// One sweep axis: a config key and the literal values it takes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Axis {
    pub key: String,
    pub values: Vec<String>,
}

impl Axis {
    pub fn new(key: &str, values: &[&str]) -> Self {
        Self {
            key: key.into(),
            values: values.iter().map(|v| v.to_string()).collect(),
        }
    }

    /// Parses `key=v1,v2,...`.
    pub fn parse(s: &str) -> Result<Self, ConfigError> {
        let (k, v) = s.split_once('=').ok_or_else(|| ConfigError::Override(s.into()))?;
        let values: Vec<String> = v.split(',').map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect();
        if k.trim().is_empty() {
            return Err(ConfigError::Override(s.into()));
        }
        Ok(Self {
            key: k.trim().into(),
            values,
        })
    }
}

/// Cartesian product of the axes as override lists. Empty axes are skipped.
pub fn sweep_points(axes: &[Axis]) -> Vec<Vec<String>> {
    let mut points = vec![Vec::new()];
    for a in axes.iter().filter(|a| !a.values.is_empty()) {
        points = points
            .into_iter()
            .flat_map(|p| {
                a.values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push(format!("{}={}", a.key, v));
                    q
                })
            })
            .collect();
    }
    points
}

#[derive(Debug)]
pub struct SweepEntry {
    pub index: usize,
    pub overrides: Vec<String>,
    pub csv: PathBuf,
    pub result: Result<Outcome, ExperimentError>,
}

/// Runs every sweep point in parallel, writes one CSV per successful run and
/// `manifest.csv` to `out_dir`. Failures are recorded, not propagated.
pub fn sweep(base: &ExperimentConfig, axes: &[Axis], out_dir: &Path) -> std::io::Result<Vec<SweepEntry>> {
    std::fs::create_dir_all(out_dir)?;
    let points = sweep_points(axes);
    let entries: Vec<SweepEntry> = points
        .into_par_iter()
        .enumerate()
        .map(|(index, overrides)| {
            let csv = out_dir.join(format!("run-{index:03}.csv"));
            let result = base
                .with_overrides(&overrides)
                .map_err(ExperimentError::from)
                .and_then(|c| run(&c));
            let result = match result {
                Ok(o) => o.write_csv(&csv).map(|_| o).map_err(ExperimentError::from),
                Err(e) => Err(e),
            };
            SweepEntry {
                index,
                overrides,
                csv,
                result,
            }
        })
        .collect();
    write_manifest(&entries, &out_dir.join("manifest.csv"))?;
    Ok(entries)
}

fn write_manifest(entries: &[SweepEntry], path: &Path) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["run", "overrides", "status", "exit_code", "csv", "efficiency", "gflops", "message"])?;
    for e in entries {
        let (status, code, eff, gf, msg, file) = match &e.result {
            Ok(o) => (
                "ok",
                0,
                format!("{:.6}", o.stats.global.efficiency()),
                format!("{:.3}", o.stats.gflops(&o.stats.global)),
                String::new(),
                e.csv.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
            ),
            Err(err) => ("failed", err.exit_code(), String::new(), String::new(), err.to_string(), String::new()),
        };
        w.write_record([
            e.index.to_string(),
            e.overrides.join(" "),
            status.to_string(),
            code.to_string(),
            file,
            eff,
            gf,
            msg,
        ])?;
    }
    w.flush()
}

/// A named base configuration plus sweep axes.
#[derive(Debug, Clone)]
pub struct Canned {
    pub name: &'static str,
    pub description: &'static str,
    pub base: ExperimentConfig,
    pub axes: Vec<Axis>,
}

fn base(f: impl FnOnce(&mut ExperimentConfig)) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    f(&mut c);
    c
}

pub fn canned() -> Vec<Canned> {
    vec![
        Canned {
            name: "fig6_matlb",
            description: "single node FP64, 4 KB pages, 1024 first-level tiles, 64x64 sub-tiles: size x mATLB on/off",
            base: base(|c| {
                c.workload.kind = WorkloadKind::PerNode;
                c.workload.precision = Precision::Fp64;
                c.workload.ttr = 64;
                c.workload.ttc = 64;
            }),
            axes: vec![
                Axis::new("workload.size", &["128", "256", "512", "1024"]),
                Axis::new("machine.translation.matlb", &["true", "false"]),
            ],
        },
        Canned {
            name: "fig7_scalability",
            description: "FP32, an independent GEMM per node, autotuned sub-tiles, 1 to 16 nodes x sizes",
            base: base(|c| {
                c.workload.kind = WorkloadKind::Independent;
                c.workload.precision = Precision::Fp32;
                c.workload.autotune = true;
            }),
            axes: vec![
                Axis::new("machine.nodes", &["1", "2", "4", "8", "16"]),
                Axis::new("workload.size", &["256", "512", "1024"]),
            ],
        },
        Canned {
            name: "throughput",
            description: "16 nodes FP32, one 1024^3 tile per node, autotuned sub-tiles",
            base: base(|c| {
                c.machine.nodes = 16;
                c.workload.kind = WorkloadKind::PerNode;
                c.workload.precision = Precision::Fp32;
                c.workload.autotune = true;
            }),
            axes: Vec::new(),
        },
        Canned {
            name: "peak",
            description: "ideal memory, one 1024^3 task per precision",
            base: base(|c| {
                c.machine.mmae.ideal_memory = true;
                c.workload.kind = WorkloadKind::PerNode;
            }),
            axes: vec![Axis::new("workload.precision", &["\"fp64\"", "\"fp32\"", "\"fp16\""])],
        },
        Canned {
            name: "dl_layers",
            description: "GEMMs lowered from representative conv, FC and attention layers, 16 nodes FP32",
            base: base(|c| {
                c.machine.nodes = 16;
                c.workload.kind = WorkloadKind::DlLayer;
                c.workload.precision = Precision::Fp32;
                c.workload.tr = 1024;
                c.workload.tc = 1024;
                c.workload.layer = Some(mapping::DlLayer::FullyConnected {
                    inputs: 768,
                    outputs: 768,
                    batch: 256,
                });
                c.run.functional_check = false;
            }),
            axes: vec![Axis {
                key: "workload.layer".into(),
                values: vec![
                    "{ kind = \"conv\", filters = 256, channels = 64, kh = 1, kw = 1, out_h = 56, out_w = 56, batch = 1 }".into(),
                    "{ kind = \"conv\", filters = 512, channels = 128, kh = 3, kw = 3, out_h = 28, out_w = 28, batch = 1 }".into(),
                    "{ kind = \"fully-connected\", inputs = 768, outputs = 3072, batch = 512 }".into(),
                    "{ kind = \"attention-projection\", d_model = 1024, seq = 512 }".into(),
                ],
            }],
        },
    ]
}

pub fn find_canned(name: &str) -> Option<Canned> {
    canned().into_iter().find(|c| c.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids() {
        assert_eq!(node_grid(1), (1, 1));
        assert_eq!(node_grid(2), (1, 2));
        assert_eq!(node_grid(4), (2, 2));
        assert_eq!(node_grid(8), (2, 4));
        assert_eq!(node_grid(16), (4, 4));
    }

    #[test]
    fn sweep_points_product() {
        let axes = [Axis::new("a", &["1", "2", "3"]), Axis::new("b", &["x", "y"])];
        assert_eq!(sweep_points(&axes).len(), 6);
        assert_eq!(sweep_points(&[]), vec![Vec::<String>::new()]);
        assert_eq!(sweep_points(&[Axis::new("a", &[])]).len(), 1);
        assert_eq!(Axis::parse("w.size=1,2").unwrap(), Axis::new("w.size", &["1", "2"]));
    }

    #[test]
    fn canned_configs_are_valid() {
        for c in canned() {
            c.base.check().unwrap();
            for p in sweep_points(&c.axes) {
                c.base.with_overrides(&p).unwrap_or_else(|e| panic!("{}: {p:?}: {e}", c.name));
            }
        }
    }

    #[test]
    fn small_gemm_runs_bit_exact() {
        let cfg = ExperimentConfig::from_toml_with(
            "",
            &["workload.m=40".into(), "workload.n=24".into(), "workload.k=33".into(), "workload.tr=16".into(), "workload.tc=16".into(), "machine.nodes=2".into()],
        )
        .unwrap();
        let o = run(&cfg).unwrap();
        assert_eq!(o.checked, 40 * 24);
        assert_eq!(o.stats.global.flops_completed, 2 * 40 * 24 * 33);
    }
}
