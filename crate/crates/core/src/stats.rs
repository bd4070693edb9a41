//! Per-node counters, efficiency, and the `maco-stats-v1` CSV.
//!
//! Layout: `#schema=maco-stats-v1`, the header line, one row per active
//! node, one `global` row, then the effective configuration as `#config `
//! comment lines.

use std::io::Write;

use serde::Serialize;

use crate::machine::Machine;
use crate::noc::Port;
use crate::sim::Domain;

pub const SCHEMA: &str = "maco-stats-v1";

pub const COLUMNS: [&str; 22] = [
    "row",
    "node",
    "mmae_busy_cycles",
    "dma_stall_translation",
    "dma_stall_memory",
    "flops_completed",
    "l3_hits",
    "l3_misses",
    "tlb_misses",
    "ptw_count",
    "matlb_prewalks",
    "noc_bytes",
    "span_cycles",
    "efficiency",
    "gflops",
    "tasks_ok",
    "tasks_failed",
    "cpu_busy_cycles",
    "post_l3_hits",
    "post_l3_misses",
    "link_max_bytes_per_cycle",
    "wall_ps",
];

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PerfCounters {
    pub mmae_busy_cycles: u64,
    pub dma_stall_translation: u64,
    pub dma_stall_memory: u64,
    pub flops_completed: u64,
    pub l3_hits: u64,
    pub l3_misses: u64,
    pub tlb_misses: u64,
    pub ptw_count: u64,
    pub matlb_prewalks: u64,
    /// Bytes injected into the mesh by this node.
    pub noc_bytes: u64,
    /// MMAE cycles from the first GEMM configure to the last completion.
    pub span_cycles: u64,
    pub ideal_cycles: f64,
    pub tasks_ok: u64,
    pub tasks_failed: u64,
    pub cpu_busy_cycles: u64,
    pub post_l3_hits: u64,
    pub post_l3_misses: u64,
    pub link_max_bytes_per_cycle: f64,
}

impl PerfCounters {
    /// Achieved fraction of the MMAE's modeled peak over its GEMM span.
    pub fn efficiency(&self) -> f64 {
        if self.span_cycles == 0 {
            0.0
        } else {
            self.ideal_cycles / self.span_cycles as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunStats {
    pub nodes: Vec<PerfCounters>,
    pub global: PerfCounters,
    pub wall_ps: u64,
    pub mmae_hz: u64,
}

impl RunStats {
    pub fn collect(m: &Machine) -> Self {
        let mp = m.tb.period(Domain::Mmae);
        let mut nodes = Vec::new();
        let mut first = None::<u64>;
        let mut last = 0u64;
        for (i, n) in m.nodes.iter().enumerate() {
            let s = &n.mmae.stats;
            let ms = &m.mem.stats[i];
            let inj = m.mem.mesh.link_stats(i, Port::Inject);
            let max_link = m
                .mem
                .mesh
                .all_link_stats()
                .filter(|(node, _, _)| *node == i)
                .map(|(_, _, l)| l.throughput())
                .fold(0.0, f64::max);
            if let Some(t) = s.first_gemm_tick {
                first = Some(first.map_or(t, |f: u64| f.min(t)));
                last = last.max(s.last_gemm_tick);
            }
            nodes.push(PerfCounters {
                mmae_busy_cycles: s.busy_cycles,
                dma_stall_translation: s.dma_stall_translation,
                dma_stall_memory: s.dma_stall_memory,
                flops_completed: s.flops,
                l3_hits: ms.l3_hits,
                l3_misses: ms.l3_misses,
                tlb_misses: n.mmu.stats.tlb_misses,
                ptw_count: n.mmu.stats.walks,
                matlb_prewalks: n.mmu.stats.matlb_prewalks,
                noc_bytes: inj.bytes,
                span_cycles: s.span_cycles(mp),
                ideal_cycles: s.ideal_cycles,
                tasks_ok: s.tasks_ok,
                tasks_failed: s.tasks_failed,
                cpu_busy_cycles: n.core.stats.busy_cycles,
                post_l3_hits: n.core.stats.post_l3_hits,
                post_l3_misses: n.core.stats.post_l3_misses,
                link_max_bytes_per_cycle: max_link,
            });
        }
        let sum = |f: fn(&PerfCounters) -> u64| nodes.iter().map(f).sum::<u64>();
        let global = PerfCounters {
            mmae_busy_cycles: sum(|c| c.mmae_busy_cycles),
            dma_stall_translation: sum(|c| c.dma_stall_translation),
            dma_stall_memory: sum(|c| c.dma_stall_memory),
            flops_completed: sum(|c| c.flops_completed),
            l3_hits: sum(|c| c.l3_hits),
            l3_misses: sum(|c| c.l3_misses),
            tlb_misses: sum(|c| c.tlb_misses),
            ptw_count: sum(|c| c.ptw_count),
            matlb_prewalks: sum(|c| c.matlb_prewalks),
            noc_bytes: sum(|c| c.noc_bytes),
            span_cycles: first.map_or(0, |f| (last - f).div_ceil(mp)),
            // the global span covers every node's MMAE
            ideal_cycles: nodes.iter().map(|c| c.ideal_cycles).sum::<f64>() / nodes.len().max(1) as f64,
            tasks_ok: sum(|c| c.tasks_ok),
            tasks_failed: sum(|c| c.tasks_failed),
            cpu_busy_cycles: sum(|c| c.cpu_busy_cycles),
            post_l3_hits: sum(|c| c.post_l3_hits),
            post_l3_misses: sum(|c| c.post_l3_misses),
            link_max_bytes_per_cycle: m.mem.mesh.all_link_stats().map(|(_, _, l)| l.throughput()).fold(0.0, f64::max),
        };
        Self {
            nodes,
            global,
            wall_ps: m.tb.to_picoseconds(m.end).round() as u64,
            mmae_hz: m.cfg.mmae_hz,
        }
    }

    /// Mean of the per-node efficiencies.
    pub fn mean_node_efficiency(&self) -> f64 {
        if self.nodes.is_empty() {
            return 0.0;
        }
        self.nodes.iter().map(|c| c.efficiency()).sum::<f64>() / self.nodes.len() as f64
    }

    /// Aggregate GFLOPS over the global GEMM span.
    pub fn gflops(&self, c: &PerfCounters) -> f64 {
        if c.span_cycles == 0 {
            0.0
        } else {
            c.flops_completed as f64 * self.mmae_hz as f64 / c.span_cycles as f64 / 1e9
        }
    }

    pub fn write_csv<W: Write>(&self, out: W, config_echo: &str) -> std::io::Result<()> {
        let mut raw = out;
        writeln!(raw, "#schema={SCHEMA}")?;
        {
            let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(&mut raw);
            w.write_record(COLUMNS)?;
            for (i, c) in self.nodes.iter().enumerate() {
                w.write_record(self.record("node", &i.to_string(), c, 0))?;
            }
            w.write_record(self.record("global", "", &self.global, self.wall_ps))?;
            w.flush()?;
        }
        for line in config_echo.lines() {
            writeln!(raw, "#config {line}")?;
        }
        Ok(())
    }

    fn record(&self, row: &str, node: &str, c: &PerfCounters, wall: u64) -> Vec<String> {
        vec![
            row.to_string(),
            node.to_string(),
            c.mmae_busy_cycles.to_string(),
            c.dma_stall_translation.to_string(),
            c.dma_stall_memory.to_string(),
            c.flops_completed.to_string(),
            c.l3_hits.to_string(),
            c.l3_misses.to_string(),
            c.tlb_misses.to_string(),
            c.ptw_count.to_string(),
            c.matlb_prewalks.to_string(),
            c.noc_bytes.to_string(),
            c.span_cycles.to_string(),
            format!("{:.6}", c.efficiency()),
            format!("{:.3}", self.gflops(c)),
            c.tasks_ok.to_string(),
            c.tasks_failed.to_string(),
            c.cpu_busy_cycles.to_string(),
            c.post_l3_hits.to_string(),
            c.post_l3_misses.to_string(),
            format!("{:.3}", c.link_max_bytes_per_cycle),
            wall.to_string(),
        ]
    }
}

/// A parsed stats file.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsFile {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub config: String,
}

#[derive(Debug, thiserror::Error)]
pub enum StatsError {
    #[error("not a {SCHEMA} file (first line `{0}`)")]
    Schema(String),
    #[error("column mismatch: {0}")]
    Columns(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub fn parse_csv(text: &str) -> Result<StatsFile, StatsError> {
    let first = text.lines().next().unwrap_or("");
    if first != format!("#schema={SCHEMA}") {
        return Err(StatsError::Schema(first.to_string()));
    }
    let body: String = text
        .lines()
        .skip(1)
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect();
    let config: String = text
        .lines()
        .filter_map(|l| l.strip_prefix("#config "))
        .map(|l| format!("{l}\n"))
        .collect();
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    if header != COLUMNS {
        return Err(StatsError::Columns(header.join(",")));
    }
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(String::from).collect()))
        .collect::<Result<Vec<Vec<String>>, _>>()?;
    Ok(StatsFile { header, rows, config })
}
