//! The assembled system: per-node core, MMU, MMAE and task queues around a
//! shared memory hierarchy and mesh, driven by one event queue.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cpu::{kernel_cycles, Core, CpuConfig, CpuOp};
use crate::isa::{validate_params, Instruction, Opcode, ParamBlock, Task};
use crate::memory::{AccessKind, MemError, MemoryConfig, MemorySystem, Periods};
use crate::mmae::{Ctx, Mmae, MmaeConfig, MmaeEvent};
use crate::noc::{MessageClass, NocConfig};
use crate::queues::{Asid, ExceptionType, Maid, MasterTaskQueue, SlaveTaskQueue, ALLOC_FAILURE};
use crate::sim::{Domain, EventQueue, SimError, SimTime, Timebase};
use crate::tiling;
use crate::translation::{FramePolicy, Mmu, PageTables, Requester, TranslationConfig, TranslationError};

#[derive(Debug, Error)]
pub enum MachineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("protocol assertion: {msg}")]
    Protocol { msg: String, trace: Vec<String> },
    #[error(transparent)]
    Translation(#[from] TranslationError),
    #[error(transparent)]
    Memory(#[from] MemError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MachineConfig {
    /// Active nodes: mesh node ids `0..nodes`.
    pub nodes: usize,
    pub cpu_hz: u64,
    pub mmae_hz: u64,
    pub noc_hz: u64,
    pub mtq_depth: usize,
    pub cpu: CpuConfig,
    pub mmae: MmaeConfig,
    pub memory: MemoryConfig,
    pub noc: NocConfig,
    pub translation: TranslationConfig,
    pub frames: FramePolicy,
}

impl Default for MachineConfig {
    fn default() -> Self {
        Self {
            nodes: 1,
            cpu_hz: 2_200_000_000,
            mmae_hz: 2_500_000_000,
            noc_hz: 2_000_000_000,
            mtq_depth: 8,
            cpu: CpuConfig::default(),
            mmae: MmaeConfig::default(),
            memory: MemoryConfig::default(),
            noc: NocConfig::default(),
            translation: TranslationConfig::default(),
            frames: FramePolicy::default(),
        }
    }
}

impl MachineConfig {
    pub fn validate(&self) -> Result<(), MachineError> {
        let mesh = self.noc.width as usize * self.noc.height as usize;
        let bad = |m: String| Err(MachineError::Config(m));
        if self.nodes == 0 || self.nodes > mesh {
            return bad(format!("node count {} must be in 1..={mesh}", self.nodes));
        }
        if self.mtq_depth == 0 {
            return bad("mtq_depth must be positive".into());
        }
        if self.memory.mc_nodes.is_empty() || self.memory.mc_nodes.iter().any(|&n| n >= mesh) {
            return bad("memory controllers must sit on mesh nodes".into());
        }
        let lat = [
            ("memory.l1_latency", self.memory.l1_latency),
            ("memory.l2_latency", self.memory.l2_latency),
            ("memory.l3_latency", self.memory.l3_latency),
            ("memory.memory_latency", self.memory.memory_latency),
            ("noc.hop_latency", self.noc.hop_latency),
            ("translation.l2_hit_latency", self.translation.l2_hit_latency),
            ("translation.l1_hit_latency", self.translation.l1_hit_latency),
        ];
        for (k, v) in lat {
            if v == 0 {
                return bad(format!("{k} must be positive"));
            }
        }
        if !(self.cpu.efficiency > 0.0 && self.cpu.efficiency <= 1.0) {
            return bad("cpu.efficiency must be in (0, 1]".into());
        }
        if self.mmae.dma_window_lines < 8 {
            return bad("mmae.dma_window_lines must cover one granule (>= 8)".into());
        }
        if !(self.memory.lock_fraction >= 0.0 && self.memory.lock_fraction <= 1.0) {
            return bad("memory.lock_fraction must be in [0, 1]".into());
        }
        crate::translation::page_shift(self.translation.page_size)?;
        Timebase::new(self.cpu_hz, self.mmae_hz, self.noc_hz)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum Ev {
    Cpu(usize),
    Mmae(usize, MmaeEvent),
    Dispatch { node: usize, maid: Maid, asid: Asid, task: Task },
    Report { node: usize, maid: Maid, outcome: ExceptionType },
}

pub struct Node {
    pub core: Core,
    pub mmu: Mmu,
    pub mmae: Mmae,
    pub mtq: MasterTaskQueue,
    pub stq: SlaveTaskQueue,
    parked_at: u64,
    /// Sub-tile forced on this node's GEMMs (autotune trials).
    pub subtile: Option<(u64, u64, u64)>,
}

const TRACE_DEPTH: usize = 64;

pub struct Machine {
    pub cfg: MachineConfig,
    pub tb: Timebase,
    pub mem: MemorySystem,
    pub pt: PageTables,
    pub nodes: Vec<Node>,
    q: EventQueue<Ev>,
    trace: VecDeque<(u64, Ev)>,
    pub end: SimTime,
    /// Fault injection: drop the next completion report for this node.
    pub lose_report: Option<usize>,
}

/// Summary of one completed run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSummary {
    pub end: SimTime,
    pub events: u64,
}

impl Machine {
    pub fn new(cfg: MachineConfig) -> Result<Self, MachineError> {
        cfg.validate()?;
        let tb = Timebase::new(cfg.cpu_hz, cfg.mmae_hz, cfg.noc_hz)?;
        let periods = Periods {
            mmae: tb.period(Domain::Mmae),
            noc: tb.period(Domain::Noc),
        };
        let mem = MemorySystem::new(cfg.memory.clone(), cfg.noc, periods);
        let pt = PageTables::new(cfg.translation.page_size, cfg.frames.clone())?;
        let mut nodes = Vec::with_capacity(cfg.nodes);
        for id in 0..cfg.nodes {
            nodes.push(Node {
                core: Core::new(id, 1, Vec::new()),
                mmu: Mmu::new(cfg.translation.clone())?,
                mmae: Mmae::new(id, cfg.mmae.clone(), &cfg.translation),
                mtq: MasterTaskQueue::new(cfg.mtq_depth),
                stq: SlaveTaskQueue::new(cfg.mtq_depth),
                parked_at: 0,
                subtile: None,
            });
        }
        Ok(Self {
            cfg,
            tb,
            mem,
            pt,
            nodes,
            q: EventQueue::new(),
            trace: VecDeque::new(),
            end: SimTime::ZERO,
            lose_report: None,
        })
    }

    pub fn periods(&self) -> Periods {
        self.mem.periods()
    }

    pub fn load_program(&mut self, node: usize, asid: Asid, program: Vec<CpuOp>) {
        self.nodes[node].core = Core::new(node, asid, program);
    }

    /// Maps `[vaddr, vaddr+len)` for `asid` (reusing existing mappings) and
    /// writes `data` straight to DRAM.
    pub fn load(&mut self, asid: Asid, vaddr: u64, data: &[u8]) {
        self.pt.ensure_mapped(asid, vaddr, data.len() as u64);
        // page tables were just written by the OS, so their lines sit in L3
        let ps = self.pt.page_size();
        for vpn in vaddr / ps..(vaddr + data.len() as u64).div_ceil(ps) {
            for pte in self.pt.walk_addresses(asid, vpn) {
                self.mem.warm_l3(pte);
            }
        }
        self.for_each_page(asid, vaddr, data.len() as u64, |m, paddr, off, len| {
            m.mem.dram.write(paddr, &data[off..off + len]);
            if let Some(s) = m.mem.shadow.as_mut() {
                s.write(paddr, &data[off..off + len]);
            }
        })
        .expect("mapped above");
    }

    /// Coherent functional read of a virtual range.
    pub fn read(&mut self, asid: Asid, vaddr: u64, len: u64) -> Result<Vec<u8>, MachineError> {
        let mut out = vec![0u8; len as usize];
        self.for_each_page(asid, vaddr, len, |m, paddr, off, n| {
            m.mem.read_coherent(paddr, &mut out[off..off + n]);
        })?;
        Ok(out)
    }

    fn for_each_page<F: FnMut(&mut Self, u64, usize, usize)>(
        &mut self,
        asid: Asid,
        vaddr: u64,
        len: u64,
        mut f: F,
    ) -> Result<(), MachineError> {
        let ps = self.pt.page_size();
        let mut va = vaddr;
        while va < vaddr + len {
            let end = ((va / ps + 1) * ps).min(vaddr + len);
            let paddr = self.pt.translate_functional(asid, va)?;
            f(self, paddr, (va - vaddr) as usize, (end - va) as usize);
            va = end;
        }
        Ok(())
    }

    fn schedule(&mut self, at: u64, ev: Ev) {
        self.q.schedule_clamped(SimTime(at), ev);
    }

    fn protocol(&self, msg: impl Into<String>) -> MachineError {
        MachineError::Protocol {
            msg: msg.into(),
            trace: self.trace.iter().map(|(t, e)| format!("{t}: {e:?}")).collect(),
        }
    }

    /// Runs until no events remain, then audits queue and coherence state.
    pub fn run(&mut self) -> Result<RunSummary, MachineError> {
        Ok(self.run_until(None)?.expect("no time limit"))
    }

    /// Like `run`, but gives up (returning `None`) at the first event past
    /// `limit`. The machine is left mid-run.
    pub fn run_until(&mut self, limit: Option<SimTime>) -> Result<Option<RunSummary>, MachineError> {
        let start = self.q.now().ticks();
        for n in 0..self.nodes.len() {
            if !self.nodes[n].core.finished() {
                self.schedule(start, Ev::Cpu(n));
            }
        }
        while let Some((t, ev)) = self.q.pop() {
            if limit.is_some_and(|l| t > l) {
                return Ok(None);
            }
            let now = t.ticks();
            if self.trace.len() == TRACE_DEPTH {
                self.trace.pop_front();
            }
            self.trace.push_back((now, ev));
            if self.q.processed() % 4096 == 0 {
                self.mem.retire(now);
            }
            match ev {
                Ev::Cpu(n) => self.cpu_step(n, now)?,
                Ev::Mmae(n, e) => {
                    let node = &mut self.nodes[n];
                    let mut ctx = Ctx {
                        mem: &mut self.mem,
                        pt: &self.pt,
                        mmu: &mut node.mmu,
                    };
                    node.mmae.handle(e, now, &mut ctx);
                    self.drain_mmae(n, now);
                }
                Ev::Dispatch { node, maid, asid, task } => {
                    self.nodes[node].stq.receive(maid, asid, task);
                    self.try_start(node, now);
                }
                Ev::Report { node, .. } if self.lose_report == Some(node) => {
                    self.lose_report = None;
                }
                Ev::Report { node, maid, outcome } => {
                    let nd = &mut self.nodes[node];
                    nd.mtq.complete(maid, outcome);
                    nd.stq.finish_report(maid);
                    if let Some(reg) = nd.core.parked {
                        if nd.core.regs[reg as usize] == maid as u64 {
                            nd.core.parked = None;
                            let poll = self.tb.cycles(self.cfg.cpu.poll_cycles.max(1), Domain::Cpu);
                            let waited = now - nd.parked_at;
                            let polls = waited.div_ceil(poll);
                            nd.core.stats.polls += polls;
                            let wake = nd.parked_at + polls * poll;
                            self.schedule(wake, Ev::Cpu(node));
                        }
                    }
                }
            }
            self.end = t;
        }
        self.audit()?;
        Ok(Some(RunSummary {
            end: self.end,
            events: self.q.processed(),
        }))
    }

    fn audit(&self) -> Result<(), MachineError> {
        for n in &self.nodes {
            if !n.core.finished() {
                return Err(self.protocol(format!("core {} stalled at op {} with no pending events", n.core.id, n.core.pc)));
            }
            if n.mmae.is_busy() || n.stq.buffered() > 0 || n.stq.active().is_some() {
                return Err(self.protocol(format!("node {} MMAE left work behind", n.core.id)));
            }
            if let Some(i) = n.mtq.entries().iter().position(|e| !e.is_consistent()) {
                return Err(self.protocol(format!("node {} MTQ entry {i} inconsistent", n.core.id)));
            }
        }
        if let Some(v) = self.mem.violations.first() {
            return Err(self.protocol(format!("coherence: {v}")));
        }
        Ok(())
    }

    fn drain_mmae(&mut self, n: usize, now: u64) {
        let out = std::mem::take(&mut self.nodes[n].mmae.outbox);
        for (t, e) in &out {
            self.schedule(*t, Ev::Mmae(n, *e));
        }
        let mut out = out;
        out.clear();
        self.nodes[n].mmae.outbox = out;
        if let Some((maid, outcome)) = self.nodes[n].mmae.take_finished() {
            self.nodes[n].stq.begin_report(maid);
            let t = self.mem.noc_send(n, n, 8, MessageClass::Response, now);
            self.schedule(t, Ev::Report { node: n, maid, outcome });
            self.try_start(n, now);
        }
    }

    fn try_start(&mut self, n: usize, now: u64) {
        let node = &mut self.nodes[n];
        if node.mmae.is_busy() {
            return;
        }
        let Some((maid, task, asid)) = node.stq.start_next() else {
            return;
        };
        node.mtq.mark_started(maid);
        let mut ctx = Ctx {
            mem: &mut self.mem,
            pt: &self.pt,
            mmu: &mut node.mmu,
        };
        node.mmae.start(maid, asid, task, node.subtile, now, &mut ctx);
        self.drain_mmae(n, now);
    }

    fn cpu_step(&mut self, n: usize, now: u64) -> Result<(), MachineError> {
        let cpu_period = self.tb.period(Domain::Cpu);
        let cpu = |c: u64| c * cpu_period;
        let ccfg = self.cfg.cpu.clone();
        loop {
            let Some(op) = self.nodes[n].core.current().cloned() else {
                return Ok(());
            };
            let node = &mut self.nodes[n];
            let core = &mut node.core;
            let cost = match op {
                CpuOp::SetReg { reg, value } => {
                    core.regs[reg as usize] = value;
                    core.pc += 1;
                    continue;
                }
                CpuOp::Mpais(i) => {
                    self.exec_mpais(n, i, now);
                    let core = &mut self.nodes[n].core;
                    core.stats.instructions += 1;
                    core.pc += 1;
                    cpu(ccfg.mpais_cycles)
                }
                CpuOp::WaitDone { maid_reg, rd } => {
                    let maid = core.regs[maid_reg as usize];
                    let maid = if maid == ALLOC_FAILURE { usize::MAX } else { maid as usize };
                    let s = node.mtq.query(maid, core.asid, false);
                    core.stats.instructions += 1;
                    if s.done() || s.reuse() {
                        let fin = node.mtq.query(maid, core.asid, true);
                        core.regs[rd as usize] = fin.0;
                        core.stats.instructions += 1;
                        core.pc += 1;
                        cpu(2 * ccfg.mpais_cycles)
                    } else {
                        core.parked = Some(maid_reg);
                        node.parked_at = now;
                        return Ok(());
                    }
                }
                CpuOp::Lock { vaddr, len } | CpuOp::Unlock { vaddr, len } => {
                    let lock = matches!(op, CpuOp::Lock { .. });
                    let asid = core.asid;
                    let mut err = None;
                    self.for_each_page(asid, vaddr, len, |m, paddr, _, l| {
                        if lock {
                            if let Err(e) = m.mem.lock_range(n, paddr, l as u64) {
                                err.get_or_insert(e);
                            }
                        } else {
                            m.mem.unlock_range(paddr, l as u64);
                        }
                    })?;
                    if let Some(e) = err {
                        return Err(e.into());
                    }
                    self.nodes[n].core.pc += 1;
                    cpu(ccfg.lock_cycles)
                }
                CpuOp::Kernel { phase, reads } => {
                    let compute = cpu(kernel_cycles(phase.flops, phase.precision, ccfg.efficiency));
                    let mut mem_t = 0;
                    if let Some((va, len)) = reads {
                        let asid = core.asid;
                        let (h0, m0) = (self.mem.stats[n].l3_hits, self.mem.stats[n].l3_misses);
                        let ps = self.pt.page_size();
                        let mut v = va;
                        let mut t = now;
                        while v < va + len {
                            let end = ((v / ps + 1) * ps).min(va + len);
                            let node = &mut self.nodes[n];
                            let mem = &mut self.mem;
                            let mp = mem.periods().mmae;
                            let tr = node.mmu.translate(&self.pt, asid, v, Requester::Cpu, &mut |pte| {
                                let d = mem.cpu_access(n, pte, AccessKind::Walk, &mut [0u8; 8], t);
                                (d - t).div_ceil(mp)
                            })?;
                            t += tr.cycles * mp;
                            t = self.mem.cpu_read_range(n, tr.paddr, end - v, t);
                            v = end;
                        }
                        mem_t = t - now;
                        let c = &mut self.nodes[n].core.stats;
                        c.post_l3_hits += self.mem.stats[n].l3_hits - h0;
                        c.post_l3_misses += self.mem.stats[n].l3_misses - m0;
                    }
                    let core = &mut self.nodes[n].core;
                    core.stats.kernel_cycles += compute.max(mem_t).div_ceil(self.tb.period(Domain::Cpu));
                    core.pc += 1;
                    compute.max(mem_t)
                }
                CpuOp::SwitchProcess(asid) => {
                    core.switch_process(asid);
                    core.pc += 1;
                    cpu(ccfg.switch_cycles)
                }
            };
            let core = &mut self.nodes[n].core;
            core.stats.busy_cycles += cost.div_ceil(self.tb.period(Domain::Cpu));
            self.schedule(now + cost, Ev::Cpu(n));
            return Ok(());
        }
    }

    fn exec_mpais(&mut self, n: usize, i: Instruction, now: u64) {
        let buffer = self.cfg.mmae.buffer_bytes;
        let node = &mut self.nodes[n];
        let core = &mut node.core;
        match i.opcode {
            Opcode::MaCfg | Opcode::MaMove | Opcode::MaInit | Opcode::MaStash => {
                let block = ParamBlock::from_registers(&core.regs, i.rn);
                let task = validate_params(i.opcode, &block).and_then(|t| {
                    if let Task::Gemm(g) = &t {
                        tiling::resolve(g, buffer)?;
                    }
                    Ok(t)
                });
                match node.mtq.alloc(core.asid, task.is_err()) {
                    None => {
                        core.regs[i.rd as usize] = ALLOC_FAILURE;
                        core.stats.alloc_failures += 1;
                    }
                    Some(maid) => {
                        core.regs[i.rd as usize] = maid as u64;
                        if let Ok(task) = task {
                            let asid = core.asid;
                            let t = self.mem.noc_send(n, n, 48, MessageClass::Request, now);
                            self.schedule(t, Ev::Dispatch { node: n, maid, asid, task });
                        }
                    }
                }
            }
            Opcode::MaRead | Opcode::MaState => {
                let maid = core.regs[i.rn as usize];
                let maid = if maid == ALLOC_FAILURE { usize::MAX } else { maid as usize };
                let s = node.mtq.query(maid, core.asid, i.opcode == Opcode::MaState);
                core.regs[i.rd as usize] = s.0;
            }
            Opcode::MaClear => {
                let maid = core.regs[i.rn as usize];
                if maid != ALLOC_FAILURE {
                    node.mtq.clear(maid as usize);
                }
            }
        }
    }
}
