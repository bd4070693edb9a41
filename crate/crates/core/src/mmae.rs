//! Matrix-multiply acceleration engine of one node.
//!
//! Compute is analytic (one event per k-strip step); data movement is event
//! driven. DMA0 streams A and B strips, DMA1 loads and writes back C
//! sub-tiles and runs transfer tasks. Every request covers at most one
//! 512-byte granule of one segment, is translated (mATLB lane or MMU), waits
//! for a free slot in the engine's outstanding-line window, travels to the
//! home L3 slice over the NOC and returns.

use serde::{Deserialize, Serialize};

use crate::arith::{self, Scratch, StepShape};
use crate::isa::{GemmTask, Task, TransferDescriptor};
use crate::memory::{line_of, AccessKind, MemorySystem, GRANULE, HEADER, LINE};
use crate::noc::MessageClass;
use crate::queues::{Asid, ExceptionType, Maid};
use crate::tiling;
use crate::translation::{page_sequence, MatlbLane, Mmu, PageTables, Requester, TranslationConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MmaeConfig {
    pub buffer_bytes: u64,
    /// Systolic pipeline fill per step, MMAE cycles.
    pub fill_cycles: u64,
    /// Outstanding lines per DMA engine.
    pub dma_window_lines: u32,
    pub configure_cycles: u64,
    /// Zero-latency DMA; functional behavior unchanged.
    pub ideal_memory: bool,
    /// Raise a floating-point exception when a result is NaN or infinite.
    pub fp_exceptions: bool,
}

impl Default for MmaeConfig {
    fn default() -> Self {
        Self {
            buffer_bytes: tiling::DEFAULT_BUFFER_BYTES,
            fill_cycles: 7,
            dma_window_lines: 8,
            configure_cycles: 16,
            ideal_memory: false,
            fp_exceptions: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmaeEvent {
    Issue { engine: u8, epoch: u32 },
    Home(u32),
    Respond(u32),
    Done(u32),
    Compute { epoch: u32 },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct MmaeStats {
    /// Cycles the systolic array was computing.
    pub busy_cycles: u64,
    /// Issue cycles lost waiting for a translation.
    pub dma_stall_translation: u64,
    /// Issue cycles lost waiting for the outstanding window.
    pub dma_stall_memory: u64,
    pub flops: u64,
    /// Sum over finished GEMMs of flops / peak-flops-per-cycle.
    pub ideal_cycles: f64,
    pub requests: u64,
    pub bytes_read: u64,
    pub bytes_written: u64,
    pub tasks_ok: u64,
    pub tasks_failed: u64,
    pub matlb_prewalks: u64,
    pub matlb_hits: u64,
    /// Tick of the first GEMM configure and of the last GEMM completion.
    pub first_gemm_tick: Option<u64>,
    pub last_gemm_tick: u64,
}

impl MmaeStats {
    /// GEMM span in MMAE cycles.
    pub fn span_cycles(&self, mmae_period: u64) -> u64 {
        match self.first_gemm_tick {
            Some(t0) => (self.last_gemm_tick.saturating_sub(t0)).div_ceil(mmae_period),
            None => 0,
        }
    }

    pub fn efficiency(&self, mmae_period: u64) -> f64 {
        let span = self.span_cycles(mmae_period);
        if span == 0 {
            0.0
        } else {
            self.ideal_cycles / span as f64
        }
    }
}

/// Borrowed node and system state the engine acts on.
pub struct Ctx<'a> {
    pub mem: &'a mut MemorySystem,
    pub pt: &'a PageTables,
    pub mmu: &'a mut Mmu,
}

#[derive(Debug, Clone, Copy)]
struct Seg {
    va: u64,
    len: u64,
    off: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Target {
    Buffer,
    Staging,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dir {
    Read(Target),
    Write(Target),
    Zeros,
    Stash,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum JobKind {
    LoadAb(usize),
    LoadC(usize),
    WriteC(usize),
    Transfer,
}

struct Job {
    kind: JobKind,
    dir: Dir,
    segs: Vec<Seg>,
    seg: usize,
    pos: u64,
    outstanding: u32,
    issued: bool,
}

impl Job {
    fn new(kind: JobKind, dir: Dir, segs: Vec<Seg>) -> Self {
        Self {
            kind,
            dir,
            segs,
            seg: 0,
            pos: 0,
            outstanding: 0,
            issued: false,
        }
    }

    fn peek(&self) -> Option<Seg> {
        let s = self.segs.get(self.seg)?;
        let va = s.va + self.pos;
        let end = (s.va + s.len).min((va / GRANULE + 1) * GRANULE);
        Some(Seg {
            va,
            len: end - va,
            off: s.off + self.pos,
        })
    }

    fn advance(&mut self, len: u64) {
        self.pos += len;
        if self.pos >= self.segs[self.seg].len {
            self.seg += 1;
            self.pos = 0;
        }
    }
}

struct Req {
    engine: u8,
    job: u32,
    dir: Dir,
    paddr: u64,
    len: u64,
    off: u64,
    lines: u32,
    home: usize,
    payload: Vec<u8>,
}

struct Engine {
    current: Option<u32>,
    scheduled: bool,
    inflight_lines: u32,
    blocked_since: Option<u64>,
    page: Option<(u64, u64)>,
    lane: MatlbLane,
}

#[derive(Debug, Clone, Copy)]
struct Subtile {
    i0: u64,
    j0: u64,
    h: u64,
    w: u64,
}

/// Static decomposition of a GEMM into sub-tiles and k-strip steps.
pub struct GemmPlan {
    task: GemmTask,
    es: u64,
    ttr: u64,
    ttc: u64,
    kk: u64,
    nk: u64,
    subtiles: Vec<Subtile>,
    a_off: [u64; 2],
    b_off: [u64; 2],
    c_off: [u64; 2],
}

impl GemmPlan {
    pub fn new(task: GemmTask, ttr: u64, ttc: u64, kk: u64) -> Self {
        let (m, n, k) = (task.m as u64, task.n as u64, task.k as u64);
        let tr = (task.tr as u64).clamp(1, m);
        let tc = (task.tc as u64).clamp(1, n);
        let mut subtiles = Vec::new();
        for ti in (0..m).step_by(tr as usize) {
            for tj in (0..n).step_by(tc as usize) {
                let th = tr.min(m - ti);
                let tw = tc.min(n - tj);
                for si in (0..th).step_by(ttr as usize) {
                    for sj in (0..tw).step_by(ttc as usize) {
                        subtiles.push(Subtile {
                            i0: ti + si,
                            j0: tj + sj,
                            h: ttr.min(th - si),
                            w: ttc.min(tw - sj),
                        });
                    }
                }
            }
        }
        let es = task.precision.element_size() as u64;
        let a = ttr * kk * es;
        let b = kk * ttc * es;
        let c = ttr * ttc * es;
        Self {
            task,
            es,
            ttr,
            ttc,
            kk,
            nk: k.div_ceil(kk),
            subtiles,
            a_off: [0, a],
            b_off: [2 * a, 2 * a + b],
            c_off: [2 * a + 2 * b, 2 * a + 2 * b + c],
        }
    }

    pub fn steps(&self) -> usize {
        self.subtiles.len() * self.nk as usize
    }

    pub fn subtile_count(&self) -> usize {
        self.subtiles.len()
    }

    pub fn subtile_dims(&self) -> (u64, u64, u64) {
        (self.ttr, self.ttc, self.kk)
    }

    fn step(&self, s: usize) -> (usize, u64) {
        (s / self.nk as usize, s as u64 % self.nk)
    }

    fn kl(&self, q: u64) -> u64 {
        self.kk.min(self.task.k as u64 - q * self.kk)
    }

    fn ab_segs(&self, s: usize) -> Vec<Seg> {
        let (u, q) = self.step(s);
        let st = self.subtiles[u];
        let (n, k) = (self.task.n as u64, self.task.k as u64);
        let k0 = q * self.kk;
        let kl = self.kl(q);
        let slot = s % 2;
        let mut v = Vec::with_capacity((st.h + kl) as usize);
        for i in 0..st.h {
            v.push(Seg {
                va: self.task.a + ((st.i0 + i) * k + k0) * self.es,
                len: kl * self.es,
                off: self.a_off[slot] + i * self.kk * self.es,
            });
        }
        for kx in 0..kl {
            v.push(Seg {
                va: self.task.b + ((k0 + kx) * n + st.j0) * self.es,
                len: st.w * self.es,
                off: self.b_off[slot] + kx * self.ttc * self.es,
            });
        }
        v
    }

    fn c_segs(&self, u: usize) -> Vec<Seg> {
        let st = self.subtiles[u];
        let n = self.task.n as u64;
        (0..st.h)
            .map(|i| Seg {
                va: self.task.c + ((st.i0 + i) * n + st.j0) * self.es,
                len: st.w * self.es,
                off: self.c_off[u % 2] + i * self.ttc * self.es,
            })
            .collect()
    }

    /// DMA1 order: C(0), C(1), WB(0), C(2), WB(1), ...
    fn c_order(&self) -> Vec<JobKind> {
        let n = self.subtiles.len();
        let mut v = vec![JobKind::LoadC(0)];
        for u in 0..n {
            if u + 1 < n {
                v.push(JobKind::LoadC(u + 1));
            }
            v.push(JobKind::WriteC(u));
        }
        v
    }

    fn step_cycles(&self, s: usize, fill: u64) -> u64 {
        let (u, q) = self.step(s);
        let st = self.subtiles[u];
        arith::step_cycles(self.task.precision, st.h, st.w, self.kl(q), fill)
    }

    /// Analytic lower bound: compute cycles of all steps.
    pub fn compute_cycles(&self, fill: u64) -> u64 {
        (0..self.steps()).map(|s| self.step_cycles(s, fill)).sum()
    }
}

struct GemmState {
    plan: GemmPlan,
    c_order: Vec<JobKind>,
    next_ab: usize,
    next_c: usize,
    computed: usize,
    sa_busy: bool,
    ab_ready: [Option<usize>; 2],
    c_ready: [Option<usize>; 2],
    wb_done: usize,
}

impl GemmState {
    fn subtiles_done(&self) -> usize {
        self.computed / self.plan.nk as usize
    }
}

struct TransferState {
    desc: TransferDescriptor,
    next: usize,
    done: usize,
    total: usize,
}

enum Work {
    Idle,
    Gemm(Box<GemmState>),
    Transfer(TransferState),
}

pub struct Mmae {
    node: usize,
    cfg: MmaeConfig,
    shift: u32,
    buf: Vec<u8>,
    staging: Vec<u8>,
    engines: [Engine; 2],
    jobs: Vec<Option<Job>>,
    reqs: Vec<Option<Req>>,
    free_reqs: Vec<u32>,
    work: Work,
    maid: Maid,
    asid: Asid,
    epoch: u32,
    abort: Option<ExceptionType>,
    finished: Option<(Maid, ExceptionType)>,
    started_at: u64,
    scratch: Scratch,
    line_buf: Vec<u64>,
    data_buf: Vec<u8>,
    pub outbox: Vec<(u64, MmaeEvent)>,
    pub stats: MmaeStats,
}

impl Mmae {
    pub fn new(node: usize, cfg: MmaeConfig, tcfg: &TranslationConfig) -> Self {
        let lookahead = if tcfg.matlb { tcfg.matlb_lookahead } else { 0 };
        let lane = || MatlbLane::new(tcfg.matlb_capacity, lookahead);
        let engine = || Engine {
            current: None,
            scheduled: false,
            inflight_lines: 0,
            blocked_since: None,
            page: None,
            lane: lane(),
        };
        Self {
            node,
            shift: tcfg.page_size.trailing_zeros(),
            buf: vec![0; cfg.buffer_bytes as usize],
            cfg,
            staging: Vec::new(),
            engines: [engine(), engine()],
            jobs: Vec::new(),
            reqs: Vec::new(),
            free_reqs: Vec::new(),
            work: Work::Idle,
            maid: 0,
            asid: 0,
            epoch: 0,
            abort: None,
            finished: None,
            started_at: 0,
            scratch: Scratch::default(),
            line_buf: Vec::new(),
            data_buf: Vec::new(),
            outbox: Vec::new(),
            stats: MmaeStats::default(),
        }
    }

    pub fn config(&self) -> &MmaeConfig {
        &self.cfg
    }

    pub fn is_busy(&self) -> bool {
        !matches!(self.work, Work::Idle)
    }

    /// A finished task, taken once.
    pub fn take_finished(&mut self) -> Option<(Maid, ExceptionType)> {
        self.finished.take()
    }

    fn mmae_ticks(&self, ctx: &Ctx, cycles: u64) -> u64 {
        cycles * ctx.mem.periods().mmae
    }

    fn to_cycles(&self, ctx: &Ctx, ticks: u64) -> u64 {
        ticks.div_ceil(ctx.mem.periods().mmae)
    }

    /// Starts a task at tick `now`. GEMM sub-tiles come from the task or,
    /// when given, from `subtile` (`ttr, ttc, kk`).
    pub fn start(&mut self, maid: Maid, asid: Asid, task: Task, subtile: Option<(u64, u64, u64)>, now: u64, ctx: &mut Ctx) {
        assert!(!self.is_busy(), "MMAE already running a task");
        self.maid = maid;
        self.asid = asid;
        self.epoch = self.epoch.wrapping_add(1);
        self.abort = None;
        self.jobs.clear();
        for e in &mut self.engines {
            e.current = None;
            e.scheduled = false;
            e.blocked_since = None;
            e.page = None;
        }
        self.started_at = now;
        let mut begin = now + self.mmae_ticks(ctx, self.cfg.configure_cycles);
        match task {
            Task::Gemm(g) => {
                let dims = match subtile {
                    Some(d) => Ok(d),
                    None => tiling::resolve(&g, self.cfg.buffer_bytes),
                };
                let Ok((ttr, ttc, kk)) = dims else {
                    self.finished = Some((maid, ExceptionType::ParamFault));
                    self.stats.tasks_failed += 1;
                    return;
                };
                let plan = GemmPlan::new(g, ttr, ttc, kk);
                assert!(
                    tiling::working_set(ttr, ttc, kk, plan.es) <= self.cfg.buffer_bytes,
                    "sub-tile exceeds buffer"
                );
                self.stats.first_gemm_tick.get_or_insert(now);
                let c_order = plan.c_order();
                if !self.cfg.ideal_memory && self.engines[0].lane.enabled() {
                    let mut p0 = Vec::new();
                    for s in 0..plan.steps() {
                        page_sequence(plan.ab_segs(s).iter().map(|s| (s.va, s.len)), self.shift, &mut p0);
                    }
                    let mut p1 = Vec::new();
                    for k in &c_order {
                        match *k {
                            JobKind::LoadC(_) if !g.accumulate => {}
                            JobKind::LoadC(u) | JobKind::WriteC(u) => {
                                page_sequence(plan.c_segs(u).iter().map(|s| (s.va, s.len)), self.shift, &mut p1)
                            }
                            _ => {}
                        }
                    }
                    self.engines[0].lane.configure(p0);
                    self.engines[1].lane.configure(p1);
                    begin = begin.max(self.prewalk(0, now, ctx)).max(self.prewalk(1, now, ctx));
                }
                self.work = Work::Gemm(Box::new(GemmState {
                    plan,
                    c_order,
                    next_ab: 0,
                    next_c: 0,
                    computed: 0,
                    sa_busy: false,
                    ab_ready: [None; 2],
                    c_ready: [None; 2],
                    wb_done: 0,
                }));
            }
            Task::Transfer(desc) => {
                let total = match desc {
                    TransferDescriptor::Move { len, .. } => {
                        self.staging.clear();
                        self.staging.resize(len as usize, 0);
                        2
                    }
                    _ => 1,
                };
                if !self.cfg.ideal_memory && self.engines[1].lane.enabled() {
                    let mut p = Vec::new();
                    match desc {
                        TransferDescriptor::Move { dst, src, len } => {
                            page_sequence([(src, len), (dst, len)], self.shift, &mut p)
                        }
                        TransferDescriptor::Init { dst, len } => page_sequence([(dst, len)], self.shift, &mut p),
                        TransferDescriptor::Stash { addr, len } => page_sequence([(addr, len)], self.shift, &mut p),
                    }
                    self.engines[1].lane.configure(p);
                    begin = begin.max(self.prewalk(1, now, ctx));
                }
                self.work = Work::Transfer(TransferState {
                    desc,
                    next: 0,
                    done: 0,
                    total,
                });
            }
        }
        for e in 0..2 {
            self.engines[e].scheduled = true;
            self.outbox.push((begin, MmaeEvent::Issue { engine: e as u8, epoch: self.epoch }));
        }
    }

    /// Runs the lane's prewalks; returns when the first buffered entry is ready.
    fn prewalk(&mut self, e: usize, now: u64, ctx: &mut Ctx) -> u64 {
        let node = self.node;
        let asid = self.asid;
        let Ctx { mem, pt, mmu } = ctx;
        let lane = &mut self.engines[e].lane;
        let before = lane.stats.prewalks;
        let mut latest = now;
        let mut walker = |vpn: u64| {
            let mut t = now;
            let (pfn, _) = mmu.walk(pt, asid, vpn, &mut |pte| {
                t = mem.cpu_access(node, pte, AccessKind::Walk, &mut [0u8; 8], t);
                0
            });
            latest = latest.max(t);
            (pfn, t - now)
        };
        lane.prewalk(now, &mut walker);
        self.stats.matlb_prewalks += lane.stats.prewalks - before;
        mmu.stats.matlb_prewalks += lane.stats.prewalks - before;
        latest
    }

    fn translate(&mut self, e: usize, vpn: u64, now: u64, ctx: &mut Ctx) -> Result<(u64, u64), ExceptionType> {
        if self.engines[e].lane.enabled() {
            if let Some(entry) = self.engines[e].lane.lookup(vpn) {
                self.stats.matlb_hits += 1;
                self.prewalk(e, now, ctx);
                return match entry.pfn {
                    Some(p) => Ok((p, entry.ready_at.max(now))),
                    None => Err(ExceptionType::PageFault),
                };
            }
        }
        let node = self.node;
        let period = ctx.mem.periods().mmae;
        let Ctx { mem, pt, mmu } = ctx;
        let mut t = now;
        let r = mmu.translate(pt, self.asid, vpn << self.shift, Requester::Mmae, &mut |pte| {
            let done = mem.cpu_access(node, pte, AccessKind::Walk, &mut [0u8; 8], t);
            let c = (done - t).div_ceil(period);
            t += c * period;
            c
        });
        match r {
            Ok(tr) => Ok((tr.paddr >> self.shift, now + tr.cycles * period)),
            Err(_) => Err(ExceptionType::PageFault),
        }
    }

    pub fn handle(&mut self, ev: MmaeEvent, now: u64, ctx: &mut Ctx) {
        let changed = !matches!(ev, MmaeEvent::Issue { .. });
        match ev {
            MmaeEvent::Issue { engine, epoch } => {
                if epoch == self.epoch {
                    self.engines[engine as usize].scheduled = false;
                    self.issue(engine as usize, now, ctx);
                }
            }
            MmaeEvent::Home(r) => self.at_home(r, now, ctx),
            MmaeEvent::Respond(r) => {
                let req = self.reqs[r as usize].as_ref().expect("live request");
                let bytes = match req.dir {
                    Dir::Read(_) => HEADER + req.len as u32,
                    _ => HEADER,
                };
                let t = ctx.mem.noc_send(req.home, self.node, bytes, MessageClass::Response, now);
                self.outbox.push((t, MmaeEvent::Done(r)));
            }
            MmaeEvent::Done(r) => self.request_done(r, now, ctx),
            MmaeEvent::Compute { epoch } => {
                if epoch == self.epoch {
                    self.compute_done();
                }
            }
        }
        self.progress(now, changed, ctx);
    }

    fn kick(&mut self, e: usize, now: u64) {
        let eng = &mut self.engines[e];
        if !eng.scheduled && eng.blocked_since.is_none() {
            eng.scheduled = true;
            self.outbox.push((now, MmaeEvent::Issue { engine: e as u8, epoch: self.epoch }));
        }
    }

    fn fail(&mut self, x: ExceptionType) {
        if self.abort.is_none() {
            self.abort = Some(x);
        }
    }

    /// Creates the next job for an engine whose preconditions hold.
    fn next_job(&mut self, e: usize) -> Option<u32> {
        let job = match &mut self.work {
            Work::Idle => None,
            Work::Gemm(g) if e == 0 => {
                let s = g.next_ab;
                if s < g.plan.steps() && (s < 2 || g.computed > s - 2) {
                    g.next_ab += 1;
                    Some(Job::new(JobKind::LoadAb(s), Dir::Read(Target::Buffer), g.plan.ab_segs(s)))
                } else {
                    None
                }
            }
            Work::Gemm(g) => loop {
                let Some(&kind) = g.c_order.get(g.next_c) else {
                    break None;
                };
                match kind {
                    JobKind::LoadC(u) if !g.plan.task.accumulate => {
                        g.next_c += 1;
                        let off = g.plan.c_off[u % 2] as usize;
                        let len = (g.plan.ttr * g.plan.ttc * g.plan.es) as usize;
                        self.buf[off..off + len].fill(0);
                        g.c_ready[u % 2] = Some(u);
                    }
                    JobKind::LoadC(u) => {
                        g.next_c += 1;
                        break Some(Job::new(kind, Dir::Read(Target::Buffer), g.plan.c_segs(u)));
                    }
                    JobKind::WriteC(u) => {
                        if g.subtiles_done() > u {
                            g.next_c += 1;
                            break Some(Job::new(kind, Dir::Write(Target::Buffer), g.plan.c_segs(u)));
                        }
                        break None;
                    }
                    _ => unreachable!(),
                }
            },
            Work::Transfer(t) if e == 1 => {
                let seg = |va, len| vec![Seg { va, len, off: 0 }];
                let j = match (t.desc, t.next) {
                    (TransferDescriptor::Move { src, len, .. }, 0) => {
                        Some(Job::new(JobKind::Transfer, Dir::Read(Target::Staging), seg(src, len)))
                    }
                    (TransferDescriptor::Move { dst, len, .. }, 1) if t.done == 1 => {
                        Some(Job::new(JobKind::Transfer, Dir::Write(Target::Staging), seg(dst, len)))
                    }
                    (TransferDescriptor::Init { dst, len }, 0) => Some(Job::new(JobKind::Transfer, Dir::Zeros, seg(dst, len))),
                    (TransferDescriptor::Stash { addr, len }, 0) => {
                        Some(Job::new(JobKind::Transfer, Dir::Stash, seg(addr, len)))
                    }
                    _ => None,
                };
                if j.is_some() {
                    t.next += 1;
                }
                j
            }
            Work::Transfer(_) => None,
        }?;
        self.jobs.push(Some(job));
        Some(self.jobs.len() as u32 - 1)
    }

    fn issue(&mut self, e: usize, now: u64, ctx: &mut Ctx) {
        loop {
            if self.abort.is_some() {
                return;
            }
            let jid = match self.engines[e].current {
                Some(j) => j,
                None => match self.next_job(e) {
                    Some(j) => {
                        self.engines[e].current = Some(j);
                        j
                    }
                    None => return,
                },
            };
            let job = self.jobs[jid as usize].as_mut().expect("live job");
            let Some(piece) = job.peek() else {
                job.issued = true;
                self.engines[e].current = None;
                if job.outstanding == 0 {
                    self.job_done(jid);
                }
                continue;
            };
            let dir = job.dir;
            if self.cfg.ideal_memory {
                if let Err(x) = self.ideal_piece(dir, piece, ctx) {
                    self.fail(x);
                    return;
                }
                self.jobs[jid as usize].as_mut().expect("live job").advance(piece.len);
                continue;
            }
            // translation happens once a window slot is free
            let lines = ((line_of(piece.va + piece.len - 1) - line_of(piece.va)) / LINE + 1) as u32;
            let eng = &mut self.engines[e];
            if eng.inflight_lines > 0 && eng.inflight_lines + lines > self.cfg.dma_window_lines {
                eng.blocked_since = Some(now);
                return;
            }
            let vpn = piece.va >> self.shift;
            let pfn = match self.engines[e].page {
                Some((v, p)) if v == vpn => p,
                _ => match self.translate(e, vpn, now, ctx) {
                    Err(x) => {
                        self.fail(x);
                        return;
                    }
                    Ok((pfn, ready)) => {
                        self.engines[e].page = Some((vpn, pfn));
                        if ready > now {
                            self.stats.dma_stall_translation += self.to_cycles(ctx, ready - now);
                            self.engines[e].scheduled = true;
                            self.outbox.push((ready, MmaeEvent::Issue { engine: e as u8, epoch: self.epoch }));
                            return;
                        }
                        pfn
                    }
                },
            };
            let paddr = (pfn << self.shift) | (piece.va & ((1 << self.shift) - 1));
            if ctx.mem.dram.check(paddr, piece.len).is_err() {
                self.fail(ExceptionType::DataAbort);
                return;
            }
            self.engines[e].inflight_lines += lines;
            let payload = match dir {
                Dir::Write(Target::Buffer) => self.buf[piece.off as usize..(piece.off + piece.len) as usize].to_vec(),
                Dir::Write(Target::Staging) => {
                    self.staging[piece.off as usize..(piece.off + piece.len) as usize].to_vec()
                }
                Dir::Zeros => vec![0; piece.len as usize],
                _ => Vec::new(),
            };
            let home = ctx.mem.home_of(paddr);
            let bytes = HEADER + payload.len() as u32;
            let req = Req {
                engine: e as u8,
                job: jid,
                dir,
                paddr,
                len: piece.len,
                off: piece.off,
                lines,
                home,
                payload,
            };
            let rid = match self.free_reqs.pop() {
                Some(r) => {
                    self.reqs[r as usize] = Some(req);
                    r
                }
                None => {
                    self.reqs.push(Some(req));
                    self.reqs.len() as u32 - 1
                }
            };
            self.stats.requests += 1;
            let arrive = ctx.mem.noc_send(self.node, home, bytes, MessageClass::Request, now);
            self.outbox.push((arrive, MmaeEvent::Home(rid)));
            let job = self.jobs[jid as usize].as_mut().expect("live job");
            job.outstanding += 1;
            job.advance(piece.len);
            self.engines[e].scheduled = true;
            let next = now + self.mmae_ticks(ctx, lines as u64);
            self.outbox.push((next, MmaeEvent::Issue { engine: e as u8, epoch: self.epoch }));
            return;
        }
    }

    /// Zero-time functional transfer of one piece.
    fn ideal_piece(&mut self, dir: Dir, piece: Seg, ctx: &mut Ctx) -> Result<(), ExceptionType> {
        let paddr = ctx
            .pt
            .translate_functional(self.asid, piece.va)
            .map_err(|_| ExceptionType::PageFault)?;
        ctx.mem.dram.check(paddr, piece.len).map_err(|_| ExceptionType::DataAbort)?;
        let r = piece.off as usize..(piece.off + piece.len) as usize;
        match dir {
            Dir::Read(Target::Buffer) => ctx.mem.read_coherent(paddr, &mut self.buf[r]),
            Dir::Read(Target::Staging) => ctx.mem.read_coherent(paddr, &mut self.staging[r]),
            Dir::Write(Target::Buffer) => ctx.mem.host_write(paddr, &self.buf[r]),
            Dir::Write(Target::Staging) => ctx.mem.host_write(paddr, &self.staging[r]),
            Dir::Zeros => ctx.mem.host_write(paddr, &vec![0; piece.len as usize]),
            Dir::Stash => {}
        }
        match dir {
            Dir::Read(_) => self.stats.bytes_read += piece.len,
            Dir::Write(_) | Dir::Zeros => self.stats.bytes_written += piece.len,
            Dir::Stash => {}
        }
        Ok(())
    }

    fn at_home(&mut self, r: u32, now: u64, ctx: &mut Ctx) {
        let req = self.reqs[r as usize].as_mut().expect("live request");
        self.line_buf.clear();
        let mut l = line_of(req.paddr);
        while l < req.paddr + req.len {
            self.line_buf.push(l);
            l += LINE;
        }
        let ready = match req.dir {
            Dir::Read(target) => {
                self.data_buf.clear();
                let ready = ctx.mem.dma_read(self.node, &self.line_buf, now, &mut self.data_buf);
                let skip = (req.paddr - self.line_buf[0]) as usize;
                let src = &self.data_buf[skip..skip + req.len as usize];
                let dst = match target {
                    Target::Buffer => &mut self.buf,
                    Target::Staging => &mut self.staging,
                };
                dst[req.off as usize..(req.off + req.len) as usize].copy_from_slice(src);
                self.stats.bytes_read += req.len;
                ready
            }
            Dir::Write(_) | Dir::Zeros => {
                let payload = std::mem::take(&mut req.payload);
                self.stats.bytes_written += req.len;
                ctx.mem.dma_write(self.node, req.paddr, &payload, now)
            }
            Dir::Stash => ctx.mem.stash(self.node, &self.line_buf, now),
        };
        self.outbox.push((ready, MmaeEvent::Respond(r)));
    }

    fn request_done(&mut self, r: u32, now: u64, ctx: &mut Ctx) {
        let req = self.reqs[r as usize].take().expect("live request");
        self.free_reqs.push(r);
        let e = req.engine as usize;
        let eng = &mut self.engines[e];
        eng.inflight_lines -= req.lines;
        if let Some(since) = eng.blocked_since.take() {
            self.stats.dma_stall_memory += (now - since).div_ceil(ctx.mem.periods().mmae);
        }
        let job = self.jobs[req.job as usize].as_mut().expect("live job");
        job.outstanding -= 1;
        if job.issued && job.outstanding == 0 {
            self.job_done(req.job);
        }
        self.kick(e, now);
    }

    fn job_done(&mut self, jid: u32) {
        let job = self.jobs[jid as usize].take().expect("live job");
        match &mut self.work {
            Work::Gemm(g) => match job.kind {
                JobKind::LoadAb(s) => g.ab_ready[s % 2] = Some(s),
                JobKind::LoadC(u) => g.c_ready[u % 2] = Some(u),
                JobKind::WriteC(_) => g.wb_done += 1,
                JobKind::Transfer => unreachable!(),
            },
            Work::Transfer(t) => t.done += 1,
            Work::Idle => {}
        }
    }

    fn compute_done(&mut self) {
        let Work::Gemm(g) = &mut self.work else {
            return;
        };
        let s = g.computed;
        let p = &g.plan;
        let (u, q) = p.step(s);
        let st = p.subtiles[u];
        let shape = StepShape {
            h: st.h as usize,
            w: st.w as usize,
            kl: p.kl(q) as usize,
            a_stride: p.kk as usize,
            b_stride: p.ttc as usize,
            c_stride: p.ttc as usize,
        };
        let slot = s % 2;
        let (lo, hi) = self.buf.split_at_mut(p.c_off[0] as usize);
        let c0 = (p.c_off[u % 2] - p.c_off[0]) as usize;
        let finite = arith::step(
            p.task.precision,
            shape,
            &lo[p.a_off[slot] as usize..],
            &lo[p.b_off[slot] as usize..],
            &mut hi[c0..],
            &mut self.scratch,
        );
        g.sa_busy = false;
        g.ab_ready[slot] = None;
        g.computed += 1;
        if !finite && self.cfg.fp_exceptions {
            self.fail(ExceptionType::FloatingPoint);
        }
    }

    /// Starts compute when its inputs are ready, finishes the task, and
    /// wakes idle engines if `changed` may have satisfied a job precondition.
    fn progress(&mut self, now: u64, changed: bool, ctx: &mut Ctx) {
        let mut done = None;
        match &mut self.work {
            Work::Idle => return,
            Work::Gemm(g) => {
                if self.abort.is_none() && !g.sa_busy && g.computed < g.plan.steps() {
                    let s = g.computed;
                    let (u, _) = g.plan.step(s);
                    if g.ab_ready[s % 2] == Some(s) && g.c_ready[u % 2] == Some(u) {
                        let cyc = g.plan.step_cycles(s, self.cfg.fill_cycles);
                        g.sa_busy = true;
                        self.stats.busy_cycles += cyc;
                        let t = now + cyc * ctx.mem.periods().mmae;
                        self.outbox.push((t, MmaeEvent::Compute { epoch: self.epoch }));
                    }
                }
                if g.wb_done == g.plan.subtile_count() {
                    done = Some(ExceptionType::None);
                }
                if !g.sa_busy && self.abort.is_some() {
                    done = self.abort;
                }
            }
            Work::Transfer(t) => {
                if t.done == t.total {
                    done = Some(ExceptionType::None);
                }
                if self.abort.is_some() {
                    done = self.abort;
                }
            }
        }
        if let Some(x) = done {
            if x != ExceptionType::None && self.engines.iter().any(|e| e.inflight_lines > 0) {
                return;
            }
            self.finish(x, now);
            return;
        }
        if changed {
            self.kick(0, now);
            self.kick(1, now);
        }
    }

    fn finish(&mut self, x: ExceptionType, now: u64) {
        let work = std::mem::replace(&mut self.work, Work::Idle);
        if x == ExceptionType::None {
            self.stats.tasks_ok += 1;
            if let Work::Gemm(g) = work {
                let f = g.plan.task.flops();
                self.stats.flops += f;
                self.stats.ideal_cycles += f as f64 / arith::peak_flops_per_cycle(g.plan.task.precision) as f64;
                self.stats.last_gemm_tick = now;
            }
        } else {
            self.stats.tasks_failed += 1;
        }
        self.epoch = self.epoch.wrapping_add(1);
        self.jobs.clear();
        for e in &mut self.engines {
            e.current = None;
            e.scheduled = false;
            e.blocked_since = None;
        }
        self.finished = Some((self.maid, x));
    }
}
