//! Memory hierarchy: sparse functional DRAM, private L1/L2 per core, a
//! distributed L3 whose slices run a MOESI directory, stash and line locking.
//!
//! Coherence actions are applied atomically at the home slice in event order;
//! timing is computed alongside (all times in base ticks). Caches hold real
//! line data, so the value a read returns is the value the protocol produced.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::noc::{Coord, MessageClass, Mesh, NocConfig, NocMessage};
use crate::sim::Timeline;

pub const LINE: u64 = 64;
/// Consecutive bytes served by one L3 slice.
pub const GRANULE: u64 = 512;
/// Bytes of a request or acknowledgement message without data.
pub const HEADER: u32 = 8;

pub type LineData = [u8; LINE as usize];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MemError {
    #[error("data abort: physical range {paddr:#x}+{len} is poisoned")]
    DataAbort { paddr: u64, len: u64 },
    #[error("locking {paddr:#x}+{len} would lock more than {limit} ways of an L3 set")]
    LockCapacity { paddr: u64, len: u64, limit: usize },
}

pub fn line_of(paddr: u64) -> u64 {
    paddr & !(LINE - 1)
}

/// Sparse byte-addressable memory; unwritten bytes read as zero.
#[derive(Default, Clone)]
pub struct FunctionalMemory {
    frames: HashMap<u64, Box<[u8; 4096]>>,
    poisoned: Vec<(u64, u64)>,
}

impl FunctionalMemory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn read(&self, paddr: u64, buf: &mut [u8]) {
        let mut done = 0;
        while done < buf.len() {
            let a = paddr + done as u64;
            let off = (a & 4095) as usize;
            let n = (4096 - off).min(buf.len() - done);
            match self.frames.get(&(a >> 12)) {
                Some(f) => buf[done..done + n].copy_from_slice(&f[off..off + n]),
                None => buf[done..done + n].fill(0),
            }
            done += n;
        }
    }

    pub fn write(&mut self, paddr: u64, data: &[u8]) {
        let mut done = 0;
        while done < data.len() {
            let a = paddr + done as u64;
            let off = (a & 4095) as usize;
            let n = (4096 - off).min(data.len() - done);
            let f = self
                .frames
                .entry(a >> 12)
                .or_insert_with(|| Box::new([0; 4096]));
            f[off..off + n].copy_from_slice(&data[done..done + n]);
            done += n;
        }
    }

    pub fn read_line(&self, line: u64) -> LineData {
        let mut d = [0; LINE as usize];
        self.read(line, &mut d);
        d
    }

    pub fn poison(&mut self, paddr: u64, len: u64) {
        self.poisoned.push((paddr, len));
    }

    pub fn check(&self, paddr: u64, len: u64) -> Result<(), MemError> {
        let hit = self
            .poisoned
            .iter()
            .any(|&(p, l)| paddr < p + l && p < paddr + len);
        if hit {
            Err(MemError::DataAbort { paddr, len })
        } else {
            Ok(())
        }
    }

    pub fn resident_frames(&self) -> usize {
        self.frames.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemoryConfig {
    pub l1_bytes: u64,
    pub l1_ways: usize,
    pub l1_latency: u64,
    pub l2_bytes: u64,
    pub l2_ways: usize,
    pub l2_latency: u64,
    pub l3_slice_bytes: u64,
    pub l3_ways: usize,
    pub l3_latency: u64,
    /// Slice pipeline occupancy per line, MMAE cycles.
    pub l3_cycles_per_line: u64,
    pub memory_latency: u64,
    /// Mesh node ids hosting a memory controller.
    pub mc_nodes: Vec<usize>,
    /// Per-controller bandwidth in bytes per MMAE cycle.
    pub mc_bytes_per_cycle: u64,
    pub lock_fraction: f64,
    /// Average CPU loads in flight while streaming a range.
    pub cpu_mlp: u64,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self {
            l1_bytes: 48 << 10,
            l1_ways: 4,
            l1_latency: 4,
            l2_bytes: 512 << 10,
            l2_ways: 8,
            l2_latency: 12,
            l3_slice_bytes: 2 << 20,
            l3_ways: 16,
            l3_latency: 40,
            l3_cycles_per_line: 1,
            memory_latency: 160,
            mc_nodes: vec![0, 3, 12, 15],
            mc_bytes_per_cycle: 32,
            lock_fraction: 0.5,
            cpu_mlp: 8,
        }
    }
}

impl MemoryConfig {
    pub fn lock_limit(&self) -> usize {
        (self.l3_ways as f64 * self.lock_fraction).floor() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Moesi {
    M,
    O,
    E,
    S,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessKind {
    Read,
    Write,
    /// Page-table walker read: starts at the private L2 and does not fill L1.
    Walk,
}

/// Directory record of the private copies of one line. Lines without private
/// copies have no record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DirEntry {
    pub owner: Option<(u8, Moesi)>,
    /// Nodes holding the line in S.
    pub sharers: u32,
}

impl DirEntry {
    fn holders(&self) -> u32 {
        self.sharers | self.owner.map_or(0, |(n, _)| 1 << n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Eviction {
    pub line: u64,
    pub slice: usize,
    pub dirty: bool,
    pub locked: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NodeMemStats {
    pub l1_hits: u64,
    pub l2_hits: u64,
    pub l2_misses: u64,
    pub l3_hits: u64,
    pub l3_misses: u64,
    pub mem_reads: u64,
    pub invalidations_sent: u64,
    pub invalidations_received: u64,
    pub stash_lines: u64,
}

const INVALID: u64 = u64::MAX;

#[derive(Clone, Copy)]
struct L3Meta {
    tag: u64,
    dirty: bool,
    locked: bool,
    stamp: u64,
}

struct L3Slice {
    sets: usize,
    ways: usize,
    meta: Vec<L3Meta>,
    data: Vec<LineData>,
    clock: u64,
    busy: Timeline,
}

impl L3Slice {
    fn new(bytes: u64, ways: usize) -> Self {
        let lines = (bytes / LINE) as usize;
        let sets = (lines / ways).max(1);
        Self {
            sets,
            ways,
            meta: vec![
                L3Meta {
                    tag: INVALID,
                    dirty: false,
                    locked: false,
                    stamp: 0
                };
                sets * ways
            ],
            data: vec![[0; LINE as usize]; sets * ways],
            clock: 0,
            busy: Timeline::default(),
        }
    }

    fn find(&self, set: usize, line: u64) -> Option<usize> {
        let base = set * self.ways;
        (base..base + self.ways).find(|&i| self.meta[i].tag == line)
    }

    fn touch(&mut self, slot: usize) {
        self.clock += 1;
        self.meta[slot].stamp = self.clock;
    }
}

#[derive(Clone, Copy)]
struct PLine {
    tag: u64,
    state: Moesi,
    stamp: u64,
}

/// Set-associative LRU private cache. The L1 instance ignores `data`.
struct PrivateCache {
    sets: usize,
    ways: usize,
    lines: Vec<PLine>,
    data: Vec<LineData>,
    clock: u64,
}

impl PrivateCache {
    fn new(bytes: u64, ways: usize, with_data: bool) -> Self {
        let sets = ((bytes / LINE) as usize / ways).max(1);
        Self {
            sets,
            ways,
            lines: vec![
                PLine {
                    tag: INVALID,
                    state: Moesi::S,
                    stamp: 0
                };
                sets * ways
            ],
            data: if with_data {
                vec![[0; LINE as usize]; sets * ways]
            } else {
                Vec::new()
            },
            clock: 0,
        }
    }

    fn set_of(&self, line: u64) -> usize {
        ((line / LINE) % self.sets as u64) as usize
    }

    fn find(&self, line: u64) -> Option<usize> {
        let base = self.set_of(line) * self.ways;
        (base..base + self.ways).find(|&i| self.lines[i].tag == line)
    }

    fn touch(&mut self, slot: usize) {
        self.clock += 1;
        self.lines[slot].stamp = self.clock;
    }

    /// Slot to fill for `line`: a free way, else the LRU way (returned with
    /// its current contents so the caller can evict it).
    fn victim(&self, line: u64) -> (usize, Option<PLine>) {
        let base = self.set_of(line) * self.ways;
        let mut best = base;
        for i in base..base + self.ways {
            if self.lines[i].tag == INVALID {
                return (i, None);
            }
            if self.lines[i].stamp < self.lines[best].stamp {
                best = i;
            }
        }
        (best, Some(self.lines[best]))
    }

    fn remove(&mut self, line: u64) -> Option<(PLine, usize)> {
        let slot = self.find(line)?;
        let old = self.lines[slot];
        self.lines[slot].tag = INVALID;
        Some((old, slot))
    }

    fn valid_lines(&self) -> impl Iterator<Item = (usize, PLine)> + '_ {
        self.lines
            .iter()
            .enumerate()
            .filter(|(_, l)| l.tag != INVALID)
            .map(|(i, l)| (i, *l))
    }
}

struct Controller {
    node: usize,
    busy: Timeline,
}

/// Cycle lengths in ticks, copied from the machine's timebase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Periods {
    pub mmae: u64,
    pub noc: u64,
}

pub struct MemorySystem {
    cfg: MemoryConfig,
    periods: Periods,
    pub mesh: Mesh,
    pub dram: FunctionalMemory,
    /// Last value written to every byte, in event order. Only kept when
    /// auditing.
    pub shadow: Option<FunctionalMemory>,
    slices: Vec<L3Slice>,
    dir: HashMap<u64, DirEntry>,
    l1: Vec<PrivateCache>,
    l2: Vec<PrivateCache>,
    mcs: Vec<Controller>,
    pub stats: Vec<NodeMemStats>,
    pub eviction_log: Option<Vec<Eviction>>,
    pub violations: Vec<String>,
    pub dram_writebacks: u64,
    /// Tick of the operation in progress, used to place write-backs.
    now: u64,
}

impl MemorySystem {
    pub fn new(cfg: MemoryConfig, noc: NocConfig, periods: Periods) -> Self {
        let mesh = Mesh::new(noc);
        let n = mesh.nodes();
        let mcs = cfg
            .mc_nodes
            .iter()
            .map(|&node| Controller { node, busy: Timeline::default() })
            .collect();
        Self {
            slices: (0..n)
                .map(|_| L3Slice::new(cfg.l3_slice_bytes, cfg.l3_ways))
                .collect(),
            l1: (0..n)
                .map(|_| PrivateCache::new(cfg.l1_bytes, cfg.l1_ways, false))
                .collect(),
            l2: (0..n)
                .map(|_| PrivateCache::new(cfg.l2_bytes, cfg.l2_ways, true))
                .collect(),
            stats: vec![NodeMemStats::default(); n],
            mcs,
            cfg,
            periods,
            mesh,
            dram: FunctionalMemory::new(),
            shadow: None,
            dir: HashMap::new(),
            eviction_log: None,
            violations: Vec::new(),
            dram_writebacks: 0,
            now: 0,
        }
    }

    pub fn config(&self) -> &MemoryConfig {
        &self.cfg
    }

    pub fn periods(&self) -> Periods {
        self.periods
    }

    pub fn nodes(&self) -> usize {
        self.slices.len()
    }

    pub fn enable_shadow(&mut self) {
        self.shadow = Some(self.dram.clone());
    }

    pub fn enable_eviction_log(&mut self) {
        self.eviction_log = Some(Vec::new());
    }

    /// Forgets NOC reservations that ended before tick `now`; every later
    /// message is sent at or after `now`.
    pub fn retire(&mut self, now: u64) {
        self.mesh.retire(now / self.periods.noc);
        for s in &mut self.slices {
            s.busy.retire(now);
        }
        for c in &mut self.mcs {
            c.busy.retire(now);
        }
    }

    pub fn home_of(&self, paddr: u64) -> usize {
        ((paddr / GRANULE) % self.slices.len() as u64) as usize
    }

    fn l3_set(&self, slice: usize, line: u64) -> usize {
        let n = self.slices.len() as u64;
        let key = ((line / GRANULE / n) << 3) | ((line / LINE) & 7);
        (key % self.slices[slice].sets as u64) as usize
    }

    fn mmae(&self, cycles: u64) -> u64 {
        cycles * self.periods.mmae
    }

    /// Sends a message at tick `at`; returns the delivery tick.
    pub fn noc_send(&mut self, src: usize, dst: usize, bytes: u32, class: MessageClass, at: u64) -> u64 {
        let p = self.periods.noc;
        let msg = NocMessage {
            src: self.mesh.coord(src),
            dst: self.mesh.coord(dst),
            bytes,
            class,
        };
        self.mesh.send(&msg, at.div_ceil(p)) * p
    }

    pub fn coord(&self, node: usize) -> Coord {
        self.mesh.coord(node)
    }

    // ---- L3 slice helpers -------------------------------------------------

    fn l3_lookup(&mut self, line: u64) -> Option<(usize, usize)> {
        let slice = self.home_of(line);
        let set = self.l3_set(slice, line);
        let s = &mut self.slices[slice];
        let slot = s.find(set, line)?;
        s.touch(slot);
        Some((slice, slot))
    }

    pub fn l3_contains(&self, line: u64) -> bool {
        let slice = self.home_of(line);
        let set = self.l3_set(slice, line);
        self.slices[slice].find(set, line).is_some()
    }

    pub fn l3_is_locked(&self, line: u64) -> bool {
        let slice = self.home_of(line);
        let set = self.l3_set(slice, line);
        let s = &self.slices[slice];
        s.find(set, line).is_some_and(|i| s.meta[i].locked)
    }

    /// Installs or overwrites `line` in its home slice. Returns false when the
    /// set holds only locked lines and the line could not be placed.
    fn l3_install(&mut self, line: u64, data: &LineData, dirty: bool) -> bool {
        let slice = self.home_of(line);
        let set = self.l3_set(slice, line);
        if let Some(slot) = self.slices[slice].find(set, line) {
            let s = &mut self.slices[slice];
            s.data[slot] = *data;
            s.meta[slot].dirty |= dirty;
            s.touch(slot);
            return true;
        }
        let s = &self.slices[slice];
        let base = set * s.ways;
        let mut victim = None;
        for i in base..base + s.ways {
            let m = s.meta[i];
            if m.tag == INVALID {
                victim = Some(i);
                break;
            }
            if !m.locked && victim.is_none_or(|v: usize| m.stamp < s.meta[v].stamp) {
                victim = Some(i);
            }
        }
        let Some(slot) = victim else {
            return false;
        };
        let old = self.slices[slice].meta[slot];
        if old.tag != INVALID {
            if old.locked {
                self.violations
                    .push(format!("locked line {:#x} chosen as L3 victim", old.tag));
            }
            if old.dirty {
                let d = self.slices[slice].data[slot];
                self.write_back(old.tag, &d);
            }
            if let Some(log) = self.eviction_log.as_mut() {
                log.push(Eviction {
                    line: old.tag,
                    slice,
                    dirty: old.dirty,
                    locked: old.locked,
                });
            }
        }
        let s = &mut self.slices[slice];
        s.meta[slot] = L3Meta {
            tag: line,
            dirty,
            locked: false,
            stamp: 0,
        };
        s.data[slot] = *data;
        s.touch(slot);
        true
    }

    /// The value the lower levels (L3, else DRAM) hold for `line`.
    fn lower_value(&self, line: u64) -> LineData {
        let slice = self.home_of(line);
        let set = self.l3_set(slice, line);
        match self.slices[slice].find(set, line) {
            Some(slot) => self.slices[slice].data[slot],
            None => self.dram.read_line(line),
        }
    }

    fn owner_data(&self, node: usize, line: u64) -> LineData {
        let slot = self.l2[node].find(line).expect("directory owner holds the line");
        self.l2[node].data[slot]
    }

    /// Current architectural value of a line, without side effects.
    pub fn coherent_line(&self, line: u64) -> LineData {
        match self.dir.get(&line).and_then(|e| e.owner) {
            Some((o, Moesi::M | Moesi::O)) => self.owner_data(o as usize, line),
            _ => self.lower_value(line),
        }
    }

    pub fn read_coherent(&self, paddr: u64, buf: &mut [u8]) {
        let mut done = 0usize;
        while done < buf.len() {
            let a = paddr + done as u64;
            let line = line_of(a);
            let off = (a - line) as usize;
            let n = (LINE as usize - off).min(buf.len() - done);
            let d = self.coherent_line(line);
            buf[done..done + n].copy_from_slice(&d[off..off + n]);
            done += n;
        }
    }

    /// Writes that bypass timing and protocol (workload set-up). Every copy is
    /// updated so the hierarchy stays consistent.
    pub fn host_write(&mut self, paddr: u64, data: &[u8]) {
        self.dram.write(paddr, data);
        if let Some(s) = self.shadow.as_mut() {
            s.write(paddr, data);
        }
        let first = line_of(paddr);
        let last = line_of(paddr + data.len() as u64 - 1);
        let mut line = first;
        while line <= last {
            let lo = line.max(paddr);
            let hi = (line + LINE).min(paddr + data.len() as u64);
            let src = &data[(lo - paddr) as usize..(hi - paddr) as usize];
            let off = (lo - line) as usize;
            let slice = self.home_of(line);
            let set = self.l3_set(slice, line);
            if let Some(slot) = self.slices[slice].find(set, line) {
                self.slices[slice].data[slot][off..off + src.len()].copy_from_slice(src);
            }
            if let Some(e) = self.dir.get(&line).copied() {
                for n in 0..self.l2.len() {
                    if e.holders() & (1 << n) != 0 {
                        let slot = self.l2[n].find(line).expect("holder");
                        self.l2[n].data[slot][off..off + src.len()].copy_from_slice(src);
                    }
                }
            }
            line += LINE;
        }
    }

    fn shadow_write(&mut self, paddr: u64, data: &[u8]) {
        if let Some(s) = self.shadow.as_mut() {
            s.write(paddr, data);
        }
    }

    // ---- private caches ---------------------------------------------------

    fn drop_private(&mut self, node: usize, line: u64) -> Option<(Moesi, LineData)> {
        self.l1[node].remove(line);
        let (pl, slot) = self.l2[node].remove(line)?;
        Some((pl.state, self.l2[node].data[slot]))
    }

    /// Evicts a private line, notifying the directory (PutM / PutS / PutE).
    fn evict_private(&mut self, node: usize, victim: PLine) {
        let line = victim.tag;
        let (state, data) = self.drop_private(node, line).expect("victim present");
        let e = self.dir.get_mut(&line).expect("cached line has a directory entry");
        match state {
            Moesi::M | Moesi::O => {
                e.owner = None;
                if e.holders() == 0 {
                    self.dir.remove(&line);
                }
                if !self.l3_install(line, &data, true) {
                    self.write_back(line, &data);
                }
            }
            Moesi::E => {
                e.owner = None;
                if e.holders() == 0 {
                    self.dir.remove(&line);
                }
            }
            Moesi::S => {
                e.sharers &= !(1 << node);
                if e.holders() == 0 {
                    self.dir.remove(&line);
                }
            }
        }
    }

    fn fill_private(&mut self, node: usize, line: u64, state: Moesi, data: LineData) {
        let (slot, victim) = self.l2[node].victim(line);
        if let Some(v) = victim {
            self.evict_private(node, v);
        }
        let c = &mut self.l2[node];
        c.lines[slot] = PLine {
            tag: line,
            state,
            stamp: 0,
        };
        c.data[slot] = data;
        c.touch(slot);
        self.fill_l1(node, line);
    }

    fn fill_l1(&mut self, node: usize, line: u64) {
        let c = &mut self.l1[node];
        if let Some(slot) = c.find(line) {
            c.touch(slot);
            return;
        }
        let (slot, _) = c.victim(line);
        c.lines[slot] = PLine {
            tag: line,
            state: Moesi::S,
            stamp: 0,
        };
        c.touch(slot);
    }

    fn set_private_state(&mut self, node: usize, line: u64, state: Moesi) {
        let slot = self.l2[node].find(line).expect("line present");
        self.l2[node].lines[slot].state = state;
    }

    /// Invalidates every private copy in `mask`; returns the tick at which
    /// all acknowledgements are back at `home`.
    fn invalidate(&mut self, line: u64, mask: u32, home: usize, now: u64) -> u64 {
        let mut done = now;
        for n in 0..self.l2.len() {
            if mask & (1 << n) == 0 {
                continue;
            }
            self.drop_private(n, line);
            self.stats[n].invalidations_received += 1;
            self.stats[home].invalidations_sent += 1;
            let t = self.noc_send(home, n, HEADER, MessageClass::Request, now);
            let t = self.noc_send(n, home, HEADER, MessageClass::Response, t);
            done = done.max(t);
        }
        if let Some(e) = self.dir.get_mut(&line) {
            e.sharers &= !mask;
            if e.owner.is_some_and(|(o, _)| mask & (1 << o) != 0) {
                e.owner = None;
            }
            if e.holders() == 0 {
                self.dir.remove(&line);
            }
        }
        done
    }

    // ---- timing pieces ----------------------------------------------------

    /// Reserves the home slice pipeline for `lines` accesses starting no
    /// earlier than `now`; returns the tick at which hit data is ready.
    fn slice_service(&mut self, slice: usize, lines: u64, now: u64) -> u64 {
        let occ = self.mmae(self.cfg.l3_cycles_per_line * lines);
        let lat = self.mmae(self.cfg.l3_latency);
        let start = self.slices[slice].busy.reserve(now, occ);
        start + occ + lat
    }

    /// Dirty data leaving the hierarchy. Occupies the controller but is off
    /// every requester's critical path.
    fn write_back(&mut self, line: u64, data: &LineData) {
        self.dram.write(line, data);
        self.dram_writebacks += 1;
        if !self.mcs.is_empty() {
            let xfer = self.mmae(LINE.div_ceil(self.cfg.mc_bytes_per_cycle.max(1)));
            let mc = self.controller_for(line);
            self.mcs[mc].busy.reserve(self.now, xfer);
        }
    }

    fn controller_for(&self, line: u64) -> usize {
        ((line >> 12) % self.mcs.len() as u64) as usize
    }

    /// Round trip from `home` to the controller owning `line` for `bytes`
    /// of data; returns the tick the data is back at `home`.
    fn memory_trip(&mut self, home: usize, line: u64, bytes: u64, write: bool, now: u64) -> u64 {
        if self.mcs.is_empty() {
            return now + self.mmae(self.cfg.memory_latency);
        }
        let mc = self.controller_for(line);
        let node = self.mcs[mc].node;
        let (req_bytes, resp_bytes) = if write {
            (HEADER + bytes as u32, HEADER)
        } else {
            (HEADER, bytes as u32)
        };
        let t = self.noc_send(home, node, req_bytes, MessageClass::Request, now);
        let xfer = self.mmae(bytes.div_ceil(self.cfg.mc_bytes_per_cycle.max(1)));
        let start = self.mcs[mc].busy.reserve(t, xfer);
        let ready = start + xfer + self.mmae(self.cfg.memory_latency);
        self.noc_send(node, home, resp_bytes, MessageClass::Response, ready)
    }

    // ---- MMAE (DMA) side --------------------------------------------------

    /// DMA read of whole lines that share one home slice, processed at the
    /// home at tick `now`. Line data is appended to `out`. Returns the tick
    /// the response can leave the home.
    pub fn dma_read(&mut self, node: usize, lines: &[u64], now: u64, out: &mut Vec<u8>) -> u64 {
        self.now = now;
        let home = self.home_of(lines[0]);
        let mut ready = self.slice_service(home, lines.len() as u64, now);
        let mut missing = 0u64;
        for &line in lines {
            debug_assert_eq!(self.home_of(line), home);
            let data = match self.dir.get(&line).and_then(|e| e.owner) {
                Some((o, Moesi::M | Moesi::O)) => {
                    let o = o as usize;
                    let t = self.noc_send(home, o, HEADER, MessageClass::Request, now);
                    let t = t + self.mmae(self.cfg.l2_latency);
                    ready = ready.max(self.noc_send(o, home, HEADER + LINE as u32, MessageClass::Response, t));
                    self.owner_data(o, line)
                }
                _ => {
                    if let Some((slice, slot)) = self.l3_lookup(line) {
                        self.stats[node].l3_hits += 1;
                        self.slices[slice].data[slot]
                    } else {
                        self.stats[node].l3_misses += 1;
                        self.stats[node].mem_reads += 1;
                        missing += 1;
                        let d = self.dram.read_line(line);
                        self.l3_install(line, &d, false);
                        d
                    }
                }
            };
            out.extend_from_slice(&data);
        }
        if missing > 0 {
            let t = self.memory_trip(home, lines[0], missing * LINE, false, now);
            ready = ready.max(t);
        }
        ready
    }

    /// DMA write of `data` starting at `paddr` (may cover partial lines; all
    /// bytes share one home slice). Private copies are invalidated and the
    /// result is left dirty in L3. Returns the tick the ack can leave.
    pub fn dma_write(&mut self, node: usize, paddr: u64, data: &[u8], now: u64) -> u64 {
        self.now = now;
        let home = self.home_of(paddr);
        let first = line_of(paddr);
        let end = paddr + data.len() as u64;
        let nlines = (end - first).div_ceil(LINE);
        let mut ready = self.slice_service(home, nlines, now);
        let mut missing = 0u64;
        let mut line = first;
        while line < end {
            let lo = line.max(paddr);
            let hi = (line + LINE).min(end);
            let partial = hi - lo < LINE;
            let mut value = if partial {
                match self.dir.get(&line).and_then(|e| e.owner) {
                    Some((o, Moesi::M | Moesi::O)) => self.owner_data(o as usize, line),
                    _ => {
                        if self.l3_lookup(line).is_some() {
                            self.stats[node].l3_hits += 1;
                        } else {
                            self.stats[node].l3_misses += 1;
                            self.stats[node].mem_reads += 1;
                            missing += 1;
                        }
                        self.lower_value(line)
                    }
                }
            } else {
                [0; LINE as usize]
            };
            if let Some(e) = self.dir.get(&line).copied() {
                ready = ready.max(self.invalidate(line, e.holders(), home, now));
            }
            let off = (lo - line) as usize;
            value[off..off + (hi - lo) as usize]
                .copy_from_slice(&data[(lo - paddr) as usize..(hi - paddr) as usize]);
            if !self.l3_install(line, &value, true) {
                self.write_back(line, &value);
            }
            line += LINE;
        }
        self.shadow_write(paddr, data);
        if missing > 0 {
            ready = ready.max(self.memory_trip(home, first, missing * LINE, false, now));
        }
        ready
    }

    /// Stash: make every line in `lines` (one home) resident in L3.
    pub fn stash(&mut self, node: usize, lines: &[u64], now: u64) -> u64 {
        self.now = now;
        let home = self.home_of(lines[0]);
        let mut ready = self.slice_service(home, lines.len() as u64, now);
        let mut missing = 0u64;
        for &line in lines {
            self.stats[node].stash_lines += 1;
            if self.l3_lookup(line).is_some() {
                continue;
            }
            let (data, dirty) = match self.dir.get(&line).and_then(|e| e.owner) {
                Some((o, Moesi::M | Moesi::O)) => (self.owner_data(o as usize, line), true),
                _ => {
                    missing += 1;
                    self.stats[node].mem_reads += 1;
                    (self.dram.read_line(line), false)
                }
            };
            self.l3_install(line, &data, dirty);
        }
        if missing > 0 {
            ready = ready.max(self.memory_trip(home, lines[0], missing * LINE, false, now));
        }
        ready
    }

    /// Installs a clean copy of the line holding `paddr` in L3 with no
    /// timing or statistics effect (setup-time state, e.g. page tables).
    pub fn warm_l3(&mut self, paddr: u64) {
        let line = line_of(paddr);
        if self.l3_contains(line) || self.dir.contains_key(&line) {
            return;
        }
        let data = self.dram.read_line(line);
        self.l3_install(line, &data, false);
    }

    /// Locks every line of `[paddr, paddr+len)` into L3, all or nothing.
    pub fn lock_range(&mut self, node: usize, paddr: u64, len: u64) -> Result<(), MemError> {
        let limit = self.cfg.lock_limit();
        let mut per_set: HashMap<(usize, usize), usize> = HashMap::new();
        let mut lines = Vec::new();
        let mut line = line_of(paddr);
        while line < paddr + len {
            if !self.l3_is_locked(line) {
                let slice = self.home_of(line);
                *per_set.entry((slice, self.l3_set(slice, line))).or_insert(0) += 1;
                lines.push(line);
            }
            line += LINE;
        }
        for (&(slice, set), &extra) in &per_set {
            let s = &self.slices[slice];
            let base = set * s.ways;
            let locked = (base..base + s.ways).filter(|&i| s.meta[i].locked).count();
            if locked + extra > limit {
                return Err(MemError::LockCapacity { paddr, len, limit });
            }
        }
        for line in lines {
            if !self.l3_contains(line) {
                let (data, dirty) = match self.dir.get(&line).and_then(|e| e.owner) {
                    Some((o, Moesi::M | Moesi::O)) => (self.owner_data(o as usize, line), true),
                    _ => {
                        self.stats[node].mem_reads += 1;
                        (self.dram.read_line(line), false)
                    }
                };
                let placed = self.l3_install(line, &data, dirty);
                debug_assert!(placed, "lock capacity leaves an unlocked way");
            }
            let slice = self.home_of(line);
            let set = self.l3_set(slice, line);
            let slot = self.slices[slice].find(set, line).expect("installed");
            self.slices[slice].meta[slot].locked = true;
        }
        Ok(())
    }

    pub fn unlock_range(&mut self, paddr: u64, len: u64) {
        let mut line = line_of(paddr);
        while line < paddr + len {
            let slice = self.home_of(line);
            let set = self.l3_set(slice, line);
            if let Some(slot) = self.slices[slice].find(set, line) {
                self.slices[slice].meta[slot].locked = false;
            }
            line += LINE;
        }
    }

    pub fn locked_lines(&self) -> usize {
        self.slices
            .iter()
            .map(|s| s.meta.iter().filter(|m| m.tag != INVALID && m.locked).count())
            .sum()
    }

    // ---- CPU side ---------------------------------------------------------

    /// One coherent CPU access to a single line. Returns the completion tick.
    pub fn cpu_access(&mut self, node: usize, paddr: u64, kind: AccessKind, buf: &mut [u8], now: u64) -> u64 {
        self.now = now;
        let line = line_of(paddr);
        let off = (paddr - line) as usize;
        assert!(off + buf.len() <= LINE as usize, "access crosses a line");
        let walk = kind == AccessKind::Walk;
        let l1_hit = !walk && self.l1[node].find(line).is_some();
        let mut t = if walk { now } else { now + self.mmae(self.cfg.l1_latency) };
        let state = self.l2[node].find(line).map(|s| self.l2[node].lines[s].state);
        let need_miss = match (state, kind) {
            (None, _) => true,
            (Some(_), AccessKind::Read | AccessKind::Walk) => false,
            (Some(Moesi::M | Moesi::E), AccessKind::Write) => false,
            (Some(_), AccessKind::Write) => true,
        };
        if !need_miss {
            if l1_hit {
                self.stats[node].l1_hits += 1;
                let slot = self.l1[node].find(line).expect("hit");
                self.l1[node].touch(slot);
            } else {
                self.stats[node].l2_hits += 1;
                t += self.mmae(self.cfg.l2_latency);
                if !walk {
                    self.fill_l1(node, line);
                }
            }
            let slot = self.l2[node].find(line).expect("present");
            self.l2[node].touch(slot);
            if kind == AccessKind::Write && state == Some(Moesi::E) {
                self.l2[node].lines[slot].state = Moesi::M;
                if let Some(e) = self.dir.get_mut(&line) {
                    e.owner = Some((node as u8, Moesi::M));
                }
            }
        } else {
            self.stats[node].l2_misses += 1;
            t += self.mmae(self.cfg.l2_latency);
            t = match kind {
                AccessKind::Read | AccessKind::Walk => self.get_s(node, line, t),
                AccessKind::Write => self.get_m(node, line, t),
            };
        }
        let slot = self.l2[node].find(line).expect("line present after access");
        match kind {
            AccessKind::Read | AccessKind::Walk => buf.copy_from_slice(&self.l2[node].data[slot][off..off + buf.len()]),
            AccessKind::Write => {
                self.l2[node].data[slot][off..off + buf.len()].copy_from_slice(buf);
                self.shadow_write(paddr, buf);
            }
        }
        t
    }

    /// Reads a whole range through the CPU caches; completion assumes
    /// `cpu_mlp` loads overlap.
    pub fn cpu_read_range(&mut self, node: usize, paddr: u64, len: u64, now: u64) -> u64 {
        let mut total = 0u64;
        let mut buf = [0u8; LINE as usize];
        let mut line = line_of(paddr);
        while line < paddr + len {
            let done = self.cpu_access(node, line, AccessKind::Read, &mut buf, now);
            total += done - now;
            line += LINE;
        }
        now + total / self.cfg.cpu_mlp.max(1)
    }

    fn lower_fetch(&mut self, node: usize, home: usize, line: u64, now: u64) -> (LineData, u64) {
        if let Some((slice, slot)) = self.l3_lookup(line) {
            self.stats[node].l3_hits += 1;
            let t = self.slice_service(home, 1, now);
            (self.slices[slice].data[slot], t)
        } else {
            self.stats[node].l3_misses += 1;
            self.stats[node].mem_reads += 1;
            let d = self.dram.read_line(line);
            self.l3_install(line, &d, false);
            let t = self.slice_service(home, 1, now);
            (d, t.max(self.memory_trip(home, line, LINE, false, now)))
        }
    }

    fn get_s(&mut self, node: usize, line: u64, now: u64) -> u64 {
        let home = self.home_of(line);
        let t = self.noc_send(node, home, HEADER, MessageClass::Request, now);
        let e = self.dir.get(&line).copied().unwrap_or_default();
        let (data, ready, state) = match e.owner {
            Some((o, os)) => {
                let o = o as usize;
                let fwd = self.noc_send(home, o, HEADER, MessageClass::Request, t) + self.mmae(self.cfg.l2_latency);
                match os {
                    Moesi::M | Moesi::O => {
                        self.set_private_state(o, line, Moesi::O);
                        self.dir.get_mut(&line).expect("entry").owner = Some((o as u8, Moesi::O));
                        (self.owner_data(o, line), fwd, Moesi::S)
                    }
                    _ => {
                        self.set_private_state(o, line, Moesi::S);
                        let de = self.dir.get_mut(&line).expect("entry");
                        de.owner = None;
                        de.sharers |= 1 << o;
                        let (d, r) = self.lower_fetch(node, home, line, t);
                        (d, r.max(fwd), Moesi::S)
                    }
                }
            }
            None => {
                let (d, r) = self.lower_fetch(node, home, line, t);
                (d, r, if e.sharers == 0 { Moesi::E } else { Moesi::S })
            }
        };
        let de = self.dir.entry(line).or_default();
        if state == Moesi::E {
            de.owner = Some((node as u8, Moesi::E));
        } else {
            de.sharers |= 1 << node;
        }
        self.fill_private(node, line, state, data);
        self.noc_send(home, node, HEADER + LINE as u32, MessageClass::Response, ready)
    }

    fn get_m(&mut self, node: usize, line: u64, now: u64) -> u64 {
        let home = self.home_of(line);
        let t = self.noc_send(node, home, HEADER, MessageClass::Request, now);
        let e = self.dir.get(&line).copied().unwrap_or_default();
        let mine = self.l2[node].find(line).map(|s| (self.l2[node].data[s], self.l2[node].lines[s].state));
        let others = e.holders() & !(1 << node);
        let (data, mut ready) = match (mine, e.owner) {
            (Some((d, _)), _) => (d, t + self.mmae(self.cfg.l3_latency)),
            (None, Some((o, Moesi::M | Moesi::O | Moesi::E))) => {
                let o = o as usize;
                let fwd = self.noc_send(home, o, HEADER, MessageClass::Request, t) + self.mmae(self.cfg.l2_latency);
                let d = self.owner_data(o, line);
                (d, self.noc_send(o, home, HEADER + LINE as u32, MessageClass::Response, fwd))
            }
            (None, _) => self.lower_fetch(node, home, line, t),
        };
        if others != 0 {
            ready = ready.max(self.invalidate(line, others, home, t));
        }
        if mine.is_some() {
            self.set_private_state(node, line, Moesi::M);
            let slot = self.l2[node].find(line).expect("present");
            self.l2[node].touch(slot);
            self.fill_l1(node, line);
        } else {
            self.fill_private(node, line, Moesi::M, data);
        }
        let de = self.dir.entry(line).or_default();
        de.sharers &= !(1 << node);
        de.owner = Some((node as u8, Moesi::M));
        let bytes = if mine.is_some() { HEADER } else { HEADER + LINE as u32 };
        self.noc_send(home, node, bytes, MessageClass::Response, ready)
    }

    /// Drops a private line as if it had been evicted (exercises PutM/PutS).
    pub fn cpu_evict(&mut self, node: usize, paddr: u64) {
        let line = line_of(paddr);
        if let Some(slot) = self.l2[node].find(line) {
            let v = self.l2[node].lines[slot];
            self.evict_private(node, v);
        }
    }

    // ---- audits -----------------------------------------------------------

    pub fn private_state(&self, node: usize, paddr: u64) -> Option<Moesi> {
        let line = line_of(paddr);
        self.l2[node].find(line).map(|s| self.l2[node].lines[s].state)
    }

    pub fn dir_entry(&self, paddr: u64) -> Option<DirEntry> {
        self.dir.get(&line_of(paddr)).copied()
    }

    /// SWMR, copy agreement and shadow agreement for one line.
    pub fn check_line(&self, line: u64) -> Result<(), String> {
        let mut writers = 0;
        let mut readers = 0;
        let mut owners_o = 0;
        let value = self.coherent_line(line);
        for n in 0..self.l2.len() {
            if let Some(slot) = self.l2[n].find(line) {
                match self.l2[n].lines[slot].state {
                    Moesi::M | Moesi::E => writers += 1,
                    Moesi::O => {
                        owners_o += 1;
                        readers += 1
                    }
                    Moesi::S => readers += 1,
                }
                if self.l2[n].data[slot] != value {
                    return Err(format!("line {line:#x}: copy at node {n} disagrees"));
                }
            }
            if self.l1[n].find(line).is_some() && self.l2[n].find(line).is_none() {
                return Err(format!("line {line:#x}: L1 at node {n} not included in L2"));
            }
        }
        if writers > 1 || (writers == 1 && readers > 0) || owners_o > 1 {
            return Err(format!(
                "line {line:#x}: SWMR violated ({writers} writers, {readers} readers)"
            ));
        }
        if let Some(s) = &self.shadow {
            if s.read_line(line) != value {
                return Err(format!("line {line:#x}: value differs from last write"));
            }
        }
        let mut expect = DirEntry::default();
        for n in 0..self.l2.len() {
            if let Some(slot) = self.l2[n].find(line) {
                match self.l2[n].lines[slot].state {
                    Moesi::S => expect.sharers |= 1 << n,
                    st => expect.owner = Some((n as u8, st)),
                }
            }
        }
        let actual = self.dir.get(&line).copied().unwrap_or_default();
        if actual != expect {
            return Err(format!(
                "line {line:#x}: directory {actual:?} but caches hold {expect:?}"
            ));
        }
        Ok(())
    }

    /// Checks every line that has a directory record or a private copy.
    pub fn audit(&self) -> Vec<String> {
        let mut lines: HashSet<u64> = self.dir.keys().copied().collect();
        for c in &self.l2 {
            lines.extend(c.valid_lines().map(|(_, l)| l.tag));
        }
        let mut sorted: Vec<u64> = lines.into_iter().collect();
        sorted.sort_unstable();
        sorted
            .into_iter()
            .filter_map(|l| self.check_line(l).err())
            .collect()
    }
}
