//! Virtual memory: radix page tables, TLBs and the mATLB pre-translation
//! buffer.
//!
//! Latencies here are in MMAE cycles. Page-table entries have real physical
//! addresses so the caller can charge each walk step against its cache model.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::queues::Asid;

pub const VA_BITS: u32 = 48;
/// Page-table nodes live above this physical address.
pub const PAGE_TABLE_REGION: u64 = 1 << 44;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TranslationError {
    #[error("page fault at {vaddr:#x} (asid {asid})")]
    PageFault { asid: Asid, vaddr: u64 },
    #[error("page at {vaddr:#x} is already mapped (asid {asid})")]
    DoubleMap { asid: Asid, vaddr: u64 },
    #[error("page size {0} is not a power of two between 4 KiB and 1 GiB")]
    BadPageSize(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TranslationConfig {
    pub page_size: u64,
    pub l1_tlb_entries: usize,
    pub l2_tlb_entries: usize,
    pub l1_hit_latency: u64,
    pub l2_hit_latency: u64,
    pub matlb: bool,
    pub matlb_capacity: usize,
    pub matlb_lookahead: usize,
}

impl Default for TranslationConfig {
    fn default() -> Self {
        Self {
            page_size: 4096,
            l1_tlb_entries: 48,
            l2_tlb_entries: 1024,
            l1_hit_latency: 1,
            l2_hit_latency: 4,
            matlb: true,
            matlb_capacity: 8,
            matlb_lookahead: 4,
        }
    }
}

pub fn page_shift(page_size: u64) -> Result<u32, TranslationError> {
    if !page_size.is_power_of_two() || !(4096..=1 << 30).contains(&page_size) {
        return Err(TranslationError::BadPageSize(page_size));
    }
    Ok(page_size.trailing_zeros())
}

/// Radix depth for a page size: 9 index bits per level over a 48-bit VA.
pub fn levels_for(page_size: u64) -> Result<u32, TranslationError> {
    Ok((VA_BITS - page_shift(page_size)?).div_ceil(9))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FramePolicy {
    /// pfn = vpn
    Identity,
    /// Frames handed out in order starting at `first`.
    Sequential { first: u64 },
    /// Distinct random frames below 2^`bits`, reproducible for a seed.
    Randomized { seed: u64, bits: u32 },
}

impl Default for FramePolicy {
    fn default() -> Self {
        FramePolicy::Sequential { first: 0x100 }
    }
}

struct FrameAllocator {
    policy: FramePolicy,
    next: u64,
    rng: Option<ChaCha8Rng>,
}

impl FrameAllocator {
    fn new(policy: FramePolicy) -> Self {
        let (next, rng) = match policy {
            FramePolicy::Sequential { first } => (first, None),
            FramePolicy::Randomized { seed, .. } => (0, Some(ChaCha8Rng::seed_from_u64(seed))),
            FramePolicy::Identity => (0, None),
        };
        Self { policy, next, rng }
    }

    fn frame(&mut self, vpn: u64, used: &HashSet<u64>) -> u64 {
        match self.policy {
            FramePolicy::Identity => vpn,
            FramePolicy::Sequential { .. } => {
                while used.contains(&self.next) {
                    self.next += 1;
                }
                self.next += 1;
                self.next - 1
            }
            FramePolicy::Randomized { bits, .. } => {
                let rng = self.rng.as_mut().expect("seeded");
                loop {
                    let f = rng.random_range(1..1u64 << bits.clamp(8, 40));
                    if !used.contains(&f) {
                        return f;
                    }
                }
            }
        }
    }
}

/// Per-ASID 4-level (for 4 KiB pages) radix tables.
pub struct PageTables {
    page_size: u64,
    shift: u32,
    levels: u32,
    leaves: HashMap<(Asid, u64), u64>,
    nodes: HashMap<(Asid, u32, u64), u64>,
    next_node: u64,
    used_frames: HashSet<u64>,
    alloc: FrameAllocator,
}

impl PageTables {
    pub fn new(page_size: u64, policy: FramePolicy) -> Result<Self, TranslationError> {
        Ok(Self {
            page_size,
            shift: page_shift(page_size)?,
            levels: levels_for(page_size)?,
            leaves: HashMap::new(),
            nodes: HashMap::new(),
            next_node: PAGE_TABLE_REGION,
            used_frames: HashSet::new(),
            alloc: FrameAllocator::new(policy),
        })
    }

    pub fn page_size(&self) -> u64 {
        self.page_size
    }

    pub fn page_shift(&self) -> u32 {
        self.shift
    }

    pub fn levels(&self) -> u32 {
        self.levels
    }

    pub fn mapped_pages(&self) -> usize {
        self.leaves.len()
    }

    fn node(&mut self, asid: Asid, level: u32, prefix: u64) -> u64 {
        let next = &mut self.next_node;
        *self.nodes.entry((asid, level, prefix)).or_insert_with(|| {
            let a = *next;
            *next += 4096;
            a
        })
    }

    fn index_bits(&self, level: u32) -> u32 {
        9 * (self.levels - 1 - level)
    }

    /// Maps every page overlapping `[vbase, vbase + bytes)`. Nothing is
    /// mapped if any page already is.
    pub fn map_region(&mut self, asid: Asid, vbase: u64, bytes: u64) -> Result<(), TranslationError> {
        if bytes == 0 {
            return Ok(());
        }
        let first = vbase >> self.shift;
        let last = (vbase + bytes - 1) >> self.shift;
        if let Some(vpn) = (first..=last).find(|v| self.leaves.contains_key(&(asid, *v))) {
            return Err(TranslationError::DoubleMap {
                asid,
                vaddr: vpn << self.shift,
            });
        }
        for vpn in first..=last {
            let pfn = self.alloc.frame(vpn, &self.used_frames);
            self.used_frames.insert(pfn);
            self.leaves.insert((asid, vpn), pfn);
            for level in 0..self.levels {
                let prefix = if level == 0 { 0 } else { vpn >> (self.index_bits(level - 1)) };
                self.node(asid, level, prefix);
            }
        }
        Ok(())
    }

    /// Like `map_region` but tolerates pages that are already mapped.
    pub fn ensure_mapped(&mut self, asid: Asid, vbase: u64, bytes: u64) {
        if bytes == 0 {
            return;
        }
        let first = vbase >> self.shift;
        let last = (vbase + bytes - 1) >> self.shift;
        for vpn in first..=last {
            if !self.leaves.contains_key(&(asid, vpn)) {
                self.map_region(asid, vpn << self.shift, 1).expect("page is unmapped");
            }
        }
    }

    pub fn unmap_page(&mut self, asid: Asid, vaddr: u64) -> bool {
        let vpn = vaddr >> self.shift;
        match self.leaves.remove(&(asid, vpn)) {
            Some(pfn) => {
                self.used_frames.remove(&pfn);
                true
            }
            None => false,
        }
    }

    pub fn lookup(&self, asid: Asid, vpn: u64) -> Option<u64> {
        self.leaves.get(&(asid, vpn)).copied()
    }

    pub fn translate_functional(&self, asid: Asid, vaddr: u64) -> Result<u64, TranslationError> {
        let off = vaddr & (self.page_size - 1);
        self.lookup(asid, vaddr >> self.shift)
            .map(|pfn| (pfn << self.shift) | off)
            .ok_or(TranslationError::PageFault { asid, vaddr })
    }

    /// Physical addresses of the entries a walk for `vpn` reads, root first.
    /// Stops early at the first missing table.
    pub fn walk_addresses(&self, asid: Asid, vpn: u64) -> Vec<u64> {
        let mut out = Vec::with_capacity(self.levels as usize);
        for level in 0..self.levels {
            let prefix = if level == 0 { 0 } else { vpn >> self.index_bits(level - 1) };
            match self.nodes.get(&(asid, level, prefix)) {
                Some(base) => {
                    let idx = (vpn >> self.index_bits(level)) & 511;
                    out.push(base + idx * 8);
                }
                None => break,
            }
        }
        out
    }
}

/// Fully associative LRU TLB keyed by (asid, vpn).
#[derive(Debug, Clone)]
pub struct Tlb {
    capacity: usize,
    entries: HashMap<(Asid, u64), (u64, u64)>,
    lru: BTreeMap<u64, (Asid, u64)>,
    clock: u64,
}

impl Tlb {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            entries: HashMap::with_capacity(capacity + 1),
            lru: BTreeMap::new(),
            clock: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lookup(&mut self, asid: Asid, vpn: u64) -> Option<u64> {
        let e = self.entries.get_mut(&(asid, vpn))?;
        self.lru.remove(&e.1);
        self.clock += 1;
        e.1 = self.clock;
        self.lru.insert(self.clock, (asid, vpn));
        Some(e.0)
    }

    pub fn contains(&self, asid: Asid, vpn: u64) -> bool {
        self.entries.contains_key(&(asid, vpn))
    }

    pub fn insert(&mut self, asid: Asid, vpn: u64, pfn: u64) {
        if self.capacity == 0 {
            return;
        }
        if self.lookup(asid, vpn).is_some() {
            self.entries.get_mut(&(asid, vpn)).expect("present").0 = pfn;
            return;
        }
        if self.entries.len() == self.capacity {
            let (_, victim) = self.lru.pop_first().expect("full tlb has an lru entry");
            self.entries.remove(&victim);
        }
        self.clock += 1;
        self.entries.insert((asid, vpn), (pfn, self.clock));
        self.lru.insert(self.clock, (asid, vpn));
    }

    /// Resident vpns for `asid`, least recently used first.
    pub fn vpns_lru_order(&self, asid: Asid) -> Vec<u64> {
        self.lru
            .values()
            .filter(|(a, _)| *a == asid)
            .map(|(_, v)| *v)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Requester {
    Cpu,
    Mmae,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TranslationSource {
    L1Tlb,
    L2Tlb,
    Walk,
    Matlb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Translation {
    pub paddr: u64,
    pub cycles: u64,
    pub source: TranslationSource,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MmuStats {
    pub l1_hits: u64,
    pub l2_hits: u64,
    pub tlb_misses: u64,
    pub walks: u64,
    pub pte_accesses: u64,
    pub faults: u64,
    pub matlb_prewalks: u64,
}

/// One node's MMU: a private L1 DTLB for the core and the L2 TLB it
/// shares with its MMAE.
pub struct Mmu {
    cfg: TranslationConfig,
    shift: u32,
    pub l1: Tlb,
    pub l2: Tlb,
    pub stats: MmuStats,
}

impl Mmu {
    pub fn new(cfg: TranslationConfig) -> Result<Self, TranslationError> {
        Ok(Self {
            shift: page_shift(cfg.page_size)?,
            l1: Tlb::new(cfg.l1_tlb_entries),
            l2: Tlb::new(cfg.l2_tlb_entries),
            cfg,
            stats: MmuStats::default(),
        })
    }

    pub fn config(&self) -> &TranslationConfig {
        &self.cfg
    }

    /// Full lookup path; `mem` returns the latency of reading one PTE.
    pub fn translate<F: FnMut(u64) -> u64>(
        &mut self,
        pt: &PageTables,
        asid: Asid,
        vaddr: u64,
        req: Requester,
        mem: &mut F,
    ) -> Result<Translation, TranslationError> {
        let vpn = vaddr >> self.shift;
        let off = vaddr & (self.cfg.page_size - 1);
        let mut cycles = 0;
        if req == Requester::Cpu {
            cycles += self.cfg.l1_hit_latency;
            if let Some(pfn) = self.l1.lookup(asid, vpn) {
                self.stats.l1_hits += 1;
                return Ok(Translation {
                    paddr: (pfn << self.shift) | off,
                    cycles,
                    source: TranslationSource::L1Tlb,
                });
            }
        }
        cycles += self.cfg.l2_hit_latency;
        if let Some(pfn) = self.l2.lookup(asid, vpn) {
            self.stats.l2_hits += 1;
            if req == Requester::Cpu {
                self.l1.insert(asid, vpn, pfn);
            }
            return Ok(Translation {
                paddr: (pfn << self.shift) | off,
                cycles,
                source: TranslationSource::L2Tlb,
            });
        }
        self.stats.tlb_misses += 1;
        let (pfn, walk) = self.walk(pt, asid, vpn, mem);
        cycles += walk;
        let pfn = pfn.ok_or(TranslationError::PageFault { asid, vaddr })?;
        self.l2.insert(asid, vpn, pfn);
        if req == Requester::Cpu {
            self.l1.insert(asid, vpn, pfn);
        }
        Ok(Translation {
            paddr: (pfn << self.shift) | off,
            cycles,
            source: TranslationSource::Walk,
        })
    }

    /// Page-table walk without touching the TLBs.
    pub fn walk<F: FnMut(u64) -> u64>(
        &mut self,
        pt: &PageTables,
        asid: Asid,
        vpn: u64,
        mem: &mut F,
    ) -> (Option<u64>, u64) {
        self.stats.walks += 1;
        let mut cycles = 0;
        for a in pt.walk_addresses(asid, vpn) {
            self.stats.pte_accesses += 1;
            cycles += mem(a);
        }
        let pfn = pt.lookup(asid, vpn);
        if pfn.is_none() {
            self.stats.faults += 1;
        }
        (pfn, cycles)
    }
}

/// Describes how a DMA streams one tile out of a row-major matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileAccessDescriptor {
    pub base: u64,
    pub element_size: u64,
    /// Columns of the whole matrix (its row pitch in elements).
    pub cols: u64,
    pub r0: u64,
    pub c0: u64,
    pub tr: u64,
    pub tc: u64,
    pub page_size: u64,
}

/// First byte touched in each distinct page, in access order.
pub fn predict_page_heads(d: &TileAccessDescriptor) -> Vec<u64> {
    let mut seen = HashSet::new();
    let mut heads = Vec::new();
    let len = d.tc * d.element_size;
    if len == 0 {
        return heads;
    }
    let mask = !(d.page_size - 1);
    for r in 0..d.tr {
        let start = d.base + ((d.r0 + r) * d.cols + d.c0) * d.element_size;
        let end = start + len;
        let mut a = start;
        while a < end {
            if seen.insert(a & mask) {
                heads.push(a);
            }
            a = (a & mask) + d.page_size;
        }
    }
    heads
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AtlbEntry {
    pub vpn: u64,
    /// `None` records a fault, raised only if the DMA reaches the page.
    pub pfn: Option<u64>,
    pub ready_at: u64,
    pub generation: u32,
    index: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MatlbStats {
    pub prewalks: u64,
    pub hits: u64,
    pub misses: u64,
    pub dropped: u64,
}

/// Pre-translation buffer serving one DMA engine. It walks the predicted
/// page sequence up to `lookahead` pages beyond the DMA cursor.
pub struct MatlbLane {
    capacity: usize,
    lookahead: usize,
    generation: u32,
    pages: Vec<u64>,
    cursor: usize,
    next_issue: usize,
    buffer: VecDeque<AtlbEntry>,
    pub stats: MatlbStats,
}

impl MatlbLane {
    pub fn new(capacity: usize, lookahead: usize) -> Self {
        Self {
            capacity,
            lookahead,
            generation: 0,
            pages: Vec::new(),
            cursor: 0,
            next_issue: 0,
            buffer: VecDeque::new(),
            stats: MatlbStats::default(),
        }
    }

    pub fn enabled(&self) -> bool {
        self.lookahead > 0 && self.capacity > 0
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    /// Loads a new predicted vpn sequence for a task.
    pub fn configure(&mut self, pages: Vec<u64>) {
        self.generation = self.generation.wrapping_add(1);
        self.pages = pages;
        self.cursor = 0;
        self.next_issue = 0;
        self.buffer.clear();
    }

    /// Issues walks for pages up to `lookahead` beyond the cursor.
    /// `walk` maps a vpn to its frame (or a fault) and the walk latency.
    pub fn prewalk<F: FnMut(u64) -> (Option<u64>, u64)>(&mut self, now: u64, walk: &mut F) {
        if !self.enabled() {
            return;
        }
        while self.next_issue < self.pages.len()
            && self.next_issue <= self.cursor + self.lookahead
            && self.buffer.len() < self.capacity
        {
            let vpn = self.pages[self.next_issue];
            let (pfn, lat) = walk(vpn);
            self.stats.prewalks += 1;
            self.buffer.push_back(AtlbEntry {
                vpn,
                pfn,
                ready_at: now + lat,
                generation: self.generation,
                index: self.next_issue,
            });
            self.next_issue += 1;
        }
    }

    /// Consults the buffer for the DMA's current page. Entries ahead of it
    /// that do not match are dropped.
    pub fn lookup(&mut self, vpn: u64) -> Option<AtlbEntry> {
        if !self.enabled() {
            return None;
        }
        while let Some(front) = self.buffer.front() {
            if front.vpn == vpn {
                self.cursor = front.index;
                self.stats.hits += 1;
                return Some(*front);
            }
            self.buffer.pop_front();
            self.stats.dropped += 1;
        }
        self.stats.misses += 1;
        None
    }
}

/// Consecutive-duplicate-free page sequence of a list of byte ranges.
pub fn page_sequence(ranges: impl IntoIterator<Item = (u64, u64)>, shift: u32, out: &mut Vec<u64>) {
    for (start, len) in ranges {
        if len == 0 {
            continue;
        }
        for vpn in (start >> shift)..=((start + len - 1) >> shift) {
            if out.last() != Some(&vpn) {
                out.push(vpn);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_heads(d: &TileAccessDescriptor) -> Vec<u64> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for r in 0..d.tr {
            let start = d.base + ((d.r0 + r) * d.cols + d.c0) * d.element_size;
            for b in start..start + d.tc * d.element_size {
                if seen.insert(b / d.page_size) {
                    out.push(b);
                }
            }
        }
        out
    }

    fn fig4() -> TileAccessDescriptor {
        TileAccessDescriptor {
            base: 0x10000,
            element_size: 8,
            cols: 1024,
            r0: 0,
            c0: 0,
            tr: 1,
            tc: 1024,
            page_size: 4096,
        }
    }

    #[test]
    fn heads_examples() {
        assert_eq!(predict_page_heads(&fig4()), vec![0x10000, 0x11000]);
        let small = TileAccessDescriptor { tc: 8, tr: 3, cols: 8, ..fig4() };
        assert_eq!(predict_page_heads(&small), vec![0x10000]);
        let tr = TileAccessDescriptor {
            base: 0x10FC0,
            tc: 16,
            ..fig4()
        };
        assert_eq!(predict_page_heads(&tr), vec![0x10FC0, 0x11000]);
    }

    proptest! {
        #[test]
        fn heads_match_brute_force(
            base in 0u64..1 << 20,
            es in prop::sample::select(vec![2u64, 4, 8]),
            cols in 1u64..600,
            r0 in 0u64..8,
            c0f in 0.0f64..1.0,
            tr in 1u64..12,
            tcf in 0.0f64..1.0,
            page_shift in 12u32..14,
        ) {
            let c0 = (c0f * cols as f64) as u64 % cols;
            let tc = 1 + (tcf * (cols - c0) as f64) as u64 % (cols - c0);
            let d = TileAccessDescriptor { base, element_size: es, cols, r0, c0, tr, tc, page_size: 1 << page_shift };
            prop_assert_eq!(predict_page_heads(&d), brute_heads(&d));
        }
    }

    #[test]
    fn levels_per_page_size() {
        assert_eq!(levels_for(4096).unwrap(), 4);
        assert_eq!(levels_for(1 << 21).unwrap(), 3);
        assert!(levels_for(3000).is_err());
    }

    #[test]
    fn map_region_and_double_map() {
        let mut pt = PageTables::new(4096, FramePolicy::Identity).unwrap();
        pt.map_region(1, 0x10000, 8192).unwrap();
        assert_eq!(pt.mapped_pages(), 2);
        assert_eq!(
            pt.map_region(1, 0x10000, 8192),
            Err(TranslationError::DoubleMap { asid: 1, vaddr: 0x10000 })
        );
        pt.map_region(2, 0x10000, 8192).unwrap();
        assert_eq!(pt.translate_functional(1, 0x10123).unwrap(), 0x10123);
    }

    #[test]
    fn randomized_frames_are_reproducible() {
        let frames = |seed| {
            let mut pt = PageTables::new(4096, FramePolicy::Randomized { seed, bits: 24 }).unwrap();
            pt.map_region(0, 0, 64 * 4096).unwrap();
            (0..64).map(|v| pt.lookup(0, v).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(frames(7), frames(7));
        assert_ne!(frames(7), frames(8));
        let f = frames(7);
        assert_eq!(f.iter().collect::<HashSet<_>>().len(), 64);
    }

    #[test]
    fn translate_costs() {
        let mut pt = PageTables::new(4096, FramePolicy::Identity).unwrap();
        pt.map_region(0, 0x4000, 4096).unwrap();
        let mut mmu = Mmu::new(TranslationConfig::default()).unwrap();
        let mut reads = Vec::new();
        let mut mem = |a: u64| {
            reads.push(a);
            10
        };
        let t = mmu.translate(&pt, 0, 0x4008, Requester::Cpu, &mut mem).unwrap();
        assert_eq!(t.source, TranslationSource::Walk);
        assert_eq!(t.paddr, 0x4008);
        assert_eq!(t.cycles, 1 + 4 + 40);
        assert_eq!(reads.len(), 4);
        assert!(reads.iter().all(|a| *a >= PAGE_TABLE_REGION));
        let t = mmu.translate(&pt, 0, 0x4010, Requester::Cpu, &mut |_| 10).unwrap();
        assert_eq!((t.source, t.cycles), (TranslationSource::L1Tlb, 1));
        let t = mmu.translate(&pt, 0, 0x4010, Requester::Mmae, &mut |_| 10).unwrap();
        assert_eq!((t.source, t.cycles), (TranslationSource::L2Tlb, 4));
        assert_eq!(
            mmu.translate(&pt, 0, 0x9000, Requester::Mmae, &mut |_| 10),
            Err(TranslationError::PageFault { asid: 0, vaddr: 0x9000 })
        );
    }

    #[test]
    fn l1_tlb_keeps_most_recent_48() {
        let mut pt = PageTables::new(4096, FramePolicy::Identity).unwrap();
        pt.map_region(0, 0, 49 * 4096).unwrap();
        let mut mmu = Mmu::new(TranslationConfig::default()).unwrap();
        for p in 0..49u64 {
            mmu.translate(&pt, 0, p * 4096, Requester::Cpu, &mut |_| 1).unwrap();
        }
        assert_eq!(mmu.l1.vpns_lru_order(0), (1..49).collect::<Vec<_>>());
    }

    #[test]
    fn lane_prewalks_and_drops() {
        let mut lane = MatlbLane::new(8, 4);
        lane.configure(vec![0x10, 0x11, 0x12, 0x13, 0x14, 0x15, 0x16]);
        let mut walk = |v: u64| (if v == 0x15 { None } else { Some(v + 0x100) }, 50);
        lane.prewalk(0, &mut walk);
        assert_eq!(lane.buffered(), 5);
        let e = lane.lookup(0x10).unwrap();
        assert_eq!((e.pfn, e.ready_at), (Some(0x110), 50));
        // the DMA skips 0x11: it is dropped once 0x12 is looked up
        let e = lane.lookup(0x12).unwrap();
        assert_eq!(e.pfn, Some(0x112));
        assert_eq!(lane.stats.dropped, 2);
        lane.prewalk(100, &mut walk);
        assert_eq!(lane.lookup(0x15).unwrap().pfn, None);
        assert_eq!(lane.lookup(0x99), None);
    }

    #[test]
    fn zero_lookahead_disables() {
        let mut lane = MatlbLane::new(8, 0);
        lane.configure(vec![1, 2, 3]);
        lane.prewalk(0, &mut |v| (Some(v), 1));
        assert_eq!(lane.stats.prewalks, 0);
        assert_eq!(lane.lookup(1), None);
    }

    #[test]
    fn page_sequence_dedups_neighbours() {
        let mut out = Vec::new();
        page_sequence([(0, 100), (50, 5000), (4096 * 3, 8), (0, 1)], 12, &mut out);
        assert_eq!(out, vec![0, 1, 3, 0]);
    }
}
