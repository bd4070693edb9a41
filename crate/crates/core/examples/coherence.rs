//! Drives the shared memory hierarchy directly: CPU writes then DMA reads
//! see the same data, stashed lines hit in L3, and locked lines survive
//! eviction pressure.

use maco::memory::{AccessKind, MemoryConfig, MemorySystem, Periods};
use maco::noc::NocConfig;

fn main() {
    let cfg = MemoryConfig {
        l3_slice_bytes: 64 * 64,
        l3_ways: 4,
        ..MemoryConfig::default()
    };
    let mut m = MemorySystem::new(cfg, NocConfig::default(), Periods { mmae: 44, noc: 55 });
    m.enable_shadow();
    m.enable_eviction_log();

    // CPU on node 5 writes; an engine on node 9 reads the granule
    let base = 0x4_0000;
    let mut v = 0xfeed_f00d_u64.to_le_bytes();
    m.cpu_access(5, base + 8, AccessKind::Write, &mut v, 0);
    let lines: Vec<u64> = (0..8).map(|i| base + i * 64).collect();
    let mut out = Vec::new();
    let done = m.dma_read(9, &lines, 100, &mut out);
    println!(
        "DMA read after CPU write: {:#x}, ready at {done}",
        u64::from_le_bytes(out[8..16].try_into().unwrap())
    );

    // stash a granule, then read it: every line hits in L3
    let g = 0x8_0000;
    let glines: Vec<u64> = (0..8).map(|i| g + i * 64).collect();
    m.stash(2, &glines, 1000);
    let before = m.stats[2].l3_hits;
    m.dma_read(2, &glines, 1000, &mut out);
    println!("stashed granule: {} of 8 lines hit", m.stats[2].l3_hits - before);

    // lock a line, then stream enough traffic through its slice to evict it
    let home = m.home_of(base);
    m.lock_range(home, base, 64).unwrap();
    for i in 1..200u64 {
        let a = base + i * 512 * 16;
        if m.home_of(a) == home {
            let mut b = [0u8; 8];
            m.cpu_access(home, a, AccessKind::Read, &mut b, 2000 + i);
        }
    }
    let log = m.eviction_log.as_ref().unwrap();
    println!(
        "{} evictions from slice {home}; locked line evicted: {}; still cached: {}",
        log.iter().filter(|e| e.slice == home).count(),
        log.iter().any(|e| e.line == base),
        m.l3_contains(base)
    );
    println!("audit violations: {}", m.audit().len());
}
