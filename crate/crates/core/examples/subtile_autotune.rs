//! Lists the second-level tile candidates for one tile and lets the
//! autotuner pick one by simulating each.

use maco::config::ExperimentConfig;
use maco::experiment::{self, GemmData};
use maco::isa::Precision;
use maco::mapping;
use maco::tiling;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let size = 256u64;
    let p = Precision::Fp32;
    let cands = tiling::candidates(size, size, size, p, tiling::DEFAULT_BUFFER_BYTES)?;
    for c in &cands {
        println!("{:>4} x {:<4} kk {:>4}  buffer use {:.2}", c.ttr, c.ttc, c.kk, c.utilization);
    }

    let mut cfg = ExperimentConfig::default();
    cfg.workload.precision = p;
    let plan = mapping::plan_tiles(size, size, size, size, size, 1);
    let data = GemmData::random(p, size as usize, size as usize, size as usize, false, 3);
    let (ttr, ttc) = experiment::autotune_subtile(&cfg, &plan, &data)?;
    println!("autotuned: {ttr} x {ttc}");
    Ok(())
}
