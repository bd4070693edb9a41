//! A GEMM whose result tiles each feed a CPU phase. The phase for tile t
//! runs while the engine computes tile t+1, so the engine stays busy until
//! the CPU phase outgrows a tile's GEMM time.

use maco::config::ExperimentConfig;
use maco::experiment;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let base = ExperimentConfig::load(
        &std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/post-lock.toml"),
        &[],
    )?;
    for post in [0u64, 1 << 16, 1 << 22, 1 << 24] {
        let cfg = base.with_overrides(&[format!("workload.post_flops={post}"), format!("workload.lock={}", post > 0)])?;
        let o = experiment::run(&cfg)?;
        let g = &o.stats.global;
        println!(
            "post {:>9} FLOPs/tile  engine eff {:.3}  CPU busy {:>9} cycles  post-phase L3 hits {:>5} misses {:>5}  end {:.1} us",
            post,
            g.efficiency(),
            g.cpu_busy_cycles,
            g.post_l3_hits,
            g.post_l3_misses,
            o.stats.wall_ps as f64 / 1e6
        );
    }
    Ok(())
}
