//! One node, 4 KB pages: efficiency with and without the page-head
//! predictor, and the DMA cycles lost to translation.

use maco::experiment;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let base = experiment::find_canned("fig6_matlb").expect("canned").base;
    for size in [256, 512] {
        for on in [true, false] {
            let cfg = base.with_overrides(&[
                format!("workload.size={size}"),
                format!("machine.translation.matlb={on}"),
                "run.functional_check=false".into(),
            ])?;
            let g = experiment::run(&cfg)?.stats.global;
            println!(
                "size {size:>4} mATLB {:<3}  eff {:.4}  translation stall {:>7}  walks {:>5}",
                if on { "on" } else { "off" },
                g.efficiency(),
                g.dma_stall_translation,
                g.ptw_count
            );
        }
    }
    Ok(())
}
