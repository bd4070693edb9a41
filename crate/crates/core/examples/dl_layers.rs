//! Lowers the layers in configs/dl/ to GEMMs and runs each one.

use std::path::Path;

use maco::config::ExperimentConfig;
use maco::experiment;
use maco::mapping::layer_dims;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/dl");
    let mut files: Vec<_> = std::fs::read_dir(&dir)?.filter_map(|e| e.ok()).map(|e| e.path()).collect();
    files.sort();
    for f in files {
        // small node count so the example stays quick
        let cfg = ExperimentConfig::load(&f, &["machine.nodes=4".into()])?;
        let layer = cfg.workload.layer.expect("dl-layer config");
        let (m, n, k) = layer_dims(&layer);
        let o = experiment::run(&cfg)?;
        println!(
            "{:<24} GEMM {m}x{n}x{k}  eff {:.3}  {:.1} GFLOPS",
            f.file_stem().unwrap().to_string_lossy(),
            o.stats.global.efficiency(),
            o.stats.gflops(&o.stats.global)
        );
    }
    Ok(())
}
