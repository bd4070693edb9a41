//! Sweeps node count for a fixed GEMM and writes one CSV per point plus a
//! manifest into a temporary directory.

use maco::config::ExperimentConfig;
use maco::experiment::{self, Axis};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let base = ExperimentConfig::from_toml_with(
        "",
        &["workload.m=512".into(), "workload.n=512".into(), "workload.k=256".into(), "workload.tr=128".into(), "workload.tc=128".into(), "workload.precision=fp32".into()],
    )?;
    let out = std::env::temp_dir().join("maco-sweep-example");
    let entries = experiment::sweep(&base, &[Axis::new("machine.nodes", &["1", "2", "4", "8", "16"])], &out)?;
    for e in &entries {
        match &e.result {
            Ok(o) => println!("{:<16} eff {:.3}  {:>7.1} GFLOPS", e.overrides.join(" "), o.stats.global.efficiency(), o.stats.gflops(&o.stats.global)),
            Err(err) => println!("{:<16} failed: {err}", e.overrides.join(" ")),
        }
    }
    println!("manifest: {}", out.join("manifest.csv").display());
    Ok(())
}
