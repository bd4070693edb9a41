//! Runs a small non-divisible GEMM across four nodes and checks the result
//! against the same-order reference and the high-precision error bound.

use maco::config::ExperimentConfig;
use maco::experiment::{self, GemmData};
use maco::isa::Precision;
use maco::mapping::{self, MatrixLayout};
use maco::oracle;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (m, n, k) = (150u64, 97u64, 70u64);
    let p = Precision::Fp32;
    let mut cfg = ExperimentConfig::default();
    cfg.machine.nodes = 4;
    cfg.workload.precision = p;
    cfg.workload.accumulate = true;

    let plan = mapping::plan_tiles(m, n, k, 64, 48, cfg.machine.nodes);
    println!("{} C tiles of up to 64x48 over {} nodes", plan.tiles.len(), cfg.machine.nodes);
    let data = GemmData::random(p, m as usize, n as usize, k as usize, true, 42);
    let mut mach = experiment::build_machine(&cfg, &plan, &data, (0, 0))?;
    let summary = mach.run()?;

    let es = p.element_size();
    let blocked = mach.read(experiment::ASID, MatrixLayout::default().c_base, m * n * es as u64)?;
    let got = mapping::unpack_c(&plan, &blocked, es);
    let want = oracle::same_order(p, &data.a, &data.b, &data.c0, m as usize, n as usize, k as usize, true);
    let err = oracle::max_relative_error(p, &data.a, &data.b, &data.c0, &got, m as usize, n as usize, k as usize, true);
    println!("{} events, bit-exact: {}", summary.events, got == want);
    println!("normwise error {err:.2e} (tolerance {:.0e})", oracle::tolerance(p));
    Ok(())
}
