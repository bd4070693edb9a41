//! Runs a GEMM, writes the maco-stats-v1 CSV and reads it back.

use maco::config::ExperimentConfig;
use maco::experiment;
use maco::stats;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ExperimentConfig::from_toml_with("", &["machine.nodes=2".into(), "workload.precision=fp16".into(), "workload.m=512".into(), "workload.n=512".into(), "workload.tr=256".into(), "workload.tc=256".into()])?;
    let o = experiment::run(&cfg)?;
    let mut buf = Vec::new();
    o.stats.write_csv(&mut buf, &cfg.to_toml())?;
    let text = String::from_utf8(buf)?;
    print!("{}", text.lines().take(5).collect::<Vec<_>>().join("\n"));
    println!("\n...");

    let file = stats::parse_csv(&text)?;
    let eff = file.header.iter().position(|c| c == "efficiency").unwrap();
    for row in &file.rows {
        println!("{:<6} {:>2} efficiency {}", row[0], row[1], row[eff]);
    }
    let back = ExperimentConfig::from_toml(&file.config)?;
    println!("config echo reproduces the run: {}", back == cfg);
    Ok(())
}
