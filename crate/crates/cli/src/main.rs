use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use maco::config::{ConfigError, ExperimentConfig};
use maco::experiment::{self, Axis, ExperimentError};

#[derive(Parser)]
#[command(name = "maco", version, about = "Multi-core GEMM architecture simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one experiment and write its stats CSV.
    Run {
        #[command(flatten)]
        src: Source,
        /// Stats CSV path.
        #[arg(long, default_value = "maco-stats.csv")]
        out: PathBuf,
    },
    /// Run the cartesian product of the axes, one CSV per point plus manifest.csv.
    Sweep {
        #[command(flatten)]
        src: Source,
        /// Axis `key=v1,v2,...`; repeatable. Canned experiments bring their own.
        #[arg(long = "axis")]
        axes: Vec<String>,
        /// Output directory.
        #[arg(long, default_value = "maco-sweep")]
        out: PathBuf,
    },
    /// List the canned experiments.
    ListExperiments,
    /// Check a configuration and print it with overrides and defaults applied.
    ValidateConfig {
        #[command(flatten)]
        src: Source,
    },
}

#[derive(Args)]
struct Source {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from a canned experiment's base configuration.
    #[arg(long, conflicts_with = "config")]
    experiment: Option<String>,
    /// Data seed (same as `--set run.seed=N`).
    #[arg(long)]
    seed: Option<u64>,
    /// Override `key=value` (TOML value syntax); repeatable.
    #[arg(long = "set")]
    set: Vec<String>,
}

impl Source {
    fn load(&self) -> Result<(ExperimentConfig, Vec<Axis>), ConfigError> {
        let mut overrides = self.set.clone();
        if let Some(s) = self.seed {
            overrides.push(format!("run.seed={s}"));
        }
        if let Some(name) = &self.experiment {
            let c = experiment::find_canned(name).ok_or_else(|| ConfigError::Invalid(format!("unknown experiment `{name}`")))?;
            return Ok((c.base.with_overrides(&overrides)?, c.axes));
        }
        let cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p, &overrides)?,
            None => ExperimentConfig::from_toml_with("", &overrides)?,
        };
        Ok((cfg, Vec::new()))
    }
}

fn report(o: &experiment::Outcome, out: &Path) {
    let g = &o.stats.global;
    println!("nodes            {}", o.stats.nodes.len());
    println!("span_cycles      {}", g.span_cycles);
    println!("efficiency       {:.4}", g.efficiency());
    println!("node efficiency  {:.4} (mean)", o.stats.mean_node_efficiency());
    println!("gflops           {:.2}", o.stats.gflops(g));
    println!("tasks            {} ok, {} failed", g.tasks_ok, g.tasks_failed);
    if o.subtile != (0, 0) {
        println!("sub-tile         {}x{}", o.subtile.0, o.subtile.1);
    }
    if o.checked > 0 {
        println!("checked          {} elements bit-exact", o.checked);
    }
    if let Some(e) = o.max_relative_error {
        println!("max rel. error   {e:e}");
    }
    println!("stats            {}", out.display());
}

fn fail(e: &ExperimentError, trace_path: Option<&Path>) -> ExitCode {
    eprintln!("error: {e}");
    if let Some(trace) = e.trace() {
        eprintln!("last {} events:", trace.len());
        for line in trace {
            eprintln!("  {line}");
        }
        if let Some(p) = trace_path {
            if std::fs::write(p, trace.join("\n") + "\n").is_ok() {
                eprintln!("trace written to {}", p.display());
            }
        }
    }
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::ListExperiments => {
            for c in experiment::canned() {
                let points = experiment::sweep_points(&c.axes).len();
                println!("{:<18} {:>2} run(s)  {}", c.name, points, c.description);
            }
            ExitCode::SUCCESS
        }
        Cmd::ValidateConfig { src } => match src.load() {
            Ok((cfg, _)) => {
                print!("{}", cfg.to_toml());
                ExitCode::SUCCESS
            }
            Err(e) => fail(&e.into(), None),
        },
        Cmd::Run { src, out } => {
            let cfg = match src.load() {
                Ok((c, _)) => c,
                Err(e) => return fail(&e.into(), None),
            };
            let trace = out.with_extension("trace.txt");
            match experiment::run(&cfg).and_then(|o| o.write_csv(&out).map(|_| o).map_err(Into::into)) {
                Ok(o) => {
                    report(&o, &out);
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e, Some(&trace)),
            }
        }
        Cmd::Sweep { src, axes, out } => {
            let (cfg, mut all) = match src.load() {
                Ok(x) => x,
                Err(e) => return fail(&e.into(), None),
            };
            for a in &axes {
                match Axis::parse(a) {
                    Ok(a) => all.push(a),
                    Err(e) => return fail(&e.into(), None),
                }
            }
            let entries = match experiment::sweep(&cfg, &all, &out) {
                Ok(e) => e,
                Err(e) => return fail(&e.into(), None),
            };
            let mut failed = 0;
            for e in &entries {
                match &e.result {
                    Ok(o) => println!(
                        "run-{:03} ok      eff {:.4}  {:>8.2} GFLOPS  {}",
                        e.index,
                        o.stats.global.efficiency(),
                        o.stats.gflops(&o.stats.global),
                        e.overrides.join(" ")
                    ),
                    Err(err) => {
                        failed += 1;
                        println!("run-{:03} failed  exit {}  {}  {err}", e.index, err.exit_code(), e.overrides.join(" "));
                    }
                }
            }
            println!("manifest         {}", out.join("manifest.csv").display());
            if failed > 0 {
                ExitCode::FAILURE
            } else {
                ExitCode::SUCCESS
            }
        }
    }
}
