//! Experiment configuration (TOML) and `key=value` overrides.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::isa::Precision;
use crate::machine::MachineConfig;
use crate::mapping::{Assignment, DlLayer};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("bad override `{0}`: expected key=value")]
    Override(String),
    #[error("override `{key}`: {msg}")]
    OverridePath { key: String, msg: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WorkloadKind {
    /// One `m x n x k` GEMM split into `tr x tc` tiles over the nodes.
    #[default]
    Gemm,
    /// Every node gets its own `size^3` tile; the tiles form a near-square
    /// grid sharing A row bands and B column panels.
    PerNode,
    /// Every node runs its own `size^3` GEMM on private operands.
    Independent,
    /// GEMM lowered from a DL layer.
    DlLayer,
    /// An MPAIS assembly file run on node 0.
    Program,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadConfig {
    pub kind: WorkloadKind,
    pub m: u64,
    pub n: u64,
    pub k: u64,
    pub size: u64,
    pub tr: u64,
    pub tc: u64,
    pub precision: Precision,
    /// Second-level tile; `0, 0` leaves the choice to the engine.
    pub ttr: u16,
    pub ttc: u16,
    pub accumulate: bool,
    /// Pick `<ttr, ttc>` by simulating one tile per candidate.
    pub autotune: bool,
    pub stash: bool,
    pub lock: bool,
    /// FLOPs of the CPU post phase run on each result tile (0: none).
    pub post_flops: u64,
    pub assignment: Assignment,
    pub layer: Option<DlLayer>,
    pub program: Option<PathBuf>,
    /// Regions mapped and filled with seeded data before a program runs.
    pub regions: Vec<(u64, u64)>,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        Self {
            kind: WorkloadKind::Gemm,
            m: 256,
            n: 256,
            k: 256,
            size: 1024,
            tr: 1024,
            tc: 1024,
            precision: Precision::Fp64,
            ttr: 0,
            ttc: 0,
            accumulate: false,
            autotune: false,
            stash: false,
            lock: false,
            post_flops: 0,
            assignment: Assignment::RoundRobin,
            layer: None,
            program: None,
            regions: Vec::new(),
        }
    }
}

/// Deliberate faults for exercising the checkers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Fault {
    /// Unmap the page holding `vaddr` once the operands are loaded.
    UnmapPage { vaddr: u64 },
    /// Lose the first completion report sent to `node`'s task queue.
    LoseReport { node: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub functional_check: bool,
    /// Also compare against the double-double oracle at the precision's tolerance.
    pub precision_check: bool,
    pub fault: Option<Fault>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            functional_check: true,
            precision_check: false,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub machine: MachineConfig,
    pub workload: WorkloadConfig,
    pub run: RunConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Self::from_toml_with(text, &[])
    }

    /// Parses `text` after applying `key=value` overrides to the document.
    pub fn from_toml_with(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: Self = doc.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_with(&text, overrides)
    }

    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self, ConfigError> {
        Self::from_toml_with(&self.to_toml(), overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        self.machine.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let w = &self.workload;
        let bad = |m: &str| Err(ConfigError::Invalid(m.into()));
        match w.kind {
            WorkloadKind::Gemm => {
                if w.m == 0 || w.n == 0 || w.k == 0 || w.tr == 0 || w.tc == 0 {
                    return bad("workload dims and tiles must be positive");
                }
                if w.tr > u16::MAX as u64 || w.tc > u16::MAX as u64 {
                    return bad("first-level tiles must fit 16 bits");
                }
            }
            WorkloadKind::PerNode | WorkloadKind::Independent => {
                if w.size == 0 || w.size > u16::MAX as u64 {
                    return bad("workload.size must be in 1..=65535");
                }
            }
            WorkloadKind::DlLayer => {
                if w.layer.is_none() {
                    return bad("dl-layer workload needs workload.layer");
                }
            }
            WorkloadKind::Program => {
                if w.program.is_none() {
                    return bad("program workload needs workload.program");
                }
            }
        }
        if w.lock && w.post_flops == 0 {
            return bad("workload.lock needs a post phase (post_flops > 0)");
        }
        if let Some(Fault::LoseReport { node }) = self.run.fault {
            if node >= self.machine.nodes {
                return bad("run.fault.node is not an active node");
            }
        }
        if (w.ttr == 0) != (w.ttc == 0) {
            return bad("set both ttr and ttc, or neither");
        }
        Ok(())
    }
}

fn parse_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Sets a dotted key in a TOML document, creating tables on the way.
pub fn apply_override(doc: &mut toml::Table, o: &str) -> Result<(), ConfigError> {
    let (key, raw) = o.split_once('=').ok_or_else(|| ConfigError::Override(o.to_string()))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(ConfigError::Override(o.to_string()));
    }
    let parts: Vec<&str> = key.split('.').collect();
    let mut t = doc;
    for p in &parts[..parts.len() - 1] {
        let entry = t
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        t = entry.as_table_mut().ok_or_else(|| ConfigError::OverridePath {
            key: key.to_string(),
            msg: format!("`{p}` is not a table"),
        })?;
    }
    t.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn overrides_apply_with_types() {
        let c = ExperimentConfig::from_toml_with(
            "",
            &[
                "machine.nodes=4".into(),
                "workload.precision=fp32".into(),
                "machine.translation.matlb=false".into(),
                "run.seed=9".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.machine.nodes, 4);
        assert_eq!(c.workload.precision, Precision::Fp32);
        assert!(!c.machine.translation.matlb);
        assert_eq!(c.run.seed, 9);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(matches!(
            ExperimentConfig::from_toml_with("", &["machine.nodes=17".into()]),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(
            ExperimentConfig::from_toml("[machine]\nbogus = 1\n"),
            Err(ConfigError::Parse(_))
        ));
        assert!(matches!(
            ExperimentConfig::from_toml_with("", &["nonsense".into()]),
            Err(ConfigError::Override(_))
        ));
    }
}
