//! Abstract in-order core: executes MPAIS instructions and scripted
//! operations (register writes, polling, lock/unlock, kernel phases, process
//! switches). Execution against the queues and memory lives in `machine`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::isa::{Instruction, Precision, NUM_REGS};
use crate::queues::Asid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CpuConfig {
    /// CPU cycles per MPAIS instruction.
    pub mpais_cycles: u64,
    /// CPU cycles between two MA_READ polls.
    pub poll_cycles: u64,
    /// Fraction of peak reached by kernel phases.
    pub efficiency: f64,
    pub switch_cycles: u64,
    /// CPU cycles per lock/unlock configuration.
    pub lock_cycles: u64,
}

impl Default for CpuConfig {
    fn default() -> Self {
        Self {
            mpais_cycles: 10,
            poll_cycles: 100,
            efficiency: 0.5,
            switch_cycles: 200,
            lock_cycles: 50,
        }
    }
}

/// A non-GEMM phase run on the core (softmax, normalization...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelPhase {
    pub flops: u64,
    pub precision: Precision,
    #[serde(default)]
    pub label: String,
}

/// Peak FLOP per CPU cycle: 8 FMACs, twice as many lanes below FP64.
pub fn cpu_flops_per_cycle(p: Precision) -> u64 {
    match p {
        Precision::Fp64 => 16,
        Precision::Fp32 | Precision::Fp16 => 32,
    }
}

/// Compute cycles of a kernel phase at the given efficiency.
pub fn kernel_cycles(flops: u64, p: Precision, efficiency: f64) -> u64 {
    if flops == 0 {
        return 0;
    }
    (flops as f64 / (efficiency * cpu_flops_per_cycle(p) as f64)).ceil() as u64
}

#[derive(Debug, Clone, PartialEq)]
pub enum CpuOp {
    Mpais(Instruction),
    SetReg { reg: u8, value: u64 },
    /// Polls MA_READ on the MAID in `maid_reg` until Done, then issues
    /// MA_STATE (release) writing the final status word to `rd`.
    WaitDone { maid_reg: u8, rd: u8 },
    Lock { vaddr: u64, len: u64 },
    Unlock { vaddr: u64, len: u64 },
    /// Kernel phase that also streams `reads` through the cache hierarchy.
    Kernel { phase: KernelPhase, reads: Option<(u64, u64)> },
    SwitchProcess(Asid),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct CpuStats {
    pub instructions: u64,
    pub polls: u64,
    pub busy_cycles: u64,
    pub kernel_cycles: u64,
    pub alloc_failures: u64,
    pub switches: u64,
    /// L3 misses taken by kernel phases.
    pub post_l3_misses: u64,
    pub post_l3_hits: u64,
}

pub struct Core {
    pub id: usize,
    pub regs: [u64; NUM_REGS as usize],
    pub asid: Asid,
    pub pc: usize,
    pub program: Vec<CpuOp>,
    saved: HashMap<Asid, [u64; NUM_REGS as usize]>,
    /// Waiting for the MTQ entry in this register to complete.
    pub parked: Option<u8>,
    pub stats: CpuStats,
}

impl Core {
    pub fn new(id: usize, asid: Asid, program: Vec<CpuOp>) -> Self {
        Self {
            id,
            regs: [0; NUM_REGS as usize],
            asid,
            pc: 0,
            program,
            saved: HashMap::new(),
            parked: None,
            stats: CpuStats::default(),
        }
    }

    pub fn finished(&self) -> bool {
        self.pc >= self.program.len()
    }

    pub fn current(&self) -> Option<&CpuOp> {
        self.program.get(self.pc)
    }

    /// Saves this process's registers and installs the next one's.
    pub fn switch_process(&mut self, asid: Asid) {
        self.saved.insert(self.asid, self.regs);
        self.regs = self.saved.remove(&asid).unwrap_or([0; NUM_REGS as usize]);
        self.asid = asid;
        self.stats.switches += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_cycle_examples() {
        assert_eq!(kernel_cycles(70_400, Precision::Fp64, 1.0), 4_400);
        assert_eq!(kernel_cycles(70_400, Precision::Fp64, 0.5), 8_800);
        assert_eq!(kernel_cycles(0, Precision::Fp32, 0.5), 0);
    }

    #[test]
    fn switch_swaps_register_files() {
        let mut c = Core::new(0, 1, Vec::new());
        c.regs[3] = 42;
        c.switch_process(2);
        assert_eq!(c.regs[3], 0);
        c.regs[3] = 7;
        c.switch_process(1);
        assert_eq!(c.regs[3], 42);
        c.switch_process(2);
        assert_eq!(c.regs[3], 7);
    }
}
