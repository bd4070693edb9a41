//! MPAIS instruction codec, mini-assembler and parameter-block validation.
//!
//! Binary layout of an instruction word (little-endian when serialized):
//!
//! ```text
//!  31      24 23     16 15      8 7       0
//! +----------+---------+---------+---------+
//! | 0xE0+op  |  zero   |   Rd    |   Rn    |
//! +----------+---------+---------+---------+
//! ```
//!
//! Parameter blocks occupy six successive registers `Rn..=Rn+5`:
//!
//! | opcode   | R0     | R1     | R2        | R3            | R4                              | R5                        |
//! |----------|--------|--------|-----------|---------------|---------------------------------|---------------------------|
//! | MA_CFG   | A base | B base | C base    | M<<32 \| N    | K<<32 \| prec<<28 \| acc<<27    | Tr<<48\|Tc<<32\|ttr<<16\|ttc |
//! | MA_MOVE  | dst    | src    | length    | 0             | 0                               | 0                         |
//! | MA_INIT  | dst    | length | 0         | 0             | 0                               | 0                         |
//! | MA_STASH | addr   | length | 0         | 0             | 0                               | 0                         |
//!
//! `ttr = ttc = 0` in an MA_CFG block asks the engine to choose the second-level tile.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NUM_REGS: u8 = 31;
pub const MAX_REG: u8 = 30;
pub const OPCODE_BASE: u32 = 0xE0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Opcode {
    MaMove,
    MaInit,
    MaStash,
    MaCfg,
    MaRead,
    MaState,
    MaClear,
}

impl Opcode {
    pub const ALL: [Opcode; 7] = [
        Opcode::MaMove,
        Opcode::MaInit,
        Opcode::MaStash,
        Opcode::MaCfg,
        Opcode::MaRead,
        Opcode::MaState,
        Opcode::MaClear,
    ];

    pub fn index(self) -> u32 {
        self as u32
    }

    pub fn from_index(i: u32) -> Option<Opcode> {
        Self::ALL.get(i as usize).copied()
    }

    pub fn mnemonic(self) -> &'static str {
        match self {
            Opcode::MaMove => "MA_MOVE",
            Opcode::MaInit => "MA_INIT",
            Opcode::MaStash => "MA_STASH",
            Opcode::MaCfg => "MA_CFG",
            Opcode::MaRead => "MA_READ",
            Opcode::MaState => "MA_STATE",
            Opcode::MaClear => "MA_CLEAR",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<Opcode> {
        Self::ALL
            .iter()
            .copied()
            .find(|o| o.mnemonic().eq_ignore_ascii_case(s))
    }

    /// Whether `Rn` names the first of six parameter registers.
    pub fn uses_param_block(self) -> bool {
        matches!(
            self,
            Opcode::MaMove | Opcode::MaInit | Opcode::MaStash | Opcode::MaCfg
        )
    }

    pub fn writes_rd(self) -> bool {
        self != Opcode::MaClear
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IsaError {
    #[error("invalid register index (rd={rd}, rn={rn}) for {opcode}")]
    InvalidRegister { opcode: Opcode, rd: u8, rn: u8 },
    #[error("unknown opcode byte {0:#04x}")]
    UnknownOpcode(u8),
    #[error("reserved bits set in instruction word {0:#010x}")]
    NonzeroReservedBits(u32),
    #[error("line {line}: {msg}")]
    ParseError { line: usize, msg: String },
    #[error("line {line}: register R{reg} used by {opcode} is never set")]
    UndefinedRegisterUse { line: usize, reg: u8, opcode: Opcode },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Instruction {
    pub opcode: Opcode,
    pub rd: u8,
    pub rn: u8,
}

impl Instruction {
    pub fn new(opcode: Opcode, rd: u8, rn: u8) -> Result<Self, IsaError> {
        let i = Self { opcode, rd, rn };
        i.check()?;
        Ok(i)
    }

    fn check(&self) -> Result<(), IsaError> {
        let bad = self.rd > MAX_REG
            || self.rn > MAX_REG
            || (self.opcode.uses_param_block() && self.rn + 5 > MAX_REG)
            || (self.opcode == Opcode::MaClear && self.rd != 0);
        if bad {
            Err(IsaError::InvalidRegister {
                opcode: self.opcode,
                rd: self.rd,
                rn: self.rn,
            })
        } else {
            Ok(())
        }
    }

    pub fn encode(&self) -> Result<u32, IsaError> {
        self.check()?;
        Ok(((OPCODE_BASE + self.opcode.index()) << 24) | ((self.rd as u32) << 8) | self.rn as u32)
    }

    pub fn decode(word: u32) -> Result<Self, IsaError> {
        let op_byte = (word >> 24) as u8;
        let opcode = (op_byte as u32)
            .checked_sub(OPCODE_BASE)
            .and_then(Opcode::from_index)
            .ok_or(IsaError::UnknownOpcode(op_byte))?;
        if word & 0x00FF_0000 != 0 {
            return Err(IsaError::NonzeroReservedBits(word));
        }
        let i = Instruction {
            opcode,
            rd: ((word >> 8) & 0xFF) as u8,
            rn: (word & 0xFF) as u8,
        };
        i.check()?;
        Ok(i)
    }

    pub fn to_le_bytes(&self) -> Result<[u8; 4], IsaError> {
        self.encode().map(u32::to_le_bytes)
    }

    pub fn from_le_bytes(b: [u8; 4]) -> Result<Self, IsaError> {
        Self::decode(u32::from_le_bytes(b))
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.opcode == Opcode::MaClear {
            write!(f, "{} R{}", self.opcode, self.rn)
        } else {
            write!(f, "{} R{}, R{}", self.opcode, self.rd, self.rn)
        }
    }
}

/// An assembled program: instruction stream plus initial register contents.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Program {
    pub instructions: Vec<Instruction>,
    pub registers: BTreeMap<u8, u64>,
}

impl Program {
    pub fn print(&self) -> String {
        let mut out = String::new();
        for (r, v) in &self.registers {
            out.push_str(&format!(".set R{r}, {v:#x}\n"));
        }
        for i in &self.instructions {
            out.push_str(&format!("{i}\n"));
        }
        out
    }

    pub fn register_file(&self) -> [u64; NUM_REGS as usize] {
        let mut regs = [0u64; NUM_REGS as usize];
        for (&r, &v) in &self.registers {
            regs[r as usize] = v;
        }
        regs
    }
}

fn parse_reg(tok: &str, line: usize) -> Result<u8, IsaError> {
    let t = tok.trim();
    let digits = t
        .strip_prefix('R')
        .or_else(|| t.strip_prefix('r'))
        .or_else(|| t.strip_prefix('X'))
        .or_else(|| t.strip_prefix('x'))
        .ok_or_else(|| IsaError::ParseError {
            line,
            msg: format!("expected register, found `{t}`"),
        })?;
    let r: u8 = digits.parse().map_err(|_| IsaError::ParseError {
        line,
        msg: format!("bad register `{t}`"),
    })?;
    if r > MAX_REG {
        return Err(IsaError::ParseError {
            line,
            msg: format!("register R{r} out of range"),
        });
    }
    Ok(r)
}

fn parse_value(tok: &str, line: usize) -> Result<u64, IsaError> {
    let t: String = tok.trim().chars().filter(|&c| c != '_').collect();
    let parsed = if let Some(h) = t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        u64::from_str_radix(h, 16)
    } else if let Some(b) = t.strip_prefix("0b") {
        u64::from_str_radix(b, 2)
    } else {
        t.parse()
    };
    parsed.map_err(|_| IsaError::ParseError {
        line,
        msg: format!("bad value `{}`", tok.trim()),
    })
}

/// Assembles MPAIS text: one instruction or `.set Rk, value` per line, `#` comments.
///
/// The base register of every parameter block (and the MAID register of the
/// query instructions) must be defined by a `.set` or by an earlier
/// instruction's destination; the remaining block registers default to zero.
pub fn assemble(source: &str) -> Result<Program, IsaError> {
    let mut prog = Program::default();
    let mut defined = [false; NUM_REGS as usize];
    // register reads and writes in program order, resolved once every `.set` is known
    enum RegEvent {
        Read(usize, u8, Opcode),
        Write(u8),
    }
    let mut events: Vec<RegEvent> = Vec::new();

    for (idx, raw) in source.lines().enumerate() {
        let line = idx + 1;
        let text = raw.split('#').next().unwrap_or("").trim();
        if text.is_empty() {
            continue;
        }
        let (head, rest) = match text.find(char::is_whitespace) {
            Some(p) => (&text[..p], text[p..].trim()),
            None => (text, ""),
        };
        // accept `MA_CLEAR, Rn`
        let head = head.trim_end_matches(',');
        if head.eq_ignore_ascii_case(".set") {
            let mut parts = rest.splitn(2, ',');
            let reg = parse_reg(parts.next().unwrap_or(""), line)?;
            let val = parts.next().ok_or_else(|| IsaError::ParseError {
                line,
                msg: ".set needs `Rk, value`".into(),
            })?;
            prog.registers.insert(reg, parse_value(val, line)?);
            defined[reg as usize] = true;
            continue;
        }
        let opcode = Opcode::from_mnemonic(head).ok_or_else(|| IsaError::ParseError {
            line,
            msg: format!("unknown mnemonic `{head}`"),
        })?;
        let operands: Vec<&str> = rest
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .collect();
        let (rd, rn) = match (opcode, operands.as_slice()) {
            (Opcode::MaClear, [rn]) => (0, parse_reg(rn, line)?),
            (Opcode::MaClear, _) => {
                return Err(IsaError::ParseError {
                    line,
                    msg: "MA_CLEAR takes one register".into(),
                })
            }
            (_, [rd, rn]) => (parse_reg(rd, line)?, parse_reg(rn, line)?),
            _ => {
                return Err(IsaError::ParseError {
                    line,
                    msg: format!("{opcode} takes `Rd, Rn`"),
                })
            }
        };
        let instr = Instruction::new(opcode, rd, rn).map_err(|e| IsaError::ParseError {
            line,
            msg: e.to_string(),
        })?;
        events.push(RegEvent::Read(line, rn, opcode));
        prog.instructions.push(instr);
        if opcode.writes_rd() {
            events.push(RegEvent::Write(rd));
        }
    }

    for ev in events {
        match ev {
            RegEvent::Write(reg) => defined[reg as usize] = true,
            RegEvent::Read(line, reg, opcode) if !defined[reg as usize] => {
                return Err(IsaError::UndefinedRegisterUse { line, reg, opcode });
            }
            RegEvent::Read(..) => {}
        }
    }
    Ok(prog)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Fp64,
    #[serde(alias = "fp32x2")]
    Fp32,
    #[serde(alias = "fp16x4")]
    Fp16,
}

impl Precision {
    pub const ALL: [Precision; 3] = [Precision::Fp64, Precision::Fp32, Precision::Fp16];

    pub fn code(self) -> u64 {
        match self {
            Precision::Fp64 => 0,
            Precision::Fp32 => 1,
            Precision::Fp16 => 2,
        }
    }

    pub fn from_code(c: u64) -> Option<Self> {
        match c {
            0 => Some(Precision::Fp64),
            1 => Some(Precision::Fp32),
            2 => Some(Precision::Fp16),
            _ => None,
        }
    }

    pub fn element_size(self) -> usize {
        match self {
            Precision::Fp64 => 8,
            Precision::Fp32 => 4,
            Precision::Fp16 => 2,
        }
    }

    /// SIMD ways per PE.
    pub fn ways(self) -> u32 {
        match self {
            Precision::Fp64 => 1,
            Precision::Fp32 => 2,
            Precision::Fp16 => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Precision::Fp64 => "fp64",
            Precision::Fp32 => "fp32",
            Precision::Fp16 => "fp16",
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Six 64-bit words read from `Rn..=Rn+5`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ParamBlock(pub [u64; 6]);

impl ParamBlock {
    pub fn from_registers(regs: &[u64; NUM_REGS as usize], rn: u8) -> Self {
        let base = rn as usize;
        let mut w = [0u64; 6];
        w.copy_from_slice(&regs[base..base + 6]);
        ParamBlock(w)
    }

    pub fn gemm(t: &GemmTask) -> Self {
        ParamBlock([
            t.a,
            t.b,
            t.c,
            ((t.m as u64) << 32) | t.n as u64,
            ((t.k as u64) << 32) | (t.precision.code() << 28) | ((t.accumulate as u64) << 27),
            ((t.tr as u64) << 48) | ((t.tc as u64) << 32) | ((t.ttr as u64) << 16) | t.ttc as u64,
        ])
    }

    pub fn transfer(d: &TransferDescriptor) -> Self {
        match *d {
            TransferDescriptor::Move { dst, src, len } => ParamBlock([dst, src, len, 0, 0, 0]),
            TransferDescriptor::Init { dst, len } => ParamBlock([dst, len, 0, 0, 0, 0]),
            TransferDescriptor::Stash { addr, len } => ParamBlock([addr, len, 0, 0, 0, 0]),
        }
    }
}

/// A tile-GEMM job: `C (+)= A * B`, row-major with implicit leading dimensions
/// (A: M x K, B: K x N, C: M x N).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GemmTask {
    pub a: u64,
    pub b: u64,
    pub c: u64,
    pub m: u32,
    pub n: u32,
    pub k: u32,
    pub precision: Precision,
    pub accumulate: bool,
    pub tr: u16,
    pub tc: u16,
    pub ttr: u16,
    pub ttc: u16,
}

impl GemmTask {
    pub fn flops(&self) -> u64 {
        2 * self.m as u64 * self.n as u64 * self.k as u64
    }

    pub fn auto_subtile(&self) -> bool {
        self.ttr == 0 && self.ttc == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TransferDescriptor {
    Move { dst: u64, src: u64, len: u64 },
    Init { dst: u64, len: u64 },
    Stash { addr: u64, len: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    Gemm(GemmTask),
    Transfer(TransferDescriptor),
}

/// Why a parameter block was rejected. Surfaces to software only as the
/// `ParamFault` exception type of the task-queue entry.
#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum ParamFault {
    #[error("{0} does not take a parameter block")]
    NotAParamOpcode(Opcode),
    #[error("reserved field in R{0} is nonzero")]
    ReservedNonzero(u8),
    #[error("unknown precision code {0}")]
    BadPrecision(u64),
    #[error("zero matrix dimension")]
    ZeroDimension,
    #[error("zero first-level tile dimension")]
    ZeroTile,
    #[error("second-level tile larger than first-level tile or half-specified")]
    BadSubTile,
    #[error("address {0:#x} is not 8-byte aligned")]
    Unaligned(u64),
    #[error("zero-length transfer")]
    ZeroLength,
    #[error("second-level working set overflows the on-chip buffer")]
    BufferOverflow,
}

fn aligned(addr: u64) -> Result<(), ParamFault> {
    if addr % 8 == 0 {
        Ok(())
    } else {
        Err(ParamFault::Unaligned(addr))
    }
}

pub fn validate_params(opcode: Opcode, block: &ParamBlock) -> Result<Task, ParamFault> {
    let r = &block.0;
    let reserved_zero = |from: usize| -> Result<(), ParamFault> {
        match (from..6).find(|&i| r[i] != 0) {
            Some(i) => Err(ParamFault::ReservedNonzero(i as u8)),
            None => Ok(()),
        }
    };
    match opcode {
        Opcode::MaCfg => {
            if r[4] & 0x07FF_FFFF != 0 {
                return Err(ParamFault::ReservedNonzero(4));
            }
            let prec_code = (r[4] >> 28) & 0xF;
            let precision =
                Precision::from_code(prec_code).ok_or(ParamFault::BadPrecision(prec_code))?;
            let t = GemmTask {
                a: r[0],
                b: r[1],
                c: r[2],
                m: (r[3] >> 32) as u32,
                n: r[3] as u32,
                k: (r[4] >> 32) as u32,
                precision,
                accumulate: (r[4] >> 27) & 1 == 1,
                tr: (r[5] >> 48) as u16,
                tc: (r[5] >> 32) as u16,
                ttr: (r[5] >> 16) as u16,
                ttc: r[5] as u16,
            };
            if t.m == 0 || t.n == 0 || t.k == 0 {
                return Err(ParamFault::ZeroDimension);
            }
            if t.tr == 0 || t.tc == 0 {
                return Err(ParamFault::ZeroTile);
            }
            if !t.auto_subtile() && (t.ttr == 0 || t.ttc == 0 || t.ttr > t.tr || t.ttc > t.tc) {
                return Err(ParamFault::BadSubTile);
            }
            aligned(t.a)?;
            aligned(t.b)?;
            aligned(t.c)?;
            Ok(Task::Gemm(t))
        }
        Opcode::MaMove => {
            reserved_zero(3)?;
            let d = TransferDescriptor::Move {
                dst: r[0],
                src: r[1],
                len: r[2],
            };
            aligned(r[0])?;
            aligned(r[1])?;
            if r[2] == 0 {
                return Err(ParamFault::ZeroLength);
            }
            Ok(Task::Transfer(d))
        }
        Opcode::MaInit | Opcode::MaStash => {
            reserved_zero(2)?;
            aligned(r[0])?;
            if r[1] == 0 {
                return Err(ParamFault::ZeroLength);
            }
            Ok(Task::Transfer(if opcode == Opcode::MaInit {
                TransferDescriptor::Init {
                    dst: r[0],
                    len: r[1],
                }
            } else {
                TransferDescriptor::Stash {
                    addr: r[0],
                    len: r[1],
                }
            }))
        }
        other => Err(ParamFault::NotAParamOpcode(other)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn encode_examples() {
        let cfg = Instruction::new(Opcode::MaCfg, 0, 1).unwrap();
        assert_eq!(cfg.encode().unwrap(), 0xE300_0001);
        let mv = Instruction::new(Opcode::MaMove, 2, 4).unwrap();
        assert_eq!(mv.encode().unwrap(), 0xE000_0204);
        assert!(matches!(
            Instruction::new(Opcode::MaStash, 0, 29),
            Err(IsaError::InvalidRegister { .. })
        ));
        // 25 + 5 = 30 is the last legal block
        assert!(Instruction::new(Opcode::MaCfg, 0, 25).is_ok());
        // query instructions may name any register
        assert!(Instruction::new(Opcode::MaRead, 1, 30).is_ok());
    }

    #[test]
    fn decode_examples() {
        assert_eq!(
            Instruction::decode(0xE300_0001).unwrap(),
            Instruction {
                opcode: Opcode::MaCfg,
                rd: 0,
                rn: 1
            }
        );
        assert_eq!(
            Instruction::decode(0xFF00_0000),
            Err(IsaError::UnknownOpcode(0xFF))
        );
        assert_eq!(
            Instruction::decode(0xE301_0001),
            Err(IsaError::NonzeroReservedBits(0xE301_0001))
        );
        assert_eq!(Instruction::decode(0xE700_0000), Err(IsaError::UnknownOpcode(0xE7)));
    }

    proptest! {
        #[test]
        fn codec_round_trip(op in 0u32..7, rd in 0u8..=30, rn in 0u8..=30) {
            let opcode = Opcode::from_index(op).unwrap();
            let rd = if opcode == Opcode::MaClear { 0 } else { rd };
            match Instruction::new(opcode, rd, rn) {
                Ok(i) => {
                    let w = i.encode().unwrap();
                    prop_assert_eq!(Instruction::decode(w).unwrap(), i);
                    prop_assert_eq!(Instruction::from_le_bytes(i.to_le_bytes().unwrap()).unwrap(), i);
                }
                Err(_) => prop_assert!(opcode.uses_param_block() && rn + 5 > 30),
            }
        }

        #[test]
        fn print_assemble_fixpoint(
            ops in proptest::collection::vec((0u32..7, 0u8..=30, 0u8..=25), 0..12),
            regs in proptest::collection::btree_map(0u8..=30, any::<u64>(), 0..8),
        ) {
            let mut prog = Program { instructions: vec![], registers: regs };
            for (op, rd, rn) in ops {
                let opcode = Opcode::from_index(op).unwrap();
                let rd = if opcode == Opcode::MaClear { 0 } else { rd };
                prog.registers.entry(rn).or_insert(0);
                prog.instructions.push(Instruction::new(opcode, rd, rn).unwrap());
            }
            let again = assemble(&prog.print()).unwrap();
            prop_assert_eq!(&again, &prog);
            prop_assert_eq!(assemble(&again.print()).unwrap(), again);
        }
    }

    #[test]
    fn assemble_examples() {
        let p = assemble(".set R1,0x10000\nMA_STASH R0,R1\n").unwrap();
        assert_eq!(p.instructions.len(), 1);
        assert_eq!(p.registers.get(&1), Some(&0x10000));
        assert_eq!(assemble("").unwrap(), Program::default());
        assert!(matches!(
            assemble("MA_CFG R0"),
            Err(IsaError::ParseError { line: 1, .. })
        ));
        assert!(matches!(
            assemble("# comment\nMA_CFG R0, R1"),
            Err(IsaError::UndefinedRegisterUse { line: 2, reg: 1, .. })
        ));
        // MAID produced by MA_CFG feeds MA_READ
        let p = assemble(".set R1, 0\nMA_CFG R0, R1\nMA_READ R7, R0\nMA_CLEAR, R0").unwrap();
        assert_eq!(p.instructions.len(), 3);
        assert!(assemble("FOO R1, R2").is_err());
        assert!(assemble(".set R31, 1").is_err());
    }

    fn cfg_block(m: u32, a: u64) -> ParamBlock {
        ParamBlock::gemm(&GemmTask {
            a,
            b: 0x20_0000,
            c: 0x40_0000,
            m,
            n: 64,
            k: 64,
            precision: Precision::Fp64,
            accumulate: false,
            tr: 64,
            tc: 64,
            ttr: 16,
            ttc: 16,
        })
    }

    #[test]
    fn validate_examples() {
        let t = validate_params(Opcode::MaCfg, &cfg_block(64, 0x10000)).unwrap();
        match t {
            Task::Gemm(g) => {
                assert_eq!((g.m, g.n, g.k, g.ttr, g.ttc), (64, 64, 64, 16, 16));
                assert_eq!(g.precision, Precision::Fp64);
            }
            _ => panic!("expected gemm"),
        }
        assert_eq!(
            validate_params(Opcode::MaCfg, &cfg_block(0, 0x10000)),
            Err(ParamFault::ZeroDimension)
        );
        assert_eq!(
            validate_params(Opcode::MaCfg, &cfg_block(64, 0x10003)),
            Err(ParamFault::Unaligned(0x10003))
        );
        let mut b = cfg_block(64, 0x10000);
        b.0[4] |= 1;
        assert_eq!(
            validate_params(Opcode::MaCfg, &b),
            Err(ParamFault::ReservedNonzero(4))
        );
        let mut b = cfg_block(64, 0x10000);
        b.0[4] |= 0xF << 28;
        assert_eq!(validate_params(Opcode::MaCfg, &b), Err(ParamFault::BadPrecision(0xF)));
        let stash = ParamBlock([0x1000, 4096, 0, 0, 0, 7]);
        assert_eq!(
            validate_params(Opcode::MaStash, &stash),
            Err(ParamFault::ReservedNonzero(5))
        );
        assert_eq!(
            validate_params(Opcode::MaRead, &ParamBlock::default()),
            Err(ParamFault::NotAParamOpcode(Opcode::MaRead))
        );
    }

    #[test]
    fn gemm_block_round_trip() {
        let t = GemmTask {
            a: 0x1000,
            b: 0x2000,
            c: 0x3000,
            m: 100,
            n: 200,
            k: 300,
            precision: Precision::Fp16,
            accumulate: true,
            tr: 64,
            tc: 128,
            ttr: 0,
            ttc: 0,
        };
        assert_eq!(
            validate_params(Opcode::MaCfg, &ParamBlock::gemm(&t)),
            Ok(Task::Gemm(t))
        );
    }
}
