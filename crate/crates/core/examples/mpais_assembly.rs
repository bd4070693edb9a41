//! Assembles MPAIS text, round-trips the machine words, and decodes the
//! MA_CFG parameter block the CPU would hand to the task queue.

use maco::isa::{assemble, validate_params, GemmTask, Instruction, Opcode, ParamBlock, Precision, Task};

const SOURCE: &str = "
.set R0, 0x100000      # A
.set R1, 0x200000      # B
.set R2, 0x300000      # C
.set R3, 0x0000008000000060
.set R4, 0x0000004010000000
.set R5, 0x0080006000000000
MA_CFG  R20, R0
MA_READ R21, R20
MA_STATE R22, R20
MA_CLEAR R20
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let prog = assemble(SOURCE)?;
    for i in &prog.instructions {
        let w = i.encode()?;
        assert_eq!(Instruction::decode(w)?, *i);
        println!("{w:#010x}  {i}");
    }

    let block = ParamBlock::from_registers(&prog.register_file(), 0);
    match validate_params(Opcode::MaCfg, &block)? {
        Task::Gemm(g) => println!(
            "GEMM {}x{}x{} {} tiles {}x{} sub-tiles {}",
            g.m,
            g.n,
            g.k,
            g.precision,
            g.tr,
            g.tc,
            if g.auto_subtile() { "chosen by the engine".to_string() } else { format!("{}x{}", g.ttr, g.ttc) }
        ),
        t => println!("unexpected task {t:?}"),
    }

    // building the block from a task gives the same words
    let t = GemmTask {
        a: 0x100000,
        b: 0x200000,
        c: 0x300000,
        m: 128,
        n: 96,
        k: 64,
        precision: Precision::Fp32,
        accumulate: false,
        tr: 128,
        tc: 96,
        ttr: 0,
        ttc: 0,
    };
    assert_eq!(ParamBlock::gemm(&t), block);

    // a bad block surfaces as a parameter fault
    let mut bad = block;
    bad.0[3] = 0;
    println!("zeroed dims: {}", validate_params(Opcode::MaCfg, &bad).unwrap_err());
    Ok(())
}
