//! First-level tiling, tile-to-node assignment, GEMM+ schedules and DL-layer
//! lowering.
//!
//! Multi-node runs use a blocked layout so every tile task sees dense
//! operands: A stays row-major (a row band is contiguous), B is stored as
//! `K x w` column panels one after another, and each C tile is stored
//! contiguously, bands in order and tiles left to right within a band.

use serde::{Deserialize, Serialize};

use crate::cpu::{CpuOp, KernelPhase};
use crate::isa::{GemmTask, Instruction, Opcode, ParamBlock, Precision, TransferDescriptor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Assignment {
    #[default]
    RoundRobin,
    /// Consecutive runs of `block` tiles go to the same node.
    BlockCyclic { block: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CTile {
    pub index: usize,
    pub i0: u64,
    pub j0: u64,
    pub h: u64,
    pub w: u64,
    pub node: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TilePlan {
    pub m: u64,
    pub n: u64,
    pub k: u64,
    pub tr: u64,
    pub tc: u64,
    pub nodes: usize,
    pub tiles: Vec<CTile>,
}

impl TilePlan {
    pub fn node_tiles(&self, node: usize) -> impl Iterator<Item = &CTile> {
        self.tiles.iter().filter(move |t| t.node == node)
    }
}

pub fn plan_tiles(m: u64, n: u64, k: u64, tr: u64, tc: u64, nodes: usize) -> TilePlan {
    plan_tiles_with(m, n, k, tr, tc, nodes, Assignment::RoundRobin)
}

/// Row-major enumeration of `tr x tc` C tiles (edge tiles keep their true
/// extent), dealt to nodes.
pub fn plan_tiles_with(m: u64, n: u64, k: u64, tr: u64, tc: u64, nodes: usize, a: Assignment) -> TilePlan {
    assert!(m > 0 && n > 0 && k > 0 && tr > 0 && tc > 0 && nodes > 0);
    let block = match a {
        Assignment::RoundRobin => 1,
        Assignment::BlockCyclic { block } => block.max(1),
    };
    let mut tiles = Vec::new();
    for i0 in (0..m).step_by(tr as usize) {
        for j0 in (0..n).step_by(tc as usize) {
            let index = tiles.len();
            tiles.push(CTile {
                index,
                i0,
                j0,
                h: tr.min(m - i0),
                w: tc.min(n - j0),
                node: (index / block) % nodes,
            });
        }
    }
    TilePlan {
        m,
        n,
        k,
        tr,
        tc,
        nodes,
        tiles,
    }
}

/// Virtual placement of the three operands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixLayout {
    pub a_base: u64,
    pub b_base: u64,
    pub c_base: u64,
}

impl Default for MatrixLayout {
    fn default() -> Self {
        Self {
            a_base: 0x10_0000_0000,
            b_base: 0x20_0000_0000,
            c_base: 0x30_0000_0000,
        }
    }
}

impl MatrixLayout {
    pub fn a_range(&self, plan: &TilePlan, t: &CTile, es: u64) -> (u64, u64) {
        (self.a_base + t.i0 * plan.k * es, t.h * plan.k * es)
    }

    pub fn b_range(&self, plan: &TilePlan, t: &CTile, es: u64) -> (u64, u64) {
        (self.b_base + t.j0 * plan.k * es, plan.k * t.w * es)
    }

    pub fn c_range(&self, plan: &TilePlan, t: &CTile, es: u64) -> (u64, u64) {
        (self.c_base + (t.i0 * plan.n + t.h * t.j0) * es, t.h * t.w * es)
    }

    pub fn tile_task(&self, plan: &TilePlan, t: &CTile, precision: Precision, accumulate: bool, sub: (u16, u16)) -> GemmTask {
        let es = precision.element_size() as u64;
        GemmTask {
            a: self.a_range(plan, t, es).0,
            b: self.b_range(plan, t, es).0,
            c: self.c_range(plan, t, es).0,
            m: t.h as u32,
            n: t.w as u32,
            k: plan.k as u32,
            precision,
            accumulate,
            tr: t.h as u16,
            tc: t.w as u16,
            ttr: sub.0.min(t.h as u16),
            ttc: sub.1.min(t.w as u16),
        }
    }
}

/// Row-major `K x N` B (element bytes) to column panels.
pub fn pack_b(plan: &TilePlan, b: &[u8], es: usize) -> Vec<u8> {
    let (k, n) = (plan.k as usize, plan.n as usize);
    let mut out = Vec::with_capacity(b.len());
    for j0 in (0..n).step_by(plan.tc as usize) {
        let w = (plan.tc as usize).min(n - j0);
        for kx in 0..k {
            out.extend_from_slice(&b[(kx * n + j0) * es..(kx * n + j0 + w) * es]);
        }
    }
    out
}

/// Row-major `M x N` C to blocked tiles.
pub fn pack_c(plan: &TilePlan, c: &[u8], es: usize) -> Vec<u8> {
    let n = plan.n as usize;
    let mut out = Vec::with_capacity(c.len());
    for t in &plan.tiles {
        for i in 0..t.h as usize {
            let r = (t.i0 as usize + i) * n + t.j0 as usize;
            out.extend_from_slice(&c[r * es..(r + t.w as usize) * es]);
        }
    }
    out
}

/// Blocked C back to row-major.
pub fn unpack_c(plan: &TilePlan, blocked: &[u8], es: usize) -> Vec<u8> {
    let n = plan.n as usize;
    let mut out = vec![0u8; blocked.len()];
    let mut p = 0;
    for t in &plan.tiles {
        for i in 0..t.h as usize {
            let r = (t.i0 as usize + i) * n + t.j0 as usize;
            let len = t.w as usize * es;
            out[r * es..r * es + len].copy_from_slice(&blocked[p..p + len]);
            p += len;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleOptions {
    pub precision: Precision,
    pub accumulate: bool,
    /// Explicit `<ttr, ttc>`; `(0, 0)` lets the engine choose.
    pub subtile: (u16, u16),
    /// Stash the A, B (and C when accumulating) ranges before each GEMM.
    pub stash: bool,
    /// Lock result tiles in L3 for the post phase. Needs `post`.
    pub lock: bool,
    pub post: Option<KernelPhase>,
}

impl Default for ScheduleOptions {
    fn default() -> Self {
        Self {
            precision: Precision::Fp64,
            accumulate: false,
            subtile: (0, 0),
            stash: false,
            lock: false,
            post: None,
        }
    }
}

const PARAM: u8 = 0;
const GEMM_MAID: [u8; 2] = [10, 11];
const STASH_MAID: [u8; 3] = [12, 13, 14];
const STATUS: u8 = 20;

fn set_block(ops: &mut Vec<CpuOp>, block: ParamBlock) {
    for (i, v) in block.0.iter().enumerate() {
        ops.push(CpuOp::SetReg {
            reg: PARAM + i as u8,
            value: *v,
        });
    }
}

fn instr(op: Opcode, rd: u8, rn: u8) -> CpuOp {
    CpuOp::Mpais(Instruction::new(op, rd, rn).expect("valid registers"))
}

/// Per-node programs: stash, lock, MA_CFG, then (one tile behind) wait,
/// post phase over the locked result and unlock, so the post phase of
/// tile t overlaps the GEMM of tile t+1.
pub fn build_schedule(plan: &TilePlan, layout: &MatrixLayout, opts: &ScheduleOptions) -> Vec<Vec<CpuOp>> {
    let es = opts.precision.element_size() as u64;
    let lock = opts.lock && opts.post.is_some();
    let finish = |ops: &mut Vec<CpuOp>, t: &CTile, slot: usize| {
        ops.push(CpuOp::WaitDone {
            maid_reg: GEMM_MAID[slot],
            rd: STATUS,
        });
        let c = layout.c_range(plan, t, es);
        if let Some(p) = &opts.post {
            ops.push(CpuOp::Kernel {
                phase: p.clone(),
                reads: Some(c),
            });
        }
        if lock {
            ops.push(CpuOp::Unlock { vaddr: c.0, len: c.1 });
        }
    };
    (0..plan.nodes)
        .map(|node| {
            let mut ops = Vec::new();
            let tiles: Vec<&CTile> = plan.node_tiles(node).collect();
            for (idx, t) in tiles.iter().enumerate() {
                let mut stashes = 0;
                if opts.stash {
                    let mut ranges = vec![layout.a_range(plan, t, es), layout.b_range(plan, t, es)];
                    if opts.accumulate {
                        ranges.push(layout.c_range(plan, t, es));
                    }
                    for (r, (addr, len)) in ranges.into_iter().enumerate() {
                        set_block(&mut ops, ParamBlock::transfer(&TransferDescriptor::Stash { addr, len }));
                        ops.push(instr(Opcode::MaStash, STASH_MAID[r], PARAM));
                        stashes += 1;
                    }
                }
                if lock {
                    let c = layout.c_range(plan, t, es);
                    ops.push(CpuOp::Lock { vaddr: c.0, len: c.1 });
                }
                let task = layout.tile_task(plan, t, opts.precision, opts.accumulate, opts.subtile);
                set_block(&mut ops, ParamBlock::gemm(&task));
                ops.push(instr(Opcode::MaCfg, GEMM_MAID[idx % 2], PARAM));
                if idx > 0 {
                    finish(&mut ops, tiles[idx - 1], (idx - 1) % 2);
                }
                for &r in &STASH_MAID[..stashes] {
                    ops.push(CpuOp::WaitDone { maid_reg: r, rd: STATUS });
                }
            }
            if let Some(last) = tiles.last() {
                finish(&mut ops, last, (tiles.len() - 1) % 2);
            }
            ops
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum DlLayer {
    Conv {
        filters: u64,
        channels: u64,
        kh: u64,
        kw: u64,
        out_h: u64,
        out_w: u64,
        batch: u64,
    },
    FullyConnected {
        inputs: u64,
        outputs: u64,
        batch: u64,
    },
    AttentionProjection {
        d_model: u64,
        seq: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DlLayerSpec {
    #[serde(flatten)]
    pub layer: DlLayer,
    pub precision: Precision,
}

/// GEMM `(M, N, K)` of a layer. Convolutions use im2col:
/// `M = filters`, `K = channels * kh * kw`, `N = out_h * out_w * batch`.
pub fn layer_dims(layer: &DlLayer) -> (u64, u64, u64) {
    match *layer {
        DlLayer::Conv {
            filters,
            channels,
            kh,
            kw,
            out_h,
            out_w,
            batch,
        } => (filters, out_h * out_w * batch, channels * kh * kw),
        DlLayer::FullyConnected { inputs, outputs, batch } => (batch, outputs, inputs),
        DlLayer::AttentionProjection { d_model, seq } => (seq, d_model, d_model),
    }
}

/// One GEMM task per layer at the given operand addresses.
pub fn lower_dl_layer(spec: &DlLayerSpec, layout: &MatrixLayout, tile: (u16, u16)) -> Vec<GemmTask> {
    let (m, n, k) = layer_dims(&spec.layer);
    vec![GemmTask {
        a: layout.a_base,
        b: layout.b_base,
        c: layout.c_base,
        m: m as u32,
        n: n as u32,
        k: k as u32,
        precision: spec.precision,
        accumulate: false,
        tr: (m.min(tile.0 as u64)) as u16,
        tc: (n.min(tile.1 as u64)) as u16,
        ttr: 0,
        ttc: 0,
    }]
}
