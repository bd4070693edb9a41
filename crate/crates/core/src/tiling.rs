//! Second-level (MMAE buffer) tiling: picks `<ttr, ttc>` and the k-strip
//! depth so a double-buffered sub-tile working set fits the on-chip buffer.

use thiserror::Error;

use crate::isa::{GemmTask, ParamFault, Precision};

pub const DEFAULT_BUFFER_BYTES: u64 = 192 << 10;
pub const MAX_CANDIDATES: usize = 8;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TilingError {
    #[error("no sub-tile fits a {buffer}-byte buffer")]
    NoFeasiblePair { buffer: u64 },
}

/// Bytes held when A, B and C sub-tiles are all double buffered.
pub fn working_set(ttr: u64, ttc: u64, kk: u64, es: u64) -> u64 {
    2 * (ttr * kk + kk * ttc + ttr * ttc) * es
}

/// Deepest k-strip for a sub-tile: the largest power of two that fits,
/// capped at `k`. `None` if not even a depth of one fits.
pub fn strip_depth(ttr: u64, ttc: u64, k: u64, precision: Precision, buffer: u64) -> Option<u64> {
    let es = precision.element_size() as u64;
    if working_set(ttr, ttc, 1, es) > buffer {
        return None;
    }
    let mut kk = 1u64;
    while kk < k && working_set(ttr, ttc, kk * 2, es) <= buffer {
        kk *= 2;
    }
    Some(kk.min(k))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub ttr: u16,
    pub ttc: u16,
    pub kk: u64,
    pub utilization: f64,
}

fn pow2_up_to(limit: u64) -> Vec<u64> {
    if limit < 4 {
        return vec![limit];
    }
    let mut v = Vec::new();
    let mut x = 4;
    while x <= limit {
        v.push(x);
        x *= 2;
    }
    v
}

/// Power-of-two pairs ranked by buffer utilization. A pair is dropped when a
/// pair at least as large in both dimensions uses the buffer at least as
/// well.
pub fn candidates(
    tr: u64,
    tc: u64,
    k: u64,
    precision: Precision,
    buffer: u64,
) -> Result<Vec<Candidate>, TilingError> {
    let es = precision.element_size() as u64;
    let mut all = Vec::new();
    for &r in &pow2_up_to(tr) {
        for &c in &pow2_up_to(tc) {
            if let Some(kk) = strip_depth(r, c, k, precision, buffer) {
                if kk >= k.min(4) {
                    all.push(Candidate {
                        ttr: r as u16,
                        ttc: c as u16,
                        kk,
                        utilization: working_set(r, c, kk, es) as f64 / buffer as f64,
                    });
                }
            }
        }
    }
    let mut kept: Vec<Candidate> = all
        .iter()
        .filter(|a| {
            !all.iter().any(|b| {
                (b.ttr, b.ttc) != (a.ttr, a.ttc)
                    && b.ttr >= a.ttr
                    && b.ttc >= a.ttc
                    && b.utilization >= a.utilization
            })
        })
        .copied()
        .collect();
    if kept.is_empty() {
        return Err(TilingError::NoFeasiblePair { buffer });
    }
    kept.sort_by(|a, b| {
        b.utilization
            .total_cmp(&a.utilization)
            .then(b.ttr.cmp(&a.ttr))
            .then(b.ttc.cmp(&a.ttc))
    });
    kept.truncate(MAX_CANDIDATES);
    Ok(kept)
}

/// Picks the candidate with the fewest measured cycles; ties go to the larger
/// `ttr`, then the larger `ttc`.
pub fn autotune<F: FnMut(&Candidate) -> u64>(cands: &[Candidate], mut measure: F) -> Option<Candidate> {
    let mut best: Option<(u64, Candidate)> = None;
    for c in cands {
        let cycles = measure(c);
        let better = match &best {
            None => true,
            Some((bc, b)) => cycles < *bc || (cycles == *bc && (c.ttr, c.ttc) > (b.ttr, b.ttc)),
        };
        if better {
            best = Some((cycles, *c));
        }
    }
    best.map(|(_, c)| c)
}

/// Effective sub-tile dims and strip depth for a task, honoring explicit
/// `<ttr, ttc>` and falling back to the best-ranked candidate.
pub fn resolve(task: &GemmTask, buffer: u64) -> Result<(u64, u64, u64), ParamFault> {
    let tr = (task.tr as u64).min(task.m as u64);
    let tc = (task.tc as u64).min(task.n as u64);
    let k = task.k as u64;
    if task.auto_subtile() {
        let c = candidates(tr.max(1), tc.max(1), k, task.precision, buffer)
            .map_err(|_| ParamFault::BufferOverflow)?;
        return Ok((c[0].ttr as u64, c[0].ttc as u64, c[0].kk));
    }
    let ttr = (task.ttr as u64).min(tr);
    let ttc = (task.ttc as u64).min(tc);
    let kk = strip_depth(ttr, ttc, k, task.precision, buffer).ok_or(ParamFault::BufferOverflow)?;
    Ok((ttr, ttc, kk))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strip_depths() {
        let b = DEFAULT_BUFFER_BYTES;
        assert_eq!(strip_depth(64, 64, 1024, Precision::Fp64, b), Some(64));
        assert_eq!(strip_depth(64, 64, 1024, Precision::Fp32, b), Some(128));
        assert_eq!(strip_depth(64, 64, 1024, Precision::Fp16, b), Some(256));
        assert_eq!(strip_depth(64, 64, 40, Precision::Fp64, b), Some(40));
        assert_eq!(working_set(64, 64, 64, 8), b);
        assert_eq!(strip_depth(1024, 1024, 64, Precision::Fp64, b), None);
    }

    #[test]
    fn fig_setting_is_a_candidate() {
        let c = candidates(1024, 1024, 1024, Precision::Fp64, DEFAULT_BUFFER_BYTES).unwrap();
        assert!(c.len() <= MAX_CANDIDATES);
        assert!(c.iter().any(|c| (c.ttr, c.ttc) == (64, 64)));
        for x in &c {
            assert!(working_set(x.ttr as u64, x.ttc as u64, x.kk, 8) <= DEFAULT_BUFFER_BYTES);
        }
    }

    #[test]
    fn tiny_tile_single_candidate() {
        let c = candidates(8, 8, 1024, Precision::Fp64, DEFAULT_BUFFER_BYTES).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!((c[0].ttr, c[0].ttc), (8, 8));
        assert!(candidates(8, 8, 8, Precision::Fp64, 16).is_err());
    }

    #[test]
    fn autotune_prefers_fewer_cycles_then_larger_tiles() {
        let mk = |ttr, ttc| Candidate { ttr, ttc, kk: 8, utilization: 0.5 };
        let c = [mk(32, 64), mk(64, 32)];
        assert_eq!(autotune(&c[..1], |_| 5).unwrap().ttr, 32);
        // halving DMA traffic halves the modeled cycles
        let chosen = autotune(&c, |x| if x.ttr == 32 { 2000 } else { 1000 }).unwrap();
        assert_eq!((chosen.ttr, chosen.ttc), (64, 32));
        let tie = autotune(&c, |_| 7).unwrap();
        assert_eq!((tie.ttr, tie.ttc), (64, 32));
    }
}
