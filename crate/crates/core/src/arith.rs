//! Sub-tile multiply-accumulate in the canonical order: every output element
//! accumulates its products in ascending k, each product and each sum rounded
//! to the element precision (no fused multiply-add).
//!
//! FP16 values are carried in `f32`. A product of two halves is exact in
//! `f32`, and rounding an `f32` sum of two halves to half equals rounding the
//! exact sum, so this matches arithmetic performed directly in half precision.

use half::f16;

use crate::isa::Precision;

#[inline]
pub fn round_f16(x: f32) -> f32 {
    f16::from_f32(x).to_f32()
}

/// Reusable conversion buffers.
#[derive(Default)]
pub struct Scratch {
    a64: Vec<f64>,
    b64: Vec<f64>,
    c64: Vec<f64>,
    a32: Vec<f32>,
    b32: Vec<f32>,
    c32: Vec<f32>,
}

/// Geometry of one step: `C[h x w] += A[h x kl] * B[kl x w]`, each operand
/// stored row-major in bytes with the given row strides (in elements).
#[derive(Debug, Clone, Copy)]
pub struct StepShape {
    pub h: usize,
    pub w: usize,
    pub kl: usize,
    pub a_stride: usize,
    pub b_stride: usize,
    pub c_stride: usize,
}

fn load<T: Copy + Default, const N: usize>(
    src: &[u8],
    rows: usize,
    cols: usize,
    stride: usize,
    dst: &mut Vec<T>,
    conv: impl Fn([u8; N]) -> T,
) {
    dst.clear();
    dst.reserve(rows * cols);
    for r in 0..rows {
        let row = &src[r * stride * N..(r * stride + cols) * N];
        for chunk in row.chunks_exact(N) {
            dst.push(conv(chunk.try_into().expect("chunk size")));
        }
    }
}

fn store<T: Copy, const N: usize>(
    src: &[T],
    rows: usize,
    cols: usize,
    stride: usize,
    dst: &mut [u8],
    conv: impl Fn(T) -> [u8; N],
) {
    for r in 0..rows {
        let row = &mut dst[r * stride * N..(r * stride + cols) * N];
        for (chunk, v) in row.chunks_exact_mut(N).zip(&src[r * cols..(r + 1) * cols]) {
            chunk.copy_from_slice(&conv(*v));
        }
    }
}

/// Runs one step on byte buffers. Returns false if any updated element of C
/// is NaN or infinite.
pub fn step(prec: Precision, s: StepShape, a: &[u8], b: &[u8], c: &mut [u8], sc: &mut Scratch) -> bool {
    let StepShape { h, w, kl, .. } = s;
    match prec {
        Precision::Fp64 => {
            load::<f64, 8>(a, h, kl, s.a_stride, &mut sc.a64, f64::from_le_bytes);
            load::<f64, 8>(b, kl, w, s.b_stride, &mut sc.b64, f64::from_le_bytes);
            load::<f64, 8>(c, h, w, s.c_stride, &mut sc.c64, f64::from_le_bytes);
            for i in 0..h {
                let crow = &mut sc.c64[i * w..(i + 1) * w];
                for k in 0..kl {
                    let x = sc.a64[i * kl + k];
                    let brow = &sc.b64[k * w..(k + 1) * w];
                    for (cv, bv) in crow.iter_mut().zip(brow) {
                        *cv = *cv + x * *bv;
                    }
                }
            }
            store::<f64, 8>(&sc.c64, h, w, s.c_stride, c, f64::to_le_bytes);
            sc.c64.iter().all(|v| v.is_finite())
        }
        Precision::Fp32 => {
            load::<f32, 4>(a, h, kl, s.a_stride, &mut sc.a32, f32::from_le_bytes);
            load::<f32, 4>(b, kl, w, s.b_stride, &mut sc.b32, f32::from_le_bytes);
            load::<f32, 4>(c, h, w, s.c_stride, &mut sc.c32, f32::from_le_bytes);
            for i in 0..h {
                let crow = &mut sc.c32[i * w..(i + 1) * w];
                for k in 0..kl {
                    let x = sc.a32[i * kl + k];
                    let brow = &sc.b32[k * w..(k + 1) * w];
                    for (cv, bv) in crow.iter_mut().zip(brow) {
                        *cv = *cv + x * *bv;
                    }
                }
            }
            store::<f32, 4>(&sc.c32, h, w, s.c_stride, c, f32::to_le_bytes);
            sc.c32.iter().all(|v| v.is_finite())
        }
        Precision::Fp16 => {
            let h16 = |b: [u8; 2]| f16::from_le_bytes(b).to_f32();
            load::<f32, 2>(a, h, kl, s.a_stride, &mut sc.a32, h16);
            load::<f32, 2>(b, kl, w, s.b_stride, &mut sc.b32, h16);
            load::<f32, 2>(c, h, w, s.c_stride, &mut sc.c32, h16);
            for i in 0..h {
                let crow = &mut sc.c32[i * w..(i + 1) * w];
                for k in 0..kl {
                    let x = sc.a32[i * kl + k];
                    let brow = &sc.b32[k * w..(k + 1) * w];
                    for (cv, bv) in crow.iter_mut().zip(brow) {
                        *cv = round_f16(*cv + round_f16(x * *bv));
                    }
                }
            }
            store::<f32, 2>(&sc.c32, h, w, s.c_stride, c, |v| f16::from_f32(v).to_le_bytes());
            sc.c32.iter().all(|v| v.is_finite())
        }
    }
}

/// Systolic-array cycles for one step: pipeline fill plus one k-slice per
/// cycle for every 4 x (4 * ways) block of outputs.
pub fn step_cycles(prec: Precision, h: u64, w: u64, kl: u64, fill: u64) -> u64 {
    fill + h.div_ceil(4) * w.div_ceil(4 * prec.ways() as u64) * kl
}

/// Peak floating-point operations per MMAE cycle (2 x 16 FMACs x ways).
pub fn peak_flops_per_cycle(prec: Precision) -> u64 {
    32 * prec.ways() as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bytes64(v: &[f64]) -> Vec<u8> {
        v.iter().flat_map(|x| x.to_le_bytes()).collect()
    }

    fn shape(n: usize) -> StepShape {
        StepShape {
            h: n,
            w: n,
            kl: n,
            a_stride: n,
            b_stride: n,
            c_stride: n,
        }
    }

    #[test]
    fn identity_times_b_is_b() {
        let mut ident = vec![0.0; 16];
        for i in 0..4 {
            ident[i * 4 + i] = 1.0;
        }
        let b: Vec<f64> = (0..16).map(|x| x as f64 * 0.37 - 2.0).collect();
        let mut c = bytes64(&[0.0; 16]);
        assert!(step(Precision::Fp64, shape(4), &bytes64(&ident), &bytes64(&b), &mut c, &mut Scratch::default()));
        assert_eq!(c, bytes64(&b));
    }

    #[test]
    fn random_8_cubed_matches_triple_loop() {
        let mut x = 12345u64;
        let mut rnd = || {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((x >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        let a: Vec<f64> = (0..64).map(|_| rnd()).collect();
        let b: Vec<f64> = (0..64).map(|_| rnd()).collect();
        let c0: Vec<f64> = (0..64).map(|_| rnd()).collect();
        let mut want = c0.clone();
        for i in 0..8 {
            for j in 0..8 {
                let mut acc = want[i * 8 + j];
                for k in 0..8 {
                    acc += a[i * 8 + k] * b[k * 8 + j];
                }
                want[i * 8 + j] = acc;
            }
        }
        let mut c = bytes64(&c0);
        step(Precision::Fp64, shape(8), &bytes64(&a), &bytes64(&b), &mut c, &mut Scratch::default());
        assert_eq!(c, bytes64(&want));
    }

    #[test]
    fn fp16_rounds_every_operation() {
        // 2048 + 1 is not representable in half precision
        let one = f16::from_f32(1.0).to_le_bytes();
        let big = f16::from_f32(2048.0).to_le_bytes();
        let a = [one, one].concat();
        let b = [one, one].concat();
        let mut c = big.to_vec();
        let s = StepShape {
            h: 1,
            w: 1,
            kl: 2,
            a_stride: 2,
            b_stride: 1,
            c_stride: 1,
        };
        step(Precision::Fp16, s, &a, &b, &mut c, &mut Scratch::default());
        assert_eq!(f16::from_le_bytes([c[0], c[1]]).to_f32(), 2048.0);
    }

    #[test]
    fn overflow_reports_non_finite() {
        let a = bytes64(&[f64::MAX]);
        let b = bytes64(&[4.0]);
        let mut c = bytes64(&[0.0]);
        assert!(!step(Precision::Fp64, shape(1), &a, &b, &mut c, &mut Scratch::default()));
    }

    #[test]
    fn cycle_model_and_peaks() {
        assert_eq!(step_cycles(Precision::Fp64, 64, 64, 64, 7), 7 + 16 * 16 * 64);
        assert_eq!(step_cycles(Precision::Fp16, 4, 16, 1, 0), 1);
        assert_eq!(peak_flops_per_cycle(Precision::Fp64), 32);
        assert_eq!(peak_flops_per_cycle(Precision::Fp16), 128);
    }
}
