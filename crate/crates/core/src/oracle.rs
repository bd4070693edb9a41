//! Reference GEMMs used by the functional check.
//!
//! `same_order` follows the canonical accumulation order with a plain
//! per-element dot-product loop; half precision is evaluated in `f64` and
//! rounded to half after every operation. `exact` accumulates in
//! double-double and reports normwise relative errors.

use half::f16;
use rayon::prelude::*;

use crate::isa::Precision;

fn get(p: Precision, buf: &[u8], i: usize) -> f64 {
    match p {
        Precision::Fp64 => f64::from_le_bytes(buf[i * 8..i * 8 + 8].try_into().expect("8 bytes")),
        Precision::Fp32 => f32::from_le_bytes(buf[i * 4..i * 4 + 4].try_into().expect("4 bytes")) as f64,
        Precision::Fp16 => f16::from_le_bytes([buf[i * 2], buf[i * 2 + 1]]).to_f64(),
    }
}

/// Decodes a row-major buffer into `f64`.
pub fn decode(p: Precision, buf: &[u8]) -> Vec<f64> {
    (0..buf.len() / p.element_size()).map(|i| get(p, buf, i)).collect()
}

/// Encodes `f64` values (already representable) in precision `p`.
pub fn encode(p: Precision, v: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(v.len() * p.element_size());
    for &x in v {
        match p {
            Precision::Fp64 => out.extend_from_slice(&x.to_le_bytes()),
            Precision::Fp32 => out.extend_from_slice(&(x as f32).to_le_bytes()),
            Precision::Fp16 => out.extend_from_slice(&f16::from_f64(x).to_le_bytes()),
        }
    }
    out
}

/// `C (+)= A * B` in the canonical order; operands row-major in bytes.
#[allow(clippy::too_many_arguments)]
pub fn same_order(p: Precision, a: &[u8], b: &[u8], c0: &[u8], m: usize, n: usize, k: usize, accumulate: bool) -> Vec<u8> {
    let es = p.element_size();
    let mut out = vec![0u8; m * n * es];
    out.par_chunks_mut(n * es).enumerate().for_each(|(i, row)| {
        let arow: Vec<f64> = (0..k).map(|x| get(p, a, i * k + x)).collect();
        for j in 0..n {
            let init = if accumulate { get(p, c0, i * n + j) } else { 0.0 };
            let v = match p {
                Precision::Fp64 => {
                    let mut acc = init;
                    for (x, av) in arow.iter().enumerate() {
                        acc += av * get(p, b, x * n + j);
                    }
                    acc
                }
                Precision::Fp32 => {
                    let mut acc = init as f32;
                    for (x, av) in arow.iter().enumerate() {
                        acc += (*av as f32) * (get(p, b, x * n + j) as f32);
                    }
                    acc as f64
                }
                Precision::Fp16 => {
                    let r = |x: f64| f16::from_f64(x).to_f64();
                    let mut acc = init;
                    for (x, av) in arow.iter().enumerate() {
                        acc = r(acc + r(av * get(p, b, x * n + j)));
                    }
                    acc
                }
            };
            match p {
                Precision::Fp64 => row[j * 8..j * 8 + 8].copy_from_slice(&v.to_le_bytes()),
                Precision::Fp32 => row[j * 4..j * 4 + 4].copy_from_slice(&(v as f32).to_le_bytes()),
                Precision::Fp16 => row[j * 2..j * 2 + 2].copy_from_slice(&f16::from_f64(v).to_le_bytes()),
            }
        }
    });
    out
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

/// Largest normwise relative error of `got` against a double-double
/// evaluation: `|got - exact| / (|c0| + sum |a*b|)` per element.
#[allow(clippy::too_many_arguments)]
pub fn max_relative_error(p: Precision, a: &[u8], b: &[u8], c0: &[u8], got: &[u8], m: usize, n: usize, k: usize, accumulate: bool) -> f64 {
    (0..m)
        .into_par_iter()
        .map(|i| {
            let mut worst = 0.0f64;
            for j in 0..n {
                let init = if accumulate { get(p, c0, i * n + j) } else { 0.0 };
                let (mut hi, mut lo) = (init, 0.0);
                let mut scale = init.abs();
                for x in 0..k {
                    let (ph, pl) = two_prod(get(p, a, i * k + x), get(p, b, x * n + j));
                    scale += ph.abs();
                    let (s, e) = two_sum(hi, ph);
                    hi = s;
                    lo += e + pl;
                }
                let exact = hi + lo;
                let g = get(p, got, i * n + j);
                let err = if g == exact {
                    0.0
                } else if scale == 0.0 || !g.is_finite() {
                    f64::INFINITY
                } else {
                    ((g - hi) - lo).abs() / scale
                };
                worst = worst.max(err);
            }
            worst
        })
        .reduce(|| 0.0, f64::max)
}

/// Tolerance of the high-precision comparison.
pub fn tolerance(p: Precision) -> f64 {
    match p {
        Precision::Fp64 => 1e-13,
        Precision::Fp32 => 1e-6,
        Precision::Fp16 => 1e-2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_known_product() {
        let a = encode(Precision::Fp32, &[1.0, 2.0, 3.0, 4.0]);
        let b = encode(Precision::Fp32, &[5.0, 6.0, 7.0, 8.0]);
        let c = same_order(Precision::Fp32, &a, &b, &[], 2, 2, 2, false);
        assert_eq!(decode(Precision::Fp32, &c), vec![19.0, 22.0, 43.0, 50.0]);
        assert_eq!(max_relative_error(Precision::Fp32, &a, &b, &[], &c, 2, 2, 2, false), 0.0);
    }

    #[test]
    fn accumulate_adds_initial_c() {
        let a = encode(Precision::Fp16, &[1.0]);
        let b = encode(Precision::Fp16, &[2.0]);
        let c0 = encode(Precision::Fp16, &[0.5]);
        let c = same_order(Precision::Fp16, &a, &b, &c0, 1, 1, 1, true);
        assert_eq!(decode(Precision::Fp16, &c), vec![2.5]);
    }
}
