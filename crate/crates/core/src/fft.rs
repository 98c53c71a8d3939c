//! Multidimensional periodic FFT on row-major arrays, built from rustfft
//! line transforms.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

type Plan = Arc<dyn Fft<f64>>;

fn plan(len: usize, dir: Direction) -> Plan {
    static PLANS: OnceLock<Mutex<HashMap<(usize, bool), Plan>>> = OnceLock::new();
    let key = (len, dir == Direction::Forward);
    let mut cache = PLANS.get_or_init(Default::default).lock().unwrap();
    cache
        .entry(key)
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            match dir {
                Direction::Forward => planner.plan_fft_forward(len),
                Direction::Inverse => planner.plan_fft_inverse(len),
            }
        })
        .clone()
}

/// Transform `data` (row-major with `shape`) along every axis in `axes`.
///
/// The inverse transform is normalized by the product of the transformed
/// axis lengths, so forward followed by inverse is the identity.
pub fn transform(data: &mut [Complex64], shape: &[usize], axes: &[usize], dir: Direction) {
    debug_assert_eq!(data.len(), shape.iter().product::<usize>());
    let mut norm = 1.0;
    for &axis in axes {
        transform_axis(data, shape, axis, dir);
        norm *= shape[axis] as f64;
    }
    if dir == Direction::Inverse && norm != 1.0 {
        let s = 1.0 / norm;
        for v in data.iter_mut() {
            *v *= s;
        }
    }
}

/// Forward transform over all axes.
pub fn forward(data: &mut [Complex64], shape: &[usize]) {
    let axes: Vec<usize> = (0..shape.len()).collect();
    transform(data, shape, &axes, Direction::Forward);
}

/// Normalized inverse transform over all axes.
pub fn inverse(data: &mut [Complex64], shape: &[usize]) {
    let axes: Vec<usize> = (0..shape.len()).collect();
    transform(data, shape, &axes, Direction::Inverse);
}

fn transform_axis(data: &mut [Complex64], shape: &[usize], axis: usize, dir: Direction) {
    let len = shape[axis];
    if len <= 1 {
        return;
    }
    let fft = plan(len, dir);
    let stride: usize = shape[axis + 1..].iter().product();
    let block = len * stride;

    if stride == 1 {
        // contiguous lines
        let lines_per_task = (1 << 14) / len + 1;
        par::for_each_chunk_mut(data, len * lines_per_task, |_, chunk| {
            let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
            fft.process_with_scratch(chunk, &mut scratch);
        });
        return;
    }

    // strided lines: transpose each block into line-major order, transform, and scatter back
    for blk in data.chunks_mut(block) {
        let mut lines = vec![Complex64::default(); block];
        for i in 0..len {
            let row = &blk[i * stride..(i + 1) * stride];
            for (j, &v) in row.iter().enumerate() {
                lines[j * len + i] = v;
            }
        }
        let lines_per_task = (1 << 14) / len + 1;
        par::for_each_chunk_mut(&mut lines, len * lines_per_task, |_, chunk| {
            let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
            fft.process_with_scratch(chunk, &mut scratch);
        });
        for i in 0..len {
            let row = &mut blk[i * stride..(i + 1) * stride];
            for (j, v) in row.iter_mut().enumerate() {
                *v = lines[j * len + i];
            }
        }
    }
}

/// Signed integer frequency of DFT index `i` on an axis of length `n`.
///
/// Index `n/2` maps to `-n/2`.
pub fn frequency(i: usize, n: usize) -> i64 {
    if i < n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft_1d(x: &[Complex64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(j, &v)| {
                        let ang = -2.0 * std::f64::consts::PI * (j * k) as f64 / n as f64;
                        v * Complex64::from_polar(1.0, ang)
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn matches_naive_dft_along_strided_axis() {
        let shape = [8, 4];
        let data: Vec<Complex64> = (0..32)
            .map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()))
            .collect();
        let mut out = data.clone();
        transform(&mut out, &shape, &[0], Direction::Forward);
        for col in 0..4 {
            let line: Vec<Complex64> = (0..8).map(|r| data[r * 4 + col]).collect();
            let expect = naive_dft_1d(&line);
            for r in 0..8 {
                assert!((out[r * 4 + col] - expect[r]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn roundtrip_is_identity() {
        let shape = [16, 8, 4];
        let data: Vec<Complex64> = (0..512)
            .map(|i| Complex64::new((i as f64).sqrt(), -(i as f64 * 0.3).sin()))
            .collect();
        let mut out = data.clone();
        forward(&mut out, &shape);
        inverse(&mut out, &shape);
        for (a, b) in data.iter().zip(&out) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn frequency_wraps_at_nyquist() {
        assert_eq!(frequency(0, 8), 0);
        assert_eq!(frequency(3, 8), 3);
        assert_eq!(frequency(4, 8), -4);
        assert_eq!(frequency(7, 8), -1);
    }
}
