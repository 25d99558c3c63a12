//! Complex FFT sweeps over row-major tensor grids.
//!
//! Thin wrapper around `rustfft`: one in-place transform along each axis in
//! turn. Lines along the contiguous last axis are transformed in place,
//! strided lines go through a gather/scatter scratch buffer. Callers pad
//! transform lengths with `next_smooth`, so the planner always gets a
//! mixed-radix size it handles well.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// Smallest integer `>= n` whose prime factors all lie in {2, 3, 5}.
pub fn next_smooth(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2usize, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

/// In-place FFT along every axis of a row-major array with extents `dims`.
/// The inverse transform carries the `1/N` normalization, so a forward then
/// inverse sweep is the identity up to rounding.
pub fn fft_nd(data: &mut [Complex<f64>], dims: &[usize], inverse: bool) {
    let total: usize = dims.iter().product();
    assert_eq!(data.len(), total, "buffer does not match the grid extents");
    let mut planner = FftPlanner::new();
    for axis in 0..dims.len() {
        let n = dims[axis];
        let stride: usize = dims[axis + 1..].iter().product();
        let blocks = total / (n * stride);
        let plan = if inverse {
            planner.plan_fft_inverse(n)
        } else {
            planner.plan_fft_forward(n)
        };
        let mut line = vec![Complex::default(); n];
        for block in 0..blocks {
            for offset in 0..stride {
                let base = block * n * stride + offset;
                if stride == 1 {
                    plan.process(&mut data[base..base + n]);
                } else {
                    for (j, slot) in line.iter_mut().enumerate() {
                        *slot = data[base + j * stride];
                    }
                    plan.process(&mut line);
                    for (j, &value) in line.iter().enumerate() {
                        data[base + j * stride] = value;
                    }
                }
            }
        }
    }
    if inverse {
        let scale = 1.0 / total as f64;
        for z in data.iter_mut() {
            *z *= scale;
        }
    }
}
