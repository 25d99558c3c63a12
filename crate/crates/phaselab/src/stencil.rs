//! Fourth-order finite differences and cubic interpolation weights.
//!
//! First derivatives use the five-point centered stencil in the interior and
//! one-sided five-point stencils on the two boundary layers, so every axis
//! must carry at least five nodes. Higher derivatives are formed by
//! composition; diagnostics that quote "stencil order" therefore measure on
//! interior nodes with a margin of two layers per derivative taken.

use crate::grid::strides;

/// Centered first-derivative stencil, offsets -2..=2, units of 1/h.
pub const CENTER: [f64; 5] = [1.0 / 12.0, -2.0 / 3.0, 0.0, 2.0 / 3.0, -1.0 / 12.0];
/// Fully one-sided stencil for the first node, offsets 0..=4.
pub const EDGE0: [f64; 5] = [-25.0 / 12.0, 4.0, -3.0, 4.0 / 3.0, -0.25];
/// Offset stencil for the second node, offsets -1..=3.
pub const EDGE1: [f64; 5] = [-0.25, -5.0 / 6.0, 1.5, -0.5, 1.0 / 12.0];

/// Differentiate a line of `n` strided samples into `out` (also strided).
fn diff_line(src: &[f64], base: usize, stride: usize, n: usize, inv_h: f64, out: &mut [f64]) {
    let at = |i: usize| src[base + i * stride];
    let set = |out: &mut [f64], i: usize, v: f64| out[base + i * stride] = v;

    let mut acc = 0.0;
    for (k, c) in EDGE0.iter().enumerate() {
        acc += c * at(k);
    }
    set(out, 0, acc * inv_h);

    acc = 0.0;
    for (k, c) in EDGE1.iter().enumerate() {
        acc += c * at(k);
    }
    set(out, 1, acc * inv_h);

    for i in 2..n - 2 {
        let d = CENTER[0] * at(i - 2)
            + CENTER[1] * at(i - 1)
            + CENTER[3] * at(i + 1)
            + CENTER[4] * at(i + 2);
        set(out, i, d * inv_h);
    }

    // Mirror images of the edge stencils (sign flipped, offsets reversed).
    acc = 0.0;
    for (k, c) in EDGE1.iter().enumerate() {
        acc += c * at(n - 2 + 1 - k);
    }
    set(out, n - 2, -acc * inv_h);

    acc = 0.0;
    for (k, c) in EDGE0.iter().enumerate() {
        acc += c * at(n - 1 - k);
    }
    set(out, n - 1, -acc * inv_h);
}

/// Fourth-order first derivative of `values` along `axis` of a row-major
/// array with per-axis sizes `dims` and spacing `h`.
pub fn derivative_along(values: &[f64], dims: &[usize], axis: usize, h: f64) -> Vec<f64> {
    let s = strides(dims);
    let n = dims[axis];
    let stride = s[axis];
    assert!(n >= 5, "axis needs at least 5 points");
    let total: usize = dims.iter().product();
    assert_eq!(values.len(), total);

    let lines = total / n;
    // Strides for enumerating line bases: all axes except `axis`.
    let outer_dims: Vec<usize> = dims
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != axis)
        .map(|(_, d)| *d)
        .collect();
    let outer_strides: Vec<usize> = s
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != axis)
        .map(|(_, st)| *st)
        .collect();

    let mut out = vec![0.0; total];
    let inv_h = 1.0 / h;
    // Lines write disjoint index sets, so the parallel sweep is safe.
    let writer = crate::par::DisjointWriter::new(&mut out);
    crate::par::for_each_line(lines, |l| {
        let mut multi = vec![0usize; outer_dims.len()];
        crate::grid::unravel(l, &outer_dims, &mut multi);
        let base: usize = multi
            .iter()
            .zip(&outer_strides)
            .map(|(i, st)| i * st)
            .sum();
        diff_line(values, base, stride, n, inv_h, unsafe { writer.slice() });
    });
    out
}

/// Cubic Lagrange weights for nodes at offsets -1, 0, 1, 2 around the cell
/// anchor, evaluated at fractional position `theta` (0 at the anchor node).
pub fn cubic_weights(theta: f64) -> [f64; 4] {
    let t = theta;
    [
        -t * (t - 1.0) * (t - 2.0) / 6.0,
        (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
        -t * (t + 1.0) * (t - 2.0) / 2.0,
        t * (t + 1.0) * (t - 1.0) / 6.0,
    ]
}

/// Anchor node and fractional offset for interpolation at coordinate `u`
/// (in node units) on an axis of `n` nodes. The four-node stencil is
/// `anchor-1 ..= anchor+2`, clamped to stay inside the axis.
pub fn cubic_anchor(u: f64, n: usize) -> (usize, f64) {
    let mut i0 = u.floor() as isize;
    if i0 < 1 {
        i0 = 1;
    }
    if i0 > n as isize - 3 {
        i0 = n as isize - 3;
    }
    (i0 as usize, u - i0 as f64)
}
