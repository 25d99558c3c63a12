//! Fourier symbols of the truncated free-space kernels.
//!
//! With the sign convention `Delta = -sum_k d^2/dx_k^2`, the free-space
//! kernels are `-|x|/2` (one dimension), `-ln|x| / 2 pi` (two), and
//! `1 / 4 pi |x|` (three). Cutting the kernel off at a radius `L` at least
//! the source-box diameter leaves the convolution over the box unchanged
//! while making the kernel integrable, so its Fourier transform is a smooth
//! radial function with a closed form:
//!
//! - one dimension:   `(1 - cos(kL)) / k^2 - L sin(kL) / k`
//! - two dimensions:  `(1 - J0(kL)) / k^2 - L ln(L) J1(kL) / k`
//! - three dimensions:`(1 - cos(kL)) / k^2`
//!
//! Near `k = 0` the closed forms cancel catastrophically, so small arguments
//! switch to the power series in `u = kL`.

/// Below `u = kL = 2` the combinations `(1 - cos u)/u^2` and
/// `(1 - J0(u))/u^2` cancel badly: near `u = 0.1` the difference in the
/// numerator is ~1e-2, so even the 1e-8 absolute error of the rational
/// Bessel fits blows up to 1e-4 of the symbol after the division. The
/// convergent power series below are exact to rounding on that range, and
/// past the cut the numerators are O(1) and the closed forms take over.
const SERIES_CUT: f64 = 2.0;

/// `(1 - cos u) / u^2`, series below the cut.
fn one_minus_cos_over_u2(u: f64) -> f64 {
    if u >= SERIES_CUT {
        return (1.0 - u.cos()) / (u * u);
    }
    // sum_{m >= 1} (-1)^(m+1) u^(2m-2) / (2m)!
    let u2 = u * u;
    let mut term = 0.5;
    let mut acc = term;
    for m in 1..25 {
        term *= -u2 / ((2 * m + 1) as f64 * (2 * m + 2) as f64);
        acc += term;
        if term.abs() < 1e-18 * acc.abs() {
            break;
        }
    }
    acc
}

/// `sin(u) / u`, series below the cut.
fn sinc(u: f64) -> f64 {
    if u >= SERIES_CUT {
        return u.sin() / u;
    }
    let u2 = u * u;
    let mut term = 1.0;
    let mut acc = term;
    for m in 1..25 {
        term *= -u2 / ((2 * m) as f64 * (2 * m + 1) as f64);
        acc += term;
        if term.abs() < 1e-18 * acc.abs() {
            break;
        }
    }
    acc
}

/// `(1 - J0(u)) / u^2`, series below the cut.
fn one_minus_j0_over_u2(u: f64) -> f64 {
    if u >= SERIES_CUT {
        return (1.0 - bessel_j0(u)) / (u * u);
    }
    // sum_{m >= 1} (-1)^(m+1) u^(2m-2) / (4^m (m!)^2)
    let u2 = u * u;
    let mut term = 0.25;
    let mut acc = term;
    for m in 2..25 {
        term *= -u2 / (4.0 * (m * m) as f64);
        acc += term;
        if term.abs() < 1e-18 * acc.abs() {
            break;
        }
    }
    acc
}

/// `J1(u) / u`, series below the cut.
fn j1_over_u(u: f64) -> f64 {
    if u >= SERIES_CUT {
        return bessel_j1(u) / u;
    }
    // (1/2) sum_{m >= 0} (-1)^m u^(2m) / (4^m m! (m+1)!)
    let u2 = u * u;
    let mut term = 0.5;
    let mut acc = term;
    for m in 1..25 {
        term *= -u2 / (4.0 * (m * (m + 1)) as f64);
        acc += term;
        if term.abs() < 1e-18 * acc.abs() {
            break;
        }
    }
    acc
}

/// Fourier transform of the kernel truncated at radius `l`, evaluated at
/// radial wavenumber `k >= 0`.
pub fn truncated_symbol(dim: usize, l: f64, k: f64) -> f64 {
    debug_assert!(l > 0.0, "truncation radius must be positive");
    let u = (k * l).abs();
    let l2 = l * l;
    match dim {
        1 => l2 * (one_minus_cos_over_u2(u) - sinc(u)),
        2 => l2 * (one_minus_j0_over_u2(u) - l.ln() * j1_over_u(u)),
        3 => l2 * one_minus_cos_over_u2(u),
        _ => unreachable!("spatial dimension is validated at grid construction"),
    }
}

/// Bessel function J0, classic rational fits (about 1e-8 absolute). Ample
/// here: the symbol divides the Bessel error by k^2 only at the smallest
/// grid wavenumbers, where k ~ 1/L keeps the amplified error near 1e-9 of
/// the symbol's own size.
pub fn bessel_j0(x: f64) -> f64 {
    let ax = x.abs();
    if ax < 8.0 {
        let y = x * x;
        let num = 57_568_490_574.0
            + y * (-13_362_590_354.0
                + y * (651_619_640.7
                    + y * (-11_214_424.18 + y * (77_392.330_17 + y * (-184.905_245_6)))));
        let den = 57_568_490_411.0
            + y * (1_029_532_985.0
                + y * (9_494_680.718 + y * (59_272.648_53 + y * (267.853_271_2 + y))));
        num / den
    } else {
        let z = 8.0 / ax;
        let y = z * z;
        let xx = ax - 0.785_398_164;
        let p = 1.0
            + y * (-0.109_862_862_7e-2
                + y * (0.273_451_040_7e-4
                    + y * (-0.207_337_063_9e-5 + y * 0.209_388_721_1e-6)));
        let q = -0.156_249_999_5e-1
            + y * (0.143_048_876_5e-3
                + y * (-0.691_114_765_1e-5
                    + y * (0.762_109_516_1e-6 + y * (-0.934_935_152e-7))));
        (0.636_619_772 / ax).sqrt() * (xx.cos() * p - z * xx.sin() * q)
    }
}

/// Bessel function J1, same family of fits as `bessel_j0`.
pub fn bessel_j1(x: f64) -> f64 {
    let ax = x.abs();
    if ax < 8.0 {
        let y = x * x;
        let num = x
            * (72_362_614_232.0
                + y * (-7_895_059_235.0
                    + y * (242_396_853.1
                        + y * (-2_972_611.439 + y * (15_704.482_6 + y * (-30.160_366_06))))));
        let den = 144_725_228_442.0
            + y * (2_300_535_178.0
                + y * (18_583_304.74 + y * (99_447.433_94 + y * (376.999_139_7 + y))));
        num / den
    } else {
        let z = 8.0 / ax;
        let y = z * z;
        let xx = ax - 2.356_194_491;
        let p = 1.0
            + y * (0.183_105e-2
                + y * (-0.351_639_649_6e-4
                    + y * (0.245_752_017_4e-5 + y * (-0.240_337_019e-6))));
        let q = 0.046_874_999_95
            + y * (-0.200_269_087_3e-3
                + y * (0.844_919_909_6e-5
                    + y * (-0.882_289_87e-6 + y * 0.105_787_412e-6)));
        let value = (0.636_619_772 / ax).sqrt() * (xx.cos() * p - z * xx.sin() * q);
        if x < 0.0 {
            -value
        } else {
            value
        }
    }
}
