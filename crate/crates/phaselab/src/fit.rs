//! Least-squares fits and ratio reports for decay diagnostics.
//!
//! Solvers emit `(t, value)` series; the routines here turn them into
//! power-law exponents (log-log regression), logarithmic-growth
//! coefficients, and empirical constants for inequalities `lhs <= C * rhs`.

use serde::Serialize;
use thiserror::Error;

/// Minimum number of samples any fit accepts.
pub const MIN_SAMPLES: usize = 5;

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("window must satisfy t_min < t_max")]
    BadWindow,
    #[error("need at least {min} samples inside the window, got {got}")]
    TooFewSamples { min: usize, got: usize },
    #[error("log-log fit needs positive times, got {0}")]
    NonPositiveTime(f64),
    #[error("log-log fit needs positive values, got {0}")]
    NonPositiveValue(f64),
    #[error("times must be nonnegative, got {0}")]
    NegativeTime(f64),
}

/// Power-law fit `value ~ exp(intercept) * t^slope`.
#[derive(Debug, Clone, Serialize)]
pub struct FitResult {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Times of the first and last sample actually used.
    pub window: (f64, f64),
    pub samples: usize,
}

/// Logarithmic-growth fit `value ~ c0 + c1 * ln(1 + t)`.
#[derive(Debug, Clone, Serialize)]
pub struct LogGrowthFit {
    pub c0: f64,
    pub c1: f64,
    /// Largest absolute residual divided by the value range of the samples.
    pub residual_fraction: f64,
    pub window: (f64, f64),
    pub samples: usize,
}

/// Empirical constant for an inequality `lhs(t) <= C * rhs`.
#[derive(Debug, Clone, Serialize)]
pub struct RatioReport {
    pub sup: f64,
    pub mean: f64,
    pub samples: usize,
}

fn windowed(series: &[(f64, f64)], window: (f64, f64)) -> Result<Vec<(f64, f64)>, FitError> {
    if !(window.0 < window.1) {
        return Err(FitError::BadWindow);
    }
    let used: Vec<(f64, f64)> = series
        .iter()
        .copied()
        .filter(|&(t, _)| t >= window.0 && t <= window.1)
        .collect();
    if used.len() < MIN_SAMPLES {
        return Err(FitError::TooFewSamples {
            min: MIN_SAMPLES,
            got: used.len(),
        });
    }
    Ok(used)
}

/// Plain least squares on `(u, y)` pairs; returns (slope, intercept, r^2).
fn linear_least_squares(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let mean_u = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let mut suu = 0.0;
    let mut suy = 0.0;
    let mut syy = 0.0;
    for &(u, y) in points {
        suu += (u - mean_u) * (u - mean_u);
        suy += (u - mean_u) * (y - mean_y);
        syy += (y - mean_y) * (y - mean_y);
    }
    let slope = if suu > 0.0 { suy / suu } else { 0.0 };
    let intercept = mean_y - slope * mean_u;
    let r_squared = if syy > 0.0 {
        let ss_res: f64 = points
            .iter()
            .map(|&(u, y)| {
                let r = y - (intercept + slope * u);
                r * r
            })
            .sum();
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    } else {
        // A constant series is fit exactly by slope 0.
        1.0
    };
    (slope, intercept, r_squared)
}

/// Least squares on `(ln t, ln value)` over the samples inside `window`.
pub fn fit_decay_exponent(
    series: &[(f64, f64)],
    window: (f64, f64),
) -> Result<FitResult, FitError> {
    let used = windowed(series, window)?;
    for &(t, v) in &used {
        if t <= 0.0 {
            return Err(FitError::NonPositiveTime(t));
        }
        if v <= 0.0 {
            return Err(FitError::NonPositiveValue(v));
        }
    }
    let logs: Vec<(f64, f64)> = used.iter().map(|&(t, v)| (t.ln(), v.ln())).collect();
    let (slope, intercept, r_squared) = linear_least_squares(&logs);
    Ok(FitResult {
        slope,
        intercept,
        r_squared,
        window: (used[0].0, used[used.len() - 1].0),
        samples: used.len(),
    })
}

/// Least squares of `value` against `ln(1 + t)` over the samples in `window`.
pub fn fit_log_growth(
    series: &[(f64, f64)],
    window: (f64, f64),
) -> Result<LogGrowthFit, FitError> {
    let used = windowed(series, window)?;
    for &(t, _) in &used {
        if t < 0.0 {
            return Err(FitError::NegativeTime(t));
        }
    }
    let pts: Vec<(f64, f64)> = used.iter().map(|&(t, v)| ((1.0 + t).ln(), v)).collect();
    let (c1, c0, _) = linear_least_squares(&pts);
    let mut max_resid = 0.0f64;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &(u, y) in &pts {
        max_resid = max_resid.max((y - (c0 + c1 * u)).abs());
        lo = lo.min(y);
        hi = hi.max(y);
    }
    let range = hi - lo;
    let residual_fraction = if range > 0.0 {
        max_resid / range
    } else if max_resid == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(LogGrowthFit {
        c0,
        c1,
        residual_fraction,
        window: (used[0].0, used[used.len() - 1].0),
        samples: used.len(),
    })
}

/// Sup and mean of `value / rhs` over a series.
pub fn ratio_report(lhs: &[(f64, f64)], rhs: f64) -> RatioReport {
    if lhs.is_empty() {
        return RatioReport {
            sup: 0.0,
            mean: 0.0,
            samples: 0,
        };
    }
    let mut sup = f64::NEG_INFINITY;
    let mut total = 0.0;
    for &(_, v) in lhs {
        let r = if rhs != 0.0 {
            v / rhs
        } else if v == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        sup = sup.max(r);
        total += r;
    }
    RatioReport {
        sup,
        mean: total / lhs.len() as f64,
        samples: lhs.len(),
    }
}

/// Relative change of the empirical constant between two resolutions.
pub fn refinement_drift(coarse: &RatioReport, fine: &RatioReport) -> f64 {
    let scale = coarse.sup.abs().max(f64::MIN_POSITIVE);
    (fine.sup - coarse.sup).abs() / scale
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series<F: Fn(f64) -> f64>(times: &[f64], f: F) -> Vec<(f64, f64)> {
        times.iter().map(|&t| (t, f(t))).collect()
    }

    const TIMES: [f64; 9] = [2.0, 3.0, 4.5, 7.0, 10.0, 15.0, 22.0, 34.0, 50.0];

    #[test]
    fn exact_power_law_recovers_exponent() {
        let s = series(&TIMES, |t| 3.7 * t.powf(-2.0));
        let fit = fit_decay_exponent(&s, (2.0, 50.0)).unwrap();
        assert!((fit.slope + 2.0).abs() < 1e-12);
        assert!((fit.intercept - 3.7f64.ln()).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert_eq!(fit.window, (2.0, 50.0));
        assert_eq!(fit.samples, TIMES.len());
    }

    #[test]
    fn constant_series_has_zero_slope() {
        let s = series(&TIMES, |_| 4.25);
        let fit = fit_decay_exponent(&s, (1.0, 100.0)).unwrap();
        assert_eq!(fit.slope, 0.0);
        assert_eq!(fit.r_squared, 1.0);
    }

    #[test]
    fn window_selects_samples_and_reports_actual_span() {
        let s = series(&TIMES, |t| t.powf(-1.0));
        let fit = fit_decay_exponent(&s, (3.5, 40.0)).unwrap();
        assert_eq!(fit.samples, 6);
        assert_eq!(fit.window, (4.5, 34.0));
    }

    #[test]
    fn rejects_bad_inputs() {
        let s = series(&TIMES, |t| t.powf(-1.0));
        assert_eq!(
            fit_decay_exponent(&s, (5.0, 5.0)).unwrap_err(),
            FitError::BadWindow
        );
        assert!(matches!(
            fit_decay_exponent(&s[..3], (2.0, 50.0)).unwrap_err(),
            FitError::TooFewSamples { got: 3, .. }
        ));
        let mut bad = s.clone();
        bad[4].1 = -1.0;
        assert_eq!(
            fit_decay_exponent(&bad, (2.0, 50.0)).unwrap_err(),
            FitError::NonPositiveValue(-1.0)
        );
        let mut zero_t = s;
        zero_t[0].0 = 0.0;
        assert_eq!(
            fit_decay_exponent(&zero_t, (0.0, 50.0)).unwrap_err(),
            FitError::NonPositiveTime(0.0)
        );
    }

    #[test]
    fn noisy_power_law_stays_near_truth() {
        // Deterministic +-1% wiggle.
        let s: Vec<(f64, f64)> = TIMES
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let wiggle = 1.0 + 0.01 * if i % 2 == 0 { 1.0 } else { -1.0 };
                (t, t.powf(-1.5) * wiggle)
            })
            .collect();
        let fit = fit_decay_exponent(&s, (2.0, 50.0)).unwrap();
        assert!((fit.slope + 1.5).abs() < 0.02, "slope {}", fit.slope);
        assert!(fit.r_squared > 0.999);
    }

    #[test]
    fn log_growth_exact_fit() {
        let s = series(&[0.0, 1.0, 2.0, 5.0, 10.0, 20.0], |t| {
            3.0 + 2.0 * (1.0 + t).ln()
        });
        let fit = fit_log_growth(&s, (0.0, 20.0)).unwrap();
        assert!((fit.c0 - 3.0).abs() < 1e-12);
        assert!((fit.c1 - 2.0).abs() < 1e-12);
        assert!(fit.residual_fraction < 1e-12);
    }

    #[test]
    fn log_growth_flags_polynomial_series() {
        // Quadratic growth is badly described by c0 + c1 ln(1+t).
        let s = series(&[0.0, 2.0, 5.0, 9.0, 14.0, 20.0], |t| t * t);
        let fit = fit_log_growth(&s, (0.0, 20.0)).unwrap();
        assert!(fit.residual_fraction > 0.1, "{}", fit.residual_fraction);
    }

    #[test]
    fn ratio_report_limits() {
        let zeros = series(&TIMES, |_| 0.0);
        let r = ratio_report(&zeros, 2.0);
        assert_eq!(r.sup, 0.0);
        assert_eq!(r.mean, 0.0);

        let same = series(&TIMES, |_| 2.0);
        let r = ratio_report(&same, 2.0);
        assert_eq!(r.sup, 1.0);
        assert_eq!(r.mean, 1.0);
        assert_eq!(r.samples, TIMES.len());
    }

    #[test]
    fn refinement_drift_is_relative() {
        let a = RatioReport {
            sup: 2.0,
            mean: 1.0,
            samples: 4,
        };
        let b = RatioReport {
            sup: 2.1,
            mean: 1.0,
            samples: 4,
        };
        assert!((refinement_drift(&a, &b) - 0.05).abs() < 1e-12);
    }
}
