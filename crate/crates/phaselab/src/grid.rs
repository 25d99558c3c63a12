//! Uniform tensor grids over phase space.
//!
//! A phase grid is the product of `n` spatial axes and `n` velocity axes,
//! `n <= 3`. Values are stored row-major with the axes ordered
//! `x_1, .., x_n, v_1, .., v_n` and the last axis fastest.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("axis needs max > min, got [{0}, {1}]")]
    EmptyExtent(f64, f64),
    #[error("axis needs at least {min} points, got {got}")]
    TooFewPoints { min: usize, got: usize },
    #[error("axis bounds must be finite")]
    NonFinite,
    #[error("dimension must be 1..=3, got {0}")]
    BadDimension(usize),
    #[error("x and v axis counts differ: {0} vs {1}")]
    MismatchedAxes(usize, usize),
    #[error("value buffer has {got} entries, grid has {want} nodes")]
    WrongLength { got: usize, want: usize },
    #[error("field values must be finite")]
    NonFiniteValue,
    #[error("axis index {0} out of range for dimension {1}")]
    AxisOutOfRange(usize, usize),
    #[error("grids are incompatible for this operation")]
    Incompatible,
}

/// One uniform axis: `points` nodes spanning `[min, max]` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl Axis {
    /// Stencils need five nodes; every axis in the crate obeys this.
    pub const MIN_POINTS: usize = 5;

    pub fn new(min: f64, max: f64, points: usize) -> Result<Self, GridError> {
        if !(min.is_finite() && max.is_finite()) {
            return Err(GridError::NonFinite);
        }
        if max <= min {
            return Err(GridError::EmptyExtent(min, max));
        }
        if points < Self::MIN_POINTS {
            return Err(GridError::TooFewPoints {
                min: Self::MIN_POINTS,
                got: points,
            });
        }
        Ok(Axis { min, max, points })
    }

    pub fn spacing(&self) -> f64 {
        (self.max - self.min) / (self.points - 1) as f64
    }

    pub fn coord(&self, i: usize) -> f64 {
        self.min + self.spacing() * i as f64
    }

    /// Composite trapezoid weights: `h/2` at the ends, `h` inside.
    pub fn weights(&self) -> Vec<f64> {
        let h = self.spacing();
        let mut w = vec![h; self.points];
        w[0] = 0.5 * h;
        w[self.points - 1] = 0.5 * h;
        w
    }

    pub fn contains(&self, p: f64) -> bool {
        p >= self.min && p <= self.max
    }
}

/// Product grid of spatial and velocity axes.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseGrid {
    x_axes: Vec<Axis>,
    v_axes: Vec<Axis>,
}

impl PhaseGrid {
    pub fn new(x_axes: Vec<Axis>, v_axes: Vec<Axis>) -> Result<Self, GridError> {
        if x_axes.len() != v_axes.len() {
            return Err(GridError::MismatchedAxes(x_axes.len(), v_axes.len()));
        }
        if x_axes.is_empty() || x_axes.len() > 3 {
            return Err(GridError::BadDimension(x_axes.len()));
        }
        Ok(PhaseGrid { x_axes, v_axes })
    }

    /// Isotropic helper: same axis for every x direction, same for every v.
    pub fn isotropic(dim: usize, x: Axis, v: Axis) -> Result<Self, GridError> {
        Self::new(vec![x; dim], vec![v; dim])
    }

    pub fn dim(&self) -> usize {
        self.x_axes.len()
    }

    pub fn x_axes(&self) -> &[Axis] {
        &self.x_axes
    }

    pub fn v_axes(&self) -> &[Axis] {
        &self.v_axes
    }

    /// All 2n axes in storage order.
    pub fn axes(&self) -> Vec<Axis> {
        self.x_axes
            .iter()
            .chain(self.v_axes.iter())
            .copied()
            .collect()
    }

    pub fn axis(&self, k: usize) -> Result<Axis, GridError> {
        let all = self.axes();
        all.get(k).copied().ok_or(GridError::AxisOutOfRange(k, self.dim()))
    }

    pub fn node_count(&self) -> usize {
        self.axes().iter().map(|a| a.points).product()
    }

    pub fn x_node_count(&self) -> usize {
        self.x_axes.iter().map(|a| a.points).product()
    }

    pub fn v_node_count(&self) -> usize {
        self.v_axes.iter().map(|a| a.points).product()
    }
}

/// Row-major strides for the given per-axis point counts.
pub fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; dims.len()];
    for k in (0..dims.len().saturating_sub(1)).rev() {
        s[k] = s[k + 1] * dims[k + 1];
    }
    s
}

/// Decompose a flat index into per-axis indices.
pub fn unravel(mut idx: usize, dims: &[usize], out: &mut [usize]) {
    for k in (0..dims.len()).rev() {
        out[k] = idx % dims[k];
        idx /= dims[k];
    }
}

/// Flatten per-axis indices.
pub fn ravel(multi: &[usize], strides: &[usize]) -> usize {
    multi.iter().zip(strides).map(|(i, s)| i * s).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_validation() {
        assert!(Axis::new(0.0, 1.0, 5).is_ok());
        assert_eq!(
            Axis::new(1.0, 1.0, 5).unwrap_err(),
            GridError::EmptyExtent(1.0, 1.0)
        );
        assert!(matches!(
            Axis::new(0.0, 1.0, 4).unwrap_err(),
            GridError::TooFewPoints { .. }
        ));
        assert_eq!(Axis::new(f64::NAN, 1.0, 5).unwrap_err(), GridError::NonFinite);
    }

    #[test]
    fn axis_geometry() {
        let a = Axis::new(-1.0, 1.0, 5).unwrap();
        assert_eq!(a.spacing(), 0.5);
        assert_eq!(a.coord(0), -1.0);
        assert_eq!(a.coord(4), 1.0);
        let w = a.weights();
        assert_eq!(w, vec![0.25, 0.5, 0.5, 0.5, 0.25]);
        // Trapezoid weights sum to the extent.
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn grid_validation() {
        let a = Axis::new(0.0, 1.0, 5).unwrap();
        assert!(PhaseGrid::isotropic(1, a, a).is_ok());
        assert!(PhaseGrid::isotropic(3, a, a).is_ok());
        assert_eq!(
            PhaseGrid::isotropic(4, a, a).unwrap_err(),
            GridError::BadDimension(4)
        );
        assert_eq!(
            PhaseGrid::new(vec![a, a], vec![a]).unwrap_err(),
            GridError::MismatchedAxes(2, 1)
        );
    }

    #[test]
    fn stride_roundtrip() {
        let dims = [3usize, 4, 5];
        let s = strides(&dims);
        assert_eq!(s, vec![20, 5, 1]);
        let mut multi = [0usize; 3];
        for idx in 0..60 {
            unravel(idx, &dims, &mut multi);
            assert_eq!(ravel(&multi, &s), idx);
        }
    }
}
