//! Distribution and spatial fields: values on phase grids plus the grid
//! operations everything else is built from (velocity averages, weighted
//! norms, derivatives, interpolation).

use crate::grid::{ravel, strides, unravel, Axis, GridError, PhaseGrid};
use crate::par;
use crate::stencil;

/// Identifies one axis of phase space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AxisId {
    X(usize),
    V(usize),
}

impl AxisId {
    /// Storage index of the axis for dimension `dim`.
    pub fn flat(self, dim: usize) -> Result<usize, GridError> {
        match self {
            AxisId::X(i) if i < dim => Ok(i),
            AxisId::V(i) if i < dim => Ok(dim + i),
            AxisId::X(i) | AxisId::V(i) => Err(GridError::AxisOutOfRange(i, dim)),
        }
    }
}

/// Scalar samples of a distribution on a phase grid at a fixed time.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionField {
    grid: PhaseGrid,
    time: f64,
    values: Vec<f64>,
}

/// Scalar samples on the spatial axes only (densities, potentials, forces).
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialField {
    axes: Vec<Axis>,
    time: f64,
    values: Vec<f64>,
}

impl DistributionField {
    pub fn new(grid: PhaseGrid, time: f64, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.node_count() {
            return Err(GridError::WrongLength {
                got: values.len(),
                want: grid.node_count(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(GridError::NonFiniteValue);
        }
        Ok(DistributionField { grid, time, values })
    }

    pub fn zeros(grid: PhaseGrid, time: f64) -> Self {
        let n = grid.node_count();
        DistributionField {
            grid,
            time,
            values: vec![0.0; n],
        }
    }

    /// Sample `f(x, v)` at every node.
    pub fn from_fn<F>(grid: PhaseGrid, time: f64, f: F) -> Self
    where
        F: Fn(&[f64], &[f64]) -> f64 + Sync,
    {
        let dim = grid.dim();
        let axes = grid.axes();
        let dims: Vec<usize> = axes.iter().map(|a| a.points).collect();
        let mut values = vec![0.0; grid.node_count()];
        par::fill_indexed(&mut values, |idx| {
            let mut multi = vec![0usize; 2 * dim];
            unravel(idx, &dims, &mut multi);
            let mut x = [0.0; 3];
            let mut v = [0.0; 3];
            for k in 0..dim {
                x[k] = axes[k].coord(multi[k]);
                v[k] = axes[dim + k].coord(multi[dim + k]);
            }
            f(&x[..dim], &v[..dim])
        });
        DistributionField { grid, time, values }
    }

    pub fn grid(&self) -> &PhaseGrid {
        &self.grid
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn set_time(&mut self, t: f64) {
        self.time = t;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    fn dims(&self) -> Vec<usize> {
        self.grid.axes().iter().map(|a| a.points).collect()
    }

    /// Trapezoid quadrature over the velocity block at every spatial node.
    pub fn velocity_average(&self) -> SpatialField {
        self.velocity_moment(|_| 1.0)
    }

    /// Like `velocity_average` with an extra velocity-dependent weight.
    pub fn velocity_moment<W>(&self, weight: W) -> SpatialField
    where
        W: Fn(&[f64]) -> f64 + Sync,
    {
        let dim = self.grid.dim();
        let nv = self.grid.v_node_count();
        let v_axes = self.grid.v_axes();
        let v_dims: Vec<usize> = v_axes.iter().map(|a| a.points).collect();
        let per_axis: Vec<Vec<f64>> = v_axes.iter().map(|a| a.weights()).collect();
        let mut wv = vec![0.0; nv];
        par::fill_indexed(&mut wv, |j| {
            let mut multi = vec![0usize; dim];
            unravel(j, &v_dims, &mut multi);
            let mut w = 1.0;
            let mut vpt = [0.0; 3];
            for k in 0..dim {
                w *= per_axis[k][multi[k]];
                vpt[k] = v_axes[k].coord(multi[k]);
            }
            w * weight(&vpt[..dim])
        });

        let nx = self.grid.x_node_count();
        let mut out = vec![0.0; nx];
        let values = &self.values;
        par::fill_indexed(&mut out, |ix| {
            let block = &values[ix * nv..(ix + 1) * nv];
            let mut acc = 0.0;
            for (f, w) in block.iter().zip(&wv) {
                acc += f * w;
            }
            acc
        });
        SpatialField {
            axes: self.grid.x_axes().to_vec(),
            time: self.time,
            values: out,
        }
    }

    /// Weighted norm `( integral (1+|v|^2)^(q p / 2) |f|^p dx dv )^(1/p)`.
    pub fn lp_norm(&self, p: f64, q: f64) -> Result<f64, GridError> {
        if !(p >= 1.0) || !q.is_finite() {
            return Err(GridError::Incompatible);
        }
        let dim = self.grid.dim();
        let nv = self.grid.v_node_count();
        let v_axes = self.grid.v_axes();
        let v_dims: Vec<usize> = v_axes.iter().map(|a| a.points).collect();
        let per_axis: Vec<Vec<f64>> = v_axes.iter().map(|a| a.weights()).collect();
        let half_exp = 0.5 * q * p;
        let mut wv = vec![0.0; nv];
        par::fill_indexed(&mut wv, |j| {
            let mut multi = vec![0usize; dim];
            unravel(j, &v_dims, &mut multi);
            let mut w = 1.0;
            let mut v2 = 0.0;
            for k in 0..dim {
                w *= per_axis[k][multi[k]];
                let c = v_axes[k].coord(multi[k]);
                v2 += c * c;
            }
            w * (1.0 + v2).powf(half_exp)
        });

        let x_axes = self.grid.x_axes();
        let x_dims: Vec<usize> = x_axes.iter().map(|a| a.points).collect();
        let x_per_axis: Vec<Vec<f64>> = x_axes.iter().map(|a| a.weights()).collect();
        let nx = self.grid.x_node_count();
        let values = &self.values;
        let total = par::sum_indexed(nx, |ix| {
            let mut multi = vec![0usize; dim];
            unravel(ix, &x_dims, &mut multi);
            let mut wx = 1.0;
            for k in 0..dim {
                wx *= x_per_axis[k][multi[k]];
            }
            let block = &values[ix * nv..(ix + 1) * nv];
            let mut acc = 0.0;
            if p == 1.0 {
                for (f, w) in block.iter().zip(&wv) {
                    acc += f.abs() * w;
                }
            } else {
                for (f, w) in block.iter().zip(&wv) {
                    acc += f.abs().powf(p) * w;
                }
            }
            wx * acc
        });
        Ok(total.powf(1.0 / p))
    }

    /// Fourth-order derivative along one axis.
    pub fn partial(&self, axis: AxisId) -> Result<DistributionField, GridError> {
        let dim = self.grid.dim();
        let k = axis.flat(dim)?;
        let ax = self.grid.axis(k)?;
        let dims = self.dims();
        let out = stencil::derivative_along(&self.values, &dims, k, ax.spacing());
        Ok(DistributionField {
            grid: self.grid.clone(),
            time: self.time,
            values: out,
        })
    }

    /// Pointwise product with the coordinate of `axis`.
    pub fn coordinate_product(&self, axis: AxisId) -> Result<DistributionField, GridError> {
        let dim = self.grid.dim();
        let k = axis.flat(dim)?;
        let ax = self.grid.axis(k)?;
        let dims = self.dims();
        let st = strides(&dims);
        let n = dims[k];
        let mut out = self.clone();
        let src = &self.values;
        par::zip_map(src, &mut out.values, |idx, val| {
            let i = (idx / st[k]) % n;
            val * ax.coord(i)
        });
        Ok(out)
    }

    /// Tensor-product cubic interpolation; zero outside the bounding box.
    pub fn interpolate(&self, x: &[f64], v: &[f64]) -> f64 {
        let dim = self.grid.dim();
        assert_eq!(x.len(), dim);
        assert_eq!(v.len(), dim);
        let axes = self.grid.axes();
        let dims = self.dims();
        let st = strides(&dims);
        let mut anchors = [0usize; 6];
        let mut weights = [[0.0; 4]; 6];
        for k in 0..2 * dim {
            let p = if k < dim { x[k] } else { v[k - dim] };
            if !axes[k].contains(p) {
                return 0.0;
            }
            let u = (p - axes[k].min) / axes[k].spacing();
            let (a, theta) = stencil::cubic_anchor(u, axes[k].points);
            anchors[k] = a;
            weights[k] = stencil::cubic_weights(theta);
        }
        let mut digits = [0usize; 6];
        let nd = 2 * dim;
        let mut acc = 0.0;
        loop {
            let mut w = 1.0;
            let mut idx = 0usize;
            for k in 0..nd {
                w *= weights[k][digits[k]];
                idx += (anchors[k] - 1 + digits[k]) * st[k];
            }
            acc += w * self.values[idx];
            let mut k = nd;
            loop {
                if k == 0 {
                    return acc;
                }
                k -= 1;
                digits[k] += 1;
                if digits[k] < 4 {
                    break;
                }
                digits[k] = 0;
            }
        }
    }

    /// Cubic interpolation in `x` at an exact velocity node (used when a
    /// quadrature runs over grid velocities): much cheaper than the full
    /// tensor product and exact in the velocity directions.
    pub fn interpolate_x_at_vnode(&self, x: &[f64], v_flat: usize) -> f64 {
        let dim = self.grid.dim();
        let x_axes = self.grid.x_axes();
        let nv = self.grid.v_node_count();
        let x_dims: Vec<usize> = x_axes.iter().map(|a| a.points).collect();
        let xst = strides(&x_dims);
        let mut anchors = [0usize; 3];
        let mut weights = [[0.0; 4]; 3];
        for k in 0..dim {
            if !x_axes[k].contains(x[k]) {
                return 0.0;
            }
            let u = (x[k] - x_axes[k].min) / x_axes[k].spacing();
            let (a, theta) = stencil::cubic_anchor(u, x_axes[k].points);
            anchors[k] = a;
            weights[k] = stencil::cubic_weights(theta);
        }
        let mut digits = [0usize; 3];
        let mut acc = 0.0;
        loop {
            let mut w = 1.0;
            let mut ix = 0usize;
            for k in 0..dim {
                w *= weights[k][digits[k]];
                ix += (anchors[k] - 1 + digits[k]) * xst[k];
            }
            acc += w * self.values[ix * nv + v_flat];
            let mut k = dim;
            loop {
                if k == 0 {
                    return acc;
                }
                k -= 1;
                digits[k] += 1;
                if digits[k] < 4 {
                    break;
                }
                digits[k] = 0;
            }
        }
    }

    /// Cubic interpolation in `v` at an exact spatial node, the transpose of
    /// [`Self::interpolate_x_at_vnode`]: exact in the spatial directions, and
    /// cheap because the velocity block of one spatial node is contiguous.
    pub fn interpolate_v_at_xnode(&self, x_flat: usize, v: &[f64]) -> f64 {
        let dim = self.grid.dim();
        let v_axes = self.grid.v_axes();
        let nv = self.grid.v_node_count();
        let v_dims: Vec<usize> = v_axes.iter().map(|a| a.points).collect();
        let vst = strides(&v_dims);
        let mut anchors = [0usize; 3];
        let mut weights = [[0.0; 4]; 3];
        for k in 0..dim {
            if !v_axes[k].contains(v[k]) {
                return 0.0;
            }
            let u = (v[k] - v_axes[k].min) / v_axes[k].spacing();
            let (a, theta) = stencil::cubic_anchor(u, v_axes[k].points);
            anchors[k] = a;
            weights[k] = stencil::cubic_weights(theta);
        }
        let base = x_flat * nv;
        let mut digits = [0usize; 3];
        let mut acc = 0.0;
        loop {
            let mut w = 1.0;
            let mut iv = 0usize;
            for k in 0..dim {
                w *= weights[k][digits[k]];
                iv += (anchors[k] - 1 + digits[k]) * vst[k];
            }
            acc += w * self.values[base + iv];
            let mut k = dim;
            loop {
                if k == 0 {
                    return acc;
                }
                k -= 1;
                digits[k] += 1;
                if digits[k] < 4 {
                    break;
                }
                digits[k] = 0;
            }
        }
    }

    /// Pointwise map with node coordinates: `out = f(x, v, value)`.
    pub fn map_nodes<F>(&self, f: F) -> DistributionField
    where
        F: Fn(&[f64], &[f64], f64) -> f64 + Sync + Send,
    {
        let dim = self.grid.dim();
        let axes = self.grid.axes();
        let dims = self.dims();
        let src = &self.values;
        let mut out = self.clone();
        par::fill_indexed(&mut out.values, |idx| {
            let mut multi = [0usize; 6];
            unravel(idx, &dims, &mut multi[..2 * dim]);
            let mut x = [0.0; 3];
            let mut v = [0.0; 3];
            for k in 0..dim {
                x[k] = axes[k].coord(multi[k]);
                v[k] = axes[dim + k].coord(multi[dim + k]);
            }
            f(&x[..dim], &v[..dim], src[idx])
        });
        out
    }

    /// `self + c * other` on the same grid.
    pub fn scaled_add(&self, c: f64, other: &DistributionField) -> Result<DistributionField, GridError> {
        if self.grid != other.grid {
            return Err(GridError::Incompatible);
        }
        let mut out = self.clone();
        par::zip_map(&other.values, &mut out.values, |i, o| self.values[i] + c * o);
        Ok(out)
    }

    pub fn scale(&self, c: f64) -> DistributionField {
        let mut out = self.clone();
        for v in &mut out.values {
            *v *= c;
        }
        out
    }

    pub fn abs(&self) -> DistributionField {
        let mut out = self.clone();
        for v in &mut out.values {
            *v = v.abs();
        }
        out
    }

    /// Pointwise product with a spatial field, broadcast over velocities.
    pub fn spatial_product(&self, s: &SpatialField) -> Result<DistributionField, GridError> {
        if s.axes != self.grid.x_axes() {
            return Err(GridError::Incompatible);
        }
        let nv = self.grid.v_node_count();
        let mut out = self.clone();
        let sv = &s.values;
        par::zip_map(&self.values, &mut out.values, |idx, val| val * sv[idx / nv]);
        Ok(out)
    }

    /// Pointwise product of two distribution fields.
    pub fn product(&self, other: &DistributionField) -> Result<DistributionField, GridError> {
        if self.grid != other.grid {
            return Err(GridError::Incompatible);
        }
        let mut out = self.clone();
        par::zip_map(&other.values, &mut out.values, |i, o| self.values[i] * o);
        Ok(out)
    }

    pub fn max_abs(&self) -> f64 {
        let values = &self.values;
        par::max_indexed(values.len(), |i| values[i].abs())
    }

    pub fn min(&self) -> f64 {
        let values = &self.values;
        -par::max_indexed(values.len(), |i| -values[i])
    }

    /// Largest |value| on the outermost layer of the grid box.
    pub fn boundary_max_abs(&self) -> f64 {
        let dims = self.dims();
        let values = &self.values;
        let nd = dims.len();
        par::max_indexed(values.len(), |idx| {
            let mut multi = [0usize; 6];
            unravel(idx, &dims, &mut multi[..nd]);
            let on_boundary = (0..nd).any(|k| multi[k] == 0 || multi[k] == dims[k] - 1);
            if on_boundary {
                values[idx].abs()
            } else {
                f64::NEG_INFINITY
            }
        })
        .max(0.0)
    }
}

impl SpatialField {
    pub fn new(axes: Vec<Axis>, time: f64, values: Vec<f64>) -> Result<Self, GridError> {
        let want: usize = axes.iter().map(|a| a.points).product();
        if axes.is_empty() || axes.len() > 3 {
            return Err(GridError::BadDimension(axes.len()));
        }
        if values.len() != want {
            return Err(GridError::WrongLength {
                got: values.len(),
                want,
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(GridError::NonFiniteValue);
        }
        Ok(SpatialField { axes, time, values })
    }

    pub fn zeros(axes: Vec<Axis>, time: f64) -> Self {
        let n: usize = axes.iter().map(|a| a.points).product();
        SpatialField {
            axes,
            time,
            values: vec![0.0; n],
        }
    }

    pub fn from_fn<F>(axes: Vec<Axis>, time: f64, f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let dims: Vec<usize> = axes.iter().map(|a| a.points).collect();
        let n: usize = dims.iter().product();
        let dim = axes.len();
        let mut values = vec![0.0; n];
        par::fill_indexed(&mut values, |idx| {
            let mut multi = [0usize; 3];
            unravel(idx, &dims, &mut multi[..dim]);
            let mut x = [0.0; 3];
            for k in 0..dim {
                x[k] = axes[k].coord(multi[k]);
            }
            f(&x[..dim])
        });
        SpatialField { axes, time, values }
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn set_time(&mut self, t: f64) {
        self.time = t;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn dims(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.points).collect()
    }

    pub fn node_coord(&self, idx: usize) -> Vec<f64> {
        let dims = self.dims();
        let mut multi = [0usize; 3];
        unravel(idx, &dims, &mut multi[..self.axes.len()]);
        (0..self.axes.len())
            .map(|k| self.axes[k].coord(multi[k]))
            .collect()
    }

    pub fn partial(&self, axis: usize) -> Result<SpatialField, GridError> {
        if axis >= self.axes.len() {
            return Err(GridError::AxisOutOfRange(axis, self.axes.len()));
        }
        let dims = self.dims();
        let out = stencil::derivative_along(&self.values, &dims, axis, self.axes[axis].spacing());
        Ok(SpatialField {
            axes: self.axes.clone(),
            time: self.time,
            values: out,
        })
    }

    pub fn coordinate_product(&self, axis: usize) -> Result<SpatialField, GridError> {
        if axis >= self.axes.len() {
            return Err(GridError::AxisOutOfRange(axis, self.axes.len()));
        }
        let dims = self.dims();
        let st = strides(&dims);
        let n = dims[axis];
        let ax = self.axes[axis];
        let mut out = self.clone();
        par::zip_map(&self.values, &mut out.values, |idx, val| {
            let i = (idx / st[axis]) % n;
            val * ax.coord(i)
        });
        Ok(out)
    }

    /// Pointwise map with node coordinates: `out = f(x, value)`.
    pub fn map_nodes<F>(&self, f: F) -> SpatialField
    where
        F: Fn(&[f64], f64) -> f64 + Sync + Send,
    {
        let dim = self.axes.len();
        let axes = self.axes.clone();
        let dims = self.dims();
        let src = &self.values;
        let mut out = self.clone();
        par::fill_indexed(&mut out.values, |idx| {
            let mut multi = [0usize; 3];
            unravel(idx, &dims, &mut multi[..dim]);
            let mut x = [0.0; 3];
            for k in 0..dim {
                x[k] = axes[k].coord(multi[k]);
            }
            f(&x[..dim], src[idx])
        });
        out
    }

    pub fn scaled_add(&self, c: f64, other: &SpatialField) -> Result<SpatialField, GridError> {
        if self.axes != other.axes {
            return Err(GridError::Incompatible);
        }
        let mut out = self.clone();
        par::zip_map(&other.values, &mut out.values, |i, o| self.values[i] + c * o);
        Ok(out)
    }

    pub fn scale(&self, c: f64) -> SpatialField {
        let mut out = self.clone();
        for v in &mut out.values {
            *v *= c;
        }
        out
    }

    /// Trapezoid `L^p` norm over the spatial box.
    pub fn lp_norm(&self, p: f64) -> Result<f64, GridError> {
        if !(p >= 1.0) {
            return Err(GridError::Incompatible);
        }
        let dims = self.dims();
        let dim = self.axes.len();
        let per_axis: Vec<Vec<f64>> = self.axes.iter().map(|a| a.weights()).collect();
        let values = &self.values;
        let total = par::sum_indexed(values.len(), |idx| {
            let mut multi = [0usize; 3];
            unravel(idx, &dims, &mut multi[..dim]);
            let mut w = 1.0;
            for k in 0..dim {
                w *= per_axis[k][multi[k]];
            }
            if p == 1.0 {
                w * values[idx].abs()
            } else {
                w * values[idx].abs().powf(p)
            }
        });
        Ok(total.powf(1.0 / p))
    }

    pub fn max_abs(&self) -> f64 {
        let values = &self.values;
        par::max_indexed(values.len(), |i| values[i].abs())
    }

    /// Max |value| over nodes at least `layers` nodes away from every face.
    pub fn interior_max_abs(&self, layers: usize) -> f64 {
        let dims = self.dims();
        let dim = self.axes.len();
        let values = &self.values;
        par::max_indexed(values.len(), |idx| {
            let mut multi = [0usize; 3];
            unravel(idx, &dims, &mut multi[..dim]);
            let interior =
                (0..dim).all(|k| multi[k] >= layers && multi[k] + layers < dims[k]);
            if interior {
                values[idx].abs()
            } else {
                f64::NEG_INFINITY
            }
        })
        .max(0.0)
    }

    pub fn boundary_max_abs(&self) -> f64 {
        let dims = self.dims();
        let dim = self.axes.len();
        let values = &self.values;
        par::max_indexed(values.len(), |idx| {
            let mut multi = [0usize; 3];
            unravel(idx, &dims, &mut multi[..dim]);
            let on_boundary = (0..dim).any(|k| multi[k] == 0 || multi[k] == dims[k] - 1);
            if on_boundary {
                values[idx].abs()
            } else {
                f64::NEG_INFINITY
            }
        })
        .max(0.0)
    }

    pub fn product(&self, other: &SpatialField) -> Result<SpatialField, GridError> {
        if self.axes != other.axes {
            return Err(GridError::Incompatible);
        }
        let mut out = self.clone();
        par::zip_map(&other.values, &mut out.values, |i, o| self.values[i] * o);
        Ok(out)
    }
}

/// Multi-index iteration order helper shared by tests.
pub fn node_multi(idx: usize, dims: &[usize]) -> Vec<usize> {
    let mut m = vec![0usize; dims.len()];
    unravel(idx, dims, &mut m);
    m
}

/// Convenience for building flat indices.
pub fn node_flat(multi: &[usize], dims: &[usize]) -> usize {
    ravel(multi, &strides(dims))
}
