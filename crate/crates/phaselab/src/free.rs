//! Exact free transport by characteristics, `f(t,x,v) = f(0, x - vt, v)`,
//! and the dispersive-decay measurements built on it.
//!
//! Commuted fields evolve by the same characteristic flow: every catalogue
//! word applied to a transported solution is again transported, so it is
//! enough to form the word at `t = 0` (where `t d/dx + d/dv` degenerates to
//! `d/dv`) and push the result along characteristics.
//!
//! Velocity averages after long streaming concentrate on a velocity window
//! of width `O(1/t)`, which a fixed velocity grid cannot resolve. The
//! quadratures here therefore switch at `t = 1` to the substitution
//! `y = x - vt`, which trades the shrinking velocity window for an integral
//! over the initial spatial box with an `O(1)` integrand:
//! `rho(g)(t,x) = t^{-n} * integral g0(y, (x-y)/t) dy`.

use crate::field::{AxisId, DistributionField, SpatialField};
use crate::grid::{unravel, Axis, GridError};
use crate::par;
use crate::vf::{
    apply_micro_word, restricted_catalogue, FieldId, FieldKind, Flavor, OperatorWord, VfError,
};
use thiserror::Error;

/// Default cap on commuted-word depth. Repeated stencils are fourth order
/// individually but lose accuracy with composition; four letters keeps the
/// loss within the tolerances used by the decay suites.
pub const DEFAULT_WORD_DEPTH: usize = 4;

/// A series value is flagged when the measured field touches the edge of the
/// initial box above this fraction of its peak.
const BOUNDARY_FLAG_REL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum FreeError {
    #[error("initial data must be supplied at t = 0, got t = {0}")]
    InitialTimeNonzero(f64),
    #[error("sample times must be positive and strictly increasing")]
    BadTimes,
    #[error("word needs depth {got}, configured limit is {limit}")]
    WordTooDeep { got: usize, limit: usize },
    #[error("multi-index has {got} entries, dimension is {want}")]
    BadMultiIndex { got: usize, want: usize },
    #[error(transparent)]
    Vf(#[from] VfError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// One decay measurement per requested time, plus a warning flag raised when
/// the measured field does not vanish at the sampling-box boundary (the box
/// then truncates the solution and the values are unreliable).
#[derive(Debug, Clone)]
pub struct DecaySeries {
    pub points: Vec<(f64, f64)>,
    pub boundary_touched: bool,
}

/// The time derivative supplied by the transport equation itself,
/// `d f/dt = -v . grad_x f`, used wherever a time letter needs a jet.
pub fn free_time_derivative(g: &DistributionField) -> Result<DistributionField, GridError> {
    let dim = g.grid().dim();
    let mut out = DistributionField::zeros(g.grid().clone(), g.time());
    for k in 0..dim {
        let term = g.partial(AxisId::X(k))?.coordinate_product(AxisId::V(k))?;
        out = out.scaled_add(-1.0, &term)?;
    }
    Ok(out)
}

/// Exact solution of the free transport equation from sampled initial data.
#[derive(Debug, Clone)]
pub struct FreeSolution {
    initial: DistributionField,
    depth_limit: usize,
}

impl FreeSolution {
    pub fn new(initial: DistributionField) -> Result<FreeSolution, FreeError> {
        if initial.time() != 0.0 {
            return Err(FreeError::InitialTimeNonzero(initial.time()));
        }
        Ok(FreeSolution {
            initial,
            depth_limit: DEFAULT_WORD_DEPTH,
        })
    }

    pub fn with_depth_limit(mut self, limit: usize) -> FreeSolution {
        self.depth_limit = limit;
        self
    }

    pub fn dim(&self) -> usize {
        self.initial.grid().dim()
    }

    pub fn initial(&self) -> &DistributionField {
        &self.initial
    }

    /// Point value by backward characteristics; zero outside the initial box.
    pub fn evaluate(&self, t: f64, x: &[f64], v: &[f64]) -> f64 {
        assert!(t >= 0.0, "free transport evaluated at negative time {t}");
        let dim = self.dim();
        let mut y = [0.0; 3];
        for k in 0..dim {
            y[k] = x[k] - t * v[k];
        }
        self.initial.interpolate(&y[..dim], v)
    }

    /// The solution sampled on the initial grid at time `t`.
    pub fn sample(&self, t: f64) -> DistributionField {
        DistributionField::from_fn(self.initial.grid().clone(), t, |x, v| {
            self.evaluate(t, x, v)
        })
    }

    /// The commuted field at `t = 0`. Transported by characteristics this
    /// equals the word applied to the solution at any later time: each
    /// catalogue letter commutes with transport exactly or up to a multiple
    /// of the transport operator, which vanishes on solutions. Time letters
    /// are served from the equation's own jet, `d f/dt = -v . grad_x f`.
    pub fn commuted_initial(&self, word: &OperatorWord) -> Result<DistributionField, FreeError> {
        if word.len() > self.depth_limit {
            return Err(FreeError::WordTooDeep {
                got: word.len(),
                limit: self.depth_limit,
            });
        }
        let needs_dt = word.kinds().iter().any(|k| k.needs_time_derivative());
        let dt0 = if needs_dt {
            Some(free_time_derivative(&self.initial)?)
        } else {
            None
        };
        Ok(apply_micro_word(word, &self.initial, dt0.as_ref())?)
    }

    /// `rho(f)(t, x)` by quadrature (see the module notes for the two forms).
    pub fn density_at(&self, t: f64, x: &[f64]) -> f64 {
        assert!(t >= 0.0, "free transport evaluated at negative time {t}");
        averaged_transport(&self.initial, t, x, false)
    }

    /// `rho(f)(t, .)` sampled on an arbitrary spatial grid, e.g. one that
    /// follows the `|x| ~ t` spreading of the support.
    pub fn density_field(&self, t: f64, axes: Vec<Axis>) -> Result<SpatialField, FreeError> {
        assert!(t >= 0.0, "free transport evaluated at negative time {t}");
        if axes.len() != self.dim() {
            return Err(FreeError::BadMultiIndex {
                got: axes.len(),
                want: self.dim(),
            });
        }
        Ok(SpatialField::from_fn(axes, t, |x| {
            averaged_transport(&self.initial, t, x, false)
        }))
    }

    /// `rho(Z f)(t, x)` for a commuted word.
    pub fn commuted_density_at(
        &self,
        word: &OperatorWord,
        t: f64,
        x: &[f64],
    ) -> Result<f64, FreeError> {
        let g0 = self.commuted_initial(word)?;
        Ok(averaged_transport(&g0, t, x, false))
    }

    /// `sup_x rho(|Z f|)(t, .)` over the characteristic cone of the support,
    /// for each requested time.
    pub fn decay_series(
        &self,
        word: &OperatorWord,
        times: &[f64],
    ) -> Result<DecaySeries, FreeError> {
        check_times(times)?;
        let g0 = self.commuted_initial(word)?;
        Ok(self.series_of(&g0, times, true, |_, _| 1.0))
    }

    /// `sup_x |rho(d^alpha f)(t, .)|` for a spatial multi-index `alpha`
    /// (entries count derivatives per axis). The sign stays inside the
    /// average: these are genuine derivative densities, not majorants.
    pub fn improved_derivative_decay_series(
        &self,
        alpha: &[usize],
        times: &[f64],
    ) -> Result<DecaySeries, FreeError> {
        check_times(times)?;
        let dim = self.dim();
        if alpha.len() != dim {
            return Err(FreeError::BadMultiIndex {
                got: alpha.len(),
                want: dim,
            });
        }
        let order: usize = alpha.iter().sum();
        // The depth budget reserves `dim` letters for the comparison fields
        // the derivative estimates are measured against.
        if order + dim > self.depth_limit {
            return Err(FreeError::WordTooDeep {
                got: order + dim,
                limit: self.depth_limit,
            });
        }
        let mut kinds = Vec::with_capacity(order);
        for (axis, &count) in alpha.iter().enumerate() {
            kinds.extend(std::iter::repeat(FieldKind::SpaceTranslation(axis)).take(count));
        }
        let word = OperatorWord::from_kinds(Flavor::Microscopic, kinds);
        let g0 = self.commuted_initial(&word)?;
        Ok(self.series_of(&g0, times, false, |_, _| 1.0))
    }

    /// `sup_x |rho(df/dt)(t, .)|` with the time derivative taken from the
    /// equation, `df/dt = -v . grad_x f`.
    pub fn time_derivative_decay_series(&self, times: &[f64]) -> Result<DecaySeries, FreeError> {
        check_times(times)?;
        let g0 = free_time_derivative(&self.initial)?;
        Ok(self.series_of(&g0, times, false, |_, _| 1.0))
    }

    /// `sup_x (1 + t + |x|)^n rho(|f|)(t, .)`: the left-hand side of the
    /// weighted pointwise bound, for empirical-constant reports.
    pub fn ks_lhs_series(&self, times: &[f64]) -> Result<DecaySeries, FreeError> {
        check_times(times)?;
        let n = self.dim() as i32;
        Ok(self.series_of(&self.initial, times, true, move |t, x| {
            let r = x.iter().map(|c| c * c).sum::<f64>().sqrt();
            (1.0 + t + r).powi(n)
        }))
    }

    /// Comparison constant `integral sup_v |f(0, x, v)| dx`.
    pub fn bardos_degond_rhs(&self) -> f64 {
        let g = &self.initial;
        let dim = g.grid().dim();
        let x_axes = g.grid().x_axes();
        let x_dims: Vec<usize> = x_axes.iter().map(|a| a.points).collect();
        let per_axis: Vec<Vec<f64>> = x_axes.iter().map(|a| a.weights()).collect();
        let nx = g.grid().x_node_count();
        let nv = g.grid().v_node_count();
        let values = g.values();
        par::sum_indexed(nx, |ix| {
            let mut multi = [0usize; 3];
            unravel(ix, &x_dims, &mut multi[..dim]);
            let mut w = 1.0;
            for k in 0..dim {
                w *= per_axis[k][multi[k]];
            }
            let block = &values[ix * nv..(ix + 1) * nv];
            let sup = block.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            w * sup
        })
    }

    /// Sum of `||Z f(0)||_L1` over every restricted word of length `<= k`.
    /// These norms are conserved by free transport, so the initial time
    /// suffices.
    pub fn ks_rhs(&self, k: usize) -> Result<f64, FreeError> {
        if k > self.depth_limit {
            return Err(FreeError::WordTooDeep {
                got: k,
                limit: self.depth_limit,
            });
        }
        let letters = restricted_catalogue(self.dim(), Flavor::Microscopic);
        let mut stack: Vec<FieldId> = Vec::new();
        self.ks_rhs_rec(&letters, k, &mut stack)
    }

    fn ks_rhs_rec(
        &self,
        letters: &[FieldId],
        remaining: usize,
        stack: &mut Vec<FieldId>,
    ) -> Result<f64, FreeError> {
        let word = OperatorWord::new(stack.clone())?;
        let mut total = self.commuted_initial(&word)?.lp_norm(1.0, 0.0)?;
        if remaining > 0 {
            for &letter in letters {
                stack.push(letter);
                total += self.ks_rhs_rec(letters, remaining - 1, stack)?;
                stack.pop();
            }
        }
        Ok(total)
    }

    /// `||Z f(t)||_L1` by quadrature at the transported nodes
    /// `(x_i + t v_j, v_j)`: the characteristic flow preserves phase-space
    /// volume, so the initial trapezoid weights apply unchanged. Exact
    /// transport makes this time-independent up to interpolation round-off.
    pub fn commuted_l1_norm(&self, word: &OperatorWord, t: f64) -> Result<f64, FreeError> {
        assert!(t >= 0.0, "free transport evaluated at negative time {t}");
        let g0 = self.commuted_initial(word)?;
        let grid = g0.grid();
        let dim = grid.dim();
        let x_axes = grid.x_axes();
        let v_axes = grid.v_axes();
        let x_dims: Vec<usize> = x_axes.iter().map(|a| a.points).collect();
        let v_dims: Vec<usize> = v_axes.iter().map(|a| a.points).collect();
        let wx: Vec<Vec<f64>> = x_axes.iter().map(|a| a.weights()).collect();
        let wv: Vec<Vec<f64>> = v_axes.iter().map(|a| a.weights()).collect();
        let nv = grid.v_node_count();
        let total = par::sum_indexed(grid.node_count(), |idx| {
            let ix = idx / nv;
            let jv = idx % nv;
            let mut xm = [0usize; 3];
            let mut vm = [0usize; 3];
            unravel(ix, &x_dims, &mut xm[..dim]);
            unravel(jv, &v_dims, &mut vm[..dim]);
            let mut w = 1.0;
            let mut arg = [0.0; 3];
            for k in 0..dim {
                let xk = x_axes[k].coord(xm[k]);
                let vk = v_axes[k].coord(vm[k]);
                w *= wx[k][xm[k]] * wv[k][vm[k]];
                // Transported node, then the backward characteristic map;
                // the round trip reproduces x_k up to round-off.
                arg[k] = (xk + t * vk) - t * vk;
            }
            w * g0.interpolate_x_at_vnode(&arg[..dim], jv).abs()
        });
        Ok(total)
    }

    fn series_of<W>(
        &self,
        g0: &DistributionField,
        times: &[f64],
        abs_inside: bool,
        weight: W,
    ) -> DecaySeries
    where
        W: Fn(f64, &[f64]) -> f64 + Sync,
    {
        let peak = g0.max_abs();
        let boundary_touched = g0.boundary_max_abs() > BOUNDARY_FLAG_REL * peak;
        let points = times
            .iter()
            .map(|&t| (t, self.sup_over_cone(g0, t, abs_inside, &weight)))
            .collect();
        DecaySeries {
            points,
            boundary_touched,
        }
    }

    /// Maximize `weight(t,x) * rho(t,x)` over the characteristic cone
    /// `|x_k| <= x-box + t * v-box` by coarse sampling plus repeated local
    /// refinement around the argmax. The coarse pass assumes the density's
    /// bulk spans a nontrivial fraction of the cone box, which holds for the
    /// centered, rapidly decaying data the suites use.
    fn sup_over_cone<W>(&self, g0: &DistributionField, t: f64, abs_inside: bool, weight: &W) -> f64
    where
        W: Fn(f64, &[f64]) -> f64 + Sync,
    {
        let dim = self.dim();
        let grid = g0.grid();
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for k in 0..dim {
            let xa = grid.x_axes()[k];
            let va = grid.v_axes()[k];
            let vmax = va.min.abs().max(va.max.abs());
            lo[k] = xa.min - t * vmax;
            hi[k] = xa.max + t * vmax;
        }
        let cone = (lo, hi);
        let (m, levels) = match dim {
            1 => (129usize, 3usize),
            2 => (33, 4),
            _ => (9, 4),
        };
        let total = m.pow(dim as u32);
        let dims = vec![m; dim];
        let mut best_val = f64::NEG_INFINITY;
        let mut best_x = [0.0; 3];
        let mut vals = vec![0.0; total];
        for _ in 0..levels {
            let step: Vec<f64> = (0..dim)
                .map(|k| (hi[k] - lo[k]) / (m - 1) as f64)
                .collect();
            par::fill_indexed(&mut vals, |idx| {
                let mut multi = [0usize; 3];
                unravel(idx, &dims, &mut multi[..dim]);
                let mut x = [0.0; 3];
                for k in 0..dim {
                    x[k] = lo[k] + step[k] * multi[k] as f64;
                }
                let rho = averaged_transport(g0, t, &x[..dim], abs_inside);
                let rho = if abs_inside { rho } else { rho.abs() };
                weight(t, &x[..dim]) * rho
            });
            let mut level_best = 0usize;
            for (i, &v) in vals.iter().enumerate() {
                if v > vals[level_best] {
                    level_best = i;
                }
            }
            if vals[level_best] > best_val {
                best_val = vals[level_best];
                let mut multi = [0usize; 3];
                unravel(level_best, &dims, &mut multi[..dim]);
                for k in 0..dim {
                    best_x[k] = lo[k] + step[k] * multi[k] as f64;
                }
            }
            // Shrink to one coarse cell around the best point seen so far.
            for k in 0..dim {
                lo[k] = (best_x[k] - step[k]).max(cone.0[k]);
                hi[k] = (best_x[k] + step[k]).min(cone.1[k]);
            }
        }
        best_val.max(0.0)
    }
}

fn check_times(times: &[f64]) -> Result<(), FreeError> {
    if times.is_empty() {
        return Err(FreeError::BadTimes);
    }
    let mut prev = 0.0;
    for &t in times {
        if !(t > prev) {
            return Err(FreeError::BadTimes);
        }
        prev = t;
    }
    Ok(())
}

/// Velocity average of the transported field `g(t,x,v) = g0(x - vt, v)` at
/// one spatial point. Below `t = 1` this is the plain velocity quadrature;
/// from `t = 1` on it is the substituted form
/// `t^{-n} sum_y w_y g0(y, (x-y)/t)` over the initial spatial nodes, which
/// keeps the integrand resolved at late times.
fn averaged_transport(g0: &DistributionField, t: f64, x: &[f64], abs_inside: bool) -> f64 {
    let grid = g0.grid();
    let dim = grid.dim();
    if t >= 1.0 {
        let x_axes = grid.x_axes();
        let x_dims: Vec<usize> = x_axes.iter().map(|a| a.points).collect();
        let wx: Vec<Vec<f64>> = x_axes.iter().map(|a| a.weights()).collect();
        let nx = grid.x_node_count();
        let mut acc = 0.0;
        let mut multi = [0usize; 3];
        for ix in 0..nx {
            unravel(ix, &x_dims, &mut multi[..dim]);
            let mut w = 1.0;
            let mut varg = [0.0; 3];
            for k in 0..dim {
                let y = x_axes[k].coord(multi[k]);
                w *= wx[k][multi[k]];
                varg[k] = (x[k] - y) / t;
            }
            let val = g0.interpolate_v_at_xnode(ix, &varg[..dim]);
            acc += w * if abs_inside { val.abs() } else { val };
        }
        acc / t.powi(dim as i32)
    } else {
        let v_axes = grid.v_axes();
        let v_dims: Vec<usize> = v_axes.iter().map(|a| a.points).collect();
        let wv: Vec<Vec<f64>> = v_axes.iter().map(|a| a.weights()).collect();
        let nv = grid.v_node_count();
        let mut acc = 0.0;
        let mut multi = [0usize; 3];
        for jv in 0..nv {
            unravel(jv, &v_dims, &mut multi[..dim]);
            let mut w = 1.0;
            let mut yarg = [0.0; 3];
            for k in 0..dim {
                let vk = v_axes[k].coord(multi[k]);
                w *= wv[k][multi[k]];
                yarg[k] = x[k] - t * vk;
            }
            let val = g0.interpolate_x_at_vnode(&yarg[..dim], jv);
            acc += w * if abs_inside { val.abs() } else { val };
        }
        acc
    }
}
