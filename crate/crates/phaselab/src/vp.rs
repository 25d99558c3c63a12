//! Self-consistent phase-space evolution,
//!
//! ```text
//!   d_t f + v . grad_x f + mu grad_x phi . grad_v f = 0,
//!   Delta phi = rho(f),            Delta = sum_k d^2/dx_k^2,
//! ```
//!
//! with `mu = -1` the attractive (gravitational) coupling and `mu = +1` the
//! repulsive one, together with the weighted norm scale `E_{N,delta}`,
//! conservation-law monitors, and bootstrap-style amplitude tracking.
//!
//! The stepper is Strang splitting with exact-shift semi-Lagrangian
//! advections (cubic interpolation): a half step of `x`-advection, one full
//! `v`-advection under the field solved at the interval midpoint, and a
//! closing half step. The scheme is second order in `dt` and unconditionally
//! stable; accuracy still wants `dt * v_max` to stay a modest fraction of the
//! box, which [`cfl_ratio`] measures.
//!
//! Sign convention: [`crate::poisson::solve`] inverts `-sum_k d^2/dx_k^2`, so
//! the potential entering the transport coupling above is the *negative* of
//! the solver output; [`VPState::potential`] performs the flip and
//! [`VPState::acceleration`] folds it into `mu`.

use crate::field::{DistributionField, SpatialField};
use crate::grid::{strides, unravel, Axis, GridError, PhaseGrid};
use crate::par;
use crate::poisson::{self, PoissonError, PoissonResult};
use crate::stencil;
use crate::vf::{
    apply_micro_word, eval_expansion, expand_T_phi_commutator, restricted_catalogue, FieldKind,
    Flavor, OperatorWord, VfError,
};
use serde::Serialize;
use thiserror::Error;

/// Relative negativity budget: cubic interpolation of well-resolved data
/// undershoots only where the local oscillation scale approaches the grid
/// spacing, which for smooth decaying data keeps the dips far below this
/// fraction of the peak. Larger dips indicate under-resolution.
pub const NEGATIVITY_TOL_REL: f64 = 1e-8;

/// Relative support budget at the phase-box boundary. The advections pull
/// zeros in from outside the box, so once the solution touches the boundary
/// above this fraction of its peak the run is silently losing mass and is
/// aborted instead.
pub const SUPPORT_TOL_REL: f64 = 1e-8;

/// Longest word admitted by the norm scale; repeated fourth-order stencils
/// lose accuracy with composition (same budget as the transport module).
pub const MAX_NORM_DEPTH: usize = 4;

/// Longest word for which the commutator-source side of the conservation
/// monitors is evaluated.
pub const MONITOR_WORD_LIMIT: usize = 2;

#[derive(Debug, Error, PartialEq)]
pub enum VpError {
    #[error("coupling sign must be +1 or -1, got {0}")]
    BadMu(f64),
    #[error("time step must be a nonnegative finite number, got {0}")]
    BadDt(f64),
    #[error("horizon t = {t_end} precedes the state time t = {now}")]
    BadHorizon { t_end: f64, now: f64 },
    #[error("monitor cadence must be at least one step")]
    BadCadence,
    #[error("delta must lie in (0, 1), got {0}")]
    BadDelta(f64),
    #[error("exponent p must be at least 1 and q positive, got p = {p}, q = {q}")]
    BadExponents { p: f64, q: f64 },
    #[error("word depth {got} exceeds the limit {limit}")]
    WordTooDeep { got: usize, limit: usize },
    #[error(
        "support reached the grid boundary at t = {time}: boundary/peak = {ratio:.3e} \
         exceeds {tol:.0e}"
    )]
    SupportAtBoundary { time: f64, ratio: f64, tol: f64 },
    #[error("negativity beyond the interpolation budget at t = {time}: min {min:.3e} < {floor:.3e}")]
    NegativityExceeded { time: f64, min: f64, floor: f64 },
    #[error("state series is empty")]
    EmptySeries,
    #[error(transparent)]
    Poisson(#[from] PoissonError),
    #[error(transparent)]
    Vf(#[from] VfError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Whether the v-advection uses the self-consistently solved field or is
/// switched off (pure free streaming, the degenerate reference case).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ForceMode {
    SelfConsistent,
    Off,
}

/// One snapshot of the coupled system: the distribution together with the
/// field solved from its density at the same time.
#[derive(Debug, Clone)]
pub struct VPState {
    pub f: DistributionField,
    pub phi: PoissonResult,
    pub time: f64,
    pub mu: f64,
}

impl VPState {
    /// Builds the state by solving the field from `rho(f)`; rejects coupling
    /// signs other than +-1 and data already violating the support or
    /// negativity budgets.
    pub fn new(f: DistributionField, mu: f64) -> Result<VPState, VpError> {
        if mu != 1.0 && mu != -1.0 {
            return Err(VpError::BadMu(mu));
        }
        check_health(&f)?;
        let phi = poisson::solve(&f.velocity_average())?;
        Ok(VPState {
            time: f.time(),
            f,
            phi,
            mu,
        })
    }

    /// The density the field was solved from.
    pub fn density(&self) -> &SpatialField {
        &self.phi.source
    }

    /// The potential in the `Delta = sum_k d^2/dx_k^2` sign convention of the
    /// transport coupling (the solver kernel inverts the opposite sign).
    pub fn potential(&self) -> SpatialField {
        self.phi.phi.scale(-1.0)
    }

    /// The acceleration `mu grad_x phi`, one component per spatial axis.
    pub fn acceleration(&self) -> Vec<SpatialField> {
        self.phi
            .grad_phi
            .iter()
            .map(|g| g.scale(-self.mu))
            .collect()
    }

    /// Signed total mass `integral f dx dv`.
    pub fn mass(&self) -> f64 {
        phase_integral(&self.f)
    }

}

pub(crate) fn check_health(f: &DistributionField) -> Result<(), VpError> {
    let peak = f.max_abs();
    if peak == 0.0 {
        return Ok(());
    }
    let ratio = f.boundary_max_abs() / peak;
    if ratio > SUPPORT_TOL_REL {
        return Err(VpError::SupportAtBoundary {
            time: f.time(),
            ratio,
            tol: SUPPORT_TOL_REL,
        });
    }
    let floor = -NEGATIVITY_TOL_REL * peak;
    let min = f.min();
    if min < floor {
        return Err(VpError::NegativityExceeded {
            time: f.time(),
            min,
            floor,
        });
    }
    Ok(())
}

/// Signed phase-space integral by the grid trapezoid rule.
pub fn phase_integral(f: &DistributionField) -> f64 {
    spatial_integral(&f.velocity_average())
}

fn spatial_integral(s: &SpatialField) -> f64 {
    let dims = s.dims();
    let dim = dims.len();
    let per_axis: Vec<Vec<f64>> = s.axes().iter().map(|a| a.weights()).collect();
    let values = s.values();
    par::sum_indexed(values.len(), |idx| {
        let mut multi = [0usize; 3];
        unravel(idx, &dims, &mut multi[..dim]);
        let mut w = 1.0;
        for k in 0..dim {
            w *= per_axis[k][multi[k]];
        }
        w * values[idx]
    })
}

/// `dt * v_max / x_extent`, the fraction of the spatial box a grid-edge
/// velocity crosses per step. The splitting is stable at any value; beyond a
/// few tenths the midpoint field lags the motion and accuracy degrades.
pub fn cfl_ratio(grid: &PhaseGrid, dt: f64) -> f64 {
    let v_max = grid
        .v_axes()
        .iter()
        .map(|a| a.min.abs().max(a.max.abs()))
        .fold(0.0, f64::max);
    let x_extent = grid
        .x_axes()
        .iter()
        .map(|a| a.max - a.min)
        .fold(f64::INFINITY, f64::min);
    dt * v_max / x_extent
}

/// Tensor-product gather of the 4-node cubic stencil at `anchors` with
/// per-axis weights `w`; node index = `offset + scale * flat(x or v block)`.
fn gather(
    values: &[f64],
    st: &[usize],
    scale: usize,
    offset: usize,
    dim: usize,
    anchors: &[usize; 3],
    w: &[[f64; 4]; 3],
) -> f64 {
    let mut digits = [0usize; 3];
    let mut acc = 0.0;
    loop {
        let mut ww = 1.0;
        let mut flat = 0usize;
        for k in 0..dim {
            ww *= w[k][digits[k]];
            flat += (anchors[k] - 1 + digits[k]) * st[k];
        }
        acc += ww * values[offset + scale * flat];
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

fn axis_coords(axes: &[Axis]) -> (Vec<f64>, Vec<usize>) {
    let dims: Vec<usize> = axes.iter().map(|a| a.points).collect();
    let count: usize = dims.iter().product();
    let dim = axes.len();
    let mut coords = vec![0.0; count * dim];
    let mut multi = [0usize; 3];
    for i in 0..count {
        unravel(i, &dims, &mut multi[..dim]);
        for k in 0..dim {
            coords[i * dim + k] = axes[k].coord(multi[k]);
        }
    }
    (coords, dims)
}

/// `f(x, v) <- f(x - dt v, v)`: exact x-advection by cubic interpolation,
/// advancing the time label by `dt`. Feet outside the box pull in zeros.
pub(crate) fn shift_x(f: &DistributionField, dt: f64) -> DistributionField {
    let grid = f.grid();
    let dim = grid.dim();
    let x_axes = grid.x_axes().to_vec();
    let nv = grid.v_node_count();
    let (xc, x_dims) = axis_coords(&x_axes);
    let (vc, _) = axis_coords(grid.v_axes());
    let xst = strides(&x_dims);
    let values = f.values();
    let mut out = vec![0.0; values.len()];
    par::fill_indexed(&mut out, |idx| {
        let ix = idx / nv;
        let iv = idx % nv;
        let mut anchors = [0usize; 3];
        let mut w = [[0.0f64; 4]; 3];
        for k in 0..dim {
            let p = xc[ix * dim + k] - dt * vc[iv * dim + k];
            if !x_axes[k].contains(p) {
                return 0.0;
            }
            let u = (p - x_axes[k].min) / x_axes[k].spacing();
            let (a, theta) = stencil::cubic_anchor(u, x_axes[k].points);
            anchors[k] = a;
            w[k] = stencil::cubic_weights(theta);
        }
        gather(values, &xst, nv, iv, dim, &anchors, &w)
    });
    DistributionField::new(grid.clone(), f.time() + dt, out).expect("same grid")
}

/// `f(x, v) <- f(x, v - dt a(x))`: v-advection under the acceleration field
/// `a` (one component per spatial axis). The time label is unchanged; in the
/// splitting the force acts at a frozen intermediate time.
pub(crate) fn shift_v(f: &DistributionField, dt: f64, accel: &[SpatialField]) -> DistributionField {
    let grid = f.grid();
    let dim = grid.dim();
    let v_axes = grid.v_axes().to_vec();
    let nv = grid.v_node_count();
    let (vc, v_dims) = axis_coords(&v_axes);
    let vst = strides(&v_dims);
    let values = f.values();
    let mut out = vec![0.0; values.len()];
    par::fill_indexed(&mut out, |idx| {
        let ix = idx / nv;
        let iv = idx % nv;
        let mut anchors = [0usize; 3];
        let mut w = [[0.0f64; 4]; 3];
        for k in 0..dim {
            let p = vc[iv * dim + k] - dt * accel[k].values()[ix];
            if !v_axes[k].contains(p) {
                return 0.0;
            }
            let u = (p - v_axes[k].min) / v_axes[k].spacing();
            let (a, theta) = stencil::cubic_anchor(u, v_axes[k].points);
            anchors[k] = a;
            w[k] = stencil::cubic_weights(theta);
        }
        gather(values, &vst, 1, ix * nv, dim, &anchors, &w)
    });
    DistributionField::new(grid.clone(), f.time(), out).expect("same grid")
}

/// One Strang step of size `dt`. `dt = 0` returns the state unchanged. The
/// result carries a freshly solved field, and the step aborts if the support
/// or negativity budgets are exceeded.
pub fn step(state: &VPState, dt: f64, force: ForceMode) -> Result<VPState, VpError> {
    if !dt.is_finite() || dt < 0.0 {
        return Err(VpError::BadDt(dt));
    }
    if dt == 0.0 {
        return Ok(state.clone());
    }
    let half = shift_x(&state.f, 0.5 * dt);
    let pushed = match force {
        ForceMode::Off => half,
        ForceMode::SelfConsistent => {
            let mid = poisson::solve(&half.velocity_average())?;
            let accel: Vec<SpatialField> =
                mid.grad_phi.iter().map(|g| g.scale(-state.mu)).collect();
            shift_v(&half, dt, &accel)
        }
    };
    let f = shift_x(&pushed, 0.5 * dt);
    check_health(&f)?;
    let phi = poisson::solve(&f.velocity_average())?;
    Ok(VPState {
        time: f.time(),
        f,
        phi,
        mu: state.mu,
    })
}

/// Scalar health figures sampled along a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonitorRecord {
    pub step: usize,
    pub time: f64,
    pub mass: f64,
    pub l1_norm: f64,
    pub max_value: f64,
    pub min_value: f64,
    pub boundary_ratio: f64,
}

/// A completed run: states and scalar records at the sampling cadence
/// (always including step 0), plus the final state regardless of cadence.
#[derive(Debug, Clone)]
pub struct Evolution {
    pub states: Vec<VPState>,
    pub records: Vec<MonitorRecord>,
    pub final_state: VPState,
    pub cfl_ratio: f64,
    pub force: ForceMode,
}

pub(crate) fn record_of(state: &VPState, step: usize) -> MonitorRecord {
    let peak = state.f.max_abs();
    MonitorRecord {
        step,
        time: state.time,
        mass: state.mass(),
        l1_norm: state.f.lp_norm(1.0, 0.0).expect("p = 1 is valid"),
        max_value: peak,
        min_value: state.f.min(),
        boundary_ratio: if peak == 0.0 {
            0.0
        } else {
            state.f.boundary_max_abs() / peak
        },
    }
}

/// Repeated stepping to `t_end` with records every `sample_every` steps.
/// When `dt` does not divide the horizon a final shorter step lands exactly
/// on `t_end`; it contributes to `final_state` but not to the cadence.
pub fn evolve(
    initial: VPState,
    t_end: f64,
    dt: f64,
    force: ForceMode,
    sample_every: usize,
) -> Result<Evolution, VpError> {
    if !dt.is_finite() || dt <= 0.0 {
        return Err(VpError::BadDt(dt));
    }
    if sample_every == 0 {
        return Err(VpError::BadCadence);
    }
    if t_end < initial.time {
        return Err(VpError::BadHorizon {
            t_end,
            now: initial.time,
        });
    }
    let span = t_end - initial.time;
    let ratio = span / dt;
    let mut n_full = ratio.floor() as usize;
    if ratio - n_full as f64 > 1.0 - 1e-9 {
        n_full += 1;
    }
    let tail = span - n_full as f64 * dt;
    let cfl = cfl_ratio(initial.f.grid(), dt);
    let mut records = vec![record_of(&initial, 0)];
    let mut states = vec![initial.clone()];
    let mut cur = initial;
    for s in 1..=n_full {
        cur = step(&cur, dt, force)?;
        if s % sample_every == 0 {
            records.push(record_of(&cur, s));
            states.push(cur.clone());
        }
    }
    if tail > 1e-9 * dt {
        cur = step(&cur, tail, force)?;
    }
    Ok(Evolution {
        states,
        records,
        final_state: cur,
        cfl_ratio: cfl,
        force,
    })
}

/// The two-part weighted norm over all restricted words up to length `N`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormReport {
    pub n: usize,
    pub delta: f64,
    pub l1_part: f64,
    pub weighted_lp_part: f64,
    pub total: f64,
    /// Whether `delta < (n-2)/(n+2)`, the exponent window in which the
    /// elliptic estimates behind the norm scale close (empty below three
    /// dimensions).
    pub delta_within_range: bool,
    pub modified: bool,
}

/// Every word of length at most `max_len` over the restricted catalogue.
pub fn restricted_words(dim: usize, max_len: usize) -> Vec<OperatorWord> {
    let letters: Vec<FieldKind> = restricted_catalogue(dim, Flavor::Microscopic)
        .iter()
        .map(|id| id.kind)
        .collect();
    let mut out = vec![OperatorWord::empty(Flavor::Microscopic)];
    let mut layer: Vec<Vec<FieldKind>> = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::with_capacity(layer.len() * letters.len());
        for prefix in &layer {
            for &l in &letters {
                let mut kinds = prefix.clone();
                kinds.push(l);
                out.push(OperatorWord::from_kinds(Flavor::Microscopic, kinds.clone()));
                next.push(kinds);
            }
        }
        layer = next;
    }
    out
}

/// `E_{N,delta}[f]`: the sum over all restricted words of length at most `N`
/// of `||Z^a f||_{L^1}` plus the `(1+|v|^2)`-weighted `L^{1+delta}` norms,
/// with weight exponent `delta (delta + n) / (2 (1 + delta))`.
pub fn norm_e(f: &DistributionField, n_max: usize, delta: f64) -> Result<NormReport, VpError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(VpError::BadDelta(delta));
    }
    if n_max > MAX_NORM_DEPTH {
        return Err(VpError::WordTooDeep {
            got: n_max,
            limit: MAX_NORM_DEPTH,
        });
    }
    let dim = f.grid().dim();
    let p = 1.0 + delta;
    let q = delta * (delta + dim as f64) / p;
    let mut l1_part = 0.0;
    let mut weighted_lp_part = 0.0;
    for word in restricted_words(dim, n_max) {
        let g = apply_micro_word(&word, f, None)?;
        l1_part += g.lp_norm(1.0, 0.0)?;
        weighted_lp_part += g.lp_norm(p, q)?;
    }
    Ok(NormReport {
        n: n_max,
        delta,
        l1_part,
        weighted_lp_part,
        total: l1_part + weighted_lp_part,
        delta_within_range: delta < (dim as f64 - 2.0) / (dim as f64 + 2.0),
        modified: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConservationRow {
    pub time: f64,
    pub l1: f64,
    pub cumulative_source: f64,
}

/// `||Z^a f(t)||_{L^1}` against the accumulated commutator source
/// `integral ||[T_phi, Z^a] f||_{L^1} ds`: on exact solutions the left column
/// never exceeds the first value plus the right column.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConservationSeries {
    pub word: String,
    pub rows: Vec<ConservationRow>,
}

impl ConservationSeries {
    /// The inequality at every sample, with a relative slack for scheme error.
    pub fn holds_within(&self, rel_slack: f64) -> bool {
        let base = self.rows[0].l1;
        self.rows
            .iter()
            .all(|r| r.l1 <= base + r.cumulative_source + rel_slack * base.abs())
    }
}

fn commutator_source(
    terms: &[crate::vf::CommutatorTerm],
    state: &VPState,
) -> Result<Option<DistributionField>, VpError> {
    if terms.is_empty() {
        return Ok(None);
    }
    let pot = state.potential();
    Ok(Some(eval_expansion(terms, &pot, &state.f, state.mu)?))
}

/// Conservation-law tracking for one word along a sampled run. With the
/// force off the source side vanishes identically and only the left column
/// is populated (free streaming preserves it exactly in the continuum).
pub fn conservation_monitor(
    series: &[VPState],
    word: &OperatorWord,
    force: ForceMode,
) -> Result<ConservationSeries, VpError> {
    let first = series.first().ok_or(VpError::EmptySeries)?;
    if word.len() > MONITOR_WORD_LIMIT {
        return Err(VpError::WordTooDeep {
            got: word.len(),
            limit: MONITOR_WORD_LIMIT,
        });
    }
    let dim = first.f.grid().dim();
    let terms = match force {
        ForceMode::Off => Vec::new(),
        ForceMode::SelfConsistent => expand_T_phi_commutator(word, dim)?,
    };
    let mut rows = Vec::with_capacity(series.len());
    let mut cum = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    for state in series {
        let g = apply_micro_word(word, &state.f, None)?;
        let l1 = g.lp_norm(1.0, 0.0)?;
        let src = match commutator_source(&terms, state)? {
            Some(field) => field.lp_norm(1.0, 0.0)?,
            None => 0.0,
        };
        if let Some((t0, s0)) = prev {
            cum += 0.5 * (s0 + src) * (state.time - t0);
        }
        prev = Some((state.time, src));
        rows.push(ConservationRow {
            time: state.time,
            l1,
            cumulative_source: cum,
        });
    }
    Ok(ConservationSeries {
        word: word.to_string(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightedRow {
    pub time: f64,
    /// `integral (1+|v|^2)^{q/2} |Z^a f|^p dx dv` at this sample.
    pub weighted_lhs: f64,
    /// Accumulated `integral (1+|v|^2)^{(q-1)/2} |Z^a f|^{p-1} |T_phi(Z^a f)|`.
    pub transport_integral: f64,
    /// Accumulated `integral (1+|v|^2)^{(q-1)/2} |Z^a f|^p |grad phi|`.
    pub force_integral: f64,
}

/// The weighted conservation inequality tracked along a run: the left column
/// is bounded by its first value plus the two accumulated integrals, up to a
/// constant reported by [`Self::empirical_constant`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightedConservationSeries {
    pub word: String,
    pub p: f64,
    pub q: f64,
    pub rows: Vec<WeightedRow>,
}

impl WeightedConservationSeries {
    /// `max_t lhs(t) / (lhs(0) + integrals(t))`; 1 when both sides vanish.
    pub fn empirical_constant(&self) -> f64 {
        let base = self.rows[0].weighted_lhs;
        self.rows
            .iter()
            .map(|r| {
                let den = base + r.transport_integral + r.force_integral;
                if den == 0.0 {
                    if r.weighted_lhs == 0.0 {
                        1.0
                    } else {
                        f64::INFINITY
                    }
                } else {
                    r.weighted_lhs / den
                }
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

fn gradient_magnitude(res: &PoissonResult) -> SpatialField {
    let mut sq = res.grad_phi[0]
        .product(&res.grad_phi[0])
        .expect("components share axes");
    for g in &res.grad_phi[1..] {
        sq = sq
            .scaled_add(1.0, &g.product(g).expect("components share axes"))
            .expect("components share axes");
    }
    sq.map_nodes(|_, v| v.sqrt())
}

/// Weighted conservation tracking: evaluates the left side and the two
/// right-hand integrals for `g = Z^a f` at every sample. The transport term
/// uses the commutator expansion for `T_phi(g)`, which is exact on solutions.
pub fn weighted_conservation_monitor(
    series: &[VPState],
    word: &OperatorWord,
    p: f64,
    q: f64,
    force: ForceMode,
) -> Result<WeightedConservationSeries, VpError> {
    let first = series.first().ok_or(VpError::EmptySeries)?;
    if !(p >= 1.0) || !(q > 0.0) {
        return Err(VpError::BadExponents { p, q });
    }
    if word.len() > MONITOR_WORD_LIMIT {
        return Err(VpError::WordTooDeep {
            got: word.len(),
            limit: MONITOR_WORD_LIMIT,
        });
    }
    let dim = first.f.grid().dim();
    let terms = match force {
        ForceMode::Off => Vec::new(),
        ForceMode::SelfConsistent => expand_T_phi_commutator(word, dim)?,
    };
    let mut rows = Vec::with_capacity(series.len());
    let mut transport_integral = 0.0;
    let mut force_integral = 0.0;
    let mut prev: Option<(f64, f64, f64)> = None;
    for state in series {
        let g = apply_micro_word(word, &state.f, None)?;
        let g_pow = g.map_nodes(|_, _, val| val.abs().powf(p));
        let lhs = g_pow.lp_norm(1.0, q)?;
        let transport_rate = match commutator_source(&terms, state)? {
            Some(tg) => {
                let g_pow_m1 = g.map_nodes(|_, _, val| val.abs().powf(p - 1.0));
                g_pow_m1.product(&tg.abs())?.lp_norm(1.0, q - 1.0)?
            }
            None => 0.0,
        };
        let force_rate = match force {
            ForceMode::Off => 0.0,
            ForceMode::SelfConsistent => g_pow
                .spatial_product(&gradient_magnitude(&state.phi))?
                .lp_norm(1.0, q - 1.0)?,
        };
        if let Some((t0, tr0, fr0)) = prev {
            let dt = state.time - t0;
            transport_integral += 0.5 * (tr0 + transport_rate) * dt;
            force_integral += 0.5 * (fr0 + force_rate) * dt;
        }
        prev = Some((state.time, transport_rate, force_rate));
        rows.push(WeightedRow {
            time: state.time,
            weighted_lhs: lhs,
            transport_integral,
            force_integral,
        });
    }
    Ok(WeightedConservationSeries {
        word: word.to_string(),
        p,
        q,
        rows,
    })
}

/// Amplitude tracking for the norm scale along a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapReport {
    pub n: usize,
    pub delta: f64,
    pub epsilon: f64,
    pub series: Vec<(f64, f64)>,
    pub initial: f64,
    pub max: f64,
    /// `max_t E(t) / E(0)`, defined as 1 for vanishing data.
    pub ratio: f64,
    pub initial_within_epsilon: bool,
    /// Whether `E(t) <= 2 epsilon` held at every sample.
    pub factor_two_held: bool,
}

/// Evaluates `E_{N,delta}` at every sample and reports whether the
/// factor-two amplitude bound survived the run.
pub fn bootstrap_monitor(
    series: &[VPState],
    n_max: usize,
    delta: f64,
    epsilon: f64,
) -> Result<BootstrapReport, VpError> {
    if series.is_empty() {
        return Err(VpError::EmptySeries);
    }
    let mut points = Vec::with_capacity(series.len());
    for state in series {
        points.push((state.time, norm_e(&state.f, n_max, delta)?.total));
    }
    let initial = points[0].1;
    let max = points.iter().map(|&(_, e)| e).fold(f64::NEG_INFINITY, f64::max);
    Ok(BootstrapReport {
        n: n_max,
        delta,
        epsilon,
        initial,
        max,
        ratio: if initial == 0.0 { 1.0 } else { max / initial },
        initial_within_epsilon: initial <= epsilon,
        factor_two_held: points.iter().all(|&(_, e)| e <= 2.0 * epsilon),
        series: points,
    })
}

/// Reference 1D1V benchmark data: a separable Gaussian of peak amplitude
/// `epsilon` on `x in [-10, 10]`, `v in [-0.6, 0.6]`, 257 nodes per axis.
/// The widths (1.5 in `x`, 0.08 in `v`) keep the freely spreading support
/// inside the box through `t = 20` with margin below [`SUPPORT_TOL_REL`],
/// and keep the `v`-filamentation scale `~ width_x / t` resolved there.
pub fn benchmark_initial(epsilon: f64, mu: f64) -> Result<VPState, VpError> {
    let x = Axis::new(-10.0, 10.0, 257)?;
    let v = Axis::new(-0.6, 0.6, 257)?;
    let grid = PhaseGrid::new(vec![x], vec![v])?;
    let f0 = DistributionField::from_fn(grid, 0.0, move |x, v| {
        epsilon * (-(x[0] / 1.5).powi(2) - (v[0] / 0.08).powi(2)).exp()
    });
    VPState::new(f0, mu)
}

/// Benchmark step size.
pub const BENCHMARK_DT: f64 = 0.05;
/// Benchmark horizon.
pub const BENCHMARK_T_END: f64 = 20.0;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::free::FreeSolution;

    const PI: f64 = std::f64::consts::PI;

    /// Small test field: `amp * exp(-(x/xw)^2 - (v/vw)^2)` on given boxes.
    fn gaussian_state(
        x_half: f64,
        nx: usize,
        v_half: f64,
        nv: usize,
        xw: f64,
        vw: f64,
        amp: f64,
        mu: f64,
    ) -> VPState {
        let x = Axis::new(-x_half, x_half, nx).unwrap();
        let v = Axis::new(-v_half, v_half, nv).unwrap();
        let grid = PhaseGrid::new(vec![x], vec![v]).unwrap();
        let f0 = DistributionField::from_fn(grid, 0.0, move |x, v| {
            amp * (-(x[0] / xw).powi(2) - (v[0] / vw).powi(2)).exp()
        });
        VPState::new(f0, mu).unwrap()
    }

    fn max_diff(a: &DistributionField, b: &DistributionField) -> f64 {
        a.values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn rejects_bad_arguments() {
        let state = gaussian_state(6.0, 33, 2.0, 33, 1.0, 0.4, 1.0, 1.0);
        assert_eq!(
            VPState::new(state.f.clone(), 0.5).unwrap_err(),
            VpError::BadMu(0.5)
        );
        assert_eq!(
            step(&state, -0.1, ForceMode::Off).unwrap_err(),
            VpError::BadDt(-0.1)
        );
        assert_eq!(
            evolve(state.clone(), 1.0, 0.1, ForceMode::Off, 0).unwrap_err(),
            VpError::BadCadence
        );
        assert_eq!(
            evolve(state.clone(), -1.0, 0.1, ForceMode::Off, 1).unwrap_err(),
            VpError::BadHorizon {
                t_end: -1.0,
                now: 0.0
            }
        );
        assert_eq!(
            norm_e(&state.f, 1, 1.2).unwrap_err(),
            VpError::BadDelta(1.2)
        );
        assert_eq!(
            norm_e(&state.f, 9, 0.1).unwrap_err(),
            VpError::WordTooDeep { got: 9, limit: 4 }
        );
        let deep = OperatorWord::parse("U1 U1 U1", Flavor::Microscopic).unwrap();
        assert_eq!(
            conservation_monitor(&[state.clone()], &deep, ForceMode::Off).unwrap_err(),
            VpError::WordTooDeep { got: 3, limit: 2 }
        );
    }

    #[test]
    fn health_checks_abort_bad_data() {
        // Support touching the box.
        let x = Axis::new(-6.0, 6.0, 33).unwrap();
        let grid = PhaseGrid::isotropic(1, x.clone(), x.clone()).unwrap();
        let wide = DistributionField::from_fn(grid.clone(), 0.0, |x, v| {
            (-(x[0] / 5.0).powi(2) - (v[0] / 5.0).powi(2)).exp()
        });
        assert!(matches!(
            VPState::new(wide, 1.0),
            Err(VpError::SupportAtBoundary { .. })
        ));
        // A genuine negative dip well inside the box.
        let dipped = DistributionField::from_fn(grid, 0.0, |x, v| {
            let r2 = x[0] * x[0] + v[0] * v[0];
            let r = r2.sqrt();
            (-r2).exp() - 1e-2 * (-16.0 * (r - 2.5) * (r - 2.5)).exp()
        });
        assert!(matches!(
            VPState::new(dipped, 1.0),
            Err(VpError::NegativityExceeded { .. })
        ));
    }

    #[test]
    fn zero_time_step_is_the_identity() {
        let state = gaussian_state(6.0, 33, 2.0, 33, 1.0, 0.4, 1.0, 1.0);
        let next = step(&state, 0.0, ForceMode::SelfConsistent).unwrap();
        assert_eq!(next.f.values(), state.f.values());
        assert_eq!(next.time, state.time);
    }

    #[test]
    fn force_free_stepping_matches_exact_transport() {
        let state = gaussian_state(6.0, 129, 2.0, 65, 1.0, 0.4, 1.0 / PI, 1.0);
        let exact = FreeSolution::new(state.f.clone()).unwrap();
        let coarse = evolve(state.clone(), 1.0, 0.25, ForceMode::Off, 100).unwrap();
        let fine = evolve(state, 1.0, 0.125, ForceMode::Off, 100).unwrap();
        let reference = exact.sample(1.0);
        let e_coarse = max_diff(&coarse.final_state.f, &reference);
        let e_fine = max_diff(&fine.final_state.f, &reference);
        // Interpolation error only, accumulating at most linearly in the
        // number of steps (twice the steps, at most ~twice the error).
        assert!(e_coarse < 1e-4, "4-step error {e_coarse}");
        assert!(
            e_fine < 2.8 * e_coarse + 1e-12,
            "8 steps {e_fine} vs 4 steps {e_coarse}"
        );
    }

    #[test]
    fn state_invariants_survive_a_step() {
        let state = gaussian_state(6.0, 65, 2.0, 65, 1.0, 0.4, 0.1, -1.0);
        let next = step(&state, 0.1, ForceMode::SelfConsistent).unwrap();
        assert_eq!(next.time, next.f.time());
        assert_eq!(next.phi.phi.time(), next.time);
        // The stored field was solved from the stored distribution.
        let rho = next.f.velocity_average();
        assert_eq!(next.density().values(), rho.values());
        assert!(next.phi.residual_linf_rel < 1e-3);
    }

    #[test]
    fn acceleration_direction_follows_the_coupling_sign() {
        let attract = gaussian_state(8.0, 129, 1.5, 33, 1.0, 0.3, 1.0, -1.0);
        let repel = gaussian_state(8.0, 129, 1.5, 33, 1.0, 0.3, 1.0, 1.0);
        let ax_at = |state: &VPState, frac: f64| {
            let a = state.acceleration();
            let idx = (frac * (a[0].values().len() - 1) as f64) as usize;
            a[0].values()[idx]
        };
        // Node at x > 0: attraction pulls back toward the bump.
        assert!(ax_at(&attract, 0.75) < 0.0);
        assert!(ax_at(&attract, 0.25) > 0.0);
        assert!(ax_at(&repel, 0.75) > 0.0);
        assert!(ax_at(&repel, 0.25) < 0.0);
    }

    #[test]
    fn self_convergence_is_second_order_in_dt() {
        // Strong coupling, fine grids, and coarse rungs so the dt^2
        // splitting error dominates the per-step interpolation noise, which
        // accumulates with the step count and so grows as dt shrinks.
        let state = gaussian_state(8.0, 257, 3.0, 513, 1.5, 0.5, 0.6, -1.0);
        // A horizon every rung divides exactly: a shorter tail step would
        // break the clean dt -> dt/2 Richardson structure.
        let run = |dt: f64| {
            evolve(state.clone(), 0.8, dt, ForceMode::SelfConsistent, 1000)
                .unwrap()
                .final_state
                .f
        };
        let f1 = run(0.4);
        let f2 = run(0.2);
        let f3 = run(0.1);
        let e12 = max_diff(&f1, &f2);
        let e23 = max_diff(&f2, &f3);
        let order = (e12 / e23).log2();
        assert!(
            (1.8..=2.2).contains(&order),
            "order {order} from {e12} -> {e23}"
        );
    }

    #[test]
    fn mass_and_l1_stay_constant_over_a_hundred_steps() {
        let initial = benchmark_initial(1e-2, 1.0).unwrap();
        let run = evolve(
            initial,
            100.0 * BENCHMARK_DT,
            BENCHMARK_DT,
            ForceMode::SelfConsistent,
            100,
        )
        .unwrap();
        let first = &run.records[0];
        let last = record_of(&run.final_state, 100);
        let mass_drift = (last.mass - first.mass).abs() / first.mass;
        let l1_drift = (last.l1_norm - first.l1_norm).abs() / first.l1_norm;
        assert!(mass_drift < 1e-6, "mass drift {mass_drift}");
        assert!(l1_drift < 1e-6, "l1 drift {l1_drift}");
        assert!(run.cfl_ratio < 0.01);
    }

    #[test]
    fn evolve_cadence_and_tail_semantics() {
        // Fine enough in x that interpolation undershoot stays within the
        // negativity budget while stepping.
        let state = gaussian_state(6.0, 129, 2.0, 65, 1.0, 0.4, 1.0, 1.0);
        // Cadence beyond the horizon: the single step-zero record.
        let run = evolve(state.clone(), 1.0, 0.25, ForceMode::Off, 10).unwrap();
        assert_eq!(run.records.len(), 1);
        assert_eq!(run.states.len(), 1);
        // Horizon not a multiple of dt: a shorter tail step lands on it.
        let run = evolve(state.clone(), 0.9, 0.4, ForceMode::Off, 1).unwrap();
        assert!((run.final_state.time - 0.9).abs() < 1e-12);
        assert_eq!(run.records.len(), 3);
        // Zero horizon: the initial record only.
        let run = evolve(state, 0.0, 0.1, ForceMode::Off, 1).unwrap();
        assert_eq!(run.records.len(), 1);
        assert_eq!(run.final_state.time, 0.0);
    }

    #[test]
    fn zero_data_runs_report_zero_monitors() {
        let x = Axis::new(-6.0, 6.0, 33).unwrap();
        let grid = PhaseGrid::isotropic(1, x.clone(), x).unwrap();
        let zero = DistributionField::zeros(grid, 0.0);
        let state = VPState::new(zero, 1.0).unwrap();
        let run = evolve(state, 1.0, 0.5, ForceMode::SelfConsistent, 1).unwrap();
        for r in &run.records {
            assert_eq!(r.mass, 0.0);
            assert_eq!(r.l1_norm, 0.0);
            assert_eq!(r.max_value, 0.0);
        }
        let word = OperatorWord::parse("U1", Flavor::Microscopic).unwrap();
        let cons = conservation_monitor(&run.states, &word, ForceMode::SelfConsistent).unwrap();
        assert!(cons.rows.iter().all(|r| r.l1 == 0.0 && r.cumulative_source == 0.0));
        let weighted = weighted_conservation_monitor(
            &run.states,
            &word,
            1.5,
            1.0,
            ForceMode::SelfConsistent,
        )
        .unwrap();
        assert!(weighted
            .rows
            .iter()
            .all(|r| r.weighted_lhs == 0.0 && r.transport_integral == 0.0));
        assert_eq!(weighted.empirical_constant(), 1.0);
        let boot = bootstrap_monitor(&run.states, 1, 0.1, 1e-3).unwrap();
        assert_eq!(boot.ratio, 1.0);
        assert!(boot.factor_two_held);
    }

    #[test]
    fn norm_e_homogeneity_and_word_count() {
        let state = gaussian_state(6.0, 65, 2.0, 65, 1.0, 0.4, 0.3, 1.0);
        let one = norm_e(&state.f, 1, 0.2).unwrap();
        let three = norm_e(&state.f.scale(3.0), 1, 0.2).unwrap();
        assert!((three.total - 3.0 * one.total).abs() < 1e-10 * one.total);
        assert!(one.total > one.l1_part && one.total > one.weighted_lp_part);
        assert!((one.total - one.l1_part - one.weighted_lp_part).abs() < 1e-15 * one.total);
        // 1D restricted catalogue has three letters: 1 + 3 + 9 words.
        assert_eq!(restricted_words(1, 2).len(), 13);
        assert_eq!(restricted_words(2, 1).len(), 7);
        assert!(!one.delta_within_range);
        assert!(!one.modified);
    }

    #[test]
    fn norm_e_matches_a_separable_quadrature_oracle() {
        let x = Axis::new(-8.0, 8.0, 257).unwrap();
        let grid = PhaseGrid::isotropic(1, x.clone(), x).unwrap();
        let f = DistributionField::from_fn(grid, 0.0, |x, v| (-x[0] * x[0] - v[0] * v[0]).exp());
        let delta = 0.1;
        let p = 1.0 + delta;
        let q = delta * (delta + 1.0) / p;
        let report = norm_e(&f, 0, delta).unwrap();
        // l1: exact product of Gaussian integrals.
        let l1_oracle = PI;
        // weighted part: exact x factor, refined trapezoid for the v factor.
        let n = 2_000_001usize;
        let h = 16.0 / (n - 1) as f64;
        let mut iv = 0.0;
        for i in 0..n {
            let v = -8.0 + i as f64 * h;
            let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            iv += w * h * (1.0 + v * v).powf(0.5 * q * p) * (-p * v * v).exp();
        }
        let lp_oracle = ((PI / p).sqrt() * iv).powf(1.0 / p);
        assert!(
            (report.l1_part - l1_oracle).abs() < 1e-6 * l1_oracle,
            "l1 {} vs {}",
            report.l1_part,
            l1_oracle
        );
        assert!(
            (report.weighted_lp_part - lp_oracle).abs() < 1e-6 * lp_oracle,
            "lp {} vs {}",
            report.weighted_lp_part,
            lp_oracle
        );
    }

    /// Shared short forced run for the monitor tests.
    fn short_forced_run() -> Evolution {
        let x = Axis::new(-10.0, 10.0, 129).unwrap();
        let v = Axis::new(-0.6, 0.6, 129).unwrap();
        let grid = PhaseGrid::new(vec![x], vec![v]).unwrap();
        let f0 = DistributionField::from_fn(grid, 0.0, |x, v| {
            1e-2 * (-(x[0] / 1.5).powi(2) - (v[0] / 0.08).powi(2)).exp()
        });
        let state = VPState::new(f0, 1.0).unwrap();
        evolve(state, 2.0, 0.05, ForceMode::SelfConsistent, 8).unwrap()
    }

    #[test]
    fn conservation_monitor_free_and_forced() {
        let word = OperatorWord::parse("U1", Flavor::Microscopic).unwrap();
        // Free: left column constant, source identically zero.
        let state = gaussian_state(8.0, 129, 1.5, 65, 1.0, 0.3, 1.0 / PI, 1.0);
        let free_run = evolve(state, 2.0, 0.25, ForceMode::Off, 2).unwrap();
        let cons = conservation_monitor(&free_run.states, &word, ForceMode::Off).unwrap();
        let base = cons.rows[0].l1;
        for row in &cons.rows {
            assert!((row.l1 - base).abs() < 1e-3 * base, "l1 drifted: {row:?}");
            assert_eq!(row.cumulative_source, 0.0);
        }
        // Forced, empty word: T_phi f = 0, so the l1 norm is conserved to
        // scheme accuracy and the source column is empty.
        let run = short_forced_run();
        let empty = OperatorWord::empty(Flavor::Microscopic);
        let cons = conservation_monitor(&run.states, &empty, ForceMode::SelfConsistent).unwrap();
        let base = cons.rows[0].l1;
        for row in &cons.rows {
            assert!((row.l1 - base).abs() < 1e-6 * base);
            assert_eq!(row.cumulative_source, 0.0);
        }
        // Forced, one letter: the inequality holds at every sample.
        let cons = conservation_monitor(&run.states, &word, ForceMode::SelfConsistent).unwrap();
        assert!(cons.holds_within(1e-3), "{:?}", cons.rows.last());
        let last = cons.rows.last().unwrap();
        assert!(last.cumulative_source > 0.0);
    }

    #[test]
    fn weighted_monitor_free_and_forced() {
        let word = OperatorWord::parse("U1", Flavor::Microscopic).unwrap();
        // Force off, p = 1: the weighted l1 norm is simply conserved.
        let state = gaussian_state(8.0, 129, 1.5, 65, 1.0, 0.3, 1.0 / PI, 1.0);
        let free_run = evolve(state, 2.0, 0.25, ForceMode::Off, 2).unwrap();
        let series =
            weighted_conservation_monitor(&free_run.states, &word, 1.0, 2.0, ForceMode::Off)
                .unwrap();
        let base = series.rows[0].weighted_lhs;
        for row in &series.rows {
            assert!((row.weighted_lhs - base).abs() < 1e-3 * base);
            assert_eq!(row.transport_integral, 0.0);
            assert_eq!(row.force_integral, 0.0);
        }
        // Forced run with the exponent pairing of the norm scale.
        let run = short_forced_run();
        let delta = 0.3f64;
        let series = weighted_conservation_monitor(
            &run.states,
            &word,
            1.0 + delta,
            delta * (delta + 1.0),
            ForceMode::SelfConsistent,
        )
        .unwrap();
        let c = series.empirical_constant();
        assert!((0.9..=1.05).contains(&c), "empirical constant {c}");
        let last = series.rows.last().unwrap();
        assert!(last.transport_integral > 0.0);
        assert!(last.force_integral > 0.0);
    }

    #[test]
    fn bootstrap_monitor_free_and_forced() {
        // Free streaming conserves every norm in the scale.
        let state = gaussian_state(8.0, 129, 1.5, 65, 1.0, 0.3, 1e-3, 1.0);
        let eps = norm_e(&state.f, 1, 0.2).unwrap().total;
        let free_run = evolve(state, 2.0, 0.25, ForceMode::Off, 2).unwrap();
        let report = bootstrap_monitor(&free_run.states, 1, 0.2, eps).unwrap();
        assert!((report.ratio - 1.0).abs() < 1e-3, "ratio {}", report.ratio);
        assert!(report.factor_two_held);
        assert!(report.initial_within_epsilon);
        // Small-amplitude forced run: the factor-two bound survives.
        let run = short_forced_run();
        let eps = norm_e(&run.states[0].f, 1, 0.2).unwrap().total;
        let report = bootstrap_monitor(&run.states, 1, 0.2, eps).unwrap();
        assert!(report.ratio < 2.0, "ratio {}", report.ratio);
        assert!(report.factor_two_held);
        assert_eq!(report.series.len(), run.states.len());
    }
}
