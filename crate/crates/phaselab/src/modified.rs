//! Corrected vector fields for the forced transport operator.
//!
//! The plain catalogue commutes with free streaming but not with the full
//! operator `T_phi = d/dt + v . grad_x + mu grad_x(phi) . grad_v`. Each
//! restricted letter is therefore corrected by coefficient fields,
//!
//! ```text
//!   Y_i = U_i - sum_k Phi_i^k d/dx^k,
//! ```
//!
//! and likewise for rotations, the spatial scaling, and the space-time
//! scaling, where the coefficients solve the same forced transport equation
//! as `f` with a prescribed source and zero data at the start of the run:
//!
//! ```text
//!   T_phi(Phi_i^k)    = mu t d/dx^k [ U_i(phi) ],
//!   T_phi(omega_ij^k) = mu t d/dx^k [ R_ij(phi) ],
//!   T_phi(sigma^k)    = mu t d/dx^k [ S(phi) - 2 phi ],
//!   T_phi(theta^k)    = mu t d/dx^k [ L(phi) ],
//! ```
//!
//! with the macroscopic letters acting on the potential. The scaling source
//! carries the extra `-2 phi` because the velocity half of the scaling letter
//! also strikes the coupling; the space-time source needs `d phi/dt`, which
//! is recovered from the continuity identity `d rho/dt = -div_x j` rather
//! than from time differencing.
//!
//! With the corrections in place, commuting `T_phi` past `Y_i` leaves only
//! second-gradient terms of the potential; without them the commutator keeps
//! a term `mu t d/dx^j(U_i phi) d/dx^j f` that grows with `t`. Both effects
//! are measurable through [`improved_commutation_residual`].

use crate::field::{AxisId, DistributionField, SpatialField};
use crate::grid::{GridError, PhaseGrid};
use crate::par;
use crate::poisson::{self, PoissonError};
use crate::vf::{
    apply_macro, apply_micro_word_jet, FieldId, FieldKind, Flavor, OperatorWord, VfError,
};
use crate::vp::{self, Evolution, ForceMode, NormReport, VPState, VpError};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModError {
    #[error("coefficients are stamped t = {set} but the field carries t = {field}")]
    TimeMismatch { field: f64, set: f64 },
    #[error("coefficients are {set}-dimensional but the grid is {grid}-dimensional")]
    DimMismatch { set: usize, grid: usize },
    #[error("letter {0} differentiates in time and has no corrected application")]
    UnsupportedLetter(String),
    #[error("need at least {need} aligned samples, got {got}")]
    ShortSeries { need: usize, got: usize },
    #[error("state and coefficient series disagree in length, times, or spacing")]
    MismatchedSeries,
    #[error(transparent)]
    Vf(#[from] VfError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Poisson(#[from] PoissonError),
    #[error(transparent)]
    Vp(#[from] VpError),
}

/// Ordered index pairs `(i, j)`, `i < j`, in the rotation-letter order.
pub fn rotation_pairs(dim: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(dim * dim.saturating_sub(1) / 2);
    for i in 0..dim {
        for j in i + 1..dim {
            out.push((i, j));
        }
    }
    out
}

fn pair_index(dim: usize, i: usize, j: usize) -> Option<usize> {
    rotation_pairs(dim).iter().position(|&p| p == (i, j))
}

/// The correction coefficients of every restricted letter at one instant.
///
/// All entries are phase-space fields on the same grid with equal time
/// stamps; a freshly created set is identically zero. Layout: the field at
/// `uniform[i * dim + k]` multiplies `-d/dx^k` in the corrected uniform
/// motion `i`; `rotation[p * dim + k]` does the same for the `p`-th ordered
/// pair of [`rotation_pairs`]; `scaling` and `spacetime` hold one field per
/// spatial axis for the two scaling letters. Coefficients of the reversed
/// rotation pair are the negatives of the stored ones, matching the
/// antisymmetry of the rotation letters themselves.
#[derive(Debug, Clone)]
pub struct CoefficientSet {
    dim: usize,
    time: f64,
    uniform: Vec<DistributionField>,
    rotation: Vec<DistributionField>,
    scaling: Vec<DistributionField>,
    spacetime: Vec<DistributionField>,
}

impl CoefficientSet {
    /// The zero set: exact initial data for the coefficient equations.
    pub fn zeros(grid: &PhaseGrid, time: f64) -> CoefficientSet {
        let dim = grid.dim();
        let zero = DistributionField::zeros(grid.clone(), time);
        CoefficientSet {
            dim,
            time,
            uniform: vec![zero.clone(); dim * dim],
            rotation: vec![zero.clone(); rotation_pairs(dim).len() * dim],
            scaling: vec![zero.clone(); dim],
            spacetime: vec![zero; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// Coefficient of `-d/dx^k` in the corrected uniform motion `i`.
    pub fn uniform(&self, i: usize, k: usize) -> &DistributionField {
        &self.uniform[i * self.dim + k]
    }

    /// Coefficient of `-d/dx^k` in the corrected rotation `(i, j)`, `i < j`.
    pub fn rotation(&self, i: usize, j: usize, k: usize) -> &DistributionField {
        let p = pair_index(self.dim, i, j).expect("ordered pair inside the dimension");
        &self.rotation[p * self.dim + k]
    }

    /// Coefficient of `-d/dx^k` in the corrected spatial scaling.
    pub fn scaling(&self, k: usize) -> &DistributionField {
        &self.scaling[k]
    }

    /// Coefficient of `-d/dx^k` in the corrected space-time scaling.
    pub fn spacetime(&self, k: usize) -> &DistributionField {
        &self.spacetime[k]
    }

    fn fields(&self) -> impl Iterator<Item = &DistributionField> {
        self.uniform
            .iter()
            .chain(&self.rotation)
            .chain(&self.scaling)
            .chain(&self.spacetime)
    }
}

/// Spatial source fields driving each coefficient, in the layout of
/// [`CoefficientSet`].
#[derive(Debug, Clone)]
pub struct CoefficientSources {
    dim: usize,
    time: f64,
    uniform: Vec<SpatialField>,
    rotation: Vec<SpatialField>,
    scaling: Vec<SpatialField>,
    spacetime: Vec<SpatialField>,
}

impl CoefficientSources {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn uniform(&self, i: usize, k: usize) -> &SpatialField {
        &self.uniform[i * self.dim + k]
    }

    pub fn rotation(&self, i: usize, j: usize, k: usize) -> &SpatialField {
        let p = pair_index(self.dim, i, j).expect("ordered pair inside the dimension");
        &self.rotation[p * self.dim + k]
    }

    pub fn scaling(&self, k: usize) -> &SpatialField {
        &self.scaling[k]
    }

    pub fn spacetime(&self, k: usize) -> &SpatialField {
        &self.spacetime[k]
    }
}

/// `d phi/dt` in the transport sign convention, from the continuity identity:
/// the density of a transported `f` obeys `d rho/dt = -div_x j` with
/// `j_k = integral v_k f dv`, so the time derivative of the potential solves
/// the field equation with source `-div_x j`.
pub fn continuity_dphi_dt(f: &DistributionField) -> Result<SpatialField, ModError> {
    let dim = f.grid().dim();
    let mut div: Option<SpatialField> = None;
    for k in 0..dim {
        let jk = f.velocity_moment(|v| v[k]);
        let d = jk.partial(k)?;
        div = Some(match div {
            Some(acc) => acc.scaled_add(1.0, &d)?,
            None => d,
        });
    }
    let div = div.expect("at least one spatial axis");
    Ok(poisson::solve(&div.scale(-1.0))?.phi.scale(-1.0))
}

/// Evaluates every coefficient source from a potential snapshot and its time
/// derivative (needed only by the space-time scaling). `phi` must be in the
/// transport sign convention, as returned by [`VPState::potential`]; the time
/// stamp of `phi` supplies the `t` factors.
pub fn sources_from_potential(
    phi: &SpatialField,
    dphi_dt: &SpatialField,
    mu: f64,
) -> Result<CoefficientSources, ModError> {
    let dim = phi.dim();
    let t = phi.time();
    let macro_letter = |kind: FieldKind| FieldId::macroscopic(kind);

    let mut uniform = Vec::with_capacity(dim * dim);
    for i in 0..dim {
        let zi = apply_macro(macro_letter(FieldKind::UniformMotion(i)), phi, None)?;
        for k in 0..dim {
            uniform.push(zi.partial(k)?.scale(mu * t));
        }
    }

    let pairs = rotation_pairs(dim);
    let mut rotation = Vec::with_capacity(pairs.len() * dim);
    for &(i, j) in &pairs {
        let om = apply_macro(macro_letter(FieldKind::Rotation(i, j)), phi, None)?;
        for k in 0..dim {
            rotation.push(om.partial(k)?.scale(mu * t));
        }
    }

    let sx = apply_macro(macro_letter(FieldKind::SpatialScaling), phi, None)?;
    let inner = sx.scaled_add(-2.0, phi)?;
    let mut scaling = Vec::with_capacity(dim);
    for k in 0..dim {
        scaling.push(inner.partial(k)?.scale(mu * t));
    }

    let lphi = apply_macro(macro_letter(FieldKind::SpaceTimeScaling), phi, Some(dphi_dt))?;
    let mut spacetime = Vec::with_capacity(dim);
    for k in 0..dim {
        spacetime.push(lphi.partial(k)?.scale(mu * t));
    }

    Ok(CoefficientSources {
        dim,
        time: t,
        uniform,
        rotation,
        scaling,
        spacetime,
    })
}

/// Coefficient sources of a self-consistent state: the potential comes from
/// the state's own field solve and `d phi/dt` from [`continuity_dphi_dt`].
pub fn coefficient_sources(state: &VPState) -> Result<CoefficientSources, ModError> {
    let pot = state.potential();
    let dphi = continuity_dphi_dt(&state.f)?;
    sources_from_potential(&pot, &dphi, state.mu)
}

/// `u + c * s` with the spatial field broadcast over velocities.
fn broadcast_add(
    u: &DistributionField,
    c: f64,
    s: &SpatialField,
) -> Result<DistributionField, ModError> {
    if s.axes() != u.grid().x_axes() {
        return Err(GridError::Incompatible.into());
    }
    let nv = u.grid().v_node_count();
    let sv = s.values();
    let mut out = u.clone();
    par::zip_map(u.values(), out.values_mut(), |idx, val| {
        val + c * sv[idx / nv]
    });
    Ok(out)
}

/// One splitting step of the coefficient equation: the same half-shift /
/// kick / half-shift as the distribution, with the source integrated by the
/// midpoint rule (Duhamel). `kick` carries the acceleration and the source
/// evaluated at the interval midpoint; `None` advects freely with no source.
fn coefficient_step(
    u: &DistributionField,
    dt: f64,
    kick: Option<(&[SpatialField], &SpatialField)>,
) -> Result<DistributionField, ModError> {
    let mut cur = vp::shift_x(u, 0.5 * dt);
    if let Some((accel, src)) = kick {
        cur = vp::shift_v(&cur, dt, accel);
        cur = broadcast_add(&cur, dt, src)?;
    }
    Ok(vp::shift_x(&cur, 0.5 * dt))
}

fn advance_family(
    fields: &[DistributionField],
    dt: f64,
    kick: Option<(&[SpatialField], &[SpatialField])>,
) -> Result<Vec<DistributionField>, ModError> {
    let mut out = Vec::with_capacity(fields.len());
    for (idx, u) in fields.iter().enumerate() {
        out.push(coefficient_step(
            u,
            dt,
            kick.map(|(accel, srcs)| (accel, &srcs[idx])),
        )?);
    }
    Ok(out)
}

/// The coefficient half of a joint run, aligned sample-for-sample with the
/// [`Evolution`] it was produced with.
#[derive(Debug, Clone)]
pub struct CoefficientRun {
    pub sets: Vec<CoefficientSet>,
    pub final_set: CoefficientSet,
}

fn joint_step(
    state: &VPState,
    set: &CoefficientSet,
    dt: f64,
    force: ForceMode,
) -> Result<(VPState, CoefficientSet), ModError> {
    let half = vp::shift_x(&state.f, 0.5 * dt);
    let (pushed, uniform, rotation, scaling, spacetime) = match force {
        ForceMode::Off => (
            half,
            advance_family(&set.uniform, dt, None)?,
            advance_family(&set.rotation, dt, None)?,
            advance_family(&set.scaling, dt, None)?,
            advance_family(&set.spacetime, dt, None)?,
        ),
        ForceMode::SelfConsistent => {
            let mid = poisson::solve(&half.velocity_average())?;
            let accel: Vec<SpatialField> =
                mid.grad_phi.iter().map(|g| g.scale(-state.mu)).collect();
            let phi_mid = mid.phi.scale(-1.0);
            let dphi_mid = continuity_dphi_dt(&half)?;
            let srcs = sources_from_potential(&phi_mid, &dphi_mid, state.mu)?;
            (
                vp::shift_v(&half, dt, &accel),
                advance_family(&set.uniform, dt, Some((&accel, &srcs.uniform)))?,
                advance_family(&set.rotation, dt, Some((&accel, &srcs.rotation)))?,
                advance_family(&set.scaling, dt, Some((&accel, &srcs.scaling)))?,
                advance_family(&set.spacetime, dt, Some((&accel, &srcs.spacetime)))?,
            )
        }
    };
    let f = vp::shift_x(&pushed, 0.5 * dt);
    vp::check_health(&f)?;
    let phi = poisson::solve(&f.velocity_average())?;
    let time = uniform[0].time();
    Ok((
        VPState {
            time: f.time(),
            f,
            phi,
            mu: state.mu,
        },
        CoefficientSet {
            dim: set.dim,
            time,
            uniform,
            rotation,
            scaling,
            spacetime,
        },
    ))
}

/// [`vp::evolve`] with the coefficient equations advanced in lockstep: every
/// step recomputes the midpoint field once and feeds it to both the
/// distribution kick and the coefficient sources. The returned coefficient
/// samples share the cadence of the evolution samples (the tail step, when
/// present, contributes only to the final pair). Health gates act on the
/// distribution alone; the coefficients genuinely fill the velocity box and
/// are truncated consistently at the spatial boundary, where the inflowing
/// characteristics carry their true zero values.
pub fn evolve_coefficients(
    initial: VPState,
    t_end: f64,
    dt: f64,
    force: ForceMode,
    sample_every: usize,
) -> Result<(Evolution, CoefficientRun), ModError> {
    if !dt.is_finite() || dt <= 0.0 {
        return Err(VpError::BadDt(dt).into());
    }
    if sample_every == 0 {
        return Err(VpError::BadCadence.into());
    }
    if t_end < initial.time {
        return Err(VpError::BadHorizon {
            t_end,
            now: initial.time,
        }
        .into());
    }
    let span = t_end - initial.time;
    let ratio = span / dt;
    let mut n_full = ratio.floor() as usize;
    if ratio - n_full as f64 > 1.0 - 1e-9 {
        n_full += 1;
    }
    let tail = span - n_full as f64 * dt;
    let cfl = vp::cfl_ratio(initial.f.grid(), dt);
    let mut coeff = CoefficientSet::zeros(initial.f.grid(), initial.time);
    let mut records = vec![vp::record_of(&initial, 0)];
    let mut states = vec![initial.clone()];
    let mut sets = vec![coeff.clone()];
    let mut cur = initial;
    for s in 1..=n_full {
        let (next, next_coeff) = joint_step(&cur, &coeff, dt, force)?;
        cur = next;
        coeff = next_coeff;
        if s % sample_every == 0 {
            records.push(vp::record_of(&cur, s));
            states.push(cur.clone());
            sets.push(coeff.clone());
        }
    }
    if tail > 1e-9 * dt {
        let (next, next_coeff) = joint_step(&cur, &coeff, tail, force)?;
        cur = next;
        coeff = next_coeff;
    }
    Ok((
        Evolution {
            states,
            records,
            final_state: cur,
            cfl_ratio: cfl,
            force,
        },
        CoefficientRun {
            sets,
            final_set: coeff,
        },
    ))
}

/// A restricted word whose letters act in corrected form, bound to the
/// coefficient set that defines the corrections.
#[derive(Debug, Clone)]
pub struct ModifiedWord<'a> {
    word: OperatorWord,
    coefficients: &'a CoefficientSet,
}

impl<'a> ModifiedWord<'a> {
    pub fn new(word: OperatorWord, coefficients: &'a CoefficientSet) -> Result<Self, ModError> {
        if !word.is_empty() && word.flavor() != Flavor::Microscopic {
            return Err(VfError::FlavorMismatch("microscopic").into());
        }
        for &kind in word.kinds() {
            if matches!(
                kind,
                FieldKind::TimeTranslation | FieldKind::SpaceTimeScaling
            ) {
                return Err(ModError::UnsupportedLetter(kind.to_string()));
            }
            kind.check_dim(coefficients.dim)?;
        }
        Ok(ModifiedWord { word, coefficients })
    }

    pub fn word(&self) -> &OperatorWord {
        &self.word
    }

    pub fn coefficients(&self) -> &CoefficientSet {
        self.coefficients
    }

    pub fn apply(&self, f: &DistributionField) -> Result<DistributionField, ModError> {
        apply_modified(&self.word, f, self.coefficients)
    }
}

fn plain_letter(kind: FieldKind, g: &DistributionField) -> Result<DistributionField, ModError> {
    let word = OperatorWord::from_kinds(Flavor::Microscopic, vec![kind]);
    let (value, _) = apply_micro_word_jet(&word, g, None)?;
    Ok(value)
}

fn corrected_letter(
    kind: FieldKind,
    g: &DistributionField,
    set: &CoefficientSet,
) -> Result<DistributionField, ModError> {
    let coefs: &[DistributionField] = match kind {
        FieldKind::SpaceTranslation(_) => return plain_letter(kind, g),
        FieldKind::UniformMotion(i) => &set.uniform[i * set.dim..(i + 1) * set.dim],
        FieldKind::Rotation(i, j) => {
            let p = pair_index(set.dim, i, j)
                .ok_or_else(|| ModError::UnsupportedLetter(kind.to_string()))?;
            &set.rotation[p * set.dim..(p + 1) * set.dim]
        }
        FieldKind::SpatialScaling => &set.scaling,
        FieldKind::TimeTranslation | FieldKind::SpaceTimeScaling => {
            return Err(ModError::UnsupportedLetter(kind.to_string()))
        }
    };
    let mut out = plain_letter(kind, g)?;
    for (k, coef) in coefs.iter().enumerate() {
        let dxk = g.partial(AxisId::X(k))?;
        out = out.scaled_add(-1.0, &coef.product(&dxk)?)?;
    }
    Ok(out)
}

/// Applies a word letter-by-letter (last letter first) with every letter in
/// corrected form. Space translations coincide with their plain versions;
/// the two time-differentiating letters are rejected, since a snapshot
/// carries no time jet.
pub fn apply_modified(
    word: &OperatorWord,
    f: &DistributionField,
    set: &CoefficientSet,
) -> Result<DistributionField, ModError> {
    if !word.is_empty() && word.flavor() != Flavor::Microscopic {
        return Err(VfError::FlavorMismatch("microscopic").into());
    }
    word.check_dim(f.grid().dim())?;
    if set.dim != f.grid().dim() {
        return Err(ModError::DimMismatch {
            set: set.dim,
            grid: f.grid().dim(),
        });
    }
    if set.time != f.time() {
        return Err(ModError::TimeMismatch {
            field: f.time(),
            set: set.time,
        });
    }
    let mut cur = f.clone();
    for &kind in word.kinds().iter().rev() {
        cur = corrected_letter(kind, &cur, set)?;
    }
    Ok(cur)
}

/// [`vp::norm_e`] with every word applied in corrected form.
pub fn norm_e_modified(
    f: &DistributionField,
    set: &CoefficientSet,
    n_max: usize,
    delta: f64,
) -> Result<NormReport, ModError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(VpError::BadDelta(delta).into());
    }
    if n_max > vp::MAX_NORM_DEPTH {
        return Err(VpError::WordTooDeep {
            got: n_max,
            limit: vp::MAX_NORM_DEPTH,
        }
        .into());
    }
    let dim = f.grid().dim();
    let p = 1.0 + delta;
    let q = delta * (delta + dim as f64) / p;
    let mut l1_part = 0.0;
    let mut weighted_lp_part = 0.0;
    for word in vp::restricted_words(dim, n_max) {
        let g = apply_modified(&word, f, set)?;
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
        modified: true,
    })
}

/// One interior sample of the commutation probe.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommutationRow {
    pub time: f64,
    /// `|| T_phi(Y_i f) - rhs ||_{L^1}` with the two curvature sums as `rhs`.
    pub residual_l1: f64,
    /// `|| mu t^2 sum_j d_j d_i(phi) d/dx^j f ||_{L^1}`, the term the
    /// correction removes; reported in both modes for scale.
    pub bad_term_l1: f64,
}

/// Measures how well the corrected uniform motion commutes with the
/// transport operator along a run, at every interior sample.
///
/// The time derivative of `f` is eliminated through the equation itself
/// (`d f/dt := -v . grad_x f - mu grad phi . grad_v f`), so the measured left
/// side is exactly `T_phi(Y_direction f)`; the time derivatives of the
/// coefficients are *not* eliminated but taken from centered differences of
/// the sampled series, which keeps the probe sensitive to whether the
/// coefficients actually solve their equations. The right side holds the two
/// second-gradient sums of the exact commutator. With `keep_correction`
/// false the plain letter is used and the right side keeps only its first
/// sum, so the residual reproduces the growing term reported in
/// `bad_term_l1`.
///
/// Requires at least three uniformly spaced samples (run the producing
/// evolution at cadence 1 with `dt` dividing the horizon).
pub fn improved_commutation_residual(
    evo: &Evolution,
    run: &CoefficientRun,
    direction: usize,
    keep_correction: bool,
) -> Result<Vec<CommutationRow>, ModError> {
    let n = evo.states.len();
    if n != run.sets.len() {
        return Err(ModError::MismatchedSeries);
    }
    if n < 3 {
        return Err(ModError::ShortSeries { need: 3, got: n });
    }
    for (state, set) in evo.states.iter().zip(&run.sets) {
        if state.time != set.time {
            return Err(ModError::MismatchedSeries);
        }
    }
    let gap = evo.states[1].time - evo.states[0].time;
    for w in evo.states.windows(2) {
        if ((w[1].time - w[0].time) - gap).abs() > 1e-9 * gap.abs().max(1.0) {
            return Err(ModError::MismatchedSeries);
        }
    }
    let dim = evo.states[0].f.grid().dim();
    FieldKind::UniformMotion(direction).check_dim(dim)?;
    let forced = matches!(evo.force, ForceMode::SelfConsistent);

    let mut rows = Vec::with_capacity(n - 2);
    for m in 1..n - 1 {
        let state = &evo.states[m];
        let set = &run.sets[m];
        let t = state.time;
        let f = &state.f;

        let xf: Vec<DistributionField> = (0..dim)
            .map(|k| f.partial(AxisId::X(k)))
            .collect::<Result<_, _>>()?;
        let vf: Vec<DistributionField> = (0..dim)
            .map(|k| f.partial(AxisId::V(k)))
            .collect::<Result<_, _>>()?;
        let grad_phi: Vec<SpatialField> = (0..dim)
            .map(|k| state.phi.grad_phi[k].scale(-1.0))
            .collect();

        let mut ft = DistributionField::zeros(f.grid().clone(), t);
        for k in 0..dim {
            ft = ft.scaled_add(-1.0, &xf[k].coordinate_product(AxisId::V(k))?)?;
            if forced {
                ft = ft.scaled_add(-state.mu, &vf[k].spatial_product(&grad_phi[k])?)?;
            }
        }

        let word = OperatorWord::from_kinds(
            Flavor::Microscopic,
            vec![FieldKind::UniformMotion(direction)],
        );
        let (mut h, ht) = apply_micro_word_jet(&word, f, Some(&ft))?;
        let mut ht = ht.expect("the jet survives a non-time letter");
        if keep_correction {
            let span = evo.states[m + 1].time - evo.states[m - 1].time;
            for k in 0..dim {
                let coef = set.uniform(direction, k);
                let coef_t = run.sets[m + 1]
                    .uniform(direction, k)
                    .scaled_add(-1.0, run.sets[m - 1].uniform(direction, k))?
                    .scale(1.0 / span);
                h = h.scaled_add(-1.0, &coef.product(&xf[k])?)?;
                ht = ht
                    .scaled_add(-1.0, &coef_t.product(&xf[k])?)?
                    .scaled_add(-1.0, &coef.product(&ft.partial(AxisId::X(k))?)?)?;
            }
        }

        let mut lhs = ht;
        for k in 0..dim {
            lhs = lhs.scaled_add(1.0, &h.partial(AxisId::X(k))?.coordinate_product(AxisId::V(k))?)?;
            if forced {
                lhs = lhs.scaled_add(
                    state.mu,
                    &h.partial(AxisId::V(k))?.spatial_product(&grad_phi[k])?,
                )?;
            }
        }

        let mut rhs = DistributionField::zeros(f.grid().clone(), t);
        let mut bad = DistributionField::zeros(f.grid().clone(), t);
        if forced {
            let phi_std = state.potential();
            for j in 0..dim {
                let dj = phi_std.partial(j)?;
                let dji = dj.partial(direction)?;
                let uj = vf[j].scaled_add(t, &xf[j])?;
                rhs = rhs.scaled_add(-state.mu, &uj.spatial_product(&dji.scale(t))?)?;
                bad = bad.scaled_add(state.mu, &xf[j].spatial_product(&dji.scale(t * t))?)?;
                if keep_correction {
                    let mut inner = DistributionField::zeros(f.grid().clone(), t);
                    for k in 0..dim {
                        inner = inner.scaled_add(1.0, &vf[k].spatial_product(&dj.partial(k)?)?)?;
                    }
                    rhs = rhs.scaled_add(
                        state.mu,
                        &set.uniform(direction, j).product(&inner)?,
                    )?;
                }
            }
        }

        rows.push(CommutationRow {
            time: t,
            residual_l1: lhs.scaled_add(-1.0, &rhs)?.lp_norm(1.0, 0.0)?,
            bad_term_l1: bad.lp_norm(1.0, 0.0)?,
        });
    }
    Ok(rows)
}

/// One sample of the weighted decay probe.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KsRow {
    pub time: f64,
    /// `sup_x rho(|Y^word f|)(t, x) (1 + t + |x|)^n`.
    pub sup: f64,
}

/// The dispersive-decay probe under corrected words: velocity averages of
/// `|Y^word f|` weighted by `(1 + t + |x|)^n` must stay bounded along a run.
/// With zero coefficients this reduces to the plain free-streaming
/// diagnostic.
pub fn modified_ks_decay(
    fields: &[DistributionField],
    sets: &[CoefficientSet],
    word: &OperatorWord,
) -> Result<Vec<KsRow>, ModError> {
    if fields.len() != sets.len() {
        return Err(ModError::MismatchedSeries);
    }
    let mut rows = Vec::with_capacity(fields.len());
    for (f, set) in fields.iter().zip(sets) {
        let g = apply_modified(word, f, set)?;
        let n = f.grid().dim() as i32;
        let t = f.time();
        let weighted = g.abs().velocity_average().map_nodes(|x, val| {
            let r = x.iter().map(|c| c * c).sum::<f64>().sqrt();
            val * (1.0 + t + r).powi(n)
        });
        rows.push(KsRow {
            time: t,
            sup: weighted.max_abs(),
        });
    }
    Ok(rows)
}

/// One sample of the coefficient-size series.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthRow {
    pub time: f64,
    /// Largest `sup |Phi_i^k|` over the uniform-motion coefficients.
    pub sup_uniform: f64,
    /// Largest `sup |d/dx^l Phi_i^k|` over coefficients and axes.
    pub sup_dx_uniform: f64,
}

/// Size of the uniform-motion coefficients and their spatial gradients along
/// a sampled run, the raw material for growth-law fits.
pub fn coefficient_growth_series(sets: &[CoefficientSet]) -> Result<Vec<GrowthRow>, ModError> {
    let mut rows = Vec::with_capacity(sets.len());
    for set in sets {
        let mut sup = 0.0f64;
        let mut sup_dx = 0.0f64;
        for c in &set.uniform {
            sup = sup.max(c.max_abs());
            for l in 0..set.dim {
                sup_dx = sup_dx.max(c.partial(AxisId::X(l))?.max_abs());
            }
        }
        rows.push(GrowthRow {
            time: set.time,
            sup_uniform: sup,
            sup_dx_uniform: sup_dx,
        });
    }
    Ok(rows)
}
