//! Numeric application of catalogue fields and words to grid fields.
//!
//! Letters that differentiate in time (`Dt`, `L`) are never evaluated with
//! time stencils. The caller supplies the time derivative of the input field
//! (obtained from the evolution equation), and word application propagates
//! it as a jet `(g, dg/dt)`: each non-time letter updates both components,
//! with the correction `[d/dt, t d/dx_i] = d/dx_i` accounted for in the
//! uniform motions.

use super::{FieldId, FieldKind, Flavor, OperatorWord, VfError};
use crate::field::{AxisId, DistributionField, SpatialField};
use crate::par;

/// Value of a non-time microscopic letter on a phase-space field.
fn micro_value(kind: FieldKind, g: &DistributionField) -> Result<DistributionField, VfError> {
    let t = g.time();
    match kind {
        FieldKind::SpaceTranslation(i) => Ok(g.partial(AxisId::X(i))?),
        FieldKind::UniformMotion(i) => {
            let px = g.partial(AxisId::X(i))?;
            Ok(g.partial(AxisId::V(i))?.scaled_add(t, &px)?)
        }
        FieldKind::Rotation(i, j) => {
            let a = g.partial(AxisId::X(j))?.coordinate_product(AxisId::X(i))?;
            let b = g.partial(AxisId::X(i))?.coordinate_product(AxisId::X(j))?;
            let c = g.partial(AxisId::V(j))?.coordinate_product(AxisId::V(i))?;
            let d = g.partial(AxisId::V(i))?.coordinate_product(AxisId::V(j))?;
            Ok(a.scaled_add(-1.0, &b)?.scaled_add(1.0, &c)?.scaled_add(-1.0, &d)?)
        }
        FieldKind::SpatialScaling => {
            let dim = g.grid().dim();
            let mut out = DistributionField::zeros(g.grid().clone(), t);
            for k in 0..dim {
                let sx = g.partial(AxisId::X(k))?.coordinate_product(AxisId::X(k))?;
                let sv = g.partial(AxisId::V(k))?.coordinate_product(AxisId::V(k))?;
                out = out.scaled_add(1.0, &sx)?.scaled_add(1.0, &sv)?;
            }
            Ok(out)
        }
        FieldKind::TimeTranslation | FieldKind::SpaceTimeScaling => {
            Err(VfError::TimeDerivativeUnavailable)
        }
    }
}

/// The spatial part x.grad_x of a phase-space field (used by `L`).
fn micro_sx(g: &DistributionField) -> Result<DistributionField, VfError> {
    let dim = g.grid().dim();
    let mut out = DistributionField::zeros(g.grid().clone(), g.time());
    for k in 0..dim {
        let sx = g.partial(AxisId::X(k))?.coordinate_product(AxisId::X(k))?;
        out = out.scaled_add(1.0, &sx)?;
    }
    Ok(out)
}

/// One letter applied to a jet `(g, dg/dt)`. Returns the new jet; the time
/// component is dropped once a time letter has consumed it.
fn micro_jet(
    kind: FieldKind,
    g: &DistributionField,
    gt: Option<&DistributionField>,
    had_dt: bool,
) -> Result<(DistributionField, Option<DistributionField>), VfError> {
    match kind {
        FieldKind::TimeTranslation => {
            let gt = gt.ok_or(if had_dt {
                VfError::SecondTimeDerivative
            } else {
                VfError::TimeDerivativeUnavailable
            })?;
            Ok((gt.clone(), None))
        }
        FieldKind::SpaceTimeScaling => {
            let gt = gt.ok_or(if had_dt {
                VfError::SecondTimeDerivative
            } else {
                VfError::TimeDerivativeUnavailable
            })?;
            let value = micro_sx(g)?.scaled_add(g.time(), gt)?;
            Ok((value, None))
        }
        FieldKind::UniformMotion(i) => {
            let value = micro_value(kind, g)?;
            let new_t = match gt {
                Some(gt) => {
                    Some(micro_value(kind, gt)?.scaled_add(1.0, &g.partial(AxisId::X(i))?)?)
                }
                None => None,
            };
            Ok((value, new_t))
        }
        _ => {
            let value = micro_value(kind, g)?;
            let new_t = match gt {
                Some(gt) => Some(micro_value(kind, gt)?),
                None => None,
            };
            Ok((value, new_t))
        }
    }
}

/// Value of a non-time macroscopic letter on a spatial field.
fn macro_value(kind: FieldKind, g: &SpatialField) -> Result<SpatialField, VfError> {
    let t = g.time();
    match kind {
        FieldKind::SpaceTranslation(i) => Ok(g.partial(i)?),
        FieldKind::UniformMotion(i) => Ok(g.partial(i)?.scale(t)),
        FieldKind::Rotation(i, j) => {
            let a = g.partial(j)?.coordinate_product(i)?;
            let b = g.partial(i)?.coordinate_product(j)?;
            Ok(a.scaled_add(-1.0, &b)?)
        }
        FieldKind::SpatialScaling => {
            let mut out = SpatialField::zeros(g.axes().to_vec(), t);
            for k in 0..g.dim() {
                out = out.scaled_add(1.0, &g.partial(k)?.coordinate_product(k)?)?;
            }
            Ok(out)
        }
        FieldKind::TimeTranslation | FieldKind::SpaceTimeScaling => {
            Err(VfError::TimeDerivativeUnavailable)
        }
    }
}

fn macro_jet(
    kind: FieldKind,
    g: &SpatialField,
    gt: Option<&SpatialField>,
    had_dt: bool,
) -> Result<(SpatialField, Option<SpatialField>), VfError> {
    match kind {
        FieldKind::TimeTranslation => {
            let gt = gt.ok_or(if had_dt {
                VfError::SecondTimeDerivative
            } else {
                VfError::TimeDerivativeUnavailable
            })?;
            Ok((gt.clone(), None))
        }
        FieldKind::SpaceTimeScaling => {
            let gt = gt.ok_or(if had_dt {
                VfError::SecondTimeDerivative
            } else {
                VfError::TimeDerivativeUnavailable
            })?;
            let sx = macro_value(FieldKind::SpatialScaling, g)?;
            Ok((sx.scaled_add(g.time(), gt)?, None))
        }
        FieldKind::UniformMotion(i) => {
            let value = macro_value(kind, g)?;
            let new_t = match gt {
                Some(gt) => Some(macro_value(kind, gt)?.scaled_add(1.0, &g.partial(i)?)?),
                None => None,
            };
            Ok((value, new_t))
        }
        _ => {
            let value = macro_value(kind, g)?;
            let new_t = match gt {
                Some(gt) => Some(macro_value(kind, gt)?),
                None => None,
            };
            Ok((value, new_t))
        }
    }
}

/// Apply one microscopic catalogue field. `dt` is the time derivative of
/// `f`, required only by the letters that differentiate in time.
pub fn apply_micro(
    id: FieldId,
    f: &DistributionField,
    dt: Option<&DistributionField>,
) -> Result<DistributionField, VfError> {
    if id.flavor != Flavor::Microscopic {
        return Err(VfError::FlavorMismatch("microscopic"));
    }
    id.kind.check_dim(f.grid().dim())?;
    let (value, _) = micro_jet(id.kind, f, dt, dt.is_some())?;
    Ok(value)
}

/// Apply one macroscopic catalogue field to a spatial field.
pub fn apply_macro(
    id: FieldId,
    g: &SpatialField,
    dt: Option<&SpatialField>,
) -> Result<SpatialField, VfError> {
    if id.flavor != Flavor::Macroscopic {
        return Err(VfError::FlavorMismatch("macroscopic"));
    }
    id.kind.check_dim(g.dim())?;
    let (value, _) = macro_jet(id.kind, g, dt, dt.is_some())?;
    Ok(value)
}

/// Apply a microscopic word and return the full jet `(value, d value/dt)`.
/// The last letter acts first, as in operator composition; the time slot of
/// the result is `None` if `dt` was not supplied or a time letter used it up.
pub fn apply_micro_word_jet(
    word: &OperatorWord,
    f: &DistributionField,
    dt: Option<&DistributionField>,
) -> Result<(DistributionField, Option<DistributionField>), VfError> {
    if !word.is_empty() && word.flavor() != Flavor::Microscopic {
        return Err(VfError::FlavorMismatch("microscopic"));
    }
    word.check_dim(f.grid().dim())?;
    let had_dt = dt.is_some();
    let mut value = f.clone();
    let mut value_t = dt.cloned();
    for &kind in word.kinds().iter().rev() {
        let (v, vt) = micro_jet(kind, &value, value_t.as_ref(), had_dt)?;
        value = v;
        value_t = vt;
    }
    Ok((value, value_t))
}

/// Apply a microscopic word (composition of letters, last letter first).
pub fn apply_micro_word(
    word: &OperatorWord,
    f: &DistributionField,
    dt: Option<&DistributionField>,
) -> Result<DistributionField, VfError> {
    apply_micro_word_jet(word, f, dt).map(|(v, _)| v)
}

/// Apply a macroscopic word to a spatial field.
pub fn apply_macro_word(
    word: &OperatorWord,
    g: &SpatialField,
    dt: Option<&SpatialField>,
) -> Result<SpatialField, VfError> {
    if !word.is_empty() && word.flavor() != Flavor::Macroscopic {
        return Err(VfError::FlavorMismatch("macroscopic"));
    }
    word.check_dim(g.dim())?;
    let had_dt = dt.is_some();
    let mut value = g.clone();
    let mut value_t = dt.cloned();
    for &kind in word.kinds().iter().rev() {
        let (v, vt) = macro_jet(kind, &value, value_t.as_ref(), had_dt)?;
        value = v;
        value_t = vt;
    }
    Ok(value)
}

/// Residual of the velocity-average pushdown for one macroscopic field:
/// sup over interior spatial nodes of |Z rho(f) - rho(Z_micro f) - c_Z rho(f)|.
/// The interior excludes the two-node margin where one-sided stencils act.
pub fn verify_pushdown(
    id: FieldId,
    f: &DistributionField,
    dt: Option<&DistributionField>,
) -> Result<f64, VfError> {
    if id.flavor != Flavor::Macroscopic {
        return Err(VfError::FlavorMismatch("macroscopic"));
    }
    let dim = f.grid().dim();
    id.kind.check_dim(dim)?;
    let rho = f.velocity_average();
    let rho_dt = dt.map(|d| d.velocity_average());
    let lhs = apply_macro(id, &rho, rho_dt.as_ref())?;
    let micro = apply_micro(id.counterpart(), f, dt)?;
    let c = super::pushdown_constant(id, dim);
    let rhs = micro.velocity_average().scaled_add(c, &rho)?;
    Ok(lhs.scaled_add(-1.0, &rhs)?.interior_max_abs(2))
}

/// All words over `letters` of length at most `max_len`, built by prepending
/// letters, together with their applications to `f` (no time letters).
fn all_word_applications(
    letters: &[FieldId],
    max_len: usize,
    f: &DistributionField,
) -> Result<Vec<DistributionField>, VfError> {
    let mut level: Vec<DistributionField> = vec![f.clone()];
    let mut out: Vec<DistributionField> = vec![f.clone()];
    for _ in 0..max_len {
        let mut next = Vec::with_capacity(level.len() * letters.len());
        for g in &level {
            for id in letters {
                next.push(micro_value(id.kind, g)?);
            }
        }
        out.extend(next.iter().cloned());
        level = next;
    }
    Ok(out)
}

/// Sup over nodes of |Z^word[(1+|v|^2)^(q/2) f]| divided by
/// (1+|v|^2)^(q/2) * sum over all restricted words of length <= |word| of
/// |Z^beta f|. Nodes where the denominator underflows a relative threshold
/// of its maximum are skipped; an all-zero field gives 0.
pub fn verify_weight_commutation(
    word: &OperatorWord,
    f: &DistributionField,
    q: f64,
) -> Result<f64, VfError> {
    if !word.is_empty() && word.flavor() != Flavor::Microscopic {
        return Err(VfError::FlavorMismatch("microscopic"));
    }
    if !word.is_restricted() {
        return Err(VfError::NotRestricted(word.to_string()));
    }
    let dim = f.grid().dim();
    word.check_dim(dim)?;

    let weighted = f.map_nodes(|_, v, val| {
        let v2: f64 = v.iter().map(|c| c * c).sum();
        (1.0 + v2).powf(0.5 * q) * val
    });
    let numerator = apply_micro_word(word, &weighted, None)?;

    let letters = super::restricted_catalogue(dim, Flavor::Microscopic);
    let apps = all_word_applications(&letters, word.len(), f)?;
    let mut sum_abs = DistributionField::zeros(f.grid().clone(), f.time());
    for a in &apps {
        sum_abs = sum_abs.scaled_add(1.0, &a.abs())?;
    }
    let denominator = sum_abs.map_nodes(|_, v, val| {
        let v2: f64 = v.iter().map(|c| c * c).sum();
        (1.0 + v2).powf(0.5 * q) * val
    });

    let floor = denominator.max_abs() * 1e-12;
    if floor == 0.0 {
        return Ok(0.0);
    }
    let num = numerator.values();
    let den = denominator.values();
    let ratio = par::max_indexed(num.len(), |i| {
        if den[i] > floor {
            num[i].abs() / den[i]
        } else {
            f64::NEG_INFINITY
        }
    });
    Ok(ratio.max(0.0))
}

/// Residual of the identity |x|^2 d_j = sum_i x^i Omega_ij + x^j S^x applied
/// to a spatial field, in the sup norm over all nodes.
pub fn verify_vf_identity(j: usize, psi: &SpatialField) -> Result<f64, VfError> {
    let dim = psi.dim();
    if j >= dim {
        return Err(VfError::IndexOutOfRange(j, dim));
    }
    let grads: Vec<SpatialField> = (0..dim)
        .map(|k| psi.partial(k))
        .collect::<Result<_, _>>()?;

    let lhs = grads[j].map_nodes(|x, val| {
        let x2: f64 = x.iter().map(|c| c * c).sum();
        x2 * val
    });

    let mut rhs = SpatialField::zeros(psi.axes().to_vec(), psi.time());
    for i in 0..dim {
        // x^i Omega_ij psi = x^i (x^i d_j - x^j d_i) psi; the i = j term
        // vanishes identically and is skipped.
        if i == j {
            continue;
        }
        let omega = grads[j]
            .coordinate_product(i)?
            .scaled_add(-1.0, &grads[i].coordinate_product(j)?)?;
        rhs = rhs.scaled_add(1.0, &omega.coordinate_product(i)?)?;
    }
    let mut scaling = SpatialField::zeros(psi.axes().to_vec(), psi.time());
    for i in 0..dim {
        scaling = scaling.scaled_add(1.0, &grads[i].coordinate_product(i)?)?;
    }
    rhs = rhs.scaled_add(1.0, &scaling.coordinate_product(j)?)?;

    Ok(lhs.scaled_add(-1.0, &rhs)?.max_abs())
}
