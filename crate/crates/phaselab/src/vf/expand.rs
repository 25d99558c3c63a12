//! Symbolic expansion of the bracket of the forced transport operator with
//! words of restricted catalogue letters.
//!
//! The base brackets with single letters all take the form
//! `-mu * sum_k d/dx_k (W phi) * d/dv_k`, where `W` is the macroscopic
//! counterpart of the letter (with the correction `-2 phi` for the spatial
//! scaling). Each `d/dv_k` is rewritten as `U_k - t X_k`, which keeps every
//! factor inside the algebra at the price of one explicit power of `t`.
//! Longer words expand recursively through the product rule; the letters
//! acting on the potential factor are commuted into normal order
//! (translations, uniform motions, rotations, scaling) and like terms merge.

use super::apply::{apply_macro_word, apply_micro_word};
use super::{FieldKind, Flavor, OperatorWord, VfError};
use crate::field::{DistributionField, SpatialField};
use std::collections::BTreeMap;

/// Longest word the expansion supports.
pub const MAX_WORD: usize = 3;

/// One summand `coefficient * t^e * d/dx_i (Z^gamma phi) * Z^beta f` of the
/// expanded bracket. The coupling sign `mu` is kept out of the coefficient
/// and supplied at evaluation time; every term is first order in it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommutatorTerm {
    pub coefficient: i64,
    pub extra_t_power: u8,
    pub grad_index: usize,
    pub potential_word: OperatorWord,
    pub field_word: OperatorWord,
}

#[derive(Debug, Clone)]
struct RawTerm {
    coeff: i64,
    t_pow: u8,
    grad: usize,
    pot: Vec<FieldKind>,
    field: Vec<FieldKind>,
}

/// Bracket [A, B] of two macroscopic letters acting on spatial functions,
/// expressed in single letters. Only pairs that can appear out of order
/// during normal ordering are needed; everything else commutes.
fn macro_bracket(a: FieldKind, b: FieldKind) -> Vec<(i64, FieldKind)> {
    use FieldKind::*;
    let rot = |i: usize, j: usize, sign: i64| -> Option<(i64, FieldKind)> {
        match i.cmp(&j) {
            std::cmp::Ordering::Less => Some((sign, Rotation(i, j))),
            std::cmp::Ordering::Greater => Some((-sign, Rotation(j, i))),
            std::cmp::Ordering::Equal => None,
        }
    };
    match (a, b) {
        (Rotation(i, j), SpaceTranslation(k)) => {
            // [Omega_ij, d_k] = -delta_ik d_j + delta_jk d_i
            let mut out = Vec::new();
            if k == i {
                out.push((-1, SpaceTranslation(j)));
            }
            if k == j {
                out.push((1, SpaceTranslation(i)));
            }
            out
        }
        (Rotation(i, j), UniformMotion(k)) => {
            let mut out = Vec::new();
            if k == i {
                out.push((-1, UniformMotion(j)));
            }
            if k == j {
                out.push((1, UniformMotion(i)));
            }
            out
        }
        (SpatialScaling, SpaceTranslation(k)) => vec![(-1, SpaceTranslation(k))],
        (SpatialScaling, UniformMotion(k)) => vec![(-1, UniformMotion(k))],
        (SpatialScaling, Rotation(_, _)) => vec![],
        (Rotation(i, j), Rotation(k, l)) => {
            // so(n): [O_ij, O_kl] = d_jk O_il - d_ik O_jl - d_jl O_ik + d_il O_jk
            let mut out = Vec::new();
            if j == k {
                out.extend(rot(i, l, 1));
            }
            if i == k {
                out.extend(rot(j, l, -1));
            }
            if j == l {
                out.extend(rot(i, k, -1));
            }
            if i == l {
                out.extend(rot(j, k, 1));
            }
            out
        }
        _ => vec![],
    }
}

/// Rewrite `coeff * word` as a combination of normal-ordered words using the
/// bracket relations; recursion terminates because swaps reduce inversions
/// and corrections shorten the word.
fn normal_order(word: Vec<FieldKind>, coeff: i64, out: &mut Vec<(i64, Vec<FieldKind>)>) {
    for i in 0..word.len().saturating_sub(1) {
        if word[i] > word[i + 1] {
            let mut swapped = word.clone();
            swapped.swap(i, i + 1);
            normal_order(swapped, coeff, out);
            for (c, k) in macro_bracket(word[i], word[i + 1]) {
                let mut shorter = Vec::with_capacity(word.len() - 1);
                shorter.extend_from_slice(&word[..i]);
                shorter.push(k);
                shorter.extend_from_slice(&word[i + 2..]);
                normal_order(shorter, coeff * c, out);
            }
            return;
        }
    }
    out.push((coeff, word));
}

/// Base bracket data for one letter: the macroscopic words applied to the
/// potential, before the velocity-derivative rewrite. The spatial scaling
/// carries the additional `-2 phi` term from `[d/dv_k, S^v] = d/dv_k`.
fn base_potential_pieces(kind: FieldKind) -> Vec<(i64, Vec<FieldKind>)> {
    match kind {
        FieldKind::SpatialScaling => vec![(1, vec![FieldKind::SpatialScaling]), (-2, vec![])],
        k => vec![(1, vec![k])],
    }
}

fn base_terms(kind: FieldKind, rest: &[FieldKind], dim: usize) -> Vec<RawTerm> {
    let mut out = Vec::new();
    for (c, pot) in base_potential_pieces(kind) {
        for k in 0..dim {
            let mut field_u = vec![FieldKind::UniformMotion(k)];
            field_u.extend_from_slice(rest);
            out.push(RawTerm {
                coeff: -c,
                t_pow: 0,
                grad: k,
                pot: pot.clone(),
                field: field_u,
            });
            let mut field_x = vec![FieldKind::SpaceTranslation(k)];
            field_x.extend_from_slice(rest);
            out.push(RawTerm {
                coeff: c,
                t_pow: 1,
                grad: k,
                pot: pot.clone(),
                field: field_x,
            });
        }
    }
    out
}

/// Act with a restricted letter on the potential factor `t^e d/dx_i (W phi)`.
/// The macroscopic actions never touch the explicit power of `t` (uniform
/// motions absorb theirs into the prepended letter), so only the gradient
/// commutators generate extra terms.
fn potential_action(kind: FieldKind, term: &RawTerm) -> Vec<RawTerm> {
    let mut out = Vec::new();
    let prepended = {
        let mut w = Vec::with_capacity(term.pot.len() + 1);
        w.push(kind);
        w.extend_from_slice(&term.pot);
        w
    };
    match kind {
        FieldKind::SpaceTranslation(_) | FieldKind::UniformMotion(_) => {
            out.push(RawTerm {
                pot: prepended,
                field: term.field.clone(),
                ..*term
            });
        }
        FieldKind::Rotation(a, b) => {
            out.push(RawTerm {
                pot: prepended,
                field: term.field.clone(),
                ..*term
            });
            if term.grad == a {
                out.push(RawTerm {
                    coeff: -term.coeff,
                    grad: b,
                    pot: term.pot.clone(),
                    field: term.field.clone(),
                    ..*term
                });
            }
            if term.grad == b {
                out.push(RawTerm {
                    coeff: term.coeff,
                    grad: a,
                    pot: term.pot.clone(),
                    field: term.field.clone(),
                    ..*term
                });
            }
        }
        FieldKind::SpatialScaling => {
            out.push(RawTerm {
                pot: prepended,
                field: term.field.clone(),
                ..*term
            });
            out.push(RawTerm {
                coeff: -term.coeff,
                pot: term.pot.clone(),
                field: term.field.clone(),
                ..*term
            });
        }
        FieldKind::TimeTranslation | FieldKind::SpaceTimeScaling => {
            unreachable!("time letters are rejected before expansion")
        }
    }
    out
}

fn expand_rec(kinds: &[FieldKind], dim: usize) -> Vec<RawTerm> {
    let Some((&first, rest)) = kinds.split_first() else {
        return Vec::new();
    };
    let mut terms = base_terms(first, rest, dim);
    for tau in expand_rec(rest, dim) {
        let mut field = Vec::with_capacity(tau.field.len() + 1);
        field.push(first);
        field.extend_from_slice(&tau.field);
        terms.push(RawTerm {
            field,
            pot: tau.pot.clone(),
            ..tau
        });
        terms.extend(potential_action(first, &tau));
    }
    terms
}

/// Expand `[T_phi, Z^word] f` into canonical terms. The word must consist of
/// restricted letters (words containing the time letters also pick up
/// transport-operator summands that fall outside this normal form) and is
/// limited to length 3.
#[allow(non_snake_case)]
pub fn expand_T_phi_commutator(
    word: &OperatorWord,
    dim: usize,
) -> Result<Vec<CommutatorTerm>, VfError> {
    if !word.is_empty() && word.flavor() != Flavor::Microscopic {
        return Err(VfError::FlavorMismatch("microscopic"));
    }
    if word.len() > MAX_WORD {
        return Err(VfError::WordTooLong {
            got: word.len(),
            limit: MAX_WORD,
        });
    }
    if !word.is_restricted() {
        return Err(VfError::NotRestricted(word.to_string()));
    }
    word.check_dim(dim)?;

    let raw = expand_rec(word.kinds(), dim);

    // Normal-order potential words, then merge equal keys.
    let mut merged: BTreeMap<(Vec<FieldKind>, usize, u8, Vec<FieldKind>), i64> = BTreeMap::new();
    for term in raw {
        let mut ordered = Vec::new();
        normal_order(term.pot, term.coeff, &mut ordered);
        for (c, pot) in ordered {
            let key = (pot, term.grad, term.t_pow, term.field.clone());
            *merged.entry(key).or_insert(0) += c;
        }
    }

    Ok(merged
        .into_iter()
        .filter(|(_, c)| *c != 0)
        .map(|((pot, grad, t_pow, field), coefficient)| CommutatorTerm {
            coefficient,
            extra_t_power: t_pow,
            grad_index: grad,
            potential_word: OperatorWord::from_kinds(Flavor::Macroscopic, pot),
            field_word: OperatorWord::from_kinds(Flavor::Microscopic, field),
        })
        .collect())
}

impl std::fmt::Display for CommutatorTerm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:+}", self.coefficient)?;
        if self.extra_t_power == 1 {
            f.write_str(" t")?;
        }
        write!(f, " dx{}(", self.grad_index + 1)?;
        if self.potential_word.is_empty() {
            f.write_str("phi")?;
        } else {
            write!(f, "{} phi", self.potential_word)?;
        }
        write!(f, ") {} f", self.field_word)
    }
}

/// Deterministic rendering of an expansion, one term per line.
pub fn render_expansion(terms: &[CommutatorTerm]) -> String {
    terms
        .iter()
        .map(|t| t.to_string())
        .collect::<Vec<_>>()
        .join("\n")
}

/// Evaluate an expansion on grid data: phi and f sampled at the same time.
/// Each term contributes `mu * coefficient * t^e * d/dx_i(Z^gamma phi)` as a
/// spatial factor multiplying `Z^beta f`.
pub fn eval_expansion(
    terms: &[CommutatorTerm],
    phi: &SpatialField,
    f: &DistributionField,
    mu: f64,
) -> Result<DistributionField, VfError> {
    let t = f.time();
    let mut field_cache: BTreeMap<Vec<FieldKind>, DistributionField> = BTreeMap::new();
    let mut pot_cache: BTreeMap<(usize, Vec<FieldKind>), SpatialField> = BTreeMap::new();
    let mut out = DistributionField::zeros(f.grid().clone(), t);
    for term in terms {
        let pot_key = (term.grad_index, term.potential_word.kinds().to_vec());
        if !pot_cache.contains_key(&pot_key) {
            let applied = apply_macro_word(&term.potential_word, phi, None)?;
            pot_cache.insert(pot_key.clone(), applied.partial(term.grad_index)?);
        }
        let field_key = term.field_word.kinds().to_vec();
        if !field_cache.contains_key(&field_key) {
            field_cache.insert(field_key.clone(), apply_micro_word(&term.field_word, f, None)?);
        }
        let pot = &pot_cache[&pot_key];
        let fw = &field_cache[&field_key];
        let scale = mu * term.coefficient as f64 * t.powi(term.extra_t_power as i32);
        out = out.scaled_add(scale, &fw.spatial_product(pot)?)?;
    }
    Ok(out)
}
