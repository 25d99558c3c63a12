//! The symmetry vector fields of the transport operator: macroscopic and
//! microscopic catalogues, operator words, commutation data, and the
//! velocity-average pushdown constants.

use crate::grid::GridError;
use thiserror::Error;

pub mod apply;
pub mod expand;
pub mod symbolic;

pub use apply::{
    apply_macro, apply_macro_word, apply_micro, apply_micro_word, apply_micro_word_jet,
    verify_pushdown, verify_vf_identity, verify_weight_commutation,
};
pub use expand::{eval_expansion, expand_T_phi_commutator, render_expansion, CommutatorTerm};

/// Which catalogue member a letter names. Indices are zero-based; rotations
/// keep `i < j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FieldKind {
    /// d/dt
    TimeTranslation,
    /// d/dx_i
    SpaceTranslation(usize),
    /// t d/dx_i (macroscopic) or t d/dx_i + d/dv_i (microscopic)
    UniformMotion(usize),
    /// x_i d/dx_j - x_j d/dx_i, plus the velocity block microscopically
    Rotation(usize, usize),
    /// x.grad_x, plus v.grad_v microscopically
    SpatialScaling,
    /// t d/dt + x.grad_x in both forms
    SpaceTimeScaling,
}

/// Whether a letter acts on spatial fields or on phase-space fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Flavor {
    Macroscopic,
    Microscopic,
}

/// One vector field of the catalogue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FieldId {
    pub kind: FieldKind,
    pub flavor: Flavor,
}

#[derive(Debug, Error, PartialEq)]
pub enum VfError {
    #[error("expected a {0} field here")]
    FlavorMismatch(&'static str),
    #[error("letters of a word must share one flavor")]
    MixedFlavors,
    #[error("field index {0} out of range for dimension {1}")]
    IndexOutOfRange(usize, usize),
    #[error("rotation indices must satisfy i < j, got ({0}, {1})")]
    BadRotation(usize, usize),
    #[error("a time-derivative field is required but was not supplied")]
    TimeDerivativeUnavailable,
    #[error("word would need a second time derivative")]
    SecondTimeDerivative,
    #[error("word has {got} letters, limit is {limit}")]
    WordTooLong { got: usize, limit: usize },
    #[error("letter {0} lies outside the restricted catalogue")]
    NotRestricted(String),
    #[error("cannot parse field letter {0:?}")]
    ParseLetter(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

impl FieldKind {
    /// Largest zero-based axis index the letter references, if any.
    pub fn max_index(self) -> Option<usize> {
        match self {
            FieldKind::SpaceTranslation(i) | FieldKind::UniformMotion(i) => Some(i),
            FieldKind::Rotation(i, j) => Some(i.max(j)),
            _ => None,
        }
    }

    pub fn check_dim(self, dim: usize) -> Result<(), VfError> {
        if let Some(m) = self.max_index() {
            if m >= dim {
                return Err(VfError::IndexOutOfRange(m, dim));
            }
        }
        if let FieldKind::Rotation(i, j) = self {
            if i >= j {
                return Err(VfError::BadRotation(i, j));
            }
        }
        Ok(())
    }

    /// Member of the restricted subsets (no pure time translation, no
    /// space-time scaling).
    pub fn is_restricted(self) -> bool {
        !matches!(
            self,
            FieldKind::TimeTranslation | FieldKind::SpaceTimeScaling
        )
    }

    /// Does evaluating this letter need a time-derivative input?
    pub fn needs_time_derivative(self) -> bool {
        matches!(
            self,
            FieldKind::TimeTranslation | FieldKind::SpaceTimeScaling
        )
    }

    fn render(self) -> String {
        match self {
            FieldKind::TimeTranslation => "Dt".to_string(),
            FieldKind::SpaceTranslation(i) => format!("X{}", i + 1),
            FieldKind::UniformMotion(i) => format!("U{}", i + 1),
            FieldKind::Rotation(i, j) => format!("R{}{}", i + 1, j + 1),
            FieldKind::SpatialScaling => "S".to_string(),
            FieldKind::SpaceTimeScaling => "L".to_string(),
        }
    }

    pub fn parse(token: &str) -> Result<FieldKind, VfError> {
        let bad = || VfError::ParseLetter(token.to_string());
        let digit = |c: char| -> Result<usize, VfError> {
            c.to_digit(10)
                .filter(|d| (1..=3).contains(d))
                .map(|d| d as usize - 1)
                .ok_or_else(bad)
        };
        let chars: Vec<char> = token.chars().collect();
        match chars.as_slice() {
            ['D', 't'] => Ok(FieldKind::TimeTranslation),
            ['S'] => Ok(FieldKind::SpatialScaling),
            ['L'] => Ok(FieldKind::SpaceTimeScaling),
            ['X', c] => Ok(FieldKind::SpaceTranslation(digit(*c)?)),
            ['U', c] => Ok(FieldKind::UniformMotion(digit(*c)?)),
            ['R', a, b] => {
                let (i, j) = (digit(*a)?, digit(*b)?);
                if i < j {
                    Ok(FieldKind::Rotation(i, j))
                } else {
                    Err(VfError::BadRotation(i, j))
                }
            }
            _ => Err(bad()),
        }
    }
}

impl std::fmt::Display for FieldKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.render())
    }
}

impl FieldId {
    pub fn macroscopic(kind: FieldKind) -> FieldId {
        FieldId {
            kind,
            flavor: Flavor::Macroscopic,
        }
    }

    pub fn microscopic(kind: FieldKind) -> FieldId {
        FieldId {
            kind,
            flavor: Flavor::Microscopic,
        }
    }

    /// Same catalogue element in the other flavor.
    pub fn counterpart(self) -> FieldId {
        FieldId {
            kind: self.kind,
            flavor: match self.flavor {
                Flavor::Macroscopic => Flavor::Microscopic,
                Flavor::Microscopic => Flavor::Macroscopic,
            },
        }
    }
}

impl std::fmt::Display for FieldId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.kind)
    }
}

/// All catalogue kinds for dimension `dim`, in the fixed ordering: time
/// translation, space translations, uniform motions, rotations (lexicographic),
/// spatial scaling, space-time scaling. Size is 2n + 3 + n(n-1)/2.
pub fn catalogue_kinds(dim: usize) -> Vec<FieldKind> {
    let mut out = vec![FieldKind::TimeTranslation];
    out.extend((0..dim).map(FieldKind::SpaceTranslation));
    out.extend((0..dim).map(FieldKind::UniformMotion));
    for i in 0..dim {
        for j in i + 1..dim {
            out.push(FieldKind::Rotation(i, j));
        }
    }
    out.push(FieldKind::SpatialScaling);
    out.push(FieldKind::SpaceTimeScaling);
    out
}

pub fn catalogue(dim: usize, flavor: Flavor) -> Vec<FieldId> {
    catalogue_kinds(dim)
        .into_iter()
        .map(|kind| FieldId { kind, flavor })
        .collect()
}

/// The restricted catalogue: drops the time translation and the space-time
/// scaling, keeping the letters that never differentiate in `t`.
pub fn restricted_catalogue(dim: usize, flavor: Flavor) -> Vec<FieldId> {
    catalogue(dim, flavor)
        .into_iter()
        .filter(|id| id.kind.is_restricted())
        .collect()
}

/// An ordered composition of catalogue letters. The first letter acts last
/// (outermost), as in operator composition.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OperatorWord {
    flavor: Flavor,
    kinds: Vec<FieldKind>,
}

impl OperatorWord {
    pub fn new(letters: Vec<FieldId>) -> Result<OperatorWord, VfError> {
        let flavor = letters.first().map(|l| l.flavor).unwrap_or(Flavor::Microscopic);
        if letters.iter().any(|l| l.flavor != flavor) {
            return Err(VfError::MixedFlavors);
        }
        Ok(OperatorWord {
            flavor,
            kinds: letters.into_iter().map(|l| l.kind).collect(),
        })
    }

    pub fn from_kinds(flavor: Flavor, kinds: Vec<FieldKind>) -> OperatorWord {
        OperatorWord { flavor, kinds }
    }

    pub fn empty(flavor: Flavor) -> OperatorWord {
        OperatorWord {
            flavor,
            kinds: Vec::new(),
        }
    }

    /// Parse a space-separated letter list; `I` denotes the empty word.
    pub fn parse(text: &str, flavor: Flavor) -> Result<OperatorWord, VfError> {
        let trimmed = text.trim();
        if trimmed.is_empty() || trimmed == "I" {
            return Ok(OperatorWord::empty(flavor));
        }
        let kinds = trimmed
            .split_whitespace()
            .map(FieldKind::parse)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(OperatorWord { flavor, kinds })
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn flavor(&self) -> Flavor {
        self.flavor
    }

    pub fn kinds(&self) -> &[FieldKind] {
        &self.kinds
    }

    pub fn letters(&self) -> Vec<FieldId> {
        self.kinds
            .iter()
            .map(|&kind| FieldId {
                kind,
                flavor: self.flavor,
            })
            .collect()
    }

    pub fn check_dim(&self, dim: usize) -> Result<(), VfError> {
        for k in &self.kinds {
            k.check_dim(dim)?;
        }
        Ok(())
    }

    pub fn is_restricted(&self) -> bool {
        self.kinds.iter().all(|k| k.is_restricted())
    }

    /// New word with `kind` prepended (acting outermost).
    pub fn prepend(&self, kind: FieldKind) -> OperatorWord {
        let mut kinds = Vec::with_capacity(self.kinds.len() + 1);
        kinds.push(kind);
        kinds.extend_from_slice(&self.kinds);
        OperatorWord {
            flavor: self.flavor,
            kinds,
        }
    }

    /// New word with `rest` appended (acting innermost).
    pub fn concat(&self, rest: &OperatorWord) -> Result<OperatorWord, VfError> {
        if !self.kinds.is_empty() && !rest.kinds.is_empty() && self.flavor != rest.flavor {
            return Err(VfError::MixedFlavors);
        }
        let mut kinds = self.kinds.clone();
        kinds.extend_from_slice(&rest.kinds);
        Ok(OperatorWord {
            flavor: if self.kinds.is_empty() {
                rest.flavor
            } else {
                self.flavor
            },
            kinds,
        })
    }
}

impl std::fmt::Display for OperatorWord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.kinds.is_empty() {
            return f.write_str("I");
        }
        let mut first = true;
        for k in &self.kinds {
            if !first {
                f.write_str(" ")?;
            }
            write!(f, "{k}")?;
            first = false;
        }
        Ok(())
    }
}

/// Result of commuting a catalogue field with the free transport operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TCommutation {
    Zero,
    T,
}

/// Bracket of the free transport operator with a catalogue field, read off
/// the microscopic realization: zero for every letter except the space-time
/// scaling, whose bracket reproduces the transport operator itself.
#[allow(non_snake_case)]
pub fn commute_with_T(id: FieldId) -> TCommutation {
    match id.kind {
        FieldKind::SpaceTimeScaling => TCommutation::T,
        _ => TCommutation::Zero,
    }
}

/// Constant in the velocity-average pushdown `Z rho(f) = rho(Z f) + c_Z rho(f)`:
/// the spatial dimension for the spatial scaling, zero for everything else.
pub fn pushdown_constant(id: FieldId, dim: usize) -> f64 {
    match id.kind {
        FieldKind::SpatialScaling => dim as f64,
        _ => 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalogue_sizes() {
        for (n, want) in [(1usize, 5usize), (2, 8), (3, 12)] {
            let c = catalogue(n, Flavor::Microscopic);
            assert_eq!(c.len(), want, "dim {n}");
            assert_eq!(c.len(), 2 * n + 3 + n * (n - 1) / 2);
            let r = restricted_catalogue(n, Flavor::Microscopic);
            assert_eq!(r.len(), want - 2);
        }
    }

    #[test]
    fn commute_with_t_table() {
        for n in 1..=3 {
            for id in catalogue(n, Flavor::Microscopic) {
                let want = if id.kind == FieldKind::SpaceTimeScaling {
                    TCommutation::T
                } else {
                    TCommutation::Zero
                };
                assert_eq!(commute_with_T(id), want, "{id}");
            }
        }
    }

    #[test]
    fn pushdown_constants() {
        assert_eq!(
            pushdown_constant(FieldId::macroscopic(FieldKind::SpatialScaling), 3),
            3.0
        );
        assert_eq!(
            pushdown_constant(FieldId::macroscopic(FieldKind::SpatialScaling), 1),
            1.0
        );
        for id in catalogue(3, Flavor::Macroscopic) {
            if id.kind != FieldKind::SpatialScaling {
                assert_eq!(pushdown_constant(id, 3), 0.0, "{id}");
            }
        }
    }

    #[test]
    fn letter_text_round_trip() {
        for n in 1..=3 {
            for id in catalogue(n, Flavor::Microscopic) {
                let text = id.kind.to_string();
                assert_eq!(FieldKind::parse(&text).unwrap(), id.kind);
            }
        }
        assert!(FieldKind::parse("R21").is_err());
        assert!(FieldKind::parse("X4").is_err());
        assert!(FieldKind::parse("Q1").is_err());
    }

    #[test]
    fn word_parse_and_display() {
        let w = OperatorWord::parse("U1 X2 R13", Flavor::Microscopic).unwrap();
        assert_eq!(w.len(), 3);
        assert_eq!(w.to_string(), "U1 X2 R13");
        assert!(w.check_dim(3).is_ok());
        assert!(w.check_dim(2).is_err());
        let e = OperatorWord::parse("I", Flavor::Macroscopic).unwrap();
        assert!(e.is_empty());
        assert_eq!(e.to_string(), "I");
    }

    #[test]
    fn word_rejects_mixed_flavors() {
        let mixed = vec![
            FieldId::microscopic(FieldKind::SpatialScaling),
            FieldId::macroscopic(FieldKind::SpatialScaling),
        ];
        assert_eq!(OperatorWord::new(mixed).unwrap_err(), VfError::MixedFlavors);
    }

    #[test]
    fn restricted_excludes_time_letters() {
        for id in restricted_catalogue(3, Flavor::Macroscopic) {
            assert!(id.kind.is_restricted());
            assert!(!id.kind.needs_time_derivative());
        }
    }
}
