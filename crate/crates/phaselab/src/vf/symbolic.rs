//! Exact symbolic realization of the catalogue fields as vector fields with
//! polynomial coefficients in (t, x, v). All catalogue coefficients are
//! monomials of degree at most one, so brackets stay inside small integer
//! polynomials and comparisons are exact.

use super::{FieldId, FieldKind, Flavor};
use std::collections::BTreeMap;

/// Variable indices: 0 = t, 1..=3 = x, 4..=6 = v.
pub const VAR_T: usize = 0;
pub const NVARS: usize = 7;

pub fn var_x(i: usize) -> usize {
    1 + i
}

pub fn var_v(i: usize) -> usize {
    4 + i
}

/// Exponent vector of one monomial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Monomial(pub [u8; NVARS]);

impl Monomial {
    pub fn one() -> Monomial {
        Monomial([0; NVARS])
    }

    pub fn var(k: usize) -> Monomial {
        let mut e = [0u8; NVARS];
        e[k] = 1;
        Monomial(e)
    }
}

/// Integer-coefficient polynomial stored sparsely. Coefficients live in f64
/// but stay integral for every operation the catalogue needs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Poly(pub BTreeMap<Monomial, f64>);

impl Poly {
    pub fn zero() -> Poly {
        Poly(BTreeMap::new())
    }

    pub fn constant(c: f64) -> Poly {
        let mut p = Poly::zero();
        if c != 0.0 {
            p.0.insert(Monomial::one(), c);
        }
        p
    }

    pub fn var(k: usize) -> Poly {
        let mut p = Poly::zero();
        p.0.insert(Monomial::var(k), 1.0);
        p
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_empty()
    }

    pub fn add_term(&mut self, m: Monomial, c: f64) {
        if c == 0.0 {
            return;
        }
        let slot = self.0.entry(m).or_insert(0.0);
        *slot += c;
        if *slot == 0.0 {
            self.0.remove(&m);
        }
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let mut out = self.clone();
        for (m, c) in &other.0 {
            out.add_term(*m, *c);
        }
        out
    }

    pub fn scale(&self, c: f64) -> Poly {
        if c == 0.0 {
            return Poly::zero();
        }
        Poly(self.0.iter().map(|(m, a)| (*m, a * c)).collect())
    }

    pub fn sub(&self, other: &Poly) -> Poly {
        self.add(&other.scale(-1.0))
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        let mut out = Poly::zero();
        for (ma, ca) in &self.0 {
            for (mb, cb) in &other.0 {
                let mut e = ma.0;
                for (k, b) in e.iter_mut().zip(mb.0) {
                    *k += b;
                }
                out.add_term(Monomial(e), ca * cb);
            }
        }
        out
    }

    /// Partial derivative with respect to variable `k`.
    pub fn derivative(&self, k: usize) -> Poly {
        let mut out = Poly::zero();
        for (m, c) in &self.0 {
            if m.0[k] == 0 {
                continue;
            }
            let mut e = m.0;
            e[k] -= 1;
            out.add_term(Monomial(e), c * m.0[k] as f64);
        }
        out
    }

    pub fn eval(&self, point: &[f64; NVARS]) -> f64 {
        self.0
            .iter()
            .map(|(m, c)| {
                c * m
                    .0
                    .iter()
                    .zip(point)
                    .map(|(&e, &p)| p.powi(e as i32))
                    .product::<f64>()
            })
            .sum()
    }
}

/// First-order operator with polynomial coefficients: sum of comps[k] d/dk.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PolyVf {
    pub comps: [Poly; NVARS],
}

impl PolyVf {
    pub fn zero() -> PolyVf {
        PolyVf::default()
    }

    pub fn is_zero(&self) -> bool {
        self.comps.iter().all(Poly::is_zero)
    }

    pub fn add(&self, other: &PolyVf) -> PolyVf {
        let mut out = PolyVf::zero();
        for k in 0..NVARS {
            out.comps[k] = self.comps[k].add(&other.comps[k]);
        }
        out
    }

    pub fn sub(&self, other: &PolyVf) -> PolyVf {
        let mut out = PolyVf::zero();
        for k in 0..NVARS {
            out.comps[k] = self.comps[k].sub(&other.comps[k]);
        }
        out
    }

    pub fn scale(&self, c: f64) -> PolyVf {
        let mut out = PolyVf::zero();
        for k in 0..NVARS {
            out.comps[k] = self.comps[k].scale(c);
        }
        out
    }

    /// Apply the operator to a polynomial (as a derivation).
    pub fn apply(&self, p: &Poly) -> Poly {
        let mut out = Poly::zero();
        for k in 0..NVARS {
            if !self.comps[k].is_zero() {
                out = out.add(&self.comps[k].mul(&p.derivative(k)));
            }
        }
        out
    }

    /// Commutator [self, other] as a first-order operator.
    pub fn bracket(&self, other: &PolyVf) -> PolyVf {
        let mut out = PolyVf::zero();
        for k in 0..NVARS {
            out.comps[k] = self.apply(&other.comps[k]).sub(&other.apply(&self.comps[k]));
        }
        out
    }

    /// The free transport operator d/dt + v.grad_x in dimension `dim`.
    pub fn transport(dim: usize) -> PolyVf {
        let mut out = PolyVf::zero();
        out.comps[VAR_T] = Poly::constant(1.0);
        for i in 0..dim {
            out.comps[var_x(i)] = Poly::var(var_v(i));
        }
        out
    }

    /// Exact realization of a catalogue field in dimension `dim`.
    pub fn field(id: FieldId, dim: usize) -> PolyVf {
        id.kind.check_dim(dim).expect("letter fits dimension");
        let micro = id.flavor == Flavor::Microscopic;
        let mut out = PolyVf::zero();
        match id.kind {
            FieldKind::TimeTranslation => {
                out.comps[VAR_T] = Poly::constant(1.0);
            }
            FieldKind::SpaceTranslation(i) => {
                out.comps[var_x(i)] = Poly::constant(1.0);
            }
            FieldKind::UniformMotion(i) => {
                out.comps[var_x(i)] = Poly::var(VAR_T);
                if micro {
                    out.comps[var_v(i)] = Poly::constant(1.0);
                }
            }
            FieldKind::Rotation(i, j) => {
                out.comps[var_x(j)] = Poly::var(var_x(i));
                out.comps[var_x(i)] = Poly::var(var_x(j)).scale(-1.0);
                if micro {
                    out.comps[var_v(j)] = Poly::var(var_v(i));
                    out.comps[var_v(i)] = Poly::var(var_v(j)).scale(-1.0);
                }
            }
            FieldKind::SpatialScaling => {
                for i in 0..dim {
                    out.comps[var_x(i)] = Poly::var(var_x(i));
                    if micro {
                        out.comps[var_v(i)] = Poly::var(var_v(i));
                    }
                }
            }
            FieldKind::SpaceTimeScaling => {
                // Identical in both flavors: t d/dt + x.grad_x.
                out.comps[VAR_T] = Poly::var(VAR_T);
                for i in 0..dim {
                    out.comps[var_x(i)] = Poly::var(var_x(i));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vf::{catalogue, commute_with_T, TCommutation};

    #[test]
    fn poly_arithmetic() {
        let t = Poly::var(VAR_T);
        let x = Poly::var(var_x(0));
        let p = t.mul(&x).add(&Poly::constant(2.0)); // t*x + 2
        assert_eq!(p.derivative(VAR_T), x);
        assert_eq!(p.derivative(var_x(0)), t);
        assert_eq!(p.eval(&[3.0, 5.0, 0.0, 0.0, 0.0, 0.0, 0.0]), 17.0);
        assert!(p.sub(&p).is_zero());
    }

    #[test]
    fn transport_bracket_table() {
        // The catalogue commutes with transport except the space-time
        // scaling, whose bracket gives transport back.
        for dim in 1..=3 {
            let t = PolyVf::transport(dim);
            for id in catalogue(dim, Flavor::Microscopic) {
                let z = PolyVf::field(id, dim);
                let b = t.bracket(&z);
                match commute_with_T(id) {
                    TCommutation::Zero => assert!(b.is_zero(), "{id} in dim {dim}: {b:?}"),
                    TCommutation::T => assert_eq!(b, t, "{id} in dim {dim}"),
                }
            }
        }
    }

    #[test]
    fn macroscopic_uniform_motion_does_not_commute() {
        let t = PolyVf::transport(2);
        let z = PolyVf::field(
            FieldId::macroscopic(FieldKind::UniformMotion(0)),
            2,
        );
        assert!(!t.bracket(&z).is_zero());
    }

    #[test]
    fn complementary_scaling_commutes_up_to_transport() {
        // t d/dt - v.grad_v also reproduces transport under the bracket.
        for dim in 1..=3 {
            let t = PolyVf::transport(dim);
            let mut z = PolyVf::zero();
            z.comps[VAR_T] = Poly::var(VAR_T);
            for i in 0..dim {
                z.comps[var_v(i)] = Poly::var(var_v(i)).scale(-1.0);
            }
            assert_eq!(t.bracket(&z), t, "dim {dim}");
        }
    }

    #[test]
    fn catalogue_closes_under_bracket() {
        // Brackets of catalogue fields must again have coefficients of
        // degree <= 1, i.e. stay first-order with affine coefficients, and a
        // handful of hand-checked relations pin the structure constants.
        let dim = 3;
        let fields = catalogue(dim, Flavor::Microscopic);
        for a in &fields {
            for b in &fields {
                let br = PolyVf::field(*a, dim).bracket(&PolyVf::field(*b, dim));
                for comp in &br.comps {
                    for m in comp.0.keys() {
                        let deg: u8 = m.0.iter().sum();
                        assert!(deg <= 1, "[{a},{b}] has degree-{deg} coefficient");
                    }
                }
            }
        }
        let f = |k: FieldKind| PolyVf::field(FieldId::microscopic(k), dim);
        // [U_i, S] = U_i
        assert_eq!(
            f(FieldKind::UniformMotion(0)).bracket(&f(FieldKind::SpatialScaling)),
            f(FieldKind::UniformMotion(0))
        );
        // [L, X_i] = -X_i
        assert_eq!(
            f(FieldKind::SpaceTimeScaling).bracket(&f(FieldKind::SpaceTranslation(2))),
            f(FieldKind::SpaceTranslation(2)).scale(-1.0)
        );
        // [L, U_i] = 0
        assert!(f(FieldKind::SpaceTimeScaling)
            .bracket(&f(FieldKind::UniformMotion(1)))
            .is_zero());
        // [R_12, R_23] = R_13
        assert_eq!(
            f(FieldKind::Rotation(0, 1)).bracket(&f(FieldKind::Rotation(1, 2))),
            f(FieldKind::Rotation(0, 2))
        );
        // [R_12, X_1] = -X_2
        assert_eq!(
            f(FieldKind::Rotation(0, 1)).bracket(&f(FieldKind::SpaceTranslation(0))),
            f(FieldKind::SpaceTranslation(1)).scale(-1.0)
        );
    }

    #[test]
    fn jacobi_identity_samples() {
        let dim = 3;
        let f = |k: FieldKind| PolyVf::field(FieldId::microscopic(k), dim);
        let triples = [
            (
                FieldKind::Rotation(0, 1),
                FieldKind::UniformMotion(0),
                FieldKind::SpatialScaling,
            ),
            (
                FieldKind::SpaceTimeScaling,
                FieldKind::SpaceTranslation(1),
                FieldKind::Rotation(1, 2),
            ),
        ];
        for (a, b, c) in triples {
            let (a, b, c) = (f(a), f(b), f(c));
            let j = a
                .bracket(&b.bracket(&c))
                .add(&b.bracket(&c.bracket(&a)))
                .add(&c.bracket(&a.bracket(&b)));
            assert!(j.is_zero());
        }
    }
}
