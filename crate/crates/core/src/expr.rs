//! Closed-form scalar expressions: finite sums of
//! `coeff · x^powers · [sin|cos](x_axis)`.
//!
//! The atom algebra is closed under `∂_α`, so any jet of an expression is
//! again an expression and evaluates exactly.

use std::collections::BTreeMap;

use num::bigint::BigInt;
use num::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::combinatorics::MultiIndex;
use crate::error::{Error, Result};
use crate::poly::{format_rational, monomial_value, parse_rational, to_f64, Poly, Rational};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrigKind {
    Sin,
    Cos,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Trig {
    pub kind: TrigKind,
    pub axis: usize,
}

type AtomKey = (Vec<u32>, Option<Trig>);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Expr {
    n: usize,
    atoms: BTreeMap<AtomKey, Rational>,
}

impl Expr {
    pub fn zero(n: usize) -> Self {
        Expr {
            n,
            atoms: BTreeMap::new(),
        }
    }

    pub fn nvars(&self) -> usize {
        self.n
    }

    pub fn constant(n: usize, c: Rational) -> Self {
        let mut e = Expr::zero(n);
        e.add_atom(vec![0; n], None, c);
        e
    }

    pub fn var(n: usize, axis: usize) -> Self {
        let mut p = vec![0; n];
        p[axis] = 1;
        let mut e = Expr::zero(n);
        e.add_atom(p, None, Rational::one());
        e
    }

    pub fn monomial(powers: Vec<u32>, c: Rational) -> Self {
        let mut e = Expr::zero(powers.len());
        e.add_atom(powers, None, c);
        e
    }

    pub fn trig(n: usize, kind: TrigKind, axis: usize) -> Self {
        let mut e = Expr::zero(n);
        e.add_atom(vec![0; n], Some(Trig { kind, axis }), Rational::one());
        e
    }

    pub fn add_atom(&mut self, powers: Vec<u32>, trig: Option<Trig>, c: Rational) {
        assert_eq!(powers.len(), self.n, "atom power length");
        if c.is_zero() {
            return;
        }
        let key = (powers, trig);
        let entry = self.atoms.entry(key.clone()).or_insert_with(Rational::zero);
        *entry += c;
        if entry.is_zero() {
            self.atoms.remove(&key);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn has_trig(&self) -> bool {
        self.atoms.keys().any(|(_, t)| t.is_some())
    }

    pub fn add(&self, other: &Expr) -> Expr {
        let mut out = self.clone();
        for ((p, t), c) in &other.atoms {
            out.add_atom(p.clone(), *t, c.clone());
        }
        out
    }

    pub fn scale(&self, c: &Rational) -> Expr {
        let mut out = Expr::zero(self.n);
        for ((p, t), v) in &self.atoms {
            out.add_atom(p.clone(), *t, v * c);
        }
        out
    }

    pub fn derivative(&self, axis: usize) -> Expr {
        let mut out = Expr::zero(self.n);
        for ((p, t), c) in &self.atoms {
            if p[axis] > 0 {
                let mut p2 = p.clone();
                p2[axis] -= 1;
                out.add_atom(p2, *t, c * BigInt::from(p[axis]));
            }
            if let Some(tr) = t {
                if tr.axis == axis {
                    let (kind, sign) = match tr.kind {
                        TrigKind::Sin => (TrigKind::Cos, Rational::one()),
                        TrigKind::Cos => (TrigKind::Sin, -Rational::one()),
                    };
                    out.add_atom(p.clone(), Some(Trig { kind, axis }), c * sign);
                }
            }
        }
        out
    }

    pub fn derivative_multi(&self, index: &MultiIndex) -> Expr {
        let mut e = self.clone();
        for &a in index.entries() {
            if e.is_zero() {
                break;
            }
            e = e.derivative(a);
        }
        e
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.atoms
            .iter()
            .map(|((p, t), c)| to_f64(c) * atom_value(p, t, x))
            .sum()
    }

    pub fn compile(&self) -> CompiledExpr {
        CompiledExpr {
            atoms: self
                .atoms
                .iter()
                .map(|((p, t), c)| (p.clone(), *t, to_f64(c)))
                .collect(),
        }
    }

    pub fn to_poly(&self) -> Option<Poly> {
        if self.has_trig() {
            return None;
        }
        Some(Poly::from_terms(
            self.n,
            self.atoms.iter().map(|((p, _), c)| (p.clone(), c.clone())),
        ))
    }

    pub fn from_poly(p: &Poly) -> Expr {
        let mut e = Expr::zero(p.nvars());
        for (pw, c) in p.terms() {
            e.add_atom(pw.clone(), None, c.clone());
        }
        e
    }

    pub fn to_atoms(&self) -> Vec<MapAtom> {
        self.atoms
            .iter()
            .map(|((p, t), c)| MapAtom {
                coeff: format_rational(c),
                powers: p.clone(),
                trig: *t,
            })
            .collect()
    }

    pub fn from_atoms(n: usize, atoms: &[MapAtom]) -> Result<Expr> {
        let mut e = Expr::zero(n);
        for a in atoms {
            if a.powers.len() != n {
                return Err(Error::Parse(format!(
                    "atom has {} powers, expected {n}",
                    a.powers.len()
                )));
            }
            if let Some(t) = a.trig {
                if t.axis >= n {
                    return Err(Error::Parse(format!("trig axis {} out of range", t.axis)));
                }
            }
            e.add_atom(a.powers.clone(), a.trig, parse_rational(&a.coeff)?);
        }
        Ok(e)
    }
}

fn atom_value(p: &[u32], t: &Option<Trig>, x: &[f64]) -> f64 {
    let mut v = monomial_value(p, x);
    if let Some(tr) = t {
        v *= match tr.kind {
            TrigKind::Sin => x[tr.axis].sin(),
            TrigKind::Cos => x[tr.axis].cos(),
        };
    }
    v
}

#[derive(Clone, Debug, Default)]
pub struct CompiledExpr {
    atoms: Vec<(Vec<u32>, Option<Trig>, f64)>,
}

impl CompiledExpr {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.atoms
            .iter()
            .map(|(p, t, c)| c * atom_value(p, t, x))
            .sum()
    }
}

/// JSON atom of the map-definition format.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapAtom {
    pub coeff: String,
    pub powers: Vec<u32>,
    pub trig: Option<Trig>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::int;

    #[test]
    fn trig_derivatives_cycle() {
        let s = Expr::trig(1, TrigKind::Sin, 0);
        let d4 = s.derivative_multi(&MultiIndex::new(vec![0; 4]));
        assert_eq!(d4, s);
        let d1 = s.derivative(0);
        assert_eq!(d1, Expr::trig(1, TrigKind::Cos, 0));
        assert!((d1.eval(&[0.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn product_rule_on_mixed_atom() {
        // x² sin x  →  2x sin x + x² cos x
        let mut e = Expr::zero(1);
        e.add_atom(vec![2], Some(Trig { kind: TrigKind::Sin, axis: 0 }), int(1));
        let d = e.derivative(0);
        let x: f64 = 0.7;
        let expected = 2.0 * x * x.sin() + x * x * x.cos();
        assert!((d.eval(&[x]) - expected).abs() < 1e-14);
    }

    #[test]
    fn canonical_merge() {
        let mut e = Expr::var(2, 0);
        e.add_atom(vec![1, 0], None, int(-1));
        assert!(e.is_zero());
    }
}
