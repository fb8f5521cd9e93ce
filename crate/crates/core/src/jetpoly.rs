//! Polynomials in the fiber coordinates `f^i_A` of a jet space, with
//! partial and total derivatives.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::combinatorics::MultiIndex;
use crate::poly::{format_rational, int, to_f64, Poly, Rational};

/// The jet coordinate `f^component_index`, i.e. `∂_index f^component`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct JetCoord {
    pub component: usize,
    pub index: MultiIndex,
}

impl JetCoord {
    pub fn new(component: usize, index: MultiIndex) -> Self {
        JetCoord { component, index }
    }
}

impl fmt::Display for JetCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "f{}_{}", self.component, self.index)
    }
}

/// Sorted `(coordinate, exponent)` pairs with positive exponents.
type Monomial = Vec<(JetCoord, u32)>;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct JetPoly {
    terms: BTreeMap<Monomial, Rational>,
}

fn mul_monomials(a: &Monomial, b: &Monomial) -> Monomial {
    let mut out: Monomial = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        if j == b.len() || (i < a.len() && a[i].0 < b[j].0) {
            out.push(a[i].clone());
            i += 1;
        } else if i == a.len() || b[j].0 < a[i].0 {
            out.push(b[j].clone());
            j += 1;
        } else {
            out.push((a[i].0.clone(), a[i].1 + b[j].1));
            i += 1;
            j += 1;
        }
    }
    out
}

impl JetPoly {
    pub fn zero() -> Self {
        JetPoly::default()
    }

    pub fn constant(c: Rational) -> Self {
        let mut p = JetPoly::zero();
        p.add_term(Vec::new(), c);
        p
    }

    pub fn var(c: JetCoord) -> Self {
        let mut p = JetPoly::zero();
        p.add_term(vec![(c, 1)], Rational::one());
        p
    }

    fn add_term(&mut self, m: Monomial, c: Rational) {
        if c.is_zero() {
            return;
        }
        let e = self.terms.entry(m.clone()).or_insert_with(Rational::zero);
        *e += c;
        if e.is_zero() {
            self.terms.remove(&m);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// `Some(d)` if every term has total degree `d`.
    pub fn homogeneous_degree(&self) -> Option<u32> {
        let mut degs = self.terms.keys().map(|m| m.iter().map(|(_, e)| e).sum::<u32>());
        let first = degs.next()?;
        degs.all(|d| d == first).then_some(first)
    }

    pub fn add(&self, other: &JetPoly) -> JetPoly {
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m.clone(), c.clone());
        }
        out
    }

    pub fn sub(&self, other: &JetPoly) -> JetPoly {
        self.add(&other.scale(&-Rational::one()))
    }

    pub fn scale(&self, c: &Rational) -> JetPoly {
        let mut out = JetPoly::zero();
        for (m, v) in &self.terms {
            out.add_term(m.clone(), v * c);
        }
        out
    }

    pub fn mul(&self, other: &JetPoly) -> JetPoly {
        let mut out = JetPoly::zero();
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                out.add_term(mul_monomials(ma, mb), ca * cb);
            }
        }
        out
    }

    pub fn coords(&self) -> BTreeSet<JetCoord> {
        self.terms
            .keys()
            .flat_map(|m| m.iter().map(|(c, _)| c.clone()))
            .collect()
    }

    /// `∂P/∂c`.
    pub fn partial(&self, coord: &JetCoord) -> JetPoly {
        let mut out = JetPoly::zero();
        for (m, c) in &self.terms {
            if let Some(pos) = m.iter().position(|(v, _)| v == coord) {
                let e = m[pos].1;
                let mut m2 = m.clone();
                if e == 1 {
                    m2.remove(pos);
                } else {
                    m2[pos].1 -= 1;
                }
                out.add_term(m2, c * int(e as i64));
            }
        }
        out
    }

    /// Total derivative `D_α P = Σ_c ∂P/∂c · f^{c.component}_{c.index ∪ α}`.
    pub fn total_derivative(&self, axis: usize) -> JetPoly {
        let mut out = JetPoly::zero();
        for coord in self.coords() {
            let lifted = JetCoord::new(coord.component, coord.index.with_axis(axis));
            out = out.add(&self.partial(&coord).mul(&JetPoly::var(lifted)));
        }
        out
    }

    pub fn total_derivative_multi(&self, index: &MultiIndex) -> JetPoly {
        let mut p = self.clone();
        for &a in index.entries() {
            p = p.total_derivative(a);
        }
        p
    }

    pub fn eval(&self, value: impl Fn(&JetCoord) -> f64) -> f64 {
        self.terms
            .iter()
            .map(|(m, c)| {
                to_f64(c)
                    * m.iter()
                        .map(|(v, e)| value(v).powi(*e as i32))
                        .product::<f64>()
            })
            .sum()
    }

    /// Composition with a polynomial map: `f^i_A ↦ ∂_A polys[i]`.
    pub fn substitute(&self, polys: &[Poly]) -> Poly {
        let n = polys[0].nvars();
        let mut cache: BTreeMap<JetCoord, Poly> = BTreeMap::new();
        let mut out = Poly::zero(n);
        for (m, c) in &self.terms {
            let mut term = Poly::constant(n, c.clone());
            for (v, e) in m {
                let base = cache
                    .entry(v.clone())
                    .or_insert_with(|| polys[v.component].derivative_multi(&v.index))
                    .clone();
                for _ in 0..*e {
                    term = &term * &base;
                }
            }
            out = &out + &term;
        }
        out
    }
}

impl fmt::Display for JetPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (k, (m, c)) in self.terms.iter().enumerate() {
            if k > 0 {
                write!(f, " + ")?;
            }
            write!(f, "{}", format_rational(c))?;
            for (v, e) in m {
                if *e == 1 {
                    write!(f, "*{v}")?;
                } else {
                    write!(f, "*{v}^{e}")?;
                }
            }
        }
        Ok(())
    }
}

/// Determinant of a square matrix over a commutative ring by expansion
/// along columns, memoised on row subsets (`k·2^k` products).
pub fn det_by_subsets<T: Clone>(
    m: &[Vec<T>],
    zero: T,
    one: T,
    add: impl Fn(&T, &T) -> T,
    mul: impl Fn(&T, &T) -> T,
    neg: impl Fn(&T) -> T,
    is_zero: impl Fn(&T) -> bool,
) -> T {
    let k = m.len();
    if k == 0 {
        return one;
    }
    assert!(k <= 24, "determinant too large for subset expansion");
    // layer[S] = det(rows S, columns 0..|S|)
    let mut layer: BTreeMap<u32, T> = BTreeMap::new();
    layer.insert(0, one);
    for col in 0..k {
        let mut next: BTreeMap<u32, T> = BTreeMap::new();
        for (&set, d) in &layer {
            if is_zero(d) {
                continue;
            }
            for row in 0..k {
                if set & (1 << row) != 0 || is_zero(&m[row][col]) {
                    continue;
                }
                // Position of `row` within the enlarged set gives the sign.
                let pos = (set & ((1u32 << row) - 1)).count_ones() as usize;
                let mut term = mul(&m[row][col], d);
                if (pos + col) % 2 == 1 {
                    term = neg(&term);
                }
                let key = set | (1 << row);
                let v = match next.get(&key) {
                    Some(old) => add(old, &term),
                    None => term,
                };
                next.insert(key, v);
            }
        }
        layer = next;
    }
    layer.remove(&((1u32 << k) - 1)).unwrap_or(zero)
}

pub fn det_jetpoly(m: &[Vec<JetPoly>]) -> JetPoly {
    det_by_subsets(
        m,
        JetPoly::zero(),
        JetPoly::constant(Rational::one()),
        |a, b| a.add(b),
        |a, b| a.mul(b),
        |a| a.scale(&-Rational::one()),
        JetPoly::is_zero,
    )
}

pub fn det_poly(m: &[Vec<Poly>], n: usize) -> Poly {
    det_by_subsets(
        m,
        Poly::zero(n),
        Poly::one(n),
        |a, b| a + b,
        |a, b| a * b,
        |a| -a,
        Poly::is_zero,
    )
}
