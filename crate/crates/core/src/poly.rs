//! Exact multivariate polynomials in the base coordinates `x⁰..xⁿ⁻¹`.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{One, Signed, ToPrimitive, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::combinatorics::MultiIndex;
use crate::error::{Error, Result};

pub type Rational = BigRational;

pub fn rat(num: i64, den: i64) -> Rational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

pub fn int(v: i64) -> Rational {
    BigRational::from_integer(BigInt::from(v))
}

pub fn parse_rational(s: &str) -> Result<Rational> {
    let s = s.trim();
    let bad = || Error::Parse(format!("not a rational: {s:?}"));
    if let Some((p, q)) = s.split_once('/') {
        let p: BigInt = p.trim().parse().map_err(|_| bad())?;
        let q: BigInt = q.trim().parse().map_err(|_| bad())?;
        if q.is_zero() {
            return Err(bad());
        }
        Ok(BigRational::new(p, q))
    } else if let Some((whole, frac)) = s.split_once('.') {
        let digits = format!("{whole}{frac}");
        let p: BigInt = digits.parse().map_err(|_| bad())?;
        let q = num::pow(BigInt::from(10), frac.len());
        Ok(BigRational::new(p, q))
    } else {
        let p: BigInt = s.parse().map_err(|_| bad())?;
        Ok(BigRational::from_integer(p))
    }
}

pub fn format_rational(r: &Rational) -> String {
    if r.is_integer() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

pub fn to_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// Exact polynomial with rational coefficients, canonical (no zero terms).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Poly {
    n: usize,
    terms: BTreeMap<Vec<u32>, Rational>,
}

impl Poly {
    pub fn zero(n: usize) -> Self {
        Poly {
            n,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(n: usize, c: Rational) -> Self {
        let mut p = Poly::zero(n);
        p.add_term(vec![0; n], c);
        p
    }

    pub fn one(n: usize) -> Self {
        Poly::constant(n, Rational::one())
    }

    pub fn var(n: usize, axis: usize) -> Self {
        let mut e = vec![0; n];
        e[axis] = 1;
        Poly::monomial(e, Rational::one())
    }

    pub fn monomial(exponents: Vec<u32>, c: Rational) -> Self {
        let mut p = Poly::zero(exponents.len());
        p.add_term(exponents, c);
        p
    }

    pub fn from_terms(n: usize, terms: impl IntoIterator<Item = (Vec<u32>, Rational)>) -> Self {
        let mut p = Poly::zero(n);
        for (e, c) in terms {
            assert_eq!(e.len(), n, "exponent vector length");
            p.add_term(e, c);
        }
        p
    }

    pub fn nvars(&self) -> usize {
        self.n
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Vec<u32>, &Rational)> {
        self.terms.iter()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.terms
            .keys()
            .map(|e| e.iter().sum())
            .max()
            .unwrap_or(0)
    }

    pub fn constant_term(&self) -> Rational {
        self.terms
            .get(&vec![0; self.n])
            .cloned()
            .unwrap_or_else(Rational::zero)
    }

    /// `Some(c)` if the polynomial is the constant `c`.
    pub fn as_constant(&self) -> Option<Rational> {
        match self.terms.len() {
            0 => Some(Rational::zero()),
            1 => {
                let (e, c) = self.terms.iter().next().unwrap();
                e.iter().all(|&k| k == 0).then(|| c.clone())
            }
            _ => None,
        }
    }

    pub fn add_term(&mut self, e: Vec<u32>, c: Rational) {
        if c.is_zero() {
            return;
        }
        match self.terms.entry(e) {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                *o.get_mut() += c;
                if o.get().is_zero() {
                    o.remove();
                }
            }
        }
    }

    pub fn scale(&self, c: &Rational) -> Self {
        if c.is_zero() {
            return Poly::zero(self.n);
        }
        Poly {
            n: self.n,
            terms: self
                .terms
                .iter()
                .map(|(e, v)| (e.clone(), v * c))
                .collect(),
        }
    }

    pub fn derivative(&self, axis: usize) -> Self {
        let mut out = Poly::zero(self.n);
        for (e, c) in &self.terms {
            if e[axis] == 0 {
                continue;
            }
            let mut e2 = e.clone();
            e2[axis] -= 1;
            out.add_term(e2, c * BigInt::from(e[axis]));
        }
        out
    }

    pub fn derivative_multi(&self, index: &MultiIndex) -> Self {
        let mut p = self.clone();
        for &a in index.entries() {
            if p.is_zero() {
                break;
            }
            p = p.derivative(a);
        }
        p
    }

    /// Antiderivative in `axis` vanishing on `x_axis = 0`.
    pub fn integrate(&self, axis: usize) -> Self {
        let mut out = Poly::zero(self.n);
        for (e, c) in &self.terms {
            let mut e2 = e.clone();
            e2[axis] += 1;
            out.add_term(e2, c / BigInt::from(e[axis] + 1));
        }
        out
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(e, c)| to_f64(c) * monomial_value(e, x))
            .sum()
    }

    pub fn eval_exact(&self, x: &[Rational]) -> Rational {
        let mut acc = Rational::zero();
        for (e, c) in &self.terms {
            let mut t = c.clone();
            for (k, &p) in e.iter().enumerate() {
                if p > 0 {
                    t *= num::pow(x[k].clone(), p as usize);
                }
            }
            acc += t;
        }
        acc
    }

    /// Compiled form for repeated floating-point evaluation.
    pub fn compile(&self) -> CompiledPoly {
        CompiledPoly {
            terms: self
                .terms
                .iter()
                .map(|(e, c)| (e.clone(), to_f64(c)))
                .collect(),
        }
    }

    /// Relabel coordinates `axis ↦ perm[axis]`.
    pub fn relabel(&self, perm: &[usize]) -> Self {
        let mut out = Poly::zero(self.n);
        for (e, c) in &self.terms {
            let mut e2 = vec![0; self.n];
            for (k, &p) in e.iter().enumerate() {
                e2[perm[k]] = p;
            }
            out.add_term(e2, c.clone());
        }
        out
    }

    /// Random polynomial of total degree `≤ degree` with small integer
    /// coefficients; each monomial is kept with probability `density`.
    pub fn random<R: Rng>(rng: &mut R, n: usize, degree: usize, density: f64) -> Self {
        let mut p = Poly::zero(n);
        for idx in crate::combinatorics::multi_indices(n, degree, crate::combinatorics::Mode::UpTo)
        {
            if rng.gen::<f64>() < density {
                let c: i64 = rng.gen_range(-4..=4);
                let d: i64 = rng.gen_range(1..=3);
                p.add_term(idx.exponents(n), rat(c, d));
            }
        }
        p
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.terms
            .values()
            .map(|c| to_f64(&c.abs()))
            .fold(0.0, f64::max)
    }

    pub fn to_atoms(&self) -> Vec<PolyAtom> {
        self.terms
            .iter()
            .map(|(e, c)| PolyAtom {
                coeff: format_rational(c),
                powers: e.clone(),
            })
            .collect()
    }

    pub fn from_atoms(n: usize, atoms: &[PolyAtom]) -> Result<Self> {
        let mut p = Poly::zero(n);
        for a in atoms {
            if a.powers.len() != n {
                return Err(Error::Parse(format!(
                    "atom has {} powers, expected {n}",
                    a.powers.len()
                )));
            }
            p.add_term(a.powers.clone(), parse_rational(&a.coeff)?);
        }
        Ok(p)
    }
}

pub(crate) fn monomial_value(e: &[u32], x: &[f64]) -> f64 {
    let mut v = 1.0;
    for (k, &p) in e.iter().enumerate() {
        if p > 0 {
            v *= x[k].powi(p as i32);
        }
    }
    v
}

#[derive(Clone, Debug, Default)]
pub struct CompiledPoly {
    terms: Vec<(Vec<u32>, f64)>,
}

impl CompiledPoly {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(e, c)| c * monomial_value(e, x))
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolyAtom {
    pub coeff: String,
    pub powers: Vec<u32>,
}

impl Add for &Poly {
    type Output = Poly;
    fn add(self, rhs: &Poly) -> Poly {
        assert_eq!(self.n, rhs.n);
        let mut out = self.clone();
        for (e, c) in &rhs.terms {
            out.add_term(e.clone(), c.clone());
        }
        out
    }
}

impl Sub for &Poly {
    type Output = Poly;
    fn sub(self, rhs: &Poly) -> Poly {
        assert_eq!(self.n, rhs.n);
        let mut out = self.clone();
        for (e, c) in &rhs.terms {
            out.add_term(e.clone(), -c.clone());
        }
        out
    }
}

impl Mul for &Poly {
    type Output = Poly;
    fn mul(self, rhs: &Poly) -> Poly {
        assert_eq!(self.n, rhs.n);
        let mut out = Poly::zero(self.n);
        for (e1, c1) in &self.terms {
            for (e2, c2) in &rhs.terms {
                let e: Vec<u32> = e1.iter().zip(e2).map(|(a, b)| a + b).collect();
                out.add_term(e, c1 * c2);
            }
        }
        out
    }
}

impl Neg for &Poly {
    type Output = Poly;
    fn neg(self) -> Poly {
        self.scale(&-Rational::one())
    }
}

impl fmt::Display for Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (k, (e, c)) in self.terms.iter().enumerate() {
            if k > 0 {
                write!(f, " + ")?;
            }
            write!(f, "{}", format_rational(c))?;
            for (axis, &p) in e.iter().enumerate() {
                match p {
                    0 => {}
                    1 => write!(f, "*x{axis}")?,
                    _ => write!(f, "*x{axis}^{p}")?,
                }
            }
        }
        Ok(())
    }
}
