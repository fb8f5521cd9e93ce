//! Multi-index bookkeeping and the dimension/threshold formulas used across
//! the crate.
//!
//! Every matrix assembled elsewhere orders its jet columns with
//! [`multi_indices`], so the graded lexicographic order defined here is the
//! single source of truth for column layout.

use std::cmp::Ordering;
use std::fmt;

use num::bigint::{BigInt, BigUint};
use num::rational::BigRational;
use num::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A symmetric multi-index stored as its nondecreasing list of axes.
///
/// Axes are zero based. Ordering is graded lexicographic: first by order,
/// then lexicographically on the sorted entries.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiIndex(Vec<usize>);

impl MultiIndex {
    pub fn new(mut entries: Vec<usize>) -> Self {
        entries.sort_unstable();
        MultiIndex(entries)
    }

    pub fn empty() -> Self {
        MultiIndex(Vec::new())
    }

    pub fn single(axis: usize) -> Self {
        MultiIndex(vec![axis])
    }

    pub fn from_exponents(exponents: &[u32]) -> Self {
        let mut entries = Vec::new();
        for (axis, &e) in exponents.iter().enumerate() {
            entries.extend(std::iter::repeat_n(axis, e as usize));
        }
        MultiIndex(entries)
    }

    pub fn entries(&self) -> &[usize] {
        &self.0
    }

    pub fn order(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Largest axis mentioned, if any.
    pub fn max_axis(&self) -> Option<usize> {
        self.0.last().copied()
    }

    pub fn exponents(&self, n: usize) -> Vec<u32> {
        let mut e = vec![0u32; n];
        for &a in &self.0 {
            e[a] += 1;
        }
        e
    }

    pub fn multiplicity(&self, axis: usize) -> usize {
        self.0.iter().filter(|&&a| a == axis).count()
    }

    pub fn with_axis(&self, axis: usize) -> Self {
        let mut v = self.0.clone();
        let pos = v.partition_point(|&a| a <= axis);
        v.insert(pos, axis);
        MultiIndex(v)
    }

    pub fn union(&self, other: &MultiIndex) -> Self {
        let mut v = Vec::with_capacity(self.0.len() + other.0.len());
        v.extend_from_slice(&self.0);
        v.extend_from_slice(&other.0);
        MultiIndex::new(v)
    }

    /// Multiset containment `other ⊆ self`.
    pub fn contains(&self, other: &MultiIndex) -> bool {
        let (mut i, mut j) = (0, 0);
        while j < other.0.len() {
            if i >= self.0.len() {
                return false;
            }
            match self.0[i].cmp(&other.0[j]) {
                Ordering::Less => i += 1,
                Ordering::Equal => {
                    i += 1;
                    j += 1;
                }
                Ordering::Greater => return false,
            }
        }
        true
    }

    /// Multiset difference `self − other`; `None` unless `other ⊆ self`.
    pub fn difference(&self, other: &MultiIndex) -> Option<Self> {
        if !self.contains(other) {
            return None;
        }
        let mut out = Vec::with_capacity(self.0.len() - other.0.len());
        let mut j = 0;
        for &a in &self.0 {
            if j < other.0.len() && other.0[j] == a {
                j += 1;
            } else {
                out.push(a);
            }
        }
        Some(MultiIndex(out))
    }

    /// Multi-index binomial `Π_k C(self_k, sub_k)` (Leibniz coefficient).
    pub fn binomial(&self, sub: &MultiIndex) -> u64 {
        let mut acc = 1u64;
        let mut i = 0;
        while i < self.0.len() {
            let axis = self.0[i];
            let top = self.multiplicity(axis) as u64;
            let bottom = sub.multiplicity(axis) as u64;
            acc *= small_binomial(top, bottom);
            i += top as usize;
        }
        acc
    }

    /// `A! = Π_k (A_k)!`.
    pub fn factorial(&self) -> u64 {
        let mut acc = 1u64;
        let mut i = 0;
        while i < self.0.len() {
            let k = self.multiplicity(self.0[i]);
            acc *= (1..=k as u64).product::<u64>();
            i += k;
        }
        acc
    }

    /// Apply a coordinate relabeling `axis ↦ perm[axis]`.
    pub fn relabel(&self, perm: &[usize]) -> Self {
        MultiIndex::new(self.0.iter().map(|&a| perm[a]).collect())
    }

    /// All sub-multisets, each listed once.
    pub fn sub_indices(&self) -> Vec<MultiIndex> {
        let mut groups: Vec<(usize, usize)> = Vec::new();
        for &a in &self.0 {
            match groups.last_mut() {
                Some((axis, k)) if *axis == a => *k += 1,
                _ => groups.push((a, 1)),
            }
        }
        let mut out = vec![Vec::new()];
        for (axis, k) in groups {
            let mut next = Vec::with_capacity(out.len() * (k + 1));
            for base in &out {
                for take in 0..=k {
                    let mut v: Vec<usize> = base.clone();
                    v.extend(std::iter::repeat_n(axis, take));
                    next.push(v);
                }
            }
            out = next;
        }
        let mut out: Vec<MultiIndex> = out.into_iter().map(MultiIndex).collect();
        out.sort();
        out
    }
}

impl Ord for MultiIndex {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0
            .len()
            .cmp(&other.0.len())
            .then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for MultiIndex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (k, a) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", a)?;
        }
        write!(f, ")")
    }
}

fn small_binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc = 1u64;
    for j in 0..k {
        acc = acc * (n - j) / (j + 1);
    }
    acc
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Exact,
    UpTo,
}

/// Multi-indices over `n` axes of order exactly `r` or up to `r`, graded
/// lexicographic.
pub fn multi_indices(n: usize, r: usize, mode: Mode) -> Vec<MultiIndex> {
    let lo = match mode {
        Mode::Exact => r,
        Mode::UpTo => 0,
    };
    let mut out = Vec::new();
    for d in lo..=r {
        let mut cur = Vec::with_capacity(d);
        push_sequences(n, d, 0, &mut cur, &mut out);
    }
    out
}

/// Multi-indices of orders `lo..=hi`, graded lexicographic.
pub fn multi_indices_between(n: usize, lo: usize, hi: usize) -> Vec<MultiIndex> {
    let mut out = Vec::new();
    for d in lo..=hi {
        out.extend(multi_indices(n, d, Mode::Exact));
    }
    out
}

fn push_sequences(
    n: usize,
    remaining: usize,
    start: usize,
    cur: &mut Vec<usize>,
    out: &mut Vec<MultiIndex>,
) {
    if remaining == 0 {
        out.push(MultiIndex(cur.clone()));
        return;
    }
    for a in start..n {
        cur.push(a);
        push_sequences(n, remaining - 1, a, cur, out);
        cur.pop();
    }
}

pub fn binomial(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for j in 0..k {
        acc *= n - j;
        acc /= j + 1;
    }
    acc
}

pub(crate) fn binomial_usize(n: usize, k: usize) -> usize {
    binomial(n as u64, k as u64)
        .to_usize()
        .expect("binomial overflows usize")
}

/// `s_{n,r} = C(n+r, r) − 1`, the number of partials of orders `1..=r`.
pub fn jet_dim(n: usize, r: usize) -> usize {
    binomial_usize(n + r, r) - 1
}

/// `s_n = n(n+1)/2`.
pub fn sym_dim(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Number of independent top-order coefficients of an upper totally
/// symmetric operator: `m · Σ_{i=0}^{m} C(n−i, r)`.
pub fn uts_top_count(n: usize, m: usize, r: usize) -> Result<u64> {
    if m + 1 > n {
        return Err(Error::InvalidInput(format!(
            "uts_top_count needs m + 1 <= n (n = {n}, m = {m})"
        )));
    }
    let mut sum = BigUint::zero();
    for i in 0..=m {
        sum += binomial((n - i) as u64, r as u64);
    }
    (sum * BigUint::from(m))
        .to_u64()
        .ok_or_else(|| Error::InvalidInput("uts_top_count overflows u64".into()))
}

/// Unknowns per block of the triangular left-inverse system.
pub fn inverse_unknowns(n: usize, m: usize, s: usize) -> usize {
    (m + 1) * binomial_usize(n + s, s)
}

/// Equations per block of the triangular left-inverse system.
pub fn inverse_equations(n: usize, m: usize, r: usize, s: usize) -> usize {
    m * binomial_usize(n + r + s, r + s)
}

fn jet_inequality_holds(n: usize, m: usize, r: usize, s: usize) -> bool {
    let lhs = binomial((n + s) as u64, s as u64) * BigUint::from(m + 1);
    let rhs = binomial((n + r + s) as u64, (r + s) as u64) * BigUint::from(m);
    lhs > rhs
}

/// `Π_{ℓ=1}^{r} (1 + n/(s+ℓ)) < (m+1)/m`, evaluated exactly.
fn product_form_holds(n: usize, m: usize, r: usize, s: usize) -> bool {
    let mut prod = BigRational::one();
    for l in 1..=r {
        prod *= BigRational::new(BigInt::from(s + l + n), BigInt::from(s + l));
    }
    prod < BigRational::new(BigInt::from(m + 1), BigInt::from(m))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinimalJetOrder {
    pub s_min: usize,
    pub s_lower_bound: f64,
}

/// Least `s` with `(m+1)·C(n+s, s) > m·C(n+r+s, r+s)`, plus the real bound
/// `n / ((1+1/m)^{1/r} − 1)`.
pub fn minimal_jet_order(n: usize, m: usize, r: usize) -> Result<MinimalJetOrder> {
    if n == 0 || m == 0 || r == 0 {
        return Err(Error::InvalidInput(format!(
            "minimal_jet_order needs n, m, r >= 1 (got {n}, {m}, {r})"
        )));
    }
    let mut s = 0;
    while !jet_inequality_holds(n, m, r, s) {
        s += 1;
    }
    debug_assert!(product_form_holds(n, m, r, s));
    Ok(MinimalJetOrder {
        s_min: s,
        s_lower_bound: jet_lower_bound(n, m, r),
    })
}

pub fn jet_lower_bound(n: usize, m: usize, r: usize) -> f64 {
    if r == 1 {
        return (n * m) as f64;
    }
    let base = 1.0 + 1.0 / m as f64;
    n as f64 / (base.powf(1.0 / r as f64) - 1.0)
}

/// Whether the counting inequality holds at `s`; exposed for boundary checks.
pub fn jet_inequality(n: usize, m: usize, r: usize, s: usize) -> bool {
    jet_inequality_holds(n, m, r, s)
}

/// Product form of the counting inequality at `s`.
pub fn jet_product_form(n: usize, m: usize, r: usize, s: usize) -> bool {
    product_form_holds(n, m, r, s)
}

/// `d(n, m) = s_min(n, m, 1) + 3`.
pub fn defect(n: usize, m: usize) -> Result<usize> {
    let d = minimal_jet_order(n, m, 1)?.s_min + 3;
    assert!(d >= n * m + 3, "defect below n·m + 3");
    Ok(d)
}

/// Monic cubic `m³ − (2n+1)m² − (2n+4)m + n(n+3)` whose roots solve
/// `n + s_n − m = m(m+1)(n+1) − m·s_m` with `s_m = m(m+1)/2`.
pub fn dimension_cubic(n: usize) -> [BigInt; 4] {
    let n = BigInt::from(n);
    [
        BigInt::one(),
        -(BigInt::from(2) * &n + BigInt::one()),
        -(BigInt::from(2) * &n + BigInt::from(4)),
        &n * (&n + BigInt::from(3)),
    ]
}

fn eval_cubic(c: &[BigInt; 4], x: &BigRational) -> BigRational {
    let mut acc = BigRational::zero();
    for coef in c {
        acc = acc * x + BigRational::from_integer(coef.clone());
    }
    acc
}

fn bisect(c: &[BigInt; 4], mut lo: BigRational, mut hi: BigRational) -> BigRational {
    let two = BigRational::from_integer(BigInt::from(2));
    let lo_sign = eval_cubic(c, &lo).is_positive();
    // 2^-70 relative to the bracket is far below f64 resolution.
    for _ in 0..(70 + bit_width(&(&hi - &lo))) {
        let mid = (&lo + &hi) / &two;
        let v = eval_cubic(c, &mid);
        if v.is_zero() {
            return mid;
        }
        if v.is_positive() == lo_sign {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo + hi) / two
}

fn bit_width(x: &BigRational) -> usize {
    let v = x.abs().ceil().to_integer();
    v.bits() as usize
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiddleRoot {
    pub roots: [f64; 3],
    pub middle: f64,
    /// |cubic(middle)| evaluated exactly at the returned f64.
    pub residual: f64,
}

/// The middle real root `m_n` of the dimension-count cubic.
pub fn middle_root(n: usize) -> Result<MiddleRoot> {
    if n < 2 {
        return Err(Error::InvalidInput(format!("m_n needs n >= 2, got {n}")));
    }
    let c = dimension_cubic(n);
    // Critical points of the cubic bracket the three roots.
    let a = 3.0;
    let b = c[1].to_f64().unwrap() * 2.0;
    let cc = c[2].to_f64().unwrap();
    let disc = b * b - 4.0 * a * cc;
    if disc <= 0.0 {
        return Err(Error::CubicRoots(format!("no critical points for n = {n}")));
    }
    let c1 = (-b - disc.sqrt()) / (2.0 * a);
    let c2 = (-b + disc.sqrt()) / (2.0 * a);
    let c1 = BigRational::from_float(c1).unwrap();
    let c2 = BigRational::from_float(c2).unwrap();
    let f1 = eval_cubic(&c, &c1);
    let f2 = eval_cubic(&c, &c2);
    if !(f1.is_positive() && f2.is_negative()) {
        return Err(Error::CubicRoots(format!(
            "local extrema do not straddle zero for n = {n}"
        )));
    }
    let bound = c
        .iter()
        .skip(1)
        .map(|v| v.abs())
        .max()
        .unwrap()
        + BigInt::one();
    let bound = BigRational::from_integer(bound);
    let r0 = bisect(&c, -bound.clone(), c1.clone());
    let r1 = bisect(&c, c1, c2.clone());
    let r2 = bisect(&c, c2, bound);
    let roots = [
        r0.to_f64().unwrap(),
        r1.to_f64().unwrap(),
        r2.to_f64().unwrap(),
    ];
    let middle = roots[1];
    let residual = eval_cubic(&c, &BigRational::from_float(middle).unwrap())
        .abs()
        .to_f64()
        .unwrap();
    if !(roots[0] < roots[1] && roots[1] < roots[2]) {
        return Err(Error::CubicRoots(format!("roots not separated for n = {n}")));
    }
    Ok(MiddleRoot {
        roots,
        middle,
        residual,
    })
}

/// Every threshold attached to `(n, m, r)` with its consistency checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub n: usize,
    pub m: usize,
    pub r: usize,
    pub s_min: usize,
    pub s_lower_bound: f64,
    /// Inequality fails at `s_min − 1` (vacuous when `s_min = 0`).
    pub boundary_verified: bool,
    pub product_form_at_s_min: bool,
    /// `bound − r < s_min ≤ ⌊bound⌋`.
    pub bound_bracket: bool,
    pub m_n: Option<f64>,
    pub sandwich: Option<bool>,
    pub defect: usize,
    pub uts_top_count: Option<u64>,
    /// `q = s_{n,r+1} − m`.
    pub q: Option<usize>,
    /// `q ≥ m Σ C(n−i, r)` and `m ≤ (n−1)/(r+1)`.
    pub compat_hypotheses: Option<bool>,
    /// `q ≥ n + s_n − m_n` (only meaningful for `r = 1`).
    pub middle_root_condition: Option<bool>,
}

pub fn threshold_report(n: usize, m: usize, r: usize) -> Result<ThresholdReport> {
    let mjo = minimal_jet_order(n, m, r)?;
    let s = mjo.s_min;
    let boundary_verified = s == 0 || !jet_inequality_holds(n, m, r, s - 1);
    let bound = mjo.s_lower_bound;
    let bound_bracket =
        (s as f64) > bound - r as f64 - 1e-9 && (s as f64) <= (bound + 1e-9).floor();
    let root = if n >= 2 { Some(middle_root(n)?) } else { None };
    let m_n = root.as_ref().map(|r| r.middle);
    let sandwich = m_n.map(|mn| {
        let s2 = (n as f64 / 2.0).sqrt();
        mn <= s2 && s2 <= mn + 0.5
    });
    let uts = uts_top_count(n, m, r).ok();
    let full = jet_dim(n, r + 1);
    let q = full.checked_sub(m).filter(|&q| q > jet_dim(n, r));
    let compat_hypotheses = match (q, uts) {
        (Some(q), Some(top)) => {
            Some(q as u64 >= top && (m as f64) <= (n as f64 - 1.0) / (r as f64 + 1.0))
        }
        (Some(_), None) => Some(false),
        _ => None,
    };
    let middle_root_condition = match (r, q, m_n) {
        (1, Some(q), Some(mn)) => Some(q as f64 >= (n + sym_dim(n)) as f64 - mn),
        _ => None,
    };
    Ok(ThresholdReport {
        n,
        m,
        r,
        s_min: s,
        s_lower_bound: bound,
        boundary_verified,
        product_form_at_s_min: product_form_holds(n, m, r, s),
        bound_bracket,
        m_n,
        sandwich,
        defect: defect(n, m)?,
        uts_top_count: uts,
        q,
        compat_hypotheses,
        middle_root_condition,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx(v: &[usize]) -> MultiIndex {
        MultiIndex::new(v.to_vec())
    }

    #[test]
    fn enumerates_symmetric_pairs() {
        let got = multi_indices(2, 2, Mode::Exact);
        assert_eq!(got, vec![idx(&[0, 0]), idx(&[0, 1]), idx(&[1, 1])]);
        assert_eq!(multi_indices(1, 0, Mode::UpTo), vec![MultiIndex::empty()]);
        assert_eq!(multi_indices(3, 2, Mode::UpTo).len(), 10);
    }

    #[test]
    fn counts_match_binomials() {
        for n in 1..=5 {
            for r in 0..=4 {
                let exact = multi_indices(n, r, Mode::Exact).len();
                let up_to = multi_indices(n, r, Mode::UpTo).len();
                assert_eq!(exact, binomial_usize(n + r - 1, r));
                assert_eq!(up_to, binomial_usize(n + r, r));
            }
        }
    }

    #[test]
    fn graded_order_is_sorted_and_unique() {
        let v = multi_indices(3, 3, Mode::UpTo);
        for w in v.windows(2) {
            assert!(w[0] < w[1]);
        }
    }

    #[test]
    fn jet_dims() {
        assert_eq!(jet_dim(2, 2), 5);
        assert_eq!(jet_dim(1, 1), 1);
        assert_eq!(jet_dim(3, 2), 9);
        for n in 1..=6 {
            assert_eq!(jet_dim(n, 2), n + sym_dim(n));
        }
    }

    #[test]
    fn uts_counts() {
        assert_eq!(uts_top_count(4, 1, 1).unwrap(), 7);
        assert_eq!(uts_top_count(2, 1, 1).unwrap(), 3);
        assert_eq!(uts_top_count(5, 2, 1).unwrap(), 24);
        assert!(uts_top_count(2, 2, 1).is_err());
    }

    #[test]
    fn minimal_orders() {
        let got = minimal_jet_order(2, 1, 1).unwrap();
        assert_eq!(got.s_min, 2);
        assert_eq!(got.s_lower_bound, 2.0);
        assert_eq!(minimal_jet_order(3, 1, 1).unwrap().s_min, 3);
        assert_eq!(minimal_jet_order(5, 2, 1).unwrap().s_min, 10);
        // s = 9 is exactly balanced: 6006 = 6006.
        assert!(!jet_inequality(5, 2, 1, 9));
        assert!(minimal_jet_order(0, 1, 1).is_err());
    }

    #[test]
    fn defects() {
        assert_eq!(defect(2, 1).unwrap(), 5);
        assert_eq!(defect(3, 1).unwrap(), 6);
        assert_eq!(defect(5, 2).unwrap(), 13);
    }

    #[test]
    fn middle_root_n2() {
        let r = middle_root(2).unwrap();
        assert!((r.middle - 0.86).abs() < 0.01);
        assert!(r.middle <= 1.0 && 1.0 <= r.middle + 0.5);
        assert!(r.residual < 1e-10);
        let r8 = middle_root(8).unwrap();
        assert!(r8.middle <= 2.0 && 2.0 <= r8.middle + 0.5);
        assert!(middle_root(1).is_err());
    }

    #[test]
    fn leibniz_helpers() {
        let a = idx(&[0, 0, 1]);
        let b = idx(&[0]);
        assert!(a.contains(&b));
        assert_eq!(a.difference(&b), Some(idx(&[0, 1])));
        assert_eq!(a.binomial(&b), 2);
        assert_eq!(a.factorial(), 2);
        assert_eq!(a.sub_indices().len(), 6);
        assert!(!b.contains(&a));
        assert_eq!(MultiIndex::from_exponents(&[2, 1]), a);
        assert_eq!(a.exponents(3), vec![2, 1, 0]);
    }
}
