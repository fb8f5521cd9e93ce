//! Linear relations among the jet vectors of a full-rank map and the
//! compatibility operator they define.
//!
//! For `N` jet columns spanning `ℝ^q` with pivot columns `p₁ < … < p_q` and
//! dependent column `d_a`, relation `a` has
//! `λ^{p_i}_a = (−1)^i det V_{a,i}` and `λ^{d_a}_a = (−1)^{q+1} det V₀`,
//! all other coefficients zero.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num::{One, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::combinatorics::{jet_dim, multi_indices, multi_indices_between, Mode, MultiIndex};
use crate::error::{Error, Result};
use crate::jet::{rank_profile_points, AnalyticMap, Classification};
use crate::jetpoly::{det_jetpoly, det_poly, JetCoord, JetPoly};
use crate::linalg::{angle_to_subspace, greedy_columns, null_space, numerical_rank};
use crate::pdo::{is_upper_totally_symmetric, LinearPDO};
use crate::poly::{rat, Poly, Rational};

/// Largest `q` for which minors are expanded symbolically in jet
/// coordinates (`q!` terms per minor).
pub const MAX_SYMBOLIC_Q: usize = 7;

/// Relative smallest singular value below which a pivot block is rejected.
pub const PIVOT_TOL: f64 = 1e-8;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoefficientBranch {
    /// Jet-column positions of the independent block, increasing.
    pub pivot: Vec<usize>,
    /// Dependent column of relation `a` is `dependent[a]`.
    pub dependent: Vec<usize>,
    /// Indices of the sample points this pivot is used on.
    pub points: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CompatibilityCoeffs {
    pub n: usize,
    pub q: usize,
    pub r: usize,
    pub m: usize,
    pub map: AnalyticMap,
    /// Jet columns of orders `1..=r+1`.
    pub columns: Vec<MultiIndex>,
    pub points: Vec<Vec<f64>>,
    pub branches: Vec<CoefficientBranch>,
    /// `values[p][a][j] = λ^{columns[j]}_a` at point `p`, from its branch.
    pub values: Vec<Vec<Vec<f64>>>,
    /// Symbolic coefficients of branch 0 (`q ≤ MAX_SYMBOLIC_Q`).
    #[serde(skip)]
    pub symbolic: Option<Vec<BTreeMap<usize, JetPoly>>>,
    /// Branch-0 coefficients composed with a polynomial map.
    #[serde(skip)]
    pub exact: Option<Vec<BTreeMap<usize, Poly>>>,
    /// Worst `|Σ λ^A ∂_A f| / (max|λ| · max|∂f|)` over the points.
    pub max_relation_ratio: f64,
    /// Worst angle between a minor-formula relation and the numerical
    /// null space of the jet matrix.
    pub max_null_angle: f64,
    /// Smallest `max_{a,A} |λ^A_a|` over the points (nonvanishing margin).
    pub min_lambda_norm: f64,
}

fn sign(k: usize) -> f64 {
    if k % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

fn det(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        1.0
    } else {
        m.clone().lu().determinant()
    }
}

/// Minor-formula relations for one pivot choice from a numeric jet matrix.
pub fn minor_relations(j: &DMatrix<f64>, pivot: &[usize], dependent: &[usize]) -> Vec<Vec<f64>> {
    let q = pivot.len();
    let v0 = j.select_columns(pivot);
    let d0 = det(&v0);
    dependent
        .iter()
        .map(|&d| {
            let mut lam = vec![0.0; j.ncols()];
            let mut cols: Vec<usize> = pivot.to_vec();
            cols.push(d);
            for i in 0..q {
                let mut c = cols.clone();
                c.remove(i);
                lam[pivot[i]] = sign(i + 1) * det(&j.select_columns(&c));
            }
            lam[d] = sign(q + 1) * d0;
            lam
        })
        .collect()
}

fn pivot_ok(j: &DMatrix<f64>, pivot: &[usize]) -> bool {
    let info = numerical_rank(&j.select_columns(pivot), PIVOT_TOL, 0.0);
    info.rank == pivot.len()
}

fn choose_pivot(j: &DMatrix<f64>, forced: usize) -> (Vec<usize>, Vec<usize>) {
    let q = j.nrows();
    let forced: Vec<usize> = (0..forced).collect();
    let mut pivot = greedy_columns(j, &forced, q);
    pivot.sort_unstable();
    let dependent = (0..j.ncols()).filter(|c| !pivot.contains(c)).collect();
    (pivot, dependent)
}

fn nearest_to_centroid(points: &[Vec<f64>], candidates: &[usize]) -> usize {
    let n = points[0].len();
    let mut centroid = vec![0.0; n];
    for p in points {
        for k in 0..n {
            centroid[k] += p[k] / points.len() as f64;
        }
    }
    let dist = |i: usize| -> f64 {
        points[i]
            .iter()
            .zip(&centroid)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    };
    *candidates
        .iter()
        .min_by(|&&a, &&b| dist(a).partial_cmp(&dist(b)).unwrap())
        .unwrap()
}

/// Builds the dependence coefficients of a full `(r+1)`-rank map at the
/// given sample points.
pub fn dependence_coeffs(
    f: &AnalyticMap,
    r: usize,
    points: &[Vec<f64>],
    tol: f64,
) -> Result<CompatibilityCoeffs> {
    if points.is_empty() {
        return Err(Error::EmptyPatch);
    }
    let (n, q) = (f.n(), f.q());
    let cert = rank_profile_points(f, points, r + 1, tol)?;
    let m = match cert.classification {
        Classification::Free { .. } => 0,
        Classification::FullRank { m, .. } => m,
        Classification::Degenerate => {
            return Err(Error::RankDeficient {
                witness: cert.witness.unwrap_or_else(|| points[0].clone()),
                detail: format!("map is not of full {}-rank", r + 1),
            })
        }
    };
    let columns = multi_indices_between(n, 1, r + 1);
    let forced = jet_dim(n, r);
    let table = f.jet_table(r + 1);
    let jets: Vec<DMatrix<f64>> = points.par_iter().map(|x| table.matrix(x, r + 1)).collect();

    let mut branches: Vec<CoefficientBranch> = Vec::new();
    let mut branch_of_point = vec![usize::MAX; points.len()];
    let mut unassigned: Vec<usize> = (0..points.len()).collect();
    while !unassigned.is_empty() {
        let seed = if branches.is_empty() {
            nearest_to_centroid(points, &unassigned)
        } else {
            unassigned[0]
        };
        let (pivot, dependent) = choose_pivot(&jets[seed], forced);
        if !pivot_ok(&jets[seed], &pivot) {
            return Err(Error::RankDeficient {
                witness: points[seed].clone(),
                detail: "no independent block of jet columns".into(),
            });
        }
        let mine: Vec<usize> = unassigned
            .iter()
            .copied()
            .filter(|&p| pivot_ok(&jets[p], &pivot))
            .collect();
        for &p in &mine {
            branch_of_point[p] = branches.len();
        }
        unassigned.retain(|p| !mine.contains(p));
        branches.push(CoefficientBranch {
            pivot,
            dependent,
            points: mine,
        });
    }

    let values: Vec<Vec<Vec<f64>>> = (0..points.len())
        .into_par_iter()
        .map(|p| {
            let b = &branches[branch_of_point[p]];
            minor_relations(&jets[p], &b.pivot, &b.dependent)
        })
        .collect();

    let mut max_ratio: f64 = 0.0;
    let mut max_angle: f64 = 0.0;
    let mut min_norm = f64::INFINITY;
    for (p, j) in jets.iter().enumerate() {
        let jmax = j.amax();
        let ns = null_space(j, 1e-10);
        let mut pmax: f64 = 0.0;
        for lam in &values[p] {
            let v = DVector::from_column_slice(lam);
            let lmax = v.amax();
            pmax = pmax.max(lmax);
            let res = (j * &v).amax();
            let scale = lmax * jmax;
            if scale > 0.0 {
                max_ratio = max_ratio.max(res / scale);
            }
            max_angle = max_angle.max(angle_to_subspace(&v, &ns));
        }
        if m > 0 {
            min_norm = min_norm.min(pmax);
        }
    }

    let b0 = branches.first();
    let symbolic = match b0 {
        Some(b) if q <= MAX_SYMBOLIC_Q && m > 0 => Some(symbolic_relations(q, &columns, b)),
        _ => None,
    };
    let exact = match (b0, f.to_polys()) {
        (Some(b), Some(polys)) if m > 0 => Some(exact_relations(&polys, &columns, b)),
        _ => None,
    };

    Ok(CompatibilityCoeffs {
        n,
        q,
        r,
        m,
        map: f.clone(),
        columns,
        points: points.to_vec(),
        branches,
        values,
        symbolic,
        exact,
        max_relation_ratio: max_ratio,
        max_null_angle: max_angle,
        min_lambda_norm: if m > 0 { min_norm } else { 0.0 },
    })
}

fn relation_matrices<T: Clone>(
    b: &CoefficientBranch,
    column: impl Fn(usize) -> Vec<T>,
    det: impl Fn(&[Vec<T>]) -> T,
    negate: impl Fn(&T) -> T,
) -> Vec<BTreeMap<usize, T>> {
    let q = b.pivot.len();
    // Column-major list → row-major square matrix.
    let square = |cols: &[usize]| -> Vec<Vec<T>> {
        let data: Vec<Vec<T>> = cols.iter().map(|&c| column(c)).collect();
        (0..q).map(|i| data.iter().map(|col| col[i].clone()).collect()).collect()
    };
    let d0 = det(&square(&b.pivot));
    b.dependent
        .iter()
        .map(|&d| {
            let mut out = BTreeMap::new();
            let mut cols = b.pivot.clone();
            cols.push(d);
            for i in 0..q {
                let mut c = cols.clone();
                c.remove(i);
                let v = det(&square(&c));
                out.insert(b.pivot[i], if (i + 1) % 2 == 1 { negate(&v) } else { v });
            }
            out.insert(d, if (q + 1) % 2 == 1 { negate(&d0) } else { d0.clone() });
            out
        })
        .collect()
}

fn symbolic_relations(q: usize, columns: &[MultiIndex], b: &CoefficientBranch) -> Vec<BTreeMap<usize, JetPoly>> {
    let mut rel = relation_matrices(
        b,
        |c| {
            (0..q)
                .map(|i| JetPoly::var(JetCoord::new(i, columns[c].clone())))
                .collect()
        },
        det_jetpoly,
        |p| p.scale(&-Rational::one()),
    );
    for r in rel.iter_mut() {
        r.retain(|_, p| !p.is_zero());
    }
    rel
}

fn exact_relations(polys: &[Poly], columns: &[MultiIndex], b: &CoefficientBranch) -> Vec<BTreeMap<usize, Poly>> {
    let n = polys[0].nvars();
    let derivs: Vec<Vec<Poly>> = columns
        .iter()
        .map(|c| polys.iter().map(|p| p.derivative_multi(c)).collect())
        .collect();
    let mut rel = relation_matrices(b, |c| derivs[c].clone(), |m| det_poly(m, n), |p| -p);
    for r in rel.iter_mut() {
        r.retain(|_, p| !p.is_zero());
    }
    rel
}

impl CompatibilityCoeffs {
    /// Branch-0 relations evaluated at an arbitrary point.
    pub fn lambda_at(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let Some(b) = self.branches.first() else {
            return Vec::new();
        };
        let j = self.map.jet_table(self.r + 1).matrix(x, self.r + 1);
        minor_relations(&j, &b.pivot, &b.dependent)
    }

    pub fn column_position(&self, index: &MultiIndex) -> Option<usize> {
        self.columns.iter().position(|c| c == index)
    }

    /// Relations recomputed for the jets scaled by `c` with the same
    /// pivots; exact scaling by `c^q` is the homogeneity property.
    pub fn scaled_values(&self, c: f64) -> Vec<Vec<Vec<f64>>> {
        let table = self.map.jet_table(self.r + 1);
        let mut branch_of = vec![0; self.points.len()];
        for (k, b) in self.branches.iter().enumerate() {
            for &p in &b.points {
                branch_of[p] = k;
            }
        }
        self.points
            .iter()
            .enumerate()
            .map(|(p, x)| {
                let j = table.matrix(x, self.r + 1) * c;
                let b = &self.branches[branch_of[p]];
                minor_relations(&j, &b.pivot, &b.dependent)
            })
            .collect()
    }

    /// Whether every value scales by exactly `c^q` (bitwise for powers of two).
    pub fn homogeneity_exact(&self, c: f64) -> bool {
        let factor = c.powi(self.q as i32);
        self.scaled_values(c)
            .iter()
            .zip(&self.values)
            .all(|(s, v)| {
                s.iter()
                    .zip(v)
                    .all(|(sa, va)| sa.iter().zip(va).all(|(x, y)| *x == factor * y))
            })
    }

    /// Nonzero symbolic coefficients `(a, column)` in a fixed order.
    pub fn nonzero_symbolic(&self) -> Vec<(usize, usize)> {
        self.symbolic
            .as_ref()
            .map(|s| {
                s.iter()
                    .enumerate()
                    .flat_map(|(a, rel)| rel.keys().map(move |&c| (a, c)))
                    .collect()
            })
            .unwrap_or_default()
    }
}

/// Closest rational with denominator at most `max_den`, accepted only
/// within `tol` of `v`.
pub fn snap_rational(v: f64, max_den: i64, tol: f64) -> Option<Rational> {
    if !v.is_finite() {
        return None;
    }
    let (mut h0, mut h1) = (0i64, 1i64);
    let (mut k0, mut k1) = (1i64, 0i64);
    let mut x = v.abs();
    for _ in 0..40 {
        let a = x.floor();
        if a > 1e12 {
            break;
        }
        let a = a as i64;
        let h2 = a.checked_mul(h1)?.checked_add(h0)?;
        let k2 = a.checked_mul(k1)?.checked_add(k0)?;
        if k2 > max_den {
            break;
        }
        (h0, h1, k0, k1) = (h1, h2, k1, k2);
        let frac = x - a as f64;
        if frac < 1e-15 {
            break;
        }
        x = 1.0 / frac;
    }
    if k1 == 0 {
        return None;
    }
    let r = rat(if v < 0.0 { -h1 } else { h1 }, k1);
    ((r.to_f64()? - v).abs() <= tol).then_some(r)
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum CoefficientSource {
    /// Minors composed with a polynomial map.
    Exact,
    /// Minors found constant over the samples and recognised as rationals.
    SnappedConstant,
}

/// `L_f(h)^a = Σ_{|A| ≤ r} λ^{αA}_a ∂_A h_α`; the coefficient of `∂_B h_α`
/// is `λ^C_a · mult_C(α)/|C|` with `C = {α} ∪ B`, which for `r = 1` is
/// `λ̂^{αβ}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CompatibilityPDO {
    pub n: usize,
    pub m: usize,
    pub r: usize,
    pub operator: LinearPDO,
    pub source: CoefficientSource,
    /// `lambda[a][C]` as polynomials in `x`.
    #[serde(skip)]
    pub lambda: Vec<BTreeMap<MultiIndex, Poly>>,
}

pub fn compatibility_pdo(coeffs: &CompatibilityCoeffs) -> Result<CompatibilityPDO> {
    let n = coeffs.n;
    let (lambda, source) = if coeffs.m == 0 {
        (Vec::new(), CoefficientSource::Exact)
    } else if let Some(exact) = &coeffs.exact {
        let l = exact
            .iter()
            .map(|rel| {
                rel.iter()
                    .map(|(&c, p)| (coeffs.columns[c].clone(), p.clone()))
                    .collect()
            })
            .collect();
        (l, CoefficientSource::Exact)
    } else {
        (snap_constants(coeffs)?, CoefficientSource::SnappedConstant)
    };
    let mut op = LinearPDO::new(n, n, coeffs.m);
    for (a, rel) in lambda.iter().enumerate() {
        for (c, p) in rel {
            let order = c.order() as i64;
            let mut seen = Vec::new();
            for &alpha in c.entries() {
                if seen.contains(&alpha) {
                    continue;
                }
                seen.push(alpha);
                let b = c.difference(&MultiIndex::single(alpha)).expect("member");
                op.add(a, b, alpha, &p.scale(&rat(c.multiplicity(alpha) as i64, order)));
            }
        }
    }
    Ok(CompatibilityPDO {
        n,
        m: coeffs.m,
        r: coeffs.r,
        operator: op,
        source,
        lambda,
    })
}

fn snap_constants(coeffs: &CompatibilityCoeffs) -> Result<Vec<BTreeMap<MultiIndex, Poly>>> {
    if coeffs.branches.len() > 1 {
        return Err(Error::InvalidInput(
            "non-polynomial map needs a single pivot branch for constant coefficients".into(),
        ));
    }
    let n = coeffs.n;
    let scale = coeffs
        .values
        .iter()
        .flatten()
        .flatten()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let mut out = Vec::with_capacity(coeffs.m);
    for a in 0..coeffs.m {
        let mut rel = BTreeMap::new();
        for (c, idx) in coeffs.columns.iter().enumerate() {
            let first = coeffs.values[0][a][c];
            let constant = coeffs
                .values
                .iter()
                .all(|v| (v[a][c] - first).abs() <= 1e-12 * scale.max(1.0));
            if !constant {
                return Err(Error::InvalidInput(format!(
                    "coefficient λ^{idx} of relation {a} varies over the patch; \
                     only polynomial maps or constant coefficients give an exact operator"
                )));
            }
            let snapped = snap_rational(first, 1 << 12, 1e-10 * scale.max(1.0)).ok_or_else(|| {
                Error::InvalidInput(format!("constant coefficient {first} is not a small rational"))
            })?;
            if !snapped.is_zero() {
                rel.insert(idx.clone(), Poly::constant(n, snapped));
            }
        }
        out.push(rel);
    }
    Ok(out)
}

impl CompatibilityPDO {
    /// Right-hand side `½ Σ_{α≤β} λ^{αβ}_a δg_{αβ}` for `r = 1`, with
    /// `δg` given by its upper triangle in `α ≤ β` order.
    pub fn rhs_poly(&self, dg: &[Poly]) -> Result<Vec<Poly>> {
        if self.r != 1 {
            return Err(Error::InvalidInput("metric right-hand side needs r = 1".into()));
        }
        let pairs = multi_indices(self.n, 2, Mode::Exact);
        if dg.len() != pairs.len() {
            return Err(Error::RankMismatch {
                expected: pairs.len(),
                got: dg.len(),
            });
        }
        Ok(self
            .lambda
            .iter()
            .map(|rel| {
                pairs.iter().zip(dg).fold(Poly::zero(self.n), |acc, (c, g)| match rel.get(c) {
                    Some(l) => &acc + &(l * g).scale(&rat(1, 2)),
                    None => acc,
                })
            })
            .collect())
    }

    /// Numeric right-hand side at `x` for a symmetric `δg(x)`.
    pub fn rhs_at(&self, x: &[f64], dg: &DMatrix<f64>) -> Vec<f64> {
        self.lambda
            .iter()
            .map(|rel| {
                rel.iter()
                    .filter(|(c, _)| c.order() == 2)
                    .map(|(c, l)| 0.5 * l.eval(x) * dg[(c.entries()[0], c.entries()[1])])
                    .sum()
            })
            .collect()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UtsRestriction {
    /// Axis relabeling `x_k ↦ y_{perm[k]}`.
    pub perm: Vec<usize>,
    pub relabeling_found: bool,
    /// `n ≥ m + 1 + r·m`.
    pub dimension_hypothesis: bool,
    /// Vanishing top coefficients (relation, multi-index) that block the
    /// relabeling, in the relabeled coordinates.
    pub obstruction: Vec<String>,
    pub operator: LinearPDO,
    pub uts_symmetric: bool,
}

/// Top coefficients `(a, C)` whose `λ^C_a` vanishes identically.
fn vanishing_top(pdo: &CompatibilityPDO) -> Vec<(usize, MultiIndex)> {
    let mut out = Vec::new();
    for a in 0..pdo.m {
        for c in multi_indices(pdo.n, pdo.r + 1, Mode::Exact) {
            if !pdo.lambda[a].contains_key(&c) {
                out.push((a, c));
            }
        }
    }
    out
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut p: Vec<usize> = (0..n).collect();
    fn rec(k: usize, p: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k == p.len() {
            out.push(p.clone());
            return;
        }
        for i in k..p.len() {
            p.swap(k, i);
            rec(k + 1, p, out);
            p.swap(k, i);
        }
    }
    rec(0, &mut p, &mut out);
    out.sort();
    out
}

/// Restricts `L_f` to `h_0..h_m` after a coordinate relabeling that moves
/// every vanishing top coefficient to indices `> m`.
pub fn uts_restriction(pdo: &CompatibilityPDO, strict: bool) -> Result<UtsRestriction> {
    let (n, m, r) = (pdo.n, pdo.m, pdo.r);
    if m + 1 > n {
        return Err(Error::InvalidInput(format!("restriction needs m + 1 <= n, got m = {m}, n = {n}")));
    }
    let zeros = vanishing_top(pdo);
    let blocked = |perm: &[usize]| -> Vec<String> {
        zeros
            .iter()
            .map(|(a, c)| (a, c.relabel(perm)))
            .filter(|(_, c)| c.entries().iter().any(|&k| k <= m))
            .map(|(a, c)| format!("λ^{c}_{a}"))
            .collect()
    };
    let candidates = if n <= 7 { permutations(n) } else { vec![(0..n).collect()] };
    let found = candidates.iter().find(|p| blocked(p).is_empty()).cloned();
    let (perm, relabeling_found) = match found {
        Some(p) => (p, true),
        None => ((0..n).collect::<Vec<_>>(), false),
    };
    let obstruction = blocked(&perm);
    if strict && !relabeling_found {
        return Err(Error::NoRelabeling(obstruction.join(", ")));
    }
    let keep: Vec<usize> = (0..=m).collect();
    let operator = pdo
        .operator
        .relabel_axes(&perm)
        .permute_sources(&perm)
        .restrict_sources(&keep);
    let uts_symmetric = is_upper_totally_symmetric(&operator, m + 1);
    Ok(UtsRestriction {
        perm,
        relabeling_found,
        dimension_hypothesis: n >= m + 1 + r * m,
        obstruction,
        operator,
        uts_symmetric,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IndependenceReport {
    pub functions: usize,
    pub coordinates: usize,
    pub samples: usize,
    pub full_rank_samples: usize,
    pub independent: bool,
}

/// `count` distinct nonzero symbolic coefficients, or an error if fewer
/// exist.
pub fn nonzero_selection(coeffs: &CompatibilityCoeffs, count: usize) -> Result<Vec<(usize, usize)>> {
    let all = coeffs.nonzero_symbolic();
    if all.len() < count {
        return Err(Error::InvalidInput(format!(
            "only {} nonzero coefficients available, {count} requested",
            all.len()
        )));
    }
    Ok(all[..count].to_vec())
}

/// The chosen `λ`'s and their total derivatives of order `≤ s` as
/// functions of the jet coordinates.
pub fn prolonged_functions(
    coeffs: &CompatibilityCoeffs,
    selection: &[(usize, usize)],
    s: usize,
) -> Result<Vec<JetPoly>> {
    let sym = coeffs.symbolic.as_ref().ok_or_else(|| {
        Error::ExpansionTooLarge(format!(
            "symbolic minors need q <= {MAX_SYMBOLIC_Q} and m >= 1, got q = {}, m = {}",
            coeffs.q, coeffs.m
        ))
    })?;
    if selection.is_empty() {
        return Err(Error::InvalidInput("empty selection".into()));
    }
    let mut seen = Vec::new();
    let mut base = Vec::new();
    for key in selection {
        if seen.contains(key) {
            return Err(Error::InvalidInput(format!("duplicate selection {key:?}")));
        }
        seen.push(*key);
        let p = sym
            .get(key.0)
            .and_then(|rel| rel.get(&key.1))
            .ok_or_else(|| Error::InvalidInput(format!("coefficient {key:?} is zero")))?;
        base.push(p.clone());
    }
    let mut out = Vec::new();
    for p in &base {
        for b in multi_indices(coeffs.n, s, Mode::UpTo) {
            out.push(p.total_derivative_multi(&b));
        }
    }
    Ok(out)
}

/// Functional independence at random fiber points: full rank of the
/// Jacobian with respect to the jet coordinates at `≥ 95%` of samples.
pub fn independence_check(
    coeffs: &CompatibilityCoeffs,
    selection: &[(usize, usize)],
    s: usize,
    samples: usize,
    seed: u64,
) -> Result<IndependenceReport> {
    let funcs = prolonged_functions(coeffs, selection, s)?;
    Ok(jacobian_rank_test(&funcs, samples, seed))
}

pub fn jacobian_rank_test(funcs: &[JetPoly], samples: usize, seed: u64) -> IndependenceReport {
    let coords: Vec<JetCoord> = funcs
        .iter()
        .flat_map(|f| f.coords())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let partials: Vec<Vec<JetPoly>> = funcs
        .iter()
        .map(|f| coords.iter().map(|c| f.partial(c)).collect())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<Vec<f64>> = (0..samples)
        .map(|_| coords.iter().map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let full = draws
        .par_iter()
        .filter(|vals| {
            let lookup: BTreeMap<&JetCoord, f64> = coords.iter().zip(vals.iter().copied()).collect();
            let jac = DMatrix::from_fn(funcs.len(), coords.len(), |i, j| {
                partials[i][j].eval(|c| lookup[c])
            });
            numerical_rank(&jac, 1e-10, 0.0).rank == funcs.len()
        })
        .count();
    IndependenceReport {
        functions: funcs.len(),
        coordinates: coords.len(),
        samples,
        full_rank_samples: full,
        independent: samples > 0 && full as f64 >= 0.95 * samples as f64,
    }
}

/// `Σ_α D_α λ^{(α)}_a` over the first-order coefficients of relation `a`.
pub fn first_order_divergence(coeffs: &CompatibilityCoeffs, a: usize) -> Result<JetPoly> {
    let sym = coeffs
        .symbolic
        .as_ref()
        .ok_or_else(|| Error::ExpansionTooLarge("symbolic minors unavailable".into()))?;
    let mut out = JetPoly::zero();
    for (&c, p) in &sym[a] {
        let idx = &coeffs.columns[c];
        if idx.order() == 1 {
            out = out.add(&p.total_derivative(idx.entries()[0]));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jet::{builtin_map, MapFamily};

    fn grid_points() -> Vec<Vec<f64>> {
        let mut pts = Vec::new();
        for i in 0..5 {
            for j in 0..5 {
                pts.push(vec![-0.8 + 0.4 * i as f64, -0.8 + 0.4 * j as f64]);
            }
        }
        pts
    }

    #[test]
    fn projected_map_single_relation() {
        let f = builtin_map(&MapFamily::Projected { n: 2, drop: vec![4] }).unwrap();
        let c = dependence_coeffs(&f, 1, &grid_points(), 1e-10).unwrap();
        assert_eq!(c.m, 1);
        let exact = c.exact.as_ref().unwrap();
        let yy = c.column_position(&MultiIndex::new(vec![1, 1])).unwrap();
        assert_eq!(exact[0].len(), 1);
        assert!(exact[0].contains_key(&yy));
        let pdo = compatibility_pdo(&c).unwrap();
        // Only ∂_y h_y survives.
        let terms: Vec<_> = pdo.operator.coeffs().collect();
        assert_eq!(terms.len(), 1);
        assert_eq!(terms[0].0, &(0, MultiIndex::single(1), 1));
        assert!(c.homogeneity_exact(2.0));
    }

    #[test]
    fn torus_constant_coefficients() {
        let f = builtin_map(&MapFamily::Torus { n: 2 }).unwrap();
        let c = dependence_coeffs(&f, 1, &grid_points(), 1e-10).unwrap();
        let pdo = compatibility_pdo(&c).unwrap();
        assert_eq!(pdo.source, CoefficientSource::SnappedConstant);
        let cxy = pdo.operator.coeff(0, &MultiIndex::single(1), 0);
        let cyx = pdo.operator.coeff(0, &MultiIndex::single(0), 1);
        assert_eq!(cxy, cyx);
        assert!(!cxy.is_zero());
        assert_eq!(pdo.operator.coeffs().count(), 2);
    }

    #[test]
    fn snapping() {
        assert_eq!(snap_rational(-0.5, 100, 1e-12), Some(rat(-1, 2)));
        assert_eq!(snap_rational(1.0 / 3.0, 100, 1e-12), Some(rat(1, 3)));
        assert_eq!(snap_rational(std::f64::consts::PI, 100, 1e-12), None);
    }
    fn plane_immersion() -> AnalyticMap {
        // (x + yz, y + xz²), a submersion near the origin.
        let v = |k| Poly::var(3, k);
        let f0 = &v(0) + &(&v(1) * &v(2));
        let f1 = &v(1) + &(&v(0) * &(&v(2) * &v(2)));
        AnalyticMap::from_polys(&[f0, f1]).unwrap()
    }

    fn cube_points(n: usize) -> Vec<Vec<f64>> {
        let grid = crate::grid::GridPatch::cube(n, -0.3, 0.3, 0.15).unwrap();
        grid.points()
    }

    #[test]
    fn planar_minors_are_divergence_free() {
        let c = dependence_coeffs(&plane_immersion(), 0, &cube_points(3), 1e-10).unwrap();
        assert_eq!((c.m, c.q), (1, 2));
        assert!(c.max_relation_ratio < 1e-12);
        assert!(c.max_null_angle < 1e-8);
        assert!(first_order_divergence(&c, 0).unwrap().is_zero());
        let sym = &c.symbolic.as_ref().unwrap()[0];
        assert_eq!(sym.len(), 3);
        assert!(sym.values().all(|p| p.homogeneous_degree() == Some(2)));
    }

    #[test]
    fn planar_minors_functionally_independent() {
        let c = dependence_coeffs(&plane_immersion(), 0, &cube_points(3), 1e-10).unwrap();
        let pick = nonzero_selection(&c, 2).unwrap();
        let rep = independence_check(&c, &pick, 0, 200, 7).unwrap();
        assert!(rep.independent);
        // With first derivatives of all three, one combination vanishes
        // identically, so the divergence is not a valid independent function.
        let all = nonzero_selection(&c, 3).unwrap();
        let mut funcs = prolonged_functions(&c, &all, 1).unwrap();
        funcs.push(first_order_divergence(&c, 0).unwrap());
        let rep = jacobian_rank_test(&funcs, 50, 7);
        assert!(!rep.independent);
    }

    #[test]
    fn projected_lambda_independent_with_derivatives() {
        let f = builtin_map(&MapFamily::Projected { n: 2, drop: vec![4] }).unwrap();
        let c = dependence_coeffs(&f, 1, &grid_points(), 1e-10).unwrap();
        let pick = nonzero_selection(&c, 1).unwrap();
        let rep = independence_check(&c, &pick, 1, 200, 3).unwrap();
        assert!(rep.independent);
        assert_eq!(rep.functions, 3);
    }

    #[test]
    fn projected_uts_restriction_is_whole_operator() {
        let f = builtin_map(&MapFamily::Projected { n: 2, drop: vec![4] }).unwrap();
        let c = dependence_coeffs(&f, 1, &grid_points(), 1e-10).unwrap();
        let pdo = compatibility_pdo(&c).unwrap();
        let u = uts_restriction(&pdo, false).unwrap();
        assert!(u.uts_symmetric);
        assert_eq!(u.operator.q(), 2);
        assert_eq!(u.operator.coeffs().count(), 1);
    }

    #[test]
    fn cubic_perturbed_three_dimensional_restriction() {
        let base = builtin_map(&MapFamily::Projected { n: 3, drop: vec![8] }).unwrap();
        let f = crate::jet::cubic_perturbed(&base, &rat(1, 5), 11).unwrap();
        let c = dependence_coeffs(&f, 1, &cube_points(3), 1e-10).unwrap();
        assert_eq!((c.q, c.m), (8, 1));
        assert!(c.symbolic.is_none());
        assert!(c.max_relation_ratio < 1e-12);
        assert!(c.homogeneity_exact(2.0));
        let pdo = compatibility_pdo(&c).unwrap();
        let u = uts_restriction(&pdo, true).unwrap();
        assert_eq!(u.operator.q(), 2);
        assert_eq!(u.operator.order(), 1);
        assert!(u.uts_symmetric);
    }

    #[test]
    fn free_map_has_no_relations() {
        let f = builtin_map(&MapFamily::FreeEuclidean { n: 2 }).unwrap();
        let c = dependence_coeffs(&f, 1, &grid_points(), 1e-10).unwrap();
        assert_eq!(c.m, 0);
        assert!(compatibility_pdo(&c).unwrap().operator.is_zero());
    }
}
