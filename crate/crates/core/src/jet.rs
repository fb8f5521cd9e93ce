//! Analytic maps, their exact jets and rank certification.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;
use num::One;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::combinatorics::{jet_dim, multi_indices, multi_indices_between, Mode, MultiIndex};
use crate::error::{Error, Result};
use crate::expr::{CompiledExpr, Expr, MapAtom, TrigKind};
use crate::grid::GridPatch;
use crate::linalg::{numerical_rank, RankInfo};
use crate::poly::{Poly, Rational};

/// A map `ℝⁿ ⊃ patch → ℝ^q` whose components are closed-form expressions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "MapFile", into = "MapFile")]
pub struct AnalyticMap {
    n: usize,
    components: Vec<Expr>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MapFile {
    pub n: usize,
    pub q: usize,
    pub components: Vec<Vec<MapAtom>>,
}

impl TryFrom<MapFile> for AnalyticMap {
    type Error = Error;

    fn try_from(f: MapFile) -> Result<Self> {
        if f.components.len() != f.q {
            return Err(Error::Parse(format!(
                "map declares q = {} but has {} components",
                f.q,
                f.components.len()
            )));
        }
        let components = f
            .components
            .iter()
            .map(|c| Expr::from_atoms(f.n, c))
            .collect::<Result<Vec<_>>>()?;
        AnalyticMap::new(f.n, components)
    }
}

impl From<AnalyticMap> for MapFile {
    fn from(m: AnalyticMap) -> Self {
        MapFile {
            n: m.n,
            q: m.q(),
            components: m.components.iter().map(Expr::to_atoms).collect(),
        }
    }
}

impl AnalyticMap {
    pub fn new(n: usize, components: Vec<Expr>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("map domain dimension must be >= 1".into()));
        }
        if components.is_empty() {
            return Err(Error::InvalidInput("map has no components".into()));
        }
        if components.iter().any(|c| c.nvars() != n) {
            return Err(Error::InvalidInput("component variable count differs from n".into()));
        }
        Ok(AnalyticMap { n, components })
    }

    pub fn from_polys(polys: &[Poly]) -> Result<Self> {
        let n = polys.first().map(Poly::nvars).unwrap_or(0);
        AnalyticMap::new(n, polys.iter().map(Expr::from_poly).collect())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn q(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Expr] {
        &self.components
    }

    /// Components as polynomials, if no trig atoms occur.
    pub fn to_polys(&self) -> Option<Vec<Poly>> {
        self.components.iter().map(Expr::to_poly).collect()
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.components.iter().map(|c| c.eval(x)).collect()
    }

    pub fn derivative(&self, index: &MultiIndex) -> Vec<Expr> {
        self.components
            .iter()
            .map(|c| c.derivative_multi(index))
            .collect()
    }

    pub fn scale(&self, c: &Rational) -> AnalyticMap {
        AnalyticMap {
            n: self.n,
            components: self.components.iter().map(|e| e.scale(c)).collect(),
        }
    }

    pub fn add(&self, other: &AnalyticMap) -> Result<AnalyticMap> {
        if other.n != self.n || other.q() != self.q() {
            return Err(Error::RankMismatch {
                expected: self.q(),
                got: other.q(),
            });
        }
        Ok(AnalyticMap {
            n: self.n,
            components: self
                .components
                .iter()
                .zip(&other.components)
                .map(|(a, b)| a.add(b))
                .collect(),
        })
    }

    /// Compiled derivatives of all orders `0..=order`.
    pub fn jet_table(&self, order: usize) -> JetTable {
        let indices = multi_indices(self.n, order, Mode::UpTo);
        let mut exprs: BTreeMap<MultiIndex, Vec<Expr>> = BTreeMap::new();
        for idx in &indices {
            let e = match idx.entries().split_last() {
                None => self.components.clone(),
                Some((&last, rest)) => exprs[&MultiIndex::new(rest.to_vec())]
                    .iter()
                    .map(|e| e.derivative(last))
                    .collect(),
            };
            exprs.insert(idx.clone(), e);
        }
        let compiled = indices
            .iter()
            .map(|i| exprs[i].iter().map(Expr::compile).collect())
            .collect();
        let position = indices.iter().cloned().enumerate().map(|(k, i)| (i, k)).collect();
        JetTable {
            n: self.n,
            q: self.q(),
            order,
            indices,
            position,
            compiled,
        }
    }
}

/// Precompiled partial derivatives `∂_A f` for `|A| ≤ order`.
#[derive(Clone, Debug)]
pub struct JetTable {
    pub n: usize,
    pub q: usize,
    pub order: usize,
    indices: Vec<MultiIndex>,
    position: BTreeMap<MultiIndex, usize>,
    compiled: Vec<Vec<CompiledExpr>>,
}

impl JetTable {
    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn derivative_at(&self, index: &MultiIndex, x: &[f64]) -> Vec<f64> {
        let k = self.position[index];
        self.compiled[k].iter().map(|c| c.eval(x)).collect()
    }

    /// `q × s_{n,r}` matrix of partials of orders `1..=r`.
    pub fn matrix(&self, x: &[f64], r: usize) -> DMatrix<f64> {
        assert!(r <= self.order, "jet table order too small");
        let cols = multi_indices_between(self.n, 1, r);
        let mut m = DMatrix::zeros(self.q, cols.len());
        for (j, idx) in cols.iter().enumerate() {
            for (i, v) in self.derivative_at(idx, x).into_iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        m
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JetMatrix {
    pub point: Vec<f64>,
    pub order: usize,
    pub columns: Vec<MultiIndex>,
    pub matrix: DMatrix<f64>,
}

pub fn jet_matrix(f: &AnalyticMap, x: &[f64], r: usize) -> Result<JetMatrix> {
    if r == 0 {
        return Err(Error::InvalidInput("jet order must be >= 1".into()));
    }
    if x.len() != f.n() {
        return Err(Error::RankMismatch {
            expected: f.n(),
            got: x.len(),
        });
    }
    let table = f.jet_table(r);
    Ok(JetMatrix {
        point: x.to_vec(),
        order: r,
        columns: multi_indices_between(f.n(), 1, r),
        matrix: table.matrix(x, r),
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Classification {
    /// `rank D^r = s_{n,r}` everywhere.
    Free { order: usize },
    /// `rank D^{r-1} = s_{n,r-1}`, `rank D^r = q` everywhere and
    /// `s_{n,r-1} < q ≤ s_{n,r}`; `m = s_{n,r} − q` relations.
    FullRank { order: usize, m: usize },
    Degenerate,
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Classification::Free { order } => write!(f, "{order}-free"),
            Classification::FullRank { order, m } => write!(f, "full {order}-rank, m={m}"),
            Classification::Degenerate => write!(f, "degenerate"),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RankCertificate {
    pub order: usize,
    pub n: usize,
    pub q: usize,
    pub tol: f64,
    /// Numerical rank of `D^r` per point.
    pub ranks: Vec<usize>,
    /// Numerical rank of `D^{r-1}` per point (0 when `r = 1`).
    pub lower_ranks: Vec<usize>,
    pub classification: Classification,
    /// Worst smallest-retained over largest-discarded singular value.
    pub min_gap: Option<f64>,
    /// Worst smallest-retained over largest singular value.
    pub min_relative_sigma: f64,
    /// First point violating the best classification the ranks admit.
    pub witness: Option<Vec<f64>>,
}

impl RankCertificate {
    pub fn label(&self) -> String {
        self.classification.to_string()
    }

    pub fn is_degenerate(&self) -> bool {
        self.classification == Classification::Degenerate
    }
}

struct PointRanks {
    upper: RankInfo,
    lower: usize,
}

pub fn rank_profile(f: &AnalyticMap, patch: &GridPatch, r: usize, tol: f64) -> Result<RankCertificate> {
    patch.validate()?;
    if patch.dim() != f.n() {
        return Err(Error::RankMismatch {
            expected: f.n(),
            got: patch.dim(),
        });
    }
    rank_profile_points(f, &patch.points(), r, tol)
}

pub fn rank_profile_points(
    f: &AnalyticMap,
    points: &[Vec<f64>],
    r: usize,
    tol: f64,
) -> Result<RankCertificate> {
    if points.is_empty() {
        return Err(Error::EmptyPatch);
    }
    if r == 0 {
        return Err(Error::InvalidInput("rank order must be >= 1".into()));
    }
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::InvalidInput("rank tolerance must lie in (0, 1)".into()));
    }
    let table = f.jet_table(r);
    let lower_cols = jet_dim(f.n(), r - 1);
    let per_point: Vec<PointRanks> = points
        .par_iter()
        .map(|x| {
            let m = table.matrix(x, r);
            let upper = numerical_rank(&m, tol, 0.0);
            let lower = if lower_cols == 0 {
                0
            } else {
                numerical_rank(&m.columns(0, lower_cols).into_owned(), tol, 0.0).rank
            };
            PointRanks { upper, lower }
        })
        .collect();

    let (n, q) = (f.n(), f.q());
    let s_r = jet_dim(n, r);
    let s_lower = lower_cols;
    let free = per_point.iter().position(|p| p.upper.rank != s_r);
    let full = per_point
        .iter()
        .position(|p| p.upper.rank != q || p.lower != s_lower);
    let full_possible = s_lower < q && q <= s_r;
    let (classification, witness) = if free.is_none() {
        (Classification::Free { order: r }, None)
    } else if full_possible && full.is_none() {
        (Classification::FullRank { order: r, m: s_r - q }, None)
    } else {
        let w = if full_possible { full } else { free };
        (Classification::Degenerate, w.map(|k| points[k].clone()))
    };

    let min_gap = per_point
        .iter()
        .filter_map(|p| p.upper.gap())
        .fold(None, |acc: Option<f64>, g| Some(acc.map_or(g, |a| a.min(g))));
    let min_relative_sigma = per_point
        .iter()
        .map(|p| p.upper.relative_min())
        .fold(f64::INFINITY, f64::min);
    Ok(RankCertificate {
        order: r,
        n,
        q,
        tol,
        ranks: per_point.iter().map(|p| p.upper.rank).collect(),
        lower_ranks: per_point.iter().map(|p| p.lower).collect(),
        classification,
        min_gap,
        min_relative_sigma,
        witness,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum MapFamily {
    FreeEuclidean { n: usize },
    /// `free_euclidean(n)` with the listed component indices removed.
    Projected { n: usize, drop: Vec<usize> },
    Torus { n: usize },
}

/// `(x¹..xⁿ, x^α x^β for α ≤ β)`, quadratics in lexicographic order.
fn free_euclidean(n: usize) -> Vec<Expr> {
    let mut comps: Vec<Expr> = (0..n).map(|a| Expr::var(n, a)).collect();
    for idx in multi_indices(n, 2, Mode::Exact) {
        comps.push(Expr::monomial(idx.exponents(n), Rational::one()));
    }
    comps
}

pub fn builtin_map(family: &MapFamily) -> Result<AnalyticMap> {
    match family {
        MapFamily::FreeEuclidean { n } => {
            check_dim(*n)?;
            AnalyticMap::new(*n, free_euclidean(*n))
        }
        MapFamily::Projected { n, drop } => {
            check_dim(*n)?;
            let comps = free_euclidean(*n);
            if drop.is_empty() {
                return Err(Error::InvalidInput("projection drop-set is empty".into()));
            }
            if let Some(bad) = drop.iter().find(|&&d| d < *n || d >= comps.len()) {
                return Err(Error::InvalidInput(format!(
                    "drop index {bad} is not a quadratic component (valid {}..{})",
                    n,
                    comps.len() - 1
                )));
            }
            let kept = comps
                .into_iter()
                .enumerate()
                .filter(|(k, _)| !drop.contains(k))
                .map(|(_, c)| c)
                .collect();
            AnalyticMap::new(*n, kept)
        }
        MapFamily::Torus { n } => {
            check_dim(*n)?;
            let mut comps = Vec::with_capacity(2 * n);
            for a in 0..*n {
                comps.push(Expr::trig(*n, TrigKind::Sin, a));
                comps.push(Expr::trig(*n, TrigKind::Cos, a));
            }
            AnalyticMap::new(*n, comps)
        }
    }
}

fn check_dim(n: usize) -> Result<()> {
    if n == 0 {
        Err(Error::InvalidInput("dimension must be >= 1".into()))
    } else {
        Ok(())
    }
}

/// `f + ε·c` with `c` a seeded combination of cubic monomials with small
/// integer weights, one independent draw per component. Needs a polynomial
/// map.
pub fn cubic_perturbed(f: &AnalyticMap, eps: &Rational, seed: u64) -> Result<AnalyticMap> {
    let polys = f
        .to_polys()
        .ok_or_else(|| Error::InvalidInput("cubic perturbation needs a polynomial map".into()))?;
    let n = f.n();
    let cubics = multi_indices(n, 3, Mode::Exact);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out: Vec<Poly> = polys
        .iter()
        .map(|p| {
            let mut c = Poly::zero(n);
            for idx in &cubics {
                let w: i64 = rng.gen_range(-3..=3);
                let e: Vec<u32> = idx.exponents(n);
                c = &c + &Poly::monomial(e, Rational::from_integer(w.into()));
            }
            p + &c.scale(eps)
        })
        .collect();
    AnalyticMap::from_polys(&out)
}

/// Index in `free_euclidean(n)` of the component `x^α x^β`.
pub fn quadratic_component(n: usize, alpha: usize, beta: usize) -> usize {
    let target = MultiIndex::new(vec![alpha, beta]);
    n + multi_indices(n, 2, Mode::Exact)
        .iter()
        .position(|i| *i == target)
        .expect("axis out of range")
}
