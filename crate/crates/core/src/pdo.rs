//! Linear differential operators with polynomial coefficients.
//!
//! `L(f)^a = Σ_{|A| ≤ r} Λ^{aA}_i ∂_A f^i`, with `a < q′` indexing the
//! equations and `i < q` the unknowns. Coefficients are keyed by canonical
//! multi-indices, so the stored `Λ^{aA}_i` already sums every ordering of
//! the derivative slots.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num::{One, Signed, Zero};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::combinatorics::{multi_indices, Mode, MultiIndex};
use crate::error::{Error, Result};
use crate::grid::GridPatch;
use crate::linalg::{min_norm_with_derivatives, numerical_rank};
use crate::poly::{int, rat, CompiledPoly, Poly, PolyAtom, Rational};
use crate::quadrature::{integrate_cube, integrate_cube_exact};

/// `(a, A, i)`: equation, derivative multi-index, unknown.
pub type CoeffKey = (usize, MultiIndex, usize);

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PdoFile", into = "PdoFile")]
pub struct LinearPDO {
    n: usize,
    q: usize,
    q_prime: usize,
    coeffs: BTreeMap<CoeffKey, Poly>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PdoFile {
    #[serde(default)]
    pub n: Option<usize>,
    pub r: usize,
    pub q: usize,
    pub q_prime: usize,
    pub coeffs: Vec<PdoEntry>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PdoEntry {
    pub a: usize,
    #[serde(rename = "A")]
    pub index: Vec<usize>,
    pub i: usize,
    pub poly: Vec<PolyAtom>,
}

impl TryFrom<PdoFile> for LinearPDO {
    type Error = Error;

    fn try_from(f: PdoFile) -> Result<Self> {
        let n = match f.n {
            Some(n) => n,
            None => f
                .coeffs
                .iter()
                .flat_map(|c| c.poly.first())
                .map(|a| a.powers.len())
                .next()
                .ok_or_else(|| Error::Parse("cannot infer n from an operator without terms".into()))?,
        };
        let mut l = LinearPDO::new(n, f.q, f.q_prime);
        for c in &f.coeffs {
            if c.index.len() > f.r {
                return Err(Error::Parse(format!(
                    "coefficient of order {} exceeds declared order {}",
                    c.index.len(),
                    f.r
                )));
            }
            if c.a >= f.q_prime || c.i >= f.q || c.index.iter().any(|&k| k >= n) {
                return Err(Error::Parse(format!("coefficient index out of range: {c:?}")));
            }
            l.add(c.a, MultiIndex::new(c.index.clone()), c.i, &Poly::from_atoms(n, &c.poly)?);
        }
        Ok(l)
    }
}

impl From<LinearPDO> for PdoFile {
    fn from(l: LinearPDO) -> Self {
        PdoFile {
            n: Some(l.n),
            r: l.order(),
            q: l.q,
            q_prime: l.q_prime,
            coeffs: l
                .coeffs
                .iter()
                .map(|((a, idx, i), p)| PdoEntry {
                    a: *a,
                    index: idx.entries().to_vec(),
                    i: *i,
                    poly: p.to_atoms(),
                })
                .collect(),
        }
    }
}

impl LinearPDO {
    /// The zero operator from `q` unknowns to `q_prime` equations.
    pub fn new(n: usize, q: usize, q_prime: usize) -> Self {
        LinearPDO {
            n,
            q,
            q_prime,
            coeffs: BTreeMap::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn q_prime(&self) -> usize {
        self.q_prime
    }

    /// Highest `|A|` with a nonzero coefficient; 0 for the zero operator.
    pub fn order(&self) -> usize {
        self.coeffs.keys().map(|(_, a, _)| a.order()).max().unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Adds `p` to `Λ^{aA}_i`.
    pub fn add(&mut self, a: usize, index: MultiIndex, i: usize, p: &Poly) {
        assert!(a < self.q_prime && i < self.q, "coefficient index out of range");
        assert_eq!(p.nvars(), self.n, "coefficient variable count");
        let key = (a, index, i);
        let sum = match self.coeffs.get(&key) {
            Some(old) => old + p,
            None => p.clone(),
        };
        if sum.is_zero() {
            self.coeffs.remove(&key);
        } else {
            self.coeffs.insert(key, sum);
        }
    }

    pub fn coeff(&self, a: usize, index: &MultiIndex, i: usize) -> Poly {
        self.coeffs
            .get(&(a, index.clone(), i))
            .cloned()
            .unwrap_or_else(|| Poly::zero(self.n))
    }

    pub fn coeffs(&self) -> impl Iterator<Item = (&CoeffKey, &Poly)> {
        self.coeffs.iter()
    }

    /// Coefficients of order exactly `self.order()`.
    pub fn top_block(&self) -> Vec<(&CoeffKey, &Poly)> {
        let r = self.order();
        self.coeffs.iter().filter(|(k, _)| k.1.order() == r).collect()
    }

    pub fn apply(&self, f: &[Poly]) -> Result<Vec<Poly>> {
        if f.len() != self.q {
            return Err(Error::RankMismatch {
                expected: self.q,
                got: f.len(),
            });
        }
        let mut out = vec![Poly::zero(self.n); self.q_prime];
        for ((a, idx, i), c) in &self.coeffs {
            let d = f[*i].derivative_multi(idx);
            out[*a] = &out[*a] + &(c * &d);
        }
        Ok(out)
    }

    /// `L̄^{iB}_a = Σ_{A ⊇ B} (−1)^{|A|} C(A, B) ∂_{A−B} Λ^{aA}_i`.
    pub fn formal_adjoint(&self) -> LinearPDO {
        let mut out = LinearPDO::new(self.n, self.q_prime, self.q);
        for ((a, idx, i), c) in &self.coeffs {
            let sign = if idx.order() % 2 == 0 { 1 } else { -1 };
            for b in idx.sub_indices() {
                let rest = idx.difference(&b).expect("sub-index");
                let factor = int(sign * idx.binomial(&b) as i64);
                let term = c.derivative_multi(&rest).scale(&factor);
                if !term.is_zero() {
                    out.add(*i, b, *a, &term);
                }
            }
        }
        out
    }

    /// Operator in the coordinates `y_{perm[k]} = x_k`.
    pub fn relabel_axes(&self, perm: &[usize]) -> LinearPDO {
        let mut out = LinearPDO::new(self.n, self.q, self.q_prime);
        for ((a, idx, i), c) in &self.coeffs {
            out.add(*a, idx.relabel(perm), *i, &c.relabel(perm));
        }
        out
    }

    /// Keeps only the listed unknowns (renumbered in the given order).
    pub fn restrict_sources(&self, keep: &[usize]) -> LinearPDO {
        let mut out = LinearPDO::new(self.n, keep.len(), self.q_prime);
        for ((a, idx, i), c) in &self.coeffs {
            if let Some(new_i) = keep.iter().position(|k| k == i) {
                out.add(*a, idx.clone(), new_i, c);
            }
        }
        out
    }

    /// Sends unknown `i` to `perm[i]` (a permutation of `0..q`).
    pub fn permute_sources(&self, perm: &[usize]) -> LinearPDO {
        let mut out = LinearPDO::new(self.n, self.q, self.q_prime);
        for ((a, idx, i), c) in &self.coeffs {
            out.add(*a, idx.clone(), perm[*i], c);
        }
        out
    }

    pub fn compile(&self) -> CompiledPdo {
        CompiledPdo {
            q: self.q,
            q_prime: self.q_prime,
            entries: self
                .coeffs
                .iter()
                .map(|((a, idx, i), c)| (*a, idx.clone(), *i, c.compile()))
                .collect(),
        }
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.coeffs.values().map(Poly::max_abs_coeff).fold(0.0, f64::max)
    }
}

/// Coefficients compiled for fast pointwise evaluation.
#[derive(Clone, Debug)]
pub struct CompiledPdo {
    pub q: usize,
    pub q_prime: usize,
    pub entries: Vec<(usize, MultiIndex, usize, CompiledPoly)>,
}

impl CompiledPdo {
    /// `L(f)(x)` given the derivatives `∂_A f^i(x)`.
    pub fn apply_at(&self, x: &[f64], jet: impl Fn(usize, &MultiIndex) -> f64) -> Vec<f64> {
        let mut out = vec![0.0; self.q_prime];
        for (a, idx, i, c) in &self.entries {
            out[*a] += c.eval(x) * jet(*i, idx);
        }
        out
    }
}

/// Lie derivative `f ↦ ξ^α ∂_α f` along a polynomial vector field.
pub fn lie_pdo(xi: &[Poly]) -> Result<LinearPDO> {
    let n = xi.len();
    if n == 0 || xi.iter().any(|p| p.nvars() != n) {
        return Err(Error::InvalidInput("vector field needs n components in n variables".into()));
    }
    let mut l = LinearPDO::new(n, 1, 1);
    for (a, p) in xi.iter().enumerate() {
        l.add(0, MultiIndex::single(a), 0, p);
    }
    Ok(l)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VectorFieldSet {
    n: usize,
    fields: Vec<Vec<Poly>>,
}

impl VectorFieldSet {
    pub fn new(n: usize, fields: Vec<Vec<Poly>>) -> Result<Self> {
        if fields.is_empty() {
            return Err(Error::InvalidInput("empty vector field set".into()));
        }
        if fields
            .iter()
            .any(|f| f.len() != n || f.iter().any(|p| p.nvars() != n))
        {
            return Err(Error::InvalidInput(format!(
                "each vector field needs {n} polynomial components in {n} variables"
            )));
        }
        Ok(VectorFieldSet { n, fields })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn q(&self) -> usize {
        self.fields.len()
    }

    pub fn fields(&self) -> &[Vec<Poly>] {
        &self.fields
    }

    /// `Ξ(f¹..f^q) = Σ_i ξ_i^α ∂_α f^i`.
    pub fn operator(&self) -> LinearPDO {
        let mut l = LinearPDO::new(self.n, self.q(), 1);
        for (i, xi) in self.fields.iter().enumerate() {
            for (a, p) in xi.iter().enumerate() {
                l.add(0, MultiIndex::single(a), i, p);
            }
        }
        l
    }
}

/// Pointwise minimal-norm `λ` with `λ^i ξ_i^α = 0`, `λ^i ∂_α ξ_i^α = −1`,
/// together with `∂_β λ`, so that `Ξ(λ g) = g`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LargeInverse {
    pub points: Vec<Vec<f64>>,
    pub lambda: Vec<Vec<f64>>,
    /// `dlambda[p][β][i] = ∂_β λ^i` at point `p`.
    pub dlambda: Vec<Vec<Vec<f64>>>,
    pub min_relative_sigma: f64,
}

fn large_matrix(
    xi: &[Vec<CompiledPoly>],
    div: &[CompiledPoly],
    x: &[f64],
) -> DMatrix<f64> {
    let n = x.len();
    let q = xi.len();
    let mut c = DMatrix::zeros(n + 1, q);
    for i in 0..q {
        for a in 0..n {
            c[(a, i)] = xi[i][a].eval(x);
        }
        c[(n, i)] = -div[i].eval(x);
    }
    c
}

pub fn large_operator_inverse(
    fields: &VectorFieldSet,
    points: &[Vec<f64>],
    tol: f64,
) -> Result<LargeInverse> {
    let (n, q) = (fields.n(), fields.q());
    if q <= n {
        return Err(Error::InvalidInput(format!("large operators need q > n, got q = {q}, n = {n}")));
    }
    if points.is_empty() {
        return Err(Error::EmptyPatch);
    }
    let div_poly: Vec<Poly> = fields
        .fields()
        .iter()
        .map(|xi| {
            xi.iter()
                .enumerate()
                .fold(Poly::zero(n), |acc, (a, p)| &acc + &p.derivative(a))
        })
        .collect();
    let compile_all = |polys: &[Vec<Poly>]| -> Vec<Vec<CompiledPoly>> {
        polys.iter().map(|v| v.iter().map(Poly::compile).collect()).collect()
    };
    let xi = compile_all(fields.fields());
    let div: Vec<CompiledPoly> = div_poly.iter().map(Poly::compile).collect();
    // ∂_β of every entry of the system matrix.
    let dxi: Vec<Vec<Vec<CompiledPoly>>> = (0..n)
        .map(|b| {
            let d: Vec<Vec<Poly>> = fields
                .fields()
                .iter()
                .map(|v| v.iter().map(|p| p.derivative(b)).collect())
                .collect();
            compile_all(&d)
        })
        .collect();
    let ddiv: Vec<Vec<CompiledPoly>> = (0..n)
        .map(|b| div_poly.iter().map(|p| p.derivative(b).compile()).collect())
        .collect();

    let results: Vec<Result<(Vec<f64>, Vec<Vec<f64>>, f64)>> = points
        .par_iter()
        .map(|x| {
            let c = large_matrix(&xi, &div, x);
            let info = numerical_rank(&c, tol, 0.0);
            if info.rank < n + 1 {
                return Err(Error::NotLarge { witness: x.clone() });
            }
            let mut e = DVector::zeros(n + 1);
            e[n] = 1.0;
            let dc: Vec<DMatrix<f64>> = (0..n).map(|b| large_matrix(&dxi[b], &ddiv[b], x)).collect();
            let db = vec![DVector::zeros(n + 1); n];
            let (lam, dlam) = min_norm_with_derivatives(&c, &e, &dc, &db)
                .ok_or_else(|| Error::NotLarge { witness: x.clone() })?;
            Ok((
                lam.iter().copied().collect(),
                dlam.iter().map(|v| v.iter().copied().collect()).collect(),
                info.relative_min(),
            ))
        })
        .collect();
    let mut out = LargeInverse {
        points: points.to_vec(),
        lambda: Vec::with_capacity(points.len()),
        dlambda: Vec::with_capacity(points.len()),
        min_relative_sigma: f64::INFINITY,
    };
    for r in results {
        let (l, d, s) = r?;
        out.lambda.push(l);
        out.dlambda.push(d);
        out.min_relative_sigma = out.min_relative_sigma.min(s);
    }
    Ok(out)
}

impl LargeInverse {
    /// `sup_x |Ξ(λ g)(x) − g(x)|`.
    pub fn identity_residual(&self, fields: &VectorFieldSet, g: &Poly) -> f64 {
        let n = fields.n();
        let gc = g.compile();
        let dg: Vec<CompiledPoly> = (0..n).map(|a| g.derivative(a).compile()).collect();
        let xi: Vec<Vec<CompiledPoly>> = fields
            .fields()
            .iter()
            .map(|v| v.iter().map(Poly::compile).collect())
            .collect();
        self.points
            .iter()
            .enumerate()
            .map(|(p, x)| {
                let gv = gc.eval(x);
                let mut acc = 0.0;
                for (i, xi_i) in xi.iter().enumerate() {
                    for a in 0..n {
                        let d = self.dlambda[p][a][i] * gv + self.lambda[p][i] * dg[a].eval(x);
                        acc += xi_i[a].eval(x) * d;
                    }
                }
                (acc - gv).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Exact inverse of a square rational matrix.
pub fn rational_inverse(m: &[Vec<Rational>]) -> Option<Vec<Vec<Rational>>> {
    let n = m.len();
    let mut a: Vec<Vec<Rational>> = m
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { Rational::one() } else { Rational::zero() }));
            r
        })
        .collect();
    for col in 0..n {
        let piv = (col..n).find(|&r| !a[r][col].is_zero())?;
        a.swap(col, piv);
        let p = a[col][col].clone();
        for v in a[col].iter_mut() {
            *v /= &p;
        }
        for r in 0..n {
            if r != col && !a[r][col].is_zero() {
                let f = a[r][col].clone();
                for c in 0..2 * n {
                    let sub = &f * &a[col][c];
                    a[r][c] -= sub;
                }
            }
        }
    }
    Some(a.into_iter().map(|r| r[n..].to_vec()).collect())
}

/// `Δ_g u = g^{αβ} ∂_α ∂_β u` for a constant symmetric metric `g`.
pub fn laplacian(g: &[Vec<Rational>]) -> Result<LinearPDO> {
    let n = g.len();
    if n == 0 || g.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidInput("metric must be a square matrix".into()));
    }
    for i in 0..n {
        for j in 0..n {
            if g[i][j] != g[j][i] {
                return Err(Error::InvalidInput("metric must be symmetric".into()));
            }
        }
    }
    let inv = rational_inverse(g).ok_or_else(|| Error::InvalidInput("metric is singular".into()))?;
    let mut l = LinearPDO::new(n, 1, 1);
    for idx in multi_indices(n, 2, Mode::Exact) {
        let (a, b) = (idx.entries()[0], idx.entries()[1]);
        let c = if a == b { inv[a][a].clone() } else { &inv[a][b] * int(2) };
        l.add(0, idx, 0, &Poly::constant(n, c));
    }
    Ok(l)
}

/// Codimension-`k` submanifold `{H¹ = … = H^k = 0}` with exact gradients.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SubmanifoldFile", into = "SubmanifoldFile")]
pub struct SubmanifoldSpec {
    n: usize,
    defining: Vec<Poly>,
    gradients: Vec<Vec<Poly>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SubmanifoldFile {
    pub n: usize,
    pub h: Vec<Vec<PolyAtom>>,
}

impl TryFrom<SubmanifoldFile> for SubmanifoldSpec {
    type Error = Error;

    fn try_from(f: SubmanifoldFile) -> Result<Self> {
        let polys = f
            .h
            .iter()
            .map(|a| Poly::from_atoms(f.n, a))
            .collect::<Result<Vec<_>>>()?;
        SubmanifoldSpec::new(polys)
    }
}

impl From<SubmanifoldSpec> for SubmanifoldFile {
    fn from(s: SubmanifoldSpec) -> Self {
        SubmanifoldFile {
            n: s.n,
            h: s.defining.iter().map(Poly::to_atoms).collect(),
        }
    }
}

impl SubmanifoldSpec {
    pub fn new(defining: Vec<Poly>) -> Result<Self> {
        let n = defining
            .first()
            .map(Poly::nvars)
            .ok_or_else(|| Error::InvalidInput("codimension must be >= 1".into()))?;
        if defining.iter().any(|p| p.nvars() != n) {
            return Err(Error::InvalidInput("defining functions disagree on n".into()));
        }
        let gradients = defining
            .iter()
            .map(|h| (0..n).map(|a| h.derivative(a)).collect())
            .collect();
        Ok(SubmanifoldSpec {
            n,
            defining,
            gradients,
        })
    }

    pub fn codim(&self) -> usize {
        self.defining.len()
    }

    pub fn defining(&self) -> &[Poly] {
        &self.defining
    }

    pub fn gradient(&self, l: usize, x: &[f64]) -> Vec<f64> {
        self.gradients[l].iter().map(|p| p.eval(x)).collect()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransversalityVerdict {
    pub rank: usize,
    pub sigma: Vec<f64>,
    pub transversal: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransversalityReport {
    pub point: Vec<f64>,
    pub per_function: Vec<TransversalityVerdict>,
    /// Every `T^ℓ` has rank `q′`.
    pub transversal: bool,
    /// Every `T^ℓ` is rank-deficient.
    pub characteristic: bool,
}

/// `T^ℓ_{ai} = Σ_{|A| = r} Λ^{aA}_i(x) Π_{k∈A} ∂_k H^ℓ(x)`.
pub fn symbol_matrix(l: &LinearPDO, grad: &[f64], x: &[f64]) -> (DMatrix<f64>, f64) {
    let mut t = DMatrix::zeros(l.q_prime(), l.q());
    let mut scale = 0.0;
    for ((a, idx, i), c) in l.top_block() {
        let cv = c.eval(x);
        let prod: f64 = idx.entries().iter().map(|&k| grad[k]).product();
        t[(*a, *i)] += cv * prod;
        let gmax = idx.entries().iter().map(|&k| grad[k].abs()).product::<f64>();
        scale += cv.abs() * gmax.max(f64::MIN_POSITIVE);
    }
    (t, scale)
}

pub fn transversality_check(
    l: &LinearPDO,
    h: &SubmanifoldSpec,
    x: &[f64],
    tol: f64,
) -> Result<TransversalityReport> {
    if h.n != l.n() || x.len() != l.n() {
        return Err(Error::RankMismatch {
            expected: l.n(),
            got: h.n,
        });
    }
    let per_function: Vec<TransversalityVerdict> = (0..h.codim())
        .map(|k| {
            let grad = h.gradient(k, x);
            let (t, scale) = symbol_matrix(l, &grad, x);
            // The absolute scale keeps an exactly cancelling symbol at rank 0.
            let info = numerical_rank(&t, tol, scale);
            TransversalityVerdict {
                rank: info.rank,
                transversal: info.rank == l.q_prime(),
                sigma: info.sigma,
            }
        })
        .collect();
    Ok(TransversalityReport {
        point: x.to_vec(),
        transversal: per_function.iter().all(|v| v.transversal),
        characteristic: per_function.iter().all(|v| !v.transversal),
        per_function,
    })
}

/// Grid indices at which `H` is characteristic for `L`.
pub fn characteristic_sweep(
    l: &LinearPDO,
    h: &SubmanifoldSpec,
    patch: &GridPatch,
    tol: f64,
) -> Result<Vec<usize>> {
    patch.validate()?;
    let flags: Vec<Result<bool>> = (0..patch.len())
        .into_par_iter()
        .map(|i| transversality_check(l, h, &patch.point(i), tol).map(|r| r.characteristic))
        .collect();
    let mut out = Vec::new();
    for (i, f) in flags.into_iter().enumerate() {
        if f? {
            out.push(i);
        }
    }
    Ok(out)
}

/// `Π_k (1 − x_k²)^power`, vanishing with its first `power − 1`
/// derivatives on the boundary of `[-1, 1]ⁿ`.
pub fn bump(n: usize, power: u32) -> Poly {
    let mut w = Poly::one(n);
    for k in 0..n {
        let x = Poly::var(n, k);
        let f = &Poly::one(n) - &(&x * &x);
        for _ in 0..power {
            w = &w * &f;
        }
    }
    w
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DualityReport {
    /// `|⟨L F, G⟩ − ⟨F, L̄ G⟩|` from the finest quadrature.
    pub residual: f64,
    /// Nodes per axis of the finest rule.
    pub nodes: usize,
    /// `(nodes per axis, |difference|)` for the exact rule and its refinement.
    pub refinement: Vec<(usize, f64)>,
    /// Successive rules agree to `tol`.
    pub settled: bool,
    /// The same difference in exact arithmetic.
    pub exact_residual: String,
}

/// Integration-by-parts check of the formal adjoint on `[-1, 1]ⁿ` with
/// `F = w f`, `G = w g` and the bump `w` of power `r + 1`.
pub fn duality_pairing(l: &LinearPDO, f: &[Poly], g: &[Poly], tol: f64) -> Result<DualityReport> {
    if g.len() != l.q_prime() {
        return Err(Error::RankMismatch {
            expected: l.q_prime(),
            got: g.len(),
        });
    }
    let n = l.n();
    let w = bump(n, l.order() as u32 + 1);
    let ff: Vec<Poly> = f.iter().map(|p| &w * p).collect();
    let gg: Vec<Poly> = g.iter().map(|p| &w * p).collect();
    let lf = l.apply(&ff)?;
    let adj = l.formal_adjoint();
    let lg = adj.apply(&gg)?;
    let pair = |u: &[Poly], v: &[Poly]| u.iter().zip(v).fold(Poly::zero(n), |acc, (a, b)| &acc + &(a * b));
    let integrand = &pair(&lf, &gg) - &pair(&ff, &lg);
    let exact = integrate_cube_exact(&integrand);
    let compiled = integrand.compile();
    // Gauss with k nodes is exact up to per-axis degree 2k − 1.
    let max_deg = integrand
        .terms()
        .flat_map(|(e, _)| e.iter().copied())
        .max()
        .unwrap_or(0) as usize;
    let k0 = max_deg / 2 + 1;
    let refinement: Vec<(usize, f64)> = [k0, 2 * k0]
        .into_iter()
        .map(|k| (k, integrate_cube(n, k, |x| compiled.eval(x)).abs()))
        .collect();
    let (nodes, residual) = refinement[1];
    Ok(DualityReport {
        residual,
        nodes,
        settled: (refinement[0].1 - residual).abs() < tol,
        refinement,
        exact_residual: crate::poly::format_rational(&exact.abs()),
    })
}

/// Random operator with every coefficient of order `≤ r` drawn from
/// `Poly::random`, forcing a nonzero top block.
pub fn random_pdo<R: Rng>(rng: &mut R, n: usize, r: usize, q: usize, q_prime: usize, degree: usize) -> LinearPDO {
    let mut l = LinearPDO::new(n, q, q_prime);
    for a in 0..q_prime {
        for idx in multi_indices(n, r, Mode::UpTo) {
            for i in 0..q {
                l.add(a, idx.clone(), i, &Poly::random(rng, n, degree, 0.5));
            }
        }
    }
    if l.order() < r {
        let idx = MultiIndex::new(vec![0; r]);
        l.add(0, idx, 0, &Poly::one(n));
    }
    l
}

/// Random upper totally symmetric operator `C^r(ℝ^{m+1}) → C⁰(ℝ^m)`: the
/// top coefficient of `∂_B h_α` is `P_C · mult_C(α)/|C|` with
/// `C = {α} ∪ B`, so the full top tensor depends on `C` only.
pub fn random_uts<R: Rng>(rng: &mut R, n: usize, m: usize, r: usize, degree: usize) -> LinearPDO {
    let mut l = LinearPDO::new(n, m + 1, m);
    for a in 0..m {
        for c in multi_indices(n, r + 1, Mode::Exact) {
            if !c.entries().iter().any(|&k| k <= m) {
                continue;
            }
            let p = nonzero_random(rng, n, degree);
            add_symmetric_top(&mut l, a, &c, &p, m + 1);
        }
        if r > 0 {
            for idx in multi_indices(n, r - 1, Mode::UpTo) {
                for i in 0..=m {
                    l.add(a, idx.clone(), i, &Poly::random(rng, n, degree, 0.6));
                }
            }
        }
    }
    l
}

fn nonzero_random<R: Rng>(rng: &mut R, n: usize, degree: usize) -> Poly {
    loop {
        let p = Poly::random(rng, n, degree, 0.6);
        if !p.is_zero() {
            return p;
        }
    }
}

/// Spreads a fully symmetric top coefficient `p` attached to `C` over the
/// unknowns `α ∈ C` with `α < unknowns`.
pub fn add_symmetric_top(l: &mut LinearPDO, a: usize, c: &MultiIndex, p: &Poly, unknowns: usize) {
    let order = c.order() as i64;
    let mut seen = Vec::new();
    for &alpha in c.entries() {
        if alpha >= unknowns || seen.contains(&alpha) {
            continue;
        }
        seen.push(alpha);
        let b = c.difference(&MultiIndex::single(alpha)).expect("member");
        let w = rat(c.multiplicity(alpha) as i64, order);
        l.add(a, b, alpha, &p.scale(&w));
    }
}

/// Top tensor entry `T(α, β₁..β_r)` of the canonical coefficient of
/// `∂_B h_α`, i.e. the stored value divided by the orderings of `B`.
pub fn top_tensor_entry(l: &LinearPDO, a: usize, b: &MultiIndex, alpha: usize) -> Poly {
    let orderings = factorial(b.order()) / b.factorial();
    l.coeff(a, b, alpha).scale(&rat(1, orderings as i64))
}

fn factorial(k: usize) -> u64 {
    (1..=k as u64).product()
}

/// Whether the top block is symmetric under permutations of `αβ₁..β_r`
/// that keep the first index below `unknowns`; exact polynomial equality.
pub fn is_upper_totally_symmetric(l: &LinearPDO, unknowns: usize) -> bool {
    let r = l.order();
    for a in 0..l.q_prime() {
        for c in multi_indices(l.n(), r + 1, Mode::Exact) {
            let mut reference: Option<Poly> = None;
            for &alpha in c.entries() {
                if alpha >= unknowns {
                    continue;
                }
                let b = c.difference(&MultiIndex::single(alpha)).expect("member");
                let t = top_tensor_entry(l, a, &b, alpha);
                match &reference {
                    None => reference = Some(t),
                    Some(p) if *p != t => return false,
                    _ => {}
                }
            }
        }
    }
    true
}

/// Sup of `|Λ(x)|` over the coefficients, for scale-relative tolerances.
pub fn coefficient_scale(l: &LinearPDO, x: &[f64]) -> f64 {
    l.coeffs().map(|(_, c)| c.eval(x).abs()).fold(0.0, f64::max)
}
