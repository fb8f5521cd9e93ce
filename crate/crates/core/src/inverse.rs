//! Universal right inverses of underdetermined operators through the
//! algebraic left-inverse problem for their formal adjoints.
//!
//! For `L: C^r(ℝ^{m+1}) → C⁰(ℝ^m)` with adjoint `L̄`, an operator
//! `M̄ = Σ_{|C| ≤ s} M̄^{aC}_α ∂_C` with `M̄ ∘ L̄ = Id` is found pointwise
//! from a linear system in the `s`-jets of the coefficients of `L̄`; its
//! adjoint `M` then satisfies `L ∘ M = Id`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num::{One, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::combinatorics::{inverse_equations, inverse_unknowns, multi_indices, Mode, MultiIndex};
use crate::error::{Error, Result};
use crate::grid::{GridField, GridPatch};
use crate::linalg::{min_norm_solve, numerical_rank};
use crate::pdo::{rational_inverse, LinearPDO};
use crate::poly::{int, CompiledPoly, Poly, Rational};

/// Row `(b, E)` with `|E| ≤ s + r` and column `(α, C)` with `|C| ≤ s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemLayout {
    pub n: usize,
    pub m: usize,
    pub r: usize,
    pub s: usize,
    pub rows: Vec<(usize, MultiIndex)>,
    pub cols: Vec<(usize, MultiIndex)>,
}

impl SystemLayout {
    pub fn new(n: usize, unknowns: usize, equations: usize, r: usize, s: usize) -> Self {
        let e = multi_indices(n, s + r, Mode::UpTo);
        let c = multi_indices(n, s, Mode::UpTo);
        let rows = (0..equations)
            .flat_map(|b| e.iter().map(move |i| (b, i.clone())))
            .collect();
        let cols = (0..unknowns)
            .flat_map(|a| c.iter().map(move |i| (a, i.clone())))
            .collect();
        SystemLayout {
            n,
            m: equations,
            r,
            s,
            rows,
            cols,
        }
    }

    pub fn row_of(&self, b: usize, e: &MultiIndex) -> usize {
        let per = self.rows.len() / self.m;
        b * per + self.rows[..per].binary_search_by(|(_, i)| graded_cmp(i, e)).expect("row index")
    }

    pub fn col_of(&self, alpha: usize, c: &MultiIndex) -> usize {
        let per = multi_indices_len(self.n, self.s);
        alpha * per + self.cols[..per].binary_search_by(|(_, i)| graded_cmp(i, c)).expect("column index")
    }
}

/// Order of `multi_indices(_, _, UpTo)`: by order, then lexicographic.
fn graded_cmp(a: &MultiIndex, b: &MultiIndex) -> std::cmp::Ordering {
    a.order().cmp(&b.order()).then_with(|| a.entries().cmp(b.entries()))
}

fn multi_indices_len(n: usize, s: usize) -> usize {
    crate::combinatorics::binomial_usize(n + s, s)
}

/// The matrix of the left-inverse system at one point with one
/// right-hand side column per block `a`.
#[derive(Clone, Debug)]
pub struct LinearSystem {
    pub matrix: DMatrix<f64>,
    pub rhs: DMatrix<f64>,
}

/// Precomputed sparse structure of the system for a fixed operator and
/// order `s`; entries are polynomials in `x`.
#[derive(Clone, Debug)]
pub struct InverseAssembler {
    pub layout: SystemLayout,
    pub operator: LinearPDO,
    pub adjoint: LinearPDO,
    entries: BTreeMap<(usize, usize), Poly>,
    compiled: Vec<(usize, usize, CompiledPoly)>,
}

impl InverseAssembler {
    /// `A[(b,E),(α,C)] = Σ_{D ⊆ C, D ∪ B = E} C(C,D) ∂_{C−D} L̄^{αB}_b`.
    pub fn new(l: &LinearPDO, s: usize) -> Result<Self> {
        let n = l.n();
        let (unknowns, m) = (l.q(), l.q_prime());
        if m == 0 || unknowns == 0 {
            return Err(Error::InvalidInput("operator needs at least one unknown and one equation".into()));
        }
        let r = l.order();
        let adjoint = l.formal_adjoint();
        let layout = SystemLayout::new(n, unknowns, m, r, s);
        let cs = multi_indices(n, s, Mode::UpTo);
        let mut entries: BTreeMap<(usize, usize), Poly> = BTreeMap::new();
        // Adjoint keys are (α, B, b).
        for ((alpha, b_idx, b), coeff) in adjoint.coeffs() {
            for c in &cs {
                let col = layout.col_of(*alpha, c);
                for d in c.sub_indices() {
                    let k = c.difference(&d).expect("sub-index");
                    let term = coeff.derivative_multi(&k).scale(&int(c.binomial(&d) as i64));
                    if term.is_zero() {
                        continue;
                    }
                    let row = layout.row_of(*b, &d.union(b_idx));
                    let e = entries.entry((row, col)).or_insert_with(|| Poly::zero(n));
                    *e = &*e + &term;
                }
            }
        }
        entries.retain(|_, p| !p.is_zero());
        let compiled = entries.iter().map(|(&(r, c), p)| (r, c, p.compile())).collect();
        Ok(InverseAssembler {
            layout,
            operator: l.clone(),
            adjoint,
            entries,
            compiled,
        })
    }

    pub fn unknowns(&self) -> usize {
        self.layout.cols.len()
    }

    pub fn equations(&self) -> usize {
        self.layout.rows.len()
    }

    pub fn rhs(&self) -> DMatrix<f64> {
        let m = self.layout.m;
        let mut rhs = DMatrix::zeros(self.equations(), m);
        for a in 0..m {
            rhs[(self.layout.row_of(a, &MultiIndex::empty()), a)] = 1.0;
        }
        rhs
    }

    pub fn assemble(&self, x: &[f64]) -> LinearSystem {
        let mut matrix = DMatrix::zeros(self.equations(), self.unknowns());
        for (r, c, p) in &self.compiled {
            matrix[(*r, *c)] = p.eval(x);
        }
        LinearSystem {
            matrix,
            rhs: self.rhs(),
        }
    }

    pub fn assemble_exact(&self, x: &[Rational]) -> Vec<Vec<Rational>> {
        let mut matrix = vec![vec![Rational::zero(); self.unknowns()]; self.equations()];
        for (&(r, c), p) in &self.entries {
            matrix[r][c] = p.eval_exact(x);
        }
        matrix
    }
}

/// Assembles the left-inverse system of `L̄` at `x`.
pub fn assemble_system(l: &LinearPDO, x: &[f64], s: usize) -> Result<LinearSystem> {
    let asm = InverseAssembler::new(l, s)?;
    let sys = asm.assemble(x);
    let (n, m) = (l.n(), l.q_prime());
    if l.q() == m + 1 {
        debug_assert_eq!(sys.matrix.ncols(), inverse_unknowns(n, m, s));
        debug_assert_eq!(sys.matrix.nrows(), inverse_equations(n, m, l.order(), s));
    }
    Ok(sys)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointDiagnostics {
    pub rows: usize,
    pub cols: usize,
    pub row_rank: usize,
    pub full_row_rank: bool,
    /// Every block's right-hand side lies in the column space.
    pub consistent: bool,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub residual: f64,
    /// Full row rank with `σ_min/σ_max` within three decades of the
    /// tolerance.
    pub near_deficient: bool,
}

#[derive(Clone, Debug)]
pub struct PointSolve {
    /// `mbar[a][col]` is `M̄^{aC}_α` for `layout.cols[col] = (α, C)`.
    pub mbar: Vec<DVector<f64>>,
    pub diagnostics: PointDiagnostics,
}

/// Minimal-norm solve of each block; consistency from `rank(A)` against
/// `rank(A | b)`.
pub fn solve_pointwise(sys: &LinearSystem, tol: f64) -> PointSolve {
    let a = &sys.matrix;
    let (rows, cols) = a.shape();
    let info = numerical_rank(a, tol, 0.0);
    let mut mbar = Vec::with_capacity(sys.rhs.ncols());
    let mut consistent = true;
    let mut residual: f64 = 0.0;
    for k in 0..sys.rhs.ncols() {
        let b = sys.rhs.column(k).into_owned();
        let sol = min_norm_solve(a, &b, tol);
        consistent &= sol.consistent();
        residual = residual.max(sol.residual);
        mbar.push(sol.x);
    }
    let sigma_max = info.sigma_max();
    let sigma_min = if rows <= cols {
        info.sigma.get(rows.saturating_sub(1)).copied().unwrap_or(0.0)
    } else {
        0.0
    };
    let full_row_rank = info.rank == rows;
    PointSolve {
        mbar,
        diagnostics: PointDiagnostics {
            rows,
            cols,
            row_rank: info.rank,
            full_row_rank,
            consistent,
            sigma_min,
            sigma_max,
            residual,
            near_deficient: full_row_rank && sigma_min < 1e3 * tol * sigma_max,
        },
    }
}

/// Exact minimal-norm solution `Aᵀ(AAᵀ)⁻¹ e_a` at a rational point; `None`
/// without full row rank.
pub fn solve_exact(asm: &InverseAssembler, x: &[Rational]) -> Option<Vec<Vec<Rational>>> {
    let a = asm.assemble_exact(x);
    let (rows, cols) = (a.len(), a[0].len());
    let mut gram = vec![vec![Rational::zero(); rows]; rows];
    for i in 0..rows {
        for j in i..rows {
            let v: Rational = (0..cols).map(|k| &a[i][k] * &a[j][k]).sum();
            gram[i][j] = v.clone();
            gram[j][i] = v;
        }
    }
    let inv = rational_inverse(&gram)?;
    Some(
        (0..asm.layout.m)
            .map(|blk| {
                let row = asm.layout.row_of(blk, &MultiIndex::empty());
                (0..cols)
                    .map(|c| (0..rows).map(|i| &a[i][c] * &inv[i][row]).sum())
                    .collect()
            })
            .collect(),
    )
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InverseCandidate {
    pub layout: SystemLayout,
    pub points: Vec<Vec<f64>>,
    /// `values[p][a][col]`; `None` where the system is inconsistent.
    pub values: Vec<Option<Vec<Vec<f64>>>>,
    pub diagnostics: Vec<PointDiagnostics>,
}

impl InverseCandidate {
    pub fn solved_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }
}

pub fn solve_patch(l: &LinearPDO, points: &[Vec<f64>], s: usize, tol: f64) -> Result<InverseCandidate> {
    let asm = InverseAssembler::new(l, s)?;
    Ok(solve_with(&asm, points, tol))
}

pub fn solve_with(asm: &InverseAssembler, points: &[Vec<f64>], tol: f64) -> InverseCandidate {
    let solves: Vec<PointSolve> = points
        .par_iter()
        .map(|x| solve_pointwise(&asm.assemble(x), tol))
        .collect();
    let mut values = Vec::with_capacity(points.len());
    let mut diagnostics = Vec::with_capacity(points.len());
    for s in solves {
        values.push(
            s.diagnostics
                .consistent
                .then(|| s.mbar.iter().map(|v| v.iter().copied().collect()).collect()),
        );
        diagnostics.push(s.diagnostics);
    }
    InverseCandidate {
        layout: asm.layout.clone(),
        points: points.to_vec(),
        values,
        diagnostics,
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MembershipCertificate {
    pub s: usize,
    pub unknowns: usize,
    pub equations: usize,
    pub points: usize,
    pub full_row_rank: Vec<bool>,
    pub consistent: Vec<bool>,
    pub sigma_min: Vec<f64>,
    pub member: bool,
    pub witness: Option<Vec<f64>>,
}

/// Solvability of the left-inverse system for every block at every sample
/// point. Full row rank is sufficient and reported, but not necessary once
/// `n > m + 1`, where the homogeneous rows are dependent.
pub fn bundle_membership(l: &LinearPDO, points: &[Vec<f64>], s: usize, tol: f64) -> Result<MembershipCertificate> {
    if points.is_empty() {
        return Err(Error::EmptyPatch);
    }
    let asm = InverseAssembler::new(l, s)?;
    let cand = solve_with(&asm, points, tol);
    let full: Vec<bool> = cand.diagnostics.iter().map(|d| d.full_row_rank).collect();
    let consistent: Vec<bool> = cand.diagnostics.iter().map(|d| d.consistent).collect();
    let witness = consistent.iter().position(|ok| !ok).map(|p| points[p].clone());
    Ok(MembershipCertificate {
        s,
        unknowns: asm.unknowns(),
        equations: asm.equations(),
        points: points.len(),
        sigma_min: cand.diagnostics.iter().map(|d| d.sigma_min).collect(),
        member: witness.is_none(),
        full_row_rank: full,
        consistent,
        witness,
    })
}

/// `sup_x ‖M̄(L̄(g))(x) − g(x)‖_∞` over the solved points, using exact
/// derivatives of `L̄(g)` and the pointwise `M̄` values.
pub fn verify_left_inverse(cand: &InverseCandidate, l: &LinearPDO, g: &[Poly]) -> Result<f64> {
    let h = l.formal_adjoint().apply(g)?;
    let layout = &cand.layout;
    let derivs: Vec<CompiledPoly> = layout
        .cols
        .iter()
        .map(|(alpha, c)| h[*alpha].derivative_multi(c).compile())
        .collect();
    let gc: Vec<CompiledPoly> = g.iter().map(Poly::compile).collect();
    let mut worst: f64 = 0.0;
    for (x, vals) in cand.points.iter().zip(&cand.values) {
        let Some(vals) = vals else { continue };
        let dh: Vec<f64> = derivs.iter().map(|d| d.eval(x)).collect();
        for (a, row) in vals.iter().enumerate() {
            let v: f64 = row.iter().zip(&dh).map(|(m, d)| m * d).sum();
            worst = worst.max((v - gc[a].eval(x)).abs());
        }
    }
    Ok(worst)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RightInverseLevel {
    pub grid: GridPatch,
    /// `h = M(g)` on the grid.
    pub h: GridField,
    /// `sup ‖L(h) − g‖` over points at distance `≥ s + r` from the faces.
    pub residual: f64,
    pub rank: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RightInverseResult {
    pub coarse: RightInverseLevel,
    /// Residual of the refined grid at the coarse evaluation points.
    pub fine_residual: f64,
    /// `coarse / fine`; `None` when both are at round-off level.
    pub richardson_ratio: Option<f64>,
    /// Empirical constant in `residual ≈ C·h²`.
    pub error_constant: f64,
    pub margin: usize,
}

fn right_inverse_level(
    asm: &InverseAssembler,
    grid: &GridPatch,
    target: &(dyn Fn(&[f64]) -> Vec<f64> + Sync),
    eval_points: &[usize],
    tol: f64,
) -> Result<(RightInverseLevel, Vec<f64>)> {
    let layout = &asm.layout;
    let (m, unknowns) = (layout.m, asm.operator.q());
    let points = grid.points();
    let cand = solve_with(asm, &points, tol);
    let rank0 = cand.diagnostics[0].row_rank;
    for (p, d) in cand.diagnostics.iter().enumerate() {
        if !d.consistent || d.row_rank != rank0 {
            return Err(Error::RankDeficient {
                witness: points[p].clone(),
                detail: format!(
                    "left-inverse system must be consistent with constant rank over the grid (rank {} vs {rank0})",
                    d.row_rank
                ),
            });
        }
    }
    let g: Vec<Vec<f64>> = points.par_iter().map(|x| target(x)).collect();
    // h_α = Σ_{a,C} (−1)^{|C|} ∂_C (M̄^{aC}_α g^a)
    let mut h = GridField::zeros(grid.clone(), unknowns);
    for c in multi_indices(layout.n, layout.s, Mode::UpTo) {
        let mut prod = GridField::zeros(grid.clone(), unknowns);
        for (p, vals) in cand.values.iter().enumerate() {
            let vals = vals.as_ref().expect("consistent");
            for alpha in 0..unknowns {
                let col = layout.col_of(alpha, &c);
                prod.values[p][alpha] = (0..m).map(|a| vals[a][col] * g[p][a]).sum();
            }
        }
        let mut d = prod.derivative_multi(&c);
        if c.order() % 2 == 1 {
            for v in d.values.iter_mut().flatten() {
                *v = -*v;
            }
        }
        h = h.add(&d);
    }
    // L(h) with derivatives by the same stencils.
    let mut lh = vec![vec![0.0; m]; grid.len()];
    let mut by_index: BTreeMap<MultiIndex, Vec<(usize, usize, CompiledPoly)>> = BTreeMap::new();
    for ((a, idx, i), c) in asm.operator.coeffs() {
        by_index.entry(idx.clone()).or_default().push((*a, *i, c.compile()));
    }
    for (idx, terms) in &by_index {
        let dh = h.derivative_multi(idx);
        for &p in eval_points {
            for (a, i, c) in terms {
                lh[p][*a] += c.eval(&points[p]) * dh.values[p][*i];
            }
        }
    }
    let errs: Vec<f64> = eval_points
        .iter()
        .map(|&p| (0..m).map(|a| (lh[p][a] - g[p][a]).abs()).fold(0.0, f64::max))
        .collect();
    let residual = errs.iter().copied().fold(0.0, f64::max);
    Ok((
        RightInverseLevel {
            grid: grid.clone(),
            h,
            residual,
            rank: rank0,
        },
        errs,
    ))
}

/// Applies `M`, the adjoint of the pointwise `M̄` field, to `target` on
/// `grid` with second-order central differences, and certifies the
/// `O(h²)` error by one refinement.
pub fn apply_right_inverse(
    l: &LinearPDO,
    s: usize,
    grid: &GridPatch,
    target: &(dyn Fn(&[f64]) -> Vec<f64> + Sync),
    tol: f64,
) -> Result<RightInverseResult> {
    let asm = InverseAssembler::new(l, s)?;
    let margin = s + l.order();
    let coarse_pts = grid.interior_indices(margin);
    if coarse_pts.is_empty() {
        return Err(Error::InvalidInput(format!("grid has no points at distance {margin} from its faces")));
    }
    let (coarse, _) = right_inverse_level(&asm, grid, target, &coarse_pts, tol)?;
    let fine_grid = grid.refined();
    let fine_pts: Vec<usize> = coarse_pts.iter().map(|&p| grid.refined_index(p)).collect();
    let (_, fine_errs) = right_inverse_level(&asm, &fine_grid, target, &fine_pts, tol)?;
    let fine_residual = fine_errs.iter().copied().fold(0.0, f64::max);
    let scale = coarse.h.sup_norm(&coarse_pts).max(1.0);
    let floor = 1e-11 * scale;
    let hmax = grid.spacing.iter().copied().fold(0.0, f64::max);
    let ratio = if coarse.residual <= floor && fine_residual <= floor {
        None
    } else {
        let r = coarse.residual / fine_residual;
        if !(3.0..=5.0).contains(&r) {
            return Err(Error::TooCoarse {
                ratio: r,
                lo: 3.0,
                hi: 5.0,
            });
        }
        Some(r)
    };
    Ok(RightInverseResult {
        error_constant: coarse.residual / (hmax * hmax),
        coarse,
        fine_residual,
        richardson_ratio: ratio,
        margin,
    })
}

/// `(1/c)·∫₀^{x_β} φ dx_β`, the exact right inverse of `c·∂_β` on a single
/// unknown with constant `c`.
pub fn integrate_along(phi: &Poly, axis: usize, c: &Rational) -> Result<Poly> {
    if c.is_zero() {
        return Err(Error::InvalidInput("zero coefficient".into()));
    }
    Ok(phi.integrate(axis).scale(&(Rational::one() / c)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pdo::{add_symmetric_top, random_uts};
    use crate::poly::rat;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(n: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
    }

    #[test]
    fn shape_for_two_one_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = random_uts(&mut rng, 2, 1, 1, 2);
        let sys = assemble_system(&l, &[0.1, 0.2], 2).unwrap();
        assert_eq!(sys.matrix.shape(), (10, 12));
        assert_eq!(sys.rhs.shape(), (10, 1));
    }

    #[test]
    fn zero_operator_is_inconsistent() {
        let l = LinearPDO::new(2, 2, 1);
        let sys = assemble_system(&l, &[0.0, 0.0], 1).unwrap();
        assert!(sys.matrix.iter().all(|v| *v == 0.0));
        let sol = solve_pointwise(&sys, 1e-10);
        assert!(!sol.diagnostics.consistent);
    }

    #[test]
    fn zero_order_case() {
        // L(h) = x h_0 + h_1: s = 0 gives M̄ with x M̄_0 + M̄_1 = 1.
        let mut l = LinearPDO::new(1, 2, 1);
        l.add(0, MultiIndex::empty(), 0, &Poly::var(1, 0));
        l.add(0, MultiIndex::empty(), 1, &Poly::one(1));
        let sys = assemble_system(&l, &[2.0], 0).unwrap();
        assert_eq!(sys.matrix.shape(), (1, 2));
        let sol = solve_pointwise(&sys, 1e-10);
        assert!(sol.diagnostics.consistent);
        let v = &sol.mbar[0];
        assert!((2.0 * v[0] + v[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn constant_derivative_operator_is_never_member() {
        // c ∂_y h_1 has no zero-order adjoint part: the E = ∅ row is 0 = 1.
        let mut l = LinearPDO::new(2, 2, 1);
        l.add(0, MultiIndex::single(1), 1, &Poly::constant(2, int(-2)));
        for s in 0..4 {
            let cert = bundle_membership(&l, &random_points(2, 5, 3), s, 1e-10).unwrap();
            assert!(!cert.member);
            let sol = solve_pointwise(&assemble_system(&l, &[0.3, 0.1], s).unwrap(), 1e-10);
            assert!(!sol.diagnostics.consistent);
        }
    }

    #[test]
    fn synthetic_coefficient_vanishing_at_origin() {
        // L(h) = x ∂_x h_0 + (1 + y) h_1 ... degenerate at the origin only via h_0 block
        let mut l = LinearPDO::new(2, 2, 1);
        let x = Poly::var(2, 0);
        let y = Poly::var(2, 1);
        l.add(0, MultiIndex::empty(), 0, &x);
        l.add(0, MultiIndex::empty(), 1, &y);
        let pts = vec![vec![0.5, 0.5], vec![0.0, 0.0], vec![-0.3, 0.2]];
        let cert = bundle_membership(&l, &pts, 0, 1e-10).unwrap();
        assert!(!cert.member);
        assert_eq!(cert.witness, Some(vec![0.0, 0.0]));
        assert_eq!(cert.full_row_rank, vec![true, false, true]);
    }

    #[test]
    fn random_uts_left_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let l = random_uts(&mut rng, 2, 1, 1, 2);
        let pts = random_points(2, 40, 9);
        let cand = solve_patch(&l, &pts, 2, 1e-10).unwrap();
        assert!(cand.solved_count() >= 39);
        let mut grng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..5 {
            let g = vec![Poly::random(&mut grng, 2, 4, 0.7)];
            assert!(verify_left_inverse(&cand, &l, &g).unwrap() < 1e-8);
        }
        assert_eq!(verify_left_inverse(&cand, &l, &[Poly::zero(2)]).unwrap(), 0.0);
    }

    #[test]
    fn exact_solution_agrees_with_float() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let l = random_uts(&mut rng, 2, 1, 1, 1);
        let asm = InverseAssembler::new(&l, 2).unwrap();
        let xq = vec![rat(1, 3), rat(-1, 5)];
        let xf = vec![1.0 / 3.0, -0.2];
        let exact = solve_exact(&asm, &xq).unwrap();
        let float = solve_pointwise(&asm.assemble(&xf), 1e-12);
        for (e, f) in exact[0].iter().zip(float.mbar[0].iter()) {
            assert!((crate::poly::to_f64(e) - f).abs() < 1e-9);
        }
    }

    #[test]
    fn right_inverse_on_symmetric_operator() {
        // L(h) = (1 + x²)(∂_y h_0 + ∂_x h_1)/2 + h_0 on a small patch.
        let mut l = LinearPDO::new(2, 2, 1);
        let x = Poly::var(2, 0);
        let w = &Poly::one(2) + &(&x * &x);
        add_symmetric_top(&mut l, 0, &MultiIndex::new(vec![0, 1]), &w, 2);
        l.add(0, MultiIndex::empty(), 0, &Poly::one(2));
        let grid = GridPatch::centered(&[0.1, -0.2], 0.02, 10).unwrap();
        let target = |p: &[f64]| vec![(p[0] + 2.0 * p[1]).sin()];
        let res = apply_right_inverse(&l, 2, &grid, &target, 1e-10).unwrap();
        assert!(res.coarse.residual < 1e-2);
        let ratio = res.richardson_ratio.unwrap();
        assert!((3.0..=5.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn exact_integration() {
        let phi = Poly::var(2, 1).scale(&int(3));
        let h = integrate_along(&phi, 1, &rat(-2, 1)).unwrap();
        assert_eq!(h.derivative(1).scale(&rat(-2, 1)), phi);
    }
}
