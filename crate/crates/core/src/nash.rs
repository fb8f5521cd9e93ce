//! Nash's algebraic replacement of the linearized metric equation and the
//! inversions built on it.
//!
//! With auxiliary functions `h_α`, any solution of
//! `∂_α f · δf = h_α`, `2 ∂²_{αβ} f · δf = ∂_α h_β + ∂_β h_α − δg_{αβ}`
//! solves `∂_α f · ∂_β δf + ∂_β f · ∂_α δf = δg_{αβ}` by the product rule.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::combinatorics::multi_indices_between;
use crate::compat::{compatibility_pdo, dependence_coeffs, CompatibilityPDO};
use crate::error::{Error, Result};
use crate::grid::{FdOrder, GridField, GridPatch};
use crate::inverse::{apply_right_inverse, integrate_along};
use crate::jet::{rank_profile_points, AnalyticMap, Classification, JetTable};
use crate::linalg::{min_norm_solve, min_norm_with_derivatives, numerical_rank};
use crate::metric::{is_positive_definite, linearization_from_jacobians, metric_from_jacobian, sym_pairs, MetricField};
use crate::poly::Poly;

/// The `(n + s_n) × q` system at one point.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NashSystem {
    pub point: Vec<f64>,
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
}

/// Rows `∂_α f` then `2 ∂²_{αβ} f` (`α ≤ β`) from the jet columns of
/// orders 1 and 2 (`q × (n + s_n)`, graded order).
pub fn nash_matrix(jets: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let mut m = jets.transpose();
    for k in n..m.nrows() {
        m.row_mut(k).scale_mut(2.0);
    }
    m
}

/// Right-hand side `(h_α ; ∂_α h_β + ∂_β h_α − δg_{αβ})` with
/// `dh[(β, α)] = ∂_β h_α`.
pub fn nash_rhs(h: &[f64], dh: &DMatrix<f64>, dg: &DMatrix<f64>) -> DVector<f64> {
    let n = h.len();
    let pairs = sym_pairs(n);
    let mut b = DVector::zeros(n + pairs.len());
    for a in 0..n {
        b[a] = h[a];
    }
    for (k, (a, be)) in pairs.into_iter().enumerate() {
        b[n + k] = dh[(a, be)] + dh[(be, a)] - dg[(a, be)];
    }
    b
}

pub fn nash_system(f: &AnalyticMap, x: &[f64], h: &[f64], dh: &DMatrix<f64>, dg: &DMatrix<f64>) -> NashSystem {
    let n = f.n();
    let jets = f.jet_table(2).matrix(x, 2);
    NashSystem {
        point: x.to_vec(),
        matrix: nash_matrix(&jets, n),
        rhs: nash_rhs(h, dh, dg),
    }
}

fn relative_sigma(m: &DMatrix<f64>) -> f64 {
    numerical_rank(m, 0.0, 0.0).relative_min()
}

fn require_free(f: &AnalyticMap, points: &[Vec<f64>], tol: f64) -> Result<()> {
    let cert = rank_profile_points(f, points, 2, tol)?;
    match cert.classification {
        Classification::Free { .. } => Ok(()),
        _ => Err(Error::RankDeficient {
            detail: format!("map is not 2-free ({})", cert.label()),
            witness: cert.witness.unwrap_or_else(|| points[0].clone()),
        }),
    }
}

/// `δf(x)` for a free map with `h ≡ 0`.
pub fn free_inverse_at(f: &AnalyticMap, x: &[f64], dg: &DMatrix<f64>) -> DVector<f64> {
    let n = f.n();
    let sys = nash_system(f, x, &vec![0.0; n], &DMatrix::zeros(n, n), dg);
    min_norm_solve(&sys.matrix, &sys.rhs, 1e-12).x
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FreeInverse {
    pub field: GridField,
    pub min_relative_sigma: f64,
}

/// Pointwise minimal-norm solution of the Nash system with `h ≡ 0`.
pub fn infinitesimal_inverse_free(f: &AnalyticMap, dg: &MetricField, grid: &GridPatch, tol: f64) -> Result<FreeInverse> {
    let points = grid.points();
    require_free(f, &points, tol)?;
    let table = f.jet_table(2);
    let n = f.n();
    let dgs: Vec<DMatrix<f64>> = (0..grid.len()).map(|i| dg.at_grid(grid, i)).collect::<Result<_>>()?;
    let solved: Vec<(Vec<f64>, f64)> = points
        .par_iter()
        .zip(&dgs)
        .map(|(x, g)| {
            let c = nash_matrix(&table.matrix(x, 2), n);
            let b = nash_rhs(&vec![0.0; n], &DMatrix::zeros(n, n), g);
            let sol = min_norm_solve(&c, &b, 1e-12);
            (sol.x.iter().copied().collect(), relative_sigma(&c))
        })
        .collect();
    let min_sigma = solved.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    Ok(FreeInverse {
        field: GridField {
            grid: grid.clone(),
            dim: f.q(),
            values: solved.into_iter().map(|s| s.0).collect(),
        },
        min_relative_sigma: min_sigma,
    })
}

fn closed_derivatives(dg: &MetricField, x: &[f64]) -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>)> {
    let MetricField::Closed { n, entries } = dg else {
        return Err(Error::InvalidInput("exact identity check needs a closed-form metric".into()));
    };
    let assemble = |vals: Vec<f64>| {
        let mut m = DMatrix::zeros(*n, *n);
        for ((a, b), v) in sym_pairs(*n).into_iter().zip(vals) {
            m[(a, b)] = v;
            m[(b, a)] = v;
        }
        m
    };
    let g = assemble(entries.iter().map(|e| e.eval(x)).collect());
    let dgs = (0..*n)
        .map(|ax| assemble(entries.iter().map(|e| e.derivative(ax).eval(x)).collect()))
        .collect();
    Ok((g, dgs))
}

/// Nash matrix and its derivatives along each axis at `x`.
fn nash_matrix_with_derivatives(table: &JetTable, n: usize, x: &[f64]) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
    let cols = multi_indices_between(n, 1, 2);
    let c = nash_matrix(&table.matrix(x, 2), n);
    let dc = (0..n)
        .map(|ax| {
            let mut jets = DMatrix::zeros(table.q, cols.len());
            for (j, idx) in cols.iter().enumerate() {
                for (i, v) in table.derivative_at(&idx.with_axis(ax), x).into_iter().enumerate() {
                    jets[(i, j)] = v;
                }
            }
            nash_matrix(&jets, n)
        })
        .collect();
    (c, dc)
}

/// `sup ‖T_f D(E_f(δg)) − δg‖` over `points` with `∂δf` from the exact
/// derivative of the minimal-norm solution.
pub fn free_identity_residual(f: &AnalyticMap, dg: &MetricField, points: &[Vec<f64>]) -> Result<f64> {
    let n = f.n();
    let table = f.jet_table(3);
    let worst = points
        .par_iter()
        .map(|x| -> Result<f64> {
            let (g, dgs) = closed_derivatives(dg, x)?;
            let (c, dc) = nash_matrix_with_derivatives(&table, n, x);
            let zero = DMatrix::zeros(n, n);
            let b = nash_rhs(&vec![0.0; n], &zero, &g);
            let db: Vec<DVector<f64>> = dgs.iter().map(|d| nash_rhs(&vec![0.0; n], &zero, d)).collect();
            let (_, ddf) = min_norm_with_derivatives(&c, &b, &dc, &db).ok_or_else(|| Error::RankDeficient {
                witness: x.clone(),
                detail: "Nash matrix lost full row rank".into(),
            })?;
            let jf = c.rows(0, n).transpose();
            let jdf = DMatrix::from_columns(&ddf);
            let t = linearization_from_jacobians(&jf, &jdf);
            Ok((t - g).amax())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(worst.into_iter().fold(0.0, f64::max))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxiliaryPath {
    /// `h` in closed form: zero right-hand side or `c·∂_β h_α = φ` with
    /// constant `c`, integrated exactly.
    Exact,
    /// `h = M(φ)` from the universal right inverse on the grid.
    RightInverse,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FullRankInverse {
    pub path: AuxiliaryPath,
    pub grid: GridPatch,
    pub h: GridField,
    #[serde(skip)]
    pub h_exact: Option<Vec<Poly>>,
    pub df: GridField,
    /// Worst `‖Cδf − b‖ / max(1, ‖b‖)` of the Nash system.
    pub consistency: f64,
    pub min_relative_sigma: f64,
    pub compatibility: CompatibilityPDO,
}

fn metric_polys(dg: &MetricField) -> Option<Vec<Poly>> {
    match dg {
        MetricField::Closed { entries, n } => entries
            .iter()
            .map(|e| if e.is_zero() { Some(Poly::zero(*n)) } else { e.to_poly() })
            .collect(),
        MetricField::Grid { .. } => None,
    }
}

/// Closed-form `h` for `L_f(h) = φ` when available.
fn exact_auxiliary(pdo: &CompatibilityPDO, phi: &[Poly]) -> Option<Vec<Poly>> {
    let n = pdo.n;
    if phi.iter().all(Poly::is_zero) {
        return Some(vec![Poly::zero(n); n]);
    }
    if pdo.m != 1 {
        return None;
    }
    let terms: Vec<_> = pdo.operator.coeffs().collect();
    let [((_, idx, alpha), c)] = terms.as_slice() else {
        return None;
    };
    if idx.order() != 1 {
        return None;
    }
    let c = c.as_constant()?;
    let mut h = vec![Poly::zero(n); n];
    h[*alpha] = integrate_along(&phi[0], idx.entries()[0], &c).ok()?;
    Some(h)
}

/// `h` from the compatibility equation and then `δf` from the Nash system, for a map of
/// full 2-rank.
pub fn infinitesimal_inverse_full_rank(
    f: &AnalyticMap,
    dg: &MetricField,
    grid: &GridPatch,
    s: usize,
    tol: f64,
) -> Result<FullRankInverse> {
    let n = f.n();
    let points = grid.points();
    let coeffs = dependence_coeffs(f, 1, &points, tol)?;
    if coeffs.m == 0 {
        return Err(Error::InvalidInput("map is free; use the free inverse".into()));
    }
    let pdo = compatibility_pdo(&coeffs)?;
    let exact = metric_polys(dg).and_then(|g| pdo.rhs_poly(&g).ok()).and_then(|phi| exact_auxiliary(&pdo, &phi));
    let (path, h, h_exact) = match exact {
        Some(hp) => {
            let compiled: Vec<_> = hp.iter().map(Poly::compile).collect();
            let h = GridField::from_fn(grid.clone(), n, |x| compiled.iter().map(|c| c.eval(x)).collect());
            (AuxiliaryPath::Exact, h, Some(hp))
        }
        None => {
            let h = right_inverse_auxiliary(&pdo, dg, grid, s, tol)?;
            (AuxiliaryPath::RightInverse, h, None)
        }
    };
    let dh_fields: Vec<GridField> = (0..n).map(|ax| h.derivative(ax)).collect();
    let dh_exact: Option<Vec<Vec<_>>> = h_exact
        .as_ref()
        .map(|hp| (0..n).map(|b| hp.iter().map(|p| p.derivative(b).compile()).collect()).collect());
    let table = f.jet_table(2);
    let solved: Vec<(Vec<f64>, f64, f64)> = (0..grid.len())
        .into_par_iter()
        .map(|i| -> Result<(Vec<f64>, f64, f64)> {
            let x = &points[i];
            let mut dh = DMatrix::zeros(n, n);
            for b in 0..n {
                for a in 0..n {
                    dh[(b, a)] = match &dh_exact {
                        Some(d) => d[b][a].eval(x),
                        None => dh_fields[b].values[i][a],
                    };
                }
            }
            let g = dg.at_grid(grid, i)?;
            let c = nash_matrix(&table.matrix(x, 2), n);
            let b = nash_rhs(&h.values[i], &dh, &g);
            let sol = min_norm_solve(&c, &b, 1e-12);
            let cons = sol.residual / b.norm().max(1.0);
            Ok((sol.x.iter().copied().collect(), cons, relative_sigma(&c)))
        })
        .collect::<Result<_>>()?;
    let consistency = solved.iter().map(|s| s.1).fold(0.0, f64::max);
    let min_sigma = solved.iter().map(|s| s.2).fold(f64::INFINITY, f64::min);
    Ok(FullRankInverse {
        path,
        grid: grid.clone(),
        h,
        h_exact,
        df: GridField {
            grid: grid.clone(),
            dim: f.q(),
            values: solved.into_iter().map(|s| s.0).collect(),
        },
        consistency,
        min_relative_sigma: min_sigma,
        compatibility: pdo,
    })
}

fn right_inverse_auxiliary(pdo: &CompatibilityPDO, dg: &MetricField, grid: &GridPatch, s: usize, tol: f64) -> Result<GridField> {
    let n = pdo.n;
    if !matches!(dg, MetricField::Closed { .. }) {
        return Err(Error::InvalidInput("right-inverse path needs a closed-form metric".into()));
    }
    let restricted = crate::compat::uts_restriction(pdo, true)?;
    if restricted.perm.iter().enumerate().any(|(k, &p)| k != p) {
        return Err(Error::InvalidInput(
            "right-inverse path needs the identity relabeling; reorder the coordinates of the map".into(),
        ));
    }
    let target = |x: &[f64]| -> Vec<f64> {
        let g = dg.at(x).expect("closed metric");
        pdo.rhs_at(x, &g)
    };
    let res = apply_right_inverse(&restricted.operator, s, grid, &target, tol).map_err(|e| match e {
        Error::RankDeficient { witness, detail } => Error::NotMember(format!(
            "compatibility operator has no right inverse of order {s} at {witness:?}: {detail}"
        )),
        other => other,
    })?;
    let mut h = GridField::zeros(grid.clone(), n);
    for (i, v) in res.coarse.h.values.iter().enumerate() {
        h.values[i][..v.len()].copy_from_slice(v);
    }
    Ok(h)
}

/// `sup ‖J_fᵀ J_δf + J_δfᵀ J_f − δg‖` over `indices`, with `J_δf` by
/// central differences.
pub fn linearized_residual(f: &AnalyticMap, df: &GridField, dg: &MetricField, indices: &[usize]) -> Result<f64> {
    let grid = &df.grid;
    let worst = indices
        .par_iter()
        .map(|&i| -> Result<f64> {
            let t = crate::metric::metric_linearization_grid(f, df, i)?;
            Ok((t - dg.at_grid(grid, i)?).amax())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(worst.into_iter().fold(0.0, f64::max))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RefinementStudy {
    pub spacings: Vec<f64>,
    pub residuals: Vec<f64>,
    /// `residuals[k] / residuals[k+1]`.
    pub ratios: Vec<f64>,
    pub consistency: Vec<f64>,
}

/// Full-rank inversion on `levels` successively halved grids, measuring
/// the linearized-equation residual at the interior points of the
/// coarsest grid.
pub fn full_rank_refinement(
    f: &AnalyticMap,
    dg: &MetricField,
    grid: &GridPatch,
    s: usize,
    levels: usize,
    tol: f64,
) -> Result<RefinementStudy> {
    let base_points = grid.interior_indices(1);
    let mut g = grid.clone();
    let mut idx = base_points.clone();
    let mut out = RefinementStudy {
        spacings: Vec::new(),
        residuals: Vec::new(),
        ratios: Vec::new(),
        consistency: Vec::new(),
    };
    for level in 0..levels {
        let inv = infinitesimal_inverse_full_rank(f, dg, &g, s, tol)?;
        out.spacings.push(g.spacing.iter().copied().fold(0.0, f64::max));
        out.residuals.push(linearized_residual(f, &inv.df, dg, &idx)?);
        out.consistency.push(inv.consistency);
        if level + 1 < levels {
            idx = idx.iter().map(|&p| g.refined_index(p)).collect();
            g = g.refined();
        }
    }
    out.ratios = out.residuals.windows(2).map(|w| w[0] / w[1]).collect();
    Ok(out)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// `sup ‖D(f_k) − g_target‖` after this iteration.
    pub residual: f64,
    pub step_norm: f64,
    pub min_relative_sigma: f64,
    /// `residual_k / residual_{k−1}`.
    pub contraction: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContinuationTrace {
    pub tol: f64,
    pub stencil: FdOrder,
    pub initial_residual: f64,
    pub iterations: Vec<IterationRecord>,
    pub converged: bool,
    pub final_residual: f64,
    pub stop_reason: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContinuationResult {
    pub map: GridField,
    pub trace: ContinuationTrace,
}

/// Smallest relative singular value of the Nash matrix tolerated before
/// the iteration is stopped.
pub const RANK_MARGIN: f64 = 1e-8;

/// First and second partials of a grid map by finite differences.
fn grid_jets(f: &GridField, fd: FdOrder) -> (Vec<GridField>, Vec<GridField>) {
    let n = f.grid.dim();
    let d1: Vec<GridField> = (0..n).map(|a| f.derivative_with(a, fd)).collect();
    let d2 = sym_pairs(n).into_iter().map(|(a, b)| d1[a].derivative_with(b, fd)).collect();
    (d1, d2)
}

fn jet_matrix_at(d1: &[GridField], d2: &[GridField], i: usize, q: usize) -> DMatrix<f64> {
    let cols: Vec<&GridField> = d1.iter().chain(d2.iter()).collect();
    DMatrix::from_fn(q, cols.len(), |r, c| cols[c].values[i][r])
}

fn metric_residual(jets: &[DMatrix<f64>], target: &[DMatrix<f64>], n: usize) -> (Vec<DMatrix<f64>>, f64) {
    let res: Vec<DMatrix<f64>> = jets
        .iter()
        .zip(target)
        .map(|(j, g)| g - metric_from_jacobian(&j.columns(0, n).into_owned()))
        .collect();
    let sup = res.iter().map(|r| r.amax()).fold(0.0, f64::max);
    (res, sup)
}

/// Newton-type continuation `f_{k+1} = f_k + E_{f_k}(g_target − D(f_k))`
/// for a free starting map. The first step uses exact jets of `f₀`; later
/// iterates are grid fields with finite-difference jets.
pub fn isometric_continuation(
    f0: &AnalyticMap,
    target: &MetricField,
    grid: &GridPatch,
    max_steps: usize,
    tol: f64,
    rank_tol: f64,
    fd: FdOrder,
) -> Result<ContinuationResult> {
    let n = f0.n();
    let q = f0.q();
    let points = grid.points();
    require_free(f0, &points, rank_tol)?;
    let targets: Vec<DMatrix<f64>> = (0..grid.len()).map(|i| target.at_grid(grid, i)).collect::<Result<_>>()?;
    if let Some(p) = targets.iter().position(|g| !is_positive_definite(g)) {
        return Err(Error::InvalidInput(format!(
            "target metric is not positive definite at {:?}",
            points[p]
        )));
    }
    let table = f0.jet_table(2);
    let mut f = GridField::from_fn(grid.clone(), q, |x| f0.eval(x));
    let mut jets: Vec<DMatrix<f64>> = points.par_iter().map(|x| table.matrix(x, 2)).collect();
    let (mut res, mut sup) = metric_residual(&jets, &targets, n);
    let mut trace = ContinuationTrace {
        tol,
        stencil: fd,
        initial_residual: sup,
        iterations: Vec::new(),
        converged: sup < tol,
        final_residual: sup,
        stop_reason: String::new(),
    };
    let mut increases = 0;
    let mut k = 0;
    while sup >= tol {
        if k == max_steps {
            trace.stop_reason = format!("step limit {max_steps} reached");
            break;
        }
        let solved: Vec<(Vec<f64>, f64)> = jets
            .par_iter()
            .zip(&res)
            .map(|(j, g)| {
                let c = nash_matrix(j, n);
                let b = nash_rhs(&vec![0.0; n], &DMatrix::zeros(n, n), g);
                (min_norm_solve(&c, &b, 1e-12).x.iter().copied().collect(), relative_sigma(&c))
            })
            .collect();
        let margin = solved.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
        let step = GridField {
            grid: grid.clone(),
            dim: q,
            values: solved.into_iter().map(|s| s.0).collect(),
        };
        let step_norm = step.sup_norm(&(0..grid.len()).collect::<Vec<_>>());
        f = f.add(&step);
        let (d1, d2) = grid_jets(&f, fd);
        jets = (0..grid.len()).map(|i| jet_matrix_at(&d1, &d2, i, q)).collect();
        let prev = sup;
        (res, sup) = metric_residual(&jets, &targets, n);
        k += 1;
        trace.iterations.push(IterationRecord {
            iteration: k,
            residual: sup,
            step_norm,
            min_relative_sigma: margin,
            contraction: (prev > 0.0).then(|| sup / prev),
        });
        trace.final_residual = sup;
        if margin < RANK_MARGIN {
            trace.stop_reason = format!("rank margin {margin:.3e} below {RANK_MARGIN:.0e}");
            return Err(Error::ContinuationFailed(Box::new(trace)));
        }
        increases = if sup > prev { increases + 1 } else { 0 };
        if increases >= 2 {
            trace.stop_reason = "residual increased on two consecutive steps".into();
            return Err(Error::ContinuationFailed(Box::new(trace)));
        }
    }
    trace.converged = sup < tol;
    if trace.converged {
        trace.stop_reason = format!("residual below {tol:e}");
    }
    Ok(ContinuationResult { map: f, trace })
}

/// `g_target = D(f₀) + ε·P` on the grid.
pub fn perturbed_target(f0: &AnalyticMap, grid: &GridPatch, eps: f64, p: impl Fn(&[f64]) -> DMatrix<f64>) -> MetricField {
    MetricField::from_fn(grid.clone(), |x| crate::metric::induced_metric(f0, x) + p(x) * eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;
    use crate::jet::{builtin_map, MapFamily};
    use crate::poly::{int, rat};

    #[test]
    fn origin_value_for_identity_metric() {
        let f = builtin_map(&MapFamily::FreeEuclidean { n: 2 }).unwrap();
        let df = free_inverse_at(&f, &[0.0, 0.0], &DMatrix::identity(2, 2));
        let want = [0.0, 0.0, -0.25, 0.0, -0.25];
        for (a, b) in df.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_metric_gives_zero_variation() {
        let f = builtin_map(&MapFamily::FreeEuclidean { n: 2 }).unwrap();
        let grid = GridPatch::cube(2, -1.0, 1.0, 0.5).unwrap();
        let zero = MetricField::constant(&DMatrix::zeros(2, 2));
        let inv = infinitesimal_inverse_free(&f, &zero, &grid, 1e-10).unwrap();
        assert!(inv.field.values.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn identity_map_is_not_free() {
        let id = AnalyticMap::from_polys(&[Poly::var(2, 0), Poly::var(2, 1)]).unwrap();
        let grid = GridPatch::cube(2, -1.0, 1.0, 0.5).unwrap();
        let g = MetricField::constant(&DMatrix::identity(2, 2));
        assert!(matches!(
            infinitesimal_inverse_free(&id, &g, &grid, 1e-10),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn free_identity_exact() {
        let f = builtin_map(&MapFamily::FreeEuclidean { n: 2 }).unwrap();
        let x = Expr::var(2, 0);
        let y = Expr::var(2, 1);
        let dg = MetricField::closed(
            2,
            vec![
                Expr::constant(2, int(1)).add(&Expr::trig(2, crate::expr::TrigKind::Sin, 1)),
                x.scale(&rat(1, 3)),
                Expr::constant(2, int(2)).add(&y.scale(&rat(-1, 2))),
            ],
        )
        .unwrap();
        let grid = GridPatch::cube(2, -0.9, 0.9, 0.3).unwrap();
        assert!(free_identity_residual(&f, &dg, &grid.points()).unwrap() < 1e-10);
    }

    #[test]
    fn projected_map_exact_auxiliary() {
        // (δg)_yy = 2 gives h = (0, y).
        let f = builtin_map(&MapFamily::Projected { n: 2, drop: vec![4] }).unwrap();
        let z = Expr::zero(2);
        let dg = MetricField::closed(2, vec![z.clone(), z, Expr::constant(2, int(2))]).unwrap();
        let grid = GridPatch::cube(2, -0.5, 0.5, 0.25).unwrap();
        let inv = infinitesimal_inverse_full_rank(&f, &dg, &grid, 2, 1e-10).unwrap();
        assert_eq!(inv.path, AuxiliaryPath::Exact);
        let h = inv.h_exact.as_ref().unwrap();
        assert!(h[0].is_zero());
        assert_eq!(h[1], Poly::var(2, 1));
        assert!(inv.consistency < 1e-12);
    }

    #[test]
    fn projected_map_rhs_vanishes_off_yy() {
        let f = builtin_map(&MapFamily::Projected { n: 2, drop: vec![4] }).unwrap();
        let x = Expr::var(2, 0);
        let dg = MetricField::closed(2, vec![x.clone(), x, Expr::zero(2)]).unwrap();
        let grid = GridPatch::cube(2, -0.5, 0.5, 0.25).unwrap();
        let inv = infinitesimal_inverse_full_rank(&f, &dg, &grid, 2, 1e-10).unwrap();
        assert!(inv.h_exact.unwrap().iter().all(Poly::is_zero));
        assert!(inv.consistency < 1e-12);
    }

    #[test]
    fn zero_perturbation_needs_no_steps() {
        let f = builtin_map(&MapFamily::FreeEuclidean { n: 2 }).unwrap();
        let grid = GridPatch::cube(2, -1.0, 1.0, 0.25).unwrap();
        let t = perturbed_target(&f, &grid, 0.0, |_| DMatrix::identity(2, 2));
        let out = isometric_continuation(&f, &t, &grid, 5, 1e-6, 1e-10, FdOrder::Fourth).unwrap();
        assert!(out.trace.iterations.is_empty());
        assert!(out.trace.converged);
    }

    #[test]
    fn indefinite_target_rejected() {
        let f = builtin_map(&MapFamily::FreeEuclidean { n: 2 }).unwrap();
        let grid = GridPatch::cube(2, -1.0, 1.0, 0.5).unwrap();
        let t = perturbed_target(&f, &grid, 10.0, |_| -DMatrix::identity(2, 2));
        assert!(isometric_continuation(&f, &t, &grid, 5, 1e-6, 1e-10, FdOrder::Fourth).is_err());
    }
}
