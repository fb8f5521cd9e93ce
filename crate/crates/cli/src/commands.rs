use std::path::Path;

use anyhow::{bail, Context, Result};
use isojet::combinatorics::threshold_report;
use isojet::compat::{compatibility_pdo, dependence_coeffs};
use isojet::grid::{FdOrder, GridField, GridPatch};
use isojet::inverse::{solve_with, InverseAssembler};
use isojet::jet::{rank_profile_points, AnalyticMap, Classification};
use isojet::metric::MetricField;
use isojet::nash::{
    free_identity_residual, infinitesimal_inverse_free, infinitesimal_inverse_full_rank, isometric_continuation,
    linearized_residual,
};
use isojet::pdo::{duality_pairing, is_upper_totally_symmetric, transversality_check, LinearPDO, SubmanifoldSpec};
use isojet::poly::Poly;
use isojet::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::report::{sibling_csv, write_artifact, Inputs, Outcome};
use crate::{
    AdjointArgs, CertifyArgs, CompatArgs, Global, InvertArgs, InvertMode, RightinvArgs, SolveArgs, Stencil,
    ThresholdArgs, TransversalArgs,
};

/// Library errors that are verdicts about valid input rather than failures.
fn negative_verdict(e: &Error) -> Option<Value> {
    match e {
        Error::RankDeficient { witness, detail } => Some(json!({"error": e.to_string(), "witness": witness, "detail": detail})),
        Error::NotMember(_) | Error::NoRelabeling(_) => Some(json!({"error": e.to_string()})),
        Error::NotLarge { witness } => Some(json!({"error": e.to_string(), "witness": witness})),
        Error::ContinuationFailed(trace) => Some(json!({"error": e.to_string(), "trace": trace})),
        _ => None,
    }
}

/// Runs `f`, turning verdict-type errors into a negative outcome.
fn verdict(f: impl FnOnce() -> Result<Outcome, Error>) -> Result<Outcome> {
    match f() {
        Ok(o) => Ok(o),
        Err(e) => match negative_verdict(&e) {
            Some(v) => Ok(Outcome { result: v, positive: false }),
            None => Err(e.into()),
        },
    }
}

fn load_map(inputs: &mut Inputs, path: &Path) -> Result<AnalyticMap> {
    inputs.load("map", path)
}

fn load_grid(inputs: &mut Inputs, path: &Path) -> Result<GridPatch> {
    let g: GridPatch = inputs.load("grid", path)?;
    g.validate()?;
    Ok(g)
}

fn check_dim(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        bail!("{what} has dimension {got}, expected {want}");
    }
    Ok(())
}

pub fn certify(a: &CertifyArgs, g: &Global, inputs: &mut Inputs) -> Result<Outcome> {
    let f = load_map(inputs, &a.map)?;
    let points = match &a.grid {
        Some(p) => {
            let grid = load_grid(inputs, p)?;
            check_dim("grid", grid.dim(), f.n())?;
            grid.points()
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(g.seed);
            (0..a.samples)
                .map(|_| (0..f.n()).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect()
        }
    };
    if points.is_empty() {
        bail!("no sample points");
    }
    let cert = rank_profile_points(&f, &points, a.order, g.tol_rank)?;
    let positive = !cert.is_degenerate();
    Outcome::new(
        json!({"label": cert.label(), "points": points.len(), "certificate": cert}),
        positive,
    )
}

/// Inclusive `a..b`, `a..=b` or a single value; `a > b` is empty.
fn parse_range(s: &str) -> Result<Vec<usize>> {
    let parse = |t: &str| t.trim().parse::<usize>().with_context(|| format!("bad range bound {t:?}"));
    match s.split_once("..") {
        Some((lo, hi)) => {
            let (lo, hi) = (parse(lo)?, parse(hi.trim_start_matches('='))?);
            Ok((lo..=hi).collect())
        }
        None => Ok(vec![parse(s)?]),
    }
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(ToString::to_string).unwrap_or_default()
}

fn pass(v: Option<bool>) -> String {
    match v {
        Some(true) => "pass".into(),
        Some(false) => "fail".into(),
        None => String::new(),
    }
}

pub fn thresholds(a: &ThresholdArgs, g: &Global) -> Result<Outcome> {
    let mut rows = Vec::new();
    for n in parse_range(&a.n)? {
        for m in parse_range(&a.m)? {
            for r in parse_range(&a.r)? {
                rows.push(threshold_report(n, m, r)?);
            }
        }
    }
    let csv_path = a.csv.clone().or_else(|| g.out.as_deref().map(sibling_csv));
    if let Some(path) = &csv_path {
        let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
        w.write_record([
            "n",
            "m",
            "r",
            "s_min",
            "s_lower_bound",
            "boundary_verified",
            "bound_bracket",
            "m_n",
            "sandwich",
            "defect",
            "uts_top_count",
            "q",
            "compat_hypotheses",
            "middle_root_condition",
        ])?;
        for t in &rows {
            w.write_record([
                t.n.to_string(),
                t.m.to_string(),
                t.r.to_string(),
                t.s_min.to_string(),
                t.s_lower_bound.to_string(),
                t.boundary_verified.to_string(),
                t.bound_bracket.to_string(),
                opt(&t.m_n),
                pass(t.sandwich),
                t.defect.to_string(),
                opt(&t.uts_top_count),
                opt(&t.q),
                pass(t.compat_hypotheses),
                pass(t.middle_root_condition),
            ])?;
        }
        w.flush()?;
    }
    let positive = rows.iter().all(|t| t.boundary_verified && t.bound_bracket && t.sandwich != Some(false));
    Outcome::new(json!({"rows": rows}), positive)
}

pub fn invert(a: &InvertArgs, g: &Global, inputs: &mut Inputs) -> Result<Outcome> {
    let f = load_map(inputs, &a.map)?;
    let dg: MetricField = inputs.load("dg", &a.dg)?;
    dg.validate()?;
    let grid = load_grid(inputs, &a.grid)?;
    check_dim("grid", grid.dim(), f.n())?;
    check_dim("dg", dg.dim(), f.n())?;
    let mode = if a.free { InvertMode::Free } else { a.mode };
    let interior = grid.interior_indices(1);
    let free_path = match mode {
        InvertMode::Free => true,
        InvertMode::FullRank => false,
        InvertMode::Auto => match rank_profile_points(&f, &grid.points(), 2, g.tol_rank)?.classification {
            Classification::Free { .. } => true,
            Classification::FullRank { .. } => false,
            Classification::Degenerate => {
                return Outcome::new(json!({"error": "map is degenerate at jet order 2"}), false);
            }
        },
    };
    verdict(|| {
        let (field, summary) = if free_path {
            let inv = infinitesimal_inverse_free(&f, &dg, &grid, g.tol_rank)?;
            let exact = match dg {
                MetricField::Closed { .. } => {
                    let pts: Vec<Vec<f64>> = interior.iter().map(|&i| grid.point(i)).collect();
                    Some(free_identity_residual(&f, &dg, &pts)?)
                }
                MetricField::Grid { .. } => None,
            };
            let fd = linearized_residual(&f, &inv.field, &dg, &interior)?;
            let s = json!({
                "mode": "free",
                "min_relative_sigma": inv.min_relative_sigma,
                "exact_identity_residual": exact,
                "fd_linearized_residual": fd,
            });
            (inv.field, s)
        } else {
            let inv = infinitesimal_inverse_full_rank(&f, &dg, &grid, a.s, g.tol_rank)?;
            let fd = linearized_residual(&f, &inv.df, &dg, &interior)?;
            let s = json!({
                "mode": "full_rank",
                "auxiliary_path": inv.path,
                "compatibility_operator": inv.compatibility.operator,
                "h_exact": inv.h_exact.as_ref().map(|h| h.iter().map(Poly::to_string).collect::<Vec<_>>()),
                "consistency": inv.consistency,
                "min_relative_sigma": inv.min_relative_sigma,
                "fd_linearized_residual": fd,
            });
            (inv.df, s)
        };
        Ok(Outcome {
            result: finish_field(summary, &field, a.field_out.as_deref()),
            positive: true,
        })
    })
}

/// Writes the field artifact when requested and notes where it went.
fn finish_field(mut summary: Value, field: &GridField, path: Option<&Path>) -> Value {
    let written = path.map(|p| write_artifact(p, field).map(|_| p.display().to_string()));
    match written {
        Some(Ok(p)) => summary["field_out"] = json!(p),
        Some(Err(e)) => summary["field_out_error"] = json!(format!("{e:#}")),
        None => {}
    }
    summary
}

pub fn compat(a: &CompatArgs, g: &Global, inputs: &mut Inputs) -> Result<Outcome> {
    let f = load_map(inputs, &a.map)?;
    let grid = load_grid(inputs, &a.grid)?;
    check_dim("grid", grid.dim(), f.n())?;
    verdict(|| {
        let points = grid.points();
        let c = dependence_coeffs(&f, a.order, &points, g.tol_rank)?;
        let mut entries = Vec::new();
        for rel in 0..c.m {
            for (j, col) in c.columns.iter().enumerate() {
                let symbolic = c.symbolic.as_ref().and_then(|s| s[rel].get(&j)).map(ToString::to_string);
                let exact = c.exact.as_ref().and_then(|s| s[rel].get(&j)).map(ToString::to_string);
                let values: Vec<f64> = c.values.iter().map(|v| v[rel][j]).collect();
                if symbolic.is_none() && exact.is_none() && values.iter().all(|v| *v == 0.0) {
                    continue;
                }
                entries.push(json!({
                    "relation": rel,
                    "index": col.entries(),
                    "jet_polynomial": symbolic,
                    "polynomial": exact,
                    "values": values,
                }));
            }
        }
        let (operator, operator_note) = if c.m == 0 {
            (None, Some("map is free: no relations".to_string()))
        } else {
            match compatibility_pdo(&c) {
                Ok(p) => (Some(p), None),
                Err(e) => (None, Some(e.to_string())),
            }
        };
        if let (Some(path), Some(op)) = (&a.pdo_out, &operator) {
            write_artifact(path, &op.operator).map_err(|e| Error::InvalidInput(format!("{e:#}")))?;
        }
        let result = json!({
            "n": c.n,
            "q": c.q,
            "r": c.r,
            "m": c.m,
            "branches": c.branches,
            "max_relation_ratio": c.max_relation_ratio,
            "max_null_angle": c.max_null_angle,
            "min_lambda_norm": c.min_lambda_norm,
            "homogeneity_exact": c.homogeneity_exact(2.0),
            "coefficients": entries,
            "operator": operator,
            "operator_note": operator_note,
        });
        Ok(Outcome {
            result,
            positive: c.m > 0,
        })
    })
}

pub fn rightinv(a: &RightinvArgs, g: &Global, inputs: &mut Inputs) -> Result<Outcome> {
    let l: LinearPDO = inputs.load("pdo", &a.pdo)?;
    let grid = load_grid(inputs, &a.grid)?;
    check_dim("grid", grid.dim(), l.n())?;
    let asm = InverseAssembler::new(&l, a.s)?;
    let points = grid.points();
    let cand = solve_with(&asm, &points, g.tol_rank);
    let witness = cand.diagnostics.iter().position(|d| !d.consistent).map(|p| points[p].clone());
    let member = witness.is_none();
    let full_row_rank = cand.diagnostics.iter().filter(|d| d.full_row_rank).count();
    Outcome::new(
        json!({
            "s": a.s,
            "unknowns": asm.unknowns(),
            "equations": asm.equations(),
            "upper_totally_symmetric": is_upper_totally_symmetric(&l, l.q()),
            "member": member,
            "witness": witness,
            "points": points.len(),
            "solved_points": cand.solved_count(),
            "full_row_rank_points": full_row_rank,
            "diagnostics": cand.diagnostics,
        }),
        member,
    )
}

pub fn solve(a: &SolveArgs, g: &Global, inputs: &mut Inputs) -> Result<Outcome> {
    let f = load_map(inputs, &a.map)?;
    let target: MetricField = inputs.load("target", &a.target)?;
    target.validate()?;
    let grid = load_grid(inputs, &a.grid)?;
    check_dim("grid", grid.dim(), f.n())?;
    let fd = match a.stencil {
        Stencil::Second => FdOrder::Second,
        Stencil::Fourth => FdOrder::Fourth,
    };
    let tol = a.tol.unwrap_or(g.tol_res);
    verdict(|| {
        let res = isometric_continuation(&f, &target, &grid, a.max_steps, tol, g.tol_rank, fd)?;
        let positive = res.trace.converged;
        Ok(Outcome {
            result: finish_field(json!({"trace": res.trace}), &res.map, a.field_out.as_deref()),
            positive,
        })
    })
}

pub fn transversal(a: &TransversalArgs, g: &Global, inputs: &mut Inputs) -> Result<Outcome> {
    let l: LinearPDO = inputs.load("pdo", &a.pdo)?;
    let h: SubmanifoldSpec = inputs.load("submanifold", &a.submanifold)?;
    let points = match (&a.point, &a.grid) {
        (Some(p), None) => vec![p.clone()],
        (None, Some(path)) => {
            let grid = load_grid(inputs, path)?;
            check_dim("grid", grid.dim(), l.n())?;
            grid.points()
        }
        _ => bail!("give exactly one of --point or --grid"),
    };
    let reports = points
        .iter()
        .map(|x| transversality_check(&l, &h, x, g.tol_rank))
        .collect::<isojet::Result<Vec<_>>>()?;
    let characteristic: Vec<&Vec<f64>> = reports.iter().filter(|r| r.characteristic).map(|r| &r.point).collect();
    let transversal = reports.iter().all(|r| r.transversal);
    Outcome::new(
        json!({
            "transversal_everywhere": transversal,
            "characteristic_points": characteristic,
            "reports": reports,
        }),
        transversal,
    )
}

pub fn adjoint(a: &AdjointArgs, g: &Global, inputs: &mut Inputs) -> Result<Outcome> {
    let l: LinearPDO = inputs.load("pdo", &a.pdo)?;
    let adj = l.formal_adjoint();
    let involution = adj.formal_adjoint() == l;
    let mut rng = ChaCha8Rng::seed_from_u64(g.seed);
    let mut pairs = Vec::new();
    for _ in 0..a.pairs {
        let f: Vec<Poly> = (0..l.q()).map(|_| Poly::random(&mut rng, l.n(), 2, 0.7)).collect();
        let gg: Vec<Poly> = (0..l.q_prime()).map(|_| Poly::random(&mut rng, l.n(), 2, 0.7)).collect();
        pairs.push(duality_pairing(&l, &f, &gg, g.tol_res)?);
    }
    let dual_ok = pairs.iter().all(|p| p.exact_residual == "0" && p.residual < g.tol_res);
    if let Some(path) = &a.pdo_out {
        write_artifact(path, &adj)?;
    }
    Outcome::new(
        json!({
            "adjoint": adj,
            "involution": involution,
            "duality": pairs,
        }),
        involution && dual_ok,
    )
}
