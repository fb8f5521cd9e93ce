//! The metric-inducing operator `f ↦ JᵀJ` and its linearization.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::combinatorics::{multi_indices, Mode, MultiIndex};
use crate::error::{Error, Result};
use crate::expr::{Expr, MapAtom};
use crate::grid::{GridField, GridPatch};
use crate::jet::AnalyticMap;

/// Pairs `(α, β)` with `α ≤ β` in the fixed ordering.
pub fn sym_pairs(n: usize) -> Vec<(usize, usize)> {
    multi_indices(n, 2, Mode::Exact)
        .iter()
        .map(|i| (i.entries()[0], i.entries()[1]))
        .collect()
}

pub fn jacobian(f: &AnalyticMap, x: &[f64]) -> DMatrix<f64> {
    let (n, q) = (f.n(), f.q());
    let mut j = DMatrix::zeros(q, n);
    for a in 0..n {
        for (i, e) in f.derivative(&MultiIndex::single(a)).iter().enumerate() {
            j[(i, a)] = e.eval(x);
        }
    }
    j
}

/// `AᵀB + BᵀA` when `sym`, `AᵀB` otherwise, filled so that the result is
/// exactly symmetric.
fn gram(a: &DMatrix<f64>, b: &DMatrix<f64>, sym: bool) -> DMatrix<f64> {
    let n = a.ncols();
    let mut g = DMatrix::zeros(n, n);
    for (al, be) in sym_pairs(n) {
        let mut v = a.column(al).dot(&b.column(be));
        if sym {
            v += a.column(be).dot(&b.column(al));
        }
        g[(al, be)] = v;
        g[(be, al)] = v;
    }
    g
}

pub fn metric_from_jacobian(j: &DMatrix<f64>) -> DMatrix<f64> {
    gram(j, j, false)
}

pub fn linearization_from_jacobians(jf: &DMatrix<f64>, jdf: &DMatrix<f64>) -> DMatrix<f64> {
    gram(jf, jdf, true)
}

pub fn induced_metric(f: &AnalyticMap, x: &[f64]) -> DMatrix<f64> {
    metric_from_jacobian(&jacobian(f, x))
}

/// `T_f D(δf) = J_fᵀ J_δf + J_δfᵀ J_f` at `x`.
pub fn metric_linearization(f: &AnalyticMap, df: &AnalyticMap, x: &[f64]) -> Result<DMatrix<f64>> {
    check_same(f, df)?;
    Ok(linearization_from_jacobians(&jacobian(f, x), &jacobian(df, x)))
}

/// Same as [`metric_linearization`] with `δf` sampled on a grid; `∂δf` by
/// central differences, so `index` must be an interior point.
pub fn metric_linearization_grid(f: &AnalyticMap, df: &GridField, index: usize) -> Result<DMatrix<f64>> {
    if df.dim != f.q() {
        return Err(Error::RankMismatch {
            expected: f.q(),
            got: df.dim,
        });
    }
    let n = f.n();
    let mut jdf = DMatrix::zeros(f.q(), n);
    for a in 0..n {
        for (i, v) in df.central_derivative_at(index, a)?.into_iter().enumerate() {
            jdf[(i, a)] = v;
        }
    }
    let x = df.grid.point(index);
    Ok(linearization_from_jacobians(&jacobian(f, &x), &jdf))
}

/// `‖D(f + tδf) − D(f) − t·T_f D(δf)‖_F / t²` at `x`.
pub fn fd_linearization_check(f: &AnalyticMap, df: &AnalyticMap, x: &[f64], t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::InvalidInput("step t must be positive".into()));
    }
    check_same(f, df)?;
    let jf = jacobian(f, x);
    let jd = jacobian(df, x);
    let moved = metric_from_jacobian(&(&jf + &jd * t));
    let diff = moved - metric_from_jacobian(&jf) - linearization_from_jacobians(&jf, &jd) * t;
    Ok(diff.norm() / (t * t))
}

fn check_same(f: &AnalyticMap, df: &AnalyticMap) -> Result<()> {
    if f.q() != df.q() || f.n() != df.n() {
        return Err(Error::RankMismatch {
            expected: f.q(),
            got: df.q(),
        });
    }
    Ok(())
}

/// Symmetric matrix field stored by its upper triangle in `sym_pairs`
/// order, so symmetry holds by construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricField {
    Closed {
        n: usize,
        #[serde(with = "closed_entries")]
        entries: Vec<Expr>,
    },
    Grid {
        grid: GridPatch,
        values: Vec<Vec<f64>>,
    },
}

mod closed_entries {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(e: &[Expr], s: S) -> std::result::Result<S::Ok, S::Error> {
        let atoms: Vec<Vec<MapAtom>> = e.iter().map(Expr::to_atoms).collect();
        atoms.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<Expr>, D::Error> {
        let atoms: Vec<Vec<MapAtom>> = Vec::deserialize(d)?;
        atoms
            .iter()
            .map(|a| {
                let n = a.first().map(|x| x.powers.len()).unwrap_or(0);
                Expr::from_atoms(n, a).map_err(serde::de::Error::custom)
            })
            .collect()
    }
}

impl MetricField {
    pub fn closed(n: usize, entries: Vec<Expr>) -> Result<Self> {
        let m = MetricField::Closed { n, entries };
        m.validate()?;
        Ok(m)
    }

    /// Constant field from an `n × n` matrix (upper triangle is used).
    pub fn constant(m: &DMatrix<f64>) -> Self {
        let n = m.nrows();
        let entries = sym_pairs(n)
            .into_iter()
            .map(|(a, b)| {
                let c = num::BigRational::from_float(m[(a, b)]).expect("finite entry");
                Expr::constant(n, c)
            })
            .collect();
        MetricField::Closed { n, entries }
    }

    pub fn from_fn(grid: GridPatch, f: impl Fn(&[f64]) -> DMatrix<f64>) -> Self {
        let values = (0..grid.len())
            .map(|i| {
                let m = f(&grid.point(i));
                sym_pairs(m.nrows()).iter().map(|&(a, b)| m[(a, b)]).collect()
            })
            .collect();
        MetricField::Grid { grid, values }
    }

    pub fn dim(&self) -> usize {
        match self {
            MetricField::Closed { n, .. } => *n,
            MetricField::Grid { grid, .. } => grid.dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        let want = n * (n + 1) / 2;
        match self {
            MetricField::Closed { entries, .. } => {
                // Empty expressions carry no variable count; only check the rest.
                if entries.len() != want
                    || entries.iter().any(|e| !e.is_zero() && e.nvars() != n)
                {
                    return Err(Error::InvalidInput(format!(
                        "closed metric needs {want} upper-triangle entries in {n} variables"
                    )));
                }
            }
            MetricField::Grid { grid, values } => {
                grid.validate()?;
                if values.len() != grid.len() || values.iter().any(|v| v.len() != want) {
                    return Err(Error::InvalidInput(format!(
                        "grid metric needs {} samples of {want} entries",
                        grid.len()
                    )));
                }
            }
        }
        Ok(())
    }

    fn assemble(n: usize, upper: impl Iterator<Item = f64>) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(n, n);
        for ((a, b), v) in sym_pairs(n).into_iter().zip(upper) {
            m[(a, b)] = v;
            m[(b, a)] = v;
        }
        m
    }

    /// Value at a point of a closed field.
    pub fn at(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        match self {
            MetricField::Closed { n, entries } => {
                Ok(Self::assemble(*n, entries.iter().map(|e| e.eval(x))))
            }
            MetricField::Grid { .. } => Err(Error::InvalidInput(
                "grid metric must be sampled by grid index".into(),
            )),
        }
    }

    /// Value at grid point `index` of `grid`; closed fields are evaluated,
    /// grid fields must live on the same grid.
    pub fn at_grid(&self, grid: &GridPatch, index: usize) -> Result<DMatrix<f64>> {
        match self {
            MetricField::Closed { .. } => self.at(&grid.point(index)),
            MetricField::Grid { grid: g, values } => {
                if g != grid {
                    return Err(Error::InvalidInput("metric grid differs from patch".into()));
                }
                Ok(Self::assemble(g.dim(), values[index].iter().copied()))
            }
        }
    }

    /// Positive-definiteness flag per grid point.
    pub fn positive_definite(&self, grid: &GridPatch) -> Result<Vec<bool>> {
        (0..grid.len())
            .map(|i| Ok(is_positive_definite(&self.at_grid(grid, i)?)))
            .collect()
    }
}

pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    m.clone().cholesky().is_some()
}

/// A tangent vector to the space of maps: closed form or grid samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VariationField {
    Closed { map: AnalyticMap },
    Grid { field: GridField },
}

impl VariationField {
    pub fn q(&self) -> usize {
        match self {
            VariationField::Closed { map } => map.q(),
            VariationField::Grid { field } => field.dim,
        }
    }
}
