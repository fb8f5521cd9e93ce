//! Rectangular grid patches and vector-valued fields sampled on them.

use serde::{Deserialize, Serialize};

use crate::combinatorics::MultiIndex;
use crate::error::{Error, Result};

/// Axis-aligned grid: `origin + k·spacing` for `k < counts` per axis.
/// Points enumerate row-major (last axis fastest).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPatch {
    pub origin: Vec<f64>,
    pub spacing: Vec<f64>,
    pub counts: Vec<usize>,
}

impl GridPatch {
    pub fn new(origin: Vec<f64>, spacing: Vec<f64>, counts: Vec<usize>) -> Result<Self> {
        let g = GridPatch {
            origin,
            spacing,
            counts,
        };
        g.validate()?;
        Ok(g)
    }

    /// Grid covering `[lo, hi]` on every axis with step `h`.
    pub fn cube(n: usize, lo: f64, hi: f64, h: f64) -> Result<Self> {
        let count = ((hi - lo) / h).round() as usize + 1;
        GridPatch::new(vec![lo; n], vec![h; n], vec![count; n])
    }

    /// Grid centred on `center` with `2·half + 1` points per axis.
    pub fn centered(center: &[f64], h: f64, half: usize) -> Result<Self> {
        GridPatch::new(
            center.iter().map(|c| c - h * half as f64).collect(),
            vec![h; center.len()],
            vec![2 * half + 1; center.len()],
        )
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.origin.len();
        if n == 0 {
            return Err(Error::InvalidInput("grid has no axes".into()));
        }
        if self.spacing.len() != n || self.counts.len() != n {
            return Err(Error::InvalidInput(
                "grid origin/spacing/counts lengths differ".into(),
            ));
        }
        if self.spacing.iter().any(|&h| !(h > 0.0) || !h.is_finite()) {
            return Err(Error::InvalidInput("grid spacing must be positive".into()));
        }
        if self.counts.iter().any(|&c| c < 2) {
            return Err(Error::InvalidInput("grid counts must be >= 2".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.origin.len()
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn coords(&self, mut index: usize) -> Vec<usize> {
        let n = self.dim();
        let mut c = vec![0; n];
        for k in (0..n).rev() {
            c[k] = index % self.counts[k];
            index /= self.counts[k];
        }
        c
    }

    pub fn index(&self, coords: &[usize]) -> usize {
        coords
            .iter()
            .zip(&self.counts)
            .fold(0, |acc, (&c, &n)| acc * n + c)
    }

    pub fn point(&self, index: usize) -> Vec<f64> {
        self.coords(index)
            .iter()
            .enumerate()
            .map(|(k, &c)| self.origin[k] + c as f64 * self.spacing[k])
            .collect()
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    pub fn center(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|k| self.origin[k] + 0.5 * (self.counts[k] - 1) as f64 * self.spacing[k])
            .collect()
    }

    /// Index of the grid point closest to the centre.
    pub fn center_index(&self) -> usize {
        let c: Vec<usize> = self.counts.iter().map(|&n| (n - 1) / 2).collect();
        self.index(&c)
    }

    /// At least `margin` points away from every face.
    pub fn is_interior(&self, index: usize, margin: usize) -> bool {
        self.coords(index)
            .iter()
            .zip(&self.counts)
            .all(|(&c, &n)| c >= margin && c + margin < n)
    }

    pub fn interior_indices(&self, margin: usize) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.is_interior(i, margin))
            .collect()
    }

    /// Same extent, half the spacing.
    pub fn refined(&self) -> GridPatch {
        GridPatch {
            origin: self.origin.clone(),
            spacing: self.spacing.iter().map(|h| h / 2.0).collect(),
            counts: self.counts.iter().map(|c| 2 * c - 1).collect(),
        }
    }

    /// Index in `self.refined()` of point `index` of `self`.
    pub fn refined_index(&self, index: usize) -> usize {
        let fine = self.refined();
        let c: Vec<usize> = self.coords(index).iter().map(|c| 2 * c).collect();
        fine.index(&c)
    }

    fn neighbor(&self, index: usize, axis: usize, offset: isize) -> Option<usize> {
        let mut c = self.coords(index);
        let v = c[axis] as isize + offset;
        if v < 0 || v as usize >= self.counts[axis] {
            return None;
        }
        c[axis] = v as usize;
        Some(self.index(&c))
    }
}

/// Accuracy of finite-difference stencils.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FdOrder {
    Second,
    Fourth,
}

/// `dim`-vector per grid point, stored point-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    pub grid: GridPatch,
    pub dim: usize,
    pub values: Vec<Vec<f64>>,
}

impl GridField {
    pub fn zeros(grid: GridPatch, dim: usize) -> Self {
        let len = grid.len();
        GridField {
            grid,
            dim,
            values: vec![vec![0.0; dim]; len],
        }
    }

    pub fn from_fn(grid: GridPatch, dim: usize, f: impl Fn(&[f64]) -> Vec<f64>) -> Self {
        let values = (0..grid.len()).map(|i| f(&grid.point(i))).collect();
        GridField { grid, dim, values }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.values.len() != self.grid.len() {
            return Err(Error::InvalidInput(format!(
                "field has {} samples for {} grid points",
                self.values.len(),
                self.grid.len()
            )));
        }
        if self.values.iter().any(|v| v.len() != self.dim) {
            return Err(Error::InvalidInput("field sample has wrong dimension".into()));
        }
        Ok(())
    }

    pub fn at(&self, index: usize) -> &[f64] {
        &self.values[index]
    }

    pub fn add(&self, other: &GridField) -> GridField {
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
            .collect();
        GridField {
            grid: self.grid.clone(),
            dim: self.dim,
            values,
        }
    }

    /// Second-order central difference at an interior point.
    pub fn central_derivative_at(&self, index: usize, axis: usize) -> Result<Vec<f64>> {
        let h = self.grid.spacing[axis];
        match (
            self.grid.neighbor(index, axis, 1),
            self.grid.neighbor(index, axis, -1),
        ) {
            (Some(p), Some(m)) => Ok(self.values[p]
                .iter()
                .zip(&self.values[m])
                .map(|(a, b)| (a - b) / (2.0 * h))
                .collect()),
            _ => Err(Error::BoundaryPoint { index }),
        }
    }

    /// Second-order derivative along `axis` on the whole grid: central in
    /// the interior, one-sided three-point stencils on the faces.
    pub fn derivative(&self, axis: usize) -> GridField {
        let h = self.grid.spacing[axis];
        let n = self.grid.counts[axis];
        let mut out = GridField::zeros(self.grid.clone(), self.dim);
        for i in 0..self.grid.len() {
            let c = self.grid.coords(i)[axis];
            let at = |off: isize| &self.values[self.grid.neighbor(i, axis, off).unwrap()];
            let v: Vec<f64> = if n == 2 {
                let (a, b) = if c == 0 { (at(1), &self.values[i]) } else { (&self.values[i], at(-1)) };
                a.iter().zip(b).map(|(x, y)| (x - y) / h).collect()
            } else if c == 0 {
                let (f0, f1, f2) = (&self.values[i], at(1), at(2));
                (0..self.dim)
                    .map(|k| (-3.0 * f0[k] + 4.0 * f1[k] - f2[k]) / (2.0 * h))
                    .collect()
            } else if c + 1 == n {
                let (f0, f1, f2) = (&self.values[i], at(-1), at(-2));
                (0..self.dim)
                    .map(|k| (3.0 * f0[k] - 4.0 * f1[k] + f2[k]) / (2.0 * h))
                    .collect()
            } else {
                let (p, m) = (at(1), at(-1));
                (0..self.dim).map(|k| (p[k] - m[k]) / (2.0 * h)).collect()
            };
            out.values[i] = v;
        }
        out
    }

    /// Fourth-order derivative along `axis`: five-point central stencil
    /// in the interior and five-point one-sided stencils within two
    /// points of a face. Falls back to second order on short axes.
    pub fn derivative4(&self, axis: usize) -> GridField {
        const W: [[f64; 5]; 3] = [
            [-25.0, 48.0, -36.0, 16.0, -3.0],
            [-3.0, -10.0, 18.0, -6.0, 1.0],
            [1.0, -8.0, 0.0, 8.0, -1.0],
        ];
        let n = self.grid.counts[axis];
        if n < 5 {
            return self.derivative(axis);
        }
        let h = self.grid.spacing[axis];
        let mut out = GridField::zeros(self.grid.clone(), self.dim);
        for i in 0..self.grid.len() {
            let c = self.grid.coords(i)[axis];
            // Stencil start (relative offset) and weights, mirrored at the upper face.
            let (start, w, sign): (isize, &[f64; 5], f64) = if c == 0 {
                (0, &W[0], 1.0)
            } else if c == 1 {
                (-1, &W[1], 1.0)
            } else if c + 2 < n {
                (-2, &W[2], 1.0)
            } else if c + 2 == n {
                (1, &W[1], -1.0)
            } else {
                (0, &W[0], -1.0)
            };
            let mut v = vec![0.0; self.dim];
            for (k, wk) in w.iter().enumerate() {
                let off = if sign > 0.0 { start + k as isize } else { start - k as isize };
                let src = &self.values[self.grid.neighbor(i, axis, off).expect("stencil inside grid")];
                for (vd, sd) in v.iter_mut().zip(src) {
                    *vd += sign * wk * sd;
                }
            }
            for vd in v.iter_mut() {
                *vd /= 12.0 * h;
            }
            out.values[i] = v;
        }
        out
    }

    pub fn derivative_with(&self, axis: usize, order: FdOrder) -> GridField {
        match order {
            FdOrder::Second => self.derivative(axis),
            FdOrder::Fourth => self.derivative4(axis),
        }
    }

    pub fn derivative_multi(&self, index: &MultiIndex) -> GridField {
        let mut f = self.clone();
        for &a in index.entries() {
            f = f.derivative(a);
        }
        f
    }

    pub fn sup_norm(&self, indices: &[usize]) -> f64 {
        indices
            .iter()
            .flat_map(|&i| self.values[i].iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}
