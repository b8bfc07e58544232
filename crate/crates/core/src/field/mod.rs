//! Uniform rectangular grids in one to three dimensions, sampled fields on
//! them, and deterministic quadrature.
//!
//! Values are stored row-major: the last axis varies fastest.

mod calculus;
mod interp;
mod io;

pub use calculus::{gradient, hessian, laplacian, partial, second_partial};
pub use interp::{blowup, sample_cubic};
pub use io::{read_acvf, read_acvf_file, write_acvf, write_acvf_file};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest number of samples allowed along any axis.
pub const MIN_AXIS_SAMPLES: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    low: Vec<f64>,
    high: Vec<f64>,
    shape: Vec<usize>,
}

impl Grid {
    pub fn new(low: Vec<f64>, high: Vec<f64>, shape: Vec<usize>) -> Result<Self> {
        let n = shape.len();
        if !(1..=3).contains(&n) {
            return Err(Error::InvalidGrid(format!("dimension {n} not in 1..=3")));
        }
        if low.len() != n || high.len() != n {
            return Err(Error::InvalidGrid("box and shape dimensions differ".into()));
        }
        for a in 0..n {
            if !low[a].is_finite() || !high[a].is_finite() || !(high[a] > low[a]) {
                return Err(Error::InvalidGrid(format!(
                    "axis {a}: [{}, {}] is not a finite positive extent",
                    low[a], high[a]
                )));
            }
            if shape[a] < MIN_AXIS_SAMPLES {
                return Err(Error::InvalidGrid(format!(
                    "axis {a}: {} samples, need at least {MIN_AXIS_SAMPLES}",
                    shape[a]
                )));
            }
        }
        Ok(Grid { low, high, shape })
    }

    /// Cube `[low, high]^n` with `count` samples per axis.
    pub fn cube(n: usize, low: f64, high: f64, count: usize) -> Result<Self> {
        Self::new(vec![low; n], vec![high; n], vec![count; n])
    }

    /// Grid on the box `[low, high]` whose spacing is at most `h` on every
    /// axis.
    pub fn with_spacing(low: Vec<f64>, high: Vec<f64>, h: f64) -> Result<Self> {
        if !(h > 0.0) {
            return Err(Error::InvalidGrid(format!("spacing {h} must be positive")));
        }
        let shape = low
            .iter()
            .zip(&high)
            .map(|(l, u)| ((u - l) / h - 1e-9).ceil().max(1.0) as usize + 1)
            .collect();
        Self::new(low, high, shape)
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn low(&self) -> &[f64] {
        &self.low
    }

    pub fn high(&self) -> &[f64] {
        &self.high
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.high[axis] - self.low[axis]) / (self.shape[axis] - 1) as f64
    }

    pub fn spacings(&self) -> Vec<f64> {
        (0..self.dim()).map(|a| self.spacing(a)).collect()
    }

    /// Largest spacing over all axes.
    pub fn max_spacing(&self) -> f64 {
        (0..self.dim()).map(|a| self.spacing(a)).fold(0.0, f64::max)
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.shape[axis + 1..].iter().product()
    }

    pub fn index(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &count)| acc * count + i)
    }

    /// Multi-index of a flat index; unused trailing entries are zero.
    pub fn unravel(&self, mut flat: usize) -> [usize; 3] {
        let mut idx = [0; 3];
        for a in (0..self.dim()).rev() {
            idx[a] = flat % self.shape[a];
            flat /= self.shape[a];
        }
        idx
    }

    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        if i + 1 == self.shape[axis] {
            self.high[axis]
        } else {
            self.low[axis] + self.spacing(axis) * i as f64
        }
    }

    /// Position of a node; unused trailing entries are zero.
    pub fn position(&self, flat: usize) -> [f64; 3] {
        let idx = self.unravel(flat);
        let mut x = [0.0; 3];
        for a in 0..self.dim() {
            x[a] = self.coord(a, idx[a]);
        }
        x
    }

    /// Whether the node lies on the outermost ring of the box.
    pub fn on_boundary(&self, flat: usize) -> bool {
        let idx = self.unravel(flat);
        (0..self.dim()).any(|a| idx[a] == 0 || idx[a] + 1 == self.shape[a])
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        (0..self.dim()).all(|a| {
            let tol = 1e-12 * (self.high[a] - self.low[a]);
            point[a] >= self.low[a] - tol && point[a] <= self.high[a] + tol
        })
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|a| self.high[a] - self.low[a]).product()
    }

    /// One-dimensional trapezoidal weights along an axis.
    pub fn axis_weights(&self, axis: usize) -> Vec<f64> {
        let h = self.spacing(axis);
        let count = self.shape[axis];
        (0..count)
            .map(|i| if i == 0 || i + 1 == count { 0.5 * h } else { h })
            .collect()
    }

    /// Tensor-product trapezoidal weights for every node.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let per_axis: Vec<Vec<f64>> = (0..self.dim()).map(|a| self.axis_weights(a)).collect();
        (0..self.len())
            .map(|k| {
                let idx = self.unravel(k);
                (0..self.dim()).map(|a| per_axis[a][idx[a]]).product()
            })
            .collect()
    }

    /// Box shrunk toward its center by `fraction` of each half-extent.
    pub fn interior_box(&self, fraction: f64) -> Region {
        let (low, high) = (0..self.dim())
            .map(|a| {
                let c = 0.5 * (self.low[a] + self.high[a]);
                let r = 0.5 * (self.high[a] - self.low[a]) * (1.0 - fraction);
                (c - r, c + r)
            })
            .unzip();
        Region::Box { low, high }
    }
}

/// Sets of nodes used to restrict integrals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    All,
    Ball { center: Vec<f64>, radius: f64 },
    Box { low: Vec<f64>, high: Vec<f64> },
}

impl Region {
    pub fn ball(center: &[f64], radius: f64) -> Self {
        Region::Ball {
            center: center.to_vec(),
            radius,
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Region::All => true,
            Region::Ball { center, radius } => {
                let d2: f64 = center.iter().zip(x).map(|(c, p)| (p - c) * (p - c)).sum();
                d2 <= radius * radius
            }
            Region::Box { low, high } => low
                .iter()
                .zip(high)
                .zip(x)
                .all(|((l, u), p)| *p >= *l && *p <= *u),
        }
    }

    /// Whether the region lies inside the grid's box.
    pub fn inside(&self, grid: &Grid) -> bool {
        match self {
            Region::All => true,
            Region::Ball { center, radius } => (0..grid.dim()).all(|a| {
                let tol = 1e-12 * (grid.high()[a] - grid.low()[a]);
                center[a] - radius >= grid.low()[a] - tol && center[a] + radius <= grid.high()[a] + tol
            }),
            Region::Box { low, high } => {
                (0..grid.dim()).all(|a| low[a] >= grid.low()[a] && high[a] <= grid.high()[a])
            }
        }
    }
}

/// Result of a masked quadrature. `empty` flags a mask that selected no
/// node, in which case `value` is zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub empty: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidArgument(format!(
                "{} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("value {k} is not finite")));
        }
        Ok(ScalarField { grid, values })
    }

    pub(crate) fn from_raw(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        ScalarField { grid, values }
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(&[f64]) -> f64) -> Self {
        let n = grid.dim();
        let values = (0..grid.len())
            .map(|k| f(&grid.position(k)[..n]))
            .collect();
        ScalarField {
            grid: grid.clone(),
            values,
        }
    }

    pub fn constant(grid: &Grid, value: f64) -> Self {
        ScalarField {
            grid: grid.clone(),
            values: vec![value; grid.len()],
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        ScalarField::from_raw(self.grid.clone(), self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Trapezoidal integral over the nodes selected by `region`.
    pub fn integrate(&self, region: &Region) -> Integral {
        integrate_values(&self.grid, &self.values, region)
    }

    /// Trapezoidal integral over the whole box.
    pub fn total(&self) -> f64 {
        self.integrate(&Region::All).value
    }

    /// Whether the field vanishes on the outermost ring of nodes.
    pub fn vanishes_on_boundary(&self) -> bool {
        (0..self.grid.len()).all(|k| !self.grid.on_boundary(k) || self.values[k] == 0.0)
    }
}

pub(crate) fn integrate_values(grid: &Grid, values: &[f64], region: &Region) -> Integral {
    let n = grid.dim();
    let per_axis: Vec<Vec<f64>> = (0..n).map(|a| grid.axis_weights(a)).collect();
    let mut hits = 0usize;
    let mut terms = Vec::with_capacity(values.len());
    for (k, &v) in values.iter().enumerate() {
        let x = grid.position(k);
        if !region.contains(&x[..n]) {
            continue;
        }
        hits += 1;
        let idx = grid.unravel(k);
        let w: f64 = (0..n).map(|a| per_axis[a][idx[a]]).product();
        terms.push(w * v);
    }
    Integral {
        value: pairwise_sum(&terms),
        empty: hits == 0,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    components: Vec<ScalarField>,
}

impl VectorField {
    pub fn new(components: Vec<ScalarField>) -> Result<Self> {
        let Some(first) = components.first() else {
            return Err(Error::InvalidArgument("vector field needs components".into()));
        };
        if components.len() != first.grid().dim() {
            return Err(Error::InvalidArgument(format!(
                "{} components on a {}-dimensional grid",
                components.len(),
                first.grid().dim()
            )));
        }
        if components.iter().any(|c| c.grid() != first.grid()) {
            return Err(Error::InvalidArgument("components on different grids".into()));
        }
        Ok(VectorField { components })
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(&[f64]) -> Vec<f64>) -> Self {
        let n = grid.dim();
        let mut comps = vec![Vec::with_capacity(grid.len()); n];
        for k in 0..grid.len() {
            let v = f(&grid.position(k)[..n]);
            for a in 0..n {
                comps[a].push(v[a]);
            }
        }
        VectorField {
            components: comps
                .into_iter()
                .map(|c| ScalarField::from_raw(grid.clone(), c))
                .collect(),
        }
    }

    pub fn zeros(grid: &Grid) -> Self {
        VectorField {
            components: (0..grid.dim()).map(|_| ScalarField::constant(grid, 0.0)).collect(),
        }
    }

    pub fn grid(&self) -> &Grid {
        self.components[0].grid()
    }

    pub fn component(&self, axis: usize) -> &ScalarField {
        &self.components[axis]
    }

    pub fn components(&self) -> &[ScalarField] {
        &self.components
    }

    /// Euclidean length at every node.
    pub fn norm(&self) -> ScalarField {
        let len = self.grid().len();
        let values = (0..len)
            .map(|k| {
                self.components
                    .iter()
                    .map(|c| c.values()[k] * c.values()[k])
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        ScalarField::from_raw(self.grid().clone(), values)
    }

    pub fn at(&self, k: usize) -> [f64; 3] {
        let mut v = [0.0; 3];
        for (a, c) in self.components.iter().enumerate() {
            v[a] = c.values()[k];
        }
        v
    }

    /// Linear combination `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &VectorField, b: f64) -> VectorField {
        VectorField {
            components: self
                .components
                .iter()
                .zip(&other.components)
                .map(|(x, y)| {
                    ScalarField::from_raw(
                        x.grid().clone(),
                        x.values().iter().zip(y.values()).map(|(p, q)| a * p + b * q).collect(),
                    )
                })
                .collect(),
        }
    }
}

/// Symmetric `n × n` matrix per node, such as a Hessian. Only the upper
/// triangle is stored.
#[derive(Clone, Debug, PartialEq)]
pub struct SymmetricField {
    grid: Grid,
    entries: Vec<Vec<f64>>,
}

impl SymmetricField {
    pub(crate) fn from_entries(grid: Grid, entries: Vec<Vec<f64>>) -> Self {
        let n = grid.dim();
        debug_assert_eq!(entries.len(), n * (n + 1) / 2);
        SymmetricField { grid, entries }
    }

    fn slot(n: usize, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        i * n - i * (i + 1) / 2 + j
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn entry(&self, i: usize, j: usize) -> ScalarField {
        let n = self.grid.dim();
        ScalarField::from_raw(self.grid.clone(), self.entries[Self::slot(n, i, j)].clone())
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.entries[Self::slot(self.grid.dim(), i, j)][k]
    }

    /// The matrix at node `k`, padded with zeros to 3 × 3.
    pub fn at(&self, k: usize) -> [[f64; 3]; 3] {
        let n = self.grid.dim();
        let mut m = [[0.0; 3]; 3];
        for i in 0..n {
            for j in 0..n {
                m[i][j] = self.get(i, j, k);
            }
        }
        m
    }
}

/// Pairwise (tree) summation; the order of operations depends only on the
/// length, so results are reproducible.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    pairwise_sum_by(values.len(), |k| values[k])
}

/// Pairwise summation of `term(0) + ... + term(len - 1)`.
pub fn pairwise_sum_by(len: usize, term: impl Fn(usize) -> f64 + Copy) -> f64 {
    fn rec(lo: usize, hi: usize, term: impl Fn(usize) -> f64 + Copy) -> f64 {
        if hi - lo <= 64 {
            let mut s = 0.0;
            for k in lo..hi {
                s += term(k);
            }
            return s;
        }
        let mid = lo + (hi - lo) / 2;
        rec(lo, mid, term) + rec(mid, hi, term)
    }
    if len == 0 {
        return 0.0;
    }
    rec(0, len, term)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_validation() {
        assert!(Grid::cube(4, 0.0, 1.0, 9).is_err());
        assert!(Grid::cube(2, 0.0, 1.0, 7).is_err());
        assert!(Grid::new(vec![0.0], vec![0.0], vec![9]).is_err());
        assert!(Grid::new(vec![0.0], vec![f64::NAN], vec![9]).is_err());
        let g = Grid::cube(2, -1.0, 1.0, 11).unwrap();
        assert_eq!(g.len(), 121);
        assert!((g.spacing(1) - 0.2).abs() < 1e-15);
        assert_eq!(g.index(&[3, 4]), 37);
        assert_eq!(g.unravel(37), [3, 4, 0]);
        assert_eq!(g.coord(0, 10), 1.0);
    }

    #[test]
    fn with_spacing_resolves() {
        let g = Grid::with_spacing(vec![-0.5, -0.5], vec![0.5, 0.5], 0.01).unwrap();
        assert_eq!(g.shape(), &[101, 101]);
        assert!(g.max_spacing() <= 0.01 + 1e-15);
    }

    #[test]
    fn constant_integrates_to_volume() {
        let g = Grid::new(vec![0.0, 0.0, 0.0], vec![1.0, 1.0, 1.0], vec![9, 12, 10]).unwrap();
        let f = ScalarField::constant(&g, 1.0);
        assert!((f.total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn linear_field_integrates_to_midpoint_value() {
        let g = Grid::cube(2, -1.0, 1.0, 17).unwrap();
        let f = ScalarField::from_fn(&g, |x| 3.0 + x[0] - 2.0 * x[1]);
        assert!((f.total() - 3.0 * 4.0).abs() < 1e-12);
    }

    #[test]
    fn ball_mask_converges_to_ball_volume() {
        let err = |count: usize| {
            let g = Grid::cube(2, -1.0, 1.0, count).unwrap();
            let f = ScalarField::constant(&g, 1.0);
            let r = 0.6;
            (f.integrate(&Region::ball(&[0.013, -0.021], r)).value - std::f64::consts::PI * r * r).abs()
        };
        let (e1, e2, e3) = (err(101), err(201), err(401));
        assert!(e1 < 0.02 && e3 < e1, "{e1} {e2} {e3}");
    }

    #[test]
    fn empty_mask_is_flagged() {
        let g = Grid::cube(2, 0.0, 1.0, 9).unwrap();
        let f = ScalarField::constant(&g, 1.0);
        let i = f.integrate(&Region::ball(&[5.0, 5.0], 0.1));
        assert!(i.empty);
        assert_eq!(i.value, 0.0);
    }

    #[test]
    fn pairwise_sum_is_accurate() {
        let v: Vec<f64> = (0..100_000).map(|k| 0.1 + 1e-9 * k as f64).collect();
        let exact = 0.1 * 1e5 + 1e-9 * (99_999.0 * 100_000.0 / 2.0);
        assert!((pairwise_sum(&v) - exact).abs() < 1e-9);
    }

    #[test]
    fn non_finite_values_rejected() {
        let g = Grid::cube(1, 0.0, 1.0, 9).unwrap();
        assert!(ScalarField::new(g.clone(), vec![0.0; 8]).is_err());
        let mut v = vec![0.0; 9];
        v[3] = f64::INFINITY;
        assert!(ScalarField::new(g, v).is_err());
    }
}
