//! Second-order finite differences on uniform grids. Interior nodes use
//! centered stencils; nodes on a box face use one-sided second-order
//! stencils along the normal axis.

use super::{Grid, ScalarField, SymmetricField, VectorField};

/// Calls `f(first, stride)` once for every grid line parallel to `axis`.
pub(crate) fn for_each_line(grid: &Grid, axis: usize, mut f: impl FnMut(usize, usize)) {
    let stride = grid.stride(axis);
    let count = grid.shape()[axis];
    let outer: usize = grid.shape()[..axis].iter().product();
    for o in 0..outer {
        let base = o * count * stride;
        for inner in 0..stride {
            f(base + inner, stride);
        }
    }
}

fn first_derivative(grid: &Grid, values: &[f64], axis: usize) -> Vec<f64> {
    let count = grid.shape()[axis];
    let inv = 1.0 / grid.spacing(axis);
    let mut out = vec![0.0; values.len()];
    for_each_line(grid, axis, |first, stride| {
        let at = |i: usize| values[first + i * stride];
        // Differences from the end node keep constants exact.
        let d = |o: usize, i: usize| at(i) - at(o);
        out[first] = 0.5 * inv * (4.0 * d(0, 1) - d(0, 2));
        for i in 1..count - 1 {
            out[first + i * stride] = 0.5 * inv * (at(i + 1) - at(i - 1));
        }
        let m = count - 1;
        out[first + m * stride] = -0.5 * inv * (4.0 * d(m, m - 1) - d(m, m - 2));
    });
    out
}

fn second_derivative(grid: &Grid, values: &[f64], axis: usize) -> Vec<f64> {
    let count = grid.shape()[axis];
    let h = grid.spacing(axis);
    let inv = 1.0 / (h * h);
    let mut out = vec![0.0; values.len()];
    for_each_line(grid, axis, |first, stride| {
        let at = |i: usize| values[first + i * stride];
        let d = |o: usize, i: usize| at(i) - at(o);
        out[first] = inv * (-5.0 * d(0, 1) + 4.0 * d(0, 2) - d(0, 3));
        for i in 1..count - 1 {
            out[first + i * stride] = inv * (at(i + 1) - 2.0 * at(i) + at(i - 1));
        }
        let m = count - 1;
        out[first + m * stride] = inv * (-5.0 * d(m, m - 1) + 4.0 * d(m, m - 2) - d(m, m - 3));
    });
    out
}

/// `∂f/∂x_axis`.
pub fn partial(f: &ScalarField, axis: usize) -> ScalarField {
    ScalarField::from_raw(f.grid().clone(), first_derivative(f.grid(), f.values(), axis))
}

/// `∂²f/∂x_axis²` with the three-point stencil in the interior.
pub fn second_partial(f: &ScalarField, axis: usize) -> ScalarField {
    ScalarField::from_raw(f.grid().clone(), second_derivative(f.grid(), f.values(), axis))
}

pub fn gradient(f: &ScalarField) -> VectorField {
    VectorField::new((0..f.grid().dim()).map(|a| partial(f, a)).collect())
        .expect("one component per axis")
}

pub fn laplacian(f: &ScalarField) -> ScalarField {
    let grid = f.grid();
    let mut out = vec![0.0; grid.len()];
    for a in 0..grid.dim() {
        for (o, d) in out.iter_mut().zip(second_derivative(grid, f.values(), a)) {
            *o += d;
        }
    }
    ScalarField::from_raw(grid.clone(), out)
}

/// Hessian: three-point second differences on the diagonal, products of
/// centered first differences off the diagonal.
pub fn hessian(f: &ScalarField) -> SymmetricField {
    let grid = f.grid();
    let n = grid.dim();
    let firsts: Vec<Vec<f64>> = (0..n).map(|a| first_derivative(grid, f.values(), a)).collect();
    let mut entries = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in i..n {
            if i == j {
                entries.push(second_derivative(grid, f.values(), i));
            } else {
                entries.push(first_derivative(grid, &firsts[i], j));
            }
        }
    }
    SymmetricField::from_entries(grid.clone(), entries)
}
