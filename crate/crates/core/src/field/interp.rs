//! Tensor-product cubic (four-point Lagrange) resampling and the blow-up
//! rescaling `x ↦ (x - y) / ρ`.

use super::{Grid, ScalarField};
use crate::error::{Error, Result};

/// Stencil start and Lagrange weights for coordinate `x` on one axis.
fn axis_stencil(grid: &Grid, axis: usize, x: f64) -> (usize, [f64; 4]) {
    let h = grid.spacing(axis);
    let count = grid.shape()[axis];
    let s = (x - grid.low()[axis]) / h;
    let cell = (s.floor() as isize).clamp(0, count as isize - 2) as usize;
    let start = cell.saturating_sub(1).min(count - 4);
    let t = s - start as f64;
    // Nodes of the stencil sit at t = 0, 1, 2, 3.
    let w = [
        -(t - 1.0) * (t - 2.0) * (t - 3.0) / 6.0,
        t * (t - 2.0) * (t - 3.0) / 2.0,
        -t * (t - 1.0) * (t - 3.0) / 2.0,
        t * (t - 1.0) * (t - 2.0) / 6.0,
    ];
    (start, w)
}

/// Cubic interpolant of `f` at `point`, or `None` outside the box.
pub fn sample_cubic(f: &ScalarField, point: &[f64]) -> Option<f64> {
    let grid = f.grid();
    if !grid.contains(point) {
        return None;
    }
    let n = grid.dim();
    let mut starts = [0usize; 3];
    let mut weights = [[1.0, 0.0, 0.0, 0.0]; 3];
    for a in 0..n {
        let (s, w) = axis_stencil(grid, a, point[a]);
        starts[a] = s;
        weights[a] = w;
    }
    let span = |a: usize| if a < n { 4 } else { 1 };
    let v = f.values();
    let mut acc = 0.0;
    for i in 0..span(0) {
        for j in 0..span(1) {
            for k in 0..span(2) {
                let w = weights[0][i] * weights[1][j] * weights[2][k];
                if w == 0.0 {
                    continue;
                }
                let idx = [starts[0] + i, starts[1] + j, starts[2] + k];
                acc += w * v[grid.index(&idx[..n])];
            }
        }
    }
    Some(acc)
}

/// Resamples `u` under the blow-up map: returns `ũ(x̃) = u(ρ x̃ + y)` on
/// `target`, paired with the rescaled interface width `eps / ρ`.
pub fn blowup(
    u: &ScalarField,
    eps: f64,
    y: &[f64],
    rho: f64,
    target: &Grid,
) -> Result<(ScalarField, f64)> {
    let n = u.grid().dim();
    if target.dim() != n || y.len() != n {
        return Err(Error::InvalidArgument("dimension mismatch in blow-up".into()));
    }
    if !(rho > 0.0) || !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "blow-up needs rho > 0 and eps > 0, got {rho}, {eps}"
        )));
    }
    // The preimage of the target box is a box; checking its corners suffices.
    let pre_low: Vec<f64> = (0..n).map(|a| rho * target.low()[a] + y[a]).collect();
    let pre_high: Vec<f64> = (0..n).map(|a| rho * target.high()[a] + y[a]).collect();
    if !u.grid().contains(&pre_low) || !u.grid().contains(&pre_high) {
        return Err(Error::Domain(format!(
            "preimage [{pre_low:?}, {pre_high:?}] escapes the source box"
        )));
    }
    let values = (0..target.len())
        .map(|k| {
            let x = target.position(k);
            let mut p = [0.0; 3];
            for a in 0..n {
                p[a] = (rho * x[a] + y[a]).clamp(u.grid().low()[a], u.grid().high()[a]);
            }
            sample_cubic(u, &p[..n]).expect("preimage checked")
        })
        .collect();
    Ok((ScalarField::from_raw(target.clone(), values), eps / rho))
}
