//! Critical points of the energy: residual, energy, semi-implicit gradient
//! flow and Newton refinement.
//!
//! The discrete energy is edge based: along each axis the squared forward
//! differences are averaged onto the adjacent nodes, so its gradient in the
//! quadrature inner product is exactly the nodal residual
//! `-eps Δ_h u + W'(u)/eps` with mirror-ghost (Neumann) or wrap-around
//! (periodic) closure.
//!
//! Periodic grids keep the last node of every axis as a copy of the first;
//! it carries zero quadrature weight and is overwritten after every update.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Grid, Region, ScalarField};
use crate::krylov;
use crate::potential::DoubleWell;

/// Bound `c2` on `sup |u|` kept by every state.
pub const SUP_BOUND: f64 = 2.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    #[default]
    Neumann,
    Periodic,
}

/// One candidate critical point.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseState {
    u: ScalarField,
    eps: f64,
    well: DoubleWell,
    boundary: Boundary,
    residual_norm: f64,
    certified_stable: Option<bool>,
}

impl PhaseState {
    /// A Neumann state. Fails if `eps <= 0` or `sup |u| > SUP_BOUND`.
    pub fn new(u: ScalarField, eps: f64, well: DoubleWell) -> Result<Self> {
        Self::with_boundary(u, eps, well, Boundary::Neumann)
    }

    /// For periodic closure the trailing copy nodes are overwritten from the
    /// leading ones.
    pub fn with_boundary(
        mut u: ScalarField,
        eps: f64,
        well: DoubleWell,
        boundary: Boundary,
    ) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
        }
        if u.sup_norm() > SUP_BOUND {
            return Err(Error::Precondition(format!(
                "sup |u| = {} exceeds {SUP_BOUND}",
                u.sup_norm()
            )));
        }
        if boundary == Boundary::Periodic {
            let grid = u.grid().clone();
            sync_periodic(&grid, u.values_mut());
        }
        let mut state = PhaseState {
            u,
            eps,
            well,
            boundary,
            residual_norm: 0.0,
            certified_stable: None,
        };
        state.residual_norm = residual(&state).sup_norm();
        Ok(state)
    }

    pub fn u(&self) -> &ScalarField {
        &self.u
    }

    pub fn grid(&self) -> &Grid {
        self.u.grid()
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn well(&self) -> &DoubleWell {
        &self.well
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    /// Sup norm of the residual of the current field.
    pub fn residual_norm(&self) -> f64 {
        self.residual_norm
    }

    pub fn certified_stable(&self) -> Option<bool> {
        self.certified_stable
    }

    pub(crate) fn set_certified(&mut self, stable: bool) {
        self.certified_stable = Some(stable);
    }

    /// Replaces the field; the residual is recomputed and any certificate
    /// dropped.
    pub fn set_field(&mut self, u: ScalarField) -> Result<()> {
        if u.grid() != self.u.grid() {
            return Err(Error::InvalidArgument("field lives on a different grid".into()));
        }
        *self = Self::with_boundary(u, self.eps, self.well.clone(), self.boundary)?;
        Ok(())
    }

    fn from_values(&self, values: Vec<f64>) -> PhaseState {
        let mut next = PhaseState {
            u: ScalarField::from_raw(self.grid().clone(), values),
            eps: self.eps,
            well: self.well.clone(),
            boundary: self.boundary,
            residual_norm: 0.0,
            certified_stable: None,
        };
        next.residual_norm = residual(&next).sup_norm();
        next
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveConfig {
    /// Flow step `tau`; `None` means `eps / 4`.
    pub flow_step: Option<f64>,
    pub max_flow_iters: usize,
    /// The flow hands over to Newton once the residual sup norm is below this.
    pub flow_tol: f64,
    pub newton_tol: f64,
    pub newton_max_iters: usize,
    /// Relative tolerance of every inner Krylov solve.
    pub linear_tol: f64,
    pub boundary: Boundary,
    /// Observer call interval in accepted flow steps; 0 disables it.
    pub checkpoint_every: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            flow_step: None,
            max_flow_iters: 20_000,
            flow_tol: 1e-3,
            newton_tol: 1e-9,
            newton_max_iters: 20,
            linear_tol: 1e-12,
            boundary: Boundary::Neumann,
            checkpoint_every: 0,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")))
            }
        };
        if let Some(tau) = self.flow_step {
            positive("flow_step", tau)?;
        }
        positive("flow_tol", self.flow_tol)?;
        positive("newton_tol", self.newton_tol)?;
        positive("linear_tol", self.linear_tol)
    }

    pub fn step_for(&self, eps: f64) -> f64 {
        self.flow_step.unwrap_or(0.25 * eps)
    }
}

/// Result of [`gradient_flow`].
#[derive(Clone, Debug)]
pub struct FlowOutcome {
    /// The last accepted state, which has the lowest energy seen.
    pub state: PhaseState,
    pub converged: bool,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    /// Energy before the first step and after every accepted one.
    pub energies: Vec<f64>,
    pub final_step: f64,
}

/// Result of [`newton_refine`].
#[derive(Clone, Debug)]
pub struct NewtonOutcome {
    /// The refined state, or the input state unchanged if Newton diverged.
    pub state: PhaseState,
    pub converged: bool,
    pub diverged: bool,
    pub iterations: usize,
    /// Residual sup norm before the first step and after every step.
    pub residuals: Vec<f64>,
    /// Steps whose linear solve fell back to MINRES.
    pub minres_steps: usize,
}

/// Applies `f(first, stride, count, h)` to every grid line along `axis`.
fn for_each_line(grid: &Grid, axis: usize, mut f: impl FnMut(usize, usize, usize, f64)) {
    let n = grid.dim();
    let shape = grid.shape();
    let stride = grid.stride(axis);
    let count = shape[axis];
    let h = grid.spacing(axis);
    let lines = grid.len() / count;
    for line in 0..lines {
        // Decompose `line` over the remaining axes, last axis fastest.
        let mut rest = line;
        let mut first = 0;
        for a in (0..n).rev() {
            if a == axis {
                continue;
            }
            let i = rest % shape[a];
            rest /= shape[a];
            first += i * grid.stride(a);
        }
        f(first, stride, count, h);
    }
}

fn sync_periodic(grid: &Grid, values: &mut [f64]) {
    for axis in 0..grid.dim() {
        for_each_line(grid, axis, |first, stride, count, _| {
            values[first + (count - 1) * stride] = values[first];
        });
    }
}

/// Quadrature weights in which the discrete Laplacian is self-adjoint.
pub(crate) fn inner_weights(grid: &Grid, boundary: Boundary) -> Vec<f64> {
    match boundary {
        Boundary::Neumann => grid.trapezoid_weights(),
        Boundary::Periodic => {
            let n = grid.dim();
            (0..grid.len())
                .map(|k| {
                    let idx = grid.unravel(k);
                    (0..n)
                        .map(|a| {
                            if idx[a] + 1 == grid.shape()[a] {
                                0.0
                            } else {
                                grid.spacing(a)
                            }
                        })
                        .product()
                })
                .collect()
        }
    }
}

/// `out = Δ_h u` with the given closure.
pub(crate) fn apply_laplacian(grid: &Grid, boundary: Boundary, u: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for axis in 0..grid.dim() {
        for_each_line(grid, axis, |first, s, count, h| {
            let inv = 1.0 / (h * h);
            let at = |i: usize| u[first + i * s];
            for i in 0..count {
                let (l, r) = match boundary {
                    Boundary::Neumann => {
                        let l = if i == 0 { at(1) } else { at(i - 1) };
                        let r = if i + 1 == count { at(count - 2) } else { at(i + 1) };
                        (l, r)
                    }
                    Boundary::Periodic => {
                        let l = if i == 0 { at(count - 2) } else { at(i - 1) };
                        let r = if i + 2 >= count { at(i + 2 - count) } else { at(i + 1) };
                        (l, r)
                    }
                };
                out[first + i * s] += (l - 2.0 * at(i) + r) * inv;
            }
        });
    }
}

/// Nodal `Σ_a (averaged squared difference along a) / h_a²`.
pub(crate) fn gradient_energy_density(grid: &Grid, boundary: Boundary, u: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; u.len()];
    for axis in 0..grid.dim() {
        for_each_line(grid, axis, |first, s, count, h| {
            let inv = 1.0 / (h * h);
            let d2 = |e: usize| {
                let d = u[first + (e + 1) * s] - u[first + e * s];
                d * d
            };
            for i in 0..count {
                let v = match (boundary, i) {
                    (Boundary::Neumann, 0) => d2(0),
                    (Boundary::Neumann, i) if i + 1 == count => d2(count - 2),
                    (Boundary::Periodic, 0) => 0.5 * (d2(count - 2) + d2(0)),
                    (Boundary::Periodic, i) if i + 1 == count => 0.5 * (d2(count - 2) + d2(0)),
                    (_, i) => 0.5 * (d2(i - 1) + d2(i)),
                };
                g[first + i * s] += v * inv;
            }
        });
    }
    g
}

/// `-eps Δ_h u + W'(u)/eps` at every node.
pub fn residual(s: &PhaseState) -> ScalarField {
    let grid = s.grid();
    let mut lap = vec![0.0; grid.len()];
    apply_laplacian(grid, s.boundary, s.u.values(), &mut lap);
    let eps = s.eps;
    let values = s
        .u
        .values()
        .iter()
        .zip(&lap)
        .map(|(&u, &l)| -eps * l + s.well.first(u) / eps)
        .collect();
    ScalarField::from_raw(grid.clone(), values)
}

/// Nodal energy density `eps |∇_h u|²/2 + W(u)/eps` of the edge-based energy.
pub fn energy_density(s: &PhaseState) -> ScalarField {
    let grid = s.grid();
    let g = gradient_energy_density(grid, s.boundary, s.u.values());
    let eps = s.eps;
    let values = s
        .u
        .values()
        .iter()
        .zip(&g)
        .map(|(&u, &g)| 0.5 * eps * g + s.well.value(u) / eps)
        .collect();
    ScalarField::from_raw(grid.clone(), values)
}

/// Trapezoidal integral of [`energy_density`] over `region`.
pub fn energy(s: &PhaseState, region: &Region) -> f64 {
    energy_density(s).integrate(region).value
}

fn clamp_sup(values: &mut [f64]) {
    for v in values {
        *v = v.clamp(-SUP_BOUND, SUP_BOUND);
    }
}

/// Semi-implicit flow `(I - tau eps Δ_h) u⁺ = u - tau W'(u)/eps` until the
/// residual sup norm drops below `cfg.flow_tol`.
pub fn gradient_flow(s: &PhaseState, cfg: &SolveConfig) -> Result<FlowOutcome> {
    gradient_flow_observed(s, cfg, &mut |_, _| Ok(()))
}

/// [`gradient_flow`] calling `observer(step, state)` every
/// `cfg.checkpoint_every` accepted steps.
pub fn gradient_flow_observed(
    s: &PhaseState,
    cfg: &SolveConfig,
    observer: &mut dyn FnMut(usize, &PhaseState) -> Result<()>,
) -> Result<FlowOutcome> {
    cfg.validate()?;
    let mut state = PhaseState::with_boundary(s.u.clone(), s.eps, s.well.clone(), cfg.boundary)?;
    let grid = state.grid().clone();
    let weights = inner_weights(&grid, cfg.boundary);
    let eps = state.eps;
    let tau0 = cfg.step_for(eps);
    let mut tau = tau0;
    let mut energies = vec![energy(&state, &Region::All)];
    let (mut accepted, mut rejected, mut streak) = (0usize, 0usize, 0usize);
    let max_linear = 10 * grid.len() + 100;

    while state.residual_norm > cfg.flow_tol && accepted + rejected < cfg.max_flow_iters {
        let u = state.u.values();
        let rhs: Vec<f64> = u.iter().map(|&v| v - tau * state.well.first(v) / eps).collect();
        let op = |x: &[f64], y: &mut [f64]| {
            apply_laplacian(&grid, cfg.boundary, x, y);
            for (yi, xi) in y.iter_mut().zip(x) {
                *yi = xi - tau * eps * *yi;
            }
        };
        let mut next = u.to_vec();
        krylov::cg(&op, &weights, &rhs, &mut next, cfg.linear_tol, max_linear);
        clamp_sup(&mut next);
        if cfg.boundary == Boundary::Periodic {
            sync_periodic(&grid, &mut next);
        }
        let candidate = state.from_values(next);
        let e = energy(&candidate, &Region::All);
        if e <= energies[energies.len() - 1] {
            state = candidate;
            energies.push(e);
            accepted += 1;
            streak += 1;
            if streak == 4 && tau < tau0 {
                tau = (2.0 * tau).min(tau0);
                streak = 0;
            }
            if cfg.checkpoint_every > 0 && accepted % cfg.checkpoint_every == 0 {
                observer(accepted, &state)?;
            }
        } else {
            rejected += 1;
            streak = 0;
            tau *= 0.5;
            if tau < 1e-12 * tau0 {
                break;
            }
        }
    }
    Ok(FlowOutcome {
        converged: state.residual_norm <= cfg.flow_tol,
        state,
        accepted_steps: accepted,
        rejected_steps: rejected,
        energies,
        final_step: tau,
    })
}

/// Newton iteration on the residual with the linearized operator
/// `-eps Δ_h + W''(u)/eps`, solved by CG with a MINRES fallback.
pub fn newton_refine(s: &PhaseState, cfg: &SolveConfig) -> Result<NewtonOutcome> {
    cfg.validate()?;
    let start = PhaseState::with_boundary(s.u.clone(), s.eps, s.well.clone(), cfg.boundary)?;
    let grid = start.grid().clone();
    let weights = inner_weights(&grid, cfg.boundary);
    let eps = start.eps;
    let max_linear = 10 * grid.len() + 100;

    let mut state = start.clone();
    let mut residuals = vec![state.residual_norm];
    let mut growth = 0;
    let mut minres_steps = 0;
    let mut iterations = 0;
    let mut diverged = false;

    while state.residual_norm > cfg.newton_tol && iterations < cfg.newton_max_iters {
        let r = residual(&state);
        let rhs: Vec<f64> = r.values().iter().map(|v| -v).collect();
        let curvature: Vec<f64> = state.u.values().iter().map(|&v| state.well.second(v) / eps).collect();
        let op = |x: &[f64], y: &mut [f64]| {
            apply_laplacian(&grid, cfg.boundary, x, y);
            for k in 0..x.len() {
                y[k] = -eps * y[k] + curvature[k] * x[k];
            }
        };
        let mut delta = vec![0.0; grid.len()];
        let out = krylov::cg(&op, &weights, &rhs, &mut delta, cfg.linear_tol, max_linear);
        if out.negative_curvature || !out.converged {
            minres_steps += 1;
            delta.iter_mut().for_each(|v| *v = 0.0);
            krylov::minres(&op, &weights, &rhs, &mut delta, cfg.linear_tol, max_linear);
        }
        let mut next: Vec<f64> = state.u.values().iter().zip(&delta).map(|(u, d)| u + d).collect();
        if cfg.boundary == Boundary::Periodic {
            sync_periodic(&grid, &mut next);
        }
        iterations += 1;
        if next.iter().any(|v| !(v.abs() <= SUP_BOUND)) {
            diverged = true;
            break;
        }
        let candidate = state.from_values(next);
        if candidate.residual_norm > state.residual_norm {
            growth += 1;
        } else {
            growth = 0;
        }
        residuals.push(candidate.residual_norm);
        state = candidate;
        if growth >= 2 {
            diverged = true;
            break;
        }
    }
    if diverged {
        return Ok(NewtonOutcome {
            state: start,
            converged: false,
            diverged: true,
            iterations,
            residuals,
            minres_steps,
        });
    }
    Ok(NewtonOutcome {
        converged: state.residual_norm <= cfg.newton_tol,
        state,
        diverged: false,
        iterations,
        residuals,
        minres_steps,
    })
}

/// Flow followed by Newton refinement.
pub fn solve(s: &PhaseState, cfg: &SolveConfig) -> Result<NewtonOutcome> {
    let flow = gradient_flow(s, cfg)?;
    newton_refine(&flow.state, cfg)
}
