//! Second variation of the energy at a state: the quadratic form, its
//! smallest eigenvalue under Dirichlet closure, and the stability
//! certificate.
//!
//! The operator is `L = -eps Δ_h + W''(u)/eps` on interior nodes with zero
//! boundary values. The form is edge based, so `Q(φ) = <φ, L φ>` exactly
//! for admissible `φ`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{gradient, pairwise_sum_by, Grid, Region, ScalarField};
use crate::krylov;
use crate::solver::{gradient_energy_density, Boundary, PhaseState};
use crate::varifold::b_squared;

/// Residual sup norm above which a state is not treated as critical.
pub const CERTIFY_MAX_RESIDUAL: f64 = 1e-6;

const LANCZOS_STEPS: usize = 40;
const MAX_RESTARTS: usize = 60;
const INNER_TOL: f64 = 1e-13;

#[derive(Clone, Debug, Serialize)]
pub struct EigenReport {
    pub lambda_min: f64,
    /// Unit L² norm, zero on the boundary ring.
    #[serde(skip)]
    pub eigenfield: ScalarField,
    /// Inner linear solves performed.
    pub iterations: usize,
    /// `|L ψ - λ ψ|₂`.
    pub residual: f64,
    #[serde(skip)]
    pub converged: bool,
    #[serde(skip)]
    pub shift: f64,
}

impl EigenReport {
    /// Whether the eigen-equation residual meets `1e-6 |λ| + 1e-10`.
    pub fn meets_tolerance(&self) -> bool {
        self.residual <= 1e-6 * self.lambda_min.abs() + 1e-10
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn check_admissible(s: &PhaseState, phi: &ScalarField) -> Result<()> {
    if phi.grid() != s.grid() {
        return Err(Error::InvalidArgument("test function lives on a different grid".into()));
    }
    if !phi.vanishes_on_boundary() {
        return Err(Error::Precondition("test function must vanish on the boundary ring".into()));
    }
    Ok(())
}

/// `∫ eps |∇_h φ|² + W''(u)/eps φ²`.
pub fn quadratic_form(s: &PhaseState, phi: &ScalarField) -> Result<f64> {
    check_admissible(s, phi)?;
    let grid = s.grid();
    let g = gradient_energy_density(grid, Boundary::Neumann, phi.values());
    let eps = s.eps();
    let u = s.u().values();
    let p = phi.values();
    let w = grid.trapezoid_weights();
    Ok(pairwise_sum_by(grid.len(), |k| {
        w[k] * (eps * g[k] + s.well().second(u[k]) / eps * p[k] * p[k])
    }))
}

/// Interior indicator scaled by the cell volume.
fn interior_weights(grid: &Grid) -> Vec<f64> {
    let cell: f64 = grid.spacings().iter().product();
    (0..grid.len())
        .map(|k| if grid.on_boundary(k) { 0.0 } else { cell })
        .collect()
}

/// Dirichlet `L - shift` on full-size arrays. Inputs must vanish on the
/// boundary ring, which every Krylov vector built from such inputs does;
/// outputs are written as zero there.
struct DirichletOperator<'a> {
    grid: &'a Grid,
    potential: Vec<f64>,
    interior: Vec<bool>,
    /// `eps / h_a²` and the matching stride per axis.
    coupling: Vec<(f64, usize)>,
    diag: f64,
}

impl<'a> DirichletOperator<'a> {
    fn new(s: &'a PhaseState) -> Self {
        let grid = s.grid();
        let eps = s.eps();
        let coupling: Vec<(f64, usize)> = (0..grid.dim())
            .map(|a| (eps / (grid.spacing(a) * grid.spacing(a)), grid.stride(a)))
            .collect();
        DirichletOperator {
            grid,
            potential: s.u().values().iter().map(|&v| s.well().second(v) / eps).collect(),
            interior: (0..grid.len()).map(|k| !grid.on_boundary(k)).collect(),
            diag: 2.0 * coupling.iter().map(|c| c.0).sum::<f64>(),
            coupling,
        }
    }

    fn apply(&self, shift: f64, x: &[f64], y: &mut [f64]) {
        debug_assert!((0..x.len()).all(|k| self.interior[k] || x[k] == 0.0));
        for k in 0..x.len() {
            if !self.interior[k] {
                y[k] = 0.0;
                continue;
            }
            let mut acc = (self.diag + self.potential[k] - shift) * x[k];
            for &(c, s) in &self.coupling {
                acc -= c * (x[k - s] + x[k + s]);
            }
            y[k] = acc;
        }
    }
}

/// Largest eigenpair of a symmetric tridiagonal matrix.
fn top_ritz(alpha: &[f64], beta: &[f64]) -> (f64, Vec<f64>) {
    let m = alpha.len();
    let t = DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            alpha[i]
        } else if i + 1 == j {
            beta[i]
        } else if j + 1 == i {
            beta[j]
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(t);
    let (idx, &theta) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("nonempty");
    (theta, eig.eigenvectors.column(idx).iter().copied().collect())
}

/// Smallest eigenvalue of the Dirichlet linearized operator by shift-invert
/// Lanczos with full reorthogonalization and explicit restarts.
pub fn min_eigenvalue(s: &PhaseState) -> Result<EigenReport> {
    let grid = s.grid();
    if grid.shape().iter().any(|&c| c < 3) {
        return Err(Error::InvalidGrid("no interior nodes".into()));
    }
    let eps = s.eps();
    let op = DirichletOperator::new(s);
    let w = interior_weights(grid);
    // Gershgorin: the Laplacian part is diagonally dominant, so L >= min W''/eps.
    let lower = (0..grid.len())
        .filter(|&k| op.interior[k])
        .map(|k| op.potential[k])
        .fold(f64::INFINITY, f64::min);
    let mut margin = 0.05 * s.well().second(1.0) / eps;
    let mut report = None;
    for _ in 0..4 {
        match lanczos(&op, &w, lower - margin) {
            Some(r) => {
                report = Some(r);
                break;
            }
            None => margin *= 4.0,
        }
    }
    report.ok_or_else(|| Error::Precondition("inner solves broke down at every shift".into()))
}

/// `None` signals an inner-solve breakdown at this shift.
fn lanczos(op: &DirichletOperator, w: &[f64], shift: f64) -> Option<EigenReport> {
    let len = w.len();
    let mut inner = 0usize;
    let mut solve = |v: &[f64], out: &mut [f64]| -> bool {
        out.iter_mut().for_each(|x| *x = 0.0);
        let apply = |x: &[f64], y: &mut [f64]| op.apply(shift, x, y);
        let res = krylov::cg(&apply, w, v, out, INNER_TOL, 20 * len + 100);
        inner += 1;
        !res.negative_curvature && res.relative_residual <= 1e3 * INNER_TOL
    };
    let normalize = |v: &mut [f64]| {
        let n = krylov::norm(w, v);
        v.iter_mut().for_each(|x| *x /= n);
    };

    // The ground state of a Schrödinger-type operator is positive.
    let mut start: Vec<f64> = w.iter().map(|&wk| if wk > 0.0 { 1.0 } else { 0.0 }).collect();
    normalize(&mut start);
    let mut lambda = f64::NAN;
    let mut psi = start.clone();
    let mut residual = f64::INFINITY;
    let mut scratch = vec![0.0; len];

    for _ in 0..MAX_RESTARTS {
        let mut basis: Vec<Vec<f64>> = vec![start.clone()];
        let (mut alpha, mut beta) = (Vec::new(), Vec::new());
        let mut ritz = (0.0, vec![1.0]);
        for j in 0..LANCZOS_STEPS {
            let mut next = vec![0.0; len];
            if !solve(&basis[j], &mut next) {
                return None;
            }
            let a = krylov::dot(w, &basis[j], &next);
            alpha.push(a);
            for _ in 0..2 {
                for v in &basis {
                    let c = krylov::dot(w, v, &next);
                    next.iter_mut().zip(v).for_each(|(x, vi)| *x -= c * vi);
                }
            }
            let b = krylov::norm(w, &next);
            ritz = top_ritz(&alpha, &beta);
            let estimate = b * ritz.1[j].abs();
            if estimate <= 1e-12 * ritz.0 || b <= 1e-14 * ritz.0 || j + 1 == LANCZOS_STEPS {
                break;
            }
            beta.push(b);
            next.iter_mut().for_each(|x| *x /= b);
            basis.push(next);
        }
        psi = vec![0.0; len];
        for (v, c) in basis.iter().zip(&ritz.1) {
            psi.iter_mut().zip(v).for_each(|(p, vi)| *p += c * vi);
        }
        normalize(&mut psi);

        // Polish with one inverse step, then measure in L itself.
        let mut polished = vec![0.0; len];
        if !solve(&psi, &mut polished) {
            return None;
        }
        normalize(&mut polished);
        psi = polished;
        op.apply(0.0, &psi, &mut scratch);
        lambda = krylov::dot(w, &psi, &scratch);
        scratch.iter_mut().zip(&psi).for_each(|(r, p)| *r -= lambda * p);
        residual = krylov::norm(w, &scratch);
        if residual <= 1e-6 * lambda.abs() + 1e-10 {
            break;
        }
        start = psi.clone();
    }
    // Fix the sign so that the ground state is nonnegative on balance.
    if psi.iter().sum::<f64>() < 0.0 {
        psi.iter_mut().for_each(|p| *p = -*p);
    }
    Some(EigenReport {
        lambda_min: lambda,
        eigenfield: ScalarField::from_raw(op.grid.clone(), psi),
        iterations: inner,
        converged: residual <= 1e-6 * lambda.abs() + 1e-10,
        residual,
        shift,
    })
}

/// Default certification slack `1e-3 W''(1)/eps`.
pub fn default_slack(s: &PhaseState) -> f64 {
    1e-3 * s.well().second(1.0) / s.eps()
}

/// Certifies stability as `λ_min >= -slack` and records the verdict on the
/// state.
pub fn certify_stable(s: &mut PhaseState, slack: f64) -> Result<bool> {
    Ok(certify_stable_with_report(s, slack)?.0)
}

/// [`certify_stable`] also returning the eigenvalue report.
pub fn certify_stable_with_report(s: &mut PhaseState, slack: f64) -> Result<(bool, EigenReport)> {
    if s.residual_norm() > CERTIFY_MAX_RESIDUAL {
        return Err(Error::Precondition(format!(
            "state is not critical: residual {} > {CERTIFY_MAX_RESIDUAL}",
            s.residual_norm()
        )));
    }
    let report = min_eigenvalue(s)?;
    let stable = report.lambda_min >= -slack;
    s.set_certified(stable);
    Ok((stable, report))
}

/// Both sides of `∫ B² |∇u|² φ² <= ∫ |∇φ|² |∇u|²`.
pub fn check_b_stability(s: &PhaseState, phi: &ScalarField) -> Result<(f64, f64)> {
    check_admissible(s, phi)?;
    if s.certified_stable() != Some(true) {
        return Err(Error::Precondition("state is not certified stable".into()));
    }
    let du = gradient(s.u()).norm();
    let dphi = gradient(phi).norm();
    let b2 = b_squared(s.u());
    let grid = s.grid();
    let (g, b, p, f) = (du.values(), b2.values(), dphi.values(), phi.values());
    let lhs = ScalarField::from_raw(
        grid.clone(),
        (0..grid.len()).map(|k| b[k] * g[k] * g[k] * f[k] * f[k]).collect(),
    );
    let rhs = ScalarField::from_raw(
        grid.clone(),
        (0..grid.len()).map(|k| p[k] * p[k] * g[k] * g[k]).collect(),
    );
    Ok((lhs.integrate(&Region::All).value, rhs.integrate(&Region::All).value))
}
