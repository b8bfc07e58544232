//! Conjugate gradients and MINRES in a diagonally weighted inner product
//! `<a, b>_w = Σ w_k a_k b_k`.
//!
//! The operator must be self-adjoint in that inner product. Nodes with zero
//! weight are invisible to both methods; callers overwrite them afterwards.

use crate::field::pairwise_sum_by;

pub(crate) type Operator<'a> = dyn Fn(&[f64], &mut [f64]) + 'a;

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct KrylovOutcome {
    pub iterations: usize,
    pub converged: bool,
    /// CG met a direction with `<p, A p>_w <= 0`.
    pub negative_curvature: bool,
    /// Final residual norm relative to `|b|_w`.
    pub relative_residual: f64,
}

pub(crate) fn dot(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    pairwise_sum_by(w.len(), |k| w[k] * a[k] * b[k])
}

pub(crate) fn norm(w: &[f64], a: &[f64]) -> f64 {
    dot(w, a, a).max(0.0).sqrt()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Solves `A x = b` from the initial guess in `x`. Stops on negative
/// curvature with `x` holding the last iterate.
pub(crate) fn cg(
    op: &Operator,
    w: &[f64],
    b: &[f64],
    x: &mut [f64],
    rtol: f64,
    max_iter: usize,
) -> KrylovOutcome {
    let n = b.len();
    let bnorm = norm(w, b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return KrylovOutcome {
            iterations: 0,
            converged: true,
            negative_curvature: false,
            relative_residual: 0.0,
        };
    }
    let mut ax = vec![0.0; n];
    op(x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = dot(w, &r, &r);
    let mut outcome = KrylovOutcome {
        iterations: 0,
        converged: rr.sqrt() <= rtol * bnorm,
        negative_curvature: false,
        relative_residual: rr.sqrt() / bnorm,
    };
    while !outcome.converged && outcome.iterations < max_iter {
        op(&p, &mut ap);
        let pap = dot(w, &p, &ap);
        if pap <= 0.0 {
            outcome.negative_curvature = true;
            break;
        }
        let alpha = rr / pap;
        axpy(alpha, &p, x);
        axpy(-alpha, &ap, &mut r);
        let rr_next = dot(w, &r, &r);
        let beta = rr_next / rr;
        rr = rr_next;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        outcome.iterations += 1;
        outcome.relative_residual = rr.sqrt() / bnorm;
        outcome.converged = outcome.relative_residual <= rtol;
    }
    outcome
}

/// Unpreconditioned MINRES (Paige-Saunders) for self-adjoint, possibly
/// indefinite `A`. The reported residual is the recurrence estimate.
pub(crate) fn minres(
    op: &Operator,
    w: &[f64],
    b: &[f64],
    x: &mut [f64],
    rtol: f64,
    max_iter: usize,
) -> KrylovOutcome {
    let n = b.len();
    let bnorm = norm(w, b);
    let mut outcome = KrylovOutcome {
        iterations: 0,
        converged: false,
        negative_curvature: false,
        relative_residual: 1.0,
    };
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        outcome.converged = true;
        outcome.relative_residual = 0.0;
        return outcome;
    }
    let mut tmp = vec![0.0; n];
    op(x, &mut tmp);
    let mut r1: Vec<f64> = b.iter().zip(&tmp).map(|(bi, ai)| bi - ai).collect();
    let mut r2 = r1.clone();
    let mut y = r1.clone();
    let beta1 = norm(w, &r1);
    if beta1 <= rtol * bnorm {
        outcome.converged = true;
        outcome.relative_residual = beta1 / bnorm;
        return outcome;
    }

    let (mut oldb, mut beta) = (0.0, beta1);
    let (mut dbar, mut epsln, mut phibar) = (0.0, 0.0, beta1);
    let (mut cs, mut sn) = (-1.0, 0.0);
    let mut dirs = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut v = vec![0.0; n];

    while outcome.iterations < max_iter {
        let s = 1.0 / beta;
        for (vi, yi) in v.iter_mut().zip(&y) {
            *vi = s * yi;
        }
        op(&v, &mut y);
        if outcome.iterations >= 1 {
            axpy(-beta / oldb, &r1, &mut y);
        }
        let alpha = dot(w, &v, &y);
        axpy(-alpha / beta, &r2, &mut y);
        std::mem::swap(&mut r1, &mut r2);
        r2.copy_from_slice(&y);
        oldb = beta;
        beta = norm(w, &r2);

        let oldeps = epsln;
        let delta = cs * dbar + sn * alpha;
        let gbar = sn * dbar - cs * alpha;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = gbar.hypot(beta).max(f64::EPSILON);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;

        // dirs = [w_{k-2}, w_{k-1}, w_k] after rotation.
        dirs.rotate_left(1);
        let [w1, w2, wk] = &mut dirs;
        for k in 0..n {
            wk[k] = (v[k] - oldeps * w1[k] - delta * w2[k]) / gamma;
        }
        axpy(phi, wk, x);

        outcome.iterations += 1;
        outcome.relative_residual = phibar / bnorm;
        if outcome.relative_residual <= rtol {
            outcome.converged = true;
            break;
        }
        if beta == 0.0 {
            // Invariant Krylov subspace: the iterate is exact there.
            outcome.converged = true;
            break;
        }
    }
    outcome
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Weighted 1D Neumann Laplacian plus a diagonal shift.
    fn neumann(n: usize, shift: Vec<f64>) -> (impl Fn(&[f64], &mut [f64]), Vec<f64>) {
        let mut w = vec![1.0; n];
        w[0] = 0.5;
        w[n - 1] = 0.5;
        let op = move |x: &[f64], y: &mut [f64]| {
            for k in 0..n {
                let l = if k == 0 { x[1] } else { x[k - 1] };
                let r = if k == n - 1 { x[n - 2] } else { x[k + 1] };
                y[k] = 2.0 * x[k] - l - r + shift[k] * x[k];
            }
        };
        (op, w)
    }

    fn residual(op: &Operator, b: &[f64], x: &[f64]) -> f64 {
        let mut ax = vec![0.0; x.len()];
        op(x, &mut ax);
        ax.iter().zip(b).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn cg_solves_weighted_spd_system() {
        let n = 60;
        let (op, w) = neumann(n, vec![0.3; n]);
        let b: Vec<f64> = (0..n).map(|k| (k as f64 * 0.37).sin()).collect();
        let mut x = vec![0.0; n];
        let out = cg(&op, &w, &b, &mut x, 1e-12, 500);
        assert!(out.converged && !out.negative_curvature);
        assert!(residual(&op, &b, &x) < 1e-10);
    }

    #[test]
    fn cg_flags_negative_curvature() {
        let n = 30;
        let (op, w) = neumann(n, vec![-1.0; n]);
        let b = vec![1.0; n];
        let mut x = vec![0.0; n];
        let out = cg(&op, &w, &b, &mut x, 1e-12, 500);
        assert!(out.negative_curvature);
    }

    #[test]
    fn minres_solves_indefinite_system() {
        let n = 50;
        let shift: Vec<f64> = (0..n).map(|k| if k < 20 { -0.7 } else { 0.9 }).collect();
        let (op, w) = neumann(n, shift);
        let b: Vec<f64> = (0..n).map(|k| 1.0 + (k as f64).cos()).collect();
        let mut x = vec![0.0; n];
        let out = minres(&op, &w, &b, &mut x, 1e-12, 2000);
        assert!(out.converged, "{out:?}");
        assert!(residual(&op, &b, &x) < 1e-9, "{}", residual(&op, &b, &x));
    }

    #[test]
    fn zero_right_hand_side_gives_zero() {
        let (op, w) = neumann(10, vec![1.0; 10]);
        let mut x = vec![3.0; 10];
        assert!(cg(&op, &w, &[0.0; 10], &mut x, 1e-12, 10).converged);
        assert!(x.iter().all(|&v| v == 0.0));
        let mut x = vec![3.0; 10];
        assert!(minres(&op, &w, &[0.0; 10], &mut x, 1e-12, 10).converged);
        assert!(x.iter().all(|&v| v == 0.0));
    }
}
