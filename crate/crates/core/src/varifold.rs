//! The diffuse varifold of a phase field and its measures.
//!
//! The weight measure is `(eps / 2σ) |∇u|² dx` and the tangent plane at a
//! node is the orthogonal complement of `n = ∇u / |∇u|`. Nodes with
//! `|∇u| <= θ_grad` carry no varifold mass and no `B`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{gradient, hessian, Region, ScalarField, VectorField};
use crate::solver::{energy, PhaseState};
use crate::testfn;

/// Relative gradient threshold defining `{∇u = 0}`.
pub const GRADIENT_THRESHOLD: f64 = 1e-12;

/// Fraction by which each half-extent of the box shrinks to give `U`.
pub const INTERIOR_SHRINK: f64 = 0.1;

/// `B_u²` at every node: `(|P H P|² + |P H n|²) / |∇u|²`, which equals the
/// defining expression `|H|²/|∇u|² - |H ∇u|²/|∇u|⁴` and is nonnegative by
/// construction. Zero where `|∇u| <= θ_grad`.
pub fn b_squared(u: &ScalarField) -> ScalarField {
    let grid = u.grid();
    let n = grid.dim();
    let grad = gradient(u);
    let hess = hessian(u);
    let norm = grad.norm();
    let theta = GRADIENT_THRESHOLD * norm.max();
    let values = (0..grid.len())
        .map(|k| {
            let g = norm.values()[k];
            if g <= theta || g == 0.0 {
                return 0.0;
            }
            let d = grad.at(k);
            let nv: Vec<f64> = (0..n).map(|i| d[i] / g).collect();
            let h = hess.at(k);
            // Hn and nHn.
            let hn: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i][j] * nv[j]).sum()).collect();
            let nhn: f64 = (0..n).map(|i| nv[i] * hn[i]).sum();
            // P H P = H - n⊗Hn - Hn⊗n + nHn n⊗n.
            let mut php = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let e = h[i][j] - nv[i] * hn[j] - hn[i] * nv[j] + nhn * nv[i] * nv[j];
                    php += e * e;
                }
            }
            let phn: f64 = (0..n).map(|i| (hn[i] - nhn * nv[i]).powi(2)).sum();
            ((php + phn) / (g * g)).max(0.0)
        })
        .collect();
    ScalarField::from_raw(grid.clone(), values)
}

/// Both sides of `|M m - (tr M) m| <= sqrt(n-1) (tr M² - mᵀ M² m)^{1/2}`
/// for symmetric `M` (first `m.len()` rows and columns used) and unit `m`.
pub fn matrix_inequality_check(matrix: &[[f64; 3]; 3], m: &[f64]) -> (f64, f64) {
    let n = m.len();
    let trace: f64 = (0..n).map(|i| matrix[i][i]).sum();
    let mm: Vec<f64> = (0..n).map(|i| (0..n).map(|j| matrix[i][j] * m[j]).sum()).collect();
    let lhs = (0..n).map(|i| (mm[i] - trace * m[i]).powi(2)).sum::<f64>().sqrt();
    // tr M² = |M|_F², mᵀ M² m = |M m|².
    let frob: f64 = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| matrix[i][j].powi(2)).sum();
    let mm2: f64 = mm.iter().map(|v| v * v).sum();
    let rhs = ((n as f64 - 1.0).max(0.0)).sqrt() * (frob - mm2).max(0.0).sqrt();
    (lhs, rhs)
}

/// A phase state viewed as a varifold.
#[derive(Clone, Debug)]
pub struct DiffuseVarifold {
    state: PhaseState,
    sigma: f64,
    grad: VectorField,
    grad_norm: ScalarField,
    theta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityRow {
    pub x0: Vec<f64>,
    pub r: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityTable {
    pub rows: Vec<MonotonicityRow>,
    /// Smallest `c >= 0` with `ratio(r) - ratio(s) >= -c r` for all `s < r`.
    pub fitted_c: f64,
}

impl MonotonicityTable {
    /// CSV with columns `x0, r, ratio`; `x0` holds space-separated coordinates.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_monotonicity_csv(&self.rows, w)
    }
}

pub fn write_monotonicity_csv<W: Write>(rows: &[MonotonicityRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["x0", "r", "ratio"])?;
    for row in rows {
        let x0: Vec<String> = row.x0.iter().map(|v| v.to_string()).collect();
        out.write_record([x0.join(" "), row.r.to_string(), row.ratio.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_monotonicity_csv_file(rows: &[MonotonicityRow], path: impl AsRef<Path>) -> Result<()> {
    write_monotonicity_csv(rows, std::fs::File::create(path)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NuRow {
    pub x0: Vec<f64>,
    pub r: f64,
    pub ratio: f64,
}

/// Inputs of [`DiffuseVarifold::diagnose`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsOptions {
    pub seed: u64,
    /// Number of random vector fields in the first-variation battery.
    pub battery: usize,
    /// Centers for monotonicity and ν-density ratios.
    pub centers: Vec<Vec<f64>>,
    /// Radii; balls escaping the box or below `4 eps` are skipped.
    pub radii: Vec<f64>,
}

impl Default for DiagnosticsOptions {
    fn default() -> Self {
        DiagnosticsOptions { seed: 0, battery: 10, centers: Vec::new(), radii: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub eps: f64,
    pub residual_norm: f64,
    pub energy: f64,
    pub mass: f64,
    pub discrepancy_l1: f64,
    /// Max over the battery of `|δV(g)| / sup|∇g|`.
    pub first_variation_sup: f64,
    /// `∫_U eps B² |∇u|²`.
    pub b_density_integral: f64,
    pub gradient_bound_violation: f64,
    pub monotonicity: Vec<MonotonicityRow>,
    pub monotonicity_c: f64,
    pub nu_ratios: Vec<NuRow>,
}

impl DiagnosticsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

impl DiffuseVarifold {
    pub fn new(state: &PhaseState) -> Self {
        let grad = gradient(state.u());
        let grad_norm = grad.norm();
        let theta = GRADIENT_THRESHOLD * grad_norm.max();
        DiffuseVarifold { sigma: state.well().sigma(), state: state.clone(), grad, grad_norm, theta }
    }

    pub fn state(&self) -> &PhaseState {
        &self.state
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn gradient(&self) -> &VectorField {
        &self.grad
    }

    /// Subbox `U` used for interior statements.
    pub fn interior(&self) -> Region {
        self.state.grid().interior_box(INTERIOR_SHRINK)
    }

    fn supported(&self, k: usize) -> bool {
        let g = self.grad_norm.values()[k];
        g > self.theta && g > 0.0
    }

    fn nodal(&self, f: impl Fn(usize) -> f64) -> ScalarField {
        let grid = self.state.grid();
        ScalarField::from_raw(grid.clone(), (0..grid.len()).map(f).collect())
    }

    /// `(eps / 2σ) |∇u|²`.
    pub fn weight_density(&self) -> ScalarField {
        let c = 0.5 * self.state.eps() / self.sigma;
        self.nodal(|k| {
            if self.supported(k) {
                c * self.grad_norm.values()[k].powi(2)
            } else {
                0.0
            }
        })
    }

    pub fn mass(&self, region: &Region) -> f64 {
        self.weight_density().integrate(region).value
    }

    /// `δV(g) = ∫ tr(∇g (I - n⊗n)) d‖V‖`. `g` must vanish on the boundary.
    pub fn first_variation(&self, g: &VectorField) -> Result<f64> {
        let grid = self.state.grid();
        if g.grid() != grid {
            return Err(Error::InvalidArgument("vector field lives on a different grid".into()));
        }
        if !g.components().iter().all(|c| c.vanishes_on_boundary()) {
            return Err(Error::Precondition("vector field must vanish on the boundary ring".into()));
        }
        let n = grid.dim();
        // dg[i] = ∇g_i.
        let dg: Vec<VectorField> = g.components().iter().map(gradient).collect();
        let weight = self.weight_density();
        let integrand = self.nodal(|k| {
            if !self.supported(k) {
                return 0.0;
            }
            let d = self.grad.at(k);
            let norm = self.grad_norm.values()[k];
            let mut tr = 0.0;
            for i in 0..n {
                let row = dg[i].at(k);
                tr += row[i];
                for j in 0..n {
                    tr -= d[i] * d[j] / (norm * norm) * row[j];
                }
            }
            tr * weight.values()[k]
        });
        Ok(integrand.total())
    }

    /// Nodal `ξ = eps |∇u|²/2 - W(u)/eps` and `∫_U |ξ|`.
    pub fn discrepancy(&self) -> (ScalarField, f64) {
        let eps = self.state.eps();
        let u = self.state.u().values();
        let xi = self.nodal(|k| {
            0.5 * eps * self.grad_norm.values()[k].powi(2) - self.state.well().value(u[k]) / eps
        });
        let l1 = xi.map(f64::abs).integrate(&self.interior()).value;
        (xi, l1)
    }

    /// Nodal `B_u`.
    pub fn b_field(&self) -> ScalarField {
        b_squared(self.state.u()).map(f64::sqrt)
    }

    /// Nodal `eps B² |∇u|²`, the density of ν.
    pub fn nu_integrand(&self) -> ScalarField {
        let b2 = b_squared(self.state.u());
        let eps = self.state.eps();
        self.nodal(|k| eps * b2.values()[k] * self.grad_norm.values()[k].powi(2))
    }

    /// `ν(B_r(x0)) / r^{n-3}`.
    pub fn nu_density(&self, x0: &[f64], r: f64) -> Result<f64> {
        let ball = self.checked_ball(x0, r)?;
        let n = self.state.grid().dim() as i32;
        Ok(self.nu_integrand().integrate(&ball).value / r.powi(n - 3))
    }

    fn checked_ball(&self, x0: &[f64], r: f64) -> Result<Region> {
        let grid = self.state.grid();
        if x0.len() != grid.dim() || !(r > 0.0) {
            return Err(Error::InvalidArgument(format!("bad ball center {x0:?} or radius {r}")));
        }
        let ball = Region::ball(x0, r);
        if !ball.inside(grid) {
            return Err(Error::Domain(format!("ball B_{r}({x0:?}) escapes the box")));
        }
        Ok(ball)
    }

    /// Chain-rule gradient of the discrepancy,
    /// `∇ξ = eps H ∇u - W'(u) ∇u / eps`.
    fn discrepancy_gradient(&self) -> Vec<[f64; 3]> {
        let grid = self.state.grid();
        let n = grid.dim();
        let hess = hessian(self.state.u());
        let eps = self.state.eps();
        let u = self.state.u().values();
        (0..grid.len())
            .map(|k| {
                let d = self.grad.at(k);
                let h = hess.at(k);
                let wp = self.state.well().first(u[k]);
                let mut out = [0.0; 3];
                for i in 0..n {
                    let hd: f64 = (0..n).map(|j| h[i][j] * d[j]).sum();
                    out[i] = eps * hd - wp * d[i] / eps;
                }
                out
            })
            .collect()
    }

    /// `max_U (|∇ξ| - eps sqrt(n-1) |∇u|² B)⁺ / (1 + eps |∇u|² B)`.
    pub fn gradient_bound_check(&self) -> f64 {
        let grid = self.state.grid();
        let n = grid.dim();
        let dxi = self.discrepancy_gradient();
        let b = self.b_field();
        let eps = self.state.eps();
        let root = ((n - 1) as f64).sqrt();
        let region = self.interior();
        (0..grid.len())
            .filter(|&k| region.contains(&grid.position(k)[..n]))
            .map(|k| {
                let lhs = dxi[k][..n].iter().map(|v| v * v).sum::<f64>().sqrt();
                let scale = eps * self.grad_norm.values()[k].powi(2) * b.values()[k];
                (lhs - root * scale).max(0.0) / (1.0 + scale)
            })
            .fold(0.0, f64::max)
    }

    /// `r^{1-n} ∫_{B_r(x0)} eps |∇u|²/2 + W(u)/eps`. Requires `r >= 4 eps`.
    pub fn monotonicity_ratio(&self, x0: &[f64], r: f64) -> Result<f64> {
        let ball = self.checked_ball(x0, r)?;
        let eps = self.state.eps();
        if r < 4.0 * eps * (1.0 - 1e-12) {
            return Err(Error::InvalidArgument(format!("radius {r} below 4 eps = {}", 4.0 * eps)));
        }
        let u = self.state.u().values();
        let density = self.nodal(|k| {
            0.5 * eps * self.grad_norm.values()[k].powi(2) + self.state.well().value(u[k]) / eps
        });
        let n = self.state.grid().dim() as i32;
        Ok(density.integrate(&ball).value * r.powi(1 - n))
    }

    /// Ratios at every radius and the smallest constant `c` making them
    /// monotone up to `-c r`.
    pub fn monotonicity_check(&self, x0: &[f64], radii: &[f64]) -> Result<MonotonicityTable> {
        let mut radii = radii.to_vec();
        radii.sort_by(f64::total_cmp);
        let rows = radii
            .iter()
            .map(|&r| Ok(MonotonicityRow { x0: x0.to_vec(), r, ratio: self.monotonicity_ratio(x0, r)? }))
            .collect::<Result<Vec<_>>>()?;
        Ok(MonotonicityTable { fitted_c: fit_monotonicity_constant(&rows), rows })
    }

    /// Runs every scalar diagnostic.
    pub fn diagnose(&self, opts: &DiagnosticsOptions) -> Result<DiagnosticsReport> {
        let grid = self.state.grid();
        let mut first_variation_sup: f64 = 0.0;
        for g in testfn::random_vector_fields(grid, opts.seed, opts.battery) {
            let scale = g
                .components()
                .iter()
                .map(|c| gradient(c).norm().sup_norm())
                .fold(0.0, f64::max);
            if scale > 0.0 {
                first_variation_sup = first_variation_sup.max(self.first_variation(&g)?.abs() / scale);
            }
        }
        let eps = self.state.eps();
        let mut monotonicity = Vec::new();
        let mut monotonicity_c: f64 = 0.0;
        let mut nu_ratios = Vec::new();
        for x0 in &opts.centers {
            let radii: Vec<f64> = opts
                .radii
                .iter()
                .copied()
                .filter(|&r| r >= 4.0 * eps * (1.0 - 1e-12) && Region::ball(x0, r).inside(grid))
                .collect();
            if radii.is_empty() {
                continue;
            }
            let table = self.monotonicity_check(x0, &radii)?;
            monotonicity_c = monotonicity_c.max(table.fitted_c);
            monotonicity.extend(table.rows);
            for &r in &radii {
                nu_ratios.push(NuRow { x0: x0.clone(), r, ratio: self.nu_density(x0, r)? });
            }
        }
        Ok(DiagnosticsReport {
            eps,
            residual_norm: self.state.residual_norm(),
            energy: energy(&self.state, &Region::All),
            mass: self.mass(&Region::All),
            discrepancy_l1: self.discrepancy().1,
            first_variation_sup,
            b_density_integral: self.nu_integrand().integrate(&self.interior()).value,
            gradient_bound_violation: self.gradient_bound_check(),
            monotonicity,
            monotonicity_c,
            nu_ratios,
        })
    }
}

fn fit_monotonicity_constant(rows: &[MonotonicityRow]) -> f64 {
    let mut c: f64 = 0.0;
    for (i, small) in rows.iter().enumerate() {
        for large in &rows[i + 1..] {
            if large.r > small.r {
                c = c.max((small.ratio - large.ratio) / large.r);
            }
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Grid;
    use crate::potential::{DoubleWell, StandingWave};
    use crate::solver::{solve, SolveConfig};
    use proptest::prelude::*;
    use std::f64::consts::SQRT_2;

    fn profile(eps: f64, s: f64) -> f64 {
        (s / (SQRT_2 * eps)).tanh()
    }

    fn state(u: ScalarField, eps: f64) -> PhaseState {
        PhaseState::new(u, eps, DoubleWell::Quartic).unwrap()
    }

    fn flat(eps: f64, count: usize) -> PhaseState {
        let g = Grid::cube(2, -0.5, 0.5, count).unwrap();
        state(ScalarField::from_fn(&g, |x| profile(eps, x[1])), eps)
    }

    fn radial(n: usize, eps: f64, radius: f64, count: usize) -> PhaseState {
        let g = Grid::cube(n, -1.0, 1.0, count).unwrap();
        state(
            ScalarField::from_fn(&g, |x| profile(eps, x.iter().map(|v| v * v).sum::<f64>().sqrt() - radius)),
            eps,
        )
    }

    #[test]
    fn constant_states_carry_nothing() {
        let g = Grid::cube(2, 0.0, 1.0, 16).unwrap();
        let v = DiffuseVarifold::new(&state(ScalarField::constant(&g, 1.0), 0.1));
        assert_eq!(v.weight_density().sup_norm(), 0.0);
        assert_eq!(v.discrepancy().1, 0.0);
        assert_eq!(v.b_field().sup_norm(), 0.0);
    }

    #[test]
    fn standing_wave_has_unit_mass_and_equipartition() {
        let eps = 0.05;
        let g = Grid::cube(1, -1.0, 1.0, 801).unwrap();
        let q = StandingWave::new(&DoubleWell::Quartic);
        let v = DiffuseVarifold::new(&state(ScalarField::from_fn(&g, |x| q.eval(eps, x[0])), eps));
        assert!((v.mass(&Region::All) - 1.0).abs() < 1e-3, "{}", v.mass(&Region::All));
        let (xi, _) = v.discrepancy();
        // ξ scales like 1/ε and central differences add relative error (h/ε)².
        let h = g.spacing(0);
        assert!(xi.sup_norm() <= 10.0 * h * h / eps.powi(3), "{}", xi.sup_norm());
    }

    #[test]
    fn flat_interface_mass_is_its_length() {
        let v = DiffuseVarifold::new(&flat(0.05, 201));
        assert!((v.mass(&Region::All) - 1.0).abs() < 0.01);
    }

    #[test]
    fn mass_is_bounded_by_energy() {
        let s = radial(2, 0.1, 0.5, 41);
        let v = DiffuseVarifold::new(&s);
        assert!(v.mass(&Region::All) <= energy(&s, &Region::All) / v.sigma() * 1.02);
    }

    #[test]
    fn normal_translation_of_a_flat_interface() {
        let s = flat(0.05, 101);
        let v = DiffuseVarifold::new(&s);
        let bump = testfn::bump(s.grid(), &[0.0, 0.0], 0.3);
        let zero = ScalarField::constant(s.grid(), 0.0);
        let g = VectorField::new(vec![zero.clone(), bump]).unwrap();
        let h = s.grid().spacing(0);
        assert!(v.first_variation(&g).unwrap().abs() <= 10.0 * h * h);
        assert_eq!(v.first_variation(&VectorField::zeros(s.grid())).unwrap(), 0.0);
    }

    #[test]
    fn first_variation_is_linear() {
        let s = radial(2, 0.1, 0.4, 41);
        let v = DiffuseVarifold::new(&s);
        let gs = testfn::random_vector_fields(s.grid(), 3, 2);
        let sum = gs[0].combine(1.0, &gs[1], 2.0);
        let lhs = v.first_variation(&sum).unwrap();
        let rhs = v.first_variation(&gs[0]).unwrap() + 2.0 * v.first_variation(&gs[1]).unwrap();
        assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn circles_have_first_variation_mass_over_radius() {
        let eps = 0.02;
        for radius in [0.2, 0.3, 0.4] {
            let s = radial(2, eps, radius, 201);
            let v = DiffuseVarifold::new(&s);
            // Radial unit field, cut off away from the origin and the box.
            let g = VectorField::from_fn(s.grid(), |x| {
                let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
                let cut = if (r - radius).abs() < 0.15 {
                    (1.0 - 1.0 / (1.0 - ((r - radius) / 0.15).powi(2))).exp()
                } else {
                    0.0
                };
                vec![cut * x[0] / r.max(1e-300), cut * x[1] / r.max(1e-300)]
            });
            let dv = v.first_variation(&g).unwrap();
            let mass = v.mass(&Region::All);
            assert!(dv > 0.0);
            assert!((dv / mass * radius - 1.0).abs() < 0.05, "{radius}: {}", dv / mass * radius);
        }
    }

    #[test]
    fn b_vanishes_on_planar_profiles() {
        let s = flat(0.05, 81);
        let h = s.grid().spacing(0);
        assert!(DiffuseVarifold::new(&s).b_field().sup_norm() <= 10.0 * h * h);
        // Oblique profiles vanish only up to stencil error, at second order.
        let oblique = |count: usize| {
            let g = Grid::cube(2, -1.0, 1.0, count).unwrap();
            let u = ScalarField::from_fn(&g, |x| profile(0.2, 0.6 * x[0] + 0.8 * x[1]));
            b_squared(&u).map(f64::sqrt).sup_norm()
        };
        let ratio = oblique(81) / oblique(161);
        assert!(ratio > 3.5, "{ratio}");
    }

    #[test]
    fn b_of_circles_and_spheres() {
        for (n, eps, half, count, factor) in [(2, 0.05, 1.05, 601, 1.0), (3, 0.2, 0.8, 65, SQRT_2)] {
            let radius = 0.5;
            let g = Grid::cube(n, -half, half, count).unwrap();
            let s = state(
                ScalarField::from_fn(&g, |x| profile(eps, x.iter().map(|v| v * v).sum::<f64>().sqrt() - radius)),
                eps,
            );
            let b = DiffuseVarifold::new(&s).b_field();
            let g = s.grid();
            let mut worst: f64 = 0.0;
            for k in 0..g.len() {
                let x = g.position(k);
                let r = x[..n].iter().map(|v| v * v).sum::<f64>().sqrt();
                let idx = g.unravel(k);
                let inner = (0..n).all(|a| idx[a] >= 2 && idx[a] + 2 < count);
                if inner && r >= radius / 2.0 && r <= 2.0 * radius && r > 5.0 * eps {
                    worst = worst.max((b.values()[k] * r / factor - 1.0).abs());
                }
            }
            assert!(worst < 0.02, "n = {n}: {worst}");
        }
    }

    #[test]
    fn b_is_invariant_under_quarter_turns() {
        let g = Grid::cube(2, -1.0, 1.0, 41).unwrap();
        let f = |x: f64, y: f64| profile(0.2, (x - 0.1).hypot(y + 0.2) - 0.5) + 0.1 * (x * y);
        let u = ScalarField::from_fn(&g, |x| f(x[0], x[1]));
        let rot = ScalarField::from_fn(&g, |x| f(-x[1], x[0]));
        let (b, br) = (b_squared(&u), b_squared(&rot));
        for i in 0..41 {
            for j in 0..41 {
                // rot(x, y) = u(-y, x), so node (i, j) of rot is node (40 - j, i) of u.
                let a = br.values()[g.index(&[i, j])];
                let c = b.values()[g.index(&[40 - j, i])];
                assert!((a - c).abs() <= 1e-9 * (1.0 + a.abs()));
            }
        }
    }

    #[test]
    fn nu_density_scaling_on_an_annulus() {
        let (eps, radius) = (0.05, 0.3);
        let s = radial(2, eps, radius, 401);
        let v = DiffuseVarifold::new(&s);
        let x0 = [radius, 0.0];
        // Within the layer B ≈ 1/R and ε|∇u|² integrates to 2σ per length.
        for r in [0.1, 0.2] {
            let expected = 2.0 * v.sigma() * 2.0 * r / (radius * radius) * r;
            let got = v.nu_density(&x0, r).unwrap();
            assert!(got > 0.0 && (got / expected - 1.0).abs() < 0.1, "{r}: {got} vs {expected}");
        }
        let flat_v = DiffuseVarifold::new(&flat(0.05, 101));
        assert_eq!(flat_v.nu_density(&[0.0, 0.0], 0.3).unwrap(), 0.0);
    }

    #[test]
    fn flat_monotonicity_ratio_is_constant() {
        let eps = 0.02;
        let v = DiffuseVarifold::new(&flat(eps, 401));
        let table = v.monotonicity_check(&[0.0, 0.0], &[0.08, 0.16, 0.25, 0.4]).unwrap();
        // Continuum oracle: r^{-1} ∫ sech⁴(y/√2ε)/(2ε) · 2√(r² - y²) dy.
        let oracle = |r: f64| {
            let m = 4000;
            let f = |y: f64| (y / (SQRT_2 * eps)).cosh().powi(-4) / (2.0 * eps) * 2.0 * (r * r - y * y).max(0.0).sqrt();
            let dy = 2.0 * r / m as f64;
            (0..m).map(|i| f(-r + (i as f64 + 0.5) * dy) * dy).sum::<f64>() / r
        };
        for row in &table.rows {
            let expected = oracle(row.r);
            assert!((row.ratio / expected - 1.0).abs() < 0.01, "{row:?} vs {expected}");
            if row.r >= 8.0 * eps {
                assert!((row.ratio / (4.0 * v.sigma()) - 1.0).abs() < 0.01, "{row:?}");
            }
        }
        assert!(v.monotonicity_ratio(&[0.0, 0.3], 0.1).unwrap() < 1e-6);
        assert!(v.monotonicity_ratio(&[0.0, 0.0], 0.01).is_err());
        assert!(matches!(v.monotonicity_ratio(&[0.4, 0.0], 0.2), Err(Error::Domain(_))));
        let mut csv = Vec::new();
        table.write_csv(&mut csv).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with("x0,r,ratio\n0 0,0.08,"));
    }

    #[test]
    fn gradient_bound_on_exact_and_flat_states() {
        let s = solve(&flat(0.1, 81), &SolveConfig::default()).unwrap().state;
        let v = DiffuseVarifold::new(&s);
        assert!(v.gradient_bound_check() < 1e-6, "{}", v.gradient_bound_check());
    }

    #[test]
    fn matrix_inequality_examples() {
        let id = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let m = [0.6, 0.0, 0.8];
        let (lhs, rhs) = matrix_inequality_check(&id, &m);
        assert!((lhs - 2.0).abs() < 1e-15 && (rhs - 2.0).abs() < 1e-15);
        let mut outer = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                outer[i][j] = m[i] * m[j];
            }
        }
        assert!(matrix_inequality_check(&outer, &m).0 < 1e-15);
    }

    proptest! {
        #[test]
        fn matrix_inequality_holds(entries in proptest::collection::vec(-3.0f64..3.0, 6),
                                   dir in proptest::collection::vec(-1.0f64..1.0, 3),
                                   n in 1usize..=3) {
            let norm = dir[..n].iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assume!(norm > 1e-3);
            let m: Vec<f64> = dir[..n].iter().map(|v| v / norm).collect();
            let mut mat = [[0.0; 3]; 3];
            let mut it = entries.iter();
            for i in 0..3 {
                for j in i..3 {
                    let e = *it.next().unwrap();
                    mat[i][j] = e;
                    mat[j][i] = e;
                }
            }
            let (lhs, rhs) = matrix_inequality_check(&mat, &m);
            prop_assert!(lhs <= rhs * (1.0 + 1e-12) + 1e-12, "{} > {}", lhs, rhs);
        }

        #[test]
        fn b_squared_is_nonnegative(a in -2.0f64..2.0, b in -2.0f64..2.0, c in 0.1f64..1.0) {
            let g = Grid::cube(2, -1.0, 1.0, 12).unwrap();
            let u = ScalarField::from_fn(&g, |x| (a * x[0] * x[0] + b * x[0] * x[1] + c * x[1]).tanh());
            prop_assert!(b_squared(&u).values().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn diagnostics_report_is_complete() {
        let s = flat(0.05, 81);
        let v = DiffuseVarifold::new(&s);
        let opts = DiagnosticsOptions {
            centers: vec![vec![0.0, 0.0]],
            radii: vec![0.2, 0.3, 0.4, 0.01],
            ..DiagnosticsOptions::default()
        };
        let r = v.diagnose(&opts).unwrap();
        assert_eq!(r.monotonicity.len(), 3);
        assert_eq!(r.nu_ratios.len(), 3);
        assert!(r.discrepancy_l1 >= 0.0 && r.first_variation_sup.is_finite());
        let json = r.to_json().unwrap();
        let back: DiagnosticsReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }
}
