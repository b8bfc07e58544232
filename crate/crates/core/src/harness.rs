//! Ansatz fields, ε-sweeps and run reports.
//!
//! A run directory holds `config.json`, one `eps-XX/` directory per ε (with
//! `report.json`, `field.acvf`, `monotonicity.csv`, `slices.csv` and, when
//! fibers are classified, `fibers.csv`), the decay table `decay.csv`, and
//! after [`report`] the aggregates `summary.json` and `summary.txt`.

use std::f64::consts::{PI, SQRT_2};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{read_acvf_file, write_acvf_file, Grid, Region, ScalarField};
use crate::potential::{DoubleWell, StandingWave};
use crate::slicing::{
    self, classify_fibers, curvature_integral, extract_slice, fiber_points, fraction_outside,
    hausdorff_distance, lemma43_terms, sublevel_nodes, turning_angle, FiberParams,
};
use crate::solver::{gradient_flow, newton_refine, PhaseState, SolveConfig};
use crate::stability::{certify_stable_with_report, check_b_stability, default_slack, min_eigenvalue};
use crate::testfn;
use crate::varifold::{write_monotonicity_csv_file, DiagnosticsOptions, DiagnosticsReport, DiffuseVarifold, INTERIOR_SHRINK};

/// Finest allowed spacing ratio `h / eps`.
pub const MAX_H_OVER_EPS: f64 = 0.125;

/// Default half-width of the triple-junction bands in units of ε.
pub const JUNCTION_HALF_WIDTH: f64 = 5.0;

/// Level whose sublevel band is compared with the reference surface.
pub const HAUSDORFF_LEVEL: f64 = 0.9;

/// Ansatz fields. Each interface is the standing wave composed with a
/// signed distance over ε, negative phase inside.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AnsatzSpec {
    /// `q0((x·n̂ - offset)/ε)`.
    FlatInterface { normal: Vec<f64>, offset: f64 },
    /// `q0((|x - c| - R)/ε)`.
    SphereShell { center: Vec<f64>, radius: f64 },
    /// Two parallel interfaces a distance `separation` apart, centered on
    /// the plane `x·n̂ = offset`; `+1` outside and `-1` between them.
    DoubleLayer { normal: Vec<f64>, offset: f64, separation: f64 },
    /// A `-1` band of half-width `half_width·ε` around three half-lines in
    /// the `(x₁, x₂)` plane meeting at 120°. The distance to the legs is a
    /// smooth minimum with blending width ε.
    TripleJunction {
        center: Vec<f64>,
        #[serde(default)]
        angle_offset: f64,
        #[serde(default = "default_half_width")]
        half_width: f64,
    },
    /// Circle of radius `R(1 + m cos(lobes θ))` in the `(x₁, x₂)` plane,
    /// extended along the remaining axes.
    Cylinder {
        center: Vec<f64>,
        radius: f64,
        #[serde(default)]
        modulation: f64,
        #[serde(default = "default_lobes")]
        lobes: u32,
    },
    Constant { value: f64 },
}

fn default_half_width() -> f64 {
    JUNCTION_HALF_WIDTH
}

fn default_lobes() -> u32 {
    2
}

impl AnsatzSpec {
    /// Axes along which the ansatz varies on the scale ε.
    fn resolved_axes(&self, n: usize) -> Vec<usize> {
        match self {
            AnsatzSpec::FlatInterface { normal, .. } | AnsatzSpec::DoubleLayer { normal, .. } => {
                (0..n).filter(|&a| normal.get(a).is_some_and(|c| *c != 0.0)).collect()
            }
            AnsatzSpec::SphereShell { .. } => (0..n).collect(),
            AnsatzSpec::TripleJunction { .. } | AnsatzSpec::Cylinder { .. } => (0..n.min(2)).collect(),
            AnsatzSpec::Constant { .. } => Vec::new(),
        }
    }

    fn check_dims(&self, n: usize) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("{what} needs {n} coordinates")));
        match self {
            AnsatzSpec::FlatInterface { normal, .. } | AnsatzSpec::DoubleLayer { normal, .. } => {
                if normal.len() != n {
                    return bad("normal");
                }
                if normal.iter().all(|c| *c == 0.0) {
                    return Err(Error::InvalidArgument("normal must be nonzero".into()));
                }
            }
            AnsatzSpec::SphereShell { center, .. } if center.len() != n => return bad("center"),
            AnsatzSpec::TripleJunction { center, .. } | AnsatzSpec::Cylinder { center, .. } => {
                if n < 2 {
                    return Err(Error::InvalidArgument("planar ansatz needs n >= 2".into()));
                }
                if center.len() != 2 {
                    return Err(Error::InvalidArgument("planar center needs 2 coordinates".into()));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// The standing wave `q0`, in closed form for the quartic well.
enum Profile {
    Tanh,
    Table(StandingWave),
}

impl Profile {
    fn new(well: &DoubleWell) -> Self {
        match well {
            DoubleWell::Quartic => Profile::Tanh,
            other => Profile::Table(StandingWave::new(other)),
        }
    }

    fn at(&self, t: f64) -> f64 {
        match self {
            Profile::Tanh => (t / SQRT_2).tanh(),
            Profile::Table(q) => q.profile(t),
        }
    }
}

fn unit(v: &[f64]) -> Vec<f64> {
    let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
    v.iter().map(|c| c / norm).collect()
}

/// Distance from `p` to the half-line from the origin along `d`.
fn ray_distance(p: [f64; 2], d: [f64; 2]) -> f64 {
    let s = (p[0] * d[0] + p[1] * d[1]).max(0.0);
    (p[0] - s * d[0]).hypot(p[1] - s * d[1])
}

/// Samples the ansatz on `grid`. The grid must resolve ε (`h <= eps/8`)
/// along every axis on which the ansatz varies.
pub fn generate(spec: &AnsatzSpec, grid: &Grid, eps: f64, well: &DoubleWell) -> Result<ScalarField> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidArgument(format!("eps = {eps} must be positive")));
    }
    let n = grid.dim();
    spec.check_dims(n)?;
    for a in spec.resolved_axes(n) {
        if grid.spacing(a) > MAX_H_OVER_EPS * eps * (1.0 + 1e-9) {
            return Err(Error::InvalidGrid(format!(
                "axis {a}: spacing {} does not resolve eps = {eps} (need h <= eps/8)",
                grid.spacing(a)
            )));
        }
    }
    let q = Profile::new(well);
    let field = match spec {
        AnsatzSpec::FlatInterface { normal, offset } => {
            let nu = unit(normal);
            ScalarField::from_fn(grid, |x| q.at((dot(x, &nu) - offset) / eps))
        }
        AnsatzSpec::SphereShell { center, radius } => ScalarField::from_fn(grid, |x| {
            let r = x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum::<f64>().sqrt();
            q.at((r - radius) / eps)
        }),
        AnsatzSpec::DoubleLayer { normal, offset, separation } => {
            let nu = unit(normal);
            ScalarField::from_fn(grid, |x| {
                q.at(((dot(x, &nu) - offset).abs() - 0.5 * separation) / eps)
            })
        }
        AnsatzSpec::TripleJunction { center, angle_offset, half_width } => {
            let legs: Vec<[f64; 2]> = (0..3)
                .map(|k| {
                    let a = angle_offset + 2.0 * PI * k as f64 / 3.0;
                    [a.cos(), a.sin()]
                })
                .collect();
            ScalarField::from_fn(grid, |x| {
                let p = [x[0] - center[0], x[1] - center[1]];
                let d: Vec<f64> = legs.iter().map(|&l| ray_distance(p, l)).collect();
                // Smooth minimum with blending width eps, shifted for stability.
                let m = d.iter().copied().fold(f64::INFINITY, f64::min);
                let soft = m - eps * d.iter().map(|di| (-(di - m) / eps).exp()).sum::<f64>().ln();
                q.at(soft / eps - half_width)
            })
        }
        AnsatzSpec::Cylinder { center, radius, modulation, lobes } => ScalarField::from_fn(grid, |x| {
            let (dx, dy) = (x[0] - center[0], x[1] - center[1]);
            let theta = dy.atan2(dx);
            let r = radius * (1.0 + modulation * (*lobes as f64 * theta).cos());
            q.at((dx.hypot(dy) - r) / eps)
        }),
        AnsatzSpec::Constant { value } => {
            if !(-1.0..=1.0).contains(value) {
                return Err(Error::InvalidArgument(format!("constant {value} outside [-1, 1]")));
            }
            ScalarField::constant(grid, *value)
        }
    };
    Ok(field)
}

fn dot(x: &[f64], v: &[f64]) -> f64 {
    x.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// Potential selection.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WellSpec {
    #[default]
    Quartic,
    /// Samples `s, W(s)` in a two-column CSV file.
    Tabulated { path: PathBuf },
}

impl WellSpec {
    pub fn load(&self) -> Result<DoubleWell> {
        match self {
            WellSpec::Quartic => Ok(DoubleWell::Quartic),
            WellSpec::Tabulated { path } => DoubleWell::from_csv(path),
        }
    }
}

/// Box and resolution. Exactly one of the three resolution fields is set:
/// a fixed `shape`, `points_per_eps` giving `h <= eps / points_per_eps`, or
/// one target spacing per ε in `spacings`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
    #[serde(default)]
    pub shape: Option<Vec<usize>>,
    #[serde(default)]
    pub points_per_eps: Option<f64>,
    #[serde(default)]
    pub spacings: Option<Vec<f64>>,
}

impl GridSpec {
    pub fn fixed(low: Vec<f64>, high: Vec<f64>, shape: Vec<usize>) -> Self {
        GridSpec { low, high, shape: Some(shape), points_per_eps: None, spacings: None }
    }

    /// Grid for the `index`-th entry `eps` of the sweep.
    pub fn build(&self, eps: f64, index: usize) -> Result<Grid> {
        let (low, high) = (self.low.clone(), self.high.clone());
        match (&self.shape, self.points_per_eps, &self.spacings) {
            (Some(shape), None, None) => Grid::new(low, high, shape.clone()),
            (None, Some(ppe), None) => Grid::with_spacing(low, high, eps / ppe),
            (None, None, Some(hs)) => match hs.get(index) {
                Some(&h) => Grid::with_spacing(low, high, h),
                None => Err(Error::InvalidArgument(format!("no spacing for sweep entry {index}"))),
            },
            _ => Err(Error::InvalidArgument(
                "grid needs exactly one of shape, points_per_eps and spacings".into(),
            )),
        }
    }
}

/// What the per-ε pipeline computes beyond the solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsToggles {
    pub flow: bool,
    pub newton: bool,
    pub certify: bool,
    /// Certification slack; `None` means `1e-3 W''(1)/eps`.
    pub slack: Option<f64>,
    pub varifold: bool,
    /// Random vector fields in the first-variation battery.
    pub battery: usize,
    /// Random test functions for the B-stability inequality.
    pub b_stability_trials: usize,
    pub monotonicity_centers: Vec<Vec<f64>>,
    pub monotonicity_radii: Vec<f64>,
    pub slicing: bool,
    /// Level traced by the slicing battery.
    pub level: f64,
    /// Fiber classification parameters; `None` skips classification.
    pub fibers: Option<FiberParams>,
    /// Reference surface for the Hausdorff distance.
    pub reference: Option<Reference>,
}

impl Default for DiagnosticsToggles {
    fn default() -> Self {
        DiagnosticsToggles {
            flow: true,
            newton: true,
            certify: true,
            slack: None,
            varifold: true,
            battery: 10,
            b_stability_trials: 20,
            monotonicity_centers: Vec::new(),
            monotonicity_radii: Vec::new(),
            slicing: true,
            level: 0.0,
            fibers: None,
            reference: None,
        }
    }
}

/// Surface compared with `{|u| <= 0.9}` in Hausdorff distance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Reference {
    Plane { normal: Vec<f64>, offset: f64 },
    Sphere { center: Vec<f64>, radius: f64 },
}

impl Reference {
    /// Projections onto the surface of the nodes within one spacing of it,
    /// kept when they fall in `region`.
    pub fn samples(&self, grid: &Grid, region: &Region) -> Vec<Vec<f64>> {
        let n = grid.dim();
        let h = grid.max_spacing();
        let mut out = Vec::new();
        for k in 0..grid.len() {
            let x = &grid.position(k)[..n];
            let p: Vec<f64> = match self {
                Reference::Plane { normal, offset } => {
                    let nu = unit(normal);
                    let d = dot(x, &nu) - offset;
                    if d.abs() > h {
                        continue;
                    }
                    x.iter().zip(&nu).map(|(a, c)| a - d * c).collect()
                }
                Reference::Sphere { center, radius } => {
                    let v: Vec<f64> = x.iter().zip(center).map(|(a, c)| a - c).collect();
                    let r = v.iter().map(|c| c * c).sum::<f64>().sqrt();
                    if (r - radius).abs() > h || r == 0.0 {
                        continue;
                    }
                    v.iter().zip(center).map(|(a, c)| c + a * radius / r).collect()
                }
            };
            if region.contains(&p) {
                out.push(p);
            }
        }
        out
    }
}

/// A full sweep description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub well: WellSpec,
    pub grid: GridSpec,
    pub ansatz: AnsatzSpec,
    /// Strictly decreasing.
    pub eps: Vec<f64>,
    #[serde(default)]
    pub solve: SolveConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsToggles,
    pub output: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.eps.is_empty() {
            return Err(Error::InvalidArgument("empty eps list".into()));
        }
        if self.eps.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(Error::InvalidArgument("eps values must be positive".into()));
        }
        if self.eps.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidArgument("eps list must be strictly decreasing".into()));
        }
        if let Some(ppe) = self.grid.points_per_eps {
            if ppe < 1.0 / MAX_H_OVER_EPS {
                return Err(Error::InvalidArgument(format!(
                    "points_per_eps = {ppe} is below {}",
                    1.0 / MAX_H_OVER_EPS
                )));
            }
        }
        self.solve.validate()?;
        if let Some(f) = &self.diagnostics.fibers {
            f.validate()?;
        }
        if let Some(hs) = &self.grid.spacings {
            if hs.len() != self.eps.len() {
                return Err(Error::InvalidArgument("one spacing per eps is required".into()));
            }
        }
        for (index, &eps) in self.eps.iter().enumerate() {
            let grid = self.grid.build(eps, index)?;
            self.ansatz.check_dims(grid.dim())?;
            for a in self.ansatz.resolved_axes(grid.dim()) {
                if grid.spacing(a) > MAX_H_OVER_EPS * eps * (1.0 + 1e-9) {
                    return Err(Error::InvalidGrid(format!(
                        "axis {a}: spacing {} does not resolve eps = {eps}",
                        grid.spacing(a)
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Directory name of one ε entry, e.g. `eps-0.025`.
pub fn eps_dir_name(eps: f64) -> String {
    format!("eps-{eps}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowSummary {
    pub converged: bool,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub final_step: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewtonSummary {
    pub converged: bool,
    pub diverged: bool,
    pub iterations: usize,
    pub minres_steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilitySummary {
    /// `None` when the state was not critical enough to certify.
    pub certified: Option<bool>,
    pub lambda_min: f64,
    pub residual: f64,
    pub iterations: usize,
    pub slack: f64,
    /// Largest `lhs / rhs` of the B-stability inequality over the trials.
    pub b_stability_worst: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlicingSummary {
    pub level: f64,
    pub curves: usize,
    pub closed_curves: usize,
    /// Mean over fibers of the summed curvature integrals.
    pub mean_curvature_integral: f64,
    /// Smallest `|turning|` among open curves of the middle fiber.
    pub min_open_turning: Option<f64>,
    pub lemma43_lhs: f64,
    pub lemma43_rhs: f64,
    pub fraction_outside: Option<f64>,
    /// Layer counts of the middle fiber, one per reference disk.
    pub layer_counts: Option<Vec<usize>>,
    pub hausdorff: Option<f64>,
    /// `sqrt(2) atanh(0.9) eps + 2h`.
    pub hausdorff_bound: f64,
}

/// Everything recorded for one ε.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsReport {
    pub eps: f64,
    pub h: f64,
    pub shape: Vec<usize>,
    pub flow: Option<FlowSummary>,
    pub newton: Option<NewtonSummary>,
    pub residual_norm: f64,
    pub energy: f64,
    pub stability: Option<StabilitySummary>,
    pub diagnostics: Option<DiagnosticsReport>,
    pub slicing: Option<SlicingSummary>,
    /// Stage failures, in pipeline order.
    pub errors: Vec<String>,
}

impl EpsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Runs the pipeline for the `index`-th ε and writes its directory. Stage
/// failures are recorded in the report; only I/O and setup failures are
/// returned.
pub fn run_eps(cfg: &ExperimentConfig, index: usize, dir: &Path) -> Result<EpsReport> {
    let eps = *cfg
        .eps
        .get(index)
        .ok_or_else(|| Error::InvalidArgument(format!("no sweep entry {index}")))?;
    let well = cfg.well.load()?;
    let grid = cfg.grid.build(eps, index)?;
    let u0 = generate(&cfg.ansatz, &grid, eps, &well)?;
    let mut state = PhaseState::with_boundary(u0, eps, well, cfg.solve.boundary)?;
    let toggles = &cfg.diagnostics;
    let mut errors = Vec::new();

    let mut flow = None;
    if toggles.flow {
        match gradient_flow(&state, &cfg.solve) {
            Ok(out) => {
                flow = Some(FlowSummary {
                    converged: out.converged,
                    accepted_steps: out.accepted_steps,
                    rejected_steps: out.rejected_steps,
                    final_step: out.final_step,
                });
                state = out.state;
            }
            Err(e) => errors.push(format!("flow: {e}")),
        }
    }
    let mut newton = None;
    if toggles.newton {
        match newton_refine(&state, &cfg.solve) {
            Ok(out) => {
                newton = Some(NewtonSummary {
                    converged: out.converged,
                    diverged: out.diverged,
                    iterations: out.iterations,
                    minres_steps: out.minres_steps,
                });
                state = out.state;
            }
            Err(e) => errors.push(format!("newton: {e}")),
        }
    }

    let stability = if toggles.certify {
        certify(&mut state, toggles, cfg.seed, &mut errors)
    } else {
        None
    };

    let diagnostics = if toggles.varifold {
        let opts = DiagnosticsOptions {
            seed: cfg.seed,
            battery: toggles.battery,
            centers: toggles.monotonicity_centers.clone(),
            radii: toggles.monotonicity_radii.clone(),
        };
        match DiffuseVarifold::new(&state).diagnose(&opts) {
            Ok(r) => Some(r),
            Err(e) => {
                errors.push(format!("diagnostics: {e}"));
                None
            }
        }
    } else {
        None
    };

    fs::create_dir_all(dir)?;
    let slicing = if toggles.slicing && grid.dim() >= 2 {
        match slicing_battery(&state, toggles, dir) {
            Ok(s) => Some(s),
            Err(e) => {
                errors.push(format!("slicing: {e}"));
                None
            }
        }
    } else {
        None
    };

    write_acvf_file(state.u(), dir.join("field.acvf"))?;
    let rows = diagnostics.as_ref().map(|d| d.monotonicity.clone()).unwrap_or_default();
    write_monotonicity_csv_file(&rows, dir.join("monotonicity.csv"))?;

    let report = EpsReport {
        eps,
        h: grid.max_spacing(),
        shape: grid.shape().to_vec(),
        flow,
        newton,
        residual_norm: state.residual_norm(),
        energy: crate::solver::energy(&state, &Region::All),
        stability,
        diagnostics,
        slicing,
        errors,
    };
    // Written last: its presence marks the entry as finished.
    fs::write(dir.join("report.json"), report.to_json()?)?;
    Ok(report)
}

fn certify(
    state: &mut PhaseState,
    toggles: &DiagnosticsToggles,
    seed: u64,
    errors: &mut Vec<String>,
) -> Option<StabilitySummary> {
    let slack = toggles.slack.unwrap_or_else(|| default_slack(state));
    let (certified, report) = match certify_stable_with_report(state, slack) {
        Ok((stable, report)) => (Some(stable), report),
        Err(Error::Precondition(msg)) => {
            errors.push(format!("certify: {msg}"));
            match min_eigenvalue(state) {
                Ok(report) => (None, report),
                Err(e) => {
                    errors.push(format!("eigenvalue: {e}"));
                    return None;
                }
            }
        }
        Err(e) => {
            errors.push(format!("certify: {e}"));
            return None;
        }
    };
    let mut b_stability_worst = None;
    if certified == Some(true) && toggles.b_stability_trials > 0 {
        let mut worst: f64 = 0.0;
        for phi in testfn::random_functions(state.grid(), seed, toggles.b_stability_trials) {
            match check_b_stability(state, &phi) {
                Ok((lhs, rhs)) if rhs > 0.0 => worst = worst.max(lhs / rhs),
                Ok(_) => {}
                Err(e) => errors.push(format!("b-stability: {e}")),
            }
        }
        b_stability_worst = Some(worst);
    }
    Some(StabilitySummary {
        certified,
        lambda_min: report.lambda_min,
        residual: report.residual,
        iterations: report.iterations,
        slack,
        b_stability_worst,
    })
}

fn slicing_battery(state: &PhaseState, toggles: &DiagnosticsToggles, dir: &Path) -> Result<SlicingSummary> {
    let u = state.u();
    let grid = u.grid();
    let n = grid.dim();
    let eps = state.eps();
    let zs = fiber_points(grid);
    let middle = zs.len() / 2;
    let g_region = Region::ball(&vec![0.0; n - 2], 1.0);

    let mut all = Vec::new();
    let mut total_curvature = 0.0;
    let mut min_open_turning: Option<f64> = None;
    for (k, z) in zs.iter().enumerate() {
        let curves = extract_slice(u, toggles.level, z)?;
        total_curvature += curves.iter().map(curvature_integral).sum::<f64>();
        if k == middle {
            for c in curves.iter().filter(|c| !c.closed && !c.is_degenerate()) {
                let t = turning_angle(c).abs();
                min_open_turning = Some(min_open_turning.map_or(t, |m| m.min(t)));
            }
        }
        all.extend(curves);
    }
    slicing::write_slices_csv_file(&all, n - 2, dir.join("slices.csv"))?;

    let lemma = lemma43_terms(u, eps, toggles.level, &g_region)?;

    let (mut fraction, mut layer_counts) = (None, None);
    if let Some(params) = &toggles.fibers {
        let classes = classify_fibers(u, eps, state.well(), params)?;
        fraction = Some(fraction_outside(grid, &classes, &g_region));
        layer_counts = Some(classes[middle].layer_counts.clone());
        slicing::write_fibers_csv_file(&classes, n - 2, dir.join("fibers.csv"))?;
    }

    let hausdorff = match &toggles.reference {
        Some(reference) => {
            let region = grid.interior_box(INTERIOR_SHRINK);
            let a = sublevel_nodes(u, HAUSDORFF_LEVEL, &region);
            let b = reference.samples(grid, &region);
            Some(hausdorff_distance(&a, &b)?)
        }
        None => None,
    };

    Ok(SlicingSummary {
        level: toggles.level,
        curves: all.len(),
        closed_curves: all.iter().filter(|c| c.closed).count(),
        mean_curvature_integral: total_curvature / zs.len() as f64,
        min_open_turning,
        lemma43_lhs: lemma.lhs,
        lemma43_rhs: lemma.rhs,
        fraction_outside: fraction,
        layer_counts,
        hausdorff,
        hausdorff_bound: hausdorff_bound(eps, grid.max_spacing()),
    })
}

/// `sqrt(2) atanh(0.9) eps + 2h`.
pub fn hausdorff_bound(eps: f64, h: f64) -> f64 {
    SQRT_2 * HAUSDORFF_LEVEL.atanh() * eps + 2.0 * h
}

/// Runs every ε of the sweep, skipping entries whose `report.json` already
/// exists, then writes the decay table. Returns the run directory.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let root = cfg.output.clone();
    fs::create_dir_all(&root)?;
    fs::write(root.join("config.json"), cfg.to_json()?)?;
    let mut reports = Vec::with_capacity(cfg.eps.len());
    for (index, &eps) in cfg.eps.iter().enumerate() {
        let dir = root.join(eps_dir_name(eps));
        let done = dir.join("report.json");
        let report = match fs::read_to_string(&done).ok().and_then(|t| serde_json::from_str(&t).ok()) {
            Some(r) => r,
            None => run_eps(cfg, index, &dir)?,
        };
        reports.push(report);
    }
    write_decay_csv(&reports, root.join("decay.csv"))?;
    Ok(root)
}

/// Columns `eps, h, discrepancy_l1, b_density, first_variation_sup,
/// hausdorff`; missing values are empty.
pub fn write_decay_csv(reports: &[EpsReport], path: impl AsRef<Path>) -> Result<()> {
    let mut out = csv::Writer::from_path(path)?;
    out.write_record(["eps", "h", "discrepancy_l1", "b_density", "first_variation_sup", "hausdorff"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in reports {
        let d = r.diagnostics.as_ref();
        out.write_record([
            r.eps.to_string(),
            r.h.to_string(),
            opt(d.map(|d| d.discrepancy_l1)),
            opt(d.map(|d| d.b_density_integral)),
            opt(d.map(|d| d.first_variation_sup)),
            opt(r.slicing.as_ref().and_then(|s| s.hausdorff)),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a finished entry's field back.
pub fn load_field(run: &Path, eps: f64) -> Result<ScalarField> {
    let path = run.join(eps_dir_name(eps)).join("field.acvf");
    if !path.exists() {
        return Err(Error::MissingArtifact(path));
    }
    read_acvf_file(path)
}

/// One acceptance row of a summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub eps: Option<f64>,
    /// `"pass"` or `"fail: <reason>"`.
    pub status: String,
}

impl Check {
    fn new(name: &str, eps: Option<f64>, ok: bool, reason: impl FnOnce() -> String) -> Self {
        Check {
            name: name.into(),
            eps,
            status: if ok { "pass".into() } else { format!("fail: {}", reason()) },
        }
    }

    pub fn passed(&self) -> bool {
        self.status == "pass"
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub reports: Vec<EpsReport>,
    pub checks: Vec<Check>,
    /// Artifacts the configuration promises but the run lacks.
    pub missing: Vec<PathBuf>,
}

impl Summary {
    pub fn all_passed(&self) -> bool {
        self.missing.is_empty() && self.checks.iter().all(Check::passed)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:>10} {:>10} {:>12} {:>12} {:>12} {:>12}",
            "eps", "h", "residual", "lambda_min", "discrepancy", "B density"
        );
        for r in &self.reports {
            let d = r.diagnostics.as_ref();
            let num = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4e}"));
            let _ = writeln!(
                s,
                "{:>10} {:>10.4e} {:>12.4e} {:>12} {:>12} {:>12}",
                r.eps,
                r.h,
                r.residual_norm,
                num(r.stability.as_ref().map(|st| st.lambda_min)),
                num(d.map(|d| d.discrepancy_l1)),
                num(d.map(|d| d.b_density_integral)),
            );
        }
        s.push('\n');
        for c in &self.checks {
            let eps = c.eps.map_or("all".to_string(), |e| e.to_string());
            let _ = writeln!(s, "{:<24} {:>10}  {}", c.name, eps, c.status);
        }
        for m in &self.missing {
            let _ = writeln!(s, "missing {}", m.display());
        }
        s
    }
}

/// Aggregates a run directory into `summary.json` and `summary.txt`.
pub fn report(run: &Path) -> Result<Summary> {
    let config_path = run.join("config.json");
    if !config_path.exists() {
        return Err(Error::MissingArtifact(config_path));
    }
    let cfg = ExperimentConfig::from_file(&config_path)?;
    let mut reports = Vec::new();
    let mut missing = Vec::new();
    for &eps in &cfg.eps {
        let dir = run.join(eps_dir_name(eps));
        let path = dir.join("report.json");
        match fs::read_to_string(&path) {
            Ok(text) => reports.push(serde_json::from_str::<EpsReport>(&text)?),
            Err(_) => {
                missing.push(path);
                continue;
            }
        }
        for f in ["field.acvf", "monotonicity.csv"] {
            if !dir.join(f).exists() {
                missing.push(dir.join(f));
            }
        }
    }
    let checks = acceptance_checks(&cfg, &reports);
    let summary = Summary { reports, checks, missing };
    fs::write(run.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    fs::write(run.join("summary.txt"), summary.to_text())?;
    Ok(summary)
}

/// Per-ε and across-sweep checks against the acceptance thresholds.
pub fn acceptance_checks(cfg: &ExperimentConfig, reports: &[EpsReport]) -> Vec<Check> {
    let mut checks = Vec::new();
    for r in reports {
        let e = Some(r.eps);
        let h2 = r.h * r.h;
        if !r.errors.is_empty() {
            checks.push(Check::new("stages", e, false, || r.errors.join("; ")));
        }
        if let Some(st) = &r.stability {
            let status = match st.certified {
                Some(true) => Check::new("stability", e, true, String::new),
                _ if st.lambda_min < 0.0 => Check::new("stability", e, false, || "λ_min < 0".into()),
                _ => Check::new("stability", e, false, || "not certified".into()),
            };
            checks.push(status);
            if let Some(w) = st.b_stability_worst {
                checks.push(Check::new("b_stability", e, w <= 1.05, || format!("ratio {w:.4}")));
            }
        }
        if let Some(d) = &r.diagnostics {
            let fv = d.first_variation_sup;
            checks.push(Check::new("stationarity", e, fv <= 10.0 * h2, || format!("{fv:.3e} > 10h²")));
            let gb = d.gradient_bound_violation;
            checks.push(Check::new("gradient_bound", e, gb <= 1e-3, || format!("{gb:.3e} > 1e-3")));
        }
        if let Some(s) = &r.slicing {
            let ok = s.lemma43_lhs <= s.lemma43_rhs * 1.05;
            checks.push(Check::new("lemma43", e, ok, || {
                format!("lhs {:.4e} > 1.05 rhs {:.4e}", s.lemma43_lhs, s.lemma43_rhs)
            }));
            if let Some(hd) = s.hausdorff {
                checks.push(Check::new("hausdorff", e, hd <= s.hausdorff_bound, || {
                    format!("{hd:.4e} > {:.4e}", s.hausdorff_bound)
                }));
            }
            if let Some(f) = s.fraction_outside {
                checks.push(Check::new("fibers", e, f == 0.0, || format!("fraction {f}")));
            }
            if matches!(cfg.ansatz, AnsatzSpec::TripleJunction { .. }) {
                let t = s.min_open_turning.unwrap_or(0.0);
                checks.push(Check::new("turning", e, t >= PI / 3.0 * 0.9, || format!("{t:.4} < 0.9 π/3")));
            }
        }
    }
    let disc: Vec<f64> = reports
        .iter()
        .filter_map(|r| r.diagnostics.as_ref().map(|d| d.discrepancy_l1))
        .collect();
    if disc.len() >= 2 {
        let ok = disc.windows(2).all(|w| w[1] < w[0]);
        checks.push(Check::new("discrepancy_decreasing", None, ok, || format!("{disc:?}")));
    }
    checks
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::varifold::DiffuseVarifold;

    fn flat_cfg(dir: &Path) -> ExperimentConfig {
        ExperimentConfig {
            well: WellSpec::Quartic,
            grid: GridSpec {
                low: vec![-1.0, -1.0],
                high: vec![1.0, 1.0],
                shape: None,
                points_per_eps: Some(8.0),
                spacings: None,
            },
            ansatz: AnsatzSpec::FlatInterface { normal: vec![0.0, 1.0], offset: 0.0 },
            eps: vec![0.2, 0.1],
            solve: SolveConfig::default(),
            diagnostics: DiagnosticsToggles {
                b_stability_trials: 3,
                battery: 3,
                reference: Some(Reference::Plane { normal: vec![0.0, 1.0], offset: 0.0 }),
                ..Default::default()
            },
            output: dir.to_path_buf(),
            seed: 1,
        }
    }

    #[test]
    fn flat_interface_is_the_profile() {
        let g = Grid::cube(2, -1.0, 1.0, 41).unwrap();
        let u = generate(
            &AnsatzSpec::FlatInterface { normal: vec![0.0, 2.0], offset: 0.0 },
            &g,
            0.4,
            &DoubleWell::Quartic,
        )
        .unwrap();
        for k in 0..g.len() {
            let x = g.position(k);
            assert!((u.values()[k] - (x[1] / (0.4 * SQRT_2)).tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn sphere_center_is_inside_phase() {
        let g = Grid::cube(3, -1.0, 1.0, 81).unwrap();
        let eps = 0.1;
        let spec = AnsatzSpec::SphereShell { center: vec![0.0; 3], radius: 0.9 };
        assert!(generate(&spec, &g, eps, &DoubleWell::Quartic).is_err());
        let eps = 0.08;
        let g = Grid::cube(2, -1.0, 1.0, 201).unwrap();
        let u = generate(&spec, &g, eps, &DoubleWell::Quartic).unwrap_err();
        assert!(matches!(u, Error::InvalidArgument(_)));
        let spec = AnsatzSpec::SphereShell { center: vec![0.0; 2], radius: 10.0 * eps };
        let u = generate(&spec, &g, eps, &DoubleWell::Quartic).unwrap();
        assert!(u.min() >= -1.0 && u.max() <= 1.0);
        assert!(u.values()[g.index(&[100, 100])] < -0.99);
    }

    #[test]
    fn double_layer_has_twice_the_mass() {
        let eps = 0.02;
        let g = Grid::new(vec![-0.5, -0.5], vec![0.5, 0.5], vec![81, 401]).unwrap();
        let well = DoubleWell::Quartic;
        let mass = |spec: &AnsatzSpec| {
            let u = generate(spec, &g, eps, &well).unwrap();
            let s = PhaseState::new(u, eps, well.clone()).unwrap();
            DiffuseVarifold::new(&s).mass(&Region::All)
        };
        let single = mass(&AnsatzSpec::FlatInterface { normal: vec![0.0, 1.0], offset: 0.0 });
        let double = mass(&AnsatzSpec::DoubleLayer {
            normal: vec![0.0, 1.0],
            offset: 0.0,
            separation: 20.0 * eps,
        });
        assert!((double / single - 2.0).abs() < 1e-3, "{double} {single}");
        let u = generate(
            &AnsatzSpec::DoubleLayer { normal: vec![0.0, 1.0], offset: 0.0, separation: 20.0 * eps },
            &g,
            eps,
            &well,
        )
        .unwrap();
        assert!(u.values()[g.index(&[40, 200])] < -0.999);
        assert!(u.values()[g.index(&[40, 0])] > 0.999);
    }

    #[test]
    fn far_field_is_a_pure_phase() {
        let eps = 0.02;
        let g = Grid::cube(2, -0.6, 0.6, 481).unwrap();
        let spec = AnsatzSpec::TripleJunction { center: vec![0.0, 0.0], angle_offset: 0.3, half_width: 5.0 };
        let u = generate(&spec, &g, eps, &DoubleWell::Quartic).unwrap();
        assert!(u.values().iter().all(|v| v.abs() <= 1.0));
        // (-0.6, 0) is about 0.41 from the nearest leg.
        assert!(u.values()[g.index(&[0, 240])] > 1.0 - 1e-6);
        assert!(u.values()[g.index(&[240, 240])] < -0.999);
        // The leg cross-section 0.5 away from the junction is the profile
        // about the band edge.
        let leg = [0.3f64.cos(), 0.3f64.sin()];
        let normal = [-leg[1], leg[0]];
        for s in [0.0, 0.5, 1.0, 2.0] {
            let d = (5.0 + s) * eps;
            let p = [0.5 * leg[0] + d * normal[0], 0.5 * leg[1] + d * normal[1]];
            let v = crate::field::sample_cubic(&u, &p).unwrap();
            assert!((v - (s / SQRT_2).tanh()).abs() < 0.05 * (s / SQRT_2).tanh().abs().max(0.1));
        }
    }

    #[test]
    fn unresolved_eps_is_rejected() {
        let g = Grid::cube(2, -1.0, 1.0, 21).unwrap();
        let spec = AnsatzSpec::FlatInterface { normal: vec![1.0, 0.0], offset: 0.0 };
        assert!(generate(&spec, &g, 0.5, &DoubleWell::Quartic).is_err());
        assert!(generate(&spec, &g, 0.8, &DoubleWell::Quartic).is_ok());
        // Coarse axes along which the field is constant are fine.
        let g = Grid::new(vec![-1.0, -1.0], vec![1.0, 1.0], vec![161, 8]).unwrap();
        assert!(generate(&spec, &g, 0.1, &DoubleWell::Quartic).is_ok());
    }

    #[test]
    fn config_validation() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = flat_cfg(dir.path());
        assert!(cfg.validate().is_ok());
        cfg.eps = vec![0.1, 0.1];
        assert!(cfg.validate().is_err());
        cfg.eps = vec![0.1, 0.2];
        assert!(cfg.validate().is_err());
        cfg.eps = vec![0.1];
        cfg.grid.points_per_eps = Some(4.0);
        assert!(cfg.validate().is_err());
        cfg.grid.points_per_eps = None;
        cfg.grid.shape = Some(vec![21, 21]);
        assert!(cfg.validate().is_err());
        cfg.grid.shape = None;
        cfg.eps = vec![0.1, 0.05];
        cfg.grid.spacings = Some(vec![0.01]);
        assert!(cfg.validate().is_err());
        cfg.grid.spacings = Some(vec![0.01, 0.004]);
        assert!(cfg.validate().is_ok());
        cfg.grid.spacings = Some(vec![0.01, 0.01]);
        assert!(cfg.validate().is_err());
        let json = flat_cfg(dir.path()).to_json().unwrap();
        assert_eq!(ExperimentConfig::from_json(&json).unwrap(), flat_cfg(dir.path()));
        assert!(ExperimentConfig::from_json(&json.replace("\"seed\"", "\"sed\"")).is_err());
    }

    #[test]
    fn sweep_report_and_resume() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = flat_cfg(dir.path());
        let run = run_sweep(&cfg).unwrap();
        for eps in &cfg.eps {
            let d = run.join(eps_dir_name(*eps));
            for f in ["report.json", "field.acvf", "monotonicity.csv", "slices.csv"] {
                assert!(d.join(f).exists(), "{f}");
            }
        }
        let first = fs::read(run.join(eps_dir_name(0.1)).join("report.json")).unwrap();
        let summary = report(&run).unwrap();
        // At fixed h/eps the discrepancy is pure discretization error and
        // does not decrease; everything else passes.
        for c in &summary.checks {
            assert!(c.passed() || c.name == "discrepancy_decreasing", "{}", summary.to_text());
        }
        assert!(summary.missing.is_empty());
        assert!(run.join("summary.txt").exists());
        let decay = fs::read_to_string(run.join("decay.csv")).unwrap();
        assert_eq!(decay.lines().count(), 3);

        // A finished entry is not recomputed.
        let marker = run.join(eps_dir_name(0.1)).join("field.acvf");
        fs::remove_file(&marker).unwrap();
        run_sweep(&cfg).unwrap();
        assert!(!marker.exists());
        assert!(report(&run).unwrap().missing.contains(&marker));

        // A removed report is.
        fs::remove_file(run.join(eps_dir_name(0.1)).join("report.json")).unwrap();
        run_sweep(&cfg).unwrap();
        assert!(marker.exists());
        assert_eq!(fs::read(run.join(eps_dir_name(0.1)).join("report.json")).unwrap(), first);
    }

    #[test]
    fn empty_run_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(report(dir.path()), Err(Error::MissingArtifact(_))));
    }

    #[test]
    fn unstable_constant_is_reported_not_crashed() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = flat_cfg(dir.path());
        cfg.ansatz = AnsatzSpec::Constant { value: 0.0 };
        cfg.grid = GridSpec::fixed(vec![0.0, 0.0], vec![1.0, 1.0], vec![17, 17]);
        cfg.eps = vec![0.1];
        cfg.diagnostics.reference = None;
        let run = run_sweep(&cfg).unwrap();
        let summary = report(&run).unwrap();
        let row = summary.checks.iter().find(|c| c.name == "stability").unwrap();
        assert_eq!(row.status, "fail: λ_min < 0");
    }

    #[test]
    fn constant_one_has_zero_diagnostics() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = flat_cfg(dir.path());
        cfg.ansatz = AnsatzSpec::Constant { value: 1.0 };
        cfg.diagnostics.reference = None;
        let run = run_sweep(&cfg).unwrap();
        let summary = report(&run).unwrap();
        for r in &summary.reports {
            let d = r.diagnostics.as_ref().unwrap();
            assert_eq!(d.mass, 0.0);
            assert_eq!(d.discrepancy_l1, 0.0);
            assert_eq!(d.b_density_integral, 0.0);
            assert_eq!(d.first_variation_sup, 0.0);
            let s = r.slicing.as_ref().unwrap();
            assert_eq!(s.curves, 0);
            assert_eq!((s.lemma43_lhs, s.lemma43_rhs), (0.0, 0.0));
        }
    }
}
