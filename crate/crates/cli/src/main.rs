//! `aclab`: solve, certify, diagnose and slice Allen-Cahn phase fields, and
//! run ε-sweeps.
//!
//! Every subcommand reads an optional JSON experiment config; command-line
//! flags override the corresponding config fields.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use aclab::field::{read_acvf_file, write_acvf_file};
use aclab::harness::{self, generate, run_sweep, ExperimentConfig, WellSpec};
use aclab::slicing::{
    classify_fibers, curvature_integral, extract_slice, fiber_points, turning_angle, write_fibers_csv_file,
    write_slices_csv, FiberParams,
};
use aclab::solver::{energy, gradient_flow_observed, newton_refine};
use aclab::stability::{certify_stable_with_report, default_slack, min_eigenvalue};
use aclab::varifold::{write_monotonicity_csv_file, DiagnosticsOptions, DiffuseVarifold};
use aclab::{Boundary, DoubleWell, PhaseState, Region, ScalarField};
use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "aclab", version, about = "Allen-Cahn critical points and their diffuse-interface geometry")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Relax an ansatz or a stored field to a critical point.
    Solve(SolveArgs),
    /// Compute the smallest Dirichlet eigenvalue and certify stability.
    Certify(CertifyArgs),
    /// Varifold diagnostics of a stored field.
    Diagnose(DiagnoseArgs),
    /// Level-set slices, curvature and fiber classification.
    Slice(SliceArgs),
    /// Run the full pipeline for every ε of a config.
    Sweep(SweepArgs),
    /// Summarize a sweep directory and evaluate its checks.
    Report(ReportArgs),
}

/// A comma-separated coordinate list such as `0.5,0`.
#[derive(Clone, Debug)]
struct Point(Vec<f64>);

impl FromStr for Point {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        s.split(',')
            .filter(|p| !p.trim().is_empty())
            .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(Point)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BoundaryArg {
    Neumann,
    Periodic,
}

/// Where the well and ε come from.
#[derive(Args)]
struct Physics {
    /// Experiment config (JSON); supplies the well, ε and defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// ε; overrides the config entry selected by `--index`.
    #[arg(long)]
    eps: Option<f64>,
    /// Entry of the config's ε list.
    #[arg(long, default_value_t = 0)]
    index: usize,
    /// Two-column CSV `s, W(s)` replacing the well.
    #[arg(long)]
    well_table: Option<PathBuf>,
}

impl Physics {
    fn config(&self) -> Result<Option<ExperimentConfig>> {
        self.config
            .as_ref()
            .map(|p| ExperimentConfig::from_file(p).with_context(|| format!("reading config {}", p.display())))
            .transpose()
    }

    fn eps(&self, cfg: Option<&ExperimentConfig>) -> Result<f64> {
        if let Some(e) = self.eps {
            return Ok(e);
        }
        let cfg = cfg.ok_or_else(|| anyhow!("need --eps or --config"))?;
        cfg.eps
            .get(self.index)
            .copied()
            .ok_or_else(|| anyhow!("config has no eps entry {}", self.index))
    }

    fn well(&self, cfg: Option<&ExperimentConfig>) -> Result<DoubleWell> {
        let spec = match (&self.well_table, cfg) {
            (Some(p), _) => WellSpec::Tabulated { path: p.clone() },
            (None, Some(c)) => c.well.clone(),
            (None, None) => WellSpec::Quartic,
        };
        Ok(spec.load()?)
    }

    fn state(&self, field: &Path) -> Result<(PhaseState, Option<ExperimentConfig>)> {
        let cfg = self.config()?;
        let u = read_acvf_file(field).with_context(|| format!("reading field {}", field.display()))?;
        let s = PhaseState::new(u, self.eps(cfg.as_ref())?, self.well(cfg.as_ref())?)?;
        Ok((s, cfg))
    }
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    physics: Physics,
    /// Start from this field instead of the config's ansatz.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output directory for `field.acvf`, `solve.json` and checkpoints.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    flow_step: Option<f64>,
    #[arg(long)]
    flow_tol: Option<f64>,
    #[arg(long)]
    max_flow_iters: Option<usize>,
    #[arg(long)]
    newton_tol: Option<f64>,
    #[arg(long)]
    newton_max_iters: Option<usize>,
    #[arg(long, value_enum)]
    boundary: Option<BoundaryArg>,
    /// Write `checkpoint-<step>.acvf` every k accepted flow steps.
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Skip the gradient flow and go straight to Newton.
    #[arg(long)]
    no_flow: bool,
}

#[derive(Serialize)]
struct SolveSummary {
    eps: f64,
    shape: Vec<usize>,
    flow_steps: usize,
    flow_converged: bool,
    newton_iterations: usize,
    newton_converged: bool,
    residual_norm: f64,
    energy: f64,
}

fn solve_cmd(a: &SolveArgs) -> Result<()> {
    let cfg = a.physics.config()?;
    let eps = a.physics.eps(cfg.as_ref())?;
    let well = a.physics.well(cfg.as_ref())?;
    let mut solve = cfg.as_ref().map(|c| c.solve.clone()).unwrap_or_default();
    if let Some(v) = a.flow_step {
        solve.flow_step = Some(v);
    }
    if let Some(v) = a.flow_tol {
        solve.flow_tol = v;
    }
    if let Some(v) = a.max_flow_iters {
        solve.max_flow_iters = v;
    }
    if let Some(v) = a.newton_tol {
        solve.newton_tol = v;
    }
    if let Some(v) = a.newton_max_iters {
        solve.newton_max_iters = v;
    }
    if let Some(b) = a.boundary {
        solve.boundary = match b {
            BoundaryArg::Neumann => Boundary::Neumann,
            BoundaryArg::Periodic => Boundary::Periodic,
        };
    }
    if let Some(k) = a.checkpoint_every {
        solve.checkpoint_every = k;
    }
    let out = a
        .output
        .clone()
        .or_else(|| cfg.as_ref().map(|c| c.output.clone()))
        .ok_or_else(|| anyhow!("need --output or --config"))?;

    let u0 = match &a.input {
        Some(p) => read_acvf_file(p).with_context(|| format!("reading field {}", p.display()))?,
        None => {
            let c = cfg.as_ref().ok_or_else(|| anyhow!("need --input or --config"))?;
            let grid = c.grid.build(eps, a.physics.index)?;
            generate(&c.ansatz, &grid, eps, &well)?
        }
    };
    fs::create_dir_all(&out)?;
    let s = PhaseState::with_boundary(u0, eps, well, solve.boundary)?;

    let (s, flow_steps, flow_converged) = if a.no_flow {
        (s, 0, false)
    } else {
        let dir = out.clone();
        let mut observer = |step: usize, st: &PhaseState| -> aclab::Result<()> {
            write_acvf_file(st.u(), dir.join(format!("checkpoint-{step:06}.acvf")))
        };
        let f = gradient_flow_observed(&s, &solve, &mut observer)?;
        (f.state, f.accepted_steps, f.converged)
    };
    let n = newton_refine(&s, &solve)?;
    write_acvf_file(n.state.u(), out.join("field.acvf"))?;
    let summary = SolveSummary {
        eps,
        shape: n.state.grid().shape().to_vec(),
        flow_steps,
        flow_converged,
        newton_iterations: n.iterations,
        newton_converged: n.converged,
        residual_norm: n.state.residual_norm(),
        energy: energy(&n.state, &Region::All),
    };
    let text = serde_json::to_string_pretty(&summary)?;
    fs::write(out.join("solve.json"), &text)?;
    println!("{text}");
    if !n.converged {
        bail!("Newton did not converge (residual {:.3e})", summary.residual_norm);
    }
    Ok(())
}

#[derive(Args)]
struct CertifyArgs {
    #[command(flatten)]
    physics: Physics,
    #[arg(long)]
    field: PathBuf,
    /// Certification slack; defaults to `1e-3 W''(1)/eps`.
    #[arg(long)]
    slack: Option<f64>,
    /// Report λ_min without the criticality precondition.
    #[arg(long)]
    eigen_only: bool,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Serialize)]
struct CertifyReport {
    certified: Option<bool>,
    lambda_min: f64,
    residual: f64,
    iterations: usize,
    slack: f64,
    state_residual: f64,
}

fn certify_cmd(a: &CertifyArgs) -> Result<()> {
    let (mut s, cfg) = a.physics.state(&a.field)?;
    let slack = a
        .slack
        .or_else(|| cfg.as_ref().and_then(|c| c.diagnostics.slack))
        .unwrap_or_else(|| default_slack(&s));
    let (certified, report) = if a.eigen_only {
        (None, min_eigenvalue(&s)?)
    } else {
        let (c, r) = certify_stable_with_report(&mut s, slack)?;
        (Some(c), r)
    };
    let out = CertifyReport {
        certified,
        lambda_min: report.lambda_min,
        residual: report.residual,
        iterations: report.iterations,
        slack,
        state_residual: s.residual_norm(),
    };
    emit(&serde_json::to_string_pretty(&out)?, a.output.as_deref())
}

#[derive(Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    physics: Physics,
    #[arg(long)]
    field: PathBuf,
    /// Seed of the random vector-field battery.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of random vector fields.
    #[arg(long)]
    battery: Option<usize>,
    /// Monotonicity center, e.g. `0,0`; repeatable.
    #[arg(long = "center")]
    centers: Vec<Point>,
    /// Monotonicity radii, comma separated.
    #[arg(long, value_delimiter = ',')]
    radii: Vec<f64>,
    /// Write the monotonicity table as CSV.
    #[arg(long)]
    monotonicity_csv: Option<PathBuf>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

fn diagnose_cmd(a: &DiagnoseArgs) -> Result<()> {
    let (s, cfg) = a.physics.state(&a.field)?;
    let toggles = cfg.as_ref().map(|c| c.diagnostics.clone()).unwrap_or_default();
    let opts = DiagnosticsOptions {
        seed: a.seed.or(cfg.as_ref().map(|c| c.seed)).unwrap_or(0),
        battery: a.battery.unwrap_or(toggles.battery),
        centers: if a.centers.is_empty() {
            toggles.monotonicity_centers
        } else {
            a.centers.iter().map(|p| p.0.clone()).collect()
        },
        radii: if a.radii.is_empty() { toggles.monotonicity_radii } else { a.radii.clone() },
    };
    let report = DiffuseVarifold::new(&s).diagnose(&opts)?;
    if let Some(p) = &a.monotonicity_csv {
        write_monotonicity_csv_file(&report.monotonicity, p)?;
    }
    emit(&report.to_json()?, a.output.as_deref())
}

#[derive(Args)]
struct SliceArgs {
    #[command(flatten)]
    physics: Physics,
    #[arg(long)]
    field: PathBuf,
    /// Level `t` of `{u = t}`.
    #[arg(long, default_value_t = 0.0)]
    level: f64,
    /// Fiber point (3D only, e.g. `0.25`); repeatable. Defaults to every z node.
    #[arg(long = "z")]
    fibers: Vec<Point>,
    /// Write slice vertices as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Reference points `x,y` for fiber classification; repeatable.
    #[arg(long = "ref")]
    refs: Vec<Point>,
    /// Reference disk radius δ for fiber classification.
    #[arg(long)]
    delta: Option<f64>,
    /// Write fiber classes as CSV.
    #[arg(long)]
    fibers_csv: Option<PathBuf>,
    /// Write the JSON summary here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Serialize)]
struct CurveSummary {
    z: Vec<f64>,
    level: f64,
    closed: bool,
    vertices: usize,
    length: f64,
    curvature_integral: f64,
    turning_angle: f64,
}

#[derive(Serialize)]
struct SliceSummary {
    curves: Vec<CurveSummary>,
    fibers: Option<Vec<aclab::slicing::FiberClassification>>,
}

fn slice_cmd(a: &SliceArgs) -> Result<()> {
    let cfg = a.physics.config()?;
    let u: ScalarField = read_acvf_file(&a.field).with_context(|| format!("reading field {}", a.field.display()))?;
    let grid = u.grid().clone();
    if grid.dim() < 2 {
        bail!("slices need a 2D or 3D field");
    }
    let zs: Vec<Vec<f64>> = if a.fibers.is_empty() {
        fiber_points(&grid)
    } else {
        a.fibers.iter().map(|p| p.0.clone()).collect()
    };
    let mut all = Vec::new();
    for z in &zs {
        all.extend(extract_slice(&u, a.level, z)?);
    }
    if let Some(p) = &a.csv {
        write_slices_csv(&all, grid.dim() - 2, fs::File::create(p)?)?;
    }
    let curves = all
        .iter()
        .map(|c| CurveSummary {
            z: c.z.clone(),
            level: c.t,
            closed: c.closed,
            vertices: c.vertices.len(),
            length: c.length(),
            curvature_integral: curvature_integral(c),
            turning_angle: turning_angle(c),
        })
        .collect();

    let params = match (a.refs.is_empty(), a.delta) {
        (true, None) => cfg.as_ref().and_then(|c| c.diagnostics.fibers.clone()),
        (false, Some(d)) => Some(FiberParams::new(
            a.refs
                .iter()
                .map(|p| match p.0.as_slice() {
                    [x, y] => Ok([*x, *y]),
                    _ => Err(anyhow!("reference points need two coordinates")),
                })
                .collect::<Result<_>>()?,
            d,
        )),
        _ => bail!("--ref and --delta go together"),
    };
    let fibers = match params {
        Some(p) => {
            let eps = a.physics.eps(cfg.as_ref())?;
            let well = a.physics.well(cfg.as_ref())?;
            let classes = classify_fibers(&u, eps, &well, &p)?;
            if let Some(path) = &a.fibers_csv {
                write_fibers_csv_file(&classes, grid.dim() - 2, path)?;
            }
            Some(classes)
        }
        None => None,
    };
    emit(&serde_json::to_string_pretty(&SliceSummary { curves, fibers })?, a.output.as_deref())
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Run directory; overrides `output`.
    #[arg(long)]
    output: Option<PathBuf>,
    /// ε list, comma separated; overrides `eps`.
    #[arg(long, value_delimiter = ',')]
    eps: Vec<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Grid points per ε; replaces the config's resolution.
    #[arg(long)]
    points_per_eps: Option<f64>,
    #[arg(long)]
    no_certify: bool,
    #[arg(long)]
    no_varifold: bool,
    #[arg(long)]
    no_slicing: bool,
}

fn sweep_cmd(a: &SweepArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::from_file(&a.config)
        .with_context(|| format!("reading config {}", a.config.display()))?;
    if let Some(o) = &a.output {
        cfg.output = o.clone();
    }
    if !a.eps.is_empty() {
        cfg.eps = a.eps.clone();
        cfg.grid.spacings = None;
        if cfg.grid.points_per_eps.is_none() && cfg.grid.shape.is_none() {
            bail!("--eps replaces the per-ε spacings; also pass --points-per-eps");
        }
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(p) = a.points_per_eps {
        cfg.grid.points_per_eps = Some(p);
        cfg.grid.shape = None;
        cfg.grid.spacings = None;
    }
    cfg.diagnostics.certify &= !a.no_certify;
    cfg.diagnostics.varifold &= !a.no_varifold;
    cfg.diagnostics.slicing &= !a.no_slicing;
    let run = run_sweep(&cfg)?;
    println!("{}", run.display());
    Ok(())
}

#[derive(Args)]
struct ReportArgs {
    /// Sweep directory containing `config.json`.
    #[arg(long)]
    run: PathBuf,
    /// Exit with status 1 if any check fails.
    #[arg(long)]
    strict: bool,
}

fn report_cmd(a: &ReportArgs) -> Result<()> {
    let summary = harness::report(&a.run)?;
    print!("{}", summary.to_text());
    if a.strict && !summary.all_passed() {
        bail!("some checks failed");
    }
    Ok(())
}

fn emit(text: &str, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            writeln!(out, "{text}")?;
            Ok(())
        }
    }
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve(a) => solve_cmd(a),
        Command::Certify(a) => certify_cmd(a),
        Command::Diagnose(a) => diagnose_cmd(a),
        Command::Slice(a) => slice_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::Report(a) => report_cmd(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
