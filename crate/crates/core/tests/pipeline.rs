//! End-to-end runs of the public API on small grids.

use std::f64::consts::{PI, SQRT_2};

use aclab::field::{read_acvf_file, write_acvf_file, Region};
use aclab::harness::{
    generate, hausdorff_bound, report, run_sweep, AnsatzSpec, DiagnosticsToggles, ExperimentConfig, GridSpec,
    Reference, WellSpec,
};
use aclab::slicing::{curvature_integral, extract_slice, hausdorff_distance, sublevel_nodes};
use aclab::solver::{energy, solve};
use aclab::stability::{certify_stable, default_slack};
use aclab::varifold::{DiagnosticsOptions, DiffuseVarifold};
use aclab::{DoubleWell, Grid, PhaseState, ScalarField, SolveConfig};

#[test]
fn perturbed_interface_relaxes_to_a_certified_flat_state() {
    let eps = 0.1;
    let grid = Grid::new(vec![-0.5, -1.0], vec![0.5, 1.0], vec![41, 161]).unwrap();
    // Tilted, off-center, and rough: the flow has to do real work.
    let u0 = ScalarField::from_fn(&grid, |x| {
        ((x[1] - 0.1 + 0.05 * (PI * x[0]).cos()) / (2.0 * eps)).tanh() + 0.05 * (7.0 * x[0]).sin()
    });
    let s = PhaseState::new(u0, eps, DoubleWell::Quartic).unwrap();
    let mut out = solve(&s, &SolveConfig::default()).unwrap().state;
    assert!(out.residual_norm() < 1e-9);

    // A horizontal interface of length 1 carries energy about 2σ.
    let e = energy(&out, &Region::All);
    assert!((e - 2.0 * SQRT_2 / 3.0).abs() < 0.02, "energy {e}");

    let slack = default_slack(&out);
    assert!(certify_stable(&mut out, slack).unwrap());
    assert_eq!(out.certified_stable(), Some(true));

    let v = DiffuseVarifold::new(&out);
    let d = v.diagnose(&DiagnosticsOptions::default()).unwrap();
    assert!(d.first_variation_sup < 1e-3);
    assert!((d.mass - 1.0).abs() < 0.02, "mass {}", d.mass);

    let curves = extract_slice(out.u(), 0.0, &[]).unwrap();
    assert_eq!(curves.len(), 1);
    assert!(!curves[0].closed);
    assert!(curvature_integral(&curves[0]) < 1e-3);
}

#[test]
fn sublevel_set_of_a_disk_is_close_to_its_circle() {
    let eps = 0.05;
    let grid = Grid::cube(2, -1.0, 1.0, 321).unwrap();
    let spec = AnsatzSpec::SphereShell { center: vec![0.0, 0.0], radius: 0.5 };
    let u = generate(&spec, &grid, eps, &DoubleWell::Quartic).unwrap();
    let region = Region::ball(&[0.0, 0.0], 0.9);
    let band = sublevel_nodes(&u, 0.9, &region);
    let circle = Reference::Sphere { center: vec![0.0, 0.0], radius: 0.5 }.samples(&grid, &region);
    let d = hausdorff_distance(&band, &circle).unwrap();
    assert!(d <= hausdorff_bound(eps, grid.spacing(0)), "{d}");
}

#[test]
fn acvf_files_round_trip_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let grid = Grid::new(vec![-1.0, 0.0, 2.0], vec![1.0, 0.5, 3.0], vec![9, 10, 11]).unwrap();
    let f = ScalarField::from_fn(&grid, |x| (x[0] * x[1]).sin() / 3.0 + x[2]);
    let path = dir.path().join("f.acvf");
    write_acvf_file(&f, &path).unwrap();
    assert_eq!(read_acvf_file(&path).unwrap(), f);
}

#[test]
fn sweep_report_and_config_survive_a_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        well: WellSpec::Quartic,
        grid: GridSpec { low: vec![-0.25, -0.5], high: vec![0.25, 0.5], shape: None, points_per_eps: Some(8.0), spacings: None },
        ansatz: AnsatzSpec::FlatInterface { normal: vec![0.0, 1.0], offset: 0.0 },
        eps: vec![0.1, 0.08],
        solve: SolveConfig::default(),
        diagnostics: DiagnosticsToggles {
            reference: Some(Reference::Plane { normal: vec![0.0, 1.0], offset: 0.0 }),
            ..Default::default()
        },
        output: dir.path().to_path_buf(),
        seed: 3,
    };
    let text = cfg.to_json().unwrap();
    assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);

    let run = run_sweep(&cfg).unwrap();
    let summary = report(&run).unwrap();
    assert_eq!(summary.reports.len(), 2);
    assert!(summary.missing.is_empty());
    assert!(run.join("decay.csv").exists());
    assert!(run.join("summary.txt").exists());
    for r in &summary.reports {
        assert!(r.errors.is_empty(), "{:?}", r.errors);
        assert_eq!(r.stability.as_ref().unwrap().certified, Some(true));
    }
}
