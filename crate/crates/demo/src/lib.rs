//! WebAssembly bindings behind `www/index.html`.
//!
//! A [`Lab`] holds one 2D phase field on `[-1, 1]²` with spacing at most
//! `eps / 8`. The page can relax it to a critical point, certify its
//! stability, and trace level curves with their curvature.

use std::f64::consts::PI;

use aclab::harness::{generate, AnsatzSpec};
use aclab::slicing::{curvature_integral, extract_slice, turning_angle};
use aclab::solver::{energy, solve};
use aclab::stability::{certify_stable_with_report, default_slack, min_eigenvalue};
use aclab::{DoubleWell, Grid, PhaseState, Region, SolveConfig};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Smallest ε the page offers; keeps the grid at or below 321².
pub const MIN_EPS: f64 = 0.05;

/// Points per ε along each axis.
const POINTS_PER_EPS: f64 = 8.0;

#[derive(Serialize)]
pub struct RelaxSummary {
    pub converged: bool,
    pub newton_iterations: usize,
    pub residual_norm: f64,
    pub energy: f64,
}

#[derive(Serialize)]
pub struct StabilitySummary {
    /// `None` when the field is not critical, so only λ_min is reported.
    pub certified: Option<bool>,
    pub lambda_min: f64,
    pub slack: f64,
}

#[derive(Serialize)]
pub struct Curve {
    pub closed: bool,
    /// Flattened `x, y` pairs.
    pub points: Vec<f64>,
    pub length: f64,
    pub curvature_integral: f64,
    pub turning_angle: f64,
}

fn ansatz(kind: &str) -> Result<AnsatzSpec, String> {
    Ok(match kind {
        "flat" => AnsatzSpec::FlatInterface { normal: vec![0.0, 1.0], offset: 0.0 },
        "circle" => AnsatzSpec::SphereShell { center: vec![0.0, 0.0], radius: 0.5 },
        "double" => AnsatzSpec::DoubleLayer { normal: vec![0.0, 1.0], offset: 0.0, separation: 0.6 },
        "junction" => AnsatzSpec::TripleJunction { center: vec![0.0, 0.0], angle_offset: PI / 2.0, half_width: 5.0 },
        other => return Err(format!("unknown ansatz {other:?}")),
    })
}

#[wasm_bindgen]
pub struct Lab {
    state: PhaseState,
}

impl Lab {
    pub fn build(kind: &str, eps: f64) -> Result<Lab, String> {
        if !(eps >= MIN_EPS && eps <= 1.0) {
            return Err(format!("eps = {eps} outside [{MIN_EPS}, 1]"));
        }
        let count = (2.0 * POINTS_PER_EPS / eps).ceil() as usize + 1;
        let grid = Grid::cube(2, -1.0, 1.0, count).map_err(|e| e.to_string())?;
        let well = DoubleWell::Quartic;
        let u = generate(&ansatz(kind)?, &grid, eps, &well).map_err(|e| e.to_string())?;
        let state = PhaseState::new(u, eps, well).map_err(|e| e.to_string())?;
        Ok(Lab { state })
    }

    pub fn relax_summary(&mut self) -> Result<RelaxSummary, String> {
        let out = solve(&self.state, &SolveConfig::default()).map_err(|e| e.to_string())?;
        self.state = out.state;
        Ok(RelaxSummary {
            converged: out.converged,
            newton_iterations: out.iterations,
            residual_norm: self.state.residual_norm(),
            energy: energy(&self.state, &Region::All),
        })
    }

    pub fn stability_summary(&mut self) -> Result<StabilitySummary, String> {
        let slack = default_slack(&self.state);
        match certify_stable_with_report(&mut self.state, slack) {
            Ok((ok, r)) => Ok(StabilitySummary { certified: Some(ok), lambda_min: r.lambda_min, slack }),
            Err(aclab::Error::Precondition(_)) => {
                let r = min_eigenvalue(&self.state).map_err(|e| e.to_string())?;
                Ok(StabilitySummary { certified: None, lambda_min: r.lambda_min, slack })
            }
            Err(e) => Err(e.to_string()),
        }
    }

    pub fn curves(&self, level: f64) -> Result<Vec<Curve>, String> {
        let curves = extract_slice(self.state.u(), level, &[]).map_err(|e| e.to_string())?;
        Ok(curves
            .iter()
            .map(|c| Curve {
                closed: c.closed,
                points: c.vertices.iter().flatten().copied().collect(),
                length: c.length(),
                curvature_integral: curvature_integral(c),
                turning_angle: turning_angle(c),
            })
            .collect())
    }
}

fn json<T: Serialize>(v: &T) -> Result<String, JsError> {
    serde_json::to_string(v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
impl Lab {
    /// `kind` is one of `flat`, `circle`, `double`, `junction`.
    #[wasm_bindgen(constructor)]
    pub fn new(kind: &str, eps: f64) -> Result<Lab, JsError> {
        Lab::build(kind, eps).map_err(|e| JsError::new(&e))
    }

    /// Nodes per side.
    pub fn size(&self) -> usize {
        self.state.grid().shape()[0]
    }

    /// Row-major nodal values; the second coordinate varies fastest.
    pub fn values(&self) -> Vec<f64> {
        self.state.u().values().to_vec()
    }

    pub fn energy(&self) -> f64 {
        energy(&self.state, &Region::All)
    }

    /// Flow and Newton to a critical point; JSON summary.
    pub fn relax(&mut self) -> Result<String, JsError> {
        let s = self.relax_summary().map_err(|e| JsError::new(&e))?;
        json(&s)
    }

    /// Smallest Dirichlet eigenvalue of the second variation; JSON summary.
    pub fn certify(&mut self) -> Result<String, JsError> {
        let s = self.stability_summary().map_err(|e| JsError::new(&e))?;
        json(&s)
    }

    /// Level curves `{u = level}` with curvature data; JSON array.
    pub fn slice(&self, level: f64) -> Result<String, JsError> {
        let c = self.curves(level).map_err(|e| JsError::new(&e))?;
        json(&c)
    }
}
