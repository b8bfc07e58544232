//! The double-well potential `W` and everything that depends on `W` alone.
//!
//! Two kinds of wells are supported: the quartic `(1 - s²)² / 4`, and wells
//! tabulated on `[-A, A]` (with `A >= 2`) and interpolated by a natural cubic
//! spline. A tabulated well is accepted only if a dense scan confirms the
//! usual hypotheses: `W >= 0`, nondegenerate zeros at `±1`, and exactly three
//! critical points.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of sample points used to certify a tabulated well.
const SCAN_SAMPLES: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DoubleWell {
    Quartic,
    Tabulated(TabulatedWell),
}

impl Default for DoubleWell {
    fn default() -> Self {
        DoubleWell::Quartic
    }
}

impl DoubleWell {
    /// Builds a spline-interpolated well from samples and certifies it.
    pub fn tabulated(nodes: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let well = DoubleWell::Tabulated(TabulatedWell::new(nodes, values)?);
        well.validate()?;
        Ok(well)
    }

    /// Loads a tabulated well from a two-column CSV file `s, W(s)` with a
    /// header line.
    pub fn from_csv(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())?;
        Self::from_csv_reader(file)
    }

    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut nodes = Vec::new();
        let mut values = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            if record.len() != 2 {
                return Err(Error::InvalidWell(format!(
                    "row {} has {} columns, expected 2",
                    line + 2,
                    record.len()
                )));
            }
            let parse = |k: usize| {
                record[k].parse::<f64>().map_err(|e| {
                    Error::InvalidWell(format!("row {}: {:?}: {e}", line + 2, &record[k]))
                })
            };
            nodes.push(parse(0)?);
            values.push(parse(1)?);
        }
        Self::tabulated(nodes, values)
    }

    /// Interval on which the well may be evaluated.
    pub fn domain(&self) -> (f64, f64) {
        match self {
            DoubleWell::Quartic => (f64::NEG_INFINITY, f64::INFINITY),
            DoubleWell::Tabulated(t) => (t.nodes[0], t.nodes[t.nodes.len() - 1]),
        }
    }

    /// `W`, `W'` or `W''` at `s`, checked against the tabulated range.
    pub fn eval(&self, s: f64, order: usize) -> Result<f64> {
        if order > 2 {
            return Err(Error::InvalidArgument(format!(
                "derivative order {order} not in {{0, 1, 2}}"
            )));
        }
        let (lo, hi) = self.domain();
        if !(s >= lo && s <= hi) {
            return Err(Error::Domain(format!("s = {s} outside [{lo}, {hi}]")));
        }
        Ok(match order {
            0 => self.value(s),
            1 => self.first(s),
            _ => self.second(s),
        })
    }

    /// `W(s)`. Tabulated wells are extended past their range by the end
    /// spline pieces; use [`DoubleWell::eval`] for a checked evaluation.
    #[inline]
    pub fn value(&self, s: f64) -> f64 {
        match self {
            DoubleWell::Quartic => {
                let a = 1.0 - s * s;
                0.25 * a * a
            }
            DoubleWell::Tabulated(t) => t.spline.eval(s, 0),
        }
    }

    #[inline]
    pub fn first(&self, s: f64) -> f64 {
        match self {
            DoubleWell::Quartic => s * s * s - s,
            DoubleWell::Tabulated(t) => t.spline.eval(s, 1),
        }
    }

    #[inline]
    pub fn second(&self, s: f64) -> f64 {
        match self {
            DoubleWell::Quartic => 3.0 * s * s - 1.0,
            DoubleWell::Tabulated(t) => t.spline.eval(s, 2),
        }
    }

    /// Checks the double-well hypotheses by dense sampling. The quartic
    /// passes trivially.
    pub fn validate(&self) -> Result<()> {
        let DoubleWell::Tabulated(t) = self else {
            return Ok(());
        };
        let (lo, hi) = (t.nodes[0], t.nodes[t.nodes.len() - 1]);
        let step = (hi - lo) / (SCAN_SAMPLES - 1) as f64;
        let samples: Vec<f64> = (0..SCAN_SAMPLES).map(|k| lo + step * k as f64).collect();

        let scale = samples.iter().map(|&s| self.value(s)).fold(1.0_f64, f64::max);
        for &s in &samples {
            if self.value(s) < -1e-9 * scale {
                return Err(Error::InvalidWell(format!("W({s}) = {} < 0", self.value(s))));
            }
        }
        for s in [-1.0, 1.0] {
            if self.value(s).abs() > 1e-8 * scale {
                return Err(Error::InvalidWell(format!("W({s}) = {} != 0", self.value(s))));
            }
            if self.second(s) <= 0.0 {
                return Err(Error::InvalidWell(format!("W''({s}) = {} <= 0", self.second(s))));
            }
        }

        let mut changes = Vec::new();
        let mut last_sign = 0.0;
        for &s in &samples {
            let d = self.first(s);
            let sign = if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            };
            if sign != 0.0 {
                if last_sign != 0.0 && sign != last_sign {
                    changes.push(s);
                }
                last_sign = sign;
            }
        }
        if changes.len() != 3 {
            return Err(Error::InvalidWell(format!(
                "W' changes sign {} times, expected 3 (at {changes:?})",
                changes.len()
            )));
        }
        let near = |a: f64, b: f64| (a - b).abs() <= 2.0 * step;
        if !near(changes[0], -1.0) || !near(changes[2], 1.0) || changes[1].abs() >= 1.0 {
            return Err(Error::InvalidWell(format!(
                "critical points at {changes:?} are not minima at ±1 around one interior maximum"
            )));
        }
        Ok(())
    }

    /// Location of the interior local maximum of `W` on `(-1, 1)`.
    pub fn interior_maximum(&self) -> f64 {
        if let DoubleWell::Quartic = self {
            return 0.0;
        }
        // W' > 0 just right of -1 and < 0 just left of 1.
        let (mut a, mut b) = (-1.0 + 1e-6, 1.0 - 1e-6);
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if self.first(m) > 0.0 {
                a = m;
            } else {
                b = m;
            }
            if b - a < 1e-15 {
                break;
            }
        }
        0.5 * (a + b)
    }

    /// Surface tension `σ = ∫_{-1}^{1} sqrt(W(s)/2) ds`.
    pub fn sigma(&self) -> f64 {
        self.sigma_between(-1.0, 1.0)
    }

    pub(crate) fn sigma_between(&self, a: f64, b: f64) -> f64 {
        let f = |s: f64| (self.value(s).max(0.0) * 0.5).sqrt();
        adaptive_simpson(&f, a, b, 1e-12)
    }

    /// `½ sqrt(min_{|t| <= 3/4} W(t))`, the gradient threshold used by the
    /// fiber classifier.
    pub fn gradient_threshold(&self) -> f64 {
        let m = (0..=3000)
            .map(|k| -0.75 + 1.5 * k as f64 / 3000.0)
            .map(|t| self.value(t))
            .fold(f64::INFINITY, f64::min);
        0.5 * m.max(0.0).sqrt()
    }
}

/// Spline-interpolated samples of a well.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabulatedWell {
    nodes: Vec<f64>,
    values: Vec<f64>,
    #[serde(skip)]
    spline: CubicSpline,
}

impl TabulatedWell {
    fn new(nodes: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if nodes.len() != values.len() {
            return Err(Error::InvalidWell("node and value counts differ".into()));
        }
        if nodes.len() < 5 {
            return Err(Error::InvalidWell("need at least 5 samples".into()));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidWell("nodes must be strictly increasing".into()));
        }
        if nodes.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(Error::InvalidWell("non-finite sample".into()));
        }
        if nodes[0] > -2.0 || nodes[nodes.len() - 1] < 2.0 {
            return Err(Error::InvalidWell(format!(
                "samples span [{}, {}], need at least [-2, 2]",
                nodes[0],
                nodes[nodes.len() - 1]
            )));
        }
        let spline = CubicSpline::natural(&nodes, &values);
        Ok(TabulatedWell {
            nodes,
            values,
            spline,
        })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Natural cubic spline in second-derivative form.
#[derive(Clone, Debug, Default, PartialEq)]
struct CubicSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl CubicSpline {
    fn natural(x: &[f64], y: &[f64]) -> Self {
        let n = x.len();
        let mut m = vec![0.0; n];
        // Tridiagonal system for interior second derivatives.
        let mut diag = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        let mut upper = vec![0.0; n];
        for i in 1..n - 1 {
            let h0 = x[i] - x[i - 1];
            let h1 = x[i + 1] - x[i];
            diag[i] = 2.0 * (h0 + h1);
            upper[i] = h1;
            rhs[i] = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
        }
        // Thomas elimination; lower coefficient of row i is h_{i-1}.
        for i in 2..n - 1 {
            let lower = x[i] - x[i - 1];
            let f = lower / diag[i - 1];
            diag[i] -= f * upper[i - 1];
            rhs[i] -= f * rhs[i - 1];
        }
        for i in (1..n - 1).rev() {
            let next = if i + 1 < n - 1 { m[i + 1] } else { 0.0 };
            m[i] = (rhs[i] - upper[i] * next) / diag[i];
        }
        CubicSpline {
            x: x.to_vec(),
            y: y.to_vec(),
            m,
        }
    }

    fn eval(&self, s: f64, order: usize) -> f64 {
        let n = self.x.len();
        let k = match self.x.partition_point(|&xi| xi <= s) {
            0 => 0,
            p if p >= n => n - 2,
            p => p - 1,
        };
        let (x0, x1) = (self.x[k], self.x[k + 1]);
        let (y0, y1) = (self.y[k], self.y[k + 1]);
        let (m0, m1) = (self.m[k], self.m[k + 1]);
        let h = x1 - x0;
        let a = (x1 - s) / h;
        let b = (s - x0) / h;
        match order {
            0 => a * y0 + b * y1 + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0,
            1 => (y1 - y0) / h + ((1.0 - 3.0 * a * a) * m0 + (3.0 * b * b - 1.0) * m1) * h / 6.0,
            _ => a * m0 + b * m1,
        }
    }
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn step(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    // Start from a few panels so that symmetric integrands cannot fool the
    // first error estimate.
    let panels = 8;
    let width = (b - a) / panels as f64;
    (0..panels)
        .map(|k| {
            let lo = a + width * k as f64;
            let hi = lo + width;
            let (flo, fmid, fhi) = (f(lo), f(0.5 * (lo + hi)), f(hi));
            let s = (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi);
            step(f, lo, hi, flo, fmid, fhi, s, tol / panels as f64, 40)
        })
        .sum::<f64>()
}

/// The one-dimensional heteroclinic profile `q0` with `q0'' = W'(q0)`,
/// `q0(±∞) = ±1` and `q0(0)` at the interior maximum of `W`.
///
/// The profile is integrated from the first-order form
/// `q0' = sqrt(2 W(q0))` by step-doubling RK4 and stored with `q0'` and
/// `q0''` at every node, so evaluation is quintic Hermite interpolation.
/// Beyond the table the profile continues with its exponential tails.
#[derive(Clone, Debug)]
pub struct StandingWave {
    well: DoubleWell,
    times: Vec<f64>,
    values: Vec<f64>,
    upper_rate: f64,
    lower_rate: f64,
}

impl StandingWave {
    pub fn new(well: &DoubleWell) -> Self {
        let center = well.interior_maximum();
        let forward = integrate_profile(well, center, 1.0);
        let backward = integrate_profile(well, center, -1.0);

        let mut times = Vec::with_capacity(forward.len() + backward.len());
        let mut values = Vec::with_capacity(times.capacity());
        for &(t, q) in backward.iter().rev() {
            times.push(t);
            values.push(q);
        }
        for &(t, q) in forward.iter().skip(1) {
            times.push(t);
            values.push(q);
        }
        StandingWave {
            well: well.clone(),
            times,
            values,
            upper_rate: well.second(1.0).sqrt(),
            lower_rate: well.second(-1.0).sqrt(),
        }
    }

    pub fn well(&self) -> &DoubleWell {
        &self.well
    }

    /// Tabulated nodes `(t, q0(t))`.
    pub fn table(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.times.iter().copied().zip(self.values.iter().copied())
    }

    /// `q0(t)`.
    pub fn profile(&self, t: f64) -> f64 {
        let n = self.times.len();
        if t >= self.times[n - 1] {
            let gap = 1.0 - self.values[n - 1];
            return 1.0 - gap * (-self.upper_rate * (t - self.times[n - 1])).exp();
        }
        if t <= self.times[0] {
            let gap = self.values[0] + 1.0;
            return -1.0 + gap * (-self.lower_rate * (self.times[0] - t)).exp();
        }
        let k = self.times.partition_point(|&ti| ti <= t) - 1;
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let (q0, q1) = (self.values[k], self.values[k + 1]);
        let slope = |q: f64| (2.0 * self.well.value(q).max(0.0)).sqrt();
        let curv = |q: f64| self.well.first(q);
        quintic_hermite(
            t0,
            t1,
            [q0, slope(q0), curv(q0)],
            [q1, slope(q1), curv(q1)],
            t,
        )
    }

    /// `q0'(t)`, from the first-order form of the profile equation.
    pub fn slope(&self, t: f64) -> f64 {
        (2.0 * self.well.value(self.profile(t)).max(0.0)).sqrt()
    }

    /// `q0(x / eps)`.
    pub fn eval(&self, eps: f64, x: f64) -> f64 {
        self.profile(x / eps)
    }

    /// `t` with `q0(t) = value`, for `value` in `(-1, 1)`.
    pub fn inverse(&self, value: f64) -> f64 {
        let (mut a, mut b) = (-60.0, 60.0);
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if self.profile(m) < value {
                a = m;
            } else {
                b = m;
            }
        }
        0.5 * (a + b)
    }
}

/// Convenience wrapper: `q0(x / eps)` for a freshly built profile. Build a
/// [`StandingWave`] once when evaluating many points.
pub fn standing_wave(well: &DoubleWell, eps: f64, x: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps = {eps} must be positive")));
    }
    Ok(StandingWave::new(well).eval(eps, x))
}

/// Integrates `q' = dir * sqrt(2 W(q))`, `q(0) = center` in time direction
/// `dir` until `q` is within `1e-13` of the well at `dir`.
fn integrate_profile(well: &DoubleWell, center: f64, dir: f64) -> Vec<(f64, f64)> {
    const TOL: f64 = 1e-14;
    const MAX_STEP: f64 = 0.05;
    let f = |q: f64| (2.0 * well.value(q).max(0.0)).sqrt();
    let rk4 = |q: f64, h: f64| {
        let k1 = f(q);
        let k2 = f(q + 0.5 * h * k1);
        let k3 = f(q + 0.5 * h * k2);
        let k4 = f(q + h * k3);
        q + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    };

    let mut out = vec![(0.0, center)];
    let (mut t, mut q) = (0.0_f64, center);
    let mut h = 1e-3;
    while (dir - q).abs() > 1e-13 && t.abs() < 200.0 {
        let step = dir * h;
        let full = rk4(q, step);
        let half = rk4(rk4(q, 0.5 * step), 0.5 * step);
        let err = (half - full).abs() / 15.0;
        if err <= TOL || h <= 1e-8 {
            t += step;
            q = half + (half - full) / 15.0;
            // The profile approaches ±1 monotonically.
            if dir > 0.0 {
                q = q.min(1.0);
            } else {
                q = q.max(-1.0);
            }
            // An interpolated well may vanish slightly short of ±1.
            if q == out[out.len() - 1].1 {
                break;
            }
            out.push((t, q));
        }
        let factor = if err == 0.0 {
            2.0
        } else {
            (0.9 * (TOL / err).powf(0.2)).clamp(0.2, 2.0)
        };
        h = (h * factor).min(MAX_STEP);
    }
    out
}

fn quintic_hermite(t0: f64, t1: f64, a: [f64; 3], b: [f64; 3], t: f64) -> f64 {
    let h = t1 - t0;
    let s = (t - t0) / h;
    let s2 = s * s;
    let s3 = s2 * s;
    let s4 = s3 * s;
    let s5 = s4 * s;
    let h0 = 1.0 - 10.0 * s3 + 15.0 * s4 - 6.0 * s5;
    let h1 = s - 6.0 * s3 + 8.0 * s4 - 3.0 * s5;
    let h2 = 0.5 * (s2 - 3.0 * s3 + 3.0 * s4 - s5);
    let h3 = 0.5 * (s3 - 2.0 * s4 + s5);
    let h4 = -4.0 * s3 + 7.0 * s4 - 3.0 * s5;
    let h5 = 10.0 * s3 - 15.0 * s4 + 6.0 * s5;
    h0 * a[0] + h * h1 * a[1] + h * h * h2 * a[2] + h * h * h3 * b[2] + h * h4 * b[1] + h5 * b[0]
}
