//! Level-set slices in 2-plane fibers, their curvature integrals and
//! turning angles, and the fiber classifiers.
//!
//! The fiber plane holds the first two coordinates `y = (x₁, x₂)`; the fiber
//! point `z` is the remaining coordinate (empty in 2D, where there is a
//! single fiber).

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{gradient, Grid, Region, ScalarField};
use crate::potential::DoubleWell;
use crate::varifold::b_squared;

/// Half-width of the exclusion window around node values that makes a
/// level regular.
pub const REGULAR_GAP: f64 = 1e-10;

/// Thin-shell half-width in units of `max_a h_a max|∂_a u|`, the largest
/// change of `u` along one grid edge.
pub const SHELL_WIDTH: f64 = 3.0;

/// An oriented level-set polyline in one fiber plane, with the field's
/// gradient on its left.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceCurve {
    pub z: Vec<f64>,
    /// Level actually traced after the regularity perturbation.
    pub t: f64,
    pub vertices: Vec<[f64; 2]>,
    pub closed: bool,
    /// Resampling step used by the curvature integral.
    pub step: f64,
}

impl SliceCurve {
    /// Segment list; closed curves include the closing segment.
    fn segments(&self) -> usize {
        match (self.vertices.len(), self.closed) {
            (0 | 1, _) => 0,
            (m, true) => m,
            (m, false) => m - 1,
        }
    }

    fn vertex(&self, k: usize) -> [f64; 2] {
        self.vertices[k % self.vertices.len()]
    }

    /// Cumulative arclength at each vertex; closed curves end with the total
    /// length after the closing segment.
    pub fn arclengths(&self) -> Vec<f64> {
        let mut s = vec![0.0];
        for k in 0..self.segments() {
            let (a, b) = (self.vertex(k), self.vertex(k + 1));
            s.push(s[k] + (b[0] - a[0]).hypot(b[1] - a[1]));
        }
        s
    }

    pub fn length(&self) -> f64 {
        *self.arclengths().last().unwrap_or(&0.0)
    }

    /// Continuously unwrapped direction of each segment of the raw polyline.
    pub fn tangent_angles(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::with_capacity(self.segments());
        for k in 0..self.segments() {
            let (a, b) = (self.vertex(k), self.vertex(k + 1));
            let raw = (b[1] - a[1]).atan2(b[0] - a[0]);
            out.push(match out.last() {
                Some(&prev) => prev + wrap(raw - prev),
                None => raw,
            });
        }
        out
    }

    /// Fewer than three vertices: curvature and turning are reported as 0.
    pub fn is_degenerate(&self) -> bool {
        self.vertices.len() < 3
    }
}

/// Angle reduced to `(-π, π]`.
fn wrap(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// First level `t + 2k·gap` with no value within `gap` of it.
pub fn regular_level(values: &[f64], t: f64) -> f64 {
    let mut level = t;
    for k in 0..=values.len() {
        level = t + 2.0 * REGULAR_GAP * k as f64;
        if values.iter().all(|v| (v - level).abs() >= REGULAR_GAP) {
            break;
        }
    }
    level
}

/// Values and coordinates of one fiber plane.
struct Plane {
    n1: usize,
    n2: usize,
    y1: Vec<f64>,
    y2: Vec<f64>,
    /// Flat grid index of plane node `(i, j)` at `i * n2 + j`.
    nodes: Vec<usize>,
    z: Vec<f64>,
}

impl Plane {
    fn new(grid: &Grid, z: &[f64]) -> Result<Self> {
        let n = grid.dim();
        if n < 2 {
            return Err(Error::InvalidArgument("slices need n >= 2".into()));
        }
        if z.len() != n - 2 {
            return Err(Error::InvalidArgument(format!(
                "fiber point has {} coordinates, expected {}",
                z.len(),
                n - 2
            )));
        }
        let kz = if n == 3 { Some(fiber_index(grid, z[0])?) } else { None };
        let (n1, n2) = (grid.shape()[0], grid.shape()[1]);
        let mut nodes = Vec::with_capacity(n1 * n2);
        for i in 0..n1 {
            for j in 0..n2 {
                nodes.push(match kz {
                    Some(k) => grid.index(&[i, j, k]),
                    None => grid.index(&[i, j]),
                });
            }
        }
        Ok(Plane {
            n1,
            n2,
            y1: (0..n1).map(|i| grid.coord(0, i)).collect(),
            y2: (0..n2).map(|j| grid.coord(1, j)).collect(),
            nodes,
            z: kz.map(|k| vec![grid.coord(2, k)]).unwrap_or_default(),
        })
    }

    fn at(&self, i: usize, j: usize) -> usize {
        self.nodes[i * self.n2 + j]
    }
}

fn fiber_index(grid: &Grid, z: f64) -> Result<usize> {
    let h = grid.spacing(2);
    (0..grid.shape()[2])
        .find(|&k| (grid.coord(2, k) - z).abs() <= 1e-9 * h)
        .ok_or_else(|| Error::InvalidArgument(format!("z = {z} is not on the fiber grid")))
}

/// Fiber points of a grid: the single empty point in 2D, every node of the
/// last axis in 3D.
pub fn fiber_points(grid: &Grid) -> Vec<Vec<f64>> {
    match grid.dim() {
        3 => (0..grid.shape()[2]).map(|k| vec![grid.coord(2, k)]).collect(),
        _ => vec![vec![]],
    }
}

/// Edge identifiers: horizontal edges join `(i, j)` and `(i+1, j)`,
/// vertical edges join `(i, j)` and `(i, j+1)`.
fn edge_key(n2: usize, vertical: bool, i: usize, j: usize) -> usize {
    2 * (i * n2 + j) + vertical as usize
}

/// Level curves of the bilinear interpolant of `u` in the fiber at `z`.
/// Levels outside the value range give an empty list.
pub fn extract_slice(u: &ScalarField, t: f64, z: &[f64]) -> Result<Vec<SliceCurve>> {
    let grid = u.grid();
    let plane = Plane::new(grid, z)?;
    let vals: Vec<f64> = plane.nodes.iter().map(|&k| u.values()[k]).collect();
    let level = regular_level(&vals, t);
    let step = grid.spacing(0).min(grid.spacing(1));
    Ok(trace(&plane, &vals, level)
        .into_iter()
        .map(|(vertices, closed)| SliceCurve {
            z: plane.z.clone(),
            t: level,
            vertices,
            closed,
            step,
        })
        .collect())
}

/// Marching squares. No value equals `level`, so every crossing lies
/// strictly inside its edge.
fn trace(plane: &Plane, vals: &[f64], level: f64) -> Vec<(Vec<[f64; 2]>, bool)> {
    let (n1, n2) = (plane.n1, plane.n2);
    let v = |i: usize, j: usize| vals[i * n2 + j];
    let point = |key: usize| -> [f64; 2] {
        let cell = key / 2;
        let (i, j) = (cell / n2, cell % n2);
        let (i2, j2) = if key % 2 == 1 { (i, j + 1) } else { (i + 1, j) };
        let (a, b) = (v(i, j), v(i2, j2));
        let s = (level - a) / (b - a);
        [
            plane.y1[i] + s * (plane.y1[i2] - plane.y1[i]),
            plane.y2[j] + s * (plane.y2[j2] - plane.y2[j]),
        ]
    };

    // Oriented segments as (start edge, end edge).
    let mut segments: Vec<(usize, usize)> = Vec::new();
    for i in 0..n1 - 1 {
        for j in 0..n2 - 1 {
            // Corners counterclockwise with the edge that follows each.
            let corners = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)];
            let edges = [
                edge_key(n2, false, i, j),
                edge_key(n2, true, i + 1, j),
                edge_key(n2, false, i, j + 1),
                edge_key(n2, true, i, j),
            ];
            let above: Vec<bool> = corners.iter().map(|&(a, b)| v(a, b) > level).collect();
            let flips = (0..4).filter(|&c| above[c] != above[(c + 1) % 4]).count();
            if flips == 0 {
                continue;
            }
            // Corners cut off by a segment, each with its two adjacent edges.
            let isolated: Vec<usize> = if flips == 4 {
                let center = corners.iter().map(|&(a, b)| v(a, b)).sum::<f64>() / 4.0 > level;
                (0..4).filter(|&c| above[c] != center).collect()
            } else {
                Vec::new()
            };
            let mut pairs: Vec<(usize, usize, usize)> = Vec::new();
            if isolated.is_empty() {
                let crossing: Vec<usize> =
                    (0..4).filter(|&c| above[c] != above[(c + 1) % 4]).collect();
                let probe = (0..4).find(|&c| above[c]).expect("one corner above");
                pairs.push((edges[crossing[0]], edges[crossing[1]], probe));
            } else {
                for c in isolated {
                    pairs.push((edges[(c + 3) % 4], edges[c], c));
                }
            }
            for (ea, eb, probe) in pairs {
                let (pa, pb) = (point(ea), point(eb));
                let (ci, cj) = corners[probe];
                let corner = [plane.y1[ci], plane.y2[cj]];
                let mid = [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])];
                let left = [-(pb[1] - pa[1]), pb[0] - pa[0]];
                let side = left[0] * (corner[0] - mid[0]) + left[1] * (corner[1] - mid[1]);
                // The probe corner must lie left when above, right when below.
                if (side > 0.0) == above[probe] {
                    segments.push((ea, eb));
                } else {
                    segments.push((eb, ea));
                }
            }
        }
    }

    let by_start: HashMap<usize, usize> =
        segments.iter().enumerate().map(|(s, &(a, _))| (a, s)).collect();
    let ends: std::collections::HashSet<usize> = segments.iter().map(|&(_, b)| b).collect();
    let mut used = vec![false; segments.len()];
    let mut curves = Vec::new();
    let walk = |first: usize, used: &mut Vec<bool>| -> (Vec<usize>, bool) {
        let mut keys = vec![segments[first].0];
        let mut s = first;
        loop {
            used[s] = true;
            let end = segments[s].1;
            match by_start.get(&end) {
                Some(&next) if !used[next] => {
                    keys.push(end);
                    s = next;
                }
                Some(_) => return (keys, true),
                None => {
                    keys.push(end);
                    return (keys, false);
                }
            }
        }
    };
    for pass in 0..2 {
        for s in 0..segments.len() {
            if used[s] || (pass == 0 && ends.contains(&segments[s].0)) {
                continue;
            }
            let (keys, closed) = walk(s, &mut used);
            let mut vertices: Vec<[f64; 2]> = Vec::with_capacity(keys.len());
            for key in keys {
                let p = point(key);
                if vertices.last() != Some(&p) {
                    vertices.push(p);
                }
            }
            if closed && vertices.len() > 1 && vertices.first() == vertices.last() {
                vertices.pop();
            }
            curves.push((vertices, closed));
        }
    }
    curves
}

/// Arclength-uniform resampling followed by one pass of `(1, 2, 1)/4`
/// smoothing. Open curves keep their endpoints.
pub fn resample(c: &SliceCurve, step: f64) -> Vec<[f64; 2]> {
    let s = c.arclengths();
    let total = *s.last().unwrap_or(&0.0);
    if c.is_degenerate() || total == 0.0 {
        return c.vertices.clone();
    }
    let m = ((total / step).ceil() as usize).max(4);
    let count = if c.closed { m } else { m + 1 };
    let mut pts = Vec::with_capacity(count);
    let mut seg = 0;
    for k in 0..count {
        let target = total * k as f64 / m as f64;
        while seg + 1 < s.len() - 1 && s[seg + 1] < target {
            seg += 1;
        }
        let (a, b) = (c.vertex(seg), c.vertex(seg + 1));
        let len = s[seg + 1] - s[seg];
        let f = if len > 0.0 { ((target - s[seg]) / len).clamp(0.0, 1.0) } else { 0.0 };
        pts.push([a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])]);
    }
    let n = pts.len();
    (0..n)
        .map(|k| {
            if !c.closed && (k == 0 || k + 1 == n) {
                return pts[k];
            }
            let (p, q, r) = (pts[(k + n - 1) % n], pts[k], pts[(k + 1) % n]);
            [0.25 * (p[0] + 2.0 * q[0] + r[0]), 0.25 * (p[1] + 2.0 * q[1] + r[1])]
        })
        .collect()
}

/// Wrapped exterior angles of a polyline.
fn exterior_angles(pts: &[[f64; 2]], closed: bool) -> Vec<f64> {
    let n = pts.len();
    let segs = if closed { n } else { n - 1 };
    let dir: Vec<f64> = (0..segs)
        .map(|k| {
            let (a, b) = (pts[k], pts[(k + 1) % n]);
            (b[1] - a[1]).atan2(b[0] - a[0])
        })
        .collect();
    let turns = if closed { segs } else { segs - 1 };
    (0..turns).map(|k| wrap(dir[(k + 1) % segs] - dir[k])).collect()
}

/// `∫|κ| ds` as the sum of absolute exterior angles after resampling at the
/// curve's own step.
pub fn curvature_integral(c: &SliceCurve) -> f64 {
    curvature_integral_with_step(c, c.step)
}

pub fn curvature_integral_with_step(c: &SliceCurve, step: f64) -> f64 {
    if c.is_degenerate() {
        return 0.0;
    }
    exterior_angles(&resample(c, step), c.closed).iter().map(|a| a.abs()).sum()
}

/// Signed total turning of the tangent; `±2π·k` for closed curves.
pub fn turning_angle(c: &SliceCurve) -> f64 {
    turning_angle_with_step(c, c.step)
}

pub fn turning_angle_with_step(c: &SliceCurve, step: f64) -> f64 {
    if c.is_degenerate() {
        return 0.0;
    }
    exterior_angles(&resample(c, step), c.closed).iter().sum()
}

/// Both sides of the slice-curvature estimate with the surface integrals
/// that make up the right-hand side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lemma43 {
    pub lhs: f64,
    pub rhs: f64,
    /// Level traced after the regularity perturbation.
    pub level: f64,
    pub area: f64,
    pub b2_integral: f64,
}

/// `(lhs, rhs)`; see [`lemma43_terms`].
pub fn lemma43_check(u: &ScalarField, eps: f64, t: f64, g: &Region) -> Result<(f64, f64)> {
    let r = lemma43_terms(u, eps, t, g)?;
    Ok((r.lhs, r.rhs))
}

/// Fiber quadrature of the slice curvature integrals over `z ∈ G`, against
/// `(∫ B² dH)^{1/2} (H(M))^{1/2}` over the level surface inside the
/// cylinder over `G`. Surface integrals are thin-shell co-area averages.
/// In 2D `G` is ignored and the single fiber has unit weight.
pub fn lemma43_terms(u: &ScalarField, eps: f64, t: f64, g: &Region) -> Result<Lemma43> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps = {eps} must be positive")));
    }
    let grid = u.grid();
    let n = grid.dim();
    if n < 2 {
        return Err(Error::InvalidArgument("slices need n >= 2".into()));
    }
    let level = regular_level(u.values(), t);
    let in_g = |z: &[f64]| n == 2 || g.contains(z);

    let zw = if n == 3 { grid.axis_weights(2) } else { vec![1.0] };
    let mut lhs = 0.0;
    for (k, z) in fiber_points(grid).iter().enumerate() {
        if !in_g(z) {
            continue;
        }
        let total: f64 = extract_slice(u, level, z)?.iter().map(curvature_integral).sum();
        lhs += zw[k] * total;
    }

    let grad = gradient(u);
    let edge_jump = (0..n)
        .map(|a| grid.spacing(a) * grad.component(a).sup_norm())
        .fold(0.0, f64::max);
    let grad = grad.norm();
    let b2 = b_squared(u);
    let delta = SHELL_WIDTH * edge_jump;
    let mut area = 0.0;
    let mut b2_integral = 0.0;
    if delta > 0.0 {
        let w = grid.trapezoid_weights();
        for k in 0..grid.len() {
            if (u.values()[k] - level).abs() >= delta {
                continue;
            }
            let x = grid.position(k);
            if !in_g(&x[2..n.max(2)]) {
                continue;
            }
            let m = w[k] * grad.values()[k];
            area += m;
            b2_integral += m * b2.values()[k];
        }
        area /= 2.0 * delta;
        b2_integral /= 2.0 * delta;
    }
    Ok(Lemma43 {
        lhs,
        rhs: b2_integral.sqrt() * area.sqrt(),
        level,
        area,
        b2_integral,
    })
}

/// Parameters of the fiber classifiers: the plane disk `B_R(center)` and
/// reference points `center + p_j` with `|p_j| = 1/2`, each carrying a disk
/// of radius `delta`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiberParams {
    #[serde(default)]
    pub center: [f64; 2],
    #[serde(default = "unit")]
    pub disk_radius: f64,
    pub refs: Vec<[f64; 2]>,
    pub delta: f64,
}

fn unit() -> f64 {
    1.0
}

impl FiberParams {
    pub fn new(refs: Vec<[f64; 2]>, delta: f64) -> Self {
        FiberParams {
            center: [0.0, 0.0],
            disk_radius: 1.0,
            refs,
            delta,
        }
    }

    /// `|p_j| = 1/2`, `delta > 0`, and the disks `B_{2δ}(p_j)` disjoint.
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) || !(self.disk_radius > 0.0) {
            return Err(Error::InvalidArgument("delta and disk radius must be positive".into()));
        }
        for p in &self.refs {
            if (p[0].hypot(p[1]) - 0.5).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!("|p| = {} is not 1/2", p[0].hypot(p[1]))));
            }
        }
        for (a, p) in self.refs.iter().enumerate() {
            for q in &self.refs[a + 1..] {
                if (p[0] - q[0]).hypot(p[1] - q[1]) <= 4.0 * self.delta {
                    return Err(Error::InvalidArgument(format!(
                        "disks of radius 2δ = {} around reference points overlap",
                        2.0 * self.delta
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiberClassification {
    pub z: Vec<f64>,
    #[serde(rename = "in_D")]
    pub in_d: bool,
    #[serde(rename = "in_Q")]
    pub in_q: bool,
    pub c3: f64,
    pub delta: f64,
    pub refs: Vec<[f64; 2]>,
    /// Connected components of `{|u| <= 1/2}` among the nodes of each
    /// reference disk; the number of layers crossing it.
    pub layer_counts: Vec<usize>,
}

/// Classifies one fiber.
pub fn classify_fiber(
    u: &ScalarField,
    eps: f64,
    well: &DoubleWell,
    z: &[f64],
    params: &FiberParams,
) -> Result<FiberClassification> {
    let grad = gradient(u).norm();
    classify_with(u, &grad, eps, well.gradient_threshold(), z, params)
}

/// Classifies every fiber of the grid, in fiber order.
pub fn classify_fibers(
    u: &ScalarField,
    eps: f64,
    well: &DoubleWell,
    params: &FiberParams,
) -> Result<Vec<FiberClassification>> {
    let grad = gradient(u).norm();
    let c3 = well.gradient_threshold();
    fiber_points(u.grid())
        .iter()
        .map(|z| classify_with(u, &grad, eps, c3, z, params))
        .collect()
}

fn classify_with(
    u: &ScalarField,
    grad: &ScalarField,
    eps: f64,
    c3: f64,
    z: &[f64],
    params: &FiberParams,
) -> Result<FiberClassification> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps = {eps} must be positive")));
    }
    params.validate()?;
    let plane = Plane::new(u.grid(), z)?;
    let val = |i: usize, j: usize| u.values()[plane.at(i, j)];
    let dist = |i: usize, j: usize, c: [f64; 2]| (plane.y1[i] - c[0]).hypot(plane.y2[j] - c[1]);
    let [cx, cy] = params.center;

    let mut in_d = true;
    for i in 0..plane.n1 {
        for j in 0..plane.n2 {
            if dist(i, j, params.center) <= params.disk_radius
                && val(i, j).abs() <= 0.5
                && grad.values()[plane.at(i, j)] < c3 / eps
            {
                in_d = false;
            }
        }
    }

    let mut in_q = !params.refs.is_empty();
    let mut layer_counts = Vec::with_capacity(params.refs.len());
    for p in &params.refs {
        let c = [cx + p[0], cy + p[1]];
        let inside = |i: usize, j: usize| dist(i, j, c) <= params.delta;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        let mut band = vec![false; plane.n1 * plane.n2];
        for i in 0..plane.n1 {
            for j in 0..plane.n2 {
                if inside(i, j) {
                    lo = lo.min(val(i, j));
                    hi = hi.max(val(i, j));
                    band[i * plane.n2 + j] = val(i, j).abs() <= 0.5;
                }
            }
        }
        in_q &= lo <= -0.5 && hi >= 0.5;
        layer_counts.push(components(&band, plane.n1, plane.n2));
    }

    Ok(FiberClassification {
        z: z.to_vec(),
        in_d,
        in_q,
        c3,
        delta: params.delta,
        refs: params.refs.clone(),
        layer_counts,
    })
}

/// Four-connected components of a boolean image.
fn components(mask: &[bool], n1: usize, n2: usize) -> usize {
    let mut seen = vec![false; mask.len()];
    let mut count = 0;
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        count += 1;
        seen[start] = true;
        let mut stack = vec![start];
        while let Some(k) = stack.pop() {
            let (i, j) = (k / n2, k % n2);
            let mut nbrs = Vec::with_capacity(4);
            if i > 0 {
                nbrs.push(k - n2);
            }
            if i + 1 < n1 {
                nbrs.push(k + n2);
            }
            if j > 0 {
                nbrs.push(k - 1);
            }
            if j + 1 < n2 {
                nbrs.push(k + 1);
            }
            for q in nbrs {
                if mask[q] && !seen[q] {
                    seen[q] = true;
                    stack.push(q);
                }
            }
        }
    }
    count
}

/// Quadrature fraction of fibers in `G` that lie outside `D ∩ Q`. In 2D the
/// single fiber counts with unit weight.
pub fn fraction_outside(grid: &Grid, classes: &[FiberClassification], g: &Region) -> f64 {
    let zw = if grid.dim() == 3 { grid.axis_weights(2) } else { vec![1.0] };
    let (mut bad, mut total) = (0.0, 0.0);
    for (c, w) in classes.iter().zip(&zw) {
        if grid.dim() == 3 && !g.contains(&c.z) {
            continue;
        }
        total += w;
        if !(c.in_d && c.in_q) {
            bad += w;
        }
    }
    if total > 0.0 {
        bad / total
    } else {
        0.0
    }
}

/// Symmetric Hausdorff distance between finite point sets.
pub fn hausdorff_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("Hausdorff distance of an empty set".into()));
    }
    let dim = a[0].len();
    if a.iter().chain(b).any(|p| p.len() != dim) {
        return Err(Error::InvalidArgument("points of mixed dimension".into()));
    }
    let directed = |from: &[Vec<f64>], to: &[Vec<f64>]| {
        from.iter()
            .map(|p| {
                to.iter()
                    .map(|q| p.iter().zip(q).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    };
    Ok(directed(a, b).max(directed(b, a)).sqrt())
}

/// Nodes of `{|u| <= s}` inside `region`.
pub fn sublevel_nodes(u: &ScalarField, s: f64, region: &Region) -> Vec<Vec<f64>> {
    let grid = u.grid();
    let n = grid.dim();
    (0..grid.len())
        .filter(|&k| u.values()[k].abs() <= s)
        .map(|k| grid.position(k)[..n].to_vec())
        .filter(|x| region.contains(x))
        .collect()
}

fn z_header(fiber_dims: usize) -> Vec<String> {
    (1..=fiber_dims).map(|k| format!("z{k}")).collect()
}

/// Polylines with columns `z..., t, vertex_index, y1, y2`. A vertex index of
/// zero starts a new curve; closed curves do not repeat their first vertex.
pub fn write_slices_csv<W: Write>(curves: &[SliceCurve], fiber_dims: usize, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = z_header(fiber_dims);
    header.extend(["t", "vertex_index", "y1", "y2"].map(String::from));
    out.write_record(&header)?;
    for c in curves {
        for (k, v) in c.vertices.iter().enumerate() {
            let mut row: Vec<String> = c.z.iter().map(|z| z.to_string()).collect();
            row.extend([c.t.to_string(), k.to_string(), v[0].to_string(), v[1].to_string()]);
            out.write_record(&row)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_slices_csv_file(curves: &[SliceCurve], fiber_dims: usize, path: impl AsRef<Path>) -> Result<()> {
    write_slices_csv(curves, fiber_dims, std::fs::File::create(path)?)
}

/// Classification map with columns `z..., in_D, in_Q`.
pub fn write_fibers_csv<W: Write>(classes: &[FiberClassification], fiber_dims: usize, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = z_header(fiber_dims);
    header.extend(["in_D", "in_Q"].map(String::from));
    out.write_record(&header)?;
    for c in classes {
        let mut row: Vec<String> = c.z.iter().map(|z| z.to_string()).collect();
        row.extend([c.in_d.to_string(), c.in_q.to_string()]);
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_fibers_csv_file(classes: &[FiberClassification], fiber_dims: usize, path: impl AsRef<Path>) -> Result<()> {
    write_fibers_csv(classes, fiber_dims, std::fs::File::create(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q0(t: f64) -> f64 {
        (t / 2f64.sqrt()).tanh()
    }

    fn radial(grid: &Grid, r0: f64, eps: f64) -> ScalarField {
        ScalarField::from_fn(grid, |x| q0((x[0].hypot(x[1]) - r0) / eps))
    }

    fn polyline(vertices: Vec<[f64; 2]>, closed: bool, step: f64) -> SliceCurve {
        SliceCurve {
            z: vec![],
            t: 0.0,
            vertices,
            closed,
            step,
        }
    }

    #[test]
    fn flat_interface_gives_one_line_oriented_with_gradient_left() {
        let g = Grid::cube(2, -1.0, 1.0, 81).unwrap();
        let u = ScalarField::from_fn(&g, |x| q0(x[1] / 0.1));
        let curves = extract_slice(&u, 0.0, &[]).unwrap();
        assert_eq!(curves.len(), 1);
        let c = &curves[0];
        assert!(!c.closed);
        assert!(c.vertices.iter().all(|v| v[1].abs() <= g.spacing(1)));
        // Gradient along +x₂ lies left of a curve running along +x₁.
        assert!(c.vertices.last().unwrap()[0] > c.vertices[0][0]);
        assert!((c.length() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn circle_slice_length_curvature_and_turning() {
        let g = Grid::cube(2, -1.0, 1.0, 161).unwrap();
        let r0 = 0.5;
        let u = radial(&g, r0, 0.08);
        let curves = extract_slice(&u, 0.0, &[]).unwrap();
        assert_eq!(curves.len(), 1);
        let c = &curves[0];
        assert!(c.closed);
        for v in &c.vertices {
            assert!((v[0].hypot(v[1]) - r0).abs() <= g.spacing(0));
        }
        assert!((c.length() / (2.0 * PI * r0) - 1.0).abs() < 0.01);
        assert!((curvature_integral(c) / (2.0 * PI) - 1.0).abs() < 0.01);
        // Outward gradient on the left means clockwise traversal.
        assert!((turning_angle(c) + 2.0 * PI).abs() < 1e-3);
        let raw = c.tangent_angles();
        assert!((raw.last().unwrap() - raw[0]).abs() < 2.0 * PI);
    }

    #[test]
    fn small_and_large_circles_integrate_to_two_pi() {
        for r0 in [0.15, 0.3, 0.8] {
            let g = Grid::cube(2, -1.0, 1.0, 201).unwrap();
            let u = radial(&g, r0, 0.03);
            let c = &extract_slice(&u, 0.0, &[]).unwrap()[0];
            assert!((curvature_integral(c) / (2.0 * PI) - 1.0).abs() < 0.01, "R = {r0}");
        }
    }

    #[test]
    fn out_of_range_level_is_empty() {
        let g = Grid::cube(2, -1.0, 1.0, 21).unwrap();
        let u = radial(&g, 0.5, 0.1);
        assert!(extract_slice(&u, 2.0, &[]).unwrap().is_empty());
    }

    #[test]
    fn straight_slices_have_no_curvature() {
        let g = Grid::cube(2, -1.0, 1.0, 41).unwrap();
        let u = ScalarField::from_fn(&g, |x| 0.3 * x[0] + 0.7 * x[1] - 0.05);
        let curves = extract_slice(&u, 0.0, &[]).unwrap();
        assert_eq!(curves.len(), 1);
        assert!(curvature_integral(&curves[0]) <= 1e-8);
        assert!(turning_angle(&curves[0]).abs() <= 1e-8);
    }

    #[test]
    fn semicircle_with_legs_integrates_to_pi() {
        let mut v = Vec::new();
        for k in 0..100 {
            v.push([-1.0, 1.0 - k as f64 * 0.01]);
        }
        for k in 0..=314 {
            let a = PI + PI * k as f64 / 314.0;
            v.push([a.cos(), a.sin()]);
        }
        for k in 1..=100 {
            v.push([1.0, k as f64 * 0.01]);
        }
        let c = polyline(v, false, 0.01);
        assert!((curvature_integral(&c) / PI - 1.0).abs() < 0.02);
        assert!((turning_angle(&c) - PI).abs() < 0.02 * PI);
    }

    #[test]
    fn saddle_cells_follow_the_center_value() {
        // x·y has a saddle at the center cell; level slightly above 0
        // separates the two positive quadrants.
        let g = Grid::cube(2, -1.0, 1.0, 10).unwrap();
        let u = ScalarField::from_fn(&g, |x| x[0] * x[1]);
        let curves = extract_slice(&u, 0.01, &[]).unwrap();
        assert_eq!(curves.len(), 2);
        for c in &curves {
            let p = c.vertices[c.vertices.len() / 2];
            assert!(p[0] * p[1] > 0.0);
        }
    }

    #[test]
    fn quarter_turn_invariance() {
        let g = Grid::cube(2, -1.0, 1.0, 121).unwrap();
        let f = |x: f64, y: f64| q0(((x - 0.1).hypot(0.7 * y + 0.05) - 0.45) / 0.06);
        let u = ScalarField::from_fn(&g, |x| f(x[0], x[1]));
        let r = ScalarField::from_fn(&g, |x| f(x[1], -x[0]));
        let a = &extract_slice(&u, 0.0, &[]).unwrap()[0];
        let b = &extract_slice(&r, 0.0, &[]).unwrap()[0];
        assert!((curvature_integral(a) - curvature_integral(b)).abs() < 1e-9);
        assert!((turning_angle(a) - turning_angle(b)).abs() < 1e-9);
        let fine = curvature_integral_with_step(a, a.step / 2.0);
        assert!((fine / curvature_integral(a) - 1.0).abs() < 0.01);
    }

    #[test]
    fn three_dimensional_fibers() {
        let g = Grid::new(vec![-1.0, -1.0, -0.5], vec![1.0, 1.0, 0.5], vec![81, 81, 9]).unwrap();
        let u = radial(&g, 0.5, 0.1);
        let zs = fiber_points(&g);
        assert_eq!(zs.len(), 9);
        for z in &zs {
            let c = extract_slice(&u, 0.0, z).unwrap();
            assert_eq!(c.len(), 1);
            assert_eq!(c[0].z, *z);
        }
        assert!(extract_slice(&u, 0.0, &[0.01]).is_err());
        assert!(extract_slice(&u, 0.0, &[]).is_err());
    }

    #[test]
    fn regular_level_avoids_node_values() {
        assert_eq!(regular_level(&[0.5, -0.5], 0.0), 0.0);
        let t = regular_level(&[0.0, 2e-10], 0.0);
        assert!(t > 0.0 && [0.0, 2e-10].iter().all(|v: &f64| (v - t).abs() >= REGULAR_GAP));
    }

    #[test]
    fn lemma43_product_field_has_zero_lhs() {
        let g = Grid::new(vec![-1.0, -1.0, -1.0], vec![1.0, 1.0, 1.0], vec![33, 33, 9]).unwrap();
        let u = ScalarField::from_fn(&g, |x| q0(x[1] / 0.2));
        let (lhs, rhs) = lemma43_check(&u, 0.2, 0.0, &Region::All).unwrap();
        assert!(lhs <= 1e-8);
        assert!(rhs >= 0.0);
    }

    #[test]
    fn lemma43_empty_level_gives_zero() {
        let g = Grid::cube(2, -1.0, 1.0, 17).unwrap();
        let u = ScalarField::constant(&g, 1.0);
        assert_eq!(lemma43_check(&u, 0.1, 0.0, &Region::All).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn lemma43_circle_is_near_equality() {
        let g = Grid::cube(2, -1.0, 1.0, 241).unwrap();
        let eps = 0.06;
        let u = radial(&g, 0.5, eps);
        let r = lemma43_terms(&u, eps, 0.0, &Region::All).unwrap();
        assert!((r.area / (PI) - 1.0).abs() < 0.02, "{r:?}");
        assert!((r.lhs / (2.0 * PI) - 1.0).abs() < 0.01);
        assert!((r.lhs / r.rhs - 1.0).abs() < 0.03, "{r:?}");
    }

    #[test]
    fn fiber_classes_for_profile_and_constant() {
        let g = Grid::cube(2, -1.2, 1.2, 97).unwrap();
        let eps = 0.1;
        let well = DoubleWell::Quartic;
        let params = FiberParams::new(vec![[0.5, 0.0]], 0.2);
        let u = ScalarField::from_fn(&g, |x| q0(x[1] / eps));
        let c = classify_fiber(&u, eps, &well, &[], &params).unwrap();
        assert!(c.in_d && c.in_q);
        assert_eq!(c.layer_counts, vec![1]);
        assert!((c.c3 - 0.109375).abs() < 1e-9);
        let one = ScalarField::constant(&g, 1.0);
        let c = classify_fiber(&one, eps, &well, &[], &params).unwrap();
        assert!(c.in_d && !c.in_q);
        assert_eq!(fraction_outside(&g, &[c], &Region::All), 1.0);
    }

    #[test]
    fn slow_profile_leaves_d() {
        // Profile at scale 10ε is too shallow for the threshold c₃/ε.
        let g = Grid::cube(2, -1.2, 1.2, 97).unwrap();
        let u = ScalarField::from_fn(&g, |x| q0(x[1] / 0.5));
        let params = FiberParams::new(vec![[0.5, 0.0]], 0.2);
        let c = classify_fiber(&u, 0.05, &DoubleWell::Quartic, &[], &params).unwrap();
        assert!(!c.in_d);
    }

    #[test]
    fn fiber_params_are_validated() {
        assert!(FiberParams::new(vec![[0.4, 0.0]], 0.1).validate().is_err());
        assert!(FiberParams::new(vec![[0.5, 0.0], [-0.5, 0.0]], 0.3).validate().is_err());
        assert!(FiberParams::new(vec![[0.5, 0.0], [-0.5, 0.0]], 0.2).validate().is_ok());
        assert!(FiberParams::new(vec![[0.5, 0.0]], 0.0).validate().is_err());
    }

    #[test]
    fn hausdorff_examples() {
        let line = |d: f64| (0..=20).map(|k| vec![k as f64 * 0.05, d]).collect::<Vec<_>>();
        assert_eq!(hausdorff_distance(&line(0.0), &line(0.0)).unwrap(), 0.0);
        assert!((hausdorff_distance(&line(0.0), &line(0.3)).unwrap() - 0.3).abs() < 1e-15);
        assert!(hausdorff_distance(&[], &line(0.0)).is_err());
        assert!(hausdorff_distance(&[vec![0.0]], &line(0.0)).is_err());
    }

    #[test]
    fn hausdorff_of_profile_band() {
        let g = Grid::cube(1, -1.0, 1.0, 2001).unwrap();
        let eps = 0.05;
        let u = ScalarField::from_fn(&g, |x| q0(x[0] / eps));
        let band = sublevel_nodes(&u, 0.9, &Region::All);
        let d = hausdorff_distance(&band, &[vec![0.0]]).unwrap();
        let exact = eps * 2f64.sqrt() * 0.9f64.atanh();
        assert!((d - exact).abs() <= g.spacing(0));
    }

    #[test]
    fn csv_layouts() {
        let c = polyline(vec![[0.0, 0.0], [1.0, 0.0]], false, 0.1);
        let mut buf = Vec::new();
        write_slices_csv(&[c], 0, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("t,vertex_index,y1,y2"));
        assert_eq!(text.lines().count(), 3);
        let f = FiberClassification {
            z: vec![0.25],
            in_d: true,
            in_q: false,
            c3: 0.1,
            delta: 0.1,
            refs: vec![],
            layer_counts: vec![],
        };
        let mut buf = Vec::new();
        write_fibers_csv(&[f], 1, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "z1,in_D,in_Q\n0.25,true,false\n");
    }

    #[test]
    fn degenerate_curves_report_zero() {
        let c = polyline(vec![[0.0, 0.0], [1.0, 0.0]], false, 0.1);
        assert!(c.is_degenerate());
        assert_eq!(curvature_integral(&c), 0.0);
        assert_eq!(turning_angle(&c), 0.0);
    }

    fn random_polyline() -> impl Strategy<Value = Vec<[f64; 2]>> {
        prop::collection::vec((0.05f64..1.0, -2.5f64..2.5), 3..30).prop_map(|steps| {
            let (mut p, mut a) = ([0.0, 0.0], 0.0f64);
            let mut out = vec![p];
            for (len, turn) in steps {
                a += turn;
                p = [p[0] + len * a.cos(), p[1] + len * a.sin()];
                out.push(p);
            }
            out
        })
    }

    proptest! {
        #[test]
        fn total_curvature_bounds_turning(v in random_polyline()) {
            let c = polyline(v, false, 0.05);
            prop_assert!(curvature_integral(&c) + 1e-12 >= turning_angle(&c).abs());
        }

        #[test]
        fn closed_turning_is_a_multiple_of_two_pi(v in random_polyline()) {
            let c = polyline(v, true, 0.05);
            let k = turning_angle(&c) / (2.0 * PI);
            prop_assert!((k - k.round()).abs() * 2.0 * PI < 1e-6);
        }
    }
}
