//! Gradient conformal vector fields on sampled two-dimensional charts.
//!
//! A field is a set of node samples on a uniform rectangular grid: the
//! metric `g`, a candidate `ξ`, its candidate potential `F` (`ξ = ∇F`) and
//! conformal factor `α` (`L_ξ g = α g`), optionally `φ`. Every differential
//! quantity is a second-order central difference at interior nodes; curves
//! are traced with RK4 on 6-point Lagrange interpolation of the samples.
//!
//! Conventions: `δξ = −div ξ`, so `φ = −(1/n) δξ = (1/n) div ξ` and
//! `L_ξ g = 2φ g`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::quadrature;
use crate::warp_geometry::{classify_divergence, ConformalFactor, DivergenceReport, Table};
use crate::{Error, Result};

const DIM: usize = 2;
const STENCIL: usize = 6;
/// `check_gcvf` residuals above this mark structure checks as unreliable.
pub const RELIABLE_RESIDUAL: f64 = 1e-4;
/// Required constancy of `F` along traced leaves, relative to the chart scale of `F`.
pub const LEAF_F_TOL: f64 = 1e-8;
const VANISHING: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChartGrid {
    pub x0: f64,
    pub y0: f64,
    pub h: f64,
    pub nx: usize,
    pub ny: usize,
}

impl ChartGrid {
    pub fn covering(x: (f64, f64), y: (f64, f64), h: f64) -> Result<Self> {
        if !(h > 0.0 && x.1 > x.0 && y.1 > y.0) {
            return Err(Error::invalid(
                "chart needs a positive step and a non-empty box",
            ));
        }
        let nx = ((x.1 - x.0) / h).round() as usize + 1;
        let ny = ((y.1 - y.0) / h).round() as usize + 1;
        Ok(Self {
            x0: x.0,
            y0: y.0,
            h,
            nx,
            ny,
        })
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn point(&self, i: usize, j: usize) -> [f64; 2] {
        [self.x0 + self.h * i as f64, self.y0 + self.h * j as f64]
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    /// Whether `p` lies at least `margin` steps inside the chart.
    fn contains(&self, p: [f64; 2], margin: f64) -> bool {
        let m = margin * self.h;
        let x1 = self.x0 + self.h * (self.nx - 1) as f64;
        let y1 = self.y0 + self.h * (self.ny - 1) as f64;
        p[0] >= self.x0 + m && p[0] <= x1 - m && p[1] >= self.y0 + m && p[1] <= y1 - m
    }
}

/// Metadata asserted by the scenario author, surfaced in reports.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompletenessFlags {
    pub complete_manifold: Option<bool>,
    pub complete_field: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GcvfField {
    pub name: String,
    pub grid: ChartGrid,
    /// `[g_xx, g_xy, g_yy]` per node, row-major in `y`.
    pub metric: Vec<[f64; 3]>,
    pub xi: Vec<[f64; 2]>,
    pub potential: Vec<f64>,
    pub alpha: Vec<f64>,
    #[serde(default)]
    pub phi: Option<Vec<f64>>,
    #[serde(default)]
    pub flags: CompletenessFlags,
}

/// Point values of an analytic field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointSample {
    pub metric: [f64; 3],
    pub xi: [f64; 2],
    pub potential: f64,
    pub alpha: f64,
    pub phi: f64,
}

impl GcvfField {
    pub fn sample(
        name: &str,
        grid: ChartGrid,
        flags: CompletenessFlags,
        at: impl Fn(f64, f64) -> PointSample,
    ) -> Result<Self> {
        let mut field = Self {
            name: name.to_string(),
            grid,
            metric: Vec::with_capacity(grid.len()),
            xi: Vec::with_capacity(grid.len()),
            potential: Vec::with_capacity(grid.len()),
            alpha: Vec::with_capacity(grid.len()),
            phi: Some(Vec::with_capacity(grid.len())),
            flags,
        };
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let [x, y] = grid.point(i, j);
                let s = at(x, y);
                field.metric.push(s.metric);
                field.xi.push(s.xi);
                field.potential.push(s.potential);
                field.alpha.push(s.alpha);
                field.phi.as_mut().expect("allocated").push(s.phi);
            }
        }
        field.validate()?;
        Ok(field)
    }

    pub fn from_json(path: &Path) -> Result<Self> {
        let field: Self =
            serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?;
        field.validate()?;
        Ok(field)
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        if g.nx < STENCIL || g.ny < STENCIL || !(g.h > 0.0) {
            return Err(Error::invalid(format!(
                "chart {}x{} with step {} is too small for the {STENCIL}-point stencil",
                g.nx, g.ny, g.h
            )));
        }
        let n = g.len();
        let phi_len = self.phi.as_ref().map_or(n, Vec::len);
        if self.metric.len() != n
            || self.xi.len() != n
            || self.potential.len() != n
            || self.alpha.len() != n
            || phi_len != n
        {
            return Err(Error::invalid(format!(
                "field samples do not match the {n} chart nodes"
            )));
        }
        for (k, m) in self.metric.iter().enumerate() {
            if !(m[0] > 0.0 && m[0] * m[2] - m[1] * m[1] > 0.0) || m.iter().any(|v| !v.is_finite())
            {
                return Err(Error::invalid(format!(
                    "metric is not positive definite at node {k}"
                )));
            }
        }
        Ok(())
    }

    fn d(&self, vals: impl Fn(usize) -> f64, i: usize, j: usize) -> [f64; 2] {
        let g = &self.grid;
        let dx = (vals(g.idx(i + 1, j)) - vals(g.idx(i - 1, j))) / (2.0 * g.h);
        let dy = (vals(g.idx(i, j + 1)) - vals(g.idx(i, j - 1))) / (2.0 * g.h);
        [dx, dy]
    }

    fn interior(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let (nx, ny) = (self.grid.nx, self.grid.ny);
        (1..ny - 1).flat_map(move |j| (1..nx - 1).map(move |i| (i, j)))
    }

    fn local(&self, i: usize, j: usize) -> Local {
        let k = self.grid.idx(i, j);
        let dg: [[f64; 3]; 2] = {
            let c = |c: usize| self.d(|m| self.metric[m][c], i, j);
            let (a, b, e) = (c(0), c(1), c(2));
            [[a[0], b[0], e[0]], [a[1], b[1], e[1]]]
        };
        let dxi: [[f64; 2]; 2] = {
            let a = self.d(|m| self.xi[m][0], i, j);
            let b = self.d(|m| self.xi[m][1], i, j);
            // dxi[d][c] = ∂_d ξ^c
            [[a[0], b[0]], [a[1], b[1]]]
        };
        Local {
            g: mat(self.metric[k]),
            dg: [mat(dg[0]), mat(dg[1])],
            xi: self.xi[k],
            dxi,
            df: self.d(|m| self.potential[m], i, j),
        }
    }
}

fn mat(m: [f64; 3]) -> [[f64; 2]; 2] {
    [[m[0], m[1]], [m[1], m[2]]]
}

fn inverse(g: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
    [
        [g[1][1] / det, -g[0][1] / det],
        [-g[1][0] / det, g[0][0] / det],
    ]
}

fn dot_g(g: &[[f64; 2]; 2], u: [f64; 2], v: [f64; 2]) -> f64 {
    (0..DIM)
        .map(|i| (0..DIM).map(|j| g[i][j] * u[i] * v[j]).sum::<f64>())
        .sum()
}

/// Finite-difference data at one interior node.
struct Local {
    g: [[f64; 2]; 2],
    /// `dg[d]` is `∂_d g`.
    dg: [[[f64; 2]; 2]; 2],
    xi: [f64; 2],
    dxi: [[f64; 2]; 2],
    df: [f64; 2],
}

impl Local {
    /// `Γ^i_{jk}`.
    fn christoffel(&self) -> [[[f64; 2]; 2]; 2] {
        let gi = inverse(&self.g);
        let mut out = [[[0.0; 2]; 2]; 2];
        for (i, oi) in out.iter_mut().enumerate() {
            for (j, oij) in oi.iter_mut().enumerate() {
                for (k, v) in oij.iter_mut().enumerate() {
                    *v = 0.5
                        * (0..DIM)
                            .map(|l| {
                                gi[i][l] * (self.dg[j][l][k] + self.dg[k][l][j] - self.dg[l][j][k])
                            })
                            .sum::<f64>();
                }
            }
        }
        out
    }

    /// `(∇_j ξ)^i` as `[j][i]`.
    fn nabla_xi(&self) -> [[f64; 2]; 2] {
        let gam = self.christoffel();
        let mut out = [[0.0; 2]; 2];
        for (j, row) in out.iter_mut().enumerate() {
            for (i, v) in row.iter_mut().enumerate() {
                *v = self.dxi[j][i] + (0..DIM).map(|k| gam[i][j][k] * self.xi[k]).sum::<f64>();
            }
        }
        out
    }

    fn div_xi(&self) -> f64 {
        let det = self.g[0][0] * self.g[1][1] - self.g[0][1] * self.g[1][0];
        let ddet: Vec<f64> = (0..DIM)
            .map(|d| {
                let a = self.dg[d];
                a[0][0] * self.g[1][1] + self.g[0][0] * a[1][1] - 2.0 * self.g[0][1] * a[0][1]
            })
            .collect();
        (0..DIM)
            .map(|k| self.dxi[k][k] + self.xi[k] * 0.5 * ddet[k] / det)
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GcvfResiduals {
    pub h: f64,
    /// `max |L_ξ g − α g|` over interior nodes.
    pub lie: f64,
    /// `max |g(ξ, ·) − dF|`.
    pub gradient: f64,
    /// `lie / h²`, the constant in the `C h²` bound.
    pub lie_constant: f64,
    pub gradient_constant: f64,
    pub nodes: usize,
}

pub fn check_gcvf(field: &GcvfField) -> Result<GcvfResiduals> {
    field.validate()?;
    let (mut lie, mut gradient, mut nodes) = (0.0_f64, 0.0_f64, 0);
    for (i, j) in field.interior() {
        let l = field.local(i, j);
        let alpha = field.alpha[field.grid.idx(i, j)];
        for a in 0..DIM {
            for b in a..DIM {
                let mut v = (0..DIM).map(|k| l.xi[k] * l.dg[k][a][b]).sum::<f64>();
                v += (0..DIM)
                    .map(|k| l.g[k][b] * l.dxi[a][k] + l.g[a][k] * l.dxi[b][k])
                    .sum::<f64>();
                lie = lie.max((v - alpha * l.g[a][b]).abs());
            }
            let flat = (0..DIM).map(|k| l.g[a][k] * l.xi[k]).sum::<f64>();
            gradient = gradient.max((flat - l.df[a]).abs());
        }
        nodes += 1;
    }
    let h2 = field.grid.h * field.grid.h;
    Ok(GcvfResiduals {
        h: field.grid.h,
        lie,
        gradient,
        lie_constant: lie / h2,
        gradient_constant: gradient / h2,
        nodes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StructureReport {
    /// False when `check_gcvf` residuals exceed [`RELIABLE_RESIDUAL`].
    pub reliable: bool,
    /// `max |∇_Y ξ − φ Y|` over the coordinate frame, `φ = (1/n) div ξ`.
    pub nabla_residual: f64,
    /// `max |φ_samples − φ|`, when `φ` was supplied.
    pub phi_residual: Option<f64>,
    /// Largest relative variation of `|ξ|` along traced leaves of `ξ^⊥`.
    pub leaf_norm_variation: f64,
    /// Largest variation of `F` along traced leaves, relative to the chart scale of `F`.
    pub leaf_potential_variation: f64,
    /// `max |(∇_ξ ξ)^⊥| / |ξ|²` over interior nodes.
    pub geodesic_residual: f64,
    /// Every traced integral curve has strictly increasing `F`.
    pub potential_increasing: bool,
    pub curves_traced: usize,
    /// Some traced curve or leaf left the chart early.
    pub partial: bool,
}

pub fn structure_checks(field: &GcvfField) -> Result<StructureReport> {
    let res = check_gcvf(field)?;
    let n = DIM as f64;
    let mut nabla_residual = 0.0_f64;
    let mut geodesic_residual = 0.0_f64;
    let mut phi_residual = field.phi.as_ref().map(|_| 0.0_f64);
    for (i, j) in field.interior() {
        let l = field.local(i, j);
        let phi = l.div_xi() / n;
        let nx = l.nabla_xi();
        for (jj, row) in nx.iter().enumerate() {
            for (ii, v) in row.iter().enumerate() {
                let target = if ii == jj { phi } else { 0.0 };
                nabla_residual = nabla_residual.max((v - target).abs());
            }
        }
        if let (Some(r), Some(samples)) = (phi_residual.as_mut(), field.phi.as_ref()) {
            *r = r.max((samples[field.grid.idx(i, j)] - phi).abs());
        }
        let norm2 = dot_g(&l.g, l.xi, l.xi);
        if norm2 > VANISHING * VANISHING {
            let acc: [f64; 2] = [0, 1].map(|c| (0..DIM).map(|d| l.xi[d] * nx[d][c]).sum::<f64>());
            let par = dot_g(&l.g, acc, l.xi) / norm2;
            let perp = [acc[0] - par * l.xi[0], acc[1] - par * l.xi[1]];
            geodesic_residual = geodesic_residual.max(dot_g(&l.g, perp, perp).sqrt() / norm2);
        }
    }

    let interp = Interpolant::new(field);
    let f_scale = field
        .potential
        .iter()
        .fold(0.0_f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    let mut leaf_norm_variation = 0.0_f64;
    let mut leaf_potential_variation = 0.0_f64;
    let mut potential_increasing = true;
    let mut curves_traced = 0;
    let mut partial = false;
    for seed in seeds(&field.grid) {
        let s = interp.eval(seed);
        if s.xi_norm() <= VANISHING {
            continue;
        }
        let leaf = trace_leaf(&interp, seed, 40);
        partial |= leaf.partial;
        let norms: Vec<f64> = leaf
            .points
            .iter()
            .map(|&p| interp.eval(p).xi_norm())
            .collect();
        let (lo, hi) = norms
            .iter()
            .fold((f64::INFINITY, 0.0_f64), |(a, b), &v| (a.min(v), b.max(v)));
        leaf_norm_variation = leaf_norm_variation.max((hi - lo) / s.xi_norm());
        for &p in &leaf.points {
            leaf_potential_variation = leaf_potential_variation
                .max((interp.eval(p).potential - s.potential).abs() / f_scale);
        }
        let curve = trace_flow(&interp, seed, 40);
        partial |= curve.partial;
        let pot: Vec<f64> = curve
            .points
            .iter()
            .map(|&p| interp.eval(p).potential)
            .collect();
        potential_increasing &= pot.windows(2).all(|w| w[1] > w[0]);
        curves_traced += 1;
    }
    Ok(StructureReport {
        reliable: res.lie <= RELIABLE_RESIDUAL && res.gradient <= RELIABLE_RESIDUAL,
        nabla_residual,
        phi_residual,
        leaf_norm_variation,
        leaf_potential_variation,
        geodesic_residual,
        potential_increasing,
        curves_traced,
        partial,
    })
}

fn seeds(g: &ChartGrid) -> Vec<[f64; 2]> {
    let mut out = Vec::new();
    for a in [0.3, 0.5, 0.7] {
        for b in [0.3, 0.5, 0.7] {
            out.push([
                g.x0 + a * g.h * (g.nx - 1) as f64,
                g.y0 + b * g.h * (g.ny - 1) as f64,
            ]);
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
struct Interpolated {
    metric: [[f64; 2]; 2],
    xi: [f64; 2],
    potential: f64,
}

impl Interpolated {
    fn xi_norm(&self) -> f64 {
        dot_g(&self.metric, self.xi, self.xi).sqrt()
    }

    /// Unit vector spanning `ξ^⊥`, oriented by `+90°` from `ξ♭`.
    fn leaf_direction(&self) -> [f64; 2] {
        let flat = [0, 1].map(|a| {
            (0..DIM)
                .map(|k| self.metric[a][k] * self.xi[k])
                .sum::<f64>()
        });
        let w = [-flat[1], flat[0]];
        let n = dot_g(&self.metric, w, w).sqrt();
        [w[0] / n, w[1] / n]
    }
}

struct Interpolant<'a> {
    field: &'a GcvfField,
}

impl<'a> Interpolant<'a> {
    fn new(field: &'a GcvfField) -> Self {
        Self { field }
    }

    fn weights(t: f64, n: usize) -> (usize, [f64; STENCIL]) {
        let base = (t.floor() as isize - 2).clamp(0, n as isize - STENCIL as isize) as usize;
        let u = t - base as f64;
        let mut w = [1.0; STENCIL];
        for (k, wk) in w.iter_mut().enumerate() {
            for m in 0..STENCIL {
                if m != k {
                    *wk *= (u - m as f64) / (k as f64 - m as f64);
                }
            }
        }
        (base, w)
    }

    fn eval(&self, p: [f64; 2]) -> Interpolated {
        let g = &self.field.grid;
        let (bx, wx) = Self::weights((p[0] - g.x0) / g.h, g.nx);
        let (by, wy) = Self::weights((p[1] - g.y0) / g.h, g.ny);
        let mut acc = [0.0; 6];
        for (b, wyb) in wy.iter().enumerate() {
            for (a, wxa) in wx.iter().enumerate() {
                let k = g.idx(bx + a, by + b);
                let w = wxa * wyb;
                let m = self.field.metric[k];
                let xi = self.field.xi[k];
                for (slot, v) in
                    acc.iter_mut()
                        .zip([m[0], m[1], m[2], xi[0], xi[1], self.field.potential[k]])
                {
                    *slot += w * v;
                }
            }
        }
        Interpolated {
            metric: mat([acc[0], acc[1], acc[2]]),
            xi: [acc[3], acc[4]],
            potential: acc[5],
        }
    }
}

struct Traced {
    /// Parameter values, increasing.
    params: Vec<f64>,
    points: Vec<[f64; 2]>,
    partial: bool,
}

fn rk4(p: [f64; 2], dt: f64, v: &impl Fn([f64; 2]) -> [f64; 2]) -> [f64; 2] {
    let add = |p: [f64; 2], k: [f64; 2], s: f64| [p[0] + s * k[0], p[1] + s * k[1]];
    let k1 = v(p);
    let k2 = v(add(p, k1, 0.5 * dt));
    let k3 = v(add(p, k2, 0.5 * dt));
    let k4 = v(add(p, k3, dt));
    [
        p[0] + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        p[1] + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    ]
}

/// Integrates `v` both ways from `seed` for at most `steps` steps of size
/// `dt`, stopping at the chart margin.
fn trace(
    grid: &ChartGrid,
    seed: [f64; 2],
    dt: f64,
    steps: usize,
    v: impl Fn([f64; 2]) -> [f64; 2],
) -> Traced {
    let mut back = Vec::new();
    let mut fwd = Vec::new();
    let mut partial = false;
    for (sign, out) in [(-1.0, &mut back), (1.0, &mut fwd)] {
        let mut p = seed;
        for _ in 0..steps {
            let q = rk4(p, sign * dt, &v);
            if !grid.contains(q, 1.0) {
                partial = true;
                break;
            }
            out.push(q);
            p = q;
        }
    }
    let nb = back.len();
    let mut points: Vec<[f64; 2]> = back.into_iter().rev().collect();
    points.push(seed);
    points.extend(fwd);
    let params = (0..points.len())
        .map(|k| (k as f64 - nb as f64) * dt)
        .collect();
    Traced {
        params,
        points,
        partial,
    }
}

fn trace_flow(interp: &Interpolant, seed: [f64; 2], steps: usize) -> Traced {
    let g = &interp.field.grid;
    let s = interp.eval(seed);
    let speed = s.xi[0].hypot(s.xi[1]);
    trace(g, seed, 0.25 * g.h / speed, steps, |p| interp.eval(p).xi)
}

fn trace_leaf(interp: &Interpolant, seed: [f64; 2], steps: usize) -> Traced {
    let g = &interp.field.grid;
    let s = interp.eval(seed);
    let d = s.leaf_direction();
    let ds = 0.25 * g.h / d[0].hypot(d[1]);
    trace(g, seed, ds, steps, |p| interp.eval(p).leaf_direction())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormalForm {
    pub point: [f64; 2],
    /// Flow parameter `x` of `ξ = ∂_x`, with `x = 0` at `point`.
    pub x: Vec<f64>,
    /// `f(x) = |ξ|` along the integral curve through `point`.
    pub f: Vec<f64>,
    /// Arclength along the leaf of `ξ^⊥` through `point`.
    pub leaf_s: Vec<f64>,
    /// `h(∂_s, ∂_s) = 1/f(0)²` on that leaf.
    pub h_ss: f64,
    /// Largest relative mismatch between the pulled-back ambient metric and `f²(x)(dx² + h)`.
    pub metric_discrepancy: f64,
    /// Flow parameter where `f` blows up, when it does so in finite time.
    pub singular_end: Option<f64>,
    /// `f` in the collar coordinate `u = |x − singular_end|`.
    pub factor: Option<ConformalFactor>,
    pub divergence: Option<DivergenceReport>,
    pub flags: CompletenessFlags,
    pub partial: bool,
}

/// Steps used for tracing in [`normal_form`].
pub const NORMAL_FORM_STEPS: usize = 20_000;

pub fn normal_form(field: &GcvfField, p: [f64; 2]) -> Result<NormalForm> {
    field.validate()?;
    let grid = &field.grid;
    if !grid.contains(p, 3.0) {
        return Err(Error::invalid(format!(
            "point {p:?} is not inside the chart"
        )));
    }
    let interp = Interpolant::new(field);
    let at_p = interp.eval(p);
    if at_p.xi_norm() <= VANISHING {
        return Err(Error::HypothesisViolation(format!(
            "ξ vanishes at {p:?}, outside the set where it is non-zero"
        )));
    }
    let curve = trace_flow(&interp, p, NORMAL_FORM_STEPS);
    let f: Vec<f64> = curve
        .points
        .iter()
        .map(|&q| interp.eval(q).xi_norm())
        .collect();
    let dt = curve.params[1] - curve.params[0];
    let leaf = trace_leaf(&interp, p, NORMAL_FORM_STEPS);
    let ds = leaf.params[1] - leaf.params[0];
    let f0 = at_p.xi_norm();
    let h_ss = 1.0 / (f0 * f0);

    // pull back g along Ψ(x, s) = flow_x(leaf(s)) at a few interior pairs
    let mut metric_discrepancy = 0.0_f64;
    let centre = leaf
        .params
        .iter()
        .position(|&s| s == 0.0)
        .expect("seed is on the leaf");
    let seed_idx = curve
        .params
        .iter()
        .position(|&x| x == 0.0)
        .expect("seed is on the curve");
    let leaf_offsets = [
        -(leaf.points.len() as isize / 4),
        0,
        leaf.points.len() as isize / 4,
    ];
    let span = (curve.points.len() / 3) as isize;
    for step_frac in [-2, -1, 1, 2] {
        let steps = step_frac * span / 3;
        let x_idx = seed_idx as isize + steps;
        if x_idx < 0 || x_idx as usize >= curve.points.len() {
            continue;
        }
        let fx = f[x_idx as usize];
        for &off in &leaf_offsets {
            let c = centre as isize + off;
            if c < 1 || c as usize + 1 >= leaf.points.len() {
                continue;
            }
            let flow_to = |start: [f64; 2]| -> Option<[f64; 2]> {
                let mut q = start;
                let v = |r: [f64; 2]| interp.eval(r).xi;
                for _ in 0..steps.unsigned_abs() {
                    q = rk4(q, dt * steps.signum() as f64, &v);
                    if !grid.contains(q, 1.0) {
                        return None;
                    }
                }
                Some(q)
            };
            let (Some(m), Some(lo), Some(hi)) = (
                flow_to(leaf.points[c as usize]),
                flow_to(leaf.points[c as usize - 1]),
                flow_to(leaf.points[c as usize + 1]),
            ) else {
                continue;
            };
            let s = interp.eval(m);
            let ds_vec = [(hi[0] - lo[0]) / (2.0 * ds), (hi[1] - lo[1]) / (2.0 * ds)];
            let gxx = dot_g(&s.metric, s.xi, s.xi);
            let gxs = dot_g(&s.metric, s.xi, ds_vec);
            let gss = dot_g(&s.metric, ds_vec, ds_vec);
            let scale = fx * fx;
            let err = [
                (gxx - scale).abs(),
                gxs.abs(),
                (gss - scale * h_ss).abs() * f0 * f0,
            ]
            .into_iter()
            .fold(0.0, f64::max);
            metric_discrepancy = metric_discrepancy.max(err / scale);
        }
    }

    let singular_end = estimate_singular_end(&curve.params, &f);
    let (factor, divergence) = match singular_end {
        Some(xs) => {
            let mut pairs: Vec<(f64, f64)> = curve
                .params
                .iter()
                .zip(&f)
                .map(|(&x, &v)| ((x - xs).abs(), v))
                .collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let table = Table::new(
                pairs.iter().map(|p| p.0).collect(),
                pairs.iter().map(|p| p.1).collect(),
            )?;
            let factor = ConformalFactor::tabulated(table, None)?;
            let report = classify_divergence(&factor)?;
            (Some(factor), Some(report))
        }
        None => (None, None),
    };
    Ok(NormalForm {
        point: p,
        x: curve.params,
        f,
        leaf_s: leaf.params,
        h_ss,
        metric_discrepancy,
        singular_end,
        factor,
        divergence,
        flags: field.flags,
        partial: curve.partial || leaf.partial,
    })
}

/// Finite-time blow-up of `f` beyond the end of the samples where `f` grows,
/// from a least-squares line through `f/f′`.
fn estimate_singular_end(x: &[f64], f: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < 12 {
        return None;
    }
    let grows_up = f[n - 1] > f[0];
    let m = (n / 4).clamp(8, 64);
    let range: Vec<usize> = if grows_up {
        (n - 2 - m..n - 2).collect()
    } else {
        (2..m + 2).collect()
    };
    let pts: Vec<(f64, f64)> = range
        .iter()
        .map(|&k| {
            let h = x[k + 1] - x[k];
            let df = (f[k - 2] - 8.0 * f[k - 1] + 8.0 * f[k + 1] - f[k + 2]) / (12.0 * h);
            (x[k], f[k] / df)
        })
        .collect();
    let mean_x = pts.iter().map(|p| p.0).sum::<f64>() / m as f64;
    let mean_r = pts.iter().map(|p| p.1).sum::<f64>() / m as f64;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    let sxr: f64 = pts.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_r)).sum();
    let slope = sxr / sxx;
    if slope.abs() < 1e-6 {
        return None;
    }
    let end = mean_x - mean_r / slope;
    let beyond = if grows_up { end > x[n - 1] } else { end < x[0] };
    beyond.then_some(end)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceRates {
    pub lie: f64,
    pub gradient: f64,
    pub nabla: f64,
    pub geodesic: f64,
}

/// `log2` of the residual ratio between steps `h` and `h/2`. A residual
/// already at rounding level on both grids reports `NaN`.
pub fn convergence_rates(
    make: impl Fn(f64) -> Result<GcvfField>,
    h: f64,
) -> Result<ConvergenceRates> {
    let coarse = make(h)?;
    let fine = make(0.5 * h)?;
    let (rc, rf) = (check_gcvf(&coarse)?, check_gcvf(&fine)?);
    let (sc, sf) = (structure_checks(&coarse)?, structure_checks(&fine)?);
    let rate = |a: f64, b: f64| {
        if a < 1e-13 && b < 1e-13 {
            f64::NAN
        } else {
            (a / b).log2()
        }
    };
    Ok(ConvergenceRates {
        lie: rate(rc.lie, rf.lie),
        gradient: rate(rc.gradient, rf.gradient),
        nabla: rate(sc.nabla_residual, sf.nabla_residual),
        geodesic: rate(sc.geodesic_residual, sf.geodesic_residual),
    })
}

/// Analytic fields used as scenarios and oracles.
#[derive(Debug, Clone, PartialEq)]
pub enum AnalyticField {
    /// Euclidean plane, `ξ = 0`, `F = 0`, `α = 0`.
    Zero,
    /// Euclidean plane in Cartesian coordinates, `ξ = r∂_r`, `F = r²/2`, `α = 2`.
    EuclideanRadial,
    /// Euclidean plane in log-polar coordinates `(u, θ)`: `g = e^{2u}(du² + dθ²)`, `ξ = ∂_u`.
    EuclideanLogPolar,
    /// Cusp `dt² + e^{−2t} dy²` with `ξ = e^{−t}∂_t`, `F = −e^{−t}`.
    Cusp,
    /// `f(x)² (dx² + dy²)` with `ξ = ∂_x` and `F = ∫ f²`.
    Warped(ConformalFactor),
}

impl AnalyticField {
    pub fn at(&self, a: f64, b: f64) -> PointSample {
        match self {
            Self::Zero => PointSample {
                metric: [1.0, 0.0, 1.0],
                xi: [0.0, 0.0],
                potential: 0.0,
                alpha: 0.0,
                phi: 0.0,
            },
            Self::EuclideanRadial => PointSample {
                metric: [1.0, 0.0, 1.0],
                xi: [a, b],
                potential: 0.5 * (a * a + b * b),
                alpha: 2.0,
                phi: 1.0,
            },
            Self::EuclideanLogPolar => {
                let e = (2.0 * a).exp();
                PointSample {
                    metric: [e, 0.0, e],
                    xi: [1.0, 0.0],
                    potential: 0.5 * e,
                    alpha: 2.0,
                    phi: 1.0,
                }
            }
            Self::Cusp => {
                let e = (-a).exp();
                PointSample {
                    metric: [1.0, 0.0, e * e],
                    xi: [e, 0.0],
                    potential: -e,
                    alpha: -2.0 * e,
                    phi: -e,
                }
            }
            Self::Warped(f) => {
                let fx = f.eval(a);
                let step = 1e-5 * a.abs().max(1e-3);
                let dlog = (f.eval(a + step).ln() - f.eval(a - step).ln()) / (2.0 * step);
                let lo = f.start().min(1.0) * 0.5;
                let potential = quadrature::integrate(|x| f.eval(x).powi(2), lo, a, 64);
                PointSample {
                    metric: [fx * fx, 0.0, fx * fx],
                    xi: [1.0, 0.0],
                    potential,
                    alpha: 2.0 * dlog,
                    phi: dlog,
                }
            }
        }
    }

    pub fn flags(&self) -> CompletenessFlags {
        match self {
            // flow of ∂_x reaches x = 0 in finite time
            Self::Warped(_) => CompletenessFlags {
                complete_manifold: None,
                complete_field: Some(false),
            },
            _ => CompletenessFlags {
                complete_manifold: Some(true),
                complete_field: Some(true),
            },
        }
    }
}

/// Samples `field` on `chart` in bent coordinates `(p, q)` with
/// `(a, b) = (p, q + bend·p²)`.
pub fn sample_analytic(
    name: &str,
    field: &AnalyticField,
    chart: ChartGrid,
    bend: f64,
) -> Result<GcvfField> {
    GcvfField::sample(name, chart, field.flags(), |p, q| {
        let s = field.at(p, q + bend * p * p);
        let [gaa, gab, gbb] = s.metric;
        let c = 2.0 * bend * p;
        PointSample {
            metric: [gaa + 2.0 * c * gab + c * c * gbb, gab + c * gbb, gbb],
            xi: [s.xi[0], s.xi[1] - c * s.xi[0]],
            ..s
        }
    })
}

pub const BUILTIN_FIELDS: [&str; 7] = [
    "zero",
    "euclidean-radial",
    "euclidean-log-polar",
    "cusp",
    "warped-hyperbolic",
    "warped-power-1.5",
    "warped-power-2",
];

/// Built-in analytic scenario sampled with step `h`, optionally in bent coordinates.
pub fn builtin(name: &str, h: f64, bend: f64) -> Result<GcvfField> {
    let (field, x, y) = match name {
        "zero" => (AnalyticField::Zero, (-1.0, 1.0), (-1.0, 1.0)),
        "euclidean-radial" => (AnalyticField::EuclideanRadial, (0.5, 1.5), (0.5, 1.5)),
        "euclidean-log-polar" => (AnalyticField::EuclideanLogPolar, (-0.5, 0.5), (0.0, 1.0)),
        "cusp" => (AnalyticField::Cusp, (0.5, 2.0), (0.0, 1.0)),
        "warped-hyperbolic" => (
            AnalyticField::Warped(ConformalFactor::hyperbolic(1.0)?),
            (0.1, 1.0),
            (0.0, 0.2),
        ),
        "warped-power-1.5" => (
            AnalyticField::Warped(ConformalFactor::power_law(1.5, 1.0)?),
            (0.1, 1.0),
            (0.0, 0.2),
        ),
        "warped-power-2" => (
            AnalyticField::Warped(ConformalFactor::power_law(2.0, 1.0)?),
            (0.2, 1.0),
            (0.0, 0.2),
        ),
        other => {
            return Err(Error::invalid(format!(
                "unknown GCVF scenario `{other}` (known: {})",
                BUILTIN_FIELDS.join(", ")
            )))
        }
    };
    sample_analytic(name, &field, ChartGrid::covering(x, y, h)?, bend)
}
