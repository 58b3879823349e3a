//! Per-mode radial systems of the eigenspinor equation `D_h φ = l f φ`.
//!
//! - kernel mode (`λ = 0`): `(p, q)' = −l f c⁰(p, q)` with `c⁰(a, b) = (−b, a)`;
//! - plain mode (`λ > 0`): `a' = −λa + l f b`, `b' = −l f a + λb`;
//! - hatted mode: `a ↦ e^{λx} a`, `b ↦ e^{−λx} b`, giving the real system
//!   `a' = l e^{2λx} f b`, `b' = −l e^{−2λx} f a`.
//!
//! Trajectories carry the monitors of the non-existence argument: the
//! Wronskian of a paired solution, `F = e^{−4λx} a² + b²` (hatted
//! variables), and the cumulative mass `∫ (a² + b²) f dx` from the start.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::{Integrator, IntegratorStats, OdeSystem, StepControl, Termination};
use crate::warp_geometry::ConformalFactor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Representation {
    Plain,
    Hatted,
    Kernel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialMode {
    pub lambda: f64,
    pub l: f64,
    pub representation: Representation,
}

impl RadialMode {
    pub fn new(lambda: f64, l: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() || !l.is_finite() {
            return Err(Error::invalid(format!(
                "mode needs finite lambda >= 0 and finite l, got ({lambda}, {l})"
            )));
        }
        let representation = if lambda == 0.0 {
            Representation::Kernel
        } else {
            Representation::Plain
        };
        Ok(Self {
            lambda,
            l,
            representation,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegrationOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_min: f64,
    pub overflow: f64,
    pub max_steps: usize,
}

impl Default for IntegrationOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
            h_min: 1e-300,
            overflow: 1e150,
            max_steps: 20_000_000,
        }
    }
}

impl IntegrationOptions {
    /// Step floor tied to the depth of the singular end.
    pub fn with_floor_for(mut self, lower: f64) -> Self {
        self.h_min = (1e-7 * lower.abs()).max(1e-300);
        self
    }

    fn control(&self, error_dims: usize) -> StepControl {
        StepControl {
            rtol: self.rtol,
            atol: self.atol,
            h_min: self.h_min,
            max_steps: self.max_steps,
            overflow: self.overflow,
            error_dims,
        }
    }
}

/// Sampled solution; `grid` is increasing whatever the integration direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub representation: Representation,
    pub lambda: f64,
    pub l: f64,
    /// Point where the initial data were imposed.
    pub origin: f64,
    pub grid: Vec<f64>,
    pub states: Vec<[f64; 2]>,
    pub wronskian: Vec<f64>,
    /// `F = e^{−4λx} a² + b²` in hatted variables (`|φ₀|²` for kernel modes).
    pub lyapunov_f: Vec<f64>,
    /// `∫ (a² + b²) f` between `origin` and each sample, plain variables.
    pub partial_l2_mass: Vec<f64>,
    pub stats: IntegratorStats,
    pub termination: Termination,
}

impl Trajectory {
    /// Plain-representation trajectory from given samples (grid increasing);
    /// the mass is accumulated by the trapezoid rule from the top sample down.
    pub fn from_samples(
        lambda: f64,
        l: f64,
        grid: Vec<f64>,
        states: Vec<[f64; 2]>,
        f: &ConformalFactor,
    ) -> Result<Self> {
        if grid.len() != states.len() || grid.len() < 2 {
            return Err(Error::invalid(
                "need at least two samples with matching states",
            ));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("sample grid must be strictly increasing"));
        }
        let dens: Vec<f64> = grid
            .iter()
            .zip(&states)
            .map(|(&x, s)| (s[0] * s[0] + s[1] * s[1]) * f.eval(x))
            .collect();
        let mut mass = vec![0.0; grid.len()];
        for i in (0..grid.len() - 1).rev() {
            mass[i] = mass[i + 1] + 0.5 * (grid[i + 1] - grid[i]) * (dens[i] + dens[i + 1]);
        }
        let representation = if lambda == 0.0 {
            Representation::Kernel
        } else {
            Representation::Plain
        };
        Ok(Self {
            representation,
            lambda,
            l,
            origin: *grid.last().expect("non-empty"),
            lyapunov_f: grid
                .iter()
                .zip(&states)
                .map(|(&x, s)| lyapunov_from_plain(lambda, x, s))
                .collect(),
            grid,
            states,
            wronskian: Vec::new(),
            partial_l2_mass: mass,
            stats: IntegratorStats::default(),
            termination: Termination::Completed,
        })
    }

    pub fn is_truncated(&self) -> bool {
        self.termination != Termination::Completed
    }

    /// `max |w − w(origin)| / |w(origin)|`.
    pub fn wronskian_drift(&self) -> f64 {
        relative_drift(&self.wronskian, self.origin_index())
    }

    /// For kernel modes: `max |(p² + q²) − (p² + q²)(origin)| / (p² + q²)(origin)`.
    pub fn norm_drift(&self) -> f64 {
        let norms: Vec<f64> = self
            .states
            .iter()
            .map(|s| s[0] * s[0] + s[1] * s[1])
            .collect();
        relative_drift(&norms, self.origin_index())
    }

    fn origin_index(&self) -> usize {
        if self.grid.first() == Some(&self.origin) {
            0
        } else {
            self.grid.len() - 1
        }
    }

    /// CSV with columns `x,a,b,wronskian,F,partial_mass`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "a", "b", "wronskian", "F", "partial_mass"])?;
        for i in 0..self.grid.len() {
            w.write_record([
                self.grid[i].to_string(),
                self.states[i][0].to_string(),
                self.states[i][1].to_string(),
                self.wronskian
                    .get(i)
                    .copied()
                    .unwrap_or(f64::NAN)
                    .to_string(),
                self.lyapunov_f[i].to_string(),
                self.partial_l2_mass[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn relative_drift(values: &[f64], origin: usize) -> f64 {
    let Some(&w0) = values.get(origin) else {
        return 0.0;
    };
    let scale = w0.abs().max(f64::MIN_POSITIVE);
    values.iter().map(|w| (w - w0).abs()).fold(0.0, f64::max) / scale
}

/// `F(x) = e^{−2λx}(a_λ² + b_λ²)`, the hatted `e^{−4λx} a² + b²` in plain variables.
fn lyapunov_from_plain(lambda: f64, x: f64, s: &[f64; 2]) -> f64 {
    (-2.0 * lambda * x).exp() * (s[0] * s[0] + s[1] * s[1])
}

struct KernelSystem<'a> {
    l: f64,
    f: &'a ConformalFactor,
    mass_sign: f64,
}

impl OdeSystem<3> for KernelSystem<'_> {
    fn rhs(&self, x: f64, y: &[f64; 3]) -> [f64; 3] {
        let fx = self.f.eval(x);
        let lf = self.l * fx;
        [
            lf * y[1],
            -lf * y[0],
            self.mass_sign * (y[0] * y[0] + y[1] * y[1]) * fx,
        ]
    }
}

/// Two solutions of the plain system side by side, with their masses and
/// the cross term `∫ (y₁ · y₂) f`.
struct PairedSystem<'a> {
    lambda: f64,
    l: f64,
    f: &'a ConformalFactor,
    mass_sign: f64,
}

impl OdeSystem<7> for PairedSystem<'_> {
    fn rhs(&self, x: f64, y: &[f64; 7]) -> [f64; 7] {
        let fx = self.f.eval(x);
        let lf = self.l * fx;
        let lam = self.lambda;
        let s = self.mass_sign * fx;
        [
            -lam * y[0] + lf * y[1],
            -lf * y[0] + lam * y[1],
            -lam * y[2] + lf * y[3],
            -lf * y[2] + lam * y[3],
            s * (y[0] * y[0] + y[1] * y[1]),
            s * (y[2] * y[2] + y[3] * y[3]),
            s * (y[0] * y[2] + y[1] * y[3]),
        ]
    }
}

fn check_interval(f: &ConformalFactor, from: f64, to: f64) -> Result<()> {
    let (lo, hi) = (from.min(to), from.max(to));
    if !(lo.is_finite() && hi.is_finite()) || lo == hi {
        return Err(Error::invalid(format!(
            "degenerate integration interval ({from}, {to})"
        )));
    }
    let top = f.start() + 1e-12 * f.start().abs().max(1.0);
    if lo <= f.end() || hi > top {
        return Err(Error::invalid(format!(
            "interval ({from}, {to}) leaves the collar ({}, {}]",
            f.end(),
            f.start()
        )));
    }
    f.validate_on(&[lo, hi])
}

fn merged_stations(from: f64, to: f64, stations: &[f64]) -> Vec<f64> {
    let dir = (to - from).signum();
    let mut s: Vec<f64> = stations
        .iter()
        .copied()
        .filter(|&x| dir * (x - from) > 0.0 && dir * (to - x) > 0.0)
        .collect();
    s.push(to);
    s.sort_by(|a, b| (dir * a).total_cmp(&(dir * b)));
    s.dedup();
    s
}

/// Kernel mode `(p, q)' = −l f c⁰(p, q)` from `from` to `to`, with `init` at `from`.
pub fn integrate_kernel(
    l: f64,
    f: &ConformalFactor,
    from: f64,
    to: f64,
    init: [f64; 2],
    stations: &[f64],
    opts: &IntegrationOptions,
) -> Result<Trajectory> {
    check_interval(f, from, to)?;
    let sys = KernelSystem {
        l,
        f,
        mass_sign: if to < from { -1.0 } else { 1.0 },
    };
    let integ = Integrator::new(opts.control(2));
    let mut xs = Vec::new();
    let mut ys: Vec<[f64; 3]> = Vec::new();
    let (termination, stats) = integ.run(
        &sys,
        from,
        [init[0], init[1], 0.0],
        &merged_stations(from, to, stations),
        |x, y| {
            xs.push(x);
            ys.push(*y);
        },
    );
    let mut traj = Trajectory {
        representation: Representation::Kernel,
        lambda: 0.0,
        l,
        origin: from,
        grid: xs,
        states: ys.iter().map(|y| [y[0], y[1]]).collect(),
        wronskian: Vec::new(),
        lyapunov_f: ys.iter().map(|y| y[0] * y[0] + y[1] * y[1]).collect(),
        partial_l2_mass: ys.iter().map(|y| y[2]).collect(),
        stats,
        termination,
    };
    traj.wronskian = traj.lyapunov_f.clone();
    orient(&mut traj);
    Ok(traj)
}

/// Both fundamental solutions of the plain system, integrated together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FundamentalPair {
    pub first: Trajectory,
    pub second: Trajectory,
    /// `∫ (y₁ · y₂) f` between the origin and each sample.
    pub cross_mass: Vec<f64>,
}

impl FundamentalPair {
    /// Mass of `c₁ y₁ + c₂ y₂` at each sample.
    pub fn combined_mass(&self, c: [f64; 2]) -> Vec<f64> {
        (0..self.first.grid.len())
            .map(|i| {
                c[0] * c[0] * self.first.partial_l2_mass[i]
                    + c[1] * c[1] * self.second.partial_l2_mass[i]
                    + 2.0 * c[0] * c[1] * self.cross_mass[i]
            })
            .collect()
    }

    /// The trajectory of `c₁ y₁ + c₂ y₂` (plain representation).
    pub fn combine(&self, c: [f64; 2]) -> Trajectory {
        let mut t = self.first.clone();
        let lam = t.lambda;
        for i in 0..t.grid.len() {
            let s1 = self.first.states[i];
            let s2 = self.second.states[i];
            t.states[i] = [c[0] * s1[0] + c[1] * s2[0], c[0] * s1[1] + c[1] * s2[1]];
            t.lyapunov_f[i] = lyapunov_from_plain(lam, t.grid[i], &t.states[i]);
        }
        t.partial_l2_mass = self.combined_mass(c);
        t
    }
}

/// Integrates `init1` and `init2` (plain data at `from`) of the mode system.
#[allow(clippy::too_many_arguments)]
pub fn integrate_pair(
    mode: &RadialMode,
    f: &ConformalFactor,
    from: f64,
    to: f64,
    init1: [f64; 2],
    init2: [f64; 2],
    stations: &[f64],
    opts: &IntegrationOptions,
) -> Result<FundamentalPair> {
    if !(mode.lambda > 0.0) {
        return Err(Error::invalid(
            "plain mode systems need lambda > 0; use integrate_kernel",
        ));
    }
    check_interval(f, from, to)?;
    let sys = PairedSystem {
        lambda: mode.lambda,
        l: mode.l,
        f,
        mass_sign: if to < from { -1.0 } else { 1.0 },
    };
    let integ = Integrator::new(opts.control(4));
    let mut xs = Vec::new();
    let mut ys: Vec<[f64; 7]> = Vec::new();
    let y0 = [init1[0], init1[1], init2[0], init2[1], 0.0, 0.0, 0.0];
    let (termination, stats) = integ.run(
        &sys,
        from,
        y0,
        &merged_stations(from, to, stations),
        |x, y| {
            xs.push(x);
            ys.push(*y);
        },
    );
    let lam = mode.lambda;
    let wronskian: Vec<f64> = ys.iter().map(|y| y[0] * y[3] - y[2] * y[1]).collect();
    let make = |off: usize, mass: usize| {
        let states: Vec<[f64; 2]> = ys.iter().map(|y| [y[off], y[off + 1]]).collect();
        Trajectory {
            representation: Representation::Plain,
            lambda: lam,
            l: mode.l,
            origin: from,
            lyapunov_f: xs
                .iter()
                .zip(&states)
                .map(|(&x, s)| lyapunov_from_plain(lam, x, s))
                .collect(),
            grid: xs.clone(),
            states,
            wronskian: wronskian.clone(),
            partial_l2_mass: ys.iter().map(|y| y[mass]).collect(),
            stats,
            termination,
        }
    };
    let mut first = make(0, 4);
    let mut second = make(2, 5);
    let mut cross: Vec<f64> = ys.iter().map(|y| y[6]).collect();
    if to < from {
        cross.reverse();
    }
    orient(&mut first);
    orient(&mut second);
    Ok(FundamentalPair {
        first,
        second,
        cross_mass: cross,
    })
}

/// Plain mode system from `init` at `from`; the Wronskian is taken against
/// the partner solution started at `c⁰ init = (−b₀, a₀)`.
pub fn integrate_mode(
    mode: &RadialMode,
    f: &ConformalFactor,
    from: f64,
    to: f64,
    init: [f64; 2],
    stations: &[f64],
    opts: &IntegrationOptions,
) -> Result<Trajectory> {
    Ok(integrate_pair(mode, f, from, to, init, [-init[1], init[0]], stations, opts)?.first)
}

fn orient(t: &mut Trajectory) {
    if t.grid.len() > 1 && t.grid[0] > t.grid[t.grid.len() - 1] {
        t.grid.reverse();
        t.states.reverse();
        t.wronskian.reverse();
        t.lyapunov_f.reverse();
        t.partial_l2_mass.reverse();
    }
}

/// `a = e^{λx} a_λ`, `b = e^{−λx} b_λ`.
pub fn to_hatted(traj: &Trajectory) -> Result<Trajectory> {
    if traj.representation != Representation::Plain {
        return Err(Error::invalid("to_hatted expects a plain trajectory"));
    }
    let lam = traj.lambda;
    let mut out = traj.clone();
    out.representation = Representation::Hatted;
    for (x, s) in out.grid.iter().zip(out.states.iter_mut()) {
        *s = [(lam * x).exp() * s[0], (-lam * x).exp() * s[1]];
    }
    out.lyapunov_f = out
        .grid
        .iter()
        .zip(&out.states)
        .map(|(&x, s)| hatted_f(lam, x, s))
        .collect();
    Ok(out)
}

fn hatted_f(lam: f64, x: f64, s: &[f64; 2]) -> f64 {
    (-4.0 * lam * x).exp() * s[0] * s[0] + s[1] * s[1]
}

fn hatted_f_tilde(lam: f64, x: f64, s: &[f64; 2]) -> f64 {
    s[0] * s[0] + (4.0 * lam * x).exp() * s[1] * s[1]
}

/// Finite-difference weights for the first derivative at `x0` (Fornberg).
fn derivative_weights(x0: f64, xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut c = vec![[0.0f64; 2]; n];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    for i in 1..n {
        let mn = i.min(1);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.iter().map(|w| w[1]).collect()
}

/// Largest residual of the hatted system along a hatted trajectory, with
/// derivatives from 5-point finite differences on the sample grid, relative
/// to `max(1, |a|, |b|)` at each node.
pub fn hatted_residual(traj: &Trajectory, f: &ConformalFactor) -> Result<f64> {
    if traj.representation != Representation::Hatted {
        return Err(Error::invalid(
            "hatted_residual expects a hatted trajectory",
        ));
    }
    let (lam, l) = (traj.lambda, traj.l);
    let n = traj.grid.len();
    if n < 5 {
        return Err(Error::invalid(
            "need at least 5 samples for the residual stencil",
        ));
    }
    let mut worst = 0.0_f64;
    for i in 2..n - 2 {
        let xs = &traj.grid[i - 2..=i + 2];
        let w = derivative_weights(traj.grid[i], xs);
        let da: f64 = (0..5).map(|k| w[k] * traj.states[i - 2 + k][0]).sum();
        let db: f64 = (0..5).map(|k| w[k] * traj.states[i - 2 + k][1]).sum();
        let x = traj.grid[i];
        let [a, b] = traj.states[i];
        let fx = f.eval(x);
        let ra = da - l * (2.0 * lam * x).exp() * fx * b;
        let rb = db + l * (-2.0 * lam * x).exp() * fx * a;
        let scale = 1f64.max(a.abs()).max(b.abs());
        worst = worst.max(ra.abs().max(rb.abs()) / scale);
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LyapunovSign {
    /// `F = e^{−4λx} a² + b²`, non-increasing in `x`.
    Plus,
    /// `F̃ = a² + e^{4λx} b²`, non-decreasing in `x`.
    Minus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub sign: LyapunovSign,
    pub values: Vec<f64>,
    /// Largest step against the expected direction, divided by `max |F|`.
    pub max_violation: f64,
    pub max_violation_abs: f64,
    /// `F` at the sample closest to the singular end.
    pub value_at_lower: f64,
    pub identically_zero: bool,
}

/// Monotonicity of `F` (or `F̃`) along a hatted trajectory, grid increasing.
pub fn lyapunov(traj: &Trajectory, sign: LyapunovSign) -> Result<MonotonicityReport> {
    if traj.representation != Representation::Hatted {
        return Err(Error::invalid("lyapunov expects a hatted trajectory"));
    }
    if !(traj.lambda > 0.0) {
        return Err(Error::invalid("lyapunov functions need lambda > 0"));
    }
    let lam = traj.lambda;
    let values: Vec<f64> = traj
        .grid
        .iter()
        .zip(&traj.states)
        .map(|(&x, s)| match sign {
            LyapunovSign::Plus => hatted_f(lam, x, s),
            LyapunovSign::Minus => hatted_f_tilde(lam, x, s),
        })
        .collect();
    let scale = values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let max_violation_abs = values
        .windows(2)
        .map(|w| match sign {
            LyapunovSign::Plus => w[1] - w[0],
            LyapunovSign::Minus => w[0] - w[1],
        })
        .fold(0.0, f64::max);
    Ok(MonotonicityReport {
        sign,
        max_violation: if scale > 0.0 {
            max_violation_abs / scale
        } else {
            0.0
        },
        max_violation_abs,
        value_at_lower: values.first().copied().unwrap_or(0.0),
        identically_zero: scale <= 1e-300,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> IntegrationOptions {
        IntegrationOptions::default()
    }

    #[test]
    fn zero_eigenvalue_kernel_is_constant() {
        let f = ConformalFactor::hyperbolic(1.0).unwrap();
        let t = integrate_kernel(0.0, &f, 1.0, 1e-6, [1.0, 0.0], &[], &opts()).unwrap();
        assert!(t.states.iter().all(|s| *s == [1.0, 0.0]));
        assert_eq!(t.termination, Termination::Completed);
    }

    #[test]
    fn kernel_rotation_against_closed_form() {
        // phase θ(x) = ∫_0^x l f, here (p, q) = (cos θ, −sin θ)
        let f = ConformalFactor::constant(1.0, 2.0).unwrap();
        let stations: Vec<f64> = (1..=20)
            .map(|k| k as f64 * std::f64::consts::FRAC_PI_2 / 20.0)
            .collect();
        let x0 = 1e-12;
        let t = integrate_kernel(
            1.0,
            &f,
            x0,
            std::f64::consts::FRAC_PI_2,
            [1.0, 0.0],
            &stations,
            &opts(),
        )
        .unwrap();
        for (x, s) in t.grid.iter().zip(&t.states) {
            let th = x - x0;
            assert!(
                (s[0] - th.cos()).abs() < 1e-9 && (s[1] + th.sin()).abs() < 1e-9,
                "x = {x}"
            );
        }
        assert!(t.norm_drift() < 1e-10);
    }

    #[test]
    fn kernel_norm_conserved_on_hyperbolic_factor() {
        let f = ConformalFactor::hyperbolic(1.0).unwrap();
        let t = integrate_kernel(1.0, &f, 1.0, 0.01, [1.0, 0.0], &[], &opts()).unwrap();
        assert!(t.norm_drift() < 1e-8);
    }

    #[test]
    fn mode_rejects_kernel_and_bad_interval() {
        let f = ConformalFactor::hyperbolic(1.0).unwrap();
        let m0 = RadialMode {
            lambda: 0.0,
            l: 1.0,
            representation: Representation::Kernel,
        };
        assert!(integrate_mode(&m0, &f, 1.0, 0.1, [1.0, 0.0], &[], &opts()).is_err());
        let m = RadialMode::new(1.0, 1.0).unwrap();
        assert!(integrate_mode(&m, &f, 1.0, 0.0, [1.0, 0.0], &[], &opts()).is_err());
        assert!(integrate_mode(&m, &f, 2.0, 0.5, [1.0, 0.0], &[], &opts()).is_err());
        assert!(RadialMode::new(-1.0, 0.0).is_err());
    }

    #[test]
    fn hatted_of_decoupled_solution_is_constant() {
        let f = ConformalFactor::hyperbolic(1.0).unwrap();
        let m = RadialMode::new(0.8, 0.0).unwrap();
        let x0: f64 = 1.0;
        let t = integrate_mode(
            &m,
            &f,
            x0,
            1e-4,
            [(-0.8 * x0).exp() * 2.0, (0.8 * x0).exp() * -3.0],
            &[],
            &opts(),
        )
        .unwrap();
        let h = to_hatted(&t).unwrap();
        for s in &h.states {
            assert!((s[0] - 2.0).abs() < 1e-9 && (s[1] + 3.0).abs() < 1e-9);
        }
        assert!(to_hatted(&h).is_err());
    }

    #[test]
    fn zero_solution_has_zero_lyapunov() {
        let f = ConformalFactor::hyperbolic(1.0).unwrap();
        let m = RadialMode::new(1.0, 2.0).unwrap();
        let t = integrate_mode(&m, &f, 1e-6, 1.0, [0.0, 0.0], &[], &opts()).unwrap();
        let r = lyapunov(&to_hatted(&t).unwrap(), LyapunovSign::Plus).unwrap();
        assert!(r.identically_zero);
        assert_eq!(r.max_violation, 0.0);
    }

    #[test]
    fn fornberg_weights_exact_on_quartics() {
        let xs = [0.1, 0.13, 0.2, 0.24, 0.4];
        let w = derivative_weights(0.2, &xs);
        let d: f64 = xs.iter().zip(&w).map(|(x, w)| w * x.powi(4)).sum();
        assert!((d - 4.0 * 0.2f64.powi(3)).abs() < 1e-10);
    }

    fn geometric(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64))
            .collect()
    }

    #[test]
    fn decoupled_closed_form() {
        let f = ConformalFactor::hyperbolic(1.0).unwrap();
        let m = RadialMode::new(1.3, 0.0).unwrap();
        let (x0, a0, b0) = (0.9, 0.4, -1.1);
        let t = integrate_mode(
            &m,
            &f,
            x0,
            1e-3,
            [a0, b0],
            &geometric(1e-3, x0, 30),
            &opts(),
        )
        .unwrap();
        for (x, s) in t.grid.iter().zip(&t.states) {
            assert!((s[0] - a0 * (-1.3 * (x - x0)).exp()).abs() < 1e-8);
            assert!((s[1] - b0 * (1.3 * (x - x0)).exp()).abs() < 1e-8);
        }
    }

    #[test]
    fn constant_factor_matches_matrix_exponential() {
        use nalgebra::{Matrix2, Vector2};
        for &(lam, l, c) in &[(1.0, 0.5, 1.0), (0.3, 2.0, 1.5), (2.0, 2.0, 1.0)] {
            let f = ConformalFactor::constant(c, 1.0).unwrap();
            let m = RadialMode::new(lam, l).unwrap();
            let t = integrate_mode(&m, &f, 1.0, 0.05, [1.0, 0.5], &[0.5, 0.2], &opts()).unwrap();
            let gen = Matrix2::new(-lam, l * c, -l * c, lam);
            for (x, s) in t.grid.iter().zip(&t.states) {
                let y = (gen * (x - 1.0)).exp() * Vector2::new(1.0, 0.5);
                assert!(
                    (s[0] - y[0]).abs() < 1e-8 && (s[1] - y[1]).abs() < 1e-8,
                    "({lam}, {l}, {c}) at {x}"
                );
            }
        }
    }

    #[test]
    fn wronskian_constant_on_hyperbolic_factor() {
        let f = ConformalFactor::hyperbolic(1.0).unwrap();
        let m = RadialMode::new(0.5, 1.0).unwrap();
        let t = integrate_mode(&m, &f, 1.0, 1e-3, [1.0, 0.0], &[], &opts()).unwrap();
        assert!(t.wronskian_drift() < 1e-7);
        assert_eq!(t.termination, Termination::Completed);
    }

    #[test]
    fn hatted_residual_is_small() {
        let f = ConformalFactor::hyperbolic(1.0).unwrap();
        let m = RadialMode::new(1.0, 2.0).unwrap();
        let t = integrate_mode(
            &m,
            &f,
            1.0,
            1e-3,
            [0.3, 0.8],
            &geometric(1e-3, 1.0, 3000),
            &opts(),
        )
        .unwrap();
        let h = to_hatted(&t).unwrap();
        assert!(hatted_residual(&h, &f).unwrap() < 1e-6);
    }

    #[test]
    fn lyapunov_functions_are_monotone() {
        let f = ConformalFactor::hyperbolic(1.0).unwrap();
        let m = RadialMode::new(0.7, 1.3).unwrap();
        for init in [[1.0, 0.0], [0.0, 1.0], [0.6, -0.8]] {
            let t = integrate_mode(&m, &f, 1.0, 1e-6, init, &[], &opts()).unwrap();
            let h = to_hatted(&t).unwrap();
            let plus = lyapunov(&h, LyapunovSign::Plus).unwrap();
            let minus = lyapunov(&h, LyapunovSign::Minus).unwrap();
            assert!(plus.max_violation < 1e-8 && minus.max_violation < 1e-8);
            assert!(!plus.identically_zero);
            // F decreases in x, so its value at the end dominates the start
            assert!(plus.value_at_lower >= *plus.values.last().unwrap());
        }
    }

    #[test]
    fn near_zero_data_stay_near_zero() {
        let f = ConformalFactor::hyperbolic(1.0).unwrap();
        let m = RadialMode::new(0.7, 1.3).unwrap();
        let t = integrate_mode(&m, &f, 1e-6, 1.0, [1e-12, -1e-12], &[], &opts()).unwrap();
        let r = lyapunov(&to_hatted(&t).unwrap(), LyapunovSign::Plus).unwrap();
        assert!(r.values.iter().all(|&v| v <= 1e-10));
    }

    #[test]
    fn trajectory_csv_has_expected_columns() {
        let f = ConformalFactor::hyperbolic(1.0).unwrap();
        let t = integrate_kernel(1.0, &f, 1.0, 0.5, [1.0, 0.0], &[], &opts()).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x,a,b,wronskian,F,partial_mass\n"));
        assert_eq!(text.lines().count(), t.grid.len() + 1);
    }

    #[test]
    fn partial_mass_grows_towards_the_end() {
        let f = ConformalFactor::power_law(1.5, 1.0).unwrap();
        let m = RadialMode::new(1.0, 3.0).unwrap();
        let t = integrate_mode(&m, &f, 1.0, 1e-3, [1.0, 1.0], &[], &opts()).unwrap();
        assert!(t.grid.windows(2).all(|w| w[0] < w[1]));
        assert!(t.partial_l2_mass.windows(2).all(|w| w[0] >= w[1]));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn kernel_norm_is_conserved(l in -10.0f64..10.0, p in 0.5f64..2.0, theta in 0.0f64..6.3) {
                let f = ConformalFactor::power_law(p, 1.0).unwrap();
                let lower = f.lower_limit_for_mass(50.0, 1e-8);
                let t = integrate_kernel(l, &f, 1.0, lower, [theta.cos(), theta.sin()], &[], &IntegrationOptions::default()).unwrap();
                prop_assert!(t.norm_drift() < 1e-7);
            }

            #[test]
            fn wronskian_is_conserved(lam in 0.1f64..5.0, l in -10.0f64..10.0, p in 0.5f64..2.0) {
                let f = ConformalFactor::power_law(p, 1.0).unwrap();
                let lower = f.lower_limit_for_mass(30.0, 1e-8);
                let m = RadialMode::new(lam, l).unwrap();
                let t = integrate_mode(&m, &f, 1.0, lower, [1.0, 0.0], &[], &IntegrationOptions::default()).unwrap();
                prop_assert!(t.wronskian_drift() < 1e-7);
            }
        }
    }
}
