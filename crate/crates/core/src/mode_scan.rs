//! Square-integrability tests of mode solutions and the `(λ, l)` scan.
//!
//! A cell is classified through three branches:
//! (i) the smallest cumulative mass over all solutions diverges,
//! (ii) a finite-mass direction exists but has nonzero boundary values while
//!     `∫ f = ∞` (so its mass cannot actually be finite),
//! (iii) the boundary values vanish and `F` forces the zero solution.
//! Anything the numerics cannot resolve is reported as `Indeterminate`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use crate::cross_section::truncate_modes;
use crate::cross_section::ModeSpectrum;
use crate::error::{Error, Result};
use crate::ode::Termination;
use crate::radial_ode::{
    self, FundamentalPair, IntegrationOptions, LyapunovSign, RadialMode, Representation, Trajectory,
};
use crate::warp_geometry::{classify_divergence, ConformalFactor, Divergence, WarpedMetricSpec};

/// Windows the collar is split into for the growth fit.
pub const N_WINDOWS: usize = 8;
/// Windows nearest the singular end used by the fit.
pub const FIT_WINDOWS: usize = 4;
/// Growth exponents (log10 ratio of consecutive window masses) within this
/// distance of the decay threshold are not resolved.
pub const EXPONENT_RESOLUTION: f64 = 0.05;
/// Largest oscillation of `a²`, `b²` over the last window for a limit to exist.
pub const LIMIT_TOL: f64 = 1e-6;
/// Cap on `∫ f` over the integrated range of a divergent factor.
pub const DEFAULT_MASS_BUDGET: f64 = 100.0;
/// Truncation depth on half-line collars.
pub const DEFAULT_HALF_LINE_HORIZON: f64 = 30.0;
pub const REFINE_TOL: f64 = 1e-6;

pub const ASSUMPTIONS: [&str; 2] = [
    "D_M is essentially self-adjoint with purely discrete spectrum",
    "eigenspinors have the unique continuation property; vanishing is only verified on the collar",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MassClass {
    Divergent,
    Finite,
    Unknown,
}

/// Variable in which the collar windows are equally spaced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowScale {
    /// `∫_x^ε f`, used for divergent factors.
    Distance,
    /// `log x`, finite convergent collars.
    LogX,
    /// `x`, half-line collars.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassEstimate {
    pub class: MassClass,
    pub scale: WindowScale,
    /// Cumulative mass down to the lowest sample.
    pub mass_at_lower: f64,
    /// Mass including the geometric tail, when finite.
    pub extrapolated: Option<f64>,
    /// Mean log10 ratio of consecutive window masses near the end.
    pub exponent: Option<f64>,
    pub spread: Option<f64>,
    /// Window masses from the interior towards the end.
    pub increments: Vec<f64>,
}

pub fn window_scale(f: &ConformalFactor) -> Result<WindowScale> {
    Ok(if f.is_half_line() {
        WindowScale::Linear
    } else if classify_divergence(f)?.class == Divergence::Divergent {
        WindowScale::Distance
    } else {
        WindowScale::LogX
    })
}

/// `N_WINDOWS + 1` boundaries from `upper` down to `lower`.
pub fn window_boundaries(f: &ConformalFactor, upper: f64, lower: f64) -> Result<Vec<f64>> {
    if !(lower < upper) {
        return Err(Error::invalid(format!(
            "empty window range [{lower}, {upper}]"
        )));
    }
    let scale = window_scale(f)?;
    let n = N_WINDOWS as f64;
    let mut out: Vec<f64> = match scale {
        WindowScale::Linear => (0..=N_WINDOWS)
            .map(|k| upper + (lower - upper) * k as f64 / n)
            .collect(),
        WindowScale::LogX => {
            if lower <= 0.0 {
                return Err(Error::invalid(
                    "logarithmic windows need a positive lower end",
                ));
            }
            let r = (lower / upper).ln();
            (0..=N_WINDOWS)
                .map(|k| upper * (r * k as f64 / n).exp())
                .collect()
        }
        WindowScale::Distance => {
            let total = f.integral(lower, upper);
            (0..=N_WINDOWS)
                .map(|k| invert_distance(f, upper, lower, total * k as f64 / n))
                .collect()
        }
    };
    out[0] = upper;
    out[N_WINDOWS] = lower;
    Ok(out)
}

/// `x ∈ [lower, upper]` with `∫_x^upper f = s`.
fn invert_distance(f: &ConformalFactor, upper: f64, lower: f64, s: f64) -> f64 {
    let (mut lo, mut hi) = (lower, upper);
    for _ in 0..200 {
        let mid = if lo > 0.0 {
            (lo * hi).sqrt()
        } else {
            0.5 * (lo + hi)
        };
        if f.integral(mid, upper) > s {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi.abs().max(1e-300) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Piecewise-linear value of `vals` over the increasing `grid`.
fn value_at(grid: &[f64], vals: &[f64], x: f64) -> f64 {
    let i = grid.partition_point(|&g| g < x);
    if i == 0 {
        return vals[0];
    }
    if i == grid.len() {
        return vals[grid.len() - 1];
    }
    if grid[i] == x {
        return vals[i];
    }
    let t = (x - grid[i - 1]) / (grid[i] - grid[i - 1]);
    vals[i - 1] + t * (vals[i] - vals[i - 1])
}

/// Classifies a sequence of window masses ordered towards the end.
pub fn classify_increments(increments: &[f64], total: f64, scale: WindowScale) -> MassEstimate {
    let mut est = MassEstimate {
        class: MassClass::Unknown,
        scale,
        mass_at_lower: total,
        extrapolated: None,
        exponent: None,
        spread: None,
        increments: increments.to_vec(),
    };
    let fit = &increments[increments.len().saturating_sub(FIT_WINDOWS)..];
    // the last window adds nothing resolvable: converged to rounding
    if total <= 1e-300 || fit.last().is_some_and(|&d| d <= 1e-12 * total) {
        est.class = MassClass::Finite;
        est.extrapolated = Some(total);
        return est;
    }
    if fit.len() < 2 || fit.iter().any(|&d| d <= 0.0) {
        return est;
    }
    let ratios: Vec<f64> = fit.windows(2).map(|w| (w[1] / w[0]).log10()).collect();
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    est.exponent = Some(mean);
    est.spread = Some(hi - lo);
    if lo > -EXPONENT_RESOLUTION {
        est.class = MassClass::Divergent;
    } else if hi < -EXPONENT_RESOLUTION {
        est.class = MassClass::Finite;
        let r = 10f64.powf(hi);
        est.extrapolated = Some(total + fit[fit.len() - 1] * r / (1.0 - r));
    }
    est
}

/// Cumulative `∫ (a² + b²) f` from the top of the trajectory towards its
/// lowest sample, with a growth-model verdict as the lower end approaches
/// the singular end.
pub fn l2_mass(traj: &Trajectory, f: &ConformalFactor) -> Result<MassEstimate> {
    let n = traj.grid.len();
    if n < 2 {
        return Err(Error::invalid("trajectory has fewer than two samples"));
    }
    let (lower, upper) = (traj.grid[0], traj.grid[n - 1]);
    let top = traj.partial_l2_mass[n - 1];
    let cum = |x: f64| (value_at(&traj.grid, &traj.partial_l2_mass, x) - top).abs();
    let bounds = window_boundaries(f, upper, lower)?;
    let increments: Vec<f64> = bounds.windows(2).map(|w| cum(w[1]) - cum(w[0])).collect();
    Ok(classify_increments(
        &increments,
        cum(lower),
        window_scale(f)?,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryLimits {
    pub a2: f64,
    pub b2: f64,
    pub a2_exists: bool,
    pub b2_exists: bool,
    pub oscillation_a2: f64,
    pub oscillation_b2: f64,
    /// Too few samples near the end to decide.
    pub indeterminate: bool,
}

impl BoundaryLimits {
    pub fn exist(&self) -> bool {
        !self.indeterminate && self.a2_exists && self.b2_exists
    }

    pub fn vanish(&self) -> bool {
        self.exist() && self.a2 <= LIMIT_TOL && self.b2 <= LIMIT_TOL
    }

    /// Vanishing relative to `scale`, the size of the solution at the top
    /// (for hatted solutions `F` there, a lower bound for `a² + b²` at the end).
    pub fn vanish_relative(&self, scale: f64) -> bool {
        self.exist() && self.a2 + self.b2 <= LIMIT_TOL * scale
    }
}

/// Limits of `a²` and `b²` at the singular end, from the last decade of
/// samples (last window on half-lines), linearly extrapolated to `x = 0`.
pub fn boundary_limits(traj: &Trajectory) -> Result<BoundaryLimits> {
    if traj.representation == Representation::Plain {
        return Err(Error::invalid(
            "boundary limits are taken in the hatted representation",
        ));
    }
    let n = traj.grid.len();
    if n == 0 {
        return Err(Error::invalid("empty trajectory"));
    }
    let lower = traj.grid[0];
    let cut = if lower > 0.0 {
        10.0 * lower
    } else {
        lower + (traj.grid[n - 1] - lower) / N_WINDOWS as f64
    };
    let m = traj.grid.partition_point(|&x| x <= cut);
    let sq = |k: usize, i: usize| traj.states[i][k] * traj.states[i][k];
    let osc = |k: usize| {
        let vals = (0..m).map(|i| sq(k, i));
        let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
        hi - lo
    };
    let limit = |k: usize| {
        if lower > 0.0 && m >= 2 {
            let (x0, x1) = (traj.grid[0], traj.grid[1]);
            let (v0, v1) = (sq(k, 0), sq(k, 1));
            (v0 - x0 * (v1 - v0) / (x1 - x0)).max(0.0)
        } else {
            sq(k, 0)
        }
    };
    let (a2, b2) = (limit(0), limit(1));
    let (oa, ob) = if m >= 1 { (osc(0), osc(1)) } else { (0.0, 0.0) };
    Ok(BoundaryLimits {
        a2,
        b2,
        a2_exists: oa <= LIMIT_TOL * a2.max(1.0),
        b2_exists: ob <= LIMIT_TOL * b2.max(1.0),
        oscillation_a2: oa,
        oscillation_b2: ob,
        indeterminate: m < 3,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Classification {
    NoL2Solution,
    CandidateBoundState,
    Indeterminate,
}

/// Which branch of the argument produced a `NoL2Solution`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    MassDivergence,
    NonzeroBoundaryValues,
    ForcedZero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Verdict on the smallest mass over solutions with unit data at the top.
    pub mass: MassEstimate,
    pub fundamental_mass: Vec<MassClass>,
    pub limits: BoundaryLimits,
    /// `F` of the selected solution at the lowest sample.
    pub f_at_lower: f64,
    pub blowup: Vec<bool>,
    pub termination: Termination,
    pub wronskian_drift: Option<f64>,
    pub kernel_norm_drift: Option<f64>,
    pub lyapunov_plus_violation: Option<f64>,
    pub lyapunov_minus_violation: Option<f64>,
    /// Hatted `b²/(a² + b²)` at the lowest sample for the solution starting at `(1, 0)`.
    pub boundary_mismatch: Option<f64>,
    /// Coefficients of the selected solution on the fundamental pair.
    pub selected: Option<[f64; 2]>,
    /// The selected solution was integrated up from the end instead.
    pub shot_from_end: bool,
    pub steps: usize,
    pub rejected_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralVerdict {
    pub lambda: f64,
    pub l: f64,
    pub classification: Classification,
    pub branch: Option<Branch>,
    pub diagnostics: Diagnostics,
    pub assumptions: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanOptions {
    pub integration: IntegrationOptions,
    pub mass_budget: f64,
    pub half_line_horizon: f64,
    pub refine: bool,
    pub refine_tol: f64,
    pub threads: Option<usize>,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self {
            integration: IntegrationOptions::default(),
            mass_budget: DEFAULT_MASS_BUDGET,
            half_line_horizon: DEFAULT_HALF_LINE_HORIZON,
            refine: true,
            refine_tol: REFINE_TOL,
            threads: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub no_l2_solution: usize,
    pub candidate_bound_state: usize,
    pub indeterminate: usize,
    pub total: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MonitorSummary {
    pub max_kernel_norm_drift: f64,
    pub max_wronskian_drift: f64,
    pub max_lyapunov_plus_violation: f64,
    pub max_lyapunov_minus_violation: f64,
    pub trajectories: usize,
    pub steps: usize,
    pub rejected_steps: usize,
}

/// A candidate located by golden-section refinement of the boundary mismatch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinedCandidate {
    pub lambda: f64,
    pub l: f64,
    pub bracket: [f64; 2],
    pub mismatch: f64,
    /// Extrapolated mass of the solution with hatted data `(1, 0)` at the top.
    pub mass: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanReport {
    pub spec: WarpedMetricSpec,
    pub cutoff: f64,
    pub l_grid: Vec<f64>,
    /// Row labels: `0` for the kernel (when present), then the distinct positive eigenvalues of `A`.
    pub lambdas: Vec<f64>,
    pub multiplicities: Vec<usize>,
    pub upper: f64,
    pub lower: f64,
    pub verdicts: Vec<Vec<SpectralVerdict>>,
    pub summary: Summary,
    pub monitors: MonitorSummary,
    pub refined: Vec<RefinedCandidate>,
    pub warnings: Vec<String>,
    pub index_note: Option<String>,
}

impl ScanReport {
    pub fn cells(&self) -> impl Iterator<Item = &SpectralVerdict> {
        self.verdicts.iter().flatten()
    }

    /// Classification matrix with one row per `λ` and one column per `l`.
    pub fn write_matrix_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["lambda".to_string()];
        header.extend(self.l_grid.iter().map(|l| l.to_string()));
        w.write_record(&header)?;
        for (lam, row) in self.lambdas.iter().zip(&self.verdicts) {
            let mut rec = vec![lam.to_string()];
            rec.extend(row.iter().map(|v| format!("{:?}", v.classification)));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Lowest point reached on the collar: `δ_min`, raised until `∫ f` over the
/// range stays within `budget`; `−horizon` on half-lines.
pub fn scan_lower_limit(f: &ConformalFactor, budget: f64, horizon: f64) -> f64 {
    if f.is_half_line() {
        -horizon
    } else {
        f.lower_limit_for_mass(budget, f.delta_min(horizon))
    }
}

/// `λ·T` allowed on half-lines: deeper, the growing solution swamps the
/// decaying one by more than `e^{2λT}` and the latter is lost to rounding.
pub const DICHOTOMY_BUDGET: f64 = 5.0;

/// Sampling of one integration range.
struct Range {
    lower: f64,
    /// Window boundaries, where masses are read off.
    stations: Vec<f64>,
    /// Window boundaries plus extra samples in the last window.
    samples: Vec<f64>,
}

impl Range {
    fn new(f: &ConformalFactor, upper: f64, lower: f64) -> Result<Self> {
        let stations = window_boundaries(f, upper, lower)?;
        let a = stations[N_WINDOWS - 1];
        let probes = (1..16).map(|k| {
            let t = k as f64 / 16.0;
            if lower > 0.0 {
                a * (lower / a).powf(t)
            } else {
                a + (lower - a) * t
            }
        });
        let mut samples: Vec<f64> = stations.iter().copied().chain(probes).collect();
        samples.sort_by(|x, y| y.total_cmp(x));
        Ok(Self {
            lower,
            stations,
            samples,
        })
    }
}

struct CellContext<'a> {
    f: &'a ConformalFactor,
    upper: f64,
    /// Range of the top-down fundamental pair.
    range: Range,
    /// Half-lines: full-depth range for the solution shot up from the end.
    deep: Option<Range>,
    divergent: bool,
    opts: IntegrationOptions,
}

impl<'a> CellContext<'a> {
    fn new(spec: &'a WarpedMetricSpec, lambda: f64, opts: &ScanOptions) -> Result<Self> {
        let f = spec.effective_factor();
        let upper = f.start();
        let lower = scan_lower_limit(f, opts.mass_budget, opts.half_line_horizon);
        let (range, deep) = if f.is_half_line() && lambda > 0.0 {
            let shallow = lower.max(upper - DICHOTOMY_BUDGET / lambda);
            (
                Range::new(f, upper, shallow)?,
                Some(Range::new(f, upper, lower)?),
            )
        } else {
            (Range::new(f, upper, lower)?, None)
        };
        Ok(Self {
            f,
            upper,
            range,
            deep,
            divergent: spec.divergence == Divergence::Divergent,
            opts: opts.integration.with_floor_for(lower),
        })
    }
}

fn decide(
    mass: &MassEstimate,
    limits: &BoundaryLimits,
    truncated: bool,
    divergent: bool,
    forced_zero: bool,
    scale: f64,
) -> (Classification, Option<Branch>) {
    use Classification::*;
    if truncated {
        return (Indeterminate, None);
    }
    match mass.class {
        MassClass::Divergent => (NoL2Solution, Some(Branch::MassDivergence)),
        MassClass::Unknown => (Indeterminate, None),
        MassClass::Finite if !limits.exist() => (Indeterminate, None),
        MassClass::Finite if limits.vanish_relative(scale) => {
            if forced_zero {
                (NoL2Solution, Some(Branch::ForcedZero))
            } else {
                (Indeterminate, None)
            }
        }
        MassClass::Finite if divergent => (NoL2Solution, Some(Branch::NonzeroBoundaryValues)),
        MassClass::Finite => (CandidateBoundState, None),
    }
}

fn assumptions() -> Vec<String> {
    ASSUMPTIONS.iter().map(|s| s.to_string()).collect()
}

fn mass_samples(grid: &[f64], vals: &[f64], bounds: &[f64]) -> Vec<f64> {
    bounds.iter().map(|&x| value_at(grid, vals, x)).collect()
}

fn kernel_cell(ctx: &CellContext, l: f64) -> Result<SpectralVerdict> {
    let traj = radial_ode::integrate_kernel(
        l,
        ctx.f,
        ctx.upper,
        ctx.range.lower,
        [1.0, 0.0],
        &ctx.range.samples,
        &ctx.opts,
    )?;
    let truncated = traj.is_truncated();
    let mass = l2_mass(&traj, ctx.f)?;
    let limits = boundary_limits(&traj)?;
    let (classification, branch) = decide(&mass, &limits, truncated, ctx.divergent, false, 1.0);
    Ok(SpectralVerdict {
        lambda: 0.0,
        l,
        classification,
        branch,
        diagnostics: Diagnostics {
            fundamental_mass: vec![mass.class],
            mass,
            limits,
            f_at_lower: traj.lyapunov_f[0],
            blowup: vec![traj.termination == Termination::Blowup],
            termination: traj.termination,
            wronskian_drift: None,
            kernel_norm_drift: Some(traj.norm_drift()),
            lyapunov_plus_violation: None,
            lyapunov_minus_violation: None,
            boundary_mismatch: None,
            selected: Some([1.0, 0.0]),
            shot_from_end: false,
            steps: traj.stats.steps,
            rejected_steps: traj.stats.rejected,
        },
        assumptions: assumptions(),
    })
}

fn fundamental_pair(ctx: &CellContext, lambda: f64, l: f64) -> Result<FundamentalPair> {
    let mode = RadialMode::new(lambda, l)?;
    let u = ctx.upper;
    radial_ode::integrate_pair(
        &mode,
        ctx.f,
        u,
        ctx.range.lower,
        [(-lambda * u).exp(), 0.0],
        [0.0, (lambda * u).exp()],
        &ctx.range.samples,
        &ctx.opts,
    )
}

/// Smallest eigenvalue and its unit eigenvector of the Gram matrix `[[p, r], [r, q]]`.
fn min_eigen(p: f64, q: f64, r: f64) -> (f64, [f64; 2]) {
    let mean = 0.5 * (p + q);
    let rad = (0.25 * (p - q) * (p - q) + r * r).sqrt();
    let big = mean + rad;
    let mu = if big > 0.0 {
        ((p * q - r * r) / big).max(0.0)
    } else {
        0.0
    };
    let v1 = [r, mu - p];
    let v2 = [mu - q, r];
    let v = if v1[0].hypot(v1[1]) >= v2[0].hypot(v2[1]) {
        v1
    } else {
        v2
    };
    let n = v[0].hypot(v[1]);
    if n > 0.0 {
        (mu, [v[0] / n, v[1] / n])
    } else if p <= q {
        (mu, [1.0, 0.0])
    } else {
        (mu, [0.0, 1.0])
    }
}

fn mismatch(t: &Trajectory) -> Result<f64> {
    let h = radial_ode::to_hatted(t)?;
    let [a, b] = h.states[0];
    let n = a * a + b * b;
    Ok(if n > 0.0 { b * b / n } else { 0.0 })
}

fn mode_cell(ctx: &CellContext, lambda: f64, l: f64) -> Result<SpectralVerdict> {
    let pair = fundamental_pair(ctx, lambda, l)?;
    let truncated = pair.first.is_truncated();
    let grid = &pair.first.grid;
    let stations = &ctx.range.stations;
    let m11 = mass_samples(grid, &pair.first.partial_l2_mass, stations);
    let m22 = mass_samples(grid, &pair.second.partial_l2_mass, stations);
    let m12 = mass_samples(grid, &pair.cross_mass, stations);
    let mu: Vec<f64> = (0..stations.len())
        .map(|k| min_eigen(m11[k], m22[k], m12[k]).0)
        .collect();
    let increments: Vec<f64> = mu.windows(2).map(|w| (w[1] - w[0]).max(0.0)).collect();
    let last = stations.len() - 1;
    let (_, c) = min_eigen(m11[last], m22[last], m12[last]);
    let (mass, selected, truncated) = match &ctx.deep {
        None => {
            let mass = classify_increments(&increments, mu[last], window_scale(ctx.f)?);
            (mass, radial_ode::to_hatted(&pair.combine(c))?, truncated)
        }
        Some(deep) => {
            // On a half-line the decaying solution is only stable when shot up from the end.
            let mode = RadialMode::new(lambda, l)?;
            let up = radial_ode::integrate_mode(
                &mode,
                ctx.f,
                deep.lower,
                ctx.upper,
                [0.0, 1.0],
                &deep.samples,
                &ctx.opts,
            )?;
            (
                l2_mass(&up, ctx.f)?,
                radial_ode::to_hatted(&up)?,
                truncated || up.is_truncated(),
            )
        }
    };
    let limits = boundary_limits(&selected)?;
    let scale = *selected.lyapunov_f.last().expect("non-empty trajectory");
    let plus = radial_ode::lyapunov(&selected, LyapunovSign::Plus)?;
    // the selected combination can cancel heavily; monitor the fundamental solutions
    let mut lp = 0.0_f64;
    let mut lm = 0.0_f64;
    for t in [&pair.first, &pair.second] {
        let h = radial_ode::to_hatted(t)?;
        lp = lp.max(radial_ode::lyapunov(&h, LyapunovSign::Plus)?.max_violation);
        lm = lm.max(radial_ode::lyapunov(&h, LyapunovSign::Minus)?.max_violation);
    }
    let (classification, branch) = decide(
        &mass,
        &limits,
        truncated,
        ctx.divergent,
        plus.identically_zero,
        scale,
    );
    let fundamental_mass = [&pair.first, &pair.second]
        .iter()
        .map(|t| l2_mass(t, ctx.f).map(|m| m.class))
        .collect::<Result<Vec<_>>>()?;
    Ok(SpectralVerdict {
        lambda,
        l,
        classification,
        branch,
        diagnostics: Diagnostics {
            mass,
            fundamental_mass,
            limits,
            f_at_lower: plus.value_at_lower,
            blowup: vec![pair.first.termination == Termination::Blowup; 2],
            termination: pair.first.termination,
            wronskian_drift: Some(pair.first.wronskian_drift()),
            kernel_norm_drift: None,
            lyapunov_plus_violation: Some(lp),
            lyapunov_minus_violation: Some(lm),
            boundary_mismatch: Some(mismatch(&pair.first)?),
            selected: ctx.deep.is_none().then_some(c),
            shot_from_end: ctx.deep.is_some(),
            steps: pair.first.stats.steps,
            rejected_steps: pair.first.stats.rejected,
        },
        assumptions: assumptions(),
    })
}

fn cell(ctx: &CellContext, lambda: f64, l: f64) -> SpectralVerdict {
    let res = if lambda == 0.0 {
        kernel_cell(ctx, l)
    } else {
        mode_cell(ctx, lambda, l)
    };
    res.unwrap_or_else(|e| failed_cell(lambda, l, &e))
}

fn failed_cell(lambda: f64, l: f64, e: &Error) -> SpectralVerdict {
    let empty = MassEstimate {
        class: MassClass::Unknown,
        scale: WindowScale::LogX,
        mass_at_lower: f64::NAN,
        extrapolated: None,
        exponent: None,
        spread: None,
        increments: Vec::new(),
    };
    let mut assumptions = assumptions();
    assumptions.push(format!("integration failed: {e}"));
    SpectralVerdict {
        lambda,
        l,
        classification: Classification::Indeterminate,
        branch: None,
        diagnostics: Diagnostics {
            mass: empty,
            fundamental_mass: Vec::new(),
            limits: BoundaryLimits {
                a2: f64::NAN,
                b2: f64::NAN,
                a2_exists: false,
                b2_exists: false,
                oscillation_a2: f64::NAN,
                oscillation_b2: f64::NAN,
                indeterminate: true,
            },
            f_at_lower: f64::NAN,
            blowup: Vec::new(),
            termination: Termination::StepLimit,
            wronskian_drift: None,
            kernel_norm_drift: None,
            lyapunov_plus_violation: None,
            lyapunov_minus_violation: None,
            boundary_mismatch: None,
            selected: None,
            shot_from_end: false,
            steps: 0,
            rejected_steps: 0,
        },
        assumptions,
    }
}

/// Golden-section minimisation of `g` on `[a, b]` down to width `tol`.
pub fn golden_section(mut a: f64, mut b: f64, tol: f64, g: impl Fn(f64) -> f64) -> f64 {
    let inv_phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut gc, mut gd) = (g(c), g(d));
    while (b - a).abs() > tol {
        if gc <= gd {
            b = d;
            d = c;
            gd = gc;
            c = b - inv_phi * (b - a);
            gc = g(c);
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + inv_phi * (b - a);
            gd = g(d);
        }
    }
    0.5 * (a + b)
}

fn refine_row(
    ctx: &CellContext,
    row: &[SpectralVerdict],
    grid: &[f64],
    tol: f64,
) -> Vec<RefinedCandidate> {
    let obj: Vec<f64> = row
        .iter()
        .map(|v| v.diagnostics.boundary_mismatch.unwrap_or(f64::INFINITY))
        .collect();
    let lambda = row[0].lambda;
    let mut out = Vec::new();
    for i in 0..row.len() {
        if row[i].classification != Classification::CandidateBoundState || !(obj[i] < 1.0 - 1e-9) {
            continue;
        }
        let left = i == 0 || obj[i] <= obj[i - 1];
        let right = i + 1 == row.len() || obj[i] < obj[i + 1];
        if !(left && right) || row.len() < 2 {
            continue;
        }
        let bracket = [grid[i.saturating_sub(1)], grid[(i + 1).min(grid.len() - 1)]];
        let g = |l: f64| {
            fundamental_pair(ctx, lambda, l)
                .and_then(|p| mismatch(&p.first))
                .unwrap_or(f64::INFINITY)
        };
        let l = golden_section(bracket[0], bracket[1], tol, g);
        let mass = fundamental_pair(ctx, lambda, l)
            .and_then(|p| l2_mass(&p.first, ctx.f))
            .ok()
            .and_then(|m| m.extrapolated);
        out.push(RefinedCandidate {
            lambda,
            l,
            bracket,
            mismatch: g(l),
            mass,
        });
    }
    out
}

/// Scans every `(λ, l)` cell of the truncated mode set against the l-grid.
pub fn scan_point_spectrum(
    spec: &WarpedMetricSpec,
    modes: &ModeSpectrum,
    l_grid: &[f64],
    opts: &ScanOptions,
) -> Result<ScanReport> {
    if l_grid.iter().any(|l| !l.is_finite()) {
        return Err(Error::invalid("l-grid values must be finite"));
    }
    match opts.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::invalid(format!("cannot build worker pool: {e}")))?
            .install(|| scan_inner(spec, modes, l_grid, opts)),
        None => scan_inner(spec, modes, l_grid, opts),
    }
}

fn scan_inner(
    spec: &WarpedMetricSpec,
    modes: &ModeSpectrum,
    l_grid: &[f64],
    opts: &ScanOptions,
) -> Result<ScanReport> {
    let f = spec.effective_factor();
    let upper = f.start();
    let lower = scan_lower_limit(f, opts.mass_budget, opts.half_line_horizon);
    let divergent = spec.divergence == Divergence::Divergent;
    let mut lambdas = Vec::new();
    let mut multiplicities = Vec::new();
    if modes.kernel_multiplicity() > 0 {
        lambdas.push(0.0);
        multiplicities.push(modes.kernel_multiplicity());
    }
    for e in modes.positive_modes() {
        lambdas.push(e.lambda);
        multiplicities.push(e.multiplicity);
    }
    let mut warnings = Vec::new();
    if lambdas.is_empty() {
        warnings.push(format!(
            "no eigenvalue of A satisfies |lambda| <= {}; nothing to scan",
            modes.cutoff
        ));
    }
    if l_grid.is_empty() {
        warnings.push("empty l-grid".to_string());
    }
    let contexts = lambdas
        .iter()
        .map(|&lam| CellContext::new(spec, lam, opts))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, f64)> = (0..lambdas.len())
        .flat_map(|r| l_grid.iter().map(move |&l| (r, l)))
        .collect();
    let flat: Vec<SpectralVerdict> = jobs
        .par_iter()
        .map(|&(r, l)| cell(&contexts[r], lambdas[r], l))
        .collect();
    let verdicts: Vec<Vec<SpectralVerdict>> = if l_grid.is_empty() {
        vec![Vec::new(); lambdas.len()]
    } else {
        flat.chunks(l_grid.len()).map(|c| c.to_vec()).collect()
    };

    let mut summary = Summary::default();
    let mut monitors = MonitorSummary::default();
    for v in verdicts.iter().flatten() {
        summary.total += 1;
        match v.classification {
            Classification::NoL2Solution => summary.no_l2_solution += 1,
            Classification::CandidateBoundState => summary.candidate_bound_state += 1,
            Classification::Indeterminate => summary.indeterminate += 1,
        }
        let d = &v.diagnostics;
        let upd = |m: &mut f64, x: Option<f64>| *m = m.max(x.unwrap_or(0.0));
        upd(&mut monitors.max_kernel_norm_drift, d.kernel_norm_drift);
        upd(&mut monitors.max_wronskian_drift, d.wronskian_drift);
        upd(
            &mut monitors.max_lyapunov_plus_violation,
            d.lyapunov_plus_violation,
        );
        upd(
            &mut monitors.max_lyapunov_minus_violation,
            d.lyapunov_minus_violation,
        );
        monitors.trajectories += if v.lambda == 0.0 { 1 } else { 2 };
        monitors.steps += d.steps;
        monitors.rejected_steps += d.rejected_steps;
        if let Some(note) = v.assumptions.get(ASSUMPTIONS.len()) {
            warnings.push(format!("cell (lambda = {}, l = {}): {note}", v.lambda, v.l));
        }
    }

    let refined = if opts.refine && !divergent {
        let rows: Vec<usize> = (0..verdicts.len())
            .filter(|&r| verdicts[r].first().is_some_and(|v| v.lambda > 0.0))
            .collect();
        rows.par_iter()
            .flat_map_iter(|&r| refine_row(&contexts[r], &verdicts[r], l_grid, opts.refine_tol))
            .collect()
    } else {
        Vec::new()
    };

    let index_note = (summary.total > 0 && summary.no_l2_solution == summary.total).then(|| {
        "every scanned cell is NoL2Solution: neither D+ nor its adjoint has L2 kernel on the scanned modes, \
         so the L2-index vanishes"
            .to_string()
    });
    Ok(ScanReport {
        spec: spec.clone(),
        cutoff: modes.cutoff,
        l_grid: l_grid.to_vec(),
        lambdas,
        multiplicities,
        upper,
        lower,
        verdicts,
        summary,
        monitors,
        refined,
        warnings,
        index_note,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cross_section::{build_a, CrossSection, SpectralEntry, SpinStructure};

    fn geometric(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64))
            .collect()
    }

    #[test]
    fn constant_solution_on_hyperbolic_factor_diverges() {
        let f = ConformalFactor::hyperbolic(1.0).unwrap();
        let grid = geometric(1e-8, 1.0, 4000);
        let states = vec![[1.0, 0.0]; grid.len()];
        let t = Trajectory::from_samples(1.0, 0.0, grid, states, &f).unwrap();
        let m = l2_mass(&t, &f).unwrap();
        assert_eq!(m.class, MassClass::Divergent);
        assert!(m.exponent.unwrap().abs() < 1e-3);
    }

    #[test]
    fn zero_solution_has_zero_finite_mass() {
        let f = ConformalFactor::hyperbolic(1.0).unwrap();
        let grid = geometric(1e-8, 1.0, 100);
        let t =
            Trajectory::from_samples(1.0, 0.0, grid.clone(), vec![[0.0, 0.0]; 100], &f).unwrap();
        let m = l2_mass(&t, &f).unwrap();
        assert_eq!(m.class, MassClass::Finite);
        assert_eq!(m.extrapolated, Some(0.0));
    }

    #[test]
    fn linear_solution_has_half_unit_mass() {
        // ∫₀¹ x² · (1/x) dx = 1/2
        let f = ConformalFactor::hyperbolic(1.0).unwrap();
        let grid = geometric(1e-8, 1.0, 20_000);
        let states = grid.iter().map(|&x| [x, 0.0]).collect();
        let t = Trajectory::from_samples(1.0, 0.0, grid, states, &f).unwrap();
        let m = l2_mass(&t, &f).unwrap();
        assert_eq!(m.class, MassClass::Finite);
        assert!((m.extrapolated.unwrap() - 0.5).abs() < 1e-6);
    }

    #[test]
    fn increments_classification() {
        let geo: Vec<f64> = (0..8).map(|k| 0.1f64.powi(k)).collect();
        let total: f64 = geo.iter().sum();
        let m = classify_increments(&geo, total, WindowScale::LogX);
        assert_eq!(m.class, MassClass::Finite);
        assert!((m.extrapolated.unwrap() - 1.0 / 0.9).abs() < 1e-12);
        let flat = vec![1.0; 8];
        assert_eq!(
            classify_increments(&flat, 8.0, WindowScale::Distance).class,
            MassClass::Divergent
        );
        let mixed = [1.0, 1.0, 1.0, 1.0, 1.0, 0.5, 1.0, 0.5];
        assert_eq!(
            classify_increments(&mixed, 7.0, WindowScale::Distance).class,
            MassClass::Unknown
        );
    }

    #[test]
    fn boundary_limits_of_constants_and_zero() {
        let f = ConformalFactor::hyperbolic(1.0).unwrap();
        let grid = geometric(1e-8, 1.0, 200);
        let hatted = |v: [f64; 2]| {
            let mut t = Trajectory::from_samples(1.0, 0.0, grid.clone(), vec![v; 200], &f).unwrap();
            t.representation = Representation::Hatted;
            t
        };
        let z = boundary_limits(&hatted([0.0, 0.0])).unwrap();
        assert!(z.exist() && z.vanish());
        let c = boundary_limits(&hatted([2.0, -3.0])).unwrap();
        assert!(c.exist() && (c.a2 - 4.0).abs() < 1e-12 && (c.b2 - 9.0).abs() < 1e-12);
        let plain =
            Trajectory::from_samples(1.0, 0.0, grid.clone(), vec![[1.0, 0.0]; 200], &f).unwrap();
        assert!(boundary_limits(&plain).is_err());
        let sparse =
            Trajectory::from_samples(1.0, 0.0, vec![1e-8, 0.5, 1.0], vec![[1.0, 0.0]; 3], &f)
                .unwrap();
        let mut sparse = sparse;
        sparse.representation = Representation::Hatted;
        assert!(boundary_limits(&sparse).unwrap().indeterminate);
    }

    #[test]
    fn oscillating_squares_have_no_limit() {
        let f = ConformalFactor::hyperbolic(1.0).unwrap();
        let grid = geometric(1e-8, 1.0, 2000);
        let states = grid
            .iter()
            .map(|&x| [(3.0 * x.ln()).cos(), (3.0 * x.ln()).sin()])
            .collect();
        let mut t = Trajectory::from_samples(1.0, 3.0, grid, states, &f).unwrap();
        t.representation = Representation::Hatted;
        let b = boundary_limits(&t).unwrap();
        assert!(!b.a2_exists && !b.b2_exists);
    }

    #[test]
    fn shot_zero_solution_has_zero_limits() {
        let f = ConformalFactor::hyperbolic(1.0).unwrap();
        let m = RadialMode::new(1.0, 2.0).unwrap();
        let stations = geometric(1e-8, 1.0, 50);
        let t = radial_ode::integrate_mode(
            &m,
            &f,
            1e-8,
            1.0,
            [0.0, 0.0],
            &stations,
            &IntegrationOptions::default(),
        )
        .unwrap();
        let lim = boundary_limits(&radial_ode::to_hatted(&t).unwrap()).unwrap();
        assert!(lim.vanish() && lim.a2 <= 1e-6 && lim.b2 <= 1e-6);
        assert_eq!(l2_mass(&t, &f).unwrap().class, MassClass::Finite);
    }

    #[test]
    fn min_eigen_is_stable_for_disparate_scales() {
        let (mu, v) = min_eigen(1e40, 1.0, 3.0);
        assert!((mu - (1.0 - 9e-40)).abs() < 1e-12);
        assert!(v[1].abs() > 0.999_999);
        let (mu, v) = min_eigen(2.0, 2.0, 1.0);
        assert!((mu - 1.0).abs() < 1e-15);
        assert!((v[0] + v[1]).abs() < 1e-15);
    }

    #[test]
    fn golden_section_finds_parabola_vertex() {
        let x = golden_section(-1.0, 2.0, 1e-8, |x| (x - 0.3) * (x - 0.3));
        assert!((x - 0.3).abs() < 1e-8);
    }

    #[test]
    fn truncation_filters_symmetrically() {
        let cs = CrossSection::user(
            "pm",
            1,
            vec![
                SpectralEntry {
                    lambda: -1.5,
                    multiplicity: 1,
                },
                SpectralEntry {
                    lambda: -0.5,
                    multiplicity: 1,
                },
                SpectralEntry {
                    lambda: 0.5,
                    multiplicity: 1,
                },
                SpectralEntry {
                    lambda: 1.5,
                    multiplicity: 1,
                },
            ],
        )
        .unwrap();
        let modes = build_a(&cs, 2, 10.0).unwrap();
        let t = truncate_modes(&modes, 1.0).unwrap();
        assert!(t.is_symmetric());
        assert!(t.entries.iter().all(|e| e.lambda.abs() == 0.5));
    }

    #[test]
    fn kernel_row_does_not_depend_on_l() {
        let cs = CrossSection::circle(1.0, SpinStructure::Trivial).unwrap();
        let spec = WarpedMetricSpec::new(
            2,
            cs.clone(),
            ConformalFactor::hyperbolic(1.0).unwrap(),
            None,
        )
        .unwrap();
        let modes = truncate_modes(&build_a(&cs, 2, 1.0).unwrap(), 0.0).unwrap();
        let r = scan_point_spectrum(
            &spec,
            &modes,
            &[-3.0, 0.0, 0.7, 5.0],
            &ScanOptions::default(),
        )
        .unwrap();
        assert_eq!(r.lambdas, vec![0.0]);
        assert!(r
            .cells()
            .all(|v| v.classification == Classification::NoL2Solution));
        assert!(r.monitors.max_kernel_norm_drift < 1e-7);
    }

    #[test]
    fn empty_mode_set_warns() {
        let cs = CrossSection::circle(1.0, SpinStructure::Nontrivial).unwrap();
        let spec = WarpedMetricSpec::new(
            2,
            cs.clone(),
            ConformalFactor::hyperbolic(1.0).unwrap(),
            None,
        )
        .unwrap();
        let modes = build_a(&cs, 2, 1.0).unwrap();
        let r = scan_point_spectrum(&spec, &modes, &[0.0], &ScanOptions::default()).unwrap();
        assert_eq!(r.summary.total, 0);
        assert!(!r.warnings.is_empty());
        assert!(r.index_note.is_none());
    }
}
