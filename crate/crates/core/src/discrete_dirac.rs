//! Staggered finite-difference truncations of the mode operator
//! `(a, b) ↦ f^{-1}(−b′ + λb, a′ + λa)` on `[δ, ε]`.
//!
//! The component fixed by the chiral boundary condition lives on the grid
//! nodes (interior nodes only, it vanishes at both ends); the other lives on
//! cell midpoints. Interleaving the two gives a tridiagonal matrix with zero
//! diagonal that is symmetric for the weight `Σ (a² + b²) f Δx`, where `Δx`
//! is the dual cell width for node unknowns and the cell width for midpoint
//! unknowns. Conjugating by the square root of the weight yields a symmetric
//! tridiagonal matrix handled by [`crate::tridiag`].

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::tridiag::SymTridiag;
use crate::warp_geometry::{classify_divergence, ConformalFactor, Divergence};
use crate::{Error, Result};

pub const MIN_GRID_POINTS: usize = 16;
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Drift ratio at or below which consecutive-δ eigenvalues count as contracting.
pub const CONTRACTION_THRESHOLD: f64 = 0.5;
/// A tracked eigenvalue `μ` counts as resolved when `μ · (largest cell distance) ≤` this.
pub const RESOLUTION_PER_CELL: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundaryCondition {
    /// `a = 0` at both ends.
    ChiralA,
    /// `b = 0` at both ends.
    ChiralB,
}

impl BoundaryCondition {
    pub fn swapped(self) -> Self {
        match self {
            Self::ChiralA => Self::ChiralB,
            Self::ChiralB => Self::ChiralA,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GridKind {
    Uniform,
    Geometric,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub kind: GridKind,
    pub nodes: Vec<f64>,
}

impl Grid {
    pub fn uniform(lo: f64, hi: f64, points: usize) -> Result<Self> {
        check_range(lo, hi, points)?;
        let h = (hi - lo) / (points - 1) as f64;
        let mut nodes: Vec<f64> = (0..points).map(|i| lo + h * i as f64).collect();
        nodes[points - 1] = hi;
        Ok(Self {
            kind: GridKind::Uniform,
            nodes,
        })
    }

    /// Points uniform in `log x`, accumulating at `lo`.
    pub fn geometric(lo: f64, hi: f64, points: usize) -> Result<Self> {
        check_range(lo, hi, points)?;
        if lo <= 0.0 {
            return Err(Error::invalid("geometric grid needs a positive lower end"));
        }
        let r = (hi / lo).ln() / (points - 1) as f64;
        let mut nodes: Vec<f64> = (0..points).map(|i| lo * (r * i as f64).exp()).collect();
        nodes[points - 1] = hi;
        Ok(Self {
            kind: GridKind::Geometric,
            nodes,
        })
    }

    pub fn custom(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < MIN_GRID_POINTS {
            return Err(Error::invalid(format!(
                "grid needs at least {MIN_GRID_POINTS} points, got {}",
                nodes.len()
            )));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) || nodes.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid(
                "grid nodes must be finite and strictly increasing",
            ));
        }
        Ok(Self {
            kind: GridKind::Custom,
            nodes,
        })
    }

    pub fn cells(&self) -> usize {
        self.nodes.len() - 1
    }
}

fn check_range(lo: f64, hi: f64, points: usize) -> Result<()> {
    if points < MIN_GRID_POINTS {
        return Err(Error::invalid(format!(
            "grid needs at least {MIN_GRID_POINTS} points, got {points}"
        )));
    }
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::invalid(format!("bad grid range [{lo}, {hi}]")));
    }
    Ok(())
}

/// Banded truncation of the mode operator.
///
/// Unknowns are ordered cell 0, node 1, cell 1, node 2, …, node N−1, cell N−1,
/// so the matrix is tridiagonal with zero diagonal.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeOperator {
    pub lambda: f64,
    pub bc: BoundaryCondition,
    pub grid: Grid,
    /// Position of every unknown.
    pub positions: Vec<f64>,
    /// `f` at every unknown.
    pub f_samples: Vec<f64>,
    /// Quadrature weight `f Δx` of every unknown.
    pub weights: Vec<f64>,
    /// `upper[k]` is the entry at `(k, k+1)`.
    pub upper: Vec<f64>,
    /// `lower[k]` is the entry at `(k+1, k)`.
    pub lower: Vec<f64>,
}

pub fn assemble(
    lambda: f64,
    f: &ConformalFactor,
    grid: &Grid,
    bc: BoundaryCondition,
) -> Result<ModeOperator> {
    let x = &grid.nodes;
    if x.len() < MIN_GRID_POINTS {
        return Err(Error::invalid(format!(
            "grid needs at least {MIN_GRID_POINTS} points"
        )));
    }
    if !lambda.is_finite() {
        return Err(Error::invalid("lambda must be finite"));
    }
    if !(x[0] > f.end()) {
        return Err(Error::invalid(format!(
            "grid touches the singular end at x = {}",
            x[0]
        )));
    }
    let top = f.start();
    if x[x.len() - 1] > top + 1e-12 * top.abs().max(1.0) {
        return Err(Error::invalid(format!(
            "grid leaves the collar: {} > {top}",
            x[x.len() - 1]
        )));
    }
    let n = x.len() - 1;
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let dim = 2 * n - 1;
    let mut positions = vec![0.0; dim];
    let mut widths = vec![0.0; dim];
    for c in 0..n {
        positions[2 * c] = 0.5 * (x[c] + x[c + 1]);
        widths[2 * c] = h[c];
    }
    for i in 1..n {
        positions[2 * i - 1] = x[i];
        widths[2 * i - 1] = 0.5 * (h[i - 1] + h[i]);
    }
    let f_samples: Vec<f64> = positions.iter().map(|&p| f.eval(p)).collect();
    f.validate_on(&positions)?;
    let weights: Vec<f64> = f_samples.iter().zip(&widths).map(|(a, b)| a * b).collect();

    // derivative sign on node rows; midpoint rows carry the opposite sign
    let s = match bc {
        BoundaryCondition::ChiralA => -1.0,
        BoundaryCondition::ChiralB => 1.0,
    };
    let mut upper = vec![0.0; dim - 1];
    let mut lower = vec![0.0; dim - 1];
    for i in 1..n {
        let row = 2 * i - 1;
        let scale = 1.0 / (widths[row] * f_samples[row]);
        // left neighbour: cell i−1 at row−1; right neighbour: cell i at row+1
        lower[row - 1] = (-s + 0.5 * lambda * h[i - 1]) * scale;
        upper[row] = (s + 0.5 * lambda * h[i]) * scale;
    }
    for c in 0..n {
        let row = 2 * c;
        let scale = 1.0 / f_samples[row];
        if c >= 1 {
            lower[row - 1] = (s / h[c] + 0.5 * lambda) * scale;
        }
        if c + 1 < n {
            upper[row] = (-s / h[c] + 0.5 * lambda) * scale;
        }
    }
    let op = ModeOperator {
        lambda,
        bc,
        grid: grid.clone(),
        positions,
        f_samples,
        weights,
        upper,
        lower,
    };
    let asym = op.symmetry_residual();
    if asym > SYMMETRY_TOL {
        return Err(Error::invalid(format!(
            "assembled operator is not weighted-symmetric: {asym:e}"
        )));
    }
    Ok(op)
}

impl ModeOperator {
    pub fn dim(&self) -> usize {
        self.positions.len()
    }

    /// Largest `|(WM)_{k,k+1} − (WM)_{k+1,k}|` relative to the entry size.
    pub fn symmetry_residual(&self) -> f64 {
        weighted_asymmetry(&self.weights, &self.upper, &self.lower)
    }

    /// Dense copy, row-major, for oracles and export.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        let mut m = vec![vec![0.0; n]; n];
        for k in 0..n - 1 {
            m[k][k + 1] = self.upper[k];
            m[k + 1][k] = self.lower[k];
        }
        m
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n)
            .map(|k| {
                let mut s = 0.0;
                if k > 0 {
                    s += self.lower[k - 1] * v[k - 1];
                }
                if k + 1 < n {
                    s += self.upper[k] * v[k + 1];
                }
                s
            })
            .collect()
    }

    /// `W^{1/2} M W^{-1/2}`.
    pub fn symmetrized(&self) -> Result<SymTridiag> {
        symmetrize(&self.weights, &self.upper)
    }

    /// Splits a vector of unknowns into `(x, a, b)` samples at their positions.
    pub fn components(&self, v: &[f64]) -> (Vec<(f64, f64)>, Vec<(f64, f64)>) {
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for (k, (&x, &val)) in self.positions.iter().zip(v).enumerate() {
            let on_node = k % 2 == 1;
            let is_a = on_node == (self.bc == BoundaryCondition::ChiralA);
            if is_a {
                a.push((x, val));
            } else {
                b.push((x, val));
            }
        }
        (a, b)
    }
}

fn weighted_asymmetry(weights: &[f64], upper: &[f64], lower: &[f64]) -> f64 {
    upper
        .iter()
        .zip(lower)
        .enumerate()
        .map(|(k, (u, l))| {
            let wu = weights[k] * u;
            let wl = weights[k + 1] * l;
            (wu - wl).abs() / wu.abs().max(wl.abs()).max(f64::MIN_POSITIVE)
        })
        .fold(0.0, f64::max)
}

fn symmetrize(weights: &[f64], upper: &[f64]) -> Result<SymTridiag> {
    let off = upper
        .iter()
        .enumerate()
        .map(|(k, u)| (weights[k] / weights[k + 1]).sqrt() * u)
        .collect();
    SymTridiag::new(vec![0.0; weights.len()], off)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenEntry {
    pub value: f64,
    /// `‖(M − μ)v‖` in the weighted norm for a weighted-unit `v`.
    pub residual: f64,
}

/// The `k` eigenvalues of smallest modulus, sorted by `|μ|` (ties: negative first).
pub fn spectrum(op: &ModeOperator, k: usize) -> Result<Vec<EigenEntry>> {
    if k > op.dim() {
        return Err(Error::invalid(format!(
            "asked for {k} eigenvalues of a {}-dimensional operator",
            op.dim()
        )));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let t = op.symmetrized()?;
    let bound = t.norm_bound() * (1.0 + 1e-12) + f64::MIN_POSITIVE;
    let count = |r: f64| t.count_below(r) - t.count_below(-r);
    let radius = if count(bound) < k {
        bound
    } else {
        let (mut lo, mut hi) = (0.0, bound);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if count(mid) >= k {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= 1e-14 * hi {
                break;
            }
        }
        hi * (1.0 + 1e-10) + 1e-300
    };
    let tol = 1e-15 * bound;
    let mut values = t.eigenvalues_in(-radius, radius, tol);
    values.sort_by(|a, b| a.abs().total_cmp(&b.abs()).then(a.total_cmp(b)));
    values.truncate(k);
    let mut vectors: Vec<(f64, Vec<f64>)> = Vec::with_capacity(k);
    let mut out = Vec::with_capacity(k);
    let cluster = 1e-9 * bound;
    for &mu in &values {
        let near: Vec<&[f64]> = vectors
            .iter()
            .filter(|(v, _)| (v - mu).abs() <= cluster)
            .map(|(_, vec)| vec.as_slice())
            .collect();
        let pair = t.eigenvector(mu, &near)?;
        out.push(EigenEntry {
            value: mu,
            residual: pair.residual,
        });
        vectors.push((mu, pair.vector));
    }
    Ok(out)
}

/// All eigenvalues, increasing.
pub fn full_spectrum(op: &ModeOperator) -> Result<Vec<f64>> {
    op.symmetrized()?.eigenvalues()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovarianceReport {
    pub n: usize,
    pub lambda: f64,
    pub bc: BoundaryCondition,
    pub h_gauge: Vec<f64>,
    pub g_gauge: Vec<f64>,
    pub max_discrepancy: f64,
    /// `max_discrepancy` over the spectral radius; rounding alone gives a few ulps.
    pub relative_discrepancy: f64,
    /// Weighted-symmetry residual of the g-gauge matrix against `f^n Δx`.
    pub g_symmetry_residual: f64,
}

/// Compares the spectrum of `f^{-1} D_h` with that of the g-gauge operator
/// `f^{-(n-1)/2} (f^{-1} D_h) f^{(n-1)/2}`, assembled entrywise and
/// symmetrized with its own volume weight `f^n Δx`.
pub fn covariance_check(
    lambda: f64,
    f: &ConformalFactor,
    grid: &Grid,
    bc: BoundaryCondition,
    n: usize,
) -> Result<CovarianceReport> {
    if n < 2 {
        return Err(Error::invalid(format!(
            "dimension must be at least 2, got {n}"
        )));
    }
    let op = assemble(lambda, f, grid, bc)?;
    let e = 0.5 * (n as f64 - 1.0);
    let p: Vec<f64> = op.f_samples.iter().map(|v| v.powf(e)).collect();
    let g_upper: Vec<f64> = op
        .upper
        .iter()
        .enumerate()
        .map(|(k, m)| m * p[k + 1] / p[k])
        .collect();
    let g_lower: Vec<f64> = op
        .lower
        .iter()
        .enumerate()
        .map(|(k, m)| m * p[k] / p[k + 1])
        .collect();
    let dx: Vec<f64> = op
        .weights
        .iter()
        .zip(&op.f_samples)
        .map(|(w, fv)| w / fv)
        .collect();
    let g_weights: Vec<f64> = dx
        .iter()
        .zip(&op.f_samples)
        .map(|(d, fv)| d * fv.powi(n as i32))
        .collect();
    let g_symmetry_residual = weighted_asymmetry(&g_weights, &g_upper, &g_lower);
    let h_gauge = full_spectrum(&op)?;
    let g_gauge = symmetrize(&g_weights, &g_upper)?.eigenvalues()?;
    let max_discrepancy = h_gauge
        .iter()
        .zip(&g_gauge)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let radius = h_gauge.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    Ok(CovarianceReport {
        n,
        lambda,
        bc,
        h_gauge,
        g_gauge,
        max_discrepancy,
        relative_discrepancy: max_discrepancy / radius.max(f64::MIN_POSITIVE),
        g_symmetry_residual,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefinementReport {
    pub points: Vec<usize>,
    pub values: Vec<f64>,
    /// `log2` of successive difference ratios.
    pub rates: Vec<f64>,
}

/// Tracks the `index`-th eigenvalue above `floor` while the grid is halved
/// `levels − 1` times starting from `points` nodes.
pub fn refinement_study(
    lambda: f64,
    f: &ConformalFactor,
    range: (f64, f64),
    kind: GridKind,
    bc: BoundaryCondition,
    points: usize,
    levels: usize,
    index: usize,
    floor: f64,
) -> Result<RefinementReport> {
    if levels < 3 {
        return Err(Error::invalid("refinement needs at least 3 levels"));
    }
    let sizes: Vec<usize> = (0..levels).map(|j| (points - 1) * (1 << j) + 1).collect();
    let values = sizes
        .iter()
        .map(|&m| {
            let grid = match kind {
                GridKind::Geometric => Grid::geometric(range.0, range.1, m)?,
                _ => Grid::uniform(range.0, range.1, m)?,
            };
            let t = assemble(lambda, f, &grid, bc)?.symmetrized()?;
            let vals = t.eigenvalues_in(floor, t.norm_bound() + 1.0, 1e-15 * t.norm_bound());
            vals.get(index).copied().ok_or_else(|| {
                Error::invalid(format!(
                    "fewer than {} eigenvalues above {floor}",
                    index + 1
                ))
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    let diffs: Vec<f64> = values.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    let rates = diffs.windows(2).map(|d| (d[0] / d[1]).log2()).collect();
    Ok(RefinementReport {
        points: sizes,
        values,
        rates,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StabilizationVerdict {
    /// Consecutive drifts shrink at least geometrically with ratio ≤ the threshold.
    Contracting,
    /// Consecutive drifts shrink slower than the threshold (or grow).
    NonContracting,
    Indeterminate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilizationOptions {
    pub upper: f64,
    /// Largest `∫ f` over one grid cell.
    pub cell_distance: f64,
    pub max_unknowns: usize,
    pub eigenvalues_reported: usize,
    pub contraction_threshold: f64,
}

impl Default for StabilizationOptions {
    fn default() -> Self {
        Self {
            upper: 1.0,
            cell_distance: 1e-3,
            max_unknowns: 400_000,
            eigenvalues_reported: 4,
            contraction_threshold: CONTRACTION_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaSpectrum {
    pub delta: f64,
    pub grid_kind: GridKind,
    pub unknowns: usize,
    /// Lowest eigenvalues inside the window.
    pub eigenvalues: Vec<EigenEntry>,
    pub tracked: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilizationReport {
    pub lambda: f64,
    pub l_window: (f64, f64),
    pub bc: BoundaryCondition,
    pub options: StabilizationOptions,
    pub divergence: Divergence,
    pub per_delta: Vec<DeltaSpectrum>,
    pub drifts: Vec<f64>,
    pub drift_ratios: Vec<f64>,
    pub verdict: StabilizationVerdict,
    /// Grid nodes needed for the smallest δ when the study was under-resolved.
    pub required_points: Option<usize>,
    pub note: String,
}

impl StabilizationReport {
    /// Columns `delta,index,eigenvalue,residual`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["delta", "index", "eigenvalue", "residual"])?;
        for d in &self.per_delta {
            for (i, e) in d.eigenvalues.iter().enumerate() {
                w.write_record([
                    d.delta.to_string(),
                    i.to_string(),
                    e.value.to_string(),
                    e.residual.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Node count and grid kind keeping `∫ f` over every cell below `cell_distance`.
fn grid_for(
    f: &ConformalFactor,
    delta: f64,
    upper: f64,
    divergent: bool,
    cell_distance: f64,
) -> (GridKind, usize) {
    let probes: Vec<f64> = (0..=64)
        .map(|i| delta * (upper / delta).powf(i as f64 / 64.0))
        .collect();
    if divergent {
        let peak = probes.iter().map(|&x| f.eval(x) * x).fold(0.0, f64::max);
        let cells = ((upper / delta).ln() * peak / cell_distance).ceil() as usize;
        (GridKind::Geometric, cells.max(MIN_GRID_POINTS) + 1)
    } else {
        let peak = probes.iter().map(|&x| f.eval(x)).fold(0.0, f64::max);
        let cells = ((upper - delta) * peak / cell_distance).ceil() as usize;
        (GridKind::Uniform, cells.max(MIN_GRID_POINTS) + 1)
    }
}

/// Lowest eigenvalues inside `l_window = (lo, hi]` for each truncation
/// `[δ, upper]` and the consecutive-δ drift of the smallest one.
///
/// The verdict is a heuristic with the disclosed threshold
/// `options.contraction_threshold`: every drift ratio at or below it reads
/// as contraction (Cauchy behaviour, a δ-stable eigenvalue), every ratio
/// above it as non-contraction, anything mixed as indeterminate.
pub fn stabilization_study(
    lambda: f64,
    l_window: (f64, f64),
    f: &ConformalFactor,
    deltas: &[f64],
    bc: BoundaryCondition,
    options: &StabilizationOptions,
) -> Result<StabilizationReport> {
    if deltas.len() < 4 {
        return Err(Error::invalid(format!(
            "stabilization needs at least 4 values of delta, got {}",
            deltas.len()
        )));
    }
    if deltas.windows(2).any(|w| !(w[1] < w[0])) || deltas[deltas.len() - 1] <= 0.0 {
        return Err(Error::invalid(
            "delta sequence must be positive and strictly decreasing",
        ));
    }
    if !(l_window.0 >= 0.0 && l_window.1 > l_window.0) {
        return Err(Error::invalid("l_window must satisfy 0 ≤ lo < hi"));
    }
    if deltas[0] >= options.upper {
        return Err(Error::invalid("largest delta must lie below the upper end"));
    }
    let divergence = classify_divergence(f)?.class;
    let divergent = divergence == Divergence::Divergent;
    let plans: Vec<(f64, GridKind, usize)> = deltas
        .iter()
        .map(|&d| {
            let (kind, points) = grid_for(f, d, options.upper, divergent, options.cell_distance);
            (d, kind, points)
        })
        .collect();
    let base = |note: String, required: Option<usize>| StabilizationReport {
        lambda,
        l_window,
        bc,
        options: *options,
        divergence,
        per_delta: Vec::new(),
        drifts: Vec::new(),
        drift_ratios: Vec::new(),
        verdict: StabilizationVerdict::Indeterminate,
        required_points: required,
        note,
    };
    let worst = plans.iter().map(|p| p.2).max().unwrap_or(0);
    if 2 * worst > options.max_unknowns {
        return Ok(base(
            format!(
                "grid too coarse: {worst} nodes needed for cell distance {}, limit {} unknowns",
                options.cell_distance, options.max_unknowns
            ),
            Some(worst),
        ));
    }
    let per_delta = plans
        .par_iter()
        .map(|&(delta, kind, points)| {
            let grid = match kind {
                GridKind::Geometric => Grid::geometric(delta, options.upper, points)?,
                _ => Grid::uniform(delta, options.upper, points)?,
            };
            let op = assemble(lambda, f, &grid, bc)?;
            let t = op.symmetrized()?;
            let tol = 1e-15 * t.norm_bound();
            let mut vals = t.eigenvalues_in(l_window.0, l_window.1, tol);
            vals.retain(|&v| v > l_window.0);
            vals.truncate(options.eigenvalues_reported);
            let mut eigenvalues = Vec::with_capacity(vals.len());
            for &mu in &vals {
                let pair = t.eigenvector(mu, &[])?;
                eigenvalues.push(EigenEntry {
                    value: mu,
                    residual: pair.residual,
                });
            }
            let tracked = vals.first().copied();
            Ok(DeltaSpectrum {
                delta,
                grid_kind: kind,
                unknowns: op.dim(),
                eigenvalues,
                tracked,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut report = base(String::new(), None);
    report.per_delta = per_delta;
    let tracked: Option<Vec<f64>> = report.per_delta.iter().map(|d| d.tracked).collect();
    let Some(tracked) = tracked else {
        report.note = "no eigenvalue inside the window for some delta".into();
        return Ok(report);
    };
    let top = tracked.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if top * options.cell_distance > RESOLUTION_PER_CELL {
        let needed = options.cell_distance * top / RESOLUTION_PER_CELL;
        report.required_points = Some((worst as f64 * needed).ceil() as usize);
        report.note = format!(
            "tracked eigenvalue {top} is under-resolved at cell distance {}",
            options.cell_distance
        );
        return Ok(report);
    }
    report.drifts = tracked.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    report.drift_ratios = report.drifts.windows(2).map(|d| d[1] / d[0]).collect();
    let thr = options.contraction_threshold;
    let ratios = &report.drift_ratios;
    report.verdict = if ratios.iter().all(|&r| r <= thr) {
        StabilizationVerdict::Contracting
    } else if ratios.iter().all(|&r| r > thr) {
        StabilizationVerdict::NonContracting
    } else {
        StabilizationVerdict::Indeterminate
    };
    report.note = match report.verdict {
        StabilizationVerdict::Contracting => {
            format!("drift ratios ≤ {thr}: the lowest eigenvalue in the window settles as delta shrinks")
        }
        StabilizationVerdict::NonContracting => {
            format!("drift ratios > {thr}: the lowest eigenvalue keeps moving as delta shrinks")
        }
        StabilizationVerdict::Indeterminate => format!("drift ratios straddle {thr}"),
    };
    Ok(report)
}
