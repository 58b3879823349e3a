//! Conformal factors `f`, warps `ρ`, the divergence hypothesis `∫₀^ε f dx = ∞`,
//! the reparametrization `t(x) = ∫₀^x ρ`, and the conformal gauge change
//! `ψ ↦ f^{(n−1)/2} ψ` relating `L²(vol_g)` to `L²(f vol_h)`.
//!
//! All factors are evaluated in a *lab coordinate* `x` whose singular end
//! is the lower limit. For finite collars this is the distance `x ∈ (0, ε]`
//! to `M`. The exponential cusp `f(t) = e^{−t}` on `t ∈ (0, ∞)` is stored in
//! `t` and read in the lab coordinate `x = −t ∈ (−∞, 0]`, so that its end
//! `t → ∞` is again the lower limit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature;

/// Relative depth of the singular end probed by quadrature: `δ_min = 1e−8 ε`.
pub const DELTA_MIN_REL: f64 = 1e-8;

/// Local exponents within this band of 1 count as the borderline `p = 1`.
const BORDERLINE_BAND: f64 = 1e-3;
/// Spread of local exponents beyond which a heuristic verdict is `Unknown`.
const EXPONENT_SPREAD_MAX: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Divergence {
    Divergent,
    Convergent,
    Unknown,
}

/// Positive samples with log–log linear interpolation; outside the table the
/// edge segments are extended as power laws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub x: Vec<f64>,
    pub f: Vec<f64>,
}

impl Table {
    pub fn new(x: Vec<f64>, f: Vec<f64>) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::invalid("tabulated factor is empty"));
        }
        if x.len() != f.len() {
            return Err(Error::invalid("tabulated factor: x and f lengths differ"));
        }
        if x.len() < 2 {
            return Err(Error::invalid(
                "tabulated factor needs at least two samples",
            ));
        }
        if x.iter().any(|&v| !(v > 0.0 && v.is_finite())) || x.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid(
                "tabulated x must be positive and strictly increasing",
            ));
        }
        if f.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("tabulated f must be strictly positive"));
        }
        Ok(Self { x, f })
    }

    /// Reads a CSV file with header columns `x,f`.
    pub fn from_csv(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            x: f64,
            f: f64,
        }
        let mut rdr = csv::Reader::from_path(path)?;
        let (mut xs, mut fs) = (Vec::new(), Vec::new());
        for row in rdr.deserialize() {
            let row: Row = row?;
            xs.push(row.x);
            fs.push(row.f);
        }
        Self::new(xs, fs)
    }

    fn segment(&self, x: f64) -> usize {
        match self.x.partition_point(|&v| v <= x) {
            0 => 0,
            i if i >= self.x.len() => self.x.len() - 2,
            i => i - 1,
        }
    }

    /// `−d ln f / d ln x` on segment `i`.
    fn slope(&self, i: usize) -> f64 {
        -(self.f[i + 1] / self.f[i]).ln() / (self.x[i + 1] / self.x[i]).ln()
    }

    pub fn eval(&self, x: f64) -> f64 {
        let i = self.segment(x);
        self.f[i] * (x / self.x[i]).powf(-self.slope(i))
    }

    fn integral(&self, a: f64, b: f64) -> f64 {
        let piece = |i: usize, lo: f64, hi: f64| {
            let s = self.slope(i);
            let c = self.f[i] * self.x[i].powf(s);
            if (s - 1.0).abs() < 1e-12 {
                c * (hi / lo).ln()
            } else {
                c * (hi.powf(1.0 - s) - lo.powf(1.0 - s)) / (1.0 - s)
            }
        };
        let (mut lo, mut total) = (a, 0.0);
        while lo < b {
            let i = self.segment(lo);
            let seg_end = if i + 2 >= self.x.len() {
                f64::INFINITY
            } else {
                self.x[i + 1]
            };
            let seg_end = if seg_end <= lo {
                f64::INFINITY
            } else {
                seg_end
            };
            let hi = b.min(seg_end);
            total += piece(i, lo, hi);
            lo = hi;
        }
        total
    }
}

/// Warp `ρ` of `h̃ = dx² + ρ^{−2} h_M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Warp {
    Constant {
        c: f64,
    },
    /// `ρ = c x^{−q}`, integrable at 0 iff `q < 1`.
    PowerLaw {
        c: f64,
        q: f64,
    },
    /// `ρ = 2/(1+x²)`, the warp of `x^{−2}(dx² + ((1+x²)²/4) h_M)`.
    Hyperbolic,
}

impl Warp {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Warp::Constant { c } => c,
            Warp::PowerLaw { c, q } => c * x.powf(-q),
            Warp::Hyperbolic => 2.0 / (1.0 + x * x),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Warp::Constant { c } | Warp::PowerLaw { c, .. } if !(c > 0.0 && c.is_finite()) => Err(
                Error::invalid(format!("warp coefficient must be positive, got {c}")),
            ),
            Warp::PowerLaw { q, .. } if !(q < 1.0) => Err(Error::HypothesisViolation(format!(
                "warp x^-{q} is not integrable at 0; the reparametrization needs rho in L^1"
            ))),
            _ => Ok(()),
        }
    }

    /// `t(x) = ∫₀^x ρ`.
    pub fn t_of_x(&self, x: f64) -> f64 {
        match *self {
            Warp::Constant { c } => c * x,
            Warp::PowerLaw { c, q } => c * x.powf(1.0 - q) / (1.0 - q),
            Warp::Hyperbolic => 2.0 * x.atan(),
        }
    }

    pub fn x_of_t(&self, t: f64) -> f64 {
        match *self {
            Warp::Constant { c } => t / c,
            Warp::PowerLaw { c, q } => (t * (1.0 - q) / c).powf(1.0 / (1.0 - q)),
            Warp::Hyperbolic => (0.5 * t).tan(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FactorFamily {
    /// `f = scale · x^{−p}`.
    PowerLaw {
        p: f64,
        scale: f64,
    },
    /// `f = 1/x`.
    HyperbolicX,
    Constant {
        c: f64,
    },
    /// `f(t) = e^{−t}` on `t ∈ (0, ∞)`.
    ExponentialCusp,
    Tabulated {
        table: Table,
    },
    /// `f̃(t) = f(x(t)) / ρ(x(t))` produced by [`reparametrize`].
    Reparametrized {
        base: Box<ConformalFactor>,
        rho: Warp,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformalFactor {
    pub family: FactorFamily,
    /// Right endpoint `ε` of the collar; `None` flags the half-line `(0, ∞)`.
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClassificationMethod {
    Exact,
    Heuristic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub class: Divergence,
    pub method: ClassificationMethod,
    /// `∫_δ^ε f dx` at the reported `δ`.
    pub partial_integral: f64,
    pub delta: f64,
    /// Local power-law exponent at the singular end, when estimated.
    pub exponent: Option<f64>,
    pub exponent_spread: Option<f64>,
}

impl ConformalFactor {
    pub fn power_law(p: f64, epsilon: f64) -> Result<Self> {
        Self::scaled_power_law(p, 1.0, epsilon)
    }

    pub fn scaled_power_law(p: f64, scale: f64, epsilon: f64) -> Result<Self> {
        if !p.is_finite() || !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::invalid(
                "power law needs finite p and positive scale",
            ));
        }
        Self::finite(FactorFamily::PowerLaw { p, scale }, epsilon)
    }

    pub fn hyperbolic(epsilon: f64) -> Result<Self> {
        Self::finite(FactorFamily::HyperbolicX, epsilon)
    }

    pub fn constant(c: f64, epsilon: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::invalid(format!(
                "constant factor must be positive, got {c}"
            )));
        }
        Self::finite(FactorFamily::Constant { c }, epsilon)
    }

    pub fn cusp() -> Self {
        Self {
            family: FactorFamily::ExponentialCusp,
            epsilon: None,
        }
    }

    /// Tabulated factor on `(x_min, ε]`; `ε` defaults to the last sample.
    pub fn tabulated(table: Table, epsilon: Option<f64>) -> Result<Self> {
        let eps = epsilon.unwrap_or(*table.x.last().expect("validated non-empty"));
        Self::finite(FactorFamily::Tabulated { table }, eps)
    }

    fn finite(family: FactorFamily, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::invalid(format!(
                "epsilon must be positive and finite, got {epsilon}"
            )));
        }
        Ok(Self {
            family,
            epsilon: Some(epsilon),
        })
    }

    pub fn is_half_line(&self) -> bool {
        self.epsilon.is_none()
    }

    /// Interior end of the collar in the lab coordinate.
    pub fn start(&self) -> f64 {
        self.epsilon.unwrap_or(0.0)
    }

    /// Singular end in the lab coordinate (`0` or `−∞`).
    pub fn end(&self) -> f64 {
        if self.is_half_line() {
            f64::NEG_INFINITY
        } else {
            0.0
        }
    }

    /// `f` at lab coordinate `x`.
    pub fn eval(&self, x: f64) -> f64 {
        match &self.family {
            FactorFamily::PowerLaw { p, scale } => scale * x.powf(-p),
            FactorFamily::HyperbolicX => 1.0 / x,
            FactorFamily::Constant { c } => *c,
            FactorFamily::ExponentialCusp => x.exp(),
            FactorFamily::Tabulated { table } => table.eval(x),
            FactorFamily::Reparametrized { base, rho } => {
                let xb = rho.x_of_t(x);
                base.eval(xb) / rho.eval(xb)
            }
        }
    }

    /// `∫_a^b f` in the lab coordinate, `a ≤ b` inside the domain.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        match &self.family {
            FactorFamily::PowerLaw { p, scale } => {
                if (*p - 1.0).abs() < 1e-14 {
                    scale * (b / a).ln()
                } else {
                    scale * (b.powf(1.0 - p) - a.powf(1.0 - p)) / (1.0 - p)
                }
            }
            FactorFamily::HyperbolicX => (b / a).ln(),
            FactorFamily::Constant { c } => c * (b - a),
            FactorFamily::ExponentialCusp => b.exp() - a.exp(),
            FactorFamily::Tabulated { table } => table.integral(a, b),
            FactorFamily::Reparametrized { .. } => {
                if a > 0.0 {
                    quadrature::integrate_graded(|t| self.eval(t), a, b, 6)
                } else {
                    quadrature::integrate(|t| self.eval(t), a, b, 64)
                }
            }
        }
    }

    /// Smallest lower limit probed: `δ_min = 1e−8 ε`, or `−horizon` on the half-line.
    pub fn delta_min(&self, half_line_horizon: f64) -> f64 {
        match self.epsilon {
            Some(eps) => DELTA_MIN_REL * eps,
            None => -half_line_horizon,
        }
    }

    /// Lower limit `x` at which `∫_x^start f` reaches `s`, clamped to `[floor, start]`.
    pub fn lower_limit_for_mass(&self, s: f64, floor: f64) -> f64 {
        let start = self.start();
        if self.integral(floor, start) <= s {
            return floor;
        }
        let (mut lo, mut hi) = (floor, start);
        for _ in 0..200 {
            let mid = if self.is_half_line() || lo <= 0.0 {
                0.5 * (lo + hi)
            } else {
                (lo * hi).sqrt()
            };
            if self.integral(mid, start) > s {
                lo = mid;
            } else {
                hi = mid;
            }
            if (hi - lo).abs() <= 1e-15 * hi.abs().max(1e-300) {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    pub fn validate_on(&self, grid: &[f64]) -> Result<()> {
        for &x in grid {
            let v = self.eval(x);
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!(
                    "conformal factor is not positive at x = {x}: {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Decides `∫₀^ε f = ∞`: exactly for the analytic catalog, heuristically
/// (local power-law exponent at the singular end, with an explicit `Unknown`)
/// for tabulated and reparametrized factors.
pub fn classify_divergence(f: &ConformalFactor) -> Result<DivergenceReport> {
    if let FactorFamily::Tabulated { table } = &f.family {
        if table.x.is_empty() {
            return Err(Error::invalid("tabulated factor is empty"));
        }
    }
    if f.is_half_line() {
        // e^{x} on (−∞, 0]: total mass 1.
        let delta = f.delta_min(1.0 / DELTA_MIN_REL);
        return Ok(DivergenceReport {
            class: Divergence::Convergent,
            method: ClassificationMethod::Exact,
            partial_integral: f.integral(delta.max(-700.0), 0.0),
            delta,
            exponent: None,
            exponent_spread: None,
        });
    }
    let eps = f.start();
    let exact = |class, exponent: Option<f64>| {
        let delta = DELTA_MIN_REL * eps;
        DivergenceReport {
            class,
            method: ClassificationMethod::Exact,
            partial_integral: f.integral(delta, eps),
            delta,
            exponent,
            exponent_spread: None,
        }
    };
    Ok(match &f.family {
        FactorFamily::PowerLaw { p, .. } => exact(
            if *p >= 1.0 {
                Divergence::Divergent
            } else {
                Divergence::Convergent
            },
            Some(*p),
        ),
        FactorFamily::HyperbolicX => exact(Divergence::Divergent, Some(1.0)),
        FactorFamily::Constant { .. } => exact(Divergence::Convergent, Some(0.0)),
        FactorFamily::ExponentialCusp => unreachable!("half-line handled above"),
        FactorFamily::Tabulated { table } => {
            // local exponents over the (up to) four segments nearest the end
            let k = (table.x.len() - 1).min(4);
            let slopes: Vec<f64> = (0..k).map(|i| table.slope(i)).collect();
            heuristic_verdict(f, &slopes, table.x[0])
        }
        FactorFamily::Reparametrized { .. } => {
            let delta = DELTA_MIN_REL * eps;
            let pts: Vec<f64> = (0..=8)
                .map(|k| delta * 10f64.powf(k as f64 * 0.5))
                .collect();
            let slopes: Vec<f64> = pts
                .windows(2)
                .map(|w| -(f.eval(w[1]) / f.eval(w[0])).ln() / (w[1] / w[0]).ln())
                .collect();
            heuristic_verdict(f, &slopes, delta)
        }
    })
}

/// `slopes[0]` is the local exponent closest to the singular end.
fn heuristic_verdict(f: &ConformalFactor, slopes: &[f64], delta: f64) -> DivergenceReport {
    let p = slopes[0];
    let spread = slopes.iter().map(|s| (s - p).abs()).fold(0.0, f64::max);
    let margin = spread.max(BORDERLINE_BAND);
    let observed = f.integral(delta, f.start());
    let class = if !p.is_finite() || spread > EXPONENT_SPREAD_MAX {
        Divergence::Unknown
    } else if p >= 1.0 + margin {
        Divergence::Divergent
    } else if p <= 1.0 - margin {
        // power-law tail below the data, ∫₀^δ f ≈ δ f(δ)/(1 − p)
        let tail = delta * f.eval(delta) / (1.0 - p);
        if tail <= observed {
            Divergence::Convergent
        } else {
            Divergence::Unknown
        }
    } else if (p - 1.0).abs() <= BORDERLINE_BAND && spread <= BORDERLINE_BAND {
        // log-type growth, the boundary case p = 1
        Divergence::Divergent
    } else {
        Divergence::Unknown
    };
    DivergenceReport {
        class,
        method: ClassificationMethod::Heuristic,
        partial_integral: observed,
        delta,
        exponent: Some(p),
        exponent_spread: Some(spread),
    }
}

/// The change of variables `t(x) = ∫₀^x ρ`, `f̃(t) = f(x(t))/ρ(x(t))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Reparametrization {
    pub t_max: f64,
    pub f_tilde: ConformalFactor,
    pub rho: Warp,
}

impl Reparametrization {
    pub fn t_of_x(&self, x: f64) -> f64 {
        self.rho.t_of_x(x)
    }

    pub fn x_of_t(&self, t: f64) -> f64 {
        self.rho.x_of_t(t)
    }
}

/// Rewrites `f²(dx² + ρ^{−2} h_M)` as `f̃²(dt² + h_M)`.
pub fn reparametrize(rho: &Warp, f: &ConformalFactor) -> Result<Reparametrization> {
    rho.validate()?;
    let eps = f
        .epsilon
        .ok_or_else(|| Error::invalid("reparametrization needs a finite collar (0, epsilon)"))?;
    let t_max = rho.t_of_x(eps);
    if !(t_max > 0.0 && t_max.is_finite()) {
        return Err(Error::HypothesisViolation(format!(
            "t(epsilon) = {t_max} is not a positive number"
        )));
    }
    let f_tilde = ConformalFactor {
        family: FactorFamily::Reparametrized {
            base: Box::new(f.clone()),
            rho: rho.clone(),
        },
        epsilon: Some(t_max),
    };
    Ok(Reparametrization {
        t_max,
        f_tilde,
        rho: rho.clone(),
    })
}

/// Rotationally symmetric `dr² + ψ(r)² dθ²` with `ψ = r^k`, `r ≥ 1`, written as
/// `ψ(r(x))² (dx² + dθ²)` through `x(r) = ∫_r^∞ ds/ψ(s) = r^{1−k}/(k−1)`.
pub fn rotational_factor(k: f64) -> Result<ConformalFactor> {
    if !(k > 1.0 && k.is_finite()) {
        return Err(Error::HypothesisViolation(format!(
            "psi(r) = r^{k} has divergent integral of 1/psi at infinity"
        )));
    }
    // r = ((k−1)x)^{−1/(k−1)}, f = r^k
    let p = k / (k - 1.0);
    let scale = (k - 1.0).powf(-p);
    ConformalFactor::scaled_power_law(p, scale, 1.0 / (k - 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GaugeDirection {
    /// `ψ ↦ f^{(n−1)/2} ψ`, from `L²(vol_g)` to `L²(f vol_h)`.
    ToH,
    /// The inverse map.
    ToG,
}

/// Pointwise gauge change on samples laid out as `components` values per grid node.
pub fn conformal_gauge(
    coeffs: &[f64],
    components: usize,
    grid: &[f64],
    f: &ConformalFactor,
    n: usize,
    direction: GaugeDirection,
) -> Result<Vec<f64>> {
    if components == 0 || coeffs.len() != components * grid.len() {
        return Err(Error::invalid("coefficient layout does not match the grid"));
    }
    if n < 2 {
        return Err(Error::invalid("dimension must be at least 2"));
    }
    if !f.is_half_line() && grid.iter().any(|&x| !(x > 0.0 && x <= f.start())) {
        return Err(Error::invalid("gauge grid leaves the collar (0, epsilon]"));
    }
    f.validate_on(grid)?;
    let exponent = match direction {
        GaugeDirection::ToH => 0.5 * (n as f64 - 1.0),
        GaugeDirection::ToG => -0.5 * (n as f64 - 1.0),
    };
    Ok(coeffs
        .chunks(components)
        .zip(grid)
        .flat_map(|(c, &x)| {
            let s = f.eval(x).powf(exponent);
            c.iter().map(move |v| v * s)
        })
        .collect())
}

/// Trapezoidal `∫ |ψ|² w dx` over grid samples.
pub fn weighted_norm_sq(
    coeffs: &[f64],
    components: usize,
    grid: &[f64],
    weight: impl Fn(f64) -> f64,
) -> f64 {
    let dens: Vec<f64> = coeffs
        .chunks(components)
        .zip(grid)
        .map(|(c, &x)| c.iter().map(|v| v * v).sum::<f64>() * weight(x))
        .collect();
    grid.windows(2)
        .zip(dens.windows(2))
        .map(|(x, d)| 0.5 * (x[1] - x[0]) * (d[0] + d[1]))
        .sum()
}

/// Metric `f(x)²(dx² + h_M)` on `(0, ε) × M`, or its warped variant
/// `f²(dx² + ρ^{−2} h_M)` when `rho` is set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WarpedMetricSpec {
    pub n: usize,
    pub cross_section: crate::cross_section::CrossSection,
    pub factor: ConformalFactor,
    pub rho: Option<Warp>,
    pub divergence: Divergence,
    #[serde(rename = "effective_factor")]
    effective: ConformalFactor,
}

impl WarpedMetricSpec {
    pub fn new(
        n: usize,
        cross_section: crate::cross_section::CrossSection,
        factor: ConformalFactor,
        rho: Option<Warp>,
    ) -> Result<Self> {
        if n != cross_section.dim_m + 1 {
            return Err(Error::invalid(format!(
                "n = {n} but the cross-section has dimension {}",
                cross_section.dim_m
            )));
        }
        let effective = match &rho {
            Some(w) => reparametrize(w, &factor)?.f_tilde,
            None => factor.clone(),
        };
        let divergence = classify_divergence(&effective)?.class;
        Ok(Self {
            n,
            cross_section,
            factor,
            rho,
            divergence,
            effective,
        })
    }

    /// The factor in product form `f̃²(dt² + h_M)` actually fed to the mode systems.
    pub fn effective_factor(&self) -> &ConformalFactor {
        &self.effective
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_classification() {
        let hyp = ConformalFactor::hyperbolic(1.0).unwrap();
        assert_eq!(
            classify_divergence(&hyp).unwrap().class,
            Divergence::Divergent
        );
        let flat = ConformalFactor::constant(1.0, 1.0).unwrap();
        assert_eq!(
            classify_divergence(&flat).unwrap().class,
            Divergence::Convergent
        );
        let sq = ConformalFactor::power_law(2.0, 1.0).unwrap();
        let r = classify_divergence(&sq).unwrap();
        assert_eq!(r.class, Divergence::Divergent);
        assert!((r.partial_integral - (1e8 - 1.0)).abs() < 1e-3);
        assert_eq!(
            classify_divergence(&ConformalFactor::cusp()).unwrap().class,
            Divergence::Convergent
        );
    }

    #[test]
    fn power_law_flips_at_one() {
        for (p, want) in [
            (0.999, Divergence::Convergent),
            (1.0, Divergence::Divergent),
            (1.001, Divergence::Divergent),
        ] {
            let f = ConformalFactor::power_law(p, 1.0).unwrap();
            assert_eq!(classify_divergence(&f).unwrap().class, want, "p = {p}");
        }
    }

    #[test]
    fn table_validation() {
        assert!(Table::new(vec![], vec![]).is_err());
        assert!(Table::new(vec![0.1, 0.2], vec![1.0, -1.0]).is_err());
        assert!(Table::new(vec![0.2, 0.1], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn tabulated_heuristic() {
        let xs: Vec<f64> = (0..=40)
            .map(|k| 1e-4 * 10f64.powf(k as f64 / 10.0))
            .collect();
        let mk = |p: f64| {
            let t = Table::new(xs.clone(), xs.iter().map(|x| x.powf(-p)).collect()).unwrap();
            classify_divergence(&ConformalFactor::tabulated(t, None).unwrap()).unwrap()
        };
        assert_eq!(mk(1.0).class, Divergence::Divergent);
        assert_eq!(mk(1.5).class, Divergence::Divergent);
        assert_eq!(mk(0.5).class, Divergence::Convergent);
        assert_eq!(mk(0.99).class, Divergence::Unknown);
        // integrals are exact on power-law tables
        let t = Table::new(xs.clone(), xs.iter().map(|x| 1.0 / x).collect()).unwrap();
        let f = ConformalFactor::tabulated(t, None).unwrap();
        assert!((f.integral(1e-6, 1.0) - 6.0 * 10f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn identity_reparametrization() {
        let f = ConformalFactor::power_law(1.5, 1.0).unwrap();
        let r = reparametrize(&Warp::Constant { c: 1.0 }, &f).unwrap();
        assert_eq!(r.t_max, 1.0);
        for x in [1e-6, 0.01, 0.3, 1.0] {
            assert_eq!(r.t_of_x(x), x);
            assert!((r.f_tilde.eval(x) - f.eval(x)).abs() <= 1e-14 * f.eval(x));
        }
    }

    #[test]
    fn non_integrable_warp_is_a_hypothesis_violation() {
        let f = ConformalFactor::hyperbolic(1.0).unwrap();
        let r = reparametrize(&Warp::PowerLaw { c: 1.0, q: 1.0 }, &f);
        assert!(matches!(r, Err(Error::HypothesisViolation(_))));
    }

    #[test]
    fn hyperbolic_family_reparametrizes_to_cosecant() {
        // t = 2 arctan x, f̃(t) = (1 + x²)/(2x) = 1/sin t
        let f = ConformalFactor::hyperbolic(1.0).unwrap();
        let r = reparametrize(&Warp::Hyperbolic, &f).unwrap();
        for t in [1e-6, 0.1, 1.0, 1.5] {
            assert!((r.f_tilde.eval(t) * t.sin() - 1.0).abs() < 1e-12);
        }
        assert_eq!(
            classify_divergence(&r.f_tilde).unwrap().class,
            Divergence::Divergent
        );
    }

    #[test]
    fn rotational_quadratic_profile() {
        // ψ = r²: x = 1/r, f(x) = ψ(r(x)) = x^{-2}
        let f = rotational_factor(2.0).unwrap();
        for x in [1e-3, 0.1, 0.5, 1.0] {
            assert!((f.eval(x) - x.powi(-2)).abs() < 1e-12 * x.powi(-2));
        }
        assert_eq!(f.epsilon, Some(1.0));
        assert!(rotational_factor(1.0).is_err());
    }

    #[test]
    fn gauge_identity_for_unit_factor() {
        let f = ConformalFactor::constant(1.0, 1.0).unwrap();
        let grid = [0.1, 0.5, 1.0];
        let c = [1.0, 2.0, 3.0];
        assert_eq!(
            conformal_gauge(&c, 1, &grid, &f, 3, GaugeDirection::ToH).unwrap(),
            c.to_vec()
        );
        let bad = conformal_gauge(&c, 1, &[0.0, 0.5, 1.0], &f, 3, GaugeDirection::ToH);
        assert!(bad.is_err());
    }
}
