//! Run configurations, command dispatch and report bundles.
//!
//! A run is described by a strict JSON [`RunConfig`]; command-line flags
//! override individual keys and a bundled scenario name fills whatever the
//! config leaves open. Every run writes `report.json`, one or more CSV files,
//! `summary.txt` and `config.resolved.json` into an existing output directory.
//!
//! Exit codes: 0 success, 1 usage or runtime failure, 2 scientific
//! indeterminacy (under-resolved or inconclusive numerics).

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cross_section::{build_a, ModeSpectrum, SpectralEntry};
use crate::discrete_dirac::{
    assemble, covariance_check, spectrum, stabilization_study, BoundaryCondition, EigenEntry, Grid,
    GridKind, StabilizationOptions, StabilizationReport, StabilizationVerdict,
    CONTRACTION_THRESHOLD,
};
use crate::gcvf_lab::{
    builtin, check_gcvf, convergence_rates, normal_form, structure_checks, ConvergenceRates,
    GcvfField, GcvfResiduals, NormalForm, StructureReport,
};
use crate::mode_scan::{
    l2_mass, scan_lower_limit, scan_point_spectrum, Classification, MassEstimate, ScanOptions,
    ScanReport, ASSUMPTIONS, DEFAULT_HALF_LINE_HORIZON, DEFAULT_MASS_BUDGET, REFINE_TOL,
};
use crate::radial_ode::{
    hatted_residual, integrate_kernel, integrate_mode, lyapunov, to_hatted, IntegrationOptions,
    LyapunovSign, RadialMode, Trajectory,
};
use crate::scenarios::{scenario, CrossSectionConfig, FactorConfig};
use crate::warp_geometry::{
    classify_divergence, reparametrize, Divergence, DivergenceReport, Warp, WarpedMetricSpec,
};
use crate::{Error, Result, VERSION};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INDETERMINATE: i32 = 2;

pub const THREADS_ENV: &str = "WARP_DIRAC_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Spectrum,
    Integrate,
    Scan,
    VerifyTheorem,
    Stabilize,
    TransformCoords,
    GcvfCheck,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LGrid {
    pub min: f64,
    pub max: f64,
    pub steps: usize,
}

impl Default for LGrid {
    fn default() -> Self {
        Self {
            min: -10.0,
            max: 10.0,
            steps: 41,
        }
    }
}

impl LGrid {
    pub fn values(&self) -> Vec<f64> {
        if self.steps == 1 {
            return vec![self.min];
        }
        let h = (self.max - self.min) / (self.steps - 1) as f64;
        (0..self.steps)
            .map(|i| {
                if i + 1 == self.steps {
                    self.max
                } else {
                    self.min + h * i as f64
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
    /// Largest `∫ f` spanned by a scan collar.
    pub mass_budget: f64,
    pub half_line_horizon: f64,
    pub refine_tol: f64,
    pub kernel_norm_drift: f64,
    pub wronskian_drift: f64,
    pub lyapunov: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
            mass_budget: DEFAULT_MASS_BUDGET,
            half_line_horizon: DEFAULT_HALF_LINE_HORIZON,
            refine_tol: REFINE_TOL,
            kernel_norm_drift: 1e-7,
            wronskian_drift: 1e-7,
            lyapunov: 1e-8,
        }
    }
}

impl Tolerances {
    fn validate(&self) -> Result<()> {
        let all = [
            ("rtol", self.rtol),
            ("atol", self.atol),
            ("mass_budget", self.mass_budget),
            ("half_line_horizon", self.half_line_horizon),
            ("refine_tol", self.refine_tol),
            ("kernel_norm_drift", self.kernel_norm_drift),
            ("wronskian_drift", self.wronskian_drift),
            ("lyapunov", self.lyapunov),
        ];
        for (key, v) in all {
            if !(v > 0.0 && v.is_finite()) {
                return Err(config_error(
                    format!("tolerances.{key}"),
                    format!("must be positive, got {v}"),
                ));
            }
        }
        Ok(())
    }

    fn scan_options(&self) -> ScanOptions {
        ScanOptions {
            integration: IntegrationOptions {
                rtol: self.rtol,
                atol: self.atol,
                ..Default::default()
            },
            mass_budget: self.mass_budget,
            half_line_horizon: self.half_line_horizon,
            refine: true,
            refine_tol: self.refine_tol,
            threads: None,
        }
    }
}

fn default_cutoff() -> f64 {
    5.0
}

fn default_initial() -> [f64; 2] {
    [1.0, 0.0]
}

fn default_samples() -> usize {
    201
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrateConfig {
    /// Defaults to the smallest positive eigenvalue of `A` (0 when there is none).
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub l: f64,
    /// Defaults to the top of the collar.
    #[serde(default)]
    pub from: Option<f64>,
    /// Defaults to the scan lower limit.
    #[serde(default)]
    pub to: Option<f64>,
    #[serde(default = "default_initial")]
    pub initial: [f64; 2],
    #[serde(default = "default_samples")]
    pub samples: usize,
}

impl Default for IntegrateConfig {
    fn default() -> Self {
        Self {
            lambda: None,
            l: 0.0,
            from: None,
            to: None,
            initial: default_initial(),
            samples: default_samples(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumConfig {
    /// Defaults to every non-negative eigenvalue of `A` below the cutoff.
    pub lambdas: Option<Vec<f64>>,
    /// Truncation interval; defaults to `[ε/1000, ε]`, or `[−10, 0]` on the half-line.
    pub range: Option<[f64; 2]>,
    pub points: usize,
    /// Defaults to geometric for divergent factors on `(0, ε)`, uniform otherwise.
    pub grid: Option<GridKind>,
    pub bc: BoundaryCondition,
    pub eigenvalues: usize,
    /// Seeded random vectors for the weighted-symmetry probe.
    pub random_vectors: usize,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        Self {
            lambdas: None,
            range: None,
            points: 2001,
            grid: None,
            bc: BoundaryCondition::ChiralA,
            eigenvalues: 6,
            random_vectors: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabilizeConfig {
    /// Defaults to the smallest positive eigenvalue of `A`.
    pub lambda: Option<f64>,
    pub l_window: [f64; 2],
    /// Defaults to `0.1 ε · 2^{−j}`, `j = 0..5`.
    pub deltas: Option<Vec<f64>>,
    pub bc: Vec<BoundaryCondition>,
    pub cell_distance: f64,
    pub max_unknowns: usize,
    pub eigenvalues_reported: usize,
    pub contraction_threshold: f64,
}

impl Default for StabilizeConfig {
    fn default() -> Self {
        let d = StabilizationOptions::default();
        Self {
            lambda: None,
            l_window: [1e-6, 50.0],
            deltas: None,
            bc: vec![BoundaryCondition::ChiralA, BoundaryCondition::ChiralB],
            cell_distance: d.cell_distance,
            max_unknowns: d.max_unknowns,
            eigenvalues_reported: d.eigenvalues_reported,
            contraction_threshold: CONTRACTION_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransformConfig {
    pub samples: usize,
    /// Lower limits `x = ε·10^{−k}`, `k = 1..=decades`, for the integral comparison.
    pub decades: usize,
}

impl Default for TransformConfig {
    fn default() -> Self {
        Self {
            samples: 101,
            decades: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GcvfConfig {
    /// Built-in field name; ignored when `path` is set.
    pub field: String,
    /// JSON field file.
    pub path: Option<PathBuf>,
    pub h: f64,
    pub bend: f64,
    /// Base point of the normal form; defaults to the chart centre.
    pub point: Option<[f64; 2]>,
    /// Repeat the built-in field at `h/2` and report observed orders.
    pub rates: bool,
}

impl Default for GcvfConfig {
    fn default() -> Self {
        Self {
            field: "cusp".into(),
            path: None,
            h: 0.01,
            bend: 0.0,
            point: None,
            rates: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub command: Option<Command>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub cross_section: Option<CrossSectionConfig>,
    #[serde(default)]
    pub factor: Option<FactorConfig>,
    #[serde(default)]
    pub rho: Option<Warp>,
    #[serde(default)]
    pub l_grid: LGrid,
    #[serde(default = "default_cutoff")]
    pub cutoff: f64,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; `WARP_DIRAC_THREADS` caps it. Results do not depend on it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub integrate: Option<IntegrateConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectrum: Option<SpectrumConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stabilize: Option<StabilizeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform: Option<TransformConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gcvf: Option<GcvfConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: None,
            scenario: None,
            n: None,
            cross_section: None,
            factor: None,
            rho: None,
            l_grid: LGrid::default(),
            cutoff: default_cutoff(),
            tolerances: Tolerances::default(),
            output: None,
            seed: 0,
            threads: None,
            integrate: None,
            spectrum: None,
            stabilize: None,
            transform: None,
            gcvf: None,
        }
    }
}

fn config_error(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        message: message.into(),
    }
}

/// Strict parse; errors carry the path of the offending key.
pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        config_error(
            if path.is_empty() { ".".into() } else { path },
            e.into_inner().to_string(),
        )
    })
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| config_error(path.display().to_string(), e.to_string()))?;
    parse_config_str(&text)
}

/// A config whose metric description is complete and whose command section is filled.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: RunConfig,
    pub command: Command,
    pub output: PathBuf,
    /// Absent for `gcvf-check`, which works on chart data only.
    pub metric: Option<(WarpedMetricSpec, ModeSpectrum)>,
}

impl RunConfig {
    pub fn resolve(mut self) -> Result<Resolved> {
        let command = self
            .command
            .ok_or_else(|| config_error("command", "no command given"))?;
        let output = self
            .output
            .clone()
            .ok_or_else(|| config_error("output", "no output directory given"))?;
        if !output.is_dir() {
            return Err(config_error(
                "output",
                format!("directory {} does not exist", output.display()),
            ));
        }
        self.tolerances.validate()?;
        if command == Command::GcvfCheck {
            let g = self.gcvf.get_or_insert_with(Default::default);
            if !(g.h > 0.0 && g.h.is_finite()) {
                return Err(config_error(
                    "gcvf.h",
                    format!("must be positive, got {}", g.h),
                ));
            }
            return Ok(Resolved {
                config: self,
                command,
                output,
                metric: None,
            });
        }
        if let Some(name) = &self.scenario {
            let s = scenario(name).map_err(|e| config_error("scenario", e.to_string()))?;
            self.cross_section.get_or_insert(s.cross_section);
            self.factor.get_or_insert(s.factor);
            if self.rho.is_none() {
                self.rho = s.rho;
            }
        }
        let cs_cfg = self
            .cross_section
            .as_mut()
            .ok_or_else(|| config_error("cross_section", "missing"))?;
        if let Some(c) = cs_cfg.cutoff.take() {
            self.cutoff = c;
        }
        let cs = cs_cfg.build().map_err(|e| match e {
            Error::Config { .. } => e,
            other => config_error("cross_section", other.to_string()),
        })?;
        let factor = self
            .factor
            .as_ref()
            .ok_or_else(|| config_error("factor", "missing"))?
            .build()
            .map_err(|e| config_error("factor", e.to_string()))?;
        let n = *self.n.get_or_insert(cs.dim_m + 1);
        if !(self.cutoff >= 0.0 && self.cutoff.is_finite()) {
            return Err(config_error(
                "cutoff",
                format!("must be non-negative, got {}", self.cutoff),
            ));
        }
        let g = self.l_grid;
        if g.steps == 0 || !(g.min <= g.max) || !g.min.is_finite() || !g.max.is_finite() {
            return Err(config_error(
                "l_grid",
                "needs finite min <= max and steps >= 1",
            ));
        }
        let spec =
            WarpedMetricSpec::new(n, cs.clone(), factor, self.rho.clone()).map_err(
                |e| match e {
                    Error::InvalidParameter(m) => config_error("n", m),
                    other => other,
                },
            )?;
        let modes = build_a(&cs, n, self.cutoff)?;
        let smallest = modes.positive_modes().first().map(|e| e.lambda);
        let eps = spec.effective_factor().start();
        match command {
            Command::Integrate => {
                let s = self.integrate.get_or_insert_with(Default::default);
                s.lambda.get_or_insert(smallest.unwrap_or(0.0));
            }
            Command::Spectrum => {
                let s = self.spectrum.get_or_insert_with(Default::default);
                if s.lambdas.is_none() {
                    let mut l: Vec<f64> = modes
                        .entries
                        .iter()
                        .filter(|e| e.lambda >= 0.0)
                        .map(|e| e.lambda.abs())
                        .collect();
                    l.dedup();
                    s.lambdas = Some(l);
                }
            }
            Command::Stabilize => {
                let s = self.stabilize.get_or_insert_with(Default::default);
                if s.lambda.is_none() {
                    s.lambda = Some(smallest.ok_or_else(|| {
                        config_error(
                            "stabilize.lambda",
                            "A has no positive eigenvalue below the cutoff",
                        )
                    })?);
                }
                s.deltas
                    .get_or_insert_with(|| (0..6).map(|j| 0.1 * eps * 0.5f64.powi(j)).collect());
            }
            Command::TransformCoords => {
                if self.rho.is_none() {
                    return Err(config_error("rho", "transform-coords needs a warp rho"));
                }
                self.transform.get_or_insert_with(Default::default);
            }
            Command::Scan | Command::VerifyTheorem | Command::GcvfCheck => {}
        }
        Ok(Resolved {
            config: self,
            command,
            output,
            metric: Some((spec, modes)),
        })
    }
}

/// Command-line interface; every flag overrides the matching config key.
#[derive(Debug, Parser)]
#[command(
    name = "warp-dirac",
    version,
    about = "L2 Dirac eigenspinor laboratory for conformally warped ends"
)]
pub struct Cli {
    /// Command to run; may instead be given as `command` in the config file.
    #[arg(value_enum)]
    pub command: Option<Command>,
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Bundled scenario (hyperbolic-n2, hyperbolic-family, anghel-rotational,
    /// cusp-control, flat-control, power-law-1, power-law-1.5, power-law-2).
    #[arg(long)]
    pub scenario: Option<String>,
    /// 1/x, x^-P, const:C, cusp or rotational:K.
    #[arg(long, allow_hyphen_values = true)]
    pub factor: Option<String>,
    /// circle, circle-trivial, circle-nontrivial, torus or torus-trivial.
    #[arg(long)]
    pub cross_section: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub l_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub l_max: Option<f64>,
    #[arg(long)]
    pub l_steps: Option<usize>,
    #[arg(long)]
    pub cutoff: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Mode eigenvalue for integrate, spectrum and stabilize.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Coupling `l` for integrate.
    #[arg(long, allow_hyphen_values = true)]
    pub l: Option<f64>,
    /// Built-in field for gcvf-check.
    #[arg(long)]
    pub field: Option<String>,
}

impl Cli {
    pub fn to_config(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => load_config(p)?,
            None => RunConfig::default(),
        };
        if let Some(cmd) = self.command {
            if c.command.is_some_and(|k| k != cmd) {
                return Err(config_error(
                    "command",
                    format!(
                        "config says {:?} but the command line says {cmd:?}",
                        c.command.unwrap()
                    ),
                ));
            }
            c.command = Some(cmd);
        }
        if let Some(s) = &self.scenario {
            c.scenario = Some(s.clone());
        }
        if let Some(f) = &self.factor {
            c.factor = Some(
                FactorConfig::parse_flag(f).map_err(|e| config_error("factor", e.to_string()))?,
            );
        }
        if let Some(s) = &self.cross_section {
            let cs = CrossSectionConfig::parse_flag(s)
                .map_err(|e| config_error("cross_section", e.to_string()))?;
            c.cross_section = Some(cs);
            c.n = None;
        }
        if let Some(v) = self.l_min {
            c.l_grid.min = v;
        }
        if let Some(v) = self.l_max {
            c.l_grid.max = v;
        }
        if let Some(v) = self.l_steps {
            c.l_grid.steps = v;
        }
        if let Some(v) = self.cutoff {
            c.cutoff = v;
        }
        if let Some(v) = &self.out {
            c.output = Some(v.clone());
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.threads {
            c.threads = Some(v);
        }
        if let Some(lam) = self.lambda {
            match c.command {
                Some(Command::Integrate) => {
                    c.integrate.get_or_insert_with(Default::default).lambda = Some(lam)
                }
                Some(Command::Spectrum) => {
                    c.spectrum.get_or_insert_with(Default::default).lambdas = Some(vec![lam])
                }
                Some(Command::Stabilize) => {
                    c.stabilize.get_or_insert_with(Default::default).lambda = Some(lam)
                }
                _ => {
                    return Err(config_error(
                        "lambda",
                        "--lambda applies to integrate, spectrum and stabilize",
                    ))
                }
            }
        }
        if let Some(l) = self.l {
            if c.command != Some(Command::Integrate) {
                return Err(config_error("integrate.l", "--l applies to integrate"));
            }
            c.integrate.get_or_insert_with(Default::default).l = l;
        }
        if let Some(f) = &self.field {
            if c.command != Some(Command::GcvfCheck) {
                return Err(config_error("gcvf.field", "--field applies to gcvf-check"));
            }
            c.gcvf.get_or_insert_with(Default::default).field = f.clone();
        }
        Ok(c)
    }
}

/// Worker count: the configured value (or all cores), capped by `WARP_DIRAC_THREADS`.
pub fn thread_count(configured: Option<usize>) -> Result<usize> {
    let mut n =
        configured.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let cap: usize = v.trim().parse().ok().filter(|&c| c > 0).ok_or_else(|| {
            config_error(
                THREADS_ENV,
                format!("expected a positive integer, got `{v}`"),
            )
        })?;
        n = n.min(cap);
    }
    Ok(n.max(1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Indeterminate,
    Failed,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Ok => EXIT_OK,
            Status::Failed => EXIT_FAILURE,
            Status::Indeterminate => EXIT_INDETERMINATE,
        }
    }
}

#[derive(Debug, Serialize)]
struct Envelope<'a, T: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: Command,
    config: &'a RunConfig,
    status: Status,
    reasons: &'a [String],
    result: &'a T,
}

/// What a run produced.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub status: Status,
    pub reasons: Vec<String>,
    pub files: Vec<PathBuf>,
    pub summary: String,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        self.status.exit_code()
    }
}

struct Bundle<'a> {
    dir: &'a Path,
    files: Vec<PathBuf>,
}

impl Bundle<'_> {
    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let p = self.dir.join(name);
        fs::write(&p, bytes)?;
        self.files.push(p);
        Ok(())
    }

    fn csv(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, &buf)
    }
}

fn json_bytes<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_vec_pretty(v)?;
    s.push(b'\n');
    Ok(s)
}

struct Finding<T> {
    status: Status,
    reasons: Vec<String>,
    result: T,
    summary: String,
}

/// Runs a resolved configuration inside a worker pool sized by [`thread_count`].
pub fn run(config: RunConfig) -> Result<Outcome> {
    let threads = thread_count(config.threads)?;
    let resolved = config.resolve()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::invalid(format!("cannot build worker pool: {e}")))?;
    pool.install(|| dispatch(&resolved))
}

fn dispatch(r: &Resolved) -> Result<Outcome> {
    let mut bundle = Bundle {
        dir: &r.output,
        files: Vec::new(),
    };
    bundle.write("config.resolved.json", &json_bytes(&r.config)?)?;
    let (status, reasons, summary) = match r.command {
        Command::Scan | Command::VerifyTheorem => {
            let found = run_scan(r, &mut bundle)?;
            emit(r, &mut bundle, found)?
        }
        Command::Integrate => {
            let found = run_integrate(r, &mut bundle)?;
            emit(r, &mut bundle, found)?
        }
        Command::Spectrum => {
            let found = run_spectrum(r, &mut bundle)?;
            emit(r, &mut bundle, found)?
        }
        Command::Stabilize => {
            let found = run_stabilize(r, &mut bundle)?;
            emit(r, &mut bundle, found)?
        }
        Command::TransformCoords => {
            let found = run_transform(r, &mut bundle)?;
            emit(r, &mut bundle, found)?
        }
        Command::GcvfCheck => {
            let found = run_gcvf(r, &mut bundle)?;
            emit(r, &mut bundle, found)?
        }
    };
    Ok(Outcome {
        status,
        reasons,
        files: bundle.files,
        summary,
    })
}

fn emit<T: Serialize>(
    r: &Resolved,
    bundle: &mut Bundle,
    f: Finding<T>,
) -> Result<(Status, Vec<String>, String)> {
    let env = Envelope {
        tool: "warp-dirac",
        version: VERSION,
        command: r.command,
        config: &r.config,
        status: f.status,
        reasons: &f.reasons,
        result: &f.result,
    };
    bundle.write("report.json", &json_bytes(&env)?)?;
    let mut text = format!("warp-dirac {VERSION} {}\n", command_name(r.command));
    if let Some(s) = &r.config.scenario {
        let _ = writeln!(text, "scenario: {s}");
    }
    text.push_str(&f.summary);
    let _ = writeln!(text, "status: {:?}", f.status);
    for reason in &f.reasons {
        let _ = writeln!(text, "  - {reason}");
    }
    bundle.write("summary.txt", text.as_bytes())?;
    Ok((f.status, f.reasons, text))
}

fn command_name(c: Command) -> String {
    c.to_possible_value()
        .map(|v| v.get_name().to_string())
        .unwrap_or_default()
}

fn metric(r: &Resolved) -> (&WarpedMetricSpec, &ModeSpectrum) {
    let (s, m) = r
        .metric
        .as_ref()
        .expect("resolved metric commands carry a metric");
    (s, m)
}

fn describe_metric(spec: &WarpedMetricSpec) -> String {
    format!(
        "n = {}, cross-section {}, factor {:?}{}, divergence {:?}\n",
        spec.n,
        spec.cross_section.name,
        spec.factor.family,
        spec.rho
            .as_ref()
            .map(|w| format!(", warp {w:?}"))
            .unwrap_or_default(),
        spec.divergence
    )
}

#[derive(Debug, Serialize)]
struct CellRow {
    lambda: f64,
    l: f64,
    classification: Classification,
    branch: Option<crate::mode_scan::Branch>,
    mass: crate::mode_scan::MassClass,
    wronskian_drift: Option<f64>,
    kernel_norm_drift: Option<f64>,
    lyapunov_plus_violation: Option<f64>,
    lyapunov_minus_violation: Option<f64>,
}

fn run_scan(r: &Resolved, bundle: &mut Bundle) -> Result<Finding<ScanReport>> {
    let (spec, modes) = metric(r);
    let tol = r.config.tolerances;
    let verify = r.command == Command::VerifyTheorem;
    if verify && spec.divergence != Divergence::Divergent {
        return Err(Error::HypothesisViolation(format!(
            "verify-theorem needs a divergent factor, this one is {:?}",
            spec.divergence
        )));
    }
    let report = scan_point_spectrum(spec, modes, &r.config.l_grid.values(), &tol.scan_options())?;
    bundle.csv("matrix.csv", |b| report.write_matrix_csv(b))?;
    bundle.csv("cells.csv", |b| {
        let mut w = csv::Writer::from_writer(b);
        for v in report.cells() {
            let d = &v.diagnostics;
            w.serialize(CellRow {
                lambda: v.lambda,
                l: v.l,
                classification: v.classification,
                branch: v.branch,
                mass: d.mass.class,
                wronskian_drift: d.wronskian_drift,
                kernel_norm_drift: d.kernel_norm_drift,
                lyapunov_plus_violation: d.lyapunov_plus_violation,
                lyapunov_minus_violation: d.lyapunov_minus_violation,
            })?;
        }
        w.flush()?;
        Ok(())
    })?;
    let s = report.summary;
    let m = report.monitors;
    let mut text = describe_metric(spec);
    let _ = writeln!(
        text,
        "cells: {} (NoL2Solution {}, CandidateBoundState {}, Indeterminate {})",
        s.total, s.no_l2_solution, s.candidate_bound_state, s.indeterminate
    );
    let _ = writeln!(text, "collar: [{:e}, {}]", report.lower, report.upper);
    let _ = writeln!(
        text,
        "monitors: kernel norm drift {:.3e}, Wronskian drift {:.3e}, F violation {:.3e}, F~ violation {:.3e} over {} trajectories",
        m.max_kernel_norm_drift, m.max_wronskian_drift, m.max_lyapunov_plus_violation, m.max_lyapunov_minus_violation, m.trajectories
    );
    for c in &report.refined {
        let _ = writeln!(
            text,
            "refined candidate: lambda {} l {:.9} mismatch {:.3e} mass {:?}",
            c.lambda, c.l, c.mismatch, c.mass
        );
    }
    text.push_str("assumptions:\n");
    for a in ASSUMPTIONS {
        let _ = writeln!(text, "  - {a}");
    }
    if let Some(note) = &report.index_note {
        let _ = writeln!(text, "note: {note}");
    }
    for w in &report.warnings {
        let _ = writeln!(text, "warning: {w}");
    }
    let mut reasons = Vec::new();
    let mut status = Status::Ok;
    if verify {
        let monitors = [
            (
                "kernel norm drift",
                m.max_kernel_norm_drift,
                tol.kernel_norm_drift,
            ),
            (
                "Wronskian drift",
                m.max_wronskian_drift,
                tol.wronskian_drift,
            ),
            (
                "Lyapunov F violation",
                m.max_lyapunov_plus_violation,
                tol.lyapunov,
            ),
            (
                "Lyapunov F~ violation",
                m.max_lyapunov_minus_violation,
                tol.lyapunov,
            ),
        ];
        for (name, v, t) in monitors {
            if !(v < t) {
                reasons.push(format!("{name} {v:e} exceeds {t:e}"));
                status = Status::Indeterminate;
            }
        }
        if s.indeterminate > 0 {
            reasons.push(format!("{} indeterminate cells", s.indeterminate));
            status = Status::Indeterminate;
        }
        if s.candidate_bound_state > 0 {
            reasons.push(format!(
                "{} candidate bound states on a divergent factor",
                s.candidate_bound_state
            ));
            status = Status::Failed;
        }
    }
    Ok(Finding {
        status,
        reasons,
        result: report,
        summary: text,
    })
}

#[derive(Debug, Serialize)]
struct IntegrateResult {
    mode: RadialMode,
    from: f64,
    to: f64,
    samples: usize,
    termination: crate::ode::Termination,
    stats: crate::ode::IntegratorStats,
    wronskian_drift: Option<f64>,
    kernel_norm_drift: Option<f64>,
    hatted_residual: Option<f64>,
    lyapunov_plus_violation: Option<f64>,
    lyapunov_minus_violation: Option<f64>,
    mass: MassEstimate,
    final_state: [f64; 2],
}

fn stations(from: f64, to: f64, count: usize) -> Vec<f64> {
    let count = count.max(2);
    let geometric = from > 0.0 && to > 0.0;
    (0..count)
        .map(|i| {
            let s = i as f64 / (count - 1) as f64;
            if geometric {
                from * (to / from).powf(s)
            } else {
                from + (to - from) * s
            }
        })
        .collect()
}

fn run_integrate(r: &Resolved, bundle: &mut Bundle) -> Result<Finding<IntegrateResult>> {
    let (spec, _) = metric(r);
    let cfg = r.config.integrate.as_ref().expect("filled by resolve");
    let tol = r.config.tolerances;
    let f = spec.effective_factor();
    let mode = RadialMode::new(cfg.lambda.expect("filled by resolve"), cfg.l)?;
    let from = cfg.from.unwrap_or(f.start());
    let to = cfg
        .to
        .unwrap_or_else(|| scan_lower_limit(f, tol.mass_budget, tol.half_line_horizon));
    let opts = IntegrationOptions {
        rtol: tol.rtol,
        atol: tol.atol,
        ..Default::default()
    }
    .with_floor_for(to.min(from));
    let st = stations(from, to, cfg.samples);
    let traj: Trajectory = if mode.lambda == 0.0 {
        integrate_kernel(mode.l, f, from, to, cfg.initial, &st, &opts)?
    } else {
        integrate_mode(&mode, f, from, to, cfg.initial, &st, &opts)?
    };
    bundle.csv("trajectory.csv", |b| traj.write_csv(b))?;
    let kernel = mode.lambda == 0.0;
    let (hat_res, lp, lm) = if kernel {
        (None, None, None)
    } else {
        let hat = to_hatted(&traj)?;
        (
            Some(hatted_residual(&hat, f)?),
            Some(lyapunov(&hat, LyapunovSign::Plus)?.max_violation),
            Some(lyapunov(&hat, LyapunovSign::Minus)?.max_violation),
        )
    };
    let mass = l2_mass(&traj, f)?;
    let result = IntegrateResult {
        mode,
        from,
        to,
        samples: traj.grid.len(),
        termination: traj.termination,
        stats: traj.stats,
        wronskian_drift: (!kernel).then(|| traj.wronskian_drift()),
        kernel_norm_drift: kernel.then(|| traj.norm_drift()),
        hatted_residual: hat_res,
        lyapunov_plus_violation: lp,
        lyapunov_minus_violation: lm,
        mass,
        final_state: *traj
            .states
            .iter()
            .find(|_| true)
            .expect("trajectory has samples"),
    };
    let mut text = describe_metric(spec);
    let _ = writeln!(
        text,
        "mode: lambda {} l {} from {} to {:e}",
        mode.lambda, mode.l, from, to
    );
    let _ = writeln!(
        text,
        "termination {:?}, {} steps, mass {:?}",
        traj.termination, traj.stats.steps, result.mass.class
    );
    let mut reasons = Vec::new();
    let checks = [
        (
            "Wronskian drift",
            result.wronskian_drift,
            tol.wronskian_drift,
        ),
        (
            "kernel norm drift",
            result.kernel_norm_drift,
            tol.kernel_norm_drift,
        ),
        (
            "Lyapunov F violation",
            result.lyapunov_plus_violation,
            tol.lyapunov,
        ),
        (
            "Lyapunov F~ violation",
            result.lyapunov_minus_violation,
            tol.lyapunov,
        ),
    ];
    for (name, v, t) in checks {
        if let Some(v) = v {
            let _ = writeln!(text, "{name}: {v:.3e}");
            if !(v < t) {
                reasons.push(format!("{name} {v:e} exceeds {t:e}"));
            }
        }
    }
    let status = if reasons.is_empty() {
        Status::Ok
    } else {
        Status::Indeterminate
    };
    Ok(Finding {
        status,
        reasons,
        result,
        summary: text,
    })
}

#[derive(Debug, Serialize)]
struct SpectrumRow {
    lambda: f64,
    multiplicity: usize,
    unknowns: usize,
    eigenvalues: Vec<EigenEntry>,
    symmetry_residual: f64,
    random_symmetry_defect: f64,
    covariance_discrepancy: f64,
}

#[derive(Debug, Serialize)]
struct SpectrumResult {
    modes: Vec<SpectralEntry>,
    range: [f64; 2],
    grid: GridKind,
    points: usize,
    bc: BoundaryCondition,
    rows: Vec<SpectrumRow>,
}

/// Largest `|⟨u, Mv⟩_W − ⟨Mu, v⟩_W| / (‖u‖_W ‖Mv‖_W)` over seeded random pairs.
fn random_symmetry_defect(
    op: &crate::discrete_dirac::ModeOperator,
    count: usize,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dot = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .zip(&op.weights)
            .map(|((x, y), w)| x * y * w)
            .sum::<f64>()
    };
    let mut worst = 0.0_f64;
    for _ in 0..count {
        let u: Vec<f64> = (0..op.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..op.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (mu, mv) = (op.apply(&u), op.apply(&v));
        let scale = dot(&u, &u).sqrt() * dot(&mv, &mv).sqrt().max(dot(&mu, &mu).sqrt());
        if scale > 0.0 {
            worst = worst.max((dot(&u, &mv) - dot(&mu, &v)).abs() / scale);
        }
    }
    worst
}

fn run_spectrum(r: &Resolved, bundle: &mut Bundle) -> Result<Finding<SpectrumResult>> {
    let (spec, modes) = metric(r);
    let cfg = r.config.spectrum.as_ref().expect("filled by resolve");
    let f = spec.effective_factor();
    let top = f.start();
    let range = cfg.range.unwrap_or(if f.is_half_line() {
        [top - 10.0, top]
    } else {
        [1e-3 * top, top]
    });
    let kind = cfg.grid.unwrap_or(
        if spec.divergence == Divergence::Divergent && range[0] > 0.0 {
            GridKind::Geometric
        } else {
            GridKind::Uniform
        },
    );
    let grid = match kind {
        GridKind::Geometric => Grid::geometric(range[0], range[1], cfg.points)?,
        _ => Grid::uniform(range[0], range[1], cfg.points)?,
    };
    let lambdas = cfg.lambdas.clone().expect("filled by resolve");
    let rows = lambdas
        .par_iter()
        .enumerate()
        .map(|(i, &lambda)| {
            let op = assemble(lambda, f, &grid, cfg.bc)?;
            let k = cfg.eigenvalues.min(op.dim());
            let multiplicity = modes
                .entries
                .iter()
                .filter(|e| (e.lambda - lambda).abs() <= crate::cross_section::MERGE_TOL)
                .map(|e| e.multiplicity)
                .sum();
            Ok(SpectrumRow {
                lambda,
                multiplicity,
                unknowns: op.dim(),
                eigenvalues: spectrum(&op, k)?,
                symmetry_residual: op.symmetry_residual(),
                random_symmetry_defect: random_symmetry_defect(
                    &op,
                    cfg.random_vectors,
                    r.config.seed.wrapping_add(i as u64),
                ),
                covariance_discrepancy: covariance_check(lambda, f, &grid, cfg.bc, spec.n)?
                    .max_discrepancy,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    bundle.csv("spectrum.csv", |b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["lambda", "index", "eigenvalue", "residual"])?;
        for row in &rows {
            for (i, e) in row.eigenvalues.iter().enumerate() {
                w.write_record([
                    row.lambda.to_string(),
                    i.to_string(),
                    e.value.to_string(),
                    e.residual.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    })?;
    bundle.csv("modes.csv", |b| {
        let mut w = csv::Writer::from_writer(b);
        for e in &modes.entries {
            w.serialize(e)?;
        }
        w.flush()?;
        Ok(())
    })?;
    let mut text = describe_metric(spec);
    let _ = writeln!(
        text,
        "A: {} eigenvalues with |lambda| <= {} ({} kernel)",
        modes.total_multiplicity(),
        modes.cutoff,
        modes.kernel_multiplicity()
    );
    let _ = writeln!(
        text,
        "truncation [{:e}, {}] with {} {:?} nodes, {:?}",
        range[0], range[1], cfg.points, kind, cfg.bc
    );
    for row in &rows {
        let vals: Vec<String> = row
            .eigenvalues
            .iter()
            .map(|e| format!("{:.8}", e.value))
            .collect();
        let _ = writeln!(
            text,
            "lambda {}: [{}] covariance {:.2e} symmetry {:.2e}",
            row.lambda,
            vals.join(", "),
            row.covariance_discrepancy,
            row.random_symmetry_defect
        );
    }
    let result = SpectrumResult {
        modes: modes.entries.clone(),
        range,
        grid: kind,
        points: cfg.points,
        bc: cfg.bc,
        rows,
    };
    Ok(Finding {
        status: Status::Ok,
        reasons: Vec::new(),
        result,
        summary: text,
    })
}

fn bc_slug(bc: BoundaryCondition) -> &'static str {
    match bc {
        BoundaryCondition::ChiralA => "chiral_a",
        BoundaryCondition::ChiralB => "chiral_b",
    }
}

fn run_stabilize(r: &Resolved, bundle: &mut Bundle) -> Result<Finding<Vec<StabilizationReport>>> {
    let (spec, _) = metric(r);
    let cfg = r.config.stabilize.as_ref().expect("filled by resolve");
    let f = spec.effective_factor();
    let options = StabilizationOptions {
        upper: f.start(),
        cell_distance: cfg.cell_distance,
        max_unknowns: cfg.max_unknowns,
        eigenvalues_reported: cfg.eigenvalues_reported,
        contraction_threshold: cfg.contraction_threshold,
    };
    let lambda = cfg.lambda.expect("filled by resolve");
    let deltas = cfg.deltas.clone().expect("filled by resolve");
    let mut reports = Vec::new();
    let mut text = describe_metric(spec);
    let mut reasons = Vec::new();
    for &bc in &cfg.bc {
        let rep = stabilization_study(
            lambda,
            (cfg.l_window[0], cfg.l_window[1]),
            f,
            &deltas,
            bc,
            &options,
        )?;
        bundle.csv(&format!("stabilization_{}.csv", bc_slug(bc)), |b| {
            rep.write_csv(b)
        })?;
        let ratios: Vec<String> = rep.drift_ratios.iter().map(|x| format!("{x:.3}")).collect();
        let _ = writeln!(
            text,
            "{bc:?}: {:?}, drift ratios [{}] (threshold {})",
            rep.verdict,
            ratios.join(", "),
            cfg.contraction_threshold
        );
        if rep.verdict == StabilizationVerdict::Indeterminate {
            reasons.push(format!("{bc:?}: {}", rep.note));
        }
        reports.push(rep);
    }
    let status = if reasons.is_empty() {
        Status::Ok
    } else {
        Status::Indeterminate
    };
    Ok(Finding {
        status,
        reasons,
        result: reports,
        summary: text,
    })
}

#[derive(Debug, Serialize)]
struct IntegralCheck {
    x: f64,
    t: f64,
    integral_x: f64,
    integral_t: f64,
    relative_difference: f64,
}

#[derive(Debug, Serialize)]
struct TransformResult {
    rho: Warp,
    t_max: f64,
    original: DivergenceReport,
    transformed: DivergenceReport,
    integrals: Vec<IntegralCheck>,
}

/// Relative agreement required between `∫ f dx` and `∫ f̃ dt`.
pub const TRANSFORM_TOL: f64 = 1e-6;

fn run_transform(r: &Resolved, bundle: &mut Bundle) -> Result<Finding<TransformResult>> {
    let (spec, _) = metric(r);
    let cfg = r.config.transform.as_ref().expect("filled by resolve");
    let rho = spec.rho.clone().expect("checked by resolve");
    let f = &spec.factor;
    let rep = reparametrize(&rho, f)?;
    let eps = f.start();
    let integrals: Vec<IntegralCheck> = (1..=cfg.decades)
        .map(|k| {
            let x = eps * 10f64.powi(-(k as i32));
            let t = rep.t_of_x(x);
            let (ix, it) = (f.integral(x, eps), rep.f_tilde.integral(t, rep.t_max));
            IntegralCheck {
                x,
                t,
                integral_x: ix,
                integral_t: it,
                relative_difference: (ix - it).abs() / ix.abs().max(f64::MIN_POSITIVE),
            }
        })
        .collect();
    let result = TransformResult {
        rho: rho.clone(),
        t_max: rep.t_max,
        original: classify_divergence(f)?,
        transformed: classify_divergence(&rep.f_tilde)?,
        integrals,
    };
    bundle.csv("transform.csv", |b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["x", "t", "rho", "f", "f_tilde"])?;
        for x in stations(
            eps * 10f64.powi(-(cfg.decades.max(1) as i32)),
            eps,
            cfg.samples,
        ) {
            let t = rep.t_of_x(x);
            w.write_record(
                [x, t, rho.eval(x), f.eval(x), rep.f_tilde.eval(t)].map(|v| v.to_string()),
            )?;
        }
        w.flush()?;
        Ok(())
    })?;
    let mut text = describe_metric(spec);
    let _ = writeln!(
        text,
        "t_max = {}, classes {:?} -> {:?}",
        rep.t_max, result.original.class, result.transformed.class
    );
    let mut reasons = Vec::new();
    if result.original.class != result.transformed.class {
        reasons.push("divergence class changed under the reparametrization".to_string());
    }
    for c in &result.integrals {
        let _ = writeln!(
            text,
            "x = {:e}: int f dx = {}, int f~ dt = {}, rel diff {:.2e}",
            c.x, c.integral_x, c.integral_t, c.relative_difference
        );
        if !(c.relative_difference <= TRANSFORM_TOL) {
            reasons.push(format!("integrals disagree at x = {:e}", c.x));
        }
    }
    let status = if reasons.is_empty() {
        Status::Ok
    } else {
        Status::Failed
    };
    Ok(Finding {
        status,
        reasons,
        result,
        summary: text,
    })
}

#[derive(Debug, Serialize)]
struct GcvfResult {
    field: String,
    residuals: GcvfResiduals,
    structure: StructureReport,
    normal_form: Option<NormalForm>,
    normal_form_note: Option<String>,
    rates: Option<ConvergenceRates>,
}

fn run_gcvf(r: &Resolved, bundle: &mut Bundle) -> Result<Finding<GcvfResult>> {
    let cfg = r.config.gcvf.as_ref().expect("filled by resolve");
    let field: GcvfField = match &cfg.path {
        Some(p) => GcvfField::from_json(p)?,
        None => builtin(&cfg.field, cfg.h, cfg.bend)?,
    };
    let residuals = check_gcvf(&field)?;
    let structure = structure_checks(&field)?;
    let g = field.grid;
    let point = cfg.point.unwrap_or_else(|| g.point(g.nx / 2, g.ny / 2));
    let (nf, note) = match normal_form(&field, point) {
        Ok(nf) => (Some(nf), None),
        Err(Error::HypothesisViolation(m)) => (None, Some(m)),
        Err(e) => return Err(e),
    };
    let rates = match (&cfg.path, cfg.rates) {
        (None, true) => Some(convergence_rates(
            |h| builtin(&cfg.field, h, cfg.bend),
            cfg.h,
        )?),
        _ => None,
    };
    if let Some(nf) = &nf {
        bundle.csv("normal_form.csv", |b| {
            let mut w = csv::Writer::from_writer(b);
            w.write_record(["x", "f"])?;
            for (x, f) in nf.x.iter().zip(&nf.f) {
                w.write_record([x.to_string(), f.to_string()])?;
            }
            w.flush()?;
            Ok(())
        })?;
    }
    let mut text = format!(
        "field {} on a {}x{} chart, h = {}\n",
        field.name, g.nx, g.ny, g.h
    );
    let _ = writeln!(
        text,
        "Lie residual {:.3e}, gradient residual {:.3e}",
        residuals.lie, residuals.gradient
    );
    let _ = writeln!(
        text,
        "nabla residual {:.3e}, geodesic residual {:.3e}, leaf |xi| variation {:.3e}",
        structure.nabla_residual, structure.geodesic_residual, structure.leaf_norm_variation
    );
    if let Some(rt) = &rates {
        let _ = writeln!(
            text,
            "observed orders: lie {:.3} gradient {:.3} nabla {:.3} geodesic {:.3}",
            rt.lie, rt.gradient, rt.nabla, rt.geodesic
        );
    }
    if let Some(nf) = &nf {
        let _ = writeln!(
            text,
            "normal form at {:?}: metric discrepancy {:.3e}, singular end {:?}, divergence {:?}",
            nf.point,
            nf.metric_discrepancy,
            nf.singular_end,
            nf.divergence.as_ref().map(|d| d.class)
        );
    }
    if let Some(m) = &note {
        let _ = writeln!(text, "normal form skipped: {m}");
    }
    let mut reasons = Vec::new();
    if !structure.reliable {
        reasons.push("GCVF residuals exceed the reliability threshold".to_string());
    }
    let status = if reasons.is_empty() {
        Status::Ok
    } else {
        Status::Indeterminate
    };
    let result = GcvfResult {
        field: field.name.clone(),
        residuals,
        structure,
        normal_form: nf,
        normal_form_note: note,
        rates,
    };
    Ok(Finding {
        status,
        reasons,
        result,
        summary: text,
    })
}

/// Parses arguments, runs, prints the summary and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() {
                EXIT_FAILURE
            } else {
                EXIT_OK
            };
            let _ = e.print();
            return code;
        }
    };
    match cli.to_config().and_then(run) {
        Ok(outcome) => {
            print!("{}", outcome.summary);
            outcome.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}
