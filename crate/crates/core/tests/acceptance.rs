//! Acceptance criteria, one test each. Every test writes a single
//! `acceptance N ... PASS|FAIL` line straight to stderr so it is visible
//! without `--nocapture`.

use std::f64::consts::PI;
use std::io::Write as _;
use std::time::Instant;

use nalgebra::{Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use tempfile::TempDir;
use warp_dirac::cli_runner::{run, Command, RunConfig, EXIT_OK};
use warp_dirac::cross_section::SpinStructure;
use warp_dirac::discrete_dirac::{
    covariance_check, refinement_study, stabilization_study, BoundaryCondition, Grid, GridKind,
    StabilizationVerdict,
};
use warp_dirac::gcvf_lab::{builtin, convergence_rates, normal_form};
use warp_dirac::radial_ode::{integrate_mode, IntegrationOptions, RadialMode};
use warp_dirac::scenarios::{scenario, CrossSectionConfig, Expectation};
use warp_dirac::warp_geometry::{
    classify_divergence, reparametrize, rotational_factor, ConformalFactor, Divergence, Warp,
    WarpedMetricSpec,
};

fn verdict(n: u32, name: &str, failures: &[String], detail: String) {
    let line = if failures.is_empty() {
        format!("acceptance {n} {name}: PASS ({detail})\n")
    } else {
        format!("acceptance {n} {name}: FAIL ({detail}; {})\n", failures.join("; "))
    };
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(failures.is_empty(), "{line}");
}

fn run_report(cfg: RunConfig) -> (i32, Value) {
    let dir = TempDir::new().unwrap();
    let cfg = RunConfig { output: Some(dir.path().to_path_buf()), ..cfg };
    let outcome = run(cfg).unwrap();
    let text = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    (outcome.exit_code(), serde_json::from_str(&text).unwrap())
}

fn square_torus(periodic: bool) -> CrossSectionConfig {
    CrossSectionConfig::torus(vec![vec![2.0 * PI, 0.0], vec![0.0, 2.0 * PI]], vec![!periodic, !periodic])
}

const DIVERGENT: [&str; 6] = [
    "hyperbolic-n2",
    "hyperbolic-family",
    "anghel-rotational",
    "power-law-1",
    "power-law-1.5",
    "power-law-2",
];

/// Runs criterion 1 once and shares the reports with criterion 3.
fn divergent_catalog() -> &'static (Vec<(String, i32, Value)>, f64) {
    static RUNS: std::sync::OnceLock<(Vec<(String, i32, Value)>, f64)> = std::sync::OnceLock::new();
    RUNS.get_or_init(|| {
        let start = Instant::now();
        let mut out = Vec::new();
        for name in DIVERGENT {
            let s = scenario(name).unwrap();
            let periodic = s.cross_section.kind == warp_dirac::scenarios::CrossSectionKindConfig::CircleTrivial;
            for (label, cs) in [("circle", s.cross_section.clone()), ("torus", square_torus(periodic))] {
                let cfg = RunConfig {
                    command: Some(Command::VerifyTheorem),
                    scenario: Some(name.into()),
                    cross_section: Some(cs),
                    ..Default::default()
                };
                let (code, report) = run_report(cfg);
                out.push((format!("{name}/{label}"), code, report));
            }
        }
        (out, start.elapsed().as_secs_f64())
    })
}

#[test]
fn criterion_1_theorem_reproduction() {
    let (runs, seconds) = divergent_catalog();
    let mut failures = Vec::new();
    let mut cells = 0;
    for (label, code, r) in runs {
        let s = &r["result"]["summary"];
        cells += s["total"].as_u64().unwrap();
        if s["no_l2_solution"] != s["total"] || s["total"].as_u64() == Some(0) {
            failures.push(format!("{label}: {s}"));
        }
        if *code != EXIT_OK {
            failures.push(format!("{label}: exit {code} {}", r["reasons"]));
        }
        if r["config"]["l_grid"]["steps"] != 41 || r["config"]["cutoff"] != 5.0 {
            failures.push(format!("{label}: unexpected grid"));
        }
    }
    if *seconds >= 300.0 {
        failures.push(format!("runtime {seconds:.0}s"));
    }
    verdict(
        1,
        "theorem reproduction",
        &failures,
        format!("{} runs, {cells} cells all NoL2Solution, {seconds:.1}s", runs.len()),
    );
}

#[test]
fn criterion_2_sensitivity_control() {
    let mut failures = Vec::new();
    let mut detail = Vec::new();
    for name in ["flat-control", "cusp-control"] {
        assert_eq!(scenario(name).unwrap().expectation, Expectation::Control);
        let (code, r) = run_report(RunConfig {
            command: Some(Command::Scan),
            scenario: Some(name.into()),
            ..Default::default()
        });
        let n = r["result"]["summary"]["candidate_bound_state"].as_u64().unwrap();
        detail.push(format!("{name}: {n} candidates"));
        if code != EXIT_OK || n == 0 {
            failures.push(format!("{name}: exit {code}, {n} candidates"));
        }
        if name == "flat-control" {
            // Decaying mode for lambda = 1: l = 0, mass (1 - e^{-2}) / 2.
            let exact = (1.0 - (-2.0f64).exp()) / 2.0;
            let hit = r["result"]["refined"].as_array().unwrap().iter().find(|c| {
                c["lambda"].as_f64() == Some(1.0) && c["l"].as_f64().unwrap().abs() < 1e-6
            });
            match hit.and_then(|c| Some((c["l"].as_f64()?, c["mass"].as_f64()?))) {
                Some((l, mass)) if (mass - exact).abs() < 1e-6 => {
                    detail.push(format!("flat l = {l:.1e}, mass error {:.1e}", (mass - exact).abs()))
                }
                other => failures.push(format!("flat-control closed-form mode not matched: {other:?}")),
            }
        }
    }
    verdict(2, "sensitivity control", &failures, detail.join(", "));
}

#[test]
fn criterion_3_proof_monitors() {
    let (runs, _) = divergent_catalog();
    let mut worst = [0.0f64; 4];
    let mut trajectories = 0;
    for (_, _, r) in runs {
        let m = &r["result"]["monitors"];
        trajectories += m["trajectories"].as_u64().unwrap();
        for (w, key) in worst.iter_mut().zip([
            "max_kernel_norm_drift",
            "max_wronskian_drift",
            "max_lyapunov_plus_violation",
            "max_lyapunov_minus_violation",
        ]) {
            *w = w.max(m[key].as_f64().unwrap());
        }
    }
    let mut failures = Vec::new();
    for (v, limit, name) in [
        (worst[0], 1e-7, "kernel norm drift"),
        (worst[1], 1e-7, "Wronskian drift"),
        (worst[2], 1e-8, "F monotonicity"),
        (worst[3], 1e-8, "F~ monotonicity"),
    ] {
        if !(v < limit) {
            failures.push(format!("{name} {v:e} >= {limit:e}"));
        }
    }
    verdict(
        3,
        "proof monitors",
        &failures,
        format!(
            "{trajectories} trajectories; kernel {:.1e}, Wronskian {:.1e}, F {:.1e}, F~ {:.1e}",
            worst[0], worst[1], worst[2], worst[3]
        ),
    );
}

#[test]
fn criterion_4_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let opts = IntegrationOptions::default();
    let stations = [0.8, 0.6, 0.4, 0.2, 0.1];
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for k in 0..100 {
        let lam = rng.gen_range(0.1..3.0);
        let l = rng.gen_range(-3.0..3.0);
        let c = rng.gen_range(0.5..2.0);
        let init = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let f = ConformalFactor::constant(c, 1.0).unwrap();
        let t = integrate_mode(&RadialMode::new(lam, l).unwrap(), &f, 1.0, 0.05, init, &stations, &opts).unwrap();
        let gen = Matrix2::new(-lam, l * c, -l * c, lam);
        for (x, s) in t.grid.iter().zip(&t.states) {
            let y = (gen * (x - 1.0)).exp() * Vector2::new(init[0], init[1]);
            let err = ((s[0] - y[0]).abs()).max((s[1] - y[1]).abs()) / y.norm().max(1.0);
            worst = worst.max(err);
        }
        // l = 0 decouples: a = a0 e^{-lam (x - x0)}, b = b0 e^{lam (x - x0)}, any f.
        let g = ConformalFactor::power_law(1.0 + c / 2.0, 1.0).unwrap();
        let t = integrate_mode(&RadialMode::new(lam, 0.0).unwrap(), &g, 1.0, 0.05, init, &stations, &opts).unwrap();
        for (x, s) in t.grid.iter().zip(&t.states) {
            let a = init[0] * (-lam * (x - 1.0)).exp();
            let b = init[1] * (lam * (x - 1.0)).exp();
            worst = worst.max(((s[0] - a).abs()).max((s[1] - b).abs()) / a.hypot(b).max(1.0));
        }
        if worst >= 1e-8 && failures.is_empty() {
            failures.push(format!("triple {k} ({lam}, {l}, {c}) error {worst:e}"));
        }
    }
    verdict(4, "oracle equivalence", &failures, format!("100 triples, max error {worst:.1e}"));
}

#[test]
fn criterion_5_conformal_covariance() {
    let catalog: Vec<(&str, ConformalFactor, [f64; 2])> = vec![
        ("1/x", ConformalFactor::hyperbolic(1.0).unwrap(), [1e-3, 1.0]),
        ("x^-1.5", ConformalFactor::power_law(1.5, 1.0).unwrap(), [1e-3, 1.0]),
        ("x^-2", ConformalFactor::power_law(2.0, 1.0).unwrap(), [1e-3, 1.0]),
        ("x^-0.5", ConformalFactor::power_law(0.5, 1.0).unwrap(), [1e-3, 1.0]),
        ("const", ConformalFactor::constant(1.0, 1.0).unwrap(), [1e-3, 1.0]),
        ("rotational", rotational_factor(2.0).unwrap(), [1e-3, 1.0]),
        ("cusp", ConformalFactor::cusp(), [-5.0, 0.0]),
        (
            "hyperbolic-family",
            reparametrize(&Warp::Hyperbolic, &ConformalFactor::hyperbolic(1.0).unwrap()).unwrap().f_tilde,
            [1e-3, PI / 2.0],
        ),
    ];
    let lambdas = [0.0, 0.5, 1.0, 2.5, 5.0];
    let mut worst = 0.0f64;
    let mut checks = 0;
    let mut failures = Vec::new();
    for (name, f, range) in &catalog {
        let grid = if range[0] > 0.0 {
            Grid::geometric(range[0], range[1], 401).unwrap()
        } else {
            Grid::uniform(range[0], range[1], 401).unwrap()
        };
        for &lam in &lambdas {
            for bc in [BoundaryCondition::ChiralA, BoundaryCondition::ChiralB] {
                for n in [2, 3, 4] {
                    let r = covariance_check(lam, f, &grid, bc, n).unwrap();
                    checks += 1;
                    worst = worst.max(r.max_discrepancy);
                    if !(r.max_discrepancy < 1e-8) {
                        failures.push(format!("{name} lambda {lam} {bc:?} n {n}: {:e}", r.max_discrepancy));
                    }
                }
            }
        }
    }
    // Deeper cusp truncation: f = e^-10 puts the spectral radius near 1e6, so only
    // the relative discrepancy is meaningful there.
    let deep = Grid::uniform(-10.0, 0.0, 401).unwrap();
    let mut deep_rel = 0.0f64;
    for &lam in &lambdas {
        let r = covariance_check(lam, &ConformalFactor::cusp(), &deep, BoundaryCondition::ChiralA, 2).unwrap();
        deep_rel = deep_rel.max(r.relative_discrepancy);
    }
    if !(deep_rel < 1e-12) {
        failures.push(format!("deep cusp relative discrepancy {deep_rel:e}"));
    }
    verdict(
        5,
        "conformal covariance",
        &failures,
        format!("{checks} checks, max discrepancy {worst:.1e}; cusp on [-10, 0] relative {deep_rel:.1e}"),
    );
}

#[test]
fn criterion_6_reparametrization() {
    let factors = [
        ConformalFactor::hyperbolic(1.0).unwrap(),
        ConformalFactor::power_law(1.5, 1.0).unwrap(),
        ConformalFactor::power_law(2.0, 1.0).unwrap(),
        ConformalFactor::power_law(0.5, 1.0).unwrap(),
        ConformalFactor::constant(1.0, 1.0).unwrap(),
    ];
    let warps = [
        Warp::Constant { c: 1.0 },
        Warp::Constant { c: 2.5 },
        Warp::PowerLaw { c: 1.0, q: 0.5 },
        Warp::Hyperbolic,
    ];
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    let mut pairs = 0;
    for f in &factors {
        for rho in &warps {
            pairs += 1;
            let rep = reparametrize(rho, f).unwrap();
            let (a, b) = (classify_divergence(f).unwrap().class, classify_divergence(&rep.f_tilde).unwrap().class);
            if a != b {
                failures.push(format!("{:?} / {rho:?}: {a:?} vs {b:?}", f.family));
            }
            for k in 1..=4 {
                let x = 10f64.powi(-k);
                let ix = f.integral(x, 1.0);
                let it = rep.f_tilde.integral(rep.t_of_x(x), rep.t_max);
                let rel = (ix - it).abs() / ix;
                worst = worst.max(rel);
                if !(rel < 1e-6) {
                    failures.push(format!("{:?} / {rho:?} at x = {x}: {rel:e}", f.family));
                }
            }
            let spec = WarpedMetricSpec::new(
                2,
                CrossSectionConfig::circle(2.0 * PI, SpinStructure::Nontrivial).build().unwrap(),
                f.clone(),
                Some(rho.clone()),
            )
            .unwrap();
            if spec.divergence != a {
                failures.push("spec divergence differs from the effective factor".into());
            }
        }
    }
    verdict(6, "reparametrization", &failures, format!("{pairs} pairs, max relative integral gap {worst:.1e}"));
}

#[test]
fn criterion_7_gcvf_suite() {
    let mut failures = Vec::new();
    let mut detail = Vec::new();
    for name in ["euclidean-log-polar", "cusp"] {
        let r = convergence_rates(|h| builtin(name, h, 0.3), 0.02).unwrap();
        let rates = [("lie", r.lie), ("gradient", r.gradient), ("nabla", r.nabla), ("geodesic", r.geodesic)];
        for (label, v) in rates {
            if !(1.7..=2.3).contains(&v) {
                failures.push(format!("{name} {label} order {v}"));
            }
        }
        detail.push(format!(
            "{name} orders {}",
            rates.iter().map(|(_, v)| format!("{v:.2}")).collect::<Vec<_>>().join("/")
        ));
    }
    let cases: [(&str, [f64; 2], Box<dyn Fn(f64) -> f64>, bool); 4] = [
        ("cusp", [1.2, 0.5], Box::new(|x| 1.0 / (1.2f64.exp() + x)), true),
        ("warped-hyperbolic", [0.5, 0.1], Box::new(|x| 1.0 / (0.5 + x)), false),
        ("warped-power-1.5", [0.5, 0.1], Box::new(|x| (0.5 + x).powf(-1.5)), false),
        ("warped-power-2", [0.6, 0.1], Box::new(|x| (0.6 + x).powi(-2)), false),
    ];
    for (name, p, exact, complete) in cases {
        let field = builtin(name, 2.5e-3, 0.0).unwrap();
        let nf = normal_form(&field, p).unwrap();
        let err = nf.x.iter().zip(&nf.f).map(|(&x, &v)| (v - exact(x)).abs() / exact(x)).fold(0.0, f64::max);
        if !(err < 1e-6) {
            failures.push(format!("{name} round trip error {err:e}"));
        }
        if nf.flags.complete_field != Some(complete) {
            failures.push(format!("{name} completeness flag {:?}", nf.flags.complete_field));
        }
        if !complete {
            match &nf.divergence {
                Some(d) if d.class == Divergence::Divergent => {}
                other => failures.push(format!("{name}: recovered factor classified {:?}", other.as_ref().map(|d| d.class))),
            }
        }
        detail.push(format!("{name} f error {err:.1e}"));
    }
    verdict(7, "GCVF suite", &failures, detail.join(", "));
}

#[test]
fn criterion_8_discretization_sanity() {
    let mut failures = Vec::new();
    let mut detail = Vec::new();
    let cases = [
        ("flat", ConformalFactor::constant(1.0, 1.0).unwrap(), GridKind::Uniform, 0.1),
        ("1/x", ConformalFactor::hyperbolic(1.0).unwrap(), GridKind::Geometric, 0.05),
    ];
    for (name, f, kind, lo) in &cases {
        let r = refinement_study(0.7, f, (*lo, 1.0), *kind, BoundaryCondition::ChiralA, 41, 4, 0, 1e-6).unwrap();
        if r.rates.iter().any(|v| !(1.7..=2.3).contains(v)) {
            failures.push(format!("{name} rates {:?}", r.rates));
        }
        detail.push(format!("{name} rates {}", r.rates.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join("/")));
    }
    let deltas: Vec<f64> = (0..6).map(|j| 0.1 * 0.5f64.powi(j)).collect();
    let studies = [
        ("flat-control", ConformalFactor::constant(1.0, 1.0).unwrap(), 1.0, StabilizationVerdict::Contracting),
        ("hyperbolic-n2", ConformalFactor::hyperbolic(1.0).unwrap(), 0.5, StabilizationVerdict::NonContracting),
    ];
    for (name, f, lam, expected) in &studies {
        for bc in [BoundaryCondition::ChiralA, BoundaryCondition::ChiralB] {
            let r = stabilization_study(*lam, (1e-6, 50.0), f, &deltas, bc, &Default::default()).unwrap();
            if r.verdict != *expected {
                failures.push(format!("{name} {bc:?}: {:?}, ratios {:?}", r.verdict, r.drift_ratios));
            }
            if bc == BoundaryCondition::ChiralA {
                let ratios: Vec<String> = r.drift_ratios.iter().map(|v| format!("{v:.2}")).collect();
                detail.push(format!("{name} {:?} ratios {}", r.verdict, ratios.join("/")));
            }
        }
    }
    verdict(8, "discretization sanity", &failures, detail.join(", "));
}
