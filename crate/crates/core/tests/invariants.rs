use proptest::prelude::*;
use warp_dirac::cli_runner::{parse_config_str, LGrid, RunConfig};
use warp_dirac::cross_section::{build_a, CrossSection, SpinStructure};
use warp_dirac::discrete_dirac::{assemble, full_spectrum, BoundaryCondition, Grid};
use warp_dirac::scenarios::{scenario, SCENARIO_NAMES};
use warp_dirac::warp_geometry::{
    classify_divergence, conformal_gauge, reparametrize, weighted_norm_sq, ConformalFactor, GaugeDirection, Warp,
};

fn warp() -> impl Strategy<Value = Warp> {
    prop_oneof![
        (0.2..5.0f64).prop_map(|c| Warp::Constant { c }),
        (0.2..3.0f64, -2.0..0.9f64).prop_map(|(c, q)| Warp::PowerLaw { c, q }),
        Just(Warp::Hyperbolic),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mode_spectrum_is_symmetric_and_doubles_for_even_n(
        length in 0.5..20.0f64,
        trivial in any::<bool>(),
        a in 0.5..3.0f64,
        b in 0.5..3.0f64,
        shear in -0.5..0.5f64,
        parity in any::<[bool; 2]>(),
        cutoff in 0.0..6.0f64,
    ) {
        let spin = if trivial { SpinStructure::Trivial } else { SpinStructure::Nontrivial };
        let circle = CrossSection::circle(length, spin).unwrap();
        let even = build_a(&circle, 2, cutoff).unwrap();
        prop_assert!(even.is_symmetric());
        let dm: usize = circle.dirac_spectrum(cutoff).unwrap().iter().map(|e| e.multiplicity).sum();
        prop_assert_eq!(even.total_multiplicity(), 2 * dm);
        let torus = CrossSection::torus(vec![vec![a, 0.0], vec![shear, b]], parity.to_vec()).unwrap();
        let odd = build_a(&torus, 3, cutoff).unwrap();
        prop_assert!(odd.is_symmetric());
        prop_assert!(odd.entries.iter().all(|e| e.lambda.abs() <= cutoff + 1e-9));
    }

    #[test]
    fn gauge_round_trip_and_isometry(
        p in 0.0..2.5f64,
        n in 2usize..6,
        seed in proptest::collection::vec(-2.0..2.0f64, 2 * 64),
    ) {
        let f = ConformalFactor::power_law(p, 1.0).unwrap();
        let grid: Vec<f64> = (0..64).map(|i| 0.01 + 0.99 * i as f64 / 63.0).collect();
        let to_h = conformal_gauge(&seed, 2, &grid, &f, n, GaugeDirection::ToH).unwrap();
        let back = conformal_gauge(&to_h, 2, &grid, &f, n, GaugeDirection::ToG).unwrap();
        for (x, y) in seed.iter().zip(&back) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
        let g_norm = weighted_norm_sq(&seed, 2, &grid, |x| f.eval(x).powi(n as i32));
        let h_norm = weighted_norm_sq(&to_h, 2, &grid, |x| f.eval(x));
        prop_assert!((g_norm - h_norm).abs() <= 1e-10 * g_norm.max(1e-300));
    }

    #[test]
    fn discrete_spectrum_is_plus_minus_symmetric_with_one_zero(
        lambda in -4.0..4.0f64,
        p in 0.0..2.0f64,
        points in 17usize..120,
        chiral_a in any::<bool>(),
    ) {
        let f = ConformalFactor::power_law(p, 1.0).unwrap();
        let bc = if chiral_a { BoundaryCondition::ChiralA } else { BoundaryCondition::ChiralB };
        let op = assemble(lambda, &f, &Grid::geometric(0.01, 1.0, points).unwrap(), bc).unwrap();
        let mut ev = full_spectrum(&op).unwrap();
        ev.sort_by(f64::total_cmp);
        let scale = ev.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let m = ev.len();
        for i in 0..m {
            prop_assert!((ev[i] + ev[m - 1 - i]).abs() <= 1e-10 * scale);
        }
        prop_assert_eq!(ev.iter().filter(|v| v.abs() <= 1e-9 * scale).count(), 1);
    }

    #[test]
    fn reparametrization_preserves_divergence(p in 0.0..2.5f64, rho in warp()) {
        prop_assume!((p - 1.0).abs() > 0.02);
        let f = ConformalFactor::power_law(p, 1.0).unwrap();
        let r = reparametrize(&rho, &f).unwrap();
        prop_assert!(r.t_of_x(0.0).abs() < 1e-15);
        prop_assert!(r.t_of_x(0.3) < r.t_of_x(0.6));
        let before = classify_divergence(&f).unwrap().class;
        let after = classify_divergence(&r.f_tilde).unwrap().class;
        prop_assert_eq!(before, after);
    }

    #[test]
    fn power_law_verdict_flips_at_one(p in 0.0..3.0f64) {
        let class = classify_divergence(&ConformalFactor::power_law(p, 1.0).unwrap()).unwrap().class;
        let divergent = class == warp_dirac::warp_geometry::Divergence::Divergent;
        prop_assert_eq!(divergent, p >= 1.0);
    }

    #[test]
    fn run_config_json_round_trips(
        min in -20.0..0.0f64,
        max in 0.0..20.0f64,
        steps in 1usize..100,
        cutoff in 0.0..10.0f64,
        seed in any::<u64>(),
        which in 0..SCENARIO_NAMES.len(),
    ) {
        let s = scenario(SCENARIO_NAMES[which]).unwrap();
        let cfg = RunConfig {
            scenario: Some(s.name.clone()),
            cross_section: Some(s.cross_section),
            factor: Some(s.factor),
            rho: s.rho,
            l_grid: LGrid { min, max, steps },
            cutoff,
            seed,
            ..Default::default()
        };
        let text = serde_json::to_string(&cfg).unwrap();
        prop_assert_eq!(parse_config_str(&text).unwrap(), cfg);
        let values = LGrid { min, max, steps }.values();
        prop_assert_eq!(values.len(), steps);
        prop_assert!(values.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn boundary_case_p_one_is_divergent() {
    let f = ConformalFactor::power_law(1.0, 1.0).unwrap();
    assert_eq!(classify_divergence(&f).unwrap().class, warp_dirac::warp_geometry::Divergence::Divergent);
}
